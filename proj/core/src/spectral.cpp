#include "dehaze/spectral.hpp"

#include <vector>

#include "dehaze/fft.hpp"

namespace dehaze {

namespace {

using fft::Complex;

// Forward packed transform: [N, C, H, W] -> [N, 2C, H, Wf].
template <typename T>
Var<T> rfft2_packed(const Var<T>& input) {
  const Shape s = input.shape();
  const int wf = half_spectrum_width(s.w);
  const Shape os{s.n, 2 * s.c, s.h, wf};
  auto row_plan = std::make_shared<fft::Plan>(s.w);
  auto col_plan = std::make_shared<fft::Plan>(s.h);
  Tensor<T> out(os);
  std::vector<Complex> row(s.w), col(s.h), z(static_cast<std::size_t>(s.h) * wf);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* x = input.value().plane(n, c);
      for (int h = 0; h < s.h; ++h) {
        for (int w = 0; w < s.w; ++w) row[w] = Complex(x[h * s.w + w], 0.0);
        row_plan->forward(row);
        for (int l = 0; l < wf; ++l) z[static_cast<std::size_t>(h) * wf + l] = row[l];
      }
      T* re = out.plane(n, c);
      T* im = out.plane(n, c + s.c);
      for (int l = 0; l < wf; ++l) {
        for (int h = 0; h < s.h; ++h) col[h] = z[static_cast<std::size_t>(h) * wf + l];
        col_plan->forward(col);
        for (int k = 0; k < s.h; ++k) {
          re[k * wf + l] = static_cast<T>(col[k].real());
          im[k * wf + l] = static_cast<T>(col[k].imag());
        }
      }
    }
  }
  return make_result<T>(std::move(out), {input}, [s, wf, row_plan, col_plan](Node<T>& self) {
    // Adjoint: gx[h, w] = Re sum_{k, l < Wf} G[k, l] exp(+2 pi i (k h / H + l w / W)).
    Tensor<T>& gx = self.inputs[0]->grad_buffer();
    std::vector<Complex> row(s.w), col(s.h), z(static_cast<std::size_t>(s.h) * wf);
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const T* gre = self.grad.plane(n, c);
        const T* gim = self.grad.plane(n, c + s.c);
        for (int l = 0; l < wf; ++l) {
          for (int k = 0; k < s.h; ++k) col[k] = Complex(gre[k * wf + l], gim[k * wf + l]);
          col_plan->inverse(col);
          for (int h = 0; h < s.h; ++h) z[static_cast<std::size_t>(h) * wf + l] = col[h];
        }
        T* g = gx.plane(n, c);
        for (int h = 0; h < s.h; ++h) {
          for (int w = 0; w < s.w; ++w) row[w] = w < wf ? z[static_cast<std::size_t>(h) * wf + w] : Complex(0.0, 0.0);
          row_plan->inverse(row);
          for (int w = 0; w < s.w; ++w) g[h * s.w + w] += static_cast<T>(row[w].real());
        }
      }
    }
  });
}

// Inverse packed transform: [N, 2C, H, Wf] -> [N, C, H, W].
template <typename T>
Var<T> irfft2_packed(const Var<T>& packed, int width) {
  const Shape ps = packed.shape();
  if (ps.c % 2 != 0) {
    throw ShapeError("irfft2: packed spectrum needs an even channel count, got " + ps.str());
  }
  if (width < 1 || half_spectrum_width(width) != ps.w) {
    throw ShapeError("irfft2: original width " + std::to_string(width) +
                     " inconsistent with half-spectrum width " + std::to_string(ps.w));
  }
  const int channels = ps.c / 2;
  const int wf = ps.w;
  const Shape os{ps.n, channels, ps.h, width};
  auto row_plan = std::make_shared<fft::Plan>(width);
  auto col_plan = std::make_shared<fft::Plan>(ps.h);
  const bool has_nyquist = width % 2 == 0;
  const double inv_h = 1.0 / ps.h;
  const double inv_w = 1.0 / width;
  Tensor<T> out(os);
  std::vector<Complex> row(width), col(ps.h), y(static_cast<std::size_t>(ps.h) * wf);
  for (int n = 0; n < ps.n; ++n) {
    for (int c = 0; c < channels; ++c) {
      const T* re = packed.value().plane(n, c);
      const T* im = packed.value().plane(n, c + channels);
      for (int l = 0; l < wf; ++l) {
        for (int k = 0; k < ps.h; ++k) col[k] = Complex(re[k * wf + l], im[k * wf + l]);
        col_plan->inverse(col);
        for (int h = 0; h < ps.h; ++h) y[static_cast<std::size_t>(h) * wf + l] = col[h] * inv_h;
      }
      T* o = out.plane(n, c);
      for (int h = 0; h < ps.h; ++h) {
        const Complex* yr = y.data() + static_cast<std::size_t>(h) * wf;
        std::fill(row.begin(), row.end(), Complex(0.0, 0.0));
        row[0] = Complex(yr[0].real(), 0.0);
        for (int l = 1; l < wf; ++l) {
          if (has_nyquist && l == width / 2) {
            row[l] = Complex(yr[l].real(), 0.0);
          } else {
            row[l] = yr[l];
            row[width - l] = std::conj(yr[l]);
          }
        }
        row_plan->inverse(row);
        for (int w = 0; w < width; ++w) o[h * width + w] = static_cast<T>(row[w].real() * inv_w);
      }
    }
  }
  return make_result<T>(std::move(out), {packed}, [=](Node<T>& self) {
    Tensor<T>& gp = self.inputs[0]->grad_buffer();
    std::vector<Complex> row(width), col(ps.h), gy(static_cast<std::size_t>(ps.h) * wf);
    for (int n = 0; n < ps.n; ++n) {
      for (int c = 0; c < channels; ++c) {
        const T* g = self.grad.plane(n, c);
        for (int h = 0; h < ps.h; ++h) {
          for (int w = 0; w < width; ++w) row[w] = Complex(g[h * width + w], 0.0);
          row_plan->forward(row);
          for (int l = 0; l < wf; ++l) {
            const bool edge = l == 0 || (has_nyquist && l == width / 2);
            gy[static_cast<std::size_t>(h) * wf + l] =
                edge ? Complex(row[l].real() * inv_w, 0.0) : row[l] * (2.0 * inv_w);
          }
        }
        T* gre = gp.plane(n, c);
        T* gim = gp.plane(n, c + channels);
        for (int l = 0; l < wf; ++l) {
          for (int h = 0; h < ps.h; ++h) col[h] = gy[static_cast<std::size_t>(h) * wf + l];
          col_plan->forward(col);
          for (int k = 0; k < ps.h; ++k) {
            gre[k * wf + l] += static_cast<T>(col[k].real() * inv_h);
            gim[k * wf + l] += static_cast<T>(col[k].imag() * inv_h);
          }
        }
      }
    }
  });
}

}  // namespace

template <typename T>
ComplexGrid<T> rfft2(const Var<T>& input) {
  return real_to_complex(rfft2_packed(input), input.shape().w);
}

template <typename T>
Var<T> irfft2(const ComplexGrid<T>& spec) {
  return irfft2_packed(complex_to_real(spec), spec.original_width);
}

template <typename T>
Var<T> complex_to_real(const ComplexGrid<T>& spec) {
  return concat_channels(spec.re, spec.im);
}

template <typename T>
ComplexGrid<T> real_to_complex(const Var<T>& packed, int original_width) {
  const Shape s = packed.shape();
  if (s.c % 2 != 0) {
    throw ShapeError("real_to_complex: channel count must be even, got " +
                     std::to_string(s.c));
  }
  if (half_spectrum_width(original_width) != s.w) {
    throw ShapeError("real_to_complex: original width " + std::to_string(original_width) +
                     " inconsistent with half-spectrum width " + std::to_string(s.w));
  }
  const int c = s.c / 2;
  return ComplexGrid<T>{slice_channels(packed, 0, c), slice_channels(packed, c, 2 * c),
                        original_width};
}

template <typename T>
Var<T> spectral_transform(const Var<T>& input, const SpectralTransformParams<T>& p) {
  const int c = input.shape().c;
  const Shape ws = p.weight.shape();
  if (ws.n != 2 * c || ws.c != 2 * c || ws.h != 1 || ws.w != 1) {
    throw ShapeError("spectral_transform: frequency conv must be [" + std::to_string(2 * c) +
                     ", " + std::to_string(2 * c) + ", 1, 1], got " + ws.str());
  }
  const int width = input.shape().w;
  Var<T> freq = complex_to_real(rfft2(input));
  freq = conv2d(freq, p.weight, p.bias);
  if (!p.bypass_norm) {
    freq = normalize(freq, NormKind::batch, p.norm_gain, p.norm_bias, p.eps, p.norm_state);
  }
  freq = activation(freq, p.activation);
  return irfft2(real_to_complex(freq, width));
}

#define DEHAZE_INSTANTIATE_SPECTRAL(T)                                         \
  template ComplexGrid<T> rfft2(const Var<T>&);                                \
  template Var<T> irfft2(const ComplexGrid<T>&);                               \
  template Var<T> complex_to_real(const ComplexGrid<T>&);                      \
  template ComplexGrid<T> real_to_complex(const Var<T>&, int);                 \
  template Var<T> spectral_transform(const Var<T>&, const SpectralTransformParams<T>&);

DEHAZE_INSTANTIATE_SPECTRAL(float)
DEHAZE_INSTANTIATE_SPECTRAL(double)

}  // namespace dehaze
