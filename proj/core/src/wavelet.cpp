#include "dehaze/wavelet.hpp"

#include "dehaze/ops.hpp"

namespace dehaze {

namespace {

// [N, C, H, W] -> [N, 4C, H/2, W/2] ordered ll, lh, hl, hh.
template <typename T>
Var<T> haar_analysis(const Var<T>& input) {
  const Shape s = input.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeError("dwt2: height and width must be even, got " + s.str() +
                     "; pad the input (e.g. reflect) before the transform");
  }
  const int h2 = s.h / 2, w2 = s.w / 2;
  const Shape os{s.n, 4 * s.c, h2, w2};
  Tensor<T> out(os);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T* x = input.value().plane(n, c);
      for (int b = 0; b < 4; ++b) {
        const HaarFilter& f = kHaarBank[b];
        T* o = out.plane(n, b * s.c + c);
        for (int i = 0; i < h2; ++i)
          for (int j = 0; j < w2; ++j) {
            const T* top = x + static_cast<std::size_t>(2 * i) * s.w + 2 * j;
            const T* bot = top + s.w;
            // Same accumulation order as conv2d with a 2x2 kernel.
            T acc = 0;
            acc += static_cast<T>(f[0][0]) * top[0];
            acc += static_cast<T>(f[0][1]) * top[1];
            acc += static_cast<T>(f[1][0]) * bot[0];
            acc += static_cast<T>(f[1][1]) * bot[1];
            o[static_cast<std::size_t>(i) * w2 + j] = acc;
          }
      }
    }
  return make_result<T>(std::move(out), {input}, [s, h2, w2](Node<T>& self) {
    Tensor<T>& gx = self.inputs[0]->grad_buffer();
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        T* g = gx.plane(n, c);
        for (int b = 0; b < 4; ++b) {
          const HaarFilter& f = kHaarBank[b];
          const T* go = self.grad.plane(n, b * s.c + c);
          for (int i = 0; i < h2; ++i)
            for (int j = 0; j < w2; ++j) {
              const T v = go[static_cast<std::size_t>(i) * w2 + j];
              T* top = g + static_cast<std::size_t>(2 * i) * s.w + 2 * j;
              T* bot = top + s.w;
              top[0] += static_cast<T>(f[0][0]) * v;
              top[1] += static_cast<T>(f[0][1]) * v;
              bot[0] += static_cast<T>(f[1][0]) * v;
              bot[1] += static_cast<T>(f[1][1]) * v;
            }
        }
      }
  });
}

// [N, 4C, h, w] (ll, lh, hl, hh) -> [N, C, 2h, 2w].
template <typename T>
Var<T> haar_synthesis(const Var<T>& packed) {
  const Shape s = packed.shape();
  const int c_out = s.c / 4;
  const Shape os{s.n, c_out, 2 * s.h, 2 * s.w};
  Tensor<T> out(os);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < c_out; ++c) {
      T* x = out.plane(n, c);
      for (int b = 0; b < 4; ++b) {
        const HaarFilter& f = kHaarBank[b];
        const T* band = packed.value().plane(n, b * c_out + c);
        for (int i = 0; i < s.h; ++i)
          for (int j = 0; j < s.w; ++j) {
            const T v = band[static_cast<std::size_t>(i) * s.w + j] * T(0.25);
            T* top = x + static_cast<std::size_t>(2 * i) * os.w + 2 * j;
            T* bot = top + os.w;
            top[0] += static_cast<T>(f[0][0]) * v;
            top[1] += static_cast<T>(f[0][1]) * v;
            bot[0] += static_cast<T>(f[1][0]) * v;
            bot[1] += static_cast<T>(f[1][1]) * v;
          }
      }
    }
  return make_result<T>(std::move(out), {packed}, [s, c_out, os](Node<T>& self) {
    Tensor<T>& gp = self.inputs[0]->grad_buffer();
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < c_out; ++c) {
        const T* g = self.grad.plane(n, c);
        for (int b = 0; b < 4; ++b) {
          const HaarFilter& f = kHaarBank[b];
          T* gb = gp.plane(n, b * c_out + c);
          for (int i = 0; i < s.h; ++i)
            for (int j = 0; j < s.w; ++j) {
              const T* top = g + static_cast<std::size_t>(2 * i) * os.w + 2 * j;
              const T* bot = top + os.w;
              gb[static_cast<std::size_t>(i) * s.w + j] +=
                  T(0.25) * (static_cast<T>(f[0][0]) * top[0] + static_cast<T>(f[0][1]) * top[1] +
                             static_cast<T>(f[1][0]) * bot[0] + static_cast<T>(f[1][1]) * bot[1]);
            }
        }
      }
  });
}

}  // namespace

template <typename T>
WaveletBands<T> dwt2(const Var<T>& input) {
  const Var<T> packed = haar_analysis(input);
  const int c = input.shape().c;
  return WaveletBands<T>{slice_channels(packed, 0, c), slice_channels(packed, c, 2 * c),
                         slice_channels(packed, 2 * c, 3 * c),
                         slice_channels(packed, 3 * c, 4 * c)};
}

template <typename T>
Var<T> idwt2(const WaveletBands<T>& bands) {
  const Shape s = bands.ll.shape();
  for (const Var<T>* b : {&bands.lh, &bands.hl, &bands.hh}) {
    if (!(b->shape() == s)) {
      throw ShapeError("idwt2: band shape " + b->shape().str() + " differs from ll " + s.str());
    }
  }
  return haar_synthesis(concat_channels<T>({bands.ll, bands.lh, bands.hl, bands.hh}));
}

template WaveletBands<float> dwt2(const Var<float>&);
template WaveletBands<double> dwt2(const Var<double>&);
template Var<float> idwt2(const WaveletBands<float>&);
template Var<double> idwt2(const WaveletBands<double>&);

}  // namespace dehaze
