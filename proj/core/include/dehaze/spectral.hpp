#pragma once

#include "dehaze/autograd.hpp"
#include "dehaze/ops.hpp"

namespace dehaze {

// Half spectrum of a real 2D signal: re/im are [N, C, H, W/2 + 1]. The
// Nyquist column is kept so the transform inverts exactly.
template <typename T>
struct ComplexGrid {
  Var<T> re;
  Var<T> im;
  int original_width = 0;
};

inline int half_spectrum_width(int width) { return width / 2 + 1; }

// Unnormalized forward transform:
//   X[k, l] = sum_{h, w} x[h, w] exp(-2 pi i (k h / H + l w / W)),  l <= W/2
template <typename T>
ComplexGrid<T> rfft2(const Var<T>& input);

// Inverse of rfft2, carrying the 1 / (H W) factor. The imaginary parts of the
// DC and Nyquist columns are ignored, as for any Hermitian-completed inverse.
template <typename T>
Var<T> irfft2(const ComplexGrid<T>& spec);

// [N, 2C, H, Wf]: channels [0, C) real parts, [C, 2C) imaginary parts.
template <typename T>
Var<T> complex_to_real(const ComplexGrid<T>& spec);
template <typename T>
ComplexGrid<T> real_to_complex(const Var<T>& packed, int original_width);

// Parameters of the frequency-domain 1x1 convolution (2C -> 2C) and its
// normalization. `bypass_norm` and `activation` exist so tests can reduce the
// transform to a pure linear map.
template <typename T>
struct SpectralTransformParams {
  Var<T> weight;  // [2C, 2C, 1, 1]
  Var<T> bias;    // [1, 2C, 1, 1] or undefined
  Var<T> norm_gain;
  Var<T> norm_bias;
  NormState<T>* norm_state = nullptr;
  bool bypass_norm = false;
  Activation activation = Activation::relu;
  T eps = T(1e-5);
};

// rfft2 -> complex_to_real -> conv1x1 -> batch norm -> activation ->
// real_to_complex -> irfft2. Output shape equals input shape.
template <typename T>
Var<T> spectral_transform(const Var<T>& input, const SpectralTransformParams<T>& params);

}  // namespace dehaze
