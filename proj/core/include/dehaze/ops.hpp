#pragma once

#include <vector>

#include "dehaze/autograd.hpp"

namespace dehaze {

enum class Activation { relu, gelu, sigmoid, tanh, identity };
enum class NormKind { batch, layer };

const char* to_string(Activation a);

struct ConvSpec {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

// Cross-correlation (no kernel flip) with zero padding.
// weight: [Cout, Cin/groups, kH, kW]; bias: [1, Cout, 1, 1] or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias,
              ConvSpec spec = {});

// out[n, c, h*r+i, w*r+j] = in[n, c*r*r + i*r + j, h, w]
template <typename T>
Var<T> pixel_shuffle(const Var<T>& input, int r);
template <typename T>
Var<T> pixel_unshuffle(const Var<T>& input, int r);

// Batch kind: per-channel statistics over (N, H, W); eval mode uses the
// running statistics in `state`. Layer kind: statistics over C per position.
// gain / bias are [1, C, 1, 1].
template <typename T>
Var<T> normalize(const Var<T>& input, NormKind kind, const Var<T>& gain,
                 const Var<T>& bias, T eps, NormState<T>* state);

template <typename T>
Var<T> activation(const Var<T>& input, Activation kind);
template <typename T>
Var<T> leaky_relu(const Var<T>& input, T slope);

template <typename T>
Var<T> global_avg_pool(const Var<T>& input);

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts);
template <typename T>
Var<T> slice_channels(const Var<T>& input, int begin, int end);

// Elementwise with broadcasting: each dimension must match or be 1.
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& input, T s);
template <typename T>
Var<T> add_scalar(const Var<T>& input, T s);
template <typename T>
Var<T> square(const Var<T>& input);
template <typename T>
Var<T> log(const Var<T>& input);
// max(x, 0)^e; gradient is zero where x <= 0.
template <typename T>
Var<T> pow_positive(const Var<T>& input, T e);
// Gradient passes where lo <= x <= hi.
template <typename T>
Var<T> clamp(const Var<T>& input, T lo, T hi);

// Scalar (1x1x1x1) reductions.
template <typename T>
Var<T> sum(const Var<T>& input);
template <typename T>
Var<T> mean(const Var<T>& input);

// 2x2 stride-2 pooling; odd trailing row/column is dropped.
template <typename T>
Var<T> avg_pool2(const Var<T>& input);
template <typename T>
Var<T> max_pool2(const Var<T>& input);

// Mirror padding without edge repeat; each pad must be < the dimension.
template <typename T>
Var<T> reflect_pad(const Var<T>& input, int top, int bottom, int left, int right);
template <typename T>
Var<T> crop(const Var<T>& input, int top, int left, int height, int width);

template <typename T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <typename T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <typename T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }

}  // namespace dehaze
