#pragma once

#include <array>

#include "dehaze/autograd.hpp"

namespace dehaze {

// Haar analysis filters, unnormalized. Row index is the vertical offset
// inside a 2x2 block, column index the horizontal offset; a 1-based pixel
// (2i-1, 2j) corresponds to the 0-based block entry (2i, 2j+1).
using HaarFilter = std::array<std::array<int, 2>, 2>;
inline constexpr HaarFilter kHaarLL{{{1, 1}, {1, 1}}};
inline constexpr HaarFilter kHaarLH{{{-1, -1}, {1, 1}}};
inline constexpr HaarFilter kHaarHL{{{-1, 1}, {-1, 1}}};
inline constexpr HaarFilter kHaarHH{{{1, -1}, {-1, 1}}};
inline constexpr std::array<HaarFilter, 4> kHaarBank{kHaarLL, kHaarLH, kHaarHL, kHaarHH};

template <typename T>
struct WaveletBands {
  Var<T> ll;
  Var<T> lh;
  Var<T> hl;
  Var<T> hh;
};

// One level of the 2D Haar DWT: each band is the stride-2 correlation of
// every channel with the matching filter. H and W must be even.
template <typename T>
WaveletBands<T> dwt2(const Var<T>& input);

// Exact inverse of dwt2 (synthesis with the transposed filters scaled by 1/4).
template <typename T>
Var<T> idwt2(const WaveletBands<T>& bands);

}  // namespace dehaze
