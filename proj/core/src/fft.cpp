#include "dehaze/fft.hpp"

#include <numbers>
#include <stdexcept>

namespace dehaze::fft {

Plan::Plan(std::size_t n) : n_(n) {
  if (n == 0) throw std::invalid_argument("fft::Plan: length must be >= 1");
  if (is_power_of_two(n)) {
    int bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    bitrev_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (int b = 0; b < bits; ++b) r |= ((i >> b) & 1u) << (bits - 1 - b);
      bitrev_[i] = r;
    }
    twiddle_.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      twiddle_[k] = Complex(std::cos(a), std::sin(a));
    }
    return;
  }

  std::size_t m = 1;
  while (m < 2 * n - 1) m <<= 1;
  chirp_.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    // j^2 mod 2n keeps the angle small for large j.
    const std::size_t q = (j * j) % (2 * n);
    const double a = -std::numbers::pi * static_cast<double>(q) / static_cast<double>(n);
    chirp_[j] = Complex(std::cos(a), std::sin(a));
  }
  chirp_sub_ = std::make_unique<Plan>(m);
  kernel_fft_.assign(m, Complex(0.0, 0.0));
  kernel_fft_[0] = std::conj(chirp_[0]);
  for (std::size_t j = 1; j < n; ++j) {
    kernel_fft_[j] = std::conj(chirp_[j]);
    kernel_fft_[m - j] = std::conj(chirp_[j]);
  }
  chirp_sub_->forward(kernel_fft_);
}

Plan::~Plan() = default;
Plan::Plan(Plan&&) noexcept = default;
Plan& Plan::operator=(Plan&&) noexcept = default;

void Plan::forward(std::span<Complex> data) const {
  if (data.size() != n_) throw std::invalid_argument("fft::Plan: length mismatch");
  if (n_ == 1) return;
  if (chirp_sub_) {
    bluestein(data);
  } else {
    radix2(data);
  }
}

void Plan::inverse(std::span<Complex> data) const {
  for (auto& v : data) v = std::conj(v);
  forward(data);
  for (auto& v : data) v = std::conj(v);
}

void Plan::radix2(std::span<Complex> data) const {
  const std::size_t n = n_;
  for (std::size_t i = 0; i < n; ++i) {
    if (i < bitrev_[i]) std::swap(data[i], data[bitrev_[i]]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t step = n / len;
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const Complex t = twiddle_[k * step] * data[start + k + half];
        const Complex u = data[start + k];
        data[start + k] = u + t;
        data[start + k + half] = u - t;
      }
    }
  }
}

void Plan::bluestein(std::span<Complex> data) const {
  const std::size_t m = chirp_sub_->size();
  // Per-thread scratch keeps the plan itself immutable and shareable.
  thread_local std::vector<Complex> a;
  a.assign(m, Complex(0.0, 0.0));
  for (std::size_t j = 0; j < n_; ++j) a[j] = data[j] * chirp_[j];
  chirp_sub_->forward(a);
  for (std::size_t i = 0; i < m; ++i) a[i] *= kernel_fft_[i];
  chirp_sub_->inverse(a);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t k = 0; k < n_; ++k) data[k] = a[k] * chirp_[k] * inv_m;
}

}  // namespace dehaze::fft
