#pragma once

#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

namespace dehaze::fft {

using Complex = std::complex<double>;

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// One-dimensional complex DFT of a fixed length. Power-of-two lengths use an
// iterative radix-2 Cooley-Tukey transform; other lengths go through
// Bluestein's chirp-z identity on a padded power-of-two transform.
//
// forward:  X[k] = sum_j x[j] exp(-2 pi i j k / n)
// inverse:  x[j] = sum_k X[k] exp(+2 pi i j k / n)   (unnormalized)
//
// Immutable after construction, so a plan may be shared across threads.
class Plan {
 public:
  explicit Plan(std::size_t n);
  ~Plan();
  Plan(Plan&&) noexcept;
  Plan& operator=(Plan&&) noexcept;

  std::size_t size() const { return n_; }
  bool uses_bluestein() const { return chirp_sub_ != nullptr; }

  void forward(std::span<Complex> data) const;
  void inverse(std::span<Complex> data) const;

 private:
  void radix2(std::span<Complex> data) const;
  void bluestein(std::span<Complex> data) const;

  std::size_t n_ = 0;
  std::vector<std::size_t> bitrev_;
  std::vector<Complex> twiddle_;
  // Bluestein state.
  std::vector<Complex> chirp_;       // exp(-i pi j^2 / n)
  std::vector<Complex> kernel_fft_;  // FFT of the conjugate chirp, length m
  std::unique_ptr<Plan> chirp_sub_;
};

}  // namespace dehaze::fft
