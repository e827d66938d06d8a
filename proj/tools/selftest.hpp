#pragma once

#include <iosfwd>

namespace dehaze::cli {

// Quick invariant suite: Haar round trip and oracle, FFT against a naive DFT,
// spectral round trip, and finite-difference gradient checks. Prints one line
// per check and returns the number of failures.
int run_selftest(std::ostream& out);

}  // namespace dehaze::cli
