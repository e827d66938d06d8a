#include "selftest.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <ostream>
#include <string>

#include "dehaze/gradcheck.hpp"
#include "dehaze/network.hpp"
#include "dehaze/spectral.hpp"
#include "dehaze/wavelet.hpp"

namespace dehaze::cli {

namespace {

struct Check {
  std::ostream& out;
  int failures = 0;

  void report(const std::string& name, bool ok, const std::string& detail) {
    out << (ok ? "ok   " : "FAIL ") << name << "  " << detail << "\n";
    if (!ok) ++failures;
  }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double wavelet_round_trip() {
  Rng rng(11);
  double worst = 0;
  for (int size = 2; size <= 16; size += 2) {
    const auto x = Var<float>::constant(Tensor<float>::uniform(Shape{2, 3, size, size + 2}, rng, -1, 1));
    worst = std::max<double>(worst, max_abs_diff(idwt2(dwt2(x)).value(), x.value()));
  }
  return worst;
}

double dft_error() {
  Rng rng(12);
  double worst = 0;
  for (int h = 2; h <= 9; ++h)
    for (int w = 2; w <= 9; ++w) {
      const auto x = Tensor<double>::uniform(Shape{1, 1, h, w}, rng, -1, 1);
      const ComplexGrid<double> spec = rfft2(Var<double>::constant(x));
      const int wf = half_spectrum_width(w);
      for (int k = 0; k < h; ++k)
        for (int l = 0; l < wf; ++l) {
          std::complex<double> acc = 0;
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
              const double a = -2 * std::numbers::pi * (double(k) * y / h + double(l) * xx / w);
              acc += x.at(0, 0, y, xx) * std::complex<double>(std::cos(a), std::sin(a));
            }
          const std::complex<double> got(spec.re.value().at(0, 0, k, l), spec.im.value().at(0, 0, k, l));
          worst = std::max(worst, std::abs(got - acc) / std::max(1.0, std::abs(acc)));
        }
    }
  return worst;
}

double spectral_round_trip() {
  Rng rng(13);
  const auto x = Var<float>::constant(Tensor<float>::uniform(Shape{1, 2, 12, 10}, rng, -1, 1));
  return max_abs_diff(irfft2(rfft2(x)).value(), x.value());
}

GradCheckResult conv_gradient() {
  Rng rng(14);
  const auto x = Var<double>::leaf(Tensor<double>::uniform(Shape{2, 3, 6, 6}, rng, -1, 1));
  const auto w = Var<double>::leaf(Tensor<double>::uniform(Shape{4, 3, 3, 3}, rng, -1, 1));
  const auto b = Var<double>::leaf(Tensor<double>::uniform(Shape{1, 4, 1, 1}, rng, -1, 1));
  return grad_check([&] { return random_projection(conv2d(x, w, b, ConvSpec{2, 1, 1}), 1); },
                    {x, w, b}, 24, 15);
}

GradCheckResult ffc_gradient() {
  ParamRegistry<double> reg;
  Rng rng(16);
  const FfcResidualBlock<double> block(reg, "ffc", 4, 0.5, rng);
  const auto x = Var<double>::leaf(Tensor<double>::uniform(Shape{2, 4, 6, 6}, rng, -1, 1));
  std::vector<Var<double>> leaves{x};
  for (const auto& p : reg.params()) leaves.push_back(p.var);
  return grad_check([&] { return random_projection(block(x), 2); }, leaves, 40, 17);
}

}  // namespace

int run_selftest(std::ostream& out) {
  Check c{out};
  const double wt = wavelet_round_trip();
  c.report("haar round trip", wt < 1e-5, "max |err| " + fmt(wt));

  {
    Rng rng(18);
    const auto x = Var<double>::constant(Tensor<double>::uniform(Shape{1, 2, 8, 8}, rng, -1, 1));
    const WaveletBands<double> b = dwt2(x);
    Tensor<double> bank(Shape{8, 1, 2, 2});
    for (int band = 0; band < 4; ++band)
      for (int ch = 0; ch < 2; ++ch)
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j) bank.at(band * 2 + ch, 0, i, j) = kHaarBank[band][i][j];
    // Grouped conv over [x, x, x, x] with one filter per (band, channel).
    const auto rep = concat_channels<double>({x, x, x, x});
    const auto ref = conv2d(rep, Var<double>::constant(bank), Var<double>(), ConvSpec{2, 0, 8});
    const auto got = concat_channels<double>({b.ll, b.lh, b.hl, b.hh});
    const double d = max_abs_diff(ref.value(), got.value());
    c.report("haar vs conv oracle", d == 0.0, "max |err| " + fmt(d));
  }

  const double dft = dft_error();
  c.report("rfft2 vs naive dft", dft < 1e-4, "max rel err " + fmt(dft));
  const double st = spectral_round_trip();
  c.report("rfft2 round trip", st < 1e-4, "max |err| " + fmt(st));

  const GradCheckResult gc = conv_gradient();
  c.report("conv2d gradient", gc.max_rel_error < 1e-4, "max rel err " + fmt(gc.max_rel_error));
  const GradCheckResult gf = ffc_gradient();
  c.report("ffc block gradient", gf.max_rel_error < 1e-4, "max rel err " + fmt(gf.max_rel_error));

  out << (c.failures ? "selftest FAILED (" + std::to_string(c.failures) + ")" : std::string("selftest passed"))
      << "\n";
  return c.failures;
}

}  // namespace dehaze::cli
