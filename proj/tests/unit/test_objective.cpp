#include <doctest.h>

#include <cmath>
#include <limits>

#include "dehaze/gradcheck.hpp"
#include "dehaze/objective.hpp"
#include "oracles.hpp"

using namespace dehaze;

namespace {

Var<double> cst(const Tensor<double>& t) { return Var<double>::constant(t); }
Var<double> full(Shape s, double v) { return cst(Tensor<double>(s, v)); }

Tensor<double> offset(const Tensor<double>& t, double d) {
  Tensor<double> out = t;
  for (double& v : out.storage()) v += d;
  return out;
}

}  // namespace

TEST_CASE("smooth L1") {
  Rng rng(1);
  const auto a = Tensor<double>::uniform(Shape{2, 3, 4, 4}, rng, 0, 1);
  CHECK(smooth_l1(cst(a), cst(a)).value().item() == 0.0);
  CHECK(smooth_l1(cst(offset(a, 0.5)), cst(a)).value().item() == doctest::Approx(0.125).epsilon(1e-12));
  CHECK(smooth_l1(cst(offset(a, 2.0)), cst(a)).value().item() == doctest::Approx(1.5).epsilon(1e-12));
  const double below = smooth_l1(full(Shape{1, 3, 1, 1}, 1.0 - 1e-12), full(Shape{1, 3, 1, 1}, 0)).value().item();
  const double above = smooth_l1(full(Shape{1, 3, 1, 1}, 1.0 + 1e-12), full(Shape{1, 3, 1, 1}, 0)).value().item();
  CHECK(below == doctest::Approx(0.5));
  CHECK(above == doctest::Approx(0.5));
  const auto b = Tensor<double>::uniform(a.shape(), rng, 0, 1);
  CHECK(smooth_l1(cst(a), cst(b)).value().item() == smooth_l1(cst(b), cst(a)).value().item());
  CHECK_THROWS_AS(smooth_l1(cst(a), full(Shape{1, 3, 4, 4}, 0)), ShapeError);
}

TEST_CASE("perceptual loss") {
  Rng rng(2);
  const auto a = Tensor<double>::uniform(Shape{1, 3, 16, 16}, rng, 0, 1);
  const auto b = Tensor<double>::uniform(Shape{1, 3, 16, 16}, rng, 0, 1);
  const RandomFeatureNet<double> net;
  CHECK(perceptual_loss(cst(a), cst(a), net).value().item() == 0.0);

  const IdentityFeatures<double> id;
  double mse = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) mse += (a.raw()[i] - b.raw()[i]) * (a.raw()[i] - b.raw()[i]);
  mse /= static_cast<double>(a.numel());
  CHECK(std::abs(perceptual_loss(cst(a), cst(b), id).value().item() - mse) < 1e-6);

  // Gradient reaches the prediction only.
  const auto p = Var<double>::leaf(a);
  const auto t = Var<double>::leaf(b);
  t.node()->zero_grad();
  backward(perceptual_loss(p, t, net));
  for (double g : t.grad().storage()) CHECK(g == 0.0);
  CHECK(net.features(cst(a)).size() == 3);
  CHECK(Vgg16Features<double>().features(cst(a)).size() == 3);
}

TEST_CASE("ssim maps") {
  Rng rng(3);
  const auto a = Tensor<double>::uniform(Shape{1, 3, 16, 20}, rng, 0, 1);
  const auto m = ssim_map(cst(a), cst(a));
  CHECK(m.l.shape() == Shape{1, 3, 6, 10});
  for (double v : m.l.value().storage()) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  for (double v : m.cs.value().storage()) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));

  Tensor<double> inv = a;
  for (double& v : inv.storage()) v = 1 - v;
  CHECK(ssim(cst(a), cst(inv)).value().item() < 1.0);
  const auto b = Tensor<double>::uniform(a.shape(), rng, 0, 1);
  CHECK(ssim(cst(a), cst(b)).value().item() == doctest::Approx(ssim(cst(b), cst(a)).value().item()).epsilon(1e-12));

  const SsimConfig cfg;
  const auto c = ssim_map(full(Shape{1, 1, 12, 12}, 0.2), full(Shape{1, 1, 12, 12}, 0.4));
  const double l = (2 * 0.08 + cfg.c1()) / (0.04 + 0.16 + cfg.c1());
  for (double v : c.l.value().storage()) CHECK(std::abs(v - l) < 1e-6);
  for (double v : c.cs.value().storage()) CHECK(std::abs(v - 1.0) < 1e-6);

  CHECK_THROWS_AS(ssim_map(full(Shape{1, 1, 10, 12}, 0), full(Shape{1, 1, 10, 12}, 0)), ShapeError);
  double sum = 0;
  for (double t : gaussian_taps(11, 1.5)) sum += t;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("ms-ssim loss") {
  Rng rng(4);
  const SsimConfig three = SsimConfig::with_scales(3);
  double wsum = 0;
  for (double w : three.scale_weights) wsum += w;
  CHECK(wsum == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(three.scale_weights[0] == doctest::Approx(0.0448 / (0.0448 + 0.2856 + 0.3001)));

  const auto a = Tensor<double>::uniform(Shape{2, 3, 64, 64}, rng, 0, 1);
  CHECK(std::abs(ms_ssim_loss(cst(a), cst(a), three).value().item()) < 1e-12);

  const auto b = Tensor<double>::uniform(a.shape(), rng, 0, 1);
  Tensor<double> smooth = a;
  for (std::size_t i = 0; i < smooth.numel(); ++i) smooth.raw()[i] = 0.5 * (a.raw()[i] + b.raw()[i]);

  // With one scale and no channel clipped by the relu, the loss is 1 - SSIM.
  const double one = ms_ssim_loss(cst(a), cst(smooth), SsimConfig::with_scales(1)).value().item();
  CHECK(one == doctest::Approx(1.0 - ssim(cst(a), cst(smooth)).value().item()).epsilon(1e-12));
  for (const auto& [x, y] : {std::pair{a, b}, std::pair{a, smooth}}) {
    const double got = ms_ssim_loss(cst(x), cst(y), three).value().item();
    CHECK(std::abs(got - oracle::ms_ssim_loss(x, y, three.scale_weights)) < 1e-5);
    CHECK((got >= 0.0 && got <= 1.0));
  }

  CHECK(max_ms_ssim_scales(64, 64) == 3);
  CHECK_THROWS_AS(ms_ssim_loss(cst(a), cst(b), SsimConfig::with_scales(4)), ShapeError);
}

TEST_CASE("adversarial losses") {
  const Shape s{2, 1, 3, 3};
  CHECK(generator_adversarial_loss(full(s, 1 - 1e-7)).value().item() == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(generator_adversarial_loss(full(s, 0.5)).value().item() == doctest::Approx(std::log(2.0)));
  CHECK(discriminator_loss(full(s, 0.5), full(s, 0.5)).value().item() == doctest::Approx(2 * std::log(2.0)));
  const auto both = adversarial_losses(full(s, 0.5), full(s, 0.5), full(s, 0.5));
  CHECK(both.d_loss.value().item() == doctest::Approx(2 * std::log(2.0)));
  CHECK(std::isfinite(generator_adversarial_loss(full(s, 0.0)).value().item()));
  CHECK_THROWS_AS(generator_adversarial_loss(full(s, 1.5)), NumericError);
  CHECK_THROWS_AS(discriminator_loss(full(s, -0.1), full(s, 0.5)), NumericError);
}

TEST_CASE("loss assembly") {
  const auto one = full(Shape{1, 1, 1, 1}, 1.0);
  const auto t = weighted_total(LossTerms<double>{one, one, one, one, {}}, LossWeights{});
  CHECK(t.total.value().item() == 1.2105);

  // Linear in each term with coefficients (1, alpha, beta, gamma).
  const LossWeights w;
  const double coeffs[] = {1.0, w.alpha, w.beta, w.gamma};
  for (int k = 0; k < 4; ++k) {
    Var<double> terms[4] = {one, one, one, one};
    terms[k] = full(Shape{1, 1, 1, 1}, 3.0);
    const auto r = weighted_total(LossTerms<double>{terms[0], terms[1], terms[2], terms[3], {}}, w);
    CHECK(r.total.value().item() == doctest::Approx(1.2105 + 2 * coeffs[k]).epsilon(1e-15));
  }

  Rng rng(5);
  const auto a = Tensor<double>::uniform(Shape{1, 3, 32, 32}, rng, 0, 1);
  const IdentityFeatures<double> id;
  const auto fooled = full(Shape{1, 1, 2, 2}, 1 - 1e-7);
  const auto same = total_loss(cst(a), cst(a), id, fooled, w, SsimConfig::with_scales(2));
  CHECK(std::abs(same.total.value().item()) < 1e-6);

  LossWeights neg;
  neg.beta = -1;
  CHECK_THROWS_AS(neg.validate(), ShapeError);
}

TEST_CASE("loss gradients") {
  Rng rng(6);
  const auto p = Var<double>::leaf(Tensor<double>::uniform(Shape{1, 3, 24, 24}, rng, 0.05, 0.95));
  const auto t = cst(Tensor<double>::uniform(Shape{1, 3, 24, 24}, rng, 0.05, 0.95));
  const auto d = Var<double>::leaf(Tensor<double>::uniform(Shape{1, 1, 3, 3}, rng, 0.1, 0.9));
  const auto dr = Var<double>::leaf(Tensor<double>::uniform(Shape{1, 1, 3, 3}, rng, 0.1, 0.9));
  const RandomFeatureNet<double> net;
  const SsimConfig two = SsimConfig::with_scales(2);
  const auto check = [&](auto fn, std::vector<Var<double>> leaves) {
    const auto r = grad_check(fn, leaves, 24, 7);
    INFO(r.worst);
    CHECK(r.max_rel_error < 1e-4);
  };
  check([&] { return smooth_l1(scale(p, 3.0), t); }, {p});
  check([&] { return ssim(p, t); }, {p});
  check([&] { return ms_ssim_loss(p, t, two); }, {p});
  check([&] { return perceptual_loss(p, t, net); }, {p});
  check([&] { return generator_adversarial_loss(d); }, {d});
  check([&] { return discriminator_loss(dr, d); }, {dr, d});

  // Gradient of the total is the weighted sum of the term gradients.
  const LossWeights w;
  p.node()->zero_grad();
  backward(total_loss(p, t, net, d, w, two).total);
  const Tensor<double> g_total = p.grad();
  Tensor<double> g_sum(p.shape());
  const double coeff[] = {1.0, w.alpha, w.beta};
  for (int k = 0; k < 3; ++k) {
    p.node()->zero_grad();
    const Var<double> term = k == 0 ? smooth_l1(p, t) : k == 1 ? ms_ssim_loss(p, t, two) : perceptual_loss(p, t, net);
    backward(term);
    for (std::size_t i = 0; i < g_sum.numel(); ++i) g_sum.raw()[i] += coeff[k] * p.grad().raw()[i];
  }
  CHECK(max_abs_diff(g_total, g_sum) < 1e-12);
  check([&] { return total_loss(p, t, net, d, w, two).total; }, {p, d});
}

TEST_CASE("psnr and metric lines") {
  Rng rng(7);
  const auto a = Tensor<double>::uniform(Shape{1, 3, 8, 8}, rng, 0.2, 0.8);
  CHECK(std::isinf(psnr(a, a)));
  CHECK(psnr(offset(a, 0.1), a) == doctest::Approx(20.0).epsilon(1e-9));
  CHECK(psnr(offset(a, 16.0 / 255), a) == doctest::Approx(20 * std::log10(255.0 / 16)).epsilon(1e-9));
  CHECK(std::abs(psnr(offset(a, 16.0 / 255), a) - 24.0484) < 1e-4);
  CHECK(metric_line("x", 20.0, 0.5) == "x\tPSNR=20.0000\tSSIM=0.5000");
  CHECK(metric_line("y", std::numeric_limits<double>::infinity(), 1.0) == "y\tPSNR=inf\tSSIM=1.0000");
}
