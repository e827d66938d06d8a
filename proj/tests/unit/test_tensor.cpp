#include <doctest.h>

#include <cmath>

#include "dehaze/gradcheck.hpp"
#include "dehaze/ops.hpp"
#include "oracles.hpp"

using namespace dehaze;

namespace {

Var<double> cst(const Tensor<double>& t) { return Var<double>::constant(t); }

Tensor<double> from(Shape s, std::vector<double> v) { return Tensor<double>(s, std::move(v)); }

}  // namespace

TEST_CASE("shape validation and construction") {
  CHECK_THROWS_AS(Tensor<float>(Shape{1, 0, 2, 2}), ShapeError);
  CHECK_THROWS_AS(Tensor<float>(Shape{1, 1, 2, 2}, std::vector<float>(3)), ShapeError);
  const Tensor<float> t(Shape{2, 3, 4, 5}, 1.5f);
  CHECK(t.numel() == 120);
  CHECK(t.at(1, 2, 3, 4) == 1.5f);
}

TEST_CASE("conv2d 2x2 all-ones stride 2 sums the block") {
  const auto x = cst(from(Shape{1, 1, 2, 2}, {1, 2, 3, 4}));
  const auto w = cst(Tensor<double>(Shape{1, 1, 2, 2}, 1.0));
  const auto y = conv2d(x, w, Var<double>(), ConvSpec{2, 0, 1});
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.value().item() == 10.0);
}

TEST_CASE("conv2d identity kernel") {
  Rng rng(1);
  const auto x = cst(Tensor<double>::uniform(Shape{2, 3, 5, 4}, rng, -1, 1));
  Tensor<double> w(Shape{3, 3, 1, 1});
  for (int i = 0; i < 3; ++i) w.at(i, i, 0, 0) = 1;
  CHECK(max_abs_diff(conv2d(x, cst(w), Var<double>()).value(), x.value()) == 0.0);
}

TEST_CASE("conv2d matches the nested-loop oracle") {
  Rng rng(2);
  SUBCASE("documented 1x2x5x5, 3x3, pad 1") {
    const auto x = Tensor<float>::uniform(Shape{1, 2, 5, 5}, rng, -1, 1);
    const auto w = Tensor<float>::uniform(Shape{3, 2, 3, 3}, rng, -1, 1);
    const auto b = Tensor<float>::uniform(Shape{1, 3, 1, 1}, rng, -1, 1);
    const auto got = conv2d(Var<float>::constant(x), Var<float>::constant(w), Var<float>::constant(b),
                            ConvSpec{1, 1, 1});
    CHECK(max_abs_diff(got.value(), oracle::conv2d(x, w, &b, 1, 1)) < 1e-6f);
  }
  SUBCASE("random shapes, strides and groups") {
    for (int trial = 0; trial < 60; ++trial) {
      const int groups = 1 + rng.below(2);
      const int cin = groups * (1 + rng.below(3 / groups + 0));
      const int cout = groups * (1 + rng.below(2));
      const int k = 1 + rng.below(3);
      const int stride = 1 + rng.below(2);
      const int pad = rng.below(k);
      const int h = k + rng.below(9 - k), w = k + rng.below(9 - k);
      const auto x = Tensor<float>::uniform(Shape{1 + rng.below(3), cin, h, w}, rng, -1, 1);
      const auto wt = Tensor<float>::uniform(Shape{cout, cin / groups, k, k}, rng, -1, 1);
      const auto got = conv2d(Var<float>::constant(x), Var<float>::constant(wt), Var<float>(),
                              ConvSpec{stride, pad, groups});
      const auto ref = oracle::conv2d(x, wt, static_cast<const Tensor<float>*>(nullptr), stride, pad, groups);
      REQUIRE(got.shape() == ref.shape());
      CHECK(max_abs_diff(got.value(), ref) < 1e-5f);
    }
  }
}

TEST_CASE("conv2d is linear in its input") {
  Rng rng(3);
  const auto x = Tensor<double>::uniform(Shape{1, 2, 6, 6}, rng, -1, 1);
  const auto y = Tensor<double>::uniform(Shape{1, 2, 6, 6}, rng, -1, 1);
  const auto w = cst(Tensor<double>::uniform(Shape{3, 2, 3, 3}, rng, -1, 1));
  const double a = 0.7, b = -1.3;
  Tensor<double> mix(x.shape());
  for (std::size_t i = 0; i < mix.numel(); ++i) mix.raw()[i] = a * x.raw()[i] + b * y.raw()[i];
  const auto lhs = conv2d(cst(mix), w, Var<double>(), ConvSpec{1, 1, 1}).value();
  const auto cx = conv2d(cst(x), w, Var<double>(), ConvSpec{1, 1, 1}).value();
  const auto cy = conv2d(cst(y), w, Var<double>(), ConvSpec{1, 1, 1}).value();
  double worst = 0;
  for (std::size_t i = 0; i < lhs.numel(); ++i)
    worst = std::max(worst, std::abs(lhs.raw()[i] - (a * cx.raw()[i] + b * cy.raw()[i])));
  CHECK(worst < 1e-5);
}

TEST_CASE("conv2d rejects bad shapes") {
  const auto x = cst(Tensor<double>(Shape{1, 3, 4, 4}));
  CHECK_THROWS_AS(conv2d(x, cst(Tensor<double>(Shape{2, 2, 3, 3})), Var<double>()), ShapeError);
  CHECK_THROWS_AS(conv2d(x, cst(Tensor<double>(Shape{2, 3, 5, 5})), Var<double>()), ShapeError);
}

TEST_CASE("pixel_shuffle layout and inverse") {
  const auto x = cst(from(Shape{1, 4, 1, 1}, {1, 2, 3, 4}));
  const auto y = pixel_shuffle(x, 2);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y.value().storage() == std::vector<double>{1, 2, 3, 4});
  CHECK(max_abs_diff(pixel_shuffle(x, 1).value(), x.value()) == 0.0);
  CHECK_THROWS_AS(pixel_shuffle(cst(Tensor<double>(Shape{1, 3, 2, 2})), 2), ShapeError);

  Rng rng(4);
  const auto r = cst(Tensor<double>::uniform(Shape{2, 18, 3, 4}, rng, -1, 1));
  CHECK(max_abs_diff(pixel_unshuffle(pixel_shuffle(r, 3), 3).value(), r.value()) == 0.0);
}

TEST_CASE("batch normalization statistics") {
  Rng rng(5);
  const auto g = cst(Tensor<double>(Shape{1, 2, 1, 1}, 1.0));
  const auto b = cst(Tensor<double>(Shape{1, 2, 1, 1}, 0.0));

  SUBCASE("constant input gives zeros") {
    NormState<double> st(2);
    const auto y = normalize(cst(Tensor<double>(Shape{2, 2, 3, 3}, 4.0)), NormKind::batch, g, b, 1e-5, &st);
    CHECK(y.value().all_finite());
    for (double v : y.value().storage()) CHECK(v == 0.0);
  }

  SUBCASE("standardizes per channel; gain and bias set the moments") {
    Tensor<double> x(Shape{4, 2, 8, 8});
    for (std::size_t i = 0; i < x.numel(); ++i) x.raw()[i] = 5 + 2 * rng.normal();
    for (const auto& [gain, bias] : {std::pair{1.0, 0.0}, std::pair{3.0, 7.0}}) {
      NormState<double> st(2);
      const auto y = normalize(cst(x), NormKind::batch, cst(Tensor<double>(Shape{1, 2, 1, 1}, gain)),
                               cst(Tensor<double>(Shape{1, 2, 1, 1}, bias)), 1e-12, &st);
      for (int c = 0; c < 2; ++c) {
        double s = 0, s2 = 0;
        int n = 0;
        for (int i = 0; i < 4; ++i)
          for (int h = 0; h < 8; ++h)
            for (int w = 0; w < 8; ++w, ++n) {
              s += y.value().at(i, c, h, w);
              s2 += y.value().at(i, c, h, w) * y.value().at(i, c, h, w);
            }
        const double m = s / n;
        CHECK(std::abs(m - bias) < 1e-4);
        CHECK(std::abs(std::sqrt(s2 / n - m * m) - gain) < 1e-4);
      }
    }
  }

  SUBCASE("eval mode uses running statistics") {
    NormState<double> st(2);
    st.training = false;
    st.running_mean.fill(1.0);
    st.running_var.fill(4.0);
    const auto y = normalize(cst(Tensor<double>(Shape{1, 2, 1, 1}, 3.0)), NormKind::batch, g, b, 1e-12, &st);
    CHECK(y.value().at(0, 0, 0, 0) == doctest::Approx(1.0));
  }

  SUBCASE("running statistics follow momentum 0.1") {
    NormState<double> st(2);
    normalize(cst(Tensor<double>(Shape{2, 2, 2, 2}, 10.0)), NormKind::batch, g, b, 1e-5, &st);
    CHECK(st.running_mean.at(0, 0, 0, 0) == doctest::Approx(1.0));
    CHECK(st.running_var.at(0, 0, 0, 0) == doctest::Approx(0.9));
  }

  SUBCASE("non-positive eps is rejected") {
    NormState<double> st(2);
    CHECK_THROWS_AS(normalize(cst(Tensor<double>(Shape{1, 2, 2, 2})), NormKind::batch, g, b, 0.0, &st),
                    ShapeError);
  }
}

TEST_CASE("layer normalization normalizes across channels") {
  Rng rng(6);
  const auto x = cst(Tensor<double>::uniform(Shape{2, 5, 3, 3}, rng, -4, 9));
  const auto y = normalize(x, NormKind::layer, cst(Tensor<double>(Shape{1, 5, 1, 1}, 1.0)),
                           cst(Tensor<double>(Shape{1, 5, 1, 1}, 0.0)), 1e-12, static_cast<NormState<double>*>(nullptr));
  for (int h = 0; h < 3; ++h) {
    double s = 0, s2 = 0;
    for (int c = 0; c < 5; ++c) {
      s += y.value().at(1, c, h, 2);
      s2 += y.value().at(1, c, h, 2) * y.value().at(1, c, h, 2);
    }
    CHECK(std::abs(s / 5) < 1e-9);
    CHECK(s2 / 5 == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("activations") {
  const auto x = cst(from(Shape{1, 1, 1, 3}, {-2, 0, 1}));
  const auto relu = activation(x, Activation::relu).value();
  CHECK(relu.storage() == std::vector<double>{0, 0, 1});
  CHECK(activation(x, Activation::sigmoid).value().at(0, 0, 0, 1) == 0.5);
  CHECK(activation(x, Activation::tanh).value().at(0, 0, 0, 1) == 0.0);
  const auto gelu = activation(x, Activation::gelu).value();
  for (int i = 0; i < 3; ++i) {
    const double v = x.value().at(0, 0, 0, i);
    CHECK(std::abs(gelu.at(0, 0, 0, i) - v * oracle::normal_cdf(v)) < 1e-6);
  }
}

TEST_CASE("global average pooling") {
  CHECK(global_avg_pool(cst(from(Shape{1, 1, 2, 2}, {1, 3, 5, 7}))).value().item() == 4.0);
  CHECK(global_avg_pool(cst(Tensor<double>(Shape{1, 1, 3, 5}, 2.5))).value().item() == doctest::Approx(2.5));
  Rng rng(7);
  const auto x = Tensor<double>::uniform(Shape{2, 3, 4, 5}, rng, -1, 1);
  const auto y = global_avg_pool(cst(x)).value();
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c) {
      double s = 0;
      for (int h = 0; h < 4; ++h)
        for (int w = 0; w < 5; ++w) s += x.at(n, c, h, w);
      CHECK(std::abs(y.at(n, c, 0, 0) - s / 20) < 1e-6);
    }
}

TEST_CASE("concat_channels order, slicing and gradient") {
  Rng rng(8);
  const auto a = Var<double>::leaf(Tensor<double>::uniform(Shape{1, 2, 3, 3}, rng, -1, 1));
  const auto b = Var<double>::leaf(Tensor<double>::uniform(Shape{1, 3, 3, 3}, rng, -1, 1));
  const auto c = concat_channels(a, b);
  CHECK(c.shape() == Shape{1, 5, 3, 3});
  CHECK(max_abs_diff(slice_channels(c, 0, 2).value(), a.value()) == 0.0);
  CHECK(max_abs_diff(slice_channels(c, 2, 5).value(), b.value()) == 0.0);
  CHECK_THROWS_AS(concat_channels(a, cst(Tensor<double>(Shape{1, 1, 2, 3}))), ShapeError);

  const auto up = Tensor<double>::uniform(c.shape(), rng, -1, 1);
  backward(sum(c * cst(up)));
  for (int ch = 0; ch < 2; ++ch)
    for (int h = 0; h < 3; ++h)
      for (int w = 0; w < 3; ++w) CHECK(a.grad().at(0, ch, h, w) == up.at(0, ch, h, w));
  const auto r = grad_check([&] { return random_projection(concat_channels(a, b), 3); }, {a, b}, 20, 9);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("backward on linear functions, reuse and unused parameters") {
  Rng rng(10);
  const auto x = Tensor<double>::uniform(Shape{1, 2, 2, 2}, rng, -1, 1);
  const auto w = Var<double>::leaf(Tensor<double>::uniform(Shape{1, 2, 2, 2}, rng, -1, 1));
  const auto unused = Var<double>::leaf(Tensor<double>(Shape{1, 1, 1, 1}, 3.0));
  unused.node()->zero_grad();
  backward(sum(w * cst(x)));
  CHECK(max_abs_diff(w.grad(), x) == 0.0);
  CHECK(unused.grad().item() == 0.0);

  w.node()->zero_grad();
  backward(sum(w + w));
  for (double g : w.grad().storage()) CHECK(g == 2.0);

  CHECK_THROWS_AS(backward(w * cst(x)), ShapeError);
}

TEST_CASE("tape is topologically ordered") {
  Rng rng(11);
  const auto a = Var<double>::leaf(Tensor<double>::uniform(Shape{1, 1, 2, 2}, rng, -1, 1));
  const auto b = square(a) + a;
  const auto loss = sum(b * b + a);
  const Tape<double> tape = Tape<double>::build(loss);
  CHECK(tape.is_topological());
  CHECK(tape.nodes().back() == loss.node().get());
}

TEST_CASE("no-grad mode records nothing") {
  const auto a = Var<double>::leaf(Tensor<double>(Shape{1, 1, 1, 1}, 2.0));
  NoGradGuard guard;
  const auto b = square(a);
  CHECK_FALSE(b.requires_grad());
  CHECK(b.node()->inputs.empty());
}

TEST_CASE("finite differences: elementwise and structural ops") {
  Rng rng(12);
  const auto x = Var<double>::leaf(Tensor<double>::uniform(Shape{2, 4, 4, 6}, rng, 0.1, 1.0));
  const auto y = Var<double>::leaf(Tensor<double>::uniform(Shape{1, 4, 1, 1}, rng, 0.5, 1.5));
  const auto check = [&](auto fn) {
    const auto r = grad_check([&] { return random_projection(fn(), 21); }, {x, y}, 24, 5);
    INFO(r.worst);
    CHECK(r.max_rel_error < 1e-4);
  };
  check([&] { return add(x, y); });
  check([&] { return sub(x, y); });
  check([&] { return mul(x, y); });
  check([&] { return div(x, y); });
  check([&] { return scale(square(x), 0.3); });
  check([&] { return log(x) + add_scalar(y, 2.0); });
  check([&] { return pow_positive(x, 0.7) * y; });
  check([&] { return clamp(x, 0.0, 2.0) * y; });
  check([&] { return avg_pool2(x) * y; });
  check([&] { return max_pool2(x) * y; });
  check([&] { return global_avg_pool(x) * y; });
  check([&] { return reflect_pad(x, 1, 2, 3, 0) * y; });
  check([&] { return crop(x, 1, 2, 2, 3) * y; });
  check([&] { return pixel_shuffle(x, 2); });
  check([&] { return pixel_unshuffle(x, 2); });
  check([&] { return leaky_relu(add_scalar(x, -0.55), 0.2) * y; });
  check([&] { return mean(x * x) * sum(y); });
}

TEST_CASE("finite differences: conv2d, norms, activations") {
  Rng rng(13);
  const auto x = Var<double>::leaf(Tensor<double>::uniform(Shape{2, 4, 5, 5}, rng, -1, 1));
  const auto w = Var<double>::leaf(Tensor<double>::uniform(Shape{4, 2, 3, 3}, rng, -1, 1));
  const auto b = Var<double>::leaf(Tensor<double>::uniform(Shape{1, 4, 1, 1}, rng, -1, 1));
  const auto g = Var<double>::leaf(Tensor<double>::uniform(Shape{1, 4, 1, 1}, rng, 0.5, 1.5));
  const auto check = [&](auto fn) {
    const auto r = grad_check([&] { return random_projection(fn(), 22); }, {x, w, b, g}, 40, 6);
    INFO(r.worst);
    CHECK(r.max_rel_error < 1e-4);
  };
  check([&] { return conv2d(x, w, b, ConvSpec{2, 1, 2}); });
  check([&] { return conv2d(x, w, b, ConvSpec{1, 0, 2}); });
  check([&] {
    NormState<double> st(4);
    return normalize(x, NormKind::batch, g, b, 1e-5, &st);
  });
  check([&] { return normalize(x, NormKind::layer, g, b, 1e-6, static_cast<NormState<double>*>(nullptr)); });
  for (Activation a : {Activation::gelu, Activation::sigmoid, Activation::tanh, Activation::relu}) {
    check([&] { return activation(x, a) * g; });
  }
}
