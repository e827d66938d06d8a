#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dehaze/autograd.hpp"
#include "dehaze/ops.hpp"
#include "dehaze/rng.hpp"

namespace dehaze {

struct GradCheckResult {
  double max_rel_error = 0;
  int probes = 0;
  std::string worst;  // "leaf[index]: analytic vs numeric" of the worst probe
};

// Central finite differences against reverse-mode gradients, in double.
// `loss` must rebuild the graph from `leaves` on every call and return a
// scalar. Probes cycle through the leaves, picking random elements.
// rel = |a - n| / max(|a|, |n|, floor). The floor keeps parameters whose
// true gradient is zero (a conv bias feeding batch norm) from dividing
// rounding noise of order 1e-9 by itself.
inline GradCheckResult grad_check(const std::function<Var<double>()>& loss,
                                  const std::vector<Var<double>>& leaves, int probes,
                                  std::uint64_t seed, double h = 1e-6,
                                  double floor = 1e-4) {
  for (const auto& l : leaves) l.node()->zero_grad();
  backward(loss());
  Rng rng(seed);
  GradCheckResult r;
  for (int i = 0; i < probes; ++i) {
    const std::size_t li = static_cast<std::size_t>(i) % leaves.size();
    Node<double>& node = *leaves[li].node();
    const std::size_t idx = static_cast<std::size_t>(rng.below(static_cast<int>(node.value.numel())));
    const double analytic = node.has_grad ? node.grad.raw()[idx] : 0.0;
    const double saved = node.value.raw()[idx];
    double plus, minus;
    {
      NoGradGuard guard;
      node.value.raw()[idx] = saved + h;
      plus = loss().value().item();
      node.value.raw()[idx] = saved - h;
      minus = loss().value().item();
      node.value.raw()[idx] = saved;
    }
    const double numeric = (plus - minus) / (2 * h);
    const double rel =
        std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
    ++r.probes;
    if (rel >= r.max_rel_error) {
      r.max_rel_error = rel;
      r.worst = "leaf " + std::to_string(li) + "[" + std::to_string(idx) +
                "]: analytic " + std::to_string(analytic) + " vs numeric " + std::to_string(numeric);
    }
  }
  return r;
}

// sum(out * weights) with fixed random weights: a scalar whose gradient
// reaches every output element with O(1) magnitude.
inline Var<double> random_projection(const Var<double>& out, std::uint64_t seed) {
  Rng rng(seed);
  return sum(out * Var<double>::constant(Tensor<double>::uniform(out.shape(), rng, -1.0, 1.0)));
}

}  // namespace dehaze
