#include "dehaze/optim.hpp"

#include <cmath>

#include "dehaze/error.hpp"

namespace dehaze {

OptimizerConfig OptimizerConfig::toy() { return scaled(500, kToyLearningRate); }

OptimizerConfig OptimizerConfig::full() {
  OptimizerConfig c;
  c.milestones = {3000, 5000, 8000};
  c.total_steps = 10000;
  return c;
}

OptimizerConfig OptimizerConfig::scaled(std::int64_t total_steps, double lr0) {
  if (total_steps < 1) throw ShapeError("optimizer: total_steps must be >= 1");
  OptimizerConfig c;
  c.lr0 = lr0;
  c.total_steps = total_steps;
  c.milestones.clear();
  for (int pct : {30, 50, 80}) {
    const std::int64_t m = (total_steps * pct + 50) / 100;
    if (m >= 1 && m < total_steps && (c.milestones.empty() || m > c.milestones.back())) {
      c.milestones.push_back(m);
    }
  }
  return c;
}

double OptimizerConfig::lr_at(std::int64_t step) const {
  double lr = lr0;
  for (std::int64_t m : milestones) {
    if (m <= step) lr *= decay;
  }
  return lr;
}

void OptimizerConfig::validate() const {
  if (!(lr0 > 0)) throw ShapeError("optimizer: lr0 must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
    throw ShapeError("optimizer: betas must lie in [0, 1)");
  }
  if (!(eps > 0)) throw ShapeError("optimizer: eps must be positive");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (i > 0 && milestones[i] <= milestones[i - 1]) {
      throw ShapeError("optimizer: milestones must be strictly increasing");
    }
    if (milestones[i] >= total_steps) {
      throw ShapeError("optimizer: milestone " + std::to_string(milestones[i]) +
                       " is not below total_steps " + std::to_string(total_steps));
    }
  }
}

template <typename T>
Adam<T>::Adam(const ParamRegistry<T>& reg, OptimizerConfig config)
    : config_(std::move(config)), params_(reg.params()) {
  config_.validate();
  for (const auto& p : params_) {
    state_.m.emplace_back(p.value().shape());
    state_.v.emplace_back(p.value().shape());
  }
}

template <typename T>
void Adam<T>::set_config(OptimizerConfig config) {
  config.validate();
  config_ = std::move(config);
}

template <typename T>
void Adam<T>::check_gradients() const {
  for (const auto& p : params_) {
    if (!p.var.has_grad()) continue;
    if (!p.var.grad().all_finite()) {
      throw NumericError("non-finite gradient in parameter '" + p.name + "'; step aborted");
    }
  }
}

template <typename T>
void Adam<T>::step() {
  check_gradients();
  const double lr = config_.lr_at(state_.step);
  const std::int64_t t = state_.step + 1;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Param<T>& p = params_[i];
    if (!p.var.has_grad()) continue;
    const Tensor<T>& g = p.var.grad();
    Tensor<T>& value = p.mutable_value();
    T* m = state_.m[i].raw();
    T* v = state_.v[i].raw();
    for (std::size_t k = 0; k < value.numel(); ++k) {
      const double gk = g.raw()[k];
      const double mk = b1 * m[k] + (1.0 - b1) * gk;
      const double vk = b2 * v[k] + (1.0 - b2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double update = lr * (mk / c1) / (std::sqrt(vk / c2) + config_.eps);
      value.raw()[k] = static_cast<T>(value.raw()[k] - update);
    }
  }
  state_.step = t;
}

template class Adam<float>;
template class Adam<double>;

}  // namespace dehaze
