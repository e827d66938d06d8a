#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dehaze/autograd.hpp"

namespace dehaze {

// Initial learning rate of the toy preset. A 500-step run needs a larger step
// than the 1e-4 used for full-length training to make visible progress.
inline constexpr double kToyLearningRate = 5e-4;

struct OptimizerConfig {
  double lr0 = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double decay = 0.5;
  std::vector<std::int64_t> milestones{150, 250, 400};
  std::int64_t total_steps = 500;

  // 500 steps from kToyLearningRate, milestones 150 / 250 / 400.
  static OptimizerConfig toy();
  // 3000 / 5000 / 8000 of 10000.
  static OptimizerConfig full();
  // Milestones at 30 %, 50 % and 80 % of `total_steps` (duplicates and
  // milestones that would not fall before the end are dropped).
  static OptimizerConfig scaled(std::int64_t total_steps, double lr0 = 1e-4);
  // lr0 * decay^(number of milestones <= step); `step` counts completed updates.
  double lr_at(std::int64_t step) const;
  void validate() const;
};

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::int64_t step = 0;
};

// Adam with bias correction over a fixed parameter list. Holds the parameter
// handles, not the registry, so the owning model may be moved.
template <typename T>
class Adam {
 public:
  Adam(const ParamRegistry<T>& reg, OptimizerConfig config);

  // Applies one update from the accumulated gradients. Any non-finite
  // gradient aborts the whole step before touching a parameter and raises
  // NumericError naming the parameter.
  void step();
  // The validation half of step(), for callers that must check several
  // optimizers before any of them updates.
  void check_gradients() const;

  double current_lr() const { return config_.lr_at(state_.step); }
  const OptimizerConfig& config() const { return config_; }
  void set_config(OptimizerConfig config);
  AdamState<T>& state() { return state_; }
  const AdamState<T>& state() const { return state_; }
  const std::vector<Param<T>>& params() const { return params_; }

 private:
  OptimizerConfig config_;
  std::vector<Param<T>> params_;
  AdamState<T> state_;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace dehaze
