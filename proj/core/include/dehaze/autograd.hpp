#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dehaze/tensor.hpp"

namespace dehaze {

// Thread-local recording switch. Forward passes run under NoGradGuard build no
// graph, so intermediate tensors are released as soon as they go out of scope.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs' grads.
  std::function<void(Node&)> backward;

  Tensor<T>& grad_buffer() {
    if (!has_grad) {
      grad = Tensor<T>(value.shape());
      has_grad = true;
    }
    return grad;
  }
  void zero_grad() {
    grad = Tensor<T>(value.shape());
    has_grad = true;
  }
};

// Handle to a value in the autodiff graph. Copies share the node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value);
  static Var leaf(Tensor<T> value);

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Tensor<T>& grad() const { return node_->grad; }
  bool has_grad() const { return node_->has_grad; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Builds an op result. When recording is off or no input needs a gradient the
// node keeps no inputs and no closure.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward);

// Topologically ordered list of every node reachable from a root that takes
// part in differentiation. Inputs always precede their consumers.
template <typename T>
class Tape {
 public:
  static Tape build(const Var<T>& root);

  const std::vector<Node<T>*>& nodes() const { return nodes_; }
  bool is_topological() const;
  // Seeds d(root)/d(root) = 1 and sweeps in reverse order.
  void run_backward(const Var<T>& root) const;

 private:
  std::vector<Node<T>*> nodes_;
};

// Gradients of a scalar loss w.r.t. every leaf reachable from it. Leaf grads
// accumulate, so call ParamRegistry::zero_grad between steps.
template <typename T>
void backward(const Var<T>& loss);

template <typename T>
struct Param {
  std::string name;
  Var<T> var;

  const Tensor<T>& value() const { return var.value(); }
  Tensor<T>& mutable_value() const { return var.node()->value; }
  const Tensor<T>& grad() const { return var.node()->grad_buffer(); }
};

// Batch-norm running statistics plus the train/eval switch.
template <typename T>
struct NormState {
  explicit NormState(int channels)
      : running_mean(Shape{1, channels, 1, 1}, T(0)),
        running_var(Shape{1, channels, 1, 1}, T(1)) {}
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  bool training = true;
};

// Ordered collection of named parameters and normalization buffers of one
// model. Names are unique.
template <typename T>
class ParamRegistry {
 public:
  Param<T> add(const std::string& name, Tensor<T> init);
  std::shared_ptr<NormState<T>> add_norm_state(const std::string& name,
                                               int channels);

  const std::vector<Param<T>>& params() const { return params_; }
  const std::vector<std::pair<std::string, std::shared_ptr<NormState<T>>>>&
  norm_states() const {
    return norm_states_;
  }
  const Param<T>* find(const std::string& name) const;
  std::vector<std::string> names() const;
  std::size_t parameter_count() const;

  void zero_grad();
  void set_training(bool on);
  bool training() const { return training_; }

 private:
  std::vector<Param<T>> params_;
  std::vector<std::pair<std::string, std::shared_ptr<NormState<T>>>>
      norm_states_;
  bool training_ = true;
};

extern template class Var<float>;
extern template class Var<double>;
extern template class Tape<float>;
extern template class Tape<double>;
extern template class ParamRegistry<float>;
extern template class ParamRegistry<double>;

}  // namespace dehaze
