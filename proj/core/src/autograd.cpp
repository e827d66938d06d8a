#include "dehaze/autograd.hpp"

#include <cassert>
#include <unordered_map>
#include <unordered_set>

namespace dehaze {

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

template <typename T>
Var<T> Var<T>::constant(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  return Var<T>(std::move(node));
}

template <typename T>
Var<T> Var<T>::leaf(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var<T>(std::move(node));
}

template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (GradMode::enabled()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (auto& in : inputs) node->inputs.push_back(in.node());
      node->backward = std::move(backward);
    }
  }
  return Var<T>(std::move(node));
}

template <typename T>
Tape<T> Tape<T>::build(const Var<T>& root) {
  Tape<T> tape;
  if (!root.requires_grad()) return tape;
  // Iterative post-order DFS.
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child && child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      tape.nodes_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

template <typename T>
bool Tape<T>::is_topological() const {
  std::unordered_map<const Node<T>*, std::size_t> pos;
  for (std::size_t i = 0; i < nodes_.size(); ++i) pos[nodes_[i]] = i;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    for (const auto& in : nodes_[i]->inputs) {
      if (!in->requires_grad) continue;
      auto it = pos.find(in.get());
      if (it == pos.end() || it->second >= i) return false;
    }
  }
  return true;
}

template <typename T>
void Tape<T>::run_backward(const Var<T>& root) const {
  if (nodes_.empty()) return;
  root.node()->grad_buffer().data()[0] += T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && node->has_grad) node->backward(*node);
  }
}

template <typename T>
void backward(const Var<T>& loss) {
  if (!loss.defined() || loss.value().numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     (loss.defined() ? loss.shape().str() : std::string("<undefined>")));
  }
  const Tape<T> tape = Tape<T>::build(loss);
  assert(tape.is_topological());
  // Intermediate grads are scratch; clear them so repeated backward calls on
  // overlapping graphs only accumulate into leaves.
  for (Node<T>* n : tape.nodes()) {
    if (n->backward) {
      n->has_grad = false;
      n->grad = Tensor<T>();
    }
  }
  tape.run_backward(loss);
}

template <typename T>
Param<T> ParamRegistry<T>::add(const std::string& name, Tensor<T> init) {
  if (find(name) != nullptr) {
    throw ShapeError("duplicate parameter name '" + name + "'");
  }
  Param<T> p{name, Var<T>::leaf(std::move(init))};
  p.var.node()->zero_grad();
  params_.push_back(p);
  return p;
}

template <typename T>
std::shared_ptr<NormState<T>> ParamRegistry<T>::add_norm_state(
    const std::string& name, int channels) {
  for (const auto& [n, s] : norm_states_) {
    if (n == name) throw ShapeError("duplicate norm state '" + name + "'");
  }
  auto state = std::make_shared<NormState<T>>(channels);
  state->training = training_;
  norm_states_.emplace_back(name, state);
  return state;
}

template <typename T>
const Param<T>* ParamRegistry<T>::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

template <typename T>
std::vector<std::string> ParamRegistry<T>::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.name);
  return out;
}

template <typename T>
std::size_t ParamRegistry<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.value().numel();
  return total;
}

template <typename T>
void ParamRegistry<T>::zero_grad() {
  for (auto& p : params_) p.var.node()->zero_grad();
}

template <typename T>
void ParamRegistry<T>::set_training(bool on) {
  training_ = on;
  for (auto& [name, s] : norm_states_) s->training = on;
}

template class Var<float>;
template class Var<double>;
template class Tape<float>;
template class Tape<double>;
template class ParamRegistry<float>;
template class ParamRegistry<double>;
template Var<float> make_result(Tensor<float>, std::vector<Var<float>>,
                                std::function<void(Node<float>&)>);
template Var<double> make_result(Tensor<double>, std::vector<Var<double>>,
                                 std::function<void(Node<double>&)>);
template void backward(const Var<float>&);
template void backward(const Var<double>&);

}  // namespace dehaze
