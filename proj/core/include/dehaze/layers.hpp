#pragma once

#include <memory>
#include <string>

#include "dehaze/autograd.hpp"
#include "dehaze/ops.hpp"
#include "dehaze/rng.hpp"

namespace dehaze {

// Learned convolution. Weights start uniform in +-1/sqrt(fan_in).
template <typename T>
class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  Conv2dLayer(ParamRegistry<T>& reg, const std::string& name, int in_channels,
              int out_channels, int kernel, ConvSpec spec, bool with_bias, Rng& rng);

  Var<T> operator()(const Var<T>& x) const;

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  const Param<T>& weight() const { return weight_; }
  const Param<T>& bias() const { return bias_; }
  bool has_bias() const { return bias_.var.defined(); }

 private:
  int in_ = 0;
  int out_ = 0;
  ConvSpec spec_;
  Param<T> weight_;
  Param<T> bias_;
};

template <typename T>
class BatchNormLayer {
 public:
  BatchNormLayer() = default;
  BatchNormLayer(ParamRegistry<T>& reg, const std::string& name, int channels);

  Var<T> operator()(const Var<T>& x) const;

  const Param<T>& gain() const { return gain_; }
  const Param<T>& bias() const { return bias_; }
  NormState<T>* state() const { return state_.get(); }

 private:
  Param<T> gain_;
  Param<T> bias_;
  std::shared_ptr<NormState<T>> state_;
};

// Normalizes over channels at every spatial position.
template <typename T>
class LayerNormLayer {
 public:
  LayerNormLayer() = default;
  LayerNormLayer(ParamRegistry<T>& reg, const std::string& name, int channels);

  Var<T> operator()(const Var<T>& x) const;

 private:
  Param<T> gain_;
  Param<T> bias_;
};

extern template class Conv2dLayer<float>;
extern template class Conv2dLayer<double>;
extern template class BatchNormLayer<float>;
extern template class BatchNormLayer<double>;
extern template class LayerNormLayer<float>;
extern template class LayerNormLayer<double>;

}  // namespace dehaze
