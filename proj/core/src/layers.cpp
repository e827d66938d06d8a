#include "dehaze/layers.hpp"

#include <cmath>

namespace dehaze {

template <typename T>
Conv2dLayer<T>::Conv2dLayer(ParamRegistry<T>& reg, const std::string& name,
                            int in_channels, int out_channels, int kernel,
                            ConvSpec spec, bool with_bias, Rng& rng)
    : in_(in_channels), out_(out_channels), spec_(spec) {
  if (in_channels % spec.groups != 0 || out_channels % spec.groups != 0) {
    throw ShapeError(name + ": channels not divisible by groups");
  }
  const int fan_in = (in_channels / spec.groups) * kernel * kernel;
  const T bound = T(1) / std::sqrt(static_cast<T>(fan_in));
  weight_ = reg.add(name + ".weight",
                    Tensor<T>::uniform(Shape{out_channels, in_channels / spec.groups, kernel, kernel},
                                       rng, -bound, bound));
  if (with_bias) {
    bias_ = reg.add(name + ".bias",
                    Tensor<T>::uniform(Shape{1, out_channels, 1, 1}, rng, -bound, bound));
  }
}

template <typename T>
Var<T> Conv2dLayer<T>::operator()(const Var<T>& x) const {
  return conv2d(x, weight_.var, bias_.var, spec_);
}

template <typename T>
BatchNormLayer<T>::BatchNormLayer(ParamRegistry<T>& reg, const std::string& name,
                                  int channels) {
  gain_ = reg.add(name + ".gain", Tensor<T>(Shape{1, channels, 1, 1}, T(1)));
  bias_ = reg.add(name + ".bias", Tensor<T>(Shape{1, channels, 1, 1}, T(0)));
  state_ = reg.add_norm_state(name, channels);
}

template <typename T>
Var<T> BatchNormLayer<T>::operator()(const Var<T>& x) const {
  return normalize(x, NormKind::batch, gain_.var, bias_.var, T(1e-5), state_.get());
}

template <typename T>
LayerNormLayer<T>::LayerNormLayer(ParamRegistry<T>& reg, const std::string& name,
                                  int channels) {
  gain_ = reg.add(name + ".gain", Tensor<T>(Shape{1, channels, 1, 1}, T(1)));
  bias_ = reg.add(name + ".bias", Tensor<T>(Shape{1, channels, 1, 1}, T(0)));
}

template <typename T>
Var<T> LayerNormLayer<T>::operator()(const Var<T>& x) const {
  return normalize<T>(x, NormKind::layer, gain_.var, bias_.var, T(1e-6), nullptr);
}

template class Conv2dLayer<float>;
template class Conv2dLayer<double>;
template class BatchNormLayer<float>;
template class BatchNormLayer<double>;
template class LayerNormLayer<float>;
template class LayerNormLayer<double>;

}  // namespace dehaze
