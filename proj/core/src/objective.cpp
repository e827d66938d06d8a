#include "dehaze/objective.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "dehaze/error.hpp"
#include "dehaze/rng.hpp"

namespace dehaze {

void LossWeights::validate() const {
  if (alpha < 0 || beta < 0 || gamma < 0) throw ShapeError("loss weights must be >= 0");
}

SsimConfig SsimConfig::with_scales(int scales) {
  if (scales < 1 || scales > static_cast<int>(kMsSsimWeights.size())) {
    throw ShapeError("ms-ssim scales must be in [1, 5], got " + std::to_string(scales));
  }
  SsimConfig c;
  c.scale_weights.assign(kMsSsimWeights.begin(), kMsSsimWeights.begin() + scales);
  const double total = std::accumulate(c.scale_weights.begin(), c.scale_weights.end(), 0.0);
  for (double& w : c.scale_weights) w /= total;
  return c;
}

void SsimConfig::validate() const {
  if (window < 1 || window % 2 == 0) throw ShapeError("ssim window must be odd and positive");
  if (sigma <= 0) throw ShapeError("ssim sigma must be positive");
  if (scale_weights.empty()) throw ShapeError("ssim needs at least one scale");
  for (double w : scale_weights) {
    if (w < 0) throw ShapeError("ssim scale weights must be >= 0");
  }
}

std::vector<double> gaussian_taps(int size, double sigma) {
  std::vector<double> g(size);
  const double c = (size - 1) / 2.0;
  double total = 0;
  for (int i = 0; i < size; ++i) {
    g[i] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
    total += g[i];
  }
  for (double& v : g) v /= total;
  return g;
}

int max_ms_ssim_scales(int height, int width, int window) {
  int s = 0;
  int m = std::min(height, width);
  while (m >= window) {
    ++s;
    m /= 2;
  }
  return s;
}

namespace {

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* what) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
  }
}

// Depthwise separable Gaussian blur without padding.
template <typename T>
Var<T> gaussian_filter(const Var<T>& x, const SsimConfig& cfg) {
  const int c = x.shape().c;
  const std::vector<double> taps = gaussian_taps(cfg.window, cfg.sigma);
  Tensor<T> row(Shape{c, 1, 1, cfg.window});
  Tensor<T> col(Shape{c, 1, cfg.window, 1});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < cfg.window; ++i) {
      row.at(ch, 0, 0, i) = static_cast<T>(taps[i]);
      col.at(ch, 0, i, 0) = static_cast<T>(taps[i]);
    }
  const ConvSpec depthwise{1, 0, c};
  const Var<T> h = conv2d(x, Var<T>::constant(std::move(row)), Var<T>(), depthwise);
  return conv2d(h, Var<T>::constant(std::move(col)), Var<T>(), depthwise);
}

}  // namespace

template <typename T>
Var<T> smooth_l1(const Var<T>& pred, const Var<T>& target) {
  require_same_shape(pred, target, "smooth_l1");
  const Var<T> d = pred - target;
  const Tensor<T>& dv = d.value();
  Tensor<T> out(Shape{});
  T acc = 0;
  for (T v : dv.data()) {
    const T a = std::abs(v);
    acc += a < T(1) ? T(0.5) * v * v : a - T(0.5);
  }
  const T n = static_cast<T>(dv.numel());
  out.raw()[0] = acc / n;
  return make_result<T>(std::move(out), {d}, [n](Node<T>& self) {
    const T g = self.grad.raw()[0] / n;
    const Tensor<T>& dv = self.inputs[0]->value;
    Tensor<T>& gd = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < dv.numel(); ++i) {
      const T v = dv.raw()[i];
      const T slope = std::abs(v) < T(1) ? v : (v > 0 ? T(1) : T(-1));
      gd.raw()[i] += g * slope;
    }
  });
}

template <typename T>
SsimMaps<T> ssim_map(const Var<T>& a, const Var<T>& b, const SsimConfig& cfg) {
  cfg.validate();
  require_same_shape(a, b, "ssim");
  const Shape s = a.shape();
  if (s.h < cfg.window || s.w < cfg.window) {
    throw ShapeError("ssim: image " + s.str() + " smaller than the " +
                     std::to_string(cfg.window) + "x" + std::to_string(cfg.window) + " window");
  }
  const T c1 = static_cast<T>(cfg.c1());
  const T c2 = static_cast<T>(cfg.c2());
  const Var<T> mu_a = gaussian_filter(a, cfg);
  const Var<T> mu_b = gaussian_filter(b, cfg);
  const Var<T> mu_aa = square(mu_a);
  const Var<T> mu_bb = square(mu_b);
  const Var<T> mu_ab = mu_a * mu_b;
  const Var<T> var_a = gaussian_filter(square(a), cfg) - mu_aa;
  const Var<T> var_b = gaussian_filter(square(b), cfg) - mu_bb;
  const Var<T> cov = gaussian_filter(a * b, cfg) - mu_ab;
  SsimMaps<T> m;
  m.l = div(add_scalar(scale(mu_ab, T(2)), c1), add_scalar(mu_aa + mu_bb, c1));
  m.cs = div(add_scalar(scale(cov, T(2)), c2), add_scalar(var_a + var_b, c2));
  return m;
}

template <typename T>
Var<T> ssim(const Var<T>& a, const Var<T>& b, const SsimConfig& cfg) {
  const SsimMaps<T> m = ssim_map(a, b, cfg);
  return mean(m.l * m.cs);
}

template <typename T>
Var<T> ms_ssim_loss(const Var<T>& pred, const Var<T>& target, const SsimConfig& cfg) {
  cfg.validate();
  require_same_shape(pred, target, "ms_ssim");
  const int scales = cfg.scales();
  const int available = max_ms_ssim_scales(pred.shape().h, pred.shape().w, cfg.window);
  if (available < scales) {
    throw ShapeError("ms_ssim: " + pred.shape().str() + " supports at most " +
                     std::to_string(available) + " scales, " + std::to_string(scales) +
                     " requested");
  }
  Var<T> a = pred, b = target;
  Var<T> product;
  for (int s = 0; s < scales; ++s) {
    const SsimMaps<T> m = ssim_map(a, b, cfg);
    const bool last = s == scales - 1;
    const Var<T> term = global_avg_pool(last ? m.l * m.cs : m.cs);
    const Var<T> factor = pow_positive(term, static_cast<T>(cfg.scale_weights[s]));
    product = product.defined() ? product * factor : factor;
    if (!last) {
      a = avg_pool2(a);
      b = avg_pool2(b);
    }
  }
  return add_scalar(scale(mean(product), T(-1)), T(1));
}

template <typename T>
RandomFeatureNet<T>::RandomFeatureNet(std::uint64_t seed) {
  Rng rng(seed);
  const int widths[4] = {3, 8, 16, 32};
  const int strides[3] = {1, 2, 2};
  for (int i = 0; i < 3; ++i) {
    const int fan_in = widths[i] * 9;
    const T bound = static_cast<T>(std::sqrt(6.0 / fan_in));
    Layer l;
    l.weight = Var<T>::constant(
        Tensor<T>::uniform(Shape{widths[i + 1], widths[i], 3, 3}, rng, -bound, bound));
    l.bias = Var<T>::constant(Tensor<T>(Shape{1, widths[i + 1], 1, 1}, T(0)));
    l.spec = ConvSpec{strides[i], 1, 1};
    layers_.push_back(std::move(l));
  }
}

template <typename T>
std::vector<Var<T>> RandomFeatureNet<T>::features(const Var<T>& image) const {
  std::vector<Var<T>> taps;
  Var<T> x = image;
  for (const auto& l : layers_) {
    x = activation(conv2d(x, l.weight, l.bias, l.spec), Activation::relu);
    taps.push_back(x);
  }
  return taps;
}

template <typename T>
Vgg16Features<T>::Vgg16Features(std::uint64_t seed) {
  Rng rng(seed);
  struct Def {
    const char* name;
    int in, out;
    bool pool_before, tap_after;
  };
  const Def defs[] = {{"conv1_1", 3, 64, false, false},    {"conv1_2", 64, 64, false, true},
                      {"conv2_1", 64, 128, true, false},   {"conv2_2", 128, 128, false, true},
                      {"conv3_1", 128, 256, true, false},  {"conv3_2", 256, 256, false, false},
                      {"conv3_3", 256, 256, false, true}};
  for (const Def& d : defs) {
    const T bound = static_cast<T>(std::sqrt(6.0 / (d.in * 9)));
    Layer l;
    l.name = d.name;
    l.weight = Var<T>::constant(Tensor<T>::uniform(Shape{d.out, d.in, 3, 3}, rng, -bound, bound));
    l.bias = Var<T>::constant(Tensor<T>(Shape{1, d.out, 1, 1}, T(0)));
    l.pool_before = d.pool_before;
    l.tap_after = d.tap_after;
    layers_.push_back(std::move(l));
  }
}

template <typename T>
std::vector<Var<T>> Vgg16Features<T>::features(const Var<T>& image) const {
  std::vector<Var<T>> taps;
  Var<T> x = image;
  for (const auto& l : layers_) {
    if (l.pool_before) x = max_pool2(x);
    x = activation(conv2d(x, l.weight, l.bias, ConvSpec{1, 1, 1}), Activation::relu);
    if (l.tap_after) taps.push_back(x);
  }
  return taps;
}

template <typename T>
std::vector<std::string> Vgg16Features<T>::weight_names() const {
  std::vector<std::string> names;
  for (const auto& l : layers_) {
    names.push_back(l.name + ".weight");
    names.push_back(l.name + ".bias");
  }
  return names;
}

template <typename T>
void Vgg16Features<T>::set_weight(const std::string& name, const Tensor<T>& value) {
  for (auto& l : layers_) {
    for (Var<T>* v : {&l.weight, &l.bias}) {
      const bool is_weight = v == &l.weight;
      if (name != l.name + (is_weight ? ".weight" : ".bias")) continue;
      if (value.numel() != v->value().numel()) {
        throw ShapeError("vgg16: " + name + " expects " + v->shape().str() + ", got " +
                         value.shape().str());
      }
      *v = Var<T>::constant(Tensor<T>(v->shape(), std::vector<T>(value.data().begin(), value.data().end())));
      return;
    }
  }
  throw ShapeError("vgg16: unknown weight '" + name + "'");
}

template <typename T>
std::unique_ptr<FeatureExtractor<T>> make_feature_extractor(const std::string& kind) {
  if (kind == "random3") return std::make_unique<RandomFeatureNet<T>>();
  if (kind == "identity") return std::make_unique<IdentityFeatures<T>>();
  if (kind == "vgg16") return std::make_unique<Vgg16Features<T>>();
  throw ShapeError("unknown feature extractor '" + kind + "' (expected random3, identity, vgg16)");
}

template <typename T>
Var<T> perceptual_loss(const Var<T>& pred, const Var<T>& target, const FeatureExtractor<T>& fx) {
  require_same_shape(pred, target, "perceptual_loss");
  std::vector<Var<T>> target_feats;
  {
    NoGradGuard guard;
    target_feats = fx.features(Var<T>::constant(target.value()));
  }
  const std::vector<Var<T>> pred_feats = fx.features(pred);
  Var<T> total;
  for (std::size_t j = 0; j < pred_feats.size(); ++j) {
    const Var<T> term = mean(square(pred_feats[j] - target_feats[j]));
    total = total.defined() ? total + term : term;
  }
  return total;
}

namespace {

template <typename T>
void require_probabilities(const Var<T>& p, const char* what) {
  for (T v : p.value().data()) {
    if (!(v >= T(0) && v <= T(1))) {
      throw NumericError(std::string("adversarial loss: ") + what +
                         " contains a value outside [0, 1]: " + std::to_string(v));
    }
  }
}

template <typename T>
constexpr T kProbEps = T(1e-7);

template <typename T>
Var<T> neg_log_mean(const Var<T>& p) {
  return scale(mean(log(clamp(p, kProbEps<T>, T(1) - kProbEps<T>))), T(-1));
}

}  // namespace

template <typename T>
Var<T> generator_adversarial_loss(const Var<T>& d_fake_for_g) {
  require_probabilities(d_fake_for_g, "d_fake_for_g");
  return neg_log_mean(d_fake_for_g);
}

template <typename T>
Var<T> discriminator_loss(const Var<T>& d_real, const Var<T>& d_fake_for_d) {
  require_probabilities(d_real, "d_real");
  require_probabilities(d_fake_for_d, "d_fake_for_d");
  const Var<T> one_minus_fake = add_scalar(scale(d_fake_for_d, T(-1)), T(1));
  return neg_log_mean(d_real) + neg_log_mean(one_minus_fake);
}

template <typename T>
AdversarialLosses<T> adversarial_losses(const Var<T>& d_real, const Var<T>& d_fake_for_d,
                                        const Var<T>& d_fake_for_g) {
  return {generator_adversarial_loss(d_fake_for_g), discriminator_loss(d_real, d_fake_for_d)};
}

template <typename T>
LossTerms<T> weighted_total(LossTerms<T> terms, const LossWeights& w) {
  w.validate();
  terms.total = terms.l1 + scale(terms.msssim, static_cast<T>(w.alpha)) +
                scale(terms.perceptual, static_cast<T>(w.beta)) +
                scale(terms.adversarial, static_cast<T>(w.gamma));
  return terms;
}

template <typename T>
LossTerms<T> total_loss(const Var<T>& pred, const Var<T>& target, const FeatureExtractor<T>& fx,
                        const Var<T>& d_fake_for_g, const LossWeights& w,
                        const SsimConfig& cfg) {
  LossTerms<T> t;
  t.l1 = smooth_l1(pred, target);
  t.msssim = ms_ssim_loss(pred, target, cfg);
  t.perceptual = perceptual_loss(pred, target, fx);
  t.adversarial = generator_adversarial_loss(d_fake_for_g);
  return weighted_total(std::move(t), w);
}

template <typename T>
double psnr(const Tensor<T>& pred, const Tensor<T>& target, double max_value) {
  if (!(pred.shape() == target.shape())) {
    throw ShapeError("psnr: shape mismatch " + pred.shape().str() + " vs " +
                     target.shape().str());
  }
  double acc = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = static_cast<double>(pred.raw()[i]) - static_cast<double>(target.raw()[i]);
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(pred.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_value * max_value / mse);
}

template <typename T>
double ssim_value(const Tensor<T>& a, const Tensor<T>& b, const SsimConfig& cfg) {
  NoGradGuard guard;
  return static_cast<double>(ssim(Var<T>::constant(a), Var<T>::constant(b), cfg).value().item());
}

std::string metric_line(const std::string& name, double psnr_db, double ssim) {
  char buf[96];
  if (std::isinf(psnr_db)) {
    std::snprintf(buf, sizeof buf, "\tPSNR=inf\tSSIM=%.4f", ssim);
  } else {
    std::snprintf(buf, sizeof buf, "\tPSNR=%.4f\tSSIM=%.4f", psnr_db, ssim);
  }
  return name + buf;
}

#define DEHAZE_INSTANTIATE_OBJECTIVE(T)                                                       \
  template Var<T> smooth_l1(const Var<T>&, const Var<T>&);                                    \
  template SsimMaps<T> ssim_map(const Var<T>&, const Var<T>&, const SsimConfig&);             \
  template Var<T> ssim(const Var<T>&, const Var<T>&, const SsimConfig&);                      \
  template Var<T> ms_ssim_loss(const Var<T>&, const Var<T>&, const SsimConfig&);              \
  template class RandomFeatureNet<T>;                                                         \
  template class Vgg16Features<T>;                                                            \
  template std::unique_ptr<FeatureExtractor<T>> make_feature_extractor(const std::string&);   \
  template Var<T> perceptual_loss(const Var<T>&, const Var<T>&, const FeatureExtractor<T>&);  \
  template Var<T> generator_adversarial_loss(const Var<T>&);                                  \
  template Var<T> discriminator_loss(const Var<T>&, const Var<T>&);                           \
  template AdversarialLosses<T> adversarial_losses(const Var<T>&, const Var<T>&,              \
                                                   const Var<T>&);                            \
  template LossTerms<T> weighted_total(LossTerms<T>, const LossWeights&);                     \
  template LossTerms<T> total_loss(const Var<T>&, const Var<T>&, const FeatureExtractor<T>&,  \
                                   const Var<T>&, const LossWeights&, const SsimConfig&);     \
  template double psnr(const Tensor<T>&, const Tensor<T>&, double);                           \
  template double ssim_value(const Tensor<T>&, const Tensor<T>&, const SsimConfig&);

DEHAZE_INSTANTIATE_OBJECTIVE(float)
DEHAZE_INSTANTIATE_OBJECTIVE(double)

}  // namespace dehaze
