#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "dehaze/autograd.hpp"
#include "dehaze/ops.hpp"

namespace dehaze {

// total = l1 + alpha * msssim + beta * perceptual + gamma * adversarial
struct LossWeights {
  double alpha = 0.2;
  double beta = 0.01;
  double gamma = 0.0005;
  void validate() const;
};

// Canonical five-scale MS-SSIM exponents.
inline constexpr std::array<double, 5> kMsSsimWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
  std::vector<double> scale_weights{kMsSsimWeights.begin(), kMsSsimWeights.end()};

  // First `scales` canonical weights, renormalized to sum to 1.
  static SsimConfig with_scales(int scales);
  int scales() const { return static_cast<int>(scale_weights.size()); }
  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
  void validate() const;
};

// Normalized 1D Gaussian taps; the 2D window is their outer product.
std::vector<double> gaussian_taps(int size, double sigma);

// Largest S for which an image of this size supports S MS-SSIM scales.
int max_ms_ssim_scales(int height, int width, int window = 11);

template <typename T>
Var<T> smooth_l1(const Var<T>& pred, const Var<T>& target);

template <typename T>
struct SsimMaps {
  Var<T> l;   // luminance term per valid pixel
  Var<T> cs;  // contrast-structure term per valid pixel
};

// Gaussian-weighted statistics with "valid" filtering: maps are
// [N, C, H - window + 1, W - window + 1].
template <typename T>
SsimMaps<T> ssim_map(const Var<T>& a, const Var<T>& b, const SsimConfig& cfg = {});

// Mean SSIM over all pixels and channels.
template <typename T>
Var<T> ssim(const Var<T>& a, const Var<T>& b, const SsimConfig& cfg = {});

// 1 - mean over (n, c) of prod_{s<S} relu(mean cs_s)^w_s * relu(mean(l*cs)_S)^w_S,
// with 2x2 average pooling between scales.
template <typename T>
Var<T> ms_ssim_loss(const Var<T>& pred, const Var<T>& target, const SsimConfig& cfg);

// Frozen feature network exposing activations at fixed tap points. Weights are
// constants: no gradient ever reaches them.
template <typename T>
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::vector<Var<T>> features(const Var<T>& image) const = 0;
  virtual std::string name() const = 0;
};

// Pass-through stub: a single tap equal to the input.
template <typename T>
class IdentityFeatures final : public FeatureExtractor<T> {
 public:
  std::vector<Var<T>> features(const Var<T>& image) const override { return {image}; }
  std::string name() const override { return "identity"; }
};

// Three conv+relu layers (3->8, stride-2 8->16, stride-2 16->32) with
// He-uniform weights drawn from a fixed seed; taps after every layer.
template <typename T>
class RandomFeatureNet final : public FeatureExtractor<T> {
 public:
  explicit RandomFeatureNet(std::uint64_t seed = 0x5eed);
  std::vector<Var<T>> features(const Var<T>& image) const override;
  std::string name() const override { return "random3"; }

 private:
  struct Layer {
    Var<T> weight, bias;
    ConvSpec spec;
  };
  std::vector<Layer> layers_;
};

// VGG-16 layout up to relu3_3, taps at relu1_2, relu2_2, relu3_3. Weights are
// random until replaced through set_weight with converted values.
template <typename T>
class Vgg16Features final : public FeatureExtractor<T> {
 public:
  explicit Vgg16Features(std::uint64_t seed = 0);
  std::vector<Var<T>> features(const Var<T>& image) const override;
  std::string name() const override { return "vgg16"; }

  // "conv1_1.weight", "conv1_1.bias", ... "conv3_3.bias"
  std::vector<std::string> weight_names() const;
  void set_weight(const std::string& name, const Tensor<T>& value);

 private:
  struct Layer {
    std::string name;
    Var<T> weight, bias;
    bool pool_before = false;
    bool tap_after = false;
  };
  std::vector<Layer> layers_;
};

template <typename T>
std::unique_ptr<FeatureExtractor<T>> make_feature_extractor(const std::string& kind);

// Sum over taps of mean squared feature difference. Target features carry no
// gradient.
template <typename T>
Var<T> perceptual_loss(const Var<T>& pred, const Var<T>& target, const FeatureExtractor<T>& fx);

// Probabilities are clamped to [1e-7, 1 - 1e-7] before the logs.
template <typename T>
Var<T> generator_adversarial_loss(const Var<T>& d_fake_for_g);
template <typename T>
Var<T> discriminator_loss(const Var<T>& d_real, const Var<T>& d_fake_for_d);

template <typename T>
struct AdversarialLosses {
  Var<T> g_loss;
  Var<T> d_loss;
};

template <typename T>
AdversarialLosses<T> adversarial_losses(const Var<T>& d_real, const Var<T>& d_fake_for_d,
                                        const Var<T>& d_fake_for_g);

template <typename T>
struct LossTerms {
  Var<T> l1, msssim, perceptual, adversarial;
  Var<T> total;
};

// Weighted sum of already computed scalar terms; fills `total`.
template <typename T>
LossTerms<T> weighted_total(LossTerms<T> terms, const LossWeights& w);

template <typename T>
LossTerms<T> total_loss(const Var<T>& pred, const Var<T>& target, const FeatureExtractor<T>& fx,
                        const Var<T>& d_fake_for_g, const LossWeights& w, const SsimConfig& cfg);

// 10 log10(max^2 / mse); +infinity when the images are identical.
template <typename T>
double psnr(const Tensor<T>& pred, const Tensor<T>& target, double max_value = 1.0);

// Mean single-scale SSIM as a plain number.
template <typename T>
double ssim_value(const Tensor<T>& a, const Tensor<T>& b, const SsimConfig& cfg = {});

// "<name>\tPSNR=<v>\tSSIM=<v>" with four decimals; infinite PSNR prints "inf".
std::string metric_line(const std::string& name, double psnr_db, double ssim);

}  // namespace dehaze
