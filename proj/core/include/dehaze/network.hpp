#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dehaze/layers.hpp"
#include "dehaze/spectral.hpp"
#include "dehaze/wavelet.hpp"

namespace dehaze {

// Ablation variants. The numbering follows the ablation table rows; row 5
// (a Res2Net prior branch) has no implementation here.
enum class Variant {
  dwt_only = 1,    // DWT down/up blocks, no FFC
  ffc_only = 2,    // strided-conv down, sub-pixel up, FFC bottleneck, no DWT
  dwt_ffc = 3,     // full frequency branch alone
  prior_only = 4,  // ConvNeXt encoder + attention decoder alone
  two_branch = 6,  // both branches + fusion
};

const char* to_string(Variant v);
Variant parse_variant(const std::string& s);

struct ModelConfig {
  std::string preset = "toy";
  Variant variant = Variant::two_branch;
  int scales = 3;
  std::vector<int> widths{16, 32, 64};
  int ffc_blocks = 3;
  double ffc_global_ratio = 0.5;
  int convnext_stages = 3;
  std::vector<int> convnext_widths{24, 48, 96};
  std::vector<int> convnext_depths{1, 1, 3};
  int stem_stride = 2;
  int branch2_out = 16;

  static ModelConfig toy();
  static ModelConfig full();
  static ModelConfig preset_named(const std::string& name);
  ModelConfig with_variant(Variant v) const;

  bool has_frequency_branch() const;
  bool has_prior_branch() const;
  bool uses_dwt() const;
  int effective_ffc_blocks() const;
  // Input height/width must be a multiple of this.
  int size_multiple() const;
  void validate() const;
};

// ---------------------------------------------------------------------------
// Building blocks

template <typename T>
class SpectralTransformLayer {
 public:
  SpectralTransformLayer() = default;
  SpectralTransformLayer(ParamRegistry<T>& reg, const std::string& name, int channels, Rng& rng);
  Var<T> operator()(const Var<T>& x) const;
  SpectralTransformParams<T> params() const;

 private:
  Conv2dLayer<T> conv_;
  BatchNormLayer<T> norm_;
};

// Local/global split convolution. The first C - floor(C * ratio) channels are
// local, the rest global.
//   local'  = relu(bn(conv_ll(local) + conv_gl(global)))
//   global' = relu(bn(conv_lg(local) + conv_gg(global) + spectral(global)))
template <typename T>
class FfcUnit {
 public:
  FfcUnit() = default;
  FfcUnit(ParamRegistry<T>& reg, const std::string& name, int channels, double global_ratio,
          Rng& rng);
  Var<T> operator()(const Var<T>& x) const;
  int local_channels() const { return local_; }
  int global_channels() const { return global_; }

 private:
  int local_ = 0;
  int global_ = 0;
  Conv2dLayer<T> ll_, lg_, gl_, gg_;
  SpectralTransformLayer<T> spectral_;
  BatchNormLayer<T> bn_local_, bn_global_;
};

// out = x + unit2(unit1(x))
template <typename T>
class FfcResidualBlock {
 public:
  FfcResidualBlock() = default;
  FfcResidualBlock(ParamRegistry<T>& reg, const std::string& name, int channels,
                   double global_ratio, Rng& rng);
  Var<T> operator()(const Var<T>& x) const;

 private:
  FfcUnit<T> unit1_, unit2_;
};

template <typename T>
struct DownResult {
  Var<T> features;
  // lh, hl, hh of the block input; empty when the block runs without DWT.
  std::optional<WaveletBands<T>> highs;
};

// Stride-2 conv path; with DWT, its output is concatenated with the ll band
// of the input and mixed back to `out_channels` by a 1x1 conv.
template <typename T>
class DwtDownBlock {
 public:
  DwtDownBlock() = default;
  DwtDownBlock(ParamRegistry<T>& reg, const std::string& name, int in_channels,
               int out_channels, bool use_dwt, Rng& rng);
  DownResult<T> operator()(const Var<T>& x) const;

  const Conv2dLayer<T>& conv() const { return conv_; }
  const Conv2dLayer<T>& mix() const { return mix_; }

 private:
  bool use_dwt_ = true;
  Conv2dLayer<T> conv_;
  Conv2dLayer<T> mix_;
};

// Doubles resolution. With DWT: a 1x1 projection supplies the ll band and the
// stashed high bands complete an idwt2. Without: 1x1 projection to 4x
// channels then pixel_shuffle. The encoder skip is concatenated and a 3x3
// conv mixes to `out_channels`.
template <typename T>
class DwtUpBlock {
 public:
  DwtUpBlock() = default;
  DwtUpBlock(ParamRegistry<T>& reg, const std::string& name, int in_channels,
             int band_channels, int skip_channels, int out_channels, bool use_dwt, Rng& rng);
  Var<T> operator()(const Var<T>& x, const std::optional<WaveletBands<T>>& highs,
                    const Var<T>& encoder_skip) const;

  const Conv2dLayer<T>& projection() const { return proj_; }
  const Conv2dLayer<T>& mix() const { return mix_; }

 private:
  bool use_dwt_ = true;
  int band_channels_ = 0;
  Conv2dLayer<T> proj_;
  Conv2dLayer<T> mix_;
};

// depthwise 7x7 -> layer norm -> 1x1 (x4) -> GELU -> 1x1 -> residual add
template <typename T>
class ConvNextBlock {
 public:
  ConvNextBlock() = default;
  ConvNextBlock(ParamRegistry<T>& reg, const std::string& name, int dim, Rng& rng);
  Var<T> operator()(const Var<T>& x) const;

 private:
  Conv2dLayer<T> dw_, expand_, project_;
  LayerNormLayer<T> norm_;
};

// First stage: conv(k = stride) -> layer norm. Later stages: layer norm ->
// 2x2 stride-2 conv. Then `depth` ConvNeXt blocks.
template <typename T>
class ConvNextStage {
 public:
  ConvNextStage() = default;
  ConvNextStage(ParamRegistry<T>& reg, const std::string& name, int in_channels,
                int out_channels, int depth, bool is_stem, int stem_stride, Rng& rng);
  Var<T> operator()(const Var<T>& x) const;
  int stride() const { return stride_; }

 private:
  bool is_stem_ = false;
  int stride_ = 2;
  Conv2dLayer<T> down_;
  LayerNormLayer<T> norm_;
  std::vector<ConvNextBlock<T>> blocks_;
};

// Channel attention followed by pixel attention.
template <typename T>
class AttentionBlock {
 public:
  AttentionBlock() = default;
  AttentionBlock(ParamRegistry<T>& reg, const std::string& name, int channels, Rng& rng);
  Var<T> operator()(const Var<T>& x) const;

 private:
  Conv2dLayer<T> ca_reduce_, ca_expand_, pa_reduce_, pa_out_;
};

// concat -> 3x3 conv to RGB -> tanh -> (x + 1) / 2
template <typename T>
class FusionHead {
 public:
  FusionHead() = default;
  FusionHead(ParamRegistry<T>& reg, const std::string& name, int in_channels, Rng& rng);
  Var<T> operator()(const std::vector<Var<T>>& branches) const;
  const Conv2dLayer<T>& conv() const { return conv_; }

 private:
  Conv2dLayer<T> conv_;
};

// ---------------------------------------------------------------------------
// Models

template <typename T>
class Generator {
 public:
  explicit Generator(ModelConfig config, std::uint64_t seed = 0);
  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;
  Generator(Generator&&) noexcept = default;
  Generator& operator=(Generator&&) noexcept = default;

  // hazy: [N, 3, H, W] with H, W multiples of config().size_multiple().
  Var<T> forward(const Var<T>& hazy) const;

  // Individual branch outputs, exposed for the ablation wiring tests.
  Var<T> frequency_branch(const Var<T>& hazy) const;
  Var<T> prior_branch(const Var<T>& hazy) const;

  const ModelConfig& config() const { return config_; }
  ParamRegistry<T>& registry() { return reg_; }
  const ParamRegistry<T>& registry() const { return reg_; }
  void set_training(bool on) { reg_.set_training(on); }

 private:
  struct DecoderLevel {
    AttentionBlock<T> attention;
    Conv2dLayer<T> conv;
    int skip_factor = 0;  // downsampling factor of the skip source; 0 = none
  };

  ModelConfig config_;
  ParamRegistry<T> reg_;
  std::vector<DwtDownBlock<T>> down_;
  std::vector<FfcResidualBlock<T>> ffc_;
  std::vector<DwtUpBlock<T>> up_;  // up_[i] restores the resolution of down_[i]'s input
  std::vector<ConvNextStage<T>> stages_;
  std::vector<DecoderLevel> decoder_;
  FusionHead<T> fusion_;
};

struct DiscriminatorConfig {
  std::vector<int> widths{16, 32, 64, 128};
  static DiscriminatorConfig for_preset(const std::string& preset);
};

// Four stride-2 conv + batch norm + leaky relu layers, then 1x1 conv and
// sigmoid: one real-probability per patch at 1/16 resolution.
template <typename T>
class Discriminator {
 public:
  explicit Discriminator(DiscriminatorConfig config, std::uint64_t seed = 0);
  Discriminator(const Discriminator&) = delete;
  Discriminator& operator=(const Discriminator&) = delete;
  Discriminator(Discriminator&&) noexcept = default;
  Discriminator& operator=(Discriminator&&) noexcept = default;

  Var<T> forward(const Var<T>& image) const;

  const DiscriminatorConfig& config() const { return config_; }
  ParamRegistry<T>& registry() { return reg_; }
  const ParamRegistry<T>& registry() const { return reg_; }
  void set_training(bool on) { reg_.set_training(on); }

 private:
  DiscriminatorConfig config_;
  ParamRegistry<T> reg_;
  std::vector<Conv2dLayer<T>> convs_;
  std::vector<BatchNormLayer<T>> norms_;
  Conv2dLayer<T> head_;
};

// Deterministic text tree of a model's parameters, grouped by name path.
template <typename T>
std::string describe_registry(const ParamRegistry<T>& reg);
std::string describe_models(const ModelConfig& config);

extern template class Generator<float>;
extern template class Generator<double>;
extern template class Discriminator<float>;
extern template class Discriminator<double>;

}  // namespace dehaze
