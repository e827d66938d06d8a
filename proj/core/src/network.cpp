#include "dehaze/network.hpp"

#include <algorithm>
#include <map>
#include <sstream>

namespace dehaze {

const char* to_string(Variant v) {
  switch (v) {
    case Variant::dwt_only: return "dwt-only";
    case Variant::ffc_only: return "ffc-only";
    case Variant::dwt_ffc: return "dwt-ffc";
    case Variant::prior_only: return "prior-only";
    case Variant::two_branch: return "two-branch";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  if (s == "1" || s == "dwt-only") return Variant::dwt_only;
  if (s == "2" || s == "ffc-only") return Variant::ffc_only;
  if (s == "3" || s == "dwt-ffc") return Variant::dwt_ffc;
  if (s == "4" || s == "prior-only") return Variant::prior_only;
  if (s == "6" || s == "two-branch") return Variant::two_branch;
  if (s == "5") {
    throw ShapeError("variant 5 (frequency branch + Res2Net prior branch) is not implemented");
  }
  throw ShapeError("unknown variant '" + s +
                   "' (expected dwt-only, ffc-only, dwt-ffc, prior-only, two-branch or 1-4, 6)");
}

ModelConfig ModelConfig::toy() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.preset = "full";
  c.widths = {64, 128, 256};
  c.convnext_widths = {96, 192, 384};
  c.convnext_depths = {3, 3, 9};
  c.stem_stride = 4;
  c.branch2_out = 64;
  return c;
}

ModelConfig ModelConfig::preset_named(const std::string& name) {
  if (name == "toy") return toy();
  if (name == "full") return full();
  throw ShapeError("unknown preset '" + name + "' (expected toy or full)");
}

ModelConfig ModelConfig::with_variant(Variant v) const {
  ModelConfig c = *this;
  c.variant = v;
  return c;
}

bool ModelConfig::has_frequency_branch() const { return variant != Variant::prior_only; }
bool ModelConfig::has_prior_branch() const {
  return variant == Variant::prior_only || variant == Variant::two_branch;
}
bool ModelConfig::uses_dwt() const { return variant != Variant::ffc_only; }
int ModelConfig::effective_ffc_blocks() const {
  return variant == Variant::dwt_only ? 0 : ffc_blocks;
}

int ModelConfig::size_multiple() const {
  int m = 1;
  if (has_frequency_branch()) m = std::max(m, 1 << scales);
  if (has_prior_branch()) m = std::max(m, stem_stride << (convnext_stages - 1));
  return m;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ShapeError("model config: " + msg); };
  if (scales < 1) fail("scales must be >= 1");
  if (static_cast<int>(widths.size()) != scales) fail("widths must list one width per scale");
  for (std::size_t i = 1; i < widths.size(); ++i) {
    if (widths[i] <= widths[i - 1]) fail("widths must be strictly increasing");
  }
  if (widths.front() < 1) fail("widths must be positive");
  if (ffc_blocks < 0) fail("ffc_blocks must be >= 0");
  if (!(ffc_global_ratio > 0.0 && ffc_global_ratio < 1.0)) fail("ffc_global_ratio must be in (0, 1)");
  const int bottleneck = widths.back();
  const int global = static_cast<int>(bottleneck * ffc_global_ratio);
  if (global < 1 || global >= bottleneck) fail("ffc_global_ratio leaves an empty local or global half");
  if (convnext_stages < 1) fail("convnext_stages must be >= 1");
  if (static_cast<int>(convnext_widths.size()) != convnext_stages ||
      static_cast<int>(convnext_depths.size()) != convnext_stages) {
    fail("convnext_widths/depths must list one entry per stage");
  }
  if (stem_stride < 2 || (stem_stride & (stem_stride - 1)) != 0) fail("stem_stride must be a power of two >= 2");
  if (branch2_out < 1) fail("branch2_out must be positive");
  for (int w : convnext_widths) {
    if (w % 4 != 0) fail("convnext widths must be divisible by 4 (pixel shuffle)");
  }
}

// ---------------------------------------------------------------------------

template <typename T>
SpectralTransformLayer<T>::SpectralTransformLayer(ParamRegistry<T>& reg, const std::string& name,
                                                  int channels, Rng& rng)
    : conv_(reg, name + ".freq_conv", 2 * channels, 2 * channels, 1, {}, false, rng),
      norm_(reg, name + ".freq_norm", 2 * channels) {}

template <typename T>
SpectralTransformParams<T> SpectralTransformLayer<T>::params() const {
  SpectralTransformParams<T> p;
  p.weight = conv_.weight().var;
  p.bias = conv_.bias().var;
  p.norm_gain = norm_.gain().var;
  p.norm_bias = norm_.bias().var;
  p.norm_state = norm_.state();
  return p;
}

template <typename T>
Var<T> SpectralTransformLayer<T>::operator()(const Var<T>& x) const {
  return spectral_transform(x, params());
}

template <typename T>
FfcUnit<T>::FfcUnit(ParamRegistry<T>& reg, const std::string& name, int channels,
                    double global_ratio, Rng& rng) {
  if (!(global_ratio > 0.0 && global_ratio < 1.0)) {
    throw ShapeError(name + ": global ratio must lie in (0, 1)");
  }
  global_ = static_cast<int>(channels * global_ratio);
  local_ = channels - global_;
  if (global_ < 1 || local_ < 1) {
    throw ShapeError(name + ": ratio leaves an empty local or global half for " +
                     std::to_string(channels) + " channels");
  }
  const ConvSpec same{1, 1, 1};
  ll_ = Conv2dLayer<T>(reg, name + ".local_to_local", local_, local_, 3, same, false, rng);
  gl_ = Conv2dLayer<T>(reg, name + ".global_to_local", global_, local_, 3, same, false, rng);
  lg_ = Conv2dLayer<T>(reg, name + ".local_to_global", local_, global_, 3, same, false, rng);
  gg_ = Conv2dLayer<T>(reg, name + ".global_to_global", global_, global_, 3, same, false, rng);
  spectral_ = SpectralTransformLayer<T>(reg, name + ".spectral", global_, rng);
  bn_local_ = BatchNormLayer<T>(reg, name + ".norm_local", local_);
  bn_global_ = BatchNormLayer<T>(reg, name + ".norm_global", global_);
}

template <typename T>
Var<T> FfcUnit<T>::operator()(const Var<T>& x) const {
  if (x.shape().c != local_ + global_) {
    throw ShapeError("ffc unit expects " + std::to_string(local_ + global_) +
                     " channels, got " + x.shape().str());
  }
  const Var<T> xl = slice_channels(x, 0, local_);
  const Var<T> xg = slice_channels(x, local_, local_ + global_);
  Var<T> yl = ll_(xl) + gl_(xg);
  Var<T> yg = lg_(xl) + gg_(xg) + spectral_(xg);
  yl = activation(bn_local_(yl), Activation::relu);
  yg = activation(bn_global_(yg), Activation::relu);
  return concat_channels(yl, yg);
}

template <typename T>
FfcResidualBlock<T>::FfcResidualBlock(ParamRegistry<T>& reg, const std::string& name,
                                      int channels, double global_ratio, Rng& rng)
    : unit1_(reg, name + ".unit1", channels, global_ratio, rng),
      unit2_(reg, name + ".unit2", channels, global_ratio, rng) {}

template <typename T>
Var<T> FfcResidualBlock<T>::operator()(const Var<T>& x) const {
  return x + unit2_(unit1_(x));
}

template <typename T>
DwtDownBlock<T>::DwtDownBlock(ParamRegistry<T>& reg, const std::string& name, int in_channels,
                              int out_channels, bool use_dwt, Rng& rng)
    : use_dwt_(use_dwt),
      conv_(reg, name + ".conv", in_channels, out_channels, 3, ConvSpec{2, 1, 1}, true, rng) {
  if (use_dwt_) {
    mix_ = Conv2dLayer<T>(reg, name + ".mix", out_channels + in_channels, out_channels, 1, {},
                          true, rng);
  }
}

template <typename T>
DownResult<T> DwtDownBlock<T>::operator()(const Var<T>& x) const {
  const Shape s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeError("dwt down block needs even spatial dims, got " + s.str());
  }
  Var<T> features = activation(conv_(x), Activation::relu);
  if (!use_dwt_) return DownResult<T>{features, std::nullopt};
  WaveletBands<T> bands = dwt2(x);
  features = activation(mix_(concat_channels(features, bands.ll)), Activation::relu);
  return DownResult<T>{features, std::move(bands)};
}

template <typename T>
DwtUpBlock<T>::DwtUpBlock(ParamRegistry<T>& reg, const std::string& name, int in_channels,
                          int band_channels, int skip_channels, int out_channels, bool use_dwt,
                          Rng& rng)
    : use_dwt_(use_dwt), band_channels_(band_channels) {
  if (use_dwt_) {
    proj_ = Conv2dLayer<T>(reg, name + ".wavelet_proj", in_channels, band_channels, 1, {}, true,
                           rng);
  } else {
    proj_ = Conv2dLayer<T>(reg, name + ".shuffle_proj", in_channels, 4 * band_channels, 1, {},
                           true, rng);
  }
  mix_ = Conv2dLayer<T>(reg, name + ".mix", band_channels + skip_channels, out_channels, 3,
                        ConvSpec{1, 1, 1}, true, rng);
}

template <typename T>
Var<T> DwtUpBlock<T>::operator()(const Var<T>& x, const std::optional<WaveletBands<T>>& highs,
                                 const Var<T>& encoder_skip) const {
  Var<T> up;
  if (use_dwt_) {
    if (!highs) throw ShapeError("dwt up block: missing high-frequency bands");
    const Shape hs = highs->lh.shape();
    if (hs.h != x.shape().h || hs.w != x.shape().w || hs.c != band_channels_) {
      throw ShapeError("dwt up block: high bands " + hs.str() + " do not match features " +
                       x.shape().str());
    }
    up = idwt2(WaveletBands<T>{proj_(x), highs->lh, highs->hl, highs->hh});
  } else {
    up = pixel_shuffle(proj_(x), 2);
  }
  const Shape ss = encoder_skip.shape();
  if (ss.h != up.shape().h || ss.w != up.shape().w || ss.n != up.shape().n) {
    throw ShapeError("dwt up block: encoder skip " + ss.str() + " does not match upsampled " +
                     up.shape().str());
  }
  return activation(mix_(concat_channels(up, encoder_skip)), Activation::relu);
}

template <typename T>
ConvNextBlock<T>::ConvNextBlock(ParamRegistry<T>& reg, const std::string& name, int dim, Rng& rng)
    : dw_(reg, name + ".dwconv", dim, dim, 7, ConvSpec{1, 3, dim}, true, rng),
      expand_(reg, name + ".pwconv1", dim, 4 * dim, 1, {}, true, rng),
      project_(reg, name + ".pwconv2", 4 * dim, dim, 1, {}, true, rng),
      norm_(reg, name + ".norm", dim) {}

template <typename T>
Var<T> ConvNextBlock<T>::operator()(const Var<T>& x) const {
  Var<T> y = norm_(dw_(x));
  y = project_(activation(expand_(y), Activation::gelu));
  return x + y;
}

template <typename T>
ConvNextStage<T>::ConvNextStage(ParamRegistry<T>& reg, const std::string& name, int in_channels,
                                int out_channels, int depth, bool is_stem, int stem_stride,
                                Rng& rng)
    : is_stem_(is_stem), stride_(is_stem ? stem_stride : 2) {
  if (is_stem_) {
    down_ = Conv2dLayer<T>(reg, name + ".stem", in_channels, out_channels, stride_,
                           ConvSpec{stride_, 0, 1}, true, rng);
    norm_ = LayerNormLayer<T>(reg, name + ".stem_norm", out_channels);
  } else {
    norm_ = LayerNormLayer<T>(reg, name + ".down_norm", in_channels);
    down_ = Conv2dLayer<T>(reg, name + ".down", in_channels, out_channels, 2, ConvSpec{2, 0, 1},
                           true, rng);
  }
  for (int b = 0; b < depth; ++b) {
    blocks_.emplace_back(reg, name + ".block" + std::to_string(b), out_channels, rng);
  }
}

template <typename T>
Var<T> ConvNextStage<T>::operator()(const Var<T>& x) const {
  Var<T> y = is_stem_ ? norm_(down_(x)) : down_(norm_(x));
  for (const auto& b : blocks_) y = b(y);
  return y;
}

template <typename T>
AttentionBlock<T>::AttentionBlock(ParamRegistry<T>& reg, const std::string& name, int channels,
                                  Rng& rng) {
  const int r = std::max(1, channels / 8);
  ca_reduce_ = Conv2dLayer<T>(reg, name + ".ca_reduce", channels, r, 1, {}, true, rng);
  ca_expand_ = Conv2dLayer<T>(reg, name + ".ca_expand", r, channels, 1, {}, true, rng);
  pa_reduce_ = Conv2dLayer<T>(reg, name + ".pa_reduce", channels, r, 1, {}, true, rng);
  pa_out_ = Conv2dLayer<T>(reg, name + ".pa_out", r, 1, 1, {}, true, rng);
}

template <typename T>
Var<T> AttentionBlock<T>::operator()(const Var<T>& x) const {
  const Var<T> channel_gate = activation(
      ca_expand_(activation(ca_reduce_(global_avg_pool(x)), Activation::relu)),
      Activation::sigmoid);
  const Var<T> y = x * channel_gate;
  const Var<T> pixel_gate =
      activation(pa_out_(activation(pa_reduce_(y), Activation::relu)), Activation::sigmoid);
  return y * pixel_gate;
}

template <typename T>
FusionHead<T>::FusionHead(ParamRegistry<T>& reg, const std::string& name, int in_channels,
                          Rng& rng)
    : conv_(reg, name + ".conv", in_channels, 3, 3, ConvSpec{1, 1, 1}, true, rng) {}

template <typename T>
Var<T> FusionHead<T>::operator()(const std::vector<Var<T>>& branches) const {
  if (branches.empty()) throw ShapeError("fusion head: no branch outputs");
  const Var<T> merged = branches.size() == 1 ? branches.front() : concat_channels(branches);
  const Var<T> y = activation(conv_(merged), Activation::tanh);
  return add_scalar(scale(y, T(0.5)), T(0.5));
}

// ---------------------------------------------------------------------------

template <typename T>
Generator<T>::Generator(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  int fused_channels = 0;
  if (config_.has_frequency_branch()) {
    const int scales = config_.scales;
    const bool dwt = config_.uses_dwt();
    std::vector<int> in_ch(scales);
    in_ch[0] = 3;
    for (int i = 1; i < scales; ++i) in_ch[i] = config_.widths[i - 1];
    for (int i = 0; i < scales; ++i) {
      down_.emplace_back(reg_, "branch1.down" + std::to_string(i), in_ch[i], config_.widths[i],
                         dwt, rng);
    }
    for (int b = 0; b < config_.effective_ffc_blocks(); ++b) {
      ffc_.emplace_back(reg_, "branch1.ffc" + std::to_string(b), config_.widths.back(),
                        config_.ffc_global_ratio, rng);
    }
    up_.resize(scales);
    for (int i = scales - 1; i >= 0; --i) {
      const int out = i > 0 ? config_.widths[i - 1] : config_.widths[0];
      up_[i] = DwtUpBlock<T>(reg_, "branch1.up" + std::to_string(i), config_.widths[i], in_ch[i],
                             in_ch[i], out, dwt, rng);
    }
    fused_channels += config_.widths[0];
  }
  if (config_.has_prior_branch()) {
    std::map<int, int> channels_at{{1, 3}};
    int factor = 1;
    for (int s = 0; s < config_.convnext_stages; ++s) {
      const int in = s == 0 ? 3 : config_.convnext_widths[s - 1];
      stages_.emplace_back(reg_, "branch2.stage" + std::to_string(s), in,
                           config_.convnext_widths[s], config_.convnext_depths[s], s == 0,
                           config_.stem_stride, rng);
      factor *= stages_.back().stride();
      channels_at[factor] = config_.convnext_widths[s];
    }
    int current = config_.convnext_widths.back();
    int level = 0;
    while (factor > 1) {
      factor /= 2;
      const int shuffled = current / 4;
      auto it = channels_at.find(factor);
      const int skip = it != channels_at.end() ? it->second : 0;
      int out;
      if (factor == 1) {
        out = config_.branch2_out;
      } else if (skip > 0) {
        out = skip;
      } else {
        out = std::max(4, current / 2);
      }
      const std::string name = "branch2.dec" + std::to_string(level++);
      DecoderLevel d;
      d.attention = AttentionBlock<T>(reg_, name + ".attention", shuffled + skip, rng);
      d.conv = Conv2dLayer<T>(reg_, name + ".conv", shuffled + skip, out, 3, ConvSpec{1, 1, 1},
                              true, rng);
      d.skip_factor = skip > 0 ? factor : 0;
      decoder_.push_back(std::move(d));
      current = out;
      if (factor > 1 && current % 4 != 0) {
        throw ShapeError("model config: decoder width " + std::to_string(current) +
                         " not divisible by 4");
      }
    }
    fused_channels += config_.branch2_out;
  }
  fusion_ = FusionHead<T>(reg_, "fusion", fused_channels, rng);
}

template <typename T>
Var<T> Generator<T>::frequency_branch(const Var<T>& hazy) const {
  std::vector<Var<T>> encoded;
  std::vector<std::optional<WaveletBands<T>>> highs;
  Var<T> cur = hazy;
  for (const auto& d : down_) {
    DownResult<T> r = d(cur);
    encoded.push_back(r.features);
    highs.push_back(std::move(r.highs));
    cur = r.features;
  }
  for (const auto& b : ffc_) cur = b(cur);
  for (int i = static_cast<int>(up_.size()) - 1; i >= 0; --i) {
    const Var<T>& skip = i > 0 ? encoded[i - 1] : hazy;
    cur = up_[i](cur, highs[i], skip);
  }
  return cur;
}

template <typename T>
Var<T> Generator<T>::prior_branch(const Var<T>& hazy) const {
  std::map<int, Var<T>> features{{1, hazy}};
  Var<T> cur = hazy;
  int factor = 1;
  for (const auto& s : stages_) {
    cur = s(cur);
    factor *= s.stride();
    features[factor] = cur;
  }
  for (const auto& level : decoder_) {
    cur = pixel_shuffle(cur, 2);
    if (level.skip_factor > 0) cur = concat_channels(cur, features.at(level.skip_factor));
    cur = level.attention(cur);
    cur = activation(level.conv(cur), Activation::relu);
  }
  return cur;
}

template <typename T>
Var<T> Generator<T>::forward(const Var<T>& hazy) const {
  const Shape s = hazy.shape();
  const int m = config_.size_multiple();
  if (s.c != 3) throw ShapeError("generator expects 3 input channels, got " + s.str());
  if (s.h % m != 0 || s.w % m != 0) {
    throw ShapeError("generator input " + s.str() + " must have H and W divisible by " +
                     std::to_string(m) + "; pad before calling");
  }
  std::vector<Var<T>> outs;
  if (config_.has_frequency_branch()) outs.push_back(frequency_branch(hazy));
  if (config_.has_prior_branch()) outs.push_back(prior_branch(hazy));
  return fusion_(outs);
}

DiscriminatorConfig DiscriminatorConfig::for_preset(const std::string& preset) {
  DiscriminatorConfig c;
  if (preset == "full") c.widths = {64, 128, 256, 512};
  return c;
}

template <typename T>
Discriminator<T>::Discriminator(DiscriminatorConfig config, std::uint64_t seed)
    : config_(std::move(config)) {
  if (config_.widths.size() != 4) throw ShapeError("discriminator needs exactly 4 widths");
  Rng rng(seed);
  int in = 3;
  for (std::size_t i = 0; i < config_.widths.size(); ++i) {
    const std::string name = "layer" + std::to_string(i);
    convs_.emplace_back(reg_, name + ".conv", in, config_.widths[i], 4, ConvSpec{2, 1, 1}, false,
                        rng);
    norms_.emplace_back(reg_, name + ".norm", config_.widths[i]);
    in = config_.widths[i];
  }
  head_ = Conv2dLayer<T>(reg_, "head", in, 1, 1, {}, true, rng);
}

template <typename T>
Var<T> Discriminator<T>::forward(const Var<T>& image) const {
  const Shape s = image.shape();
  if (s.c != 3 || s.h < 16 || s.w < 16) {
    throw ShapeError("discriminator expects [N, 3, H >= 16, W >= 16], got " + s.str());
  }
  Var<T> x = image;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    x = leaky_relu(norms_[i](convs_[i](x)), T(0.2));
  }
  return activation(head_(x), Activation::sigmoid);
}

// ---------------------------------------------------------------------------

namespace {

struct TreeNode {
  std::string name;
  std::string shape;  // set on leaves
  std::size_t count = 0;
  std::vector<TreeNode> children;

  TreeNode& child(const std::string& n) {
    for (auto& c : children)
      if (c.name == n) return c;
    children.push_back(TreeNode{n, {}, 0, {}});
    return children.back();
  }
};

void print_tree(const TreeNode& node, int depth, std::ostringstream& os) {
  for (const auto& c : node.children) {
    os << std::string(2 * (depth + 1), ' ') << c.name;
    if (c.children.empty()) {
      os << " " << c.shape << "\n";
    } else {
      os << " (" << c.count << ")\n";
      print_tree(c, depth + 1, os);
    }
  }
}

}  // namespace

template <typename T>
std::string describe_registry(const ParamRegistry<T>& reg) {
  TreeNode root;
  for (const auto& p : reg.params()) {
    TreeNode* node = &root;
    const std::size_t count = p.value().numel();
    root.count += count;
    std::size_t start = 0;
    while (true) {
      const std::size_t dot = p.name.find('.', start);
      const std::string part = p.name.substr(start, dot == std::string::npos ? dot : dot - start);
      node = &node->child(part);
      node->count += count;
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    const Shape s = p.value().shape();
    node->shape = "[" + std::to_string(s.n) + "," + std::to_string(s.c) + "," +
                  std::to_string(s.h) + "," + std::to_string(s.w) + "]";
  }
  std::ostringstream os;
  print_tree(root, 0, os);
  return os.str();
}

std::string describe_models(const ModelConfig& config) {
  std::ostringstream os;
  const Generator<float> gen(config, 0);
  const Discriminator<float> disc(DiscriminatorConfig::for_preset(config.preset), 0);
  os << "generator preset=" << config.preset << " variant=" << to_string(config.variant)
     << " scales=" << config.scales << " ffc_blocks=" << config.effective_ffc_blocks()
     << " ffc_global_ratio=" << config.ffc_global_ratio
     << " stem_stride=" << config.stem_stride << " size_multiple=" << config.size_multiple()
     << " params=" << gen.registry().parameter_count() << "\n";
  os << describe_registry(gen.registry());
  os << "discriminator params=" << disc.registry().parameter_count() << "\n";
  os << describe_registry(disc.registry());
  return os.str();
}

#define DEHAZE_INSTANTIATE_NET(T)                                   \
  template class SpectralTransformLayer<T>;                         \
  template class FfcUnit<T>;                                        \
  template class FfcResidualBlock<T>;                               \
  template class DwtDownBlock<T>;                                   \
  template class DwtUpBlock<T>;                                     \
  template class ConvNextBlock<T>;                                  \
  template class ConvNextStage<T>;                                  \
  template class AttentionBlock<T>;                                 \
  template class FusionHead<T>;                                     \
  template class Generator<T>;                                      \
  template class Discriminator<T>;                                  \
  template std::string describe_registry(const ParamRegistry<T>&);

DEHAZE_INSTANTIATE_NET(float)
DEHAZE_INSTANTIATE_NET(double)

}  // namespace dehaze
