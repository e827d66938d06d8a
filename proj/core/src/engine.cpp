#include "dehaze/engine.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <set>

#include "dehaze/checkpoint.hpp"
#include "dehaze/error.hpp"

namespace dehaze {

// ---------------------------------------------------------------------------
// Tiling

namespace {

std::vector<int> even_offsets(int dim, int tile, int grid) {
  std::vector<int> off(grid, 0);
  if (grid == 1) return off;
  const long long span = dim - tile;
  for (int k = 0; k < grid; ++k) {
    // round(k * span / (grid - 1)), halves rounded up
    off[k] = static_cast<int>((2LL * k * span + (grid - 1)) / (2LL * (grid - 1)));
  }
  return off;
}

void check_axis(const char* axis, int dim, int tile, int grid) {
  if (dim < 1 || tile < 1 || grid < 1) {
    throw ShapeError(std::string("plan_tiles: ") + axis + " sizes must be positive");
  }
  if (tile > dim) {
    throw ShapeError(std::string("plan_tiles: tile ") + axis + " " + std::to_string(tile) +
                     " exceeds image " + axis + " " + std::to_string(dim));
  }
  if (static_cast<long long>(tile) * grid < dim) {
    const int minimal = (dim + grid - 1) / grid;
    throw ShapeError(std::string("plan_tiles: ") + std::to_string(grid) + " tiles of " + axis +
                     " " + std::to_string(tile) + " cannot cover " + std::to_string(dim) +
                     "; minimal feasible tile " + axis + " is " + std::to_string(minimal));
  }
}

std::vector<int> overlaps(const std::vector<int>& off, int tile) {
  std::vector<int> o;
  for (std::size_t k = 0; k + 1 < off.size(); ++k) o.push_back(off[k] + tile - off[k + 1]);
  return o;
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

TilePlan plan_tiles(int height, int width, int tile_h, int tile_w, int grid_rows, int grid_cols) {
  check_axis("height", height, tile_h, grid_rows);
  check_axis("width", width, tile_w, grid_cols);
  TilePlan p;
  p.height = height;
  p.width = width;
  p.tile_h = tile_h;
  p.tile_w = tile_w;
  p.rows = grid_rows;
  p.cols = grid_cols;
  p.row_offsets = even_offsets(height, tile_h, grid_rows);
  p.col_offsets = even_offsets(width, tile_w, grid_cols);
  p.row_overlaps = overlaps(p.row_offsets, tile_h);
  p.col_overlaps = overlaps(p.col_offsets, tile_w);
  return p;
}

template <typename T>
ImageModel<T> identity_model() {
  return [](const Tensor<T>& x) { return x; };
}

template <typename T>
Tensor<T> reflect_pad_to(const Tensor<T>& t, int height, int width) {
  const Shape s = t.shape();
  if (height < s.h || width < s.w) throw ShapeError("reflect_pad_to: target smaller than input");
  if (height == s.h && width == s.w) return t;
  Tensor<T> out(Shape{s.n, s.c, height, width});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < height; ++y) {
        const int sy = reflect_index(y, s.h);
        for (int x = 0; x < width; ++x) out.at(n, c, y, x) = t.at(n, c, sy, reflect_index(x, s.w));
      }
  return out;
}

template <typename T>
ImageModel<T> generator_model(Generator<T>& gen) {
  return [&gen](const Tensor<T>& x) {
    struct Restore {
      Generator<T>& g;
      bool was;
      ~Restore() { g.set_training(was); }
    } restore{gen, gen.registry().training()};
    gen.set_training(false);
    NoGradGuard no_grad;
    const int m = gen.config().size_multiple();
    const Shape s = x.shape();
    const int ph = (s.h + m - 1) / m * m, pw = (s.w + m - 1) / m * m;
    const Tensor<T> out = gen.forward(Var<T>::constant(reflect_pad_to(x, ph, pw))).value();
    if (ph == s.h && pw == s.w) return out;
    return crop_tensor(out, 0, 0, s.h, s.w);
  };
}

template <typename T>
Tensor<T> tiled_inference(const ImageModel<T>& model, const Tensor<T>& image, const TilePlan& plan) {
  const Shape s = image.shape();
  if (s.h != plan.height || s.w != plan.width) {
    throw ShapeError("tiled_inference: plan is for " + std::to_string(plan.height) + "x" +
                     std::to_string(plan.width) + ", image is " + s.str());
  }
  std::vector<double> acc;
  std::vector<int> count(static_cast<std::size_t>(s.h) * s.w, 0);
  int out_c = -1;
  for (int oy : plan.row_offsets)
    for (int ox : plan.col_offsets) {
      const Tensor<T> tile = crop_tensor(image, oy, ox, plan.tile_h, plan.tile_w);
      const Tensor<T> out = model(tile);
      const Shape os = out.shape();
      if (os.n != s.n || os.h != plan.tile_h || os.w != plan.tile_w || (out_c >= 0 && os.c != out_c)) {
        throw ShapeError("tiled_inference: model returned " + os.str() + " for tile " +
                         tile.shape().str());
      }
      if (out_c < 0) {
        out_c = os.c;
        acc.assign(static_cast<std::size_t>(s.n) * out_c * s.h * s.w, 0.0);
      }
      for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < out_c; ++c)
          for (int y = 0; y < plan.tile_h; ++y) {
            const T* src = out.plane(n, c) + static_cast<std::size_t>(y) * plan.tile_w;
            double* dst = acc.data() +
                          ((static_cast<std::size_t>(n) * out_c + c) * s.h + oy + y) * s.w + ox;
            for (int x = 0; x < plan.tile_w; ++x) dst[x] += static_cast<double>(src[x]);
          }
      for (int y = 0; y < plan.tile_h; ++y)
        for (int x = 0; x < plan.tile_w; ++x) ++count[static_cast<std::size_t>(oy + y) * s.w + ox + x];
    }
  Tensor<T> result(Shape{s.n, out_c, s.h, s.w});
  const std::size_t plane = s.plane();
  for (std::size_t i = 0; i < result.numel(); ++i) {
    const int k = count[i % plane];
    if (k == 0) throw ShapeError("tiled_inference: plan leaves pixels uncovered");
    result.raw()[i] = static_cast<T>(acc[i] / k);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

std::string EvalReport::format() const {
  std::string out;
  for (const auto& m : images) out += metric_line(m.name, m.psnr, m.ssim) + "\n";
  out += metric_line("mean", mean_psnr, mean_ssim) + "\n";
  return out;
}

template <typename T>
EvalReport evaluate(const ImageModel<T>& model, const PairDataset<T>& data,
                    const std::optional<TilePlan>& plan) {
  if (data.empty()) throw DataError("evaluate: dataset is empty");
  EvalReport r;
  r.skipped = data.skipped;
  for (const auto& p : data.pairs) {
    Tensor<T> out;
    if (plan) {
      const Shape s = p.hazy.shape();
      const TilePlan local = plan_tiles(s.h, s.w, std::min(plan->tile_h, s.h),
                                        std::min(plan->tile_w, s.w), plan->rows, plan->cols);
      out = tiled_inference(model, p.hazy, local);
    } else {
      out = model(p.hazy);
    }
    ImageMetrics m{p.name, psnr(out, p.clean), ssim_value(out, p.clean)};
    r.mean_psnr += m.psnr;
    r.mean_ssim += m.ssim;
    r.images.push_back(std::move(m));
  }
  r.mean_psnr /= static_cast<double>(r.images.size());
  r.mean_ssim /= static_cast<double>(r.images.size());
  return r;
}

// ---------------------------------------------------------------------------
// Training

std::string csv_row(const StepRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,",
                static_cast<long long>(r.step), r.lr, r.l1, r.msssim, r.perceptual,
                r.adversarial, r.total);
  std::string row = buf;
  if (r.psnr_eval) {
    std::snprintf(buf, sizeof buf, "%.9g", *r.psnr_eval);
    row += buf;
  }
  return row;
}

template <typename T>
Trainer<T>::Trainer(ModelConfig model, TrainConfig train, std::uint64_t init_seed)
    : cfg_(std::move(train)),
      gen_(model, mix_seed(init_seed, 1)),
      disc_(DiscriminatorConfig::for_preset(model.preset), mix_seed(init_seed, 2)),
      gen_opt_(gen_.registry(), cfg_.gen_opt),
      disc_opt_(disc_.registry(), cfg_.disc_opt),
      fx_(make_feature_extractor<T>(cfg_.feature_extractor)),
      ssim_(SsimConfig::with_scales(cfg_.ms_ssim_scales)) {
  if (cfg_.batch < 1) throw ShapeError("train: batch must be >= 1");
  cfg_.weights.validate();
}

template <typename T>
StepRecord Trainer<T>::step(const PairDataset<T>& data) {
  if (data.empty()) throw DataError("train: dataset is empty");
  const auto [hazy_t, clean_t] = data.sample_batch(step_, cfg_.batch);
  const Var<T> hazy = Var<T>::constant(hazy_t);
  const Var<T> clean = Var<T>::constant(clean_t);
  gen_.set_training(true);
  disc_.set_training(true);

  StepRecord rec;
  rec.step = step_ + 1;
  rec.lr = gen_opt_.current_lr();

  const Var<T> pred = gen_.forward(hazy);
  const Var<T> d_fake_for_g = disc_.forward(pred);
  const LossTerms<T> terms = total_loss(pred, clean, *fx_, d_fake_for_g, cfg_.weights, ssim_);
  rec.l1 = terms.l1.value().item();
  rec.msssim = terms.msssim.value().item();
  rec.perceptual = terms.perceptual.value().item();
  rec.adversarial = terms.adversarial.value().item();
  rec.total = terms.total.value().item();
  if (!std::isfinite(rec.total)) {
    throw NumericError("non-finite generator loss at step " + std::to_string(rec.step));
  }
  gen_.registry().zero_grad();
  disc_.registry().zero_grad();
  backward(terms.total);

  // Both backward passes run before either update so a failure anywhere in
  // the step leaves every parameter as it was.
  const Var<T> fake = Var<T>::constant(pred.value());
  const Var<T> d_loss = discriminator_loss(disc_.forward(clean), disc_.forward(fake));
  if (!std::isfinite(static_cast<double>(d_loss.value().item()))) {
    throw NumericError("non-finite discriminator loss at step " + std::to_string(rec.step));
  }
  gen_opt_.check_gradients();
  disc_.registry().zero_grad();
  backward(d_loss);
  disc_opt_.check_gradients();
  gen_opt_.step();
  disc_opt_.step();

  ++step_;
  return rec;
}

template <typename T>
double Trainer<T>::eval_psnr(const PairDataset<T>& data) {
  const ImageModel<T> model = generator_model(gen_);
  double acc = 0;
  for (const auto& p : data.pairs) acc += psnr(model(p.hazy), p.clean);
  return acc / static_cast<double>(data.pairs.size());
}

template <typename T>
std::vector<StepRecord> Trainer<T>::train(const PairDataset<T>& data, std::int64_t steps,
                                          std::ostream* csv) {
  if (data.empty()) throw DataError("train: dataset is empty");
  std::vector<StepRecord> history;
  if (steps <= 0) return history;
  if (csv && step_ == 0) *csv << kTrainLogHeader << "\n";
  for (std::int64_t i = 0; i < steps; ++i) {
    StepRecord r = step(data);
    const bool last = i + 1 == steps;
    if (last || (cfg_.eval_every > 0 && r.step % cfg_.eval_every == 0)) r.psnr_eval = eval_psnr(data);
    if (csv) *csv << csv_row(r) << "\n" << std::flush;
    history.push_back(r);
  }
  return history;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

NamedTensor scalar_tensor(const std::string& name, double v) {
  return NamedTensor{name, {1}, {static_cast<float>(v)}};
}

NamedTensor list_tensor(const std::string& name, const std::vector<int>& v) {
  NamedTensor t{name, {static_cast<std::uint32_t>(v.size())}, {}};
  for (int x : v) t.data.push_back(static_cast<float>(x));
  return t;
}

template <typename T>
NamedTensor to_named(const std::string& name, const Tensor<T>& t) {
  const Shape s = t.shape();
  NamedTensor out{name,
                  {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
                   static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)},
                  {}};
  out.data.reserve(t.numel());
  for (T v : t.data()) out.data.push_back(static_cast<float>(v));
  return out;
}

std::vector<NamedTensor> config_tensors(const ModelConfig& c, std::int64_t step) {
  return {scalar_tensor("meta.config.preset", c.preset == "full" ? 1 : 0),
          scalar_tensor("meta.config.variant", static_cast<int>(c.variant)),
          scalar_tensor("meta.config.scales", c.scales),
          list_tensor("meta.config.widths", c.widths),
          scalar_tensor("meta.config.ffc_blocks", c.ffc_blocks),
          scalar_tensor("meta.config.ffc_global_ratio", c.ffc_global_ratio),
          scalar_tensor("meta.config.convnext_stages", c.convnext_stages),
          list_tensor("meta.config.convnext_widths", c.convnext_widths),
          list_tensor("meta.config.convnext_depths", c.convnext_depths),
          scalar_tensor("meta.config.stem_stride", c.stem_stride),
          scalar_tensor("meta.config.branch2_out", c.branch2_out),
          scalar_tensor("meta.step", static_cast<double>(step))};
}

const NamedTensor* find_tensor(const std::vector<NamedTensor>& ts, const std::string& name) {
  for (const auto& t : ts)
    if (t.name == name) return &t;
  return nullptr;
}

const NamedTensor& require_tensor(const std::vector<NamedTensor>& ts, const std::string& name) {
  if (const NamedTensor* t = find_tensor(ts, name)) return *t;
  throw DataError("checkpoint: missing tensor '" + name + "'");
}

std::vector<int> int_list(const NamedTensor& t) {
  std::vector<int> v;
  for (float x : t.data) v.push_back(static_cast<int>(x));
  return v;
}

ModelConfig config_from(const std::vector<NamedTensor>& ts) {
  auto scalar = [&](const std::string& n) {
    const NamedTensor& t = require_tensor(ts, n);
    if (t.data.size() != 1) throw DataError("checkpoint: '" + n + "' must hold one value");
    return static_cast<double>(t.data[0]);
  };
  ModelConfig c = scalar("meta.config.preset") == 1 ? ModelConfig::full() : ModelConfig::toy();
  c.variant = parse_variant(std::to_string(static_cast<int>(scalar("meta.config.variant"))));
  c.scales = static_cast<int>(scalar("meta.config.scales"));
  c.widths = int_list(require_tensor(ts, "meta.config.widths"));
  c.ffc_blocks = static_cast<int>(scalar("meta.config.ffc_blocks"));
  c.ffc_global_ratio = scalar("meta.config.ffc_global_ratio");
  c.convnext_stages = static_cast<int>(scalar("meta.config.convnext_stages"));
  c.convnext_widths = int_list(require_tensor(ts, "meta.config.convnext_widths"));
  c.convnext_depths = int_list(require_tensor(ts, "meta.config.convnext_depths"));
  c.stem_stride = static_cast<int>(scalar("meta.config.stem_stride"));
  c.branch2_out = static_cast<int>(scalar("meta.config.branch2_out"));
  c.validate();
  return c;
}

template <typename T>
void append_model(std::vector<NamedTensor>& out, const std::string& prefix,
                  const ParamRegistry<T>& reg) {
  for (const auto& p : reg.params()) out.push_back(to_named(prefix + p.name, p.value()));
  for (const auto& [name, st] : reg.norm_states()) {
    out.push_back(to_named(prefix + name + ".running_mean", st->running_mean));
    out.push_back(to_named(prefix + name + ".running_var", st->running_var));
  }
}

template <typename T>
void append_optimizer(std::vector<NamedTensor>& out, const std::string& prefix, const Adam<T>& opt) {
  out.push_back(scalar_tensor(prefix + "step", static_cast<double>(opt.state().step)));
  const auto& params = opt.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.push_back(to_named(prefix + "m." + params[i].name, opt.state().m[i]));
    out.push_back(to_named(prefix + "v." + params[i].name, opt.state().v[i]));
  }
}

template <typename T>
void fill_tensor(Tensor<T>& dst, const NamedTensor& src) {
  const Shape s = dst.shape();
  const std::vector<std::uint32_t> dims{static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
                                        static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
  if (src.dims != dims) {
    throw DataError("checkpoint: tensor '" + src.name + "' has the wrong shape for " + s.str());
  }
  for (std::size_t i = 0; i < src.data.size(); ++i) dst.raw()[i] = static_cast<T>(src.data[i]);
}

// Every name a checkpoint for `model` must contain.
std::vector<std::string> expected_names(const ModelConfig& model, bool with_training_state) {
  std::vector<std::string> names;
  for (const auto& t : config_tensors(model, 0)) names.push_back(t.name);
  const Generator<float> gen(model, 0);
  std::vector<NamedTensor> tmp;
  append_model(tmp, "gen.", gen.registry());
  if (with_training_state) {
    const Discriminator<float> disc(DiscriminatorConfig::for_preset(model.preset), 0);
    append_model(tmp, "disc.", disc.registry());
    append_optimizer(tmp, "opt.gen.", Adam<float>(gen.registry(), OptimizerConfig{}));
    append_optimizer(tmp, "opt.disc.", Adam<float>(disc.registry(), OptimizerConfig{}));
  }
  for (const auto& t : tmp) names.push_back(t.name);
  return names;
}

std::vector<NamedTensor> read_checked(const std::string& path, bool with_training_state,
                                      ModelConfig& config) {
  const ExpectedNames expected = [](const std::vector<NamedTensor>& so_far) {
    return expected_names(config_from(so_far), true);
  };
  std::vector<NamedTensor> ts = read_tensors(path, expected);
  config = config_from(ts);
  const std::vector<std::string> want = expected_names(config, true);
  const std::set<std::string> want_set(want.begin(), want.end());
  std::string unknown, missing;
  std::set<std::string> have;
  for (const auto& t : ts) {
    have.insert(t.name);
    if (!want_set.count(t.name)) unknown += (unknown.empty() ? "" : ", ") + t.name;
  }
  if (!unknown.empty()) throw DataError(path + ": unknown tensors in checkpoint: " + unknown);
  for (const auto& n : want) {
    const bool needed = with_training_state || n.rfind("gen.", 0) == 0 || n.rfind("meta.", 0) == 0;
    if (needed && !have.count(n)) missing += (missing.empty() ? "" : ", ") + n;
  }
  if (!missing.empty()) throw DataError(path + ": checkpoint is missing tensors: " + missing);
  return ts;
}

template <typename T>
void restore_model(const std::vector<NamedTensor>& ts, const std::string& prefix,
                   ParamRegistry<T>& reg) {
  for (const auto& p : reg.params()) fill_tensor(p.mutable_value(), require_tensor(ts, prefix + p.name));
  for (const auto& [name, st] : reg.norm_states()) {
    fill_tensor(st->running_mean, require_tensor(ts, prefix + name + ".running_mean"));
    fill_tensor(st->running_var, require_tensor(ts, prefix + name + ".running_var"));
  }
}

template <typename T>
void restore_optimizer(const std::vector<NamedTensor>& ts, const std::string& prefix, Adam<T>& opt) {
  opt.state().step = static_cast<std::int64_t>(require_tensor(ts, prefix + "step").data.at(0));
  const auto& params = opt.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    fill_tensor(opt.state().m[i], require_tensor(ts, prefix + "m." + params[i].name));
    fill_tensor(opt.state().v[i], require_tensor(ts, prefix + "v." + params[i].name));
  }
}

}  // namespace

template <typename T>
void Trainer<T>::save(const std::string& path) const {
  std::vector<NamedTensor> out = config_tensors(gen_.config(), step_);
  append_model(out, "gen.", gen_.registry());
  append_model(out, "disc.", disc_.registry());
  append_optimizer(out, "opt.gen.", gen_opt_);
  append_optimizer(out, "opt.disc.", disc_opt_);
  write_tensors(path, out);
}

template <typename T>
Trainer<T> Trainer<T>::load(const std::string& path, TrainConfig train) {
  ModelConfig config;
  const std::vector<NamedTensor> ts = read_checked(path, true, config);
  Trainer t(config, std::move(train));
  restore_model(ts, "gen.", t.gen_.registry());
  restore_model(ts, "disc.", t.disc_.registry());
  restore_optimizer(ts, "opt.gen.", t.gen_opt_);
  restore_optimizer(ts, "opt.disc.", t.disc_opt_);
  t.step_ = static_cast<std::int64_t>(require_tensor(ts, "meta.step").data.at(0));
  return t;
}

template <typename T>
Generator<T> load_generator(const std::string& path) {
  ModelConfig config;
  const std::vector<NamedTensor> ts = read_checked(path, false, config);
  Generator<T> gen(config, 0);
  restore_model(ts, "gen.", gen.registry());
  gen.set_training(false);
  return gen;
}

ModelConfig read_checkpoint_config(const std::string& path) {
  return config_from(read_tensors(path));
}

#define DEHAZE_INSTANTIATE_ENGINE(T)                                                          \
  template ImageModel<T> identity_model();                                                    \
  template ImageModel<T> generator_model(Generator<T>&);                                      \
  template Tensor<T> reflect_pad_to(const Tensor<T>&, int, int);                              \
  template Tensor<T> tiled_inference(const ImageModel<T>&, const Tensor<T>&, const TilePlan&); \
  template EvalReport evaluate(const ImageModel<T>&, const PairDataset<T>&,                   \
                               const std::optional<TilePlan>&);                               \
  template class Trainer<T>;                                                                  \
  template Generator<T> load_generator(const std::string&);

DEHAZE_INSTANTIATE_ENGINE(float)
DEHAZE_INSTANTIATE_ENGINE(double)

}  // namespace dehaze
