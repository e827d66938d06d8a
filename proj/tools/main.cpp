// dehaze: command-line front end.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dehaze/data.hpp"
#include "dehaze/engine.hpp"
#include "dehaze/image_io.hpp"
#include "dehaze/network.hpp"
#include "selftest.hpp"

namespace fs = std::filesystem;
using namespace dehaze;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

// "AxB" -> (A, B)
std::pair<int, int> parse_pair(const std::string& s, const char* what) {
  const auto x = s.find_first_of("xX");
  try {
    if (x == std::string::npos) throw std::invalid_argument("no separator");
    std::size_t used = 0;
    const int a = std::stoi(s.substr(0, x), &used);
    if (used != x) throw std::invalid_argument("junk");
    const std::string rest = s.substr(x + 1);
    const int b = std::stoi(rest, &used);
    if (used != rest.size() || a < 1 || b < 1) throw std::invalid_argument("junk");
    return {a, b};
  } catch (const std::exception&) {
    throw ShapeError(std::string(what) + ": expected two positive integers as AxB, got '" + s + "'");
  }
}

std::array<double, 3> parse_triple(const std::string& s) {
  std::array<double, 3> v{};
  std::stringstream in(s);
  std::string tok;
  int i = 0;
  while (std::getline(in, tok, ',')) {
    if (i >= 3) break;
    try {
      v[i++] = std::stod(tok);
    } catch (const std::exception&) {
      i = -1;
      break;
    }
  }
  if (i != 3) throw ShapeError("--targets: expected three comma-separated numbers, got '" + s + "'");
  return v;
}

ModelConfig model_config(const std::string& preset, const std::string& variant) {
  return ModelConfig::preset_named(preset).with_variant(parse_variant(variant));
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  int count = 4;
  std::string size = "64x64";
  std::string style = "blobs";
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
  const auto [h, w] = parse_pair(a.size, "--size");
  const FieldStyle style = parse_field_style(a.style);
  if (a.count < 1) throw ShapeError("--count must be >= 1");
  fs::create_directories(a.out);
  const PairDataset<float> ds = PairDataset<float>::synthetic(a.count, h, w, style, a.seed);
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < a.count; ++i) {
    char hazy[32], clean[32];
    std::snprintf(hazy, sizeof hazy, "hazy_%04d.png", i);
    std::snprintf(clean, sizeof clean, "clean_%04d.png", i);
    write_image((fs::path(a.out) / hazy).string(), from_tensor(ds.pairs[i].hazy));
    write_image((fs::path(a.out) / clean).string(), from_tensor(ds.pairs[i].clean));
    entries.push_back({hazy, clean});
  }
  const std::string tag = "style=" + a.style + " seed=" + std::to_string(a.seed) + " size=" +
                          std::to_string(h) + "x" + std::to_string(w);
  write_manifest((fs::path(a.out) / "manifest.txt").string(), entries, tag);
  std::cout << "wrote " << a.count << " pairs to " << a.out << " (" << tag << ")\n";
  return kExitOk;
}

struct TrainArgs {
  std::string data;
  std::string preset = "toy";
  std::string variant = "two-branch";
  std::int64_t steps = 500;
  std::uint64_t seed = 0;
  std::string out = "model.dfck";
  std::string resume;
  std::string log;
  int batch = 4;
  int crop = 64;
  double lr = 0;  // 0: preset default
  int eval_every = 50;
  int ms_ssim_scales = 3;
  std::string features = "random3";
};

int cmd_train(const TrainArgs& a) {
  PairDataset<float> ds = PairDataset<float>::load(a.data);
  if (ds.empty()) throw DataError(a.data + ": no usable pairs");
  if (ds.skipped) std::cerr << "warning: skipped " << ds.skipped << " unusable pairs\n";
  ds.crop = a.crop;
  ds.seed = a.seed;
  const int supported = max_ms_ssim_scales(a.crop, a.crop, SsimConfig{}.window);
  if (a.ms_ssim_scales > supported) {
    throw ShapeError("--crop " + std::to_string(a.crop) + " supports at most " + std::to_string(supported) +
                     " MS-SSIM scales; pass --ms-ssim-scales " + std::to_string(supported) + " or a larger crop");
  }

  TrainConfig cfg;
  cfg.batch = a.batch;
  cfg.seed = a.seed;
  cfg.eval_every = a.eval_every;
  cfg.feature_extractor = a.features;
  cfg.ms_ssim_scales = a.ms_ssim_scales;

  std::optional<Trainer<float>> trainer;
  std::int64_t start = 0;
  if (!a.resume.empty()) {
    start = Trainer<float>::load(a.resume, cfg).step_count();
  }
  const std::int64_t total = start + a.steps;
  const std::string preset = a.resume.empty() ? a.preset : read_checkpoint_config(a.resume).preset;
  const double lr = a.lr > 0 ? a.lr : (preset == "full" ? OptimizerConfig::full().lr0 : kToyLearningRate);
  cfg.gen_opt = OptimizerConfig::scaled(std::max<std::int64_t>(total, 1), lr);
  cfg.disc_opt = cfg.gen_opt;
  if (!a.resume.empty()) {
    trainer.emplace(Trainer<float>::load(a.resume, cfg));
  } else {
    trainer.emplace(model_config(a.preset, a.variant), cfg, a.seed);
  }

  const std::string log_path = a.log.empty() ? a.out + ".csv" : a.log;
  // A resumed run appends; the trainer only writes the header at step 0.
  const bool fresh_log = a.resume.empty() || !fs::exists(log_path) || fs::file_size(log_path) == 0;
  std::ofstream log(log_path, a.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw DataError(log_path + ": cannot open training log");
  if (fresh_log && !a.resume.empty()) log << kTrainLogHeader << "\n";
  try {
    const auto history = trainer->train(ds, a.steps, &log);
    trainer->save(a.out);
    if (!history.empty()) {
      const StepRecord& last = history.back();
      std::cout << "step " << last.step << " total " << last.total;
      if (last.psnr_eval) std::cout << " psnr " << *last.psnr_eval;
      std::cout << "\n";
    }
    std::cout << "saved " << a.out << ", log " << log_path << "\n";
  } catch (const NumericError&) {
    // The failing step never touched the parameters, so this is the last
    // good state.
    trainer->save(a.out);
    std::cerr << "training halted; last good state saved to " << a.out << "\n";
    throw;
  }
  return kExitOk;
}

// "identity" or a checkpoint path.
struct LoadedModel {
  std::optional<Generator<float>> gen;
  ImageModel<float> fn;
};

LoadedModel load_model(const std::string& spec) {
  LoadedModel m;
  if (spec == "identity") {
    m.fn = identity_model<float>();
  } else {
    m.gen.emplace(load_generator<float>(spec));
    m.fn = generator_model(*m.gen);
  }
  return m;
}

std::optional<TilePlan> tile_plan(const std::string& tile, const std::string& grid, int h, int w) {
  if (tile.empty() && grid.empty()) return std::nullopt;
  if (tile.empty() || grid.empty()) throw ShapeError("--tile and --grid must be given together");
  const auto [th, tw] = parse_pair(tile, "--tile");
  const auto [gr, gc] = parse_pair(grid, "--grid");
  return plan_tiles(h, w, th, tw, gr, gc);
}

struct DehazeArgs {
  std::string model;
  std::string in;
  std::string out;
  std::string tile;
  std::string grid;
};

int cmd_dehaze(const DehazeArgs& a) {
  LoadedModel m = load_model(a.model);
  const Tensor<float> img = to_tensor<float>(read_image(a.in));
  const Shape s = img.shape();
  const std::optional<TilePlan> plan = tile_plan(a.tile, a.grid, s.h, s.w);
  const Tensor<float> out = plan ? tiled_inference(m.fn, img, *plan) : m.fn(img);
  write_image(a.out, from_tensor(out));
  std::cout << "wrote " << a.out;
  if (plan) std::cout << " (" << plan->tile_count() << " tiles)";
  std::cout << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string model;
  std::string data;
  std::string tile;
  std::string grid;
};

int cmd_eval(const EvalArgs& a) {
  LoadedModel m = load_model(a.model);
  const PairDataset<float> ds = PairDataset<float>::load(a.data);
  std::optional<TilePlan> plan;
  if (!a.tile.empty() || !a.grid.empty()) {
    if (ds.empty()) throw DataError("evaluate: dataset is empty");
    const Shape s = ds.pairs.front().hazy.shape();
    plan = tile_plan(a.tile, a.grid, s.h, s.w);
  }
  const EvalReport r = evaluate(m.fn, ds, plan);
  std::cout << r.format();
  if (r.skipped) std::cerr << "warning: skipped " << r.skipped << " unpaired or unreadable entries\n";
  return kExitOk;
}

struct HarmonizeArgs {
  std::string in;
  std::string targets;
  std::string out;
};

int cmd_harmonize(const HarmonizeArgs& a) {
  const std::array<double, 3> targets = parse_triple(a.targets);
  std::vector<fs::path> inputs;
  if (fs::is_directory(a.in)) {
    for (const auto& e : fs::directory_iterator(a.in)) {
      const std::string ext = e.path().extension().string();
      if (e.is_regular_file() && (ext == ".png" || ext == ".ppm")) inputs.push_back(e.path());
    }
    std::sort(inputs.begin(), inputs.end());
  } else {
    inputs.push_back(a.in);
  }
  if (inputs.empty()) throw DataError(a.in + ": no .png or .ppm images found");
  fs::create_directories(a.out);
  int warnings = 0;
  for (const auto& p : inputs) {
    const HarmonizeResult r = gamma_harmonize(read_image(p.string()), targets);
    write_image((fs::path(a.out) / p.filename()).string(), r.image);
    char line[160];
    std::snprintf(line, sizeof line, "\tgamma_r=%.4f\tgamma_g=%.4f\tgamma_b=%.4f", r.gammas[0],
                  r.gammas[1], r.gammas[2]);
    std::cout << p.filename().string() << line << (r.warning() ? "\tWARNING=unreachable" : "") << "\n";
    warnings += r.warning();
  }
  if (warnings) std::cerr << "warning: " << warnings << " image(s) had an unreachable target mean\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// key=value config files

std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open config file");
  std::vector<std::pair<std::string, std::string>> kv;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw CLI::ValidationError(path + ":" + std::to_string(lineno) + ": expected key=value");
    }
    kv.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return kv;
}

// Splices "--key=value" for every config entry right after the subcommand
// name, so flags given on the command line (which come later) win.
std::vector<std::string> inject_config(CLI::App& app, std::vector<std::string> args) {
  std::size_t sub_pos = args.size();
  CLI::App* sub = nullptr;
  for (std::size_t i = 1; i < args.size(); ++i) {
    for (CLI::App* s : app.get_subcommands({})) {
      if (s->get_name() == args[i]) {
        sub = s;
        sub_pos = i;
        break;
      }
    }
    if (sub) break;
  }
  if (!sub) return args;
  std::string config;
  for (std::size_t i = sub_pos + 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config = args[i].substr(9);
  }
  if (config.empty()) return args;

  std::set<std::string> valid;
  for (const CLI::Option* o : sub->get_options()) {
    for (const auto& n : o->get_lnames()) {
      if (n != "config" && n != "help") valid.insert(n);
    }
  }
  std::vector<std::string> injected;
  for (const auto& [k, v] : read_config_file(config)) {
    if (!valid.count(k)) {
      std::string keys;
      for (const auto& n : valid) keys += (keys.empty() ? "" : ", ") + n;
      throw CLI::ValidationError("config key '" + k + "' is not valid for '" + sub->get_name() +
                                 "'; valid keys: " + keys);
    }
    injected.push_back("--" + k + "=" + v);
  }
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(sub_pos) + 1, injected.begin(), injected.end());
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-branch wavelet / Fourier dehazing toolkit", "dehaze"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  std::string config_unused;

  SynthArgs synth;
  auto* s_synth = app.add_subcommand("synth", "Generate synthetic hazy/clean pairs and a manifest");
  s_synth->add_option("--out", synth.out, "Output directory")->required();
  s_synth->add_option("--count", synth.count, "Number of pairs");
  s_synth->add_option("--size", synth.size, "Image size HxW");
  s_synth->add_option("--style", synth.style, "homogeneous | blobs | bands");
  s_synth->add_option("--seed", synth.seed, "Random seed");

  TrainArgs train;
  auto* s_train = app.add_subcommand("train", "Train generator and discriminator");
  s_train->add_option("--data", train.data, "Pair manifest")->required();
  s_train->add_option("--preset", train.preset, "toy | full");
  s_train->add_option("--variant", train.variant, "dwt-only | ffc-only | dwt-ffc | prior-only | two-branch");
  s_train->add_option("--steps", train.steps, "Optimizer steps to run");
  s_train->add_option("--seed", train.seed, "Random seed");
  s_train->add_option("--out", train.out, "Checkpoint to write");
  s_train->add_option("--resume", train.resume, "Checkpoint to continue from");
  s_train->add_option("--log", train.log, "CSV log path (default: <out>.csv)");
  s_train->add_option("--batch", train.batch, "Batch size");
  s_train->add_option("--crop", train.crop, "Square crop size");
  s_train->add_option("--lr", train.lr, "Initial learning rate (default: 5e-4 toy, 1e-4 full)");
  s_train->add_option("--eval-every", train.eval_every, "Steps between PSNR evaluations (0: end only)");
  s_train->add_option("--ms-ssim-scales", train.ms_ssim_scales, "MS-SSIM scales (1-3)");
  s_train->add_option("--features", train.features, "Perceptual network: random3 | vgg16 | identity");

  DehazeArgs dehaze_args;
  auto* s_dehaze = app.add_subcommand("dehaze", "Dehaze one image");
  s_dehaze->add_option("--model", dehaze_args.model, "Checkpoint path or 'identity'")->required();
  s_dehaze->add_option("--in", dehaze_args.in, "Input image")->required();
  s_dehaze->add_option("--out", dehaze_args.out, "Output image (.png or .ppm)")->required();
  s_dehaze->add_option("--tile", dehaze_args.tile, "Tile size HxW");
  s_dehaze->add_option("--grid", dehaze_args.grid, "Tile grid RxC");

  EvalArgs eval_args;
  auto* s_eval = app.add_subcommand("eval", "PSNR / SSIM over a manifest");
  s_eval->add_option("--model", eval_args.model, "Checkpoint path or 'identity'")->required();
  s_eval->add_option("--data", eval_args.data, "Pair manifest")->required();
  s_eval->add_option("--tile", eval_args.tile, "Tile size HxW");
  s_eval->add_option("--grid", eval_args.grid, "Tile grid RxC");

  HarmonizeArgs harm;
  auto* s_harm = app.add_subcommand("harmonize", "Per-channel gamma correction towards target means");
  s_harm->add_option("--in", harm.in, "Image or directory")->required();
  s_harm->add_option("--targets", harm.targets, "Target channel means r,g,b in (0, 255)")->required();
  s_harm->add_option("--out", harm.out, "Output directory")->required();

  std::string describe_preset = "toy";
  std::string describe_variant = "two-branch";
  auto* s_desc = app.add_subcommand("describe", "Print the model topology");
  s_desc->add_option("--preset", describe_preset, "toy | full");
  s_desc->add_option("--variant", describe_variant, "Ablation variant");

  auto* s_self = app.add_subcommand("selftest", "Run the built-in invariant checks");

  for (CLI::App* sub : app.get_subcommands({})) {
    sub->add_option("--config", config_unused, "key=value file; command-line flags override it");
  }

  try {
    std::vector<std::string> args(argv, argv + argc);
    args = inject_config(app, std::move(args));
    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }

  try {
    if (s_synth->parsed()) return cmd_synth(synth);
    if (s_train->parsed()) return cmd_train(train);
    if (s_dehaze->parsed()) return cmd_dehaze(dehaze_args);
    if (s_eval->parsed()) return cmd_eval(eval_args);
    if (s_harm->parsed()) return cmd_harmonize(harm);
    if (s_desc->parsed()) {
      std::cout << describe_models(model_config(describe_preset, describe_variant));
      return kExitOk;
    }
    if (s_self->parsed()) return cli::run_selftest(std::cout) == 0 ? kExitOk : kExitNumeric;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
