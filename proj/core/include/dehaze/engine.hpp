#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dehaze/data.hpp"
#include "dehaze/network.hpp"
#include "dehaze/objective.hpp"
#include "dehaze/optim.hpp"

namespace dehaze {

// ---------------------------------------------------------------------------
// Tiling

struct TilePlan {
  int height = 0, width = 0;
  int tile_h = 0, tile_w = 0;
  int rows = 1, cols = 1;
  std::vector<int> row_offsets, col_offsets;
  std::vector<int> row_overlaps, col_overlaps;  // between tile k and k + 1

  std::size_t tile_count() const { return row_offsets.size() * col_offsets.size(); }
};

// Evenly spaced offsets round(k (dim - tile) / (grid - 1)); the last tile is
// flush with the far edge.
TilePlan plan_tiles(int height, int width, int tile_h, int tile_w, int grid_rows, int grid_cols);

// A whole-image model: [N, 3, H, W] in, same shape out.
template <typename T>
using ImageModel = std::function<Tensor<T>(const Tensor<T>&)>;

template <typename T>
ImageModel<T> identity_model();

// Eval-mode, no-grad forward of `gen` (its train/eval flag is restored
// afterwards). Inputs whose sides are not multiples
// of the generator's size multiple are reflect-padded and the output cropped.
template <typename T>
ImageModel<T> generator_model(Generator<T>& gen);

// Reflect padding on the bottom and right edges; any pad amount is allowed
// (the reflection repeats for pads longer than the image).
template <typename T>
Tensor<T> reflect_pad_to(const Tensor<T>& t, int height, int width);

// out(p) = sum over tiles containing p of tile_out(p) / count(p). Sums are
// kept in double and divided once, so the result is independent of tile
// order and identical inputs average back to themselves exactly.
template <typename T>
Tensor<T> tiled_inference(const ImageModel<T>& model, const Tensor<T>& image, const TilePlan& plan);

// ---------------------------------------------------------------------------
// Evaluation

struct ImageMetrics {
  std::string name;
  double psnr = 0;
  double ssim = 0;
};

struct EvalReport {
  std::vector<ImageMetrics> images;
  double mean_psnr = 0;
  double mean_ssim = 0;
  std::size_t skipped = 0;

  // One metric_line per image, then a "mean" line.
  std::string format() const;
};

template <typename T>
EvalReport evaluate(const ImageModel<T>& model, const PairDataset<T>& data,
                    const std::optional<TilePlan>& plan = std::nullopt);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  int batch = 4;
  std::uint64_t seed = 0;
  int eval_every = 0;  // 0: evaluate only after the final step
  LossWeights weights;
  int ms_ssim_scales = 3;
  std::string feature_extractor = "random3";
  OptimizerConfig gen_opt = OptimizerConfig::toy();
  OptimizerConfig disc_opt = OptimizerConfig::toy();
};

struct StepRecord {
  std::int64_t step = 0;  // 1-based index of the completed step
  double lr = 0;
  double l1 = 0, msssim = 0, perceptual = 0, adversarial = 0, total = 0;
  std::optional<double> psnr_eval;
};

inline constexpr const char* kTrainLogHeader = "step,lr,l1,msssim,perc,adv,total,psnr_eval";
std::string csv_row(const StepRecord& r);

// Generator + discriminator + both optimizers. Training math is
// single-threaded, so a fixed seed reproduces the trajectory bit for bit.
template <typename T>
class Trainer {
 public:
  Trainer(ModelConfig model, TrainConfig train, std::uint64_t init_seed = 0);

  // One generator update followed by one discriminator update on the same
  // batch. Raises NumericError (parameters untouched) on a non-finite loss.
  StepRecord step(const PairDataset<T>& data);

  // `steps` further steps; each record is also written to `csv` when given
  // (header first if the log is empty).
  std::vector<StepRecord> train(const PairDataset<T>& data, std::int64_t steps,
                                std::ostream* csv = nullptr);

  // Mean PSNR of the eval-mode generator on the full pairs.
  double eval_psnr(const PairDataset<T>& data);

  Generator<T>& generator() { return gen_; }
  const Generator<T>& generator() const { return gen_; }
  Discriminator<T>& discriminator() { return disc_; }
  Adam<T>& gen_optimizer() { return gen_opt_; }
  Adam<T>& disc_optimizer() { return disc_opt_; }
  const TrainConfig& train_config() const { return cfg_; }
  std::int64_t step_count() const { return step_; }
  void save(const std::string& path) const;

  // Rebuilds both models from the config echo in the file and restores all
  // saved state, Adam moments included.
  static Trainer load(const std::string& path, TrainConfig train);

 private:
  TrainConfig cfg_;
  Generator<T> gen_;
  Discriminator<T> disc_;
  Adam<T> gen_opt_;
  Adam<T> disc_opt_;
  std::unique_ptr<FeatureExtractor<T>> fx_;
  SsimConfig ssim_;
  std::int64_t step_ = 0;
};

// Generator alone from a checkpoint written by Trainer::save.
template <typename T>
Generator<T> load_generator(const std::string& path);

// Model config stored in a checkpoint.
ModelConfig read_checkpoint_config(const std::string& path);

extern template class Trainer<float>;
extern template class Trainer<double>;

}  // namespace dehaze
