#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dehaze/image_io.hpp"
#include "dehaze/rng.hpp"
#include "dehaze/tensor.hpp"

namespace dehaze {

enum class FieldStyle { homogeneous, blobs, bands };

const char* to_string(FieldStyle s);
FieldStyle parse_field_style(const std::string& s);

// Scattering-model state for one image: t = exp(-beta * depth).
template <typename T>
struct HazeField {
  Tensor<T> transmission;  // [1, 1, H, W], values in (0, 1]
  Tensor<T> beta;          // [1, 1, H, W], >= 0
  Tensor<T> depth;         // [1, 1, H, W], >= 0
  std::array<T, 3> airlight{T(1), T(1), T(1)};

  // Derives the transmission from beta and depth.
  static HazeField from_components(Tensor<T> beta, Tensor<T> depth, std::array<T, 3> airlight);
  // Rejects fields whose transmission disagrees with exp(-beta * depth).
  void validate() const;
};

// Knobs of the synthetic haze generator. Depth is a gentle vertical ramp with
// small noise so that spatial structure in t comes mostly from beta.
struct FieldParams {
  double depth_base = 1.0;
  double depth_ramp = 0.1;
  double depth_noise = 0.01;
  double beta_homogeneous = 1.0;
  double beta_floor = 0.2;
  int blob_count_min = 3;
  int blob_count_max = 6;
  double blob_amplitude_min = 0.8;
  double blob_amplitude_max = 2.0;
  double blob_radius_min = 0.12;  // fraction of min(H, W)
  double blob_radius_max = 0.3;
  double band_amplitude = 1.6;
  double airlight_min = 0.7;
};

template <typename T>
HazeField<T> make_nonhomogeneous_field(int height, int width, std::uint64_t seed, FieldStyle style,
                                       const FieldParams& params = {});

// I = J t + A (1 - t), per channel.
template <typename T>
Tensor<T> asm_synthesize(const Tensor<T>& clean, const HazeField<T>& field);

// Deterministic procedural RGB scene in [0, 1]: smooth gradient background,
// a few flat shapes and a striped texture.
template <typename T>
Tensor<T> synthetic_scene(int height, int width, std::uint64_t seed);

struct HarmonizeResult {
  ImageU8 image;
  std::array<double, 3> gammas{1.0, 1.0, 1.0};
  std::array<bool, 3> unreachable{false, false, false};
  bool warning() const { return unreachable[0] || unreachable[1] || unreachable[2]; }
};

inline constexpr double kGammaMin = 0.1;
inline constexpr double kGammaMax = 10.0;

// Per channel: find g in [0.1, 10] with mean(255 (p / 255)^g) matching the
// target, apply it with round-half-up quantization. Unreachable targets leave
// g at the nearer search bound and set the warning flag.
HarmonizeResult gamma_harmonize(const ImageU8& image, const std::array<double, 3>& target_means);

// Channel mean of 255 (p / 255)^g before quantization.
double gamma_mean(const ImageU8& image, int channel, double gamma);

// k quarter turns counter-clockwise.
template <typename T>
Tensor<T> rotate90(const Tensor<T>& t, int k);
template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& t);
template <typename T>
Tensor<T> flip_vertical(const Tensor<T>& t);
template <typename T>
Tensor<T> crop_tensor(const Tensor<T>& t, int top, int left, int height, int width);

// Random square crop, rotation by k * 90 degrees, independent flips; the same
// draw is applied to both images.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> augment(const Tensor<T>& hazy, const Tensor<T>& clean, int crop,
                                        Rng& rng);

struct ManifestEntry {
  std::string hazy;
  std::string clean;
};

// One "hazy<TAB>clean" pair per line; '#' starts a comment, blank lines are
// skipped. Relative paths are resolved against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries,
                    const std::string& header_comment = {});

template <typename T>
struct ImagePair {
  std::string name;
  Tensor<T> hazy;   // [1, 3, H, W]
  Tensor<T> clean;  // [1, 3, H, W]
};

template <typename T>
struct PairDataset {
  std::vector<ImagePair<T>> pairs;
  int crop = 64;
  bool augment = true;
  std::uint64_t seed = 0;
  std::size_t skipped = 0;  // entries dropped while loading

  bool empty() const { return pairs.empty(); }
  std::size_t size() const { return pairs.size(); }

  // Pairs with mismatched dimensions or unreadable files are skipped and
  // counted; `strict` turns them into errors instead.
  static PairDataset load(const std::string& manifest, bool strict = false);
  // `count` scenes hazed with fields of the given style; pair i uses seeds
  // derived from (seed, i).
  static PairDataset synthetic(int count, int height, int width, FieldStyle style,
                               std::uint64_t seed);

  // Batch of `batch` augmented crops for one step. Sample j of step s draws
  // from an RNG seeded by (seed, s * batch + j).
  std::pair<Tensor<T>, Tensor<T>> sample_batch(std::int64_t step, int batch) const;
};

// Stack [1, C, H, W] tensors into [N, C, H, W].
template <typename T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& items);
template <typename T>
Tensor<T> batch_item(const Tensor<T>& batch, int n);

}  // namespace dehaze
