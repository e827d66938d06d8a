#include "dehaze/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "dehaze/error.hpp"

namespace dehaze {

const char* to_string(FieldStyle s) {
  switch (s) {
    case FieldStyle::homogeneous: return "homogeneous";
    case FieldStyle::blobs: return "blobs";
    case FieldStyle::bands: return "bands";
  }
  return "?";
}

FieldStyle parse_field_style(const std::string& s) {
  if (s == "homogeneous") return FieldStyle::homogeneous;
  if (s == "blobs") return FieldStyle::blobs;
  if (s == "bands") return FieldStyle::bands;
  throw DataError("unknown haze style '" + s + "' (expected homogeneous, blobs or bands)");
}

template <typename T>
HazeField<T> HazeField<T>::from_components(Tensor<T> beta, Tensor<T> depth,
                                           std::array<T, 3> airlight) {
  if (!(beta.shape() == depth.shape()) || beta.shape().n != 1 || beta.shape().c != 1) {
    throw ShapeError("haze field: beta " + beta.shape().str() + " and depth " +
                     depth.shape().str() + " must both be [1, 1, H, W]");
  }
  HazeField f;
  f.transmission = Tensor<T>(beta.shape());
  for (std::size_t i = 0; i < beta.numel(); ++i) {
    if (beta.raw()[i] < T(0) || depth.raw()[i] < T(0)) {
      throw ShapeError("haze field: beta and depth must be non-negative");
    }
    f.transmission.raw()[i] = std::exp(-beta.raw()[i] * depth.raw()[i]);
  }
  for (T a : airlight) {
    if (!(a >= T(0) && a <= T(1))) throw ShapeError("haze field: airlight must lie in [0, 1]");
  }
  f.beta = std::move(beta);
  f.depth = std::move(depth);
  f.airlight = airlight;
  return f;
}

template <typename T>
void HazeField<T>::validate() const {
  if (!(transmission.shape() == beta.shape()) || !(beta.shape() == depth.shape())) {
    throw ShapeError("haze field: component shapes differ");
  }
  for (std::size_t i = 0; i < beta.numel(); ++i) {
    const T expected = std::exp(-beta.raw()[i] * depth.raw()[i]);
    if (std::abs(transmission.raw()[i] - expected) > T(1e-6) * std::max(T(1), expected)) {
      throw ShapeError("haze field: transmission is not exp(-beta * depth)");
    }
  }
}

template <typename T>
HazeField<T> make_nonhomogeneous_field(int height, int width, std::uint64_t seed, FieldStyle style,
                                       const FieldParams& p) {
  if (height < 1 || width < 1) throw ShapeError("haze field: size must be positive");
  Rng rng(seed);
  const Shape s{1, 1, height, width};
  Tensor<T> depth(s), beta(s);
  for (int y = 0; y < height; ++y) {
    const double ramp = height > 1 ? static_cast<double>(y) / (height - 1) : 0.0;
    for (int x = 0; x < width; ++x) {
      const double noise = rng.uniform(-p.depth_noise, p.depth_noise);
      depth.at(0, 0, y, x) = static_cast<T>(p.depth_base + p.depth_ramp * (1.0 - ramp) + noise);
    }
  }

  switch (style) {
    case FieldStyle::homogeneous:
      beta.fill(static_cast<T>(p.beta_homogeneous));
      break;
    case FieldStyle::blobs: {
      std::vector<double> field(s.numel(), p.beta_floor);
      const int count = p.blob_count_min + rng.below(p.blob_count_max - p.blob_count_min + 1);
      const double extent = std::min(height, width);
      for (int b = 0; b < count; ++b) {
        const double cy = rng.uniform(0, height), cx = rng.uniform(0, width);
        const double amp = rng.uniform(p.blob_amplitude_min, p.blob_amplitude_max);
        const double r = extent * rng.uniform(p.blob_radius_min, p.blob_radius_max);
        for (int y = 0; y < height; ++y)
          for (int x = 0; x < width; ++x) {
            const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
            field[static_cast<std::size_t>(y) * width + x] += amp * std::exp(-d2 / (2 * r * r));
          }
      }
      for (std::size_t i = 0; i < field.size(); ++i) beta.raw()[i] = static_cast<T>(field[i]);
      break;
    }
    case FieldStyle::bands: {
      const double angle = rng.uniform(0, std::numbers::pi);
      const double freq = rng.uniform(1.0, 3.0);
      const double phase = rng.uniform(0, 2 * std::numbers::pi);
      const double ca = std::cos(angle), sa = std::sin(angle);
      const double extent = std::max(height, width);
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
          const double u = (x * ca + y * sa) / extent;
          const double wave = 0.5 + 0.5 * std::sin(2 * std::numbers::pi * freq * u + phase);
          beta.at(0, 0, y, x) = static_cast<T>(p.beta_floor + p.band_amplitude * wave);
        }
      break;
    }
  }

  const double base = rng.uniform(p.airlight_min + 0.05, 0.95);
  std::array<T, 3> airlight{};
  for (T& a : airlight) {
    a = static_cast<T>(std::clamp(base + rng.uniform(-0.05, 0.05), p.airlight_min, 1.0));
  }
  return HazeField<T>::from_components(std::move(beta), std::move(depth), airlight);
}

template <typename T>
Tensor<T> asm_synthesize(const Tensor<T>& clean, const HazeField<T>& field) {
  const Shape s = clean.shape();
  const Shape fs = field.transmission.shape();
  if (s.n != 1 || s.c != 3 || fs.h != s.h || fs.w != s.w) {
    throw ShapeError("asm_synthesize: clean " + s.str() + " does not match field " + fs.str());
  }
  Tensor<T> out(s);
  for (int c = 0; c < 3; ++c) {
    const T a = field.airlight[c];
    const T* j = clean.plane(0, c);
    const T* t = field.transmission.raw();
    T* o = out.plane(0, c);
    for (std::size_t i = 0; i < s.plane(); ++i) o[i] = j[i] * t[i] + a * (T(1) - t[i]);
  }
  return out;
}

template <typename T>
Tensor<T> synthetic_scene(int height, int width, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<T> img(Shape{1, 3, height, width});
  std::array<double, 3> top{}, bottom{};
  for (int c = 0; c < 3; ++c) {
    top[c] = rng.uniform(0.1, 0.9);
    bottom[c] = rng.uniform(0.1, 0.9);
  }
  for (int y = 0; y < height; ++y) {
    const double v = height > 1 ? static_cast<double>(y) / (height - 1) : 0.0;
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = static_cast<T>(top[c] * (1 - v) + bottom[c] * v);
  }

  const int shapes = 3 + rng.below(4);
  for (int k = 0; k < shapes; ++k) {
    std::array<double, 3> color{};
    for (double& c : color) c = rng.uniform(0.05, 0.95);
    const bool disc = rng.coin();
    const double cy = rng.uniform(0, height), cx = rng.uniform(0, width);
    const double ry = rng.uniform(0.08, 0.3) * height, rx = rng.uniform(0.08, 0.3) * width;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double dy = (y - cy) / ry, dx = (x - cx) / rx;
        const bool inside = disc ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1 && std::abs(dx) <= 1;
        if (!inside) continue;
        for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = static_cast<T>(color[c]);
      }
  }

  // Low-contrast stripes so the scene carries some high-frequency detail.
  const double period = rng.uniform(4.0, 10.0);
  const double angle = rng.uniform(0, std::numbers::pi);
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double stripe = 0.06 * std::sin(2 * std::numbers::pi * (x * ca + y * sa) / period);
      for (int c = 0; c < 3; ++c) {
        T& v = img.at(0, c, y, x);
        v = static_cast<T>(std::clamp(static_cast<double>(v) + stripe, 0.0, 1.0));
      }
    }
  return img;
}

// ---------------------------------------------------------------------------

double gamma_mean(const ImageU8& image, int channel, double gamma) {
  std::array<std::size_t, 256> hist{};
  const std::size_t count = static_cast<std::size_t>(image.width) * image.height;
  for (std::size_t i = 0; i < count; ++i) ++hist[image.pixels[i * 3 + channel]];
  double acc = 0;
  for (int v = 1; v < 256; ++v) {
    if (hist[v]) acc += hist[v] * 255.0 * std::pow(v / 255.0, gamma);
  }
  return acc / static_cast<double>(count);
}

namespace {

std::array<std::uint8_t, 256> gamma_lut(double gamma) {
  std::array<std::uint8_t, 256> lut{};
  for (int v = 0; v < 256; ++v) {
    lut[v] = static_cast<std::uint8_t>(std::floor(255.0 * std::pow(v / 255.0, gamma) + 0.5));
  }
  return lut;
}

double quantized_mean(const ImageU8& image, int channel, double gamma) {
  const auto lut = gamma_lut(gamma);
  const std::size_t count = static_cast<std::size_t>(image.width) * image.height;
  double acc = 0;
  for (std::size_t i = 0; i < count; ++i) acc += lut[image.pixels[i * 3 + channel]];
  return acc / static_cast<double>(count);
}

// Bisection for a decreasing function f(g) crossing `target` inside [lo, hi].
template <typename F>
double bisect_decreasing(F f, double target, double lo, double hi, int iterations) {
  for (int it = 0; it < iterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (f(mid) > target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace

HarmonizeResult gamma_harmonize(const ImageU8& image, const std::array<double, 3>& target_means) {
  if (image.width <= 0 || image.height <= 0) throw DataError("gamma_harmonize: empty image");
  HarmonizeResult res;
  res.image = image;
  for (int c = 0; c < 3; ++c) {
    const double target = target_means[c];
    if (!(target > 0.0 && target < 255.0)) {
      throw DataError("gamma_harmonize: target mean must lie in (0, 255), got " +
                      std::to_string(target));
    }
    auto cont = [&](double g) { return gamma_mean(image, c, g); };
    double g;
    if (cont(kGammaMin) < target) {
      g = kGammaMin;
      res.unreachable[c] = true;
    } else if (cont(kGammaMax) > target) {
      g = kGammaMax;
      res.unreachable[c] = true;
    } else {
      g = bisect_decreasing(cont, target, kGammaMin, kGammaMax, 60);
      // Rounding can push the stored mean off target; the quantized mean is
      // also monotone in g, so search it directly when that happens.
      auto quant = [&](double gg) { return quantized_mean(image, c, gg); };
      if (std::abs(quant(g) - target) > 0.5) {
        const double gq = bisect_decreasing(quant, target, kGammaMin, kGammaMax, 60);
        if (std::abs(quant(gq) - target) < std::abs(quant(g) - target)) g = gq;
      }
    }
    res.gammas[c] = g;
    const auto lut = gamma_lut(g);
    const std::size_t count = static_cast<std::size_t>(image.width) * image.height;
    for (std::size_t i = 0; i < count; ++i) {
      std::uint8_t& p = res.image.pixels[i * 3 + c];
      p = lut[p];
    }
  }
  return res;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> rotate90(const Tensor<T>& t, int k) {
  k = ((k % 4) + 4) % 4;
  if (k == 0) return t;
  const Shape s = t.shape();
  const bool swap = k % 2 == 1;
  const Shape os{s.n, s.c, swap ? s.w : s.h, swap ? s.h : s.w};
  Tensor<T> out(os);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int i = 0; i < os.h; ++i)
        for (int j = 0; j < os.w; ++j) {
          int y, x;
          switch (k) {
            case 1: y = j; x = s.w - 1 - i; break;
            case 2: y = s.h - 1 - i; x = s.w - 1 - j; break;
            default: y = s.h - 1 - j; x = i; break;
          }
          out.at(n, c, i, j) = t.at(n, c, y, x);
        }
  return out;
}

template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& t) {
  const Shape s = t.shape();
  Tensor<T> out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) out.at(n, c, y, x) = t.at(n, c, y, s.w - 1 - x);
  return out;
}

template <typename T>
Tensor<T> flip_vertical(const Tensor<T>& t) {
  const Shape s = t.shape();
  Tensor<T> out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        std::copy_n(t.plane(n, c) + static_cast<std::size_t>(s.h - 1 - y) * s.w, s.w,
                    out.plane(n, c) + static_cast<std::size_t>(y) * s.w);
  return out;
}

template <typename T>
Tensor<T> crop_tensor(const Tensor<T>& t, int top, int left, int height, int width) {
  const Shape s = t.shape();
  if (top < 0 || left < 0 || height < 1 || width < 1 || top + height > s.h || left + width > s.w) {
    throw ShapeError("crop " + std::to_string(height) + "x" + std::to_string(width) + " at (" +
                     std::to_string(top) + ", " + std::to_string(left) + ") outside " + s.str());
  }
  Tensor<T> out(Shape{s.n, s.c, height, width});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < height; ++y)
        std::copy_n(t.plane(n, c) + static_cast<std::size_t>(top + y) * s.w + left, width,
                    out.plane(n, c) + static_cast<std::size_t>(y) * width);
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> augment(const Tensor<T>& hazy, const Tensor<T>& clean, int crop,
                                        Rng& rng) {
  if (!(hazy.shape() == clean.shape())) {
    throw ShapeError("augment: hazy " + hazy.shape().str() + " and clean " +
                     clean.shape().str() + " differ");
  }
  const Shape s = hazy.shape();
  if (crop < 1 || crop > std::min(s.h, s.w)) {
    throw ShapeError("augment: crop " + std::to_string(crop) + " exceeds image " + s.str());
  }
  const int top = rng.below(s.h - crop + 1);
  const int left = rng.below(s.w - crop + 1);
  const int k = rng.below(4);
  const bool hflip = rng.coin();
  const bool vflip = rng.coin();
  auto apply = [&](const Tensor<T>& t) {
    Tensor<T> out = rotate90(crop_tensor(t, top, left, crop, crop), k);
    if (hflip) out = flip_horizontal(out);
    if (vflip) out = flip_vertical(out);
    return out;
  };
  return {apply(hazy), apply(clean)};
}

// ---------------------------------------------------------------------------

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open manifest");
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected 'hazy<TAB>clean', got '" + line + "'");
    }
    auto resolve = [&](const std::string& p) {
      const std::filesystem::path fp(p);
      return fp.is_absolute() ? fp.string() : (base / fp).string();
    };
    entries.push_back({resolve(line.substr(0, tab)), resolve(line.substr(tab + 1))});
  }
  return entries;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries,
                    const std::string& header_comment) {
  std::ofstream out(path);
  if (!out) throw DataError(path + ": cannot open manifest for writing");
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  for (const auto& e : entries) out << e.hazy << "\t" << e.clean << "\n";
  if (!out) throw DataError(path + ": manifest write failed");
}

template <typename T>
PairDataset<T> PairDataset<T>::load(const std::string& manifest, bool strict) {
  PairDataset ds;
  for (const auto& e : read_manifest(manifest)) {
    try {
      const ImageU8 h = read_image(e.hazy);
      const ImageU8 c = read_image(e.clean);
      if (h.width != c.width || h.height != c.height) {
        throw DataError(e.hazy + ": size " + std::to_string(h.width) + "x" +
                        std::to_string(h.height) + " differs from its clean pair");
      }
      ds.pairs.push_back({std::filesystem::path(e.hazy).stem().string(), to_tensor<T>(h),
                          to_tensor<T>(c)});
    } catch (const DataError&) {
      if (strict) throw;
      ++ds.skipped;
    }
  }
  return ds;
}

template <typename T>
PairDataset<T> PairDataset<T>::synthetic(int count, int height, int width, FieldStyle style,
                                         std::uint64_t seed) {
  PairDataset ds;
  ds.seed = seed;
  ds.crop = std::min(height, width);
  for (int i = 0; i < count; ++i) {
    const auto idx = static_cast<std::uint64_t>(i);
    Tensor<T> clean = synthetic_scene<T>(height, width, mix_seed(seed, 2 * idx));
    const HazeField<T> field =
        make_nonhomogeneous_field<T>(height, width, mix_seed(seed, 2 * idx + 1), style);
    Tensor<T> hazy = asm_synthesize(clean, field);
    char name[32];
    std::snprintf(name, sizeof name, "synth_%04d", i);
    ds.pairs.push_back({name, std::move(hazy), std::move(clean)});
  }
  return ds;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> PairDataset<T>::sample_batch(std::int64_t step, int batch) const {
  if (pairs.empty()) throw DataError("dataset is empty");
  std::vector<Tensor<T>> hazy, clean;
  for (int j = 0; j < batch; ++j) {
    Rng rng(mix_seed(seed ^ 0xA55A5AA5ULL, static_cast<std::uint64_t>(step) * batch + j));
    const ImagePair<T>& p = pairs[rng.below(static_cast<int>(pairs.size()))];
    const Shape s = p.hazy.shape();
    const int size = std::min({crop, s.h, s.w});
    if (augment) {
      auto [h, c] = dehaze::augment(p.hazy, p.clean, size, rng);
      hazy.push_back(std::move(h));
      clean.push_back(std::move(c));
    } else {
      const int top = rng.below(s.h - size + 1), left = rng.below(s.w - size + 1);
      hazy.push_back(crop_tensor(p.hazy, top, left, size, size));
      clean.push_back(crop_tensor(p.clean, top, left, size, size));
    }
  }
  return {stack_batch(hazy), stack_batch(clean)};
}

template <typename T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& items) {
  if (items.empty()) throw ShapeError("stack_batch: no items");
  const Shape s = items.front().shape();
  Tensor<T> out(Shape{static_cast<int>(items.size()), s.c, s.h, s.w});
  std::size_t off = 0;
  for (const auto& t : items) {
    if (t.shape().n != 1 || t.shape().c != s.c || t.shape().h != s.h || t.shape().w != s.w) {
      throw ShapeError("stack_batch: item " + t.shape().str() + " differs from " + s.str());
    }
    std::copy(t.raw(), t.raw() + t.numel(), out.raw() + off);
    off += t.numel();
  }
  return out;
}

template <typename T>
Tensor<T> batch_item(const Tensor<T>& batch, int n) {
  const Shape s = batch.shape();
  if (n < 0 || n >= s.n) throw ShapeError("batch_item: index out of range for " + s.str());
  const std::size_t len = static_cast<std::size_t>(s.c) * s.plane();
  std::vector<T> data(batch.raw() + n * len, batch.raw() + (n + 1) * len);
  return Tensor<T>(Shape{1, s.c, s.h, s.w}, std::move(data));
}

#define DEHAZE_INSTANTIATE_DATA(T)                                                             \
  template struct HazeField<T>;                                                                \
  template HazeField<T> make_nonhomogeneous_field(int, int, std::uint64_t, FieldStyle,         \
                                                  const FieldParams&);                         \
  template Tensor<T> asm_synthesize(const Tensor<T>&, const HazeField<T>&);                    \
  template Tensor<T> synthetic_scene(int, int, std::uint64_t);                                 \
  template Tensor<T> rotate90(const Tensor<T>&, int);                                          \
  template Tensor<T> flip_horizontal(const Tensor<T>&);                                        \
  template Tensor<T> flip_vertical(const Tensor<T>&);                                          \
  template Tensor<T> crop_tensor(const Tensor<T>&, int, int, int, int);                        \
  template std::pair<Tensor<T>, Tensor<T>> augment(const Tensor<T>&, const Tensor<T>&, int,    \
                                                   Rng&);                                      \
  template struct PairDataset<T>;                                                              \
  template Tensor<T> stack_batch(const std::vector<Tensor<T>>&);                               \
  template Tensor<T> batch_item(const Tensor<T>&, int);

DEHAZE_INSTANTIATE_DATA(float)
DEHAZE_INSTANTIATE_DATA(double)

}  // namespace dehaze
