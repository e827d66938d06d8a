#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dehaze/data.hpp"

using namespace dehaze;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dehaze_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

double variance(const Tensor<double>& t) {
  double s = 0, s2 = 0;
  for (double v : t.storage()) {
    s += v;
    s2 += v * v;
  }
  const double n = static_cast<double>(t.numel());
  return s2 / n - (s / n) * (s / n);
}

ImageU8 random_image(int w, int h, Rng& rng, int lo = 0, int hi = 256) {
  ImageU8 img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(lo + rng.below(hi - lo));
  return img;
}

double channel_mean(const ImageU8& img, int c) {
  double s = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) s += img.at(x, y, c);
  return s / (img.width * img.height);
}

}  // namespace

TEST_CASE("haze field construction") {
  const Tensor<double> beta(Shape{1, 1, 4, 4}, 0.5), depth(Shape{1, 1, 4, 4}, 2.0);
  const auto f = HazeField<double>::from_components(beta, depth, {1, 1, 1});
  for (double t : f.transmission.storage()) CHECK(t == std::exp(-1.0));
  auto broken = f;
  broken.transmission.fill(0.9);
  CHECK_THROWS_AS(broken.validate(), ShapeError);
}

TEST_CASE("atmospheric scattering synthesis") {
  Rng rng(1);
  const auto clean = Tensor<double>::uniform(Shape{1, 3, 8, 8}, rng, 0, 1);
  const Tensor<double> depth(Shape{1, 1, 8, 8}, 1.0);

  const auto none = HazeField<double>::from_components(Tensor<double>(Shape{1, 1, 8, 8}), depth, {0.9, 0.8, 0.7});
  CHECK(max_abs_diff(asm_synthesize(clean, none), clean) == 0.0);

  const auto dense = HazeField<double>::from_components(Tensor<double>(Shape{1, 1, 8, 8}, 10.0), depth, {0.9, 0.8, 0.7});
  const auto hazy = asm_synthesize(clean, dense);
  for (int c = 0; c < 3; ++c)
    for (int h = 0; h < 8; ++h) CHECK(std::abs(hazy.at(0, c, h, 3) - dense.airlight[c]) < 1e-3);

  HazeField<double> quarter;
  quarter.transmission = Tensor<double>(Shape{1, 1, 2, 2}, 0.25);
  quarter.beta = Tensor<double>(Shape{1, 1, 2, 2}, std::log(4.0));
  quarter.depth = Tensor<double>(Shape{1, 1, 2, 2}, 1.0);
  const auto half = asm_synthesize(Tensor<double>(Shape{1, 3, 2, 2}, 0.5), quarter);
  for (double v : half.storage()) CHECK(v == doctest::Approx(0.875).epsilon(1e-15));

  CHECK_THROWS_AS(asm_synthesize(Tensor<double>(Shape{1, 3, 4, 4}), quarter), ShapeError);
}

TEST_CASE("lower transmission moves the hazy image towards the airlight") {
  Rng rng(2);
  const auto clean = Tensor<double>::uniform(Shape{1, 3, 6, 6}, rng, 0, 1);
  const Tensor<double> depth(Shape{1, 1, 6, 6}, 1.0);
  const std::array<double, 3> air{0.95, 0.9, 0.85};
  const auto thin = asm_synthesize(clean, HazeField<double>::from_components(Tensor<double>(Shape{1, 1, 6, 6}, 0.3), depth, air));
  const auto thick = asm_synthesize(clean, HazeField<double>::from_components(Tensor<double>(Shape{1, 1, 6, 6}, 1.2), depth, air));
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 36; ++i) {
      const double a = air[c];
      CHECK(std::abs(thick.at(0, c, i / 6, i % 6) - a) <= std::abs(thin.at(0, c, i / 6, i % 6) - a));
      CHECK((thick.at(0, c, i / 6, i % 6) >= 0 && thick.at(0, c, i / 6, i % 6) <= 1));
    }
}

TEST_CASE("synthetic fields") {
  const auto h = make_nonhomogeneous_field<double>(16, 16, 3, FieldStyle::homogeneous);
  for (double b : h.beta.storage()) CHECK(b == h.beta.raw()[0]);

  const auto a = make_nonhomogeneous_field<double>(24, 20, 5, FieldStyle::blobs);
  const auto b = make_nonhomogeneous_field<double>(24, 20, 5, FieldStyle::blobs);
  CHECK(max_abs_diff(a.transmission, b.transmission) == 0.0);
  CHECK(a.airlight == b.airlight);
  a.validate();

  double v_blobs = 0, v_homog = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    v_blobs += variance(make_nonhomogeneous_field<double>(64, 64, seed, FieldStyle::blobs).transmission);
    v_homog += variance(make_nonhomogeneous_field<double>(64, 64, seed, FieldStyle::homogeneous).transmission);
  }
  CHECK(v_blobs >= 10 * v_homog);
  CHECK(variance(make_nonhomogeneous_field<double>(64, 64, 1, FieldStyle::bands).beta) > 0);
  CHECK(parse_field_style("bands") == FieldStyle::bands);
  CHECK_THROWS_AS(parse_field_style("fog"), DataError);
}

TEST_CASE("gamma harmonization") {
  ImageU8 flat(8, 8);
  for (auto& p : flat.pixels) p = 64;
  const auto r = gamma_harmonize(flat, {128, 128, 128});
  for (int c = 0; c < 3; ++c) {
    CHECK(std::abs(r.gammas[c] - std::log(128.0 / 255) / std::log(64.0 / 255)) < 1e-3);
    CHECK(std::abs(r.gammas[c] - 0.4986) < 1e-3);
  }

  Rng rng(3);
  const ImageU8 img = random_image(20, 15, rng);
  const std::array<double, 3> own{channel_mean(img, 0), channel_mean(img, 1), channel_mean(img, 2)};
  const auto fixed = gamma_harmonize(img, own);
  for (int c = 0; c < 3; ++c) CHECK(std::abs(fixed.gammas[c] - 1.0) < 1e-3);
  CHECK(fixed.image == img);

  for (int trial = 0; trial < 20; ++trial) {
    const ImageU8 im = random_image(16, 16, rng, 1, 255);
    const std::array<double, 3> t{rng.uniform(40, 215), rng.uniform(40, 215), rng.uniform(40, 215)};
    const auto out = gamma_harmonize(im, t);
    for (int c = 0; c < 3; ++c) CHECK(std::abs(channel_mean(out.image, c) - t[c]) <= 0.5);
    CHECK_FALSE(out.warning());
    // Larger target, smaller gamma.
    const auto up = gamma_harmonize(im, {t[0] + 10, t[1] + 10, t[2] + 10});
    for (int c = 0; c < 3; ++c) CHECK(up.gammas[c] < out.gammas[c]);
  }

  ImageU8 black(4, 4);
  const auto dark = gamma_harmonize(black, {100, 100, 100});
  CHECK(dark.warning());
  CHECK(gamma_mean(flat, 0, 1.0) == doctest::Approx(64.0));
}

TEST_CASE("geometric transforms") {
  Rng rng(4);
  const auto t = Tensor<double>::uniform(Shape{1, 3, 5, 7}, rng, 0, 1);
  CHECK(max_abs_diff(rotate90(rotate90(t, 2), 2), t) == 0.0);
  CHECK(rotate90(t, 1).shape() == Shape{1, 3, 7, 5});
  CHECK(rotate90(t, 1).at(0, 0, 0, 0) == t.at(0, 0, 0, 6));
  CHECK(max_abs_diff(flip_horizontal(flip_horizontal(t)), t) == 0.0);
  CHECK(flip_vertical(t).at(0, 1, 0, 2) == t.at(0, 1, 4, 2));
  CHECK(crop_tensor(t, 1, 2, 3, 4).at(0, 2, 0, 0) == t.at(0, 2, 1, 2));
}

TEST_CASE("augmentation") {
  Rng rng(5);
  const auto x = Tensor<double>::uniform(Shape{1, 3, 12, 10}, rng, 0, 1);
  const auto y = Tensor<double>::uniform(Shape{1, 3, 12, 10}, rng, 0, 1);
  Rng r1(9), r2(9);
  const auto a = augment(x, y, 6, r1);
  const auto b = augment(x, y, 6, r2);
  CHECK(max_abs_diff(a.first, b.first) == 0.0);
  CHECK(max_abs_diff(a.second, b.second) == 0.0);
  CHECK(a.first.shape() == Shape{1, 3, 6, 6});
  for (int i = 0; i < 10; ++i) {
    const auto same = augment(x, x, 8, rng);
    CHECK(max_abs_diff(same.first, same.second) == 0.0);
  }
  CHECK_THROWS_AS(augment(x, y, 11, rng), ShapeError);
}

TEST_CASE("image io") {
  const fs::path dir = scratch("io");
  Rng rng(6);
  const ImageU8 img = random_image(7, 5, rng);
  write_image((dir / "a.ppm").string(), img);
  CHECK(read_image((dir / "a.ppm").string()) == img);
  write_image((dir / "a.png").string(), img);
  CHECK(read_image((dir / "a.png").string()) == img);

  const auto t = Tensor<double>::uniform(Shape{1, 3, 5, 7}, rng, -0.2, 1.2);
  const auto back = to_tensor<double>(from_tensor(t));
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const double c = std::clamp(t.raw()[i], 0.0, 1.0);
    CHECK(std::abs(back.raw()[i] - c) <= 1.0 / 510 + 1e-12);
  }
  Tensor<double> halfway(Shape{1, 3, 1, 1}, 0.5 / 255);
  CHECK(from_tensor(halfway).pixels[0] == 1);

  // Minimal 16-bit RGB PNG: signature + IHDR with bit depth 16 is enough
  // for the header check to reject it.
  const unsigned char png16[] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a, 0, 0, 0, 13, 'I', 'H', 'D', 'R',
                                 0, 0, 0, 1, 0, 0, 0, 1, 16, 2, 0, 0, 0, 0x47, 0xbd, 0x6a, 0x77};
  {
    std::ofstream f(dir / "deep.png", std::ios::binary);
    f.write(reinterpret_cast<const char*>(png16), sizeof png16);
  }
  CHECK_THROWS_AS(read_image((dir / "deep.png").string()), DataError);
  {
    std::ofstream f(dir / "junk.ppm");
    f << "P3\n1 1\n255\n0 0 0\n";
  }
  CHECK_THROWS_AS(read_image((dir / "junk.ppm").string()), DataError);
  CHECK_THROWS_AS(read_image((dir / "missing.png").string()), DataError);
}

TEST_CASE("manifests and datasets") {
  const fs::path dir = scratch("manifest");
  Rng rng(7);
  for (int i = 0; i < 3; ++i) {
    write_image((dir / ("h" + std::to_string(i) + ".png")).string(), random_image(16, 12, rng));
    write_image((dir / ("c" + std::to_string(i) + ".png")).string(), random_image(16, 12, rng));
  }
  write_image((dir / "odd.png").string(), random_image(8, 8, rng));
  {
    std::ofstream f(dir / "m.txt");
    f << "# pairs\n\nh0.png\tc0.png\nh1.png\tc1.png\nh2.png\todd.png\nh2.png\tnope.png\n";
  }
  const auto entries = read_manifest((dir / "m.txt").string());
  CHECK(entries.size() == 4);
  CHECK(fs::path(entries[0].hazy).is_absolute());

  const auto ds = PairDataset<float>::load((dir / "m.txt").string());
  CHECK(ds.size() == 2);
  CHECK(ds.skipped == 2);
  CHECK_THROWS_AS(PairDataset<float>::load((dir / "m.txt").string(), true), DataError);

  write_manifest((dir / "w.txt").string(), {{"a.png", "b.png"}}, "note");
  const auto w = read_manifest((dir / "w.txt").string());
  REQUIRE(w.size() == 1);
  CHECK(fs::path(w[0].clean).filename() == "b.png");
}

TEST_CASE("synthetic dataset and batches") {
  const auto a = PairDataset<float>::synthetic(3, 32, 32, FieldStyle::blobs, 0);
  const auto b = PairDataset<float>::synthetic(3, 32, 32, FieldStyle::blobs, 0);
  REQUIRE(a.size() == 3);
  CHECK(a.pairs[1].name == "synth_0001");
  CHECK(max_abs_diff(a.pairs[2].hazy, b.pairs[2].hazy) == 0.0f);
  auto crops = a;
  crops.crop = 16;
  const auto [hz, cl] = crops.sample_batch(5, 4);
  CHECK(hz.shape() == Shape{4, 3, 16, 16});
  const auto [hz2, cl2] = crops.sample_batch(5, 4);
  CHECK(max_abs_diff(hz, hz2) == 0.0f);
  CHECK(max_abs_diff(batch_item(stack_batch<float>({a.pairs[0].clean, a.pairs[1].clean}), 1), a.pairs[1].clean) == 0.0f);
}
