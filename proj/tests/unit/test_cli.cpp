#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dehaze/image_io.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr folded into stdout.
Run cli(const std::string& args) {
  const std::string cmd = std::string("\"") + DEHAZE_CLI + "\" " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), p)) r.out += buf.data();
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dehaze_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST_CASE("usage errors exit 1") {
  CHECK(cli("").code == 1);
  CHECK(cli("frobnicate").code == 1);
  CHECK(cli("synth").code == 1);
  CHECK(cli("describe --variant 5").code == 1);
  CHECK(cli("--help").code == 0);
}

TEST_CASE("synth writes pairs and a tagged manifest, deterministically") {
  const fs::path a = scratch("synth_a"), b = scratch("synth_b");
  REQUIRE(cli("synth --out " + q(a) + " --count 4 --size 32x40 --seed 0").code == 0);
  REQUIRE(cli("synth --out " + q(b) + " --count 4 --size 32x40 --seed 0").code == 0);
  int images = 0;
  for (const auto& e : fs::directory_iterator(a)) images += e.path().extension() == ".png";
  CHECK(images == 8);
  const std::string manifest = slurp(a / "manifest.txt");
  CHECK(manifest.find("style=blobs") != std::string::npos);
  int lines = 0;
  std::istringstream in(manifest);
  for (std::string l; std::getline(in, l);) lines += !l.empty() && l[0] != '#';
  CHECK(lines == 4);
  for (const char* f : {"hazy_0002.png", "clean_0003.png", "manifest.txt"}) CHECK(slurp(a / f) == slurp(b / f));
  CHECK(dehaze::read_image((a / "hazy_0000.png").string()).height == 32);

  const fs::path h = scratch("synth_h");
  REQUIRE(cli("synth --out " + q(h) + " --count 1 --style homogeneous").code == 0);
  CHECK(slurp(h / "manifest.txt").find("style=homogeneous") != std::string::npos);
  CHECK(cli("synth --out " + q(h) + " --size 0x4").code == 1);
}

TEST_CASE("config files: flags override, unknown keys are listed") {
  const fs::path d = scratch("config");
  {
    std::ofstream f(d / "synth.cfg");
    f << "# defaults\ncount = 2\nsize=16x16\nseed=3\n";
  }
  REQUIRE(cli("synth --config " + q(d / "synth.cfg") + " --out " + q(d / "o") + " --count 1").code == 0);
  CHECK(fs::exists(d / "o" / "hazy_0000.png"));
  CHECK_FALSE(fs::exists(d / "o" / "hazy_0001.png"));
  {
    std::ofstream f(d / "bad.cfg");
    f << "colour=red\n";
  }
  const Run r = cli("synth --config " + q(d / "bad.cfg") + " --out " + q(d / "o"));
  CHECK(r.code == 1);
  CHECK(r.out.find("colour") != std::string::npos);
  CHECK(r.out.find("count") != std::string::npos);
  CHECK(cli("synth --config " + q(d / "missing.cfg") + " --out " + q(d / "o")).code == 2);
}

TEST_CASE("identity dehaze with tiling reproduces the input") {
  const fs::path d = scratch("dehaze");
  REQUIRE(cli("synth --out " + q(d) + " --count 1 --size 40x56").code == 0);
  REQUIRE(cli("dehaze --model identity --in " + q(d / "hazy_0000.png") + " --out " + q(d / "o.png") +
              " --tile 16x24 --grid 3x3").code == 0);
  CHECK(dehaze::read_image((d / "o.png").string()) == dehaze::read_image((d / "hazy_0000.png").string()));
  CHECK(cli("dehaze --model identity --in " + q(d / "hazy_0000.png") + " --out " + q(d / "o.png") +
            " --tile 8x8 --grid 2x2").code == 1);
  CHECK(cli("dehaze --model identity --in " + q(d / "nothing.png") + " --out " + q(d / "o.png")).code == 2);
  CHECK(cli("dehaze --model " + q(d / "nothing.dfck") + " --in " + q(d / "hazy_0000.png") + " --out " +
            q(d / "o.png")).code == 2);
}

TEST_CASE("eval reports per-image metrics") {
  const fs::path d = scratch("eval");
  REQUIRE(cli("synth --out " + q(d) + " --count 2 --size 32x32").code == 0);
  const Run r = cli("eval --model identity --data " + q(d / "manifest.txt"));
  CHECK(r.code == 0);
  CHECK(r.out.find("hazy_0001\tPSNR=") != std::string::npos);
  CHECK(r.out.find("mean\tPSNR=") != std::string::npos);
}

TEST_CASE("harmonize reports the closed-form gamma") {
  const fs::path d = scratch("harmonize");
  dehaze::ImageU8 img(6, 6);
  for (auto& p : img.pixels) p = 64;
  dehaze::write_image((d / "flat.png").string(), img);
  const Run r = cli("harmonize --in " + q(d / "flat.png") + " --targets 128,128,128 --out " + q(d / "out"));
  CHECK(r.code == 0);
  CHECK(r.out.find("gamma_r=0.4986") != std::string::npos);
  CHECK(fs::exists(d / "out" / "flat.png"));
  CHECK(cli("harmonize --in " + q(d / "flat.png") + " --targets 1,2 --out " + q(d / "out")).code == 1);
}

TEST_CASE("describe matches the golden topology") {
  const Run r = cli("describe --preset toy");
  CHECK(r.code == 0);
  CHECK(r.out == slurp(DEHAZE_GOLDEN_DIR "/describe_toy.txt"));
}

TEST_CASE("selftest passes") {
  const Run r = cli("selftest");
  INFO(r.out);
  CHECK(r.code == 0);
  CHECK(r.out.find("selftest passed") != std::string::npos);
}

TEST_CASE("train, resume and evaluate a checkpoint") {
  const fs::path d = scratch("train");
  REQUIRE(cli("synth --out " + q(d) + " --count 2 --size 32x32").code == 0);
  const std::string data = " --data " + q(d / "manifest.txt") + " --crop 32 --ms-ssim-scales 2 --batch 1";
  REQUIRE(cli("train" + data + " --steps 2 --out " + q(d / "m.dfck")).code == 0);
  CHECK(fs::exists(d / "m.dfck"));
  const std::string log = slurp(d / "m.dfck.csv");
  CHECK(log.rfind("step,lr,l1,msssim,perc,adv,total,psnr_eval\n1,", 0) == 0);

  REQUIRE(cli("train" + data + " --steps 1 --resume " + q(d / "m.dfck") + " --out " + q(d / "m.dfck")).code == 0);
  const std::string resumed = slurp(d / "m.dfck.csv");
  CHECK(resumed.find("\n3,") != std::string::npos);
  CHECK(resumed.find("step,", 1) == std::string::npos);

  const Run e = cli("eval --model " + q(d / "m.dfck") + " --data " + q(d / "manifest.txt"));
  CHECK(e.code == 0);
  CHECK(e.out.find("mean\tPSNR=") != std::string::npos);
  CHECK(cli("train --data " + q(d / "absent.txt") + " --steps 1").code == 2);
}

TEST_CASE("non-finite training exits 3 and keeps a checkpoint") {
  const fs::path d = scratch("nan");
  REQUIRE(cli("synth --out " + q(d) + " --count 1 --size 32x32").code == 0);
  const Run r = cli("train --data " + q(d / "manifest.txt") + " --crop 32 --ms-ssim-scales 2 --batch 1 --steps 2 --lr 1e300 --out " +
                    q(d / "m.dfck"));
  INFO(r.out);
  CHECK(r.code == 3);
  CHECK(fs::exists(d / "m.dfck"));
}
