#include "dehaze/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dehaze/error.hpp"

namespace dehaze {

namespace {

bool has_suffix(const std::string& s, const std::string& suffix) {
  if (s.size() < suffix.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), s.rbegin(),
                    [](char a, char b) { return std::tolower(a) == std::tolower(b); });
}

ImageU8 read_png(const std::string& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw DataError(path + ": cannot read PNG: " + img.message);
  }
  if (img.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&img);
    throw DataError(path + ": 16-bit PNG is not supported (need 8 bits per channel)");
  }
  if (img.format & PNG_FORMAT_FLAG_ALPHA) {
    png_image_free(&img);
    throw DataError(path + ": PNG with an alpha channel is not supported (need RGB)");
  }
  img.format = PNG_FORMAT_RGB;
  ImageU8 out(static_cast<int>(img.width), static_cast<int>(img.height));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw DataError(path + ": PNG decode failed: " + msg);
  }
  return out;
}

void write_png(const std::string& path, const ImageU8& image) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw DataError(path + ": cannot write PNG: " + img.message);
  }
}

// Next whitespace-delimited header token, skipping '#' comments.
std::string ppm_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

ImageU8 read_ppm(const std::string& path, std::istream& in) {
  const std::string magic = ppm_token(in);
  if (magic != "P6") throw DataError(path + ": not a binary PPM (P6)");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(ppm_token(in));
    h = std::stoi(ppm_token(in));
    maxval = std::stoi(ppm_token(in));
  } catch (const std::exception&) {
    throw DataError(path + ": malformed PPM header");
  }
  if (w <= 0 || h <= 0) throw DataError(path + ": invalid PPM dimensions");
  if (maxval != 255) {
    throw DataError(path + ": PPM maxval " + std::to_string(maxval) + " unsupported (need 255)");
  }
  ImageU8 out(w, h);
  in.read(reinterpret_cast<char*>(out.pixels.data()), static_cast<std::streamsize>(out.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(out.pixels.size())) {
    throw DataError(path + ": truncated PPM pixel data");
  }
  return out;
}

}  // namespace

ImageU8 read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open");
  unsigned char sig[8] = {};
  in.read(reinterpret_cast<char*>(sig), 8);
  if (in.gcount() == 8 && png_sig_cmp(sig, 0, 8) == 0) {
    in.close();
    return read_png(path);
  }
  in.clear();
  in.seekg(0);
  if (sig[0] == 'P' && sig[1] == '6') return read_ppm(path, in);
  throw DataError(path + ": unrecognized image format (expected PNG or binary PPM)");
}

void write_image(const std::string& path, const ImageU8& image) {
  if (image.width <= 0 || image.height <= 0 ||
      image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * 3) {
    throw DataError(path + ": image buffer does not match its dimensions");
  }
  if (has_suffix(path, ".png")) {
    write_png(path, image);
    return;
  }
  if (has_suffix(path, ".ppm")) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(path + ": cannot open for writing");
    out << "P6\n" << image.width << " " << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()),
              static_cast<std::streamsize>(image.pixels.size()));
    if (!out) throw DataError(path + ": write failed");
    return;
  }
  throw DataError(path + ": unknown image extension (use .png or .ppm)");
}

template <typename T>
Tensor<T> to_tensor(const ImageU8& image) {
  Tensor<T> t(Shape{1, 3, image.height, image.width});
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c) t.at(0, c, y, x) = static_cast<T>(image.at(x, y, c)) / T(255);
  return t;
}

template <typename T>
ImageU8 from_tensor(const Tensor<T>& t, int n) {
  const Shape s = t.shape();
  if (s.c != 3) throw ShapeError("from_tensor: expected 3 channels, got " + s.str());
  if (n < 0 || n >= s.n) throw ShapeError("from_tensor: batch index out of range");
  ImageU8 img(s.w, s.h);
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(static_cast<double>(t.at(n, c, y, x)), 0.0, 1.0);
        img.at(x, y, c) = static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
      }
  return img;
}

template Tensor<float> to_tensor(const ImageU8&);
template Tensor<double> to_tensor(const ImageU8&);
template ImageU8 from_tensor(const Tensor<float>&, int);
template ImageU8 from_tensor(const Tensor<double>&, int);

}  // namespace dehaze
