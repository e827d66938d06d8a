#include "dehaze/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "dehaze/error.hpp"

namespace dehaze {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

std::size_t NamedTensor::numel() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

namespace {

template <typename U>
void put(std::ofstream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename U>
bool get(std::ifstream& in, U& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return in.gcount() == static_cast<std::streamsize>(sizeof v);
}

std::string missing_list(const std::vector<std::string>& expected,
                         const std::vector<NamedTensor>& read) {
  std::set<std::string> have;
  for (const auto& t : read) have.insert(t.name);
  std::string out;
  std::size_t shown = 0, missing = 0;
  for (const auto& e : expected) {
    if (have.count(e)) continue;
    ++missing;
    if (shown < 8) {
      out += (shown ? ", " : "") + e;
      ++shown;
    }
  }
  if (missing > shown) out += ", ... (" + std::to_string(missing) + " total)";
  return out;
}

}  // namespace

void write_tensors(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot open checkpoint for writing");
  out.write("DFCK", 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > 0xFFFF) throw DataError("checkpoint: tensor name too long: " + t.name);
    if (t.dims.size() > 0xFF) throw DataError("checkpoint: too many dims for " + t.name);
    if (t.numel() != t.data.size()) throw DataError("checkpoint: dims/data mismatch for " + t.name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) put<std::uint32_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  if (!out) throw DataError(path + ": checkpoint write failed");
}

std::vector<NamedTensor> read_tensors(const std::string& path, const ExpectedNames& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open checkpoint");
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "DFCK", 4) != 0) {
    throw DataError(path + ": not a checkpoint (bad magic)");
  }
  std::uint32_t version = 0, count = 0;
  if (!get(in, version)) throw DataError(path + ": truncated checkpoint header");
  if (version != kCheckpointVersion) {
    throw DataError(path + ": checkpoint format version " + std::to_string(version) +
                    " is not supported (this build reads version " +
                    std::to_string(kCheckpointVersion) +
                    "); re-save it with a matching build or convert it to version " +
                    std::to_string(kCheckpointVersion) + " first");
  }
  if (!get(in, count)) throw DataError(path + ": truncated checkpoint header");

  std::vector<NamedTensor> tensors;
  auto truncated = [&](const std::string& where) {
    std::string msg = path + ": checkpoint truncated " + where;
    if (expected) {
      try {
        const std::string missing = missing_list(expected(tensors), tensors);
        if (!missing.empty()) msg += "; missing tensors: " + missing;
      } catch (const std::exception&) {
        // Not enough metadata survived to know what else was expected.
      }
    }
    return DataError(msg);
  };
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    std::uint16_t len = 0;
    if (!get(in, len)) throw truncated("before record " + std::to_string(i));
    t.name.resize(len);
    in.read(t.name.data(), len);
    if (in.gcount() != len) throw truncated("inside the name of record " + std::to_string(i));
    std::uint8_t ndim = 0;
    if (!get(in, ndim)) throw truncated("in tensor '" + t.name + "'");
    t.dims.resize(ndim);
    for (auto& d : t.dims) {
      if (!get(in, d)) throw truncated("in tensor '" + t.name + "'");
    }
    t.data.resize(t.numel());
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(t.data.size() * sizeof(float))) {
      throw truncated("in the data of tensor '" + t.name + "'");
    }
    tensors.push_back(std::move(t));
  }
  return tensors;
}

}  // namespace dehaze
