#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace dehaze {

// On-disk layout, all integers little-endian:
//   "DFCK" | u32 version | u32 count |
//   count x { u16 name_len | name | u8 ndim | ndim x u32 dims | f32 data }
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  std::size_t numel() const;
};

void write_tensors(const std::string& path, const std::vector<NamedTensor>& tensors);

// Given the records read so far, the full list of names the file should hold.
using ExpectedNames = std::function<std::vector<std::string>(const std::vector<NamedTensor>&)>;

// Reads every record. A file that ends early raises DataError naming the
// record being read; with `expected`, the message also lists every tensor that
// was never reached.
std::vector<NamedTensor> read_tensors(const std::string& path, const ExpectedNames& expected = {});

}  // namespace dehaze
