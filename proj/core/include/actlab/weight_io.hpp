#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>

#include "actlab/model.hpp"

namespace actlab {

// Weight file layout, all integers little-endian:
//   8 bytes   magic "ACTLABWT"
//   u32       format version (kWeightFormatVersion)
//   u32       element precision in bits (32 or 64)
//   u32 x 6   d, vocab, n_layers, n_heads, max_context, p_bits
//   u64       number of parameter elements that follow
//   elements  IEEE-754 values of every parameter, in Weights::for_each_parameter order
//   u64       FNV-1a checksum of every preceding byte
inline constexpr std::uint32_t kWeightFormatVersion = 1;

class WeightFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct WeightFileHeader {
  std::uint32_t version = 0;
  int precision_bits = 0;
  ModelConfig config;
};

template <typename T>
void save_weights(const std::filesystem::path& path, const Weights<T>& weights);

/// Loads a weight file into element type T. A 64-bit file read as float is
/// narrowed element-wise with round-to-nearest; a 32-bit file read as double
/// is widened exactly.
template <typename T>
Weights<T> load_weights(const std::filesystem::path& path);

WeightFileHeader read_weight_header(const std::filesystem::path& path);

}  // namespace actlab
