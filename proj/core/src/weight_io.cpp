#include "actlab/weight_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace actlab {
namespace {

constexpr std::array<char, 8> kMagic = {'A', 'C', 'T', 'L', 'A', 'B', 'W', 'T'};
constexpr std::size_t kHeaderBytes = 8 + 4 + 4 + 6 * 4 + 8;

std::uint64_t fnv1a(const std::vector<unsigned char>& bytes, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const char* p, std::size_t n) { bytes.insert(bytes.end(), p, p + n); }
  std::vector<unsigned char> bytes;

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
};

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& b) : bytes_(b) {}
  std::uint64_t get(int n) {
    if (pos_ + static_cast<std::size_t>(n) > bytes_.size()) throw WeightFileError("weight file is truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WeightFileError("cannot open weight file " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

WeightFileHeader parse_header(Reader& r, const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic.data(), 8) != 0) {
    throw WeightFileError("not a weight file (bad magic)");
  }
  r.get(4);
  r.get(4);
  WeightFileHeader h;
  h.version = r.u32();
  if (h.version != kWeightFormatVersion) {
    throw WeightFileError("unsupported weight file version " + std::to_string(h.version) + " (expected " +
                          std::to_string(kWeightFormatVersion) + ")");
  }
  h.precision_bits = static_cast<int>(r.u32());
  if (h.precision_bits != 32 && h.precision_bits != 64) {
    throw WeightFileError("unsupported element precision " + std::to_string(h.precision_bits));
  }
  h.config.d = static_cast<int>(r.u32());
  h.config.vocab = static_cast<int>(r.u32());
  h.config.n_layers = static_cast<int>(r.u32());
  h.config.n_heads = static_cast<int>(r.u32());
  h.config.max_context = static_cast<int>(r.u32());
  h.config.p_bits = static_cast<int>(r.u32());
  try {
    h.config.validate();
  } catch (const std::invalid_argument& e) {
    throw WeightFileError(std::string("weight file header: ") + e.what());
  }
  return h;
}

}  // namespace

template <typename T>
void save_weights(const std::filesystem::path& path, const Weights<T>& weights) {
  weights.config.validate();
  Writer w;
  w.raw(kMagic.data(), kMagic.size());
  w.u32(kWeightFormatVersion);
  w.u32(sizeof(T) * 8);
  const ModelConfig& c = weights.config;
  for (int v : {c.d, c.vocab, c.n_layers, c.n_heads, c.max_context, c.p_bits}) w.u32(static_cast<std::uint32_t>(v));
  w.u64(weights.parameter_count());
  weights.for_each_parameter([&](const Tensor<T>& t) {
    for (T v : t.data()) {
      if constexpr (sizeof(T) == 4) {
        w.f32(v);
      } else {
        w.f64(v);
      }
    }
  });
  w.u64(fnv1a(w.bytes, w.bytes.size()));

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw WeightFileError("cannot write weight file " + path.string());
    out.write(reinterpret_cast<const char*>(w.bytes.data()), static_cast<std::streamsize>(w.bytes.size()));
    if (!out) throw WeightFileError("failed writing weight file " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

WeightFileHeader read_weight_header(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  Reader r(bytes);
  return parse_header(r, bytes);
}

template <typename T>
Weights<T> load_weights(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  Reader r(bytes);
  const WeightFileHeader header = parse_header(r, bytes);
  Weights<T> weights = Weights<T>::initialize(header.config, 0);
  const std::uint64_t count = r.u64();
  if (count != weights.parameter_count()) {
    throw WeightFileError("weight file holds " + std::to_string(count) + " elements but its config needs " +
                          std::to_string(weights.parameter_count()));
  }
  const std::size_t elem = static_cast<std::size_t>(header.precision_bits / 8);
  const std::size_t expected = kHeaderBytes + count * elem + 8;
  if (bytes.size() < expected) throw WeightFileError("weight file is truncated");
  if (bytes.size() > expected) throw WeightFileError("weight file has trailing bytes");
  weights.for_each_parameter([&](Tensor<T>& t) {
    for (auto& v : t.data()) {
      if (header.precision_bits == 32) {
        v = static_cast<T>(std::bit_cast<float>(r.u32()));
      } else {
        v = static_cast<T>(std::bit_cast<double>(r.u64()));
      }
    }
  });
  const std::size_t payload_end = r.pos();
  if (r.u64() != fnv1a(bytes, payload_end)) throw WeightFileError("weight file checksum mismatch");
  if (!weights.all_finite()) throw WeightFileError("weight file contains non-finite values");
  return weights;
}

template void save_weights<float>(const std::filesystem::path&, const Weights<float>&);
template void save_weights<double>(const std::filesystem::path&, const Weights<double>&);
template Weights<float> load_weights<float>(const std::filesystem::path&);
template Weights<double> load_weights<double>(const std::filesystem::path&);

}  // namespace actlab
