#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "badpix/common.hpp"
#include "badpix/graph.hpp"

namespace badpix {

enum class ModelKind : std::uint32_t { unet = 1, mlp = 2, vit_ae = 3 };

/// 64-bit FNV-1a over a canonical config string; stored in checkpoint
/// headers so a loaded model can be matched against its build config.
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

inline void put_f32(std::ostream& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

inline std::uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw DataError(DataFault::malformed_header, path + ": truncated");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& in, const std::string& path) {
  const std::uint64_t lo = get_u32(in, path);
  const std::uint64_t hi = get_u32(in, path);
  return lo | (hi << 32);
}

inline float get_f32(std::istream& in, const std::string& path) {
  const std::uint32_t bits = get_u32(in, path);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

inline constexpr std::uint32_t kCheckpointMagic = 0x4b435042;  // "BPCK"
inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace detail

/// Versioned binary container: header {magic, version, model kind, config
/// digest}, then one named blob per parameter (shape + little-endian f32).
template <typename T>
void save_checkpoint(const Graph<T>& g, const std::string& path,
                     ModelKind kind, std::uint64_t config_digest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataFault::io_failure, "cannot write " + path);
  detail::put_u32(out, detail::kCheckpointMagic);
  detail::put_u32(out, detail::kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(kind));
  detail::put_u64(out, config_digest);
  detail::put_u32(out, static_cast<std::uint32_t>(g.params().size()));
  for (int id : g.params()) {
    const auto& n = g.node(id);
    detail::put_u32(out, static_cast<std::uint32_t>(n.name.size()));
    out.write(n.name.data(), static_cast<std::streamsize>(n.name.size()));
    detail::put_u32(out, static_cast<std::uint32_t>(n.val.shape.size()));
    for (int d : n.val.shape)
      detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (T x : n.val.v) detail::put_f32(out, static_cast<float>(x));
  }
  if (!out) throw DataError(DataFault::io_failure, "write failed: " + path);
}

struct CheckpointHeader {
  ModelKind kind;
  std::uint64_t config_digest;
};

/// Loads parameters into an already-built graph. Names, order and shapes
/// must match the graph exactly; the expected model kind is enforced.
template <typename T>
CheckpointHeader load_checkpoint(Graph<T>& g, const std::string& path,
                                 ModelKind expected_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataFault::io_failure, "cannot open " + path);
  if (detail::get_u32(in, path) != detail::kCheckpointMagic)
    throw DataError(DataFault::malformed_header, path + ": bad magic");
  const std::uint32_t version = detail::get_u32(in, path);
  if (version != detail::kCheckpointVersion)
    throw DataError(DataFault::malformed_header,
                    path + ": unsupported version " + std::to_string(version));
  CheckpointHeader hdr;
  hdr.kind = static_cast<ModelKind>(detail::get_u32(in, path));
  hdr.config_digest = detail::get_u64(in, path);
  if (hdr.kind != expected_kind)
    throw DataError(DataFault::bad_value,
                    path + ": checkpoint holds a different model kind");
  const std::uint32_t count = detail::get_u32(in, path);
  if (count != g.params().size())
    throw DataError(DataFault::dimension_mismatch,
                    path + ": parameter count mismatch");
  for (int id : g.params()) {
    auto& n = g.node(id);
    const std::uint32_t name_len = detail::get_u32(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in || name != n.name)
      throw DataError(DataFault::dimension_mismatch,
                      path + ": parameter '" + name + "' does not match '" +
                          n.name + "'");
    const std::uint32_t ndim = detail::get_u32(in, path);
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = static_cast<int>(detail::get_u32(in, path));
    if (shape != n.val.shape)
      throw DataError(DataFault::dimension_mismatch,
                      path + ": shape mismatch for '" + name + "'");
    for (auto& x : n.val.v) x = static_cast<T>(detail::get_f32(in, path));
  }
  return hdr;
}

}  // namespace badpix
