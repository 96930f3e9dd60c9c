#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "badpix/common.hpp"
#include "badpix/image.hpp"
#include "badpix/rng.hpp"

namespace badpix {

enum class DefectKind { deviation, dead, hot };

inline DefectKind defect_kind_from_string(const std::string& s) {
  if (s == "deviation") return DefectKind::deviation;
  if (s == "dead") return DefectKind::dead;
  if (s == "hot") return DefectKind::hot;
  throw ConfigError("unknown defect kind '" + s + "'");
}

inline const char* to_string(DefectKind k) {
  switch (k) {
    case DefectKind::deviation: return "deviation";
    case DefectKind::dead: return "dead";
    case DefectKind::hot: return "hot";
  }
  return "?";
}

struct DefectSpec {
  double rate = 0.0;          // fraction of pixels in [0,1]
  double delta = 0.7;         // minimum normalized deviation, (0,1]
  DefectKind kind = DefectKind::deviation;
  std::uint64_t seed = 0;
};

/// Per-pixel boolean defect mask. true = defective.
struct DefectMap {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> mask;

  DefectMap() = default;
  DefectMap(int w, int h) : width(w), height(h) {
    if (w <= 0 || h <= 0)
      throw DataError(DataFault::dimension_mismatch, "non-positive map dims");
    mask.assign(static_cast<std::size_t>(w) * h, 0);
  }

  bool at(int r, int c) const {
    return mask[static_cast<std::size_t>(r) * width + c] != 0;
  }
  void set(int r, int c, bool bad = true) {
    mask[static_cast<std::size_t>(r) * width + c] = bad ? 1 : 0;
  }
  std::int64_t defect_count() const {
    std::int64_t n = 0;
    for (auto m : mask) n += m;
    return n;
  }
  std::int64_t pixel_count() const {
    return static_cast<std::int64_t>(width) * height;
  }
  bool same_dims(const DefectMap& o) const {
    return width == o.width && height == o.height;
  }
};

/// Exactly round(rate*W*H) defective pixels, uniform without replacement.
inline DefectMap sample_defect_map(int width, int height, double rate,
                                   std::uint64_t seed) {
  if (rate < 0.0 || rate > 1.0)
    throw DataError(DataFault::bad_value,
                    "rate must be in [0,1], got " + std::to_string(rate));
  DefectMap map(width, height);
  const std::int64_t n = map.pixel_count();
  const std::int64_t k = std::llround(rate * static_cast<double>(n));
  if (k == 0) return map;
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  Rng rng = make_rng(derive_seed(seed, 0xDE7EC7));
  // Partial Fisher-Yates: the first k slots are the sample.
  for (std::int64_t i = 0; i < k; ++i) {
    const std::int64_t j = uniform_int(rng, i, n - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    map.mask[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = 1;
  }
  return map;
}

/// Contiguous square defect cluster with its top-left corner at (row, col).
inline DefectMap make_cluster_map(int width, int height, int cluster_size,
                                  int top_row, int top_col) {
  if (cluster_size <= 0)
    throw DataError(DataFault::bad_value, "cluster size must be positive");
  if (top_row < 0 || top_col < 0 || top_row + cluster_size > height ||
      top_col + cluster_size > width)
    throw DataError(DataFault::out_of_bounds, "cluster outside frame");
  DefectMap map(width, height);
  for (int r = 0; r < cluster_size; ++r)
    for (int c = 0; c < cluster_size; ++c)
      map.set(top_row + r, top_col + c);
  return map;
}

namespace detail {

/// Draws a corrupted value for one pixel: uniform over the feasible set
/// {[0, orig-delta] U [orig+delta, 1]}. When the set is empty the value
/// saturates to the boundary farther from orig, ties broken upward.
inline double inject_deviation_value(double orig, double delta, Rng& rng) {
  const double lo_len = std::max(0.0, orig - delta);
  const double hi_len = std::max(0.0, 1.0 - (orig + delta));
  const double total = lo_len + hi_len;
  if (total <= 0.0) return (orig <= 0.5) ? 1.0 : 0.0;
  const double u = uniform01(rng) * total;
  if (u < lo_len) return u;
  return (orig + delta) + (u - lo_len);
}

}  // namespace detail

/// Applies the defect model at every masked pixel; all other pixels are
/// bit-identical. Deterministic in spec.seed.
inline BayerImage inject(const BayerImage& img, const DefectMap& map,
                         const DefectSpec& spec) {
  if (map.width != img.width || map.height != img.height)
    throw DataError(DataFault::dimension_mismatch,
                    "defect map dims do not match image");
  if (spec.delta <= 0.0 || spec.delta > 1.0)
    throw DataError(DataFault::bad_value,
                    "delta must be in (0,1], got " + std::to_string(spec.delta));
  BayerImage out = img;
  Rng rng = make_rng(derive_seed(spec.seed, 0x1117EC7));
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      if (!map.at(r, c)) continue;
      switch (spec.kind) {
        case DefectKind::dead: out.at(r, c) = 0.0f; break;
        case DefectKind::hot: out.at(r, c) = 1.0f; break;
        case DefectKind::deviation:
          out.at(r, c) = static_cast<float>(
              detail::inject_deviation_value(img.at(r, c), spec.delta, rng));
          break;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// DefectMap serialization: PGM (0 = good, 255 = bad) and "row col" text.
// ---------------------------------------------------------------------------

inline void save_map_pgm(const DefectMap& map, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataFault::io_failure, "cannot write " + path);
  out << "P5\n" << map.width << " " << map.height << "\n255\n";
  for (auto m : map.mask) out.put(m ? static_cast<char>(255) : 0);
  if (!out) throw DataError(DataFault::io_failure, "write failed: " + path);
}

inline DefectMap load_map_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataFault::io_failure, "cannot open " + path);
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || m1 != '5')
    throw DataError(DataFault::malformed_header, path + ": not a P5 PGM");
  const int w = detail::pgm_read_int(in);
  const int h = detail::pgm_read_int(in);
  const int maxval = detail::pgm_read_int(in);
  if (maxval != 255)
    throw DataError(DataFault::malformed_header,
                    path + ": defect map PGM must have maxval 255");
  in.get();
  DefectMap map(w, h);
  for (std::size_t i = 0; i < map.mask.size(); ++i) {
    const int ch = in.get();
    if (ch == EOF)
      throw DataError(DataFault::dimension_mismatch, path + ": short raster");
    map.mask[i] = (ch != 0) ? 1 : 0;
  }
  return map;
}

inline void save_map_coords(const DefectMap& map, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError(DataFault::io_failure, "cannot write " + path);
  for (int r = 0; r < map.height; ++r)
    for (int c = 0; c < map.width; ++c)
      if (map.at(r, c)) out << r << " " << c << "\n";
  if (!out) throw DataError(DataFault::io_failure, "write failed: " + path);
}

inline DefectMap load_map_coords(const std::string& path, int width,
                                 int height) {
  std::ifstream in(path);
  if (!in) throw DataError(DataFault::io_failure, "cannot open " + path);
  DefectMap map(width, height);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    int r = 0, c = 0;
    if (!(ss >> r >> c))
      throw DataError(DataFault::malformed_header,
                      path + ":" + std::to_string(lineno) + ": expected 'row col'");
    if (r < 0 || r >= height || c < 0 || c >= width)
      throw DataError(DataFault::out_of_bounds,
                      path + ":" + std::to_string(lineno) + ": coordinate outside map");
    map.set(r, c);
  }
  return map;
}

}  // namespace badpix
