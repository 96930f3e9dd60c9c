#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "badpix/common.hpp"
#include "badpix/rng.hpp"

namespace badpix {

// ---------------------------------------------------------------------------
// CFA layout
// ---------------------------------------------------------------------------

enum class CfaPattern { rggb, bggr, grbg, gbrg };
enum class CfaColor { red, green, blue };

inline const char* to_string(CfaPattern p) {
  switch (p) {
    case CfaPattern::rggb: return "rggb";
    case CfaPattern::bggr: return "bggr";
    case CfaPattern::grbg: return "grbg";
    case CfaPattern::gbrg: return "gbrg";
  }
  return "?";
}

inline CfaPattern cfa_pattern_from_string(const std::string& s) {
  if (s == "rggb") return CfaPattern::rggb;
  if (s == "bggr") return CfaPattern::bggr;
  if (s == "grbg") return CfaPattern::grbg;
  if (s == "gbrg") return CfaPattern::gbrg;
  throw ConfigError("unknown CFA pattern '" + s + "'");
}

/// CFA color of the pixel at (row, col) for a given phase tag.
inline CfaColor cfa_color_at(CfaPattern p, int row, int col) {
  // Quad layouts, row-major: {(0,0),(0,1),(1,0),(1,1)}.
  static constexpr CfaColor kR = CfaColor::red, kG = CfaColor::green,
                            kB = CfaColor::blue;
  static constexpr CfaColor kQuads[4][4] = {
      {kR, kG, kG, kB},   // rggb
      {kB, kG, kG, kR},   // bggr
      {kG, kR, kB, kG},   // grbg
      {kG, kB, kR, kG}};  // gbrg
  return kQuads[static_cast<int>(p)][(row & 1) * 2 + (col & 1)];
}

// ---------------------------------------------------------------------------
// BayerImage
// ---------------------------------------------------------------------------

/// Single-channel raw frame, normalized to [0,1]. Width and height are even
/// so a Bayer quad tiles the frame exactly.
struct BayerImage {
  int width = 0;
  int height = 0;
  CfaPattern pattern = CfaPattern::rggb;
  int bit_depth = 16;
  std::vector<float> data;  // row-major, height*width

  BayerImage() = default;
  BayerImage(int w, int h, CfaPattern p, int bd, float fill_value = 0.0f)
      : width(w), height(h), pattern(p), bit_depth(bd) {
    if (w <= 0 || h <= 0)
      throw DataError(DataFault::dimension_mismatch, "non-positive frame dims");
    if ((w | h) & 1)
      throw DataError(DataFault::odd_dimensions,
                      "frame dims must be even (got " + std::to_string(w) +
                          "x" + std::to_string(h) + ")");
    if (bd < 8 || bd > 16)
      throw DataError(DataFault::bad_value,
                      "bit depth must be in 8..16, got " + std::to_string(bd));
    data.assign(static_cast<std::size_t>(w) * h, fill_value);
  }

  float& at(int r, int c) { return data[static_cast<std::size_t>(r) * width + c]; }
  float at(int r, int c) const {
    return data[static_cast<std::size_t>(r) * width + c];
  }
  std::int64_t pixel_count() const {
    return static_cast<std::int64_t>(width) * height;
  }
  CfaColor color_at(int r, int c) const { return cfa_color_at(pattern, r, c); }

  /// Maximum representable integer value at this bit depth.
  int max_value() const { return (1 << bit_depth) - 1; }
};

inline float normalize_value(int raw, int bit_depth) {
  return static_cast<float>(raw) / static_cast<float>((1 << bit_depth) - 1);
}

inline int denormalize_value(float v, int bit_depth) {
  const int maxv = (1 << bit_depth) - 1;
  const long r = std::lround(static_cast<double>(v) * maxv);
  return static_cast<int>(std::clamp<long>(r, 0, maxv));
}

// ---------------------------------------------------------------------------
// PGM (P5) and headerless u16 raw I/O
// ---------------------------------------------------------------------------

namespace detail {

inline int pgm_read_int(std::istream& in) {
  // Skips whitespace and '#' comments per the PGM grammar.
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (!std::isspace(ch)) {
      break;
    }
    ch = in.get();
  }
  if (ch == EOF || !std::isdigit(ch))
    throw DataError(DataFault::malformed_header, "PGM: expected integer token");
  long val = 0;
  while (ch != EOF && std::isdigit(ch)) {
    val = val * 10 + (ch - '0');
    if (val > 1000000000L)
      throw DataError(DataFault::malformed_header, "PGM: oversized integer");
    ch = in.get();
  }
  if (ch != EOF) in.unget();
  return static_cast<int>(val);
}

}  // namespace detail

/// Loads a binary PGM (P5). Maxval must be 255 or 65535; 16-bit samples are
/// big-endian per the format. Maxval maps to 1.0.
inline BayerImage load_pgm(const std::string& path,
                           CfaPattern pattern = CfaPattern::rggb,
                           bool crop_odd = false) {
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
  if (w <= 0 || h <= 0)
    throw DataError(DataFault::malformed_header, path + ": bad dimensions");
  if (maxval != 255 && maxval != 65535)
    throw DataError(DataFault::malformed_header,
                    path + ": maxval must be 255 or 65535, got " +
                        std::to_string(maxval));
  in.get();  // single whitespace byte before the raster
  const int bd = (maxval == 255) ? 8 : 16;

  int out_w = w, out_h = h;
  if ((w | h) & 1) {
    if (!crop_odd)
      throw DataError(DataFault::odd_dimensions,
                      path + ": odd dimensions " + std::to_string(w) + "x" +
                          std::to_string(h));
    out_w = w & ~1;
    out_h = h & ~1;
  }

  const std::size_t bytes_per = (maxval == 255) ? 1 : 2;
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * bytes_per);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size())
    throw DataError(DataFault::dimension_mismatch,
                    path + ": raster shorter than header promises");

  BayerImage img(out_w, out_h, pattern, bd);
  for (int r = 0; r < out_h; ++r) {
    for (int c = 0; c < out_w; ++c) {
      const std::size_t i = (static_cast<std::size_t>(r) * w + c) * bytes_per;
      int raw = (bytes_per == 1)
                    ? buf[i]
                    : (static_cast<int>(buf[i]) << 8) | buf[i + 1];
      img.at(r, c) = static_cast<float>(raw) / static_cast<float>(maxval);
    }
  }
  return img;
}

/// Loads a headerless row-major little-endian u16 raw with caller-provided
/// dimensions. Values must fit inside bit_depth; max representable maps to 1.
inline BayerImage load_raw_u16(const std::string& path, int width, int height,
                               int bit_depth,
                               CfaPattern pattern = CfaPattern::rggb,
                               bool crop_odd = false) {
  if (width <= 0 || height <= 0)
    throw DataError(DataFault::dimension_mismatch, "non-positive raw dims");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataFault::io_failure, "cannot open " + path);
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  const std::size_t expect = static_cast<std::size_t>(width) * height * 2;
  if (file_size != expect)
    throw DataError(DataFault::dimension_mismatch,
                    path + ": file size " + std::to_string(file_size) +
                        " != width*height*2 = " + std::to_string(expect));

  int out_w = width, out_h = height;
  if ((width | height) & 1) {
    if (!crop_odd)
      throw DataError(DataFault::odd_dimensions,
                      path + ": odd dimensions " + std::to_string(width) + "x" +
                          std::to_string(height));
    out_w = width & ~1;
    out_h = height & ~1;
  }

  std::vector<unsigned char> buf(expect);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size())
    throw DataError(DataFault::io_failure, path + ": short read");

  BayerImage img(out_w, out_h, pattern, bit_depth);
  const int maxv = img.max_value();
  for (int r = 0; r < out_h; ++r) {
    for (int c = 0; c < out_w; ++c) {
      const std::size_t i = (static_cast<std::size_t>(r) * width + c) * 2;
      const int raw = static_cast<int>(buf[i]) | (static_cast<int>(buf[i + 1]) << 8);
      if (raw > maxv)
        throw DataError(DataFault::bad_value,
                        path + ": sample " + std::to_string(raw) +
                            " exceeds bit depth " + std::to_string(bit_depth));
      img.at(r, c) = static_cast<float>(raw) / static_cast<float>(maxv);
    }
  }
  return img;
}

/// Dispatches on file suffix: .pgm -> P5 loader (bit depth from maxval),
/// anything else -> headerless u16 raw.
inline BayerImage load_image(const std::string& path, int bit_depth,
                             CfaPattern pattern, int raw_width = 0,
                             int raw_height = 0, bool crop_odd = false) {
  const bool is_pgm =
      path.size() >= 4 && path.compare(path.size() - 4, 4, ".pgm") == 0;
  if (is_pgm) return load_pgm(path, pattern, crop_odd);
  if (raw_width <= 0 || raw_height <= 0)
    throw ConfigError("raw input '" + path + "' needs --width/--height");
  return load_raw_u16(path, raw_width, raw_height, bit_depth, pattern, crop_odd);
}

/// Writes a binary PGM; 16-bit output is big-endian per the format.
inline void save_pgm(const BayerImage& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataFault::io_failure, "cannot write " + path);
  const int maxval = (img.bit_depth <= 8) ? 255 : 65535;
  out << "P5\n" << img.width << " " << img.height << "\n" << maxval << "\n";
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const long q = std::lround(static_cast<double>(img.at(r, c)) * maxval);
      const int raw = static_cast<int>(std::clamp<long>(q, 0, maxval));
      if (maxval == 255) {
        out.put(static_cast<char>(raw));
      } else {
        out.put(static_cast<char>((raw >> 8) & 0xff));
        out.put(static_cast<char>(raw & 0xff));
      }
    }
  }
  if (!out) throw DataError(DataFault::io_failure, "write failed: " + path);
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

enum class SceneKind { flat, gradient, band_noise, mixture };

inline SceneKind scene_kind_from_string(const std::string& s) {
  if (s == "flat") return SceneKind::flat;
  if (s == "gradient") return SceneKind::gradient;
  if (s == "band_noise" || s == "noise") return SceneKind::band_noise;
  if (s == "mixture") return SceneKind::mixture;
  throw ConfigError("unknown scene kind '" + s + "'");
}

struct SceneSpec {
  int width = 0;
  int height = 0;
  SceneKind kind = SceneKind::mixture;
  std::uint64_t seed = 0;
  float level = 0.5f;  // flat scenes only
  CfaPattern pattern = CfaPattern::rggb;
  int bit_depth = 16;
};

namespace detail {

/// Smooth per-color field: a DC offset plus a small bank of long-wavelength
/// cosines. Wavelengths are kept >= 18 px so same-color neighbors (lag 2)
/// stay strongly correlated.
struct SmoothField {
  double base = 0.5;
  double grad_r = 0.0, grad_c = 0.0;
  struct Wave {
    double amp, fr, fc, phase;
  };
  std::vector<Wave> waves;

  double eval(double r, double c, double h, double w) const {
    double v = base + grad_r * (r / h - 0.5) + grad_c * (c / w - 0.5);
    for (const auto& wv : waves)
      v += wv.amp * std::cos(2.0 * 3.141592653589793 * (wv.fr * r + wv.fc * c) +
                             wv.phase);
    return v;
  }
};

inline SmoothField make_field(SceneKind kind, double base, Rng& rng) {
  SmoothField f;
  f.base = base;
  const bool with_grad =
      kind == SceneKind::gradient || kind == SceneKind::mixture;
  const bool with_waves =
      kind == SceneKind::band_noise || kind == SceneKind::mixture;
  if (with_grad) {
    f.grad_r = uniform(rng, -0.25, 0.25);
    f.grad_c = uniform(rng, -0.25, 0.25);
  }
  if (with_waves) {
    const double max_f = 1.0 / 18.0;  // per-axis frequency cap, cycles/px
    const int n = 6;
    for (int k = 0; k < n; ++k) {
      SmoothField::Wave w;
      w.amp = uniform(rng, 0.02, 0.06);
      w.fr = uniform(rng, -max_f, max_f);
      w.fc = uniform(rng, -max_f, max_f);
      w.phase = uniform(rng, 0.0, 2.0 * 3.141592653589793);
      f.waves.push_back(w);
    }
  }
  return f;
}

}  // namespace detail

/// Deterministic synthetic Bayer frame. Each CFA color samples its own
/// smooth 2-D field (evaluated at true pixel coordinates), with distinct
/// per-color DC levels so cross-color interpolation carries a visible bias.
inline BayerImage generate_synthetic(const SceneSpec& spec) {
  BayerImage img(spec.width, spec.height, spec.pattern, spec.bit_depth);
  if (spec.kind == SceneKind::flat) {
    const float lv = std::clamp(spec.level, 0.0f, 1.0f);
    std::fill(img.data.begin(), img.data.end(), lv);
    return img;
  }
  Rng r_rng = make_rng(derive_seed(spec.seed, 0x0172));
  Rng g_rng = make_rng(derive_seed(spec.seed, 0x0267));
  Rng b_rng = make_rng(derive_seed(spec.seed, 0x0342));
  const auto fr = detail::make_field(spec.kind, 0.62, r_rng);
  const auto fg = detail::make_field(spec.kind, 0.50, g_rng);
  const auto fb = detail::make_field(spec.kind, 0.38, b_rng);
  const double h = spec.height, w = spec.width;
  for (int r = 0; r < spec.height; ++r) {
    for (int c = 0; c < spec.width; ++c) {
      const detail::SmoothField* f = nullptr;
      switch (img.color_at(r, c)) {
        case CfaColor::red: f = &fr; break;
        case CfaColor::green: f = &fg; break;
        case CfaColor::blue: f = &fb; break;
      }
      img.at(r, c) = static_cast<float>(
          std::clamp(f->eval(r, c, h, w), 0.02, 0.98));
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Tiling
// ---------------------------------------------------------------------------

/// rows x cols tiles covering the (possibly edge-cropped) frame exactly.
/// Crop offsets are even so tiles keep the frame's CFA phase.
struct TileGrid {
  int rows = 1;
  int cols = 1;
  int tile_height = 0;
  int tile_width = 0;
  int crop_top = 0;
  int crop_left = 0;

  int used_height() const { return rows * tile_height; }
  int used_width() const { return cols * tile_width; }
};

inline TileGrid make_tile_grid(int frame_height, int frame_width, int rows,
                               int cols) {
  if (rows <= 0 || cols <= 0)
    throw DataError(DataFault::bad_value, "tile grid dims must be positive");
  TileGrid g;
  g.rows = rows;
  g.cols = cols;
  g.tile_height = frame_height / rows;
  g.tile_width = frame_width / cols;
  if (g.tile_height <= 0 || g.tile_width <= 0)
    throw DataError(DataFault::dimension_mismatch,
                    "grid exceeds frame dimensions");
  if ((g.tile_height | g.tile_width) & 1)
    throw DataError(DataFault::odd_dimensions,
                    "grid would produce odd tile dims " +
                        std::to_string(g.tile_height) + "x" +
                        std::to_string(g.tile_width));
  g.crop_top = ((frame_height - g.used_height()) / 2) & ~1;
  g.crop_left = ((frame_width - g.used_width()) / 2) & ~1;
  return g;
}

/// Grid for fixed tile size; frame dims must be exact multiples.
inline TileGrid make_tile_grid_exact(int frame_height, int frame_width,
                                     int tile_height, int tile_width) {
  if (frame_height % tile_height != 0 || frame_width % tile_width != 0)
    throw DataError(DataFault::dimension_mismatch,
                    "frame " + std::to_string(frame_width) + "x" +
                        std::to_string(frame_height) +
                        " not divisible into tiles " +
                        std::to_string(tile_width) + "x" +
                        std::to_string(tile_height));
  return make_tile_grid(frame_height, frame_width, frame_height / tile_height,
                        frame_width / tile_width);
}

inline std::vector<BayerImage> split_into_tiles(const BayerImage& img,
                                                const TileGrid& grid) {
  if (grid.crop_top + grid.used_height() > img.height ||
      grid.crop_left + grid.used_width() > img.width)
    throw DataError(DataFault::dimension_mismatch,
                    "tile grid does not fit the frame");
  std::vector<BayerImage> tiles;
  tiles.reserve(static_cast<std::size_t>(grid.rows) * grid.cols);
  for (int tr = 0; tr < grid.rows; ++tr) {
    for (int tc = 0; tc < grid.cols; ++tc) {
      BayerImage t(grid.tile_width, grid.tile_height, img.pattern,
                   img.bit_depth);
      const int r0 = grid.crop_top + tr * grid.tile_height;
      const int c0 = grid.crop_left + tc * grid.tile_width;
      for (int r = 0; r < grid.tile_height; ++r)
        for (int c = 0; c < grid.tile_width; ++c)
          t.at(r, c) = img.at(r0 + r, c0 + c);
      tiles.push_back(std::move(t));
    }
  }
  return tiles;
}

/// Inverse of split_into_tiles; returns the cropped frame.
inline BayerImage reassemble_tiles(const std::vector<BayerImage>& tiles,
                                   const TileGrid& grid) {
  if (static_cast<int>(tiles.size()) != grid.rows * grid.cols)
    throw DataError(DataFault::dimension_mismatch, "tile count mismatch");
  BayerImage out(grid.used_width(), grid.used_height(), tiles[0].pattern,
                 tiles[0].bit_depth);
  for (int tr = 0; tr < grid.rows; ++tr) {
    for (int tc = 0; tc < grid.cols; ++tc) {
      const BayerImage& t = tiles[static_cast<std::size_t>(tr) * grid.cols + tc];
      for (int r = 0; r < grid.tile_height; ++r)
        for (int c = 0; c < grid.tile_width; ++c)
          out.at(tr * grid.tile_height + r, tc * grid.tile_width + c) =
              t.at(r, c);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Patch extraction
// ---------------------------------------------------------------------------

struct Patch {
  int size = 0;
  int center_row = 0;
  int center_col = 0;
  CfaColor color_phase = CfaColor::green;
  std::vector<float> data;  // size*size, row-major

  float& at(int r, int c) { return data[static_cast<std::size_t>(r) * size + c]; }
  float at(int r, int c) const {
    return data[static_cast<std::size_t>(r) * size + c];
  }
};

/// Mirror index without repeating the edge sample: -1 -> 1, n -> n-2.
inline int reflect_index(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

inline Patch extract_patch(const BayerImage& img, int center_row,
                           int center_col, int size) {
  if ((size & 1) == 0 || size < 3)
    throw DataError(DataFault::bad_value,
                    "patch size must be odd >= 3, got " + std::to_string(size));
  if (center_row < 0 || center_row >= img.height || center_col < 0 ||
      center_col >= img.width)
    throw DataError(DataFault::out_of_bounds, "patch center outside frame");
  if (size > 2 * img.width - 1 || size > 2 * img.height - 1)
    throw DataError(DataFault::out_of_bounds,
                    "patch larger than reflected frame");
  Patch p;
  p.size = size;
  p.center_row = center_row;
  p.center_col = center_col;
  p.color_phase = img.color_at(center_row, center_col);
  p.data.resize(static_cast<std::size_t>(size) * size);
  const int half = (size - 1) / 2;
  for (int dr = -half; dr <= half; ++dr) {
    const int rr = reflect_index(center_row + dr, img.height);
    for (int dc = -half; dc <= half; ++dc) {
      const int cc = reflect_index(center_col + dc, img.width);
      p.at(dr + half, dc + half) = img.at(rr, cc);
    }
  }
  return p;
}

}  // namespace badpix
