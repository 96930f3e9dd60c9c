#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "badpix/image.hpp"
#include "oracles.hpp"

using namespace badpix;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) {
  return (fs::temp_directory_path() / ("badpix_imgtest_" + name)).string();
}

void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string pgm16(int w, int h, const std::vector<int>& vals) {
  std::string s = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n65535\n";
  for (int v : vals) {
    s += static_cast<char>((v >> 8) & 0xff);
    s += static_cast<char>(v & 0xff);
  }
  return s;
}

}  // namespace

TEST_CASE("pgm: max value maps to 1.0", "[image]") {
  const auto path = temp_path("max.pgm");
  write_bytes(path, pgm16(4, 4, std::vector<int>(16, 65535)));
  const BayerImage img = load_pgm(path);
  REQUIRE(img.width == 4);
  REQUIRE(img.height == 4);
  REQUIRE(img.bit_depth == 16);
  for (float v : img.data) REQUIRE(v == 1.0f);
}

TEST_CASE("pgm: zero frame", "[image]") {
  const auto path = temp_path("zero.pgm");
  write_bytes(path, pgm16(4, 4, std::vector<int>(16, 0)));
  const BayerImage img = load_pgm(path);
  for (float v : img.data) REQUIRE(v == 0.0f);
}

TEST_CASE("pgm: header comments are skipped", "[image]") {
  const auto path = temp_path("comment.pgm");
  std::string s = "P5\n# a comment\n2 2\n# another\n255\n";
  s += std::string(4, static_cast<char>(255));
  write_bytes(path, s);
  const BayerImage img = load_pgm(path);
  REQUIRE(img.bit_depth == 8);
  REQUIRE(img.at(1, 1) == 1.0f);
}

TEST_CASE("raw u16: direct normalization", "[image]") {
  const auto path = temp_path("mid.raw");
  std::string bytes;
  for (int i = 0; i < 4; ++i) {
    bytes += static_cast<char>(0x00);  // little endian 0x8000 = 32768
    bytes += static_cast<char>(0x80);
  }
  write_bytes(path, bytes);
  const BayerImage img = load_raw_u16(path, 2, 2, 16);
  // 32768 / 65535, computed directly
  REQUIRE(img.at(0, 0) == Catch::Approx(32768.0 / 65535.0).epsilon(1e-9));
}

TEST_CASE("load errors carry distinct fault kinds", "[image]") {
  const auto bad_magic = temp_path("badmagic.pgm");
  write_bytes(bad_magic, "P6\n2 2\n255\nxxxx");
  try {
    load_pgm(bad_magic);
    FAIL("expected malformed header");
  } catch (const DataError& e) {
    REQUIRE(e.fault() == DataFault::malformed_header);
  }

  const auto short_raster = temp_path("short.pgm");
  write_bytes(short_raster, "P5\n4 4\n255\nab");
  try {
    load_pgm(short_raster);
    FAIL("expected dimension mismatch");
  } catch (const DataError& e) {
    REQUIRE(e.fault() == DataFault::dimension_mismatch);
  }

  const auto odd = temp_path("odd.pgm");
  write_bytes(odd, "P5\n3 2\n255\n" + std::string(6, 'x'));
  try {
    load_pgm(odd);
    FAIL("expected odd dimension rejection");
  } catch (const DataError& e) {
    REQUIRE(e.fault() == DataFault::odd_dimensions);
  }
  // with the crop option the same file loads at 2x2
  const BayerImage cropped = load_pgm(odd, CfaPattern::rggb, true);
  REQUIRE(cropped.width == 2);
  REQUIRE(cropped.height == 2);

  const auto raw = temp_path("mismatch.raw");
  write_bytes(raw, std::string(10, 'x'));
  try {
    load_raw_u16(raw, 4, 4, 16);
    FAIL("expected size mismatch");
  } catch (const DataError& e) {
    REQUIRE(e.fault() == DataFault::dimension_mismatch);
  }

  const auto deep = temp_path("deep.raw");
  write_bytes(deep, std::string("\xff\xff\xff\xff\xff\xff\xff\xff", 8));
  try {
    load_raw_u16(deep, 2, 2, 10);  // 0xffff exceeds 10-bit range
    FAIL("expected bad value");
  } catch (const DataError& e) {
    REQUIRE(e.fault() == DataFault::bad_value);
  }
}

TEST_CASE("pgm round trip from stored samples is exact", "[image]") {
  Rng rng = make_rng(11);
  for (int bd : {8, 16}) {
    BayerImage img(6, 4, CfaPattern::rggb, bd);
    for (auto& v : img.data)
      v = normalize_value(
          static_cast<int>(uniform_int(rng, 0, img.max_value())), bd);
    const auto path = temp_path("roundtrip" + std::to_string(bd) + ".pgm");
    save_pgm(img, path);
    const BayerImage back = load_pgm(path);
    REQUIRE(back.bit_depth == bd);
    for (std::size_t i = 0; i < img.data.size(); ++i)
      REQUIRE(back.data[i] == img.data[i]);
  }
}

TEST_CASE("pgm quantization error stays within half a step", "[image]") {
  Rng rng = make_rng(12);
  BayerImage img(8, 8, CfaPattern::rggb, 16);
  for (auto& v : img.data) v = static_cast<float>(uniform01(rng));
  const auto path = temp_path("quant.pgm");
  save_pgm(img, path);
  const BayerImage back = load_pgm(path);
  const double step = 0.5 / img.max_value();
  for (std::size_t i = 0; i < img.data.size(); ++i)
    REQUIRE(std::fabs(double(back.data[i]) - img.data[i]) <= step + 1e-12);
}

TEST_CASE("synthetic: flat scene", "[image]") {
  const BayerImage img = generate_synthetic({8, 8, SceneKind::flat, 1, 0.5f});
  for (float v : img.data) REQUIRE(v == 0.5f);
}

TEST_CASE("synthetic: deterministic in (spec, seed)", "[image]") {
  const SceneSpec spec{8, 8, SceneKind::gradient, 1};
  const BayerImage a = generate_synthetic(spec);
  const BayerImage b = generate_synthetic(spec);
  REQUIRE(a.data == b.data);
  const BayerImage c = generate_synthetic({8, 8, SceneKind::gradient, 2});
  REQUIRE(a.data != c.data);
}

TEST_CASE("synthetic: band noise keeps same-channel correlation", "[image]") {
  const BayerImage img =
      generate_synthetic({128, 128, SceneKind::band_noise, 7});
  for (auto color : {CfaColor::red, CfaColor::green, CfaColor::blue}) {
    REQUIRE(oracle::autocorr_lag2(img, color, true) > 0.5);
    REQUIRE(oracle::autocorr_lag2(img, color, false) > 0.5);
  }
}

TEST_CASE("synthetic: odd dims rejected", "[image]") {
  REQUIRE_THROWS_AS(generate_synthetic({7, 8, SceneKind::flat, 1}), DataError);
}

TEST_CASE("tiles: 64x64 in an 8x8 grid gives 64 8x8 tiles", "[image]") {
  const BayerImage img = generate_synthetic({64, 64, SceneKind::mixture, 3});
  const TileGrid grid = make_tile_grid(64, 64, 8, 8);
  const auto tiles = split_into_tiles(img, grid);
  REQUIRE(tiles.size() == 64);
  for (const auto& t : tiles) {
    REQUIRE(t.width == 8);
    REQUIRE(t.height == 8);
  }
  const BayerImage back = reassemble_tiles(tiles, grid);
  REQUIRE(back.data == img.data);
}

TEST_CASE("tiles: 1x1 grid is the identity", "[image]") {
  const BayerImage img = generate_synthetic({16, 12, SceneKind::gradient, 4});
  const TileGrid grid = make_tile_grid(12, 16, 1, 1);
  const auto tiles = split_into_tiles(img, grid);
  REQUIRE(tiles.size() == 1);
  REQUIRE(tiles[0].data == img.data);
}

TEST_CASE("tiles: non-divisible frame is cropped, reassembly matches", "[image]") {
  const BayerImage img = generate_synthetic({64, 66, SceneKind::mixture, 5});
  const TileGrid grid = make_tile_grid(66, 64, 8, 8);
  REQUIRE(grid.tile_height == 8);
  REQUIRE(grid.used_height() == 64);
  REQUIRE(grid.crop_top % 2 == 0);
  const auto tiles = split_into_tiles(img, grid);
  const BayerImage back = reassemble_tiles(tiles, grid);
  for (int r = 0; r < back.height; ++r)
    for (int c = 0; c < back.width; ++c)
      REQUIRE(back.at(r, c) == img.at(grid.crop_top + r, grid.crop_left + c));
}

TEST_CASE("tiles: odd tile dims rejected", "[image]") {
  try {
    make_tile_grid(24, 24, 8, 8);  // 24/8 = 3, odd
    FAIL("expected rejection");
  } catch (const DataError& e) {
    REQUIRE(e.fault() == DataFault::odd_dimensions);
  }
}

TEST_CASE("patch: interior extraction is a window copy", "[image]") {
  const BayerImage img = generate_synthetic({16, 16, SceneKind::mixture, 6});
  const Patch p = extract_patch(img, 8, 8, 5);
  REQUIRE(p.size == 5);
  REQUIRE(p.color_phase == img.color_at(8, 8));
  for (int dr = -2; dr <= 2; ++dr)
    for (int dc = -2; dc <= 2; ++dc)
      REQUIRE(p.at(dr + 2, dc + 2) == img.at(8 + dr, 8 + dc));
}

TEST_CASE("patch: corner reflection keeps the center aligned", "[image]") {
  const BayerImage img = generate_synthetic({16, 16, SceneKind::mixture, 8});
  const Patch p = extract_patch(img, 0, 0, 5);
  REQUIRE(p.at(2, 2) == img.at(0, 0));
  // mirror without repeating the edge: offset -1 lands on index 1
  REQUIRE(p.at(1, 2) == img.at(1, 0));
  REQUIRE(p.at(2, 1) == img.at(0, 1));
}

TEST_CASE("patch: mean matches the reflected-index oracle", "[image]") {
  const BayerImage img = generate_synthetic({12, 14, SceneKind::band_noise, 9});
  Rng rng = make_rng(77);
  for (int trial = 0; trial < 30; ++trial) {
    const int r = static_cast<int>(uniform_int(rng, 0, img.height - 1));
    const int c = static_cast<int>(uniform_int(rng, 0, img.width - 1));
    const int size = (trial % 2) ? 5 : 9;
    const Patch p = extract_patch(img, r, c, size);
    double mean = 0;
    for (float v : p.data) mean += v;
    mean /= static_cast<double>(p.data.size());
    REQUIRE(mean == Catch::Approx(oracle::reflected_mean_loop(img, r, c, size))
                        .epsilon(1e-9));
  }
}

TEST_CASE("patch: reflected indices never leave the frame", "[image]") {
  for (int n : {2, 4, 9, 16})
    for (int i = -(n - 1); i <= 2 * n - 2; ++i) {
      const int m = reflect_index(i, n);
      REQUIRE(m >= 0);
      REQUIRE(m < n);
    }
}

TEST_CASE("patch: invalid requests rejected", "[image]") {
  const BayerImage img = generate_synthetic({8, 8, SceneKind::flat, 1});
  REQUIRE_THROWS_AS(extract_patch(img, 4, 4, 4), DataError);
  REQUIRE_THROWS_AS(extract_patch(img, 8, 4, 5), DataError);
  REQUIRE_THROWS_AS(extract_patch(img, -1, 4, 5), DataError);
}

TEST_CASE("cfa phase lookup", "[image]") {
  REQUIRE(cfa_color_at(CfaPattern::rggb, 0, 0) == CfaColor::red);
  REQUIRE(cfa_color_at(CfaPattern::rggb, 0, 1) == CfaColor::green);
  REQUIRE(cfa_color_at(CfaPattern::rggb, 1, 0) == CfaColor::green);
  REQUIRE(cfa_color_at(CfaPattern::rggb, 1, 1) == CfaColor::blue);
  REQUIRE(cfa_color_at(CfaPattern::bggr, 0, 0) == CfaColor::blue);
  REQUIRE(cfa_color_at(CfaPattern::grbg, 0, 1) == CfaColor::red);
  REQUIRE(cfa_color_at(CfaPattern::gbrg, 1, 0) == CfaColor::red);
  // pattern repeats with period 2
  REQUIRE(cfa_color_at(CfaPattern::rggb, 6, 4) == CfaColor::red);
}
