#include <catch2/catch_amalgamated.hpp>

#include "badpix/corrector.hpp"

using namespace badpix;
using Catch::Approx;

TEST_CASE("patch flattening drops the center slot", "[corrector]") {
  BayerImage img(8, 8, CfaPattern::rggb, 16, 0.0f);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) img.at(r, c) = static_cast<float>(r * 8 + c) / 64.0f;
  const Patch p = extract_patch(img, 4, 4, 5);
  const auto in = patch_to_input(p);
  REQUIRE(in.size() == 24);
  // row-major with (2,2) removed: slot 12 holds what was at (2,3)
  REQUIRE(in[11] == p.at(2, 1));
  REQUIRE(in[12] == p.at(2, 3));
}

TEST_CASE("patch dataset: exact corrupted-neighbor counts", "[corrector]") {
  // flat frames make clean values known, so corrupted slots are countable
  std::vector<BayerImage> frames = {
      generate_synthetic({32, 32, SceneKind::flat, 3, 0.5f})};
  for (int n_err : {0, 2, 4}) {
    const PatchDataset ds = make_patch_dataset(frames, 50, 5, n_err, 0.3, 7);
    REQUIRE(ds.samples.size() == 50);
    for (const auto& s : ds.samples) {
      int diff = 0;
      for (float v : s.neighbors) {
        if (v != 0.5f) {
          ++diff;
          REQUIRE(std::fabs(double(v) - 0.5) >= 0.3 - 1e-6);
        }
      }
      REQUIRE(diff == n_err);
      REQUIRE(s.center == 0.5f);
    }
  }
}

TEST_CASE("patch dataset is deterministic", "[corrector]") {
  std::vector<BayerImage> frames = {
      generate_synthetic({32, 32, SceneKind::mixture, 5})};
  const PatchDataset a = make_patch_dataset(frames, 30, 5, 2, 0.6, 11);
  const PatchDataset b = make_patch_dataset(frames, 30, 5, 2, 0.6, 11);
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    REQUIRE(a.samples[i].neighbors == b.samples[i].neighbors);
    REQUIRE(a.samples[i].center == b.samples[i].center);
  }
}

TEST_CASE("training on flat scenes regresses the level", "[corrector]") {
  std::vector<BayerImage> frames = {
      generate_synthetic({32, 32, SceneKind::flat, 1, 0.5f})};
  const PatchDataset ds = make_patch_dataset(frames, 400, 5, 0, 0.7, 3);
  auto m = build_mlp<float>({5, 32, 0}, 5);
  CorrectorHyper hyper;
  hyper.epochs = 30;
  hyper.seed = 9;
  train_corrector(m, ds, hyper);
  std::vector<float> flat(24, 0.5f);
  m.g.set_input(m.input, flat);
  m.g.forward(m.pred);
  REQUIRE(m.g.value(m.pred).v[0] == Approx(0.5).margin(0.02));
}

TEST_CASE("training is deterministic and rejects mixed sizes", "[corrector]") {
  std::vector<BayerImage> frames = {
      generate_synthetic({32, 32, SceneKind::mixture, 2})};
  const PatchDataset ds = make_patch_dataset(frames, 60, 5, 0, 0.7, 3);
  CorrectorHyper hyper;
  hyper.epochs = 4;
  hyper.seed = 31;
  auto a = build_mlp<float>({5, 16, 0}, 8);
  auto b = build_mlp<float>({5, 16, 0}, 8);
  train_corrector(a, ds, hyper);
  train_corrector(b, ds, hyper);
  for (std::size_t i = 0; i < a.g.params().size(); ++i)
    REQUIRE(a.g.value(a.g.params()[i]).v == b.g.value(b.g.params()[i]).v);

  PatchDataset mixed = ds;
  mixed.samples[10].neighbors.resize(80);
  REQUIRE_THROWS_AS(train_corrector(a, mixed, hyper), DataError);
  PatchDataset wrong = ds;
  wrong.patch_size = 9;
  REQUIRE_THROWS_AS(train_corrector(a, wrong, hyper), DataError);
}

TEST_CASE("zero training epochs keep parameters fixed", "[corrector]") {
  std::vector<BayerImage> frames = {
      generate_synthetic({32, 32, SceneKind::mixture, 2})};
  const PatchDataset ds = make_patch_dataset(frames, 20, 5, 0, 0.7, 3);
  auto m = build_mlp<float>({5, 16, 0}, 8);
  const auto before = m.g.value(m.g.params()[0]).v;
  CorrectorHyper hyper;
  hyper.epochs = 0;
  REQUIRE(train_corrector(m, ds, hyper).empty());
  REQUIRE(m.g.value(m.g.params()[0]).v == before);
}

TEST_CASE("neighbor counting uses the reflected window", "[corrector]") {
  DefectMap map(8, 8);
  map.set(0, 1);
  // center (0,0): offset (0,1) hits (0,1); reflection also folds offsets
  // (0,-1) back onto (0,1), so the corrupted column counts twice
  REQUIRE(count_defective_neighbors(map, 0, 0, 3) == 2);
  REQUIRE(count_defective_neighbors(map, 4, 4, 3) == 0);
}

TEST_CASE("correct_pixels: empty map is the identity", "[corrector]") {
  const BayerImage img = generate_synthetic({16, 16, SceneKind::mixture, 9});
  MlpBank<float> bank;
  bank.put(build_mlp<float>({5, 16, 0}, 1));
  auto out = correct_pixels(img, DefectMap(16, 16), bank, 5);
  REQUIRE(out.data == img.data);
}

TEST_CASE("correct_pixels: flat-region defect is restored", "[corrector]") {
  std::vector<BayerImage> frames = {
      generate_synthetic({32, 32, SceneKind::flat, 1, 0.5f})};
  const PatchDataset ds = make_patch_dataset(frames, 400, 5, 0, 0.7, 3);
  auto m = build_mlp<float>({5, 32, 0}, 5);
  CorrectorHyper hyper;
  hyper.epochs = 30;
  hyper.seed = 9;
  train_corrector(m, ds, hyper);
  MlpBank<float> bank;
  bank.put(std::move(m));

  BayerImage img = generate_synthetic({16, 16, SceneKind::flat, 1, 0.5f});
  DefectMap map(16, 16);
  map.set(8, 8);
  img.at(8, 8) = 1.0f;
  const BayerImage out = correct_pixels(img, map, bank, 5);
  REQUIRE(out.at(8, 8) == Approx(0.5).margin(0.02));
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c)
      if (r != 8 || c != 8) REQUIRE(out.at(r, c) == img.at(r, c));
}

TEST_CASE("correct_pixels: bank dispatch picks the nearest error count",
          "[corrector]") {
  // three models whose constant outputs differ via their biases
  MlpBank<float> bank;
  for (int ne : {0, 2, 4}) {
    auto m = build_mlp<float>({5, 4, ne}, 1);
    for (int id : m.g.params()) m.g.value(id).zero();
    // bias of the output layer sets sigmoid(b); make it identify the model
    m.g.value(m.g.params()[3]).v[0] = static_cast<float>(ne + 1);
    bank.put(std::move(m));
  }
  BayerImage img(16, 16, CfaPattern::rggb, 16, 0.5f);
  auto sigmoid = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };

  DefectMap lone(16, 16);
  lone.set(8, 8);
  REQUIRE(correct_pixels(img, lone, bank, 5).at(8, 8) ==
          Approx(sigmoid(1.0)).margin(1e-6));  // 0 neighbors -> ne=0 model

  DefectMap pair2(16, 16);
  pair2.set(8, 8);
  pair2.set(8, 9);
  pair2.set(7, 7);
  // center (8,8) sees 2 defective neighbors -> ne=2 model
  REQUIRE(correct_pixels(img, pair2, bank, 5).at(8, 8) ==
          Approx(sigmoid(3.0)).margin(1e-6));

  DefectMap crowd(16, 16);
  crowd.set(8, 8);
  for (int c = 6; c <= 10; ++c) crowd.set(7, c);
  // five defective neighbors -> nearest trained count is 4
  REQUIRE(correct_pixels(img, crowd, bank, 5).at(8, 8) ==
          Approx(sigmoid(5.0)).margin(1e-6));
}

TEST_CASE("correct_pixels: missing model is a distinct error", "[corrector]") {
  const BayerImage img = generate_synthetic({16, 16, SceneKind::mixture, 9});
  DefectMap map(16, 16);
  map.set(3, 3);
  MlpBank<float> bank;
  bank.put(build_mlp<float>({9, 8, 0}, 1));
  try {
    correct_pixels(img, map, bank, 5);  // only a 9x9 model is present
    FAIL("expected missing model");
  } catch (const DataError& e) {
    REQUIRE(e.fault() == DataFault::missing_model);
  }
}

TEST_CASE("correct_pixels: outputs stay in [0,1]", "[corrector]") {
  const BayerImage clean = generate_synthetic({16, 16, SceneKind::mixture, 9});
  const DefectMap map = sample_defect_map(16, 16, 0.2, 3);
  const BayerImage img =
      inject(clean, map, {0.2, 0.7, DefectKind::deviation, 4});
  MlpBank<float> bank;
  bank.put(build_mlp<float>({5, 16, 0}, 77));  // untrained is fine here
  const BayerImage out = correct_pixels(img, map, bank, 5);
  for (float v : out.data) {
    REQUIRE(v >= 0.0f);
    REQUIRE(v <= 1.0f);
  }
}
