#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <utility>
#include <vector>

#include "badpix/common.hpp"
#include "badpix/defects.hpp"
#include "badpix/graph.hpp"
#include "badpix/image.hpp"
#include "badpix/mlp.hpp"
#include "badpix/optim.hpp"
#include "badpix/rng.hpp"

namespace badpix {

/// One regression sample: the flattened window with the center removed,
/// plus the clean center value as the target.
struct PatchSample {
  std::vector<float> neighbors;
  float center = 0.0f;
};

struct PatchDataset {
  int patch_size = 5;
  int neighbor_errors = 0;
  double delta = 0.7;
  std::vector<PatchSample> samples;
};

/// Flattens a patch into the MLP input layout: row-major window order with
/// the center position removed.
inline std::vector<float> patch_to_input(const Patch& p) {
  std::vector<float> out;
  out.reserve(static_cast<std::size_t>(p.size) * p.size - 1);
  const int center = (p.size - 1) / 2;
  for (int r = 0; r < p.size; ++r)
    for (int c = 0; c < p.size; ++c)
      if (r != center || c != center) out.push_back(p.at(r, c));
  return out;
}

/// Draws training patches from clean frames (interior centers, so no
/// reflected duplicates) and corrupts exactly neighbor_errors positions per
/// patch with the same deviation model the injector uses.
inline PatchDataset make_patch_dataset(const std::vector<BayerImage>& frames,
                                       int n_samples, int patch_size,
                                       int neighbor_errors, double delta,
                                       std::uint64_t seed) {
  if (frames.empty())
    throw DataError(DataFault::empty_input, "no source frames");
  const int n_neighbors = patch_size * patch_size - 1;
  if (neighbor_errors < 0 || neighbor_errors > n_neighbors)
    throw DataError(DataFault::bad_value,
                    "neighbor_errors outside 0.." + std::to_string(n_neighbors));
  PatchDataset ds;
  ds.patch_size = patch_size;
  ds.neighbor_errors = neighbor_errors;
  ds.delta = delta;
  ds.samples.reserve(static_cast<std::size_t>(n_samples));
  Rng rng = make_rng(derive_seed(seed, 0xAA7C4));
  const int half = (patch_size - 1) / 2;
  std::vector<int> positions(static_cast<std::size_t>(n_neighbors));
  std::iota(positions.begin(), positions.end(), 0);
  for (int i = 0; i < n_samples; ++i) {
    const BayerImage& f =
        frames[static_cast<std::size_t>(uniform_int(rng, 0, frames.size() - 1))];
    if (f.width < patch_size || f.height < patch_size)
      throw DataError(DataFault::dimension_mismatch,
                      "frame smaller than requested patch");
    const int r = static_cast<int>(uniform_int(rng, half, f.height - 1 - half));
    const int c = static_cast<int>(uniform_int(rng, half, f.width - 1 - half));
    const Patch p = extract_patch(f, r, c, patch_size);
    PatchSample s;
    s.neighbors = patch_to_input(p);
    s.center = p.at(half, half);
    // partial Fisher-Yates over neighbor slots
    for (int k = 0; k < neighbor_errors; ++k) {
      const auto j =
          static_cast<std::size_t>(uniform_int(rng, k, n_neighbors - 1));
      std::swap(positions[static_cast<std::size_t>(k)], positions[j]);
      float& slot = s.neighbors[static_cast<std::size_t>(positions[k])];
      slot = static_cast<float>(
          detail::inject_deviation_value(slot, delta, rng));
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

struct CorrectorHyper {
  int epochs = 50;
  double lr = 0.01;
  int batch = 16;
  std::uint64_t seed = 0;
};

/// Adam on mean squared error of the predicted center. Returns the
/// per-epoch mean loss.
template <typename T>
std::vector<double> train_corrector(MlpModel<T>& m, const PatchDataset& ds,
                                    const CorrectorHyper& hyper) {
  if (ds.samples.empty())
    throw DataError(DataFault::empty_input, "empty patch dataset");
  if (ds.patch_size != m.cfg.patch_size)
    throw DataError(DataFault::dimension_mismatch,
                    "dataset patch size does not match the model");
  const std::size_t in_w = static_cast<std::size_t>(m.cfg.input_width());
  for (const auto& s : ds.samples)
    if (s.neighbors.size() != in_w)
      throw DataError(DataFault::dimension_mismatch,
                      "mixed patch sizes in dataset");
  std::vector<double> curve;
  if (hyper.epochs == 0) return curve;

  Adam<T> adam;
  Rng rng = make_rng(derive_seed(hyper.seed, 0xC02));
  std::vector<std::size_t> order(ds.samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t done = 0;
    while (done < order.size()) {
      const std::size_t take =
          std::min<std::size_t>(hyper.batch, order.size() - done);
      m.g.zero_grad();
      for (std::size_t b = 0; b < take; ++b) {
        const PatchSample& s = ds.samples[order[done + b]];
        m.g.template set_input_cast<float>(m.input, s.neighbors);
        m.g.set_input(m.target, {static_cast<T>(s.center)});
        m.g.forward(m.loss);
        m.g.backward(m.loss);
        epoch_loss += static_cast<double>(m.g.value(m.loss).v[0]);
      }
      adam.step(m.g, hyper.lr, 1.0 / static_cast<double>(take));
      done += take;
    }
    curve.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return curve;
}

/// Model bank keyed by (patch_size, trained neighbor-error count).
template <typename T>
struct MlpBank {
  std::map<std::pair<int, int>, MlpModel<T>> models;

  void put(MlpModel<T> m) {
    const auto key =
        std::make_pair(m.cfg.patch_size, m.cfg.train_neighbor_errors);
    models.erase(key);
    models.emplace(key, std::move(m));
  }
};

/// Counts defective window positions around a center, over the reflected
/// index set the extractor uses, excluding the center slot itself.
inline int count_defective_neighbors(const DefectMap& map, int row, int col,
                                     int patch_size) {
  const int half = (patch_size - 1) / 2;
  int count = 0;
  for (int dr = -half; dr <= half; ++dr) {
    const int rr = reflect_index(row + dr, map.height);
    for (int dc = -half; dc <= half; ++dc) {
      if (dr == 0 && dc == 0) continue;
      const int cc = reflect_index(col + dc, map.width);
      if (map.at(rr, cc)) ++count;
    }
  }
  return count;
}

/// Predicts a replacement for every masked pixel. The model with the
/// nearest trained neighbor-error count (for the requested patch size) is
/// chosen per pixel from the local defect density; defective neighbors keep
/// their corrupted values in the input. Non-masked pixels pass through
/// bit-identical.
template <typename T>
BayerImage correct_pixels(const BayerImage& img, const DefectMap& map,
                          MlpBank<T>& bank, int patch_size) {
  if (map.width != img.width || map.height != img.height)
    throw DataError(DataFault::dimension_mismatch,
                    "defect map dims do not match image");
  std::vector<MlpModel<T>*> candidates;
  for (auto& [key, model] : bank.models)
    if (key.first == patch_size) candidates.push_back(&model);
  if (candidates.empty())
    throw DataError(DataFault::missing_model,
                    "no trained corrector for patch size " +
                        std::to_string(patch_size));
  BayerImage out = img;
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      if (!map.at(r, c)) continue;
      const int n_def = count_defective_neighbors(map, r, c, patch_size);
      MlpModel<T>* best = candidates.front();
      int best_diff = std::abs(best->cfg.train_neighbor_errors - n_def);
      for (auto* cand : candidates) {
        const int d = std::abs(cand->cfg.train_neighbor_errors - n_def);
        if (d < best_diff ||
            (d == best_diff && cand->cfg.train_neighbor_errors <
                                   best->cfg.train_neighbor_errors)) {
          best = cand;
          best_diff = d;
        }
      }
      const Patch p = extract_patch(img, r, c, patch_size);
      best->g.template set_input_cast<float>(best->input, patch_to_input(p));
      best->g.forward(best->pred);
      const float v = static_cast<float>(best->g.value(best->pred).v[0]);
      out.at(r, c) = std::clamp(v, 0.0f, 1.0f);
    }
  }
  return out;
}

}  // namespace badpix
