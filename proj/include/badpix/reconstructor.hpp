#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "badpix/common.hpp"
#include "badpix/defects.hpp"
#include "badpix/graph.hpp"
#include "badpix/image.hpp"
#include "badpix/optim.hpp"
#include "badpix/rng.hpp"
#include "badpix/vit.hpp"

namespace badpix {

/// Aligned (corrupted, original) frame pair with the defect locations used
/// to restrict the training loss.
struct ReconSample {
  BayerImage corrupted;
  BayerImage original;
  DefectMap map;
};

struct AeHyper {
  int epochs = 50;
  double base_lr = 0.01;
  int warmup_epochs = 5;
  int batch = 16;
  std::uint64_t seed = 0;
};

namespace detail {

struct AeTile {
  std::vector<float> corrupted, original, mask;
};

/// Cuts frame pairs into model-sized tiles. Tiles whose mask came out empty
/// carry no loss signal and are dropped.
template <typename T>
std::vector<AeTile> make_ae_tiles(const VitModel<T>& m,
                                  const std::vector<ReconSample>& frames) {
  const int S = m.cfg.input_size;
  std::vector<AeTile> tiles;
  for (const auto& fr : frames) {
    if (fr.corrupted.width != fr.original.width ||
        fr.corrupted.height != fr.original.height ||
        fr.map.width != fr.original.width ||
        fr.map.height != fr.original.height)
      throw DataError(DataFault::dimension_mismatch,
                      "reconstruction pair is not aligned");
    if (!m.cfg.mask_center && fr.map.defect_count() == 0)
      throw DataError(DataFault::empty_input,
                      "full-image training requires a nonempty defect map");
    const TileGrid grid =
        make_tile_grid_exact(fr.original.height, fr.original.width, S, S);
    for (int tr = 0; tr < grid.rows; ++tr) {
      for (int tc = 0; tc < grid.cols; ++tc) {
        AeTile t;
        t.corrupted.resize(static_cast<std::size_t>(S) * S);
        t.original.resize(t.corrupted.size());
        t.mask.resize(t.corrupted.size());
        bool any = false;
        for (int r = 0; r < S; ++r)
          for (int c = 0; c < S; ++c) {
            const std::size_t i = static_cast<std::size_t>(r) * S + c;
            t.corrupted[i] = fr.corrupted.at(tr * S + r, tc * S + c);
            t.original[i] = fr.original.at(tr * S + r, tc * S + c);
            const bool bad = fr.map.at(tr * S + r, tc * S + c);
            t.mask[i] = bad ? 1.0f : 0.0f;
            any = any || bad;
          }
        if (any) tiles.push_back(std::move(t));
      }
    }
  }
  return tiles;
}

}  // namespace detail

/// Warmup + cosine schedule on the masked-NMSE objective: the loss is the
/// normalized squared error over the corrupted pixels only. Returns the
/// per-epoch mean loss.
template <typename T>
std::vector<double> train_ae(VitModel<T>& m,
                             const std::vector<ReconSample>& frames,
                             const AeHyper& hyper) {
  auto tiles = detail::make_ae_tiles(m, frames);
  if (tiles.empty())
    throw DataError(DataFault::empty_input, "no usable training tiles");
  std::vector<double> curve;
  if (hyper.epochs == 0) return curve;

  const LrSchedule schedule = LrSchedule::warmup_cosine(
      hyper.base_lr, hyper.warmup_epochs, hyper.epochs);
  Adam<T> adam;
  Rng rng = make_rng(derive_seed(hyper.seed, 0xAE7A));
  std::vector<std::size_t> order(tiles.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = lr_at(schedule, epoch);
    double epoch_loss = 0.0;
    std::size_t done = 0;
    while (done < order.size()) {
      const std::size_t take =
          std::min<std::size_t>(hyper.batch, order.size() - done);
      m.g.zero_grad();
      for (std::size_t b = 0; b < take; ++b) {
        const detail::AeTile& t = tiles[order[done + b]];
        m.g.template set_input_cast<float>(m.input, t.corrupted);
        m.g.template set_input_cast<float>(m.target, t.original);
        m.g.template set_input_cast<float>(m.mask, t.mask);
        m.g.forward(m.loss);
        m.g.backward(m.loss);
        epoch_loss += static_cast<double>(m.g.value(m.loss).v[0]);
      }
      adam.step(m.g, lr, 1.0 / static_cast<double>(take));
      done += take;
    }
    curve.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return curve;
}

/// Full-frame reconstruction, tile-wise; frame dims must be multiples of
/// the model input size. Output values are clamped to [0,1].
template <typename T>
BayerImage reconstruct(VitModel<T>& m, const BayerImage& frame) {
  const int S = m.cfg.input_size;
  const TileGrid grid = make_tile_grid_exact(frame.height, frame.width, S, S);
  BayerImage out = frame;
  std::vector<T> buf(static_cast<std::size_t>(S) * S);
  for (int tr = 0; tr < grid.rows; ++tr) {
    for (int tc = 0; tc < grid.cols; ++tc) {
      for (int r = 0; r < S; ++r)
        for (int c = 0; c < S; ++c)
          buf[static_cast<std::size_t>(r) * S + c] =
              static_cast<T>(frame.at(tr * S + r, tc * S + c));
      m.g.set_input(m.input, buf);
      m.g.forward(m.recon);
      const auto& y = m.g.value(m.recon).v;
      for (int r = 0; r < S; ++r)
        for (int c = 0; c < S; ++c)
          out.at(tr * S + r, tc * S + c) = std::clamp(
              static_cast<float>(y[static_cast<std::size_t>(r) * S + c]), 0.0f,
              1.0f);
    }
  }
  return out;
}

/// Reconstruction spliced only at known defect locations, so good pixels
/// pass through untouched.
template <typename T>
BayerImage reconstruct_with_map(VitModel<T>& m, const BayerImage& frame,
                                const DefectMap& map) {
  if (map.width != frame.width || map.height != frame.height)
    throw DataError(DataFault::dimension_mismatch,
                    "defect map dims do not match frame");
  const BayerImage full = reconstruct(m, frame);
  BayerImage out = frame;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    if (map.mask[i]) out.data[i] = full.data[i];
  return out;
}

/// Central-cluster correction on one input-sized patch: the central token
/// region is replaced by the model's prediction, the outer ring passes
/// through unchanged.
template <typename T>
Patch reconstruct_masked_cluster(VitModel<T>& m, const Patch& patch) {
  if (!m.cfg.mask_center)
    throw DataError(DataFault::bad_value,
                    "model was not built with mask_center");
  const int S = m.cfg.input_size, p = m.cfg.token_patch;
  if (patch.size != S)
    throw DataError(DataFault::dimension_mismatch,
                    "patch size " + std::to_string(patch.size) +
                        " does not match model input " + std::to_string(S));
  std::vector<T> buf(static_cast<std::size_t>(S) * S);
  for (std::size_t i = 0; i < buf.size(); ++i)
    buf[i] = static_cast<T>(patch.data[i]);
  m.g.set_input(m.input, buf);
  m.g.forward(m.recon);
  const auto& y = m.g.value(m.recon).v;
  Patch out = patch;
  const int g0 = (S / p) / 2 * p;  // top-left of the central token region
  for (int r = g0; r < g0 + p; ++r)
    for (int c = g0; c < g0 + p; ++c)
      out.at(r, c) = std::clamp(
          static_cast<float>(y[static_cast<std::size_t>(r) * S + c]), 0.0f,
          1.0f);
  return out;
}

}  // namespace badpix
