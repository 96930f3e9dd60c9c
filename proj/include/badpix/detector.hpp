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
#include "badpix/unet.hpp"

namespace badpix {

/// One training tile: corrupted content plus its slice of the session's
/// global defect map.
struct DetectorSample {
  BayerImage tile;
  DefectMap mask_tile;
};

struct TrainHyper {
  int epochs = 50;
  LrSchedule schedule = LrSchedule::step(0.001, 0.5, 10);
  int batch = 16;
  std::uint64_t seed = 0;
};

/// Splits a frame/map pair into training tiles matching the model's tile
/// dimensions.
inline std::vector<DetectorSample> make_detector_samples(
    const BayerImage& corrupted, const DefectMap& truth, int tile_h,
    int tile_w) {
  if (corrupted.width != truth.width || corrupted.height != truth.height)
    throw DataError(DataFault::dimension_mismatch,
                    "frame and defect map dims differ");
  const TileGrid grid =
      make_tile_grid_exact(corrupted.height, corrupted.width, tile_h, tile_w);
  std::vector<DetectorSample> out;
  out.reserve(static_cast<std::size_t>(grid.rows) * grid.cols);
  for (int tr = 0; tr < grid.rows; ++tr) {
    for (int tc = 0; tc < grid.cols; ++tc) {
      DetectorSample s;
      s.tile = BayerImage(tile_w, tile_h, corrupted.pattern, corrupted.bit_depth);
      s.mask_tile = DefectMap(tile_w, tile_h);
      for (int r = 0; r < tile_h; ++r)
        for (int c = 0; c < tile_w; ++c) {
          s.tile.at(r, c) = corrupted.at(tr * tile_h + r, tc * tile_w + c);
          s.mask_tile.set(r, c, truth.at(tr * tile_h + r, tc * tile_w + c));
        }
      out.push_back(std::move(s));
    }
  }
  return out;
}

/// Minibatch training with accumulated gradients (fixed order, so runs are
/// reproducible for a given seed). Returns the per-epoch mean loss.
template <typename T>
std::vector<double> train_detector(UNetModel<T>& m,
                                   const std::vector<DetectorSample>& samples,
                                   const TrainHyper& hyper) {
  if (samples.empty())
    throw DataError(DataFault::empty_input, "no training samples");
  for (const auto& s : samples)
    if (s.tile.width != m.tile_w || s.tile.height != m.tile_h)
      throw DataError(DataFault::dimension_mismatch,
                      "training tile dims do not match the model");
  std::vector<double> curve;
  if (hyper.epochs == 0) return curve;

  Adam<T> adam;
  Rng rng = make_rng(derive_seed(hyper.seed, 0x7e7a11));
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<T> img_buf, tgt_buf;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = lr_at(hyper.schedule, epoch);
    double epoch_loss = 0.0;
    std::size_t done = 0;
    while (done < order.size()) {
      const std::size_t take =
          std::min<std::size_t>(hyper.batch, order.size() - done);
      m.g.zero_grad();
      for (std::size_t b = 0; b < take; ++b) {
        const DetectorSample& s = samples[order[done + b]];
        img_buf.assign(s.tile.data.begin(), s.tile.data.end());
        tgt_buf.resize(s.mask_tile.mask.size());
        for (std::size_t i = 0; i < tgt_buf.size(); ++i)
          tgt_buf[i] = s.mask_tile.mask[i] ? T(1) : T(0);
        m.g.set_input(m.input, img_buf);
        m.g.set_input(m.target, tgt_buf);
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

/// Tile-wise inference over a whole frame; the frame must split exactly
/// into the model's tile size. Returns a [H, W] probability map.
template <typename T>
Tensor<float> predict_scores(UNetModel<T>& m, const BayerImage& frame) {
  const TileGrid grid =
      make_tile_grid_exact(frame.height, frame.width, m.tile_h, m.tile_w);
  Tensor<float> scores({frame.height, frame.width});
  std::vector<T> img_buf(static_cast<std::size_t>(m.tile_h) * m.tile_w);
  for (int tr = 0; tr < grid.rows; ++tr) {
    for (int tc = 0; tc < grid.cols; ++tc) {
      for (int r = 0; r < m.tile_h; ++r)
        for (int c = 0; c < m.tile_w; ++c)
          img_buf[static_cast<std::size_t>(r) * m.tile_w + c] =
              static_cast<T>(frame.at(tr * m.tile_h + r, tc * m.tile_w + c));
      m.g.set_input(m.input, img_buf);
      m.g.forward(m.prob);
      const auto& p = m.g.value(m.prob).v;
      for (int r = 0; r < m.tile_h; ++r)
        for (int c = 0; c < m.tile_w; ++c)
          scores.at2(tr * m.tile_h + r, tc * m.tile_w + c) =
              static_cast<float>(p[static_cast<std::size_t>(r) * m.tile_w + c]);
    }
  }
  return scores;
}

/// Running sum of per-pixel probability scores over frames: one score per
/// pixel plus a counter, independent of how many frames are folded in.
struct ProbAccumulator {
  int width = 0;
  int height = 0;
  std::vector<double> sum_scores;
  int n_frames = 0;

  ProbAccumulator() = default;
  ProbAccumulator(int w, int h) : width(w), height(h) {
    sum_scores.assign(static_cast<std::size_t>(w) * h, 0.0);
  }
};

inline void calibrate(ProbAccumulator& acc, const Tensor<float>& scores) {
  if (scores.shape.size() != 2 || scores.shape[0] != acc.height ||
      scores.shape[1] != acc.width)
    throw DataError(DataFault::dimension_mismatch,
                    "calibrate: score map dims mismatch");
  for (std::size_t i = 0; i < acc.sum_scores.size(); ++i)
    acc.sum_scores[i] += scores.v[i];
  ++acc.n_frames;
}

/// Thresholds the mean score; mean >= threshold marks the pixel defective.
inline DefectMap finalize_defect_map(const ProbAccumulator& acc,
                                     double threshold = 0.5) {
  if (acc.n_frames < 1)
    throw DataError(DataFault::empty_input,
                    "finalize_defect_map: no frames accumulated");
  DefectMap map(acc.width, acc.height);
  for (std::size_t i = 0; i < acc.sum_scores.size(); ++i)
    map.mask[i] = (acc.sum_scores[i] / acc.n_frames >= threshold) ? 1 : 0;
  return map;
}

/// Detected-defect fraction of the frame; feeds strategy selection.
inline double estimate_error_rate(const DefectMap& map) {
  return static_cast<double>(map.defect_count()) /
         static_cast<double>(map.pixel_count());
}

}  // namespace badpix
