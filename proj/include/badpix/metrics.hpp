#pragma once

#include <cmath>
#include <cstdint>
#include <optional>

#include "badpix/common.hpp"
#include "badpix/defects.hpp"
#include "badpix/image.hpp"

namespace badpix {

/// Per-pixel 2x2 tally against ground truth. Bad pixels are positives.
struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }
};

inline ConfusionCounts confusion(const DefectMap& pred,
                                 const DefectMap& truth) {
  if (!pred.same_dims(truth))
    throw DataError(DataFault::dimension_mismatch,
                    "confusion: map dims differ");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.mask.size(); ++i) {
    const bool p = pred.mask[i] != 0, t = truth.mask[i] != 0;
    if (p && t) ++c.tp;
    else if (p && !t) ++c.fp;
    else if (!p && t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

/// precision = tp/(tp+fp), recall = tp/(tp+fn). A zero denominator yields
/// an empty optional ("undefined"), never a silent 0 or 1.
struct PrecisionRecall {
  std::optional<double> precision;
  std::optional<double> recall;
};

inline PrecisionRecall precision_recall(const ConfusionCounts& c) {
  PrecisionRecall pr;
  if (c.tp + c.fp > 0)
    pr.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0)
    pr.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  return pr;
}

/// ||pred - act||^2 / ||act||^2, optionally restricted to masked pixels.
/// Returns empty when the denominator vanishes (guard 1e-12).
inline std::optional<double> nmse(const BayerImage& pred,
                                  const BayerImage& act,
                                  const DefectMap* mask = nullptr) {
  if (pred.width != act.width || pred.height != act.height)
    throw DataError(DataFault::dimension_mismatch, "nmse: image dims differ");
  if (mask && (mask->width != act.width || mask->height != act.height))
    throw DataError(DataFault::dimension_mismatch, "nmse: mask dims differ");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < act.data.size(); ++i) {
    if (mask && mask->mask[i] == 0) continue;
    const double d = static_cast<double>(pred.data[i]) - act.data[i];
    num += d * d;
    den += static_cast<double>(act.data[i]) * act.data[i];
  }
  if (den <= 1e-12) return std::nullopt;
  return num / den;
}

/// 10*log10(1/MSE) for unit-range images. Returns empty when MSE is zero
/// (the "infinite" marker).
inline std::optional<double> psnr(const BayerImage& pred,
                                  const BayerImage& act) {
  if (pred.width != act.width || pred.height != act.height)
    throw DataError(DataFault::dimension_mismatch, "psnr: image dims differ");
  double sum = 0.0;
  for (std::size_t i = 0; i < act.data.size(); ++i) {
    const double d = static_cast<double>(pred.data[i]) - act.data[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(act.data.size());
  if (mse == 0.0) return std::nullopt;
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace badpix
