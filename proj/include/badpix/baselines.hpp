#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "badpix/common.hpp"
#include "badpix/defects.hpp"
#include "badpix/image.hpp"

namespace badpix {

namespace detail {

/// Nearest non-defective pixel by Euclidean distance, ties broken by
/// row-major scan order. Searches outward ring by ring; a ring at Chebyshev
/// radius q can only hold squared distances >= q^2, so the scan stops once
/// that bound passes the best hit.
inline float nearest_good_value(const BayerImage& img, const DefectMap& map,
                                int row, int col) {
  const int max_q = std::max(img.height, img.width);
  std::int64_t best_d2 = -1;
  int best_r = -1, best_c = -1;
  float best_v = 0.0f;
  auto consider = [&](int r, int c) {
    if (r < 0 || r >= img.height || c < 0 || c >= img.width) return;
    if (map.at(r, c)) return;
    const std::int64_t dr = r - row, dc = c - col;
    const std::int64_t d2 = dr * dr + dc * dc;
    if (best_d2 < 0 || d2 < best_d2 ||
        (d2 == best_d2 && (r < best_r || (r == best_r && c < best_c)))) {
      best_d2 = d2;
      best_r = r;
      best_c = c;
      best_v = img.at(r, c);
    }
  };
  for (int q = 1; q <= max_q; ++q) {
    if (best_d2 >= 0 && static_cast<std::int64_t>(q) * q > best_d2) break;
    for (int c = col - q; c <= col + q; ++c) {
      consider(row - q, c);
      consider(row + q, c);
    }
    for (int r = row - q + 1; r <= row + q - 1; ++r) {
      consider(r, col - q);
      consider(r, col + q);
    }
  }
  if (best_d2 < 0)
    throw DataError(DataFault::empty_input,
                    "nearest correction needs at least one good pixel");
  return best_v;
}

/// Non-defective neighbor values inside the window, same CFA phase as the
/// center when available, else any good neighbor. The center itself is
/// excluded. Empty result means the window held no good pixel at all.
inline std::vector<float> window_good_neighbors(const BayerImage& img,
                                                const DefectMap& map, int row,
                                                int col, int window) {
  const int half = window / 2;
  const CfaColor target = img.color_at(row, col);
  std::vector<float> same, any;
  for (int dr = -half; dr <= half; ++dr) {
    const int r = row + dr;
    if (r < 0 || r >= img.height) continue;
    for (int dc = -half; dc <= half; ++dc) {
      if (dr == 0 && dc == 0) continue;
      const int c = col + dc;
      if (c < 0 || c >= img.width) continue;
      if (map.at(r, c)) continue;
      any.push_back(img.at(r, c));
      if (img.color_at(r, c) == target) same.push_back(img.at(r, c));
    }
  }
  return same.empty() ? any : same;
}

}  // namespace detail

/// Replaces each defective pixel with its Euclidean-nearest good pixel.
inline BayerImage correct_nearest(const BayerImage& img, const DefectMap& map) {
  if (!DefectMap{img.width, img.height}.same_dims(map))
    throw DataError(DataFault::dimension_mismatch, "map dims do not match image");
  if (map.defect_count() == map.pixel_count())
    throw DataError(DataFault::empty_input, "all pixels defective");
  BayerImage out = img;
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c)
      if (map.at(r, c)) out.at(r, c) = detail::nearest_good_value(img, map, r, c);
  return out;
}

/// Mean of the good same-phase neighbors in the window; falls back to all
/// good neighbors, then to the nearest-neighbor rule for a dead window.
inline BayerImage correct_linear(const BayerImage& img, const DefectMap& map,
                                 int window = 3) {
  if ((window & 1) == 0 || window < 3)
    throw DataError(DataFault::bad_value, "window must be odd >= 3");
  if (!DefectMap{img.width, img.height}.same_dims(map))
    throw DataError(DataFault::dimension_mismatch, "map dims do not match image");
  if (map.defect_count() == map.pixel_count())
    throw DataError(DataFault::empty_input, "all pixels defective");
  BayerImage out = img;
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      if (!map.at(r, c)) continue;
      const auto vals = detail::window_good_neighbors(img, map, r, c, window);
      if (vals.empty()) {
        out.at(r, c) = detail::nearest_good_value(img, map, r, c);
      } else {
        double sum = 0.0;
        for (float v : vals) sum += v;
        out.at(r, c) = static_cast<float>(sum / static_cast<double>(vals.size()));
      }
    }
  }
  return out;
}

/// As correct_linear with the median; an even count takes the lower of the
/// two middles so the output stays an attainable pixel value.
inline BayerImage correct_median(const BayerImage& img, const DefectMap& map,
                                 int window = 3) {
  if ((window & 1) == 0 || window < 3)
    throw DataError(DataFault::bad_value, "window must be odd >= 3");
  if (!DefectMap{img.width, img.height}.same_dims(map))
    throw DataError(DataFault::dimension_mismatch, "map dims do not match image");
  if (map.defect_count() == map.pixel_count())
    throw DataError(DataFault::empty_input, "all pixels defective");
  BayerImage out = img;
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      if (!map.at(r, c)) continue;
      auto vals = detail::window_good_neighbors(img, map, r, c, window);
      if (vals.empty()) {
        out.at(r, c) = detail::nearest_good_value(img, map, r, c);
      } else {
        const std::size_t mid = (vals.size() - 1) / 2;  // lower-middle rule
        std::nth_element(vals.begin(), vals.begin() + mid, vals.end());
        out.at(r, c) = vals[mid];
      }
    }
  }
  return out;
}

}  // namespace badpix
