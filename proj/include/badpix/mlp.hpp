#pragma once

#include <cstdint>
#include <string>

#include "badpix/checkpoint.hpp"
#include "badpix/common.hpp"
#include "badpix/graph.hpp"

namespace badpix {

struct MlpConfig {
  int patch_size = 5;          // 5, 9 or 13
  int hidden_units = 64;
  int train_neighbor_errors = 0;  // corrupted neighbors per training patch

  int input_width() const { return patch_size * patch_size - 1; }
  std::string canonical() const {
    return "mlp:patch=" + std::to_string(patch_size) +
           ",hidden=" + std::to_string(hidden_units) +
           ",nerr=" + std::to_string(train_neighbor_errors);
  }
};

/// Two dense layers with ReLU between, sigmoid squashing the scalar output
/// into [0,1]. The input is the flattened patch with the center removed:
/// the corrupted center must not leak into the regression.
template <typename T>
struct MlpModel {
  MlpConfig cfg;
  Graph<T> g;
  int input = -1;   // [patch^2 - 1]
  int target = -1;  // [1]
  int pred = -1;    // [1]
  int loss = -1;    // [1] mse

  std::uint64_t digest() const { return fnv1a64(cfg.canonical()); }
};

template <typename T>
MlpModel<T> build_mlp(const MlpConfig& cfg, std::uint64_t seed) {
  if ((cfg.patch_size & 1) == 0 || cfg.patch_size < 3)
    throw ConfigError("mlp: patch_size must be odd >= 3");
  if (cfg.hidden_units < 1) throw ConfigError("mlp: hidden_units must be >= 1");
  MlpModel<T> m;
  m.cfg = cfg;
  Graph<T>& g = m.g;
  const int in_w = cfg.input_width();
  m.input = g.add_input("neighbors", {in_w});
  const int w1 = g.add_param("fc1.w", {in_w, cfg.hidden_units},
                             InitKind::kaiming_uniform, in_w);
  const int b1 = g.add_param("fc1.b", {cfg.hidden_units}, InitKind::zeros);
  const int h = g.relu(g.dense(m.input, w1, b1, "fc1"));
  const int w2 = g.add_param("fc2.w", {cfg.hidden_units, 1},
                             InitKind::kaiming_uniform, cfg.hidden_units);
  const int b2 = g.add_param("fc2.b", {1}, InitKind::zeros);
  m.pred = g.sigmoid(g.dense(h, w2, b2, "fc2"), "pred");
  m.target = g.add_input("center", {1});
  m.loss = g.mse_loss(m.pred, m.target, "loss");
  g.init_params(seed);
  return m;
}

inline std::int64_t mlp_param_count_formula(const MlpConfig& cfg) {
  const std::int64_t in_w = cfg.input_width();
  const std::int64_t h = cfg.hidden_units;
  return (in_w * h + h) + (h + 1);
}

}  // namespace badpix
