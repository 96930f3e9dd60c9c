#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "badpix/checkpoint.hpp"
#include "badpix/common.hpp"
#include "badpix/graph.hpp"

namespace badpix {

struct VitConfig {
  int input_size = 15;
  int token_patch = 5;
  int embed_dim = 16;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int heads = 2;
  int mlp_ratio = 3;
  bool mask_center = false;

  int token_count() const {
    const int gpl = input_size / token_patch;
    return gpl * gpl;
  }
  std::string canonical() const {
    return "vit:in=" + std::to_string(input_size) +
           ",tok=" + std::to_string(token_patch) +
           ",dim=" + std::to_string(embed_dim) +
           ",enc=" + std::to_string(encoder_layers) +
           ",dec=" + std::to_string(decoder_layers) +
           ",heads=" + std::to_string(heads) +
           ",mlp=" + std::to_string(mlp_ratio) +
           ",mask=" + std::to_string(mask_center ? 1 : 0);
  }
};

/// Transformer autoencoder over non-overlapping pixel tokens. No input
/// masking in full-image mode: every embedding from the corrupted frame
/// enters the encoder. With mask_center the central token embedding is
/// replaced by a learned vector before the encoder, so the prediction for
/// that region depends only on the surrounding tokens.
template <typename T>
struct VitModel {
  VitConfig cfg;
  Graph<T> g;
  int input = -1;   // [S, S]
  int target = -1;  // [S, S]
  int mask = -1;    // [S, S] 0/1
  int recon = -1;   // [S, S]
  int loss = -1;    // [1] masked nmse

  std::uint64_t digest() const { return fnv1a64(cfg.canonical()); }
};

namespace detail {

template <typename T>
int vit_dense(Graph<T>& g, int x, int out_f, const std::string& prefix) {
  const int in_f = g.shape(x).back();
  const int w =
      g.add_param(prefix + ".w", {in_f, out_f}, InitKind::kaiming_uniform, in_f);
  const int b = g.add_param(prefix + ".b", {out_f}, InitKind::zeros);
  return g.dense(x, w, b, prefix);
}

template <typename T>
int vit_layernorm(Graph<T>& g, int x, const std::string& prefix) {
  const int n = g.shape(x).back();
  const int gain = g.add_param(prefix + ".g", {n}, InitKind::ones);
  const int bias = g.add_param(prefix + ".b", {n}, InitKind::zeros);
  return g.layernorm_last(x, gain, bias, prefix);
}

template <typename T>
int vit_attention(Graph<T>& g, int x, int heads, const std::string& prefix) {
  const int tokens = g.shape(x)[0];
  const int dim = g.shape(x)[1];
  const int dh = dim / heads;
  auto split = [&](int t) {
    return g.permute(g.reshape(t, {tokens, heads, dh}), {1, 0, 2});
  };
  const int q = split(vit_dense(g, x, dim, prefix + ".q"));
  const int k = split(vit_dense(g, x, dim, prefix + ".k"));
  const int v = split(vit_dense(g, x, dim, prefix + ".v"));
  const int att = g.softmax_last(
      g.scale(g.matmul(q, g.transpose_last2(k)), 1.0 / std::sqrt(double(dh))));
  const int ctx = g.reshape(g.permute(g.matmul(att, v), {1, 0, 2}),
                            {tokens, dim});
  return vit_dense(g, ctx, dim, prefix + ".proj");
}

/// Pre-layernorm transformer block: x + attn(ln(x)), then x + ffn(ln(x)).
template <typename T>
int vit_block(Graph<T>& g, int x, int heads, int mlp_ratio,
              const std::string& prefix) {
  const int dim = g.shape(x)[1];
  int a = vit_attention(g, vit_layernorm(g, x, prefix + ".ln1"), heads,
                        prefix + ".attn");
  x = g.add(x, a);
  int f = vit_layernorm(g, x, prefix + ".ln2");
  f = g.relu(vit_dense(g, f, dim * mlp_ratio, prefix + ".ffn1"));
  f = vit_dense(g, f, dim, prefix + ".ffn2");
  return g.add(x, f);
}

}  // namespace detail

template <typename T>
VitModel<T> build_vit_ae(const VitConfig& cfg, std::uint64_t seed) {
  if (cfg.input_size % cfg.token_patch != 0)
    throw DataError(DataFault::dimension_mismatch,
                    "vit: input_size " + std::to_string(cfg.input_size) +
                        " not divisible by token_patch " +
                        std::to_string(cfg.token_patch));
  if (cfg.embed_dim % cfg.heads != 0)
    throw ConfigError("vit: embed_dim must be divisible by heads");
  if (cfg.mlp_ratio < 1) throw ConfigError("vit: mlp_ratio must be >= 1");
  if (cfg.mask_center && (cfg.input_size / cfg.token_patch) % 2 == 0)
    throw ConfigError("vit: mask_center needs an odd token grid");

  VitModel<T> m;
  m.cfg = cfg;
  Graph<T>& g = m.g;
  const int S = cfg.input_size, p = cfg.token_patch, D = cfg.embed_dim;
  const int tokens = cfg.token_count();

  m.input = g.add_input("image", {S, S});
  int cur = g.patchify(m.input, p, "patchify");
  cur = detail::vit_dense(g, cur, D, "embed");
  const int pos = g.add_param("pos_embed", {tokens, D}, InitKind::normal_002);
  cur = g.add(cur, pos);
  if (cfg.mask_center) {
    const int mask_vec = g.add_param("mask_token", {D}, InitKind::normal_002);
    cur = g.row_replace(cur, mask_vec, tokens / 2, "mask_center");
  }
  for (int i = 0; i < cfg.encoder_layers; ++i)
    cur = detail::vit_block(g, cur, cfg.heads, cfg.mlp_ratio,
                            "enc" + std::to_string(i));
  cur = detail::vit_layernorm(g, cur, "enc_norm");
  for (int i = 0; i < cfg.decoder_layers; ++i)
    cur = detail::vit_block(g, cur, cfg.heads, cfg.mlp_ratio,
                            "dec" + std::to_string(i));
  cur = detail::vit_layernorm(g, cur, "dec_norm");
  cur = detail::vit_dense(g, cur, p * p, "head");
  m.recon = g.unpatchify(cur, S, S, p, "recon");
  m.target = g.add_input("target", {S, S});
  m.mask = g.add_input("mask", {S, S});
  m.loss = g.masked_nmse_loss(m.recon, m.target, m.mask, "loss");
  g.init_params(seed);
  return m;
}

/// Closed-form parameter count for the layout above.
inline std::int64_t vit_param_count_formula(const VitConfig& cfg) {
  const std::int64_t D = cfg.embed_dim, p2 = cfg.token_patch * cfg.token_patch;
  const std::int64_t tokens = cfg.token_count();
  const std::int64_t block =
      2 * (2 * D)                      // two layernorms
      + 4 * (D * D + D)                // q, k, v, proj
      + (D * D * cfg.mlp_ratio + D * cfg.mlp_ratio)  // ffn1
      + (D * cfg.mlp_ratio * D + D);   // ffn2
  std::int64_t total = (p2 * D + D)    // embed
                       + tokens * D;   // positional table
  if (cfg.mask_center) total += D;
  total += (cfg.encoder_layers + cfg.decoder_layers) * block;
  total += 2 * (2 * D);                // enc/dec final norms
  total += D * p2 + p2;                // head
  return total;
}

/// Analytic cost of one forward pass.
struct ModelCost {
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

template <typename T>
ModelCost count_params_flops(const VitModel<T>& m) {
  return ModelCost{m.g.param_count(), m.g.mac_count()};
}

template <typename T>
ModelCost count_params_flops(const Graph<T>& g) {
  return ModelCost{g.param_count(), g.mac_count()};
}

/// Picks the feed-forward width multiplier whose parameter count lands
/// closest to a target budget.
inline int tune_mlp_ratio(VitConfig cfg, std::int64_t target_params,
                          const std::vector<int>& candidates = {1, 2, 3, 4}) {
  int best = candidates.front();
  std::int64_t best_diff = -1;
  for (int r : candidates) {
    cfg.mlp_ratio = r;
    const std::int64_t diff =
        std::llabs(vit_param_count_formula(cfg) - target_params);
    if (best_diff < 0 || diff < best_diff) {
      best_diff = diff;
      best = r;
    }
  }
  return best;
}

}  // namespace badpix
