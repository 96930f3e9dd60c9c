#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "badpix/checkpoint.hpp"
#include "badpix/common.hpp"
#include "badpix/graph.hpp"

namespace badpix {

struct UNetConfig {
  int depth = 3;
  int base_channels = 8;
  int in_channels = 1;
  int out_channels = 1;

  std::string canonical() const {
    return "unet:depth=" + std::to_string(depth) +
           ",base=" + std::to_string(base_channels) +
           ",in=" + std::to_string(in_channels) +
           ",out=" + std::to_string(out_channels);
  }
};

template <typename T>
struct UNetModel {
  UNetConfig cfg;
  int tile_h = 0;
  int tile_w = 0;
  Graph<T> g;
  int input = -1;   // [1, H, W]
  int target = -1;  // [H, W]
  int prob = -1;    // [H, W] sigmoid scores
  int loss = -1;    // [1] bce + dice

  std::uint64_t digest() const { return fnv1a64(cfg.canonical()); }
};

namespace detail {

template <typename T>
int unet_conv(Graph<T>& g, int x, int out_ch, int ksize, int stride, int pad,
              const std::string& prefix,
              InitKind weight_init = InitKind::kaiming_uniform) {
  const int in_ch = g.shape(x)[0];
  const int w = g.add_param(prefix + ".w", {out_ch, in_ch, ksize, ksize},
                            weight_init, in_ch * ksize * ksize);
  const int b = g.add_param(prefix + ".b", {out_ch}, InitKind::zeros);
  return g.conv2d(x, w, b, stride, pad, prefix);
}

}  // namespace detail

/// Encoder of conv-conv-downsample stages with channel doubling, mirrored
/// decoder with skip concatenations, 1x1 conv + sigmoid head. Downsampling
/// is a stride-2 conv; upsampling is nearest-neighbor followed by a 3x3
/// conv. Output dims equal input dims.
template <typename T>
UNetModel<T> build_unet(const UNetConfig& cfg, int tile_h, int tile_w,
                        std::uint64_t seed) {
  if (cfg.depth < 1 || cfg.base_channels < 1)
    throw ConfigError("unet: depth and base_channels must be >= 1");
  const int div = 1 << cfg.depth;
  if (tile_h % div != 0 || tile_w % div != 0)
    throw DataError(DataFault::dimension_mismatch,
                    "unet: tile dims " + std::to_string(tile_w) + "x" +
                        std::to_string(tile_h) + " not divisible by 2^depth = " +
                        std::to_string(div));

  UNetModel<T> m;
  m.cfg = cfg;
  m.tile_h = tile_h;
  m.tile_w = tile_w;
  Graph<T>& g = m.g;

  m.input = g.add_input("image", {cfg.in_channels, tile_h, tile_w});
  int cur = m.input;
  std::vector<int> skips;
  for (int i = 0; i < cfg.depth; ++i) {
    const int ch = cfg.base_channels << i;
    const std::string s = "enc" + std::to_string(i);
    cur = g.relu(detail::unet_conv(g, cur, ch, 3, 1, 1, s + "a"));
    cur = g.relu(detail::unet_conv(g, cur, ch, 3, 1, 1, s + "b"));
    skips.push_back(cur);
    cur = g.relu(detail::unet_conv(g, cur, ch * 2, 3, 2, 1,
                                   "down" + std::to_string(i)));
  }
  const int bott_ch = cfg.base_channels << cfg.depth;
  cur = g.relu(detail::unet_conv(g, cur, bott_ch, 3, 1, 1, "bott_a"));
  cur = g.relu(detail::unet_conv(g, cur, bott_ch, 3, 1, 1, "bott_b"));
  for (int i = cfg.depth - 1; i >= 0; --i) {
    const int ch = cfg.base_channels << i;
    const std::string s = "dec" + std::to_string(i);
    cur = g.upsample2x(cur);
    cur = g.relu(detail::unet_conv(g, cur, ch, 3, 1, 1, "up" + std::to_string(i)));
    cur = g.concat0(skips[static_cast<std::size_t>(i)], cur);
    cur = g.relu(detail::unet_conv(g, cur, ch, 3, 1, 1, s + "a"));
    cur = g.relu(detail::unet_conv(g, cur, ch, 3, 1, 1, s + "b"));
  }
  // zero-initialized head: training starts from scores of 0.5, which keeps
  // the heavily imbalanced segmentation objective from saturating the
  // sigmoid before any features exist
  const int head = detail::unet_conv(g, cur, cfg.out_channels, 1, 1, 0, "head",
                                     InitKind::zeros);
  const int prob3 = g.sigmoid(head);
  m.prob = g.reshape(prob3, {tile_h, tile_w}, "prob");
  m.target = g.add_input("target", {tile_h, tile_w});
  m.loss = g.bce_dice_loss(m.prob, m.target, 1.0, 1.0, "loss");
  g.init_params(seed);
  return m;
}

/// Closed-form parameter count for the stage layout above; used to
/// cross-check the graph's own accounting.
inline std::int64_t unet_param_count_formula(const UNetConfig& cfg) {
  auto conv = [](int ci, int co, int k) {
    return static_cast<std::int64_t>(co) * ci * k * k + co;
  };
  std::int64_t total = 0;
  int in_ch = cfg.in_channels;
  for (int i = 0; i < cfg.depth; ++i) {
    const int ch = cfg.base_channels << i;
    total += conv(in_ch, ch, 3) + conv(ch, ch, 3) + conv(ch, ch * 2, 3);
    in_ch = ch * 2;
  }
  const int bott = cfg.base_channels << cfg.depth;
  total += conv(bott, bott, 3) + conv(bott, bott, 3);
  for (int i = cfg.depth - 1; i >= 0; --i) {
    const int ch = cfg.base_channels << i;
    total += conv(ch * 2, ch, 3) + conv(2 * ch, ch, 3) + conv(ch, ch, 3);
  }
  total += conv(cfg.base_channels, cfg.out_channels, 1);
  return total;
}

}  // namespace badpix
