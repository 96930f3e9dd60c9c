#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "badpix/graph.hpp"
#include "oracles.hpp"

using namespace badpix;
using Catch::Approx;

namespace {

constexpr double kGradTol = 1e-4;

/// Random values bounded away from zero so ReLU kinks stay clear of the
/// finite-difference step.
std::vector<double> random_vals(std::size_t n, Rng& rng, double lo = 0.1,
                                double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) {
    const double m = uniform(rng, lo, hi);
    x = (uniform01(rng) < 0.5) ? -m : m;
  }
  return v;
}

std::vector<double> random_unit(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = uniform(rng, 0.05, 0.95);
  return v;
}

/// Attaches an MSE head against a random target so every output element
/// receives a distinct gradient.
int attach_loss(Graph<double>& g, int out, Rng& rng) {
  const auto& shape = g.shape(out);
  const int target = g.add_input("fd_target", shape);
  g.set_input(target, random_unit(g.value(target).v.size(), rng));
  return g.mse_loss(out, target, "fd_loss");
}

}  // namespace

TEST_CASE("dense: identity weights pass values through", "[autodiff]") {
  Graph<double> g;
  const int x = g.add_input("x", {3});
  const int w = g.add_param("w", {3, 3}, InitKind::zeros);
  const int b = g.add_param("b", {3}, InitKind::zeros);
  g.init_params(0);
  for (int i = 0; i < 3; ++i) g.value(w).at2(i, i) = 1.0;
  const int y = g.dense(x, w, b);
  g.set_input(x, {0.3, -0.5, 0.8});
  g.forward();
  REQUIRE(g.value(y).v == std::vector<double>{0.3, -0.5, 0.8});
}

TEST_CASE("dense: sum of identity-dense output has unit input grads",
          "[autodiff]") {
  Graph<double> g;
  const int x = g.add_input("x", {4}, /*needs_grad=*/true);
  const int w = g.add_param("w", {4, 4}, InitKind::zeros);
  const int b = g.add_param("b", {4}, InitKind::zeros);
  g.init_params(0);
  for (int i = 0; i < 4; ++i) g.value(w).at2(i, i) = 1.0;
  const int loss = g.sum_all(g.dense(x, w, b));
  g.set_input(x, {0.1, 0.2, 0.3, 0.4});
  g.forward();
  g.backward(loss);
  for (double d : g.grad(x).v) REQUIRE(d == 1.0);
}

TEST_CASE("relu forward", "[autodiff]") {
  Graph<double> g;
  const int x = g.add_input("x", {3});
  const int y = g.relu(x);
  g.set_input(x, {-1.0, 0.0, 2.0});
  g.forward();
  REQUIRE(g.value(y).v == std::vector<double>{0.0, 0.0, 2.0});
}

TEST_CASE("conv: all-ones 3x3 kernel on a flat frame", "[autodiff]") {
  Graph<double> g;
  const int x = g.add_input("x", {1, 5, 5});
  const int k = g.add_param("k", {1, 1, 3, 3}, InitKind::ones);
  const int b = g.add_param("b", {1}, InitKind::zeros);
  g.init_params(0);
  const int y = g.conv2d(x, k, b, 1, 1);
  g.set_input(x, std::vector<double>(25, 1.0));
  g.forward();
  const auto& out = g.value(y);
  REQUIRE(out.at3(0, 2, 2) == 9.0);  // interior: full 3x3 support
  REQUIRE(out.at3(0, 0, 0) == 4.0);  // corner: 2x2 support under zero pad
  REQUIRE(out.at3(0, 0, 2) == 6.0);  // edge: 2x3 support
}

TEST_CASE("conv: matches the definition oracle with stride 2", "[autodiff]") {
  Rng rng = make_rng(21);
  Graph<double> g;
  const int x = g.add_input("x", {2, 6, 6});
  const int k = g.add_param("k", {3, 2, 3, 3}, InitKind::kaiming_uniform, 18);
  const int b = g.add_param("b", {3}, InitKind::zeros);
  g.init_params(3);
  const int y = g.conv2d(x, k, b, 2, 1);
  const auto xin = random_vals(72, rng);
  g.set_input(x, xin);
  g.forward();
  int ho = 0, wo = 0;
  const auto want = oracle::conv2d_loop(xin, 2, 6, 6, g.value(k).v, 3, 3, 3,
                                        g.value(b).v, 2, 1, ho, wo);
  REQUIRE(g.shape(y) == std::vector<int>{3, ho, wo});
  for (std::size_t i = 0; i < want.size(); ++i)
    REQUIRE(g.value(y).v[i] == Approx(want[i]).margin(1e-12));
}

TEST_CASE("per-op finite-difference gradient checks", "[autodiff]") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng = make_rng(seed);

    SECTION("seeded pass " + std::to_string(seed)) {
      {  // dense
        Graph<double> g;
        const int x = g.add_input("x", {2, 5}, true);
        const int w = g.add_param("w", {5, 3}, InitKind::kaiming_uniform, 5);
        const int b = g.add_param("b", {3}, InitKind::normal_002);
        g.init_params(seed);
        const int loss = attach_loss(g, g.dense(x, w, b), rng);
        g.set_input(x, random_vals(10, rng));
        REQUIRE(oracle::max_rel_grad_error(g, loss, {x, w, b}) < kGradTol);
      }
      {  // conv stride 1 and 2, zero pad
        for (int stride : {1, 2}) {
          Graph<double> g;
          const int x = g.add_input("x", {2, 6, 6}, true);
          const int k =
              g.add_param("k", {2, 2, 3, 3}, InitKind::kaiming_uniform, 18);
          const int b = g.add_param("b", {2}, InitKind::normal_002);
          g.init_params(seed + stride);
          const int loss = attach_loss(g, g.conv2d(x, k, b, stride, 1), rng);
          g.set_input(x, random_vals(72, rng));
          REQUIRE(oracle::max_rel_grad_error(g, loss, {x, k, b}) < kGradTol);
        }
      }
      {  // upsample + relu + sigmoid + add + concat + scale
        Graph<double> g;
        const int x = g.add_input("x", {2, 3, 3}, true);
        const int y = g.add_input("y", {2, 6, 6}, true);
        const int up = g.upsample2x(x);
        const int mix = g.add(g.relu(up), g.sigmoid(y));
        const int cat = g.concat0(mix, g.scale(up, 0.37));
        const int loss = attach_loss(g, cat, rng);
        g.set_input(x, random_vals(18, rng));
        g.set_input(y, random_vals(72, rng));
        REQUIRE(oracle::max_rel_grad_error(g, loss, {x, y}) < kGradTol);
      }
      {  // matmul (batched) + transpose + softmax
        Graph<double> g;
        const int a = g.add_input("a", {2, 3, 4}, true);
        const int b = g.add_input("b", {2, 3, 4}, true);
        const int prod = g.matmul(a, g.transpose_last2(b));
        const int loss = attach_loss(g, g.softmax_last(prod), rng);
        g.set_input(a, random_vals(24, rng));
        g.set_input(b, random_vals(24, rng));
        REQUIRE(oracle::max_rel_grad_error(g, loss, {a, b}) < kGradTol);
      }
      {  // permute + reshape + patchify + unpatchify + row_replace
        Graph<double> g;
        const int x = g.add_input("x", {10, 10}, true);
        const int v = g.add_param("v", {25}, InitKind::normal_002);
        g.init_params(seed);
        const int tok = g.patchify(x, 5);  // [4, 25]
        const int rep = g.row_replace(tok, v, 2);
        const int back = g.unpatchify(rep, 10, 10, 5);
        const int resh = g.reshape(g.permute(back, {1, 0}), {10, 10});
        const int loss = attach_loss(g, resh, rng);
        g.set_input(x, random_vals(100, rng));
        REQUIRE(oracle::max_rel_grad_error(g, loss, {x, v}) < kGradTol);
      }
      {  // layernorm
        Graph<double> g;
        const int x = g.add_input("x", {4, 8}, true);
        const int gain = g.add_param("g", {8}, InitKind::ones);
        const int bias = g.add_param("b", {8}, InitKind::normal_002);
        g.init_params(seed);
        const int loss = attach_loss(g, g.layernorm_last(x, gain, bias), rng);
        g.set_input(x, random_vals(32, rng));
        REQUIRE(oracle::max_rel_grad_error(g, loss, {x, gain, bias}) < kGradTol);
      }
      {  // bce+dice on sigmoid scores
        Graph<double> g;
        const int x = g.add_input("x", {4, 4}, true);
        const int t = g.add_input("t", {4, 4});
        const int loss = g.bce_dice_loss(g.sigmoid(x), t, 1.0, 1.0);
        g.set_input(x, random_vals(16, rng, 0.1, 2.0));
        std::vector<double> target(16);
        for (auto& v : target) v = uniform01(rng) < 0.4 ? 1.0 : 0.0;
        g.set_input(t, target);
        REQUIRE(oracle::max_rel_grad_error(g, loss, {x}) < kGradTol);
      }
      {  // masked nmse
        Graph<double> g;
        const int p = g.add_input("p", {4, 4}, true);
        const int a = g.add_input("a", {4, 4});
        const int msk = g.add_input("m", {4, 4});
        const int loss = g.masked_nmse_loss(p, a, msk);
        g.set_input(p, random_unit(16, rng));
        g.set_input(a, random_unit(16, rng));
        std::vector<double> mv(16, 0.0);
        for (int i = 0; i < 16; ++i) mv[i] = uniform01(rng) < 0.5 ? 1.0 : 0.0;
        mv[3] = 1.0;  // never empty
        g.set_input(msk, mv);
        REQUIRE(oracle::max_rel_grad_error(g, loss, {p}) < kGradTol);
      }
      {  // composition: conv -> relu -> dense
        Graph<double> g;
        const int x = g.add_input("x", {1, 4, 4}, true);
        const int k = g.add_param("k", {2, 1, 3, 3}, InitKind::kaiming_uniform, 9);
        const int kb = g.add_param("kb", {2}, InitKind::normal_002);
        const int w = g.add_param("w", {32, 3}, InitKind::kaiming_uniform, 32);
        const int b = g.add_param("b", {3}, InitKind::zeros);
        g.init_params(seed);
        const int conv = g.relu(g.conv2d(x, k, kb, 1, 1));
        const int flat = g.reshape(conv, {1, 32});
        const int loss = attach_loss(g, g.dense(flat, w, b), rng);
        g.set_input(x, random_vals(16, rng));
        REQUIRE(oracle::max_rel_grad_error(g, loss, {x, k, kb, w, b}) <
                kGradTol);
      }
    }
  }
}

TEST_CASE("softmax rows sum to one", "[autodiff]") {
  Rng rng = make_rng(9);
  Graph<double> g;
  const int x = g.add_input("x", {6, 7});
  const int y = g.softmax_last(x);
  g.set_input(x, random_vals(42, rng, 0.1, 3.0));
  g.forward();
  for (int r = 0; r < 6; ++r) {
    double sum = 0;
    for (int c = 0; c < 7; ++c) sum += g.value(y).at2(r, c);
    REQUIRE(sum == Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("layernorm normalizes each feature group", "[autodiff]") {
  Rng rng = make_rng(10);
  Graph<double> g;
  const int x = g.add_input("x", {5, 16});
  const int gain = g.add_param("g", {16}, InitKind::ones);
  const int bias = g.add_param("b", {16}, InitKind::zeros);
  g.init_params(0);
  const int y = g.layernorm_last(x, gain, bias);
  g.set_input(x, random_vals(80, rng, 0.2, 2.0));
  g.forward();
  for (int r = 0; r < 5; ++r) {
    double mu = 0, var = 0;
    for (int c = 0; c < 16; ++c) mu += g.value(y).at2(r, c);
    mu /= 16;
    for (int c = 0; c < 16; ++c) {
      const double d = g.value(y).at2(r, c) - mu;
      var += d * d;
    }
    var /= 16;
    REQUIRE(std::fabs(mu) <= 1e-6);
    REQUIRE(std::fabs(var - 1.0) <= 1e-4);
  }
}

TEST_CASE("bce loss value: uniform scores vs all-ones target", "[autodiff]") {
  Graph<double> g;
  const int s = g.add_input("s", {3, 3});
  const int t = g.add_input("t", {3, 3});
  const int loss = g.bce_dice_loss(s, t, 1.0, 0.0);
  g.set_input(s, std::vector<double>(9, 0.5));
  g.set_input(t, std::vector<double>(9, 1.0));
  g.forward();
  REQUIRE(g.value(loss).v[0] == Approx(std::log(2.0)).margin(1e-9));
}

TEST_CASE("bce+dice matches the scalar oracle on random cases", "[autodiff]") {
  Rng rng = make_rng(13);
  for (int t = 0; t < 10; ++t) {
    Graph<double> g;
    const int s = g.add_input("s", {4, 4});
    const int tt = g.add_input("t", {4, 4});
    const int loss = g.bce_dice_loss(s, tt, 0.7, 1.3);
    const auto scores = random_unit(16, rng);
    std::vector<double> target(16);
    for (auto& v : target) v = uniform01(rng) < 0.5 ? 1.0 : 0.0;
    g.set_input(s, scores);
    g.set_input(tt, target);
    g.forward();
    REQUIRE(g.value(loss).v[0] ==
            Approx(oracle::bce_dice_loop(scores, target, 0.7, 1.3))
                .margin(1e-6));
  }
}

TEST_CASE("near-perfect scores give near-zero loss", "[autodiff]") {
  Graph<double> g;
  const int s = g.add_input("s", {2, 2});
  const int t = g.add_input("t", {2, 2});
  const int loss = g.bce_dice_loss(s, t, 1.0, 1.0);
  g.set_input(s, {0.9999, 0.0001, 0.0001, 0.9999});
  g.set_input(t, {1.0, 0.0, 0.0, 1.0});
  g.forward();
  REQUIRE(g.value(loss).v[0] < 1e-3);
}

TEST_CASE("masked nmse value cases", "[autodiff]") {
  Graph<double> g;
  const int p = g.add_input("p", {2, 2});
  const int a = g.add_input("a", {2, 2});
  const int m = g.add_input("m", {2, 2});
  const int loss = g.masked_nmse_loss(p, a, m);
  g.set_input(a, {0.4, 0.6, 0.5, 0.2});
  g.set_input(m, {1.0, 1.0, 0.0, 1.0});
  // pred == act on the mask -> 0
  g.set_input(p, {0.4, 0.6, 0.9, 0.2});
  g.forward();
  REQUIRE(g.value(loss).v[0] == Approx(0.0).margin(1e-12));
  // pred = 1.1 * act on the mask -> 0.01
  g.set_input(p, {0.44, 0.66, 0.9, 0.22});
  g.forward();
  REQUIRE(g.value(loss).v[0] == Approx(0.01).margin(1e-6));
  // oracle agreement on a random case
  Rng rng = make_rng(14);
  const auto pv = random_unit(4, rng), av = random_unit(4, rng);
  g.set_input(p, pv);
  g.set_input(a, av);
  g.forward();
  REQUIRE(g.value(loss).v[0] ==
          Approx(oracle::masked_nmse_loop(pv, av, {1.0, 1.0, 0.0, 1.0}))
              .margin(1e-9));
}

TEST_CASE("masked nmse: empty mask rejected", "[autodiff]") {
  Graph<double> g;
  const int p = g.add_input("p", {2, 2});
  const int a = g.add_input("a", {2, 2});
  const int m = g.add_input("m", {2, 2});
  g.masked_nmse_loss(p, a, m);
  g.set_input(p, {0.1, 0.2, 0.3, 0.4});
  g.set_input(a, {0.1, 0.2, 0.3, 0.4});
  g.set_input(m, {0.0, 0.0, 0.0, 0.0});
  try {
    g.forward();
    FAIL("expected empty-mask rejection");
  } catch (const DataError& e) {
    REQUIRE(e.fault() == DataFault::empty_input);
  }
}

TEST_CASE("shape mismatches name the offending node", "[autodiff]") {
  Graph<double> g;
  const int x = g.add_input("x", {4});
  const int w = g.add_param("w", {5, 3}, InitKind::zeros);
  const int b = g.add_param("b", {3}, InitKind::zeros);
  try {
    g.dense(x, w, b, "broken_dense");
    FAIL("expected shape error");
  } catch (const DataError& e) {
    REQUIRE(std::string(e.what()).find("broken_dense") != std::string::npos);
  }
  const int y = g.add_input("y", {2, 2});
  REQUIRE_THROWS_AS(g.add(x, y), DataError);
}

TEST_CASE("backward demands a scalar loss", "[autodiff]") {
  Graph<double> g;
  const int x = g.add_input("x", {3}, true);
  const int y = g.relu(x);
  g.set_input(x, {1.0, 2.0, 3.0});
  g.forward();
  REQUIRE_THROWS_AS(g.backward(y), NumericError);
}

TEST_CASE("forward is bit-deterministic", "[autodiff]") {
  Rng rng = make_rng(15);
  Graph<float> g;
  const int x = g.add_input("x", {1, 8, 8});
  const int k = g.add_param("k", {4, 1, 3, 3}, InitKind::kaiming_uniform, 9);
  const int b = g.add_param("b", {4}, InitKind::zeros);
  g.init_params(99);
  const int y = g.sigmoid(g.conv2d(x, k, b, 1, 1));
  std::vector<float> in(64);
  for (auto& v : in) v = static_cast<float>(uniform01(rng));
  g.set_input(x, in);
  g.forward();
  const auto first = g.value(y).v;
  g.forward();
  REQUIRE(g.value(y).v == first);
}

TEST_CASE("patchify/unpatchify is the identity", "[autodiff]") {
  Rng rng = make_rng(16);
  Graph<double> g;
  const int x = g.add_input("x", {20, 15});
  const int back = g.unpatchify(g.patchify(x, 5), 20, 15, 5);
  const auto in = random_unit(300, rng);
  g.set_input(x, in);
  g.forward();
  REQUIRE(g.value(back).v == in);
}
