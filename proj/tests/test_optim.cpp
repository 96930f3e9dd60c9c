#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "badpix/graph.hpp"
#include "badpix/optim.hpp"

using namespace badpix;
using Catch::Approx;

TEST_CASE("step schedule halves every period", "[optim]") {
  const LrSchedule s = LrSchedule::step(0.001, 0.5, 10);
  REQUIRE(lr_at(s, 0) == Approx(0.001));
  REQUIRE(lr_at(s, 9) == Approx(0.001));
  REQUIRE(lr_at(s, 10) == Approx(0.0005));
  REQUIRE(lr_at(s, 25) == Approx(0.00025));
}

TEST_CASE("warmup-cosine schedule", "[optim]") {
  const LrSchedule s = LrSchedule::warmup_cosine(0.01, 5, 50);
  // linear ramp over the first five epochs
  REQUIRE(lr_at(s, 0) == Approx(0.01 / 5.0));
  REQUIRE(lr_at(s, 4) == Approx(0.01));
  // cosine decay afterwards, hitting ~0 at the end
  REQUIRE(lr_at(s, 5) == Approx(0.01));
  REQUIRE(lr_at(s, 49) < 0.0005);
  REQUIRE(lr_at(s, 50) == Approx(0.0).margin(1e-12));
  for (int e = 5; e < 50; ++e) REQUIRE(lr_at(s, e + 1) <= lr_at(s, e) + 1e-15);
}

TEST_CASE("schedule validation", "[optim]") {
  LrSchedule s = LrSchedule::warmup_cosine(0.01, 50, 50);
  REQUIRE_THROWS_AS(lr_at(s, 1), ConfigError);
  s = LrSchedule::constant(0.0);
  REQUIRE_THROWS_AS(lr_at(s, 0), ConfigError);
  REQUIRE_THROWS_AS(lr_at(LrSchedule::constant(0.1), -1), ConfigError);
}

namespace {

Graph<double> two_param_graph(int& p1, int& p2) {
  Graph<double> g;
  p1 = g.add_param("a", {3}, InitKind::zeros);
  p2 = g.add_param("b", {2}, InitKind::zeros);
  g.init_params(0);
  return g;
}

}  // namespace

TEST_CASE("sgd: first step moves by lr * grad", "[optim]") {
  int p1 = 0, p2 = 0;
  Graph<double> g = two_param_graph(p1, p2);
  g.value(p1).fill(1.0);
  g.value(p2).fill(2.0);
  g.grad(p1).fill(1.0);
  g.grad(p2).fill(1.0);
  SgdMomentum<double> sgd(0.9);
  sgd.step(g, 0.1);
  for (double v : g.value(p1).v) REQUIRE(v == Approx(0.9));
  for (double v : g.value(p2).v) REQUIRE(v == Approx(1.9));
}

TEST_CASE("optimizers: zero gradients leave parameters unchanged", "[optim]") {
  int p1 = 0, p2 = 0;
  Graph<double> g = two_param_graph(p1, p2);
  g.value(p1).fill(0.7);
  g.value(p2).fill(-0.3);
  Adam<double> adam;
  adam.step(g, 0.1);
  SgdMomentum<double> sgd;
  sgd.step(g, 0.1);
  for (double v : g.value(p1).v) REQUIRE(v == 0.7);
  for (double v : g.value(p2).v) REQUIRE(v == -0.3);
}

TEST_CASE("adam: first step magnitude approaches lr * sign(grad)", "[optim]") {
  // closed form for t=1: update = lr * g / (|g| + eps)
  int p1 = 0, p2 = 0;
  Graph<double> g = two_param_graph(p1, p2);
  g.grad(p1).v = {0.5, -0.25, 2.0};
  g.grad(p2).v = {-1.0, 0.125};
  Adam<double> adam;
  adam.step(g, 0.01);
  const std::vector<double> expect1 = {-0.01, 0.01, -0.01};
  for (std::size_t i = 0; i < 3; ++i)
    REQUIRE(g.value(p1).v[i] == Approx(expect1[i]).margin(1e-6));
  REQUIRE(g.value(p2).v[0] == Approx(0.01).margin(1e-6));
  REQUIRE(g.value(p2).v[1] == Approx(-0.01).margin(1e-6));
}

TEST_CASE("adam: non-finite gradient names the parameter", "[optim]") {
  int p1 = 0, p2 = 0;
  Graph<double> g = two_param_graph(p1, p2);
  g.grad(p2).v[1] = std::numeric_limits<double>::quiet_NaN();
  Adam<double> adam;
  try {
    adam.step(g, 0.01);
    FAIL("expected numeric error");
  } catch (const NumericError& e) {
    REQUIRE(std::string(e.what()).find("'b'") != std::string::npos);
  }
}

TEST_CASE("grad scale folds the batch mean into the step", "[optim]") {
  int p1 = 0, p2 = 0;
  Graph<double> ga = two_param_graph(p1, p2);
  Graph<double> gb = two_param_graph(p1, p2);
  ga.grad(p1).fill(4.0);
  gb.grad(p1).fill(1.0);
  SgdMomentum<double> sa(0.0), sb(0.0);
  sa.step(ga, 0.1, 0.25);  // accumulated over 4 samples
  sb.step(gb, 0.1, 1.0);
  REQUIRE(ga.value(p1).v == gb.value(p1).v);
}
