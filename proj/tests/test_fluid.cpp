#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "jsq/fluid.hpp"

using jsq::FluidOptions;
using jsq::PiecewisePath;
using jsq::Topology;
using V = std::vector<double>;

namespace {

Topology single(double lambda, double mu) {
  return jsq::topology_from_json({{"K", 1}, {"M", 1}, {"lambda", {lambda}}, {"mu", {mu}}, {"admissible", {{1}}}});
}

Topology two_queue() {
  return jsq::topology_from_json({{"K", 2}, {"M", 1}, {"lambda", {3}}, {"mu", {1, 1}}, {"admissible", {{1, 2}}}});
}

Topology weighted() {
  return jsq::topology_from_json(nlohmann::json::parse(R"({
    "K": 3, "M": 2, "lambda": [1.5, 1], "mu": [1, 0.75, 1.25],
    "admissible": [[1, 2], [2, 3]], "weights": [{"1": 1, "2": "3/2"}, {"2": 2, "3": 1}]})"));
}

V two_queue_exact(double t) {
  if (t <= 1.0 / 3) return {1 - t, 2 * t};
  const double v = 2.0 / 3 + 0.5 * (t - 1.0 / 3);
  return {v, v};
}

double error_vs_exact(const jsq::FluidSolution& s) {
  const PiecewisePath exact({0.0, 1.0 / 3, 1.0}, {two_queue_exact(0), two_queue_exact(1.0 / 3), two_queue_exact(1)});
  return jsq::sup_distance(s.q, exact);
}

// Nondecreasing piecewise-linear input with random slopes in [0, 2 rate].
PiecewisePath random_input(std::span<const double> rate, double T, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 2);
  const int pieces = 8;
  std::vector<double> times;
  std::vector<std::vector<double>> values;
  V cur(rate.size(), 0.0);
  for (int i = 0; i <= pieces; ++i) {
    times.push_back(T * i / pieces);
    values.push_back(cur);
    for (std::size_t c = 0; c < cur.size(); ++c) cur[c] += rate[c] * u(rng) * T / pieces;
  }
  return PiecewisePath(times, values);
}

void expect_invariants(const jsq::FluidSolution& s, std::span<const double> q0, const Topology& t) {
  const std::size_t K = t.servers(), M = t.streams();
  for (std::size_t j = 0; j < s.q.size(); ++j) {
    const double time = s.q.time(j);
    const V a = s.a_input.evaluate(time), b = s.b_input.evaluate(time);
    const V a0 = s.a_input.evaluate(0), b0 = s.b_input.evaluate(0);
    for (std::size_t k = 0; k < K; ++k) {
      EXPECT_GE(s.q.value(j, k), 0.0);
      double in = 0;
      for (std::size_t m = 0; m < M; ++m) {
        in += s.e.value(j, k * M + m);
        if (!t.admits(k, m)) {
          EXPECT_EQ(s.e.value(j, k * M + m), 0.0);
        }
      }
      EXPECT_NEAR(s.q.value(j, k), q0[k] + in - s.d.value(j, k), 1e-12);
      EXPECT_LE(s.d.value(j, k), b[k] - b0[k] + 1e-12);
    }
    for (std::size_t m = 0; m < M; ++m) {
      double routed = 0;
      for (std::size_t k = 0; k < K; ++k) routed += s.e.value(j, k * M + m);
      EXPECT_NEAR(routed, a[m] - a0[m], 1e-12);
    }
    if (j == 0) continue;
    // Service is only lost at an empty queue.
    const V bp = s.b_input.evaluate(s.q.time(j - 1));
    for (std::size_t k = 0; k < K; ++k) {
      const double dd = s.d.value(j, k) - s.d.value(j - 1, k);
      EXPECT_GE(dd, -1e-15);
      if (s.q.value(j, k) > 1e-12) {
        EXPECT_NEAR(dd, b[k] - bp[k], 1e-12);
      }
    }
  }
}

}  // namespace

TEST(RouteStep, UniqueArgmin) {
  const auto t = two_queue();
  const auto s = jsq::fluid_route_step(V{1, 0}, V{0.3}, V{0, 0}, t);
  EXPECT_EQ(s.e, (V{0, 0.3}));
  EXPECT_EQ(s.q_next, (V{1, 0.3}));
  EXPECT_EQ(s.d, (V{0, 0}));
}

TEST(RouteStep, TiedSplit) {
  const auto t = two_queue();
  const auto s = jsq::fluid_route_step(V{0.5, 0.5}, V{0.4}, V{0, 0}, t);
  EXPECT_NEAR(s.e[0], 0.2, 1e-15);
  EXPECT_NEAR(s.e[1], 0.2, 1e-15);
  EXPECT_NEAR(s.q_next[0], 0.7, 1e-15);
  EXPECT_NEAR(s.q_next[1], 0.7, 1e-15);
}

TEST(RouteStep, TwoPhaseWaterFilling) {
  const auto t = two_queue();
  const auto s = jsq::fluid_route_step(V{0.1, 0.5}, V{1.0}, V{0, 0}, t);
  EXPECT_NEAR(s.e[0], 0.7, 1e-15);
  EXPECT_NEAR(s.e[1], 0.3, 1e-15);
  EXPECT_NEAR(s.q_next[0], 0.8, 1e-15);
  EXPECT_NEAR(s.q_next[1], 0.8, 1e-15);
  EXPECT_NEAR(s.e[0] + s.e[1], 1.0, 0.0);
}

TEST(RouteStep, WeightedLevels) {
  // Stream 2 sees server 2 at level 0.4 / 2 and server 3 at 0.5 / 1.
  const auto t = weighted();
  const auto s = jsq::fluid_route_step(V{0, 0.4, 0.5}, V{0, 0.2}, V{0, 0, 0}, t);
  EXPECT_NEAR(s.e[1 * 2 + 1], 0.2, 1e-15);
  EXPECT_EQ(s.e[2 * 2 + 1], 0.0);
}

TEST(RouteStep, ServiceCapsAtContent) {
  const auto t = single(1, 2);
  const auto s = jsq::fluid_route_step(V{0.1}, V{0.05}, V{0.5}, t);
  EXPECT_NEAR(s.d[0], 0.15, 1e-15);
  EXPECT_EQ(s.q_next[0], 0.0);
}

TEST(RouteStep, RejectsBadInput) {
  const auto t = two_queue();
  EXPECT_THROW(jsq::fluid_route_step(V{-1, 0}, V{0.1}, V{0, 0}, t), jsq::InvalidArgument);
  EXPECT_THROW(jsq::fluid_route_step(V{0, 0}, V{-0.1}, V{0, 0}, t), jsq::InvalidArgument);
  EXPECT_THROW(jsq::fluid_route_step(V{0, 0}, V{0.1}, V{0}, t), jsq::InvalidArgument);
}

TEST(FluidSolve, SingleQueueDrains) {
  const auto t = single(1, 2);
  for (double h : {1e-2, 1e-3}) {
    const auto s = jsq::fluid_solve_nominal(V{1}, 2.0, h, t);
    double worst = 0;
    for (std::size_t j = 0; j < s.q.size(); ++j) {
      worst = std::max(worst, std::abs(s.q.value(j, 0) - std::max(1 - s.q.time(j), 0.0)));
    }
    EXPECT_LE(worst, 2 * h);
  }
}

TEST(FluidSolve, TwoQueueWorkedExample) {
  const auto t = two_queue();
  double prev = 0;
  for (double h : {1e-2, 5e-3, 2.5e-3, 1.25e-3}) {
    const double err = error_vs_exact(jsq::fluid_solve_nominal(V{1, 0}, 1.0, h, t));
    EXPECT_LE(err, 3 * h);
    if (prev > 0) {
      EXPECT_GE(prev / err, 1.8) << "h=" << h;
    }
    prev = err;
  }
}

TEST(FluidSolve, ResolvedSwitchesAreExact) {
  const auto t = two_queue();
  FluidOptions opt;
  opt.resolve_switches = true;
  const auto s = jsq::fluid_solve_nominal(V{1, 0}, 1.0, 1e-2, t, opt);
  EXPECT_LE(error_vs_exact(s), 1e-12);
  const auto& ts = s.q.times();
  EXPECT_TRUE(std::any_of(ts.begin(), ts.end(), [](double x) { return std::abs(x - 1.0 / 3) < 1e-12; }));
}

TEST(FluidSolve, EmptyStaysEmpty) {
  const auto t = single(1, 2);
  const auto a = PiecewisePath({0.0, 1.0}, {V{0}, V{0}});
  const auto b = PiecewisePath::linear(t.mus(), 1.0);
  const auto s = jsq::fluid_solve(V{0}, a, b, 1.0, 1e-2, t);
  for (std::size_t j = 0; j < s.q.size(); ++j) {
    EXPECT_EQ(s.q.value(j, 0), 0.0);
    EXPECT_EQ(s.d.value(j, 0), 0.0);
  }
}

TEST(FluidSolve, InvariantsUnderRandomInputs) {
  std::mt19937_64 rng(17);
  for (const auto& t : {two_queue(), weighted()}) {
    for (int i = 0; i < 10; ++i) {
      std::uniform_real_distribution<double> u(0, 1);
      V q0(t.servers());
      for (double& v : q0) v = u(rng);
      const auto a = random_input(t.lambdas(), 2.0, rng);
      const auto b = random_input(t.mus(), 2.0, rng);
      for (bool resolve : {false, true}) {
        FluidOptions opt;
        opt.resolve_switches = resolve;
        expect_invariants(jsq::fluid_solve(q0, a, b, 2.0, 1e-2, t, opt), q0, t);
      }
    }
  }
}

TEST(FluidSolve, RejectsBadInput) {
  const auto t = single(1, 2);
  const auto good = PiecewisePath::linear(t.lambdas(), 1.0);
  const auto decreasing = PiecewisePath({0.0, 1.0}, {V{1}, V{0}});
  EXPECT_THROW(jsq::fluid_solve(V{1}, decreasing, good, 1.0, 0.1, t), jsq::InvalidArgument);
  EXPECT_THROW(jsq::fluid_solve(V{1}, good, decreasing, 1.0, 0.1, t), jsq::InvalidArgument);
  EXPECT_THROW(jsq::fluid_solve(V{-1}, good, good, 1.0, 0.1, t), jsq::InvalidArgument);
  EXPECT_THROW(jsq::fluid_solve(V{1}, good, good, 1.0, 0.0, t), jsq::InvalidArgument);
  EXPECT_THROW(jsq::fluid_solve(V{1}, good, good, 2.0, 0.1, t), jsq::InvalidArgument);
  EXPECT_THROW(jsq::fluid_solve(V{1, 1}, good, good, 1.0, 0.1, t), jsq::InvalidArgument);
}

TEST(Lyapunov, IdenticalStartsGiveZero) {
  const auto t = two_queue();
  const auto s = jsq::fluid_solve_nominal(V{1, 0}, 1.0, 1e-2, t);
  EXPECT_EQ(jsq::lyapunov_check(s, s), 0.0);
}

TEST(Lyapunov, SingleQueueContracts) {
  const auto t = single(1, 2);
  for (double h : {1e-2, 1e-3}) {
    const auto s1 = jsq::fluid_solve_nominal(V{1}, 3.0, h, t);
    const auto s2 = jsq::fluid_solve_nominal(V{2}, 3.0, h, t);
    EXPECT_LE(jsq::lyapunov_check(s1, s2), 1e-12);
  }
}

TEST(Lyapunov, SymmetricPairCoalesces) {
  const auto t = two_queue();
  for (double h : {1e-2, 1e-3}) {
    const auto s1 = jsq::fluid_solve_nominal(V{1, 0}, 2.0, h, t);
    const auto s2 = jsq::fluid_solve_nominal(V{0, 1}, 2.0, h, t);
    EXPECT_LE(jsq::lyapunov_check(s1, s2), 5 * h);
    EXPECT_NEAR(s1.q.value(s1.q.size() - 1, 0), s2.q.value(s2.q.size() - 1, 0), 5 * h);
  }
}

TEST(Lyapunov, RejectsDifferentInputs) {
  const auto t = single(1, 2);
  const auto s1 = jsq::fluid_solve_nominal(V{1}, 1.0, 1e-2, t);
  const auto s2 = jsq::fluid_solve_nominal(V{1}, 1.0, 2e-2, t);
  EXPECT_THROW(jsq::lyapunov_check(s1, s2), jsq::InvalidArgument);
}

TEST(FluidSolve, ResolvedAgreesWithPlainAndIsStepFree) {
  const auto t = weighted();
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(0, 1);
  FluidOptions exact;
  exact.resolve_switches = true;
  for (int i = 0; i < 40; ++i) {
    const V q0{u(rng), u(rng), u(rng)};
    const auto coarse = jsq::fluid_solve_nominal(q0, 2.0, 1e-2, t, exact);
    const auto fine = jsq::fluid_solve_nominal(q0, 2.0, 1e-3, t, exact);
    const auto plain = jsq::fluid_solve_nominal(q0, 2.0, 1e-3, t);
    EXPECT_LE(jsq::sup_distance(coarse.q, fine.q), 1e-9);
    EXPECT_LE(jsq::sup_distance(plain.q, fine.q), 5e-3);
  }
}
