#include <gtest/gtest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "jsq/fluid.hpp"
#include "jsq/io.hpp"
#include "jsq/sim.hpp"

using jsq::SamplePath;
using jsq::SimulationParams;
using jsq::TieRule;
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

SimulationParams params(std::uint64_t n, double T, std::uint64_t seed, V q0, TieRule tie = TieRule::lowest_index) {
  SimulationParams p;
  p.n = n;
  p.T = T;
  p.seed = seed;
  p.tie = tie;
  p.q0_scaled = std::move(q0);
  return p;
}

// One arrival at unscaled time 3 on a single queue.
SamplePath one_arrival(std::uint64_t n, double T) {
  SamplePath p;
  p.servers = 1;
  p.streams = 1;
  p.n = n;
  p.T = T;
  p.times = {0, 3};
  p.Q = {0, 1};
  p.A = {0, 1};
  p.B = {0, 0};
  p.D = {0, 0};
  p.E = {0, 1};
  p.kinds = {jsq::EventKind::arrival};
  p.sources = {0};
  p.targets = {0};
  return p;
}

}  // namespace

TEST(Simulate, NoArrivalsNoContent) {
  const auto t = single(0, 2);
  const auto p = jsq::simulate(t, params(100, 5, 1, V{0}));
  EXPECT_GT(p.events(), 0u);  // service clock still ticks
  for (std::size_t r = 0; r < p.rows(); ++r) {
    EXPECT_EQ(p.Q[r], 0);
    EXPECT_EQ(p.A[r], 0);
    EXPECT_EQ(p.D[r], 0);
  }
  EXPECT_EQ(jsq::audit_path(p, t), std::nullopt);
}

TEST(Simulate, LowestIndexTieGoesToFirstServer) {
  const auto t = two_queue();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto p = jsq::simulate(t, params(1, 5, seed, V{0, 0}));
    const auto first = std::find(p.kinds.begin(), p.kinds.end(), jsq::EventKind::arrival);
    ASSERT_NE(first, p.kinds.end());
    EXPECT_EQ(p.targets[static_cast<std::size_t>(first - p.kinds.begin())], 0u);
  }
}

TEST(Simulate, RandomTieUsesBothServers) {
  const auto t = two_queue();
  int to_second = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto p = jsq::simulate(t, params(1, 5, seed, V{0, 0}, TieRule::uniform_random));
    const auto first = std::find(p.kinds.begin(), p.kinds.end(), jsq::EventKind::arrival);
    ASSERT_NE(first, p.kinds.end());
    to_second += p.targets[static_cast<std::size_t>(first - p.kinds.begin())] == 1 ? 1 : 0;
  }
  EXPECT_GT(to_second, 70);
  EXPECT_LT(to_second, 130);
}

TEST(Simulate, InitialStateIsFloorOfScaledQ0) {
  const auto p = jsq::simulate(two_queue(), params(10, 0.01, 3, V{0.55, 1.0}));
  EXPECT_EQ(p.Q[0], 5);
  EXPECT_EQ(p.Q[1], 10);
  EXPECT_EQ(p.times.front(), 0.0);
}

TEST(Simulate, AuditPassesOnAllTopologies) {
  for (const auto& t : {single(1, 1), two_queue(), weighted()}) {
    for (TieRule tie : {TieRule::lowest_index, TieRule::uniform_random}) {
      V q0(t.servers(), 0.2);
      const auto p = jsq::simulate(t, params(200, 2, 9, q0, tie), 4);
      EXPECT_EQ(jsq::audit_path(p, t), std::nullopt);
      EXPECT_LE(p.times.back(), 400.0);
    }
  }
}

TEST(Simulate, AuditCatchesCorruption) {
  const auto t = two_queue();
  const auto good = jsq::simulate(t, params(50, 1, 2, V{0.2, 0.2}));
  ASSERT_EQ(jsq::audit_path(good, t), std::nullopt);
  ASSERT_GT(good.events(), 10u);

  auto bad = good;
  bad.Q[2 * 5] += 1;
  EXPECT_NE(jsq::audit_path(bad, t), std::nullopt);

  bad = good;
  bad.times[3] = bad.times[2];
  bad.times[2] = bad.times[3] + 1;
  EXPECT_NE(jsq::audit_path(bad, t), std::nullopt);

  // Reroute the first arrival that had a strict argmin to the other server.
  bad = good;
  for (std::size_t i = 0; i < bad.events(); ++i) {
    const auto before = bad.queue(i);
    if (bad.kinds[i] != jsq::EventKind::arrival || before[0] == before[1]) continue;
    const std::size_t from = bad.targets[i], to = 1 - from;
    for (std::size_t r = i + 1; r < bad.rows(); ++r) {
      bad.Q[r * 2 + from] -= 1;
      bad.Q[r * 2 + to] += 1;
      bad.E[r * 2 + from] -= 1;
      bad.E[r * 2 + to] += 1;
    }
    bad.targets[i] = to;
    break;
  }
  const auto verdict = jsq::audit_path(bad, t);
  ASSERT_NE(verdict, std::nullopt);
}

TEST(Simulate, Reproducible) {
  const auto t = weighted();
  const auto p = params(100, 1, 42, V{0.1, 0.2, 0.3}, TieRule::uniform_random);
  const auto a = jsq::simulate(t, p, 7);
  const auto b = jsq::simulate(t, p, 7);
  EXPECT_TRUE(a == b);
  EXPECT_EQ(jsq::events_csv(a), jsq::events_csv(b));
  EXPECT_FALSE(a == jsq::simulate(t, p, 8));
  auto other = p;
  other.seed = 43;
  EXPECT_FALSE(a == jsq::simulate(t, other, 7));
}

TEST(Simulate, RunEventsMatchesRecordedPath) {
  const auto t = two_queue();
  const auto p = params(100, 1, 5, V{0.5, 0});
  const auto path = jsq::simulate(t, p, 3);
  std::size_t count = 0;
  const auto final_state = jsq::run_events(t, p, 3, [&](const jsq::SimulationState&) { ++count; });
  EXPECT_EQ(count, path.events());
  EXPECT_EQ(final_state.time, 100.0);
  EXPECT_EQ(final_state.Q[0], path.Q[(path.rows() - 1) * 2]);
  EXPECT_EQ(final_state.Q[1], path.Q[(path.rows() - 1) * 2 + 1]);
}

TEST(Simulate, ArrivalCountIsPoisson) {
  const auto t = single(1, 1);
  const auto p = params(1, 10, 123, V{0});
  const int reps = 10000;
  double sum = 0, sq = 0;
  for (int r = 0; r < reps; ++r) {
    const double a = static_cast<double>(jsq::run_events(t, p, static_cast<std::uint64_t>(r), [](const auto&) {}).A[0]);
    sum += a;
    sq += a * a;
  }
  const double mean = sum / reps;
  const double var = sq / reps - mean * mean;
  EXPECT_LE(std::abs(mean - 10), 3 * std::sqrt(10.0 / reps));
  EXPECT_NEAR(var, 10, 0.5);
}

TEST(Simulate, LawOfLargeNumbers) {
  const auto t = single(1, 1);
  const auto fluid = jsq::fluid_solve_nominal(V{1}, 1.0, 1e-3, t);
  int close = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto p = jsq::simulate(t, params(10000, 1, seed, V{1}));
    close += jsq::sup_deviation(p, fluid.q) <= 0.05 ? 1 : 0;
  }
  EXPECT_GE(close, 18);
}

TEST(Simulate, TieRuleIrrelevantAtFluidScale) {
  const auto t = two_queue();
  const auto lo = jsq::simulate(t, params(10000, 1, 11, V{0, 0}, TieRule::lowest_index));
  const auto rnd = jsq::simulate(t, params(10000, 1, 11, V{0, 0}, TieRule::uniform_random));
  const std::size_t q_cols[] = {0, 1};
  EXPECT_LE(jsq::sup_distance(jsq::scale_path(lo, 1e-3), jsq::scale_path(rnd, 1e-3), q_cols), 0.05);
}

TEST(Simulate, RejectsBadParams) {
  const auto t = two_queue();
  EXPECT_THROW(jsq::simulate(t, params(0, 1, 1, V{0, 0})), jsq::InvalidArgument);
  EXPECT_THROW(jsq::simulate(t, params(1, 0, 1, V{0, 0})), jsq::InvalidArgument);
  EXPECT_THROW(jsq::simulate(t, params(1, 1, 1, V{0})), jsq::InvalidArgument);
  EXPECT_THROW(jsq::simulate(t, params(1, 1, 1, V{-1, 0})), jsq::InvalidArgument);
  EXPECT_THROW(jsq::parse_tie_rule("first"), jsq::InvalidArgument);
  EXPECT_EQ(jsq::parse_tie_rule("lowest-index"), TieRule::lowest_index);
  EXPECT_EQ(jsq::parse_tie_rule("random"), TieRule::uniform_random);
}

TEST(ScalePath, UnitScaleIsIdentity) {
  const auto t = weighted();
  const auto p = jsq::simulate(t, params(1, 20, 4, V{1, 0, 2}));
  const auto s = jsq::scale_path(p, 0.25);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const std::size_t r = jsq::row_at(p, s.time(i));
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(s.value(i, k), static_cast<double>(p.Q[r * 3 + k]));
  }
  for (std::size_t r = 1; r < p.rows(); ++r) EXPECT_EQ(jsq::row_at(p, p.times[r]), r);
}

TEST(ScalePath, SingleArrivalJumpsAtScaledTime) {
  const auto p = one_arrival(10, 0.5);
  EXPECT_EQ(jsq::row_at(p, 3.0), 1u);
  EXPECT_EQ(jsq::row_at(p, std::nextafter(3.0, 0.0)), 0u);
  const auto s = jsq::scale_path(p, 0.05);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double expected = s.time(i) * 10 >= 3 ? 0.1 : 0.0;
    EXPECT_DOUBLE_EQ(s.value(i, 0), expected) << s.time(i);
  }
  EXPECT_DOUBLE_EQ(s.value(s.size() - 1, 0), 0.1);
  EXPECT_DOUBLE_EQ(s.horizon(), 0.5);
  // Against the zero path the step of size 0.1 is the whole deviation.
  const jsq::PiecewisePath zero({0.0, 0.5}, {V{0}, V{0}});
  EXPECT_DOUBLE_EQ(jsq::sup_deviation(p, zero), 0.1);
}

TEST(ScalePath, EmptyPathIsConstant) {
  SamplePath p;
  p.servers = 1;
  p.streams = 1;
  p.n = 4;
  p.T = 1;
  p.times = {0};
  p.Q = {8};
  p.A = {0};
  p.B = {0};
  p.D = {0};
  p.E = {0};
  const auto s = jsq::scale_path(p, 0.3);
  EXPECT_DOUBLE_EQ(s.horizon(), 1.0);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(s.value(i, 0), 2.0);
  EXPECT_THROW(jsq::scale_path(p, 0.0), jsq::InvalidArgument);
}
