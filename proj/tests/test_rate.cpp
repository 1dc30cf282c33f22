#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "jsq/fluid.hpp"
#include "jsq/rate.hpp"

using jsq::DomainLabel;
using jsq::kInfinity;
using jsq::PoissonCost;
using jsq::Topology;
using V = std::vector<double>;

namespace {

Topology mm1() {
  return jsq::topology_from_json({{"K", 1}, {"M", 1}, {"lambda", {1}}, {"mu", {1}}, {"admissible", {{1}}}});
}

Topology two_queue() {
  return jsq::topology_from_json({{"K", 2}, {"M", 1}, {"lambda", {3}}, {"mu", {1, 1}}, {"admissible", {{1, 2}}}});
}

Topology weighted() {
  return jsq::topology_from_json(nlohmann::json::parse(R"({
    "K": 3, "M": 2, "lambda": [1.5, 1], "mu": [1, 0.75, 1.25],
    "admissible": [[1, 2], [2, 3]], "weights": [{"1": 1, "2": "3/2"}, {"2": 2, "3": 1}]})"));
}

const double kGolden = 0.24514384755992;  // pi(phi) + pi(phi - 1), phi the golden ratio

// All constraints of N(x, y) at the witness.
void expect_feasible(const jsq::RateWitness& w, const V& x, const V& y, const Topology& t) {
  const std::size_t K = t.servers(), M = t.streams();
  const auto spec = jsq::FeasibleSetSpec::from_state(x, y, t);
  ASSERT_EQ(w.e.size(), K * M);
  for (std::size_t k = 0; k < K; ++k) {
    double inflow = 0;
    for (std::size_t m = 0; m < M; ++m) {
      const double e = w.e[k * M + m];
      EXPECT_GE(e, -1e-9);
      if (!spec.is_allowed(k, m)) {
        EXPECT_NEAR(e, 0.0, 1e-9);
      }
      inflow += e;
    }
    EXPECT_NEAR(inflow - w.d[k], y[k], 1e-9);
    EXPECT_GE(w.d[k], -1e-9);
    EXPECT_LE(w.d[k], w.b[k] + 1e-9);
    if (x[k] > 0) {
      EXPECT_NEAR(w.d[k], w.b[k], 1e-9);
    }
  }
  for (std::size_t m = 0; m < M; ++m) {
    double routed = 0;
    for (std::size_t k = 0; k < K; ++k) routed += w.e[k * M + m];
    EXPECT_NEAR(routed, w.a[m], 1e-9);
  }
  EXPECT_NEAR(PoissonCost(t).eval(w.a, w.b), w.value, 1e-9);
}

V draw(std::mt19937_64& rng, std::size_t K, double lo, double hi, bool lattice) {
  V v(K);
  for (double& c : v) {
    if (lattice) {
      std::uniform_int_distribution<int> cell(static_cast<int>(2 * lo), static_cast<int>(2 * hi));
      c = 0.5 * cell(rng);
    } else {
      c = std::uniform_real_distribution<double>(lo, hi)(rng);
    }
  }
  return v;
}

}  // namespace

TEST(ClassifyDomain, Examples) {
  const auto t = two_queue();
  EXPECT_EQ(jsq::classify_domain(V{0, 0}, t), (DomainLabel{{0, 1}, {{0, 1}}}));
  EXPECT_EQ(jsq::classify_domain(V{1, 2}, t), (DomainLabel{{}, {{0}}}));
  EXPECT_EQ(jsq::classify_domain(V{0, 2}, t), (DomainLabel{{0}, {{0}}}));
  EXPECT_THROW(jsq::classify_domain(V{-1, 2}, t), jsq::InvalidArgument);
}

TEST(ClassifyDomain, WeightedTiesUseRelativeTolerance) {
  const auto t = weighted();
  // levels for stream 1: x1 / 1 and x2 / 1.5
  EXPECT_EQ(jsq::classify_domain(V{1, 1.5, 3}, t).argmin_sets[0], (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(jsq::classify_domain(V{1, 1.5 * (1 + 1e-13), 3}, t).argmin_sets[0], (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(jsq::classify_domain(V{1, 1.5 * (1 + 1e-9), 3}, t).argmin_sets[0], (std::vector<std::size_t>{0}));
}

TEST(LocalRate, NominalPointHasZeroCost) {
  const auto t = mm1();
  const auto w = jsq::local_rate(V{1}, V{0}, t, PoissonCost(t));
  EXPECT_NEAR(w.value, 0.0, 1e-8);
  EXPECT_NEAR(w.a[0], 1.0, 1e-4);
  EXPECT_NEAR(w.b[0], 1.0, 1e-4);
  EXPECT_NEAR(w.e[0], 1.0, 1e-4);
  EXPECT_NEAR(w.d[0], 1.0, 1e-4);
}

TEST(LocalRate, GoldenValue) {
  const auto t = mm1();
  const auto w = jsq::local_rate(V{1}, V{1}, t, PoissonCost(t));
  const double phi = (1 + std::sqrt(5.0)) / 2;
  EXPECT_NEAR(w.value, kGolden, 1e-8);
  EXPECT_NEAR(w.value, 0.245122, 1e-4);
  EXPECT_NEAR(w.a[0], phi, 1e-6);
  EXPECT_NEAR(w.b[0], phi - 1, 1e-6);
  expect_feasible(w, V{1}, V{1}, t);
}

TEST(LocalRate, EmptyFeasibleSetGivesInfinityWithCertificate) {
  const auto t = two_queue();
  const auto w = jsq::local_rate(V{1, 2}, V{0, 1}, t, PoissonCost(t));
  EXPECT_EQ(w.value, kInfinity);
  ASSERT_TRUE(w.certificate.has_value());
  EXPECT_EQ(w.certificate->server, 1u);
  // u^T y > 0 while u^T (e 1 - d) <= 0 for every admissible (e, d).
  EXPECT_GT(w.certificate->farkas[1] * 1.0, 0.0);
  EXPECT_EQ(w.certificate->farkas[0], 0.0);
}

TEST(LocalRate, IdleQueueCanStayEmpty) {
  const auto t = mm1();
  // x = 0, y = 0: a = d = lambda <= b = mu is feasible at zero cost.
  EXPECT_NEAR(jsq::local_rate(V{0}, V{0}, t, PoissonCost(t)).value, 0.0, 1e-8);
  // The program itself allows y < 0 at an empty queue (d only needs d <= b);
  // nonnegativity of paths is enforced by the action, not by L.
  const double L = jsq::local_rate(V{0}, V{-0.5}, t, PoissonCost(t)).value;
  EXPECT_TRUE(std::isfinite(L));
  EXPECT_NEAR(L, jsq::psi_IJ(DomainLabel{{0}, {{0}}}, V{-0.5}, t, PoissonCost(t)), 2e-8);
}

TEST(LocalRate, RejectsBadInput) {
  const auto t = mm1();
  const PoissonCost c(t);
  EXPECT_THROW(jsq::local_rate(V{-1}, V{0}, t, c), jsq::InvalidArgument);
  EXPECT_THROW(jsq::local_rate(V{1, 1}, V{0}, t, c), jsq::InvalidArgument);
  EXPECT_THROW(jsq::local_rate(V{1}, V{0}, t, c, 0.0), jsq::InvalidArgument);
}

TEST(LocalRate, WitnessFeasibleOnRandomPoints) {
  std::mt19937_64 rng(17);
  for (const auto& t : {two_queue(), weighted()}) {
    const PoissonCost c(t);
    int finite = 0;
    for (int i = 0; i < 60; ++i) {
      const auto x = draw(rng, t.servers(), 0, 3, i % 2 == 0);
      const auto y = draw(rng, t.servers(), -2, 2, false);
      const auto w = jsq::local_rate(x, y, t, c);
      if (!w.finite()) continue;
      ++finite;
      expect_feasible(w, x, y, t);
    }
    EXPECT_GT(finite, 10);
  }
}

TEST(Bruteforce, Examples) {
  const auto t = mm1();
  const PoissonCost c(t);
  EXPECT_EQ(jsq::local_rate_bruteforce(V{1}, V{0}, t, c, 0.01, 5), 0.0);
  EXPECT_NEAR(jsq::local_rate_bruteforce(V{1}, V{1}, t, c, 0.001, 5), kGolden, 1e-3);
  const auto t2 = two_queue();
  EXPECT_EQ(jsq::local_rate_bruteforce(V{1, 2}, V{0, 1}, t2, PoissonCost(t2), 0.01, 5), kInfinity);
}

TEST(Bruteforce, DimensionBudget) {
  const auto t = weighted();
  EXPECT_THROW(jsq::local_rate_bruteforce(V{1, 1, 1}, V{0, 0, 0}, t, PoissonCost(t), 0.1, 1), jsq::InvalidArgument);
}

TEST(Bruteforce, DominatesSolver) {
  std::mt19937_64 rng(23);
  for (const auto& t : {mm1(), two_queue()}) {
    const PoissonCost c(t);
    for (int i = 0; i < 20; ++i) {
      const auto x = draw(rng, t.servers(), 0, 3, i % 2 == 0);
      const auto y = draw(rng, t.servers(), -2, 2, i % 3 == 0);
      const double L = jsq::local_rate(x, y, t, c).value;
      const double bf = jsq::local_rate_bruteforce(x, y, t, c, 2e-3, 5);
      EXPECT_EQ(std::isfinite(L), std::isfinite(bf));
      if (std::isfinite(bf)) {
        EXPECT_LE(L, bf + 1e-8);
      }
    }
  }
}

TEST(PsiIJ, Examples) {
  const auto t = mm1();
  const PoissonCost c(t);
  EXPECT_NEAR(jsq::psi_IJ(DomainLabel{{}, {{0}}}, V{1}, t, c), kGolden, 1e-8);
  EXPECT_NEAR(jsq::psi_IJ(DomainLabel{{0}, {{0}}}, V{0}, t, c), 0.0, 1e-8);
}

TEST(PsiIJ, InvalidLabel) {
  const auto t = two_queue();
  const PoissonCost c(t);
  try {
    jsq::psi_IJ(DomainLabel{{0}, {{0, 1}}}, V{0, 0}, t, c);
    FAIL();
  } catch (const jsq::InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("invalid label"), std::string::npos);
  }
  EXPECT_THROW(jsq::psi_IJ(DomainLabel{{}, {{}}}, V{0, 0}, t, c), jsq::InvalidArgument);
}

namespace {

// A convex cost that does not separate, for the error path.
class CoupledCost final : public jsq::CostModel {
 public:
  std::size_t arrival_dim() const override { return 1; }
  std::size_t service_dim() const override { return 1; }
  double eval(std::span<const double> a, std::span<const double> b) const override {
    return (a[0] - 1) * (a[0] - 1) + (a[0] - b[0]) * (a[0] - b[0]) + (b[0] - 1) * (b[0] - 1);
  }
  Eigen::VectorXd subgradient(std::span<const double> a, std::span<const double> b) const override {
    Eigen::VectorXd g(2);
    g << 2 * (a[0] - 1) + 2 * (a[0] - b[0]), -2 * (a[0] - b[0]) + 2 * (b[0] - 1);
    return g;
  }
};

}  // namespace

TEST(PsiIJ, RejectsNonSeparableCost) {
  const auto t = mm1();
  EXPECT_THROW(jsq::psi_IJ(DomainLabel{{}, {{0}}}, V{1}, t, CoupledCost{}), jsq::InvalidArgument);
}

TEST(LocalRate, GenericCostMatchesClosedForm) {
  // minimise (a-1)^2 + (a-b)^2 + (b-1)^2 subject to a - b = 1: a = 3/2, b = 1/2.
  const auto t = mm1();
  const auto w = jsq::local_rate(V{1}, V{1}, t, CoupledCost{});
  EXPECT_NEAR(w.value, 1.5, 1e-7);
  EXPECT_NEAR(w.a[0], 1.5, 1e-4);
}

TEST(PsiIJ, AgreesWithLocalRate) {
  std::mt19937_64 rng(31);
  for (const auto& t : {mm1(), two_queue(), weighted()}) {
    const PoissonCost c(t);
    for (int i = 0; i < 40; ++i) {
      const auto x = draw(rng, t.servers(), 0, 3, i % 2 == 0);
      const auto y = draw(rng, t.servers(), -2, 2, false);
      const double L = jsq::local_rate(x, y, t, c).value;
      const double P = jsq::psi_IJ(jsq::classify_domain(x, t), y, t, c);
      ASSERT_EQ(std::isfinite(L), std::isfinite(P));
      if (std::isfinite(L)) {
        EXPECT_NEAR(L, P, 2e-8);
      }
    }
  }
}

TEST(LocalRate, LowerSemicontinuityProbe) {
  std::mt19937_64 rng(41);
  const auto t = two_queue();
  const PoissonCost c(t);
  for (int i = 0; i < 10; ++i) {
    const auto x = draw(rng, 2, 0, 3, i % 2 == 0);
    const auto y = draw(rng, 2, -1, 1, false);
    const double L = jsq::local_rate(x, y, t, c).value;
    if (!std::isfinite(L)) continue;
    const auto dir = draw(rng, 2, -1, 1, false);
    for (double eps = 1e-4; eps >= 1e-6; eps /= 10) {
      const V yj{y[0] + eps * dir[0], y[1] + eps * dir[1]};
      EXPECT_GE(jsq::local_rate(x, yj, t, c).value, L - 1e-8 - 10 * eps);
    }
  }
}

TEST(LocalRate, FluidDriftHasZeroCost) {
  std::mt19937_64 rng(43);
  for (const auto& t : {two_queue(), weighted()}) {
    const PoissonCost c(t);
    const double h = 1e-6;
    for (int i = 0; i < 30; ++i) {
      const auto x = draw(rng, t.servers(), 0, 3, true);
      V da(t.lambdas()), db(t.mus());
      for (double& v : da) v *= h;
      for (double& v : db) v *= h;
      const auto step = jsq::fluid_route_step(x, da, db, t);
      V y(t.servers());
      for (std::size_t k = 0; k < y.size(); ++k) y[k] = (step.q_next[k] - x[k]) / h;
      EXPECT_LT(jsq::local_rate(x, y, t, c).value, 1e-6) << "x=" << x[0] << "," << x[1];
    }
  }
}
