#pragma once

// Local rate function
//
//   L(x, y) = inf { psi(a, b) : (a, b) in N(x, y) },
//
// where (a, b) is in N(x, y) iff some routing rates e >= 0 and departure
// rates d >= 0 satisfy
//   y = e 1_M - d,   a = e^T 1_K,   d <= b,
//   e_km = 0 unless k in S_m and x_k / w_km is minimal over S_m,
//   d_k = b_k whenever x_k > 0.
//
// Three independent evaluations are provided: the full program over
// (e, b) for an arbitrary convex CostModel, the reduced program Psi_IJ over
// e alone for separable costs, and an exhaustive grid search.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "jsq/cost.hpp"
#include "jsq/detail/barrier.hpp"
#include "jsq/errors.hpp"
#include "jsq/topology.hpp"

namespace jsq {

inline constexpr double kTieRelTol = 1e-12;

// Which F_IJ a queue vector lies in. 0-based server ids, sorted.
struct DomainLabel {
  std::vector<std::size_t> zero_set;                  // I
  std::vector<std::vector<std::size_t>> argmin_sets;  // J_1 .. J_M

  friend bool operator==(const DomainLabel&, const DomainLabel&) = default;
  friend auto operator<=>(const DomainLabel&, const DomainLabel&) = default;
};

namespace detail {

inline void check_state(std::span<const double> x, const Topology& topology) {
  if (x.size() != topology.servers()) throw InvalidArgument("state dimension does not match K");
  for (double v : x) {
    if (!(v >= 0) || !std::isfinite(v)) throw InvalidArgument("queue lengths must be finite and nonnegative");
  }
}

inline bool level_tied(double level, double min_level) {
  if (min_level == 0) return level == 0;
  return level <= min_level * (1 + kTieRelTol);
}

}  // namespace detail

inline DomainLabel classify_domain(std::span<const double> x, const Topology& topology) {
  detail::check_state(x, topology);
  DomainLabel label;
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (x[k] == 0) label.zero_set.push_back(k);
  }
  label.argmin_sets.resize(topology.streams());
  for (std::size_t m = 0; m < topology.streams(); ++m) {
    double min_level = kInfinity;
    for (std::size_t k : topology.admissible(m)) min_level = std::min(min_level, x[k] / topology.weight(k, m));
    for (std::size_t k : topology.admissible(m)) {
      if (detail::level_tied(x[k] / topology.weight(k, m), min_level)) label.argmin_sets[m].push_back(k);
    }
  }
  return label;
}

// Structural validity of (I, J): J_m nonempty, J_m within S_m, and either
// J_m inside I or disjoint from it.
inline void validate_label(const DomainLabel& label, const Topology& topology) {
  const std::size_t K = topology.servers();
  std::vector<bool> in_zero(K, false);
  for (std::size_t k : label.zero_set) {
    if (k >= K) throw InvalidArgument("invalid label: zero-set server out of range");
    in_zero[k] = true;
  }
  if (label.argmin_sets.size() != topology.streams()) {
    throw InvalidArgument("invalid label: need one argmin set per stream");
  }
  for (std::size_t m = 0; m < topology.streams(); ++m) {
    const auto& J = label.argmin_sets[m];
    if (J.empty()) throw InvalidArgument("invalid label: empty argmin set");
    std::size_t inside = 0;
    for (std::size_t k : J) {
      if (k >= K || !topology.admits(k, m)) throw InvalidArgument("invalid label: argmin set outside S_m");
      if (in_zero[k]) ++inside;
    }
    if (inside != 0 && inside != J.size()) {
      throw InvalidArgument("invalid label: argmin set straddles the zero set");
    }
  }
}

// Membership x in F_IJ checked directly from the definition of the domain.
inline bool in_domain(std::span<const double> x, const DomainLabel& label, const Topology& topology) {
  detail::check_state(x, topology);
  const std::size_t K = topology.servers();
  std::vector<bool> in_zero(K, false);
  for (std::size_t k : label.zero_set) {
    if (k >= K) return false;
    in_zero[k] = true;
  }
  for (std::size_t k = 0; k < K; ++k) {
    if (in_zero[k] != (x[k] == 0)) return false;
  }
  if (label.argmin_sets.size() != topology.streams()) return false;
  for (std::size_t m = 0; m < topology.streams(); ++m) {
    std::vector<bool> in_j(K, false);
    for (std::size_t k : label.argmin_sets[m]) {
      if (k >= K || !topology.admits(k, m)) return false;
      in_j[k] = true;
    }
    double min_level = kInfinity;
    for (std::size_t l : topology.admissible(m)) min_level = std::min(min_level, x[l] / topology.weight(l, m));
    for (std::size_t k : topology.admissible(m)) {
      if (in_j[k] != detail::level_tied(x[k] / topology.weight(k, m), min_level)) return false;
    }
  }
  return true;
}

// The constraint pattern of N(x, y).
struct FeasibleSetSpec {
  std::vector<double> x;
  std::vector<double> y;
  std::vector<bool> allowed;  // K x M, row-major by server
  std::vector<bool> busy;     // K
  std::size_t streams = 0;

  bool is_allowed(std::size_t k, std::size_t m) const { return allowed[k * streams + m]; }

  static FeasibleSetSpec from_label(const DomainLabel& label, std::span<const double> y, const Topology& topology) {
    validate_label(label, topology);
    if (y.size() != topology.servers()) throw InvalidArgument("velocity dimension does not match K");
    for (double v : y) {
      if (!std::isfinite(v)) throw InvalidArgument("velocity must be finite");
    }
    FeasibleSetSpec s;
    s.streams = topology.streams();
    s.y.assign(y.begin(), y.end());
    s.allowed.assign(topology.servers() * topology.streams(), false);
    s.busy.assign(topology.servers(), true);
    for (std::size_t k : label.zero_set) s.busy[k] = false;
    for (std::size_t m = 0; m < topology.streams(); ++m) {
      for (std::size_t k : label.argmin_sets[m]) s.allowed[k * s.streams + m] = true;
    }
    return s;
  }

  static FeasibleSetSpec from_state(std::span<const double> x, std::span<const double> y, const Topology& topology) {
    auto s = from_label(classify_domain(x, topology), y, topology);
    s.x.assign(x.begin(), x.end());
    return s;
  }
};

// Farkas certificate for emptiness of N(x, y): a vector u with
// u^T (e 1_M - d) <= 0 for every admissible (e, d) but u^T y > 0.
struct InfeasibilityCertificate {
  std::size_t server = 0;  // the server with no usable inflow and y_k > 0
  std::vector<double> farkas;
};

struct RateWitness {
  double value = kInfinity;
  std::vector<double> a;  // M
  std::vector<double> b;  // K
  std::vector<double> e;  // K x M, row-major by server
  std::vector<double> d;  // K
  std::optional<InfeasibilityCertificate> certificate;
  DomainLabel label;
  double gap = 0;
  double kkt_residual = 0;
  long iterations = 0;

  bool finite() const { return std::isfinite(value); }
};

namespace detail {

// Routing edges (k, m) that may carry mass, plus per-server / per-stream
// adjacency. Pinned streams (cost +inf for positive rate) get no edges.
struct EdgeLayout {
  std::vector<std::pair<std::size_t, std::size_t>> edges;  // (server, stream)
  std::vector<std::vector<std::size_t>> into_server;       // edge ids per server
  std::vector<std::vector<std::size_t>> of_stream;         // edge ids per stream

  EdgeLayout(const FeasibleSetSpec& spec, const Topology& topology, const CostModel& cost) {
    into_server.resize(topology.servers());
    of_stream.resize(topology.streams());
    for (std::size_t k = 0; k < topology.servers(); ++k) {
      for (std::size_t m = 0; m < topology.streams(); ++m) {
        if (!spec.is_allowed(k, m) || cost.arrival_pinned(m)) continue;
        into_server[k].push_back(edges.size());
        of_stream[m].push_back(edges.size());
        edges.emplace_back(k, m);
      }
    }
  }
};

// Phase-1: with a and b unbounded, y = e 1 - d (e, d >= 0) decouples per
// server and is solvable iff every server without inflow edges has y_k <= 0.
inline std::optional<InfeasibilityCertificate> phase_one(const EdgeLayout& layout, std::span<const double> y) {
  for (std::size_t k = 0; k < y.size(); ++k) {
    if (layout.into_server[k].empty() && y[k] > 0) {
      InfeasibilityCertificate c;
      c.server = k;
      c.farkas.assign(y.size(), 0.0);
      c.farkas[k] = 1.0;
      return c;
    }
  }
  return std::nullopt;
}

inline Eigen::VectorXd interior_routing(const EdgeLayout& layout, std::span<const double> y) {
  double level = 1.0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    const auto deg = layout.into_server[k].size();
    if (deg > 0) level = std::max(level, (std::max(y[k], 0.0) + 1.0) / static_cast<double>(deg));
  }
  return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(layout.edges.size()), level);
}

inline void check_tol(double tol) {
  if (!(tol > 0)) throw InvalidArgument("tolerance must be positive");
}

}  // namespace detail

// Full program over (e, b_idle) for an arbitrary convex CostModel.
inline RateWitness local_rate_for(const FeasibleSetSpec& spec, const Topology& topology, const CostModel& cost,
                                  double tol = 1e-8) {
  detail::check_tol(tol);
  const std::size_t K = topology.servers();
  const std::size_t M = topology.streams();
  if (cost.arrival_dim() != M || cost.service_dim() != K) throw InvalidArgument("cost dimensions do not match topology");

  const detail::EdgeLayout layout(spec, topology, cost);
  RateWitness w;
  if (auto cert = detail::phase_one(layout, spec.y)) {
    w.certificate = std::move(cert);
    return w;
  }

  const auto E = static_cast<Eigen::Index>(layout.edges.size());
  std::vector<Eigen::Index> idle_var(K, -1);
  Eigen::Index n = E;
  for (std::size_t k = 0; k < K; ++k) {
    if (!spec.busy[k]) idle_var[k] = n++;
  }

  // (a, b) = P z + c
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(M + K), n);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(M + K));
  for (Eigen::Index i = 0; i < E; ++i) {
    const auto [k, m] = layout.edges[static_cast<std::size_t>(i)];
    P(static_cast<Eigen::Index>(m), i) = 1.0;
    if (spec.busy[k]) P(static_cast<Eigen::Index>(M + k), i) = 1.0;
  }
  for (std::size_t k = 0; k < K; ++k) {
    const auto row = static_cast<Eigen::Index>(M + k);
    if (spec.busy[k]) {
      c(row) = -spec.y[k];
    } else {
      P(row, idle_var[k]) = 1.0;
    }
  }
  std::vector<bool> constant_row(M + K);
  for (Eigen::Index r = 0; r < P.rows(); ++r) constant_row[static_cast<std::size_t>(r)] = P.row(r).isZero(0);

  // G z + h >= 0: e >= 0, d_k >= 0 where d_k varies, b_k - d_k >= 0 on idle servers.
  std::vector<Eigen::VectorXd> rows;
  std::vector<double> offs;
  for (Eigen::Index i = 0; i < E; ++i) {
    Eigen::VectorXd r = Eigen::VectorXd::Zero(n);
    r(i) = 1.0;
    rows.push_back(r);
    offs.push_back(0.0);
  }
  for (std::size_t k = 0; k < K; ++k) {
    Eigen::VectorXd inflow = Eigen::VectorXd::Zero(n);
    for (std::size_t id : layout.into_server[k]) inflow(static_cast<Eigen::Index>(id)) = 1.0;
    if (!layout.into_server[k].empty()) {
      rows.push_back(inflow);
      offs.push_back(-spec.y[k]);
    }
    if (!spec.busy[k]) {
      Eigen::VectorXd r = -inflow;
      r(idle_var[k]) += 1.0;
      rows.push_back(r);
      offs.push_back(spec.y[k]);
    }
  }
  Eigen::MatrixXd G(static_cast<Eigen::Index>(rows.size()), n);
  Eigen::VectorXd h(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    G.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    h(static_cast<Eigen::Index>(i)) = offs[i];
  }

  auto rates = [&](const Eigen::VectorXd& z) -> Eigen::VectorXd { return P * z + c; };
  auto split = [&](const Eigen::VectorXd& ab) {
    return std::pair{std::span<const double>(ab.data(), M), std::span<const double>(ab.data() + M, K)};
  };
  detail::SmoothObjective obj;
  obj.value = [&](const Eigen::VectorXd& z) {
    const Eigen::VectorXd ab = rates(z);
    if ((ab.array() < 0).any()) return kInfinity;
    const auto [a, b] = split(ab);
    return cost.eval(a, b);
  };
  obj.gradient = [&](const Eigen::VectorXd& z) -> Eigen::VectorXd {
    const Eigen::VectorXd ab = rates(z);
    const auto [a, b] = split(ab);
    Eigen::VectorXd g = cost.subgradient(a, b);
    for (std::size_t r = 0; r < constant_row.size(); ++r) {
      if (constant_row[r]) g(static_cast<Eigen::Index>(r)) = 0;
    }
    return P.transpose() * g;
  };
  obj.hessian = [&](const Eigen::VectorXd& z) -> Eigen::MatrixXd {
    const Eigen::VectorXd ab = rates(z);
    const auto [a, b] = split(ab);
    Eigen::MatrixXd H = cost.hessian(a, b);
    for (std::size_t r = 0; r < constant_row.size(); ++r) {
      if (!constant_row[r]) continue;
      H.row(static_cast<Eigen::Index>(r)).setZero();
      H.col(static_cast<Eigen::Index>(r)).setZero();
    }
    return P.transpose() * H * P;
  };

  Eigen::VectorXd z0(n);
  z0.head(E) = detail::interior_routing(layout, spec.y);
  for (std::size_t k = 0; k < K; ++k) {
    if (spec.busy[k]) continue;
    double inflow = 0;
    for (std::size_t id : layout.into_server[k]) inflow += z0(static_cast<Eigen::Index>(id));
    z0(idle_var[k]) = std::max(inflow - spec.y[k], 0.0) + std::max(topology.mu(k), 1.0);
  }

  detail::BarrierOptions opt;
  opt.tol = tol;
  const auto res = detail::minimize_with_barrier(obj, G, h, z0, opt);

  w.value = res.value;
  w.gap = res.gap;
  w.kkt_residual = res.kkt_residual;
  w.iterations = res.newton_iterations;
  w.e.assign(K * M, 0.0);
  w.a.assign(M, 0.0);
  w.d.assign(K, 0.0);
  for (Eigen::Index i = 0; i < E; ++i) {
    const auto [k, m] = layout.edges[static_cast<std::size_t>(i)];
    w.e[k * M + m] = res.z(i);
    w.a[m] += res.z(i);
  }
  for (std::size_t k = 0; k < K; ++k) {
    double inflow = 0;
    for (std::size_t m = 0; m < M; ++m) inflow += w.e[k * M + m];
    w.d[k] = inflow - spec.y[k];
  }
  const Eigen::VectorXd ab = rates(res.z);
  w.b.assign(ab.data() + M, ab.data() + M + K);
  for (std::size_t k = 0; k < K; ++k) {
    if (spec.busy[k]) w.b[k] = w.d[k];
  }
  return w;
}

inline RateWitness local_rate(std::span<const double> x, std::span<const double> y, const Topology& topology,
                              const CostModel& cost, double tol = 1e-8) {
  auto spec = FeasibleSetSpec::from_state(x, y, topology);
  auto w = local_rate_for(spec, topology, cost, tol);
  w.label = classify_domain(x, topology);
  return w;
}

// Reduced program over routing rates only:
//   Psi_IJ(y) = inf sum_m A_m(a_m) + sum_{k not in I} B_k(d_k) + sum_{k in I} B_k(d_k) 1(d_k > mu_k)
// with a = e^T 1, d = e 1 - y >= 0 and e supported on J. Requires a separable cost.
inline double psi_IJ(const DomainLabel& label, std::span<const double> y, const Topology& topology,
                     const CostModel& cost, double tol = 1e-8) {
  detail::check_tol(tol);
  if (!cost.separable()) throw InvalidArgument("psi_IJ requires a separable cost");
  const auto& sep = static_cast<const SeparableCost&>(cost);
  const auto spec = FeasibleSetSpec::from_label(label, y, topology);
  const std::size_t K = topology.servers();
  const std::size_t M = topology.streams();
  const std::vector<double> zero_level = cost.zero_levels();

  const detail::EdgeLayout layout(spec, topology, cost);
  if (detail::phase_one(layout, spec.y)) return kInfinity;

  auto server_term = [&](std::size_t k, double d) {
    if (!spec.busy[k] && d <= zero_level[k]) return 0.0;
    return sep.service_term(k, d);
  };
  auto server_first = [&](std::size_t k, double d) {
    if (!spec.busy[k] && d <= zero_level[k]) return 0.0;
    return sep.service_derivative(k, d);
  };
  auto server_second = [&](std::size_t k, double d) {
    if (!spec.busy[k] && d <= zero_level[k]) return 0.0;
    return sep.service_second(k, d);
  };

  double constant = 0;
  for (std::size_t m = 0; m < M; ++m) {
    if (layout.of_stream[m].empty()) constant += sep.arrival_term(m, 0.0);
  }
  for (std::size_t k = 0; k < K; ++k) {
    if (layout.into_server[k].empty()) constant += server_term(k, -spec.y[k]);
  }

  const auto E = static_cast<Eigen::Index>(layout.edges.size());
  if (E == 0) return constant;

  auto flows = [&](const Eigen::VectorXd& z) {
    std::vector<double> s(M, 0.0), d(K, 0.0);
    for (Eigen::Index i = 0; i < E; ++i) {
      const auto [k, m] = layout.edges[static_cast<std::size_t>(i)];
      s[m] += z(i);
      d[k] += z(i);
    }
    for (std::size_t k = 0; k < K; ++k) d[k] -= spec.y[k];
    return std::pair{s, d};
  };

  detail::SmoothObjective obj;
  obj.value = [&](const Eigen::VectorXd& z) {
    const auto [s, d] = flows(z);
    double v = constant;
    for (std::size_t m = 0; m < M; ++m) {
      if (layout.of_stream[m].empty()) continue;
      if (s[m] < 0) return kInfinity;
      v += sep.arrival_term(m, s[m]);
    }
    for (std::size_t k = 0; k < K; ++k) {
      if (layout.into_server[k].empty()) continue;
      if (d[k] < 0) return kInfinity;
      v += server_term(k, d[k]);
    }
    return v;
  };
  obj.gradient = [&](const Eigen::VectorXd& z) -> Eigen::VectorXd {
    const auto [s, d] = flows(z);
    Eigen::VectorXd g(E);
    for (Eigen::Index i = 0; i < E; ++i) {
      const auto [k, m] = layout.edges[static_cast<std::size_t>(i)];
      g(i) = sep.arrival_derivative(m, s[m]) + server_first(k, d[k]);
    }
    return g;
  };
  obj.hessian = [&](const Eigen::VectorXd& z) -> Eigen::MatrixXd {
    const auto [s, d] = flows(z);
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(E, E);
    for (Eigen::Index i = 0; i < E; ++i) {
      const auto [ki, mi] = layout.edges[static_cast<std::size_t>(i)];
      for (Eigen::Index j = 0; j < E; ++j) {
        const auto [kj, mj] = layout.edges[static_cast<std::size_t>(j)];
        if (mi == mj) H(i, j) += sep.arrival_second(mi, s[mi]);
        if (ki == kj) H(i, j) += server_second(ki, d[ki]);
      }
    }
    return H;
  };

  // Constraints: e >= 0, d_k >= 0.
  std::vector<Eigen::VectorXd> rows;
  std::vector<double> offs;
  for (Eigen::Index i = 0; i < E; ++i) {
    Eigen::VectorXd r = Eigen::VectorXd::Zero(E);
    r(i) = 1.0;
    rows.push_back(r);
    offs.push_back(0.0);
  }
  for (std::size_t k = 0; k < K; ++k) {
    if (layout.into_server[k].empty()) continue;
    Eigen::VectorXd r = Eigen::VectorXd::Zero(E);
    for (std::size_t id : layout.into_server[k]) r(static_cast<Eigen::Index>(id)) = 1.0;
    rows.push_back(r);
    offs.push_back(-spec.y[k]);
  }
  Eigen::MatrixXd G(static_cast<Eigen::Index>(rows.size()), E);
  Eigen::VectorXd h(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    G.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    h(static_cast<Eigen::Index>(i)) = offs[i];
  }

  detail::BarrierOptions opt;
  opt.tol = tol;
  return detail::minimize_with_barrier(obj, G, h, detail::interior_routing(layout, spec.y), opt).value;
}

// Exhaustive grid search over the routing rates e (step `grid_step`) and the
// idle-server service rates b, inside the box |a - lambda| <= r,
// |b - mu| <= r. Returns the least psi over feasible grid points, +inf when
// there are none. An upper bound on L(x, y) for every step.
inline double local_rate_bruteforce(std::span<const double> x, std::span<const double> y, const Topology& topology,
                                    const CostModel& cost, double grid_step, double box_radius) {
  if (!(grid_step > 0) || !(box_radius > 0)) throw InvalidArgument("grid step and box radius must be positive");
  const std::size_t K = topology.servers();
  const std::size_t M = topology.streams();
  if (K * M + M + 2 * K > 8) throw InvalidArgument("brute force: dimension budget exceeded (K*M + M + 2K > 8)");
  if (cost.arrival_dim() != M || cost.service_dim() != K) throw InvalidArgument("cost dimensions do not match topology");

  const auto spec = FeasibleSetSpec::from_state(x, y, topology);
  const detail::EdgeLayout layout(spec, topology, cost);
  const std::size_t E = layout.edges.size();

  auto a_lo = [&](std::size_t m) { return std::max(0.0, topology.lambda(m) - box_radius); };
  auto a_hi = [&](std::size_t m) { return topology.lambda(m) + box_radius; };
  auto b_lo = [&](std::size_t k) { return std::max(0.0, topology.mu(k) - box_radius); };
  auto b_hi = [&](std::size_t k) { return topology.mu(k) + box_radius; };

  // Grid for each edge: e = i * step, 0 <= i <= top[m].
  std::vector<long> edge_top(E);
  for (std::size_t i = 0; i < E; ++i) {
    edge_top[i] = static_cast<long>(std::floor(a_hi(layout.edges[i].second) / grid_step + 1e-9));
  }
  std::vector<long> stream_top(M, 0), server_top(K, 0);
  for (std::size_t i = 0; i < E; ++i) {
    stream_top[layout.edges[i].second] += edge_top[i];
    server_top[layout.edges[i].first] += edge_top[i];
  }

  // Idle-server b grid: j * step inside the box.
  auto b_grid = [&](std::size_t k) {
    std::vector<double> g;
    const long j0 = static_cast<long>(std::ceil(b_lo(k) / grid_step - 1e-9));
    const long j1 = static_cast<long>(std::floor(b_hi(k) / grid_step + 1e-9));
    for (long j = j0; j <= j1; ++j) g.push_back(static_cast<double>(j) * grid_step);
    return g;
  };

  if (cost.separable()) {
    const auto& sep = static_cast<const SeparableCost&>(cost);
    // arrival_table[m][s]: cost of a_m = s * step, +inf outside the box.
    std::vector<std::vector<double>> arrival_table(M), server_table(K);
    for (std::size_t m = 0; m < M; ++m) {
      auto& t = arrival_table[m];
      t.resize(static_cast<std::size_t>(stream_top[m]) + 1);
      for (long i = 0; i <= stream_top[m]; ++i) {
        const double a = static_cast<double>(i) * grid_step;
        const bool inside = (a >= a_lo(m) - 1e-12 && a <= a_hi(m) + 1e-12) || (cost.arrival_pinned(m) && a == 0);
        t[static_cast<std::size_t>(i)] = inside ? sep.arrival_term(m, a) : kInfinity;
      }
    }
    for (std::size_t k = 0; k < K; ++k) {
      auto& t = server_table[k];
      t.resize(static_cast<std::size_t>(server_top[k]) + 1);
      std::vector<double> grid, suffix;
      if (!spec.busy[k]) {
        grid = b_grid(k);
        suffix.resize(grid.size() + 1, kInfinity);
        for (std::size_t j = grid.size(); j-- > 0;) suffix[j] = std::min(suffix[j + 1], sep.service_term(k, grid[j]));
      }
      for (long i = 0; i <= server_top[k]; ++i) {
        const double d = static_cast<double>(i) * grid_step - spec.y[k];
        double v = kInfinity;
        if (d >= 0) {
          if (spec.busy[k]) {
            if (d >= b_lo(k) && d <= b_hi(k)) v = sep.service_term(k, d);
          } else {
            const auto first = std::lower_bound(grid.begin(), grid.end(), d) - grid.begin();
            v = suffix[static_cast<std::size_t>(first)];
          }
        }
        t[static_cast<std::size_t>(i)] = v;
      }
    }

    std::vector<long> idx(E, 0), s(M, 0), in(K, 0);
    double best = kInfinity;
    for (;;) {
      double v = 0;
      for (std::size_t m = 0; m < M; ++m) v += arrival_table[m][static_cast<std::size_t>(s[m])];
      for (std::size_t k = 0; k < K; ++k) v += server_table[k][static_cast<std::size_t>(in[k])];
      best = std::min(best, v);
      std::size_t pos = 0;
      for (; pos < E; ++pos) {
        const auto [k, m] = layout.edges[pos];
        if (idx[pos] < edge_top[pos]) {
          ++idx[pos];
          ++s[m];
          ++in[k];
          break;
        }
        s[m] -= idx[pos];
        in[k] -= idx[pos];
        idx[pos] = 0;
      }
      if (pos == E) break;
    }
    return best;
  }

  // Generic cost: odometer over e and idle b grid points, evaluating psi directly.
  std::vector<std::size_t> idle;
  std::vector<std::vector<double>> idle_grid;
  for (std::size_t k = 0; k < K; ++k) {
    if (!spec.busy[k]) {
      idle.push_back(k);
      idle_grid.push_back(b_grid(k));
      if (idle_grid.back().empty()) return kInfinity;
    }
  }
  const std::size_t D = E + idle.size();
  std::vector<long> idx(D, 0);
  std::vector<double> a(M), b(K), d(K);
  double best = kInfinity;
  for (;;) {
    std::fill(a.begin(), a.end(), 0.0);
    std::fill(d.begin(), d.end(), 0.0);
    for (std::size_t i = 0; i < E; ++i) {
      const double e = static_cast<double>(idx[i]) * grid_step;
      a[layout.edges[i].second] += e;
      d[layout.edges[i].first] += e;
    }
    bool ok = true;
    for (std::size_t m = 0; m < M && ok; ++m) {
      ok = (a[m] >= a_lo(m) - 1e-12 && a[m] <= a_hi(m) + 1e-12) || (cost.arrival_pinned(m) && a[m] == 0);
    }
    for (std::size_t k = 0; k < K && ok; ++k) {
      d[k] -= spec.y[k];
      ok = d[k] >= 0;
      if (spec.busy[k]) {
        b[k] = d[k];
        ok = ok && d[k] >= b_lo(k) && d[k] <= b_hi(k);
      }
    }
    for (std::size_t j = 0; j < idle.size() && ok; ++j) {
      b[idle[j]] = idle_grid[j][static_cast<std::size_t>(idx[E + j])];
      ok = b[idle[j]] >= d[idle[j]];
    }
    if (ok) best = std::min(best, cost.eval(a, b));
    std::size_t pos = 0;
    for (; pos < D; ++pos) {
      const long top = pos < E ? edge_top[pos] : static_cast<long>(idle_grid[pos - E].size()) - 1;
      if (idx[pos] < top) {
        ++idx[pos];
        break;
      }
      idx[pos] = 0;
    }
    if (pos == D) break;
  }
  return best;
}

}  // namespace jsq
