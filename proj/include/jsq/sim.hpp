#pragma once

// Event-driven simulation of the n-th JSQ system. Arrival stream m is a
// Poisson clock of rate lambda_m; server k owns an autonomous Poisson clock
// of rate mu_k whose ticks depart a customer only if one is present. All
// clocks are merged into one event stream by taking the earliest pending
// tick. Weighted queue comparisons are exact (integer cross products).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jsq/errors.hpp"
#include "jsq/path.hpp"
#include "jsq/rng.hpp"
#include "jsq/topology.hpp"

namespace jsq {

enum class TieRule { lowest_index, uniform_random };

inline TieRule parse_tie_rule(const std::string& s) {
  if (s == "lowest" || s == "lowest-index") return TieRule::lowest_index;
  if (s == "random" || s == "uniform-random") return TieRule::uniform_random;
  throw InvalidArgument("unknown tie rule '" + s + "' (expected lowest or random)");
}

inline const char* to_string(TieRule r) { return r == TieRule::lowest_index ? "lowest" : "random"; }

struct SimulationParams {
  std::uint64_t n = 1;            // scale
  double T = 1;                   // scaled horizon; simulates [0, n T]
  std::uint64_t seed = 0;
  TieRule tie = TieRule::lowest_index;
  std::vector<double> q0_scaled;  // initial queues are floor(n q0)
};

enum class EventKind : std::uint8_t { arrival, service };

struct SimulationState {
  double time = 0;  // unscaled
  std::vector<std::int64_t> Q, A, B, D, E;  // E is K x M, row-major by server
  EventKind kind = EventKind::arrival;
  std::size_t source = 0;  // stream (arrival) or server (service)
  std::size_t target = 0;  // server that received the arrival
  bool departed = false;
};

namespace detail {

// Q_k / w_km compared with Q_l / w_lm exactly: Q_k den_km num_lm vs Q_l den_lm num_km.
inline int compare_weighted(std::int64_t qk, const Rational& wk, std::int64_t ql, const Rational& wl) {
  const __int128 lhs = static_cast<__int128>(qk) * wk.den * wl.num;
  const __int128 rhs = static_cast<__int128>(ql) * wl.den * wk.num;
  return lhs < rhs ? -1 : (lhs > rhs ? 1 : 0);
}

inline void check_params(const Topology& topology, const SimulationParams& p) {
  if (p.n < 1) throw InvalidArgument("simulate: scale n must be at least 1");
  if (!(p.T > 0) || !std::isfinite(p.T)) throw InvalidArgument("simulate: horizon T must be positive");
  if (p.q0_scaled.size() != topology.servers()) throw InvalidArgument("simulate: q0 dimension does not match K");
  for (double v : p.q0_scaled) {
    if (!(v >= 0) || !std::isfinite(v)) throw InvalidArgument("simulate: q0 must be nonnegative");
  }
}

}  // namespace detail

// Runs one replication, calling on_event(const SimulationState&) after every
// event. Returns the state at time n T.
template <class OnEvent>
SimulationState run_events(const Topology& topology, const SimulationParams& params, std::uint64_t replication,
                           OnEvent&& on_event) {
  detail::check_params(topology, params);
  const std::size_t K = topology.servers();
  const std::size_t M = topology.streams();
  const double n = static_cast<double>(params.n);
  const double horizon = n * params.T;

  SimulationState s;
  s.Q.resize(K);
  for (std::size_t k = 0; k < K; ++k) s.Q[k] = static_cast<std::int64_t>(std::floor(n * params.q0_scaled[k]));
  s.A.assign(M, 0);
  s.B.assign(K, 0);
  s.D.assign(K, 0);
  s.E.assign(K * M, 0);

  std::vector<ClockStream> clocks;
  clocks.reserve(M + K);
  std::vector<double> rate(M + K), next(M + K);
  for (std::size_t c = 0; c < M + K; ++c) {
    clocks.emplace_back(params.seed, replication, c);
    rate[c] = c < M ? topology.lambda(c) : topology.mu(c - M);
    next[c] = rate[c] > 0 ? clocks[c].exponential(rate[c]) : std::numeric_limits<double>::infinity();
  }
  std::optional<ClockStream> tie_stream;
  if (params.tie == TieRule::uniform_random) tie_stream.emplace(params.seed, replication, M + K);

  std::vector<std::size_t> tied;
  for (;;) {
    std::size_t c = 0;
    for (std::size_t i = 1; i < M + K; ++i) {
      if (next[i] < next[c]) c = i;
    }
    if (!(next[c] <= horizon)) break;
    s.time = next[c];
    s.departed = false;
    if (c < M) {
      const std::size_t m = c;
      tied.clear();
      for (std::size_t k : topology.admissible(m)) {
        if (tied.empty()) {
          tied.push_back(k);
          continue;
        }
        const int cmp = detail::compare_weighted(s.Q[k], topology.weight_exact(k, m), s.Q[tied[0]],
                                                 topology.weight_exact(tied[0], m));
        if (cmp < 0) {
          tied.clear();
          tied.push_back(k);
        } else if (cmp == 0) {
          tied.push_back(k);
        }
      }
      std::size_t k = tied[0];
      if (tied.size() > 1 && tie_stream) k = tied[tie_stream->below(tied.size())];
      ++s.Q[k];
      ++s.A[m];
      ++s.E[k * M + m];
      s.kind = EventKind::arrival;
      s.source = m;
      s.target = k;
    } else {
      const std::size_t k = c - M;
      ++s.B[k];
      if (s.Q[k] > 0) {
        --s.Q[k];
        ++s.D[k];
        s.departed = true;
      }
      s.kind = EventKind::service;
      s.source = k;
      s.target = k;
    }
    on_event(static_cast<const SimulationState&>(s));
    next[c] += clocks[c].exponential(rate[c]);
  }
  s.time = horizon;
  return s;
}

// Recorded trajectory. Row 0 is the initial state at time 0; row i > 0 is the
// state right after event i.
struct SamplePath {
  std::size_t servers = 0;
  std::size_t streams = 0;
  std::uint64_t n = 1;
  double T = 0;
  std::uint64_t seed = 0;
  std::uint64_t replication = 0;
  TieRule tie = TieRule::lowest_index;
  std::vector<double> times;  // unscaled
  std::vector<std::int64_t> Q, A, B, D, E;
  std::vector<EventKind> kinds;  // per event (rows 1..)
  std::vector<std::size_t> sources, targets;

  std::size_t rows() const { return times.size(); }
  std::size_t events() const { return times.size() - 1; }
  std::span<const std::int64_t> queue(std::size_t row) const { return {Q.data() + row * servers, servers}; }

  friend bool operator==(const SamplePath&, const SamplePath&) = default;
};

inline SamplePath simulate(const Topology& topology, const SimulationParams& params, std::uint64_t replication = 0) {
  detail::check_params(topology, params);
  SamplePath p;
  p.servers = topology.servers();
  p.streams = topology.streams();
  p.n = params.n;
  p.T = params.T;
  p.seed = params.seed;
  p.replication = replication;
  p.tie = params.tie;
  auto record = [&](const SimulationState& s) {
    p.times.push_back(s.time);
    p.Q.insert(p.Q.end(), s.Q.begin(), s.Q.end());
    p.A.insert(p.A.end(), s.A.begin(), s.A.end());
    p.B.insert(p.B.end(), s.B.begin(), s.B.end());
    p.D.insert(p.D.end(), s.D.begin(), s.D.end());
    p.E.insert(p.E.end(), s.E.begin(), s.E.end());
  };
  {
    SimulationState init;
    init.time = 0;
    init.Q.resize(p.servers);
    const double n = static_cast<double>(params.n);
    for (std::size_t k = 0; k < p.servers; ++k) init.Q[k] = static_cast<std::int64_t>(std::floor(n * params.q0_scaled[k]));
    init.A.assign(p.streams, 0);
    init.B.assign(p.servers, 0);
    init.D.assign(p.servers, 0);
    init.E.assign(p.servers * p.streams, 0);
    record(init);
  }
  run_events(topology, params, replication, [&](const SimulationState& s) {
    record(s);
    p.kinds.push_back(s.kind);
    p.sources.push_back(s.source);
    p.targets.push_back(s.target);
  });
  return p;
}

// Checks every recorded event against the dynamics: balance
// Q_k = Q_k(0) + sum_{m in C_k} E_km - D_k, routing identity
// A_m = sum_{k in S_m} E_km, unit-step monotone counters, departures only on
// service ticks of nonempty queues, and arrivals routed to a weighted argmin.
// Returns a description of the first violation.
inline std::optional<std::string> audit_path(const SamplePath& p, const Topology& topology) {
  const std::size_t K = p.servers;
  const std::size_t M = p.streams;
  if (K != topology.servers() || M != topology.streams()) return "path dimensions do not match topology";
  auto at = [](const std::vector<std::int64_t>& v, std::size_t row, std::size_t width, std::size_t i) {
    return v[row * width + i];
  };
  for (std::size_t r = 0; r < p.rows(); ++r) {
    const std::string where = "row " + std::to_string(r) + ": ";
    for (std::size_t k = 0; k < K; ++k) {
      const std::int64_t q = at(p.Q, r, K, k);
      if (q < 0) return where + "negative queue";
      std::int64_t inflow = 0;
      for (std::size_t m : topology.incidence(k)) inflow += at(p.E, r, K * M, k * M + m);
      if (q != at(p.Q, 0, K, k) + inflow - at(p.D, r, K, k)) return where + "queue balance violated";
      for (std::size_t m = 0; m < M; ++m) {
        if (!topology.admits(k, m) && at(p.E, r, K * M, k * M + m) != 0) return where + "routing to inadmissible server";
      }
    }
    for (std::size_t m = 0; m < M; ++m) {
      std::int64_t routed = 0;
      for (std::size_t k : topology.admissible(m)) routed += at(p.E, r, K * M, k * M + m);
      if (routed != at(p.A, r, M, m)) return where + "arrival routing identity violated";
    }
    if (r == 0) {
      for (std::size_t i = 0; i < M; ++i) {
        if (at(p.A, 0, M, i) != 0) return "initial arrival counter nonzero";
      }
      for (std::size_t i = 0; i < K; ++i) {
        if (at(p.B, 0, K, i) != 0 || at(p.D, 0, K, i) != 0) return "initial service counters nonzero";
      }
      continue;
    }
    if (p.times[r] < p.times[r - 1]) return where + "event times decrease";
    const EventKind kind = p.kinds[r - 1];
    const std::size_t src = p.sources[r - 1];
    const std::size_t tgt = p.targets[r - 1];
    for (std::size_t m = 0; m < M; ++m) {
      const auto inc = at(p.A, r, M, m) - at(p.A, r - 1, M, m);
      if (inc != ((kind == EventKind::arrival && m == src) ? 1 : 0)) return where + "arrival counter step";
    }
    for (std::size_t k = 0; k < K; ++k) {
      const auto b_inc = at(p.B, r, K, k) - at(p.B, r - 1, K, k);
      const auto d_inc = at(p.D, r, K, k) - at(p.D, r - 1, K, k);
      const bool ticked = kind == EventKind::service && k == src;
      if (b_inc != (ticked ? 1 : 0)) return where + "service counter step";
      const bool should_depart = ticked && at(p.Q, r - 1, K, k) > 0;
      if (d_inc != (should_depart ? 1 : 0)) return where + "departure does not match autonomous service";
      for (std::size_t m = 0; m < M; ++m) {
        const auto e_inc = at(p.E, r, K * M, k * M + m) - at(p.E, r - 1, K * M, k * M + m);
        if (e_inc != ((kind == EventKind::arrival && m == src && k == tgt) ? 1 : 0)) return where + "routing counter step";
      }
    }
    if (kind == EventKind::arrival) {
      for (std::size_t l : topology.admissible(src)) {
        if (detail::compare_weighted(at(p.Q, r - 1, K, l), topology.weight_exact(l, src), at(p.Q, r - 1, K, tgt),
                                     topology.weight_exact(tgt, src)) < 0) {
          return where + "arrival not routed to a weighted shortest queue";
        }
      }
    }
  }
  return std::nullopt;
}

// Row index of the state in force at unscaled time u (right-continuous).
inline std::size_t row_at(const SamplePath& p, double unscaled_time) {
  const auto it = std::upper_bound(p.times.begin() + 1, p.times.end(), unscaled_time);
  return static_cast<std::size_t>(it - p.times.begin()) - 1;
}

// Scaled process (Q/n, A/n, B/n, D/n, E/n) sampled on a uniform grid of
// scaled time. Column order: Q_1..Q_K, A_1..A_M, B_1..B_K, D_1..D_K, E_11..E_KM.
inline PiecewisePath scale_path(const SamplePath& p, double grid_step) {
  if (!(grid_step > 0)) throw InvalidArgument("scale_path: grid step must be positive");
  const std::size_t K = p.servers, M = p.streams;
  const std::size_t width = 3 * K + M + K * M;
  const double n = static_cast<double>(p.n);
  std::vector<double> times;
  const auto count = static_cast<std::size_t>(std::floor(p.T / grid_step + 1e-9));
  for (std::size_t i = 0; i <= count; ++i) times.push_back(static_cast<double>(i) * grid_step);
  if (times.back() < p.T * (1 - 1e-12)) times.push_back(p.T);
  std::vector<double> data;
  data.reserve(times.size() * width);
  for (double t : times) {
    const std::size_t r = row_at(p, n * t);
    for (std::size_t k = 0; k < K; ++k) data.push_back(static_cast<double>(p.Q[r * K + k]) / n);
    for (std::size_t m = 0; m < M; ++m) data.push_back(static_cast<double>(p.A[r * M + m]) / n);
    for (std::size_t k = 0; k < K; ++k) data.push_back(static_cast<double>(p.B[r * K + k]) / n);
    for (std::size_t k = 0; k < K; ++k) data.push_back(static_cast<double>(p.D[r * K + k]) / n);
    for (std::size_t i = 0; i < K * M; ++i) data.push_back(static_cast<double>(p.E[r * K * M + i]) / n);
  }
  return PiecewisePath(std::move(times), width, std::move(data));
}

// sup over [0, T] of |Qbar_k(t) - q_k(t)| for a step path against a
// piecewise-linear reference, checking both one-sided limits at every jump
// and the reference's breakpoints.
inline double sup_deviation(const SamplePath& p, const PiecewisePath& fluid_q) {
  const std::size_t K = p.servers;
  const double n = static_cast<double>(p.n);
  double worst = 0;
  std::vector<double> ref(K);
  auto compare = [&](double t, std::size_t row) {
    fluid_q.evaluate_into(std::min(t, fluid_q.horizon()), ref);
    for (std::size_t k = 0; k < K; ++k) {
      worst = std::max(worst, std::abs(static_cast<double>(p.Q[row * K + k]) / n - ref[k]));
    }
  };
  for (std::size_t r = 0; r < p.rows(); ++r) {
    const double t = p.times[r] / n;
    if (r > 0) compare(t, r - 1);
    compare(t, r);
  }
  for (double t : fluid_q.times()) {
    if (t <= p.T) compare(t, row_at(p, t * n));
  }
  compare(p.T, p.rows() - 1);
  return worst;
}

}  // namespace jsq
