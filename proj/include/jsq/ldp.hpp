#pragma once

// Path action of the queue process and a Monte Carlo harness for rare
// events.
//
//   I^Q(q) = I0(q(0)) + int_0^T L(q(t), q'(t)) dt
//
// for piecewise-linear q. Inside a linear segment the velocity is fixed and
// L(q(t), v) only changes where the domain label of q(t) changes, i.e. at
// zero crossings and weighted-level equalities, both linear in t. Each
// segment is cut at those times and L is evaluated once per piece.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "jsq/cost.hpp"
#include "jsq/errors.hpp"
#include "jsq/fluid.hpp"
#include "jsq/parallel.hpp"
#include "jsq/path.hpp"
#include "jsq/rate.hpp"
#include "jsq/rng.hpp"
#include "jsq/sim.hpp"
#include "jsq/topology.hpp"

namespace jsq {

using InitialCost = std::function<double(std::span<const double>)>;

inline InitialCost zero_initial_cost() {
  return [](std::span<const double>) { return 0.0; };
}

// 0 at q0, +inf elsewhere (deterministic initial condition).
inline InitialCost pinned_initial_cost(std::vector<double> q0, double tol = 1e-12) {
  return [q0 = std::move(q0), tol](std::span<const double> x) {
    if (x.size() != q0.size()) return kInfinity;
    for (std::size_t k = 0; k < x.size(); ++k) {
      if (std::abs(x[k] - q0[k]) > tol * std::max(1.0, std::abs(q0[k]))) return kInfinity;
    }
    return 0.0;
  };
}

struct ActionPiece {
  double t0 = 0, t1 = 0;
  std::vector<double> velocity;
  RateWitness witness;  // evaluated at the piece midpoint; carries the label
  double cost = 0;      // L * (t1 - t0)
};

struct ActionReport {
  double initial = 0;
  double running = 0;
  double total = 0;
  bool nonnegative = true;
  bool tail_closable = true;  // L(q(T), 0) = 0: the path can stay put at no cost
  std::vector<ActionPiece> pieces;
};

namespace detail {

// Times strictly inside (t0, t1) where the label of x0 + v (t - t0) can change.
inline std::vector<double> label_switch_times(std::span<const double> x0, std::span<const double> v, double t0,
                                              double t1, const Topology& topology) {
  std::vector<double> cuts;
  const double span = t1 - t0;
  auto consider = [&](double tau) {
    if (std::isfinite(tau) && tau > span * 1e-12 && tau < span * (1 - 1e-12)) cuts.push_back(t0 + tau);
  };
  for (std::size_t k = 0; k < x0.size(); ++k) {
    if (v[k] != 0) consider(-x0[k] / v[k]);
  }
  for (std::size_t m = 0; m < topology.streams(); ++m) {
    const auto& S = topology.admissible(m);
    for (std::size_t i = 0; i < S.size(); ++i) {
      for (std::size_t j = i + 1; j < S.size(); ++j) {
        const std::size_t k = S[i], l = S[j];
        const double wk = topology.weight(k, m), wl = topology.weight(l, m);
        const double closing = v[k] / wk - v[l] / wl;
        if (closing != 0) consider((x0[l] / wl - x0[k] / wk) / closing);
      }
    }
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  return cuts;
}

}  // namespace detail

inline ActionReport path_action(const PiecewisePath& q, const Topology& topology, const CostModel& cost,
                                const InitialCost& initial_cost, double tol = 1e-8) {
  const std::size_t K = topology.servers();
  if (q.dim() != K) throw InvalidArgument("path_action: path dimension does not match K");
  ActionReport report;
  for (double v : q.data()) {
    if (v < 0) report.nonnegative = false;
  }
  if (!report.nonnegative) {
    report.initial = report.running = report.total = kInfinity;
    report.tail_closable = false;
    return report;
  }
  report.initial = initial_cost(q.value(0));

  std::vector<double> v(K), x0(K), mid(K);
  for (std::size_t i = 0; i + 1 < q.size(); ++i) {
    const double ta = q.time(i), tb = q.time(i + 1);
    for (std::size_t k = 0; k < K; ++k) {
      x0[k] = q.value(i, k);
      v[k] = (q.value(i + 1, k) - x0[k]) / (tb - ta);
    }
    std::vector<double> bounds{ta};
    for (double c : detail::label_switch_times(x0, v, ta, tb, topology)) bounds.push_back(c);
    bounds.push_back(tb);
    for (std::size_t p = 0; p + 1 < bounds.size(); ++p) {
      const double s = 0.5 * (bounds[p] + bounds[p + 1]);
      const double w = (s - ta) / (tb - ta);
      for (std::size_t k = 0; k < K; ++k) mid[k] = std::max(0.0, x0[k] + w * (q.value(i + 1, k) - x0[k]));
      ActionPiece piece;
      piece.t0 = bounds[p];
      piece.t1 = bounds[p + 1];
      piece.velocity = v;
      piece.witness = local_rate(mid, v, topology, cost, tol);
      piece.cost = piece.witness.finite() ? piece.witness.value * (piece.t1 - piece.t0) : kInfinity;
      report.running += piece.cost;
      report.pieces.push_back(std::move(piece));
    }
  }
  const std::vector<double> rest(K, 0.0);
  const auto tail = local_rate(q.value(q.size() - 1), rest, topology, cost, tol);
  report.tail_closable = tail.finite() && tail.value <= tol;
  report.total = report.initial + report.running;
  return report;
}

enum class EventType { terminal, running_max };

// Q_k(T) >= c (terminal) or sup_{t <= T} Q_k(t) >= c (running_max), scaled,
// started from q0.
struct RareEventSpec {
  EventType type = EventType::terminal;
  std::size_t k = 0;  // 0-based
  double c = 0;
  double T = 1;
  std::vector<double> q0;

  bool holds(const PiecewisePath& q) const {
    if (type == EventType::terminal) return q.value(q.size() - 1, k) >= c;
    for (std::size_t i = 0; i < q.size(); ++i) {
      if (q.value(i, k) >= c) return true;
    }
    return false;
  }
};

namespace detail {

inline double parse_number(std::string_view s, std::string_view what) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw InvalidArgument("event: cannot parse " + std::string(what) + " value '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace detail

// "terminal:k=1,c=1,T=1" or "max:k=2,c=0.5,T=2", optionally with
// "q0=0.5;0" (semicolon-separated). Server ids are 1-based; q0 defaults to 0.
inline RareEventSpec parse_event(std::string_view text, const Topology& topology) {
  RareEventSpec spec;
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) throw InvalidArgument("event: expected '<type>:key=value,...'");
  const auto type = text.substr(0, colon);
  if (type == "terminal") {
    spec.type = EventType::terminal;
  } else if (type == "max") {
    spec.type = EventType::running_max;
  } else {
    throw InvalidArgument("event: unknown type '" + std::string(type) + "' (expected terminal or max)");
  }
  bool have_k = false, have_c = false;
  spec.q0.assign(topology.servers(), 0.0);
  std::string_view rest = text.substr(colon + 1);
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    const auto item = rest.substr(0, comma);
    rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) throw InvalidArgument("event: expected key=value, got '" + std::string(item) + "'");
    const auto key = item.substr(0, eq);
    const auto value = item.substr(eq + 1);
    if (key == "k") {
      const double k = detail::parse_number(value, "k");
      if (k < 1 || k > static_cast<double>(topology.servers()) || k != std::floor(k)) {
        throw InvalidArgument("event: server k out of range");
      }
      spec.k = static_cast<std::size_t>(k) - 1;
      have_k = true;
    } else if (key == "c") {
      spec.c = detail::parse_number(value, "c");
      if (!(spec.c >= 0) || !std::isfinite(spec.c)) throw InvalidArgument("event: threshold c must be nonnegative");
      have_c = true;
    } else if (key == "T") {
      spec.T = detail::parse_number(value, "T");
      if (!(spec.T > 0) || !std::isfinite(spec.T)) throw InvalidArgument("event: horizon T must be positive");
    } else if (key == "q0") {
      std::vector<double> q0;
      std::string_view list = value;
      while (!list.empty()) {
        const auto semi = list.find(';');
        q0.push_back(detail::parse_number(list.substr(0, semi), "q0"));
        list = semi == std::string_view::npos ? std::string_view{} : list.substr(semi + 1);
      }
      if (q0.size() != topology.servers()) throw InvalidArgument("event: q0 dimension does not match K");
      for (double v : q0) {
        if (!(v >= 0)) throw InvalidArgument("event: q0 must be nonnegative");
      }
      spec.q0 = std::move(q0);
    } else {
      throw InvalidArgument("event: unknown key '" + std::string(key) + "'");
    }
  }
  if (!have_k || !have_c) throw InvalidArgument("event: both k and c are required");
  return spec;
}

inline std::string to_string(const RareEventSpec& spec) {
  std::string s = spec.type == EventType::terminal ? "terminal:" : "max:";
  auto num = [](double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
  };
  s += "k=" + std::to_string(spec.k + 1) + ",c=" + num(spec.c) + ",T=" + num(spec.T) + ",q0=";
  for (std::size_t i = 0; i < spec.q0.size(); ++i) s += (i ? ";" : "") + num(spec.q0[i]);
  return s;
}

struct SearchOptions {
  std::size_t starts = 8;
  std::uint64_t seed = 1;
  double rate_tol = 1e-8;
  double min_step = 1e-6;
  std::size_t max_evaluations = 20000;  // per start
  unsigned jobs = 1;
};

struct ActionOptimum {
  PiecewisePath path;
  double value = kInfinity;
  ActionReport report;
  std::size_t evaluations = 0;
};

namespace detail {

struct PatternSearch {
  const RareEventSpec& event;
  const Topology& topology;
  const CostModel& cost;
  std::size_t segments;
  const SearchOptions& options;
  std::vector<double> times;
  std::size_t evaluations = 0;

  PiecewisePath build(const std::vector<double>& z) const {
    const std::size_t K = topology.servers();
    std::vector<double> data(event.q0);
    data.insert(data.end(), z.begin(), z.end());
    return PiecewisePath(times, K, std::move(data));
  }

  void project(std::vector<double>& z) const {
    const std::size_t K = topology.servers();
    for (double& v : z) v = std::max(0.0, v);
    if (event.type == EventType::terminal) {
      double& end_k = z[(segments - 1) * K + event.k];
      end_k = std::max(end_k, event.c);
    }
  }

  double objective(const std::vector<double>& z) {
    ++evaluations;
    return path_action(build(z), topology, cost, zero_initial_cost(), options.rate_tol).total;
  }

  // Compass search with step halving.
  std::pair<std::vector<double>, double> run(std::vector<double> z, double step) {
    project(z);
    double best = objective(z);
    const std::size_t budget = evaluations + options.max_evaluations;
    while (step >= options.min_step && evaluations < budget) {
      bool improved = false;
      for (std::size_t i = 0; i < z.size() && evaluations < budget; ++i) {
        for (double dir : {1.0, -1.0}) {
          std::vector<double> trial = z;
          trial[i] += dir * step;
          project(trial);
          if (trial == z) continue;
          const double f = objective(trial);
          if (f < best) {
            best = f;
            z = std::move(trial);
            improved = true;
            break;
          }
        }
      }
      if (!improved) step *= 0.5;
    }
    return {std::move(z), best};
  }
};

}  // namespace detail

// Least action over B-segment piecewise-linear paths on a uniform grid of
// [0, T] that start at q0 and end in the event, by multistart compass
// search. Starts: the straight line to the nearest event point, the B = 1
// optimum (B > 1), a line raising every queue to the threshold, and random
// perturbations. The nominal fluid path is also
// offered when it already realizes the event. The value is an upper bound on
// the infimum over the event.
inline ActionOptimum minimize_action(const RareEventSpec& event, const Topology& topology, const CostModel& cost,
                                     std::size_t segments, const SearchOptions& options = {}) {
  const std::size_t K = topology.servers();
  if (segments < 1) throw InvalidArgument("minimize_action: at least one segment required");
  if (event.type != EventType::terminal) throw InvalidArgument("minimize_action: only terminal-threshold events");
  if (event.q0.size() != K) throw InvalidArgument("minimize_action: q0 dimension does not match K");

  detail::PatternSearch search{event, topology, cost, segments, options, {}, 0};
  for (std::size_t j = 0; j <= segments; ++j) search.times.push_back(event.T * static_cast<double>(j) / static_cast<double>(segments));

  std::vector<double> target = event.q0;
  target[event.k] = std::max(target[event.k], event.c);
  auto line_to = [&](const std::vector<double>& end) {
    std::vector<double> z;
    for (std::size_t j = 1; j <= segments; ++j) {
      const double w = static_cast<double>(j) / static_cast<double>(segments);
      for (std::size_t k = 0; k < K; ++k) z.push_back(event.q0[k] + w * (end[k] - event.q0[k]));
    }
    return z;
  };

  std::vector<std::vector<double>> starts;
  starts.push_back(line_to(target));
  if (segments > 1) {
    SearchOptions single = options;
    single.starts = 1;
    const auto coarse = minimize_action(event, topology, cost, 1, single);
    starts.push_back(line_to(std::vector<double>(coarse.path.value(1).begin(), coarse.path.value(1).end())));
  }
  // All queues raised to the threshold together, so that the target queue
  // stays in the argmin sets it needs.
  std::vector<double> balanced = event.q0;
  for (double& v : balanced) v = std::max(v, event.c);
  if (balanced != target) starts.push_back(line_to(balanced));
  const double scale = std::max({1.0, event.c, *std::max_element(event.q0.begin(), event.q0.end())});
  const std::size_t wanted = std::max(options.starts, starts.size());
  for (std::size_t s = 1; starts.size() < wanted; ++s) {
    ClockStream rng(options.seed, s, 0);
    std::vector<double> end = s % 2 ? balanced : target;
    for (std::size_t k = 0; k < K; ++k) end[k] += 0.5 * scale * rng.uniform();
    std::vector<double> z = line_to(end);
    for (double& v : z) v += 0.25 * scale * (rng.uniform() - 0.5);
    starts.push_back(std::move(z));
  }

  std::vector<std::pair<std::vector<double>, double>> results(starts.size());
  std::vector<std::size_t> evals(starts.size(), 0);
  parallel_for(starts.size(), options.jobs, [&](std::size_t i) {
    detail::PatternSearch local = search;
    results[i] = local.run(starts[i], 0.25 * scale);
    evals[i] = local.evaluations;
  });

  ActionOptimum best;
  for (std::size_t i = 0; i < results.size(); ++i) {
    best.evaluations += evals[i];
    if (results[i].second < best.value || i == 0) {
      best.value = results[i].second;
      best.path = search.build(results[i].first);
    }
  }
  const FluidSolution fluid = fluid_solve_nominal(event.q0, event.T, event.T / 1000.0, topology, {true});
  if (event.holds(fluid.q)) {
    const double v = path_action(fluid.q, topology, cost, zero_initial_cost(), options.rate_tol).total;
    if (v < best.value) {
      best.value = v;
      best.path = fluid.q;
    }
  }
  best.report = path_action(best.path, topology, cost, zero_initial_cost(), options.rate_tol);
  return best;
}

struct ScaleEstimate {
  std::uint64_t n = 0;
  std::uint64_t reps = 0;
  std::uint64_t hits = 0;
  double p_hat = 0;
  double ci_lo = 0, ci_hi = 0;  // 95%; Wilson, or [0, 1 - 0.05^(1/reps)] with no hits
  bool one_sided = false;
  double rate = kInfinity;       // -(1/n) log p_hat
  double rate_lo = 0, rate_hi = kInfinity;
};

struct RateFit {
  double I = 0;  // intercept of -(1/n) log p_hat = I + c / n
  double c = 0;
  std::size_t points = 0;
};

struct RareEventEstimate {
  std::vector<ScaleEstimate> scales;
  std::optional<RateFit> fit;
};

inline constexpr double kWilsonZ = 1.959963984540054;

inline ScaleEstimate summarize_hits(std::uint64_t n, std::uint64_t reps, std::uint64_t hits) {
  if (reps == 0) throw InvalidArgument("estimate: replication count must be positive");
  ScaleEstimate s;
  s.n = n;
  s.reps = reps;
  s.hits = hits;
  const double N = static_cast<double>(reps);
  s.p_hat = static_cast<double>(hits) / N;
  if (hits == 0) {
    s.one_sided = true;
    s.ci_lo = 0;
    s.ci_hi = -std::expm1(std::log(0.05) / N);
  } else {
    const double z2 = kWilsonZ * kWilsonZ;
    const double centre = (s.p_hat + z2 / (2 * N)) / (1 + z2 / N);
    const double half = kWilsonZ * std::sqrt(s.p_hat * (1 - s.p_hat) / N + z2 / (4 * N * N)) / (1 + z2 / N);
    s.ci_lo = std::max(0.0, centre - half);
    s.ci_hi = std::min(1.0, centre + half);
    s.rate = -std::log(s.p_hat) / static_cast<double>(n);
  }
  s.rate_lo = -std::log(s.ci_hi) / static_cast<double>(n);
  s.rate_hi = s.ci_lo > 0 ? -std::log(s.ci_lo) / static_cast<double>(n) : kInfinity;
  if (s.rate_lo == 0) s.rate_lo = 0;  // drop -0
  if (s.rate == 0) s.rate = 0;
  return s;
}

// Least squares of rate against 1/n over the scales with at least one hit.
inline std::optional<RateFit> fit_rate(const std::vector<ScaleEstimate>& scales) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& s : scales) {
    if (s.hits > 0) pts.emplace_back(1.0 / static_cast<double>(s.n), s.rate);
  }
  if (pts.size() < 2) return std::nullopt;
  double sx = 0, sy = 0;
  for (auto [x, y] : pts) {
    sx += x;
    sy += y;
  }
  const double mx = sx / static_cast<double>(pts.size()), my = sy / static_cast<double>(pts.size());
  double sxx = 0, sxy = 0;
  for (auto [x, y] : pts) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
  }
  if (sxx == 0) return std::nullopt;
  RateFit f;
  f.c = sxy / sxx;
  f.I = my - f.c * mx;
  f.points = pts.size();
  return f;
}

// Whether replication `rep` at scale n realizes the event.
inline bool event_hit(const RareEventSpec& event, const Topology& topology, std::uint64_t n, std::uint64_t seed,
                      TieRule tie, std::uint64_t rep) {
  SimulationParams p;
  p.n = n;
  p.T = event.T;
  p.seed = seed;
  p.tie = tie;
  p.q0_scaled = event.q0;
  const double threshold = static_cast<double>(n) * event.c;
  if (event.type == EventType::terminal) {
    const auto final_state = run_events(topology, p, rep, [](const SimulationState&) {});
    return static_cast<double>(final_state.Q[event.k]) >= threshold;
  }
  bool hit = std::floor(static_cast<double>(n) * event.q0[event.k]) >= threshold;
  run_events(topology, p, rep, [&](const SimulationState& s) {
    if (static_cast<double>(s.Q[event.k]) >= threshold) hit = true;
  });
  return hit;
}

// Seed used for scale n, so that different scales draw independent streams.
inline std::uint64_t scale_seed(std::uint64_t seed, std::uint64_t n) {
  std::uint64_t s = seed ^ (n * 0xd1b54a32d192ed03ULL);
  return splitmix64(s);
}

// Direct Monte Carlo at every scale; reps has one entry per scale or a single
// entry used for all.
inline RareEventEstimate estimate_rare_event(const RareEventSpec& event, const Topology& topology,
                                             const std::vector<std::uint64_t>& scales,
                                             const std::vector<std::uint64_t>& reps, std::uint64_t seed,
                                             TieRule tie = TieRule::lowest_index, unsigned jobs = 1) {
  if (scales.empty()) throw InvalidArgument("estimate: at least one scale required");
  if (reps.size() != 1 && reps.size() != scales.size()) {
    throw InvalidArgument("estimate: give one replication count or one per scale");
  }
  if (event.q0.size() != topology.servers()) throw InvalidArgument("estimate: q0 dimension does not match K");
  RareEventEstimate out;
  constexpr std::uint64_t kChunk = 1 << 14;
  for (std::size_t i = 0; i < scales.size(); ++i) {
    const std::uint64_t n = scales[i];
    if (n < 1) throw InvalidArgument("estimate: scales must be at least 1");
    const std::uint64_t R = reps.size() == 1 ? reps[0] : reps[i];
    if (R < 1) throw InvalidArgument("estimate: replication count must be positive");
    const std::uint64_t s = scale_seed(seed, n);
    const std::size_t chunks = static_cast<std::size_t>((R + kChunk - 1) / kChunk);
    std::vector<std::uint64_t> hits(chunks, 0);
    parallel_for(chunks, jobs, [&](std::size_t c) {
      const std::uint64_t lo = c * kChunk, hi = std::min(R, lo + kChunk);
      std::uint64_t h = 0;
      for (std::uint64_t r = lo; r < hi; ++r) h += event_hit(event, topology, n, s, tie, r) ? 1 : 0;
      hits[c] = h;
    });
    std::uint64_t total = 0;
    for (auto h : hits) total += h;
    out.scales.push_back(summarize_hits(n, R, total));
  }
  out.fit = fit_rate(out.scales);
  return out;
}

// Expected hits at the smallest scale, reps * exp(-n_min I), with I the
// least action found for the terminal version of the event (a running-max
// event contains its terminal version, so this is conservative).
inline double expected_hits(const RareEventSpec& event, const Topology& topology, const CostModel& cost,
                            std::uint64_t n_min, std::uint64_t reps_at_n_min, double* rate_out = nullptr) {
  RareEventSpec terminal = event;
  terminal.type = EventType::terminal;
  SearchOptions opt;
  opt.starts = 1;
  const double I = minimize_action(terminal, topology, cost, 1, opt).value;
  if (rate_out) *rate_out = I;
  if (!std::isfinite(I)) return 0.0;
  return static_cast<double>(reps_at_n_min) * std::exp(-static_cast<double>(n_min) * I);
}

}  // namespace jsq
