#pragma once

// Fluid model of the JSQ network driven by cumulative inputs a(t), b(t):
//   q_k' = sum_{m in C_k} e_km' - d_k'
//   q_k (d_k' - b_k') = 0,  d_k' <= b_k'
//   (q_k / w_km - min_{l in S_m} q_l / w_lm) e_km' = 0
//   a_m' = sum_{k in S_m} e_km'
// discretised with a fixed step: each step routes the arrival increment by
// water-filling the weighted levels, then serves min(content, service
// increment) from every queue.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "jsq/errors.hpp"
#include "jsq/path.hpp"
#include "jsq/rate.hpp"
#include "jsq/topology.hpp"

namespace jsq {

struct RouteStep {
  std::vector<double> e;       // K x M, row-major by server
  std::vector<double> d;       // K
  std::vector<double> q_next;  // K
};

namespace detail {

inline bool level_reached(double level, double target) {
  if (target == 0) return level == 0;
  return level <= target * (1 + kTieRelTol);
}

// Adds `mass` of stream m onto `content` by raising the lowest weighted
// levels together. Writes the allocation to e (K x M).
inline void water_fill(std::size_t m, double mass, const Topology& topology, std::vector<double>& content,
                       std::vector<double>& e) {
  if (mass <= 0) return;
  const std::size_t M = topology.streams();
  std::vector<std::size_t> order = topology.admissible(m);
  auto level = [&](std::size_t k) { return content[k] / topology.weight(k, m); };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return level(x) < level(y); });

  double current = level(order[0]);
  double weight_sum = 0;
  std::size_t active = 0;
  auto admit_tied = [&] {
    while (active < order.size() && level_reached(level(order[active]), current)) {
      weight_sum += topology.weight(order[active], m);
      ++active;
    }
  };
  admit_tied();
  double remaining = mass;
  while (remaining > 0) {
    if (active == order.size()) {
      current += remaining / weight_sum;
      break;
    }
    const double next = level(order[active]);
    const double need = weight_sum * (next - current);
    if (need >= remaining) {
      current += remaining / weight_sum;
      break;
    }
    remaining -= need;
    current = next;
    admit_tied();
  }

  std::vector<double> alloc(active);
  double total = 0;
  std::size_t largest = 0;
  for (std::size_t i = 0; i < active; ++i) {
    const std::size_t k = order[i];
    alloc[i] = std::max(0.0, topology.weight(k, m) * current - content[k]);
    total += alloc[i];
    if (alloc[i] > alloc[largest]) largest = i;
  }
  alloc[largest] += mass - total;  // conserve mass to rounding
  for (std::size_t i = 0; i < active; ++i) {
    const std::size_t k = order[i];
    e[k * M + m] += alloc[i];
    content[k] += alloc[i];
  }
}

}  // namespace detail

inline RouteStep fluid_route_step(std::span<const double> q, std::span<const double> da, std::span<const double> db,
                                  const Topology& topology) {
  const std::size_t K = topology.servers();
  const std::size_t M = topology.streams();
  if (q.size() != K || db.size() != K || da.size() != M) throw InvalidArgument("fluid_route_step: dimension mismatch");
  for (double v : q) {
    if (!(v >= 0)) throw InvalidArgument("fluid_route_step: negative queue content");
  }
  for (double v : da) {
    if (!(v >= 0)) throw InvalidArgument("fluid_route_step: negative arrival increment");
  }
  for (double v : db) {
    if (!(v >= 0)) throw InvalidArgument("fluid_route_step: negative service increment");
  }

  RouteStep out;
  out.e.assign(K * M, 0.0);
  std::vector<double> content(q.begin(), q.end());
  for (std::size_t m = 0; m < M; ++m) detail::water_fill(m, da[m], topology, content, out.e);
  out.d.resize(K);
  out.q_next.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    out.d[k] = std::min(db[k], content[k]);
    out.q_next[k] = content[k] - out.d[k];
  }
  return out;
}

struct FluidOptions {
  // Insert a breakpoint wherever the routing regime changes inside a step
  // (a weighted level catches up with the argmin, or a queue empties), so
  // that each output segment stays in one domain F_IJ. Off: plain
  // fixed-step output.
  bool resolve_switches = false;
};

struct FluidSolution {
  PiecewisePath q;  // K
  PiecewisePath e;  // K x M, cumulative
  PiecewisePath d;  // K, cumulative
  double h = 0;
  PiecewisePath a_input;
  PiecewisePath b_input;
};

namespace detail {

struct Substep {
  double tau = 0;
  bool switched = false;     // a regime change ends the substep
  std::vector<double> e;     // increments K x M
  std::vector<double> d;     // increments K
  std::vector<double> q;     // state after the substep
};

// Splits rate `lambda` over tied servers so that their weighted level
// velocities rise together at a common u: x_k = max(0, w_k u + r_k) with
// r_k = mu_k - inflow from other streams. Empty servers (floor_at_zero) cannot move below
// level velocity 0 and absorb up to max(0, r_k) at u = 0.
inline void split_rate(double lambda, std::span<const double> w, std::span<const double> r, bool floor_at_zero,
                       std::span<double> x) {
  const std::size_t n = w.size();
  std::fill(x.begin(), x.end(), 0.0);
  if (lambda <= 0) return;
  if (floor_at_zero) {
    double cap = 0;
    for (std::size_t i = 0; i < n; ++i) cap += std::max(0.0, r[i]);
    if (lambda <= cap) {
      for (std::size_t i = 0; i < n; ++i) x[i] = lambda * std::max(0.0, r[i]) / cap;
      return;
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return -r[a] / w[a] < -r[b] / w[b]; });
  // Find u with sum over active max(0, w u + r) = lambda.
  double sw = 0, sr = 0, u = 0;
  for (std::size_t j = 0; j < n; ++j) {
    sw += w[order[j]];
    sr += r[order[j]];
    u = (lambda - sr) / sw;
    if (j + 1 == n || u <= -r[order[j + 1]] / w[order[j + 1]]) break;
  }
  if (floor_at_zero) u = std::max(u, 0.0);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = std::max(0.0, w[i] * u + r[i]);
    total += x[i];
  }
  if (total > 0) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= lambda / total;
  }
}

// Exact motion with constant input rates from state q: arrivals of each
// stream are split over its weighted-argmin set so that tied levels move
// together (or separate upward), empty queues absorb up to their service
// rate. Runs until the first regime change or `dt`, whichever is earlier.
inline std::optional<Substep> regime_substep_once(std::vector<double>& q, std::span<const double> arrival_rate,
                                                  std::span<const double> service_rate, double dt,
                                                  const Topology& topology) {
  const std::size_t K = topology.servers();
  const std::size_t M = topology.streams();
  std::vector<std::vector<std::size_t>> tied(M);
  std::vector<double> min_level(M, kInfinity);
  for (std::size_t m = 0; m < M; ++m) {
    const auto& S = topology.admissible(m);
    for (std::size_t k : S) min_level[m] = std::min(min_level[m], q[k] / topology.weight(k, m));
    for (std::size_t k : S) {
      if (level_reached(q[k] / topology.weight(k, m), min_level[m])) tied[m].push_back(k);
    }
  }

  // Gauss-Seidel over streams; exact in one sweep unless streams share tied servers.
  std::vector<double> x(K * M, 0.0), inflow(K, 0.0);
  bool converged = false;
  for (int sweep = 0; sweep < 200 && !converged; ++sweep) {
    double change = 0;
    for (std::size_t m = 0; m < M; ++m) {
      const auto& J = tied[m];
      std::vector<double> w(J.size()), r(J.size()), xm(J.size());
      for (std::size_t i = 0; i < J.size(); ++i) {
        const std::size_t k = J[i];
        w[i] = topology.weight(k, m);
        r[i] = service_rate[k] - (inflow[k] - x[k * M + m]);
      }
      split_rate(arrival_rate[m], w, r, min_level[m] == 0, xm);
      for (std::size_t i = 0; i < J.size(); ++i) {
        const std::size_t k = J[i];
        const double old = x[k * M + m];
        change = std::max(change, std::abs(xm[i] - old));
        inflow[k] += xm[i] - old;
        x[k * M + m] = xm[i];
      }
    }
    double scale = 1e-300;
    for (double a : arrival_rate) scale = std::max(scale, a);
    converged = change <= 1e-14 * scale;
  }
  if (!converged) return std::nullopt;

  std::vector<double> velocity(K), departure(K);
  for (std::size_t k = 0; k < K; ++k) {
    departure[k] = q[k] > 0 ? service_rate[k] : std::min(inflow[k], service_rate[k]);
    velocity[k] = inflow[k] - departure[k];
  }

  double tau = dt;
  bool switched = false;
  std::vector<std::size_t> empties;
  std::optional<std::pair<std::size_t, std::size_t>> meets;  // (stream, server catching up)
  for (std::size_t k = 0; k < K; ++k) {
    if (q[k] > 0 && velocity[k] < 0) {
      const double t = q[k] / -velocity[k];
      if (t < tau) {
        tau = t;
        switched = true;
        meets.reset();
      }
    }
  }
  std::vector<double> level_rate(M, kInfinity);
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t k : tied[m]) level_rate[m] = std::min(level_rate[m], velocity[k] / topology.weight(k, m));
    for (std::size_t l : topology.admissible(m)) {
      if (std::find(tied[m].begin(), tied[m].end(), l) != tied[m].end()) continue;
      const double wl = topology.weight(l, m);
      const double gap = q[l] / wl - min_level[m];
      const double closing = level_rate[m] - velocity[l] / wl;
      if (gap > 0 && closing > 0) {
        const double t = gap / closing;
        if (t < tau) {
          tau = t;
          switched = true;
          meets = std::pair{m, l};
        }
      }
    }
  }
  if (switched && !(tau < dt * (1 - 1e-9))) {
    tau = dt;
    switched = false;
    meets.reset();
  }
  if (switched && !(tau > dt * 1e-12)) {
    // The change is due now: apply it to q and let the caller retry.
    if (meets) {
      const auto [m, l] = *meets;
      q[l] = topology.weight(l, m) * min_level[m];
    } else {
      for (std::size_t k = 0; k < K; ++k) {
        if (q[k] > 0 && velocity[k] < 0 && q[k] / -velocity[k] <= dt * 1e-12) q[k] = 0.0;
      }
    }
    return std::nullopt;
  }
  if (switched) {
    for (std::size_t k = 0; k < K; ++k) {
      if (q[k] > 0 && velocity[k] < 0 && q[k] + velocity[k] * tau <= 1e-12 * q[k]) empties.push_back(k);
    }
  }

  Substep s;
  s.tau = tau;
  s.switched = switched;
  s.e.resize(K * M);
  for (std::size_t i = 0; i < K * M; ++i) s.e[i] = x[i] * tau;
  s.d.resize(K);
  s.q.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    s.d[k] = departure[k] * tau;
    s.q[k] = std::max(0.0, q[k] + velocity[k] * tau);
  }
  for (std::size_t k : empties) s.q[k] = 0.0;
  // Servers sliding along a tie keep exactly equal weighted levels.
  for (std::size_t m = 0; m < M; ++m) {
    if (tied[m].size() < 2 || min_level[m] == 0) continue;
    double level = 0;
    std::size_t count = 0;
    for (std::size_t k : tied[m]) {
      const double w = topology.weight(k, m);
      if (std::abs(velocity[k] / w - level_rate[m]) <= 1e-9 * (std::abs(level_rate[m]) + 1)) {
        level += s.q[k] / w;
        ++count;
      }
    }
    if (count < 2) continue;
    level /= static_cast<double>(count);
    for (std::size_t k : tied[m]) {
      const double w = topology.weight(k, m);
      if (std::abs(velocity[k] / w - level_rate[m]) <= 1e-9 * (std::abs(level_rate[m]) + 1) && s.q[k] > 0) {
        s.q[k] = w * level;
      }
    }
  }
  if (meets) {
    const auto [m, l] = *meets;
    const std::size_t k = tied[m].front();
    s.q[l] = topology.weight(l, m) * (s.q[k] / topology.weight(k, m));
  }
  return s;
}

inline std::optional<Substep> regime_substep(std::span<const double> q_in, std::span<const double> arrival_rate,
                                             std::span<const double> service_rate, double dt,
                                             const Topology& topology) {
  std::vector<double> q(q_in.begin(), q_in.end());
  for (std::size_t attempt = 0; attempt <= q.size() * arrival_rate.size() + q.size(); ++attempt) {
    const std::vector<double> before = q;
    auto s = regime_substep_once(q, arrival_rate, service_rate, dt, topology);
    if (s) return s;
    if (q == before) break;
  }
  return std::nullopt;
}

}  // namespace detail

inline FluidSolution fluid_solve(std::span<const double> q0, const PiecewisePath& a, const PiecewisePath& b, double T,
                                 double h, const Topology& topology, const FluidOptions& options = {}) {
  const std::size_t K = topology.servers();
  const std::size_t M = topology.streams();
  if (q0.size() != K) throw InvalidArgument("fluid_solve: q0 dimension does not match K");
  for (double v : q0) {
    if (!(v >= 0) || !std::isfinite(v)) throw InvalidArgument("fluid_solve: q0 must be nonnegative");
  }
  if (a.dim() != M || b.dim() != K) throw InvalidArgument("fluid_solve: input dimensions do not match topology");
  if (!a.nondecreasing()) throw InvalidArgument("fluid_solve: arrival input a must be nondecreasing");
  if (!b.nondecreasing()) throw InvalidArgument("fluid_solve: service input b must be nondecreasing");
  if (!(h > 0)) throw InvalidArgument("fluid_solve: step h must be positive");
  if (!(T > 0)) throw InvalidArgument("fluid_solve: horizon T must be positive");
  if (a.start() > 0 || b.start() > 0 || a.horizon() < T || b.horizon() < T) {
    throw InvalidArgument("fluid_solve: inputs must be defined on [0, T]");
  }

  std::vector<double> times{0.0};
  std::vector<double> q_data(q0.begin(), q0.end());
  std::vector<double> e_data(K * M, 0.0);
  std::vector<double> d_data(K, 0.0);
  std::vector<double> q(q0.begin(), q0.end()), e_cum(K * M, 0.0), d_cum(K, 0.0);

  auto push = [&](double t) {
    times.push_back(t);
    q_data.insert(q_data.end(), q.begin(), q.end());
    e_data.insert(e_data.end(), e_cum.begin(), e_cum.end());
    d_data.insert(d_data.end(), d_cum.begin(), d_cum.end());
  };

  const auto steps = static_cast<std::size_t>(std::max(1.0, std::ceil(T / h - 1e-9)));
  std::vector<double> a_lo = a.evaluate(0.0), b_lo = b.evaluate(0.0);
  std::vector<double> a_hi(M), b_hi(K), da(M), db(K);
  for (std::size_t j = 0; j < steps; ++j) {
    const double t0 = times.back();
    const double t1 = j + 1 == steps ? T : std::min(T, static_cast<double>(j + 1) * h);
    if (!(t1 > t0)) continue;
    a.evaluate_into(t1, a_hi);
    b.evaluate_into(t1, b_hi);
    for (std::size_t m = 0; m < M; ++m) da[m] = a_hi[m] - a_lo[m];
    for (std::size_t k = 0; k < K; ++k) db[k] = b_hi[k] - b_lo[k];

    if (options.resolve_switches) {
      double elapsed = 0;
      bool done = false;
      const double dt = t1 - t0;
      std::vector<double> arrival_rate(M), service_rate(K);
      for (std::size_t m = 0; m < M; ++m) arrival_rate[m] = da[m] / dt;
      for (std::size_t k = 0; k < K; ++k) service_rate[k] = db[k] / dt;
      for (std::size_t guard = 0; guard < 8 * (K + M) + 8 && !done; ++guard) {
        auto sub = detail::regime_substep(q, arrival_rate, service_rate, dt - elapsed, topology);
        if (!sub) break;
        for (std::size_t i = 0; i < K * M; ++i) e_cum[i] += sub->e[i];
        for (std::size_t k = 0; k < K; ++k) d_cum[k] += sub->d[k];
        q = sub->q;
        if (sub->switched) {
          elapsed += sub->tau;
          push(t0 + elapsed);
        } else {
          push(t1);
          done = true;
        }
      }
      if (done) {
        a_lo.swap(a_hi);
        b_lo.swap(b_hi);
        continue;
      }
      // Fall back to one water-filling step over what is left.
      if (elapsed > 0) {
        for (std::size_t m = 0; m < M; ++m) da[m] = std::max(0.0, arrival_rate[m] * (dt - elapsed));
        for (std::size_t k = 0; k < K; ++k) db[k] = std::max(0.0, service_rate[k] * (dt - elapsed));
      }
    }

    const RouteStep step = fluid_route_step(q, da, db, topology);
    for (std::size_t i = 0; i < K * M; ++i) e_cum[i] += step.e[i];
    for (std::size_t k = 0; k < K; ++k) d_cum[k] += step.d[k];
    q = step.q_next;
    push(t1);
    a_lo.swap(a_hi);
    b_lo.swap(b_hi);
  }

  FluidSolution sol;
  sol.q = PiecewisePath(times, K, std::move(q_data));
  sol.e = PiecewisePath(times, K * M, std::move(e_data));
  sol.d = PiecewisePath(std::move(times), K, std::move(d_data));
  sol.h = h;
  sol.a_input = a;
  sol.b_input = b;
  return sol;
}

// Nominal inputs a = lambda t, b = mu t.
inline FluidSolution fluid_solve_nominal(std::span<const double> q0, double T, double h, const Topology& topology,
                                         const FluidOptions& options = {}) {
  return fluid_solve(q0, PiecewisePath::linear(topology.lambdas(), T), PiecewisePath::linear(topology.mus(), T), T, h,
                     topology, options);
}

// sup_j V(t_{j+1}) - V(t_j) for V(t) = sum_k |q_k(t) - q'_k(t)|.
inline double lyapunov_check(const FluidSolution& s1, const FluidSolution& s2) {
  if (s1.q.times() != s2.q.times() || s1.q.dim() != s2.q.dim()) {
    throw InvalidArgument("lyapunov_check: solutions use different time grids");
  }
  auto same = [](const PiecewisePath& x, const PiecewisePath& y) {
    return x.times() == y.times() && x.dim() == y.dim() && x.data() == y.data();
  };
  if (!same(s1.a_input, s2.a_input) || !same(s1.b_input, s2.b_input)) {
    throw InvalidArgument("lyapunov_check: solutions were driven by different inputs");
  }
  auto V = [&](std::size_t j) {
    double v = 0;
    for (std::size_t k = 0; k < s1.q.dim(); ++k) v += std::abs(s1.q.value(j, k) - s2.q.value(j, k));
    return v;
  };
  double worst = s1.q.size() < 2 ? 0.0 : -kInfinity;
  double prev = V(0);
  for (std::size_t j = 1; j < s1.q.size(); ++j) {
    const double cur = V(j);
    worst = std::max(worst, cur - prev);
    prev = cur;
  }
  return worst;
}

}  // namespace jsq
