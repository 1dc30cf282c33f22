#pragma once

// Log-barrier Newton method for   min f(z)  s.t.  G z + h >= 0
// with f convex and twice differentiable on the interior. Problem sizes here
// are tiny (tens of variables), so dense factorisations are fine.

#include <cmath>
#include <functional>
#include <limits>

#include <Eigen/Dense>

#include "jsq/errors.hpp"

namespace jsq::detail {

struct SmoothObjective {
  // Must return +inf (not throw) outside the domain.
  std::function<double(const Eigen::VectorXd&)> value;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> gradient;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> hessian;
};

struct BarrierOptions {
  double tol = 1e-8;            // target suboptimality
  long max_newton = 100000;
  double t0 = 1.0;
  double growth = 20.0;
};

struct BarrierResult {
  Eigen::VectorXd z;
  double value = 0;
  double gap = 0;            // m / t at termination
  double kkt_residual = 0;   // |grad f - G^T nu|_inf with nu_i = 1 / (t s_i)
  long newton_iterations = 0;
};

inline BarrierResult minimize_with_barrier(const SmoothObjective& f, const Eigen::MatrixXd& G,
                                           const Eigen::VectorXd& h, Eigen::VectorXd z,
                                           const BarrierOptions& opt) {
  const Eigen::Index n = z.size();
  const Eigen::Index m = G.rows();
  BarrierResult out;

  auto slack = [&](const Eigen::VectorXd& p) -> Eigen::VectorXd {
    if (m == 0) return Eigen::VectorXd();
    return G * p + h;
  };
  auto phi = [&](const Eigen::VectorXd& p, double t) {
    const double fv = f.value(p);
    if (!std::isfinite(fv)) return std::numeric_limits<double>::infinity();
    double acc = t * fv;
    const Eigen::VectorXd s = slack(p);
    for (Eigen::Index i = 0; i < m; ++i) {
      if (!(s(i) > 0)) return std::numeric_limits<double>::infinity();
      acc -= std::log(s(i));
    }
    return acc;
  };

  {
    const Eigen::VectorXd s = slack(z);
    for (Eigen::Index i = 0; i < m; ++i) {
      if (!(s(i) > 0)) throw InvalidArgument("barrier: starting point is not strictly feasible");
    }
    if (!std::isfinite(f.value(z))) throw InvalidArgument("barrier: objective infinite at starting point");
  }

  if (n == 0) {
    out.z = z;
    out.value = f.value(z);
    return out;
  }

  double t = m == 0 ? 1.0 : opt.t0;
  const double target_gap = opt.tol / 10.0;
  for (;;) {
    // Centering.
    for (;;) {
      if (out.newton_iterations >= opt.max_newton) {
        throw SolverError("barrier Newton method exceeded its iteration budget");
      }
      ++out.newton_iterations;
      const Eigen::VectorXd s = slack(z);
      Eigen::VectorXd g = t * f.gradient(z);
      Eigen::MatrixXd H = t * f.hessian(z);
      for (Eigen::Index i = 0; i < m; ++i) {
        const double inv = 1.0 / s(i);
        g.noalias() -= inv * G.row(i).transpose();
        H.noalias() += (inv * inv) * G.row(i).transpose() * G.row(i);
      }
      Eigen::VectorXd step;
      double reg = 0;
      for (int attempt = 0; attempt < 30; ++attempt) {
        Eigen::MatrixXd Hr = H;
        if (reg > 0) Hr.diagonal().array() += reg;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(Hr);
        if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
          step = -ldlt.solve(g);
          if (step.allFinite() && g.dot(step) < 0) break;
        }
        reg = reg == 0 ? 1e-12 * std::max(1.0, H.diagonal().cwiseAbs().maxCoeff()) : reg * 10;
        step.resize(0);
      }
      if (step.size() == 0) step = -g;  // fall back to steepest descent
      const double decrement = -g.dot(step);
      if (decrement / 2 <= 1e-12 || decrement / (2 * t) <= 1e-3 * target_gap) break;

      const double phi0 = phi(z, t);
      double alpha = 1.0;
      bool moved = false;
      while (alpha > 1e-20) {
        const Eigen::VectorXd cand = z + alpha * step;
        const double pc = phi(cand, t);
        if (std::isfinite(pc) && pc <= phi0 - 0.25 * alpha * decrement) {
          z = cand;
          moved = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!moved) break;  // no representable progress left at this t
    }
    if (m == 0 || static_cast<double>(m) / t <= target_gap) break;
    t *= opt.growth;
  }

  out.z = z;
  out.value = f.value(z);
  out.gap = m == 0 ? 0.0 : static_cast<double>(m) / t;
  Eigen::VectorXd r = f.gradient(z);
  if (m > 0) {
    const Eigen::VectorXd s = slack(z);
    Eigen::VectorXd nu = (t * s).cwiseInverse();
    r -= G.transpose() * nu;
  }
  out.kkt_residual = r.size() ? r.cwiseAbs().maxCoeff() : 0.0;
  return out;
}

}  // namespace jsq::detail
