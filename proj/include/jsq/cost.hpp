#pragma once

// Local cost densities psi(a, b) for the arrival/service rates. The rate
// solver only relies on the CostModel contract: psi >= 0, convex, lower
// semicontinuous, and attains 0. Infinite values are plain IEEE +inf.

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "jsq/errors.hpp"
#include "jsq/topology.hpp"

namespace jsq {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

// pi(alpha) = alpha log alpha - alpha + 1, with 0 log 0 = 0.
inline double pi(double alpha) {
  if (!(alpha >= 0)) throw InvalidArgument("pi: argument must be nonnegative");
  if (alpha == kInfinity) return kInfinity;
  if (alpha < 1e-300) return 1.0 - alpha;
  return alpha * std::log(alpha) - alpha + 1.0;
}

// rate * pi(value / rate) with the 0/0 = 0 convention; +inf when rate == 0 < value.
inline double scaled_pi(double value, double rate) {
  if (rate == 0) return value == 0 ? 0.0 : kInfinity;
  return rate * pi(value / rate);
}

class CostModel {
 public:
  virtual ~CostModel() = default;

  virtual std::size_t arrival_dim() const = 0;
  virtual std::size_t service_dim() const = 0;

  virtual double eval(std::span<const double> a, std::span<const double> b) const = 0;

  // Gradient w.r.t. (a, b) stacked as [a; b]. Only meaningful where eval is
  // finite and differentiable.
  virtual Eigen::VectorXd subgradient(std::span<const double> a, std::span<const double> b) const = 0;

  // Hessian w.r.t. [a; b]. The default differentiates subgradient() numerically.
  virtual Eigen::MatrixXd hessian(std::span<const double> a, std::span<const double> b) const {
    const std::size_t M = arrival_dim();
    const std::size_t n = M + service_dim();
    std::vector<double> z(n);
    std::copy(a.begin(), a.end(), z.begin());
    std::copy(b.begin(), b.end(), z.begin() + static_cast<std::ptrdiff_t>(M));
    Eigen::MatrixXd H(n, n);
    auto grad_at = [&](const std::vector<double>& p) {
      return subgradient(std::span<const double>(p.data(), M), std::span<const double>(p.data() + M, n - M));
    };
    for (std::size_t i = 0; i < n; ++i) {
      const double h = 1e-6 * std::max(1.0, std::abs(z[i]));
      std::vector<double> hi = z, lo = z;
      hi[i] += h;
      double width = h;
      if (z[i] - h >= 0) {
        lo[i] -= h;
        width = 2 * h;
      }
      H.col(static_cast<Eigen::Index>(i)) = (grad_at(hi) - grad_at(lo)) / width;
    }
    return 0.5 * (H + H.transpose());
  }

  // Arrival coordinates whose cost is +inf away from 0 (e.g. zero-rate
  // Poisson streams). The solvers pin them to 0 instead of optimising.
  virtual bool arrival_pinned(std::size_t) const { return false; }

  // mu_k = sup{b_k : psi^B_k(b_k) = 0}; only defined for separable models.
  virtual std::vector<double> zero_levels() const {
    throw InvalidArgument("zero levels are only defined for separable costs");
  }

  virtual bool separable() const { return false; }
};

// psi(a, b) = sum_m A_m(a_m) + sum_k B_k(b_k).
class SeparableCost : public CostModel {
 public:
  virtual double arrival_term(std::size_t m, double a) const = 0;
  virtual double arrival_derivative(std::size_t m, double a) const = 0;
  virtual double arrival_second(std::size_t m, double a) const = 0;
  virtual double service_term(std::size_t k, double b) const = 0;
  virtual double service_derivative(std::size_t k, double b) const = 0;
  virtual double service_second(std::size_t k, double b) const = 0;

  bool separable() const override { return true; }

  double eval(std::span<const double> a, std::span<const double> b) const override {
    check_dims(a, b);
    double total = 0;
    for (std::size_t m = 0; m < a.size(); ++m) total += arrival_term(m, a[m]);
    for (std::size_t k = 0; k < b.size(); ++k) total += service_term(k, b[k]);
    return total;
  }

  Eigen::VectorXd subgradient(std::span<const double> a, std::span<const double> b) const override {
    check_dims(a, b);
    Eigen::VectorXd g(static_cast<Eigen::Index>(a.size() + b.size()));
    for (std::size_t m = 0; m < a.size(); ++m) g(static_cast<Eigen::Index>(m)) = arrival_derivative(m, a[m]);
    for (std::size_t k = 0; k < b.size(); ++k) {
      g(static_cast<Eigen::Index>(a.size() + k)) = service_derivative(k, b[k]);
    }
    return g;
  }

  Eigen::MatrixXd hessian(std::span<const double> a, std::span<const double> b) const override {
    check_dims(a, b);
    const auto n = static_cast<Eigen::Index>(a.size() + b.size());
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t m = 0; m < a.size(); ++m) {
      const auto i = static_cast<Eigen::Index>(m);
      H(i, i) = arrival_second(m, a[m]);
    }
    for (std::size_t k = 0; k < b.size(); ++k) {
      const auto i = static_cast<Eigen::Index>(a.size() + k);
      H(i, i) = service_second(k, b[k]);
    }
    return H;
  }

 protected:
  void check_dims(std::span<const double> a, std::span<const double> b) const {
    if (a.size() != arrival_dim() || b.size() != service_dim()) {
      throw InvalidArgument("cost: dimension mismatch");
    }
  }
};

// Poisson arrivals and autonomous Poisson service:
//   psi(a, b) = sum_m lambda_m pi(a_m / lambda_m) + sum_k mu_k pi(b_k / mu_k).
class PoissonCost final : public SeparableCost {
 public:
  explicit PoissonCost(const Topology& topology) : lambda_(topology.lambdas()), mu_(topology.mus()) {}
  PoissonCost(std::vector<double> lambda, std::vector<double> mu) : lambda_(std::move(lambda)), mu_(std::move(mu)) {
    for (double l : lambda_) {
      if (!(l >= 0) || !std::isfinite(l)) throw InvalidArgument("lambda must be finite and nonnegative");
    }
    for (double m : mu_) {
      if (!(m > 0) || !std::isfinite(m)) throw InvalidArgument("mu must be finite and positive");
    }
  }

  std::size_t arrival_dim() const override { return lambda_.size(); }
  std::size_t service_dim() const override { return mu_.size(); }

  double arrival_term(std::size_t m, double a) const override { return scaled_pi(a, lambda_[m]); }
  double arrival_derivative(std::size_t m, double a) const override {
    if (lambda_[m] == 0) return a == 0 ? 0.0 : kInfinity;
    return std::log(a / lambda_[m]);
  }
  double arrival_second(std::size_t m, double a) const override {
    if (lambda_[m] == 0) return 0.0;
    return 1.0 / a;
  }
  double service_term(std::size_t k, double b) const override { return scaled_pi(b, mu_[k]); }
  double service_derivative(std::size_t k, double b) const override { return std::log(b / mu_[k]); }
  double service_second(std::size_t, double b) const override { return 1.0 / b; }

  bool arrival_pinned(std::size_t m) const override { return lambda_[m] == 0; }
  std::vector<double> zero_levels() const override { return mu_; }

  const std::vector<double>& lambda() const { return lambda_; }
  const std::vector<double>& mu() const { return mu_; }

 private:
  std::vector<double> lambda_;
  std::vector<double> mu_;
};

inline double psi_poisson(std::span<const double> a, std::span<const double> b, const Topology& topology) {
  if (a.size() != topology.streams() || b.size() != topology.servers()) {
    throw InvalidArgument("psi_poisson: dimension mismatch");
  }
  for (double v : a) {
    if (!(v >= 0)) throw InvalidArgument("psi_poisson: arrival rates must be nonnegative");
  }
  for (double v : b) {
    if (!(v >= 0)) throw InvalidArgument("psi_poisson: service rates must be nonnegative");
  }
  return PoissonCost(topology).eval(a, b);
}

}  // namespace jsq
