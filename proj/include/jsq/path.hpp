#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "jsq/errors.hpp"

namespace jsq {

// Piecewise-linear vector trajectory: strictly increasing breakpoints, one
// value vector per breakpoint, linear in between. Values are stored
// row-major (breakpoint-major).
class PiecewisePath {
 public:
  PiecewisePath() = default;

  PiecewisePath(std::vector<double> times, std::vector<std::vector<double>> values) {
    if (times.size() != values.size()) throw InvalidArgument("path: one value vector per breakpoint required");
    if (times.empty()) throw InvalidArgument("path: at least one breakpoint required");
    dim_ = values.front().size();
    for (const auto& v : values) {
      if (v.size() != dim_) throw InvalidArgument("path: value dimension must be constant");
      data_.insert(data_.end(), v.begin(), v.end());
    }
    times_ = std::move(times);
    check_times();
  }

  // Flat constructor; `data` holds times.size() * dim values.
  PiecewisePath(std::vector<double> times, std::size_t dim, std::vector<double> data)
      : times_(std::move(times)), data_(std::move(data)), dim_(dim) {
    if (times_.empty()) throw InvalidArgument("path: at least one breakpoint required");
    if (data_.size() != times_.size() * dim_) throw InvalidArgument("path: data size mismatch");
    check_times();
  }

  // z(t) = rate * t on [0, horizon].
  static PiecewisePath linear(std::span<const double> rate, double horizon) {
    if (!(horizon > 0)) throw InvalidArgument("path: horizon must be positive");
    std::vector<double> end(rate.begin(), rate.end());
    for (double& v : end) v *= horizon;
    return PiecewisePath({0.0, horizon}, {std::vector<double>(rate.size(), 0.0), end});
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return times_.size(); }
  const std::vector<double>& times() const { return times_; }
  double time(std::size_t i) const { return times_[i]; }
  double start() const { return times_.front(); }
  double horizon() const { return times_.back(); }

  std::span<const double> value(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
  double value(std::size_t i, std::size_t c) const { return data_[i * dim_ + c]; }
  const std::vector<double>& data() const { return data_; }

  std::vector<double> evaluate(double t) const {
    std::vector<double> out(dim_);
    evaluate_into(t, out);
    return out;
  }

  void evaluate_into(double t, std::span<double> out) const {
    if (t < times_.front() || t > times_.back()) throw InvalidArgument("path: evaluation outside [t_0, t_N]");
    const auto it = std::upper_bound(times_.begin(), times_.end(), t);
    std::size_t j = static_cast<std::size_t>(it - times_.begin());
    if (j == times_.size()) {
      std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>((j - 1) * dim_), dim_, out.begin());
      return;
    }
    const std::size_t i = j - 1;
    const double w = (t - times_[i]) / (times_[j] - times_[i]);
    for (std::size_t c = 0; c < dim_; ++c) {
      const double lo = data_[i * dim_ + c], hi = data_[j * dim_ + c];
      out[c] = lo + w * (hi - lo);
    }
  }

  // Each coordinate nondecreasing across breakpoints.
  bool nondecreasing() const {
    for (std::size_t i = 1; i < size(); ++i) {
      for (std::size_t c = 0; c < dim_; ++c) {
        if (value(i, c) < value(i - 1, c)) return false;
      }
    }
    return true;
  }

 private:
  void check_times() const {
    for (double t : times_) {
      if (!std::isfinite(t)) throw InvalidArgument("path: breakpoints must be finite");
    }
    for (std::size_t i = 1; i < times_.size(); ++i) {
      if (!(times_[i] > times_[i - 1])) throw InvalidArgument("path: breakpoints must be strictly increasing");
    }
  }

  std::vector<double> times_;
  std::vector<double> data_;
  std::size_t dim_ = 0;
};

// sup_t |p(t) - q(t)| over the common time range, exact for piecewise-linear
// paths (attained at a breakpoint of one of them).
inline double sup_distance(const PiecewisePath& p, const PiecewisePath& q, std::span<const std::size_t> coords = {}) {
  if (p.dim() != q.dim()) throw InvalidArgument("sup_distance: dimension mismatch");
  const double lo = std::max(p.start(), q.start());
  const double hi = std::min(p.horizon(), q.horizon());
  std::vector<double> ts;
  for (double t : p.times()) {
    if (t >= lo && t <= hi) ts.push_back(t);
  }
  for (double t : q.times()) {
    if (t >= lo && t <= hi) ts.push_back(t);
  }
  std::vector<double> a(p.dim()), b(p.dim());
  double best = 0;
  for (double t : ts) {
    p.evaluate_into(t, a);
    q.evaluate_into(t, b);
    if (coords.empty()) {
      for (std::size_t c = 0; c < a.size(); ++c) best = std::max(best, std::abs(a[c] - b[c]));
    } else {
      for (std::size_t c : coords) best = std::max(best, std::abs(a[c] - b[c]));
    }
  }
  return best;
}

}  // namespace jsq
