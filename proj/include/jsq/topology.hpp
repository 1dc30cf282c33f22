#pragma once

// Network description: K single-server queues fed by M arrival streams.
// Stream m may only join servers in its admissible set S_m and picks the
// server minimising Q_k / w_km. Indices are 0-based in this API and 1-based
// in every external format (config files, JSON, CSV headers).

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jsq/errors.hpp"

namespace jsq {

// Positive rational weight, kept exact so the simulator can detect routing
// ties without rounding.
struct Rational {
  std::int64_t num = 1;
  std::int64_t den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  friend bool operator==(const Rational&, const Rational&) = default;

  static constexpr std::int64_t kMaxPart = 1'000'000'000'000;  // 1e12

  static Rational make(std::int64_t num, std::int64_t den) {
    if (den == 0) throw InvalidArgument("rational with zero denominator");
    if (den < 0) {
      num = -num;
      den = -den;
    }
    const std::int64_t g = std::gcd(num < 0 ? -num : num, den);
    if (g > 1) {
      num /= g;
      den /= g;
    }
    return {num, den};
  }

  // Accepts "p/q", "1.25", "3" or "2e-1".
  static Rational parse(const std::string& text) {
    const auto slash = text.find('/');
    if (slash != std::string::npos) {
      return make(parse_integer(text.substr(0, slash)), parse_integer(text.substr(slash + 1)));
    }
    return parse_decimal(text);
  }

  static Rational from_double(double v) {
    if (!std::isfinite(v)) throw InvalidArgument("non-finite weight");
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return parse_decimal(std::string(buf, res.ptr));
  }

  std::string to_string() const {
    if (den == 1) return std::to_string(num);
    return std::to_string(num) + "/" + std::to_string(den);
  }

 private:
  static std::int64_t parse_integer(const std::string& s) {
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw InvalidArgument("malformed integer '" + s + "'");
    }
    return v;
  }

  static Rational parse_decimal(const std::string& s) {
    std::string mantissa = s;
    int exponent = 0;
    if (auto epos = s.find_first_of("eE"); epos != std::string::npos) {
      mantissa = s.substr(0, epos);
      exponent = static_cast<int>(parse_integer(s.substr(epos + (s[epos + 1] == '+' ? 2 : 1))));
    }
    bool negative = false;
    if (!mantissa.empty() && (mantissa[0] == '-' || mantissa[0] == '+')) {
      negative = mantissa[0] == '-';
      mantissa.erase(0, 1);
    }
    std::string digits;
    int frac_digits = 0;
    bool seen_dot = false;
    for (char c : mantissa) {
      if (c == '.' && !seen_dot) {
        seen_dot = true;
      } else if (c >= '0' && c <= '9') {
        digits.push_back(c);
        if (seen_dot) ++frac_digits;
      } else {
        throw InvalidArgument("malformed number '" + s + "'");
      }
    }
    if (digits.empty()) throw InvalidArgument("malformed number '" + s + "'");
    digits.erase(0, std::min(digits.find_first_not_of('0'), digits.size() - 1));
    exponent -= frac_digits;
    if (digits.size() > 18) throw InvalidArgument("weight '" + s + "' has too many digits");
    std::int64_t num = parse_integer(digits);
    std::int64_t den = 1;
    auto scale = [](std::int64_t& v, int times) {
      for (int i = 0; i < times; ++i) {
        if (v > kMaxPart) throw InvalidArgument("weight out of representable range");
        v *= 10;
      }
    };
    if (exponent > 0) scale(num, exponent);
    if (exponent < 0) scale(den, -exponent);
    Rational r = make(negative ? -num : num, den);
    return r;
  }
};

// Raw, unvalidated description. Indices are 1-based as in config files.
struct TopologyDescription {
  std::size_t servers = 0;
  std::size_t streams = 0;
  std::vector<std::vector<std::size_t>> admissible;  // per stream, 1-based server ids
  // weights[m] lists (server, weight) pairs; servers missing here default to 1.
  std::vector<std::vector<std::pair<std::size_t, Rational>>> weights;
  std::vector<double> lambda;
  std::vector<double> mu;
};

class Topology {
 public:
  static Topology validate(const TopologyDescription& raw);

  std::size_t servers() const { return servers_; }
  std::size_t streams() const { return streams_; }

  // S_m, sorted ascending, 0-based.
  const std::vector<std::size_t>& admissible(std::size_t m) const { return admissible_[m]; }
  // C_k = {m : k in S_m}, sorted ascending, 0-based.
  const std::vector<std::size_t>& incidence(std::size_t k) const { return incidence_[k]; }
  bool admits(std::size_t k, std::size_t m) const { return weights_[k * streams_ + m].has_value(); }

  const Rational& weight_exact(std::size_t k, std::size_t m) const {
    if (!admits(k, m)) throw InvalidArgument("weight requested for a non-admissible pair");
    return *weights_[k * streams_ + m];
  }
  double weight(std::size_t k, std::size_t m) const { return weight_exact(k, m).value(); }

  double lambda(std::size_t m) const { return lambda_[m]; }
  double mu(std::size_t k) const { return mu_[k]; }
  const std::vector<double>& lambdas() const { return lambda_; }
  const std::vector<double>& mus() const { return mu_; }

  TopologyDescription describe() const;

  friend bool operator==(const Topology&, const Topology&) = default;

 private:
  std::size_t servers_ = 0;
  std::size_t streams_ = 0;
  std::vector<std::vector<std::size_t>> admissible_;
  std::vector<std::vector<std::size_t>> incidence_;
  std::vector<std::optional<Rational>> weights_;  // K x M, row-major by server
  std::vector<double> lambda_;
  std::vector<double> mu_;
};

inline Topology Topology::validate(const TopologyDescription& raw) {
  const std::size_t K = raw.servers;
  const std::size_t M = raw.streams;
  if (K == 0) throw InvalidTopology("number of servers K must be positive");
  if (M == 0) throw InvalidTopology("number of streams M must be positive");
  if (raw.admissible.size() != M) throw InvalidTopology("admissible must list one set per stream");
  if (raw.lambda.size() != M) throw InvalidTopology("lambda must have one entry per stream");
  if (raw.mu.size() != K) throw InvalidTopology("mu must have one entry per server");
  if (!raw.weights.empty() && raw.weights.size() != M) {
    throw InvalidTopology("weights must have one entry per stream");
  }

  Topology t;
  t.servers_ = K;
  t.streams_ = M;
  t.admissible_.resize(M);
  t.incidence_.resize(K);
  t.weights_.assign(K * M, std::nullopt);

  for (std::size_t m = 0; m < M; ++m) {
    const auto tag = "stream " + std::to_string(m + 1);
    if (raw.admissible[m].empty()) throw InvalidTopology("empty admissible set for " + tag);
    for (std::size_t k1 : raw.admissible[m]) {
      if (k1 < 1 || k1 > K) {
        throw InvalidTopology("server " + std::to_string(k1) + " out of range in " + tag);
      }
      auto& slot = t.weights_[(k1 - 1) * M + m];
      if (slot) throw InvalidTopology("server " + std::to_string(k1) + " listed twice in " + tag);
      slot = Rational{1, 1};
      t.admissible_[m].push_back(k1 - 1);
    }
    std::sort(t.admissible_[m].begin(), t.admissible_[m].end());
    if (!raw.weights.empty()) {
      std::vector<bool> seen(K, false);
      for (const auto& [k1, w] : raw.weights[m]) {
        if (k1 < 1 || k1 > K || !t.weights_[(k1 - 1) * M + m]) {
          throw InvalidTopology("weight given for server " + std::to_string(k1) +
                                " which is not admissible for " + tag);
        }
        if (seen[k1 - 1]) throw InvalidTopology("duplicate weight for server " + std::to_string(k1));
        seen[k1 - 1] = true;
        if (w.num <= 0 || w.den <= 0) {
          throw InvalidTopology("nonpositive weight for server " + std::to_string(k1) + " in " + tag);
        }
        if (w.num > Rational::kMaxPart || w.den > Rational::kMaxPart) {
          throw InvalidTopology("weight numerator/denominator must not exceed 1e12");
        }
        t.weights_[(k1 - 1) * M + m] = Rational::make(w.num, w.den);
      }
    }
    const double lam = raw.lambda[m];
    if (!std::isfinite(lam) || lam < 0) throw InvalidTopology("lambda must be finite and nonnegative for " + tag);
  }
  for (std::size_t k = 0; k < K; ++k) {
    const double mu = raw.mu[k];
    if (!std::isfinite(mu) || mu <= 0) {
      throw InvalidTopology("nonpositive mu for server " + std::to_string(k + 1));
    }
    for (std::size_t m = 0; m < M; ++m) {
      if (t.weights_[k * M + m]) t.incidence_[k].push_back(m);
    }
  }
  t.lambda_ = raw.lambda;
  t.mu_ = raw.mu;
  return t;
}

inline TopologyDescription Topology::describe() const {
  TopologyDescription d;
  d.servers = servers_;
  d.streams = streams_;
  d.lambda = lambda_;
  d.mu = mu_;
  d.admissible.resize(streams_);
  d.weights.resize(streams_);
  for (std::size_t m = 0; m < streams_; ++m) {
    for (std::size_t k : admissible_[m]) {
      d.admissible[m].push_back(k + 1);
      d.weights[m].emplace_back(k + 1, *weights_[k * streams_ + m]);
    }
  }
  return d;
}

// --- JSON configuration -----------------------------------------------------
//
//   {
//     "K": 2, "M": 1,
//     "lambda": [3.0],
//     "mu": [1.0, 1.0],
//     "admissible": [[1, 2]],
//     "weights": [{"1": 1, "2": "3/2"}]      // optional, default 1
//   }

inline Rational weight_from_json(const nlohmann::json& v) {
  if (v.is_string()) return Rational::parse(v.get<std::string>());
  if (v.is_number_integer()) return Rational::make(v.get<std::int64_t>(), 1);
  if (v.is_number()) return Rational::from_double(v.get<double>());
  throw InvalidTopology("weight must be a number or a \"p/q\" string");
}

inline TopologyDescription description_from_json(const nlohmann::json& j) {
  try {
    TopologyDescription d;
    d.servers = j.at("K").get<std::size_t>();
    d.streams = j.at("M").get<std::size_t>();
    d.lambda = j.at("lambda").get<std::vector<double>>();
    d.mu = j.at("mu").get<std::vector<double>>();
    d.admissible = j.at("admissible").get<std::vector<std::vector<std::size_t>>>();
    if (j.contains("weights")) {
      const auto& ws = j.at("weights");
      if (!ws.is_array()) throw InvalidTopology("weights must be an array of objects");
      for (const auto& per_stream : ws) {
        std::vector<std::pair<std::size_t, Rational>> entries;
        for (const auto& [key, value] : per_stream.items()) {
          std::size_t k1 = 0;
          auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), k1);
          if (ec != std::errc() || ptr != key.data() + key.size()) {
            throw InvalidTopology("weight key '" + key + "' is not a server index");
          }
          entries.emplace_back(k1, weight_from_json(value));
        }
        d.weights.push_back(std::move(entries));
      }
    }
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidTopology(std::string("malformed topology: ") + e.what());
  }
}

inline Topology topology_from_json(const nlohmann::json& j) {
  return Topology::validate(description_from_json(j));
}

inline nlohmann::json to_json(const Topology& t) {
  const auto d = t.describe();
  nlohmann::json j;
  j["K"] = d.servers;
  j["M"] = d.streams;
  j["lambda"] = d.lambda;
  j["mu"] = d.mu;
  j["admissible"] = d.admissible;
  nlohmann::json ws = nlohmann::json::array();
  for (const auto& per_stream : d.weights) {
    nlohmann::json o = nlohmann::json::object();
    for (const auto& [k1, w] : per_stream) {
      if (w.den == 1) {
        o[std::to_string(k1)] = w.num;
      } else {
        o[std::to_string(k1)] = w.to_string();
      }
    }
    ws.push_back(std::move(o));
  }
  j["weights"] = std::move(ws);
  return j;
}

inline Topology load_topology(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidTopology("topology not found: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidTopology("topology " + path.string() + " is not valid JSON: " + e.what());
  }
  return topology_from_json(j);
}

}  // namespace jsq
