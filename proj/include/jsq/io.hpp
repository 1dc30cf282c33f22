#pragma once

// Result persistence: locale-free number formatting, CSV tables, JSON with
// 17 significant digits, SHA-256 digests and run manifests.

#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "jsq/errors.hpp"
#include "jsq/path.hpp"
#include "jsq/sim.hpp"

namespace jsq {

inline constexpr const char* kVersion = "1.0.0";

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shortest text that round-trips through 17 significant digits; '.' decimal.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0) return "0";
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, r.ptr);
}

namespace detail {

inline void write_json_string(std::string& out, const std::string& s) {
  out += nlohmann::json(s).dump();
}

inline void write_json(std::string& out, const nlohmann::json& j, int indent, int depth) {
  auto newline = [&](int d) {
    if (indent < 0) return;
    out += '\n';
    out.append(static_cast<std::size_t>(indent * d), ' ');
  };
  switch (j.type()) {
    case nlohmann::json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += '{';
      bool first = true;
      for (const auto& [key, value] : j.items()) {
        if (!first) out += ',';
        first = false;
        newline(depth + 1);
        write_json_string(out, key);
        out += indent < 0 ? ":" : ": ";
        write_json(out, value, indent, depth + 1);
      }
      newline(depth);
      out += '}';
      return;
    }
    case nlohmann::json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      out += '[';
      bool first = true;
      for (const auto& value : j) {
        if (!first) out += ',';
        first = false;
        newline(depth + 1);
        write_json(out, value, indent, depth + 1);
      }
      newline(depth);
      out += ']';
      return;
    }
    case nlohmann::json::value_t::number_float: {
      const double v = j.get<double>();
      if (std::isfinite(v)) {
        out += format_number(v);
      } else {
        write_json_string(out, format_number(v));  // JSON has no inf/nan
      }
      return;
    }
    default:
      out += j.dump();
  }
}

}  // namespace detail

// Serialises j; floating-point numbers get 17 significant digits and
// non-finite values become the strings "inf", "-inf", "nan".
inline std::string dump_json(const nlohmann::json& j, int indent = 2) {
  std::string out;
  detail::write_json(out, j, indent, 0);
  return out;
}

inline nlohmann::json json_vector(std::span<const double> v) {
  nlohmann::json a = nlohmann::json::array();
  for (double x : v) a.push_back(x);
  return a;
}

// CSV text: one header line, then one line per row.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : columns_(header.size()) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (i) text_ += ',';
      text_ += header[i];
    }
    text_ += '\n';
  }

  void row(std::span<const double> values) {
    if (values.size() != columns_) throw InvalidArgument("csv: row width does not match header");
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i) text_ += ',';
      text_ += format_number(values[i]);
    }
    text_ += '\n';
  }

  const std::string& str() const { return text_; }

 private:
  std::size_t columns_;
  std::string text_;
};

// Time column followed by the path values.
inline std::string path_csv(const PiecewisePath& path, std::vector<std::string> header) {
  if (header.size() != path.dim() + 1) throw InvalidArgument("csv: header width does not match path");
  CsvWriter csv(std::move(header));
  std::vector<double> row(path.dim() + 1);
  for (std::size_t i = 0; i < path.size(); ++i) {
    row[0] = path.time(i);
    for (std::size_t c = 0; c < path.dim(); ++c) row[c + 1] = path.value(i, c);
    csv.row(row);
  }
  return csv.str();
}

// Column names for the scaled simulator output.
inline std::vector<std::string> scaled_path_header(std::size_t K, std::size_t M) {
  std::vector<std::string> h{"t"};
  for (std::size_t k = 1; k <= K; ++k) h.push_back("Q_" + std::to_string(k));
  for (std::size_t m = 1; m <= M; ++m) h.push_back("A_" + std::to_string(m));
  for (std::size_t k = 1; k <= K; ++k) h.push_back("B_" + std::to_string(k));
  for (std::size_t k = 1; k <= K; ++k) h.push_back("D_" + std::to_string(k));
  for (std::size_t k = 1; k <= K; ++k) {
    for (std::size_t m = 1; m <= M; ++m) h.push_back("E_" + std::to_string(k) + "_" + std::to_string(m));
  }
  return h;
}

// Every recorded event at full resolution: unscaled time, event kind,
// source, target, then the integer state.
inline std::string events_csv(const SamplePath& p) {
  const std::size_t K = p.servers, M = p.streams;
  std::string text = "time,kind,source,target";
  auto hdr = scaled_path_header(K, M);
  for (std::size_t i = 1; i < hdr.size(); ++i) text += "," + hdr[i];
  text += '\n';
  auto append_ints = [&](const std::vector<std::int64_t>& v, std::size_t row, std::size_t width) {
    for (std::size_t i = 0; i < width; ++i) {
      text += ',';
      text += std::to_string(v[row * width + i]);
    }
  };
  for (std::size_t r = 0; r < p.rows(); ++r) {
    text += format_number(p.times[r]);
    if (r == 0) {
      text += ",init,0,0";
    } else {
      text += p.kinds[r - 1] == EventKind::arrival ? ",arrival," : ",service,";
      text += std::to_string(p.sources[r - 1] + 1) + "," + std::to_string(p.targets[r - 1] + 1);
    }
    append_ints(p.Q, r, K);
    append_ints(p.A, r, M);
    append_ints(p.B, r, K);
    append_ints(p.D, r, K);
    append_ints(p.E, r, K * M);
    text += '\n';
  }
  return text;
}

inline std::vector<std::vector<double>> parse_csv_numbers(std::string_view text, std::vector<std::string>* header) {
  std::vector<std::vector<double>> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  bool first = true;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (first) {
      first = false;
      double probe = 0;
      const auto& c0 = cells.empty() ? std::string() : cells[0];
      const auto r = std::from_chars(c0.data(), c0.data() + c0.size(), probe);
      if (r.ec != std::errc() || r.ptr != c0.data() + c0.size()) {
        if (header) *header = cells;
        continue;
      }
    }
    std::vector<double> row;
    for (const auto& c : cells) {
      double v = 0;
      const auto r = std::from_chars(c.data(), c.data() + c.size(), v);
      if (r.ec != std::errc() || r.ptr != c.data() + c.size()) {
        throw InvalidArgument("csv line " + std::to_string(line_no) + ": cannot parse '" + c + "'");
      }
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw InvalidArgument("csv line " + std::to_string(line_no) + ": inconsistent column count");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InvalidArgument("csv: no data rows");
  return rows;
}

// First column is time, the rest are path values.
inline PiecewisePath path_from_csv(std::string_view text) {
  const auto rows = parse_csv_numbers(text, nullptr);
  if (rows.front().size() < 2) throw InvalidArgument("path csv: need a time column and at least one value column");
  std::vector<double> times;
  std::vector<double> data;
  for (const auto& r : rows) {
    times.push_back(r[0]);
    data.insert(data.end(), r.begin() + 1, r.end());
  }
  return PiecewisePath(std::move(times), rows.front().size() - 1, std::move(data));
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw IoError("sha256 digest failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

// Manifest written next to the outputs of one run.
struct RunManifest {
  std::string subcommand;
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::uint64_t> seeds;
  std::vector<std::pair<std::string, std::string>> outputs;  // path, sha256

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["subcommand"] = subcommand;
    j["version"] = kVersion;
    j["config"] = config;
    j["seeds"] = seeds;
    nlohmann::json outs = nlohmann::json::array();
    for (const auto& [p, d] : outputs) outs.push_back({{"path", p}, {"sha256", d}});
    j["outputs"] = outs;
    return j;
  }
};

inline std::filesystem::path manifest_path(const std::filesystem::path& output) {
  return output.string() + ".manifest.json";
}

// Writes every output, then one manifest beside each of them.
inline void write_outputs(RunManifest manifest,
                          const std::vector<std::pair<std::filesystem::path, std::string>>& files) {
  for (const auto& [path, content] : files) {
    write_file(path, content);
    manifest.outputs.emplace_back(path.filename().string(), sha256_hex(content));
  }
  const std::string text = dump_json(manifest.to_json()) + "\n";
  for (const auto& [path, content] : files) write_file(manifest_path(path), text);
}

}  // namespace jsq
