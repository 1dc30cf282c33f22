#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "jsq/io.hpp"
#include "jsq/parallel.hpp"
#include "jsq/rng.hpp"

namespace fs = std::filesystem;
constexpr double kInf = std::numeric_limits<double>::infinity();
using V = std::vector<double>;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("jsq_io_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Format, SeventeenSignificantDigits) {
  EXPECT_EQ(jsq::format_number(0.1), "0.10000000000000001");
  EXPECT_EQ(jsq::format_number(1.0), "1");
  EXPECT_EQ(jsq::format_number(0.0), "0");
  EXPECT_EQ(jsq::format_number(-0.0), "0");
  EXPECT_EQ(jsq::format_number(-2.5), "-2.5");
  EXPECT_EQ(jsq::format_number(1e-300), "1e-300");
  EXPECT_EQ(jsq::format_number(1.0 / 3), "0.33333333333333331");
  EXPECT_EQ(jsq::format_number(kInf), "inf");
  EXPECT_EQ(jsq::format_number(-kInf), "-inf");
  EXPECT_EQ(jsq::format_number(std::numeric_limits<double>::quiet_NaN()), "nan");
  for (double v : {0.1, 1.0 / 3, 2.0 / 3, 6.02214076e23, 2.2250738585072014e-308}) {
    EXPECT_EQ(std::stod(jsq::format_number(v)), v);
  }
}

TEST(Json, NumbersRoundTripAndNonFiniteBecomeStrings) {
  const nlohmann::json j = {{"third", 1.0 / 3}, {"inf", kInf}, {"n", 7}, {"list", {0.1, -1.5}}};
  const std::string text = jsq::dump_json(j);
  EXPECT_NE(text.find("0.33333333333333331"), std::string::npos);
  EXPECT_NE(text.find("\"inf\""), std::string::npos);
  EXPECT_NE(text.find("0.10000000000000001"), std::string::npos);
  const auto back = nlohmann::json::parse(text);
  EXPECT_EQ(back["third"].get<double>(), 1.0 / 3);
  EXPECT_EQ(back["n"].get<int>(), 7);
  EXPECT_EQ(back["inf"].get<std::string>(), "inf");
  const std::string compact = jsq::dump_json(j, -1);
  EXPECT_EQ(compact.find('\n'), std::string::npos);
  EXPECT_EQ(nlohmann::json::parse(compact), back);
}

TEST(Csv, PathRoundTrip) {
  const jsq::PiecewisePath p({0.0, 0.5, 1.25}, {V{1.0 / 3, 0}, V{0.1, 2}, V{1e-9, 3}});
  const std::string text = jsq::path_csv(p, {"t", "q_1", "q_2"});
  EXPECT_EQ(text.substr(0, text.find('\n')), "t,q_1,q_2");
  EXPECT_EQ(text.find(';'), std::string::npos);
  const auto back = jsq::path_from_csv(text);
  EXPECT_EQ(back.times(), p.times());
  EXPECT_EQ(back.data(), p.data());
}

TEST(Csv, ParsingErrors) {
  EXPECT_THROW(jsq::path_from_csv("t,q\n"), jsq::InvalidArgument);
  EXPECT_THROW(jsq::path_from_csv("t,q\n0,1\n1,x\n"), jsq::InvalidArgument);
  EXPECT_THROW(jsq::path_from_csv("t,q\n0,1\n1,2,3\n"), jsq::InvalidArgument);
  EXPECT_THROW(jsq::path_from_csv("t,q\n1,1\n0,2\n"), jsq::InvalidArgument);
  const auto p = jsq::path_from_csv("# comment\nt,q\r\n0,1\r\n2,3\r\n");
  EXPECT_EQ(p.size(), 2u);
  EXPECT_EQ(p.value(1, 0), 3.0);
  jsq::CsvWriter w({"a", "b"});
  EXPECT_THROW(w.row(V{1}), jsq::InvalidArgument);
}

TEST(Csv, ScaledHeader) {
  const auto h = jsq::scaled_path_header(2, 1);
  EXPECT_EQ(h, (std::vector<std::string>{"t", "Q_1", "Q_2", "A_1", "B_1", "B_2", "D_1", "D_2", "E_1_1", "E_2_1"}));
}

TEST(Hash, Sha256KnownVectors) {
  EXPECT_EQ(jsq::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(jsq::sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Manifest, WrittenBesideEveryOutput) {
  const auto dir = scratch("manifest");
  jsq::RunManifest m;
  m.subcommand = "demo";
  m.config = {{"x", 0.1}};
  m.seeds = {5};
  jsq::write_outputs(m, {{dir / "a.csv", "t,q\n0,1\n"}, {dir / "sub" / "b.json", "{}\n"}});
  for (const auto* name : {"a.csv", "sub/b.json"}) {
    const auto mp = jsq::manifest_path(dir / name);
    ASSERT_TRUE(fs::exists(mp)) << mp;
    const auto j = nlohmann::json::parse(jsq::read_file(mp));
    EXPECT_EQ(j["subcommand"], "demo");
    EXPECT_EQ(j["version"], jsq::kVersion);
    EXPECT_EQ(j["seeds"][0], 5);
    ASSERT_EQ(j["outputs"].size(), 2u);
    EXPECT_EQ(j["outputs"][0]["sha256"], jsq::sha256_hex("t,q\n0,1\n"));
    EXPECT_EQ(j["outputs"][1]["path"], "b.json");
  }
  EXPECT_EQ(jsq::read_file(dir / "a.csv"), "t,q\n0,1\n");
  EXPECT_THROW(jsq::read_file(dir / "missing"), jsq::IoError);
}

TEST(Rng, StreamsAreReproducibleAndDistinct) {
  jsq::ClockStream a(1, 2, 3), b(1, 2, 3), c(1, 2, 4), d(1, 3, 3);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next();
    EXPECT_EQ(x, b.next());
    EXPECT_NE(x, c.next());
    EXPECT_NE(x, d.next());
  }
  jsq::ClockStream e(9, 0, 0);
  double sum = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = e.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += e.exponential(2.0);
  }
  EXPECT_NEAR(sum / n, 0.5, 4 * 0.5 / std::sqrt(n));
  for (int i = 0; i < 1000; ++i) EXPECT_LT(e.below(3), 3u);
}

TEST(Parallel, JobsResolution) {
  ::setenv("JSQ_JOBS", "3", 1);
  EXPECT_EQ(jsq::resolve_jobs(0), 3u);
  EXPECT_EQ(jsq::resolve_jobs(2), 2u);
  ::setenv("JSQ_JOBS", "zero", 1);
  EXPECT_THROW(jsq::resolve_jobs(0), jsq::InvalidArgument);
  ::unsetenv("JSQ_JOBS");
  EXPECT_GE(jsq::resolve_jobs(0), 1u);
}

TEST(Parallel, ForCoversEveryIndexAndRethrows) {
  for (unsigned jobs : {1u, 4u}) {
    std::vector<int> hit(1000, 0);
    jsq::parallel_for(hit.size(), jobs, [&](std::size_t i) { hit[i] += 1; });
    EXPECT_EQ(std::count(hit.begin(), hit.end(), 1), 1000);
    EXPECT_THROW(jsq::parallel_for(10, jobs,
                                   [](std::size_t i) {
                                     if (i == 7) throw std::runtime_error("boom");
                                   }),
                 std::runtime_error);
  }
}
