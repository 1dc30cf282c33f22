#pragma once

// `jsq` command line: simulate, rate, fluid, action, optimize, verify,
// acceptance. Options may also come from a TOML/INI file given with
// --config (one section per subcommand); flags override it.
//
// Exit codes: 0 success, 2 usage/config/topology errors, 3 verify
// precondition, 1 anything else. Errors are one JSON object on stderr.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "jsq/acceptance.hpp"
#include "jsq/cost.hpp"
#include "jsq/errors.hpp"
#include "jsq/fluid.hpp"
#include "jsq/io.hpp"
#include "jsq/ldp.hpp"
#include "jsq/parallel.hpp"
#include "jsq/rate.hpp"
#include "jsq/sim.hpp"
#include "jsq/topology.hpp"

namespace jsq::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitPrecondition = 3;

// "1,2.5" or "1 2.5"; `expected` of 0 accepts any length.
inline std::vector<double> parse_vector(const std::string& text, std::size_t expected, const std::string& what) {
  std::vector<double> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && (text[i] == ',' || text[i] == ' ' || text[i] == '\t')) ++i;
    if (i == text.size()) break;
    std::size_t j = i;
    while (j < text.size() && text[j] != ',' && text[j] != ' ' && text[j] != '\t') ++j;
    double v = 0;
    const auto r = std::from_chars(text.data() + i, text.data() + j, v);
    if (r.ec != std::errc() || r.ptr != text.data() + j || !std::isfinite(v)) {
      throw InvalidArgument(what + ": cannot parse '" + text.substr(i, j - i) + "'");
    }
    out.push_back(v);
    i = j;
  }
  if (expected && out.size() != expected) {
    throw InvalidArgument(what + ": expected " + std::to_string(expected) + " values, got " + std::to_string(out.size()));
  }
  return out;
}

// Positive integer counts; accepts "1e6".
inline std::vector<std::uint64_t> parse_counts(const std::string& text, const std::string& what) {
  std::vector<std::uint64_t> out;
  for (double v : parse_vector(text, 0, what)) {
    if (!(v >= 1) || v != std::floor(v) || v > 1e15) throw InvalidArgument(what + ": values must be positive integers");
    out.push_back(static_cast<std::uint64_t>(v));
  }
  if (out.empty()) throw InvalidArgument(what + ": at least one value required");
  return out;
}

inline nlohmann::json label_json(const DomainLabel& label) {
  nlohmann::json I = nlohmann::json::array();
  for (std::size_t k : label.zero_set) I.push_back(k + 1);
  nlohmann::json J = nlohmann::json::array();
  for (const auto& Jm : label.argmin_sets) {
    nlohmann::json s = nlohmann::json::array();
    for (std::size_t k : Jm) s.push_back(k + 1);
    J.push_back(s);
  }
  return {{"I", I}, {"J", J}};
}

inline nlohmann::json witness_json(const RateWitness& w, std::size_t K, std::size_t M) {
  nlohmann::json j;
  j["L"] = w.value;
  j["label"] = label_json(w.label);
  if (w.finite()) {
    nlohmann::json e = nlohmann::json::array();
    for (std::size_t k = 0; k < K; ++k) e.push_back(json_vector(std::span<const double>(w.e.data() + k * M, M)));
    j["witness"] = {{"a", json_vector(w.a)}, {"b", json_vector(w.b)}, {"e", e}, {"d", json_vector(w.d)}};
    j["solver"] = {{"gap", w.gap}, {"kkt_residual", w.kkt_residual}, {"iterations", w.iterations}};
  } else if (w.certificate) {
    j["certificate"] = {{"server", w.certificate->server + 1}, {"farkas", json_vector(w.certificate->farkas)}};
  }
  return j;
}

inline std::vector<std::pair<std::filesystem::path, std::string>> single_output(const std::string& path,
                                                                                std::string content) {
  return {{std::filesystem::path(path), std::move(content)}};
}

struct Io {
  std::ostream& out;
  std::ostream& err;
};

inline void emit_error(std::ostream& err, const std::string& kind, const std::string& message, int code) {
  nlohmann::json j = {{"error", {{"kind", kind}, {"message", message}, {"exit_code", code}}}};
  err << dump_json(j, -1) << std::endl;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"JSQ network toolkit: simulation, local rate function, fluid model, path action, rare events",
               "jsq"};
  app.set_config("--config", "", "TOML/INI file with one section per subcommand");
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();
  int jobs_flag = 0;
  app.add_option("--jobs", jobs_flag, "Worker threads (0: $JSQ_JOBS or hardware concurrency)")
      ->check(CLI::NonNegativeNumber);

  std::string topology_file;
  auto add_topology = [&](CLI::App* sub) {
    sub->add_option("--topology", topology_file, "Topology JSON file")->required();
  };
  std::function<int(Io)> action_fn;

  // simulate
  auto* sim = app.add_subcommand("simulate", "Simulate the n-th system and write the scaled path as CSV");
  add_topology(sim);
  std::uint64_t sim_n = 1000, sim_seed = 0, sim_rep = 0;
  double sim_T = 1, sim_grid = 1e-3;
  std::string sim_tie = "lowest", sim_q0, sim_out, sim_events;
  sim->add_option("--n", sim_n, "Scale n")->check(CLI::PositiveNumber);
  sim->add_option("--T", sim_T, "Scaled horizon");
  sim->add_option("--seed", sim_seed, "Seed");
  sim->add_option("--replication", sim_rep, "Replication index within the seed");
  sim->add_option("--tie", sim_tie, "Tie rule: lowest or random");
  sim->add_option("--q0", sim_q0, "Scaled initial queues (default 0)");
  sim->add_option("--out", sim_out, "Output CSV")->required();
  sim->add_option("--grid", sim_grid, "Output grid step in scaled time");
  sim->add_option("--events", sim_events, "Also write every event (unscaled) to this CSV");
  sim->callback([&] {
    action_fn = [&](Io io) {
      const Topology topo = load_topology(topology_file);
      SimulationParams p;
      p.n = sim_n;
      p.T = sim_T;
      p.seed = sim_seed;
      p.tie = parse_tie_rule(sim_tie);
      p.q0_scaled = sim_q0.empty() ? std::vector<double>(topo.servers(), 0.0)
                                   : parse_vector(sim_q0, topo.servers(), "--q0");
      const SamplePath path = simulate(topo, p, sim_rep);
      if (auto v = audit_path(path, topo)) throw std::logic_error("simulated path failed its audit: " + *v);
      const PiecewisePath scaled = scale_path(path, sim_grid);
      auto files = single_output(sim_out, path_csv(scaled, scaled_path_header(topo.servers(), topo.streams())));
      if (!sim_events.empty()) files.emplace_back(sim_events, events_csv(path));
      RunManifest m;
      m.subcommand = "simulate";
      m.config = {{"topology", to_json(topo)}, {"n", sim_n}, {"T", sim_T}, {"seed", sim_seed},
                  {"replication", sim_rep}, {"tie", to_string(p.tie)}, {"q0", json_vector(p.q0_scaled)},
                  {"grid", sim_grid}};
      m.seeds = {sim_seed};
      write_outputs(m, files);
      io.out << dump_json({{"events", path.events()}, {"rows", scaled.size()}, {"audit", "ok"}, {"out", sim_out}})
             << std::endl;
      return kExitOk;
    };
  });

  // rate
  auto* rate = app.add_subcommand("rate", "Evaluate the local rate function L(x, y)");
  add_topology(rate);
  std::string rate_x, rate_y, rate_out;
  double rate_tol = 1e-8, oracle_step = 1e-3, oracle_radius = 5;
  bool rate_oracle = false;
  rate->add_option("--x", rate_x, "Queue state x")->required();
  rate->add_option("--y", rate_y, "Velocity y")->required();
  rate->add_option("--tol", rate_tol, "Solver tolerance");
  rate->add_flag("--oracle", rate_oracle, "Also run the grid-search oracle");
  rate->add_option("--oracle-step", oracle_step, "Oracle grid step");
  rate->add_option("--oracle-radius", oracle_radius, "Oracle box radius around nominal rates");
  rate->add_option("--out", rate_out, "Also write the JSON report here");
  rate->callback([&] {
    action_fn = [&](Io io) {
      const Topology topo = load_topology(topology_file);
      const PoissonCost cost(topo);
      const auto x = parse_vector(rate_x, topo.servers(), "--x");
      const auto y = parse_vector(rate_y, topo.servers(), "--y");
      const auto w = local_rate(x, y, topo, cost, rate_tol);
      nlohmann::json j = witness_json(w, topo.servers(), topo.streams());
      j["x"] = json_vector(x);
      j["y"] = json_vector(y);
      if (rate_oracle) j["oracle"] = local_rate_bruteforce(x, y, topo, cost, oracle_step, oracle_radius);
      const std::string text = dump_json(j) + "\n";
      if (!rate_out.empty()) {
        RunManifest m;
        m.subcommand = "rate";
        m.config = {{"topology", to_json(topo)}, {"x", json_vector(x)}, {"y", json_vector(y)}, {"tol", rate_tol},
                    {"oracle", rate_oracle}, {"oracle_step", oracle_step}, {"oracle_radius", oracle_radius}};
        write_outputs(m, single_output(rate_out, text));
      }
      io.out << text;
      return kExitOk;
    };
  });

  // fluid
  auto* fluid = app.add_subcommand("fluid", "Solve the fluid model forward in time");
  fluid->set_help_flag("--help", "Print this help message and exit");  // frees -h for the step size
  add_topology(fluid);
  std::string fluid_q0, fluid_inputs, fluid_out;
  double fluid_T = 10, fluid_h = 1e-3;
  bool fluid_resolve = false;
  fluid->add_option("--q0", fluid_q0, "Initial queue contents (default 0)");
  fluid->add_option("--inputs", fluid_inputs,
                    "CSV of cumulative inputs: t, a_1..a_M, b_1..b_K (default: nominal a = lambda t, b = mu t)");
  fluid->add_option("--T", fluid_T, "Horizon");
  fluid->add_option("--h", fluid_h, "Step");
  fluid->add_flag("--resolve-switches", fluid_resolve, "Insert breakpoints at routing-regime changes");
  fluid->add_option("--out", fluid_out, "Output CSV")->required();
  fluid->callback([&] {
    action_fn = [&](Io io) {
      const Topology topo = load_topology(topology_file);
      const std::size_t K = topo.servers(), M = topo.streams();
      const auto q0 = fluid_q0.empty() ? std::vector<double>(K, 0.0) : parse_vector(fluid_q0, K, "--q0");
      PiecewisePath a, b;
      if (fluid_inputs.empty()) {
        a = PiecewisePath::linear(topo.lambdas(), fluid_T);
        b = PiecewisePath::linear(topo.mus(), fluid_T);
      } else {
        const PiecewisePath ab = path_from_csv(read_file(fluid_inputs));
        if (ab.dim() != M + K) throw InvalidArgument("--inputs: expected M + K value columns");
        std::vector<double> ad, bd;
        for (std::size_t i = 0; i < ab.size(); ++i) {
          for (std::size_t c = 0; c < M; ++c) ad.push_back(ab.value(i, c));
          for (std::size_t c = 0; c < K; ++c) bd.push_back(ab.value(i, M + c));
        }
        a = PiecewisePath(ab.times(), M, std::move(ad));
        b = PiecewisePath(ab.times(), K, std::move(bd));
      }
      const auto sol = fluid_solve(q0, a, b, fluid_T, fluid_h, topo, {fluid_resolve});
      std::vector<std::string> header{"t"};
      for (std::size_t k = 1; k <= K; ++k) header.push_back("q_" + std::to_string(k));
      for (std::size_t k = 1; k <= K; ++k) header.push_back("d_" + std::to_string(k));
      for (std::size_t k = 1; k <= K; ++k) {
        for (std::size_t m = 1; m <= M; ++m) header.push_back("e_" + std::to_string(k) + "_" + std::to_string(m));
      }
      CsvWriter csv(header);
      std::vector<double> row;
      for (std::size_t i = 0; i < sol.q.size(); ++i) {
        row.assign(1, sol.q.time(i));
        for (double v : sol.q.value(i)) row.push_back(v);
        for (double v : sol.d.value(i)) row.push_back(v);
        for (double v : sol.e.value(i)) row.push_back(v);
        csv.row(row);
      }
      RunManifest m;
      m.subcommand = "fluid";
      m.config = {{"topology", to_json(topo)}, {"q0", json_vector(q0)}, {"T", fluid_T}, {"h", fluid_h},
                  {"resolve_switches", fluid_resolve}};
      if (fluid_inputs.empty()) {
        m.config["inputs"] = "nominal";
      } else {
        m.config["inputs"] = {{"file", fluid_inputs}, {"sha256", sha256_hex(read_file(fluid_inputs))}};
      }
      write_outputs(m, single_output(fluid_out, csv.str()));
      io.out << dump_json({{"breakpoints", sol.q.size()}, {"out", fluid_out}}) << std::endl;
      return kExitOk;
    };
  });

  // action
  auto* act = app.add_subcommand("action", "Evaluate the action of a piecewise-linear queue path");
  add_topology(act);
  std::string act_path, act_q0, act_out;
  double act_tol = 1e-8;
  act->add_option("--path", act_path, "CSV: t, q_1..q_K")->required();
  act->add_option("--tol", act_tol, "Solver tolerance");
  act->add_option("--q0", act_q0, "Pin the initial state (initial cost 0 there, +inf elsewhere); default: 0 everywhere");
  act->add_option("--out", act_out, "Also write the JSON report here");
  act->callback([&] {
    action_fn = [&](Io io) {
      const Topology topo = load_topology(topology_file);
      const PoissonCost cost(topo);
      const std::string text = read_file(act_path);
      const PiecewisePath q = path_from_csv(text);
      const InitialCost i0 =
          act_q0.empty() ? zero_initial_cost() : pinned_initial_cost(parse_vector(act_q0, topo.servers(), "--q0"));
      const auto rep = path_action(q, topo, cost, i0, act_tol);
      nlohmann::json pieces = nlohmann::json::array();
      for (const auto& p : rep.pieces) {
        pieces.push_back({{"t0", p.t0}, {"t1", p.t1}, {"velocity", json_vector(p.velocity)}, {"L", p.witness.value},
                          {"cost", p.cost}, {"label", label_json(p.witness.label)}});
      }
      nlohmann::json j = {{"total", rep.total},       {"initial", rep.initial},
                          {"running", rep.running},   {"nonnegative", rep.nonnegative},
                          {"tail_closable", rep.tail_closable}, {"pieces", pieces}};
      const std::string out_text = dump_json(j) + "\n";
      if (!act_out.empty()) {
        RunManifest m;
        m.subcommand = "action";
        m.config = {{"topology", to_json(topo)}, {"path", {{"file", act_path}, {"sha256", sha256_hex(text)}}},
                    {"tol", act_tol}, {"q0", act_q0}};
        write_outputs(m, single_output(act_out, out_text));
      }
      io.out << out_text;
      return kExitOk;
    };
  });

  // optimize
  auto* opt = app.add_subcommand("optimize", "Least action over piecewise-linear paths into a terminal event");
  add_topology(opt);
  std::string opt_event, opt_out;
  std::size_t opt_segments = 1, opt_starts = 8;
  std::uint64_t opt_seed = 1;
  double opt_tol = 1e-8;
  opt->add_option("--event", opt_event, "e.g. terminal:k=1,c=1,T=1[,q0=0;0]")->required();
  opt->add_option("--segments", opt_segments, "Number of linear segments B")->check(CLI::PositiveNumber);
  opt->add_option("--starts", opt_starts, "Multistart count")->check(CLI::PositiveNumber);
  opt->add_option("--seed", opt_seed, "Seed for the random starts");
  opt->add_option("--tol", opt_tol, "Solver tolerance for L");
  opt->add_option("--out", opt_out, "Prefix for <prefix>.json and <prefix>.csv");
  opt->callback([&] {
    action_fn = [&](Io io) {
      const Topology topo = load_topology(topology_file);
      const PoissonCost cost(topo);
      const auto event = parse_event(opt_event, topo);
      SearchOptions so;
      so.starts = opt_starts;
      so.seed = opt_seed;
      so.rate_tol = opt_tol;
      so.jobs = resolve_jobs(jobs_flag);
      const auto best = minimize_action(event, topo, cost, opt_segments, so);
      nlohmann::json pts = nlohmann::json::array();
      for (std::size_t i = 0; i < best.path.size(); ++i) {
        pts.push_back({{"t", best.path.time(i)}, {"q", json_vector(best.path.value(i))}});
      }
      nlohmann::json j = {{"event", to_string(event)}, {"segments", opt_segments}, {"value", best.value},
                          {"evaluations", best.evaluations}, {"tail_closable", best.report.tail_closable},
                          {"path", pts}};
      const std::string text = dump_json(j) + "\n";
      if (!opt_out.empty()) {
        std::vector<std::string> header{"t"};
        for (std::size_t k = 1; k <= topo.servers(); ++k) header.push_back("q_" + std::to_string(k));
        RunManifest m;
        m.subcommand = "optimize";
        m.config = {{"topology", to_json(topo)}, {"event", to_string(event)}, {"segments", opt_segments},
                    {"starts", opt_starts}, {"seed", opt_seed}, {"tol", opt_tol}};
        m.seeds = {opt_seed};
        write_outputs(m, {{opt_out + ".json", text}, {opt_out + ".csv", path_csv(best.path, header)}});
      }
      io.out << text;
      return kExitOk;
    };
  });

  // verify
  auto* ver = app.add_subcommand("verify", "Monte Carlo rare-event rates against the least action");
  add_topology(ver);
  std::string ver_event, ver_scales = "10,20,40", ver_reps = "1e6", ver_tie = "lowest", ver_out;
  std::uint64_t ver_seed = 7;
  std::size_t ver_segments = 2;
  ver->add_option("--event", ver_event, "e.g. terminal:k=1,c=1,T=1 or max:k=1,c=1,T=1")->required();
  ver->add_option("--scales", ver_scales, "Comma-separated scales n");
  ver->add_option("--reps", ver_reps, "Replications: one count, or one per scale");
  ver->add_option("--seed", ver_seed, "Seed");
  ver->add_option("--tie", ver_tie, "Tie rule: lowest or random");
  ver->add_option("--segments", ver_segments, "Segments for the least-action search")->check(CLI::PositiveNumber);
  ver->add_option("--out", ver_out, "Prefix for <prefix>.json, <prefix>.csv and <prefix>_plot.csv");
  ver->callback([&] {
    action_fn = [&](Io io) {
      const Topology topo = load_topology(topology_file);
      const PoissonCost cost(topo);
      const auto event = parse_event(ver_event, topo);
      const auto scales = parse_counts(ver_scales, "--scales");
      const auto reps = parse_counts(ver_reps, "--reps");
      if (reps.size() != 1 && reps.size() != scales.size()) {
        throw InvalidArgument("--reps: give one count or one per scale");
      }
      std::size_t smallest = 0;
      for (std::size_t i = 1; i < scales.size(); ++i) {
        if (scales[i] < scales[smallest]) smallest = i;
      }
      const std::uint64_t reps_small = reps.size() == 1 ? reps[0] : reps[smallest];
      double pilot_rate = 0;
      const double expected = expected_hits(event, topo, cost, scales[smallest], reps_small, &pilot_rate);
      if (!(expected >= 10)) {
        throw PreconditionError("precondition failed: expected hits at n=" + std::to_string(scales[smallest]) +
                                " is " + format_number(expected) + " < 10; increase --reps");
      }
      const unsigned jobs = resolve_jobs(jobs_flag);
      const auto est = estimate_rare_event(event, topo, scales, reps, ver_seed, parse_tie_rule(ver_tie), jobs);
      double I = kInfinity;
      if (event.type == EventType::terminal) {
        SearchOptions so;
        so.jobs = jobs;
        I = minimize_action(event, topo, cost, ver_segments, so).value;
      }
      CsvWriter table({"n", "reps", "hits", "p_hat", "ci_lo", "ci_hi", "rate", "rate_lo", "rate_hi"});
      CsvWriter plot({"inv_n", "rate", "rate_lo", "rate_hi"});
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& s : est.scales) {
        table.row(std::vector<double>{static_cast<double>(s.n), static_cast<double>(s.reps),
                                      static_cast<double>(s.hits), s.p_hat, s.ci_lo, s.ci_hi, s.rate, s.rate_lo,
                                      s.rate_hi});
        plot.row(std::vector<double>{1.0 / static_cast<double>(s.n), s.rate, s.rate_lo, s.rate_hi});
        rows.push_back({{"n", s.n}, {"reps", s.reps}, {"hits", s.hits}, {"p_hat", s.p_hat}, {"ci", {s.ci_lo, s.ci_hi}},
                        {"one_sided", s.one_sided}, {"rate", s.rate}, {"rate_ci", {s.rate_lo, s.rate_hi}}});
      }
      nlohmann::json j = {{"event", to_string(event)}, {"scales", rows}, {"expected_hits_smallest_n", expected}};
      if (est.fit) {
        j["fit"] = {{"I", est.fit->I}, {"c", est.fit->c}, {"points", est.fit->points}};
      } else {
        j["fit"] = nullptr;
      }
      if (event.type == EventType::terminal) {
        j["least_action"] = I;
        if (est.fit) j["relative_difference"] = std::abs(est.fit->I - I) / I;
      }
      const std::string text = dump_json(j) + "\n";
      if (!ver_out.empty()) {
        RunManifest m;
        m.subcommand = "verify";
        m.config = {{"topology", to_json(topo)}, {"event", to_string(event)}, {"scales", scales},
                    {"reps", reps}, {"seed", ver_seed}, {"tie", ver_tie}, {"segments", ver_segments}};
        m.seeds = {ver_seed};
        write_outputs(m, {{ver_out + ".json", text}, {ver_out + ".csv", table.str()},
                          {ver_out + "_plot.csv", plot.str()}});
      }
      io.out << text;
      return kExitOk;
    };
  });

  // acceptance
  auto* acc = app.add_subcommand("acceptance", "Run the acceptance criteria");
  std::string acc_only;
  acc->add_option("--only", acc_only, "Criterion number (1-10) or group: rate, fluid, sim, ldp, cost");
  acc->callback([&] {
    action_fn = [&](Io io) {
      acceptance::Context ctx;
      ctx.jobs = resolve_jobs(jobs_flag);
      return acceptance::run_suite(acc_only, ctx, io.out) ? kExitOk : kExitFailure;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    emit_error(err, "usage", e.what(), kExitUsage);
    return kExitUsage;
  } catch (const std::exception& e) {
    emit_error(err, "invalid_argument", e.what(), kExitUsage);
    return kExitUsage;
  }

  try {
    return action_fn(Io{out, err});
  } catch (const InvalidTopology& e) {
    emit_error(err, "topology", e.what(), kExitUsage);
    return kExitUsage;
  } catch (const InvalidArgument& e) {
    emit_error(err, "invalid_argument", e.what(), kExitUsage);
    return kExitUsage;
  } catch (const PreconditionError& e) {
    emit_error(err, "precondition", e.what(), kExitPrecondition);
    return kExitPrecondition;
  } catch (const SolverError& e) {
    emit_error(err, "solver", e.what(), kExitFailure);
    return kExitFailure;
  } catch (const IoError& e) {
    emit_error(err, "io", e.what(), kExitFailure);
    return kExitFailure;
  } catch (const std::exception& e) {
    emit_error(err, "internal", e.what(), kExitFailure);
    return kExitFailure;
  }
}

}  // namespace jsq::cli
