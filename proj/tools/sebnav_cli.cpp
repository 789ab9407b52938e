// Command-line front end: closed-loop runs, batch benchmarks, mapping throughput and terrain export.
#include "sebnav/harness.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

using namespace sebnav;

namespace {

std::string default_out_dir() {
  const char* e = std::getenv("SEBNAV_OUT_DIR");
  return e && *e ? e : "out";
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::kIo, "cannot write " + path);
  f << text;
}

// "8x16,12x32": side length in m, then yaw bins
std::vector<ThroughputConfig> parse_sizes(const std::string& s, double res) {
  std::vector<ThroughputConfig> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const auto x = tok.find('x');
    if (x == std::string::npos) throw Error(ErrorCode::kInvalidParameter, "size must look like 12x16: " + tok);
    try {
      out.push_back({std::stod(tok.substr(0, x)), std::stoi(tok.substr(x + 1)), res});
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::kInvalidParameter, "bad size " + tok);
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sebnav: terrain navigation planner and benchmarks"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  std::string out_dir = default_out_dir();
  int threads = 0;
  auto common = [&](CLI::App* c) {
    c->add_option("--seed", seed, "override the seed of the scenario or batch");
    c->add_option("--out-dir", out_dir, "output directory (default $SEBNAV_OUT_DIR or ./out)");
    c->add_option("--threads", threads, "OpenMP threads for mapping and assessment")->check(CLI::NonNegativeNumber);
  };

  std::string scenario_file;
  auto* run = app.add_subcommand("run", "run one scenario in closed loop");
  run->add_option("scenario", scenario_file, "scenario file (JSON with comments)")->required();
  common(run);

  std::string batch_file;
  int trials = 10;
  auto* bench = app.add_subcommand("bench", "sample start/goal pairs on generated terrains and aggregate metrics");
  bench->add_option("batch", batch_file, "batch file")->required();
  bench->add_option("--trials", trials, "pairs per terrain")->check(CLI::NonNegativeNumber);
  common(bench);

  std::string sizes;
  double res = 0.1, budget = 50.0;
  int repeats = 5;
  auto* mapbench = app.add_subcommand("mapbench", "time the mapping pipeline over map sizes");
  mapbench->add_option("--sizes", sizes, "comma list of <side m>x<yaw bins>; default is the 8-18 m x 8-32 sweep");
  mapbench->add_option("--resolution", res, "cell size, m")->check(CLI::PositiveNumber);
  mapbench->add_option("--repeats", repeats, "timed repetitions per size")->check(CLI::PositiveNumber);
  mapbench->add_option("--budget", budget, "per-update budget, ms")->check(CLI::PositiveNumber);
  common(mapbench);

  std::string terrain_scenario;
  auto* exp = app.add_subcommand("export-terrain", "write the ground-truth terrain of a scenario");
  exp->add_option("--scenario", terrain_scenario, "scenario file; defaults apply when omitted");
  common(exp);

  app.add_subcommand("template", "print the default scenario with notes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    set_thread_count(threads);
    if (app.got_subcommand("template")) {
      std::cout << scenario_template();
      return 0;
    }
    std::filesystem::create_directories(out_dir);

    if (run->parsed()) {
      Scenario sc = load_scenario(scenario_file);
      if (seed) sc.seed = *seed;
      const RunResult r = run_scenario(sc, {out_dir, true});
      const auto& m = r.metrics;
      std::cout << run_metrics_header() << "\n" << run_metrics_row(sc.name, m) << "\n";
      std::printf("plans %d  mean t_p %.1f ms  mean mapping %.1f ms\n", m.plans, m.mean_t_p(), m.mean_mapping());
      if (!m.success) std::printf("failed at %s: %s\n", failure_name(m.failure), m.detail.c_str());
      return 0;
    }

    if (bench->parsed()) {
      Batch b = load_batch(batch_file);
      b.base.validate();
      if (seed) b.seed = *seed;
      const BenchResult r = benchmark(b, trials, [](const RunRecord& rec) {
        std::printf("%s pair %d: %s\n", rec.terrain.c_str(), rec.pair,
                    rec.metrics.success ? "ok" : failure_name(rec.metrics.failure));
        std::fflush(stdout);
      });
      write_text(out_dir + "/bench_metrics.csv", bench_metrics_csv(r));
      write_text(out_dir + "/bench_runs.csv", bench_runs_csv(r));
      write_text(out_dir + "/bench_timing.csv", bench_timing_csv(r));
      std::cout << bench_metrics_csv(r);
      std::printf("success %.3f  mean t_p %.1f ms\n", r.success_rate(), r.mean_t_p());
      return 0;
    }

    if (mapbench->parsed()) {
      auto cfgs = sizes.empty() ? default_sweep() : parse_sizes(sizes, res);
      for (auto& c : cfgs) c.resolution = res;
      const auto rows = throughput_bench(cfgs, repeats, budget, seed.value_or(1));
      const std::string csv = throughput_csv(rows);
      write_text(out_dir + "/mapbench.csv", csv);
      std::cout << csv;
      return 0;
    }

    if (exp->parsed()) {
      Scenario sc = terrain_scenario.empty() ? Scenario{} : load_scenario(terrain_scenario);
      if (seed) sc.seed = *seed;
      const HeightField hf = scenario_terrain(sc);
      write_grid_binary(out_dir + "/terrain.grid", hf.to_layers());
      write_grid_csv(out_dir + "/terrain.csv", hf.to_layers());
      std::printf("terrain %d x %d at %.3f m -> %s/terrain.grid\n", hf.nx, hf.ny, hf.resolution, out_dir.c_str());
      return 0;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
