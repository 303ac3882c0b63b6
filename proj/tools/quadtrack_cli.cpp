#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "quadtrack/ablation.hpp"
#include "quadtrack/bench.hpp"
#include "quadtrack/checkpoint.hpp"
#include "quadtrack/config.hpp"
#include "quadtrack/logging.hpp"
#include "quadtrack/ppo.hpp"

namespace fs = std::filesystem;
using namespace quadtrack;

namespace {

// Exit codes: 2 for bad input files or options, 1 for anything else.
constexpr int kExitInput = 2;
constexpr int kExitFailure = 1;

SuiteConfig load_suite(const std::string& spec) {
  if (spec == "default") return default_suite();
  if (spec == "figure_eight") return figure_eight_suite();
  return suite_from_json(read_json_file(spec));
}

int cmd_train(const std::string& config, const fs::path& out, std::optional<int> iterations) {
  RunConfig run = load_run_config(config);
  if (iterations) run.train.iterations = *iterations;
  run.train.validate();
  const TrainResult r = train(run.train, run.env, run.vehicle, out, [](const IterationMetrics& m, const Trainer&) {
    log_info(m.to_json().dump());
  });
  std::cout << "final checkpoint: " << r.final_checkpoint.string() << "\n";
  return 0;
}

int cmd_eval(const fs::path& ckpt_path, const std::string& suite_spec, const std::optional<fs::path>& out,
             std::optional<std::uint64_t> seed) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  SuiteConfig suite = load_suite(suite_spec);
  if (seed) suite.seed = *seed;
  const EvalReport report = run_benchmark(ckpt, suite);
  std::cout << report.table();
  if (out) {
    export_traces(report, *out);
    std::cout << "traces written to " << out->string() << "\n";
  }
  return 0;
}

int cmd_gen_traj(const std::string& kind_name, std::uint64_t seed, fs::path out, double rate, double duration,
                 double period, double speed, int laps) {
  if (!(rate > 0)) throw ConfigError("--rate must be positive");
  const TrajectoryKind kind = trajectory_kind_from_string(kind_name);
  EvalCase c;
  c.kind = kind;
  c.period = period;
  c.laps = laps;
  c.speed = speed;
  c.duration = duration;
  Rng rng = make_rng(seed, 0);
  const ReferenceTrajectory traj = make_case_trajectory(c, rng);

  if (out.empty()) out = std::string(to_string(kind)) + "_" + std::to_string(seed) + ".csv";
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream csv(out);
  if (!csv) throw Error("cannot write " + out.string());
  csv << "t,x,y,z\n";
  const long n = std::lround(traj.duration() * rate);
  for (long i = 0; i <= n; ++i) {
    const double t = std::min(i / rate, traj.duration());
    const Eigen::Vector3d p = traj.position(t);
    char buf[128];
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", t, p.x(), p.y(), p.z());
    csv << buf;
  }
  fs::path sidecar = out;
  sidecar.replace_extension(".json");
  const nlohmann::json meta = {{"kind", std::string(to_string(kind))},
                               {"seed", seed},
                               {"rate_hz", rate},
                               {"duration", traj.duration()},
                               {"max_speed", max_sampled_speed(traj)},
                               {"trajectory", traj.to_json()}};
  std::ofstream(sidecar) << meta.dump(2) << "\n";
  std::cout << out.string() << "\n" << sidecar.string() << "\n";
  return 0;
}

int cmd_ablate(int factor, const std::optional<std::string>& config, const fs::path& out,
               std::optional<int> iterations, int laps) {
  RunConfig base = config ? load_run_config(*config) : RunConfig{};
  if (iterations) base.train.iterations = *iterations;
  const AblationReport report = run_ablation(factor, base, ablation_suite(factor, laps), out);
  std::cout << report.table();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quadrotor trajectory tracking with PPO"};
  app.require_subcommand(1);

  std::string config, suite = "default", kind;
  fs::path out, ckpt, eval_out;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> eval_seed;
  std::optional<int> iterations;
  std::optional<std::string> base_config;
  double rate = 100, duration = 20, period = 5.5, speed = 0.5;
  int laps = 1, factor = 0, ablate_laps = 10;

  auto* train = app.add_subcommand("train", "Train a policy");
  train->add_option("--config", config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out, "Output directory")->required();
  train->add_option("--iterations", iterations, "Override the number of iterations");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a benchmark suite");
  eval->add_option("--ckpt", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--suite", suite, "Suite JSON, or 'default' / 'figure_eight'");
  eval->add_option("--out", eval_out, "Directory for per-trial CSV traces");
  eval->add_option("--seed", eval_seed, "Override the suite seed");

  auto* gen = app.add_subcommand("gen-traj", "Write a reference trajectory as CSV plus a JSON sidecar");
  gen->add_option("--kind", kind, "figure_eight | polynomial | pentagram | zigzag")->required();
  gen->add_option("--seed", seed, "Random seed")->required();
  gen->add_option("--out", out, "CSV path (default <kind>_<seed>.csv)");
  gen->add_option("--rate", rate, "Samples per second");
  gen->add_option("--duration", duration, "Length of random trajectories, s");
  gen->add_option("--period", period, "Figure-eight lap time, s");
  gen->add_option("--laps", laps, "Figure-eight laps");
  gen->add_option("--speed", speed, "Pentagram speed, m/s");

  auto* ablate = app.add_subcommand("ablate", "Train and compare the variants of one design factor");
  ablate->add_option("--factor", factor, "1 inputs, 2 time vector, 3 smoothness, 4 dynamics, 5 batch size")
      ->required()
      ->check(CLI::Range(1, 5));
  ablate->add_option("--config", base_config, "Base run configuration (JSON)")->check(CLI::ExistingFile);
  ablate->add_option("--out", out, "Output directory")->default_val("ablation");
  ablate->add_option("--iterations", iterations, "Override the number of iterations");
  ablate->add_option("--laps", ablate_laps, "Figure-eight laps per evaluation trial");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  try {
    if (*train) return cmd_train(config, out, iterations);
    if (*eval) {
      return cmd_eval(ckpt, suite, eval->count("--out") ? std::optional<fs::path>(eval_out) : std::nullopt, eval_seed);
    }
    if (*gen) return cmd_gen_traj(kind, seed, out, rate, duration, period, speed, laps);
    if (*ablate) return cmd_ablate(factor, base_config, out, iterations, ablate_laps);
  } catch (const ConfigError& e) {
    log_error(std::string("config error: ") + e.what());
    return kExitInput;
  } catch (const FormatError& e) {
    log_error(std::string("format error: ") + e.what());
    return kExitInput;
  } catch (const std::exception& e) {
    log_error(e.what());
    return kExitFailure;
  }
  return kExitFailure;
}
