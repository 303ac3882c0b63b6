#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "quadtrack/checkpoint.hpp"
#include "quadtrack/env.hpp"
#include "quadtrack/policy.hpp"
#include "quadtrack/trajectory.hpp"

namespace quadtrack {

inline constexpr double kCrashed = std::numeric_limits<double>::infinity();

/// Mean planar (x, y) distance between two T x 3 traces; z is ignored.
double med(const Eigen::MatrixXd& actual, const Eigen::MatrixXd& reference);

/// One benchmark column. `trajectories * repeats` trials are flown; the
/// deterministic families use a single trajectory.
struct EvalCase {
  std::string name;
  TrajectoryKind kind = TrajectoryKind::FigureEight;
  double period = 5.5;     // figure-eight lap time, s
  int laps = 10;
  double speed = 0.5;      // pentagram, m/s
  double duration = 20.0;  // polynomial / zigzag, s
  int trajectories = 1;
  int repeats = 3;

  int trials() const { return trajectories * repeats; }
};

struct SuiteConfig {
  std::vector<EvalCase> cases;
  std::uint64_t seed = 0;
  bool stochastic = false;  // sample actions instead of using the mean
  bool perturb_start = true;
};

/// Seven columns: figure-eight slow/normal/fast, polynomial, pentagram
/// slow/fast, zigzag with 3, 3, 3, 10, 3, 3, 10 trials.
SuiteConfig default_suite();
/// Only the figure-eight columns (used by the ablations).
SuiteConfig figure_eight_suite(int laps = 10);
SuiteConfig suite_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SuiteConfig& s);

ReferenceTrajectory make_case_trajectory(const EvalCase& c, Rng& rng);

/// Trace columns: t, x, y, z, x_ref, y_ref, z_ref, accel, p, q, r.
inline constexpr int kTraceColumns = 11;

struct TrialResult {
  bool crashed = false;
  double med = kCrashed;
  double mean_action_diff = 0;  // mean |u_t - u_{t-1}| in normalized units
  Eigen::MatrixXd trace;        // steps x kTraceColumns
};

struct CaseResult {
  std::string name;
  std::vector<TrialResult> trials;
  double med_mean = kCrashed;  // over completed trials
  double med_std = 0;
  int crashes = 0;
};

struct EvalReport {
  std::vector<CaseResult> cases;
  nlohmann::json fingerprint = nlohmann::json::object();

  /// Summary without traces; crashed entries are written as "inf".
  nlohmann::json to_json() const;
  /// "mean (std)" per case, or "inf" when every trial crashed.
  std::string table() const;
  double mean_action_diff() const;
};

/// Fly one trial on `traj` with the given plant. The controller and the
/// policy inputs come from `env_cfg`.
TrialResult run_trial(const ActorCritic<float>& net, const EnvConfig& env_cfg, const Params& plant,
                      const ReferenceTrajectory& traj, std::uint64_t seed, bool stochastic, bool perturb_start);

EvalReport run_benchmark(const ActorCritic<float>& net, const EnvConfig& env_cfg, const Params& plant,
                         const SuiteConfig& suite);
/// Environment and vehicle are taken from the checkpoint's run snapshot.
EvalReport run_benchmark(const Checkpoint& ckpt, const SuiteConfig& suite);

void write_trace_csv(const Eigen::MatrixXd& trace, const std::filesystem::path& path);
Eigen::MatrixXd read_trace_csv(const std::filesystem::path& path);
/// One CSV per trial plus summary.json in `dir`.
void export_traces(const EvalReport& report, const std::filesystem::path& dir);

}  // namespace quadtrack
