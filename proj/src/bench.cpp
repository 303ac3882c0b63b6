#include "quadtrack/bench.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "quadtrack/config.hpp"

namespace quadtrack {

namespace {

nlohmann::json finite_or_inf(double x) {
  if (std::isinf(x)) return "inf";
  return x;
}

std::string format_med(double mean, double stddev) {
  if (std::isinf(mean)) return "inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f (%.3f)", mean, stddev);
  return buf;
}

EvalCase figure_eight_case(const std::string& name, double period, int laps) {
  EvalCase c;
  c.name = name;
  c.kind = TrajectoryKind::FigureEight;
  c.period = period;
  c.laps = laps;
  c.trajectories = 1;
  c.repeats = 3;
  return c;
}

}  // namespace

double med(const Eigen::MatrixXd& actual, const Eigen::MatrixXd& reference) {
  if (actual.cols() != 3 || reference.cols() != 3) throw ShapeError("traces must have 3 columns");
  if (actual.rows() != reference.rows()) throw ShapeError("trace lengths differ");
  if (actual.rows() < 1) throw ShapeError("empty trace");
  return (actual.leftCols<2>() - reference.leftCols<2>()).rowwise().norm().mean();
}

SuiteConfig figure_eight_suite(int laps) {
  SuiteConfig s;
  s.cases = {figure_eight_case("figure_eight_slow", 15.0, laps), figure_eight_case("figure_eight_normal", 5.5, laps),
             figure_eight_case("figure_eight_fast", 3.5, laps)};
  return s;
}

SuiteConfig default_suite() {
  SuiteConfig s = figure_eight_suite(10);
  EvalCase poly;
  poly.name = "polynomial";
  poly.kind = TrajectoryKind::Polynomial;
  poly.trajectories = 5;
  poly.repeats = 2;
  s.cases.push_back(poly);
  for (auto [name, speed] : {std::pair{"pentagram_slow", 0.5}, std::pair{"pentagram_fast", 1.0}}) {
    EvalCase p;
    p.name = name;
    p.kind = TrajectoryKind::Pentagram;
    p.speed = speed;
    p.trajectories = 1;
    p.repeats = 3;
    s.cases.push_back(p);
  }
  EvalCase zz = poly;
  zz.name = "zigzag";
  zz.kind = TrajectoryKind::Zigzag;
  s.cases.push_back(zz);
  return s;
}

nlohmann::json to_json(const SuiteConfig& s) {
  nlohmann::json cases = nlohmann::json::array();
  for (const auto& c : s.cases) {
    cases.push_back({{"name", c.name},
                     {"kind", std::string(to_string(c.kind))},
                     {"period", c.period},
                     {"laps", c.laps},
                     {"speed", c.speed},
                     {"duration", c.duration},
                     {"trajectories", c.trajectories},
                     {"repeats", c.repeats}});
  }
  return {{"seed", s.seed}, {"stochastic", s.stochastic}, {"perturb_start", s.perturb_start}, {"cases", cases}};
}

SuiteConfig suite_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("suite: expected an object");
  static const std::set<std::string> top = {"preset", "seed", "stochastic", "perturb_start", "cases", "laps"};
  static const std::set<std::string> per_case = {"name",     "kind",         "period", "laps", "speed",
                                                 "duration", "trajectories", "repeats"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!top.count(it.key())) throw ConfigError("suite: unknown key '" + it.key() + "'");
  }
  try {
    SuiteConfig s;
    const std::string preset = j.value("preset", std::string(j.contains("cases") ? "none" : "default"));
    const int laps = j.value("laps", 10);
    if (preset == "default") {
      s = default_suite();
      for (auto& c : s.cases) {
        if (c.kind == TrajectoryKind::FigureEight) c.laps = laps;
      }
    } else if (preset == "figure_eight") {
      s = figure_eight_suite(laps);
    } else if (preset != "none") {
      throw ConfigError("suite: unknown preset " + preset);
    }
    s.seed = j.value("seed", s.seed);
    s.stochastic = j.value("stochastic", s.stochastic);
    s.perturb_start = j.value("perturb_start", s.perturb_start);
    if (j.contains("cases")) {
      for (const auto& cj : j.at("cases")) {
        for (auto it = cj.begin(); it != cj.end(); ++it) {
          if (!per_case.count(it.key())) throw ConfigError("suite case: unknown key '" + it.key() + "'");
        }
        EvalCase c;
        c.name = cj.at("name").get<std::string>();
        c.kind = trajectory_kind_from_string(cj.at("kind").get<std::string>());
        c.period = cj.value("period", c.period);
        c.laps = cj.value("laps", c.laps);
        c.speed = cj.value("speed", c.speed);
        c.duration = cj.value("duration", c.duration);
        c.trajectories = cj.value("trajectories", c.trajectories);
        c.repeats = cj.value("repeats", c.repeats);
        if (c.trajectories < 1 || c.repeats < 1 || c.laps < 1) throw ConfigError("suite case counts must be >= 1");
        s.cases.push_back(c);
      }
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("suite: ") + e.what());
  }
}

ReferenceTrajectory make_case_trajectory(const EvalCase& c, Rng& rng) {
  switch (c.kind) {
    case TrajectoryKind::FigureEight: return figure_eight(c.period, c.laps);
    case TrajectoryKind::Pentagram: return pentagram(c.speed);
    case TrajectoryKind::Polynomial: return random_polynomial(rng, c.duration);
    case TrajectoryKind::Zigzag: return zigzag(rng, c.duration);
  }
  throw ConfigError("unknown trajectory kind");
}

TrialResult run_trial(const ActorCritic<float>& net, const EnvConfig& env_cfg, const Params& plant,
                      const ReferenceTrajectory& traj, std::uint64_t seed, bool stochastic, bool perturb_start) {
  QuadrotorEnv env(env_cfg, plant, seed);
  env.reset_with(traj, plant, perturb_start);
  Rng noise = make_rng(seed, 7);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::VectorXf stddev = net.policy.log_std().array().exp();

  const int steps = static_cast<int>(std::llround(traj.duration() / env_cfg.dt));
  TrialResult out;
  out.trace.resize(std::max(steps, 0), kTraceColumns);
  int rows = 0;
  double diff_sum = 0;
  Eigen::Vector4d prev = Eigen::Vector4d::Zero();
  for (;;) {
    const Observation obs = env.observe();
    Eigen::Vector4d a = net.act(obs.actor.cast<float>()).col(0).cast<double>();
    if (stochastic) {
      for (int i = 0; i < 4; ++i) a[i] += stddev[i] * normal(noise);
    }
    const StepResult r = env.step(a);
    const Eigen::Vector4d u = normalized_command(r.command, env_cfg.bounds);
    if (rows > 0) diff_sum += (u - prev).norm();
    prev = u;
    if (rows >= out.trace.rows()) out.trace.conservativeResize(rows + 1, kTraceColumns);
    out.trace(rows, 0) = env.time();
    out.trace.block<1, 3>(rows, 1) = env.state().position.transpose();
    out.trace.block<1, 3>(rows, 4) = env.reference().transpose();
    out.trace.block<1, 4>(rows, 7) = r.command.as_vector().transpose();
    ++rows;
    if (r.status == EpisodeStatus::Crashed) {
      out.crashed = true;
      break;
    }
    if (r.status == EpisodeStatus::TimeLimit) break;
  }
  out.trace.conservativeResize(rows, kTraceColumns);
  out.mean_action_diff = rows > 1 ? diff_sum / (rows - 1) : 0.0;
  out.med = out.crashed ? kCrashed : med(out.trace.middleCols(1, 3), out.trace.middleCols(4, 3));
  return out;
}

EvalReport run_benchmark(const ActorCritic<float>& net, const EnvConfig& env_cfg, const Params& plant,
                         const SuiteConfig& suite) {
  EvalReport report;
  for (std::size_t ci = 0; ci < suite.cases.size(); ++ci) {
    const EvalCase& c = suite.cases[ci];
    CaseResult cr;
    cr.name = c.name;
    for (int k = 0; k < c.trajectories; ++k) {
      Rng traj_rng = make_rng(suite.seed, 1000 * (ci + 1) + k);
      const ReferenceTrajectory traj = make_case_trajectory(c, traj_rng);
      for (int rep = 0; rep < c.repeats; ++rep) {
        const std::uint64_t trial_seed = (suite.seed << 20) ^ (std::uint64_t(ci) << 12) ^ (std::uint64_t(k) << 6) ^ rep;
        cr.trials.push_back(run_trial(net, env_cfg, plant, traj, trial_seed, suite.stochastic, suite.perturb_start));
      }
    }
    std::vector<double> ok;
    for (const auto& t : cr.trials) {
      if (t.crashed) {
        ++cr.crashes;
      } else {
        ok.push_back(t.med);
      }
    }
    if (!ok.empty()) {
      double mean = 0;
      for (double x : ok) mean += x;
      mean /= ok.size();
      double var = 0;
      for (double x : ok) var += (x - mean) * (x - mean);
      cr.med_mean = mean;
      cr.med_std = std::sqrt(var / ok.size());
    }
    report.cases.push_back(std::move(cr));
  }
  report.fingerprint["suite_seed"] = suite.seed;
  report.fingerprint["env_hash"] = config_hash(to_json(env_cfg));
  report.fingerprint["vehicle_hash"] = config_hash(to_json(plant));
  return report;
}

EvalReport run_benchmark(const Checkpoint& ckpt, const SuiteConfig& suite) {
  RunConfig run;
  try {
    run = run_config_from_json(ckpt.metadata.at("run"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint lacks a run snapshot: ") + e.what());
  }
  EvalReport r = run_benchmark(ckpt.net, run.env, run.vehicle, suite);
  r.fingerprint["config_hash"] = config_hash(ckpt.metadata.at("run"));
  r.fingerprint["checkpoint_iteration"] = ckpt.metadata.value("iteration", -1);
  return r;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json cs = nlohmann::json::array();
  for (const auto& c : cases) {
    nlohmann::json trials = nlohmann::json::array();
    for (const auto& t : c.trials) {
      trials.push_back({{"med", finite_or_inf(t.med)},
                        {"crashed", t.crashed},
                        {"mean_action_diff", t.mean_action_diff},
                        {"steps", t.trace.rows()}});
    }
    cs.push_back({{"name", c.name},
                  {"med_mean", finite_or_inf(c.med_mean)},
                  {"med_std", c.med_std},
                  {"crashes", c.crashes},
                  {"trials", trials}});
  }
  return {{"fingerprint", fingerprint}, {"cases", cs}};
}

std::string EvalReport::table() const {
  std::ostringstream out;
  out << "| case | trials | MED mean (std) m | crashes |\n|---|---|---|---|\n";
  for (const auto& c : cases) {
    out << "| " << c.name << " | " << c.trials.size() << " | " << format_med(c.med_mean, c.med_std) << " | "
        << c.crashes << " |\n";
  }
  return out.str();
}

double EvalReport::mean_action_diff() const {
  double sum = 0;
  int n = 0;
  for (const auto& c : cases) {
    for (const auto& t : c.trials) {
      sum += t.mean_action_diff;
      ++n;
    }
  }
  return n ? sum / n : 0.0;
}

void write_trace_csv(const Eigen::MatrixXd& trace, const std::filesystem::path& path) {
  if (trace.rows() > 0 && trace.cols() != kTraceColumns) throw ShapeError("trace must have 11 columns");
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  f << "t,x,y,z,x_ref,y_ref,z_ref,accel,p,q,r\n";
  f << std::setprecision(17);
  for (Eigen::Index i = 0; i < trace.rows(); ++i) {
    for (int c = 0; c < kTraceColumns; ++c) f << (c ? "," : "") << trace(i, c);
    f << "\n";
  }
  if (!f) throw Error("write failed: " + path.string());
}

Eigen::MatrixXd read_trace_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw FormatError("missing header in " + path.string());
  std::vector<double> values;
  Eigen::Index rows = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    int cols = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw FormatError("bad number in " + path.string());
      }
      ++cols;
    }
    if (cols != kTraceColumns) throw FormatError("row with wrong column count in " + path.string());
    ++rows;
  }
  Eigen::MatrixXd m(rows, kTraceColumns);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (int c = 0; c < kTraceColumns; ++c) m(i, c) = values[i * kTraceColumns + c];
  }
  return m;
}

void export_traces(const EvalReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& c : report.cases) {
    for (std::size_t k = 0; k < c.trials.size(); ++k) {
      write_trace_csv(c.trials[k].trace, dir / (c.name + "_trial" + std::to_string(k) + ".csv"));
    }
  }
  std::ofstream f(dir / "summary.json");
  if (!f) throw Error("cannot write summary.json in " + dir.string());
  f << report.to_json().dump(2) << "\n";
}

}  // namespace quadtrack
