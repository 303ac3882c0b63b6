#include "quadtrack/ablation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <tuple>

#include "quadtrack/logging.hpp"
#include "quadtrack/ppo.hpp"

namespace quadtrack {

namespace {

AblationVariant variant(const std::string& name, const RunConfig& run) { return {name, run, name, ""}; }

std::string cell(const CaseResult& c) {
  if (c.crashes == static_cast<int>(c.trials.size())) return "inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f (%.3f)", c.med_mean, c.med_std);
  std::string s = buf;
  if (c.crashes > 0) s += " [" + std::to_string(c.crashes) + " crashed]";
  return s;
}

std::vector<AblationVariant> actor_inputs(const RunConfig& base) {
  std::vector<AblationVariant> out;
  RunConfig r = base;
  r.env.obs.include_velocity = true;
  r.env.obs.attitude = AttitudeRepr::RotationMatrix;
  r.env.obs.include_prev_action = false;
  out.push_back(variant("e+v+R", r));
  RunConfig q = r;
  q.env.obs.attitude = AttitudeRepr::Quaternion;
  out.push_back(variant("e+v+q", q));
  RunConfig nv = r;
  nv.env.obs.include_velocity = false;
  out.push_back(variant("e+R", nv));
  RunConfig u = r;
  u.env.obs.include_prev_action = true;
  out.push_back(variant("e+v+R+u_prev", u));
  return out;
}

std::vector<AblationVariant> time_vector(const RunConfig& base) {
  std::vector<AblationVariant> out;
  for (auto [name, actor, critic] : {std::tuple{"critic_time", false, true}, std::tuple{"no_time", false, false},
                                     std::tuple{"actor_time", true, true}}) {
    RunConfig r = base;
    r.env.obs.actor_time_vector = actor;
    r.env.obs.critic_time_vector = critic;
    out.push_back(variant(name, r));
  }
  return out;
}

std::vector<AblationVariant> smoothness(const RunConfig& base) {
  std::vector<AblationVariant> out;
  RunConfig plain = base;
  plain.env.action_clip = 0;
  plain.env.lpf_alpha = 1;

  RunConfig ac = plain;
  ac.env.smoothness = SmoothnessKind::None;
  ac.env.action_clip = 0.5;
  out.push_back(variant("action_clip", ac));

  RunConfig lpf = plain;
  lpf.env.smoothness = SmoothnessKind::None;
  lpf.env.lpf_alpha = 0.5;
  out.push_back(variant("low_pass_filter", lpf));

  // Kinematic terms are in m/s^k units and much larger than the normalized
  // action terms, so they get scales that put A near 1 in ordinary flight.
  for (auto [kind, scale] : {std::pair{SmoothnessKind::Acc, 0.1}, std::pair{SmoothnessKind::Jerk, 0.01},
                             std::pair{SmoothnessKind::Snap, 1e-4}, std::pair{SmoothnessKind::ActionNorm, 1.0},
                             std::pair{SmoothnessKind::ActionDiff, 1.0}}) {
    RunConfig r = plain;
    r.env.smoothness = kind;
    r.env.smoothness_scale = scale;
    out.push_back(variant(std::string(to_string(kind)), r));
  }
  return out;
}

std::vector<AblationVariant> dynamics(const RunConfig& base) {
  std::vector<AblationVariant> out;
  const std::pair<const char*, DrMode DrConfig::*> params[] = {{"mass", &DrConfig::mass},
                                                               {"inertia", &DrConfig::inertia},
                                                               {"motor_time_constant", &DrConfig::motor_time_constant},
                                                               {"k_f", &DrConfig::k_f}};
  const std::tuple<const char*, DrKind, double> modes[] = {{"Offset+30%", DrKind::Offset, 0.3},
                                                           {"Offset+DR30%", DrKind::OffsetPlusDR, 0.3},
                                                           {"SysID+DR30%", DrKind::UniformDR, 0.3},
                                                           {"SysID+DR10%", DrKind::UniformDR, 0.1}};
  RunConfig sysid = base;
  sysid.env.dr = DrConfig{};
  for (const auto& [pname, member] : params) {
    for (const auto& [mname, kind, frac] : modes) {
      RunConfig r = sysid;
      r.env.dr.*member = DrMode{kind, frac};
      out.push_back({std::string(pname) + "/" + mname, r, pname, mname});
    }
  }
  out.push_back({"SysID", sysid, "", "SysID"});
  return out;
}

std::vector<AblationVariant> batch_size(const RunConfig& base) {
  std::vector<AblationVariant> out;
  for (double m : {0.25, 0.5, 1.0, 2.0, 4.0}) {
    RunConfig r = base;
    r.train.n_envs = std::max(1, static_cast<int>(base.train.n_envs * m));
    out.push_back(variant("n_envs=" + std::to_string(r.train.n_envs), r));
  }
  return out;
}

}  // namespace

std::vector<AblationVariant> ablation_variants(int factor, const RunConfig& base) {
  switch (factor) {
    case 1: return actor_inputs(base);
    case 2: return time_vector(base);
    case 3: return smoothness(base);
    case 4: return dynamics(base);
    case 5: return batch_size(base);
  }
  throw ConfigError("factor must be in 1..5, got " + std::to_string(factor));
}

SuiteConfig ablation_suite(int factor, int laps) {
  SuiteConfig s = figure_eight_suite(laps);
  if (factor == 4) s.cases = {s.cases[1]};
  return s;
}

nlohmann::json AblationReport::to_json() const {
  nlohmann::json vs = nlohmann::json::array();
  for (std::size_t i = 0; i < variants.size(); ++i) {
    nlohmann::json v = {{"name", variants[i].name}, {"row", variants[i].row}, {"col", variants[i].col}};
    if (i < reports.size()) v["report"] = reports[i].to_json();
    vs.push_back(v);
  }
  return {{"factor", factor}, {"variants", vs}};
}

std::string AblationReport::table() const {
  std::ostringstream out;
  if (factor == 4) {
    std::vector<std::string> rows, cols;
    for (const auto& v : variants) {
      if (!v.row.empty() && std::find(rows.begin(), rows.end(), v.row) == rows.end()) rows.push_back(v.row);
      if (std::find(cols.begin(), cols.end(), v.col) == cols.end()) cols.push_back(v.col);
    }
    out << "| |";
    for (const auto& c : cols) out << " " << c << " |";
    out << "\n|---|";
    for (std::size_t i = 0; i < cols.size(); ++i) out << "---|";
    out << "\n";
    for (const auto& r : rows) {
      out << "| " << r << " |";
      for (const auto& c : cols) {
        std::string text = "-";
        for (std::size_t i = 0; i < variants.size() && i < reports.size(); ++i) {
          if ((variants[i].row == r || variants[i].row.empty()) && variants[i].col == c) {
            text = cell(reports[i].cases.front());
          }
        }
        out << " " << text << " |";
      }
      out << "\n";
    }
    return out.str();
  }
  if (reports.empty()) return "";
  out << "| variant |";
  for (const auto& c : reports.front().cases) out << " " << c.name << " |";
  out << "\n|---|";
  for (std::size_t i = 0; i < reports.front().cases.size(); ++i) out << "---|";
  out << "\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    out << "| " << variants[i].name << " |";
    for (const auto& c : reports[i].cases) out << " " << cell(c) << " |";
    out << "\n";
  }
  return out.str();
}

AblationReport run_ablation(int factor, const RunConfig& base, const SuiteConfig& suite,
                            const std::filesystem::path& out_dir) {
  AblationReport report;
  report.factor = factor;
  report.variants = ablation_variants(factor, base);
  std::filesystem::create_directories(out_dir);
  for (const auto& v : report.variants) {
    std::string dir = v.name;
    for (char& ch : dir) {
      if (ch == '/' || ch == '%' || ch == '+' || ch == '=') ch = '_';
    }
    log_info("ablation " + std::to_string(factor) + ": training " + v.name);
    // Plant offsets and DR only shape training; evaluation always flies the
    // nominal vehicle, which stands in for the real one.
    const TrainResult tr = train(v.run.train, v.run.env, v.run.vehicle, out_dir / dir);
    report.reports.push_back(run_benchmark(tr.net, v.run.env, v.run.vehicle, suite));
    report.reports.back().fingerprint["config_hash"] = config_hash(to_json(v.run));
  }
  std::ofstream(out_dir / "report.json") << report.to_json().dump(2) << "\n";
  std::ofstream(out_dir / "table.md") << report.table();
  return report;
}

}  // namespace quadtrack
