#include "quadtrack/env.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <string>

namespace quadtrack {

namespace {

constexpr std::size_t kVelocityHistory = 4;

Eigen::Vector3d gaussian3(Rng& rng, double sigma) {
  std::normal_distribution<double> n(0.0, 1.0);
  const double x = n(rng), y = n(rng), z = n(rng);
  return sigma * Eigen::Vector3d(x, y, z);
}

// Backward difference of order `order` over the newest samples, divided by dt^order.
std::optional<Eigen::Vector3d> backward_difference(const VelocityHistory& v, int order, double dt) {
  if (static_cast<int>(v.size()) < order + 1) return std::nullopt;
  // binomial coefficients with alternating sign
  static constexpr double kCoeff[4][4] = {{1, 0, 0, 0}, {1, -1, 0, 0}, {1, -2, 1, 0}, {1, -3, 3, -1}};
  Eigen::Vector3d d = Eigen::Vector3d::Zero();
  const std::size_t n = v.size();
  for (int i = 0; i <= order; ++i) d += kCoeff[order][i] * v[n - 1 - i];
  return d / std::pow(dt, order);
}

}  // namespace

std::string_view to_string(SmoothnessKind kind) {
  switch (kind) {
    case SmoothnessKind::ActionDiff: return "action_diff";
    case SmoothnessKind::ActionNorm: return "action_norm";
    case SmoothnessKind::Acc: return "acc";
    case SmoothnessKind::Jerk: return "jerk";
    case SmoothnessKind::Snap: return "snap";
    case SmoothnessKind::None: return "none";
  }
  return "none";
}

SmoothnessKind smoothness_kind_from_string(std::string_view name) {
  for (auto k : {SmoothnessKind::ActionDiff, SmoothnessKind::ActionNorm, SmoothnessKind::Acc, SmoothnessKind::Jerk,
                 SmoothnessKind::Snap, SmoothnessKind::None}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown smoothness kind: " + std::string(name));
}

std::string_view to_string(DrKind kind) {
  switch (kind) {
    case DrKind::SysID: return "sysid";
    case DrKind::UniformDR: return "uniform";
    case DrKind::Offset: return "offset";
    case DrKind::OffsetPlusDR: return "offset_uniform";
  }
  return "sysid";
}

DrKind dr_kind_from_string(std::string_view name) {
  for (auto k : {DrKind::SysID, DrKind::UniformDR, DrKind::Offset, DrKind::OffsetPlusDR}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown randomization mode: " + std::string(name));
}

void DrMode::validate() const {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ConfigError("randomization fraction must lie in [0, 1)");
}

double DrMode::sample_scale(Rng& rng) const {
  std::uniform_real_distribution<double> u(1.0 - fraction, 1.0 + fraction);
  switch (kind) {
    case DrKind::SysID: return 1.0;
    case DrKind::UniformDR: return u(rng);
    case DrKind::Offset: return 1.0 + fraction;
    case DrKind::OffsetPlusDR: return (1.0 + fraction) * u(rng);
  }
  return 1.0;
}

void EnvConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (!(smoothness_scale > 0.0)) throw ConfigError("smoothness_scale must be positive");
  if (!(c_pos > 0.0)) throw ConfigError("c_pos must be positive");
  if (episode_len < 1) throw ConfigError("episode_len must be >= 1");
  if (!(dt > 0.0)) throw ConfigError("dt must be positive");
  for (const DrMode* m : {&dr.mass, &dr.inertia, &dr.motor_time_constant, &dr.k_f}) m->validate();
  if (polynomial_weight < 0.0 || zigzag_weight < 0.0 || std::abs(polynomial_weight + zigzag_weight - 1.0) > 1e-9) {
    throw ConfigError("trajectory mixture weights must be non-negative and sum to 1");
  }
  if (obs.window < 1 || !(obs.spacing > 0.0)) throw ConfigError("observation window must be non-empty");
  if (obs.time_vector_k < 1) throw ConfigError("time_vector_k must be >= 1");
  if (!(lpf_alpha > 0.0 && lpf_alpha <= 1.0)) throw ConfigError("lpf_alpha must lie in (0, 1]");
  if (!(action_clip >= 0.0)) throw ConfigError("action_clip must be >= 0");
  if (!(crash_distance > 0.0) || !(crash_tilt_deg > 0.0)) throw ConfigError("crash thresholds must be positive");
  if (init_pos_sigma < 0.0 || init_vel_sigma < 0.0 || init_att_sigma < 0.0) {
    throw ConfigError("initial perturbations must be >= 0");
  }
  gains.validate();
}

int EnvConfig::actor_dim() const {
  int n = 3 * obs.window;
  if (obs.include_velocity) n += 3;
  n += obs.attitude == AttitudeRepr::RotationMatrix ? 9 : 4;
  if (obs.include_prev_action) n += 4;
  if (obs.actor_time_vector) n += obs.time_vector_k;
  return n;
}

int EnvConfig::critic_dim() const { return actor_dim() + (obs.critic_time_vector ? obs.time_vector_k : 0); }

CtbrCommand action_to_command(const Eigen::Vector4d& action, const EnvConfig& cfg) {
  Eigen::Vector4d a = action;
  if (cfg.action_clip > 0.0) a = a.cwiseMax(-cfg.action_clip).cwiseMin(cfg.action_clip);
  Eigen::Vector4d raw;
  raw << kGravity * (1.0 + 0.6 * a[0]), kPi * a.tail<3>();
  return clip_action(raw, cfg.bounds);
}

Eigen::Vector4d normalized_command(const CtbrCommand& u, const CtbrBounds& bounds) {
  Eigen::Vector4d n;
  n << u.collective_accel / bounds.max_accel, u.body_rate / bounds.max_body_rate;
  return n;
}

Params randomize_params(const Params& nominal, const DrConfig& dr, Rng& rng) {
  nominal.validate();
  for (int attempt = 0; attempt < 100; ++attempt) {
    Params p = nominal;
    p.mass *= dr.mass.sample_scale(rng);
    p.inertia_diag *= dr.inertia.sample_scale(rng);
    p.motor_rate /= dr.motor_time_constant.sample_scale(rng);  // the time constant is 1 / rate
    p.k_f *= dr.k_f.sample_scale(rng);
    try {
      p.validate();
      return p;
    } catch (const ConfigError&) {
    }
  }
  throw ConfigError("randomized parameters repeatedly invalid");
}

Observation observe(const State& state, const ReferenceTrajectory& traj, int t_step, const EnvConfig& cfg,
                    const CtbrCommand& prev_command) {
  const auto& o = cfg.obs;
  Observation out;
  out.actor.resize(cfg.actor_dim());
  const auto window = sample_window(traj, t_step * cfg.dt, o.window, o.spacing);
  int i = 0;
  for (int k = 0; k < o.window; ++k) {
    for (int a = 0; a < 3; ++a) out.actor[i++] = window(k, a) - state.position[a];
  }
  if (o.include_velocity) {
    out.actor.segment<3>(i) = state.velocity;
    i += 3;
  }
  if (o.attitude == AttitudeRepr::RotationMatrix) {
    const Eigen::Matrix3d R = state.attitude.toRotationMatrix();
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) out.actor[i++] = R(r, c);
    }
  } else {
    const auto& q = state.attitude;
    out.actor.segment<4>(i) << q.w(), q.x(), q.y(), q.z();
    i += 4;
  }
  if (o.include_prev_action) {
    out.actor.segment<4>(i) = normalized_command(prev_command, cfg.bounds);
    i += 4;
  }
  if (o.actor_time_vector) {
    out.actor.segment(i, o.time_vector_k).setConstant(t_step);
    i += o.time_vector_k;
  }

  out.critic.resize(cfg.critic_dim());
  out.critic.head(out.actor.size()) = out.actor;
  if (o.critic_time_vector) out.critic.tail(o.time_vector_k).setConstant(t_step);
  return out;
}

RewardTerms reward(const State& state, const Eigen::Vector3d& ref_pos, const CtbrCommand& u, const CtbrCommand& u_prev,
                   const VelocityHistory& velocities, const EnvConfig& cfg) {
  if (!(cfg.lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  RewardTerms r;
  r.task = std::exp(-cfg.c_pos * (state.position - ref_pos).norm());

  double penalty = 0.0;
  switch (cfg.smoothness) {
    case SmoothnessKind::ActionDiff:
      penalty = (normalized_command(u, cfg.bounds) - normalized_command(u_prev, cfg.bounds)).norm();
      break;
    case SmoothnessKind::ActionNorm:
      penalty = normalized_command(u, cfg.bounds).norm();
      break;
    case SmoothnessKind::Acc:
    case SmoothnessKind::Jerk:
    case SmoothnessKind::Snap: {
      const int order = cfg.smoothness == SmoothnessKind::Acc ? 1 : cfg.smoothness == SmoothnessKind::Jerk ? 2 : 3;
      if (auto d = backward_difference(velocities, order, cfg.dt)) penalty = d->norm();
      break;
    }
    case SmoothnessKind::None:
      break;
  }
  if (cfg.smoothness == SmoothnessKind::None) {
    r.smooth = 0.0;
  } else {
    r.smooth = std::exp(-cfg.smoothness_scale * penalty);
  }
  r.total = r.task + cfg.lambda * r.smooth;
  return r;
}

bool crashed(const State& state, const Eigen::Vector3d& ref_pos, const EnvConfig& cfg) {
  if (!state.all_finite() || state.max_abs_component() > kDivergenceLimit) return true;
  if ((state.position - ref_pos).norm() > cfg.crash_distance) return true;
  // body z against world z
  const double cos_tilt = state.attitude.toRotationMatrix()(2, 2);
  return cos_tilt < std::cos(cfg.crash_tilt_deg * kPi / 180.0);
}

EpisodeStatus terminate(const State& state, const Eigen::Vector3d& ref_pos, int t_step, const EnvConfig& cfg) {
  if (crashed(state, ref_pos, cfg)) return EpisodeStatus::Crashed;
  if (t_step >= cfg.episode_len) return EpisodeStatus::TimeLimit;
  return EpisodeStatus::Running;
}

ReferenceTrajectory sample_training_trajectory(Rng& rng, const EnvConfig& cfg) {
  const double duration = cfg.episode_len * cfg.dt + cfg.obs.window * cfg.obs.spacing + 0.1;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const bool poly = u(rng) < cfg.polynomial_weight;
  return poly ? random_polynomial(rng, duration, cfg.polynomial) : zigzag(rng, duration, cfg.zigzag);
}

State perturbed_start(Rng& rng, const ReferenceTrajectory& traj, const Params& params, const EnvConfig& cfg) {
  State s = hover_state(params, traj.position(0.0));
  s.position += gaussian3(rng, cfg.init_pos_sigma);
  s.velocity += gaussian3(rng, cfg.init_vel_sigma);
  const Eigen::Vector3d tilt = gaussian3(rng, cfg.init_att_sigma);
  if (tilt.norm() > 0.0) s.attitude = Eigen::Quaterniond(Eigen::AngleAxisd(tilt.norm(), tilt.normalized()));
  return s;
}

ResetResult reset(Rng& rng, const EnvConfig& cfg, const Params& nominal) {
  ReferenceTrajectory traj = sample_training_trajectory(rng, cfg);
  Params plant = randomize_params(nominal, cfg.dr, rng);
  State s = perturbed_start(rng, traj, plant, cfg);
  return {s, std::move(traj), plant};
}

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

QuadrotorEnv::QuadrotorEnv(const EnvConfig& cfg, const Params& nominal, std::uint64_t seed)
    : cfg_(cfg), nominal_(nominal), rng_(make_rng(seed, 0)), controller_(nominal, cfg.gains) {
  cfg_.validate();
  reset();
}

void QuadrotorEnv::reset() {
  auto r = quadtrack::reset(rng_, cfg_, nominal_);
  state_ = r.state;
  plant_ = r.params;
  traj_.emplace(std::move(r.trajectory));
  t_step_ = 0;
  step_limit_ = cfg_.episode_len;
  prev_command_ = CtbrCommand::hover();
  velocities_.assign(1, state_.velocity);
}

void QuadrotorEnv::reset_with(const ReferenceTrajectory& traj, const Params& plant, bool perturb) {
  plant.validate();
  traj_.emplace(traj);
  plant_ = plant;
  state_ = perturb ? perturbed_start(rng_, traj, plant, cfg_) : hover_state(plant, traj.position(0.0));
  t_step_ = 0;
  step_limit_ = std::max(1, static_cast<int>(std::llround(traj.duration() / cfg_.dt)));
  prev_command_ = CtbrCommand::hover();
  velocities_.assign(1, state_.velocity);
}

StepResult QuadrotorEnv::step(const Eigen::Vector4d& action) {
  StepResult out;
  CtbrCommand u = action_to_command(action, cfg_);
  if (cfg_.lpf_alpha < 1.0) u = low_pass_filter(u, prev_command_, cfg_.lpf_alpha);
  out.command = u;

  try {
    state_ = quadtrack::step(state_, controller_(u, state_).omega_cmd, plant_, cfg_.dt);
  } catch (const SimulationDiverged&) {
    ++t_step_;
    prev_command_ = u;
    out.status = EpisodeStatus::Crashed;
    return out;
  }
  ++t_step_;
  velocities_.push_back(state_.velocity);
  if (velocities_.size() > kVelocityHistory) velocities_.pop_front();

  const Eigen::Vector3d ref = reference();
  out.reward = quadtrack::reward(state_, ref, u, prev_command_, velocities_, cfg_);
  prev_command_ = u;
  if (crashed(state_, ref, cfg_)) {
    out.status = EpisodeStatus::Crashed;
  } else if (t_step_ >= step_limit_) {
    out.status = EpisodeStatus::TimeLimit;
  }
  return out;
}

Observation QuadrotorEnv::observe() const { return quadtrack::observe(state_, *traj_, t_step_, cfg_, prev_command_); }

}  // namespace quadtrack
