#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <string_view>
#include <vector>

#include "quadtrack/common.hpp"
#include "quadtrack/control.hpp"
#include "quadtrack/dynamics.hpp"
#include "quadtrack/trajectory.hpp"

namespace quadtrack {

enum class SmoothnessKind { ActionDiff, ActionNorm, Acc, Jerk, Snap, None };
enum class AttitudeRepr { RotationMatrix, Quaternion };
enum class DrKind { SysID, UniformDR, Offset, OffsetPlusDR };
enum class EpisodeStatus { Running, Crashed, TimeLimit };

std::string_view to_string(SmoothnessKind kind);
SmoothnessKind smoothness_kind_from_string(std::string_view name);
std::string_view to_string(DrKind kind);
DrKind dr_kind_from_string(std::string_view name);

/// How one physical parameter is perturbed at the start of each episode.
struct DrMode {
  DrKind kind = DrKind::SysID;
  double fraction = 0.0;

  void validate() const;
  /// Multiplier applied to the nominal value.
  double sample_scale(Rng& rng) const;
};

struct DrConfig {
  DrMode mass;
  DrMode inertia;  // one factor shared by all three axes
  DrMode motor_time_constant;  // scales 1 / motor_rate
  DrMode k_f;
};

struct ObservationConfig {
  int window = 10;
  double spacing = 0.05;
  bool include_velocity = true;
  AttitudeRepr attitude = AttitudeRepr::RotationMatrix;
  bool include_prev_action = false;
  bool actor_time_vector = false;
  bool critic_time_vector = true;
  int time_vector_k = 1;
};

struct EnvConfig {
  double lambda = 0.4;
  SmoothnessKind smoothness = SmoothnessKind::ActionDiff;
  double smoothness_scale = 1.0;  // A = scale * |.|
  double c_pos = 2.0;
  int episode_len = 500;
  double dt = 0.01;
  DrConfig dr;
  double polynomial_weight = 0.5;
  double zigzag_weight = 0.5;
  ObservationConfig obs;

  double init_pos_sigma = 0.02;
  double init_vel_sigma = 0.02;
  double init_att_sigma = 0.02;  // rad, per axis

  double crash_distance = 3.0;
  double crash_tilt_deg = 85.0;

  double lpf_alpha = 1.0;        // 1 disables the filter
  double action_clip = 0.0;      // bound on |normalized action|, 0 disables
  CtbrBounds bounds;
  RateControllerGains gains;
  PolynomialOptions polynomial;
  ZigzagOptions zigzag;

  void validate() const;
  int actor_dim() const;
  int critic_dim() const;
};

/// Policy output in [-1, 1]-ish units to a physical CTBR command:
/// accel = g (1 + 0.6 a0), rates = pi a_{1..3}, then clipped to bounds.
CtbrCommand action_to_command(const Eigen::Vector4d& action, const EnvConfig& cfg);

/// Thrust over [0, 1.6 g] to [0, 1], rates over [-pi, pi] to [-1, 1].
Eigen::Vector4d normalized_command(const CtbrCommand& u, const CtbrBounds& bounds);

QuadrotorParams<double> randomize_params(const Params& nominal, const DrConfig& dr, Rng& rng);

struct Observation {
  Eigen::VectorXd actor;
  Eigen::VectorXd critic;
};

/// Builds actor and critic inputs at step `t_step`. `prev_command` is only
/// read when the previous-action input is enabled.
Observation observe(const State& state, const ReferenceTrajectory& traj, int t_step, const EnvConfig& cfg,
                    const CtbrCommand& prev_command = CtbrCommand::hover());

struct RewardTerms {
  double total = 0;
  double task = 0;
  double smooth = 0;
};

/// Velocity samples, newest last, used for the kinematic smoothness terms.
using VelocityHistory = std::deque<Eigen::Vector3d>;

RewardTerms reward(const State& state, const Eigen::Vector3d& ref_pos, const CtbrCommand& u, const CtbrCommand& u_prev,
                   const VelocityHistory& velocities, const EnvConfig& cfg);

EpisodeStatus terminate(const State& state, const Eigen::Vector3d& ref_pos, int t_step, const EnvConfig& cfg);

/// Distance or tilt limit exceeded (the crash half of terminate).
bool crashed(const State& state, const Eigen::Vector3d& ref_pos, const EnvConfig& cfg);

/// Trajectory long enough for one episode plus the lookahead window.
ReferenceTrajectory sample_training_trajectory(Rng& rng, const EnvConfig& cfg);

struct ResetResult {
  State state;
  ReferenceTrajectory trajectory;
  Params params;
};

ResetResult reset(Rng& rng, const EnvConfig& cfg, const Params& nominal);

/// Initial state at the trajectory start with the configured perturbations.
State perturbed_start(Rng& rng, const ReferenceTrajectory& traj, const Params& params, const EnvConfig& cfg);

struct StepResult {
  RewardTerms reward;
  EpisodeStatus status = EpisodeStatus::Running;
  CtbrCommand command;  // what was sent to the rate controller
};

/// One simulated vehicle following one reference. Owns its random stream.
class QuadrotorEnv {
 public:
  QuadrotorEnv(const EnvConfig& cfg, const Params& nominal, std::uint64_t seed);

  /// New random trajectory, new DR draw, perturbed start.
  void reset();
  /// Start on a given reference with given plant parameters. The episode then
  /// runs until the end of the reference instead of `episode_len`.
  void reset_with(const ReferenceTrajectory& traj, const Params& plant, bool perturb = true);

  StepResult step(const Eigen::Vector4d& action);
  Observation observe() const;

  const State& state() const { return state_; }
  const Params& plant() const { return plant_; }
  const ReferenceTrajectory& trajectory() const { return *traj_; }
  const EnvConfig& config() const { return cfg_; }
  int t_step() const { return t_step_; }
  double time() const { return t_step_ * cfg_.dt; }
  const CtbrCommand& last_command() const { return prev_command_; }
  Eigen::Vector3d reference() const { return traj_->position(time()); }
  Rng& rng() { return rng_; }

 private:
  EnvConfig cfg_;
  Params nominal_;
  Rng rng_;
  RateController controller_;
  State state_;
  Params plant_;
  std::optional<ReferenceTrajectory> traj_;
  int t_step_ = 0;
  int step_limit_ = 0;
  CtbrCommand prev_command_;
  VelocityHistory velocities_;
};

Rng make_rng(std::uint64_t seed, std::uint64_t stream);

}  // namespace quadtrack
