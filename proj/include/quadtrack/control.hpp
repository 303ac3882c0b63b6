#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "quadtrack/common.hpp"
#include "quadtrack/dynamics.hpp"

namespace quadtrack {

/// Collective thrust (mass-normalized, m/s^2) and body-rate setpoint (rad/s).
struct CtbrCommand {
  double collective_accel = kGravity;
  Eigen::Vector3d body_rate = Eigen::Vector3d::Zero();

  /// (accel, p, q, r) in physical units.
  Eigen::Vector4d as_vector() const { return {collective_accel, body_rate.x(), body_rate.y(), body_rate.z()}; }
  static CtbrCommand from_vector(const Eigen::Vector4d& v) { return {v[0], v.tail<3>()}; }
  static CtbrCommand hover() { return {}; }
};

struct CtbrBounds {
  double max_accel = 1.6 * kGravity;
  double max_body_rate = kPi;

  bool contains(const CtbrCommand& c) const {
    return c.collective_accel >= 0 && c.collective_accel <= max_accel &&
           (c.body_rate.array().abs() <= max_body_rate).all();
  }
};

struct RateControllerGains {
  Eigen::Vector3d kp_rate{2.8e-4, 2.8e-4, 4.3e-4};  // N m s / rad

  void validate() const {
    if (!(kp_rate.array() > 0).all()) throw ConfigError("rate gains must be positive");
  }
};

/// Componentwise clamp of a physical-unit (accel, p, q, r) vector into the bounds.
inline CtbrCommand clip_action(const Eigen::Vector4d& raw, const CtbrBounds& bounds) {
  CtbrCommand c;
  c.collective_accel = std::clamp(raw[0], 0.0, bounds.max_accel);
  c.body_rate = raw.tail<3>().cwiseMax(-bounds.max_body_rate).cwiseMin(bounds.max_body_rate);
  return c;
}

/// u' = alpha u + (1 - alpha) u_prev.
inline CtbrCommand low_pass_filter(const CtbrCommand& u, const CtbrCommand& u_prev, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("low-pass alpha must lie in (0, 1]");
  CtbrCommand out;
  out.collective_accel = alpha * u.collective_accel + (1.0 - alpha) * u_prev.collective_accel;
  out.body_rate = alpha * u.body_rate + (1.0 - alpha) * u_prev.body_rate;
  return out;
}

struct Allocation {
  Eigen::Vector4d thrust;          // unclamped solution of A * thrust = [F; tau]
  Eigen::Vector4d clamped_thrust;  // thrust limited to [0, k_f * omega_max^2]
  double wrench_error = 0;         // |A * clamped - [F; tau]|, nonzero under saturation
  bool saturated = false;
};

/// Static allocation for a four-rotor frame. Rows of the allocation matrix map
/// per-rotor thrust to [F, tau_x, tau_y, tau_z].
class Mixer {
 public:
  explicit Mixer(const Params& params) : max_thrust_(params.k_f * params.omega_max * params.omega_max) {
    params.validate();
    const double drag_ratio = params.k_m / params.k_f;
    for (int j = 0; j < 4; ++j) {
      const Eigen::Vector3d r = params.rotor_pos.row(j).transpose();
      allocation_(0, j) = 1.0;
      allocation_(1, j) = r.y();
      allocation_(2, j) = -r.x();
      allocation_(3, j) = params.rotor_spin_dir[j] * drag_ratio;
    }
    Eigen::FullPivLU<Eigen::Matrix4d> lu(allocation_);
    if (!lu.isInvertible()) throw ConfigError("rotor allocation matrix is singular");
    inverse_ = lu.inverse();
  }

  Allocation allocate(double collective_force, const Eigen::Vector3d& torque) const {
    Eigen::Vector4d wrench;
    wrench << collective_force, torque;
    Allocation a;
    a.thrust = inverse_ * wrench;
    a.clamped_thrust = a.thrust.cwiseMax(0.0).cwiseMin(max_thrust_);
    a.saturated = (a.clamped_thrust - a.thrust).cwiseAbs().maxCoeff() > 0.0;
    a.wrench_error = (allocation_ * a.clamped_thrust - wrench).norm();
    return a;
  }

  /// Per-rotor thrusts (N) before clamping.
  Eigen::Vector4d operator()(double collective_force, const Eigen::Vector3d& torque) const {
    return allocate(collective_force, torque).thrust;
  }

  const Eigen::Matrix4d& matrix() const { return allocation_; }

 private:
  Eigen::Matrix4d allocation_;
  Eigen::Matrix4d inverse_;
  double max_thrust_;
};

inline Eigen::Vector4d mixer(double collective_force, const Eigen::Vector3d& torque, const Params& params) {
  return Mixer(params)(collective_force, torque);
}

struct RateControlOutput {
  Eigen::Vector4d omega_cmd;
  double wrench_error = 0;
  bool saturated = false;
};

/// Proportional body-rate loop plus static allocation. `params` is the model
/// the controller believes in (nominal), not the randomized plant.
class RateController {
 public:
  RateController(const Params& params, const RateControllerGains& gains)
      : params_(params), gains_(gains), mixer_(params) {
    gains_.validate();
  }

  RateControlOutput operator()(const CtbrCommand& cmd, const State& state) const {
    const Eigen::Vector3d torque = gains_.kp_rate.cwiseProduct(cmd.body_rate - state.body_rate);
    const Allocation a = mixer_.allocate(params_.mass * cmd.collective_accel, torque);
    RateControlOutput out;
    out.omega_cmd = (a.clamped_thrust / params_.k_f).cwiseSqrt().cwiseMin(params_.omega_max);
    out.wrench_error = a.wrench_error;
    out.saturated = a.saturated;
    return out;
  }

  const Params& params() const { return params_; }
  const RateControllerGains& gains() const { return gains_; }

 private:
  Params params_;
  RateControllerGains gains_;
  Mixer mixer_;
};

inline RateControlOutput rate_controller(const CtbrCommand& cmd, const State& state, const Params& params,
                                         const RateControllerGains& gains) {
  return RateController(params, gains)(cmd, state);
}

}  // namespace quadtrack
