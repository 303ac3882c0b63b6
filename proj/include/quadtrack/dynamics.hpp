#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <cmath>
#include <string>

#include "quadtrack/common.hpp"

namespace quadtrack {

/// Nominal quadrotor model. Rotor rows of `rotor_pos` are body-frame positions.
template <typename Scalar>
struct QuadrotorParams {
  Scalar mass = Scalar(0.030);
  Vector3<Scalar> inertia_diag{Scalar(1.4e-5), Scalar(1.4e-5), Scalar(2.17e-5)};
  Eigen::Matrix<Scalar, 4, 3> rotor_pos = x_layout(Scalar(0.046));
  Vector4<Scalar> rotor_spin_dir{Scalar(1), Scalar(-1), Scalar(1), Scalar(-1)};
  Scalar k_f = Scalar(2.88e-8);    // N / (rad/s)^2
  Scalar k_m = Scalar(7.24e-10);   // N m / (rad/s)^2
  Scalar motor_rate = Scalar(40);  // 1/s, multiplies (cmd - speed)
  Scalar omega_max = Scalar(2300);
  Vector3<Scalar> gravity{Scalar(0), Scalar(0), Scalar(-kGravity)};

  /// Symmetric X frame. Rotors 0 and 2 sit on one diagonal, 1 and 3 on the other.
  static Eigen::Matrix<Scalar, 4, 3> x_layout(Scalar arm_length) {
    const Scalar a = arm_length / std::sqrt(Scalar(2));
    Eigen::Matrix<Scalar, 4, 3> pos;
    pos << a, -a, 0,
          -a, -a, 0,
          -a, a, 0,
           a, a, 0;
    return pos;
  }

  void validate() const {
    if (!(mass > 0)) throw ConfigError("mass must be positive");
    if (!(inertia_diag.array() > 0).all()) throw ConfigError("inertia must be positive");
    if (!(k_f > 0)) throw ConfigError("k_f must be positive");
    if (!(k_m >= 0)) throw ConfigError("k_m must be non-negative");
    if (!(motor_rate > 0)) throw ConfigError("motor_rate must be positive");
    if (!(omega_max > 0)) throw ConfigError("omega_max must be positive");
    for (int j = 0; j < 4; ++j) {
      if (std::abs(rotor_spin_dir[j]) != Scalar(1)) throw ConfigError("spin directions must be +1 or -1");
    }
    if (rotor_spin_dir.sum() != Scalar(0)) throw ConfigError("spin directions must cancel (two CW, two CCW)");
    if (!rotor_pos.allFinite() || !gravity.allFinite()) throw ConfigError("non-finite geometry");
  }

  template <typename Other>
  QuadrotorParams<Other> cast() const {
    QuadrotorParams<Other> out;
    out.mass = Other(mass);
    out.inertia_diag = inertia_diag.template cast<Other>();
    out.rotor_pos = rotor_pos.template cast<Other>();
    out.rotor_spin_dir = rotor_spin_dir.template cast<Other>();
    out.k_f = Other(k_f);
    out.k_m = Other(k_m);
    out.motor_rate = Other(motor_rate);
    out.omega_max = Other(omega_max);
    out.gravity = gravity.template cast<Other>();
    return out;
  }
};

template <typename Scalar>
struct QuadrotorState {
  Vector3<Scalar> position = Vector3<Scalar>::Zero();
  Eigen::Quaternion<Scalar> attitude = Eigen::Quaternion<Scalar>::Identity();  // body -> world
  Vector3<Scalar> velocity = Vector3<Scalar>::Zero();
  Vector3<Scalar> body_rate = Vector3<Scalar>::Zero();
  Vector4<Scalar> rotor_speed = Vector4<Scalar>::Zero();

  bool all_finite() const {
    return position.allFinite() && attitude.coeffs().allFinite() && velocity.allFinite() &&
           body_rate.allFinite() && rotor_speed.allFinite();
  }

  Scalar max_abs_component() const {
    Scalar m = position.cwiseAbs().maxCoeff();
    m = std::max(m, velocity.cwiseAbs().maxCoeff());
    m = std::max(m, body_rate.cwiseAbs().maxCoeff());
    m = std::max(m, rotor_speed.cwiseAbs().maxCoeff());
    return m;
  }
};

/// Time derivative of a QuadrotorState. The attitude entry is (w, x, y, z).
template <typename Scalar>
struct StateDerivative {
  Vector3<Scalar> position;
  Vector4<Scalar> attitude;
  Vector3<Scalar> velocity;
  Vector3<Scalar> body_rate;
  Vector4<Scalar> rotor_speed;
};

template <typename Scalar>
struct Wrench {
  Vector3<Scalar> force;   // body frame, N
  Vector3<Scalar> torque;  // body frame, N m
};

using Params = QuadrotorParams<double>;
using State = QuadrotorState<double>;

/// Divergence guard threshold on any state component.
inline constexpr double kDivergenceLimit = 1e6;

/// Force and torque from the four rotors: thrust k_f*w^2 along body z, drag
/// torque spin_dir*k_m*w^2 about body z plus the thrust lever arm.
template <typename Scalar>
Wrench<Scalar> propeller_wrench(const Vector4<Scalar>& rotor_speed, const QuadrotorParams<Scalar>& params) {
  if (!rotor_speed.allFinite()) throw InvalidStateError("non-finite rotor speed");
  Wrench<Scalar> w{Vector3<Scalar>::Zero(), Vector3<Scalar>::Zero()};
  for (int j = 0; j < 4; ++j) {
    const Scalar sq = rotor_speed[j] * rotor_speed[j];
    const Vector3<Scalar> f(Scalar(0), Scalar(0), params.k_f * sq);
    const Vector3<Scalar> r = params.rotor_pos.row(j).transpose();
    w.force += f;
    w.torque += Vector3<Scalar>(Scalar(0), Scalar(0), params.rotor_spin_dir[j] * params.k_m * sq) + r.cross(f);
  }
  return w;
}

/// Rotor speed at which total lift equals the weight.
template <typename Scalar>
Scalar hover_rotor_speed(const QuadrotorParams<Scalar>& params) {
  return std::sqrt(params.mass * params.gravity.norm() / (Scalar(4) * params.k_f));
}

template <typename Scalar>
Vector4<Scalar> clamp_rotor_speed(const Vector4<Scalar>& omega, const QuadrotorParams<Scalar>& params) {
  return omega.cwiseMax(Scalar(0)).cwiseMin(params.omega_max);
}

template <typename Scalar>
StateDerivative<Scalar> state_derivative(const QuadrotorState<Scalar>& state, const Vector4<Scalar>& omega_cmd,
                                         const QuadrotorParams<Scalar>& params) {
  if (!(params.inertia_diag.array() > 0).all()) throw ConfigError("singular inertia");
  if (!state.all_finite() || !omega_cmd.allFinite()) throw InvalidStateError("non-finite state or command");

  const Vector4<Scalar> cmd = clamp_rotor_speed(omega_cmd, params);
  const Wrench<Scalar> wrench = propeller_wrench(state.rotor_speed, params);
  const Eigen::Quaternion<Scalar>& q = state.attitude;
  const Vector3<Scalar>& w = state.body_rate;

  StateDerivative<Scalar> d;
  d.position = state.velocity;
  // q (x) [0, w/2]
  const Eigen::Quaternion<Scalar> half_rate(Scalar(0), w.x() / 2, w.y() / 2, w.z() / 2);
  const Eigen::Quaternion<Scalar> qdot = q * half_rate;
  d.attitude << qdot.w(), qdot.x(), qdot.y(), qdot.z();
  d.velocity = q.toRotationMatrix() * wrench.force / params.mass + params.gravity;
  const Vector3<Scalar> iw = params.inertia_diag.cwiseProduct(w);
  d.body_rate = (wrench.torque - w.cross(iw)).cwiseQuotient(params.inertia_diag);
  d.rotor_speed = params.motor_rate * (cmd - state.rotor_speed);
  return d;
}

/// Unit quaternion for a constant body rate held for `dt` seconds.
template <typename Scalar>
Eigen::Quaternion<Scalar> rotation_increment(const Vector3<Scalar>& body_rate, Scalar dt) {
  const Vector3<Scalar> phi = body_rate * dt;
  const Scalar angle = phi.norm();
  if (angle < Scalar(1e-12)) {
    return Eigen::Quaternion<Scalar>(Scalar(1), phi.x() / 2, phi.y() / 2, phi.z() / 2).normalized();
  }
  const Scalar s = std::sin(angle / 2) / angle;
  return Eigen::Quaternion<Scalar>(std::cos(angle / 2), s * phi.x(), s * phi.y(), s * phi.z());
}

namespace detail {

/// Mean of exp(-k t) over [0, h] as a function of x = k h.
template <typename Scalar>
Scalar mean_decay(Scalar x) {
  return x < Scalar(1e-8) ? Scalar(1) - x / 2 : -std::expm1(-x) / x;
}

/// (2 / h^2) * double integral of exp(-k s) over 0 <= s <= t <= h, x = k h.
template <typename Scalar>
Scalar ramp_weighted_decay(Scalar x) {
  return x < Scalar(1e-6) ? Scalar(1) - x / 3 : Scalar(2) * (x + std::expm1(-x)) / (x * x);
}

/// Effective squared rotor speed when Omega(t) = cmd + d exp(-k t) and the
/// exponential moments are weighted by w1 = <exp(-kt)>, w2 = <exp(-2kt)>.
template <typename Scalar>
Vector4<Scalar> squared_speed_moment(const Vector4<Scalar>& cmd, const Vector4<Scalar>& d, Scalar w1, Scalar w2) {
  return (cmd.array().square() + Scalar(2) * cmd.array() * d.array() * w1 + d.array().square() * w2).matrix();
}

}  // namespace detail

/// One fixed-step update with the motor command held over the step.
///
/// Rates are advanced first, then position and attitude. The motor lag
/// Omega' = T_m (cmd - Omega) is linear, so it is solved exactly and the
/// propeller wrench uses the step average of Omega^2. Attitude advances with
/// the rate integrated against the same torque profile, the thrust is rotated
/// at the step midpoint and position uses the mean of old and new velocity.
template <typename Scalar>
QuadrotorState<Scalar> step(const QuadrotorState<Scalar>& state, const Vector4<Scalar>& omega_cmd,
                            const QuadrotorParams<Scalar>& params, Scalar dt = Scalar(0.01)) {
  if (!(dt > 0)) throw ConfigError("dt must be positive");
  if (!(params.inertia_diag.array() > 0).all()) throw ConfigError("singular inertia");
  if (!state.all_finite() || !omega_cmd.allFinite()) throw InvalidStateError("non-finite state or command");

  const Vector4<Scalar> cmd = clamp_rotor_speed(omega_cmd, params);
  const Vector4<Scalar> offset = state.rotor_speed - cmd;
  const Scalar x = params.motor_rate * dt;

  const Vector4<Scalar> mean_sq =
      detail::squared_speed_moment(cmd, offset, detail::mean_decay(x), detail::mean_decay(Scalar(2) * x));
  const Vector4<Scalar> ramp_sq = detail::squared_speed_moment(cmd, offset, detail::ramp_weighted_decay(x),
                                                               detail::ramp_weighted_decay(Scalar(2) * x));
  const Wrench<Scalar> mean_wrench = propeller_wrench<Scalar>(mean_sq.cwiseMax(Scalar(0)).cwiseSqrt(), params);
  const Wrench<Scalar> ramp_wrench = propeller_wrench<Scalar>(ramp_sq.cwiseMax(Scalar(0)).cwiseSqrt(), params);

  const Vector3<Scalar>& w = state.body_rate;
  const Vector3<Scalar> gyro = w.cross(params.inertia_diag.cwiseProduct(w));

  QuadrotorState<Scalar> next;
  next.body_rate = w + dt * (mean_wrench.torque - gyro).cwiseQuotient(params.inertia_diag);
  next.rotor_speed = clamp_rotor_speed<Scalar>(cmd + offset * std::exp(-x), params);

  const Vector3<Scalar> swept_rate = w + dt / 2 * (ramp_wrench.torque - gyro).cwiseQuotient(params.inertia_diag);
  const Eigen::Quaternion<Scalar> mid = state.attitude * rotation_increment<Scalar>(swept_rate, dt / 2);
  next.velocity = state.velocity + dt * (mid.toRotationMatrix() * mean_wrench.force / params.mass + params.gravity);
  next.position = state.position + dt * (state.velocity + next.velocity) / 2;
  next.attitude = (state.attitude * rotation_increment<Scalar>(swept_rate, dt)).normalized();

  if (!next.all_finite() || next.max_abs_component() > Scalar(kDivergenceLimit)) {
    throw SimulationDiverged("simulation diverged");
  }
  return next;
}

/// Hover equilibrium at `position` with identity attitude.
template <typename Scalar>
QuadrotorState<Scalar> hover_state(const QuadrotorParams<Scalar>& params,
                                   const Vector3<Scalar>& position = Vector3<Scalar>::Zero()) {
  QuadrotorState<Scalar> s;
  s.position = position;
  s.rotor_speed.setConstant(hover_rotor_speed(params));
  return s;
}

}  // namespace quadtrack
