#pragma once

#include <Eigen/Core>
#include <json.hpp>

#include <random>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "quadtrack/common.hpp"

namespace quadtrack {

enum class TrajectoryKind { FigureEight, Polynomial, Pentagram, Zigzag };

std::string_view to_string(TrajectoryKind kind);
TrajectoryKind trajectory_kind_from_string(std::string_view name);

using Rng = std::mt19937_64;

/// p(t) = [cos(2 pi t / T), sin(4 pi t / T) / 2, h] + offset.
struct FigureEightCurve {
  double period = 5.5;
  double height = 1.0;
  Eigen::Vector3d offset{-1.0, 0.0, 0.0};
};

/// Quintic per axis in local time tau in [0, duration]; row k holds the tau^k coefficients.
struct PolynomialSegment {
  double duration = 0;
  Eigen::Matrix<double, 6, 3> coeffs = Eigen::Matrix<double, 6, 3>::Zero();

  Eigen::Vector3d derivative(double tau, int order) const;
};

struct PiecewisePolynomial {
  std::vector<PolynomialSegment> segments;
  std::vector<double> start_times;
};

/// Straight segments between waypoints reached at `times` (times[0] == 0).
struct PiecewiseLinear {
  std::vector<Eigen::Vector3d> waypoints;
  std::vector<double> times;
};

/// Time-parameterized reference curve on [0, duration]. Queries past the end
/// return the terminal point; negative times are rejected.
class ReferenceTrajectory {
 public:
  using Curve = std::variant<FigureEightCurve, PiecewisePolynomial, PiecewiseLinear>;

  ReferenceTrajectory(TrajectoryKind kind, double duration, Curve curve);

  TrajectoryKind kind() const { return kind_; }
  double duration() const { return duration_; }
  const Curve& curve() const { return curve_; }

  Eigen::Vector3d position(double t) const;
  /// d^order p / dt^order. Piecewise-linear curves report the right-sided velocity at corners.
  Eigen::Vector3d derivative(double t, int order) const;
  Eigen::Vector3d velocity(double t) const { return derivative(t, 1); }

  /// Full representation as JSON (coefficients, waypoints, period).
  nlohmann::json to_json() const;
  static ReferenceTrajectory from_json(const nlohmann::json& j);

 private:
  TrajectoryKind kind_;
  double duration_;
  Curve curve_;
};

/// Figure-eight lap of period T, repeated `laps` times, translated so p(0) = (0, 0, h).
ReferenceTrajectory figure_eight(double period, int laps = 1, double height = 1.0);

struct PolynomialOptions {
  double min_segment = 1.5;
  double max_segment = 4.0;
  double max_speed = 1.0;
  double height = 1.0;
  int max_attempts = 100;
};

/// Degree-5 segments joined with continuous derivatives up to order 3.
ReferenceTrajectory random_polynomial(Rng& rng, double total_duration, const PolynomialOptions& opts = {});

/// Solve the quintic matching (p, v, a, j) at tau = 0 and (p, v) at tau = T.
PolynomialSegment quintic_from_boundary(const Eigen::Matrix<double, 4, 3>& start, const Eigen::Matrix<double, 2, 3>& end,
                                        double duration);

struct PentagramOptions {
  double circumradius = 1.0;
  double height = 1.0;
};

/// Constant-speed tour of the five star vertices (every second pentagon
/// vertex), closed, with a straight lead-in from the origin to the first vertex.
ReferenceTrajectory pentagram(double speed, const PentagramOptions& opts = {});

struct ZigzagOptions {
  double half_width = 1.0;
  double min_interval = 1.0;
  double max_interval = 1.5;
  double max_speed = 2.0;
  double height = 1.0;
  int max_attempts = 100;
};

/// Random waypoints in [-w, w]^2 joined by straight lines, starting at the origin.
ReferenceTrajectory zigzag(Rng& rng, double total_duration, const ZigzagOptions& opts = {});

/// Positions at t + i * spacing for i = 1..count as a count x 3 matrix.
Eigen::Matrix<double, Eigen::Dynamic, 3> sample_window(const ReferenceTrajectory& traj, double t, int count = 10,
                                                       double spacing = 0.05);

/// Max of |v| over a uniform grid with spacing `dt`.
double max_sampled_speed(const ReferenceTrajectory& traj, double dt = 1e-3);

}  // namespace quadtrack
