#include "quadtrack/trajectory.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace quadtrack {

namespace {

// d^order/dtau^order of tau^k, as the coefficient row for a quintic.
Eigen::Matrix<double, 1, 6> monomial_row(double tau, int order) {
  Eigen::Matrix<double, 1, 6> row = Eigen::Matrix<double, 1, 6>::Zero();
  for (int k = order; k < 6; ++k) {
    double factor = 1.0;
    for (int m = 0; m < order; ++m) factor *= static_cast<double>(k - m);
    row[k] = factor * std::pow(tau, k - order);
  }
  return row;
}

// Quintic through (p, v, a) at both ends of [0, T].
Eigen::Matrix<double, 6, 1> quintic_pva(const Eigen::Vector3d& start, const Eigen::Vector3d& end, double T) {
  Eigen::Matrix<double, 6, 6> A;
  A.row(0) = monomial_row(0, 0);
  A.row(1) = monomial_row(0, 1);
  A.row(2) = monomial_row(0, 2);
  A.row(3) = monomial_row(T, 0);
  A.row(4) = monomial_row(T, 1);
  A.row(5) = monomial_row(T, 2);
  Eigen::Matrix<double, 6, 1> b;
  b << start, end;
  return A.partialPivLu().solve(b);
}

double jerk_at(const Eigen::Matrix<double, 6, 1>& c, double tau) { return monomial_row(tau, 3).dot(c.transpose()); }

Eigen::Vector2d random_disk(Rng& rng, double radius) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double angle = 2.0 * kPi * unit(rng);
  const double r = radius * unit(rng);
  return {r * std::cos(angle), r * std::sin(angle)};
}

double segment_max_speed(const PolynomialSegment& seg, double dt) {
  double best = 0.0;
  const int n = std::max(2, static_cast<int>(std::ceil(seg.duration / dt)) + 1);
  for (int i = 0; i < n; ++i) {
    const double tau = std::min(seg.duration, i * dt);
    best = std::max(best, seg.derivative(tau, 1).head<2>().norm());
  }
  return best;
}

// Builds one axis of the spline: knot positions/velocities are given, interior
// knot accelerations are solved so jerk is continuous; end accelerations are 0.
std::vector<Eigen::Matrix<double, 6, 1>> solve_axis(const std::vector<double>& durations, const Eigen::VectorXd& pos,
                                                     const Eigen::VectorXd& vel) {
  const int segments = static_cast<int>(durations.size());
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(segments + 1);

  auto segment = [&](int s, double a0, double a1) {
    return quintic_pva({pos[s], vel[s], a0}, {pos[s + 1], vel[s + 1], a1}, durations[s]);
  };

  const int interior = segments - 1;
  if (interior > 0) {
    // Jerk is affine in the end accelerations; the response is read off the
    // unit-acceleration solutions.
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(interior, interior);
    Eigen::VectorXd rhs(interior);
    for (int i = 0; i < interior; ++i) {
      const int k = i + 1;
      const double Tl = durations[k - 1];
      const auto left0 = segment(k - 1, 0, 0);
      const auto right0 = segment(k, 0, 0);
      const double left_base = jerk_at(left0, Tl);
      const double right_base = jerk_at(right0, 0);
      rhs[i] = right_base - left_base;
      M(i, i) = (jerk_at(segment(k - 1, 0, 1), Tl) - left_base) - (jerk_at(segment(k, 1, 0), 0) - right_base);
      if (i > 0) M(i, i - 1) = jerk_at(segment(k - 1, 1, 0), Tl) - left_base;
      if (i + 1 < interior) M(i, i + 1) = -(jerk_at(segment(k, 0, 1), 0) - right_base);
    }
    acc.segment(1, interior) = M.partialPivLu().solve(rhs);
  }

  std::vector<Eigen::Matrix<double, 6, 1>> out;
  out.reserve(segments);
  for (int s = 0; s < segments; ++s) out.push_back(segment(s, acc[s], acc[s + 1]));
  return out;
}

ReferenceTrajectory make_polynomial(const std::vector<PolynomialSegment>& segments) {
  PiecewisePolynomial curve;
  double t = 0.0;
  for (const auto& seg : segments) {
    curve.start_times.push_back(t);
    curve.segments.push_back(seg);
    t += seg.duration;
  }
  return ReferenceTrajectory(TrajectoryKind::Polynomial, t, std::move(curve));
}

}  // namespace

std::string_view to_string(TrajectoryKind kind) {
  switch (kind) {
    case TrajectoryKind::FigureEight: return "figure_eight";
    case TrajectoryKind::Polynomial: return "polynomial";
    case TrajectoryKind::Pentagram: return "pentagram";
    case TrajectoryKind::Zigzag: return "zigzag";
  }
  return "unknown";
}

TrajectoryKind trajectory_kind_from_string(std::string_view name) {
  if (name == "figure_eight" || name == "figure-eight" || name == "figure8") return TrajectoryKind::FigureEight;
  if (name == "polynomial" || name == "poly") return TrajectoryKind::Polynomial;
  if (name == "pentagram") return TrajectoryKind::Pentagram;
  if (name == "zigzag") return TrajectoryKind::Zigzag;
  throw ConfigError("unknown trajectory kind: " + std::string(name));
}

Eigen::Vector3d PolynomialSegment::derivative(double tau, int order) const {
  if (order > 5) return Eigen::Vector3d::Zero();
  // Horner on the differentiated coefficients.
  Eigen::Vector3d acc = Eigen::Vector3d::Zero();
  for (int k = 5; k >= order; --k) {
    double factor = 1.0;
    for (int m = 0; m < order; ++m) factor *= static_cast<double>(k - m);
    acc = acc * tau + factor * coeffs.row(k).transpose();
  }
  return acc;
}

ReferenceTrajectory::ReferenceTrajectory(TrajectoryKind kind, double duration, Curve curve)
    : kind_(kind), duration_(duration), curve_(std::move(curve)) {
  if (!(duration >= 0.0) || !std::isfinite(duration)) throw ConfigError("trajectory duration must be finite and >= 0");
}

Eigen::Vector3d ReferenceTrajectory::position(double t) const { return derivative(t, 0); }

Eigen::Vector3d ReferenceTrajectory::derivative(double t, int order) const {
  if (t < 0.0 || std::isnan(t)) throw QueryError("trajectory queried at negative time");
  if (order < 0) throw QueryError("negative derivative order");
  t = std::min(t, duration_);
  const bool past_end = t >= duration_;

  return std::visit(
      [&](const auto& c) -> Eigen::Vector3d {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, FigureEightCurve>) {
          if (past_end && order > 0) return Eigen::Vector3d::Zero();
          const double w = 2.0 * kPi / c.period;
          // derivatives of cos(w t) and sin(2 w t) / 2
          auto dcos = [&](int n) {
            const double s = std::pow(w, n);
            switch (n % 4) {
              case 0: return s * std::cos(w * t);
              case 1: return -s * std::sin(w * t);
              case 2: return -s * std::cos(w * t);
              default: return s * std::sin(w * t);
            }
          };
          auto dsin = [&](int n) {
            const double s = std::pow(2.0 * w, n) / 2.0;
            switch (n % 4) {
              case 0: return s * std::sin(2.0 * w * t);
              case 1: return s * std::cos(2.0 * w * t);
              case 2: return -s * std::sin(2.0 * w * t);
              default: return -s * std::cos(2.0 * w * t);
            }
          };
          if (order == 0) return Eigen::Vector3d(dcos(0), dsin(0), c.height) + c.offset;
          return {dcos(order), dsin(order), 0.0};
        } else if constexpr (std::is_same_v<T, PiecewisePolynomial>) {
          if (c.segments.empty()) throw QueryError("empty polynomial trajectory");
          if (past_end && order > 0) return Eigen::Vector3d::Zero();
          auto it = std::upper_bound(c.start_times.begin(), c.start_times.end(), t);
          const std::size_t idx = it == c.start_times.begin() ? 0 : static_cast<std::size_t>(it - c.start_times.begin()) - 1;
          const auto& seg = c.segments[idx];
          const double tau = std::min(t - c.start_times[idx], seg.duration);
          return seg.derivative(tau, order);
        } else {
          if (c.waypoints.empty()) throw QueryError("empty waypoint trajectory");
          if (c.waypoints.size() == 1) return order == 0 ? c.waypoints.front() : Eigen::Vector3d::Zero();
          if (past_end) return order == 0 ? c.waypoints.back() : Eigen::Vector3d::Zero();
          auto it = std::upper_bound(c.times.begin(), c.times.end(), t);
          const std::size_t i = static_cast<std::size_t>(it - c.times.begin()) - 1;
          const double span = c.times[i + 1] - c.times[i];
          const Eigen::Vector3d delta = c.waypoints[i + 1] - c.waypoints[i];
          if (order == 0) return c.waypoints[i] + delta * ((t - c.times[i]) / span);
          if (order == 1) return delta / span;
          return Eigen::Vector3d::Zero();
        }
      },
      curve_);
}

nlohmann::json ReferenceTrajectory::to_json() const {
  nlohmann::json j;
  j["kind"] = std::string(to_string(kind_));
  j["duration"] = duration_;
  std::visit(
      [&](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, FigureEightCurve>) {
          j["period"] = c.period;
          j["height"] = c.height;
          j["offset"] = {c.offset.x(), c.offset.y(), c.offset.z()};
        } else if constexpr (std::is_same_v<T, PiecewisePolynomial>) {
          nlohmann::json segs = nlohmann::json::array();
          for (const auto& s : c.segments) {
            nlohmann::json cs = nlohmann::json::array();
            for (int k = 0; k < 6; ++k) cs.push_back({s.coeffs(k, 0), s.coeffs(k, 1), s.coeffs(k, 2)});
            segs.push_back({{"duration", s.duration}, {"coeffs", cs}});
          }
          j["segments"] = segs;
        } else {
          nlohmann::json wps = nlohmann::json::array();
          for (const auto& w : c.waypoints) wps.push_back({w.x(), w.y(), w.z()});
          j["waypoints"] = wps;
          j["times"] = c.times;
        }
      },
      curve_);
  return j;
}

ReferenceTrajectory ReferenceTrajectory::from_json(const nlohmann::json& j) {
  try {
    const TrajectoryKind kind = trajectory_kind_from_string(j.at("kind").get<std::string>());
    const double duration = j.at("duration").get<double>();
    if (kind == TrajectoryKind::FigureEight) {
      FigureEightCurve c;
      c.period = j.at("period").get<double>();
      c.height = j.at("height").get<double>();
      const auto off = j.at("offset").get<std::vector<double>>();
      c.offset = Eigen::Vector3d(off.at(0), off.at(1), off.at(2));
      return ReferenceTrajectory(kind, duration, c);
    }
    if (kind == TrajectoryKind::Polynomial) {
      PiecewisePolynomial c;
      double t = 0.0;
      for (const auto& s : j.at("segments")) {
        PolynomialSegment seg;
        seg.duration = s.at("duration").get<double>();
        const auto& cs = s.at("coeffs");
        for (int k = 0; k < 6; ++k) {
          for (int a = 0; a < 3; ++a) seg.coeffs(k, a) = cs.at(k).at(a).get<double>();
        }
        c.start_times.push_back(t);
        c.segments.push_back(seg);
        t += seg.duration;
      }
      return ReferenceTrajectory(kind, duration, std::move(c));
    }
    PiecewiseLinear c;
    for (const auto& w : j.at("waypoints")) c.waypoints.emplace_back(w.at(0).get<double>(), w.at(1).get<double>(), w.at(2).get<double>());
    c.times = j.at("times").get<std::vector<double>>();
    if (c.times.size() != c.waypoints.size()) throw FormatError("waypoint/time count mismatch");
    return ReferenceTrajectory(kind, duration, std::move(c));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed trajectory json: ") + e.what());
  }
}

ReferenceTrajectory figure_eight(double period, int laps, double height) {
  if (!(period > 0.0)) throw ConfigError("figure-eight period must be positive");
  if (laps < 1) throw ConfigError("figure-eight needs at least one lap");
  FigureEightCurve c;
  c.period = period;
  c.height = height;
  c.offset = Eigen::Vector3d(-1.0, 0.0, 0.0);
  return ReferenceTrajectory(TrajectoryKind::FigureEight, period * laps, c);
}

PolynomialSegment quintic_from_boundary(const Eigen::Matrix<double, 4, 3>& start, const Eigen::Matrix<double, 2, 3>& end,
                                        double duration) {
  if (!(duration > 0.0)) throw ConfigError("segment duration must be positive");
  Eigen::Matrix<double, 6, 6> A;
  for (int order = 0; order < 4; ++order) A.row(order) = monomial_row(0.0, order);
  A.row(4) = monomial_row(duration, 0);
  A.row(5) = monomial_row(duration, 1);
  Eigen::Matrix<double, 6, 3> b;
  b << start, end;
  PolynomialSegment seg;
  seg.duration = duration;
  seg.coeffs = A.fullPivLu().solve(b);
  return seg;
}

ReferenceTrajectory random_polynomial(Rng& rng, double total_duration, const PolynomialOptions& opts) {
  if (!(total_duration > 0.0)) throw ConfigError("polynomial duration must be positive");
  std::uniform_real_distribution<double> seg_len(opts.min_segment, opts.max_segment);
  std::vector<double> durations;
  double t = 0.0;
  while (t < total_duration) {
    durations.push_back(seg_len(rng));
    t += durations.back();
  }
  const int segments = static_cast<int>(durations.size());
  const double target = 0.98 * opts.max_speed;

  std::vector<PolynomialSegment> best;
  double best_speed = 0.0;
  for (int attempt = 0; attempt < opts.max_attempts; ++attempt) {
    Eigen::MatrixXd pos = Eigen::MatrixXd::Zero(segments + 1, 2);
    Eigen::MatrixXd vel = Eigen::MatrixXd::Zero(segments + 1, 2);
    for (int k = 1; k <= segments; ++k) {
      pos.row(k) = pos.row(k - 1) + random_disk(rng, 0.6 * opts.max_speed * durations[k - 1]).transpose();
      vel.row(k) = random_disk(rng, 0.5 * opts.max_speed).transpose();
    }
    std::vector<PolynomialSegment> segs(segments);
    for (int axis = 0; axis < 2; ++axis) {
      const auto coeffs = solve_axis(durations, pos.col(axis), vel.col(axis));
      for (int s = 0; s < segments; ++s) {
        segs[s].duration = durations[s];
        segs[s].coeffs.col(axis) = coeffs[s];
      }
    }
    for (auto& s : segs) s.coeffs(0, 2) = opts.height;

    double speed = 0.0;
    for (const auto& s : segs) speed = std::max(speed, segment_max_speed(s, 1e-3));
    if (speed <= target) return make_polynomial(segs);
    if (best.empty() || speed < best_speed) {
      best = std::move(segs);
      best_speed = speed;
    }
  }

  // Uniform time stretch keeps every junction C^3 while scaling speed by 1/s.
  const double s = best_speed / target;
  for (auto& seg : best) {
    seg.duration *= s;
    for (int k = 1; k < 6; ++k) seg.coeffs.row(k) /= std::pow(s, k);
  }
  return make_polynomial(best);
}

ReferenceTrajectory pentagram(double speed, const PentagramOptions& opts) {
  if (!(speed > 0.0)) throw ConfigError("pentagram speed must be positive");
  if (!(opts.circumradius > 0.0)) throw ConfigError("pentagram radius must be positive");
  PiecewiseLinear c;
  c.waypoints.emplace_back(0.0, 0.0, opts.height);
  c.times.push_back(0.0);
  // star order: every second vertex of the pentagon, back to the first
  for (int i = 0; i <= 5; ++i) {
    const int vertex = (2 * i) % 5;
    const double angle = kPi / 2.0 + 2.0 * kPi * vertex / 5.0;
    const Eigen::Vector3d p(opts.circumradius * std::cos(angle), opts.circumradius * std::sin(angle), opts.height);
    c.times.push_back(c.times.back() + (p - c.waypoints.back()).norm() / speed);
    c.waypoints.push_back(p);
  }
  const double duration = c.times.back();
  return ReferenceTrajectory(TrajectoryKind::Pentagram, duration, std::move(c));
}

ReferenceTrajectory zigzag(Rng& rng, double total_duration, const ZigzagOptions& opts) {
  if (!(total_duration > 0.0)) throw ConfigError("zigzag duration must be positive");
  std::uniform_real_distribution<double> coord(-opts.half_width, opts.half_width);
  std::uniform_real_distribution<double> interval(opts.min_interval, opts.max_interval);
  PiecewiseLinear c;
  c.waypoints.emplace_back(0.0, 0.0, opts.height);
  c.times.push_back(0.0);
  while (c.times.back() < total_duration) {
    const double dt = interval(rng);
    bool placed = false;
    for (int attempt = 0; attempt < opts.max_attempts && !placed; ++attempt) {
      const Eigen::Vector3d p(coord(rng), coord(rng), opts.height);
      if ((p - c.waypoints.back()).norm() / dt <= opts.max_speed) {
        c.waypoints.push_back(p);
        c.times.push_back(c.times.back() + dt);
        placed = true;
      }
    }
    if (!placed) throw GenerationError("zigzag waypoint rejection budget exhausted");
  }
  const double duration = c.times.back();
  return ReferenceTrajectory(TrajectoryKind::Zigzag, duration, std::move(c));
}

Eigen::Matrix<double, Eigen::Dynamic, 3> sample_window(const ReferenceTrajectory& traj, double t, int count,
                                                       double spacing) {
  if (t < 0.0) throw QueryError("window queried at negative time");
  if (count < 0) throw QueryError("negative window size");
  Eigen::Matrix<double, Eigen::Dynamic, 3> out(count, 3);
  for (int i = 0; i < count; ++i) out.row(i) = traj.position(t + (i + 1) * spacing).transpose();
  return out;
}

double max_sampled_speed(const ReferenceTrajectory& traj, double dt) {
  double best = 0.0;
  const int n = static_cast<int>(std::floor(traj.duration() / dt));
  for (int i = 0; i <= n; ++i) best = std::max(best, traj.velocity(i * dt).norm());
  return best;
}

}  // namespace quadtrack
