#pragma once

#include <Eigen/Core>

#include <numbers>
#include <stdexcept>
#include <string>

namespace quadtrack {

template <typename Scalar>
using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Vector4 = Eigen::Matrix<Scalar, 4, 1>;
template <typename Scalar>
using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using Matrix4 = Eigen::Matrix<Scalar, 4, 4>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Standard gravity magnitude, m/s^2.
inline constexpr double kGravity = 9.81;
inline constexpr double kPi = std::numbers::pi;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or parameters (non-positive mass, singular allocation, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf or otherwise unusable simulator state.
class InvalidStateError : public Error {
 public:
  using Error::Error;
};

class SimulationDiverged : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class QueryError : public Error {
 public:
  using Error::Error;
};

/// Random generator could not satisfy its constraints within the attempt budget.
class GenerationError : public Error {
 public:
  using Error::Error;
};

/// Corrupt, truncated or unsupported checkpoint / data file.
class FormatError : public Error {
 public:
  using Error::Error;
};

class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

}  // namespace quadtrack
