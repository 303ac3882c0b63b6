#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>

#include "quadtrack/common.hpp"
#include "quadtrack/nn.hpp"

namespace quadtrack {

struct NetworkConfig {
  int width = 256;
  LayerNormPlacement layer_norm = LayerNormPlacement::AfterFirst;
  double log_std_init = -1.2039728043259361;  // log(0.3)
  double encoder_gain = 1.4142135623730951;
  double policy_gain = 0.01;
  double value_gain = 1.0;
};

/// Per-feature running mean/variance (parallel-merge form, order-deterministic).
struct RunningMeanStd {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
  double count = 0;
  double clip = 10.0;

  RunningMeanStd() = default;
  explicit RunningMeanStd(Eigen::Index dim) : mean(Eigen::VectorXd::Zero(dim)), var(Eigen::VectorXd::Ones(dim)) {}

  /// Columns of `batch` are samples.
  void update(const Eigen::MatrixXd& batch);

  template <typename Scalar>
  MatrixX<Scalar> normalize(const MatrixX<Scalar>& x) const {
    if (x.rows() != mean.size()) throw ShapeError("normalizer width mismatch");
    const VectorX<Scalar> m = mean.cast<Scalar>();
    const VectorX<Scalar> inv = (var.array() + 1e-8).rsqrt().matrix().cast<Scalar>();
    MatrixX<Scalar> out = (x.colwise() - m).array().colwise() * inv.array();
    return out.cwiseMax(Scalar(-clip)).cwiseMin(Scalar(clip));
  }
};

/// Exponential moving statistics of value targets; the critic regresses on
/// normalized returns.
struct ValueNormalizer {
  double beta = 0.995;
  double running_mean = 0;
  double running_mean_sq = 0;
  double debias = 0;

  void update(const Eigen::VectorXd& targets);
  double mean() const { return debias > 0 ? running_mean / debias : 0.0; }
  double stddev() const {
    if (debias <= 0) return 1.0;
    const double m = mean();
    return std::sqrt(std::max(running_mean_sq / debias - m * m, 1e-4));
  }
  double normalize(double x) const { return (x - mean()) / stddev(); }
  double denormalize(double x) const { return x * stddev() + mean(); }
};

/// Separate actor and critic networks. Observations passed to the
/// `*_normalized` calls must already be normalized.
template <typename Scalar>
struct ActorCritic {
  using Matrix = MatrixX<Scalar>;
  using Row = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

  NetworkConfig config;
  Mlp<Scalar> actor_encoder;
  GaussianHead<Scalar> policy;
  Mlp<Scalar> critic_encoder;
  ValueHead<Scalar> value;
  RunningMeanStd actor_norm;
  RunningMeanStd critic_norm;
  ValueNormalizer value_norm;

  ActorCritic() = default;
  ActorCritic(int actor_dim, int critic_dim, const NetworkConfig& cfg = {})
      : config(cfg),
        actor_encoder(actor_dim, cfg.width, cfg.layer_norm),
        policy(cfg.width),
        critic_encoder(critic_dim, cfg.width, cfg.layer_norm),
        value(cfg.width),
        actor_norm(actor_dim),
        critic_norm(critic_dim) {}

  int actor_dim() const { return static_cast<int>(actor_encoder.input_dim()); }
  int critic_dim() const { return static_cast<int>(critic_encoder.input_dim()); }

  template <typename Gen>
  void initialize(Gen& rng) {
    actor_encoder.initialize(rng, config.encoder_gain);
    policy.initialize(rng, config.policy_gain, config.log_std_init);
    critic_encoder.initialize(rng, config.encoder_gain);
    value.initialize(rng, config.value_gain);
  }

  Matrix action_mean_normalized(const Matrix& obs) const { return policy.mean(actor_encoder.forward(obs)); }
  Row value_normalized(const Matrix& obs) const { return value.forward(critic_encoder.forward(obs)); }

  /// Deterministic action for raw observations (one per column).
  Matrix act(const Matrix& raw_obs) const { return action_mean_normalized(actor_norm.normalize(raw_obs)); }

  /// Value estimates in reward units for raw critic observations.
  Eigen::RowVectorXd evaluate(const Matrix& raw_obs) const {
    const Row v = value_normalized(critic_norm.normalize(raw_obs));
    Eigen::RowVectorXd out(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) out[i] = value_norm.denormalize(double(v[i]));
    return out;
  }

  template <typename Other>
  ActorCritic<Other> cast() const {
    ActorCritic<Other> out;
    out.config = config;
    out.actor_encoder = actor_encoder.template cast<Other>();
    out.policy = policy.template cast<Other>();
    out.critic_encoder = critic_encoder.template cast<Other>();
    out.value = value.template cast<Other>();
    out.actor_norm = actor_norm;
    out.critic_norm = critic_norm;
    out.value_norm = value_norm;
    return out;
  }
};

}  // namespace quadtrack
