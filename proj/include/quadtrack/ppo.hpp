#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "quadtrack/env.hpp"
#include "quadtrack/policy.hpp"

namespace quadtrack {

struct TrainConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_eps = 0.2;
  double learning_rate = 3e-4;
  int update_epochs = 4;
  int minibatches = 4;
  int n_envs = 1024;
  int horizon = 64;
  int iterations = 15000;  // one iteration = collect + update
  double entropy_coef = 0.0;
  double value_coef = 0.5;
  double max_grad_norm = 1.0;
  std::uint64_t seed = 1;
  int checkpoint_every = 100;
  int workers = 0;  // 0 = hardware concurrency
  bool log_wall_time = true;
  NetworkConfig network;

  void validate() const;
  int batch_size() const { return n_envs * horizon; }
};

/// One collection round. Sample (t, e) lives in column t * n_envs + e of the
/// observation/action matrices and at (t, e) of the per-step matrices.
struct RolloutBatch {
  int horizon = 0;
  int n_envs = 0;
  Eigen::MatrixXf actor_obs;   // normalized at collection time
  Eigen::MatrixXf critic_obs;
  Eigen::MatrixXf actions;     // unclamped Gaussian samples
  Eigen::RowVectorXf log_probs;
  Eigen::MatrixXd rewards;     // includes gamma * V(s_T) at truncations
  Eigen::MatrixXd values;
  Eigen::MatrixXd dones;
  Eigen::VectorXd bootstrap;   // V(s_H) for the state after the last step

  // logging only
  double reward_sum = 0, task_sum = 0, smooth_sum = 0;
  int episodes = 0, crashes = 0;
  double episode_length_sum = 0;
  double episode_return_sum = 0;
};

struct GaeResult {
  Eigen::MatrixXd advantages;
  Eigen::MatrixXd returns;
};

/// delta_t = r_t + gamma V_{t+1} (1 - d_t) - V_t;  A_t = delta_t + gamma lambda (1 - d_t) A_{t+1}.
/// Row t of every matrix is one step across all environments.
GaeResult compute_gae(const Eigen::MatrixXd& rewards, const Eigen::MatrixXd& values, const Eigen::MatrixXd& dones,
                      const Eigen::VectorXd& bootstrap, double gamma, double lambda);

template <typename Scalar>
struct Minibatch {
  MatrixX<Scalar> actor_obs;
  MatrixX<Scalar> critic_obs;
  MatrixX<Scalar> actions;
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> old_log_probs;
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> advantages;
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> value_targets;  // normalized returns
};

struct LossConfig {
  double clip_eps = 0.2;
  double entropy_coef = 0.0;
  double value_coef = 0.5;
};

template <typename Scalar>
struct ActorCriticGrad {
  VectorX<Scalar> actor_encoder, policy, critic_encoder, value;

  explicit ActorCriticGrad(const ActorCritic<Scalar>& net)
      : actor_encoder(VectorX<Scalar>::Zero(net.actor_encoder.param_count())),
        policy(VectorX<Scalar>::Zero(net.policy.params.size())),
        critic_encoder(VectorX<Scalar>::Zero(net.critic_encoder.param_count())),
        value(VectorX<Scalar>::Zero(net.value.params.size())) {}
};

template <typename Scalar>
struct LossResult {
  Scalar policy_loss = 0;
  Scalar value_loss = 0;
  Scalar entropy = 0;
  Scalar total = 0;
  Scalar approx_kl = 0;
  Scalar clip_fraction = 0;
  std::optional<ActorCriticGrad<Scalar>> grad;
};

/// total = -mean(min(rho A, clip(rho) A)) + c_v mean((V - target)^2) - c_e H.
template <typename Scalar>
LossResult<Scalar> ppo_loss(const ActorCritic<Scalar>& net, const Minibatch<Scalar>& mb, const LossConfig& cfg,
                            bool with_grad = true) {
  using Row = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
  const Eigen::Index n = mb.actions.cols();
  if (n == 0) throw ShapeError("empty minibatch");
  const Scalar inv_n = Scalar(1) / Scalar(n);
  const Scalar lo = Scalar(1 - cfg.clip_eps), hi = Scalar(1 + cfg.clip_eps);

  LossResult<Scalar> out;
  MlpCache<Scalar> actor_cache, critic_cache;
  const MatrixX<Scalar> latent = net.actor_encoder.forward(mb.actor_obs, with_grad ? &actor_cache : nullptr);
  const MatrixX<Scalar> mean = net.policy.mean(latent);
  const Row logp = net.policy.log_prob(mean, mb.actions);
  const Row log_ratio = logp - mb.old_log_probs;
  const Row ratio = log_ratio.array().exp().matrix();

  Row dlogp(n);
  Scalar surrogate = 0, kl = 0, clipped = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar a = mb.advantages[i];
    const Scalar unclipped = ratio[i] * a;
    const Scalar clipped_term = std::clamp(ratio[i], lo, hi) * a;
    if (unclipped <= clipped_term) {
      surrogate += unclipped;
      dlogp[i] = -inv_n * unclipped;  // d(rho A)/d logp = rho A
    } else {
      surrogate += clipped_term;
      dlogp[i] = 0;
    }
    if (ratio[i] < lo || ratio[i] > hi) clipped += 1;
    kl += (ratio[i] - 1) - log_ratio[i];
  }
  out.policy_loss = -surrogate * inv_n;
  out.approx_kl = kl * inv_n;
  out.clip_fraction = clipped * inv_n;
  out.entropy = net.policy.entropy();

  const MatrixX<Scalar> critic_latent = net.critic_encoder.forward(mb.critic_obs, with_grad ? &critic_cache : nullptr);
  const Row v = net.value.forward(critic_latent);
  const Row err = v - mb.value_targets;
  out.value_loss = err.squaredNorm() * inv_n;
  out.total = out.policy_loss + Scalar(cfg.value_coef) * out.value_loss - Scalar(cfg.entropy_coef) * out.entropy;

  if (with_grad) {
    ActorCriticGrad<Scalar> g(net);
    const MatrixX<Scalar> dlatent =
        net.policy.backward(latent, mean, mb.actions, dlogp, Scalar(-cfg.entropy_coef), g.policy);
    net.actor_encoder.backward(actor_cache, dlatent, g.actor_encoder);
    const Row dv = Scalar(2 * cfg.value_coef) * inv_n * err;
    const MatrixX<Scalar> dcritic = net.value.backward(critic_latent, dv, g.value);
    net.critic_encoder.backward(critic_cache, dcritic, g.critic_encoder);
    out.grad = std::move(g);
  }
  return out;
}

struct IterationMetrics {
  int iteration = 0;
  double mean_reward = 0;
  double mean_task_reward = 0;
  double mean_smooth_reward = 0;
  double policy_loss = 0;
  double value_loss = 0;
  double entropy = 0;
  double approx_kl = 0;
  double clip_fraction = 0;
  double actor_grad_norm = 0;
  double critic_grad_norm = 0;
  int episodes = 0;
  int crashes = 0;
  double mean_episode_length = 0;
  double mean_episode_return = 0;
  std::optional<double> wall_time;

  nlohmann::json to_json() const;
};

/// Parallel environments plus the learner; one `iterate()` is one collect +
/// update round. Deterministic for a fixed seed regardless of worker count.
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const EnvConfig& env_cfg, const Params& nominal);

  RolloutBatch collect_rollouts();
  IterationMetrics update(const RolloutBatch& batch);
  IterationMetrics iterate();

  const ActorCritic<float>& net() const { return net_; }
  ActorCritic<float>& net() { return net_; }
  const TrainConfig& config() const { return cfg_; }
  const EnvConfig& env_config() const { return env_cfg_; }
  const Params& nominal() const { return nominal_; }
  int iteration() const { return iteration_; }
  std::vector<QuadrotorEnv>& envs() { return envs_; }

 private:
  TrainConfig cfg_;
  EnvConfig env_cfg_;
  Params nominal_;
  std::vector<QuadrotorEnv> envs_;
  ActorCritic<float> net_;
  Adam<float> actor_encoder_opt_, policy_opt_, critic_encoder_opt_, value_opt_;
  Rng rng_;
  int iteration_ = 0;
  std::vector<double> episode_returns_;
  std::vector<int> episode_steps_;
  int workers_ = 1;
};

struct TrainResult {
  ActorCritic<float> net;
  std::vector<IterationMetrics> metrics;
  std::filesystem::path final_checkpoint;
};

using IterationCallback = std::function<void(const IterationMetrics&, const Trainer&)>;

/// Runs cfg.iterations rounds, appending one JSON line per round to
/// out_dir/metrics.jsonl and writing checkpoints. A non-finite loss restores
/// the last good parameters, saves them and throws TrainingDiverged.
TrainResult train(const TrainConfig& cfg, const EnvConfig& env_cfg, const Params& nominal,
                  const std::filesystem::path& out_dir, const IterationCallback& callback = {});

}  // namespace quadtrack
