#include "quadtrack/ppo.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <numeric>
#include <thread>

#include "quadtrack/checkpoint.hpp"
#include "quadtrack/config.hpp"
#include "quadtrack/logging.hpp"

namespace quadtrack {

namespace {

// Runs fn(begin, end) over contiguous slices of [0, n).
template <typename Fn>
void parallel_for(int n, int workers, Fn&& fn) {
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(workers - 1);
  const int chunk = (n + workers - 1) / workers;
  for (int w = 1; w < workers; ++w) {
    const int b = w * chunk, e = std::min(n, b + chunk);
    if (b < e) threads.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(0, std::min(n, chunk));
  for (auto& t : threads) t.join();
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.allFinite();
}

}  // namespace

void TrainConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("gae_lambda must lie in [0, 1]");
  if (!(clip_eps > 0.0)) throw ConfigError("clip_eps must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (update_epochs < 1) throw ConfigError("update_epochs must be >= 1");
  if (minibatches < 1) throw ConfigError("minibatches must be >= 1");
  if (n_envs < 1 || horizon < 1) throw ConfigError("n_envs and horizon must be >= 1");
  if (batch_size() < minibatches) throw ConfigError("batch size must be >= minibatch count");
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (entropy_coef < 0.0 || value_coef < 0.0 || max_grad_norm < 0.0) {
    throw ConfigError("loss coefficients and grad norm must be >= 0");
  }
  if (checkpoint_every < 0 || workers < 0) throw ConfigError("checkpoint_every and workers must be >= 0");
  if (network.width < 1) throw ConfigError("network width must be positive");
}

GaeResult compute_gae(const Eigen::MatrixXd& rewards, const Eigen::MatrixXd& values, const Eigen::MatrixXd& dones,
                      const Eigen::VectorXd& bootstrap, double gamma, double lambda) {
  const Eigen::Index H = rewards.rows(), N = rewards.cols();
  if (values.rows() != H || values.cols() != N || dones.rows() != H || dones.cols() != N || bootstrap.size() != N) {
    throw ShapeError("GAE inputs have inconsistent shapes");
  }
  GaeResult out{Eigen::MatrixXd::Zero(H, N), Eigen::MatrixXd::Zero(H, N)};
  for (Eigen::Index e = 0; e < N; ++e) {
    double next_adv = 0.0;
    double next_value = bootstrap[e];
    for (Eigen::Index t = H - 1; t >= 0; --t) {
      const double live = 1.0 - dones(t, e);
      const double delta = rewards(t, e) + gamma * next_value * live - values(t, e);
      next_adv = delta + gamma * lambda * live * next_adv;
      out.advantages(t, e) = next_adv;
      next_value = values(t, e);
    }
  }
  out.returns = out.advantages + values;
  return out;
}

nlohmann::json IterationMetrics::to_json() const {
  nlohmann::json j = {{"iteration", iteration},
                      {"mean_reward", mean_reward},
                      {"mean_task_reward", mean_task_reward},
                      {"mean_smooth_reward", mean_smooth_reward},
                      {"policy_loss", policy_loss},
                      {"value_loss", value_loss},
                      {"entropy", entropy},
                      {"approx_kl", approx_kl},
                      {"clip_fraction", clip_fraction},
                      {"actor_grad_norm", actor_grad_norm},
                      {"critic_grad_norm", critic_grad_norm},
                      {"episodes", episodes},
                      {"crashes", crashes},
                      {"mean_episode_length", mean_episode_length},
                      {"mean_episode_return", mean_episode_return}};
  if (wall_time) j["wall_time"] = *wall_time;
  return j;
}

Trainer::Trainer(const TrainConfig& cfg, const EnvConfig& env_cfg, const Params& nominal)
    : cfg_(cfg), env_cfg_(env_cfg), nominal_(nominal), rng_(make_rng(cfg.seed, 0xC0FFEE)) {
  cfg_.validate();
  env_cfg_.validate();
  nominal_.validate();
  envs_.reserve(cfg_.n_envs);
  for (int e = 0; e < cfg_.n_envs; ++e) {
    // env seeds are derived from (seed, index) so every env has its own stream
    std::seed_seq seq{static_cast<std::uint32_t>(cfg_.seed), static_cast<std::uint32_t>(cfg_.seed >> 32),
                      static_cast<std::uint32_t>(e), 0x5EEDu};
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    envs_.emplace_back(env_cfg_, nominal_, (std::uint64_t(words[0]) << 32) | words[1]);
  }
  net_ = ActorCritic<float>(env_cfg_.actor_dim(), env_cfg_.critic_dim(), cfg_.network);
  Rng init_rng = make_rng(cfg_.seed, 0x1417);
  net_.initialize(init_rng);
  for (auto* opt : {&actor_encoder_opt_, &policy_opt_, &critic_encoder_opt_, &value_opt_}) opt->lr = cfg_.learning_rate;
  episode_returns_.assign(cfg_.n_envs, 0.0);
  episode_steps_.assign(cfg_.n_envs, 0);
  workers_ = cfg_.workers > 0 ? cfg_.workers : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

RolloutBatch Trainer::collect_rollouts() {
  const int H = cfg_.horizon, N = cfg_.n_envs;
  const int da = env_cfg_.actor_dim(), dc = env_cfg_.critic_dim();
  RolloutBatch b;
  b.horizon = H;
  b.n_envs = N;
  b.actor_obs.resize(da, Eigen::Index(H) * N);
  b.critic_obs.resize(dc, Eigen::Index(H) * N);
  b.actions.resize(4, Eigen::Index(H) * N);
  b.log_probs.resize(Eigen::Index(H) * N);
  b.rewards = Eigen::MatrixXd::Zero(H, N);
  b.values = Eigen::MatrixXd::Zero(H, N);
  b.dones = Eigen::MatrixXd::Zero(H, N);

  Eigen::MatrixXd raw_a(da, N), raw_c(dc, N), terminal(dc, N);
  std::vector<StepResult> results(N);
  std::normal_distribution<double> normal(0.0, 1.0);

  auto gather_obs = [&] {
    parallel_for(N, workers_, [&](int begin, int end) {
      for (int e = begin; e < end; ++e) {
        const Observation o = envs_[e].observe();
        raw_a.col(e) = o.actor;
        raw_c.col(e) = o.critic;
      }
    });
  };

  for (int t = 0; t < H; ++t) {
    gather_obs();
    net_.actor_norm.update(raw_a);
    net_.critic_norm.update(raw_c);
    const Eigen::MatrixXf obs_a = net_.actor_norm.normalize(raw_a).cast<float>();
    const Eigen::MatrixXf obs_c = net_.critic_norm.normalize(raw_c).cast<float>();
    const Eigen::Index col0 = Eigen::Index(t) * N;
    b.actor_obs.middleCols(col0, N) = obs_a;
    b.critic_obs.middleCols(col0, N) = obs_c;

    const Eigen::MatrixXf mean = net_.action_mean_normalized(obs_a);
    const Eigen::RowVectorXf v = net_.value_normalized(obs_c);
    const Eigen::VectorXf stddev = net_.policy.log_std().array().exp();
    Eigen::MatrixXf actions(4, N);
    for (int e = 0; e < N; ++e) {
      for (int i = 0; i < 4; ++i) actions(i, e) = mean(i, e) + stddev[i] * float(normal(rng_));
      b.values(t, e) = net_.value_norm.denormalize(v[e]);
    }
    b.actions.middleCols(col0, N) = actions;
    b.log_probs.segment(col0, N) = net_.policy.log_prob(mean, actions);

    std::vector<char> truncated(N, 0);
    parallel_for(N, workers_, [&](int begin, int end) {
      for (int e = begin; e < end; ++e) {
        results[e] = envs_[e].step(actions.col(e).cast<double>());
        if (results[e].status == EpisodeStatus::TimeLimit) {
          terminal.col(e) = envs_[e].observe().critic;
          truncated[e] = 1;
        }
        if (results[e].status != EpisodeStatus::Running) envs_[e].reset();
      }
    });

    std::vector<int> trunc_idx;
    for (int e = 0; e < N; ++e) {
      const StepResult& r = results[e];
      b.rewards(t, e) = r.reward.total;
      b.reward_sum += r.reward.total;
      b.task_sum += r.reward.task;
      b.smooth_sum += r.reward.smooth;
      episode_returns_[e] += r.reward.total;
      ++episode_steps_[e];
      if (r.status != EpisodeStatus::Running) {
        b.dones(t, e) = 1.0;
        ++b.episodes;
        if (r.status == EpisodeStatus::Crashed) ++b.crashes;
        b.episode_length_sum += episode_steps_[e];
        b.episode_return_sum += episode_returns_[e];
        episode_returns_[e] = 0.0;
        episode_steps_[e] = 0;
      }
      if (truncated[e]) trunc_idx.push_back(e);
    }
    if (!trunc_idx.empty()) {
      Eigen::MatrixXd tobs(dc, trunc_idx.size());
      for (std::size_t k = 0; k < trunc_idx.size(); ++k) tobs.col(k) = terminal.col(trunc_idx[k]);
      const Eigen::RowVectorXd tv = net_.evaluate(tobs.cast<float>());
      for (std::size_t k = 0; k < trunc_idx.size(); ++k) b.rewards(t, trunc_idx[k]) += cfg_.gamma * tv[k];
    }
  }

  gather_obs();
  b.bootstrap = net_.evaluate(raw_c.cast<float>()).transpose();
  return b;
}

IterationMetrics Trainer::update(const RolloutBatch& b) {
  const int H = b.horizon, N = b.n_envs;
  const Eigen::Index M = Eigen::Index(H) * N;
  const GaeResult gae = compute_gae(b.rewards, b.values, b.dones, b.bootstrap, cfg_.gamma, cfg_.gae_lambda);

  Eigen::VectorXd adv(M), ret(M);
  for (int t = 0; t < H; ++t) {
    for (int e = 0; e < N; ++e) {
      adv[Eigen::Index(t) * N + e] = gae.advantages(t, e);
      ret[Eigen::Index(t) * N + e] = gae.returns(t, e);
    }
  }
  net_.value_norm.update(ret);
  const double adv_mean = adv.mean();
  const double adv_std = std::sqrt((adv.array() - adv_mean).square().mean());
  const Eigen::RowVectorXf adv_n = ((adv.array() - adv_mean) / (adv_std + 1e-8)).cast<float>().transpose();
  Eigen::RowVectorXf target_n(M);
  for (Eigen::Index i = 0; i < M; ++i) target_n[i] = float(net_.value_norm.normalize(ret[i]));

  const LossConfig lcfg{cfg_.clip_eps, cfg_.entropy_coef, cfg_.value_coef};
  std::vector<Eigen::Index> order(M);
  std::iota(order.begin(), order.end(), 0);
  const Eigen::Index mb_size = M / cfg_.minibatches;

  IterationMetrics m;
  int updates = 0;
  for (int epoch = 0; epoch < cfg_.update_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng_);
    for (int k = 0; k < cfg_.minibatches; ++k) {
      const Eigen::Index begin = k * mb_size;
      const Eigen::Index size = k + 1 == cfg_.minibatches ? M - begin : mb_size;
      Minibatch<float> mb;
      mb.actor_obs.resize(b.actor_obs.rows(), size);
      mb.critic_obs.resize(b.critic_obs.rows(), size);
      mb.actions.resize(4, size);
      mb.old_log_probs.resize(size);
      mb.advantages.resize(size);
      mb.value_targets.resize(size);
      for (Eigen::Index i = 0; i < size; ++i) {
        const Eigen::Index s = order[begin + i];
        mb.actor_obs.col(i) = b.actor_obs.col(s);
        mb.critic_obs.col(i) = b.critic_obs.col(s);
        mb.actions.col(i) = b.actions.col(s);
        mb.old_log_probs[i] = b.log_probs[s];
        mb.advantages[i] = adv_n[s];
        mb.value_targets[i] = target_n[s];
      }
      LossResult<float> loss = ppo_loss(net_, mb, lcfg);
      auto& g = *loss.grad;
      if (!std::isfinite(loss.total) || !all_finite(g.actor_encoder) || !all_finite(g.policy) ||
          !all_finite(g.critic_encoder) || !all_finite(g.value)) {
        throw TrainingDiverged("non-finite loss or gradient at iteration " + std::to_string(iteration_ + 1));
      }
      const float max_norm = float(cfg_.max_grad_norm);
      const float actor_norm = std::sqrt(g.actor_encoder.squaredNorm() + g.policy.squaredNorm());
      const float critic_norm = std::sqrt(g.critic_encoder.squaredNorm() + g.value.squaredNorm());
      if (max_norm > 0 && actor_norm > max_norm) {
        const float s = max_norm / (actor_norm + 1e-6f);
        g.actor_encoder *= s;
        g.policy *= s;
      }
      if (max_norm > 0 && critic_norm > max_norm) {
        const float s = max_norm / (critic_norm + 1e-6f);
        g.critic_encoder *= s;
        g.value *= s;
      }
      actor_encoder_opt_.step(net_.actor_encoder.params, g.actor_encoder);
      policy_opt_.step(net_.policy.params, g.policy);
      critic_encoder_opt_.step(net_.critic_encoder.params, g.critic_encoder);
      value_opt_.step(net_.value.params, g.value);

      m.policy_loss += loss.policy_loss;
      m.value_loss += loss.value_loss;
      m.entropy += loss.entropy;
      m.approx_kl += loss.approx_kl;
      m.clip_fraction += loss.clip_fraction;
      m.actor_grad_norm += actor_norm;
      m.critic_grad_norm += critic_norm;
      ++updates;
    }
  }
  for (double* x : {&m.policy_loss, &m.value_loss, &m.entropy, &m.approx_kl, &m.clip_fraction, &m.actor_grad_norm,
                    &m.critic_grad_norm}) {
    *x /= updates;
  }
  m.mean_reward = b.reward_sum / double(M);
  m.mean_task_reward = b.task_sum / double(M);
  m.mean_smooth_reward = b.smooth_sum / double(M);
  m.episodes = b.episodes;
  m.crashes = b.crashes;
  m.mean_episode_return = b.episodes ? b.episode_return_sum / b.episodes : 0.0;
  m.mean_episode_length = b.episodes ? b.episode_length_sum / b.episodes : 0.0;
  return m;
}

IterationMetrics Trainer::iterate() {
  const auto t0 = std::chrono::steady_clock::now();
  const RolloutBatch batch = collect_rollouts();
  const auto t1 = std::chrono::steady_clock::now();
  IterationMetrics m = update(batch);
  const auto t2 = std::chrono::steady_clock::now();
  log_debug("rollout " + std::to_string(std::chrono::duration<double>(t1 - t0).count()) + " s, update " +
            std::to_string(std::chrono::duration<double>(t2 - t1).count()) + " s");
  m.iteration = ++iteration_;
  return m;
}

TrainResult train(const TrainConfig& cfg, const EnvConfig& env_cfg, const Params& nominal,
                  const std::filesystem::path& out_dir, const IterationCallback& callback) {
  std::filesystem::create_directories(out_dir);
  Trainer trainer(cfg, env_cfg, nominal);
  const RunConfig run{cfg, env_cfg, nominal};
  {
    std::ofstream cfg_out(out_dir / "config.json");
    cfg_out << to_json(run).dump(2) << "\n";
  }
  std::ofstream metrics_out(out_dir / "metrics.jsonl", std::ios::trunc);
  if (!metrics_out) throw Error("cannot write " + (out_dir / "metrics.jsonl").string());

  auto checkpoint = [&](const ActorCritic<float>& net, int iteration) {
    Checkpoint c;
    c.net = net;
    c.metadata = {{"run", to_json(run)}, {"iteration", iteration}};
    return c;
  };

  TrainResult result;
  const auto start = std::chrono::steady_clock::now();
  ActorCritic<float> last_good = trainer.net();
  for (int it = 0; it < cfg.iterations; ++it) {
    IterationMetrics m;
    try {
      m = trainer.iterate();
    } catch (const TrainingDiverged& e) {
      const auto path = out_dir / "last_good.ckpt";
      save_checkpoint(path, checkpoint(last_good, it));
      log_error(std::string(e.what()) + "; last good parameters saved to " + path.string());
      throw;
    }
    if (cfg.log_wall_time) {
      m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    metrics_out << m.to_json().dump() << "\n";
    metrics_out.flush();
    log_info("iter " + std::to_string(m.iteration) + " reward " + std::to_string(m.mean_reward) + " crashes " +
             std::to_string(m.crashes));
    result.metrics.push_back(m);
    last_good = trainer.net();
    if (cfg.checkpoint_every > 0 && m.iteration % cfg.checkpoint_every == 0) {
      save_checkpoint(out_dir / ("iter_" + std::to_string(m.iteration) + ".ckpt"), checkpoint(trainer.net(), m.iteration));
    }
    if (callback) callback(m, trainer);
  }
  result.final_checkpoint = out_dir / "final.ckpt";
  save_checkpoint(result.final_checkpoint, checkpoint(trainer.net(), trainer.iteration()));
  result.net = trainer.net();
  return result;
}

}  // namespace quadtrack
