#include <doctest.h>

#include <fstream>

#include "quadtrack/checkpoint.hpp"
#include "quadtrack/ppo.hpp"
#include "support/oracles.hpp"

using namespace quadtrack;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0, scale);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

Eigen::VectorXd flatten(const ActorCritic<double>& net) {
  Eigen::VectorXd v(net.actor_encoder.param_count() + net.policy.params.size() + net.critic_encoder.param_count() +
                    net.value.params.size());
  v << net.actor_encoder.params, net.policy.params, net.critic_encoder.params, net.value.params;
  return v;
}

void unflatten(ActorCritic<double>& net, const Eigen::VectorXd& v) {
  Eigen::Index o = 0;
  for (Eigen::VectorXd* p : {&net.actor_encoder.params, &net.policy.params, &net.critic_encoder.params,
                             &net.value.params}) {
    *p = v.segment(o, p->size());
    o += p->size();
  }
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.n_envs = 8;
  t.horizon = 16;
  t.iterations = 2;
  t.minibatches = 2;
  t.update_epochs = 2;
  t.network.width = 16;
  t.log_wall_time = false;
  t.checkpoint_every = 1;
  return t;
}

}  // namespace

TEST_SUITE("ppo") {
  TEST_CASE("GAE matches the n-step oracle") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 200; ++trial) {
      const int H = 1 + trial % 12, N = 3;
      const Eigen::MatrixXd r = random_matrix(H, N, rng), v = random_matrix(H, N, rng);
      Eigen::MatrixXd d(H, N);
      for (Eigen::Index i = 0; i < d.size(); ++i) d.data()[i] = u(rng) < 0.2 ? 1.0 : 0.0;
      const Eigen::VectorXd boot = random_matrix(N, 1, rng);
      const double gamma = 0.9 + 0.1 * u(rng), lambda = u(rng);
      const GaeResult g = compute_gae(r, v, d, boot, gamma, lambda);
      CHECK((g.advantages - oracle::gae_by_nstep(r, v, d, boot, gamma, lambda)).cwiseAbs().maxCoeff() < 1e-10);
      CHECK((g.returns - g.advantages - v).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  TEST_CASE("GAE with gamma = lambda = 1 gives reward-to-go") {
    Eigen::MatrixXd r(3, 1), v = Eigen::MatrixXd::Zero(3, 1), d = Eigen::MatrixXd::Zero(3, 1);
    r << 1, 2, 3;
    const GaeResult g = compute_gae(r, v, d, Eigen::VectorXd::Zero(1), 1.0, 1.0);
    CHECK(g.returns(0, 0) == 6.0);
    CHECK(g.returns(2, 0) == 3.0);
    CHECK_THROWS_AS(compute_gae(r, v, Eigen::MatrixXd::Zero(2, 1), Eigen::VectorXd::Zero(1), 1, 1), ShapeError);
  }

  TEST_CASE("PPO loss gradients match finite differences") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 4; ++trial) {
      ActorCritic<double> net(6, 7, NetworkConfig{8});
      net.initialize(rng);
      // larger head weights so the policy term is not negligible
      net.policy.params += random_matrix(net.policy.params.size(), 1, rng, 0.3);
      const int n = 10;
      Minibatch<double> mb;
      mb.actor_obs = random_matrix(6, n, rng);
      mb.critic_obs = random_matrix(7, n, rng);
      const Eigen::MatrixXd mean = net.action_mean_normalized(mb.actor_obs);
      mb.actions = mean + 0.3 * random_matrix(4, n, rng);
      const double shifts[] = {-0.5, -0.05, 0.05, 0.5};
      mb.old_log_probs = net.policy.log_prob(mean, mb.actions);
      for (int i = 0; i < n; ++i) mb.old_log_probs[i] += shifts[i % 4];
      mb.advantages = random_matrix(1, n, rng);
      mb.value_targets = random_matrix(1, n, rng);
      const LossConfig cfg{0.2, 0.01, 0.5};

      const LossResult<double> res = ppo_loss(net, mb, cfg);
      const auto& g = *res.grad;
      Eigen::VectorXd analytic(flatten(net).size());
      analytic << g.actor_encoder, g.policy, g.critic_encoder, g.value;
      auto f = [&](const Eigen::VectorXd& p) {
        ActorCritic<double> k = net;
        unflatten(k, p);
        return ppo_loss(k, mb, cfg, false).total;
      };
      CHECK(oracle::max_relative_error(analytic, oracle::numeric_gradient(f, flatten(net))) < 1e-4);
    }
  }

  TEST_CASE("PPO loss at ratio one is minus the mean advantage") {
    std::mt19937_64 rng(3);
    ActorCritic<double> net(5, 5, NetworkConfig{8});
    net.initialize(rng);
    Minibatch<double> mb;
    mb.actor_obs = random_matrix(5, 6, rng);
    mb.critic_obs = mb.actor_obs;
    const Eigen::MatrixXd mean = net.action_mean_normalized(mb.actor_obs);
    mb.actions = mean + random_matrix(4, 6, rng);
    mb.old_log_probs = net.policy.log_prob(mean, mb.actions);
    mb.advantages = random_matrix(1, 6, rng);
    mb.value_targets = net.value_normalized(mb.critic_obs);
    const LossResult<double> r = ppo_loss(net, mb, LossConfig{}, false);
    CHECK(r.policy_loss == doctest::Approx(-mb.advantages.mean()).epsilon(1e-12));
    CHECK(r.value_loss == doctest::Approx(0.0));
    CHECK(r.approx_kl == doctest::Approx(0.0));
    CHECK(r.clip_fraction == 0.0);
  }

  TEST_CASE("clipped samples contribute no policy gradient") {
    std::mt19937_64 rng(4);
    ActorCritic<double> net(5, 5, NetworkConfig{8});
    net.initialize(rng);
    Minibatch<double> mb;
    mb.actor_obs = random_matrix(5, 4, rng);
    mb.critic_obs = mb.actor_obs;
    const Eigen::MatrixXd mean = net.action_mean_normalized(mb.actor_obs);
    mb.actions = mean + random_matrix(4, 4, rng);
    // ratio = e^1 with positive advantage: clipped branch
    mb.old_log_probs = net.policy.log_prob(mean, mb.actions).array() - 1.0;
    mb.advantages = Eigen::RowVectorXd::Ones(4);
    mb.value_targets = Eigen::RowVectorXd::Zero(4);
    const LossResult<double> r = ppo_loss(net, mb, LossConfig{}, true);
    CHECK(r.grad->policy.norm() == 0.0);
    CHECK(r.grad->actor_encoder.norm() == 0.0);
    CHECK(r.clip_fraction == 1.0);
  }

  TEST_CASE("batch shapes") {
    Trainer t(tiny_train(), EnvConfig{}, Params{});
    const RolloutBatch b = t.collect_rollouts();
    CHECK(b.actor_obs.rows() == 42);
    CHECK(b.actor_obs.cols() == 16 * 8);
    CHECK(b.critic_obs.rows() == 43);
    CHECK(b.rewards.rows() == 16);
    CHECK(b.rewards.cols() == 8);
    CHECK(b.bootstrap.size() == 8);
    CHECK(b.log_probs.allFinite());
    CHECK(((b.dones.array() == 0) || (b.dones.array() == 1)).all());
  }

  TEST_CASE("training is reproducible and independent of worker count") {
    TrainConfig a = tiny_train(), b = tiny_train();
    a.workers = 1;
    b.workers = 3;
    Trainer ta(a, EnvConfig{}, Params{}), tb(b, EnvConfig{}, Params{});
    for (int i = 0; i < 2; ++i) CHECK(ta.iterate().to_json() == tb.iterate().to_json());
    CHECK(ta.net().actor_encoder.params == tb.net().actor_encoder.params);
  }

  TEST_CASE("train writes metrics and checkpoints") {
    const auto dir = std::filesystem::temp_directory_path() / "quadtrack_test_train";
    std::filesystem::remove_all(dir);
    const TrainResult r = train(tiny_train(), EnvConfig{}, Params{}, dir);
    CHECK(r.metrics.size() == 2);
    CHECK(std::filesystem::exists(dir / "config.json"));
    CHECK(std::filesystem::exists(dir / "final.ckpt"));
    std::ifstream in(dir / "metrics.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
      const auto j = nlohmann::json::parse(line);
      CHECK_FALSE(j.contains("wall_time"));
      ++lines;
    }
    CHECK(lines == 2);
    const Checkpoint c = load_checkpoint(dir / "final.ckpt");
    CHECK(c.net.actor_encoder.params == r.net.actor_encoder.params);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("config validation") {
    TrainConfig t;
    t.gamma = 1.5;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = {};
    t.n_envs = 0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
  }
}
