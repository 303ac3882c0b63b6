#include <doctest.h>

#include <numbers>

#include "quadtrack/nn.hpp"
#include "quadtrack/policy.hpp"
#include "support/oracles.hpp"

using namespace quadtrack;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 1);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Perturbs biases and LayerNorm parameters away from their initial values so
// every parameter has a nontrivial gradient.
void jitter(Eigen::VectorXd& p, std::mt19937_64& rng, double scale = 0.1) {
  std::normal_distribution<double> n(0, scale);
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] += n(rng);
}

}  // namespace

TEST_SUITE("nn") {
  TEST_CASE("parameter count and slots") {
    const Mlp<double> m(42, 256);
    CHECK(m.param_count() == mlp_param_count(42, 256));
    CHECK(m.param_count() == 256 * (42 + 2 * 256 + 5));
    Eigen::Index covered = 0;
    for (const auto& s : m.slots()) {
      CHECK(s.offset == covered);
      covered += s.rows * s.cols;
    }
    CHECK(covered == m.param_count());
    CHECK_THROWS_AS(Mlp<double>(0, 4), ShapeError);
  }

  TEST_CASE("orthogonal initialization") {
    std::mt19937_64 rng(1);
    const Eigen::MatrixXd wide = orthogonal_matrix(4, 32, 0.5, rng);
    CHECK((wide * wide.transpose() - 0.25 * Eigen::MatrixXd::Identity(4, 4)).norm() < 1e-12);
    const Eigen::MatrixXd tall = orthogonal_matrix(32, 8, 2.0, rng);
    CHECK((tall.transpose() * tall - 4.0 * Eigen::MatrixXd::Identity(8, 8)).norm() < 1e-12);
  }

  TEST_CASE("LayerNorm output is standardized") {
    std::mt19937_64 rng(2);
    Mlp<double> m(6, 16, LayerNormPlacement::AfterFirst);
    m.initialize(rng, std::sqrt(2.0));
    MlpCache<double> cache;
    m.forward(random_matrix(6, 5, rng), &cache);
    for (Eigen::Index c = 0; c < 5; ++c) {
      CHECK(std::abs(cache.h1.col(c).mean()) < 1e-12);
      const double var = (cache.h1.col(c).array() - cache.h1.col(c).mean()).square().mean();
      CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
  }

  TEST_CASE("encoder gradients match finite differences") {
    std::mt19937_64 rng(3);
    for (auto ln : {LayerNormPlacement::AfterFirst, LayerNormPlacement::AfterSecond}) {
      for (int trial = 0; trial < 5; ++trial) {
        Mlp<double> m(7, 9, ln);
        m.initialize(rng, std::sqrt(2.0));
        jitter(m.params, rng);
        const Eigen::MatrixXd x = random_matrix(7, 4, rng);
        const Eigen::MatrixXd up = random_matrix(9, 4, rng);
        auto loss = [&](const Eigen::VectorXd& p) {
          Mlp<double> k = m;
          k.params = p;
          return (k.forward(x).array() * up.array()).sum();
        };
        MlpCache<double> cache;
        m.forward(x, &cache);
        Eigen::VectorXd g = Eigen::VectorXd::Zero(m.param_count());
        const Eigen::MatrixXd dx = m.backward(cache, up, g);
        CHECK(oracle::max_relative_error(g, oracle::numeric_gradient(loss, m.params)) < 1e-4);

        auto loss_x = [&](const Eigen::VectorXd& xv) {
          return (m.forward(Eigen::Map<const Eigen::MatrixXd>(xv.data(), 7, 4)).array() * up.array()).sum();
        };
        const Eigen::VectorXd xv = Eigen::Map<const Eigen::VectorXd>(x.data(), x.size());
        const Eigen::VectorXd dxv = Eigen::Map<const Eigen::VectorXd>(dx.data(), dx.size());
        CHECK(oracle::max_relative_error(dxv, oracle::numeric_gradient(loss_x, xv)) < 1e-4);
      }
    }
  }

  TEST_CASE("Gaussian head") {
    std::mt19937_64 rng(4);
    GaussianHead<double> h(6);
    h.initialize(rng, 0.5, std::log(0.3));
    jitter(h.params, rng);
    const Eigen::MatrixXd latent = random_matrix(6, 5, rng);
    const Eigen::MatrixXd mean = h.mean(latent);
    const Eigen::MatrixXd actions = mean + 0.3 * random_matrix(4, 5, rng);

    // density against a direct formula
    const auto lp = h.log_prob(mean, actions);
    for (int c = 0; c < 5; ++c) {
      double expected = 0;
      for (int i = 0; i < 4; ++i) {
        const double s = std::exp(h.log_std()[i]);
        const double z = (actions(i, c) - mean(i, c)) / s;
        expected += -0.5 * z * z - std::log(s) - 0.5 * std::log(2 * kPi);
      }
      CHECK(lp[c] == doctest::Approx(expected).epsilon(1e-12));
    }
    double ent = 0;
    for (int i = 0; i < 4; ++i) ent += 0.5 * std::log(2 * kPi * std::numbers::e) + h.log_std()[i];
    CHECK(h.entropy() == doctest::Approx(ent).epsilon(1e-12));

    const Eigen::RowVectorXd w = random_matrix(1, 5, rng);
    const double ce = 0.3;
    auto loss = [&](const Eigen::VectorXd& p) {
      GaussianHead<double> k = h;
      k.params = p;
      return (k.log_prob(k.mean(latent), actions).array() * w.array()).sum() + ce * k.entropy();
    };
    Eigen::VectorXd g = Eigen::VectorXd::Zero(h.params.size());
    const Eigen::MatrixXd dlat = h.backward(latent, mean, actions, w, ce, g);
    CHECK(oracle::max_relative_error(g, oracle::numeric_gradient(loss, h.params)) < 1e-4);

    auto loss_l = [&](const Eigen::VectorXd& lv) {
      const Eigen::Map<const Eigen::MatrixXd> l(lv.data(), 6, 5);
      return (h.log_prob(h.mean(l), actions).array() * w.array()).sum();
    };
    const Eigen::VectorXd lv = Eigen::Map<const Eigen::VectorXd>(latent.data(), latent.size());
    const Eigen::VectorXd dl = Eigen::Map<const Eigen::VectorXd>(dlat.data(), dlat.size());
    CHECK(oracle::max_relative_error(dl, oracle::numeric_gradient(loss_l, lv)) < 1e-4);
  }

  TEST_CASE("log std is clamped") {
    GaussianHead<double> h(2);
    h.raw_log_std().setConstant(50);
    CHECK(h.log_std().maxCoeff() == 2.0);
    h.raw_log_std().setConstant(-50);
    CHECK(h.log_std().minCoeff() == -20.0);
  }

  TEST_CASE("value head gradients") {
    std::mt19937_64 rng(5);
    ValueHead<double> v(8);
    v.initialize(rng, 1.0);
    jitter(v.params, rng);
    const Eigen::MatrixXd latent = random_matrix(8, 3, rng);
    const Eigen::RowVectorXd up = random_matrix(1, 3, rng);
    auto loss = [&](const Eigen::VectorXd& p) {
      ValueHead<double> k = v;
      k.params = p;
      return (k.forward(latent).array() * up.array()).sum();
    };
    Eigen::VectorXd g = Eigen::VectorXd::Zero(v.params.size());
    v.backward(latent, up, g);
    CHECK(oracle::max_relative_error(g, oracle::numeric_gradient(loss, v.params)) < 1e-4);
  }

  TEST_CASE("Adam first step has magnitude lr") {
    Adam<double> opt;
    opt.lr = 0.01;
    Eigen::VectorXd p = Eigen::VectorXd::Zero(3);
    opt.step(p, Eigen::Vector3d(5, -0.1, 1e-3));
    CHECK(p[0] == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(p[1] == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(p[2] == doctest::Approx(-0.01).epsilon(1e-4));
  }

  TEST_CASE("gradient clipping") {
    Eigen::VectorXd g(2);
    g << 3, 4;
    CHECK(clip_grad_norm(g, 1.0) == 5.0);
    CHECK(g.norm() == doctest::Approx(1.0));
    g << 0.3, 0.4;
    clip_grad_norm(g, 1.0);
    CHECK(g.norm() == doctest::Approx(0.5));
  }

  TEST_CASE("running normalizer merges batches exactly") {
    std::mt19937_64 rng(6);
    const Eigen::MatrixXd all = random_matrix(3, 60, rng) * 4 + Eigen::MatrixXd::Constant(3, 60, 2);
    RunningMeanStd r(3);
    r.update(all.leftCols(17));
    r.update(all.middleCols(17, 30));
    r.update(all.rightCols(13));
    const Eigen::VectorXd mean = all.rowwise().mean();
    const Eigen::VectorXd var = (all.colwise() - mean).array().square().rowwise().mean();
    CHECK((r.mean - mean).norm() < 1e-12);
    CHECK((r.var - var).norm() < 1e-10);
    CHECK(r.count == 60);
    const Eigen::MatrixXd far = Eigen::MatrixXd::Constant(3, 1, 1e6);
    CHECK(r.normalize<double>(far).maxCoeff() == 10.0);
  }

  TEST_CASE("value normalizer round trip") {
    ValueNormalizer v;
    CHECK(v.normalize(3.0) == 3.0);
    v.update(Eigen::VectorXd::LinSpaced(100, 10, 50));
    CHECK(v.mean() == doctest::Approx(30).epsilon(1e-9));
    CHECK(v.denormalize(v.normalize(17.5)) == doctest::Approx(17.5).epsilon(1e-12));
  }

  TEST_CASE("actor-critic float cast agrees with double") {
    std::mt19937_64 rng(7);
    ActorCritic<double> net(42, 43, NetworkConfig{32});
    net.initialize(rng);
    const auto f = net.cast<float>();
    const Eigen::MatrixXd obs = random_matrix(42, 6, rng);
    CHECK((net.act(obs).cast<float>() - f.act(obs.cast<float>())).norm() < 1e-4f);
  }
}
