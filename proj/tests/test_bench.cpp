#include <doctest.h>

#include <fstream>
#include <set>

#include "quadtrack/ablation.hpp"
#include "quadtrack/bench.hpp"

using namespace quadtrack;

namespace {

ActorCritic<float> hover_policy(const EnvConfig& env, float thrust_bias = 0.0f) {
  ActorCritic<float> net(env.actor_dim(), env.critic_dim(), NetworkConfig{16});
  Rng rng(1);
  net.initialize(rng);
  net.policy.weight().setZero();
  net.policy.bias().setZero();
  net.policy.bias()[0] = thrust_bias;
  return net;
}

SuiteConfig short_suite() {
  SuiteConfig s;
  EvalCase f;
  f.name = "f8";
  f.period = 2.0;
  f.laps = 1;
  f.repeats = 2;
  EvalCase z;
  z.name = "zz";
  z.kind = TrajectoryKind::Zigzag;
  z.duration = 2.0;
  z.trajectories = 2;
  z.repeats = 1;
  s.cases = {f, z};
  return s;
}

}  // namespace

TEST_SUITE("bench") {
  TEST_CASE("MED examples") {
    Eigen::MatrixXd a(2, 3), b(2, 3);
    a << 0, 0, 1, 1, 1, 1;
    CHECK(med(a, a) == 0.0);
    b = a;
    b.col(0).array() += 0.1;
    b.col(2).array() += 7;
    CHECK(med(b, a) == doctest::Approx(0.1).epsilon(1e-15));
    b = a;
    b(0, 0) += 0.1;
    b(1, 1) += 0.3;
    CHECK(med(b, a) == doctest::Approx(0.2).epsilon(1e-15));
    CHECK_THROWS_AS(med(a, Eigen::MatrixXd::Zero(3, 3)), ShapeError);
    CHECK_THROWS_AS(med(Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(2, 2)), ShapeError);
  }

  TEST_CASE("MED invariances") {
    Rng rng(3);
    std::normal_distribution<double> n(0, 1);
    Eigen::MatrixXd a(50, 3), b(50, 3);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      a.data()[i] = n(rng);
      b.data()[i] = n(rng);
    }
    const double base = med(a, b);
    CHECK(base >= 0);
    const Eigen::RowVector3d shift(3, -2, 5);
    CHECK(med(a.rowwise() + shift, b.rowwise() + shift) == doctest::Approx(base).epsilon(1e-12));
    Eigen::MatrixXd z = a;
    for (Eigen::Index i = 0; i < 50; ++i) z(i, 2) += n(rng);
    CHECK(med(z, b) == base);
  }

  TEST_CASE("default protocol trial counts") {
    const SuiteConfig s = default_suite();
    REQUIRE(s.cases.size() == 7);
    const int expected[] = {3, 3, 3, 10, 3, 3, 10};
    for (int i = 0; i < 7; ++i) CHECK(s.cases[i].trials() == expected[i]);
    CHECK(s.cases[0].period == 15.0);
    CHECK(s.cases[2].period == 3.5);
    CHECK(s.cases[0].laps == 10);
  }

  TEST_CASE("suite JSON") {
    const SuiteConfig s = short_suite();
    const SuiteConfig back = suite_from_json(to_json(s));
    REQUIRE(back.cases.size() == 2);
    CHECK(back.cases[1].kind == TrajectoryKind::Zigzag);
    CHECK(back.cases[1].trials() == 2);
    CHECK(suite_from_json(nlohmann::json::object()).cases.size() == 7);
    CHECK(suite_from_json({{"preset", "figure_eight"}, {"laps", 2}}).cases[1].laps == 2);
    CHECK_THROWS_AS(suite_from_json({{"bogus", 1}}), ConfigError);
    CHECK_THROWS_AS(suite_from_json({{"cases", {{{"name", "x"}, {"kind", "circle"}}}}}), ConfigError);
  }

  TEST_CASE("zero thrust crashes every trial") {
    const EnvConfig env;
    const ActorCritic<float> net = hover_policy(env, -10.0f);
    const EvalReport r = run_benchmark(net, env, Params{}, short_suite());
    for (const auto& c : r.cases) {
      CHECK(c.crashes == static_cast<int>(c.trials.size()));
      CHECK(std::isinf(c.med_mean));
      for (const auto& t : c.trials) CHECK(std::isinf(t.med));
    }
    CHECK(r.to_json()["cases"][0]["med_mean"] == "inf");
    CHECK(r.table().find("inf") != std::string::npos);
  }

  TEST_CASE("benchmark is deterministic and well formed") {
    const EnvConfig env;
    const ActorCritic<float> net = hover_policy(env);
    const SuiteConfig suite = short_suite();
    const EvalReport a = run_benchmark(net, env, Params{}, suite);
    const EvalReport b = run_benchmark(net, env, Params{}, suite);
    CHECK(a.to_json() == b.to_json());
    REQUIRE(a.cases.size() == 2);
    CHECK(a.cases[0].trials.size() == 2);
    CHECK(a.cases[1].trials.size() == 2);
    for (const auto& c : a.cases) {
      CHECK(c.med_std >= 0);
      for (const auto& t : c.trials) {
        CHECK(t.trace.cols() == kTraceColumns);
        if (!t.crashed) {
          if (c.name == "f8") CHECK(t.trace.rows() == 200);
          CHECK(t.med >= 0);
        }
      }
    }
    CHECK(a.fingerprint.contains("env_hash"));
  }

  TEST_CASE("trace export round trip") {
    const EnvConfig env;
    const ActorCritic<float> net = hover_policy(env);
    const EvalReport r = run_benchmark(net, env, Params{}, short_suite());
    const auto dir = std::filesystem::temp_directory_path() / "quadtrack_test_traces";
    std::filesystem::remove_all(dir);
    export_traces(r, dir);
    const TrialResult& t = r.cases[0].trials[0];
    const Eigen::MatrixXd back = read_trace_csv(dir / "f8_trial0.csv");
    CHECK(back.cols() == 11);
    CHECK(back == t.trace);
    CHECK(std::abs(med(back.middleCols(1, 3), back.middleCols(4, 3)) - t.med) < 1e-9);
    CHECK(std::filesystem::exists(dir / "summary.json"));

    write_trace_csv(Eigen::MatrixXd(0, 11), dir / "empty.csv");
    std::ifstream in(dir / "empty.csv");
    std::string header, rest;
    std::getline(in, header);
    CHECK(header == "t,x,y,z,x_ref,y_ref,z_ref,accel,p,q,r");
    CHECK_FALSE(std::getline(in, rest));
    CHECK(read_trace_csv(dir / "empty.csv").rows() == 0);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("ablation variant sets") {
    const RunConfig base;
    auto names = [](const std::vector<AblationVariant>& v) {
      std::vector<std::string> out;
      for (const auto& x : v) out.push_back(x.name);
      return out;
    };
    CHECK(names(ablation_variants(1, base)) == std::vector<std::string>{"e+v+R", "e+v+q", "e+R", "e+v+R+u_prev"});
    CHECK(ablation_variants(2, base).size() == 3);
    const auto f3 = ablation_variants(3, base);
    CHECK(f3.size() == 7);
    CHECK(f3.back().run.env.smoothness == SmoothnessKind::ActionDiff);
    const auto f4 = ablation_variants(4, base);
    CHECK(f4.size() == 17);
    std::set<std::string> cols;
    for (const auto& v : f4) cols.insert(v.col);
    CHECK(cols.size() == 5);
    const auto f5 = ablation_variants(5, base);
    CHECK(f5.size() == 5);
    CHECK(f5.front().run.train.n_envs < f5.back().run.train.n_envs);
    CHECK_THROWS_AS(ablation_variants(6, base), ConfigError);
    CHECK(ablation_suite(4).cases.size() == 1);
    CHECK(ablation_suite(4).cases[0].period == 5.5);
  }
}
