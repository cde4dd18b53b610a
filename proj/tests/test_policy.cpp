#include <gtest/gtest.h>

#include <cmath>

#include "dipg/optimizer.hpp"
#include "dipg/policy.hpp"
#include "support/oracles.hpp"

using namespace dipg;

TEST(PolicyGradients, MatchFiniteDifferencesOnRandomPolicies) {
  const auto r = oracle::gradient_suite(100, 11);
  EXPECT_EQ(r.policies, 100u);
  EXPECT_LT(r.grad_log_prob, 1e-4);
  EXPECT_LT(r.traj_score, 1e-4);
  EXPECT_LT(r.ppo_surrogate, 1e-4);
  EXPECT_LT(r.batch_objective, 1e-5);
}

TEST(PolicyNet, ZeroParametersGiveUniformCategorical) {
  PolicySpec s;
  s.head = HeadKind::categorical;
  s.input_dim = 3;
  s.output_dim = 4;
  const PolicyNet net(s);
  const PolicyParams th = PolicyParams::Zero(static_cast<Eigen::Index>(net.num_params()));
  const State x = Eigen::Vector3d(0.3, -1.0, 2.0);
  for (std::size_t a = 0; a < 4; ++a) EXPECT_NEAR(net.log_prob(th, x, Action::discrete(a)), std::log(0.25), 1e-15);
  EXPECT_NEAR(net.probabilities(th, x).sum(), 1.0, 1e-15);
}

TEST(PolicyNet, GaussianLogDensityMatchesClosedForm) {
  PolicySpec s;
  s.input_dim = 2;
  s.hidden_sizes = {};
  s.output_dim = 2;
  const PolicyNet net(s);
  PolicyParams th = PolicyParams::Zero(static_cast<Eigen::Index>(net.num_params()));
  th.tail(2) << std::log(0.5), std::log(2.0);
  const Eigen::Vector2d a(0.3, -1.0);
  const double expect = -0.5 * (0.3 * 0.3 / 0.25 + 1.0 / 4.0) - std::log(0.5) - std::log(2.0) - std::log(2 * M_PI);
  EXPECT_NEAR(net.log_prob(th, State(Eigen::Vector2d(1, 1)), Action::continuous(a)), expect, 1e-12);
}

TEST(PolicyNet, BoundedMeanStaysInsideActionRange) {
  PolicySpec s;
  s.input_dim = 1;
  s.output_dim = 1;
  s.action_low = -0.5;
  s.action_high = 0.5;
  s.bounded_mean = true;
  const PolicyNet net(s);
  PolicyParams th = net.init_params(1) * 100.0;
  for (double x : {-10.0, 0.0, 10.0}) {
    const double mu = net.forward(th, State::Constant(1, x))[0];
    EXPECT_LE(std::abs(mu), 0.5);
  }
}

TEST(PolicyNet, InitIsDeterministicPerSeed) {
  const PolicyNet net(oracle::TinyMdp::tabular_spec());
  EXPECT_EQ(net.init_params(5), net.init_params(5));
  EXPECT_NE(net.init_params(5), net.init_params(6));
}

TEST(PolicyNet, RejectsMismatchedInputs) {
  const PolicyNet net(oracle::TinyMdp::tabular_spec());
  const PolicyParams th = net.init_params(1);
  EXPECT_THROW(net.log_prob(th, State::Zero(3), Action::discrete(0)), std::invalid_argument);
  EXPECT_THROW(net.log_prob(th, State::Zero(2), Action::discrete(2)), std::invalid_argument);
  EXPECT_THROW(net.log_prob(PolicyParams::Zero(2), State::Zero(2), Action::discrete(0)), std::invalid_argument);
}

TEST(Adam, FirstStepMovesEachCoordinateByTheLearningRate) {
  Adam opt(3, 0.1);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(3);
  opt.ascend(p, Eigen::Vector3d(2.0, -0.5, 1e-3));
  EXPECT_NEAR(p[0], 0.1, 1e-6);
  EXPECT_NEAR(p[1], -0.1, 1e-6);
  EXPECT_NEAR(p[2], 0.1, 1e-5);
}
