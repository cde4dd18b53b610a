#include <gtest/gtest.h>

#include "dipg/pg.hpp"
#include "support/oracles.hpp"

using namespace dipg;

namespace {

Trajectory rewards(std::vector<double> r) {
  Trajectory tr;
  for (double x : r) tr.steps.push_back({State::Zero(2), Action::discrete(0), x, {}});
  return tr;
}

TrainConfig small(Algo algo, std::size_t steps) {
  TrainConfig c;
  c.algo = algo;
  c.learning_rate = 1e-2;
  c.steps_per_policy = steps;
  c.stored_trajectories = 4;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(ReturnsToGo, DiscountedSuffixSums) {
  const auto g = returns_to_go(rewards({0, 0, 5}), 0.5);
  ASSERT_EQ(g.size(), 3u);
  EXPECT_DOUBLE_EQ(g[0], 1.25);
  EXPECT_DOUBLE_EQ(g[1], 2.5);
  EXPECT_DOUBLE_EQ(g[2], 5.0);
  EXPECT_THROW(returns_to_go(Trajectory{}, 0.9), std::invalid_argument);
}

TEST(CenteredReturns, PerTimestepBaselineAveragesRunningEpisodes) {
  const TrajectorySet b{rewards({1, 1}), rewards({3})};
  const auto A = centered_returns(b, 1.0, Baseline::per_timestep);
  // t=0: g = {2, 3}, mean 2.5; t=1: only the first is running
  EXPECT_DOUBLE_EQ(A[0][0], -0.5);
  EXPECT_DOUBLE_EQ(A[1][0], 0.5);
  EXPECT_DOUBLE_EQ(A[0][1], 0.0);
  const auto M = centered_returns(b, 1.0, Baseline::batch_mean);
  EXPECT_DOUBLE_EQ(M[0][0], 2.0 - 2.0);
  EXPECT_DOUBLE_EQ(M[0][1], 1.0 - 2.0);
}

// With γ = 1, reward-to-go weighting is an unbiased estimate of ∇E[R].
TEST(PolicyGradient, EstimatorMeanMatchesExactGradientOnTinyMdp) {
  const oracle::TinyMdp mdp;
  const PolicyNet net(oracle::TinyMdp::tabular_spec());
  Rng rng(8);
  const PolicyParams th = oracle::perturbed_params(net, rng, 0.7);
  const Eigen::VectorXd exact =
      oracle::central_diff([&](const Eigen::VectorXd& p) { return mdp.exact_return(p); }, th, 1e-5);

  const int draws = 20000;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(th.size()), sum2 = sum;
  for (int d = 0; d < draws; ++d) {
    const Eigen::VectorXd g = pg_gradient(net, th, mdp.sample(th, rng, 4), 1.0, 0.7);
    sum += g;
    sum2 += g.cwiseProduct(g);
  }
  const Eigen::VectorXd mean = sum / draws;
  const Eigen::VectorXd se = ((sum2 / draws - mean.cwiseProduct(mean)) / (draws - 1)).cwiseSqrt();
  for (Eigen::Index i = 0; i < th.size(); ++i) EXPECT_LT(std::abs(mean[i] - exact[i]), 3.0 * se[i]) << i;
}

TEST(PolicyGradient, CombinedObjectiveGradientMatchesFiniteDifferences) {
  const oracle::TinyMdp mdp;
  const PolicyNet net(oracle::TinyMdp::tabular_spec());
  Rng rng(9);
  const PolicyParams th = oracle::perturbed_params(net, rng), q = oracle::perturbed_params(net, rng);
  KernelConfig k;
  const double alpha = 0.8;
  // ∇J exactly: Σ p(τ) R(τ) s(τ)
  Eigen::VectorXd grad_j = Eigen::VectorXd::Zero(th.size());
  for (const auto& tr : mdp.enumerate()) grad_j += mdp.prob(th, tr) * tr.total_reward() * traj_score(net, th, tr);
  const Eigen::VectorXd combined = grad_j + alpha * mdp.exact_mmd2_gradient(th, q, k);
  const Eigen::VectorXd fd = oracle::central_diff(
      [&](const Eigen::VectorXd& p) { return mdp.exact_return(p) + alpha * mdp.exact_mmd2(p, q, k); }, th, 1e-5);
  EXPECT_LT((combined - fd).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Ppo, FirstMinibatchRatiosAreOne) {
  Environment env(EnvSpec::defaults(EnvKind::multi_goal));
  const Policy p = Policy::initialized(PolicySpec::for_env(env), 2);
  Rng rng(4);
  const TrajectorySet b = rollouts(env, p, rng, 4);
  const PpoBatch pb = make_ppo_batch(p.net, p.params, b, env.gamma());
  const auto idx = iota_indices(pb.steps.size());
  const auto clipped = ppo_surrogate(p.net, p.params, pb, idx, 0.2);
  // Unclipped surrogate mean_t Â_t and its gradient mean_t Â_t ∇log π.
  double mean_adv = 0;
  Eigen::VectorXd g = Eigen::VectorXd::Zero(p.params.size());
  for (std::size_t k = 0; k < pb.steps.size(); ++k) {
    EXPECT_DOUBLE_EQ(pb.old_log_prob[k], p.log_prob(pb.steps[k]->state, pb.steps[k]->action));
    mean_adv += pb.advantage[k] / static_cast<double>(pb.steps.size());
    g += p.net.grad_log_prob(p.params, pb.steps[k]->state, pb.steps[k]->action) * pb.advantage[k] /
         static_cast<double>(pb.steps.size());
  }
  EXPECT_NEAR(clipped.value, mean_adv, 1e-12);
  EXPECT_LT((clipped.gradient - g).norm(), 1e-10);
}

TEST(Ppo, AdvantagesAreNormalized) {
  Environment env(EnvSpec::defaults(EnvKind::multi_goal));
  const Policy p = Policy::initialized(PolicySpec::for_env(env), 2);
  Rng rng(4);
  const PpoBatch pb = make_ppo_batch(p.net, p.params, rollouts(env, p, rng, 4), env.gamma());
  const Eigen::Map<const Eigen::VectorXd> a(pb.advantage.data(), static_cast<Eigen::Index>(pb.advantage.size()));
  EXPECT_NEAR(a.mean(), 0.0, 1e-12);
  EXPECT_NEAR(std::sqrt((a.array() - a.mean()).square().mean()), 1.0, 1e-12);
}

TEST(Training, ZeroAlphaIsBitwisePlainPolicyGradient) {
  Environment env(EnvSpec::defaults(EnvKind::multi_goal));
  const PolicySpec spec = PolicySpec::for_env(env);
  for (Algo algo : {Algo::ppo, Algo::reinforce}) {
    const TrainConfig cfg = small(algo, 1200);
    const PolicyCollection known = dipg::dipg(env, 1, spec, cfg, {});
    const auto a = train_diverse_policy(known, env, spec, cfg, {}, 0.0, 77);
    const auto b = train_policy(env, spec, cfg, 77);
    EXPECT_EQ(a.policy.params, b.policy.params);
    ASSERT_EQ(a.metrics.size(), b.metrics.size());
    for (std::size_t i = 0; i < a.metrics.size(); ++i) EXPECT_EQ(a.metrics[i].grad_norm, b.metrics[i].grad_norm);
  }
}

TEST(Training, BudgetIsRespectedAndMetricsAreRecorded) {
  Environment env(EnvSpec::defaults(EnvKind::multi_goal));
  const auto r = train_policy(env, PolicySpec::for_env(env), small(Algo::ppo, 1000), 5);
  ASSERT_FALSE(r.metrics.empty());
  EXPECT_GE(r.metrics.back().env_steps, 1000u);
  EXPECT_LT(r.metrics[r.metrics.size() - 2].env_steps, 1000u);
  EXPECT_FALSE(r.metrics.front().d_mmd.has_value());
  EXPECT_TRUE(r.policy.params.allFinite());
}

TEST(Training, PpoImprovesCartpole) {
  Environment env(EnvSpec::defaults(EnvKind::cartpole));
  TrainConfig cfg = small(Algo::ppo, 15000);
  cfg.epochs = 8;
  const auto r = train_policy(env, PolicySpec::for_env(env), cfg, 1);
  double early = 0, late = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    early += r.metrics[i].mean_return;
    late += r.metrics[r.metrics.size() - 1 - i].mean_return;
  }
  EXPECT_GT(late, 2.0 * early);
}

TEST(Dipg, TrainsNPoliciesAndStoresNTimesnTrajectories) {
  Environment env(EnvSpec::defaults(EnvKind::multi_goal));
  TrainConfig cfg = small(Algo::ppo, 800);
  std::size_t runs = 0;
  const auto coll = dipg::dipg(env, 3, PolicySpec::for_env(env), cfg, {}, {},
                         [&](std::size_t, const PolicyRecord&) { ++runs; });
  EXPECT_EQ(runs, 3u);
  ASSERT_EQ(coll.size(), 3u);
  std::size_t stored = 0;
  for (const auto& rec : coll) stored += rec.stored.size();
  EXPECT_EQ(stored, 3 * cfg.stored_trajectories);
  EXPECT_FALSE(coll[0].metrics.front().d_mmd.has_value());
  EXPECT_TRUE(coll[1].metrics.front().d_mmd.has_value());
  EXPECT_LE(*coll[2].metrics.front().argmin_q, 1u);
}

TEST(Dipg, SinglePolicyIsPlainTraining) {
  Environment env(EnvSpec::defaults(EnvKind::multi_goal));
  const TrainConfig cfg = small(Algo::reinforce, 600);
  const auto coll = dipg::dipg(env, 1, PolicySpec::for_env(env), cfg, {});
  const auto r = train_policy(env, PolicySpec::for_env(env), cfg, policy_seed(cfg.seed, 0));
  EXPECT_EQ(coll[0].policy.params, r.policy.params);
}

TEST(Dipg, DiversityTermChangesTheSecondPolicy) {
  Environment env(EnvSpec::defaults(EnvKind::multi_goal));
  TrainConfig cfg = small(Algo::ppo, 800);
  cfg.alphas = {5.0};
  for (DiversityPlacement place : {DiversityPlacement::gradient, DiversityPlacement::advantage}) {
    cfg.diversity_placement = place;
    const auto with = dipg::dipg(env, 2, PolicySpec::for_env(env), cfg, {});
    const auto without = random_restarts(env, 2, PolicySpec::for_env(env), cfg, {});
    EXPECT_EQ(with[0].policy.params, without[0].policy.params);
    EXPECT_NE(with[1].policy.params, without[1].policy.params);
  }
}

TEST(TrainConfig, Schedules) {
  TrainConfig c;
  c.steps_per_policy = 1000;
  c.learning_rate = 1.0;
  c.lr_schedule = LrSchedule::linear;
  EXPECT_DOUBLE_EQ(c.learning_rate_at(250), 0.75);
  EXPECT_DOUBLE_EQ(c.learning_rate_at(2000), 0.05);
  c.alpha_decay_fraction = 0.5;
  EXPECT_DOUBLE_EQ(c.alpha_scale_at(250), 0.5);
  EXPECT_DOUBLE_EQ(c.alpha_scale_at(600), 0.0);
  c.alphas = {0.0, 2.0};
  EXPECT_EQ(c.alpha_for(7), 2.0);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.clip_epsilon = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.rollouts_per_update = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.alphas = {-1.0};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.alpha_decay_fraction = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}
