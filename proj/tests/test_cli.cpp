#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "config.hpp"
#include "dipg/io.hpp"
#include "support/oracles.hpp"

using namespace dipg;
using namespace dipg::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dipg_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
  return p;
}

int run_cli(std::vector<std::string> args, std::string* err_text = nullptr) {
  args.insert(args.begin(), "dipg");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (err_text) *err_text = err.str();
  return code;
}

const char* kTiny = R"(env:
  kind: multi_goal
train:
  steps_per_policy: 400
  stored_trajectories: 4
  learning_rate: 0.01
experiment:
  seed: 5
  policies: 2
  eval_episodes: 3
)";

// Deterministic scripted walker toward one goal.
struct Toward {
  Eigen::Vector2d dir;
  ActionSample act(const State&, Rng&) const { return {Action::continuous(0.5 * dir), 0.0}; }
};

}  // namespace

TEST(Config, DefaultsWhenEmpty) {
  const auto cfg = parse_config("");
  EXPECT_EQ(cfg.env.kind, EnvKind::multi_goal);
  EXPECT_EQ(cfg.eval_episodes, 32u);
  EXPECT_EQ(cfg.policies, 4u);
  EXPECT_EQ(cfg.train.steps_per_policy, 30000u);
  EXPECT_EQ(cfg.similarity_aggregate, SimilarityAggregate::mean);
}

TEST(Config, ShippedConfigsLoad) {
  for (const char* name : {"multi_goal", "asymmetric", "obstacle", "cartpole"}) {
    const auto cfg = load_config(fs::path(DIPG_CONFIG_DIR) / (std::string(name) + ".yaml"));
    EXPECT_NO_THROW(cfg.validate()) << name;
  }
  const auto mg = load_config(fs::path(DIPG_CONFIG_DIR) / "multi_goal.yaml");
  EXPECT_EQ(mg.train.diversity_placement, DiversityPlacement::advantage);
  EXPECT_EQ(mg.kernel.selector, Selector::states_only);
  EXPECT_TRUE(mg.policy_spec().bounded_mean);
}

TEST(Config, UnknownKeyIsReportedWithItsLine) {
  try {
    parse_config("env:\n  kind: obstacle\ntrain:\n  learning_rat: 0.1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("train.learning_rat"), std::string::npos);
  }
}

TEST(Config, WrongTypeAndBadEnumAreReportedWithTheirLine) {
  try {
    parse_config("train:\n  epochs: many\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  try {
    parse_config("kernel:\n  bandwidth: 1\n  selector: everything\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Config, InvariantViolationsAreRejected) {
  for (const char* bad : {"env:\n  gamma: 1.5\n", "train:\n  clip_epsilon: 2\n", "experiment:\n  eval_episodes: 0\n",
                          "kernel:\n  bandwidth: -1\n", "batch:\n  exploration: 2\n", "train:\n  alphas: [-1]\n",
                          "policy:\n  hidden_sizes: [0]\n", "env: [1, 2]\n", "env:\n  kind: cartpole\n  goals: [[1, 1]]\n"})
    EXPECT_THROW(parse_config(bad), ConfigError) << bad;
}

TEST(Config, NavigationGeometryOverrides) {
  const auto cfg = parse_config(
      "env:\n  kind: obstacle\n  goals: [[0, 6]]\n  barrier: {x_min: -1, x_max: 1, y_min: 0, y_max: 1}\n");
  EXPECT_EQ(cfg.env.nav.goals.size(), 1u);
  EXPECT_EQ(cfg.env.nav.goals[0].y(), 6.0);
  EXPECT_EQ(cfg.env.nav.barrier->x_min, -1.0);
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("exit");
  std::string err;
  EXPECT_EQ(run_cli({"train", "--config", write_file(dir / "bad.yaml", "train:\n  epochs: 0\n").string()}, &err), 2);
  EXPECT_NE(err.find("config error"), std::string::npos);
  EXPECT_EQ(run_cli({"frobnicate"}), 2);
  EXPECT_EQ(run_cli({"compare", "--out", (dir / "o").string()}), 2);
  EXPECT_EQ(run_cli({"compare", "--policies", (dir / "missing.json").string(), "--out", (dir / "o").string()}), 1);
  write_file(dir / "garbage.json", "{ not json");
  EXPECT_EQ(run_cli({"eval", "--policies", (dir / "garbage.json").string(), "--out", (dir / "o").string()}), 1);
}

TEST(Cli, TrainIsDeterministicAndHonoursHorizonOne) {
  const auto dir = scratch("train");
  const auto cfg = write_file(dir / "c.yaml", "env:\n  kind: multi_goal\n  horizon: 1\ntrain:\n  steps_per_policy: 200\nexperiment:\n  eval_episodes: 4\n");
  ASSERT_EQ(run_cli({"train", "--config", cfg.string(), "--out", (dir / "a").string()}), 0);
  ASSERT_EQ(run_cli({"train", "--config", cfg.string(), "--out", (dir / "b").string()}), 0);
  for (const char* f : {"policy.json", "metrics.jsonl", "eval_0.csv", "report.json"})
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  std::ifstream in(dir / "a" / "eval_0.csv");
  const auto eps = read_trajectories_csv(in, false);
  ASSERT_EQ(eps.size(), 4u);
  for (const auto& tr : eps) EXPECT_EQ(tr.size(), 1u);

  ASSERT_EQ(run_cli({"train", "--config", cfg.string(), "--seed", "9", "--out", (dir / "c").string()}), 0);
  EXPECT_NE(slurp(dir / "a" / "policy.json"), slurp(dir / "c" / "policy.json"));
}

TEST(Cli, SinglePolicyDipgReportEqualsTrainReport) {
  const auto dir = scratch("dipg1");
  const auto cfg = write_file(dir / "c.yaml", kTiny);
  ASSERT_EQ(run_cli({"train", "--config", cfg.string(), "--out", (dir / "t").string()}), 0);
  ASSERT_EQ(run_cli({"dipg", "--config", cfg.string(), "--out", (dir / "d").string()}), 0);
  // policies: 2 in the file; rerun dipg with one policy
  write_file(cfg, std::string(kTiny).replace(std::string(kTiny).find("policies: 2"), 11, "policies: 1"));
  ASSERT_EQ(run_cli({"dipg", "--config", cfg.string(), "--out", (dir / "d1").string()}), 0);
  EXPECT_EQ(slurp(dir / "t" / "report.json"), slurp(dir / "d1" / "report.json"));
  EXPECT_EQ(slurp(dir / "t" / "policy.json"), slurp(dir / "d1" / "policy_0.json"));
  EXPECT_TRUE(fs::exists(dir / "d" / "policy_1.json"));
  EXPECT_TRUE(fs::exists(dir / "d" / "stored_1.csv"));
  EXPECT_TRUE(fs::exists(dir / "d" / "metrics_1.jsonl"));

  // compare reproduces the dipg report from the policy files.
  const auto cfg2 = write_file(dir / "c2.yaml", kTiny);
  ASSERT_EQ(run_cli({"compare", "--config", cfg2.string(), "--out", (dir / "cmp").string(), "--policies",
                     (dir / "d" / "policy_0.json").string(), (dir / "d" / "policy_1.json").string()}),
            0);
  EXPECT_EQ(slurp(dir / "d" / "report.json"), slurp(dir / "cmp" / "report.json"));
}

TEST(Cli, MetricsLinesCarryAllFields) {
  const auto dir = scratch("metrics");
  const auto cfg = write_file(dir / "c.yaml", kTiny);
  ASSERT_EQ(run_cli({"dipg", "--config", cfg.string(), "--out", (dir / "d").string()}), 0);
  std::ifstream in(dir / "d" / "metrics_1.jsonl");
  std::string line;
  ASSERT_TRUE(std::getline(in, line));
  const auto j = nlohmann::json::parse(line);
  for (const char* k : {"update", "env_steps", "mean_return", "d_mmd", "argmin_q", "grad_norm"})
    EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_TRUE(j["d_mmd"].is_number());
  std::ifstream in0(dir / "d" / "metrics_0.jsonl");
  ASSERT_TRUE(std::getline(in0, line));
  EXPECT_TRUE(nlohmann::json::parse(line)["d_mmd"].is_null());
}

TEST(Cli, BatchPipelineOnCartpole) {
  const auto dir = scratch("batch");
  const auto cfg = write_file(dir / "c.yaml",
                              "env:\n  kind: cartpole\nexperiment:\n  eval_episodes: 2\nbatch:\n  episodes: 20\n"
                              "  iterations: 5\n  policies: 2\n");
  Environment env(EnvSpec::defaults(EnvKind::cartpole));
  {
    std::ofstream os(dir / "behavior.json");
    write_policy(os, Policy::initialized(PolicySpec::for_env(env), 4));
  }
  ASSERT_EQ(run_cli({"batch", "generate", "--config", cfg.string(), "--out", (dir / "g").string(), "--policies",
                     (dir / "behavior.json").string()}),
            0);
  std::ifstream in(dir / "g" / "dataset.csv");
  const auto trajs = read_trajectories_csv(in, true);
  EXPECT_EQ(trajs.size(), 20u);

  ASSERT_EQ(run_cli({"batch", "train", "--config", cfg.string(), "--out", (dir / "t").string(), "--data",
                     (dir / "g" / "dataset.csv").string()}),
            0);
  EXPECT_TRUE(fs::exists(dir / "t" / "batch_policy_1.json"));

  // Evaluating the behavior policy without exploration noise is not the
  // identity; with ε = 0 data it is.
  const auto cfg0 = write_file(dir / "c0.yaml", "env:\n  kind: cartpole\nbatch:\n  episodes: 15\n  exploration: 0\n");
  ASSERT_EQ(run_cli({"batch", "generate", "--config", cfg0.string(), "--out", (dir / "g0").string(), "--policies",
                     (dir / "behavior.json").string()}),
            0);
  ASSERT_EQ(run_cli({"batch", "eval", "--config", cfg0.string(), "--out", (dir / "e0").string(), "--data",
                     (dir / "g0" / "dataset.csv").string(), "--policies", (dir / "behavior.json").string()}),
            0);
  const auto est = nlohmann::json::parse(slurp(dir / "e0" / "batch_eval.json"))[0]["cwpdis"].get<double>();
  const auto mean = nlohmann::json::parse(slurp(dir / "g0" / "dataset.json"))["mean_discounted_return"].get<double>();
  EXPECT_NEAR(est, mean, 1e-12);

  std::string err;
  write_file(dir / "broken.csv", slurp(dir / "g0" / "dataset.csv") + "0,x,1,2,3,4,0,1,0.5,0\n");
  EXPECT_EQ(run_cli({"batch", "eval", "--config", cfg0.string(), "--out", (dir / "e1").string(), "--data",
                     (dir / "broken.csv").string(), "--policies", (dir / "behavior.json").string()},
                    &err),
            1);
  EXPECT_NE(err.find("line "), std::string::npos) << err;
  EXPECT_EQ(run_cli({"batch", "train", "--config", cfg0.string(), "--out", (dir / "e2").string()}), 2);
}

TEST(TrajectoryCsv, RoundTripsExactly) {
  Rng rng(3);
  for (HeadKind head : {HeadKind::gaussian, HeadKind::categorical}) {
    PolicySpec s;
    s.input_dim = 3;
    s.head = head;
    s.output_dim = 2;
    TrajectorySet set;
    for (std::size_t i = 0; i < 4; ++i) {
      set.push_back(oracle::random_trajectory(s, rng, 1 + i));
      set.back().terminated = i % 2 == 0;
      set.back().steps[0].reward = 1.0 / 3.0;
      if (i == 1) set.back().steps[0].behavior_prob = 0.123456789012345678;
    }
    std::stringstream ss;
    write_trajectories_csv(ss, set);
    const auto back = read_trajectories_csv(ss, head == HeadKind::categorical);
    ASSERT_EQ(back.size(), set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
      EXPECT_EQ(back[i].terminated, set[i].terminated);
      ASSERT_EQ(back[i].size(), set[i].size());
      for (std::size_t t = 0; t < set[i].size(); ++t) {
        EXPECT_EQ(back[i].steps[t].state, set[i].steps[t].state);
        EXPECT_EQ(back[i].steps[t].action.values(), set[i].steps[t].action.values());
        EXPECT_EQ(back[i].steps[t].reward, set[i].steps[t].reward);
        EXPECT_EQ(back[i].steps[t].behavior_prob, set[i].steps[t].behavior_prob);
      }
    }
  }
}

TEST(TrajectoryCsv, MalformedRowsNameTheirLine) {
  const std::string header = "traj_id,t,s0,a0,reward,behavior_prob,done\n";
  const std::vector<std::pair<std::string, std::string>> cases = {
      {header + "0,0,1.0,0,1,,0\n0,1,abc,0,1,,0\n", "line 3"},
      {header + "0,0,1.0,0,1,,0\n0,2,1.0,0,1,,0\n", "line 3"},
      {header + "0,0,1.0,0,1\n", "line 2"},
      {header + "1,0,1.0,0,1,,0\n", "line 2"},
      {header + "0,0,1.0,0,1,,1\n0,1,1.0,0,1,,0\n", "line 3"},
      {"traj,t,s0\n", "line 1"},
  };
  for (const auto& [text, where] : cases) {
    std::stringstream ss(text);
    try {
      read_trajectories_csv(ss, true);
      ADD_FAILURE() << text;
    } catch (const FormatError& e) {
      EXPECT_NE(std::string(e.what()).find(where), std::string::npos) << e.what();
    }
  }
}

TEST(PolicyFile, RoundTripsExactly) {
  PolicySpec s;
  s.hidden_sizes = {3, 2};
  s.bounded_mean = true;
  const Policy p = Policy::initialized(s, 8);
  std::stringstream ss;
  write_policy(ss, p);
  const Policy q = read_policy(ss);
  EXPECT_EQ(q.spec(), p.spec());
  EXPECT_EQ(q.params, p.params);
  std::stringstream bad(R"({"format":"dipg-policy","version":1,"spec":{"input_dim":2},"params":[]})");
  EXPECT_THROW(read_policy(bad), FormatError);
}

TEST(Report, SymmetricMatrixAndOppositeScriptedPoliciesAreDissimilar) {
  EnvSpec es = EnvSpec::defaults(EnvKind::multi_goal);
  const Environment env(es);
  Rng rng(2);
  std::vector<TrajectorySet> sets{rollouts(env, Toward{{1, 0}}, rng, 5), rollouts(env, Toward{{-1, 0}}, rng, 5),
                                  rollouts(env, Toward{{0, 1}}, rng, 5)};
  KernelConfig k;
  k.selector = Selector::states_only;
  const auto r = compare_sets(env, sets, k);
  EXPECT_LT((r.similarity - r.similarity.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j < 3; ++j) {
      EXPECT_GT(r.similarity(i, j), 0.0);
      EXPECT_LE(r.similarity(i, j), 1.0);
      if (i != j) {
        EXPECT_LT(r.similarity(i, j), r.similarity(i, i));
      }
    }
  EXPECT_EQ(r.distinct_goals, std::optional<std::size_t>(3));
  EXPECT_EQ(r.policies[1].majority_goal, std::optional<std::size_t>(1));
  const auto rmin = compare_sets(env, sets, k, SimilarityAggregate::min);
  EXPECT_LE(rmin.cross_similarity, r.cross_similarity);
}

TEST(Report, SingleEpisodeComparesTrajectoryWithItself) {
  const Environment env(EnvSpec::defaults(EnvKind::multi_goal));
  Rng rng(2);
  const auto r = compare_sets(env, {rollouts(env, Toward{{1, 0}}, rng, 1)}, {});
  EXPECT_DOUBLE_EQ(r.similarity(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(r.cross_similarity, 1.0);
}

TEST(Report, ObstacleSideFromPassingEpisodes) {
  EnvSpec es = EnvSpec::defaults(EnvKind::obstacle);
  es.nav.start_noise = 0.0;
  es.nav.transition_noise = 0.0;
  const Environment env(es);
  // Walk diagonally left, then up, past the barrier.
  struct Detour {
    double side;
    ActionSample act(const State& s, Rng&) const {
      if (s[1] < -1.0 && std::abs(s[0]) < 2.6) return {Action::continuous(Eigen::Vector2d(0.5 * side, 0.0)), 0.0};
      return {Action::continuous(Eigen::Vector2d(0.0, 0.5)), 0.0};
    }
  };
  Rng rng(1);
  const auto left = summarize(env, rollouts(env, Detour{-1.0}, rng, 3));
  const auto right = summarize(env, rollouts(env, Detour{1.0}, rng, 3));
  EXPECT_EQ(left.side, BarrierSide::left);
  EXPECT_EQ(right.side, BarrierSide::right);
  EXPECT_EQ(left.passing_episodes, 3u);
}
