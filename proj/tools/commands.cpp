#include "commands.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>
#include <string>

#include "dipg/io.hpp"

namespace dipg::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  return os;
}

void prepare(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw std::runtime_error("cannot create output directory '" + dir.string() + "'");
}

void write_json(const fs::path& path, const json& j) { open_out(path) << j.dump(2) << '\n'; }

void write_csv(const fs::path& path, const TrajectorySet& trajs) {
  auto os = open_out(path);
  write_trajectories_csv(os, trajs);
}

void write_policy_file(const fs::path& path, const Policy& p) {
  auto os = open_out(path);
  write_policy(os, p);
}

std::string indexed(const std::string& stem, std::size_t i, const std::string& ext) {
  return stem + "_" + std::to_string(i) + ext;
}

void require_compatible(const Policy& p, const Environment& env, const fs::path& path) {
  if (!p.spec().compatible_with(env))
    throw std::runtime_error("policy '" + path.string() + "' does not match the configured environment");
}

std::vector<Policy> load_policies(const Inputs& in, const Environment& env) {
  if (in.policies.empty()) throw ConfigError("--policies: at least one policy file is required");
  std::vector<Policy> out;
  for (const auto& p : in.policies) {
    out.push_back(load_policy(p));
    require_compatible(out.back(), env, p);
  }
  return out;
}

// Evaluates every policy, dumps its episodes and writes the comparison report.
json evaluate_and_report(const ExperimentConfig& cfg, const Environment& env, const std::vector<Policy>& policies,
                         const std::string& eval_stem) {
  std::vector<TrajectorySet> sets;
  for (std::size_t i = 0; i < policies.size(); ++i) {
    sets.push_back(evaluate(env, policies[i], cfg.eval_episodes, cfg.seed, i));
    write_csv(cfg.out / indexed(eval_stem, i, ".csv"), sets.back());
  }
  const json report = report_to_json(compare_sets(env, sets, cfg.kernel, cfg.similarity_aggregate));
  write_json(cfg.out / "report.json", report);
  return report;
}

fs::path dataset_path(const ExperimentConfig& cfg, const Inputs& in) {
  if (in.data) return *in.data;
  if (cfg.batch.dataset) return *cfg.batch.dataset;
  throw ConfigError("no dataset: pass --data or set batch.dataset");
}

}  // namespace

Policy load_policy(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read policy file '" + path.string() + "'");
  try {
    return read_policy(is);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

BatchDataset load_dataset(const fs::path& path, double gamma) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read dataset '" + path.string() + "'");
  BatchDataset data;
  data.gamma = gamma;
  try {
    data.trajectories = read_trajectories_csv(is, true);
    data.validate();
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return data;
}

void cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
  prepare(cfg.out);
  const Environment env(cfg.env);
  auto metrics = open_out(cfg.out / "metrics.jsonl");
  const TrainResult r = train_policy(env, cfg.policy_spec(), cfg.train, policy_seed(cfg.seed, 0),
                                     [&](const UpdateMetrics& m) { write_metrics_line(metrics, m); });
  write_policy_file(cfg.out / "policy.json", r.policy);
  log << evaluate_and_report(cfg, env, {r.policy}, "eval").dump(2) << '\n';
}

void cmd_dipg(const ExperimentConfig& cfg, std::ostream& log) {
  prepare(cfg.out);
  const Environment env(cfg.env);
  std::vector<std::ofstream> metrics;
  for (std::size_t n = 0; n < cfg.policies; ++n) metrics.push_back(open_out(cfg.out / indexed("metrics", n, ".jsonl")));
  const PolicyCollection coll = dipg::dipg(
      env, cfg.policies, cfg.policy_spec(), cfg.train, cfg.kernel,
      [&](std::size_t n, const UpdateMetrics& m) { write_metrics_line(metrics[n], m); },
      [&](std::size_t n, const PolicyRecord& rec) {
        write_policy_file(cfg.out / indexed("policy", n, ".json"), rec.policy);
        write_csv(cfg.out / indexed("stored", n, ".csv"), rec.stored);
      });
  std::vector<Policy> policies;
  for (const auto& rec : coll) policies.push_back(rec.policy);
  log << evaluate_and_report(cfg, env, policies, "eval").dump(2) << '\n';
}

void cmd_eval(const ExperimentConfig& cfg, const Inputs& in, std::ostream& log) {
  const Environment env(cfg.env);
  const auto policies = load_policies(in, env);
  prepare(cfg.out);
  json j = json::array();
  for (std::size_t i = 0; i < policies.size(); ++i) {
    const TrajectorySet eps = evaluate(env, policies[i], cfg.eval_episodes, cfg.seed, i);
    write_csv(cfg.out / indexed("eval", i, ".csv"), eps);
    const PolicySummary s = summarize(env, eps);
    json e = {{"policy", in.policies[i].filename().string()}, {"mean_return", s.mean_return}, {"std_return", s.std_return}};
    if (!s.goal_counts.empty()) e["goal_counts"] = s.goal_counts;
    j.push_back(e);
  }
  write_json(cfg.out / "eval.json", j);
  log << j.dump(2) << '\n';
}

void cmd_compare(const ExperimentConfig& cfg, const Inputs& in, std::ostream& log) {
  const Environment env(cfg.env);
  const auto policies = load_policies(in, env);
  prepare(cfg.out);
  log << evaluate_and_report(cfg, env, policies, "eval").dump(2) << '\n';
}

void cmd_batch_generate(const ExperimentConfig& cfg, const Inputs& in, std::ostream& log) {
  const Environment env(cfg.env);
  fs::path behavior_path;
  if (!in.policies.empty()) behavior_path = in.policies.front();
  else if (cfg.batch.behavior) behavior_path = *cfg.batch.behavior;
  else throw ConfigError("no behavior policy: pass --policies or set batch.behavior");
  const Policy behavior = load_policy(behavior_path);
  require_compatible(behavior, env, behavior_path);
  if (behavior.spec().head != HeadKind::categorical)
    throw std::runtime_error("batch generation needs a discrete-action behavior policy");
  prepare(cfg.out);
  const BatchDataset data = generate_batch(env, behavior, cfg.batch.exploration, cfg.batch.episodes, cfg.seed);
  write_csv(cfg.out / "dataset.csv", data.trajectories);
  double mean = 0.0;
  for (const auto& tr : data.trajectories) mean += tr.discounted_return(data.gamma);
  mean /= static_cast<double>(data.size());
  const json j = {{"episodes", data.size()}, {"mean_discounted_return", mean}};
  write_json(cfg.out / "dataset.json", j);
  log << j.dump(2) << '\n';
}

void cmd_batch_train(const ExperimentConfig& cfg, const Inputs& in, std::ostream& log) {
  const Environment env(cfg.env);
  const PolicySpec spec = cfg.policy_spec();
  if (spec.head != HeadKind::categorical) throw ConfigError("batch training needs a discrete-action environment");
  const BatchDataset data = load_dataset(dataset_path(cfg, in), env.gamma());
  prepare(cfg.out);
  const auto policies = batch_dipg(data, cfg.batch.policies, spec, cfg.batch.train, cfg.kernel);
  json j = json::array();
  for (std::size_t n = 0; n < policies.size(); ++n) {
    const auto& p = policies[n];
    write_policy_file(cfg.out / indexed("batch_policy", n, ".json"), p);
    const OpeEstimate est = cwpdis(p.net, p.params, data);
    j.push_back({{"policy", n},
                 {"surrogate", surrogate(p.net, p.params, data, cfg.batch.train.mode).value},
                 {"cwpdis", est.value}});
  }
  write_json(cfg.out / "batch_train.json", j);
  log << j.dump(2) << '\n';
}

void cmd_batch_eval(const ExperimentConfig& cfg, const Inputs& in, std::ostream& log) {
  const Environment env(cfg.env);
  const auto policies = load_policies(in, env);
  const BatchDataset data = load_dataset(dataset_path(cfg, in), env.gamma());
  prepare(cfg.out);
  json j = json::array();
  for (std::size_t i = 0; i < policies.size(); ++i) {
    const OpeEstimate est = cwpdis(policies[i].net, policies[i].params, data);
    j.push_back({{"policy", in.policies[i].filename().string()},
                 {"cwpdis", est.value},
                 {"ess", est.ess},
                 {"zero_weight_steps", est.zero_weight_steps}});
  }
  write_json(cfg.out / "batch_eval.json", j);
  log << j.dump(2) << '\n';
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Diversity-inducing policy gradient experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::vector<std::string> policy_files;
  std::optional<std::string> data_file;
  auto add_common = [&](CLI::App* c) {
    c->add_option("--config", config_path, "YAML experiment config")->check(CLI::ExistingFile);
    c->add_option("--seed", seed, "Override experiment.seed");
    c->add_option("--out", out_dir, "Override experiment.out");
  };
  auto add_policies = [&](CLI::App* c) {
    c->add_option("--policies", policy_files, "Policy files")->expected(1, -1);
  };
  auto add_data = [&](CLI::App* c) { c->add_option("--data", data_file, "Trajectory CSV dataset"); };

  auto* train = app.add_subcommand("train", "Train one policy without a diversity term");
  auto* dipg_cmd = app.add_subcommand("dipg", "Train a collection of diverse policies");
  auto* eval = app.add_subcommand("eval", "Roll out policies and report returns");
  auto* compare = app.add_subcommand("compare", "Return and similarity report for policies");
  auto* batch = app.add_subcommand("batch", "Off-policy batch pipeline");
  batch->require_subcommand(1);
  auto* generate = batch->add_subcommand("generate", "Collect a dataset with a behavior policy");
  auto* btrain = batch->add_subcommand("train", "Train policies on a dataset");
  auto* beval = batch->add_subcommand("eval", "CWPDIS estimates for policies on a dataset");
  for (auto* c : {train, dipg_cmd, eval, compare, generate, btrain, beval}) add_common(c);
  for (auto* c : {eval, compare, generate, beval}) add_policies(c);
  for (auto* c : {btrain, beval}) add_data(c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    ExperimentConfig cfg = config_path.empty() ? parse_config("") : load_config(config_path);
    if (seed) cfg.set_seed(*seed);
    if (out_dir) cfg.out = *out_dir;
    Inputs in;
    for (const auto& p : policy_files) in.policies.emplace_back(p);
    if (data_file) in.data = fs::path(*data_file);

    if (train->parsed()) cmd_train(cfg, out);
    else if (dipg_cmd->parsed()) cmd_dipg(cfg, out);
    else if (eval->parsed()) cmd_eval(cfg, in, out);
    else if (compare->parsed()) cmd_compare(cfg, in, out);
    else if (generate->parsed()) cmd_batch_generate(cfg, in, out);
    else if (btrain->parsed()) cmd_batch_train(cfg, in, out);
    else if (beval->parsed()) cmd_batch_eval(cfg, in, out);
    return 0;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace dipg::cli
