#include "config.hpp"

#include <yaml-cpp/yaml.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace dipg::cli {

namespace {

std::string where(const YAML::Node& node) {
  const auto mark = node.Mark();
  if (mark.line < 0) return "";
  return "line " + std::to_string(mark.line + 1) + ": ";
}

// One mapping section. Every key must be read exactly once through `take`;
// `finish` rejects the rest.
class Section {
 public:
  Section(const YAML::Node& node, std::string name) : node_(node), name_(std::move(name)) {
    if (node_ && !node_.IsNull() && !node_.IsMap())
      throw ConfigError(where(node_) + "section '" + name_ + "' must be a mapping");
  }

  template <typename T>
  void take(const std::string& key, T& out) {
    known_.insert(key);
    if (!node_ || node_.IsNull() || !node_.IsMap()) return;
    const YAML::Node v = node_[key];
    if (!v || v.IsNull()) return;
    try {
      out = v.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(where(v) + "'" + path(key) + "' has the wrong type");
    }
    check(v, key, out);
  }

  template <typename T>
  void take(const std::string& key, std::optional<T>& out) {
    T value{};
    bool present = node_ && node_.IsMap() && node_[key] && !node_[key].IsNull();
    take(key, value);
    if (present) out = value;
  }

  // Enumerated string value parsed by `parse`; its exceptions become config errors.
  template <typename E, typename Parse>
  void take_enum(const std::string& key, E& out, Parse parse) {
    std::optional<std::string> s;
    take(key, s);
    if (!s) return;
    try {
      out = parse(*s);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where(node_[key]) + "'" + path(key) + "': " + e.what());
    }
  }

  YAML::Node child(const std::string& key) {
    known_.insert(key);
    if (!node_ || !node_.IsMap()) return YAML::Node();
    return node_[key];
  }

  std::string path(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

  void finish() const {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!known_.count(key)) throw ConfigError(where(kv.first) + "unknown key '" + path(key) + "'");
    }
  }

 private:
  template <typename T>
  void check(const YAML::Node& v, const std::string& key, const T& out) const {
    if constexpr (std::is_floating_point_v<T>) {
      if (!std::isfinite(out)) throw ConfigError(where(v) + "'" + path(key) + "' must be finite");
    }
  }

  YAML::Node node_;
  std::string name_;
  std::set<std::string> known_;
};

Eigen::Vector2d to_point(const YAML::Node& n, const std::string& what) {
  if (!n.IsSequence() || n.size() != 2) throw ConfigError(where(n) + what + " must be a pair [x, y]");
  try {
    return {n[0].as<double>(), n[1].as<double>()};
  } catch (const YAML::Exception&) {
    throw ConfigError(where(n) + what + " must hold numbers");
  }
}

void read_env(const YAML::Node& node, ExperimentConfig& cfg) {
  Section s(node, "env");
  EnvKind kind = EnvKind::multi_goal;
  s.take_enum("kind", kind, parse_env_kind);
  cfg.env = EnvSpec::defaults(kind);
  EnvSpec& e = cfg.env;
  s.take("horizon", e.horizon);
  s.take("gamma", e.gamma);

  auto& nav = e.nav;
  s.take("goal_radius", nav.goal_radius);
  s.take("action_bound", nav.action_bound);
  s.take("start_noise", nav.start_noise);
  s.take("transition_noise", nav.transition_noise);
  s.take("distance_scale", nav.distance_scale);
  s.take("goal_bonus", nav.goal_bonus);
  s.take("barrier_penalty", nav.barrier_penalty);
  if (const auto start = s.child("start"); start && !start.IsNull()) nav.start = to_point(start, "env.start");
  if (const auto goals = s.child("goals"); goals && !goals.IsNull()) {
    if (!goals.IsSequence()) throw ConfigError(where(goals) + "env.goals must be a list of [x, y] pairs");
    nav.goals.clear();
    for (const auto& g : goals) nav.goals.push_back(to_point(g, "env.goals entry"));
  }
  if (const auto b = s.child("barrier"); b) {
    if (b.IsNull()) {
      nav.barrier.reset();
    } else {
      Section bs(b, "env.barrier");
      Rect r = nav.barrier.value_or(Rect{});
      bs.take("x_min", r.x_min);
      bs.take("x_max", r.x_max);
      bs.take("y_min", r.y_min);
      bs.take("y_max", r.y_max);
      bs.finish();
      nav.barrier = r;
    }
  }
  s.finish();
  if (e.is_navigation() == false && (node && node.IsMap()))
    for (const char* k : {"goals", "start", "barrier", "goal_radius"})
      if (node[k]) throw ConfigError(where(node[k]) + "'env." + k + "' does not apply to cartpole");
}

void read_policy(const YAML::Node& node, PolicyOptions& p) {
  Section s(node, "policy");
  s.take("hidden_sizes", p.hidden_sizes);
  s.take("initial_std", p.initial_std);
  s.take("bounded_mean", p.bounded_mean);
  s.finish();
}

void read_adam(const YAML::Node& node, AdamConfig& a, const std::string& name) {
  Section s(node, name);
  s.take("beta1", a.beta1);
  s.take("beta2", a.beta2);
  s.take("epsilon", a.epsilon);
  s.finish();
}

void read_train(const YAML::Node& node, TrainConfig& t) {
  Section s(node, "train");
  s.take_enum("algo", t.algo, parse_algo);
  s.take("learning_rate", t.learning_rate);
  s.take_enum("lr_schedule", t.lr_schedule, parse_lr_schedule);
  s.take_enum("baseline", t.baseline, parse_baseline);
  s.take("alphas", t.alphas);
  s.take("alpha_decay_fraction", t.alpha_decay_fraction);
  s.take_enum("diversity_placement", t.diversity_placement, parse_diversity_placement);
  s.take("steps_per_policy", t.steps_per_policy);
  s.take("rollouts_per_update", t.rollouts_per_update);
  s.take("clip_epsilon", t.clip_epsilon);
  s.take("epochs", t.epochs);
  s.take("minibatch_size", t.minibatch_size);
  s.take("stored_trajectories", t.stored_trajectories);
  read_adam(s.child("adam"), t.adam, "train.adam");
  s.finish();
}

void read_kernel(const YAML::Node& node, KernelConfig& k) {
  Section s(node, "kernel");
  s.take("bandwidth", k.bandwidth);
  s.take_enum("selector", k.selector, parse_selector);
  s.take("max_steps", k.max_steps);
  s.take("normalize", k.normalize);
  s.finish();
}

void read_experiment(const YAML::Node& node, ExperimentConfig& cfg) {
  Section s(node, "experiment");
  s.take("seed", cfg.seed);
  s.take("policies", cfg.policies);
  s.take("eval_episodes", cfg.eval_episodes);
  s.take_enum("similarity_aggregate", cfg.similarity_aggregate, parse_similarity_aggregate);
  std::string out = cfg.out.string();
  s.take("out", out);
  cfg.out = out;
  s.finish();
}

void read_batch(const YAML::Node& node, BatchOptions& b, const std::filesystem::path& base) {
  Section s(node, "batch");
  s.take("policies", b.policies);
  s.take("episodes", b.episodes);
  s.take("exploration", b.exploration);
  s.take_enum("likelihood", b.train.mode, parse_likelihood_mode);
  s.take("learning_rate", b.train.learning_rate);
  s.take("iterations", b.train.iterations);
  s.take("alphas", b.train.alphas);
  read_adam(s.child("adam"), b.train.adam, "batch.adam");
  std::optional<std::string> dataset, behavior;
  s.take("dataset", dataset);
  s.take("behavior", behavior);
  if (dataset) b.dataset = base / *dataset;
  if (behavior) b.behavior = base / *behavior;
  s.finish();
}

}  // namespace

PolicySpec ExperimentConfig::policy_spec() const {
  PolicySpec spec = PolicySpec::for_env(Environment(env), policy.hidden_sizes);
  spec.initial_log_std = std::log(policy.initial_std);
  spec.bounded_mean = policy.bounded_mean;
  return spec;
}

void ExperimentConfig::set_seed(std::uint64_t s) {
  seed = s;
  train.seed = s;
  batch.train.seed = s;
}

void ExperimentConfig::validate() const {
  try {
    env.validate();
    train.validate();
    kernel.validate();
    batch.train.validate();
    if (!(policy.initial_std > 0.0)) throw std::invalid_argument("policy.initial_std must be > 0");
    policy_spec().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (policies < 1) throw ConfigError("experiment.policies must be >= 1");
  if (eval_episodes < 1) throw ConfigError("experiment.eval_episodes must be >= 1");
  if (batch.policies < 1) throw ConfigError("batch.policies must be >= 1");
  if (batch.episodes < 1) throw ConfigError("batch.episodes must be >= 1");
  if (!(batch.exploration >= 0.0 && batch.exploration <= 1.0))
    throw ConfigError("batch.exploration must lie in [0, 1]");
}

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError("line " + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  ExperimentConfig cfg;
  Section s(root, "");
  read_env(s.child("env"), cfg);
  read_policy(s.child("policy"), cfg.policy);
  read_train(s.child("train"), cfg.train);
  read_kernel(s.child("kernel"), cfg.kernel);
  read_experiment(s.child("experiment"), cfg);
  read_batch(s.child("batch"), cfg.batch, base_dir);
  s.finish();
  cfg.set_seed(cfg.seed);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str(), path.parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace dipg::cli
