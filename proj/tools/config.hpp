#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "dipg/batch.hpp"
#include "dipg/env.hpp"
#include "dipg/kernel.hpp"
#include "dipg/pg.hpp"
#include "dipg/policy.hpp"
#include "dipg/report.hpp"

namespace dipg::cli {

// Invalid or unreadable configuration. Maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PolicyOptions {
  std::vector<std::size_t> hidden_sizes{32};
  double initial_std = 0.5;
  bool bounded_mean = false;
};

struct BatchOptions {
  BatchConfig train;
  std::size_t policies = 1;
  std::size_t episodes = 270;
  double exploration = 0.1;
  // Resolved relative to the config file.
  std::optional<std::filesystem::path> dataset;
  std::optional<std::filesystem::path> behavior;
};

struct ExperimentConfig {
  EnvSpec env = EnvSpec::defaults(EnvKind::multi_goal);
  PolicyOptions policy;
  TrainConfig train;
  KernelConfig kernel;
  BatchOptions batch;
  std::size_t policies = 4;
  std::size_t eval_episodes = 32;
  SimilarityAggregate similarity_aggregate = SimilarityAggregate::mean;
  std::uint64_t seed = 0;
  std::filesystem::path out = "runs";

  PolicySpec policy_spec() const;
  void set_seed(std::uint64_t s);
  void validate() const;
};

ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = ".");

}  // namespace dipg::cli
