#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "config.hpp"

namespace dipg::cli {

// Inputs that come from flags rather than the config file.
struct Inputs {
  std::vector<std::filesystem::path> policies;
  std::optional<std::filesystem::path> data;
};

// Each command writes its artifacts under cfg.out and a JSON summary to `log`.
void cmd_train(const ExperimentConfig& cfg, std::ostream& log);
void cmd_dipg(const ExperimentConfig& cfg, std::ostream& log);
void cmd_eval(const ExperimentConfig& cfg, const Inputs& in, std::ostream& log);
void cmd_compare(const ExperimentConfig& cfg, const Inputs& in, std::ostream& log);
void cmd_batch_generate(const ExperimentConfig& cfg, const Inputs& in, std::ostream& log);
void cmd_batch_train(const ExperimentConfig& cfg, const Inputs& in, std::ostream& log);
void cmd_batch_eval(const ExperimentConfig& cfg, const Inputs& in, std::ostream& log);

Policy load_policy(const std::filesystem::path& path);
BatchDataset load_dataset(const std::filesystem::path& path, double gamma);

// Entry point shared by the executable and the tests; returns the exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dipg::cli
