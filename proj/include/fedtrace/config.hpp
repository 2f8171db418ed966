#pragma once

#include <filesystem>
#include <string>

#include "fedtrace/simnet.hpp"

namespace fedtrace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  Scenario scenario;
  std::uint64_t seed = 1;
  std::string out_dir;
  int global_eval_samples = 200;
};

// Strict parse: unknown keys are rejected with their path, wrong types and
// parse errors are reported with line positions.
ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>");
ExperimentConfig load_config(const std::filesystem::path& file);

}  // namespace fedtrace
