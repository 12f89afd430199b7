#pragma once

// INI-style run configuration for `mensa train`.
//
//   [run]    mode, seed, output_dir
//   [data]   path
//   [model]  hidden_width, components, dropout, shape_covariates
//   [train]  batch_size, learning_rate, weight_decay, epochs, patience,
//            trajectories ("a>b, c>d" by event name), trajectory_log
//
// Relative paths resolve against the directory holding the config file.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mensa/model.hpp"
#include "mensa/training.hpp"

namespace mensa::cli {

struct RunConfig {
  train::Mode mode = train::Mode::Multi;
  std::uint64_t seed = 0;
  std::filesystem::path data_path;
  std::filesystem::path output_dir = "mensa-out";
  // Model and optimizer settings; defaults follow the synthetic setup.
  std::size_t hidden_width = 32;
  std::size_t components = 1;
  double dropout = 0.25;
  bool shape_covariates = true;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double weight_decay = 1e-2;
  std::size_t epochs = 100;
  std::size_t patience = 10;
  std::vector<std::pair<std::string, std::string>> trajectories;  // (before, after)
  bool trajectory_log = false;
};

// ContractError on unknown sections/keys or malformed values.
RunConfig parse_run_config(std::istream& in, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

// "a>b, c>d" -> {(a, b), (c, d)}.
std::vector<std::pair<std::string, std::string>> parse_trajectory_list(std::string_view text);

// Resolves event names against the dataset's events (state = index + 1).
train::TrajectorySet resolve_trajectories(
    const std::vector<std::pair<std::string, std::string>>& names,
    const std::vector<std::string>& event_names);

}  // namespace mensa::cli
