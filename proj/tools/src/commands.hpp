#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "artifact.hpp"
#include "mensa/copula.hpp"
#include "mensa/metrics.hpp"
#include "mensa/training.hpp"

namespace mensa::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;

struct SimulateOptions {
  std::string dgp = "linear";
  std::string copula = "independence";
  double tau = 0.0;
  std::size_t n = 1000;
  std::size_t d = 10;
  std::uint64_t seed = 0;
  std::filesystem::path out = "sim-out";
};

struct PredictOptions {
  std::filesystem::path model;
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<double> grid_max;  // default: the model's max training time
  std::size_t grid_points = 100;
};

struct EvaluateOptions {
  std::filesystem::path model;
  std::filesystem::path data;
  std::optional<std::filesystem::path> truth;
  std::filesystem::path out;
};

struct TrainSummary {
  std::filesystem::path model_path;
  std::filesystem::path log_path;
  train::TrainResult result;
};

// Writes <out>/data.csv and <out>/truth.json.
void cmd_simulate(const SimulateOptions& o);
TrainSummary cmd_train(const std::filesystem::path& config_path);
void cmd_predict(const PredictOptions& o);
metrics::MetricReport cmd_evaluate(const EvaluateOptions& o);

// Full metric report of a loaded model on raw data.
metrics::MetricReport evaluate_artifact(const Artifact& a, const data::MultiEventDataset& raw,
                                        const sim::GroundTruthDgp* truth);

// Grid used for median-time predictions during evaluation.
std::vector<double> median_grid(const Artifact& a);

// Loads a CSV that must carry exactly the model's input columns.
data::MultiEventDataset load_for_model(const Artifact& a, const std::filesystem::path& path);

// Parses argv and runs one subcommand; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mensa::cli
