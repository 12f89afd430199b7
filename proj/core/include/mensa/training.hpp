#pragma once

// Likelihoods over the multi-state encoding and the minibatch Adam loop.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mensa/dataset.hpp"
#include "mensa/model.hpp"

namespace mensa::train {

enum class Mode { Single, Competing, Multi };

std::string to_string(Mode mode);
Mode parse_mode(std::string_view text);

// Observed times are floored here before entering any log-likelihood.
inline constexpr double kMinTime = 1e-8;

// Ordered (A, B): A is known to occur before B. Indices are state indices,
// so events are 1..K.
struct TrajectoryPair {
  std::size_t before = 0;
  std::size_t after = 0;
  friend bool operator==(const TrajectoryPair&, const TrajectoryPair&) = default;
};

struct TrajectorySet {
  std::vector<TrajectoryPair> pairs;

  bool empty() const { return pairs.empty(); }
  // ContractError on self pairs, pairs present in both orders, or states
  // outside 1..num_states-1.
  void validate(std::size_t num_states) const;
};

struct TrainConfig {
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double weight_decay = 1e-2;
  std::size_t epochs = 100;
  std::size_t patience = 10;
  Mode mode = Mode::Multi;
  TrajectorySet trajectories;
  // Accumulate log S_B(t_A) instead of S_B(t_A).
  bool trajectory_log = false;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> log_path;

  void validate() const;
};

// Negative log-likelihood summed over rows and states. nll_competing
// evaluates every state at the event-free state's time (the first
// transition); nll_multi uses each state's own time.
double nll_competing(const MensaModel& model, const data::StateEncodedDataset& batch);
double nll_multi(const MensaModel& model, const data::StateEncodedDataset& batch);
double trajectory_likelihood(const MensaModel& model, const data::StateEncodedDataset& batch,
                             const TrajectorySet& trajectories, bool log_variant = false);

struct LossOptions {
  Mode mode = Mode::Multi;
  TrajectorySet trajectories;
  bool trajectory_log = false;
};

LossOptions loss_options(const TrainConfig& config);

// (nll - trajectory) / N with the likelihood picked by options.mode.
double total_loss(const MensaModel& model, const data::StateEncodedDataset& batch,
                  const LossOptions& options);

struct LossGradient {
  double loss = 0.0;
  std::vector<double> gradient;  // flat, aligned with model.params().values()
};

// Reverse-mode gradient of total_loss with dropout disabled.
LossGradient total_loss_gradient(const MensaModel& model, const data::StateEncodedDataset& batch,
                                 const LossOptions& options);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
  double wall_time = 0.0;  // seconds since train() started
};

struct TrainResult {
  MensaModel model;
  std::vector<EpochRecord> log;
  double initial_valid_loss = 0.0;
  double best_valid_loss = 0.0;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

// Minibatch Adam with early stopping on the validation total_loss. Returns
// the parameters of the best validation epoch. Throws NumericalError on a
// non-finite loss or gradient.
TrainResult train(const MensaModel& initial, const data::StateEncodedDataset& train_set,
                  const data::StateEncodedDataset& valid_set, const TrainConfig& config);

// One JSON object per line.
void write_log_record(std::ostream& out, const EpochRecord& record);
void save_training_log(const std::filesystem::path& path, const std::vector<EpochRecord>& log);

}  // namespace mensa::train
