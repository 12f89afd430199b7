#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mensa::data {

enum class FeatureKind { Numeric, Categorical };

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::Numeric;

  friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

using Schema = std::vector<FeatureSpec>;

// One raw feature column. Missing numeric cells are NaN, missing
// categorical cells are empty strings. Only the vector matching `spec.kind`
// is populated.
struct FeatureColumn {
  FeatureSpec spec;
  std::vector<double> numeric;
  std::vector<std::string> categorical;

  bool is_missing(std::size_t row) const;
};

// Rows of (features, per-event observed time, per-event indicator).
struct MultiEventDataset {
  std::vector<FeatureColumn> features;
  std::vector<std::string> event_names;
  Eigen::MatrixXd times;   // N x K, finite and >= 0
  Eigen::MatrixXi events;  // N x K, entries in {0, 1}

  std::size_t rows() const { return static_cast<std::size_t>(times.rows()); }
  std::size_t num_events() const { return event_names.size(); }
  Schema schema() const;

  // Dense N x d matrix. Requires every column numeric with no missing cells.
  Eigen::MatrixXd feature_matrix() const;
  MultiEventDataset subset(std::span<const std::size_t> rows) const;
  // Throws DataError when any dataset invariant is violated.
  void validate() const;
};

// Names used in CSV headers and model files: [A-Za-z0-9_.-]+ .
bool is_valid_name(std::string_view name);

// Header `f_<name>...,time_<event>,event_<event>...`. Empty cells are
// missing values. Without a schema, a feature column is numeric iff every
// non-empty cell parses as a double.
MultiEventDataset read_csv(std::istream& in, const std::optional<Schema>& schema = std::nullopt);
MultiEventDataset load_csv(const std::filesystem::path& path,
                           const std::optional<Schema>& schema = std::nullopt);
void write_csv(std::ostream& out, const MultiEventDataset& ds);
void save_csv(const std::filesystem::path& path, const MultiEventDataset& ds);

// Column 0 is the event-free state; columns 1..K are the events.
struct StateEncodedDataset {
  Eigen::MatrixXd x;       // N x d
  Eigen::MatrixXd times;   // N x P
  Eigen::MatrixXi events;  // N x P

  std::size_t rows() const { return static_cast<std::size_t>(times.rows()); }
  std::size_t num_states() const { return static_cast<std::size_t>(times.cols()); }
  StateEncodedDataset subset(std::span<const std::size_t> rows) const;
};

// Event-free state: if no event was observed, time = max censored time and
// indicator 1; otherwise time = first observed event time and indicator 0.
StateEncodedDataset encode_event_free(const MultiEventDataset& ds);
StateEncodedDataset encode_event_free(const Eigen::MatrixXd& x, const Eigen::MatrixXd& times,
                                      const Eigen::MatrixXi& events);

struct SplitSpec {
  double train = 0.7;
  double valid = 0.1;
  double test = 0.2;
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> valid;
  std::vector<std::size_t> test;
};

// Stratified on the joint event-indicator pattern. Strata with fewer than
// three rows are assigned row by row at random (with a warning).
SplitIndices split_stratified(const MultiEventDataset& ds, const SplitSpec& spec);

struct PreprocessColumn {
  std::string name;
  FeatureKind kind = FeatureKind::Numeric;
  bool dropped = false;  // constant numeric column
  double mean = 0.0;
  double stddev = 1.0;
  std::string mode;
  std::vector<std::string> categories;  // sorted vocabulary

  friend bool operator==(const PreprocessColumn&, const PreprocessColumn&) = default;
};

struct PreprocessState {
  std::vector<PreprocessColumn> columns;

  Schema input_schema() const;
  std::vector<std::string> output_names() const;
  std::size_t output_width() const { return output_names().size(); }

  friend bool operator==(const PreprocessState&, const PreprocessState&) = default;
};

// Statistics come from the training split only: mean and population
// standard deviation of observed numeric values, mode and vocabulary of
// categorical values.
PreprocessState preprocess_fit(const MultiEventDataset& train);

// Mean/mode imputation, z-scoring of numeric columns, one-hot encoding of
// categorical columns (unseen categories map to all zeros). The result has
// only numeric, complete columns.
MultiEventDataset preprocess_apply(const PreprocessState& state, const MultiEventDataset& ds);

}  // namespace mensa::data
