#pragma once

// Shared-representation mixture-of-Weibull network.
//
// A single affine + ReLU6 trunk maps x to a hidden representation h. For
// every state p and mixture component psi:
//
//   log scale_psi(x) = scale_bias_psi + selu(h' scale_proj_psi)
//   log shape_psi(x) = shape_bias_psi + selu(h' shape_proj_psi)
//   weight_psi(x)    = softmax_psi(h' gate_psi)
//
// and the state's survival distribution is the weighted mixture of the Psi
// Weibull components. Densities and survivals are evaluated in log space.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "mensa/params.hpp"
#include "mensa/textdoc.hpp"

namespace mensa {

struct MensaConfig {
  std::size_t num_features = 1;    // d
  std::size_t num_states = 2;      // P = K + 1
  std::size_t num_components = 1;  // Psi
  std::size_t hidden_width = 32;
  double dropout = 0.25;
  // When false the shape head ignores the representation, so each state is
  // a proportional-hazards Weibull model for Psi = 1.
  bool shape_covariates = true;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const MensaConfig&, const MensaConfig&) = default;
};

struct WeibullComponent {
  double scale = 1.0;   // beta
  double shape = 1.0;   // eta
  double weight = 1.0;  // gating weight g
};

using StateHead = std::vector<WeibullComponent>;

// Survival curves of every state for one instance on a shared time grid.
struct IsdMatrix {
  std::vector<double> grid;
  Eigen::MatrixXd survival;  // P x |grid|
};

struct MedianPrediction {
  double time = 0.0;
  bool censored = false;  // S stayed above 0.5 over the whole grid
};

// Throws ContractError unless grid[0] == 0, the grid is strictly
// increasing and has at least two points.
void validate_grid(std::span<const double> grid);
std::vector<double> linear_grid(double t_max, std::size_t points);

class MensaModel {
 public:
  explicit MensaModel(const MensaConfig& config);

  const MensaConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::size_t parameter_count() const { return params_.size(); }

  std::vector<double> representation(std::span<const double> x) const;
  std::vector<StateHead> head_params(std::span<const double> x) const;

  double log_pdf(std::span<const double> x, double t, std::size_t state) const;
  double log_surv(std::span<const double> x, double t, std::size_t state) const;
  double log_hazard(std::span<const double> x, double t, std::size_t state) const;

  IsdMatrix predict_isd(std::span<const double> x, std::span<const double> grid) const;
  MedianPrediction predict_time(std::span<const double> x, std::size_t state,
                                std::span<const double> grid) const;

 private:
  void check_input(std::span<const double> x, std::size_t state) const;

  MensaConfig config_;
  ParamStore params_;
};

// Tensor names of a model built from `config`.
std::string shared_weight_name();
std::string shared_bias_name();
std::string state_tensor_name(std::size_t state, std::string_view which);

// Fresh model: fan-in scaled uniform weights drawn from config.seed, log
// scale/shape biases at 0.
MensaModel init_model(const MensaConfig& config);

// Median crossing of a survival curve sampled on `grid`, linearly
// interpolated between the bracketing grid points.
MedianPrediction median_from_curve(std::span<const double> grid, std::span<const double> surv);

// Structured-text serialization; fp64 values at 17 significant digits so
// the round trip is bit-exact.
void append_model(TextDocument& doc, const MensaModel& model);
MensaModel model_from_document(const TextDocument& doc);
void save_model(const std::filesystem::path& path, const MensaModel& model);
MensaModel load_model(const std::filesystem::path& path);

}  // namespace mensa
