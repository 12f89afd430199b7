#pragma once

// Evaluation metrics: Kaplan-Meier, concordance (Harrell, global, local),
// IPCW Brier/IBS, margin MAE, D-calibration and Survival-l1.

#include <Eigen/Dense>
#include <filesystem>
#include <functional>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mensa::sim {
struct GroundTruthDgp;
}

namespace mensa::metrics {

// Right-continuous step function starting at 1.
struct StepCurve {
  std::vector<double> times;   // jump times, strictly increasing
  std::vector<double> values;  // value from times[k] on
  double horizon = 0.0;        // largest observed time used in the fit

  double operator()(double t) const;
  double left_limit(double t) const;
  // Integral of the curve over [a, b].
  double integral(double a, double b) const;
};

StepCurve km_fit(std::span<const double> times, std::span<const int> events);

struct ConcordanceCounts {
  double concordant = 0.0;
  double comparable = 0.0;
};

// Comparable: t_i < t_j with delta_i = 1. Concordant: additionally
// risk_i > risk_j. Tied risks count as discordant.
ConcordanceCounts concordance_counts(std::span<const double> risks, std::span<const double> times,
                                     std::span<const int> events);
// DomainError("no comparable pairs") when nothing is comparable.
double harrell_ci(std::span<const double> risks, std::span<const double> times,
                  std::span<const int> events);

// Columns are events. Global pools the per-event counts; local counts the
// pairs formed inside each row across its events.
double global_ci(const Eigen::MatrixXd& risks, const Eigen::MatrixXd& times,
                 const Eigen::MatrixXi& events);
double local_ci(const Eigen::MatrixXd& risks, const Eigen::MatrixXd& times,
                const Eigen::MatrixXi& events);

// 32 interior quantiles (levels k/33) of the observed times, deduplicated.
std::vector<double> default_eval_grid(std::span<const double> times);

// IPCW Brier score at every grid time. surv is N x |grid| (predicted
// survival of each row at each grid time). G is the censoring KM.
std::vector<double> brier_scores(const Eigen::MatrixXd& surv, std::span<const double> grid,
                                 std::span<const double> times, std::span<const int> events);
// Trapezoid of the Brier scores divided by the grid span.
double ibs(const Eigen::MatrixXd& surv, std::span<const double> grid,
           std::span<const double> times, std::span<const int> events);

// Event rows: |t - pred|, weight 1. Censored rows: margin time
// t + int_t^horizon S_KM / S_KM(t), weight 1 - S_KM(t).
double margin_time(const StepCurve& km, double t);
double margin_mae(std::span<const double> pred_times, std::span<const double> times,
                  std::span<const int> events, const StepCurve& km);

struct DCalibration {
  std::vector<double> histogram;
  double statistic = 0.0;
  double p_value = 1.0;
  bool calibrated() const { return p_value > 0.05; }
};

inline constexpr std::size_t kDCalBins = 10;
inline constexpr std::size_t kDCalMinRows = 20;

// Chi-square test of the histogram against a uniform one.
DCalibration chi_square_uniform(std::vector<double> histogram);
// surv_at_time[i] = S_i(t_i). Censored rows spread unit mass uniformly
// over [0, S_i(t_i)].
DCalibration d_calibration(std::span<const double> surv_at_time, std::span<const int> events,
                           std::size_t bins = kDCalBins);

using SurvivalFn = std::function<double(double)>;

inline constexpr std::size_t kL1Points = 512;
inline constexpr double kL1Level = 0.01;

// (1 / t_max) * int_0^t_max |truth - pred| dt on 0 plus log-spaced points.
double survival_l1(const SurvivalFn& truth, const SurvivalFn& pred, double t_max,
                   std::size_t points = kL1Points);
// Mean over rows of x; t_max per row is the true 1% survival quantile.
// pred(i, t) is the predicted event survival of row i.
double survival_l1(const sim::GroundTruthDgp& truth, const Eigen::MatrixXd& x,
                   const std::function<double(std::size_t, double)>& pred,
                   std::size_t points = kL1Points);

struct EventMetrics {
  std::string name;
  double ci = 0.0;
  double ibs = 0.0;
  double mmae = 0.0;
  DCalibration dcal;
  std::optional<double> survival_l1;
};

struct MetricReport {
  std::string mode;
  std::size_t rows = 0;
  std::vector<EventMetrics> events;
  std::optional<double> global_ci;
  std::optional<double> local_ci;
  double mean_ci = 0.0;
  double mean_ibs = 0.0;
  double mean_mmae = 0.0;
  std::size_t dcal_passed = 0;

  // Fills the mean_* fields and dcal_passed from events.
  void summarize();
};

nlohmann::ordered_json to_json(const MetricReport& report);
void save_report(const std::filesystem::path& path, const MetricReport& report);

}  // namespace mensa::metrics
