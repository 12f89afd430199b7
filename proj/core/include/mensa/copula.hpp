#pragma once

// Synthetic single-event survival data with dependent censoring.
//
// Event and censoring times follow covariate-dependent Weibull marginals
//   S(t | x) = exp(-(t / scale)^shape * exp(g(x)))
// and are coupled at the uniform level through an Archimedean survival
// copula: (S_E(T_E | x), S_C(T_C | x)) ~ C_theta.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mensa/dataset.hpp"
#include "mensa/rng.hpp"

namespace mensa::sim {

enum class CopulaFamily { Independence, Clayton, Frank };

std::string to_string(CopulaFamily family);
CopulaFamily parse_copula_family(std::string_view name);

struct CopulaSpec {
  CopulaFamily family = CopulaFamily::Independence;
  double theta = 0.0;

  // Clayton requires theta >= 0, Frank theta != 0 (both finite).
  void validate() const;
};

struct UniformPair {
  double u = 0.0;
  double v = 0.0;
};

double copula_cdf(const CopulaSpec& spec, double u, double v);
// h(v | u) = dC(u, v)/du, the conditional CDF of V given U = u.
double conditional_cdf(const CopulaSpec& spec, double u, double v);
// Solves h(v | u) = w for v. Closed form for Clayton; bisection to 1e-12
// for Frank.
double conditional_inverse(const CopulaSpec& spec, double u, double w);

// Conditional-distribution sampling: u ~ U(0,1), w ~ U(0,1), v = h^{-1}(w | u).
std::vector<UniformPair> copula_sample(const CopulaSpec& spec, std::size_t n, Rng& rng);
std::vector<UniformPair> copula_sample(const CopulaSpec& spec, std::size_t n, std::uint64_t seed);

// Model Kendall's tau of the copula.
double kendall_tau(const CopulaSpec& spec);
// tau in [0, 0.9]; tau == 0 yields the independence copula for any family.
CopulaSpec tau_to_theta(CopulaFamily family, double tau);

// Tau-b in O(n log n) (Knight's merge-sort algorithm).
double empirical_kendall_tau(std::span<const double> a, std::span<const double> b);

struct WeibullMarginal {
  double shape = 1.0;  // v
  double scale = 1.0;  // rho
};

enum class RiskKind { Linear, Nonlinear };

std::string to_string(RiskKind kind);
RiskKind parse_risk_kind(std::string_view name);

// g(x) = w' x (linear) or g(x) = w' relu(W x) (nonlinear, W is d x d).
struct RiskFunction {
  RiskKind kind = RiskKind::Linear;
  Eigen::MatrixXd hidden;  // empty for linear
  Eigen::VectorXd output;

  double operator()(std::span<const double> x) const;
};

enum class Outcome { Event, Censor };

struct GroundTruthDgp {
  WeibullMarginal event{4.0, 18.0};
  WeibullMarginal censor{5.0, 17.0};
  RiskKind kind = RiskKind::Linear;
  std::size_t num_features = 0;
  RiskFunction event_risk;
  RiskFunction censor_risk;
  CopulaSpec copula;

  const WeibullMarginal& marginal(Outcome which) const;
  const RiskFunction& risk(Outcome which) const;
};

// Draws risk weights N(0, 1/d) from `seed`.
GroundTruthDgp make_dgp(RiskKind kind, std::size_t num_features, const CopulaSpec& copula,
                        std::uint64_t seed, WeibullMarginal event = {4.0, 18.0},
                        WeibullMarginal censor = {5.0, 17.0});

double true_survival(const GroundTruthDgp& dgp, std::span<const double> x, double t, Outcome which);
// Time at which the conditional survival equals s, for s in (0, 1].
double true_quantile(const GroundTruthDgp& dgp, std::span<const double> x, double s,
                     Outcome which);

struct SimulatedData {
  data::MultiEventDataset dataset;  // K = 1, event named "event"
  Eigen::MatrixXd latent_times;     // N x 2: (T_E, T_C)
  std::vector<UniformPair> uniforms;
};

// Features i.i.d. N(0, 1); observed t = min(T_E, T_C), delta = [T_E <= T_C].
SimulatedData generate_dataset(const GroundTruthDgp& dgp, std::size_t n, std::uint64_t seed);

// Ground-truth sidecar (JSON).
std::string truth_to_json(const GroundTruthDgp& dgp);
GroundTruthDgp truth_from_json(std::string_view text);
void save_truth(const std::filesystem::path& path, const GroundTruthDgp& dgp);
GroundTruthDgp load_truth(const std::filesystem::path& path);

}  // namespace mensa::sim
