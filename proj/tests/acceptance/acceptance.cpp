// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails.

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "artifact.hpp"
#include "commands.hpp"
#include "mensa/copula.hpp"
#include "mensa/metrics.hpp"
#include "mensa/training.hpp"
#include "oracles.hpp"

using namespace mensa;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

MensaModel random_model(std::mt19937_64& rng, std::size_t d, std::size_t P, std::size_t psi,
                        bool shape_covariates = true, double noise = 0.4,
                        std::size_t hidden = 32) {
  MensaConfig c;
  c.num_features = d;
  c.num_states = P;
  c.num_components = psi;
  c.hidden_width = hidden;
  c.shape_covariates = shape_covariates;
  c.seed = rng();
  auto m = init_model(c);
  std::normal_distribution<double> n(0.0, noise);
  for (double& v : m.params().values()) v += n(rng);
  if (!shape_covariates) {
    for (std::size_t p = 0; p < P; ++p) {
      for (double& v : m.params().tensor(state_tensor_name(p, "shape_proj"))) v = 0.0;
    }
  }
  return m;
}

std::vector<double> random_x(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> x(d);
  for (double& v : x) v = n(rng);
  return x;
}

data::StateEncodedDataset random_batch(std::mt19937_64& rng, std::size_t n, std::size_t d,
                                       std::size_t K) {
  std::normal_distribution<double> nx(0.0, 1.0);
  std::uniform_real_distribution<double> ut(0.2, 3.0);
  Eigen::MatrixXd x(n, d), t(n, K);
  Eigen::MatrixXi e(n, K);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) x(i, j) = nx(rng);
    for (std::size_t k = 0; k < K; ++k) {
      t(i, k) = ut(rng);
      e(i, k) = rng() % 3 != 0;
    }
  }
  return data::encode_event_free(x, t, e);
}

// 1. Reverse-mode gradients of the total loss against central differences.
Verdict gradient_suite() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  double worst = 0.0;
  std::size_t checked = 0;
  const std::vector<train::LossOptions> variants{
      {train::Mode::Multi, {{{1, 2}}}, false},
      {train::Mode::Multi, {{{1, 2}}}, true},
      {train::Mode::Multi, {{{2, 1}}}, false},
      {train::Mode::Competing, {}, false},
  };
  for (int trial = 0; trial < 12; ++trial) {
    auto m = random_model(rng, 3, 3, 2);
    const auto b = random_batch(rng, 4, 3, 2);
    const auto& opts = variants[static_cast<std::size_t>(trial) % variants.size()];
    const auto lg = train::total_loss_gradient(m, b, opts);
    auto values = m.params().values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double x0 = values[i];
      const double h = 1e-6 * std::max(1.0, std::abs(x0));
      values[i] = x0 + h;
      const double up = train::total_loss(m, b, opts);
      values[i] = x0 - h;
      const double down = train::total_loss(m, b, opts);
      values[i] = x0;
      const double fd = (up - down) / (2 * h);
      const double a = lg.gradient[i];
      const double scale = std::max({std::abs(a), std::abs(fd), 1e-2});
      worst = std::max(worst, std::abs(a - fd) / scale);
      ++checked;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 10.0,
          fmt::format("{} partials, worst relative error {:.2e}, {:.2f} s", checked, worst, secs)};
}

// 2. Metric implementations against exhaustive brute force.
Verdict oracle_equivalence() {
  const auto t0 = Clock::now();
  std::size_t instances = 0, mismatches = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t n = 1; n <= 8; ++n) {
      std::vector<double> t(n), r(n);
      std::vector<int> e(n);
      for (std::size_t i = 0; i < n; ++i) {
        t[i] = static_cast<double>(1 + rng() % 5);
        e[i] = static_cast<int>(rng() % 3 != 0);
        r[i] = static_cast<double>(rng() % 4);
      }
      ++instances;
      const auto km = metrics::km_fit(t, e);
      for (double q = 0.0; q <= 6.0; q += 0.5) {
        if (std::abs(km(q) - oracle::km(t, e, q)) > 1e-12) ++mismatches;
      }
      const auto p = oracle::harrell_pairs(r, t, e);
      if (p.comparable > 0) {
        if (std::abs(metrics::harrell_ci(r, t, e) - p.concordant / p.comparable) > 1e-12) ++mismatches;
      }

      const auto K = static_cast<Eigen::Index>(2 + rng() % 2);
      const auto N = static_cast<Eigen::Index>(n);
      Eigen::MatrixXd R(N, K), T(N, K);
      Eigen::MatrixXi E(N, K);
      for (Eigen::Index i = 0; i < N; ++i) {
        for (Eigen::Index k = 0; k < K; ++k) {
          R(i, k) = static_cast<double>(rng() % 4);
          T(i, k) = static_cast<double>(1 + rng() % 5);
          E(i, k) = static_cast<int>(rng() % 3 != 0);
        }
      }
      const auto g = oracle::global_pairs(R, T, E);
      if (g.comparable > 0 &&
          std::abs(metrics::global_ci(R, T, E) - g.concordant / g.comparable) > 1e-12) {
        ++mismatches;
      }
      const auto l = oracle::local_pairs(R, T, E);
      if (l.comparable > 0 &&
          std::abs(metrics::local_ci(R, T, E) - l.concordant / l.comparable) > 1e-12) {
        ++mismatches;
      }

      std::uniform_real_distribution<double> u(0.0, 1.0);
      std::vector<double> tc(n);
      for (double& v : tc) v = 0.5 + 5.0 * u(rng);
      const std::vector<int> all(n, 1);
      const std::vector<double> grid{0.5, 1.25, 2.0, 3.0, 4.5};
      Eigen::MatrixXd S(N, 5);
      for (Eigen::Index i = 0; i < N; ++i) {
        double s = 1.0;
        for (Eigen::Index k = 0; k < 5; ++k) S(i, k) = s *= u(rng);
      }
      if (std::abs(metrics::ibs(S, grid, tc, all) - oracle::ibs_uncensored(S, grid, tc)) > 1e-12) {
        ++mismatches;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 30.0,
          fmt::format("{} instances, {} mismatches, {:.2f} s", instances, mismatches, secs)};
}

// 3. Gating, ISD shape and density consistency on random models.
Verdict mixture_properties() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> ut(0.05, 4.0);
  double gate_err = 0.0, pdf_err = 0.0;
  std::size_t isd_bad = 0, pdf_checked = 0;
  const auto grid = linear_grid(6.0, 60);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 1 + static_cast<std::size_t>(trial % 5);
    const std::size_t P = 2 + static_cast<std::size_t>(trial % 3);
    const std::size_t psi = 1 + static_cast<std::size_t>(trial % 4);
    const auto m = random_model(rng, d, P, psi, true, 0.4, 8);
    const auto x = random_x(rng, d);
    for (const auto& head : m.head_params(x)) {
      double sum = 0.0;
      for (const auto& c : head) sum += c.weight;
      gate_err = std::max(gate_err, std::abs(sum - 1.0));
    }
    const auto isd = m.predict_isd(x, grid);
    for (Eigen::Index p = 0; p < isd.survival.rows(); ++p) {
      if (isd.survival(p, 0) != 1.0) ++isd_bad;
      for (Eigen::Index k = 1; k < isd.survival.cols(); ++k) {
        if (isd.survival(p, k) > isd.survival(p, k - 1)) ++isd_bad;
      }
    }
    for (std::size_t s = 0; s < P; ++s) {
      const double t = ut(rng);
      const double h = 1e-5 * t;
      const double fd = (std::exp(m.log_surv(x, t - h, s)) - std::exp(m.log_surv(x, t + h, s))) / (2 * h);
      const double pdf = std::exp(m.log_pdf(x, t, s));
      // Below this the difference quotient is dominated by roundoff in S.
      if (pdf < 1e-3) continue;
      ++pdf_checked;
      pdf_err = std::max(pdf_err, std::abs(pdf - fd) / pdf);
    }
  }
  const double secs = seconds_since(t0);
  return {gate_err <= 1e-12 && isd_bad == 0 && pdf_err < 1e-6 && pdf_checked >= 100 && secs < 30.0,
          fmt::format("gate error {:.1e}, ISD violations {}, pdf relative error {:.1e} over {} "
                      "points, {:.2f} s",
                      gate_err, isd_bad, pdf_err, pdf_checked, secs)};
}

double log_hr_variance(const MensaModel& m, const std::vector<double>& x1,
                       const std::vector<double>& x2) {
  std::vector<double> r;
  for (int k = 1; k <= 50; ++k) {
    const double t = 0.05 * k * k;
    r.push_back(m.log_hazard(x1, t, 1) - m.log_hazard(x2, t, 1));
  }
  double mean = 0.0;
  for (double v : r) mean += v;
  mean /= static_cast<double>(r.size());
  double var = 0.0;
  for (double v : r) var += (v - mean) * (v - mean);
  return var / static_cast<double>(r.size());
}

// 4. Proportional hazards holds exactly only in the restricted configuration.
Verdict ph_dichotomy() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(404);
  double restricted = 0.0;
  for (int pair = 0; pair < 20; ++pair) {
    const auto m = random_model(rng, 3, 2, 1, false);
    restricted = std::max(restricted, log_hr_variance(m, random_x(rng, 3), random_x(rng, 3)));
  }
  double free_var = 0.0;
  for (int pair = 0; pair < 20; ++pair) {
    const auto m = random_model(rng, 3, 2, 3);
    free_var = std::max(free_var, log_hr_variance(m, random_x(rng, 3), random_x(rng, 3)));
  }
  const double secs = seconds_since(t0);
  return {restricted < 1e-16 && free_var > 1e-4 && secs < 10.0,
          fmt::format("restricted max variance {:.2e}, unrestricted max variance {:.2e}, {:.2f} s",
                      restricted, free_var, secs)};
}

// 5. End-to-end on the linear independent-censoring simulation.
Verdict synthetic_end_to_end(const fs::path& work) {
  const auto t0 = Clock::now();
  cli::SimulateOptions so;
  so.n = 10000;
  so.d = 10;
  so.seed = 2024;
  so.out = work / "sim";
  cli::cmd_simulate(so);
  {
    std::ofstream cfg(work / "run.ini");
    cfg << "[run]\nmode = single\nseed = 2024\noutput_dir = out\n"
        << "[data]\npath = sim/data.csv\n";
  }
  const auto summary = cli::cmd_train(work / "run.ini");
  const auto a = cli::load_artifact(summary.model_path);
  const auto truth = sim::load_truth(so.out / "truth.json");
  const auto test = cli::load_for_model(a, work / "out" / "test.csv");
  const auto report = cli::evaluate_artifact(a, test, &truth);
  const double mensa_l1 = report.events.at(0).survival_l1.value();

  const auto train_raw = data::load_csv(work / "out" / "train.csv");
  const Eigen::VectorXd tt = train_raw.times.col(0);
  const Eigen::VectorXi te = train_raw.events.col(0);
  const auto km = metrics::km_fit(std::span<const double>(tt.data(), tt.size()),
                                  std::span<const int>(te.data(), te.size()));
  const double km_l1 =
      metrics::survival_l1(truth, test.feature_matrix(), [&](std::size_t, double t) { return km(t); });
  const double secs = seconds_since(t0);
  return {mensa_l1 <= 0.8 * km_l1 && secs < 600.0,
          fmt::format("MENSA {:.4f} vs KM {:.4f} (ratio {:.3f}), {} epochs, test CI {:.3f}, {:.1f} s",
                      mensa_l1, km_l1, mensa_l1 / km_l1, summary.result.log.size(),
                      report.events[0].ci, secs)};
}

// Two events where A always precedes B: t_B = t_A + offset.
data::StateEncodedDataset ordered_events(std::mt19937_64& rng, std::size_t n) {
  const std::size_t d = 4;
  std::normal_distribution<double> nx(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::exponential_distribution<double> offset(1.0 / 3.0);
  Eigen::MatrixXd x(n, d), t(n, 2);
  Eigen::MatrixXi e(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) x(i, j) = nx(rng);
    const double scale = 5.0 * std::exp(0.4 * x(i, 0) - 0.3 * x(i, 1));
    const double ta = scale * std::sqrt(-std::log(1.0 - u(rng)));
    const double tb = ta + offset(rng) * std::exp(0.3 * x(i, 2));
    const double c = 25.0 * u(rng);
    t(i, 0) = std::min(ta, c);
    t(i, 1) = std::min(tb, c);
    e(i, 0) = ta <= c;
    e(i, 1) = tb <= c;
  }
  return data::encode_event_free(x, t, e);
}

std::vector<std::size_t> range(std::size_t from, std::size_t to) {
  std::vector<std::size_t> v;
  for (std::size_t i = from; i < to; ++i) v.push_back(i);
  return v;
}

// 6. The trajectory term raises S_B(t_A) on doubly observed pairs.
Verdict trajectory_behavior() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(606);
  double identity_err = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = random_model(rng, 3, 3, 2, true, 0.4, 8);
    const auto b = random_batch(rng, 1 + static_cast<std::size_t>(trial % 10), 3, 2);
    const train::TrajectorySet T{{{1, 2}}};
    const double n = static_cast<double>(b.rows());
    const double lhs = train::total_loss(m, b, {train::Mode::Multi, T, false}) +
                       train::trajectory_likelihood(m, b, T) / n;
    identity_err = std::max(identity_err,
                            std::abs(lhs - train::total_loss(m, b, {train::Mode::Multi, {}, false})));
  }

  const auto all = ordered_events(rng, 4000);
  const auto train_set = all.subset(range(0, 2800));
  const auto valid_set = all.subset(range(2800, 3200));
  const auto test_set = all.subset(range(3200, 4000));
  MensaConfig mc;
  mc.num_features = 4;
  mc.num_states = 3;
  mc.num_components = 2;
  mc.hidden_width = 16;
  mc.seed = 7;
  const auto initial = init_model(mc);
  train::TrainConfig tc;
  tc.learning_rate = 1e-2;
  tc.epochs = 40;
  tc.mode = train::Mode::Multi;
  tc.seed = 7;
  const auto plain = train::train(initial, train_set, valid_set, tc);
  tc.trajectories = {{{1, 2}}};
  const auto with_traj = train::train(initial, train_set, valid_set, tc);

  auto mean_sb = [&](const MensaModel& m) {
    double total = 0.0;
    std::size_t count = 0;
    std::vector<double> x(4);
    for (Eigen::Index i = 0; i < test_set.x.rows(); ++i) {
      if (test_set.events(i, 1) != 1 || test_set.events(i, 2) != 1) continue;
      for (Eigen::Index j = 0; j < 4; ++j) x[static_cast<std::size_t>(j)] = test_set.x(i, j);
      total += std::exp(m.log_surv(x, test_set.times(i, 1), 2));
      ++count;
    }
    return std::pair{total / static_cast<double>(count), count};
  };
  const auto [without, pairs] = mean_sb(plain.model);
  const auto [with, pairs2] = mean_sb(with_traj.model);
  (void)pairs2;
  const double secs = seconds_since(t0);
  return {with > without && identity_err <= 1e-12 && secs < 300.0,
          fmt::format("mean S_B(t_A) {:.4f} with vs {:.4f} without over {} pairs, identity error "
                      "{:.1e}, {:.1f} s",
                      with, without, pairs, identity_err, secs)};
}

// 7. D-calibration accepts perfectly calibrated predictions.
Verdict calibration_null() {
  const auto t0 = Clock::now();
  int passed = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> s;
    std::vector<int> e;
    for (int i = 0; i < 1000; ++i) {
      // Per-row Weibull with its own scale; censoring is independent.
      const double scale = 0.5 + 3.0 * u(rng);
      const double shape = 0.7 + u(rng);
      const double te = scale * std::pow(-std::log(1.0 - u(rng)), 1.0 / shape);
      const double tc = 6.0 * u(rng);
      const double t = std::min(te, tc);
      s.push_back(std::exp(-std::pow(t / scale, shape)));
      e.push_back(te <= tc);
    }
    passed += metrics::d_calibration(s, e).calibrated();
  }
  const double secs = seconds_since(t0);
  return {passed >= 90 && secs < 60.0, fmt::format("{}/100 runs with p > 0.05, {:.2f} s", passed, secs)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// 8. Same seed, same bytes.
Verdict determinism(const fs::path& work) {
  const auto t0 = Clock::now();
  std::vector<std::string> sims;
  for (const char* dir : {"sim_a", "sim_b"}) {
    cli::SimulateOptions so;
    so.n = 600;
    so.d = 5;
    so.seed = 8;
    so.copula = "clayton";
    so.tau = 0.4;
    so.out = work / dir;
    cli::cmd_simulate(so);
    sims.push_back(slurp(so.out / "data.csv") + slurp(so.out / "truth.json"));
  }
  {
    std::ofstream cfg(work / "run.ini");
    cfg << "[run]\nmode = single\nseed = 8\noutput_dir = out\n[data]\npath = sim_a/data.csv\n"
        << "[train]\nepochs = 15\n";
  }
  std::vector<std::string> models;
  for (int rep = 0; rep < 2; ++rep) {
    cli::cmd_train(work / "run.ini");
    models.push_back(slurp(work / "out" / "model.txt"));
  }
  const bool same_sim = sims[0] == sims[1] && !sims[0].empty();
  const bool same_model = models[0] == models[1] && !models[0].empty();
  return {same_sim && same_model,
          fmt::format("datasets identical: {}, model files identical: {} ({} bytes), {:.1f} s",
                      same_sim, same_model, models[0].size(), seconds_since(t0))};
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / "mensa_acceptance";
  fs::remove_all(work);
  for (const char* sub : {"e2e", "determinism"}) fs::create_directories(work / sub);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"1 gradient suite", gradient_suite},
      {"2 oracle equivalence", oracle_equivalence},
      {"3 mixture properties", mixture_properties},
      {"4 proportional-hazards dichotomy", ph_dichotomy},
      {"5 synthetic end-to-end", [&] { return synthetic_end_to_end(work / "e2e"); }},
      {"6 trajectory term", trajectory_behavior},
      {"7 calibration null", calibration_null},
      {"8 determinism", [&] { return determinism(work / "determinism"); }},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    fmt::print("{} criterion {}: {}\n", v.pass ? "PASS" : "FAIL", name, v.detail);
    std::fflush(stdout);
  }
  fmt::print("{} of {} criteria passed\n", criteria.size() - static_cast<std::size_t>(failures),
             criteria.size());
  return failures == 0 ? 0 : 1;
}
