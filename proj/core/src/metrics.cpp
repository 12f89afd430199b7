#include "mensa/metrics.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <fstream>
#include <numeric>

#include "mensa/copula.hpp"
#include "mensa/error.hpp"

namespace mensa::metrics {

namespace {

void check_lengths(std::size_t a, std::size_t b, std::size_t c, const char* who) {
  if (a != b || b != c) throw ContractError(fmt::format("{}: input lengths differ", who));
}

void check_indicators(std::span<const int> events, const char* who) {
  for (int e : events) {
    if (e != 0 && e != 1) throw ContractError(fmt::format("{}: event indicators must be 0/1", who));
  }
}

}  // namespace

double StepCurve::operator()(double t) const {
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 1.0;
  return values[static_cast<std::size_t>(it - times.begin()) - 1];
}

double StepCurve::left_limit(double t) const {
  const auto it = std::lower_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 1.0;
  return values[static_cast<std::size_t>(it - times.begin()) - 1];
}

double StepCurve::integral(double a, double b) const {
  if (!(b > a)) return 0.0;
  double total = 0.0;
  double from = a;
  double level = (*this)(a);
  auto it = std::upper_bound(times.begin(), times.end(), a);
  for (; it != times.end() && *it < b; ++it) {
    total += level * (*it - from);
    from = *it;
    level = values[static_cast<std::size_t>(it - times.begin())];
  }
  return total + level * (b - from);
}

StepCurve km_fit(std::span<const double> times, std::span<const int> events) {
  if (times.size() != events.size()) throw ContractError("km_fit: input lengths differ");
  if (times.empty()) throw ContractError("km_fit: needs at least one observation");
  check_indicators(events, "km_fit");
  std::vector<std::size_t> order(times.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return times[a] < times[b]; });

  StepCurve curve;
  curve.horizon = times[order.back()];
  double s = 1.0;
  std::size_t at_risk = times.size();
  std::size_t k = 0;
  while (k < order.size()) {
    const double t = times[order[k]];
    std::size_t deaths = 0;
    std::size_t leaving = 0;
    while (k < order.size() && times[order[k]] == t) {
      deaths += static_cast<std::size_t>(events[order[k]]);
      ++leaving;
      ++k;
    }
    if (deaths > 0) {
      s *= 1.0 - static_cast<double>(deaths) / static_cast<double>(at_risk);
      curve.times.push_back(t);
      curve.values.push_back(s);
    }
    at_risk -= leaving;
  }
  return curve;
}

namespace {

// Counts of inserted items by rank.
class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {}
  void add(std::size_t i) {
    for (++i; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
  }
  // Number of inserted ranks < i.
  std::size_t below(std::size_t i) const {
    std::size_t s = 0;
    for (; i > 0; i -= i & (~i + 1)) s += tree_[i];
    return s;
  }

 private:
  std::vector<std::size_t> tree_;
};

}  // namespace

ConcordanceCounts concordance_counts(std::span<const double> risks, std::span<const double> times,
                                     std::span<const int> events) {
  check_lengths(risks.size(), times.size(), events.size(), "concordance");
  check_indicators(events, "concordance");
  for (double r : risks) {
    if (std::isnan(r)) throw ContractError("concordance: risk scores must not be NaN");
  }
  const std::size_t n = risks.size();
  std::vector<double> sorted(risks.begin(), risks.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<std::size_t> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    rank[i] = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), risks[i]) -
                                       sorted.begin());
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return times[a] > times[b]; });

  // Walk from the latest time down; everything already inserted has a
  // strictly larger time than the current group.
  Fenwick tree(sorted.size());
  std::size_t inserted = 0;
  ConcordanceCounts c;
  std::size_t k = 0;
  while (k < n) {
    std::size_t end = k;
    while (end < n && times[order[end]] == times[order[k]]) ++end;
    for (std::size_t m = k; m < end; ++m) {
      const auto i = order[m];
      if (events[i] != 1) continue;
      c.comparable += static_cast<double>(inserted);
      c.concordant += static_cast<double>(tree.below(rank[i]));
    }
    for (std::size_t m = k; m < end; ++m) {
      tree.add(rank[order[m]]);
      ++inserted;
    }
    k = end;
  }
  return c;
}

namespace {

double ratio(const ConcordanceCounts& c) {
  if (c.comparable <= 0.0) throw DomainError("no comparable pairs");
  return c.concordant / c.comparable;
}

void check_matrices(const Eigen::MatrixXd& r, const Eigen::MatrixXd& t, const Eigen::MatrixXi& e) {
  if (r.rows() != t.rows() || r.rows() != e.rows() || r.cols() != t.cols() ||
      r.cols() != e.cols()) {
    throw ContractError("concordance: matrix shapes differ");
  }
}

}  // namespace

double harrell_ci(std::span<const double> risks, std::span<const double> times,
                  std::span<const int> events) {
  return ratio(concordance_counts(risks, times, events));
}

double global_ci(const Eigen::MatrixXd& risks, const Eigen::MatrixXd& times,
                 const Eigen::MatrixXi& events) {
  check_matrices(risks, times, events);
  ConcordanceCounts total;
  for (Eigen::Index k = 0; k < risks.cols(); ++k) {
    const Eigen::VectorXd r = risks.col(k);
    const Eigen::VectorXd t = times.col(k);
    const Eigen::VectorXi e = events.col(k);
    const auto c = concordance_counts(std::span<const double>(r.data(), r.size()),
                                      std::span<const double>(t.data(), t.size()),
                                      std::span<const int>(e.data(), e.size()));
    total.concordant += c.concordant;
    total.comparable += c.comparable;
  }
  return ratio(total);
}

double local_ci(const Eigen::MatrixXd& risks, const Eigen::MatrixXd& times,
                const Eigen::MatrixXi& events) {
  check_matrices(risks, times, events);
  if (risks.cols() < 2) throw ContractError("local CI needs at least two events");
  ConcordanceCounts total;
  for (Eigen::Index i = 0; i < risks.rows(); ++i) {
    const Eigen::RowVectorXd r = risks.row(i);
    const Eigen::RowVectorXd t = times.row(i);
    const Eigen::RowVectorXi e = events.row(i);
    const auto c = concordance_counts(std::span<const double>(r.data(), r.size()),
                                      std::span<const double>(t.data(), t.size()),
                                      std::span<const int>(e.data(), e.size()));
    total.concordant += c.concordant;
    total.comparable += c.comparable;
  }
  return ratio(total);
}

std::vector<double> default_eval_grid(std::span<const double> times) {
  if (times.empty()) throw ContractError("evaluation grid needs observed times");
  std::vector<double> v(times.begin(), times.end());
  std::sort(v.begin(), v.end());
  constexpr int kLevels = 32;
  std::vector<double> grid;
  for (int k = 1; k <= kLevels; ++k) {
    const double h = static_cast<double>(v.size() - 1) * k / (kLevels + 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double q = v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
    if (grid.empty() || q > grid.back()) grid.push_back(q);
  }
  if (grid.size() < 2) throw DomainError("observed times too concentrated for an evaluation grid");
  return grid;
}

std::vector<double> brier_scores(const Eigen::MatrixXd& surv, std::span<const double> grid,
                                 std::span<const double> times, std::span<const int> events) {
  const auto n = times.size();
  if (events.size() != n || static_cast<std::size_t>(surv.rows()) != n ||
      static_cast<std::size_t>(surv.cols()) != grid.size()) {
    throw ContractError("brier: shapes of predictions, grid and outcomes differ");
  }
  if (n == 0) throw ContractError("brier: no rows");
  check_indicators(events, "brier");
  std::vector<int> censored(n);
  for (std::size_t i = 0; i < n; ++i) censored[i] = 1 - events[i];
  const StepCurve G = km_fit(times, censored);

  std::vector<double> out(grid.size(), 0.0);
  std::size_t dropped = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double t = grid[g];
    const double g_t = G(t);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double s = std::clamp(surv(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(g)),
                                  0.0, 1.0);
      if (times[i] <= t && events[i] == 1) {
        const double w = G.left_limit(times[i]);
        if (w <= 0.0) {
          ++dropped;
          continue;
        }
        total += s * s / w;
      } else if (times[i] > t) {
        if (g_t <= 0.0) {
          ++dropped;
          continue;
        }
        total += (1.0 - s) * (1.0 - s) / g_t;
      }
    }
    out[g] = total / static_cast<double>(n);
  }
  if (dropped > 0) {
    spdlog::warn("brier: dropped {} terms where the censoring survival is zero", dropped);
  }
  return out;
}

double ibs(const Eigen::MatrixXd& surv, std::span<const double> grid,
           std::span<const double> times, std::span<const int> events) {
  if (grid.size() < 2) throw ContractError("ibs: grid needs at least two points");
  for (std::size_t k = 1; k < grid.size(); ++k) {
    if (!(grid[k] > grid[k - 1])) throw ContractError("ibs: grid must be strictly increasing");
  }
  const auto bs = brier_scores(surv, grid, times, events);
  double area = 0.0;
  for (std::size_t k = 1; k < grid.size(); ++k) {
    area += 0.5 * (bs[k] + bs[k - 1]) * (grid[k] - grid[k - 1]);
  }
  return area / (grid.back() - grid.front());
}

double margin_time(const StepCurve& km, double t) {
  const double s = km(t);
  if (s <= 0.0) return t;
  return t + km.integral(t, km.horizon) / s;
}

double margin_mae(std::span<const double> pred_times, std::span<const double> times,
                  std::span<const int> events, const StepCurve& km) {
  check_lengths(pred_times.size(), times.size(), events.size(), "margin_mae");
  check_indicators(events, "margin_mae");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (events[i] == 1) {
      num += std::abs(times[i] - pred_times[i]);
      den += 1.0;
    } else {
      const double w = 1.0 - km(times[i]);
      num += w * std::abs(margin_time(km, times[i]) - pred_times[i]);
      den += w;
    }
  }
  if (den <= 0.0) throw DomainError("margin_mae: every row has zero weight");
  return num / den;
}

DCalibration chi_square_uniform(std::vector<double> histogram) {
  if (histogram.size() < 2) throw ContractError("chi-square test needs at least two bins");
  const double n = std::accumulate(histogram.begin(), histogram.end(), 0.0);
  if (!(n > 0.0)) throw ContractError("chi-square test needs positive total mass");
  const double expected = n / static_cast<double>(histogram.size());
  DCalibration out;
  for (double o : histogram) out.statistic += (o - expected) * (o - expected) / expected;
  const boost::math::chi_squared dist(static_cast<double>(histogram.size() - 1));
  out.p_value = boost::math::cdf(boost::math::complement(dist, out.statistic));
  out.histogram = std::move(histogram);
  return out;
}

DCalibration d_calibration(std::span<const double> surv_at_time, std::span<const int> events,
                           std::size_t bins) {
  if (surv_at_time.size() != events.size()) throw ContractError("d_calibration: lengths differ");
  if (surv_at_time.size() < kDCalMinRows) {
    throw ContractError(fmt::format("d_calibration needs at least {} rows", kDCalMinRows));
  }
  if (bins < 2) throw ContractError("d_calibration needs at least two bins");
  check_indicators(events, "d_calibration");
  const double B = static_cast<double>(bins);
  std::vector<double> hist(bins, 0.0);
  for (std::size_t i = 0; i < events.size(); ++i) {
    const double s = std::clamp(surv_at_time[i], 0.0, 1.0);
    if (events[i] == 1) {
      hist[std::min(static_cast<std::size_t>(s * B), bins - 1)] += 1.0;
    } else if (s <= 0.0) {
      hist[0] += 1.0;
    } else {
      for (std::size_t b = 0; b < bins; ++b) {
        const double lo = static_cast<double>(b) / B;
        const double hi = static_cast<double>(b + 1) / B;
        const double overlap = std::min(hi, s) - lo;
        if (overlap <= 0.0) break;
        hist[b] += overlap / s;
      }
    }
  }
  return chi_square_uniform(std::move(hist));
}

double survival_l1(const SurvivalFn& truth, const SurvivalFn& pred, double t_max,
                   std::size_t points) {
  if (!(t_max > 0.0) || !std::isfinite(t_max)) throw ContractError("survival_l1: bad horizon");
  if (points < 2) throw ContractError("survival_l1: needs at least two points");
  constexpr double kDecades = 4.0;
  double prev_t = 0.0;
  double prev_gap = std::abs(truth(0.0) - pred(0.0));
  double area = 0.0;
  for (std::size_t k = 0; k < points; ++k) {
    const double e = -kDecades + kDecades * static_cast<double>(k) / static_cast<double>(points - 1);
    const double t = k + 1 == points ? t_max : t_max * std::pow(10.0, e);
    const double gap = std::abs(truth(t) - pred(t));
    area += 0.5 * (gap + prev_gap) * (t - prev_t);
    prev_t = t;
    prev_gap = gap;
  }
  return area / t_max;
}

double survival_l1(const sim::GroundTruthDgp& truth, const Eigen::MatrixXd& x,
                   const std::function<double(std::size_t, double)>& pred, std::size_t points) {
  if (static_cast<std::size_t>(x.cols()) != truth.num_features) {
    throw ContractError("survival_l1: feature count does not match the ground truth");
  }
  if (x.rows() == 0) throw ContractError("survival_l1: no rows");
  double total = 0.0;
  std::vector<double> row(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index k = 0; k < x.cols(); ++k) row[static_cast<std::size_t>(k)] = x(i, k);
    const double t_max = sim::true_quantile(truth, row, kL1Level, sim::Outcome::Event);
    const auto idx = static_cast<std::size_t>(i);
    total += survival_l1([&](double t) { return sim::true_survival(truth, row, t, sim::Outcome::Event); },
                         [&](double t) { return pred(idx, t); }, t_max, points);
  }
  return total / static_cast<double>(x.rows());
}

void MetricReport::summarize() {
  mean_ci = mean_ibs = mean_mmae = 0.0;
  dcal_passed = 0;
  if (events.empty()) return;
  for (const auto& e : events) {
    mean_ci += e.ci;
    mean_ibs += e.ibs;
    mean_mmae += e.mmae;
    if (e.dcal.calibrated()) ++dcal_passed;
  }
  const double k = static_cast<double>(events.size());
  mean_ci /= k;
  mean_ibs /= k;
  mean_mmae /= k;
}

nlohmann::ordered_json to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["format"] = "mensa-metrics/1";
  j["mode"] = r.mode;
  j["rows"] = r.rows;
  j["events"] = nlohmann::ordered_json::array();
  for (const auto& e : r.events) {
    nlohmann::ordered_json je;
    je["name"] = e.name;
    je["ci"] = e.ci;
    je["ibs"] = e.ibs;
    je["mmae"] = e.mmae;
    je["dcal_statistic"] = e.dcal.statistic;
    je["dcal_p_value"] = e.dcal.p_value;
    je["dcal_histogram"] = e.dcal.histogram;
    if (e.survival_l1) je["survival_l1"] = *e.survival_l1;
    j["events"].push_back(std::move(je));
  }
  if (r.global_ci) j["global_ci"] = *r.global_ci;
  if (r.local_ci) j["local_ci"] = *r.local_ci;
  j["mean_ci"] = r.mean_ci;
  j["mean_ibs"] = r.mean_ibs;
  j["mean_mmae"] = r.mean_mmae;
  j["dcal_passed"] = r.dcal_passed;
  return j;
}

void save_report(const std::filesystem::path& path, const MetricReport& report) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json(report).dump(2) << '\n';
}

}  // namespace mensa::metrics
