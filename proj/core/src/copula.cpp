#include "mensa/copula.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "mensa/error.hpp"

namespace mensa::sim {

using nlohmann::json;

std::string to_string(CopulaFamily family) {
  switch (family) {
    case CopulaFamily::Independence:
      return "independence";
    case CopulaFamily::Clayton:
      return "clayton";
    case CopulaFamily::Frank:
      return "frank";
  }
  return "unknown";
}

CopulaFamily parse_copula_family(std::string_view name) {
  if (name == "independence") return CopulaFamily::Independence;
  if (name == "clayton") return CopulaFamily::Clayton;
  if (name == "frank") return CopulaFamily::Frank;
  throw ContractError("unknown copula family: " + std::string(name));
}

std::string to_string(RiskKind kind) { return kind == RiskKind::Linear ? "linear" : "nonlinear"; }

RiskKind parse_risk_kind(std::string_view name) {
  if (name == "linear") return RiskKind::Linear;
  if (name == "nonlinear") return RiskKind::Nonlinear;
  throw ContractError("unknown risk function kind: " + std::string(name));
}

void CopulaSpec::validate() const {
  switch (family) {
    case CopulaFamily::Independence:
      return;
    case CopulaFamily::Clayton:
      if (!(std::isfinite(theta) && theta >= 0.0)) {
        throw ContractError(fmt::format("Clayton theta must be finite and >= 0, got {}", theta));
      }
      return;
    case CopulaFamily::Frank:
      if (!std::isfinite(theta) || theta == 0.0) {
        throw ContractError(fmt::format("Frank theta must be finite and non-zero, got {}", theta));
      }
      return;
  }
}

namespace {

bool acts_independent(const CopulaSpec& spec) {
  return spec.family == CopulaFamily::Independence ||
         (spec.family == CopulaFamily::Clayton && spec.theta == 0.0);
}

}  // namespace

double copula_cdf(const CopulaSpec& spec, double u, double v) {
  spec.validate();
  if (acts_independent(spec)) return u * v;
  const double th = spec.theta;
  if (spec.family == CopulaFamily::Clayton) {
    return std::pow(std::max(std::pow(u, -th) + std::pow(v, -th) - 1.0, 0.0), -1.0 / th);
  }
  return -std::log1p(std::expm1(-th * u) * std::expm1(-th * v) / std::expm1(-th)) / th;
}

double conditional_cdf(const CopulaSpec& spec, double u, double v) {
  spec.validate();
  if (acts_independent(spec)) return v;
  const double th = spec.theta;
  if (spec.family == CopulaFamily::Clayton) {
    const double s = std::pow(u, -th) + std::pow(v, -th) - 1.0;
    return std::pow(u, -th - 1.0) * std::pow(s, -1.0 / th - 1.0);
  }
  // Denominator rewritten as a sum of two same-signed terms; the textbook
  // form expm1(-th) + expm1(-th u) expm1(-th v) cancels for large th.
  const double near = std::exp(-th * u) * std::expm1(-th * v);
  const double far = std::exp(-th * v) * std::expm1(-th * (1.0 - v));
  return near / (near + far);
}

double conditional_inverse(const CopulaSpec& spec, double u, double w) {
  spec.validate();
  if (acts_independent(spec)) return w;
  const double th = spec.theta;
  if (spec.family == CopulaFamily::Clayton) {
    return std::pow(std::pow(u, -th) * (std::pow(w, -th / (1.0 + th)) - 1.0) + 1.0, -1.0 / th);
  }
  // h(. | u) is increasing in v on [0, 1] with h(0) = 0 and h(1) = 1.
  double lo = 0.0;
  double hi = 1.0;
  while (hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    if (conditional_cdf(spec, u, mid) < w) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return std::clamp(0.5 * (lo + hi), std::nextafter(0.0, 1.0), std::nextafter(1.0, 0.0));
}

std::vector<UniformPair> copula_sample(const CopulaSpec& spec, std::size_t n, Rng& rng) {
  if (n < 1) throw ContractError("copula_sample requires n >= 1");
  spec.validate();
  std::vector<UniformPair> out(n);
  for (auto& p : out) {
    p.u = open_unit(rng);
    const double w = open_unit(rng);
    p.v = conditional_inverse(spec, p.u, w);
  }
  return out;
}

std::vector<UniformPair> copula_sample(const CopulaSpec& spec, std::size_t n, std::uint64_t seed) {
  Rng rng = make_rng(seed, "copula");
  return copula_sample(spec, n, rng);
}

namespace {

// Debye function of order one: D1(x) = (1/x) * int_0^x t / (e^t - 1) dt.
double debye1(double x) {
  if (x == 0.0) return 1.0;
  const auto f = [](double t) { return t == 0.0 ? 1.0 : t / std::expm1(t); };
  const double integral =
      boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, x, 15, 1e-14);
  return integral / x;
}

double frank_tau(double theta) {
  if (std::abs(theta) < 1e-10) return theta / 9.0;
  return 1.0 - 4.0 / theta * (1.0 - debye1(theta));
}

}  // namespace

double kendall_tau(const CopulaSpec& spec) {
  spec.validate();
  switch (spec.family) {
    case CopulaFamily::Independence:
      return 0.0;
    case CopulaFamily::Clayton:
      return spec.theta / (spec.theta + 2.0);
    case CopulaFamily::Frank:
      return frank_tau(spec.theta);
  }
  return 0.0;
}

CopulaSpec tau_to_theta(CopulaFamily family, double tau) {
  if (!(tau >= 0.0 && tau <= 0.9)) {
    throw ContractError(fmt::format("Kendall tau must lie in [0, 0.9], got {}", tau));
  }
  if (tau == 0.0) return {CopulaFamily::Independence, 0.0};
  switch (family) {
    case CopulaFamily::Independence:
      throw ContractError("the independence copula cannot express tau > 0");
    case CopulaFamily::Clayton:
      return {CopulaFamily::Clayton, 2.0 * tau / (1.0 - tau)};
    case CopulaFamily::Frank: {
      // tau(theta) is increasing on (0, inf); tau(200) > 0.98.
      const auto gap = [tau](double th) { return frank_tau(th) - tau; };
      boost::math::tools::eps_tolerance<double> tol(48);
      const auto [lo, hi] = boost::math::tools::bisect(gap, 1e-9, 200.0, tol);
      return {CopulaFamily::Frank, 0.5 * (lo + hi)};
    }
  }
  throw ContractError("unknown copula family");
}

namespace {

// Sorts `v` in place and returns the number of strictly inverted pairs.
std::uint64_t count_inversions(std::vector<double>& v, std::vector<double>& buf, std::size_t lo,
                               std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::uint64_t swaps = count_inversions(v, buf, lo, mid) + count_inversions(v, buf, mid, hi);
  std::size_t i = lo;
  std::size_t j = mid;
  std::size_t k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += mid - i;
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<long>(lo), buf.begin() + static_cast<long>(hi),
            v.begin() + static_cast<long>(lo));
  return swaps;
}

template <class Equal>
std::uint64_t tied_pairs(std::size_t n, Equal eq) {
  std::uint64_t ties = 0;
  std::size_t run = 1;
  for (std::size_t i = 1; i <= n; ++i) {
    if (i < n && eq(i - 1, i)) {
      ++run;
    } else {
      ties += static_cast<std::uint64_t>(run) * (run - 1) / 2;
      run = 1;
    }
  }
  return ties;
}

}  // namespace

double empirical_kendall_tau(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractError("kendall tau: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) throw ContractError("kendall tau needs at least two observations");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return a[i] < a[j] || (a[i] == a[j] && b[i] < b[j]);
  });
  const std::uint64_t n0 = static_cast<std::uint64_t>(n) * (n - 1) / 2;
  const std::uint64_t n1 = tied_pairs(n, [&](std::size_t i, std::size_t j) {
    return a[order[i]] == a[order[j]];
  });
  const std::uint64_t n3 = tied_pairs(n, [&](std::size_t i, std::size_t j) {
    return a[order[i]] == a[order[j]] && b[order[i]] == b[order[j]];
  });
  std::vector<double> bs(n);
  for (std::size_t i = 0; i < n; ++i) bs[i] = b[order[i]];
  std::vector<double> buf(n);
  const std::uint64_t swaps = count_inversions(bs, buf, 0, n);
  const std::uint64_t n2 = tied_pairs(n, [&](std::size_t i, std::size_t j) { return bs[i] == bs[j]; });
  const double num = static_cast<double>(n0) - static_cast<double>(n1) - static_cast<double>(n2) +
                     static_cast<double>(n3) - 2.0 * static_cast<double>(swaps);
  const double den = std::sqrt(static_cast<double>(n0 - n1) * static_cast<double>(n0 - n2));
  if (den == 0.0) throw ContractError("kendall tau undefined for constant input");
  return num / den;
}

double RiskFunction::operator()(std::span<const double> x) const {
  const auto d = static_cast<Eigen::Index>(x.size());
  const Eigen::Map<const Eigen::VectorXd> xv(x.data(), d);
  if (kind == RiskKind::Linear) {
    if (output.size() != d) throw ContractError("risk function: feature dimension mismatch");
    return output.dot(xv);
  }
  if (hidden.cols() != d) throw ContractError("risk function: feature dimension mismatch");
  const Eigen::VectorXd h = (hidden * xv).cwiseMax(0.0);
  return output.dot(h);
}

const WeibullMarginal& GroundTruthDgp::marginal(Outcome which) const {
  return which == Outcome::Event ? event : censor;
}

const RiskFunction& GroundTruthDgp::risk(Outcome which) const {
  return which == Outcome::Event ? event_risk : censor_risk;
}

GroundTruthDgp make_dgp(RiskKind kind, std::size_t num_features, const CopulaSpec& copula,
                        std::uint64_t seed, WeibullMarginal event, WeibullMarginal censor) {
  if (num_features < 1) throw ContractError("DGP needs at least one feature");
  if (!(event.shape > 0 && event.scale > 0 && censor.shape > 0 && censor.scale > 0)) {
    throw ContractError("Weibull shape and scale must be positive");
  }
  copula.validate();
  GroundTruthDgp dgp;
  dgp.event = event;
  dgp.censor = censor;
  dgp.kind = kind;
  dgp.num_features = num_features;
  dgp.copula = copula;

  Rng rng = make_rng(seed, "dgp-weights");
  const auto d = static_cast<Eigen::Index>(num_features);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  for (RiskFunction* r : {&dgp.event_risk, &dgp.censor_risk}) {
    r->kind = kind;
    if (kind == RiskKind::Nonlinear) {
      r->hidden.resize(d, d);
      for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) r->hidden(i, j) = normal(rng);
      }
    }
    r->output.resize(d);
    for (Eigen::Index i = 0; i < d; ++i) r->output(i) = normal(rng);
  }
  return dgp;
}

double true_survival(const GroundTruthDgp& dgp, std::span<const double> x, double t,
                     Outcome which) {
  if (t < 0.0) throw ContractError("survival time must be >= 0");
  if (t == 0.0) return 1.0;
  const auto& m = dgp.marginal(which);
  const double g = dgp.risk(which)(x);
  return std::exp(-std::pow(t / m.scale, m.shape) * std::exp(g));
}

double true_quantile(const GroundTruthDgp& dgp, std::span<const double> x, double s,
                     Outcome which) {
  if (!(s > 0.0 && s <= 1.0)) throw ContractError("survival level must lie in (0, 1]");
  const auto& m = dgp.marginal(which);
  const double g = dgp.risk(which)(x);
  return m.scale * std::pow(-std::log(s) * std::exp(-g), 1.0 / m.shape);
}

SimulatedData generate_dataset(const GroundTruthDgp& dgp, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ContractError("generate_dataset requires n >= 1");
  const std::size_t d = dgp.num_features;
  Rng feature_rng = make_rng(seed, "features");
  Rng copula_rng = make_rng(seed, "copula");
  std::normal_distribution<double> normal(0.0, 1.0);

  SimulatedData out;
  auto& ds = out.dataset;
  ds.event_names = {"event"};
  for (std::size_t j = 0; j < d; ++j) {
    ds.features.push_back({{"x" + std::to_string(j), data::FeatureKind::Numeric}, {}, {}});
    ds.features.back().numeric.resize(n);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) ds.features[j].numeric[i] = normal(feature_rng);
  }

  out.uniforms = copula_sample(dgp.copula, n, copula_rng);
  out.latent_times.resize(static_cast<Eigen::Index>(n), 2);
  ds.times.resize(static_cast<Eigen::Index>(n), 1);
  ds.events.resize(static_cast<Eigen::Index>(n), 1);
  std::vector<double> x(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) x[j] = ds.features[j].numeric[i];
    const double te = true_quantile(dgp, x, out.uniforms[i].u, Outcome::Event);
    const double tc = true_quantile(dgp, x, out.uniforms[i].v, Outcome::Censor);
    const auto r = static_cast<Eigen::Index>(i);
    out.latent_times(r, 0) = te;
    out.latent_times(r, 1) = tc;
    ds.times(r, 0) = std::min(te, tc);
    ds.events(r, 0) = te <= tc ? 1 : 0;
  }
  return out;
}

namespace {

json risk_to_json(const RiskFunction& r) {
  json j;
  j["output"] = std::vector<double>(r.output.data(), r.output.data() + r.output.size());
  if (r.kind == RiskKind::Nonlinear) {
    std::vector<std::vector<double>> rows;
    for (Eigen::Index i = 0; i < r.hidden.rows(); ++i) {
      std::vector<double> row(static_cast<std::size_t>(r.hidden.cols()));
      for (Eigen::Index k = 0; k < r.hidden.cols(); ++k) row[static_cast<std::size_t>(k)] = r.hidden(i, k);
      rows.push_back(std::move(row));
    }
    j["hidden"] = rows;
  }
  return j;
}

RiskFunction risk_from_json(const json& j, RiskKind kind, std::size_t d) {
  RiskFunction r;
  r.kind = kind;
  const auto out = j.at("output").get<std::vector<double>>();
  if (out.size() != d) throw DataError("truth sidecar: risk output has wrong length");
  r.output = Eigen::Map<const Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(d));
  if (kind == RiskKind::Nonlinear) {
    const auto rows = j.at("hidden").get<std::vector<std::vector<double>>>();
    if (rows.size() != d) throw DataError("truth sidecar: hidden layer has wrong shape");
    r.hidden.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < d; ++i) {
      if (rows[i].size() != d) throw DataError("truth sidecar: hidden layer has wrong shape");
      for (std::size_t k = 0; k < d; ++k) {
        r.hidden(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
      }
    }
  }
  return r;
}

}  // namespace

std::string truth_to_json(const GroundTruthDgp& dgp) {
  json j;
  j["format"] = "mensa-truth/1";
  j["event"] = {{"shape", dgp.event.shape}, {"scale", dgp.event.scale}};
  j["censor"] = {{"shape", dgp.censor.shape}, {"scale", dgp.censor.scale}};
  j["risk_kind"] = to_string(dgp.kind);
  j["num_features"] = dgp.num_features;
  j["event_risk"] = risk_to_json(dgp.event_risk);
  j["censor_risk"] = risk_to_json(dgp.censor_risk);
  j["copula"] = {{"family", to_string(dgp.copula.family)}, {"theta", dgp.copula.theta}};
  j["kendall_tau"] = kendall_tau(dgp.copula);
  return j.dump(2) + "\n";
}

GroundTruthDgp truth_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    GroundTruthDgp dgp;
    dgp.event = {j.at("event").at("shape").get<double>(), j.at("event").at("scale").get<double>()};
    dgp.censor = {j.at("censor").at("shape").get<double>(),
                  j.at("censor").at("scale").get<double>()};
    dgp.kind = parse_risk_kind(j.at("risk_kind").get<std::string>());
    dgp.num_features = j.at("num_features").get<std::size_t>();
    dgp.event_risk = risk_from_json(j.at("event_risk"), dgp.kind, dgp.num_features);
    dgp.censor_risk = risk_from_json(j.at("censor_risk"), dgp.kind, dgp.num_features);
    dgp.copula = {parse_copula_family(j.at("copula").at("family").get<std::string>()),
                  j.at("copula").at("theta").get<double>()};
    dgp.copula.validate();
    return dgp;
  } catch (const json::exception& e) {
    throw DataError(std::string("truth sidecar: ") + e.what());
  } catch (const ContractError& e) {
    throw DataError(std::string("truth sidecar: ") + e.what());
  }
}

void save_truth(const std::filesystem::path& path, const GroundTruthDgp& dgp) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << truth_to_json(dgp);
}

GroundTruthDgp load_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return truth_from_json(ss.str());
}

}  // namespace mensa::sim
