#include "mensa/model.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <random>

#include "mensa/error.hpp"
#include "mensa/rng.hpp"
#include "model_kernels.hpp"

namespace mensa {

void MensaConfig::validate() const {
  if (num_features < 1) throw ContractError("model needs at least one feature");
  if (num_states < 2) throw ContractError("model needs P >= 2 states (event-free + events)");
  if (num_components < 1) throw ContractError("model needs at least one mixture component");
  if (hidden_width < 1) throw ContractError("hidden width must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ContractError("dropout must lie in [0, 1)");
}

std::string shared_weight_name() { return "shared.weight"; }
std::string shared_bias_name() { return "shared.bias"; }
std::string state_tensor_name(std::size_t state, std::string_view which) {
  return fmt::format("state{}.{}", state, which);
}

void validate_grid(std::span<const double> grid) {
  if (grid.size() < 2) throw ContractError("time grid needs at least two points");
  if (grid.front() != 0.0) throw ContractError("time grid must start at 0");
  for (std::size_t k = 1; k < grid.size(); ++k) {
    if (!(grid[k] > grid[k - 1])) throw ContractError("time grid must be strictly increasing");
  }
}

std::vector<double> linear_grid(double t_max, std::size_t points) {
  if (!(t_max > 0.0) || points < 2) throw ContractError("linear_grid needs t_max > 0, points >= 2");
  std::vector<double> g(points);
  for (std::size_t k = 0; k < points; ++k) {
    g[k] = t_max * static_cast<double>(k) / static_cast<double>(points - 1);
  }
  return g;
}

MensaModel::MensaModel(const MensaConfig& config) : config_(config) {
  config_.validate();
  const std::size_t d = config_.num_features;
  const std::size_t H = config_.hidden_width;
  const std::size_t C = config_.num_components;
  params_.add(shared_weight_name(), {H, d});
  params_.add(shared_bias_name(), {H});
  for (std::size_t p = 0; p < config_.num_states; ++p) {
    params_.add(state_tensor_name(p, "scale_bias"), {C});
    params_.add(state_tensor_name(p, "shape_bias"), {C});
    params_.add(state_tensor_name(p, "scale_proj"), {C, H});
    params_.add(state_tensor_name(p, "shape_proj"), {C, H});
    params_.add(state_tensor_name(p, "gate"), {C, H});
  }
}

namespace detail {

Layout Layout::of(const MensaModel& model) {
  const auto& cfg = model.config();
  const auto& ps = model.params();
  Layout L;
  L.d = cfg.num_features;
  L.hidden = cfg.hidden_width;
  L.states = cfg.num_states;
  L.components = cfg.num_components;
  L.shape_covariates = cfg.shape_covariates;
  L.shared_weight = ps.info(shared_weight_name()).offset;
  L.shared_bias = ps.info(shared_bias_name()).offset;
  for (std::size_t p = 0; p < cfg.num_states; ++p) {
    L.scale_bias.push_back(ps.info(state_tensor_name(p, "scale_bias")).offset);
    L.shape_bias.push_back(ps.info(state_tensor_name(p, "shape_bias")).offset);
    L.scale_proj.push_back(ps.info(state_tensor_name(p, "scale_proj")).offset);
    L.shape_proj.push_back(ps.info(state_tensor_name(p, "shape_proj")).offset);
    L.gate.push_back(ps.info(state_tensor_name(p, "gate")).offset);
  }
  return L;
}

}  // namespace detail

MensaModel init_model(const MensaConfig& config) {
  MensaModel model(config);
  Rng rng = make_rng(config.seed, "init");
  auto& ps = model.params();
  const auto fill = [&](const std::string& name, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : ps.tensor(name)) v = dist(rng);
  };
  fill(shared_weight_name(), config.num_features);
  fill(shared_bias_name(), config.num_features);
  for (std::size_t p = 0; p < config.num_states; ++p) {
    fill(state_tensor_name(p, "scale_proj"), config.hidden_width);
    if (config.shape_covariates) fill(state_tensor_name(p, "shape_proj"), config.hidden_width);
    fill(state_tensor_name(p, "gate"), config.hidden_width);
  }
  return model;
}

void MensaModel::check_input(std::span<const double> x, std::size_t state) const {
  if (x.size() != config_.num_features) {
    throw ContractError(fmt::format("expected {} features, got {}", config_.num_features, x.size()));
  }
  for (double v : x) {
    if (!std::isfinite(v)) throw ContractError("feature vector contains non-finite values");
  }
  if (state >= config_.num_states) throw ContractError(fmt::format("state {} out of range", state));
}

std::vector<double> MensaModel::representation(std::span<const double> x) const {
  check_input(x, 0);
  const auto L = detail::Layout::of(*this);
  return detail::hidden_layer<double>(L, params_.values(), x);
}

std::vector<StateHead> MensaModel::head_params(std::span<const double> x) const {
  check_input(x, 0);
  const auto L = detail::Layout::of(*this);
  const auto p = params_.values();
  const auto h = detail::hidden_layer<double>(L, p, x);
  std::vector<StateHead> out;
  for (std::size_t s = 0; s < config_.num_states; ++s) {
    const auto hd = detail::state_heads<double>(L, p, h, s);
    StateHead head;
    for (std::size_t c = 0; c < config_.num_components; ++c) {
      head.push_back({std::exp(hd.log_scale[c]), std::exp(hd.log_shape[c]),
                      std::exp(hd.log_weight[c])});
    }
    out.push_back(std::move(head));
  }
  return out;
}

double MensaModel::log_pdf(std::span<const double> x, double t, std::size_t state) const {
  check_input(x, state);
  if (!(t > 0.0)) throw DomainError("log_pdf requires t > 0");
  const auto L = detail::Layout::of(*this);
  const auto p = params_.values();
  const auto h = detail::hidden_layer<double>(L, p, x);
  return detail::mixture_log_pdf(detail::state_heads<double>(L, p, h, state), t);
}

double MensaModel::log_surv(std::span<const double> x, double t, std::size_t state) const {
  check_input(x, state);
  if (t < 0.0) throw DomainError("log_surv requires t >= 0");
  if (t == 0.0) return 0.0;
  const auto L = detail::Layout::of(*this);
  const auto p = params_.values();
  const auto h = detail::hidden_layer<double>(L, p, x);
  return detail::mixture_log_surv(detail::state_heads<double>(L, p, h, state), t);
}

double MensaModel::log_hazard(std::span<const double> x, double t, std::size_t state) const {
  check_input(x, state);
  if (!(t > 0.0)) throw DomainError("log_hazard requires t > 0");
  const auto L = detail::Layout::of(*this);
  const auto p = params_.values();
  const auto h = detail::hidden_layer<double>(L, p, x);
  return detail::mixture_log_hazard(detail::state_heads<double>(L, p, h, state), t);
}

IsdMatrix MensaModel::predict_isd(std::span<const double> x, std::span<const double> grid) const {
  check_input(x, 0);
  validate_grid(grid);
  const auto L = detail::Layout::of(*this);
  const auto p = params_.values();
  const auto h = detail::hidden_layer<double>(L, p, x);
  IsdMatrix isd;
  isd.grid.assign(grid.begin(), grid.end());
  isd.survival.resize(static_cast<Eigen::Index>(config_.num_states),
                      static_cast<Eigen::Index>(grid.size()));
  for (std::size_t s = 0; s < config_.num_states; ++s) {
    const auto hd = detail::state_heads<double>(L, p, h, s);
    double prev = 1.0;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      double v = grid[k] == 0.0 ? 1.0 : std::exp(detail::mixture_log_surv(hd, grid[k]));
      // Guards against last-ulp wobble of the log-sum-exp.
      v = std::clamp(std::min(v, prev), 0.0, 1.0);
      isd.survival(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k)) = v;
      prev = v;
    }
  }
  return isd;
}

MedianPrediction median_from_curve(std::span<const double> grid, std::span<const double> surv) {
  if (grid.size() != surv.size() || grid.empty()) {
    throw ContractError("median_from_curve: grid and curve lengths differ");
  }
  if (surv[0] <= 0.5) return {grid[0], false};
  for (std::size_t k = 1; k < grid.size(); ++k) {
    if (surv[k] <= 0.5) {
      const double s0 = surv[k - 1];
      const double s1 = surv[k];
      const double frac = s0 == s1 ? 0.0 : (s0 - 0.5) / (s0 - s1);
      return {grid[k - 1] + frac * (grid[k] - grid[k - 1]), false};
    }
  }
  return {grid.back(), true};
}

MedianPrediction MensaModel::predict_time(std::span<const double> x, std::size_t state,
                                          std::span<const double> grid) const {
  check_input(x, state);
  const auto isd = predict_isd(x, grid);
  const Eigen::VectorXd row = isd.survival.row(static_cast<Eigen::Index>(state));
  return median_from_curve(grid, std::span<const double>(row.data(), grid.size()));
}

void append_model(TextDocument& doc, const MensaModel& model) {
  const auto& c = model.config();
  auto& cfg = doc.add("model-config");
  cfg.set("features", std::to_string(c.num_features));
  cfg.set("states", std::to_string(c.num_states));
  cfg.set("components", std::to_string(c.num_components));
  cfg.set("hidden", std::to_string(c.hidden_width));
  cfg.set("dropout", format_fp64(c.dropout));
  cfg.set("shape_covariates", c.shape_covariates ? "true" : "false");
  cfg.set("seed", std::to_string(c.seed));
  const auto values = model.params().values();
  for (const auto& t : model.params().tensors()) {
    std::vector<std::string> args{t.name};
    for (auto s : t.shape) args.push_back(std::to_string(s));
    auto& sec = doc.add("tensor", std::move(args));
    const std::size_t row_len = t.shape.empty() ? 1 : t.shape.back();
    for (std::size_t start = 0; start < t.size; start += row_len) {
      std::string line;
      for (std::size_t k = start; k < start + row_len; ++k) {
        if (k > start) line += ' ';
        line += format_fp64(values[t.offset + k]);
      }
      sec.lines.push_back(std::move(line));
    }
  }
}

namespace {

std::size_t parse_size(const std::string& s) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    throw DataError("not an unsigned integer: '" + s + "'");
  }
  if (pos != s.size()) throw DataError("not an unsigned integer: '" + s + "'");
  return static_cast<std::size_t>(v);
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw DataError("not a boolean: '" + s + "'");
}

}  // namespace

MensaModel model_from_document(const TextDocument& doc) {
  const auto& cfg = doc.get("model-config");
  MensaConfig c;
  c.num_features = parse_size(cfg.get("features"));
  c.num_states = parse_size(cfg.get("states"));
  c.num_components = parse_size(cfg.get("components"));
  c.hidden_width = parse_size(cfg.get("hidden"));
  c.dropout = parse_fp64(cfg.get("dropout"));
  c.shape_covariates = parse_bool(cfg.get("shape_covariates"));
  c.seed = parse_size(cfg.get("seed"));
  try {
    c.validate();
  } catch (const ContractError& e) {
    throw DataError(std::string("model file: ") + e.what());
  }
  MensaModel model(c);
  auto& ps = model.params();
  std::vector<bool> seen(ps.tensors().size(), false);
  for (const auto& sec : doc.sections) {
    if (sec.name != "tensor") continue;
    if (sec.args.empty()) throw DataError("model file: tensor section without a name");
    const auto& name = sec.args.front();
    if (!ps.contains(name)) throw DataError("model file: unexpected tensor " + name);
    const auto& info = ps.info(name);
    std::vector<std::size_t> shape;
    for (std::size_t k = 1; k < sec.args.size(); ++k) shape.push_back(parse_size(sec.args[k]));
    if (shape != info.shape) throw DataError("model file: tensor " + name + " has the wrong shape");
    std::vector<double> vals;
    for (const auto& line : sec.lines) {
      for (const auto& tok : split_ws(line)) vals.push_back(parse_fp64(tok));
    }
    if (vals.size() != info.size) throw DataError("model file: tensor " + name + " has wrong size");
    std::copy(vals.begin(), vals.end(), ps.tensor(name).begin());
    const auto idx = static_cast<std::size_t>(&info - ps.tensors().data());
    seen[idx] = true;
  }
  for (std::size_t k = 0; k < seen.size(); ++k) {
    if (!seen[k]) throw DataError("model file: missing tensor " + ps.tensors()[k].name);
  }
  return model;
}

void save_model(const std::filesystem::path& path, const MensaModel& model) {
  TextDocument doc;
  doc.add("mensa-model").set("version", "1");
  append_model(doc, model);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  doc.write(out);
}

MensaModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return model_from_document(TextDocument::read(in));
}

}  // namespace mensa
