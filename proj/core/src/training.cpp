#include "mensa/training.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>

#include "mensa/autodiff.hpp"
#include "mensa/error.hpp"
#include "mensa/rng.hpp"
#include "model_kernels.hpp"

namespace mensa::train {

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::Single: return "single";
    case Mode::Competing: return "competing";
    case Mode::Multi: return "multi";
  }
  return "?";
}

Mode parse_mode(std::string_view text) {
  if (text == "single") return Mode::Single;
  if (text == "competing") return Mode::Competing;
  if (text == "multi") return Mode::Multi;
  throw ContractError(fmt::format("unknown mode '{}' (expected single, competing or multi)", text));
}

void TrajectorySet::validate(std::size_t num_states) const {
  for (const auto& p : pairs) {
    if (p.before == p.after) throw ContractError("trajectory pair must name two different events");
    if (p.before < 1 || p.after < 1 || p.before >= num_states || p.after >= num_states) {
      throw ContractError(fmt::format("trajectory pair ({}, {}) references a state outside 1..{}",
                                      p.before, p.after, num_states - 1));
    }
    for (const auto& q : pairs) {
      if (q.before == p.after && q.after == p.before) {
        throw ContractError(
            fmt::format("trajectory pairs ({0}, {1}) and ({1}, {0}) contradict each other",
                        p.before, p.after));
      }
    }
  }
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ContractError("batch size must be >= 1");
  if (patience < 1) throw ContractError("patience must be >= 1");
  if (epochs < 1) throw ContractError("epochs must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ContractError("learning rate must be finite and >= 0");
  }
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw ContractError("weight decay must be finite and >= 0");
  }
  if (mode != Mode::Multi && !trajectories.empty()) {
    throw ContractError("trajectory pairs are only used in multi mode");
  }
}

LossOptions loss_options(const TrainConfig& config) {
  return {config.mode, config.trajectories, config.trajectory_log};
}

namespace {

using data::StateEncodedDataset;
using detail::DropoutMask;
using detail::Layout;

struct Terms {
  bool nll = true;
  bool per_state_times = true;
  const TrajectorySet* trajectories = nullptr;
  bool trajectory_log = false;
};

Terms terms_for(const LossOptions& o) {
  Terms t;
  t.per_state_times = o.mode == Mode::Multi;
  if (o.mode == Mode::Multi && !o.trajectories.empty()) t.trajectories = &o.trajectories;
  t.trajectory_log = o.trajectory_log;
  return t;
}

void check_batch(const MensaModel& model, const StateEncodedDataset& b) {
  if (b.rows() == 0) throw ContractError("empty batch");
  if (b.num_states() != model.config().num_states) {
    throw ContractError(fmt::format("batch has {} states, model expects {}", b.num_states(),
                                    model.config().num_states));
  }
  if (static_cast<std::size_t>(b.x.cols()) != model.config().num_features) {
    throw ContractError(fmt::format("batch has {} features, model expects {}", b.x.cols(),
                                    model.config().num_features));
  }
}

double clamp_time(double t) { return std::max(t, kMinTime); }

template <class S>
void check_term(const S& term, std::size_t row, std::size_t state, const char* what) {
  const double v = ad::value_of(term);
  if (!std::isfinite(v)) {
    throw NumericalError(fmt::format("non-finite {} at row {}, state {} (value {})", what, row,
                                     state, v));
  }
}

// Appends row i's negative log-likelihood terms and trajectory terms.
template <class S>
void row_terms(const Layout& L, std::span<const S> p, const StateEncodedDataset& b,
               std::size_t i, const Terms& terms, DropoutMask mask, std::vector<double>& xbuf,
               std::vector<S>& nll, std::vector<S>& traj) {
  const auto r = static_cast<Eigen::Index>(i);
  for (std::size_t k = 0; k < L.d; ++k) xbuf[k] = b.x(r, static_cast<Eigen::Index>(k));
  const auto h = detail::hidden_layer<S>(L, p, xbuf, mask);
  std::vector<detail::Heads<S>> heads;
  heads.reserve(L.states);
  for (std::size_t s = 0; s < L.states; ++s) heads.push_back(detail::state_heads<S>(L, p, h, s));

  if (terms.nll) {
    const double shared_t = clamp_time(b.times(r, 0));
    for (std::size_t s = 0; s < L.states; ++s) {
      const auto c = static_cast<Eigen::Index>(s);
      const double t = terms.per_state_times ? clamp_time(b.times(r, c)) : shared_t;
      S term = b.events(r, c) == 1 ? -detail::mixture_log_pdf(heads[s], t)
                                   : -detail::mixture_log_surv(heads[s], t);
      check_term(term, i, s, "log-likelihood term");
      nll.push_back(term);
    }
  }
  if (terms.trajectories != nullptr) {
    for (const auto& pr : terms.trajectories->pairs) {
      const auto a = static_cast<Eigen::Index>(pr.before);
      const auto bb = static_cast<Eigen::Index>(pr.after);
      if (b.events(r, a) != 1 || b.events(r, bb) != 1) continue;
      S log_s = detail::mixture_log_surv(heads[pr.after], clamp_time(b.times(r, a)));
      using std::exp;
      S term = terms.trajectory_log ? log_s : S(exp(log_s));
      check_term(term, i, pr.after, "trajectory term");
      traj.push_back(term);
    }
  }
}

struct Sums {
  double nll = 0.0;
  double trajectory = 0.0;
};

Sums evaluate_double(const MensaModel& model, const StateEncodedDataset& b, const Terms& terms) {
  check_batch(model, b);
  const auto L = Layout::of(model);
  const auto p = model.params().values();
  std::vector<double> xbuf(L.d);
  std::vector<double> nll;
  std::vector<double> traj;
  for (std::size_t i = 0; i < b.rows(); ++i) {
    row_terms<double>(L, p, b, i, terms, {}, xbuf, nll, traj);
  }
  return {ad::sum(std::span<const double>(nll)), ad::sum(std::span<const double>(traj))};
}

// Records total_loss on a fresh graph and returns its value and gradient.
// `rng` non-null enables dropout.
LossGradient gradient_impl(const MensaModel& model, const StateEncodedDataset& b,
                           const LossOptions& options, Rng* rng) {
  check_batch(model, b);
  const auto L = Layout::of(model);
  const auto values = model.params().values();
  const Terms terms = terms_for(options);

  ad::Graph g;
  const std::size_t per_row =
      4 * L.hidden + L.states * L.components * 24 + 4 * L.states + 8;
  g.reserve(values.size() + b.rows() * per_row, b.rows() * L.states * L.components * 4 * L.hidden);
  std::vector<ad::Var> p;
  p.reserve(values.size());
  for (double v : values) p.push_back(g.leaf(v));
  const std::span<const ad::Var> ps(p);

  const double dropout = model.config().dropout;
  const bool use_dropout = rng != nullptr && dropout > 0.0;
  std::vector<char> keep(L.hidden, 1);
  std::vector<double> xbuf(L.d);
  std::vector<ad::Var> nll;
  std::vector<ad::Var> traj;
  for (std::size_t i = 0; i < b.rows(); ++i) {
    DropoutMask mask;
    if (use_dropout) {
      for (auto& k : keep) k = open_unit(*rng) >= dropout ? 1 : 0;
      mask = {&keep, 1.0 - dropout};
    }
    row_terms<ad::Var>(L, ps, b, i, terms, mask, xbuf, nll, traj);
  }
  const double n = static_cast<double>(b.rows());
  ad::Var loss = g.sum(nll);
  if (!traj.empty()) loss = loss - g.sum(traj);
  loss = loss / n;
  if (!std::isfinite(loss.value())) throw NumericalError("non-finite batch loss");
  return {loss.value(), g.leaf_gradient(loss)};
}

}  // namespace

double nll_competing(const MensaModel& model, const StateEncodedDataset& batch) {
  Terms t;
  t.per_state_times = false;
  return evaluate_double(model, batch, t).nll;
}

double nll_multi(const MensaModel& model, const StateEncodedDataset& batch) {
  Terms t;
  t.per_state_times = true;
  return evaluate_double(model, batch, t).nll;
}

double trajectory_likelihood(const MensaModel& model, const StateEncodedDataset& batch,
                             const TrajectorySet& trajectories, bool log_variant) {
  trajectories.validate(model.config().num_states);
  Terms t;
  t.nll = false;
  t.trajectories = &trajectories;
  t.trajectory_log = log_variant;
  return evaluate_double(model, batch, t).trajectory;
}

double total_loss(const MensaModel& model, const StateEncodedDataset& batch,
                  const LossOptions& options) {
  options.trajectories.validate(model.config().num_states);
  const auto s = evaluate_double(model, batch, terms_for(options));
  return (s.nll - s.trajectory) / static_cast<double>(batch.rows());
}

LossGradient total_loss_gradient(const MensaModel& model, const StateEncodedDataset& batch,
                                 const LossOptions& options) {
  options.trajectories.validate(model.config().num_states);
  return gradient_impl(model, batch, options, nullptr);
}

namespace {

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TrainResult train(const MensaModel& initial, const StateEncodedDataset& train_set,
                  const StateEncodedDataset& valid_set, const TrainConfig& config) {
  config.validate();
  const std::size_t P = initial.config().num_states;
  config.trajectories.validate(P);
  if (config.mode == Mode::Single && P != 2) {
    throw ContractError("single mode needs exactly one event (P = 2)");
  }
  check_batch(initial, train_set);
  check_batch(initial, valid_set);

  const LossOptions options = loss_options(config);
  const auto started = std::chrono::steady_clock::now();
  std::ofstream log_file;
  if (config.log_path) {
    log_file.open(*config.log_path);
    if (!log_file) throw DataError("cannot write training log " + config.log_path->string());
  }

  TrainResult result{initial, {}, 0.0, std::numeric_limits<double>::infinity(), 0, false};
  MensaModel& model = result.model;
  ParamStore best = model.params();
  AdamState adam({config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay},
                 model.parameter_count());
  Rng shuffle_rng = make_rng(config.seed, "shuffle");
  Rng dropout_rng = make_rng(config.seed, "dropout");

  try {
    result.initial_valid_loss = total_loss(model, valid_set, options);
  } catch (const NumericalError& e) {
    throw NumericalError(fmt::format("epoch 0, validation: {} (parameter norm {:.6g})", e.what(),
                                     model.params().l2_norm()));
  }
  spdlog::info("initial validation loss {:.6f}", result.initial_valid_loss);

  const std::size_t n = train_set.rows();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double weighted = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size, ++batch_no) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      const auto batch = train_set.subset(
          std::span<const std::size_t>(order.data() + start, stop - start));
      LossGradient lg;
      try {
        lg = gradient_impl(model, batch, options, &dropout_rng);
      } catch (const NumericalError& e) {
        throw NumericalError(fmt::format("epoch {}, batch {}: {} (parameter norm {:.6g})", epoch,
                                         batch_no, e.what(), model.params().l2_norm()));
      }
      const double gnorm = norm(lg.gradient);
      if (!std::isfinite(gnorm)) {
        throw NumericalError(fmt::format(
            "epoch {}, batch {}: non-finite gradient (parameter norm {:.6g})", epoch, batch_no,
            model.params().l2_norm()));
      }
      const double frac = static_cast<double>(stop - start) / static_cast<double>(config.batch_size);
      if (frac != 1.0) {
        for (double& g : lg.gradient) g *= frac;
      }
      adam_step(model.params(), lg.gradient, adam);
      weighted += lg.loss * static_cast<double>(stop - start);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = weighted / static_cast<double>(n);
    try {
      rec.valid_loss = total_loss(model, valid_set, options);
    } catch (const NumericalError& e) {
      throw NumericalError(fmt::format("epoch {}, validation: {} (parameter norm {:.6g})", epoch,
                                       e.what(), model.params().l2_norm()));
    }
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.log.push_back(rec);
    if (log_file) {
      write_log_record(log_file, rec);
      log_file.flush();
    }
    spdlog::debug("epoch {} train {:.6f} valid {:.6f}", epoch, rec.train_loss, rec.valid_loss);

    if (rec.valid_loss < result.best_valid_loss) {
      result.best_valid_loss = rec.valid_loss;
      result.best_epoch = epoch;
      best = model.params();
      since_best = 0;
    } else if (++since_best >= config.patience) {
      result.stopped_early = true;
      break;
    }
  }
  model.params() = best;
  spdlog::info("best validation loss {:.6f} at epoch {} of {}", result.best_valid_loss,
               result.best_epoch, result.log.size());
  return result;
}

void write_log_record(std::ostream& out, const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["train_loss"] = r.train_loss;
  j["valid_loss"] = r.valid_loss;
  j["wall_time"] = r.wall_time;
  out << j.dump() << '\n';
}

void save_training_log(const std::filesystem::path& path, const std::vector<EpochRecord>& log) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : log) write_log_record(out, r);
}

}  // namespace mensa::train
