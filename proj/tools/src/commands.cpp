#include "commands.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <set>

#include "mensa/copula.hpp"
#include "mensa/error.hpp"
#include "mensa/rng.hpp"
#include "mensa/textdoc.hpp"
#include "run_config.hpp"

namespace mensa::cli {

namespace fs = std::filesystem;

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::string canonical_string(const fs::path& p) {
  std::error_code ec;
  auto c = fs::weakly_canonical(p, ec);
  return ec ? p.string() : c.string();
}

std::vector<std::string> csv_feature_names(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw DataError(path.string() + ": empty file");
  if (!header.empty() && header.back() == '\r') header.pop_back();
  std::vector<std::string> names;
  std::size_t start = 0;
  while (start <= header.size()) {
    const auto comma = std::min(header.find(',', start), header.size());
    const auto cell = header.substr(start, comma - start);
    if (cell.rfind("f_", 0) == 0) names.push_back(cell.substr(2));
    start = comma + 1;
  }
  return names;
}

std::vector<double> row_of(const Eigen::MatrixXd& m, Eigen::Index i) {
  std::vector<double> r(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index k = 0; k < m.cols(); ++k) r[static_cast<std::size_t>(k)] = m(i, k);
  return r;
}

}  // namespace

data::MultiEventDataset load_for_model(const Artifact& a, const fs::path& path) {
  const auto schema = a.preprocess.input_schema();
  const auto have = csv_feature_names(path);
  std::vector<std::string> missing;
  std::vector<std::string> extra;
  std::set<std::string> have_set(have.begin(), have.end());
  std::set<std::string> want_set;
  for (const auto& s : schema) {
    want_set.insert(s.name);
    if (!have_set.count(s.name)) missing.push_back(s.name);
  }
  for (const auto& h : have) {
    if (!want_set.count(h)) extra.push_back(h);
  }
  if (!missing.empty() || !extra.empty()) {
    throw ContractError(fmt::format("feature mismatch in {}: missing [{}], unexpected [{}]",
                                    path.string(), fmt::join(missing, ", "), fmt::join(extra, ", ")));
  }
  return data::load_csv(path, schema);
}

void cmd_simulate(const SimulateOptions& o) {
  if (o.n < 1) throw ContractError("--n must be >= 1");
  if (o.d < 1) throw ContractError("--d must be >= 1");
  const auto kind = sim::parse_risk_kind(o.dgp);
  const auto family = sim::parse_copula_family(o.copula);
  const auto copula = sim::tau_to_theta(family, o.tau);
  const auto dgp = sim::make_dgp(kind, o.d, copula, derive_seed(o.seed, "dgp"));
  const auto simulated = sim::generate_dataset(dgp, o.n, derive_seed(o.seed, "data"));
  ensure_dir(o.out);
  data::save_csv(o.out / "data.csv", simulated.dataset);
  sim::save_truth(o.out / "truth.json", dgp);
  spdlog::info("simulated {} rows ({} copula, theta {:.6g}, dgp {}) into {}", o.n,
               sim::to_string(copula.family), copula.theta, o.dgp, o.out.string());
}

TrainSummary cmd_train(const fs::path& config_path) {
  const RunConfig cfg = load_run_config(config_path);
  if (!fs::exists(cfg.data_path)) {
    throw ContractError("dataset not found: " + cfg.data_path.string());
  }
  const auto raw = data::load_csv(cfg.data_path);
  raw.validate();
  const std::size_t K = raw.num_events();
  if (cfg.mode == train::Mode::Single && K != 1) {
    throw ContractError(fmt::format("single mode needs one event, the dataset has {}", K));
  }
  if (cfg.mode == train::Mode::Competing) {
    for (Eigen::Index i = 0; i < raw.times.rows(); ++i) {
      if ((raw.times.row(i).array() != raw.times(i, 0)).any()) {
        throw ContractError(fmt::format(
            "competing mode expects one observed time per row; row {} has several", i));
      }
      if (raw.events.row(i).sum() > 1) {
        throw ContractError(fmt::format("competing mode allows one event per row; row {} has more", i));
      }
    }
  }
  const auto trajectories = resolve_trajectories(cfg.trajectories, raw.event_names);

  const auto split = data::split_stratified(raw, {0.7, 0.1, 0.2, derive_seed(cfg.seed, "split")});
  const auto train_raw = raw.subset(split.train);
  const auto valid_raw = raw.subset(split.valid);
  const auto test_raw = raw.subset(split.test);
  const auto prep = data::preprocess_fit(train_raw);
  const auto train_set = data::encode_event_free(data::preprocess_apply(prep, train_raw));
  const auto valid_set = data::encode_event_free(data::preprocess_apply(prep, valid_raw));

  MensaConfig mc;
  mc.num_features = prep.output_width();
  mc.num_states = K + 1;
  mc.num_components = cfg.components;
  mc.hidden_width = cfg.hidden_width;
  mc.dropout = cfg.dropout;
  mc.shape_covariates = cfg.shape_covariates;
  mc.seed = derive_seed(cfg.seed, "model");
  const auto initial = init_model(mc);

  ensure_dir(cfg.output_dir);
  train::TrainConfig tc;
  tc.batch_size = cfg.batch_size;
  tc.learning_rate = cfg.learning_rate;
  tc.weight_decay = cfg.weight_decay;
  tc.epochs = cfg.epochs;
  tc.patience = cfg.patience;
  tc.mode = cfg.mode;
  tc.trajectories = trajectories;
  tc.trajectory_log = cfg.trajectory_log;
  tc.seed = derive_seed(cfg.seed, "train");
  tc.log_path = cfg.output_dir / "train_log.jsonl";

  TrainSummary summary{cfg.output_dir / "model.txt", *tc.log_path,
                       train::train(initial, train_set, valid_set, tc)};

  Artifact a;
  a.mode = cfg.mode;
  a.event_names = raw.event_names;
  a.max_time = train_raw.times.maxCoeff();
  a.training_files = {canonical_string(cfg.data_path),
                      canonical_string(cfg.output_dir / "train.csv")};
  a.trajectories = trajectories;
  a.preprocess = prep;
  a.model = summary.result.model;
  save_artifact(summary.model_path, a);
  data::save_csv(cfg.output_dir / "train.csv", train_raw);
  data::save_csv(cfg.output_dir / "valid.csv", valid_raw);
  data::save_csv(cfg.output_dir / "test.csv", test_raw);
  return summary;
}

void cmd_predict(const PredictOptions& o) {
  const auto a = load_artifact(o.model);
  const auto raw = load_for_model(a, o.data);
  const auto x = data::preprocess_apply(a.preprocess, raw).feature_matrix();
  const double t_max = o.grid_max.value_or(a.max_time);
  const auto grid = linear_grid(t_max, o.grid_points);

  std::ofstream out(o.out, std::ios::binary);
  if (!out) throw DataError("cannot write " + o.out.string());
  out << "row,state,median_time,median_censored";
  for (double t : grid) out << ',' << format_fp64(t);
  out << '\n';
  const std::size_t P = a.model.config().num_states;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto xi = row_of(x, i);
    const auto isd = a.model.predict_isd(xi, grid);
    for (std::size_t s = 0; s < P; ++s) {
      const Eigen::VectorXd curve = isd.survival.row(static_cast<Eigen::Index>(s));
      const auto med = median_from_curve(grid, std::span<const double>(curve.data(), grid.size()));
      out << i << ',' << (s == 0 ? std::string("event_free") : a.event_names[s - 1]) << ','
          << format_fp64(med.time) << ',' << (med.censored ? 1 : 0);
      for (double v : std::span<const double>(curve.data(), grid.size())) out << ',' << format_fp64(v);
      out << '\n';
    }
  }
  if (!out) throw DataError("error writing " + o.out.string());
}

std::vector<double> median_grid(const Artifact& a) { return linear_grid(2.0 * a.max_time, 400); }

metrics::MetricReport evaluate_artifact(const Artifact& a, const data::MultiEventDataset& raw,
                                        const sim::GroundTruthDgp* truth) {
  if (raw.event_names != a.event_names) {
    throw ContractError(fmt::format("evaluation events [{}] differ from the model's [{}]",
                                    fmt::join(raw.event_names, ", "), fmt::join(a.event_names, ", ")));
  }
  const std::size_t K = a.event_names.size();
  const auto x = data::preprocess_apply(a.preprocess, raw).feature_matrix();
  const auto n = x.rows();
  const auto grid = median_grid(a);
  const auto& model = a.model;

  Eigen::MatrixXd risks(n, static_cast<Eigen::Index>(K));
  Eigen::MatrixXd medians(n, static_cast<Eigen::Index>(K));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto xi = row_of(x, i);
    const auto isd = model.predict_isd(xi, grid);
    for (std::size_t k = 0; k < K; ++k) {
      const Eigen::VectorXd curve = isd.survival.row(static_cast<Eigen::Index>(k + 1));
      const auto med = median_from_curve(grid, std::span<const double>(curve.data(), grid.size()));
      medians(i, static_cast<Eigen::Index>(k)) = med.time;
      risks(i, static_cast<Eigen::Index>(k)) = -med.time;
    }
  }

  metrics::MetricReport report;
  report.mode = train::to_string(a.mode);
  report.rows = static_cast<std::size_t>(n);
  for (std::size_t k = 0; k < K; ++k) {
    const auto c = static_cast<Eigen::Index>(k);
    const Eigen::VectorXd t = raw.times.col(c);
    const Eigen::VectorXi e = raw.events.col(c);
    const Eigen::VectorXd r = risks.col(c);
    const Eigen::VectorXd m = medians.col(c);
    const std::span<const double> ts(t.data(), t.size());
    const std::span<const int> es(e.data(), e.size());
    metrics::EventMetrics em;
    em.name = a.event_names[k];
    try {
      em.ci = metrics::harrell_ci(std::span<const double>(r.data(), r.size()), ts, es);
    } catch (const DomainError& err) {
      spdlog::warn("event {}: {}", em.name, err.what());
      em.ci = std::nan("");
    }
    const auto eval_grid = metrics::default_eval_grid(ts);
    Eigen::MatrixXd surv(n, static_cast<Eigen::Index>(eval_grid.size()));
    std::vector<double> at_time(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto xi = row_of(x, i);
      for (std::size_t g = 0; g < eval_grid.size(); ++g) {
        surv(i, static_cast<Eigen::Index>(g)) = std::exp(model.log_surv(xi, eval_grid[g], k + 1));
      }
      at_time[static_cast<std::size_t>(i)] = std::exp(model.log_surv(xi, t(i), k + 1));
    }
    em.ibs = metrics::ibs(surv, eval_grid, ts, es);
    em.mmae = metrics::margin_mae(std::span<const double>(m.data(), m.size()), ts, es,
                                  metrics::km_fit(ts, es));
    em.dcal = metrics::d_calibration(at_time, es);
    if (truth != nullptr) {
      const auto raw_x = raw.feature_matrix();
      em.survival_l1 = metrics::survival_l1(*truth, raw_x, [&](std::size_t i, double tt) {
        return std::exp(model.log_surv(row_of(x, static_cast<Eigen::Index>(i)), tt, k + 1));
      });
    }
    report.events.push_back(std::move(em));
  }
  try {
    report.global_ci = metrics::global_ci(risks, raw.times, raw.events);
  } catch (const DomainError& err) {
    spdlog::warn("global CI: {}", err.what());
  }
  if (K >= 2) {
    try {
      report.local_ci = metrics::local_ci(risks, raw.times, raw.events);
    } catch (const DomainError& err) {
      spdlog::warn("local CI: {}", err.what());
    }
  }
  report.summarize();
  return report;
}

metrics::MetricReport cmd_evaluate(const EvaluateOptions& o) {
  const auto a = load_artifact(o.model);
  const auto eval_path = canonical_string(o.data);
  for (const auto& f : a.training_files) {
    if (f == eval_path) {
      spdlog::warn("{} was used to train this model; evaluation scores will be optimistic",
                   o.data.string());
    }
  }
  const auto raw = load_for_model(a, o.data);
  std::optional<sim::GroundTruthDgp> truth;
  if (o.truth) {
    truth = sim::load_truth(*o.truth);
    if (a.event_names.size() != 1) {
      throw ContractError("a ground-truth sidecar describes one event; the model has several");
    }
    for (const auto& f : raw.features) {
      if (f.spec.kind != data::FeatureKind::Numeric) {
        throw ContractError("ground truth needs numeric features; '" + f.spec.name + "' is not");
      }
    }
    if (raw.features.size() != truth->num_features) {
      throw ContractError(fmt::format("ground truth has {} features, the data has {}",
                                      truth->num_features, raw.features.size()));
    }
  }
  auto report = evaluate_artifact(a, raw, truth ? &*truth : nullptr);
  metrics::save_report(o.out, report);
  return report;
}

namespace {

void configure_logging() {
  auto logger = spdlog::get("mensa");
  if (!logger) {
    logger = spdlog::stderr_color_mt("mensa");
    spdlog::set_default_logger(logger);
  }
  spdlog::set_pattern("[%l] %v");
  const char* env = std::getenv("MENSA_LOG_LEVEL");
  const std::string level = env ? env : "info";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::set_level(spdlog::level::info);
    if (level != "info") spdlog::warn("MENSA_LOG_LEVEL={} not recognised; using info", level);
  }
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  configure_logging();
  CLI::App app{"Multi-event survival models: simulate, train, predict, evaluate"};
  app.require_subcommand(1);

  SimulateOptions sim_opts;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic dataset and its ground truth");
  simulate->add_option("--dgp", sim_opts.dgp, "linear or nonlinear")->capture_default_str();
  simulate->add_option("--copula", sim_opts.copula, "independence, clayton or frank")
      ->capture_default_str();
  simulate->add_option("--tau", sim_opts.tau, "Kendall's tau in [0, 0.9]")->capture_default_str();
  simulate->add_option("--n", sim_opts.n, "number of rows")->capture_default_str();
  simulate->add_option("--d", sim_opts.d, "number of features")->capture_default_str();
  simulate->add_option("--seed", sim_opts.seed)->capture_default_str();
  simulate->add_option("--out", sim_opts.out, "output directory")->capture_default_str();

  std::string config_path;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a run configuration");
  train_cmd->add_option("config", config_path, "run configuration file")->required();

  PredictOptions pred_opts;
  auto* predict = app.add_subcommand("predict", "Write survival curves and median times");
  predict->add_option("--model", pred_opts.model)->required();
  predict->add_option("--data", pred_opts.data)->required();
  predict->add_option("--out", pred_opts.out)->required();
  double grid_max = 0.0;
  auto* grid_max_opt = predict->add_option("--grid-max", grid_max, "last grid time");
  predict->add_option("--grid-points", pred_opts.grid_points)->capture_default_str();

  EvaluateOptions eval_opts;
  std::string truth_path;
  auto* evaluate = app.add_subcommand("evaluate", "Score a model on labelled data");
  evaluate->add_option("--model", eval_opts.model)->required();
  evaluate->add_option("--data", eval_opts.data)->required();
  evaluate->add_option("--truth", truth_path, "ground-truth sidecar from simulate");
  evaluate->add_option("--out", eval_opts.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (simulate->parsed()) {
      cmd_simulate(sim_opts);
      out << "wrote " << (sim_opts.out / "data.csv").string() << " and "
          << (sim_opts.out / "truth.json").string() << '\n';
    } else if (train_cmd->parsed()) {
      const auto s = cmd_train(config_path);
      out << fmt::format("trained {} epochs, best validation loss {:.6f} at epoch {}; model {}\n",
                         s.result.log.size(), s.result.best_valid_loss, s.result.best_epoch,
                         s.model_path.string());
    } else if (predict->parsed()) {
      if (*grid_max_opt) pred_opts.grid_max = grid_max;
      cmd_predict(pred_opts);
      out << "wrote " << pred_opts.out.string() << '\n';
    } else if (evaluate->parsed()) {
      if (!truth_path.empty()) eval_opts.truth = truth_path;
      const auto report = cmd_evaluate(eval_opts);
      out << metrics::to_json(report).dump(2) << '\n';
    }
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitOk;
}

}  // namespace mensa::cli
