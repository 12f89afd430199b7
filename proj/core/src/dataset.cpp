#include "mensa/dataset.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include "mensa/error.hpp"

namespace mensa::data {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::optional<double> parse_double(std::string_view s) {
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::string format_double(double v) { return fmt::format("{:.17g}", v); }

[[noreturn]] void row_error(std::size_t line, const std::string& what) {
  throw DataError("line " + std::to_string(line) + ": " + what);
}

}  // namespace

bool FeatureColumn::is_missing(std::size_t row) const {
  return spec.kind == FeatureKind::Numeric ? std::isnan(numeric[row]) : categorical[row].empty();
}

bool is_valid_name(std::string_view name) {
  if (name.empty()) return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-';
  });
}

Schema MultiEventDataset::schema() const {
  Schema s;
  for (const auto& f : features) s.push_back(f.spec);
  return s;
}

Eigen::MatrixXd MultiEventDataset::feature_matrix() const {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(features.size()));
  for (std::size_t j = 0; j < features.size(); ++j) {
    const auto& f = features[j];
    if (f.spec.kind != FeatureKind::Numeric) {
      throw ContractError("feature '" + f.spec.name + "' is categorical; preprocess first");
    }
    for (std::size_t i = 0; i < rows(); ++i) {
      if (std::isnan(f.numeric[i])) {
        throw ContractError("feature '" + f.spec.name + "' has missing values; preprocess first");
      }
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = f.numeric[i];
    }
  }
  return x;
}

MultiEventDataset MultiEventDataset::subset(std::span<const std::size_t> idx) const {
  MultiEventDataset out;
  out.event_names = event_names;
  out.times.resize(static_cast<Eigen::Index>(idx.size()), times.cols());
  out.events.resize(static_cast<Eigen::Index>(idx.size()), events.cols());
  for (const auto& f : features) {
    FeatureColumn c{f.spec, {}, {}};
    if (f.spec.kind == FeatureKind::Numeric) {
      for (auto i : idx) c.numeric.push_back(f.numeric.at(i));
    } else {
      for (auto i : idx) c.categorical.push_back(f.categorical.at(i));
    }
    out.features.push_back(std::move(c));
  }
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto src = static_cast<Eigen::Index>(idx[r]);
    if (src >= times.rows()) throw ContractError("subset index out of range");
    out.times.row(static_cast<Eigen::Index>(r)) = times.row(src);
    out.events.row(static_cast<Eigen::Index>(r)) = events.row(src);
  }
  return out;
}

void MultiEventDataset::validate() const {
  const auto n = rows();
  if (event_names.empty()) throw DataError("dataset has no events");
  if (static_cast<std::size_t>(times.cols()) != num_events() ||
      static_cast<std::size_t>(events.cols()) != num_events() ||
      static_cast<std::size_t>(events.rows()) != n) {
    throw DataError("time/event matrices do not match the event list");
  }
  for (const auto& f : features) {
    const auto len = f.spec.kind == FeatureKind::Numeric ? f.numeric.size() : f.categorical.size();
    if (len != n) throw DataError("feature '" + f.spec.name + "' has wrong length");
  }
  for (Eigen::Index i = 0; i < times.rows(); ++i) {
    for (Eigen::Index k = 0; k < times.cols(); ++k) {
      if (!std::isfinite(times(i, k)) || times(i, k) < 0.0) {
        throw DataError(fmt::format("row {}: time for event '{}' must be finite and >= 0", i,
                                    event_names[static_cast<std::size_t>(k)]));
      }
      if (events(i, k) != 0 && events(i, k) != 1) {
        throw DataError(fmt::format("row {}: indicator for event '{}' must be 0 or 1", i,
                                    event_names[static_cast<std::size_t>(k)]));
      }
    }
  }
}

MultiEventDataset read_csv(std::istream& in, const std::optional<Schema>& schema) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty CSV input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_line(line);

  std::vector<std::size_t> feature_cols;
  std::vector<std::string> feature_names;
  std::vector<std::string> event_names;
  std::map<std::string, std::size_t> time_col;
  std::map<std::string, std::size_t> event_col;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string& h = header[c];
    auto take = [&](std::string_view prefix) -> std::optional<std::string> {
      if (h.rfind(prefix, 0) != 0) return std::nullopt;
      std::string name = h.substr(prefix.size());
      if (!is_valid_name(name)) throw DataError("line 1: invalid column name '" + h + "'");
      return name;
    };
    if (auto f = take("f_")) {
      feature_cols.push_back(c);
      feature_names.push_back(*f);
    } else if (auto t = take("time_")) {
      if (time_col.count(*t)) throw DataError("line 1: duplicate column '" + h + "'");
      time_col[*t] = c;
      event_names.push_back(*t);
    } else if (auto e = take("event_")) {
      if (event_col.count(*e)) throw DataError("line 1: duplicate column '" + h + "'");
      event_col[*e] = c;
    } else {
      throw DataError("line 1: unrecognised column '" + h + "'");
    }
  }
  if (event_names.empty()) throw DataError("line 1: no time_<event> columns");
  for (const auto& e : event_names) {
    if (!event_col.count(e)) throw DataError("line 1: missing column event_" + e);
  }
  if (event_col.size() != time_col.size()) throw DataError("line 1: event_ column without time_");

  if (schema) {
    std::vector<std::string> expected;
    for (const auto& s : *schema) expected.push_back(s.name);
    if (expected != feature_names) throw DataError("line 1: header does not match the schema");
  }

  std::vector<std::vector<std::string>> raw(feature_cols.size());
  std::vector<double> times;
  std::vector<int> events;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size()) {
      row_error(line_no, fmt::format("expected {} cells, found {}", header.size(), cells.size()));
    }
    for (std::size_t j = 0; j < feature_cols.size(); ++j) raw[j].push_back(cells[feature_cols[j]]);
    for (const auto& e : event_names) {
      const auto t = parse_double(cells[time_col[e]]);
      if (!t || !std::isfinite(*t) || *t < 0.0) {
        row_error(line_no, "time_" + e + " must be a finite number >= 0");
      }
      const auto d = parse_double(cells[event_col[e]]);
      if (!d || (*d != 0.0 && *d != 1.0)) {
        row_error(line_no, "event_" + e + " must be 0 or 1, got '" + cells[event_col[e]] + "'");
      }
      times.push_back(*t);
      events.push_back(static_cast<int>(*d));
    }
  }

  MultiEventDataset ds;
  ds.event_names = event_names;
  const auto n = static_cast<Eigen::Index>(times.size() / event_names.size());
  const auto k = static_cast<Eigen::Index>(event_names.size());
  ds.times.resize(n, k);
  ds.events.resize(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      ds.times(i, j) = times[static_cast<std::size_t>(i * k + j)];
      ds.events(i, j) = events[static_cast<std::size_t>(i * k + j)];
    }
  }

  for (std::size_t j = 0; j < feature_cols.size(); ++j) {
    FeatureKind kind = FeatureKind::Numeric;
    if (schema) {
      kind = (*schema)[j].kind;
    } else {
      const bool numeric = std::all_of(raw[j].begin(), raw[j].end(), [](const std::string& s) {
        return s.empty() || parse_double(s).has_value();
      });
      kind = numeric ? FeatureKind::Numeric : FeatureKind::Categorical;
    }
    FeatureColumn col{{feature_names[j], kind}, {}, {}};
    if (kind == FeatureKind::Numeric) {
      for (std::size_t i = 0; i < raw[j].size(); ++i) {
        const auto& s = raw[j][i];
        if (s.empty()) {
          col.numeric.push_back(kNaN);
          continue;
        }
        const auto v = parse_double(s);
        if (!v) row_error(i + 2, "f_" + feature_names[j] + " is not numeric: '" + s + "'");
        col.numeric.push_back(*v);
      }
    } else {
      col.categorical = std::move(raw[j]);
    }
    ds.features.push_back(std::move(col));
  }
  return ds;
}

MultiEventDataset load_csv(const std::filesystem::path& path, const std::optional<Schema>& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return read_csv(in, schema);
}

void write_csv(std::ostream& out, const MultiEventDataset& ds) {
  std::vector<std::string> header;
  for (const auto& f : ds.features) header.push_back("f_" + f.spec.name);
  for (const auto& e : ds.event_names) {
    header.push_back("time_" + e);
    header.push_back("event_" + e);
  }
  out << fmt::format("{}\n", fmt::join(header, ","));
  std::string row;
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    row.clear();
    for (const auto& f : ds.features) {
      if (!row.empty()) row += ',';
      if (f.spec.kind == FeatureKind::Numeric) {
        if (!std::isnan(f.numeric[i])) row += format_double(f.numeric[i]);
      } else {
        row += f.categorical[i];
      }
    }
    for (std::size_t k = 0; k < ds.num_events(); ++k) {
      if (!row.empty()) row += ',';
      const auto r = static_cast<Eigen::Index>(i);
      const auto c = static_cast<Eigen::Index>(k);
      row += format_double(ds.times(r, c));
      row += ',';
      row += ds.events(r, c) ? '1' : '0';
    }
    out << row << '\n';
  }
}

void save_csv(const std::filesystem::path& path, const MultiEventDataset& ds) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_csv(out, ds);
}

StateEncodedDataset StateEncodedDataset::subset(std::span<const std::size_t> idx) const {
  StateEncodedDataset out;
  const auto n = static_cast<Eigen::Index>(idx.size());
  out.x.resize(n, x.cols());
  out.times.resize(n, times.cols());
  out.events.resize(n, events.cols());
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto src = static_cast<Eigen::Index>(idx[static_cast<std::size_t>(r)]);
    if (src >= times.rows()) throw ContractError("subset index out of range");
    out.x.row(r) = x.row(src);
    out.times.row(r) = times.row(src);
    out.events.row(r) = events.row(src);
  }
  return out;
}

StateEncodedDataset encode_event_free(const Eigen::MatrixXd& x, const Eigen::MatrixXd& times,
                                      const Eigen::MatrixXi& events) {
  const auto n = times.rows();
  const auto k = times.cols();
  if (k < 1) throw ContractError("encode_event_free requires at least one event");
  if (events.rows() != n || events.cols() != k || x.rows() != n) {
    throw ContractError("encode_event_free: inconsistent shapes");
  }
  StateEncodedDataset out;
  out.x = x;
  out.times.resize(n, k + 1);
  out.events.resize(n, k + 1);
  out.times.rightCols(k) = times;
  out.events.rightCols(k) = events;
  for (Eigen::Index i = 0; i < n; ++i) {
    double first_event = std::numeric_limits<double>::infinity();
    double last_censor = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < k; ++j) {
      if (events(i, j) == 1) {
        first_event = std::min(first_event, times(i, j));
      } else {
        last_censor = std::max(last_censor, times(i, j));
      }
    }
    if (std::isfinite(first_event)) {
      out.times(i, 0) = first_event;
      out.events(i, 0) = 0;
    } else {
      out.times(i, 0) = last_censor;
      out.events(i, 0) = 1;
    }
  }
  return out;
}

StateEncodedDataset encode_event_free(const MultiEventDataset& ds) {
  return encode_event_free(ds.feature_matrix(), ds.times, ds.events);
}

SplitIndices split_stratified(const MultiEventDataset& ds, const SplitSpec& spec) {
  if (!(spec.train > 0.0 && spec.valid > 0.0 && spec.test > 0.0)) {
    throw ContractError("split fractions must all be positive");
  }
  if (std::abs(spec.train + spec.valid + spec.test - 1.0) > 1e-9) {
    throw ContractError("split fractions must sum to 1");
  }
  const std::size_t n = ds.rows();
  if (n < 10) throw ContractError("split_stratified requires at least 10 rows");

  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < n; ++i) {
    std::string key;
    for (Eigen::Index k = 0; k < ds.events.cols(); ++k) {
      key += ds.events(static_cast<Eigen::Index>(i), k) ? '1' : '0';
    }
    strata[key].push_back(i);
  }

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SplitIndices out;
  for (auto& [key, rows] : strata) {
    std::shuffle(rows.begin(), rows.end(), rng);
    if (rows.size() < 3) {
      spdlog::warn("stratum {} has {} rows; assigning them at random", key, rows.size());
      for (auto i : rows) {
        const double u = unit(rng);
        if (u < spec.train) {
          out.train.push_back(i);
        } else if (u < spec.train + spec.valid) {
          out.valid.push_back(i);
        } else {
          out.test.push_back(i);
        }
      }
      continue;
    }
    const auto m = static_cast<double>(rows.size());
    auto n_train = static_cast<std::size_t>(std::llround(m * spec.train));
    auto n_valid = static_cast<std::size_t>(std::llround(m * spec.valid));
    n_train = std::min(n_train, rows.size());
    n_valid = std::min(n_valid, rows.size() - n_train);
    out.train.insert(out.train.end(), rows.begin(), rows.begin() + static_cast<long>(n_train));
    out.valid.insert(out.valid.end(), rows.begin() + static_cast<long>(n_train),
                     rows.begin() + static_cast<long>(n_train + n_valid));
    out.test.insert(out.test.end(), rows.begin() + static_cast<long>(n_train + n_valid),
                    rows.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.valid.begin(), out.valid.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

Schema PreprocessState::input_schema() const {
  Schema s;
  for (const auto& c : columns) s.push_back({c.name, c.kind});
  return s;
}

std::vector<std::string> PreprocessState::output_names() const {
  std::vector<std::string> names;
  for (const auto& c : columns) {
    if (c.kind == FeatureKind::Numeric) {
      if (!c.dropped) names.push_back(c.name);
    } else {
      for (const auto& cat : c.categories) names.push_back(c.name + "=" + cat);
    }
  }
  return names;
}

PreprocessState preprocess_fit(const MultiEventDataset& train) {
  PreprocessState state;
  for (const auto& f : train.features) {
    PreprocessColumn col;
    col.name = f.spec.name;
    col.kind = f.spec.kind;
    if (f.spec.kind == FeatureKind::Numeric) {
      double sum = 0.0;
      std::size_t count = 0;
      for (double v : f.numeric) {
        if (!std::isnan(v)) {
          sum += v;
          ++count;
        }
      }
      if (count == 0) throw DataError("feature '" + f.spec.name + "' has no observed values");
      col.mean = sum / static_cast<double>(count);
      double ss = 0.0;
      for (double v : f.numeric) {
        if (!std::isnan(v)) ss += (v - col.mean) * (v - col.mean);
      }
      col.stddev = std::sqrt(ss / static_cast<double>(count));
      if (!(col.stddev > 0.0)) {
        col.dropped = true;
        col.stddev = 1.0;
      }
    } else {
      std::map<std::string, std::size_t> counts;
      for (const auto& v : f.categorical) {
        if (!v.empty()) ++counts[v];
      }
      if (counts.empty()) throw DataError("feature '" + f.spec.name + "' has no observed values");
      std::size_t best = 0;
      for (const auto& [cat, c] : counts) {
        col.categories.push_back(cat);
        if (c > best) {
          best = c;
          col.mode = cat;
        }
      }
    }
    state.columns.push_back(std::move(col));
  }
  return state;
}

MultiEventDataset preprocess_apply(const PreprocessState& state, const MultiEventDataset& ds) {
  if (ds.features.size() != state.columns.size()) {
    throw DataError(fmt::format("expected {} feature columns, found {}", state.columns.size(),
                                ds.features.size()));
  }
  MultiEventDataset out;
  out.event_names = ds.event_names;
  out.times = ds.times;
  out.events = ds.events;
  const std::size_t n = ds.rows();
  for (std::size_t j = 0; j < state.columns.size(); ++j) {
    const auto& col = state.columns[j];
    const auto& f = ds.features[j];
    if (f.spec.name != col.name || f.spec.kind != col.kind) {
      throw DataError("feature column '" + f.spec.name + "' does not match fitted column '" +
                      col.name + "'");
    }
    if (col.kind == FeatureKind::Numeric) {
      if (col.dropped) continue;
      FeatureColumn c{{col.name, FeatureKind::Numeric}, {}, {}};
      c.numeric.reserve(n);
      for (double v : f.numeric) {
        const double filled = std::isnan(v) ? col.mean : v;
        c.numeric.push_back((filled - col.mean) / col.stddev);
      }
      out.features.push_back(std::move(c));
    } else {
      for (const auto& cat : col.categories) {
        FeatureColumn c{{col.name + "=" + cat, FeatureKind::Numeric}, {}, {}};
        c.numeric.reserve(n);
        for (const auto& v : f.categorical) {
          const std::string& filled = v.empty() ? col.mode : v;
          c.numeric.push_back(filled == cat ? 1.0 : 0.0);
        }
        out.features.push_back(std::move(c));
      }
    }
  }
  return out;
}

}  // namespace mensa::data
