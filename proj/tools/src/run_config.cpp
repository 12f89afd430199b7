#include "run_config.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <map>
#include <set>

#include "mensa/error.hpp"
#include "mensa/textdoc.hpp"

namespace mensa::cli {

namespace pt = boost::property_tree;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size()) {
    throw ContractError(fmt::format("config: {} must be a non-negative integer, got '{}'", key, v));
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    return parse_fp64(v);
  } catch (const DataError&) {
    throw ContractError(fmt::format("config: {} must be a number, got '{}'", key, v));
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ContractError(fmt::format("config: {} must be true or false, got '{}'", key, v));
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_trajectory_list(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = std::min(text.find(',', start), text.size());
    const auto item = trim(text.substr(start, comma - start));
    start = comma + 1;
    if (item.empty()) continue;
    const auto gt = item.find('>');
    if (gt == std::string::npos) {
      throw ContractError("config: trajectory '" + item + "' must look like before>after");
    }
    auto a = trim(std::string_view(item).substr(0, gt));
    auto b = trim(std::string_view(item).substr(gt + 1));
    if (a.empty() || b.empty()) {
      throw ContractError("config: trajectory '" + item + "' must look like before>after");
    }
    out.emplace_back(std::move(a), std::move(b));
  }
  return out;
}

train::TrajectorySet resolve_trajectories(
    const std::vector<std::pair<std::string, std::string>>& names,
    const std::vector<std::string>& event_names) {
  const auto state_of = [&](const std::string& n) {
    const auto it = std::find(event_names.begin(), event_names.end(), n);
    if (it == event_names.end()) {
      throw ContractError("trajectory event '" + n + "' is not an event of the dataset");
    }
    return static_cast<std::size_t>(it - event_names.begin()) + 1;
  };
  train::TrajectorySet set;
  for (const auto& [a, b] : names) set.pairs.push_back({state_of(a), state_of(b)});
  set.validate(event_names.size() + 1);
  return set;
}

RunConfig parse_run_config(std::istream& in, const std::filesystem::path& base_dir) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ContractError(std::string("config: ") + e.what());
  }
  static const std::map<std::string, std::set<std::string>> known = {
      {"run", {"mode", "seed", "output_dir"}},
      {"data", {"path"}},
      {"model", {"hidden_width", "components", "dropout", "shape_covariates"}},
      {"train",
       {"batch_size", "learning_rate", "weight_decay", "epochs", "patience", "trajectories",
        "trajectory_log"}},
  };
  RunConfig c;
  const auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  };
  for (const auto& [section, body] : tree) {
    const auto sec = known.find(section);
    if (sec == known.end()) throw ContractError("config: unknown section [" + section + "]");
    if (!body.data().empty()) throw ContractError("config: key outside a section: " + section);
    for (const auto& [key, node] : body) {
      if (!sec->second.count(key)) {
        throw ContractError("config: unknown key '" + key + "' in [" + section + "]");
      }
      const std::string v = trim(node.data());
      const std::string full = section + "." + key;
      if (full == "run.mode") c.mode = train::parse_mode(v);
      else if (full == "run.seed") c.seed = to_size(full, v);
      else if (full == "run.output_dir") c.output_dir = resolve(v);
      else if (full == "data.path") c.data_path = resolve(v);
      else if (full == "model.hidden_width") c.hidden_width = to_size(full, v);
      else if (full == "model.components") c.components = to_size(full, v);
      else if (full == "model.dropout") c.dropout = to_double(full, v);
      else if (full == "model.shape_covariates") c.shape_covariates = to_bool(full, v);
      else if (full == "train.batch_size") c.batch_size = to_size(full, v);
      else if (full == "train.learning_rate") c.learning_rate = to_double(full, v);
      else if (full == "train.weight_decay") c.weight_decay = to_double(full, v);
      else if (full == "train.epochs") c.epochs = to_size(full, v);
      else if (full == "train.patience") c.patience = to_size(full, v);
      else if (full == "train.trajectories") c.trajectories = parse_trajectory_list(v);
      else if (full == "train.trajectory_log") c.trajectory_log = to_bool(full, v);
    }
  }
  if (c.data_path.empty()) throw ContractError("config: [data] path is required");
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ContractError("cannot open config " + path.string());
  return parse_run_config(in, path.parent_path());
}

}  // namespace mensa::cli
