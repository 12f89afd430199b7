#include "artifact.hpp"

#include <fmt/format.h>

#include <fstream>

#include "mensa/error.hpp"
#include "mensa/textdoc.hpp"

namespace mensa::cli {

namespace {

std::string join(const std::vector<std::string>& xs) {
  std::string s;
  for (const auto& x : xs) {
    if (!s.empty()) s += ' ';
    s += x;
  }
  return s;
}

bool parse_flag(const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw DataError("model file: expected true/false, got '" + v + "'");
}

std::size_t parse_index(const std::string& v) {
  try {
    std::size_t pos = 0;
    const auto n = std::stoull(v, &pos);
    if (pos == v.size()) return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
  }
  throw DataError("model file: expected an index, got '" + v + "'");
}

}  // namespace

TextDocument artifact_document(const Artifact& a) {
  TextDocument doc;
  auto& head = doc.add("mensa-model");
  head.set("version", "1");
  head.set("mode", train::to_string(a.mode));
  head.set("events", join(a.event_names));
  head.set("max_time", format_fp64(a.max_time));
  for (const auto& f : a.training_files) head.set("training_file", f);

  auto& traj = doc.add("trajectories");
  for (const auto& p : a.trajectories.pairs) traj.lines.push_back(fmt::format("{} {}", p.before, p.after));

  for (const auto& c : a.preprocess.columns) {
    auto& sec = doc.add("preprocess", {c.name});
    sec.set("kind", c.kind == data::FeatureKind::Numeric ? "numeric" : "categorical");
    sec.set("dropped", c.dropped ? "true" : "false");
    if (c.kind == data::FeatureKind::Numeric) {
      sec.set("mean", format_fp64(c.mean));
      sec.set("stddev", format_fp64(c.stddev));
    } else {
      sec.set("mode", c.mode);
      for (const auto& cat : c.categories) sec.set("category", cat);
    }
  }
  append_model(doc, a.model);
  return doc;
}

Artifact artifact_from_document(const TextDocument& doc) {
  Artifact a;
  const auto& head = doc.get("mensa-model");
  if (head.get("version") != "1") throw DataError("model file: unsupported version");
  try {
    a.mode = train::parse_mode(head.get("mode"));
  } catch (const ContractError& e) {
    throw DataError(std::string("model file: ") + e.what());
  }
  a.event_names = split_ws(head.get("events"));
  a.max_time = parse_fp64(head.get("max_time"));
  for (const auto& line : head.lines) {
    const auto eq = line.find('=');
    if (eq != std::string::npos && line.substr(0, eq).find("training_file") == 0) {
      a.training_files.push_back(line.substr(line.find_first_not_of(' ', eq + 1)));
    }
  }
  for (const auto& line : doc.get("trajectories").lines) {
    const auto parts = split_ws(line);
    if (parts.size() != 2) throw DataError("model file: bad trajectory line '" + line + "'");
    a.trajectories.pairs.push_back({parse_index(parts[0]), parse_index(parts[1])});
  }
  for (const auto& sec : doc.sections) {
    if (sec.name != "preprocess") continue;
    if (sec.args.size() != 1) throw DataError("model file: preprocess section needs a column name");
    data::PreprocessColumn c;
    c.name = sec.args[0];
    const auto kind = sec.get("kind");
    if (kind == "numeric") {
      c.kind = data::FeatureKind::Numeric;
      c.mean = parse_fp64(sec.get("mean"));
      c.stddev = parse_fp64(sec.get("stddev"));
    } else if (kind == "categorical") {
      c.kind = data::FeatureKind::Categorical;
      c.mode = sec.find("mode").value_or("");
      for (const auto& line : sec.lines) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        if (line.compare(0, eq, "category ") == 0 || line.compare(0, eq, "category") == 0) {
          const auto start = line.find_first_not_of(' ', eq + 1);
          c.categories.push_back(start == std::string::npos ? "" : line.substr(start));
        }
      }
    } else {
      throw DataError("model file: unknown column kind '" + kind + "'");
    }
    c.dropped = parse_flag(sec.get("dropped"));
    a.preprocess.columns.push_back(std::move(c));
  }
  a.model = model_from_document(doc);
  if (a.event_names.empty() || a.event_names.size() + 1 != a.model.config().num_states) {
    throw DataError("model file: event list does not match the number of states");
  }
  if (a.preprocess.output_width() != a.model.config().num_features) {
    throw DataError("model file: preprocessing width does not match the model");
  }
  try {
    a.trajectories.validate(a.model.config().num_states);
  } catch (const ContractError& e) {
    throw DataError(std::string("model file: ") + e.what());
  }
  return a;
}

void save_artifact(const std::filesystem::path& path, const Artifact& a) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  artifact_document(a).write(out);
}

Artifact load_artifact(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model file " + path.string());
  return artifact_from_document(TextDocument::read(in));
}

}  // namespace mensa::cli
