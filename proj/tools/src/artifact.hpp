#pragma once

// A trained model plus everything needed to apply it to raw CSV data.

#include <filesystem>
#include <string>
#include <vector>

#include "mensa/dataset.hpp"
#include "mensa/model.hpp"
#include "mensa/training.hpp"

namespace mensa::cli {

struct Artifact {
  train::Mode mode = train::Mode::Multi;
  std::vector<std::string> event_names;
  double max_time = 1.0;  // largest observed time in the training split
  std::vector<std::string> training_files;
  train::TrajectorySet trajectories;
  data::PreprocessState preprocess;
  MensaModel model{MensaConfig{}};
};

TextDocument artifact_document(const Artifact& a);
Artifact artifact_from_document(const TextDocument& doc);
void save_artifact(const std::filesystem::path& path, const Artifact& a);
Artifact load_artifact(const std::filesystem::path& path);

}  // namespace mensa::cli
