#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "siri/model.hpp"
#include "siri/synth.hpp"
#include "siri/training.hpp"

namespace siri {

// Everything a command needs, resolved from an optional JSON file and then
// command-line overrides. Written verbatim as run_config.json next to the
// command's outputs.
//
// File schema (all keys optional):
//   {"seed": 0, "data": "DIR", "out": "DIR",
//    "splits": {"train": "train", "val": "val", "test": "test"},
//    "orientation_phrases": [...],
//    "model": {...ModelConfig...}, "train": {...TrainConfig...},
//    "synth": {...SynthConfig...}}
struct RunConfig {
  std::uint64_t seed = 0;
  std::string data;
  std::string out;
  std::string train_split = "train";
  std::string val_split = "val";
  std::string test_split = "test";
  std::vector<std::string> orientation_phrases = default_orientation_phrases();
  ModelConfig model;
  TrainConfig train;
  SynthConfig synth;

  // Keys given in the file or on the command line, so dataset-card defaults
  // (radius scale) only fill in what the user left unset.
  bool radius_scale_set = false;

  // Throws ConfigError naming the offending field.
  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

RunConfig load_run_config(const std::filesystem::path& path);
void write_run_config(const std::filesystem::path& path, const RunConfig& config);

}  // namespace siri
