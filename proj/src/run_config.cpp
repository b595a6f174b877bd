#include "siri/run_config.hpp"

#include <fstream>

namespace siri {

namespace {

void reject_unknown(const nlohmann::json& j, const nlohmann::json& known, const std::string& section) {
  if (!j.is_object()) throw ConfigError(section + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config field " + section + "." + key);
  }
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
  synth.validate();
  if (orientation_phrases.empty()) throw ConfigError("orientation_phrases must not be empty");
  if (model.branches > static_cast<int>(orientation_phrases.size())) {
    throw ConfigError("model.branches exceeds the number of orientation_phrases");
  }
}

nlohmann::json RunConfig::to_json() const {
  return {{"seed", seed},
          {"data", data},
          {"out", out},
          {"splits", {{"train", train_split}, {"val", val_split}, {"test", test_split}}},
          {"orientation_phrases", orientation_phrases},
          {"model", model.to_json()},
          {"train", train.to_json()},
          {"synth", synth.to_json()}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  const RunConfig defaults;
  const auto known = defaults.to_json();
  reject_unknown(j, known, "config");
  RunConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.data = j.value("data", c.data);
    c.out = j.value("out", c.out);
    if (j.contains("splits")) {
      const auto& s = j.at("splits");
      reject_unknown(s, known.at("splits"), "splits");
      c.train_split = s.value("train", c.train_split);
      c.val_split = s.value("val", c.val_split);
      c.test_split = s.value("test", c.test_split);
    }
    if (j.contains("orientation_phrases")) {
      c.orientation_phrases = j.at("orientation_phrases").get<std::vector<std::string>>();
    }
    if (j.contains("model")) {
      reject_unknown(j.at("model"), known.at("model"), "model");
      c.model = ModelConfig::from_json(j.at("model"));
    }
    if (j.contains("train")) {
      reject_unknown(j.at("train"), known.at("train"), "train");
      c.train = TrainConfig::from_json(j.at("train"));
      c.radius_scale_set = j.at("train").contains("radius_scale");
    }
    if (j.contains("synth")) {
      reject_unknown(j.at("synth"), known.at("synth"), "synth");
      c.synth = SynthConfig::from_json(j.at("synth"));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return RunConfig::from_json(j);
}

void write_run_config(const std::filesystem::path& path, const RunConfig& config) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << config.to_json().dump(2) << '\n';
}

}  // namespace siri
