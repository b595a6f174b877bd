#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "siri/data.hpp"

namespace siri {

enum class Direction { left, right, up, down };
enum class Side { none, left, right };

const char* direction_word(Direction d);

struct SynthConfig {
  int rows = 4;
  int cols = 8;
  int cell_px = 3;
  int channels = 32;
  int shapes = 4;
  int colors = 4;
  int landmarks = 3;
  int hops = 1;
  // Probability that the anchor has a same-looking twin in the other half.
  double duplicate_prob = 0.5;
  // Probability that a scene without a twin still names the anchor's side.
  double absolute_prob = 0.5;
  // Amplitude of the uniform clutter written to non-landmark channels.
  double noise = 0.05;
  int max_retries = 1000;

  int height() const { return rows * cell_px; }
  int width() const { return cols * cell_px; }
  void validate() const;

  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

struct Cell {
  int row = 0;
  int col = 0;
  bool operator==(const Cell&) const = default;
  auto operator<=>(const Cell&) const = default;
};

struct Landmark {
  Cell cell;
  int shape = 0;
  int color = 0;
};

struct SceneSpec {
  std::vector<Landmark> landmarks;
  int anchor = 0;
  std::optional<int> twin;  // index of the duplicated distractor
  Side side = Side::none;   // absolute phrase naming the anchor's half
  std::vector<Direction> chain;
  Cell target;
};

struct SynthScene {
  SceneSpec spec;
  SdrSample sample;
};

// Deterministic in (seed, config). Throws GenerationError when no valid
// placement is found within config.max_retries attempts.
SynthScene synth_scene(std::uint64_t seed, const SynthConfig& config, const std::string& id);

std::vector<SdrSample> synth_dataset(std::uint64_t seed, int count, const SynthConfig& config,
                                     const std::string& id_prefix);

Pixel cell_center(Cell cell, int cell_px);
Cell pixel_cell(Pixel p, int cell_px);

// Rule-based resolver that reads landmarks back out of the features and
// parses the description template. Returns every cell consistent with the
// text; a solvable scene yields exactly one.
std::vector<Cell> oracle_resolve(const SdrSample& sample, const SynthConfig& config);

// Removes the absolute side phrase ("on your left"/"on your right").
std::string strip_side_phrase(const std::string& text);

}  // namespace siri
