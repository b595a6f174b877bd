#include "siri/synth.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "siri/lexicon.hpp"
#include "siri/random.hpp"

namespace siri {

namespace {

const std::vector<std::string> kShapes = {"box", "pole", "tree", "sign", "car", "door", "lamp", "bench"};
const std::vector<std::string> kColors = {"red",   "blue",  "green",  "yellow",
                                          "white", "black", "orange", "purple"};

Cell step(Cell c, Direction d) {
  switch (d) {
    case Direction::left: return {c.row, c.col - 1};
    case Direction::right: return {c.row, c.col + 1};
    case Direction::up: return {c.row - 1, c.col};
    case Direction::down: return {c.row + 1, c.col};
  }
  return c;
}

bool opposite(Direction a, Direction b) {
  auto pair = [&](Direction x, Direction y) { return (a == x && b == y) || (a == y && b == x); };
  return pair(Direction::left, Direction::right) || pair(Direction::up, Direction::down);
}

bool inside(Cell c, const SynthConfig& cfg) {
  return c.row >= 0 && c.row < cfg.rows && c.col >= 0 && c.col < cfg.cols;
}

bool left_half(Cell c, const SynthConfig& cfg) {
  return target_in_left_half(cell_center(c, cfg.cell_px).x, cfg.width());
}

std::string describe(const SceneSpec& spec) {
  const auto& a = spec.landmarks[static_cast<std::size_t>(spec.anchor)];
  std::string anchor = "the " + kColors[a.color] + " " + kShapes[a.shape];
  if (spec.side == Side::left) anchor += " on your left";
  if (spec.side == Side::right) anchor += " on your right";
  if (spec.chain.empty()) return "the target is " + anchor;
  std::string text = "start at " + anchor + " and go ";
  for (std::size_t i = 0; i < spec.chain.size(); ++i) {
    if (i > 0) text += " then ";
    text += direction_word(spec.chain[i]);
  }
  return text;
}

}  // namespace

const char* direction_word(Direction d) {
  switch (d) {
    case Direction::left: return "left";
    case Direction::right: return "right";
    case Direction::up: return "above";
    case Direction::down: return "below";
  }
  return "";
}

void SynthConfig::validate() const {
  if (rows < 1 || cols < 2 || cell_px < 1) throw ConfigError("synth: bad grid dims");
  if (height() < 2 || width() < 2) throw ConfigError("synth: feature grid smaller than 2x2");
  if (shapes < 1 || shapes > static_cast<int>(kShapes.size())) throw ConfigError("synth: bad shape count");
  if (colors < 1 || colors > static_cast<int>(kColors.size())) throw ConfigError("synth: bad color count");
  if (channels < shapes + colors) throw ConfigError("synth: channels must cover shape and color one-hots");
  if (landmarks < 1) throw ConfigError("synth: need at least one landmark");
  if (landmarks > shapes * colors) throw ConfigError("synth: more landmarks than distinct appearances");
  if (landmarks + 1 > rows * cols) throw ConfigError("synth: grid too small for the landmarks");
  if (hops < 0) throw ConfigError("synth: hops must be non-negative");
  if (duplicate_prob < 0 || duplicate_prob > 1 || absolute_prob < 0 || absolute_prob > 1) {
    throw ConfigError("synth: probabilities must lie in [0,1]");
  }
  if (noise < 0 || noise >= 0.5) throw ConfigError("synth: noise must lie in [0,0.5)");
  if (max_retries < 1) throw ConfigError("synth: max_retries must be positive");
}

nlohmann::json SynthConfig::to_json() const {
  return {{"rows", rows},         {"cols", cols},
          {"cell_px", cell_px},   {"channels", channels},
          {"shapes", shapes},     {"colors", colors},
          {"landmarks", landmarks}, {"hops", hops},
          {"duplicate_prob", duplicate_prob}, {"absolute_prob", absolute_prob},
          {"noise", noise},       {"max_retries", max_retries}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  SynthConfig c;
  try {
    c.rows = j.value("rows", c.rows);
    c.cols = j.value("cols", c.cols);
    c.cell_px = j.value("cell_px", c.cell_px);
    c.channels = j.value("channels", c.channels);
    c.shapes = j.value("shapes", c.shapes);
    c.colors = j.value("colors", c.colors);
    c.landmarks = j.value("landmarks", c.landmarks);
    c.hops = j.value("hops", c.hops);
    c.duplicate_prob = j.value("duplicate_prob", c.duplicate_prob);
    c.absolute_prob = j.value("absolute_prob", c.absolute_prob);
    c.noise = j.value("noise", c.noise);
    c.max_retries = j.value("max_retries", c.max_retries);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth config: ") + e.what());
  }
  c.validate();
  return c;
}

Pixel cell_center(Cell cell, int cell_px) {
  return {cell.col * cell_px + cell_px / 2, cell.row * cell_px + cell_px / 2};
}

Cell pixel_cell(Pixel p, int cell_px) { return {p.y / cell_px, p.x / cell_px}; }

SynthScene synth_scene(std::uint64_t seed, const SynthConfig& cfg, const std::string& id) {
  cfg.validate();
  Rng rng(seed);

  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    SceneSpec spec;
    std::set<Cell> used;
    auto random_cell = [&] { return Cell{rng.uniform_int(0, cfg.rows - 1), rng.uniform_int(0, cfg.cols - 1)}; };

    Landmark anchor{random_cell(), rng.uniform_int(0, cfg.shapes - 1), rng.uniform_int(0, cfg.colors - 1)};
    const bool anchor_left = left_half(anchor.cell, cfg);

    Cell target = anchor.cell;
    bool ok = true;
    for (int h = 0; h < cfg.hops; ++h) {
      Direction d = static_cast<Direction>(rng.uniform_int(0, 3));
      if (!spec.chain.empty() && opposite(spec.chain.back(), d)) d = spec.chain.back();
      spec.chain.push_back(d);
      target = step(target, d);
      if (!inside(target, cfg)) ok = false;
    }
    if (!ok || left_half(target, cfg) != anchor_left) continue;
    spec.target = target;
    spec.landmarks.push_back(anchor);
    used.insert(anchor.cell);

    if (rng.bernoulli(cfg.duplicate_prob)) {
      Cell twin_cell{};
      bool placed = false;
      for (int t = 0; t < 64 && !placed; ++t) {
        twin_cell = random_cell();
        placed = left_half(twin_cell, cfg) != anchor_left && !used.count(twin_cell);
      }
      if (!placed) continue;
      spec.twin = static_cast<int>(spec.landmarks.size());
      spec.landmarks.push_back({twin_cell, anchor.shape, anchor.color});
      used.insert(twin_cell);
    }

    std::set<std::pair<int, int>> looks = {{anchor.shape, anchor.color}};
    for (int i = 1; i < cfg.landmarks && ok; ++i) {
      bool placed = false;
      for (int t = 0; t < 256 && !placed; ++t) {
        Landmark lm{random_cell(), rng.uniform_int(0, cfg.shapes - 1), rng.uniform_int(0, cfg.colors - 1)};
        if (used.count(lm.cell) || looks.count({lm.shape, lm.color})) continue;
        used.insert(lm.cell);
        looks.insert({lm.shape, lm.color});
        spec.landmarks.push_back(lm);
        placed = true;
      }
      ok = placed;
    }
    if (!ok) continue;

    if (spec.twin || rng.bernoulli(cfg.absolute_prob)) {
      spec.side = anchor_left ? Side::left : Side::right;
    }

    SdrSample sample;
    sample.id = id;
    sample.text = describe(spec);
    sample.target = cell_center(spec.target, cfg.cell_px);
    sample.features = FeatureGrid(cfg.channels, cfg.height(), cfg.width());
    auto& f = sample.features;
    const int first_noise = cfg.shapes + cfg.colors;
    for (int c = first_noise; c < cfg.channels; ++c) {
      for (int y = 0; y < f.height; ++y) {
        for (int x = 0; x < f.width; ++x) f.at(c, y, x) = static_cast<float>(rng.uniform(0.0, cfg.noise));
      }
    }
    for (const auto& lm : spec.landmarks) {
      for (int dy = 0; dy < cfg.cell_px; ++dy) {
        for (int dx = 0; dx < cfg.cell_px; ++dx) {
          const int y = lm.cell.row * cfg.cell_px + dy, x = lm.cell.col * cfg.cell_px + dx;
          f.at(lm.shape, y, x) = 1.0f;
          f.at(cfg.shapes + lm.color, y, x) = 1.0f;
        }
      }
    }
    return {std::move(spec), std::move(sample)};
  }
  throw GenerationError("synth: no valid scene after " + std::to_string(cfg.max_retries) + " attempts");
}

std::vector<SdrSample> synth_dataset(std::uint64_t seed, int count, const SynthConfig& config,
                                     const std::string& id_prefix) {
  std::vector<SdrSample> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "%05d", i);
    const auto scene_seed = hash_name(seed, "scene/" + std::to_string(i));
    out.push_back(synth_scene(scene_seed, config, id_prefix + id).sample);
  }
  return out;
}

std::vector<Cell> oracle_resolve(const SdrSample& sample, const SynthConfig& cfg) {
  const auto tokens = tokenize(sample.text);
  const auto find_index = [](const std::vector<std::string>& names, const std::string& t, int limit) {
    for (int i = 0; i < limit; ++i) {
      if (names[static_cast<std::size_t>(i)] == t) return i;
    }
    return -1;
  };

  int shape = -1, color = -1;
  Side side = Side::none;
  std::vector<Direction> chain;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const int c = find_index(kColors, tokens[i], cfg.colors);
    if (c >= 0 && color < 0 && i + 1 < tokens.size()) {
      const int s = find_index(kShapes, tokens[i + 1], cfg.shapes);
      if (s >= 0) {
        color = c;
        shape = s;
      }
    }
    if (tokens[i] == "your" && i + 1 < tokens.size()) {
      if (tokens[i + 1] == "left") side = Side::left;
      if (tokens[i + 1] == "right") side = Side::right;
    }
    if (tokens[i] == "go") {
      for (std::size_t j = i + 1; j < tokens.size(); ++j) {
        const auto& t = tokens[j];
        if (t == "then") continue;
        if (t == "left") chain.push_back(Direction::left);
        else if (t == "right") chain.push_back(Direction::right);
        else if (t == "above") chain.push_back(Direction::up);
        else if (t == "below") chain.push_back(Direction::down);
        else break;
      }
    }
  }
  if (shape < 0) return {};

  const auto& f = sample.features;
  std::set<Cell> result;
  for (int r = 0; r < cfg.rows; ++r) {
    for (int c = 0; c < cfg.cols; ++c) {
      const Cell cell{r, c};
      const Pixel p = cell_center(cell, cfg.cell_px);
      if (p.y >= f.height || p.x >= f.width) continue;
      if (f.at(shape, p.y, p.x) < 0.5f || f.at(cfg.shapes + color, p.y, p.x) < 0.5f) continue;
      const bool is_left = target_in_left_half(p.x, f.width);
      if (side == Side::left && !is_left) continue;
      if (side == Side::right && is_left) continue;
      Cell t = cell;
      for (auto d : chain) t = step(t, d);
      if (inside(t, cfg)) result.insert(t);
    }
  }
  return {result.begin(), result.end()};
}

std::string strip_side_phrase(const std::string& text) {
  std::string out = text;
  for (const std::string phrase : {" on your left", " on your right"}) {
    for (auto pos = out.find(phrase); pos != std::string::npos; pos = out.find(phrase)) {
      out.erase(pos, phrase.size());
    }
  }
  return out;
}

}  // namespace siri
