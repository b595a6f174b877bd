#pragma once

#include <string>
#include <vector>

#include "siri/model.hpp"
#include "siri/synth.hpp"

namespace siri::test {

// 3×4 cells of 2 px: a 4×6×8 feature grid.
inline SynthConfig tiny_synth() {
  SynthConfig c;
  c.rows = 3;
  c.cols = 4;
  c.cell_px = 2;
  c.channels = 4;
  c.shapes = 2;
  c.colors = 2;
  c.landmarks = 2;
  c.hops = 1;
  return c;
}

inline ModelConfig tiny_model_config() {
  ModelConfig m;
  m.in_channels = 4;
  m.hidden_channels = 4;
  m.lang_channels = 2;
  m.lang_dim = 4;
  m.token_dim = 3;
  m.branches = 4;
  m.glore_nodes = 2;
  m.glore_stacks = 1;
  m.lingunet_depth = 1;
  return m;
}

inline const std::vector<std::string>& tiny_corpus() {
  static const std::vector<std::string> corpus = {
      "start at the red box on your left and go right",
      "start at the blue pole and go left",
      "the target is the red pole on your right",
      "start at the blue box on your right and go above",
      "start at the red box and go below",
  };
  return corpus;
}

template <typename T = float>
SiriModel<T> tiny_model(ModelConfig config = tiny_model_config(), std::uint64_t seed = 7) {
  config.seed = seed;
  auto lexicon = OrientationLexicon::build(tiny_corpus(), default_orientation_phrases(), config.branches);
  auto vocab = Vocabulary::build(tiny_corpus());
  SiriModel<T> model(config, std::move(lexicon), std::move(vocab));
  model.params().initialize(seed);
  return model;
}

inline SdrSample tiny_sample(std::uint64_t seed = 3, const std::string& text = tiny_corpus()[0]) {
  auto s = synth_scene(seed, tiny_synth(), "tiny").sample;
  Rng rng(seed);
  for (auto& v : s.features.values) v += static_cast<float>(rng.uniform(-0.5, 0.5));
  s.text = text;
  return s;
}

}  // namespace siri::test
