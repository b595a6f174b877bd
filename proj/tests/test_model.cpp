#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "siri/training.hpp"

using namespace siri;
using siri::test::tiny_model;
using siri::test::tiny_model_config;
using siri::test::tiny_sample;

namespace {

template <typename T>
FeatureMap<T> random_map(Rng& rng, int c, int h, int w) {
  FeatureMap<T> m(c, h, w);
  for (Eigen::Index i = 0; i < m.values.size(); ++i) m.values.data()[i] = static_cast<T>(rng.uniform(-1.0, 1.0));
  return m;
}

double elu(double v) { return v > 0 ? v : std::expm1(v); }

GateVector gates(std::initializer_list<int> bits) { return {std::vector<std::uint8_t>(bits.begin(), bits.end())}; }

}  // namespace

TEST_CASE("coordinate maps on a 2x3 grid") {
  const auto m = coordinate_maps<double>(2, 3);
  for (int i = 0; i < 2; ++i) {
    CHECK(m.at(0, i, 0) == 0.0);
    CHECK(m.at(0, i, 1) == 0.5);
    CHECK(m.at(0, i, 2) == 1.0);
  }
  for (int j = 0; j < 3; ++j) {
    CHECK(m.at(1, 0, j) == 1.0);
    CHECK(m.at(1, 1, j) == 0.0);
  }
}

TEST_CASE("coordinate maps put the agent at bottom center and stay in [0,1]") {
  const auto m = coordinate_maps<double>(5, 7);
  CHECK(m.at(0, 4, 3) == 0.5);
  CHECK(m.at(1, 4, 3) == 0.0);
  for (int h = 2; h < 9; ++h)
    for (int w = 2; w < 9; ++w)
      for (auto mode : {CoordMode::signed_offset, CoordMode::absolute_offset}) {
        const auto c = coordinate_maps<double>(h, w, mode);
        CHECK(c.values.minCoeff() >= 0.0);
        CHECK(c.values.maxCoeff() <= 1.0);
      }
  const auto a = coordinate_maps<double>(3, 5, CoordMode::absolute_offset);
  CHECK(a.at(0, 0, 0) == 1.0);
  CHECK(a.at(0, 0, 2) == 0.0);
  CHECK(a.at(0, 0, 4) == 1.0);
  CHECK_THROWS_AS(coordinate_maps<double>(1, 4), ShapeError);
}

TEST_CASE("parameter count of a single 5x5 conv") {
  ParamStore<double> store;
  CHECK(parameter_count(store) == 0);
  Conv2d<double>::create(store, "c", 2, 2, 5);
  CHECK(parameter_count(store) == 102);
}

TEST_CASE("parameter count matches the checkpoint tensors") {
  auto model = tiny_model();
  const auto ckpt = make_checkpoint(model, 0);
  long long n = 0;
  for (const auto& t : ckpt.tensors) n += static_cast<long long>(t.values.size());
  CHECK(model.parameter_count() == n);
}

TEST_CASE("distill skip identity with closed gates") {
  auto model = tiny_model();
  Rng rng(11);
  const auto k = model.lexicon().k();
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = random_map<float>(rng, 4, 1 + trial % 5, 1 + trial % 7);
    GateVector g{std::vector<std::uint8_t>(static_cast<std::size_t>(k), 0)};
    const auto y = model.distill(x, g);
    CHECK(y.values == x.values);
  }
}

TEST_CASE("distill with one open gate and zero weights is the identity") {
  auto model = tiny_model();
  const auto phrase = model.lexicon().selected().front();
  std::string prefix = "distill." + phrase;
  std::replace(prefix.begin(), prefix.end(), ' ', '_');
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    if (model.params()[i].name.rfind(prefix + ".", 0) == 0) model.params()[i].value.setZero();
  }
  Rng rng(5);
  const auto x = random_map<float>(rng, 4, 6, 8);
  GateVector g{std::vector<std::uint8_t>(static_cast<std::size_t>(model.lexicon().k()), 0)};
  g.bits[0] = 1;
  CHECK(model.distill(x, g).values == x.values);
}

TEST_CASE("two open gates on a 1x1 grid average their center taps") {
  ParamStore<double> store;
  auto d = DistillBranches<double>::create(store, {"left", "right", "above"}, 1, DistillReduce::average);
  store.initialize(1);
  // Zero every tap except the 5x5 center, then set weights and biases by hand.
  for (std::size_t i = 0; i < store.size(); ++i) store[i].value.setZero();
  store[d.convs[0].weight].value[12] = 2.0;
  store[d.convs[0].bias].value[0] = 0.5;
  store[d.convs[1].weight].value[12] = -3.0;
  store[d.convs[1].bias].value[0] = 0.25;
  store[d.convs[2].weight].value[12] = 100.0;

  FeatureMap<double> x(1, 1, 1);
  x.values(0, 0) = 0.7;
  const auto y = d.forward(store, x, gates({1, 1, 0}), nullptr);
  const double expected = 0.7 + (elu(2.0 * 0.7 + 0.5) + elu(-3.0 * 0.7 + 0.25)) / 2.0;
  CHECK(y.values(0, 0) == doctest::Approx(expected).epsilon(1e-14));

  d.reduce = DistillReduce::sum;
  const auto s = d.forward(store, x, gates({1, 1, 0}), nullptr);
  CHECK(s.values(0, 0) == doctest::Approx(0.7 + elu(1.9) + elu(-1.85)).epsilon(1e-14));
}

TEST_CASE("GloRe with zero state weights is the identity") {
  ParamStore<double> store;
  auto g = GloreUnit<double>::create(store, "glore0", 3, 2);
  store.initialize(3);
  store[g.state_weight].value.setZero();
  Rng rng(2);
  const auto x = random_map<double>(rng, 3, 4, 5);
  const auto y = g.forward(store, x, nullptr);
  CHECK(y.values == x.values);
  CHECK(y.channels == 3);
  CHECK(y.height == 4);
  CHECK(y.width == 5);
}

TEST_CASE("GloRe with one node on a 2x2 grid matches a hand computation") {
  ParamStore<double> store;
  auto g = GloreUnit<double>::create(store, "glore0", 2, 1);
  store[g.proj_weight].value << 1.0, -0.5;
  store[g.proj_bias].value << 0.25;
  store[g.adjacency].value << 0.5;
  store[g.state_weight].value << 0.3, -0.2, 0.1, 0.4;
  store[g.state_bias].value << 0.05, -0.1;

  FeatureMap<double> x(2, 2, 2);
  const double c0[4] = {1.0, 2.0, -1.0, 0.5};
  const double c1[4] = {0.0, 1.0, 3.0, -2.0};
  for (int p = 0; p < 4; ++p) {
    x.values(0, p) = c0[p];
    x.values(1, p) = c1[p];
  }
  // Soft assignment of each pixel to the single node.
  double b[4];
  for (int p = 0; p < 4; ++p) b[p] = 1.0 * c0[p] - 0.5 * c1[p] + 0.25;
  // Node feature: assignment-weighted mean of the pixel features.
  double v0 = 0, v1 = 0;
  for (int p = 0; p < 4; ++p) {
    v0 += b[p] * c0[p] / 4.0;
    v1 += b[p] * c1[p] / 4.0;
  }
  // Graph convolution over the one-node graph: V + A V, then W and ELU.
  const double m0 = 1.5 * v0, m1 = 1.5 * v1;
  const double s0 = elu(0.3 * m0 - 0.2 * m1 + 0.05);
  const double s1 = elu(0.1 * m0 + 0.4 * m1 - 0.1);
  const auto y = g.forward(store, x, nullptr);
  for (int p = 0; p < 4; ++p) {
    CHECK(y.values(0, p) == doctest::Approx(c0[p] + s0 * b[p]).epsilon(1e-13));
    CHECK(y.values(1, p) == doctest::Approx(c1[p] + s1 * b[p]).epsilon(1e-13));
  }
}

TEST_CASE("blocks preserve spatial dims") {
  Rng rng(9);
  auto cfg = tiny_model_config();
  for (int trial = 0; trial < 10; ++trial) {
    const int h = 2 + static_cast<int>(rng.uniform_int(0, 9));
    const int w = 2 + static_cast<int>(rng.uniform_int(0, 9));
    auto model = tiny_model(cfg, static_cast<std::uint64_t>(trial));
    const auto x = random_map<float>(rng, 4, h, w);
    const auto g = model.glore_block(0, x);
    CHECK((g.height == h && g.width == w && g.channels == 4));
    GateVector gv{std::vector<std::uint8_t>(static_cast<std::size_t>(model.lexicon().k()), 1)};
    const auto d = model.distill(g, gv);
    CHECK((d.height == h && d.width == w));
    const auto lang = model.project_language(model.encode_language({2, 3}));
    const auto fused = model.fuse(coordinate_maps<float>(h, w), model.lang_map(lang.lang, h, w), d);
    CHECK((fused.height == h && fused.width == w && fused.channels == cfg.hidden_channels));
  }
}

TEST_CASE("fuse rejects mismatched spatial dims and is the identity without coords") {
  auto model = tiny_model();
  Rng rng(1);
  const auto x = random_map<float>(rng, 4, 6, 8);
  const auto lang = model.project_language(model.encode_language({2}));
  CHECK_THROWS_AS(model.fuse(coordinate_maps<float>(5, 8), model.lang_map(lang.lang, 6, 8), x), ShapeError);

  auto cfg = tiny_model_config();
  cfg.use_coord_embedding = false;
  auto plain = tiny_model(cfg);
  CHECK(plain.fuse({}, {}, x).values == x.values);
}

TEST_CASE("fuse with zero weights yields the bias") {
  auto model = tiny_model();
  const auto idx = *model.params().find("fusion.weight");
  const auto bias = *model.params().find("fusion.bias");
  model.params()[idx].value.setZero();
  model.params()[bias].value << 1, 2, 3, 4;
  Rng rng(1);
  const auto x = random_map<float>(rng, 4, 6, 8);
  const auto lang = model.project_language(model.encode_language({2}));
  const auto y = model.fuse(coordinate_maps<float>(6, 8), model.lang_map(lang.lang, 6, 8), x);
  for (int c = 0; c < 4; ++c) CHECK((y.values.row(c).array() == static_cast<float>(c + 1)).all());
}

TEST_CASE("language encoder") {
  auto model = tiny_model<double>();
  SUBCASE("single token equals its concatenated hidden state") {
    BiLstmTrace<double> tr;
    const auto v = model.encode_language({3}, &tr);
    REQUIRE(v.size() == 4);
    CHECK(v.head(2) == tr.forward.hidden[0]);
    CHECK(v.tail(2) == tr.backward.hidden[0]);
  }
  SUBCASE("direction matters") {
    const auto a = model.encode_language({2, 5});
    const auto b = model.encode_language({5, 2});
    CHECK(a.size() == b.size());  // not required to be equal
  }
  SUBCASE("empty or out-of-range input is rejected") {
    CHECK_THROWS_AS(model.encode_language({}), InputError);
    CHECK_THROWS_AS(model.encode_language({model.config().vocab_size}), InputError);
  }
}

TEST_CASE("language vector is reproducible against the stored golden file") {
  auto model = tiny_model<double>(tiny_model_config(), 42);
  const auto v = model.encode_language({2, 3, 4, 5, 6});
  const auto path = std::filesystem::path(SIRI_TEST_DATA_DIR) / "golden_language.txt";
  std::ifstream in(path);
  REQUIRE_MESSAGE(in.good(), "missing golden file " << path);
  std::vector<double> golden;
  std::string tok;
  while (in >> tok) golden.push_back(std::strtod(tok.c_str(), nullptr));
  REQUIRE(golden.size() == static_cast<std::size_t>(v.size()));
  // Written with 17 significant digits; -march=native may move the last bits.
  for (Eigen::Index i = 0; i < v.size(); ++i) CHECK(std::abs(v[i] - golden[static_cast<std::size_t>(i)]) <= 1e-12);
}

TEST_CASE("language projection") {
  auto cfg = tiny_model_config();
  cfg.lingunet_depth = 2;
  auto model = tiny_model<double>(cfg);
  Vector<double> zero = Vector<double>::Zero(cfg.lang_dim);
  const auto z = model.project_language(zero);
  REQUIRE(z.filters.size() == 2);
  for (const auto& f : z.filters) {
    CHECK(f.size() == cfg.hidden_channels * cfg.hidden_channels);
    CHECK(f.isZero(0.0));
  }
  CHECK(z.lang.isZero(0.0));

  Rng rng(4);
  Vector<double> l(cfg.lang_dim);
  for (auto& v : l) v = rng.uniform(-1, 1);
  const auto a = model.project_language(l);
  const auto b = model.project_language(2.0 * l);
  for (std::size_t i = 0; i < a.filters.size(); ++i) CHECK(b.filters[i].isApprox(2.0 * a.filters[i], 1e-12));
  CHECK(b.lang.isApprox(2.0 * a.lang, 1e-12));
}

TEST_CASE("forward is a distribution for random weights and inputs") {
  for (auto head : {HeadKind::lingunet, HeadKind::conv}) {
    auto cfg = tiny_model_config();
    cfg.head = head;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto model = tiny_model(cfg, seed);
      const auto m = model.predict(tiny_sample(seed));
      CHECK(m.sum() == doctest::Approx(1.0).epsilon(1e-5));
      CHECK(*std::min_element(m.values.begin(), m.values.end()) >= 0.0);
    }
  }
}

TEST_CASE("degenerate head weights give a uniform heatmap") {
  auto model = tiny_model();
  model.params()[*model.params().find("head.logits.weight")].value.setZero();
  const auto m = model.predict(tiny_sample());
  for (double v : m.values) CHECK(v == doctest::Approx(1.0 / 48.0).epsilon(1e-6));
}

TEST_CASE("ablation toggles pick the pipeline stages") {
  const auto sample = tiny_sample();
  auto cfg = tiny_model_config();
  cfg.use_correlation = cfg.use_distillation = cfg.use_coord_embedding = false;
  auto baseline = tiny_model(cfg);
  CHECK_FALSE(baseline.params().find("glore0.proj.weight"));
  CHECK_FALSE(baseline.params().find("fusion.weight"));
  const auto tr = baseline.forward(baseline.prepare(sample));
  CHECK(tr.glore.empty());
  CHECK(tr.fused.values == tr.input.values);

  auto full = tiny_model();
  CHECK(full.params().find("glore0.proj.weight"));
  CHECK(full.params().find("fusion.weight"));
  const auto ft = full.forward(full.prepare(sample));
  CHECK(ft.glore.size() == 1);
  CHECK(ft.fused.channels == tiny_model_config().hidden_channels);
}

TEST_CASE("permuting branch order together with the gates leaves the output unchanged") {
  // Equal frequencies, so the selected order follows the base order.
  const std::vector<std::string> corpus = {"go left then right then above", "go below on your left"};
  std::vector<std::string> base = {"left", "right", "above", "below", "your left"};
  std::vector<std::string> reversed(base.rbegin(), base.rend());
  auto cfg = tiny_model_config();
  cfg.branches = 5;
  cfg.seed = 12;
  auto vocab = Vocabulary::build(corpus);
  SiriModel<double> a(cfg, OrientationLexicon::build(corpus, base, 5), vocab);
  SiriModel<double> b(cfg, OrientationLexicon::build(corpus, reversed, 5), vocab);
  REQUIRE(a.lexicon().selected() != b.lexicon().selected());

  auto s = tiny_sample();
  s.text = "go left then right on your left";
  const auto pa = a.predict(s);
  const auto pb = b.predict(s);
  CHECK(pa.values == pb.values);
}

TEST_CASE("forward is deterministic for a fixed seed") {
  const auto s = tiny_sample();
  const auto a = tiny_model(tiny_model_config(), 5).predict(s);
  const auto b = tiny_model(tiny_model_config(), 5).predict(s);
  CHECK(a.values == b.values);
}

TEST_CASE("LingUnet and conv heads have comparable size at the default config") {
  ModelConfig cfg;
  const std::vector<std::string> corpus = {"start at the red box on your left and go right", "the blue pole"};
  cfg.vocab_size = 0;
  SiriModel<float> lingunet(cfg, OrientationLexicon::build(corpus, default_orientation_phrases(), cfg.branches),
                            Vocabulary::build(corpus));
  cfg.head = HeadKind::conv;
  SiriModel<float> conv(cfg, OrientationLexicon::build(corpus, default_orientation_phrases(), cfg.branches),
                        Vocabulary::build(corpus));
  const double a = static_cast<double>(lingunet.parameter_count());
  const double b = static_cast<double>(conv.parameter_count());
  CHECK(std::abs(a - b) / a <= 0.10);
}

TEST_CASE("forward keeps the 100x464 resolution") {
  ModelConfig cfg;
  const std::vector<std::string> corpus = {"turn left at the light", "the bike on your right"};
  SiriModel<float> model(cfg, OrientationLexicon::build(corpus, default_orientation_phrases(), cfg.branches),
                         Vocabulary::build(corpus));
  SdrSample s{"big", "the bike on your right", FeatureGrid(32, 100, 464), {10, 10}};
  Rng rng(1);
  for (auto& v : s.features.values) v = static_cast<float>(rng.uniform(0.0, 1.0));
  const auto m = model.predict(s);
  CHECK(m.height == 100);
  CHECK(m.width == 464);
  CHECK(m.sum() == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("input validation") {
  auto model = tiny_model();
  auto s = tiny_sample();
  s.features = FeatureGrid(3, 6, 8);
  CHECK_THROWS_AS(model.predict(s), ShapeError);

  auto cfg = tiny_model_config();
  cfg.lang_dim = 5;
  CHECK_THROWS_AS(tiny_model(cfg), ConfigError);
  cfg = tiny_model_config();
  cfg.branches = 3;
  auto lexicon = OrientationLexicon::build(siri::test::tiny_corpus(), default_orientation_phrases(), 4);
  CHECK_THROWS_AS(SiriModel<float>(cfg, lexicon, Vocabulary::build(siri::test::tiny_corpus())), ConfigError);
}

TEST_CASE("model config json round trip") {
  auto cfg = tiny_model_config();
  cfg.head = HeadKind::conv;
  cfg.distill_reduce = DistillReduce::sum;
  cfg.coord_mode = CoordMode::absolute_offset;
  cfg.use_correlation = false;
  const auto back = ModelConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());
  CHECK_THROWS_AS(ModelConfig::from_json({{"head", "transformer"}}), ConfigError);
}
