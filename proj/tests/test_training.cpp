#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "helpers.hpp"
#include "siri/training.hpp"

using namespace siri;
using siri::test::tiny_model;
using siri::test::tiny_model_config;
using siri::test::tiny_sample;
using siri::test::tiny_synth;

namespace {

Heatmap random_distribution(Rng& rng, int h, int w) {
  Heatmap m{h, w, std::vector<double>(static_cast<std::size_t>(h) * w)};
  double total = 0;
  for (auto& v : m.values) total += (v = rng.uniform(0.01, 1.0));
  for (auto& v : m.values) v /= total;
  return m;
}

std::vector<SdrSample> tiny_train_set(int n, std::uint64_t seed) {
  return synth_dataset(seed, n, tiny_synth(), "t");
}

void check_report(const GradCheckReport& r, double tol) {
  REQUIRE(r.checked > 0);
  for (const auto& [group, err] : r.max_relative_error) {
    INFO("group " << group << " max rel err " << err);
    CHECK(err <= tol);
  }
}


}  // namespace

TEST_CASE("kl_loss worked values") {
  Heatmap uniform{2, 2, {0.25, 0.25, 0.25, 0.25}};
  CHECK(kl_loss(uniform, uniform) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(kl_loss(uniform, uniform) == doctest::Approx(1.3863).epsilon(1e-4));

  Heatmap onehot{1, 2, {1.0, 0.0}};
  Heatmap half{1, 2, {0.5, 0.5}};
  CHECK(kl_loss(half, onehot) == doctest::Approx(0.6931).epsilon(1e-4));

  Heatmap zero{1, 2, {0.0, 1.0}};
  CHECK(kl_loss(zero, onehot) == doctest::Approx(-std::log(1e-12)));
  CHECK_THROWS_AS(kl_loss(uniform, onehot), ShapeError);
}

TEST_CASE("kl_loss matches direct summation on random 3x3 pairs") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = random_distribution(rng, 3, 3);
    const auto m = random_distribution(rng, 3, 3);
    double oracle = 0;
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) oracle += -m.at(y, x) * std::log(p.at(y, x));
    CHECK(std::abs(kl_loss(p, m) - oracle) <= 1e-10);
  }
}

TEST_CASE("kl_loss obeys Gibbs' inequality") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = random_distribution(rng, 4, 5);
    const auto m = random_distribution(rng, 4, 5);
    CHECK(kl_loss(p, m) - entropy(m) >= -1e-9);
    CHECK(std::abs(kl_loss(m, m) - entropy(m)) <= 1e-9);
  }
}

TEST_CASE("model loss agrees with kl_loss on its own prediction") {
  auto model = tiny_model<double>();
  const auto s = tiny_sample();
  const auto target = gaussian_target(s.target, 6, 8, 1.0);
  const double fused = model.loss_and_gradient(model.prepare(s), target, nullptr);
  CHECK(std::abs(fused - kl_loss(model.predict(s), target)) <= 1e-8);
}

TEST_CASE("gradient check on the tiny config") {
  auto cfg = tiny_model_config();
  cfg.glore_nodes = 2;
  cfg.glore_stacks = 1;
  cfg.lingunet_depth = 1;
  const auto sample = tiny_sample(3, "start at the red box on your left and go right");
  auto model = tiny_model<double>(cfg, 21);
  const auto report = grad_check(model, sample, 1e-5);
  for (const char* group : {"language", "projection", "glore", "distill", "fusion", "head"}) {
    INFO(group);
    CHECK(report.max_relative_error.count(group) == 1);
  }
  check_report(report, 1e-4);
}

TEST_CASE("gradient check across heads, depths and toggles") {
  const auto sample = tiny_sample(5, "the target is the red pole on your right");
  SUBCASE("two-level LingUnet, two GloRe stacks") {
    auto cfg = tiny_model_config();
    cfg.lingunet_depth = 2;
    cfg.glore_stacks = 2;
    check_report(grad_check(tiny_model<double>(cfg, 4), sample, 1e-5), 1e-4);
  }
  SUBCASE("conv head") {
    auto cfg = tiny_model_config();
    cfg.head = HeadKind::conv;
    check_report(grad_check(tiny_model<double>(cfg, 4), sample, 1e-5), 1e-4);
  }
  SUBCASE("LingUnet only") {
    auto cfg = tiny_model_config();
    cfg.use_correlation = cfg.use_distillation = cfg.use_coord_embedding = false;
    check_report(grad_check(tiny_model<double>(cfg, 4), sample, 1e-5), 1e-4);
  }
  SUBCASE("summed branches") {
    auto cfg = tiny_model_config();
    cfg.distill_reduce = DistillReduce::sum;
    check_report(grad_check(tiny_model<double>(cfg, 4), sample, 1e-5), 1e-4);
  }
}

TEST_CASE("gradient check is exact for an affine map") {
  ParamStore<double> store;
  auto lin = Linear<double>::create(store, "affine", 3, 2);
  store.initialize(1);
  Vector<double> x(3);
  x << 0.5, -1.0, 2.0;
  Vector<double> c(2);
  c << 1.5, -0.25;
  const auto report = check_gradients(
      store,
      [&](Gradients<double>* g) {
        const auto y = lin.forward(store, x);
        if (g) lin.backward(store, x, c, *g);
        return c.dot(y);
      },
      1e-5);
  CHECK(report.worst < 1e-8);
}

TEST_CASE("closed-gate branches receive exactly zero gradient") {
  auto model = tiny_model<double>();
  const auto sample = tiny_sample(3, "start at the blue pole and go left");
  const auto gates = gates_for(sample.text, model.lexicon());
  Gradients<double> grads(model.params());
  model.loss_and_gradient(model.prepare(sample), gaussian_target(sample.target, 6, 8, 1.0), &grads);
  int closed = 0, open = 0;
  for (std::size_t k = 0; k < gates.size(); ++k) {
    std::string prefix = "distill." + model.lexicon().selected()[k];
    std::replace(prefix.begin(), prefix.end(), ' ', '_');
    for (std::size_t i = 0; i < model.params().size(); ++i) {
      if (model.params()[i].name.rfind(prefix + ".", 0) != 0) continue;
      if (gates.bits[k]) {
        ++open;
        CHECK_FALSE(grads.values[i].isZero(0.0));
      } else {
        ++closed;
        CHECK(grads.values[i].isZero(0.0));
      }
    }
  }
  CHECK(open > 0);
  CHECK(closed > 0);
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  const auto data = tiny_train_set(12, 1);
  auto model = build_model(tiny_model_config(), data);
  TrainConfig tc;
  tc.learning_rate = 0.0;
  tc.max_steps = 7;
  tc.batch_size = 5;
  const auto result = train(model, tc, data, {});
  const auto after = model_from_checkpoint(result.last);
  for (std::size_t i = 0; i < model.params().size(); ++i) CHECK(after.params()[i].value == model.params()[i].value);
  CHECK(result.final_step == 7);
}

TEST_CASE("training loss decreases over the first 50 steps for most seeds") {
  const auto data = tiny_train_set(16, 2);
  int decreasing = 0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    auto cfg = tiny_model_config();
    cfg.seed = seed;
    TrainConfig tc;
    tc.seed = seed;
    tc.max_steps = 50;
    tc.batch_size = 16;
    tc.learning_rate = 1e-3;
    tc.sigma = 1.0;
    const auto result = train(build_model(cfg, data), tc, data, {});
    REQUIRE(result.step_losses.size() == 50);
    bool strictly = true;
    for (std::size_t i = 1; i < result.step_losses.size(); ++i) {
      strictly = strictly && result.step_losses[i] < result.step_losses[i - 1];
    }
    decreasing += strictly;
  }
  CHECK(decreasing >= 3);
}

TEST_CASE("resuming reproduces the uninterrupted run") {
  const auto data = tiny_train_set(14, 3);
  const auto val = tiny_train_set(6, 4);
  auto model = build_model(tiny_model_config(), data);
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.batch_size = 4;
  tc.max_steps = 12;
  tc.eval_interval = 3;
  tc.patience = 0;
  const auto full = train(model, tc, data, val);

  TrainConfig first = tc;
  first.max_steps = 5;
  const auto part = train(model, first, data, val);
  TrainOptions opts;
  opts.resume = &part.last;
  const auto rest = train(model, tc, data, val, opts);

  std::vector<double> joined = part.step_losses;
  joined.insert(joined.end(), rest.step_losses.begin(), rest.step_losses.end());
  CHECK(joined == full.step_losses);
  REQUIRE(full.last.tensors.size() == rest.last.tensors.size());
  for (std::size_t i = 0; i < full.last.tensors.size(); ++i) CHECK(full.last.tensors[i] == rest.last.tensors[i]);
  for (std::size_t i = 0; i < full.best.tensors.size(); ++i) CHECK(full.best.tensors[i] == rest.best.tensors[i]);
}

TEST_CASE("training writes metrics and checkpoints") {
  const auto dir = std::filesystem::temp_directory_path() / "siri_train_outputs";
  std::filesystem::remove_all(dir);
  const auto data = tiny_train_set(8, 5);
  TrainConfig tc;
  tc.max_steps = 6;
  tc.eval_interval = 2;
  tc.batch_size = 3;
  TrainOptions opts;
  opts.out_dir = dir;
  const auto result = train(build_model(tiny_model_config(), data), tc, data, data, opts);
  CHECK(result.log.size() == 3);
  CHECK(std::filesystem::exists(dir / "best.ckpt"));
  CHECK(std::filesystem::exists(dir / "last.ckpt"));
  std::ifstream in(dir / "metrics.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"step", "loss", "a40", "a80", "a120", "dist"}) CHECK(j.contains(key));
    CHECK(j.at("a40").get<double>() <= j.at("a80").get<double>());
    CHECK(j.at("a80").get<double>() <= j.at("a120").get<double>());
    ++lines;
  }
  CHECK(lines == 3);
  std::filesystem::remove_all(dir);
}

TEST_CASE("early stopping after the patience runs out") {
  const auto data = tiny_train_set(8, 6);
  TrainConfig tc;
  tc.learning_rate = 0.0;
  tc.max_steps = 100;
  tc.eval_interval = 1;
  tc.patience = 3;
  const auto result = train(build_model(tiny_model_config(), data), tc, data, data);
  CHECK(result.early_stopped);
  CHECK(result.final_step == 4);
}

TEST_CASE("non-finite loss aborts with the step and batch ids") {
  const auto data = tiny_train_set(4, 7);
  auto model = build_model(tiny_model_config(), data);
  model.params()[*model.params().find("head.logits.bias")].value.setConstant(std::nanf(""));
  TrainConfig tc;
  tc.max_steps = 2;
  tc.batch_size = 2;
  try {
    train(model, tc, data, {});
    FAIL("expected a TrainingError");
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("step 0") != std::string::npos);
    CHECK(msg.find("t0000") != std::string::npos);
  }
}

TEST_CASE("train config validation and json") {
  TrainConfig tc;
  CHECK(tc.learning_rate == 1e-4);
  CHECK(tc.batch_size == 10);
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.learning_rate = -1;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.max_steps = 77;
  CHECK(TrainConfig::from_json(tc.to_json()).to_json() == tc.to_json());
  CHECK_THROWS_AS(TrainConfig::from_json({{"optimizer", "sgd"}}), ConfigError);
}

TEST_CASE("parameter groups") {
  CHECK(parameter_group("glore1.proj.weight") == "glore");
  CHECK(parameter_group("distill.your_left.weight") == "distill");
  CHECK(parameter_group("head.encoder1.weight") == "head");
  CHECK(parameter_group("language.fwd.w_input") == "language");
}
