#include <doctest.h>

#include <cmath>
#include <random>

#include "siri/errors.hpp"
#include "siri//eval.hpp"
#include "siri/synth.hpp"

using namespace siri;

namespace {

SdrSample blank_sample(int h, int w, Pixel target, std::string text = "go") {
  return {"s", std::move(text), FeatureGrid(1, h, w), target};
}

// Answers with the target, except when the two halves of the features are
// identical, where it answers with the mirrored column instead.
class MirrorOnCopyPredictor : public Predictor {
 public:
  PeakLocation predict(const SdrSample& s) override {
    const auto& f = s.features;
    const int half = f.width / 2;
    bool same = true;
    for (int c = 0; c < f.channels && same; ++c)
      for (int y = 0; y < f.height && same; ++y)
        for (int x = 0; x < half && same; ++x) same = f.at(c, y, x) == f.at(c, y, x + (f.width + 1) / 2);
    if (!same) return {s.target.x, s.target.y};
    const int mx = target_in_left_half(s.target.x, f.width) ? s.target.x + (f.width + 1) / 2
                                                             : s.target.x - (f.width + 1) / 2;
    return {mx, s.target.y};
  }
  std::string name() const override { return "Mirror"; }
};

}  // namespace

TEST_CASE("distance") {
  CHECK(dist({0, 0}, {3, 4}) == 5.0);
  CHECK(dist({7, 7}, {7, 7}) == 0.0);
  CHECK(dist({10, 2}, {4, 10}) == 10.0);
}

TEST_CASE("accuracy at a radius") {
  const std::vector<double> d = {5, 40, 41};
  CHECK(accuracy_at(d, 40) == doctest::Approx(66.67).epsilon(0.0001));
  CHECK(std::abs(accuracy_at(d, 40) - 66.67) <= 0.01);
  CHECK(accuracy_at(std::vector<double>{0, 0, 0}, 40) == 100.0);
  CHECK(accuracy_at(std::vector<double>{50, 60}, 40) == 0.0);
  CHECK_THROWS_AS(accuracy_at(std::vector<double>{}, 40), InputError);
}

TEST_CASE("accuracies are ordered by radius") {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> d(static_cast<std::size_t>(rng.uniform_int(1, 30)));
    for (auto& v : d) v = rng.uniform(0.0, 200.0);
    const auto r = summarize(d, Radii{});
    CHECK(r.a40 <= r.a80);
    CHECK(r.a80 <= r.a120);
    CHECK(r.a40 >= 0.0);
    CHECK(r.a120 <= 100.0);
    CHECK(r.mean_dist >= 0.0);
  }
}

TEST_CASE("peak") {
  Heatmap one{5, 9, std::vector<double>(45, 0.0)};
  one.values[3 * 9 + 7] = 1.0;
  CHECK(peak(one) == PeakLocation{7, 3});
  Heatmap flat{4, 4, std::vector<double>(16, 1.0 / 16)};
  CHECK(peak(flat) == PeakLocation{0, 0});

  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    Heatmap m{6, 7, std::vector<double>(42)};
    for (auto& v : m.values) v = static_cast<double>(rng.uniform_int(0, 5));
    int bx = 0, by = 0;
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 7; ++x)
        if (m.at(y, x) > m.at(by, bx)) bx = x, by = y;
    CHECK(peak(m) == PeakLocation{bx, by});
  }
}

TEST_CASE("peak of a gaussian target is the target") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int h = 4 + static_cast<int>(rng.uniform_int(0, 10)), w = 4 + static_cast<int>(rng.uniform_int(0, 10));
    const Pixel t{static_cast<int>(rng.uniform_int(0, w - 1)), static_cast<int>(rng.uniform_int(0, h - 1))};
    CHECK(peak(gaussian_target(t, h, w, std::min(h, w) / 4.0)) == PeakLocation{t.x, t.y});
  }
}

TEST_CASE("oracle and center predictors") {
  const auto data = synth_dataset(1, 30, SynthConfig{}, "e");
  OraclePredictor oracle;
  const auto r = evaluate(oracle, data);
  CHECK(r.a40 == 100.0);
  CHECK(r.a120 == 100.0);
  CHECK(r.mean_dist == 0.0);

  std::vector<SdrSample> centered(10, blank_sample(7, 9, {4, 3}));
  BaselinePredictor center(BaselineKind::center, {});
  const auto c = evaluate(center, centered, Radii::scaled(1.0));
  CHECK(c.a40 == 100.0);
  CHECK(c.a80 == 100.0);
  CHECK(c.a120 == 100.0);
  Rng rng(0);
  CHECK(baseline_predict(BaselineKind::center, {}, blank_sample(100, 464, {0, 0}), rng) == PeakLocation{232, 50});
}

TEST_CASE("average baseline uses training targets only") {
  std::vector<SdrSample> train = {blank_sample(20, 20, {0, 0}), blank_sample(20, 20, {10, 10})};
  BaselinePredictor avg(BaselineKind::average, train);
  CHECK(avg.predict(blank_sample(20, 20, {19, 19})) == PeakLocation{5, 5});
  CHECK_THROWS_AS(BaselinePredictor(BaselineKind::average, {}), ConfigError);
  CHECK_THROWS_AS(parse_baseline("median"), ConfigError);
}

TEST_CASE("random baseline is seeded and matches a Monte-Carlo estimate") {
  const int h = 100, w = 464;
  std::vector<SdrSample> data;
  std::mt19937 gen(99);
  for (int i = 0; i < 1000; ++i) {
    data.push_back(blank_sample(h, w, {static_cast<int>(gen() % w), static_cast<int>(gen() % h)}));
  }
  BaselinePredictor a(BaselineKind::random, {}, 5), b(BaselineKind::random, {}, 5);
  for (int i = 0; i < 20; ++i) CHECK(a.predict(data[static_cast<std::size_t>(i)]) == b.predict(data[static_cast<std::size_t>(i)]));

  BaselinePredictor rnd(BaselineKind::random, {}, 7);
  const auto rep = evaluate(rnd, data);
  double var = 0;
  for (double d : rep.distances) var += (d - rep.mean_dist) * (d - rep.mean_dist);
  const double se_model = std::sqrt(var / (rep.n - 1) / rep.n);

  // Independent estimate of E|U − t| with U uniform over the grid.
  std::uniform_int_distribution<int> ux(0, w - 1), uy(0, h - 1);
  const int draws = 20;
  double sum = 0, sum_sq = 0;
  for (const auto& s : data)
    for (int k = 0; k < draws; ++k) {
      const double dx = ux(gen) - s.target.x, dy = uy(gen) - s.target.y;
      const double d = std::sqrt(dx * dx + dy * dy);
      sum += d;
      sum_sq += d * d;
    }
  const double n = static_cast<double>(data.size() * draws);
  const double mean = sum / n;
  const double se_oracle = std::sqrt((sum_sq / n - mean * mean) / n);
  CHECK(std::abs(rep.mean_dist - mean) <= 3.0 * std::hypot(se_model, se_oracle));
}

TEST_CASE("evaluating a duplicated dataset gives the same percentages") {
  const auto data = synth_dataset(2, 25, SynthConfig{}, "d");
  auto twice = data;
  twice.insert(twice.end(), data.begin(), data.end());
  BaselinePredictor c1(BaselineKind::center, {}), c2(BaselineKind::center, {});
  const auto a = evaluate(c1, data, Radii::scaled(3));
  const auto b = evaluate(c2, twice, Radii::scaled(3));
  CHECK(a.a40 == b.a40);
  CHECK(a.a80 == b.a80);
  CHECK(a.a120 == b.a120);
  CHECK(a.mean_dist == doctest::Approx(b.mean_dist));
}

TEST_CASE("ambiguity study fixtures") {
  const auto lex = OrientationLexicon::build({"x"}, default_orientation_phrases(), 6);
  auto data = synth_dataset(3, 60, SynthConfig{}, "a");
  const auto radii = Radii::scaled(3);

  OraclePredictor oracle;
  const auto o = ambiguity_eval(oracle, data, lex, radii);
  CHECK(o.evaluated == 2 * data.size());
  for (int r = 0; r < 3; ++r) CHECK(o.all.drop[static_cast<std::size_t>(r)] == 0.0);

  MirrorOnCopyPredictor mirror;
  const auto m = ambiguity_eval(mirror, data, lex, radii);
  for (int r = 0; r < 3; ++r) {
    CHECK(m.all.original.at(r) == 100.0);
    CHECK(m.all.drop[static_cast<std::size_t>(r)] == doctest::Approx(m.all.original.at(r)));
  }
  CHECK(m.absolute.original.n + m.ambiguous.original.n == data.size());

  BaselinePredictor c1(BaselineKind::center, {}), c2(BaselineKind::center, {});
  const auto plain = evaluate(c1, data, radii);
  const auto amb = ambiguity_eval(c2, data, lex, radii);
  CHECK(amb.all.original.a40 == plain.a40);
  CHECK(amb.all.original.a80 == plain.a80);
  CHECK(amb.all.original.mean_dist == plain.mean_dist);
}

TEST_CASE("ablation rows follow the toggle table") {
  const auto a = ablation_row('a');
  CHECK((!a.correlation && !a.distillation && !a.coords));
  const auto g = ablation_row('g');
  CHECK((g.correlation && g.distillation && g.coords));
  const auto e = ablation_row('e');
  CHECK((e.correlation && e.distillation && !e.coords));
  CHECK(ablation_row('b').correlation);
  CHECK(ablation_row('c').distillation);
  CHECK(ablation_row('d').coords);
  const auto f = ablation_row('f');
  CHECK((!f.correlation && f.distillation && f.coords));
  CHECK(parse_ablation_rows("a,g").size() == 2);
  CHECK_THROWS_AS(parse_ablation_rows("a,h"), ConfigError);
  const auto cfg = apply_row(ModelConfig{}, a);
  CHECK_FALSE(cfg.use_correlation);
  CHECK_FALSE(cfg.use_coord_embedding);
}

TEST_CASE("averaging reports and tables") {
  MetricsReport r1 = summarize({1, 2, 3}, Radii::scaled(2));
  MetricsReport r2 = summarize({10, 20, 30}, Radii::scaled(2));
  const auto m = average_reports({r1, r2});
  CHECK(m.a40 == doctest::Approx((r1.a40 + r2.a40) / 2));
  CHECK(m.mean_dist == doctest::Approx(11.0));
  const auto table = format_table({{"Center", r1}});
  CHECK(table.find("A@80px") != std::string::npos);
  CHECK(table.find("Center") != std::string::npos);
  AblationCell cell{ablation_row('g'), {r1, r2}, m};
  CHECK(format_ablation_table({cell}).find("(g)") != std::string::npos);
}
