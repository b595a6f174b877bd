#include "siri/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace siri {

PeakLocation peak(const Heatmap& heatmap) {
  if (heatmap.values.empty()) throw InputError("peak: empty heatmap");
  const auto it = std::max_element(heatmap.values.begin(), heatmap.values.end());
  const auto idx = static_cast<int>(it - heatmap.values.begin());
  return {idx % heatmap.width, idx / heatmap.width};
}

double dist(PeakLocation a, PeakLocation b) {
  const double dx = a.x - b.x, dy = a.y - b.y;
  return std::sqrt(dx * dx + dy * dy);
}

double accuracy_at(std::span<const double> distances, double r) {
  if (distances.empty()) throw InputError("accuracy_at: no distances");
  const auto hits = std::count_if(distances.begin(), distances.end(), [&](double d) { return d <= r; });
  return 100.0 * static_cast<double>(hits) / static_cast<double>(distances.size());
}

nlohmann::json MetricsReport::to_json(bool with_distances) const {
  nlohmann::json j = {{"n", n},
                      {"dist", mean_dist},
                      {"a40", a40},
                      {"a80", a80},
                      {"a120", a120},
                      {"radii", {radii.r[0], radii.r[1], radii.r[2]}}};
  if (with_distances) j["distances"] = distances;
  return j;
}

MetricsReport summarize(std::vector<double> distances, const Radii& radii) {
  MetricsReport rep;
  rep.radii = radii;
  rep.n = distances.size();
  if (!distances.empty()) {
    double total = 0.0;
    for (double d : distances) total += d;
    rep.mean_dist = total / static_cast<double>(distances.size());
    rep.a40 = accuracy_at(distances, radii.r[0]);
    rep.a80 = accuracy_at(distances, radii.r[1]);
    rep.a120 = accuracy_at(distances, radii.r[2]);
  }
  rep.distances = std::move(distances);
  return rep;
}

BaselineKind parse_baseline(const std::string& name) {
  if (name == "random") return BaselineKind::random;
  if (name == "center") return BaselineKind::center;
  if (name == "average") return BaselineKind::average;
  throw ConfigError("unknown baseline '" + name + "' (expected random, center or average)");
}

const char* baseline_name(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::random: return "Random";
    case BaselineKind::center: return "Center";
    case BaselineKind::average: return "Average";
  }
  return "";
}

namespace {

PeakLocation mean_target(const std::vector<SdrSample>& train) {
  if (train.empty()) throw ConfigError("average baseline needs a non-empty training set");
  double sx = 0, sy = 0;
  for (const auto& s : train) {
    sx += s.target.x;
    sy += s.target.y;
  }
  const auto n = static_cast<double>(train.size());
  return {static_cast<int>(std::lround(sx / n)), static_cast<int>(std::lround(sy / n))};
}

}  // namespace

BaselinePredictor::BaselinePredictor(BaselineKind kind, const std::vector<SdrSample>& train, std::uint64_t seed)
    : kind_(kind), rng_(seed) {
  if (kind == BaselineKind::average) mean_target_ = mean_target(train);
}

PeakLocation BaselinePredictor::predict(const SdrSample& sample) {
  const auto& f = sample.features;
  switch (kind_) {
    case BaselineKind::random: return {rng_.uniform_int(0, f.width - 1), rng_.uniform_int(0, f.height - 1)};
    case BaselineKind::center: return {f.width / 2, f.height / 2};
    case BaselineKind::average:
      return {std::clamp(mean_target_.x, 0, f.width - 1), std::clamp(mean_target_.y, 0, f.height - 1)};
  }
  return {};
}

PeakLocation baseline_predict(BaselineKind kind, const std::vector<SdrSample>& train, const SdrSample& sample,
                              Rng& rng) {
  const auto& f = sample.features;
  switch (kind) {
    case BaselineKind::random: return {rng.uniform_int(0, f.width - 1), rng.uniform_int(0, f.height - 1)};
    case BaselineKind::center: return {f.width / 2, f.height / 2};
    case BaselineKind::average: {
      const auto m = mean_target(train);
      return {std::clamp(m.x, 0, f.width - 1), std::clamp(m.y, 0, f.height - 1)};
    }
  }
  return {};
}

MetricsReport evaluate(Predictor& predictor, const std::vector<SdrSample>& dataset, const Radii& radii) {
  std::vector<double> distances;
  distances.reserve(dataset.size());
  for (const auto& s : dataset) distances.push_back(dist(predictor.predict(s), {s.target.x, s.target.y}));
  return summarize(std::move(distances), radii);
}

namespace {

AmbiguitySplit make_split(std::vector<double> original, std::vector<double> copied, const Radii& radii) {
  AmbiguitySplit s;
  if (original.empty()) {
    s.original.radii = s.copy_paste.radii = radii;
    return s;
  }
  s.original = summarize(std::move(original), radii);
  s.copy_paste = summarize(std::move(copied), radii);
  for (int r = 0; r < 3; ++r) s.drop[r] = s.original.at(r) - s.copy_paste.at(r);
  return s;
}

nlohmann::json split_json(const AmbiguitySplit& s) {
  return {{"original", s.original.to_json()},
          {"copy_paste", s.copy_paste.to_json()},
          {"drop", {{"a40", s.drop[0]}, {"a80", s.drop[1]}, {"a120", s.drop[2]}}}};
}

}  // namespace

nlohmann::json AmbiguityReport::to_json() const {
  return {{"all", split_json(all)},
          {"absolute", split_json(absolute)},
          {"ambiguous", split_json(ambiguous)},
          {"evaluated", evaluated}};
}

AmbiguityReport ambiguity_eval(Predictor& predictor, const std::vector<SdrSample>& dataset,
                               const OrientationLexicon& lexicon, const Radii& radii) {
  std::vector<double> orig, copied, abs_orig, abs_copied, amb_orig, amb_copied;
  AmbiguityReport rep;
  for (const auto& s : dataset) {
    const PeakLocation truth{s.target.x, s.target.y};
    const double d0 = dist(predictor.predict(s), truth);
    const double d1 = dist(predictor.predict(copy_paste_ambiguity(s)), truth);
    rep.evaluated += 2;
    orig.push_back(d0);
    copied.push_back(d1);
    if (lexicon.has_absolute_phrase(s.text)) {
      abs_orig.push_back(d0);
      abs_copied.push_back(d1);
    } else {
      amb_orig.push_back(d0);
      amb_copied.push_back(d1);
    }
  }
  rep.all = make_split(std::move(orig), std::move(copied), radii);
  rep.absolute = make_split(std::move(abs_orig), std::move(abs_copied), radii);
  rep.ambiguous = make_split(std::move(amb_orig), std::move(amb_copied), radii);
  return rep;
}

AblationRow ablation_row(char label) {
  switch (label) {
    case 'a': return {'a', false, false, false};
    case 'b': return {'b', true, false, false};
    case 'c': return {'c', false, true, false};
    case 'd': return {'d', false, false, true};
    case 'e': return {'e', true, true, false};
    case 'f': return {'f', false, true, true};
    case 'g': return {'g', true, true, true};
    default: throw ConfigError(std::string("unknown ablation row '") + label + "' (expected a-g)");
  }
}

std::vector<AblationRow> parse_ablation_rows(const std::string& csv) {
  std::vector<AblationRow> rows;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.size() != 1) throw ConfigError("unknown ablation row '" + item + "' (expected a-g)");
    rows.push_back(ablation_row(item[0]));
  }
  if (rows.empty()) throw ConfigError("no ablation rows given");
  return rows;
}

ModelConfig apply_row(ModelConfig config, const AblationRow& row) {
  config.use_correlation = row.correlation;
  config.use_distillation = row.distillation;
  config.use_coord_embedding = row.coords;
  return config;
}

MetricsReport average_reports(const std::vector<MetricsReport>& runs) {
  MetricsReport m;
  if (runs.empty()) return m;
  m.radii = runs.front().radii;
  for (const auto& r : runs) {
    m.n += r.n;
    m.mean_dist += r.mean_dist;
    m.a40 += r.a40;
    m.a80 += r.a80;
    m.a120 += r.a120;
  }
  const auto k = static_cast<double>(runs.size());
  m.mean_dist /= k;
  m.a40 /= k;
  m.a80 /= k;
  m.a120 /= k;
  return m;
}

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

std::string format_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-14s %10s %10s %11s %9s\n", "Method", "A@40px(%)", "A@80px(%)", "A@120px(%)",
                "Dist");
  out << line;
  for (const auto& [name, r] : rows) {
    std::snprintf(line, sizeof line, "%-14s %10.2f %10.2f %11.2f %9.2f\n", name.c_str(), r.a40, r.a80, r.a120,
                  r.mean_dist);
    out << line;
  }
  return out.str();
}

std::string format_ablation_table(const std::vector<AblationCell>& cells) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-7s %3s %3s %3s %10s %10s %11s %9s %5s\n", "Method", "I", "II", "III",
                "A@40px(%)", "A@80px(%)", "A@120px(%)", "Dist", "runs");
  out << line;
  for (const auto& c : cells) {
    auto mark = [](bool on) { return on ? "x" : "-"; };
    const std::string label = std::string("(") + c.row.label + ")";
    std::snprintf(line, sizeof line, "%-7s %3s %3s %3s %10.2f %10.2f %11.2f %9.2f %5zu\n", label.c_str(),
                  mark(c.row.correlation), mark(c.row.distillation), mark(c.row.coords), c.mean.a40, c.mean.a80,
                  c.mean.a120, c.mean.mean_dist, c.runs.size());
    out << line;
  }
  return out.str();
}

std::string format_ambiguity_table(const std::vector<std::pair<std::string, AmbiguityReport>>& rows) {
  std::ostringstream out;
  char line[512];
  std::snprintf(line, sizeof line, "%-10s %-9s %-24s %-24s %-24s\n", "Method", "Subset", "A@40px orig/copy/drop",
                "A@80px orig/copy/drop", "A@120px orig/copy/drop");
  out << line;
  for (const auto& [name, rep] : rows) {
    for (const auto& [subset, split] :
         {std::pair<const char*, const AmbiguitySplit*>{"all", &rep.all},
          {"absolute", &rep.absolute},
          {"ambiguous", &rep.ambiguous}}) {
      std::string cols[3];
      for (int r = 0; r < 3; ++r) {
        cols[r] = fmt("%.2f", split->original.at(r)) + " / " + fmt("%.2f", split->copy_paste.at(r)) + " / " +
                  fmt("%.2f", split->drop[r]);
      }
      std::snprintf(line, sizeof line, "%-10s %-9s %-24s %-24s %-24s\n", name.c_str(), subset, cols[0].c_str(),
                    cols[1].c_str(), cols[2].c_str());
      out << line;
    }
  }
  return out.str();
}

}  // namespace siri
