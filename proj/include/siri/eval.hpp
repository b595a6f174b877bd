#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "siri/data.hpp"
#include "siri/lexicon.hpp"
#include "siri/model.hpp"
#include "siri/random.hpp"

namespace siri {

struct PeakLocation {
  int x = 0;
  int y = 0;
  bool operator==(const PeakLocation&) const = default;
};

// Argmax; ties go to the smallest row-major index.
PeakLocation peak(const Heatmap& heatmap);

double dist(PeakLocation a, PeakLocation b);

// Percentage of distances d with d <= r. Throws InputError on an empty list.
double accuracy_at(std::span<const double> distances, double r);

// The three accuracy radii. Full-size panoramas use 40/80/120 px; smaller grids scale
// them by pixels-per-cell so the 1:2:3 structure is kept.
struct Radii {
  std::array<double, 3> r = {40.0, 80.0, 120.0};

  static Radii scaled(double pixels_per_40px) {
    return {{40.0 * pixels_per_40px / 40.0, 80.0 * pixels_per_40px / 40.0, 120.0 * pixels_per_40px / 40.0}};
  }
};

struct MetricsReport {
  std::size_t n = 0;
  double mean_dist = 0.0;
  double a40 = 0.0;
  double a80 = 0.0;
  double a120 = 0.0;
  Radii radii;
  std::vector<double> distances;

  double at(int radius_index) const { return radius_index == 0 ? a40 : radius_index == 1 ? a80 : a120; }
  nlohmann::json to_json(bool with_distances = false) const;
};

MetricsReport summarize(std::vector<double> distances, const Radii& radii);

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual PeakLocation predict(const SdrSample& sample) = 0;
  virtual std::string name() const = 0;
};

class ModelPredictor : public Predictor {
 public:
  explicit ModelPredictor(const SiriModel<float>& model, std::string name = "SIRI")
      : model_(model), name_(std::move(name)) {}
  PeakLocation predict(const SdrSample& sample) override { return peak(model_.predict(sample)); }
  std::string name() const override { return name_; }

 private:
  const SiriModel<float>& model_;
  std::string name_;
};

// Returns the peak of the ground-truth heatmap, i.e. the target itself.
class OraclePredictor : public Predictor {
 public:
  PeakLocation predict(const SdrSample& sample) override { return {sample.target.x, sample.target.y}; }
  std::string name() const override { return "Oracle"; }
};

enum class BaselineKind { random, center, average };

BaselineKind parse_baseline(const std::string& name);
const char* baseline_name(BaselineKind kind);

// Non-learning baselines. `average` uses training-set targets only.
class BaselinePredictor : public Predictor {
 public:
  BaselinePredictor(BaselineKind kind, const std::vector<SdrSample>& train, std::uint64_t seed = 0);
  PeakLocation predict(const SdrSample& sample) override;
  std::string name() const override { return baseline_name(kind_); }

 private:
  BaselineKind kind_;
  Rng rng_;
  PeakLocation mean_target_{};
};

PeakLocation baseline_predict(BaselineKind kind, const std::vector<SdrSample>& train, const SdrSample& sample,
                              Rng& rng);

MetricsReport evaluate(Predictor& predictor, const std::vector<SdrSample>& dataset, const Radii& radii = {});

struct AmbiguitySplit {
  MetricsReport original;
  MetricsReport copy_paste;
  std::array<double, 3> drop{};  // original − copy-paste, per radius
};

struct AmbiguityReport {
  AmbiguitySplit all;
  AmbiguitySplit absolute;   // descriptions with a "your left/right" style phrase
  AmbiguitySplit ambiguous;  // the rest
  std::size_t evaluated = 0;  // predictions made (twice the sample count)
  nlohmann::json to_json() const;
};

AmbiguityReport ambiguity_eval(Predictor& predictor, const std::vector<SdrSample>& dataset,
                               const OrientationLexicon& lexicon, const Radii& radii = {});

// Ablation rows: which of (I) correlation, (II) distillation, (III) coordinate
// embedding are switched on.
struct AblationRow {
  char label = 'a';
  bool correlation = false;
  bool distillation = false;
  bool coords = false;
};

AblationRow ablation_row(char label);
std::vector<AblationRow> parse_ablation_rows(const std::string& csv);
ModelConfig apply_row(ModelConfig config, const AblationRow& row);

struct AblationCell {
  AblationRow row;
  std::vector<MetricsReport> runs;  // one per seed
  MetricsReport mean;               // accuracies and dist averaged over runs
};

MetricsReport average_reports(const std::vector<MetricsReport>& runs);

std::string format_table(const std::vector<std::pair<std::string, MetricsReport>>& rows);
std::string format_ablation_table(const std::vector<AblationCell>& cells);
std::string format_ambiguity_table(const std::vector<std::pair<std::string, AmbiguityReport>>& rows);

}  // namespace siri
