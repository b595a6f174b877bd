#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "siri/checkpoint.hpp"
#include "siri/data.hpp"
#include "siri/eval.hpp"
#include "siri/model.hpp"

namespace siri {

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  long max_steps = 2000;
  std::uint64_t seed = 0;
  long eval_interval = 100;        // steps between validations
  long checkpoint_interval = 0;    // 0 disables periodic checkpoints
  int patience = 10;               // validations without improvement; 0 disables
  double sigma = 3.0;              // Gaussian target width in pixels
  double radius_scale = 40.0;      // pixels that play the role of 40 px
  std::size_t max_val_samples = 0; // 0 = whole validation set

  void validate() const;
  Radii radii() const { return Radii::scaled(radius_scale); }
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// −Σ M log max(M̂, 1e-12). Equal to KL(M‖M̂) plus the entropy of M.
double kl_loss(const Heatmap& pred, const Heatmap& target);
double entropy(const Heatmap& m);

template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(const ParamStore<T>& store, double lr, double beta1, double beta2, double eps);

  void step(ParamStore<T>& store, const Gradients<T>& grads);
  long steps() const { return t_; }

  void save(Checkpoint& ckpt) const;
  void restore(const Checkpoint& ckpt, const ParamStore<T>& store);

 private:
  double lr_ = 0, beta1_ = 0, beta2_ = 0, eps_ = 0;
  long t_ = 0;
  Gradients<T> m_, v_;
};

// Builds the lexicon and vocabulary from the training descriptions and
// initializes a model. `config.branches` sets k.
SiriModel<float> build_model(ModelConfig config, const std::vector<SdrSample>& train,
                             std::vector<std::string> base_phrases = default_orientation_phrases());

struct MetricsEntry {
  long step = 0;
  double loss = 0.0;  // mean validation loss
  MetricsReport report;
  nlohmann::json to_json() const;
};

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;  // metrics.jsonl, best.ckpt, last.ckpt
  const Checkpoint* resume = nullptr;            // continue from this state
  std::function<void(const MetricsEntry&)> on_eval;
  std::function<void(long step, double loss)> on_step;
};

struct TrainResult {
  Checkpoint best;   // best validation middle-radius accuracy (last if no validation set)
  Checkpoint last;
  std::vector<MetricsEntry> log;
  std::vector<double> step_losses;  // mean mini-batch loss, one per step taken in this call
  long final_step = 0;
  bool early_stopped = false;
};

TrainResult train(const SiriModel<float>& initial, const TrainConfig& config, const std::vector<SdrSample>& train_set,
                  const std::vector<SdrSample>& val_set, const TrainOptions& options = {});

// Trains one model per (row, seed) and evaluates the best checkpoint of each
// on `test`. Seeds set both the initialization and the batch order.
struct AblationOptions {
  std::vector<AblationRow> rows;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::vector<std::string> base_phrases = default_orientation_phrases();
  std::optional<std::filesystem::path> out_dir;  // one subdirectory per run
  std::function<void(const AblationRow&, std::uint64_t seed, const MetricsReport&)> on_run;
};

std::vector<AblationCell> ablation_run(const ModelConfig& model, const TrainConfig& train_config,
                                       const std::vector<SdrSample>& train_set, const std::vector<SdrSample>& val_set,
                                       const std::vector<SdrSample>& test_set, const AblationOptions& options);

struct GradCheckReport {
  std::map<std::string, double> max_relative_error;  // per parameter group
  std::map<std::string, double> max_abs_analytic;
  double worst = 0.0;
  std::size_t checked = 0;
};

// Parameter group of a tensor name: the first path component without digits.
std::string parameter_group(const std::string& name);

// Central-difference check of `loss` against its analytic gradient. `loss`
// must fill `grads` when it is non-null. Relative error per element is
// |a − n| / max(|a|, |n|, floor).
GradCheckReport check_gradients(ParamStore<double>& params,
                                const std::function<double(Gradients<double>*)>& loss, double epsilon,
                                double floor = 1e-6);

GradCheckReport grad_check(const SiriModel<double>& model, const SdrSample& sample, double epsilon,
                           double sigma = 1.0);

}  // namespace siri
