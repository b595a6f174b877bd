#include "siri/training.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace siri {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("train.learning_rate must be a finite non-negative number");
  }
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("train.beta1/beta2 must lie in [0,1)");
  if (!(adam_epsilon > 0)) throw ConfigError("train.adam_epsilon must be positive");
  if (max_steps < 0) throw ConfigError("train.max_steps must be non-negative");
  if (eval_interval < 0 || checkpoint_interval < 0) throw ConfigError("train intervals must be non-negative");
  if (patience < 0) throw ConfigError("train.patience must be non-negative");
  if (!(sigma > 0)) throw ConfigError("train.sigma must be positive");
  if (!(radius_scale > 0)) throw ConfigError("train.radius_scale must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate},
          {"batch_size", batch_size},
          {"optimizer", "adam"},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_epsilon", adam_epsilon},
          {"max_steps", max_steps},
          {"seed", seed},
          {"eval_interval", eval_interval},
          {"checkpoint_interval", checkpoint_interval},
          {"patience", patience},
          {"sigma", sigma},
          {"radius_scale", radius_scale},
          {"max_val_samples", max_val_samples}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    if (j.contains("optimizer") && j.at("optimizer") != "adam") throw ConfigError("train.optimizer must be 'adam'");
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.seed = j.value("seed", c.seed);
    c.eval_interval = j.value("eval_interval", c.eval_interval);
    c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
    c.patience = j.value("patience", c.patience);
    c.sigma = j.value("sigma", c.sigma);
    c.radius_scale = j.value("radius_scale", c.radius_scale);
    c.max_val_samples = j.value("max_val_samples", c.max_val_samples);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  return c;
}

double kl_loss(const Heatmap& pred, const Heatmap& target) {
  if (pred.height != target.height || pred.width != target.width || pred.values.size() != target.values.size()) {
    throw ShapeError("kl_loss: heatmap dims differ");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    if (target.values[i] != 0.0) loss -= target.values[i] * std::log(std::max(pred.values[i], 1e-12));
  }
  return loss;
}

double entropy(const Heatmap& m) {
  double h = 0.0;
  for (double v : m.values) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

template <typename T>
Adam<T>::Adam(const ParamStore<T>& store, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(store), v_(store) {}

template <typename T>
void Adam<T>::step(ParamStore<T>& store, const Gradients<T>& grads) {
  ++t_;
  const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
  const T c1 = static_cast<T>(1.0 - std::pow(beta1_, static_cast<double>(t_)));
  const T c2 = static_cast<T>(1.0 - std::pow(beta2_, static_cast<double>(t_)));
  const T lr = static_cast<T>(lr_), eps = static_cast<T>(eps_);
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store[i].value;
    auto& m = m_.values[i];
    auto& v = v_.values[i];
    const auto& g = grads.values[i];
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

template <typename T>
void Adam<T>::save(Checkpoint& ckpt) const {
  ckpt.metadata["adam_steps"] = t_;
  for (std::size_t i = 0; i < m_.values.size(); ++i) {
    const std::string name = ckpt.tensors[i].name;
    const std::vector<int> shape = ckpt.tensors[i].shape;
    const auto& m = m_.values[i];
    const auto& v = v_.values[i];
    ckpt.tensors.push_back({"adam.m/" + name, shape, std::vector<float>(m.data(), m.data() + m.size())});
    ckpt.tensors.push_back({"adam.v/" + name, shape, std::vector<float>(v.data(), v.data() + v.size())});
  }
}

template <typename T>
void Adam<T>::restore(const Checkpoint& ckpt, const ParamStore<T>& store) {
  t_ = ckpt.metadata.value("adam_steps", 0L);
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto* m = ckpt.find("adam.m/" + store[i].name);
    const auto* v = ckpt.find("adam.v/" + store[i].name);
    if (!m || !v) throw DataError("checkpoint has no optimizer state for " + store[i].name);
    m_.values[i] = Eigen::Map<const Vector<float>>(m->values.data(), static_cast<Eigen::Index>(m->values.size())).template cast<T>();
    v_.values[i] = Eigen::Map<const Vector<float>>(v->values.data(), static_cast<Eigen::Index>(v->values.size())).template cast<T>();
  }
}

template class Adam<float>;

SiriModel<float> build_model(ModelConfig config, const std::vector<SdrSample>& train,
                             std::vector<std::string> base_phrases) {
  if (train.empty()) throw ConfigError("training set is empty");
  std::vector<std::string> corpus;
  corpus.reserve(train.size());
  for (const auto& s : train) corpus.push_back(s.text);
  auto lexicon = OrientationLexicon::build(corpus, std::move(base_phrases), config.branches);
  auto vocab = Vocabulary::build(corpus);
  config.vocab_size = vocab.size();
  config.in_channels = train.front().features.channels;
  return SiriModel<float>(config, std::move(lexicon), std::move(vocab));
}

nlohmann::json MetricsEntry::to_json() const {
  return {{"step", step}, {"loss", loss}, {"a40", report.a40}, {"a80", report.a80}, {"a120", report.a120},
          {"dist", report.mean_dist}};
}

namespace {

std::vector<std::size_t> epoch_order(std::uint64_t seed, long epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(hash_name(seed, "epoch/" + std::to_string(epoch)));
  rng.shuffle(order);
  return order;
}

void copy_params(const ParamStore<float>& from, ParamStore<float>& to) {
  for (std::size_t i = 0; i < from.size(); ++i) to[i].value = from[i].value;
}

}  // namespace

TrainResult train(const SiriModel<float>& initial, const TrainConfig& cfg, const std::vector<SdrSample>& train_set,
                  const std::vector<SdrSample>& val_set, const TrainOptions& opts) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("training set is empty");

  SiriModel<float> model = opts.resume ? model_from_checkpoint(*opts.resume) : initial;
  SiriModel<float> best_model = model;
  Adam<float> adam(model.params(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_epsilon);
  long step = 0;
  double best_score = -1.0;
  int bad_evals = 0;
  if (opts.resume) {
    adam.restore(*opts.resume, model.params());
    step = opts.resume->step;
    best_score = opts.resume->metadata.value("best_score", -1.0);
    bad_evals = opts.resume->metadata.value("bad_evals", 0);
    for (std::size_t i = 0; i < best_model.params().size(); ++i) {
      const auto* t = opts.resume->find("best/" + best_model.params()[i].name);
      if (t) {
        best_model.params()[i].value =
            Eigen::Map<const Vector<float>>(t->values.data(), static_cast<Eigen::Index>(t->values.size()));
      }
    }
  }

  std::vector<ModelInput<float>> inputs;
  std::vector<Heatmap> targets;
  inputs.reserve(train_set.size());
  for (const auto& s : train_set) {
    inputs.push_back(model.prepare(s));
    targets.push_back(gaussian_target(s.target, s.features.height, s.features.width, cfg.sigma));
  }
  std::vector<SdrSample> val(val_set.begin(),
                             cfg.max_val_samples > 0 && cfg.max_val_samples < val_set.size()
                                 ? val_set.begin() + static_cast<long>(cfg.max_val_samples)
                                 : val_set.end());

  std::ofstream metrics_log;
  if (opts.out_dir) {
    fs::create_directories(*opts.out_dir);
    metrics_log.open(*opts.out_dir / "metrics.jsonl", opts.resume ? std::ios::app : std::ios::trunc);
    if (!metrics_log) throw IoError("cannot write metrics log in " + opts.out_dir->string());
  }

  auto snapshot = [&](bool with_state) {
    auto ckpt = make_checkpoint(model, step);
    ckpt.metadata["train"] = cfg.to_json();
    if (with_state) {
      adam.save(ckpt);
      ckpt.metadata["best_score"] = best_score;
      ckpt.metadata["bad_evals"] = bad_evals;
      for (const auto& p : best_model.params()) {
        ckpt.tensors.push_back({"best/" + p.name, p.shape, std::vector<float>(p.value.data(), p.value.data() + p.value.size())});
      }
    }
    return ckpt;
  };

  TrainResult result;
  const auto n = train_set.size();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const long batches_per_epoch = static_cast<long>((n + batch - 1) / batch);
  long cached_epoch = -1;
  std::vector<std::size_t> order;
  Gradients<float> grads(model.params());

  while (step < cfg.max_steps) {
    const long epoch = step / batches_per_epoch;
    if (epoch != cached_epoch) {
      order = epoch_order(cfg.seed, epoch, n);
      cached_epoch = epoch;
    }
    const auto begin = static_cast<std::size_t>(step % batches_per_epoch) * batch;
    const auto end = std::min(begin + batch, n);

    grads.zero();
    double loss_sum = 0.0;
    for (auto k = begin; k < end; ++k) loss_sum += model.loss_and_gradient(inputs[order[k]], targets[order[k]], &grads);
    const double mean_loss = loss_sum / static_cast<double>(end - begin);
    if (!std::isfinite(mean_loss)) {
      std::ostringstream msg;
      msg << "non-finite loss at step " << step << " on batch [";
      for (auto k = begin; k < end; ++k) msg << (k > begin ? ", " : "") << train_set[order[k]].id;
      msg << "]";
      throw TrainingError(msg.str());
    }
    const float inv = 1.0f / static_cast<float>(end - begin);
    for (auto& g : grads.values) g *= inv;
    adam.step(model.params(), grads);
    ++step;
    result.step_losses.push_back(mean_loss);
    if (opts.on_step) opts.on_step(step, mean_loss);

    const bool eval_now = !val.empty() && ((cfg.eval_interval > 0 && step % cfg.eval_interval == 0) ||
                                           step == cfg.max_steps);
    if (eval_now) {
      std::vector<double> distances;
      double val_loss = 0.0;
      for (const auto& s : val) {
        const auto pred = model.predict(s);
        val_loss += kl_loss(pred, gaussian_target(s.target, s.features.height, s.features.width, cfg.sigma));
        distances.push_back(dist(peak(pred), {s.target.x, s.target.y}));
      }
      MetricsEntry entry{step, val_loss / static_cast<double>(val.size()), summarize(std::move(distances), cfg.radii())};
      entry.report.distances.clear();
      if (metrics_log.is_open()) metrics_log << entry.to_json().dump() << '\n' << std::flush;
      if (opts.on_eval) opts.on_eval(entry);
      result.log.push_back(entry);
      if (entry.report.a80 > best_score) {
        best_score = entry.report.a80;
        copy_params(model.params(), best_model.params());
        bad_evals = 0;
      } else {
        ++bad_evals;
      }
      if (cfg.patience > 0 && bad_evals >= cfg.patience) {
        result.early_stopped = true;
        break;
      }
    }
    if (opts.out_dir && cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0) {
      save_checkpoint(*opts.out_dir / "last.ckpt", snapshot(true));
    }
  }

  result.final_step = step;
  result.last = snapshot(true);
  if (best_score < 0.0) {
    result.best = snapshot(false);
  } else {
    result.best = make_checkpoint(best_model, step);
    result.best.metadata["train"] = cfg.to_json();
    result.best.metadata["best_score"] = best_score;
  }
  if (opts.out_dir) {
    save_checkpoint(*opts.out_dir / "last.ckpt", result.last);
    save_checkpoint(*opts.out_dir / "best.ckpt", result.best);
  }
  return result;
}

std::vector<AblationCell> ablation_run(const ModelConfig& model_config, const TrainConfig& train_config,
                                       const std::vector<SdrSample>& train_set, const std::vector<SdrSample>& val_set,
                                       const std::vector<SdrSample>& test_set, const AblationOptions& options) {
  if (options.rows.empty() || options.seeds.empty()) throw ConfigError("ablation needs at least one row and one seed");
  std::vector<AblationCell> cells;
  for (const auto& row : options.rows) {
    AblationCell cell;
    cell.row = row;
    for (auto seed : options.seeds) {
      auto mc = apply_row(model_config, row);
      mc.seed = seed;
      auto tc = train_config;
      tc.seed = seed;
      TrainOptions topts;
      if (options.out_dir) {
        topts.out_dir = *options.out_dir / (std::string(1, row.label) + "_seed" + std::to_string(seed));
      }
      const auto result = train(build_model(mc, train_set, options.base_phrases), tc, train_set, val_set, topts);
      const auto best = model_from_checkpoint(result.best);
      ModelPredictor predictor(best);
      auto report = evaluate(predictor, test_set, tc.radii());
      if (options.on_run) options.on_run(row, seed, report);
      cell.runs.push_back(std::move(report));
    }
    cell.mean = average_reports(cell.runs);
    cells.push_back(std::move(cell));
  }
  return cells;
}

std::string parameter_group(const std::string& name) {
  std::string head = name.substr(0, name.find('.'));
  while (!head.empty() && std::isdigit(static_cast<unsigned char>(head.back()))) head.pop_back();
  return head;
}

GradCheckReport check_gradients(ParamStore<double>& params, const std::function<double(Gradients<double>*)>& loss,
                                double epsilon, double floor) {
  Gradients<double> analytic(params);
  loss(&analytic);
  GradCheckReport rep;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto group = parameter_group(params[i].name);
    auto& err = rep.max_relative_error[group];
    auto& mag = rep.max_abs_analytic[group];
    auto& value = params[i].value;
    for (Eigen::Index j = 0; j < value.size(); ++j) {
      const double saved = value[j];
      value[j] = saved + epsilon;
      const double up = loss(nullptr);
      value[j] = saved - epsilon;
      const double down = loss(nullptr);
      value[j] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic.values[i][j];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      err = std::max(err, rel);
      mag = std::max(mag, std::abs(a));
      rep.worst = std::max(rep.worst, rel);
      ++rep.checked;
    }
  }
  return rep;
}

GradCheckReport grad_check(const SiriModel<double>& model, const SdrSample& sample, double epsilon, double sigma) {
  SiriModel<double> work = model;
  const auto input = work.prepare(sample);
  const auto target = gaussian_target(sample.target, sample.features.height, sample.features.width, sigma);
  return check_gradients(
      work.params(), [&](Gradients<double>* g) { return work.loss_and_gradient(input, target, g); }, epsilon);
}

}  // namespace siri
