#include "siri/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "siri/checkpoint.hpp"
#include "siri/eval.hpp"
#include "siri/render.hpp"
#include "siri/run_config.hpp"
#include "siri/synth.hpp"
#include "siri/training.hpp"

namespace siri {

namespace fs = std::filesystem;

namespace {

constexpr char kCardName[] = "dataset_card.json";

struct Io {
  std::ostream& out;
  std::ostream& err;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

std::vector<SdrSample> load_split(const fs::path& data, const std::string& split, std::ostream& err,
                                  bool required = true) {
  const auto manifest = data / (split + ".jsonl");
  if (!fs::exists(manifest)) {
    if (required) throw DataError("no manifest " + manifest.string());
    return {};
  }
  auto loaded = load_dataset(manifest);
  for (const auto& e : loaded.errors) err << "warning: skipping record: " << e.what() << "\n";
  return std::move(loaded.samples);
}

// Fills in the radius scale recorded by the synthetic generator unless the
// user chose one.
void apply_card(RunConfig& rc, const fs::path& data) {
  const auto card_path = data / kCardName;
  if (rc.radius_scale_set || !fs::exists(card_path)) return;
  std::ifstream in(card_path);
  try {
    const auto card = nlohmann::json::parse(in);
    if (card.contains("radius_scale")) rc.train.radius_scale = card.at("radius_scale").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt " + card_path.string() + ": " + e.what());
  }
}

std::pair<int, int> parse_grid(const std::string& text) {
  const auto x = text.find_first_of("xX");
  try {
    if (x == std::string::npos) throw std::invalid_argument(text);
    std::size_t used = 0;
    const int rows = std::stoi(text.substr(0, x), &used);
    if (used != x) throw std::invalid_argument(text);
    const auto rest = text.substr(x + 1);
    const int cols = std::stoi(rest, &used);
    if (used != rest.size()) throw std::invalid_argument(text);
    return {rows, cols};
  } catch (const std::logic_error&) {
    throw ConfigError("--grid must look like RxC, got '" + text + "'");
  }
}

// Options shared by commands that train or evaluate.
struct CommonFlags {
  std::string config;
  std::optional<std::string> data, out;
  std::optional<std::uint64_t> seed;
  std::optional<double> radius_scale;

  void add(CLI::App* cmd) {
    cmd->add_option("--config", config, "JSON run config");
    cmd->add_option("--data", data, "dataset directory");
    cmd->add_option("--out", out, "output directory");
    cmd->add_option("--seed", seed, "seed for initialization, batching and sampling");
    cmd->add_option("--radius-scale", radius_scale, "pixels standing in for 40 px in the accuracy radii");
  }

  RunConfig resolve() const {
    RunConfig rc = config.empty() ? RunConfig{} : load_run_config(config);
    if (data) rc.data = *data;
    if (out) rc.out = *out;
    if (seed) rc.seed = *seed;
    if (radius_scale) {
      rc.train.radius_scale = *radius_scale;
      rc.radius_scale_set = true;
    }
    rc.model.seed = rc.seed;
    rc.train.seed = rc.seed;
    return rc;
  }
};

struct TrainFlags {
  bool no_correlation = false, no_distillation = false, no_coords = false;
  std::optional<std::string> head;
  std::optional<long> max_steps, eval_interval;
  std::optional<double> lr, sigma;
  std::optional<int> batch_size, patience, branches;

  void add(CLI::App* cmd) {
    cmd->add_flag("--no-correlation", no_correlation, "disable the GloRe correlation stack");
    cmd->add_flag("--no-distillation", no_distillation, "disable the orientation distillation branches");
    cmd->add_flag("--no-coords", no_coords, "disable coordinate embedding and fusion");
    cmd->add_option("--head", head, "lingunet or conv")->check(CLI::IsMember({"lingunet", "conv"}));
    cmd->add_option("--max-steps", max_steps, "optimizer steps");
    cmd->add_option("--eval-interval", eval_interval, "steps between validations");
    cmd->add_option("--lr", lr, "Adam learning rate");
    cmd->add_option("--sigma", sigma, "Gaussian target width in pixels");
    cmd->add_option("--batch-size", batch_size, "mini-batch size");
    cmd->add_option("--patience", patience, "validations without improvement before stopping; 0 disables");
    cmd->add_option("--branches", branches, "number of orientation branches k");
  }

  void apply(RunConfig& rc) const {
    if (no_correlation) rc.model.use_correlation = false;
    if (no_distillation) rc.model.use_distillation = false;
    if (no_coords) rc.model.use_coord_embedding = false;
    if (head) rc.model.head = *head == "conv" ? HeadKind::conv : HeadKind::lingunet;
    if (max_steps) rc.train.max_steps = *max_steps;
    if (eval_interval) rc.train.eval_interval = *eval_interval;
    if (lr) rc.train.learning_rate = *lr;
    if (sigma) rc.train.sigma = *sigma;
    if (batch_size) rc.train.batch_size = *batch_size;
    if (patience) rc.train.patience = *patience;
    if (branches) rc.model.branches = *branches;
  }
};

std::string require(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string(flag) + " is required");
  return value;
}

// --- synth -----------------------------------------------------------------

struct SynthFlags {
  std::string config, out, split = "train", grid;
  int scenes = 1000, val_scenes = 0, test_scenes = 0, scale = 8;
  std::optional<int> landmarks, hops, cell_px, channels;
  std::optional<double> duplicate_prob;
  std::optional<std::uint64_t> seed;
  bool previews = false, copy_paste_previews = false;
};

std::uint64_t split_seed(std::uint64_t seed, const std::string& split) { return hash_name(seed, "split/" + split); }

int cmd_synth(const SynthFlags& f, Io io) {
  RunConfig rc = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  rc.out = require(f.out, "--out");
  rc.data = rc.out;
  if (f.seed) rc.seed = *f.seed;
  if (!f.grid.empty()) std::tie(rc.synth.rows, rc.synth.cols) = parse_grid(f.grid);
  if (f.landmarks) rc.synth.landmarks = *f.landmarks;
  if (f.hops) rc.synth.hops = *f.hops;
  if (f.cell_px) rc.synth.cell_px = *f.cell_px;
  if (f.channels) rc.synth.channels = *f.channels;
  if (f.duplicate_prob) rc.synth.duplicate_prob = *f.duplicate_prob;
  if (f.scenes < 0 || f.val_scenes < 0 || f.test_scenes < 0) throw ConfigError("scene counts must be non-negative");
  if (f.scale < 1) throw ConfigError("--scale must be at least 1");
  rc.synth.validate();

  const fs::path out = rc.out;
  std::vector<std::pair<std::string, int>> splits = {{f.split, f.scenes}};
  if (f.val_scenes > 0) splits.emplace_back("val", f.val_scenes);
  if (f.test_scenes > 0) splits.emplace_back("test", f.test_scenes);

  nlohmann::json card = {{"generator", "synthetic-grid"},
                         {"seed", rc.seed},
                         {"synth", rc.synth.to_json()},
                         {"radius_scale", rc.synth.cell_px},
                         {"feature_shape", {rc.synth.channels, rc.synth.height(), rc.synth.width()}},
                         {"splits", nlohmann::json::object()}};
  for (const auto& [name, count] : splits) {
    const auto seed = split_seed(rc.seed, name);
    const auto samples = synth_dataset(seed, count, rc.synth, name + "-");
    write_dataset(out, name, samples);
    card["splits"][name] = {{"count", count}, {"seed", seed}, {"manifest", name + ".jsonl"}};
    if (f.previews || f.copy_paste_previews) {
      const auto dir = out / "previews" / name;
      fs::create_directories(dir);
      for (const auto& s : samples) {
        if (f.previews) write_png(dir / (s.id + ".png"), render_synthetic(s.features, rc.synth, f.scale));
        if (f.copy_paste_previews) {
          write_png(dir / (s.id + "_copypaste.png"),
                    render_synthetic(copy_paste_ambiguity(s).features, rc.synth, f.scale));
        }
      }
    }
    io.out << name << ": " << count << " scenes -> " << (out / (name + ".jsonl")).string() << "\n";
  }
  write_json(out / kCardName, card);
  write_run_config(out / "run_config.json", rc);
  return kExitOk;
}

// --- train -----------------------------------------------------------------

struct TrainCmdFlags {
  CommonFlags common;
  TrainFlags train;
  std::string resume;
  bool quiet = false;
};

int cmd_train(const TrainCmdFlags& f, Io io) {
  RunConfig rc = f.common.resolve();
  f.train.apply(rc);
  require(rc.data, "--data");
  require(rc.out, "--out");
  rc.validate();
  apply_card(rc, rc.data);

  const auto train_set = load_split(rc.data, rc.train_split, io.err);
  if (train_set.empty()) throw DataError("training split '" + rc.train_split + "' has no usable samples");
  const auto val_set = load_split(rc.data, rc.val_split, io.err, false);

  std::optional<Checkpoint> resume;
  if (!f.resume.empty()) resume = load_checkpoint(f.resume);
  auto model = resume ? model_from_checkpoint(*resume) : build_model(rc.model, train_set, rc.orientation_phrases);
  rc.model = model.config();

  const fs::path out = rc.out;
  fs::create_directories(out);
  write_run_config(out / "run_config.json", rc);

  TrainOptions opts;
  opts.out_dir = out;
  if (resume) opts.resume = &*resume;
  if (!f.quiet) {
    opts.on_eval = [&](const MetricsEntry& e) {
      io.err << "step " << e.step << "  val_loss " << e.loss << "  a40 " << e.report.a40 << "  a80 " << e.report.a80
             << "  a120 " << e.report.a120 << "  dist " << e.report.mean_dist << "\n";
    };
  }
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = train(model, rc.train, train_set, val_set, opts);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  nlohmann::json summary = {{"final_step", result.final_step},
                            {"early_stopped", result.early_stopped},
                            {"parameters", model.parameter_count()},
                            {"train_samples", train_set.size()},
                            {"val_samples", val_set.size()},
                            {"last_step_loss", result.step_losses.empty() ? 0.0 : result.step_losses.back()}};
  if (!result.log.empty()) {
    const auto best = std::max_element(result.log.begin(), result.log.end(),
                                       [](const auto& a, const auto& b) { return a.report.a80 < b.report.a80; });
    summary["best"] = best->to_json();
  }
  write_json(out / "train_summary.json", summary);
  io.out << "trained " << result.final_step << " steps in " << seconds << " s; checkpoints in " << out.string()
         << "\n";
  return kExitOk;
}

// --- eval ------------------------------------------------------------------

struct EvalFlags {
  CommonFlags common;
  std::string ckpt, baseline, split;
  bool ambiguity = false;
};

int cmd_eval(const EvalFlags& f, Io io) {
  if (!f.ckpt.empty() && !f.baseline.empty()) throw ConfigError("give either --ckpt or --baseline, not both");
  if (f.ckpt.empty() && f.baseline.empty()) throw ConfigError("one of --ckpt or --baseline is required");
  RunConfig rc = f.common.resolve();
  require(rc.data, "--data");
  if (rc.out.empty()) rc.out = ".";
  if (!f.split.empty()) rc.test_split = f.split;
  rc.validate();
  apply_card(rc, rc.data);

  const auto samples = load_split(rc.data, rc.test_split, io.err);
  if (samples.empty()) throw DataError("split '" + rc.test_split + "' has no usable samples");

  std::optional<SiriModel<float>> model;
  std::unique_ptr<Predictor> predictor;
  OrientationLexicon lexicon;
  if (!f.ckpt.empty()) {
    model.emplace(model_from_checkpoint(load_checkpoint(f.ckpt)));
    predictor = std::make_unique<ModelPredictor>(*model);
    lexicon = model->lexicon();
  } else {
    const auto kind = parse_baseline(f.baseline);
    std::vector<SdrSample> train_set;
    if (kind == BaselineKind::average) train_set = load_split(rc.data, rc.train_split, io.err);
    predictor = std::make_unique<BaselinePredictor>(kind, train_set, rc.seed);
    std::vector<std::string> corpus;
    for (const auto& s : samples) corpus.push_back(s.text);
    lexicon = OrientationLexicon::build(corpus, rc.orientation_phrases,
                                        static_cast<int>(rc.orientation_phrases.size()));
  }

  const fs::path out = rc.out;
  const auto radii = rc.train.radii();
  std::string stem = "eval_" + rc.test_split;
  nlohmann::json report;
  std::string text;
  if (f.ambiguity) {
    stem += "_ambiguity";
    const auto rep = ambiguity_eval(*predictor, samples, lexicon, radii);
    report = rep.to_json();
    text = format_ambiguity_table({{predictor->name(), rep}});
  } else {
    const auto rep = evaluate(*predictor, samples, radii);
    report = rep.to_json();
    text = format_table({{predictor->name(), rep}});
  }
  report["method"] = predictor->name();
  report["split"] = rc.test_split;
  report["radii"] = radii.r;
  write_json(out / (stem + ".json"), report);
  write_text(out / (stem + ".txt"), text);
  write_run_config(out / "run_config.json", rc);
  io.out << text;
  return kExitOk;
}

// --- predict ---------------------------------------------------------------

struct PredictFlags {
  CommonFlags common;
  std::string ckpt, sample, split, png;
  bool oracle = false, copy_paste = false;
  int scale = 8;
};

int cmd_predict(const PredictFlags& f, Io io) {
  if (f.ckpt.empty() == !f.oracle) throw ConfigError("give exactly one of --ckpt or --oracle");
  RunConfig rc = f.common.resolve();
  require(rc.data, "--data");
  require(f.sample, "--sample");
  require(f.png, "--out");
  if (f.scale < 1) throw ConfigError("--scale must be at least 1");

  std::vector<std::string> splits;
  if (!f.split.empty()) {
    splits.push_back(f.split);
  } else {
    for (const auto& e : fs::directory_iterator(rc.data)) {
      if (e.path().extension() == ".jsonl") splits.push_back(e.path().stem().string());
    }
    std::sort(splits.begin(), splits.end());
  }
  std::optional<SdrSample> sample;
  for (const auto& split : splits) {
    for (auto& s : load_split(rc.data, split, io.err)) {
      if (s.id == f.sample) {
        sample = std::move(s);
        break;
      }
    }
    if (sample) break;
  }
  if (!sample) throw DataError("unknown sample id '" + f.sample + "'");
  if (f.copy_paste) sample = copy_paste_ambiguity(*sample);

  Heatmap heatmap;
  if (f.oracle) {
    heatmap = gaussian_target(sample->target, sample->features.height, sample->features.width, 1.0);
  } else {
    heatmap = model_from_checkpoint(load_checkpoint(f.ckpt)).predict(*sample);
  }
  const auto p = peak(heatmap);
  const fs::path png = f.png;
  if (png.has_parent_path()) fs::create_directories(png.parent_path());
  write_png(png, render_prediction(sample->features, heatmap, p, {sample->target.x, sample->target.y}, f.scale));
  write_run_config(png.parent_path() / "run_config.json", rc);
  io.out << p.x << " " << p.y << "\n";
  return kExitOk;
}

// --- ablate ----------------------------------------------------------------

struct AblateFlags {
  CommonFlags common;
  TrainFlags train;
  std::string rows = "a,b,c,d,e,f,g";
  int seeds = 3;
};

int cmd_ablate(const AblateFlags& f, Io io) {
  RunConfig rc = f.common.resolve();
  f.train.apply(rc);
  require(rc.data, "--data");
  require(rc.out, "--out");
  if (f.seeds < 1) throw ConfigError("--seeds must be at least 1");
  AblationOptions opts;
  opts.rows = parse_ablation_rows(f.rows);
  rc.validate();
  apply_card(rc, rc.data);

  const auto train_set = load_split(rc.data, rc.train_split, io.err);
  const auto val_set = load_split(rc.data, rc.val_split, io.err, false);
  const auto test_set = load_split(rc.data, rc.test_split, io.err);
  if (train_set.empty() || test_set.empty()) throw DataError("ablation needs non-empty train and test splits");

  const fs::path out = rc.out;
  fs::create_directories(out);
  write_run_config(out / "run_config.json", rc);

  opts.seeds.clear();
  for (int i = 0; i < f.seeds; ++i) opts.seeds.push_back(rc.seed + static_cast<std::uint64_t>(i));
  opts.base_phrases = rc.orientation_phrases;
  opts.out_dir = out / "runs";
  opts.on_run = [&](const AblationRow& row, std::uint64_t seed, const MetricsReport& r) {
    io.err << "row (" << row.label << ") seed " << seed << ": a40 " << r.a40 << "  a80 " << r.a80 << "  a120 "
           << r.a120 << "  dist " << r.mean_dist << "\n";
  };
  const auto cells = ablation_run(rc.model, rc.train, train_set, val_set, test_set, opts);

  nlohmann::json report = nlohmann::json::array();
  for (const auto& c : cells) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : c.runs) runs.push_back(r.to_json());
    report.push_back({{"row", std::string(1, c.row.label)},
                      {"correlation", c.row.correlation},
                      {"distillation", c.row.distillation},
                      {"coords", c.row.coords},
                      {"seeds", opts.seeds},
                      {"runs", runs},
                      {"mean", c.mean.to_json()}});
  }
  const auto text = format_ablation_table(cells);
  write_json(out / "ablation.json", {{"split", rc.test_split}, {"rows", report}});
  write_text(out / "ablation.txt", text);
  io.out << text;
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spatial description resolution: synthesize data, train, evaluate and visualize.", "siri"};
  app.require_subcommand(1);

  SynthFlags synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic dataset");
  s->add_option("--config", synth.config, "JSON run config (synth section)");
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--scenes", synth.scenes, "scenes in the main split");
  s->add_option("--split", synth.split, "name of the main split");
  s->add_option("--val-scenes", synth.val_scenes, "also write a val split of this size");
  s->add_option("--test-scenes", synth.test_scenes, "also write a test split of this size");
  s->add_option("--grid", synth.grid, "grid size as RxC cells");
  s->add_option("--landmarks", synth.landmarks, "landmarks per scene");
  s->add_option("--hops", synth.hops, "relative moves from the anchor to the target");
  s->add_option("--cell-px", synth.cell_px, "pixels per grid cell");
  s->add_option("--channels", synth.channels, "feature channels");
  s->add_option("--duplicate-prob", synth.duplicate_prob, "probability of a same-looking distractor");
  s->add_option("--seed", synth.seed, "generation seed");
  s->add_flag("--previews", synth.previews, "write a PNG preview per scene");
  s->add_flag("--copy-paste-previews", synth.copy_paste_previews, "write copy-paste PNG previews");
  s->add_option("--scale", synth.scale, "preview pixels per feature pixel");

  TrainCmdFlags train;
  auto* t = app.add_subcommand("train", "train a model");
  train.common.add(t);
  train.train.add(t);
  t->add_option("--resume", train.resume, "continue from a last.ckpt");
  t->add_flag("--quiet", train.quiet, "no progress output");

  EvalFlags ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint or a baseline");
  ev.common.add(e);
  e->add_option("--ckpt", ev.ckpt, "checkpoint file");
  e->add_option("--baseline", ev.baseline, "random, center or average")
      ->check(CLI::IsMember({"random", "center", "average"}));
  e->add_option("--split", ev.split, "split to evaluate (default test)");
  e->add_flag("--ambiguity", ev.ambiguity, "paired original/copy-paste evaluation");

  PredictFlags pr;
  auto* p = app.add_subcommand("predict", "render one prediction");
  p->add_option("--config", pr.common.config, "JSON run config");
  p->add_option("--data", pr.common.data, "dataset directory");
  p->add_option("--ckpt", pr.ckpt, "checkpoint file");
  p->add_flag("--oracle", pr.oracle, "use the ground-truth heatmap instead of a model");
  p->add_option("--sample", pr.sample, "sample id")->required();
  p->add_option("--split", pr.split, "split holding the sample (default: search all)");
  p->add_option("--out", pr.png, "output PNG")->required();
  p->add_option("--scale", pr.scale, "image pixels per feature pixel");
  p->add_flag("--copy-paste", pr.copy_paste, "apply the copy-paste ambiguity first");

  AblateFlags ab;
  auto* a = app.add_subcommand("ablate", "train and evaluate ablation rows");
  ab.common.add(a);
  ab.train.add(a);
  a->add_option("--rows", ab.rows, "comma-separated row labels a..g");
  a->add_option("--seeds", ab.seeds, "runs per row");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const Io io{out, err};
  try {
    if (*s) return cmd_synth(synth, io);
    if (*t) return cmd_train(train, io);
    if (*e) return cmd_eval(ev, io);
    if (*p) return cmd_predict(pr, io);
    if (*a) return cmd_ablate(ab, io);
  } catch (const ConfigError& ex) {
    err << "config error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const DataError& ex) {
    err << "data error: " << ex.what() << "\n";
    return kExitData;
  } catch (const InputError& ex) {
    err << "data error: " << ex.what() << "\n";
    return kExitData;
  } catch (const GenerationError& ex) {
    err << "data error: " << ex.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& ex) {
    err << "i/o error: " << ex.what() << "\n";
    return kExitInternal;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace siri
