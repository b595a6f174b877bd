#include "siri/model.hpp"

#include <algorithm>
#include <cmath>

namespace siri {

namespace {

const char* to_string(HeadKind h) { return h == HeadKind::lingunet ? "lingunet" : "conv"; }
const char* to_string(DistillReduce r) { return r == DistillReduce::average ? "average" : "sum"; }
const char* to_string(CoordMode m) { return m == CoordMode::signed_offset ? "signed" : "absolute"; }

std::string branch_name(const std::string& phrase) {
  std::string s = phrase;
  std::replace(s.begin(), s.end(), ' ', '_');
  return "distill." + s;
}

}  // namespace

void ModelConfig::validate() const {
  auto positive = [](int v, const char* field) {
    if (v <= 0) throw ConfigError(std::string("model.") + field + " must be positive");
  };
  positive(in_channels, "in_channels");
  positive(hidden_channels, "hidden_channels");
  positive(lang_channels, "lang_channels");
  positive(lang_dim, "lang_dim");
  positive(token_dim, "token_dim");
  positive(branches, "branches");
  positive(glore_nodes, "glore_nodes");
  positive(glore_stacks, "glore_stacks");
  positive(lingunet_depth, "lingunet_depth");
  if (vocab_size != 0 && vocab_size < 2) throw ConfigError("model.vocab_size must be 0 (from the vocabulary) or at least 2");
  if (lang_dim % 2 != 0) throw ConfigError("model.lang_dim must be even");
  if (head == HeadKind::lingunet && lang_dim % lingunet_depth != 0) {
    throw ConfigError("model.lang_dim must split evenly across lingunet_depth filter slices");
  }
  if (conv_head_layers < 0) throw ConfigError("model.conv_head_layers must be non-negative");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"in_channels", in_channels},
          {"hidden_channels", hidden_channels},
          {"lang_channels", lang_channels},
          {"lang_dim", lang_dim},
          {"token_dim", token_dim},
          {"vocab_size", vocab_size},
          {"branches", branches},
          {"glore_nodes", glore_nodes},
          {"glore_stacks", glore_stacks},
          {"lingunet_depth", lingunet_depth},
          {"conv_head_layers", conv_head_layers},
          {"use_correlation", use_correlation},
          {"use_distillation", use_distillation},
          {"use_coord_embedding", use_coord_embedding},
          {"head", to_string(head)},
          {"distill_reduce", to_string(distill_reduce)},
          {"coord_mode", to_string(coord_mode)},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.in_channels = j.value("in_channels", c.in_channels);
    c.hidden_channels = j.value("hidden_channels", c.hidden_channels);
    c.lang_channels = j.value("lang_channels", c.lang_channels);
    c.lang_dim = j.value("lang_dim", c.lang_dim);
    c.token_dim = j.value("token_dim", c.token_dim);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.branches = j.value("branches", c.branches);
    c.glore_nodes = j.value("glore_nodes", c.glore_nodes);
    c.glore_stacks = j.value("glore_stacks", c.glore_stacks);
    c.lingunet_depth = j.value("lingunet_depth", c.lingunet_depth);
    c.conv_head_layers = j.value("conv_head_layers", c.conv_head_layers);
    c.use_correlation = j.value("use_correlation", c.use_correlation);
    c.use_distillation = j.value("use_distillation", c.use_distillation);
    c.use_coord_embedding = j.value("use_coord_embedding", c.use_coord_embedding);
    c.seed = j.value("seed", c.seed);
    const auto head = j.value("head", std::string(to_string(c.head)));
    if (head == "lingunet") c.head = HeadKind::lingunet;
    else if (head == "conv") c.head = HeadKind::conv;
    else throw ConfigError("model.head must be 'lingunet' or 'conv', got '" + head + "'");
    const auto reduce = j.value("distill_reduce", std::string(to_string(c.distill_reduce)));
    if (reduce == "average") c.distill_reduce = DistillReduce::average;
    else if (reduce == "sum") c.distill_reduce = DistillReduce::sum;
    else throw ConfigError("model.distill_reduce must be 'average' or 'sum', got '" + reduce + "'");
    const auto mode = j.value("coord_mode", std::string(to_string(c.coord_mode)));
    if (mode == "signed") c.coord_mode = CoordMode::signed_offset;
    else if (mode == "absolute") c.coord_mode = CoordMode::absolute_offset;
    else throw ConfigError("model.coord_mode must be 'signed' or 'absolute', got '" + mode + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

template <typename T>
FeatureMap<T> coordinate_maps(int height, int width, CoordMode mode) {
  if (height < 2 || width < 2) throw ShapeError("coordinate maps need h, w >= 2");
  FeatureMap<T> m(2, height, width);
  for (int i = 0; i < height; ++i) {
    for (int j = 0; j < width; ++j) {
      const double x = static_cast<double>(j) / (width - 1);
      m.at(0, i, j) = static_cast<T>(mode == CoordMode::signed_offset ? x : std::abs(2.0 * x - 1.0));
      m.at(1, i, j) = static_cast<T>(static_cast<double>(height - 1 - i) / (height - 1));
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// GloRe

template <typename T>
GloreUnit<T> GloreUnit<T>::create(ParamStore<T>& store, const std::string& name, int channels, int nodes) {
  GloreUnit g;
  g.channels = channels;
  g.nodes = nodes;
  g.proj_weight = store.add(name + ".proj.weight", {nodes, channels}, Init::fan_in_uniform, channels);
  g.proj_bias = store.add(name + ".proj.bias", {nodes}, Init::zeros);
  g.adjacency = store.add(name + ".adjacency", {nodes, nodes}, Init::fan_in_uniform, nodes);
  g.state_weight = store.add(name + ".state.weight", {channels, channels}, Init::fan_in_uniform, channels);
  g.state_bias = store.add(name + ".state.bias", {channels}, Init::zeros);
  return g;
}

template <typename T>
FeatureMap<T> GloreUnit<T>::forward(const ParamStore<T>& store, const FeatureMap<T>& x, GloreTrace<T>* trace) const {
  if (x.channels != channels) throw ShapeError("glore: channel mismatch");
  const T inv_area = T(1) / static_cast<T>(x.area());
  Matrix<T> proj = store.matrix(proj_weight) * x.values;
  proj.colwise() += store[proj_bias].value;
  Matrix<T> nodes_feat = (proj * x.values.transpose()) * inv_area;
  Matrix<T> mixed = nodes_feat + store.matrix(adjacency) * nodes_feat;
  Matrix<T> state = mixed * store.matrix(state_weight).transpose();
  state.rowwise() += store[state_bias].value.transpose();
  elu_inplace(state);

  FeatureMap<T> y(x.height, x.width, x.values);
  y.values.noalias() += state.transpose() * proj;
  if (trace) {
    trace->input = x;
    trace->proj = std::move(proj);
    trace->nodes = std::move(nodes_feat);
    trace->mixed = std::move(mixed);
    trace->state = std::move(state);
  }
  return y;
}

template <typename T>
FeatureMap<T> GloreUnit<T>::backward(const ParamStore<T>& store, const GloreTrace<T>& tr, const FeatureMap<T>& dy,
                                     Gradients<T>& grads) const {
  const auto& x = tr.input.values;
  const T inv_area = T(1) / static_cast<T>(tr.input.area());

  Matrix<T> d_state = tr.proj * dy.values.transpose();       // N × C
  Matrix<T> d_proj = tr.state * dy.values;                    // N × hw
  elu_backward(tr.state, d_state);
  grads.matrix(store, state_weight).noalias() += d_state.transpose() * tr.mixed;
  grads.values[state_bias] += d_state.colwise().sum().transpose();
  const Matrix<T> d_mixed = d_state * store.matrix(state_weight);
  grads.matrix(store, adjacency).noalias() += d_mixed * tr.nodes.transpose();
  const Matrix<T> d_nodes = d_mixed + store.matrix(adjacency).transpose() * d_mixed;

  d_proj.noalias() += (d_nodes * x) * inv_area;
  FeatureMap<T> dx(tr.input.height, tr.input.width, dy.values);
  dx.values.noalias() += (d_nodes.transpose() * tr.proj) * inv_area;
  grads.matrix(store, proj_weight).noalias() += d_proj * x.transpose();
  grads.values[proj_bias] += d_proj.rowwise().sum();
  dx.values.noalias() += store.matrix(proj_weight).transpose() * d_proj;
  return dx;
}

// ---------------------------------------------------------------------------
// Distillation

template <typename T>
DistillBranches<T> DistillBranches<T>::create(ParamStore<T>& store, const std::vector<std::string>& phrases,
                                              int channels, DistillReduce reduce) {
  DistillBranches d;
  d.phrases = phrases;
  d.reduce = reduce;
  for (const auto& p : phrases) d.convs.push_back(Conv2d<T>::create(store, branch_name(p), channels, channels, 5));
  return d;
}

template <typename T>
FeatureMap<T> DistillBranches<T>::forward(const ParamStore<T>& store, const FeatureMap<T>& x,
                                          const GateVector& gates, DistillTrace<T>* trace) const {
  if (gates.size() != phrases.size()) {
    throw ShapeError("distill: gate vector has " + std::to_string(gates.size()) + " bits for " +
                     std::to_string(phrases.size()) + " branches");
  }
  // Branches are visited in phrase order so the result does not depend on
  // how the lexicon happens to order them.
  std::vector<int> active;
  for (std::size_t k = 0; k < gates.size(); ++k) {
    if (gates.bits[k]) active.push_back(static_cast<int>(k));
  }
  std::sort(active.begin(), active.end(), [&](int a, int b) { return phrases[a] < phrases[b]; });

  FeatureMap<T> y = x;
  if (trace) {
    trace->input = x;
    trace->active = active;
    trace->outputs.clear();
    trace->col = Matrix<T>();
  }
  if (active.empty()) return y;

  const T scale = reduce == DistillReduce::average ? T(1) / static_cast<T>(active.size()) : T(1);
  Matrix<T> col = convs.front().unfold(x);
  for (int k : active) {
    auto branch = convs[k].apply(store, col, x.height, x.width);
    elu_inplace(branch.values);
    y.values += scale * branch.values;
    if (trace) trace->outputs.push_back(std::move(branch.values));
  }
  if (trace) {
    trace->scale = scale;
    trace->col = std::move(col);
  }
  return y;
}

template <typename T>
FeatureMap<T> DistillBranches<T>::backward(const ParamStore<T>& store, const DistillTrace<T>& tr,
                                           const FeatureMap<T>& dy, Gradients<T>& grads) const {
  FeatureMap<T> dx = dy;
  if (tr.active.empty()) return dx;
  Matrix<T> d_col = Matrix<T>::Zero(tr.col.rows(), tr.col.cols());
  for (std::size_t i = 0; i < tr.active.size(); ++i) {
    FeatureMap<T> d_branch(dy.height, dy.width, tr.scale * dy.values);
    elu_backward(tr.outputs[i], d_branch.values);
    d_col += convs[tr.active[i]].backward_col(store, tr.col, d_branch, grads);
  }
  const auto& c = convs.front();
  dx.values += col2im(d_col, tr.input.channels, tr.input.height, tr.input.width, c.kernel, 1, c.pad(),
                      tr.input.height, tr.input.width)
                   .values;
  return dx;
}

// ---------------------------------------------------------------------------
// Heads

namespace {

template <typename T>
FeatureMap<T> conv_elu(const ParamStore<T>& store, const Conv2d<T>& conv, const FeatureMap<T>& x,
                       ConvStep<T>* step) {
  auto y = conv.forward(store, x, step ? &step->col : nullptr);
  elu_inplace(y.values);
  if (step) {
    step->input = x;
    step->output = y;
  }
  return y;
}

template <typename T>
FeatureMap<T> conv_elu_backward(const ParamStore<T>& store, const Conv2d<T>& conv, const ConvStep<T>& step,
                                FeatureMap<T> dy, Gradients<T>& grads) {
  elu_backward(step.output.values, dy.values);
  return conv.backward(store, step.input, step.col, dy, grads);
}

}  // namespace

template <typename T>
LingUnetHead<T> LingUnetHead<T>::create(ParamStore<T>& store, int in_channels, int channels, int depth) {
  LingUnetHead h;
  h.depth = depth;
  h.channels = channels;
  for (int l = 1; l <= depth; ++l) {
    h.encoder.push_back(Conv2d<T>::create(store, "head.encoder" + std::to_string(l),
                                          l == 1 ? in_channels : channels, channels, 3, 2));
  }
  for (int l = 1; l < depth; ++l) {
    h.decoder.push_back(Conv2d<T>::create(store, "head.decoder" + std::to_string(l), 2 * channels, channels, 3));
  }
  h.merge = Conv2d<T>::create(store, "head.merge", channels + in_channels, channels, 3);
  h.out = Conv2d<T>::create(store, "head.logits", channels, 1, 1);
  return h;
}

template <typename T>
Matrix<T> LingUnetHead<T>::forward(const ParamStore<T>& store, const FeatureMap<T>& r,
                                   const std::vector<Matrix<T>>& filters, HeadTrace<T>* trace) const {
  if (static_cast<int>(filters.size()) != depth) throw ShapeError("lingunet: one filter per level required");
  HeadTrace<T> local;
  auto& tr = trace ? *trace : local;
  tr.input = r;
  tr.encoder.assign(depth, {});
  tr.filtered.assign(depth, {});
  tr.decoder.assign(std::max(depth - 1, 0), {});

  const FeatureMap<T>* prev = &r;
  for (int l = 0; l < depth; ++l) {
    conv_elu(store, encoder[l], *prev, &tr.encoder[l]);
    const auto& f = tr.encoder[l].output;
    tr.filtered[l] = FeatureMap<T>(f.height, f.width, filters[l] * f.values);
    prev = &tr.encoder[l].output;
  }
  FeatureMap<T> up_input = tr.filtered[depth - 1];
  for (int l = depth - 2; l >= 0; --l) {
    const auto& skip = tr.filtered[l];
    const auto up = upsample2x(up_input, skip.height, skip.width);
    const auto cat = concat_channels<T>({&up, &skip});
    up_input = conv_elu(store, decoder[l], cat, &tr.decoder[l]);
  }
  const auto up = upsample2x(up_input, r.height, r.width);
  const auto cat = concat_channels<T>({&up, &r});
  const auto merged = conv_elu(store, merge, cat, &tr.merge);
  auto logits = out.forward(store, merged, &tr.logits.col);
  tr.logits.input = merged;
  return std::move(logits.values);
}

template <typename T>
FeatureMap<T> LingUnetHead<T>::backward(const ParamStore<T>& store, const HeadTrace<T>& tr,
                                        const std::vector<Matrix<T>>& filters, const Matrix<T>& d_logits,
                                        Gradients<T>& grads, std::vector<Matrix<T>>& d_filters) const {
  const auto& r = tr.input;
  FeatureMap<T> d_out(r.height, r.width, d_logits);
  auto d_merged = out.backward(store, tr.logits.input, tr.logits.col, d_out, grads);
  auto d_cat = conv_elu_backward(store, merge, tr.merge, std::move(d_merged), grads);

  FeatureMap<T> d_r(r.height, r.width, d_cat.values.bottomRows(r.channels));
  const auto& first = tr.encoder[0].output;
  FeatureMap<T> d_up(r.height, r.width, d_cat.values.topRows(channels));
  FeatureMap<T> d_u = upsample2x_backward(d_up, first.height, first.width);

  std::vector<FeatureMap<T>> d_filtered(depth);
  for (int l = 0; l < depth - 1; ++l) {
    auto d_dec = conv_elu_backward(store, decoder[l], tr.decoder[l], std::move(d_u), grads);
    const auto& skip = tr.filtered[l];
    d_filtered[l] = FeatureMap<T>(skip.height, skip.width, d_dec.values.bottomRows(channels));
    FeatureMap<T> d_up_l(skip.height, skip.width, d_dec.values.topRows(channels));
    const auto& next = tr.encoder[l + 1].output;
    d_u = upsample2x_backward(d_up_l, next.height, next.width);
  }
  d_filtered[depth - 1] = std::move(d_u);

  d_filters.assign(depth, Matrix<T>());
  FeatureMap<T> d_f;
  for (int l = depth - 1; l >= 0; --l) {
    const auto& f = tr.encoder[l].output;
    d_filters[l] = d_filtered[l].values * f.values.transpose();
    FeatureMap<T> d_level(f.height, f.width, filters[l].transpose() * d_filtered[l].values);
    if (l < depth - 1) d_level.values += d_f.values;
    d_f = conv_elu_backward(store, encoder[l], tr.encoder[l], std::move(d_level), grads);
  }
  d_r.values += d_f.values;
  return d_r;
}

template <typename T>
ConvHead<T> ConvHead<T>::create(ParamStore<T>& store, int in_channels, int channels, int hidden_layers) {
  ConvHead h;
  h.layers.push_back(Conv2d<T>::create(store, "head.conv0", in_channels, channels, 3));
  for (int i = 1; i <= hidden_layers; ++i) {
    h.layers.push_back(Conv2d<T>::create(store, "head.conv" + std::to_string(i), channels, channels, 3));
  }
  h.out = Conv2d<T>::create(store, "head.logits", channels, 1, 1);
  return h;
}

template <typename T>
Matrix<T> ConvHead<T>::forward(const ParamStore<T>& store, const FeatureMap<T>& r, HeadTrace<T>* trace) const {
  HeadTrace<T> local;
  auto& tr = trace ? *trace : local;
  tr.input = r;
  tr.layers.assign(layers.size(), {});
  FeatureMap<T> h = r;
  for (std::size_t i = 0; i < layers.size(); ++i) h = conv_elu(store, layers[i], h, trace ? &tr.layers[i] : nullptr);
  auto logits = out.forward(store, h);
  if (trace) tr.logits.input = std::move(h);
  return std::move(logits.values);
}

template <typename T>
FeatureMap<T> ConvHead<T>::backward(const ParamStore<T>& store, const HeadTrace<T>& tr, const Matrix<T>& d_logits,
                                    Gradients<T>& grads) const {
  FeatureMap<T> d(tr.input.height, tr.input.width, d_logits);
  d = out.backward(store, tr.logits.input, tr.logits.col, d, grads);
  for (std::size_t i = layers.size(); i-- > 0;) d = conv_elu_backward(store, layers[i], tr.layers[i], std::move(d), grads);
  return d;
}

int matched_conv_head_layers(const ModelConfig& c) {
  const long long ch = c.hidden_channels, cin = c.head_in_channels(), depth = c.lingunet_depth;
  const long long conv3 = 9 * ch * ch + ch;
  long long lingunet = (9 * cin * ch + ch) + (depth - 1) * conv3;    // encoder
  lingunet += (depth - 1) * (9 * 2 * ch * ch + ch);                  // decoder
  lingunet += 9 * (ch + cin) * ch + ch;                              // merge
  lingunet += depth * (ch * ch * (c.lang_dim / depth) + ch * ch);    // dynamic filter projections
  const long long base = 9 * cin * ch + ch;
  const double layers = static_cast<double>(lingunet - base) / static_cast<double>(conv3);
  return std::max(1, static_cast<int>(std::lround(layers)));
}

// ---------------------------------------------------------------------------
// Model

template <typename T>
SiriModel<T>::SiriModel(ModelConfig config, OrientationLexicon lexicon, Vocabulary vocabulary)
    : config_(std::move(config)), lexicon_(std::move(lexicon)), vocabulary_(std::move(vocabulary)) {
  if (config_.vocab_size == 0) config_.vocab_size = vocabulary_.size();
  config_.validate();
  if (config_.vocab_size != vocabulary_.size()) {
    throw ConfigError("model.vocab_size " + std::to_string(config_.vocab_size) + " does not match vocabulary size " +
                      std::to_string(vocabulary_.size()));
  }
  if (config_.branches != lexicon_.k()) {
    throw ConfigError("model.branches " + std::to_string(config_.branches) + " does not match lexicon k=" +
                      std::to_string(lexicon_.k()));
  }
  const int ch = config_.hidden_channels;
  if (config_.needs_language()) {
    encoder_ = LanguageEncoder<T>::create(params_, "language", config_.vocab_size, config_.token_dim,
                                          config_.lang_dim / 2);
  }
  if (config_.head == HeadKind::lingunet) {
    const int slice = config_.lang_dim / config_.lingunet_depth;
    for (int l = 1; l <= config_.lingunet_depth; ++l) {
      filter_proj_.push_back(Linear<T>::create(params_, "projection.filter" + std::to_string(l), slice, ch * ch));
    }
  }
  if (config_.use_coord_embedding) {
    lang_proj_ = Linear<T>::create(params_, "projection.lang_map", config_.lang_dim, config_.lang_channels);
  }
  if (config_.use_correlation) {
    for (int s = 0; s < config_.glore_stacks; ++s) {
      glore_.push_back(GloreUnit<T>::create(params_, "glore" + std::to_string(s), config_.in_channels,
                                            config_.glore_nodes));
    }
  }
  if (config_.use_distillation) {
    branches_ = DistillBranches<T>::create(params_, lexicon_.selected(), config_.in_channels, config_.distill_reduce);
  }
  if (config_.use_coord_embedding) {
    fusion_ = Conv2d<T>::create(params_, "fusion", 2 + config_.lang_channels + config_.in_channels, ch, 3);
  }
  if (config_.head == HeadKind::lingunet) {
    lingunet_ = LingUnetHead<T>::create(params_, config_.head_in_channels(), ch, config_.lingunet_depth);
  } else {
    const int layers = config_.conv_head_layers > 0 ? config_.conv_head_layers : matched_conv_head_layers(config_);
    conv_head_ = ConvHead<T>::create(params_, config_.head_in_channels(), ch, layers);
  }
  params_.initialize(config_.seed);
}

template <typename T>
ModelInput<T> SiriModel<T>::prepare(const SdrSample& sample) const {
  if (sample.features.channels != config_.in_channels) {
    throw ShapeError("sample '" + sample.id + "' has " + std::to_string(sample.features.channels) +
                     " channels, model expects " + std::to_string(config_.in_channels));
  }
  return {to_feature_map<T>(sample.features), vocabulary_.encode(sample.text), gates_for(sample.text, lexicon_)};
}

template <typename T>
Vector<T> SiriModel<T>::encode_language(const std::vector<int>& tokens, BiLstmTrace<T>* trace) const {
  if (!config_.needs_language()) throw ConfigError("this configuration has no language encoder");
  return encoder_.forward(params_, tokens, trace);
}

template <typename T>
LanguageProjection<T> SiriModel<T>::project_language(const Vector<T>& embedding) const {
  if (embedding.size() != config_.lang_dim) throw ShapeError("language embedding has the wrong size");
  LanguageProjection<T> out;
  const int ch = config_.hidden_channels;
  if (!filter_proj_.empty()) {
    const int slice = config_.lang_dim / config_.lingunet_depth;
    for (std::size_t l = 0; l < filter_proj_.size(); ++l) {
      const Vector<T> flat =
          filter_proj_[l].forward(params_, embedding.segment(static_cast<Eigen::Index>(l) * slice, slice));
      out.filters.push_back(Eigen::Map<const Matrix<T>>(flat.data(), ch, ch));
    }
  }
  if (config_.use_coord_embedding) out.lang = lang_proj_.forward(params_, embedding);
  return out;
}

template <typename T>
FeatureMap<T> SiriModel<T>::glore_block(int stack, const FeatureMap<T>& x, GloreTrace<T>* trace) const {
  return glore_.at(static_cast<std::size_t>(stack)).forward(params_, x, trace);
}

template <typename T>
FeatureMap<T> SiriModel<T>::distill(const FeatureMap<T>& x, const GateVector& gates, DistillTrace<T>* trace) const {
  if (!config_.use_distillation) return x;
  return branches_.forward(params_, x, gates, trace);
}

template <typename T>
FeatureMap<T> SiriModel<T>::lang_map(const Vector<T>& lang, int height, int width) const {
  FeatureMap<T> m(static_cast<int>(lang.size()), height, width);
  m.values.colwise() = lang;
  return m;
}

template <typename T>
FeatureMap<T> SiriModel<T>::fuse(const FeatureMap<T>& coords, const FeatureMap<T>& lmap,
                                 const FeatureMap<T>& distilled, ConvStep<T>* trace) const {
  if (!config_.use_coord_embedding) return distilled;
  if (!coords.same_spatial(distilled) || !lmap.same_spatial(distilled)) {
    throw ShapeError("fuse: inputs must share spatial dims");
  }
  const auto cat = concat_channels<T>({&coords, &lmap, &distilled});
  auto y = fusion_.forward(params_, cat, trace ? &trace->col : nullptr);
  if (trace) trace->input = cat;
  return y;
}

template <typename T>
Matrix<T> SiriModel<T>::head_logits(const FeatureMap<T>& r, const std::vector<Matrix<T>>& filters,
                                    HeadTrace<T>* trace) const {
  if (r.channels != config_.head_in_channels()) throw ShapeError("head: unexpected input channels");
  if (config_.head == HeadKind::lingunet) return lingunet_.forward(params_, r, filters, trace);
  return conv_head_.forward(params_, r, trace);
}

template <typename T>
ForwardTrace<T> SiriModel<T>::forward(const ModelInput<T>& in, bool keep) const {
  ForwardTrace<T> tr;
  const auto& x0 = in.features;
  if (x0.channels != config_.in_channels) throw ShapeError("forward: input channel mismatch");
  if (keep) {
    tr.input = x0;
    tr.gates = in.gates;
  }
  if (config_.needs_language()) {
    tr.embedding = encode_language(in.tokens, keep ? &tr.language : nullptr);
    tr.projection = project_language(tr.embedding);
  }

  FeatureMap<T> x = x0;
  if (config_.use_correlation) {
    tr.glore.resize(keep ? glore_.size() : 0);
    for (std::size_t s = 0; s < glore_.size(); ++s) x = glore_[s].forward(params_, x, keep ? &tr.glore[s] : nullptr);
  }
  if (keep) tr.correlated = x;
  FeatureMap<T> g = distill(x, in.gates, keep ? &tr.distill : nullptr);
  FeatureMap<T> r;
  if (config_.use_coord_embedding) {
    const auto coords = coordinate_maps<T>(g.height, g.width, config_.coord_mode);
    const auto lmap = lang_map(tr.projection.lang, g.height, g.width);
    r = fuse(coords, lmap, g, keep ? &tr.fuse : nullptr);
  } else {
    r = g;
  }
  if (keep) {
    tr.distilled = std::move(g);
    tr.fused = r;
  }
  tr.logits = head_logits(r, tr.projection.filters, keep ? &tr.head : nullptr);
  tr.probabilities = spatial_softmax(tr.logits);
  return tr;
}

template <typename T>
Heatmap SiriModel<T>::predict(const SdrSample& sample) const {
  const auto tr = forward(prepare(sample), false);
  Heatmap m{sample.features.height, sample.features.width, {}};
  m.values.resize(static_cast<std::size_t>(tr.probabilities.size()));
  for (Eigen::Index i = 0; i < tr.probabilities.size(); ++i) m.values[i] = static_cast<double>(tr.probabilities[i]);
  return m;
}

template <typename T>
void SiriModel<T>::backward(const ForwardTrace<T>& tr, const Matrix<T>& d_logits, Gradients<T>& grads) const {
  FeatureMap<T> d_r;
  std::vector<Matrix<T>> d_filters;
  if (config_.head == HeadKind::lingunet) {
    d_r = lingunet_.backward(params_, tr.head, tr.projection.filters, d_logits, grads, d_filters);
  } else {
    d_r = conv_head_.backward(params_, tr.head, d_logits, grads);
  }

  Vector<T> d_embedding;
  if (config_.needs_language()) d_embedding = Vector<T>::Zero(config_.lang_dim);

  FeatureMap<T> d_g;
  if (config_.use_coord_embedding) {
    auto d_cat = fusion_.backward(params_, tr.fuse.input, tr.fuse.col, d_r, grads);
    const Vector<T> d_lang = d_cat.values.middleRows(2, config_.lang_channels).rowwise().sum();
    d_embedding += lang_proj_.backward(params_, tr.embedding, d_lang, grads);
    d_g = FeatureMap<T>(d_r.height, d_r.width, d_cat.values.bottomRows(config_.in_channels));
  } else {
    d_g = std::move(d_r);
  }

  if (!d_filters.empty()) {
    const int slice = config_.lang_dim / config_.lingunet_depth;
    for (std::size_t l = 0; l < filter_proj_.size(); ++l) {
      const Vector<T> d_flat = Eigen::Map<const Vector<T>>(d_filters[l].data(), d_filters[l].size());
      const auto seg = tr.embedding.segment(static_cast<Eigen::Index>(l) * slice, slice);
      d_embedding.segment(static_cast<Eigen::Index>(l) * slice, slice) +=
          filter_proj_[l].backward(params_, seg, d_flat, grads);
    }
  }
  if (config_.needs_language()) encoder_.backward(params_, tr.language, d_embedding, grads);

  FeatureMap<T> d_x = config_.use_distillation ? branches_.backward(params_, tr.distill, d_g, grads) : d_g;
  if (config_.use_correlation) {
    for (std::size_t s = glore_.size(); s-- > 0;) d_x = glore_[s].backward(params_, tr.glore[s], d_x, grads);
  }
}

template <typename T>
T SiriModel<T>::loss_and_gradient(const ModelInput<T>& input, const Heatmap& target, Gradients<T>* grads) const {
  const auto tr = forward(input, grads != nullptr);
  if (target.height != input.features.height || target.width != input.features.width) {
    throw ShapeError("loss: target heatmap dims do not match the features");
  }
  const auto& z = tr.logits;
  const T peak = z.maxCoeff();
  T total = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) total += std::exp(z.data()[i] - peak);
  const T lse = peak + std::log(total);
  T loss = 0, mass = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const T m = static_cast<T>(target.values[i]);
    loss -= m * (z.data()[i] - lse);
    mass += m;
  }
  if (grads) {
    Matrix<T> d(1, z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) d(0, i) = tr.probabilities[i] * mass - static_cast<T>(target.values[i]);
    backward(tr, d, *grads);
  }
  return loss;
}

template FeatureMap<float> coordinate_maps<float>(int, int, CoordMode);
template FeatureMap<double> coordinate_maps<double>(int, int, CoordMode);
template struct GloreUnit<float>;
template struct GloreUnit<double>;
template struct DistillBranches<float>;
template struct DistillBranches<double>;
template struct LingUnetHead<float>;
template struct LingUnetHead<double>;
template struct ConvHead<float>;
template struct ConvHead<double>;
template class SiriModel<float>;
template class SiriModel<double>;

}  // namespace siri
