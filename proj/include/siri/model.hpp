#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "siri/data.hpp"
#include "siri/layers.hpp"
#include "siri/lexicon.hpp"
#include "siri/params.hpp"
#include "siri/vocabulary.hpp"

namespace siri {

enum class HeadKind { lingunet, conv };
// How the outputs of several open distillation branches are combined.
enum class DistillReduce { average, sum };
// signed: agent column maps to 0.5; absolute: |offset| from the agent column.
enum class CoordMode { signed_offset, absolute_offset };

struct ModelConfig {
  int in_channels = 32;
  int hidden_channels = 16;
  int lang_channels = 8;
  int lang_dim = 32;  // d_L; the BiLSTM hidden size is lang_dim / 2
  int token_dim = 32;
  int vocab_size = 0;
  int branches = 6;
  int glore_nodes = 8;
  int glore_stacks = 2;
  int lingunet_depth = 2;
  int conv_head_layers = 0;  // 0 picks the depth matching the LingUnet size
  bool use_correlation = true;
  bool use_distillation = true;
  bool use_coord_embedding = true;
  HeadKind head = HeadKind::lingunet;
  DistillReduce distill_reduce = DistillReduce::average;
  CoordMode coord_mode = CoordMode::signed_offset;
  std::uint64_t seed = 0;

  void validate() const;
  int head_in_channels() const { return use_coord_embedding ? hidden_channels : in_channels; }
  bool needs_language() const { return head == HeadKind::lingunet || use_coord_embedding; }

  nlohmann::json to_json() const;
  // Missing keys keep their defaults.
  static ModelConfig from_json(const nlohmann::json& j);
};

// Two parameter-free channels: 0 = x-map, 1 = y-map, both in [0,1].
template <typename T>
FeatureMap<T> coordinate_maps(int height, int width, CoordMode mode = CoordMode::signed_offset);

template <typename T>
struct GloreTrace {
  FeatureMap<T> input;
  Matrix<T> proj;    // N × hw
  Matrix<T> nodes;   // N × C
  Matrix<T> mixed;   // (I + A) · nodes
  Matrix<T> state;   // ELU(mixed · Wᵀ + b)
};

// Global reasoning unit: pixels are softly assigned to N latent nodes, the
// nodes exchange information over a learned fully connected graph, and the
// result is scattered back and added to the input.
template <typename T>
struct GloreUnit {
  int channels = 0;
  int nodes = 0;
  std::size_t proj_weight = 0, proj_bias = 0, adjacency = 0, state_weight = 0, state_bias = 0;

  static GloreUnit create(ParamStore<T>& store, const std::string& name, int channels, int nodes);
  FeatureMap<T> forward(const ParamStore<T>& store, const FeatureMap<T>& x, GloreTrace<T>* trace) const;
  FeatureMap<T> backward(const ParamStore<T>& store, const GloreTrace<T>& trace, const FeatureMap<T>& dy,
                         Gradients<T>& grads) const;
};

template <typename T>
struct DistillTrace {
  FeatureMap<T> input;
  Matrix<T> col;
  std::vector<int> active;
  std::vector<Matrix<T>> outputs;  // ELU output per active branch
  T scale = 1;
};

// One 5×5 conv + ELU per selected orientation phrase, switched by the gate
// vector, plus an identity skip.
template <typename T>
struct DistillBranches {
  std::vector<std::string> phrases;
  std::vector<Conv2d<T>> convs;
  DistillReduce reduce = DistillReduce::average;

  static DistillBranches create(ParamStore<T>& store, const std::vector<std::string>& phrases, int channels,
                                DistillReduce reduce);
  FeatureMap<T> forward(const ParamStore<T>& store, const FeatureMap<T>& x, const GateVector& gates,
                        DistillTrace<T>* trace) const;
  FeatureMap<T> backward(const ParamStore<T>& store, const DistillTrace<T>& trace, const FeatureMap<T>& dy,
                         Gradients<T>& grads) const;
};

template <typename T>
struct ConvStep {
  FeatureMap<T> input;
  Matrix<T> col;
  FeatureMap<T> output;
};

template <typename T>
struct HeadTrace {
  FeatureMap<T> input;
  // LingUnet
  std::vector<ConvStep<T>> encoder;      // level l output F_l
  std::vector<FeatureMap<T>> filtered;   // G_l = K_l · F_l
  std::vector<ConvStep<T>> decoder;      // decoder[l] produces U_{l+1}
  ConvStep<T> merge;
  // Plain conv stack
  std::vector<ConvStep<T>> layers;
  ConvStep<T> logits;
};

template <typename T>
struct LingUnetHead {
  int depth = 0;
  int channels = 0;
  std::vector<Conv2d<T>> encoder;
  std::vector<Conv2d<T>> decoder;
  Conv2d<T> merge;
  Conv2d<T> out;

  static LingUnetHead create(ParamStore<T>& store, int in_channels, int channels, int depth);
  Matrix<T> forward(const ParamStore<T>& store, const FeatureMap<T>& r, const std::vector<Matrix<T>>& filters,
                    HeadTrace<T>* trace) const;
  FeatureMap<T> backward(const ParamStore<T>& store, const HeadTrace<T>& trace,
                         const std::vector<Matrix<T>>& filters, const Matrix<T>& d_logits, Gradients<T>& grads,
                         std::vector<Matrix<T>>& d_filters) const;
};

template <typename T>
struct ConvHead {
  std::vector<Conv2d<T>> layers;
  Conv2d<T> out;

  static ConvHead create(ParamStore<T>& store, int in_channels, int channels, int hidden_layers);
  Matrix<T> forward(const ParamStore<T>& store, const FeatureMap<T>& r, HeadTrace<T>* trace) const;
  FeatureMap<T> backward(const ParamStore<T>& store, const HeadTrace<T>& trace, const Matrix<T>& d_logits,
                         Gradients<T>& grads) const;
};

// Hidden conv layers for the plain head so that its size tracks LingUnet's.
int matched_conv_head_layers(const ModelConfig& config);

template <typename T>
struct LanguageProjection {
  std::vector<Matrix<T>> filters;  // one hidden×hidden 1×1 kernel per LingUnet level
  Vector<T> lang;                  // broadcast to lang_map
};

template <typename T>
struct ForwardTrace {
  FeatureMap<T> input;
  GateVector gates;
  BiLstmTrace<T> language;
  Vector<T> embedding;  // L_I
  LanguageProjection<T> projection;
  std::vector<GloreTrace<T>> glore;
  FeatureMap<T> correlated;
  DistillTrace<T> distill;
  FeatureMap<T> distilled;
  ConvStep<T> fuse;
  FeatureMap<T> fused;
  HeadTrace<T> head;
  Matrix<T> logits;  // 1 × hw
  Vector<T> probabilities;
};

template <typename T>
struct ModelInput {
  FeatureMap<T> features;
  std::vector<int> tokens;
  GateVector gates;
};

template <typename T>
class SiriModel {
 public:
  SiriModel(ModelConfig config, OrientationLexicon lexicon, Vocabulary vocabulary);

  const ModelConfig& config() const { return config_; }
  const OrientationLexicon& lexicon() const { return lexicon_; }
  const Vocabulary& vocabulary() const { return vocabulary_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  ModelInput<T> prepare(const SdrSample& sample) const;

  // Individual stages.
  Vector<T> encode_language(const std::vector<int>& tokens, BiLstmTrace<T>* trace = nullptr) const;
  LanguageProjection<T> project_language(const Vector<T>& embedding) const;
  FeatureMap<T> glore_block(int stack, const FeatureMap<T>& x, GloreTrace<T>* trace = nullptr) const;
  FeatureMap<T> distill(const FeatureMap<T>& x, const GateVector& gates, DistillTrace<T>* trace = nullptr) const;
  FeatureMap<T> fuse(const FeatureMap<T>& coords, const FeatureMap<T>& lang_map, const FeatureMap<T>& distilled,
                     ConvStep<T>* trace = nullptr) const;
  FeatureMap<T> lang_map(const Vector<T>& lang, int height, int width) const;
  Matrix<T> head_logits(const FeatureMap<T>& r, const std::vector<Matrix<T>>& filters,
                        HeadTrace<T>* trace = nullptr) const;

  // Full pipeline. With keep_trace=false only logits/probabilities are filled.
  ForwardTrace<T> forward(const ModelInput<T>& input, bool keep_trace = true) const;
  Heatmap predict(const SdrSample& sample) const;

  // Accumulates gradients of the given logit gradient into `grads`.
  void backward(const ForwardTrace<T>& trace, const Matrix<T>& d_logits, Gradients<T>& grads) const;

  // Cross-entropy −Σ M log softmax(logits); accumulates its gradient.
  T loss_and_gradient(const ModelInput<T>& input, const Heatmap& target, Gradients<T>* grads) const;

  long long parameter_count() const { return params_.parameter_count(); }

  template <typename U>
  SiriModel<U> cast() const {
    SiriModel<U> out(config_, lexicon_, vocabulary_);
    out.params() = params_.template cast<U>();
    return out;
  }

 private:
  ModelConfig config_;
  OrientationLexicon lexicon_;
  Vocabulary vocabulary_;
  ParamStore<T> params_;

  LanguageEncoder<T> encoder_;
  std::vector<Linear<T>> filter_proj_;
  Linear<T> lang_proj_;
  std::vector<GloreUnit<T>> glore_;
  DistillBranches<T> branches_;
  Conv2d<T> fusion_;
  LingUnetHead<T> lingunet_;
  ConvHead<T> conv_head_;
};

template <typename T>
long long parameter_count(const ParamStore<T>& params) {
  return params.parameter_count();
}

}  // namespace siri
