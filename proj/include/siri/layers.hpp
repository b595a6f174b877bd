#pragma once

#include <string>
#include <vector>

#include "siri/params.hpp"
#include "siri/tensor.hpp"

namespace siri {

// Unfolds a zero-padded input into a (C·k·k, oh·ow) patch matrix.
template <typename T>
Matrix<T> im2col(const FeatureMap<T>& x, int kernel, int stride, int pad, int out_h, int out_w);

// Adjoint of im2col.
template <typename T>
FeatureMap<T> col2im(const Matrix<T>& col, int channels, int height, int width, int kernel, int stride,
                     int pad, int out_h, int out_w);

template <typename T>
void elu_inplace(Matrix<T>& x);

// Multiplies `grad` by the ELU derivative, given the ELU output.
template <typename T>
void elu_backward(const Matrix<T>& out, Matrix<T>& grad);

// Same-padded 2D convolution with bias.
template <typename T>
struct Conv2d {
  int in = 0;
  int out = 0;
  int kernel = 1;
  int stride = 1;
  std::size_t weight = 0;
  std::size_t bias = 0;

  static Conv2d create(ParamStore<T>& store, const std::string& name, int in, int out, int kernel,
                       int stride = 1);

  int pad() const { return kernel / 2; }
  int out_size(int n) const { return (n + 2 * pad() - kernel) / stride + 1; }

  Matrix<T> unfold(const FeatureMap<T>& x) const;
  // Applies the filter bank to an already-unfolded input.
  FeatureMap<T> apply(const ParamStore<T>& store, const Matrix<T>& col, int out_h, int out_w) const;
  FeatureMap<T> forward(const ParamStore<T>& store, const FeatureMap<T>& x, Matrix<T>* col_cache = nullptr) const;

  // Accumulates weight/bias gradients and returns the gradient w.r.t. the
  // unfolded input.
  Matrix<T> backward_col(const ParamStore<T>& store, const Matrix<T>& col, const FeatureMap<T>& dy,
                         Gradients<T>& grads) const;
  FeatureMap<T> backward(const ParamStore<T>& store, const FeatureMap<T>& x, const Matrix<T>& col,
                         const FeatureMap<T>& dy, Gradients<T>& grads) const;
};

template <typename T>
struct Linear {
  int in = 0;
  int out = 0;
  std::size_t weight = 0;
  std::size_t bias = 0;

  static Linear create(ParamStore<T>& store, const std::string& name, int in, int out);

  Vector<T> forward(const ParamStore<T>& store, const Vector<T>& x) const;
  Vector<T> backward(const ParamStore<T>& store, const Vector<T>& x, const Vector<T>& dy,
                     Gradients<T>& grads) const;
};

// One direction of an LSTM (gate order i, f, g, o).
template <typename T>
struct LstmCell {
  int input = 0;
  int hidden = 0;
  std::size_t w_input = 0;
  std::size_t w_hidden = 0;
  std::size_t bias = 0;

  static LstmCell create(ParamStore<T>& store, const std::string& name, int input, int hidden);
};

template <typename T>
struct LstmTrace {
  std::vector<Vector<T>> gates;  // activated i, f, g, o per step
  std::vector<Vector<T>> cell;
  std::vector<Vector<T>> hidden;
};

template <typename T>
struct BiLstmTrace {
  std::vector<int> tokens;
  std::vector<Vector<T>> inputs;
  LstmTrace<T> forward;
  LstmTrace<T> backward;  // indexed by time step, not by processing order
};

// Token embedding followed by a single-layer BiLSTM whose per-step outputs
// are averaged into a fixed-length vector.
template <typename T>
struct LanguageEncoder {
  int vocab = 0;
  int embed_dim = 0;
  int hidden = 0;
  std::size_t embedding = 0;
  LstmCell<T> fwd;
  LstmCell<T> bwd;

  static LanguageEncoder create(ParamStore<T>& store, const std::string& name, int vocab, int embed_dim,
                                int hidden);

  int output_dim() const { return 2 * hidden; }
  Vector<T> forward(const ParamStore<T>& store, const std::vector<int>& tokens, BiLstmTrace<T>* trace) const;
  void backward(const ParamStore<T>& store, const BiLstmTrace<T>& trace, const Vector<T>& d_out,
                Gradients<T>& grads) const;
};

// Nearest-neighbour 2x upsampling cropped to (height, width).
template <typename T>
FeatureMap<T> upsample2x(const FeatureMap<T>& x, int height, int width);
template <typename T>
FeatureMap<T> upsample2x_backward(const FeatureMap<T>& dy, int src_height, int src_width);

// Softmax over every element of a 1×(h·w) logit row.
template <typename T>
Vector<T> spatial_softmax(const Matrix<T>& logits);

}  // namespace siri
