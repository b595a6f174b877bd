#include "siri/layers.hpp"

#include <cmath>

namespace siri {

template <typename T>
Matrix<T> im2col(const FeatureMap<T>& x, int kernel, int stride, int pad, int out_h, int out_w) {
  Matrix<T> col(static_cast<Eigen::Index>(x.channels) * kernel * kernel,
                static_cast<Eigen::Index>(out_h) * out_w);
  for (int c = 0; c < x.channels; ++c) {
    const T* src = x.values.row(c).data();
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        T* dst = col.row((c * kernel + ky) * kernel + kx).data();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + ky - pad;
          T* d = dst + oy * out_w;
          if (iy < 0 || iy >= x.height) {
            std::fill(d, d + out_w, T(0));
            continue;
          }
          const T* s = src + iy * x.width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + kx - pad;
            d[ox] = (ix >= 0 && ix < x.width) ? s[ix] : T(0);
          }
        }
      }
    }
  }
  return col;
}

template <typename T>
FeatureMap<T> col2im(const Matrix<T>& col, int channels, int height, int width, int kernel, int stride,
                     int pad, int out_h, int out_w) {
  FeatureMap<T> x(channels, height, width);
  for (int c = 0; c < channels; ++c) {
    T* dst = x.values.row(c).data();
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const T* src = col.row((c * kernel + ky) * kernel + kx).data();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= height) continue;
          T* d = dst + iy * width;
          const T* s = src + oy * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < width) d[ix] += s[ox];
          }
        }
      }
    }
  }
  return x;
}

template <typename T>
void elu_inplace(Matrix<T>& x) {
  x = x.unaryExpr([](T v) { return v > T(0) ? v : std::expm1(v); });
}

template <typename T>
void elu_backward(const Matrix<T>& out, Matrix<T>& grad) {
  grad = grad.binaryExpr(out, [](T g, T y) { return y > T(0) ? g : g * (y + T(1)); });
}

template <typename T>
Conv2d<T> Conv2d<T>::create(ParamStore<T>& store, const std::string& name, int in, int out, int kernel,
                            int stride) {
  Conv2d conv;
  conv.in = in;
  conv.out = out;
  conv.kernel = kernel;
  conv.stride = stride;
  const int fan_in = in * kernel * kernel;
  conv.weight = store.add(name + ".weight", {out, in, kernel, kernel}, Init::fan_in_uniform, fan_in);
  conv.bias = store.add(name + ".bias", {out}, Init::zeros);
  return conv;
}

template <typename T>
Matrix<T> Conv2d<T>::unfold(const FeatureMap<T>& x) const {
  if (kernel == 1 && stride == 1) return x.values;
  return im2col(x, kernel, stride, pad(), out_size(x.height), out_size(x.width));
}

template <typename T>
FeatureMap<T> Conv2d<T>::apply(const ParamStore<T>& store, const Matrix<T>& col, int out_h, int out_w) const {
  FeatureMap<T> y;
  y.channels = out;
  y.height = out_h;
  y.width = out_w;
  y.values.noalias() = store.matrix(weight) * col;
  y.values.colwise() += store[bias].value;
  return y;
}

template <typename T>
FeatureMap<T> Conv2d<T>::forward(const ParamStore<T>& store, const FeatureMap<T>& x, Matrix<T>* col_cache) const {
  if (x.channels != in) {
    throw ShapeError("conv: expected " + std::to_string(in) + " channels, got " + std::to_string(x.channels));
  }
  const int oh = out_size(x.height), ow = out_size(x.width);
  if (kernel == 1 && stride == 1) {
    if (col_cache) *col_cache = Matrix<T>();
    return apply(store, x.values, oh, ow);
  }
  Matrix<T> col = im2col(x, kernel, stride, pad(), oh, ow);
  auto y = apply(store, col, oh, ow);
  if (col_cache) *col_cache = std::move(col);
  return y;
}

template <typename T>
Matrix<T> Conv2d<T>::backward_col(const ParamStore<T>& store, const Matrix<T>& col, const FeatureMap<T>& dy,
                                  Gradients<T>& grads) const {
  grads.matrix(store, weight).noalias() += dy.values * col.transpose();
  grads.values[bias] += dy.values.rowwise().sum();
  return store.matrix(weight).transpose() * dy.values;
}

template <typename T>
FeatureMap<T> Conv2d<T>::backward(const ParamStore<T>& store, const FeatureMap<T>& x, const Matrix<T>& col,
                                  const FeatureMap<T>& dy, Gradients<T>& grads) const {
  if (kernel == 1 && stride == 1) {
    auto dcol = backward_col(store, x.values, dy, grads);
    return FeatureMap<T>(x.height, x.width, std::move(dcol));
  }
  const auto dcol = backward_col(store, col, dy, grads);
  return col2im(dcol, x.channels, x.height, x.width, kernel, stride, pad(), dy.height, dy.width);
}

template <typename T>
Linear<T> Linear<T>::create(ParamStore<T>& store, const std::string& name, int in, int out) {
  Linear l;
  l.in = in;
  l.out = out;
  l.weight = store.add(name + ".weight", {out, in}, Init::fan_in_uniform, in);
  l.bias = store.add(name + ".bias", {out}, Init::zeros);
  return l;
}

template <typename T>
Vector<T> Linear<T>::forward(const ParamStore<T>& store, const Vector<T>& x) const {
  Vector<T> y = store[bias].value;
  y.noalias() += store.matrix(weight) * x;
  return y;
}

template <typename T>
Vector<T> Linear<T>::backward(const ParamStore<T>& store, const Vector<T>& x, const Vector<T>& dy,
                              Gradients<T>& grads) const {
  grads.matrix(store, weight).noalias() += dy * x.transpose();
  grads.values[bias] += dy;
  return store.matrix(weight).transpose() * dy;
}

template <typename T>
LstmCell<T> LstmCell<T>::create(ParamStore<T>& store, const std::string& name, int input, int hidden) {
  LstmCell cell;
  cell.input = input;
  cell.hidden = hidden;
  cell.w_input = store.add(name + ".w_input", {4 * hidden, input}, Init::fan_in_uniform, input);
  cell.w_hidden = store.add(name + ".w_hidden", {4 * hidden, hidden}, Init::orthogonal);
  cell.bias = store.add(name + ".bias", {4 * hidden}, Init::lstm_bias);
  return cell;
}

namespace {

template <typename T>
T sigmoid(T v) {
  return T(1) / (T(1) + std::exp(-v));
}

template <typename T>
void run_lstm(const ParamStore<T>& store, const LstmCell<T>& cell, const std::vector<Vector<T>>& inputs,
              bool reverse, LstmTrace<T>& trace) {
  const int steps = static_cast<int>(inputs.size());
  const int h = cell.hidden;
  trace.gates.assign(steps, Vector<T>());
  trace.cell.assign(steps, Vector<T>());
  trace.hidden.assign(steps, Vector<T>());
  Vector<T> h_prev = Vector<T>::Zero(h), c_prev = Vector<T>::Zero(h);
  const auto w_in = store.matrix(cell.w_input);
  const auto w_hid = store.matrix(cell.w_hidden);
  for (int i = 0; i < steps; ++i) {
    const int t = reverse ? steps - 1 - i : i;
    Vector<T> z = store[cell.bias].value;
    z.noalias() += w_in * inputs[t];
    z.noalias() += w_hid * h_prev;
    for (int k = 0; k < h; ++k) {
      z[k] = sigmoid(z[k]);
      z[h + k] = sigmoid(z[h + k]);
      z[2 * h + k] = std::tanh(z[2 * h + k]);
      z[3 * h + k] = sigmoid(z[3 * h + k]);
    }
    Vector<T> c = z.segment(h, h).cwiseProduct(c_prev) + z.segment(0, h).cwiseProduct(z.segment(2 * h, h));
    Vector<T> hid = z.segment(3 * h, h).cwiseProduct(c.unaryExpr([](T v) { return std::tanh(v); }));
    trace.gates[t] = std::move(z);
    trace.cell[t] = c;
    trace.hidden[t] = hid;
    h_prev = std::move(hid);
    c_prev = std::move(c);
  }
}

template <typename T>
void backprop_lstm(const ParamStore<T>& store, const LstmCell<T>& cell, const std::vector<Vector<T>>& inputs,
                   const LstmTrace<T>& trace, const std::vector<Vector<T>>& d_hidden, bool reverse,
                   Gradients<T>& grads, std::vector<Vector<T>>& d_inputs) {
  const int steps = static_cast<int>(inputs.size());
  const int h = cell.hidden;
  const auto w_in = store.matrix(cell.w_input);
  const auto w_hid = store.matrix(cell.w_hidden);
  auto g_in = grads.matrix(store, cell.w_input);
  auto g_hid = grads.matrix(store, cell.w_hidden);
  auto& g_bias = grads.values[cell.bias];

  Vector<T> dh_next = Vector<T>::Zero(h), dc_next = Vector<T>::Zero(h);
  const Vector<T> zeros = Vector<T>::Zero(h);
  for (int i = steps - 1; i >= 0; --i) {
    const int t = reverse ? steps - 1 - i : i;
    const int prev = reverse ? t + 1 : t - 1;
    const bool has_prev = i > 0;
    const Vector<T>& c_prev = has_prev ? trace.cell[prev] : zeros;
    const Vector<T>& h_prev = has_prev ? trace.hidden[prev] : zeros;
    const auto& z = trace.gates[t];
    const Vector<T> tanh_c = trace.cell[t].unaryExpr([](T v) { return std::tanh(v); });

    const Vector<T> dh = d_hidden[t] + dh_next;
    Vector<T> dz(4 * h);
    for (int k = 0; k < h; ++k) {
      const T ig = z[k], fg = z[h + k], gg = z[2 * h + k], og = z[3 * h + k];
      const T dc = dh[k] * og * (T(1) - tanh_c[k] * tanh_c[k]) + dc_next[k];
      dz[k] = dc * gg * ig * (T(1) - ig);
      dz[h + k] = dc * c_prev[k] * fg * (T(1) - fg);
      dz[2 * h + k] = dc * ig * (T(1) - gg * gg);
      dz[3 * h + k] = dh[k] * tanh_c[k] * og * (T(1) - og);
      dc_next[k] = dc * fg;
    }
    g_in.noalias() += dz * inputs[t].transpose();
    g_hid.noalias() += dz * h_prev.transpose();
    g_bias += dz;
    d_inputs[t].noalias() += w_in.transpose() * dz;
    dh_next.noalias() = w_hid.transpose() * dz;
  }
}

}  // namespace

template <typename T>
LanguageEncoder<T> LanguageEncoder<T>::create(ParamStore<T>& store, const std::string& name, int vocab,
                                              int embed_dim, int hidden) {
  LanguageEncoder enc;
  enc.vocab = vocab;
  enc.embed_dim = embed_dim;
  enc.hidden = hidden;
  enc.embedding = store.add(name + ".embedding", {vocab, embed_dim}, Init::fan_in_uniform, 1);
  enc.fwd = LstmCell<T>::create(store, name + ".lstm_forward", embed_dim, hidden);
  enc.bwd = LstmCell<T>::create(store, name + ".lstm_backward", embed_dim, hidden);
  return enc;
}

template <typename T>
Vector<T> LanguageEncoder<T>::forward(const ParamStore<T>& store, const std::vector<int>& tokens,
                                      BiLstmTrace<T>* trace) const {
  if (tokens.empty()) throw InputError("language encoder: empty token sequence");
  BiLstmTrace<T> local;
  auto& tr = trace ? *trace : local;
  tr.tokens = tokens;
  tr.inputs.clear();
  const auto emb = store.matrix(embedding);
  for (int tok : tokens) {
    if (tok < 0 || tok >= vocab) throw InputError("language encoder: token id out of range");
    tr.inputs.push_back(emb.row(tok).transpose());
  }
  run_lstm(store, fwd, tr.inputs, false, tr.forward);
  run_lstm(store, bwd, tr.inputs, true, tr.backward);
  Vector<T> out = Vector<T>::Zero(2 * hidden);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    out.head(hidden) += tr.forward.hidden[t];
    out.tail(hidden) += tr.backward.hidden[t];
  }
  return out / static_cast<T>(tokens.size());
}

template <typename T>
void LanguageEncoder<T>::backward(const ParamStore<T>& store, const BiLstmTrace<T>& trace, const Vector<T>& d_out,
                                  Gradients<T>& grads) const {
  const auto steps = trace.tokens.size();
  const Vector<T> d_step = d_out / static_cast<T>(steps);
  std::vector<Vector<T>> d_fwd(steps, d_step.head(hidden)), d_bwd(steps, d_step.tail(hidden));
  std::vector<Vector<T>> d_inputs(steps, Vector<T>::Zero(embed_dim));
  backprop_lstm(store, fwd, trace.inputs, trace.forward, d_fwd, false, grads, d_inputs);
  backprop_lstm(store, bwd, trace.inputs, trace.backward, d_bwd, true, grads, d_inputs);
  auto g_emb = grads.matrix(store, embedding);
  for (std::size_t t = 0; t < steps; ++t) g_emb.row(trace.tokens[t]) += d_inputs[t].transpose();
}

template <typename T>
FeatureMap<T> upsample2x(const FeatureMap<T>& x, int height, int width) {
  if ((height + 1) / 2 != x.height || (width + 1) / 2 != x.width) {
    throw ShapeError("upsample2x: target dims do not halve to the source dims");
  }
  FeatureMap<T> y(x.channels, height, width);
  for (int c = 0; c < x.channels; ++c)
    for (int i = 0; i < height; ++i)
      for (int j = 0; j < width; ++j) y.at(c, i, j) = x.at(c, i / 2, j / 2);
  return y;
}

template <typename T>
FeatureMap<T> upsample2x_backward(const FeatureMap<T>& dy, int src_height, int src_width) {
  FeatureMap<T> dx(dy.channels, src_height, src_width);
  for (int c = 0; c < dy.channels; ++c)
    for (int i = 0; i < dy.height; ++i)
      for (int j = 0; j < dy.width; ++j) dx.at(c, i / 2, j / 2) += dy.at(c, i, j);
  return dx;
}

template <typename T>
Vector<T> spatial_softmax(const Matrix<T>& logits) {
  const T peak = logits.maxCoeff();
  Vector<T> p(logits.size());
  T total = 0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits.data()[i] - peak);
    total += p[i];
  }
  return p / total;
}

#define SIRI_INSTANTIATE_LAYERS(T)                                                                       \
  template Matrix<T> im2col(const FeatureMap<T>&, int, int, int, int, int);                              \
  template FeatureMap<T> col2im(const Matrix<T>&, int, int, int, int, int, int, int, int);               \
  template void elu_inplace(Matrix<T>&);                                                                 \
  template void elu_backward(const Matrix<T>&, Matrix<T>&);                                              \
  template struct Conv2d<T>;                                                                             \
  template struct Linear<T>;                                                                             \
  template struct LstmCell<T>;                                                                           \
  template struct LanguageEncoder<T>;                                                                    \
  template FeatureMap<T> upsample2x(const FeatureMap<T>&, int, int);                                     \
  template FeatureMap<T> upsample2x_backward(const FeatureMap<T>&, int, int);                            \
  template Vector<T> spatial_softmax(const Matrix<T>&);

SIRI_INSTANTIATE_LAYERS(float)
SIRI_INSTANTIATE_LAYERS(double)

}  // namespace siri
