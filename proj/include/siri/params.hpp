#pragma once

#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "siri/random.hpp"
#include "siri/tensor.hpp"

namespace siri {

enum class Init { zeros, fan_in_uniform, orthogonal, lstm_bias };

template <typename T>
struct Parameter {
  std::string name;
  std::vector<int> shape;
  Init init = Init::zeros;
  int fan_in = 1;
  Vector<T> value;

  Eigen::Index size() const { return value.size(); }
  int rows() const { return shape.empty() ? 1 : shape.front(); }
  int cols() const { return static_cast<int>(value.size() / std::max(rows(), 1)); }
};

// Ordered, named set of learnable tensors. Blocks refer to entries by index.
template <typename T>
class ParamStore {
 public:
  std::size_t add(std::string name, std::vector<int> shape, Init init, int fan_in = 1) {
    if (find(name)) throw ConfigError("duplicate parameter name " + name);
    const auto n = std::accumulate(shape.begin(), shape.end(), Eigen::Index{1},
                                   [](Eigen::Index a, int b) { return a * b; });
    entries_.push_back({std::move(name), std::move(shape), init, fan_in, Vector<T>::Zero(n)});
    return entries_.size() - 1;
  }

  // Each tensor draws from its own stream keyed by (seed, name), so values do
  // not depend on creation order.
  void initialize(std::uint64_t seed) {
    for (auto& p : entries_) {
      Rng rng(hash_name(seed, p.name));
      switch (p.init) {
        case Init::zeros:
          p.value.setZero();
          break;
        case Init::fan_in_uniform: {
          const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(p.fan_in, 1)));
          for (auto& v : p.value) v = static_cast<T>(rng.uniform(-bound, bound));
          break;
        }
        case Init::orthogonal: {
          // Stacked square blocks, each an orthogonal matrix.
          const int n = p.cols();
          for (int block = 0; block * n < p.rows(); ++block) {
            Eigen::MatrixXd g(n, n);
            for (int i = 0; i < n; ++i)
              for (int j = 0; j < n; ++j) g(i, j) = rng.normal();
            Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
            Eigen::MatrixXd q = qr.householderQ();
            const Eigen::MatrixXd r = qr.matrixQR().template triangularView<Eigen::Upper>();
            for (int i = 0; i < n; ++i) {
              if (r(i, i) < 0) q.col(i) *= -1.0;
            }
            for (int i = 0; i < n && block * n + i < p.rows(); ++i)
              for (int j = 0; j < n; ++j) p.value[(block * n + i) * n + j] = static_cast<T>(q(i, j));
          }
          break;
        }
        case Init::lstm_bias: {
          // Gate order i, f, g, o; forget gate starts open.
          p.value.setZero();
          const auto h = p.value.size() / 4;
          p.value.segment(h, h).setOnes();
          break;
        }
      }
    }
  }

  std::size_t size() const { return entries_.size(); }
  Parameter<T>& operator[](std::size_t i) { return entries_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return entries_[i]; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].name == name) return i;
    }
    return std::nullopt;
  }

  Eigen::Map<const Matrix<T>> matrix(std::size_t i) const {
    const auto& p = entries_[i];
    return {p.value.data(), p.rows(), p.cols()};
  }

  long long parameter_count() const {
    long long n = 0;
    for (const auto& p : entries_) n += p.value.size();
    return n;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& p : entries_) {
      const auto idx = out.add(p.name, p.shape, p.init, p.fan_in);
      out[idx].value = p.value.template cast<U>();
    }
    return out;
  }

 private:
  std::vector<Parameter<T>> entries_;
};

template <typename T>
struct Gradients {
  std::vector<Vector<T>> values;

  Gradients() = default;
  explicit Gradients(const ParamStore<T>& store) {
    for (const auto& p : store) values.push_back(Vector<T>::Zero(p.value.size()));
  }

  void zero() {
    for (auto& v : values) v.setZero();
  }

  Eigen::Map<Matrix<T>> matrix(const ParamStore<T>& store, std::size_t i) {
    return {values[i].data(), store[i].rows(), store[i].cols()};
  }
};

}  // namespace siri
