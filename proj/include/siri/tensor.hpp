#pragma once

#include <vector>

#include <Eigen/Dense>

#include "siri/data.hpp"
#include "siri/errors.hpp"

namespace siri {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Dense C×h×w activation stored as a (C, h·w) row-major matrix.
template <typename T>
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  Matrix<T> values;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w) : channels(c), height(h), width(w), values(Matrix<T>::Zero(c, h * w)) {}
  FeatureMap(int h, int w, Matrix<T> v)
      : channels(static_cast<int>(v.rows())), height(h), width(w), values(std::move(v)) {}

  int area() const { return height * width; }
  T& at(int c, int y, int x) { return values(c, y * width + x); }
  T at(int c, int y, int x) const { return values(c, y * width + x); }
  bool same_spatial(const FeatureMap& o) const { return height == o.height && width == o.width; }
};

template <typename T>
FeatureMap<T> to_feature_map(const FeatureGrid& grid) {
  FeatureMap<T> m(grid.channels, grid.height, grid.width);
  for (int c = 0; c < grid.channels; ++c) {
    for (int p = 0; p < m.area(); ++p) {
      m.values(c, p) = static_cast<T>(grid.values[static_cast<std::size_t>(c) * m.area() + p]);
    }
  }
  return m;
}

template <typename T>
FeatureMap<T> concat_channels(const std::vector<const FeatureMap<T>*>& parts) {
  int total = 0;
  for (const auto* p : parts) {
    if (!p->same_spatial(*parts.front())) throw ShapeError("concat: spatial dims differ");
    total += p->channels;
  }
  FeatureMap<T> out(total, parts.front()->height, parts.front()->width);
  int row = 0;
  for (const auto* p : parts) {
    out.values.middleRows(row, p->channels) = p->values;
    row += p->channels;
  }
  return out;
}

}  // namespace siri
