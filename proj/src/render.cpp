#include "siri/render.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <png.h>

namespace siri {

Image::Image(int w, int h, Rgb fill) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3) {
  if (w <= 0 || h <= 0) throw InputError("image dims must be positive");
  for (std::size_t i = 0; i < rgb.size(); i += 3) std::copy(fill.begin(), fill.end(), rgb.begin() + static_cast<long>(i));
}

Rgb Image::get(int x, int y) const {
  const auto i = (static_cast<std::size_t>(y) * width + x) * 3;
  return {rgb[i], rgb[i + 1], rgb[i + 2]};
}

void Image::set(int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  const auto i = (static_cast<std::size_t>(y) * width + x) * 3;
  rgb[i] = c[0];
  rgb[i + 1] = c[1];
  rgb[i + 2] = c[2];
}

void write_png(const std::filesystem::path& path, const Image& image) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, image.rgb.data(), 0, nullptr)) {
    throw IoError("cannot write " + path.string() + ": " + png.message);
  }
}

Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw IoError("cannot read " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  Image image(static_cast<int>(png.width), static_cast<int>(png.height));
  if (!png_image_finish_read(&png, nullptr, image.rgb.data(), 0, nullptr)) {
    png_image_free(&png);
    throw IoError("cannot decode " + path.string() + ": " + png.message);
  }
  return image;
}

Rgb color_ramp(double t) {
  static constexpr std::array<std::array<double, 3>, 5> stops = {
      {{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}}};
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0) * (stops.size() - 1);
  const auto i = std::min(static_cast<std::size_t>(t), stops.size() - 2);
  const double f = t - static_cast<double>(i);
  Rgb out;
  for (int k = 0; k < 3; ++k) {
    out[k] = static_cast<std::uint8_t>(std::lround(stops[i][k] * (1 - f) + stops[i + 1][k] * f));
  }
  return out;
}

namespace {

std::vector<double> feature_energy(const FeatureGrid& grid) {
  std::vector<double> e(static_cast<std::size_t>(grid.height) * grid.width, 0.0);
  for (int c = 0; c < grid.channels; ++c)
    for (int y = 0; y < grid.height; ++y)
      for (int x = 0; x < grid.width; ++x) {
        const double v = grid.at(c, y, x);
        e[static_cast<std::size_t>(y) * grid.width + x] += v * v;
      }
  const double top = *std::max_element(e.begin(), e.end());
  for (auto& v : e) v = top > 0 ? std::sqrt(v / top) : 0.0;
  return e;
}

void fill_block(Image& img, int gx, int gy, int scale, Rgb c) {
  for (int dy = 0; dy < scale; ++dy)
    for (int dx = 0; dx < scale; ++dx) img.set(gx * scale + dx, gy * scale + dy, c);
}

void draw_line(Image& img, double x0, double y0, double x1, double y1, Rgb c) {
  const int steps = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    img.set(static_cast<int>(std::lround(x0 + (x1 - x0) * t)), static_cast<int>(std::lround(y0 + (y1 - y0) * t)), c);
  }
}

void draw_star(Image& img, double cx, double cy, double radius, Rgb c) {
  std::array<std::pair<double, double>, 10> pts;
  for (int i = 0; i < 10; ++i) {
    const double r = i % 2 == 0 ? radius : radius * 0.45;
    const double a = -std::numbers::pi / 2 + i * std::numbers::pi / 5;
    pts[i] = {cx + r * std::cos(a), cy + r * std::sin(a)};
  }
  for (int i = 0; i < 10; ++i) {
    const auto& [ax, ay] = pts[i];
    const auto& [bx, by] = pts[(i + 1) % 10];
    draw_line(img, ax, ay, bx, by, c);
  }
}

void draw_cross(Image& img, double cx, double cy, double half, Rgb c) {
  draw_line(img, cx - half, cy - half, cx + half, cy + half, c);
  draw_line(img, cx - half, cy + half, cx + half, cy - half, c);
}

// Landmark colors, in the generator's color order.
constexpr std::array<Rgb, 8> kPalette = {{{220, 40, 40},
                                          {40, 80, 220},
                                          {40, 170, 60},
                                          {230, 210, 40},
                                          {240, 240, 240},
                                          {20, 20, 20},
                                          {240, 140, 30},
                                          {150, 50, 190}}};

bool glyph_pixel(int shape, int dx, int dy, int n) {
  const int m = n / 2;
  switch (shape % 4) {
    case 0:  // square
      return dx >= n / 4 && dx < n - n / 4 && dy >= n / 4 && dy < n - n / 4;
    case 1:  // vertical bar
      return std::abs(dx - m) <= n / 8;
    case 2:  // triangle
      return dy >= n / 4 && std::abs(dx - m) <= (dy - n / 4) / 2 + 1;
    default:  // horizontal bar
      return std::abs(dy - m) <= n / 8;
  }
}

}  // namespace

Image render_features(const FeatureGrid& grid, int scale) {
  if (scale < 1) throw InputError("render scale must be at least 1");
  grid.validate();
  Image img(grid.width * scale, grid.height * scale);
  const auto e = feature_energy(grid);
  for (int y = 0; y < grid.height; ++y)
    for (int x = 0; x < grid.width; ++x) {
      const auto g = static_cast<std::uint8_t>(std::lround(255.0 * e[static_cast<std::size_t>(y) * grid.width + x]));
      fill_block(img, x, y, scale, {g, g, g});
    }
  return img;
}

Image render_synthetic(const FeatureGrid& grid, const SynthConfig& config, int scale) {
  if (scale < 1) throw InputError("render scale must be at least 1");
  if (grid.height != config.height() || grid.width != config.width() ||
      grid.channels < config.shapes + config.colors) {
    throw ShapeError("feature grid does not match the synthetic config");
  }
  Image img(grid.width * scale, grid.height * scale, {96, 96, 96});
  const int block = config.cell_px * scale;
  for (int r = 0; r < config.rows; ++r)
    for (int c = 0; c < config.cols; ++c) {
      const auto center = cell_center({r, c}, config.cell_px);
      int shape = -1, color = -1;
      for (int s = 0; s < config.shapes; ++s)
        if (grid.at(s, center.y, center.x) > 0.5f) shape = s;
      for (int k = 0; k < config.colors; ++k)
        if (grid.at(config.shapes + k, center.y, center.x) > 0.5f) color = k;
      if (shape < 0 || color < 0) continue;
      const Rgb fill = kPalette[static_cast<std::size_t>(color) % kPalette.size()];
      const Rgb ink = color == 5 ? Rgb{200, 200, 200} : Rgb{0, 0, 0};
      for (int dy = 0; dy < block; ++dy)
        for (int dx = 0; dx < block; ++dx) {
          img.set(c * block + dx, r * block + dy, glyph_pixel(shape, dx, dy, block) ? ink : fill);
        }
    }
  return img;
}

Image render_prediction(const FeatureGrid& grid, const Heatmap& heatmap, PeakLocation predicted,
                        PeakLocation truth, int scale) {
  if (heatmap.height != grid.height || heatmap.width != grid.width) {
    throw ShapeError("heatmap and feature grid dims differ");
  }
  Image img = render_features(grid, scale);
  const double top = *std::max_element(heatmap.values.begin(), heatmap.values.end());
  for (int y = 0; y < grid.height; ++y)
    for (int x = 0; x < grid.width; ++x) {
      const double t = top > 0 ? heatmap.at(y, x) / top : 0.0;
      const Rgb heat = color_ramp(t);
      const double alpha = 0.35 + 0.5 * t;
      for (int dy = 0; dy < scale; ++dy)
        for (int dx = 0; dx < scale; ++dx) {
          const Rgb base = img.get(x * scale + dx, y * scale + dy);
          Rgb out;
          for (int k = 0; k < 3; ++k) {
            out[k] = static_cast<std::uint8_t>(std::lround(base[k] * (1 - alpha) + heat[k] * alpha));
          }
          img.set(x * scale + dx, y * scale + dy, out);
        }
    }
  const double half = scale / 2.0;
  const double marker = std::max(2.0, 1.5 * scale);
  draw_star(img, truth.x * scale + half, truth.y * scale + half, marker, {255, 220, 0});
  draw_cross(img, predicted.x * scale + half, predicted.y * scale + half, std::max(1.0, 0.8 * scale), {255, 40, 40});
  return img;
}

}  // namespace siri
