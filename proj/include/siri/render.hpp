#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "siri/data.hpp"
#include "siri/eval.hpp"
#include "siri/synth.hpp"

namespace siri {

using Rgb = std::array<std::uint8_t, 3>;

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  Image() = default;
  Image(int w, int h, Rgb fill = {0, 0, 0});
  Rgb get(int x, int y) const;
  void set(int x, int y, Rgb c);  // ignores out-of-range pixels
};

void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

// Viridis-like ramp, t clamped to [0,1].
Rgb color_ramp(double t);

// Grayscale view of per-pixel feature energy. Each grid pixel becomes a
// scale×scale block.
Image render_features(const FeatureGrid& grid, int scale);

// Synthetic scene view: landmark cells painted with their color and a glyph
// for their shape.
Image render_synthetic(const FeatureGrid& grid, const SynthConfig& config, int scale);

// Heatmap blended over a grayscale rendering of `grid`. The predicted peak is
// drawn as a cross, the ground truth as a yellow star outline.
Image render_prediction(const FeatureGrid& grid, const Heatmap& heatmap, PeakLocation predicted,
                        PeakLocation truth, int scale);

}  // namespace siri
