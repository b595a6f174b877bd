#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "siri/errors.hpp"

namespace siri {

// C×h×w visual features, channel-major then row-major.
struct FeatureGrid {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> values;

  FeatureGrid() = default;
  FeatureGrid(int c, int h, int w);

  float& at(int c, int y, int x) { return values[index(c, y, x)]; }
  float at(int c, int y, int x) const { return values[index(c, y, x)]; }
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height + y) * width + x;
  }

  // Throws DataError on bad dims or non-finite values.
  void validate() const;

  bool operator==(const FeatureGrid&) const = default;
};

struct Pixel {
  int x = 0;  // column
  int y = 0;  // row
  bool operator==(const Pixel&) const = default;
};

struct SdrSample {
  std::string id;
  std::string text;
  FeatureGrid features;
  Pixel target;

  bool operator==(const SdrSample&) const = default;
};

// h×w distribution, row-major.
struct Heatmap {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  double sum() const;
};

// Feature file: "SDRF", u32 version, u32 C, u32 h, u32 w, float32 payload.
inline constexpr std::uint32_t kFeatureFileVersion = 1;

FeatureGrid read_feature_file(const std::filesystem::path& path);
void write_feature_file(const std::filesystem::path& path, const FeatureGrid& grid);

using LoadOutcome = std::variant<SdrSample, RecordError>;

// Streams a JSON Lines manifest. Per-record problems (missing or corrupt
// feature files, out-of-range targets) are yielded as RecordError values;
// malformed JSON throws ParseError with the offending line number.
class ManifestReader {
 public:
  explicit ManifestReader(const std::filesystem::path& manifest);

  std::optional<LoadOutcome> next();

 private:
  std::filesystem::path root_;
  std::ifstream in_;
  std::size_t line_no_ = 0;
};

struct LoadedDataset {
  std::vector<SdrSample> samples;
  std::vector<RecordError> errors;
};

LoadedDataset load_dataset(const std::filesystem::path& manifest);

// Writes `<dir>/<split>.jsonl` and `<dir>/features/<split>/<id>.sdrf`.
std::filesystem::path write_dataset(const std::filesystem::path& dir, const std::string& split,
                                    const std::vector<SdrSample>& samples);

// Normalized isotropic Gaussian centred on `target`.
Heatmap gaussian_target(Pixel target, int height, int width, double sigma);

// True when the target falls in the left half. The middle column of an odd
// width belongs to the left half.
bool target_in_left_half(int target_x, int width);

// Overwrites the half not holding the target with a copy of the target half.
// Works on any channel-major (C, h, w) buffer.
template <typename T>
void copy_target_half(std::span<T> values, int channels, int height, int width, int target_x) {
  const int left_width = (width + 1) / 2;
  const int span = width / 2;
  const bool left = target_in_left_half(target_x, width);
  const int src = left ? 0 : left_width;
  const int dst = left ? left_width : 0;
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < height; ++y) {
      T* row = values.data() + (static_cast<std::size_t>(c) * height + y) * width;
      for (int x = 0; x < span; ++x) row[dst + x] = row[src + x];
    }
  }
}

SdrSample copy_paste_ambiguity(const SdrSample& sample);

}  // namespace siri
