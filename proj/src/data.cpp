#include "siri/data.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>

#include <json.hpp>

namespace siri {

static_assert(std::endian::native == std::endian::little,
              "feature files are read and written as little-endian");

namespace fs = std::filesystem;

FeatureGrid::FeatureGrid(int c, int h, int w)
    : channels(c), height(h), width(w), values(static_cast<std::size_t>(c) * h * w, 0.0f) {}

void FeatureGrid::validate() const {
  if (channels < 1 || height < 2 || width < 2) {
    throw DataError("feature grid dims " + std::to_string(channels) + "x" +
                    std::to_string(height) + "x" + std::to_string(width) + " are invalid");
  }
  if (values.size() != static_cast<std::size_t>(channels) * height * width) {
    throw DataError("feature grid payload size does not match its dims");
  }
  for (float v : values) {
    if (!std::isfinite(v)) throw DataError("feature grid holds a non-finite value");
  }
}

double Heatmap::sum() const { return std::accumulate(values.begin(), values.end(), 0.0); }

namespace {

constexpr char kMagic[4] = {'S', 'D', 'R', 'F'};

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

}  // namespace

FeatureGrid read_feature_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open feature file " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("bad magic in feature file " + path.string());
  }
  const auto version = read_u32(in);
  if (version != kFeatureFileVersion) {
    throw DataError("unsupported feature file version " + std::to_string(version));
  }
  const auto c = read_u32(in), h = read_u32(in), w = read_u32(in);
  if (!in || c == 0 || h < 2 || w < 2 || c > (1u << 16) || h > (1u << 16) || w > (1u << 16)) {
    throw DataError("bad header in feature file " + path.string());
  }
  FeatureGrid grid(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w));
  in.read(reinterpret_cast<char*>(grid.values.data()),
          static_cast<std::streamsize>(grid.values.size() * sizeof(float)));
  if (!in) throw DataError("truncated feature file " + path.string());
  in.peek();
  if (!in.eof()) throw DataError("trailing bytes in feature file " + path.string());
  grid.validate();
  return grid;
}

void write_feature_file(const fs::path& path, const FeatureGrid& grid) {
  grid.validate();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write feature file " + path.string());
  out.write(kMagic, 4);
  write_u32(out, kFeatureFileVersion);
  write_u32(out, static_cast<std::uint32_t>(grid.channels));
  write_u32(out, static_cast<std::uint32_t>(grid.height));
  write_u32(out, static_cast<std::uint32_t>(grid.width));
  out.write(reinterpret_cast<const char*>(grid.values.data()),
            static_cast<std::streamsize>(grid.values.size() * sizeof(float)));
  if (!out) throw IoError("failed writing feature file " + path.string());
}

ManifestReader::ManifestReader(const fs::path& manifest)
    : root_(manifest.parent_path()), in_(manifest) {
  if (!in_) throw DataError("cannot open manifest " + manifest.string());
}

std::optional<LoadOutcome> ManifestReader::next() {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_no_;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;

    SdrSample sample;
    std::string feature_path;
    try {
      const auto j = nlohmann::json::parse(line);
      sample.id = j.at("id").get<std::string>();
      sample.text = j.at("text").get<std::string>();
      feature_path = j.at("feature").get<std::string>();
      sample.target.x = j.at("target").at("x").get<int>();
      sample.target.y = j.at("target").at("y").get<int>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no_, e.what());
    }

    try {
      sample.features = read_feature_file(root_ / feature_path);
    } catch (const DataError& e) {
      return LoadOutcome{RecordError(sample.id, e.what())};
    }
    const auto& f = sample.features;
    if (sample.target.x < 0 || sample.target.x >= f.width || sample.target.y < 0 ||
        sample.target.y >= f.height) {
      return LoadOutcome{RecordError(sample.id, "target outside the feature grid")};
    }
    return LoadOutcome{std::move(sample)};
  }
  return std::nullopt;
}

LoadedDataset load_dataset(const fs::path& manifest) {
  LoadedDataset out;
  ManifestReader reader(manifest);
  while (auto item = reader.next()) {
    if (auto* s = std::get_if<SdrSample>(&*item)) {
      out.samples.push_back(std::move(*s));
    } else {
      out.errors.push_back(std::get<RecordError>(*item));
    }
  }
  return out;
}

fs::path write_dataset(const fs::path& dir, const std::string& split,
                       const std::vector<SdrSample>& samples) {
  std::error_code ec;
  fs::create_directories(dir / "features" / split, ec);
  if (ec) throw IoError("cannot create " + (dir / "features" / split).string() + ": " + ec.message());
  const auto manifest = dir / (split + ".jsonl");
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + manifest.string());
  for (const auto& s : samples) {
    const auto rel = fs::path("features") / split / (s.id + ".sdrf");
    write_feature_file(dir / rel, s.features);
    nlohmann::json j = {{"id", s.id},
                        {"text", s.text},
                        {"feature", rel.generic_string()},
                        {"target", {{"x", s.target.x}, {"y", s.target.y}}}};
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing manifest " + manifest.string());
  return manifest;
}

Heatmap gaussian_target(Pixel target, int height, int width, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("gaussian sigma must be positive");
  if (height < 1 || width < 1) throw ConfigError("heatmap dims must be positive");
  if (target.x < 0 || target.x >= width || target.y < 0 || target.y >= height) {
    throw InputError("gaussian target outside the grid");
  }
  Heatmap m{height, width, std::vector<double>(static_cast<std::size_t>(height) * width)};
  const double inv = 1.0 / (2.0 * sigma * sigma);
  double total = 0.0;
  for (int i = 0; i < height; ++i) {
    for (int j = 0; j < width; ++j) {
      const double dx = j - target.x, dy = i - target.y;
      const double v = std::exp(-(dx * dx + dy * dy) * inv);
      m.values[static_cast<std::size_t>(i) * width + j] = v;
      total += v;
    }
  }
  for (auto& v : m.values) v /= total;
  return m;
}

bool target_in_left_half(int target_x, int width) { return target_x < (width + 1) / 2; }

SdrSample copy_paste_ambiguity(const SdrSample& sample) {
  SdrSample out = sample;
  auto& f = out.features;
  copy_target_half(std::span<float>(f.values), f.channels, f.height, f.width, sample.target.x);
  return out;
}

}  // namespace siri
