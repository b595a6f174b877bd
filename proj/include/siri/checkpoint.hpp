#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "siri/model.hpp"

namespace siri {

inline constexpr char kCheckpointFormat[] = "SIRI-CKPT-1";

struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;

  bool operator==(const NamedTensor&) const = default;
};

// Layout: the 12-byte tag "SIRI-CKPT-1\0", a u64 length and that many bytes
// of JSON header (config, lexicon, vocabulary, step, metadata), a u32 tensor
// count, then per tensor: u32 name length, name, u32 rank, u32 dims, and
// little-endian float32 values.
struct Checkpoint {
  ModelConfig config;
  OrientationLexicon lexicon;
  Vocabulary vocabulary;
  long step = 0;
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

Checkpoint make_checkpoint(const SiriModel<float>& model, long step);
SiriModel<float> model_from_checkpoint(const Checkpoint& ckpt);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace siri
