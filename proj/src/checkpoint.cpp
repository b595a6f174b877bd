#include "siri/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace siri {

namespace fs = std::filesystem;

namespace {

template <typename U>
void put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename U>
U get(std::istream& in) {
  U v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw DataError("checkpoint: unexpected end of file");
  return v;
}

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

Checkpoint make_checkpoint(const SiriModel<float>& model, long step) {
  Checkpoint ckpt;
  ckpt.config = model.config();
  ckpt.lexicon = model.lexicon();
  ckpt.vocabulary = model.vocabulary();
  ckpt.step = step;
  for (const auto& p : model.params()) {
    ckpt.tensors.push_back({p.name, p.shape, std::vector<float>(p.value.data(), p.value.data() + p.value.size())});
  }
  return ckpt;
}

SiriModel<float> model_from_checkpoint(const Checkpoint& ckpt) {
  SiriModel<float> model(ckpt.config, ckpt.lexicon, ckpt.vocabulary);
  auto& store = model.params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto* t = ckpt.find(store[i].name);
    if (!t) throw DataError("checkpoint: missing tensor " + store[i].name);
    if (t->shape != store[i].shape) throw DataError("checkpoint: shape mismatch for " + store[i].name);
    store[i].value = Eigen::Map<const Vector<float>>(t->values.data(), static_cast<Eigen::Index>(t->values.size()));
  }
  return model;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(kCheckpointFormat, sizeof kCheckpointFormat);
    const nlohmann::json header = {{"format", kCheckpointFormat},
                                   {"config", ckpt.config.to_json()},
                                   {"lexicon", ckpt.lexicon.to_json()},
                                   {"vocabulary", ckpt.vocabulary.to_json()},
                                   {"step", ckpt.step},
                                   {"metadata", ckpt.metadata}};
    const auto text = header.dump();
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& t : ckpt.tensors) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
      out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
      for (int d : t.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
      out.write(reinterpret_cast<const char*>(t.values.data()),
                static_cast<std::streamsize>(t.values.size() * sizeof(float)));
    }
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char tag[sizeof kCheckpointFormat] = {};
  in.read(tag, sizeof tag);
  if (!in || std::memcmp(tag, kCheckpointFormat, sizeof tag) != 0) {
    throw DataError("not a " + std::string(kCheckpointFormat) + " checkpoint: " + path.string());
  }
  const auto header_size = get<std::uint64_t>(in);
  if (header_size > (1ULL << 30)) throw DataError("checkpoint: implausible header size");
  std::string text(header_size, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_size));
  if (!in) throw DataError("checkpoint: truncated header");

  Checkpoint ckpt;
  try {
    const auto header = nlohmann::json::parse(text);
    ckpt.config = ModelConfig::from_json(header.at("config"));
    ckpt.lexicon = OrientationLexicon::from_json(header.at("lexicon"));
    ckpt.vocabulary = Vocabulary::from_json(header.at("vocabulary"));
    ckpt.step = header.at("step").get<long>();
    ckpt.metadata = header.value("metadata", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint header: ") + e.what());
  }

  const auto count = get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto name_len = get<std::uint32_t>(in);
    if (name_len > 4096) throw DataError("checkpoint: implausible tensor name length");
    t.name.resize(name_len);
    in.read(t.name.data(), name_len);
    const auto rank = get<std::uint32_t>(in);
    if (rank > 8) throw DataError("checkpoint: implausible tensor rank");
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      t.shape.push_back(static_cast<int>(get<std::uint32_t>(in)));
      n *= static_cast<std::size_t>(t.shape.back());
    }
    if (n > (1ULL << 31)) throw DataError("checkpoint: implausible tensor size");
    t.values.resize(n);
    in.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in) throw DataError("checkpoint: truncated tensor " + t.name);
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

}  // namespace siri
