#include "siri/vocabulary.hpp"

#include <algorithm>
#include <map>

#include "siri/errors.hpp"
#include "siri/lexicon.hpp"

namespace siri {

Vocabulary::Vocabulary() : tokens_{"<pad>", "<unk>"} {
  index_["<pad>"] = kPad;
  index_["<unk>"] = kUnknown;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus) {
  std::map<std::string, long> counts;
  for (const auto& text : corpus) {
    for (auto& t : tokenize(text)) ++counts[t];
  }
  std::vector<std::pair<std::string, long>> sorted(counts.begin(), counts.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab;
  for (const auto& [token, count] : sorted) {
    vocab.index_[token] = vocab.size();
    vocab.tokens_.push_back(token);
  }
  return vocab;
}

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnknown : it->second;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& t : tokenize(text)) ids.push_back(id(t));
  if (ids.empty()) ids.push_back(kPad);
  return ids;
}

nlohmann::json Vocabulary::to_json() const { return {{"tokens", tokens_}}; }

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  Vocabulary vocab;
  std::vector<std::string> tokens;
  try {
    tokens = j.at("tokens").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("vocabulary json: ") + e.what());
  }
  if (tokens.size() < 2 || tokens[0] != "<pad>" || tokens[1] != "<unk>") {
    throw ConfigError("vocabulary json: missing reserved tokens");
  }
  vocab.tokens_ = tokens;
  vocab.index_.clear();
  for (std::size_t i = 0; i < tokens.size(); ++i) vocab.index_[tokens[i]] = static_cast<int>(i);
  return vocab;
}

}  // namespace siri
