#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace siri {

// Token ids for the language encoder. Id 0 is the pad token, id 1 the
// unknown-token fallback.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnknown = 1;

  Vocabulary();

  static Vocabulary build(const std::vector<std::string>& corpus);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(std::string_view token) const;
  const std::string& token(int id) const { return tokens_.at(id); }

  // Blank text encodes to a single pad token so the encoder never sees an
  // empty sequence.
  std::vector<int> encode(std::string_view text) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace siri
