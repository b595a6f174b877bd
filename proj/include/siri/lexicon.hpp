#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace siri {

// Lowercases, splits on whitespace and strips punctuation from token edges.
std::vector<std::string> tokenize(std::string_view text);

// Curated orientation phrases used when no override is configured.
std::vector<std::string> default_orientation_phrases();

// One bit per selected phrase; 1 iff the phrase occurs at least once.
struct GateVector {
  std::vector<std::uint8_t> bits;

  std::size_t size() const { return bits.size(); }
  int active_count() const;
  bool operator==(const GateVector&) const = default;
};

// The orientation-word set, its corpus frequencies and the top-k subset that
// drives the distillation branches. Immutable once built.
class OrientationLexicon {
 public:
  OrientationLexicon() = default;

  // Counts phrases with longest-first, non-overlapping matching and keeps the
  // k most frequent. Ties resolve by position in `base_phrases`.
  static OrientationLexicon build(const std::vector<std::string>& corpus,
                                  std::vector<std::string> base_phrases, int k);

  const std::vector<std::string>& base_phrases() const { return base_phrases_; }
  const std::vector<long>& frequencies() const { return frequencies_; }
  long frequency(std::string_view phrase) const;
  const std::vector<std::string>& selected() const { return selected_; }
  int k() const { return static_cast<int>(selected_.size()); }

  // Per-base-phrase occurrence counts in one description.
  std::vector<long> match_counts(std::string_view text) const;
  bool contains(std::string_view text, std::string_view phrase) const;

  // Base phrases that name the agent's own frame ("your left", ...).
  std::vector<std::string> absolute_phrases() const;
  bool has_absolute_phrase(std::string_view text) const;

  nlohmann::json to_json() const;
  static OrientationLexicon from_json(const nlohmann::json& j);

  bool operator==(const OrientationLexicon&) const = default;

 private:
  std::vector<std::string> base_phrases_;
  std::vector<std::vector<std::string>> phrase_tokens_;
  std::vector<long> frequencies_;
  std::vector<std::string> selected_;

  void prepare_tokens();
};

GateVector gates_for(std::string_view description, const OrientationLexicon& lexicon);

}  // namespace siri
