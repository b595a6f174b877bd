#include "siri/lexicon.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>
#include <set>

#include "siri/errors.hpp"

namespace siri {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    auto is_word = [](unsigned char c) { return std::isalnum(c) != 0; };
    auto first = std::find_if(current.begin(), current.end(), is_word);
    auto last = std::find_if(current.rbegin(), current.rend(), is_word).base();
    if (first < last) tokens.emplace_back(first, last);
    current.clear();
  };
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return tokens;
}

std::vector<std::string> default_orientation_phrases() {
  return {"left",  "right", "front", "behind",    "top",        "bottom",
          "above", "below", "side",  "your left", "your right", "next to"};
}

int GateVector::active_count() const {
  return std::accumulate(bits.begin(), bits.end(), 0);
}

void OrientationLexicon::prepare_tokens() {
  phrase_tokens_.clear();
  for (const auto& p : base_phrases_) phrase_tokens_.push_back(tokenize(p));
}

OrientationLexicon OrientationLexicon::build(const std::vector<std::string>& corpus,
                                             std::vector<std::string> base_phrases, int k) {
  if (corpus.empty()) throw ConfigError("lexicon: empty corpus");
  if (k < 1) throw ConfigError("lexicon: k must be positive");
  if (static_cast<std::size_t>(k) > base_phrases.size()) {
    throw ConfigError("lexicon: k=" + std::to_string(k) + " exceeds " +
                      std::to_string(base_phrases.size()) + " base phrases");
  }

  OrientationLexicon lex;
  std::set<std::string> seen;
  for (auto& p : base_phrases) {
    auto tokens = tokenize(p);
    if (tokens.empty()) throw ConfigError("lexicon: blank base phrase");
    std::string normalized;
    for (const auto& t : tokens) normalized += (normalized.empty() ? "" : " ") + t;
    if (!seen.insert(normalized).second) {
      throw ConfigError("lexicon: duplicate base phrase '" + normalized + "'");
    }
    lex.base_phrases_.push_back(std::move(normalized));
  }
  lex.prepare_tokens();

  lex.frequencies_.assign(lex.base_phrases_.size(), 0);
  for (const auto& text : corpus) {
    const auto counts = lex.match_counts(text);
    for (std::size_t i = 0; i < counts.size(); ++i) lex.frequencies_[i] += counts[i];
  }

  std::vector<std::size_t> order(lex.base_phrases_.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return lex.frequencies_[a] > lex.frequencies_[b];
  });
  for (int i = 0; i < k; ++i) lex.selected_.push_back(lex.base_phrases_[order[i]]);
  return lex;
}

long OrientationLexicon::frequency(std::string_view phrase) const {
  for (std::size_t i = 0; i < base_phrases_.size(); ++i) {
    if (base_phrases_[i] == phrase) return frequencies_[i];
  }
  return 0;
}

std::vector<long> OrientationLexicon::match_counts(std::string_view text) const {
  const auto tokens = tokenize(text);
  std::vector<long> counts(base_phrases_.size(), 0);

  // Longest phrases are tried first at every position.
  std::vector<std::size_t> by_length(base_phrases_.size());
  std::iota(by_length.begin(), by_length.end(), 0);
  std::stable_sort(by_length.begin(), by_length.end(), [&](std::size_t a, std::size_t b) {
    return phrase_tokens_[a].size() > phrase_tokens_[b].size();
  });

  std::size_t pos = 0;
  while (pos < tokens.size()) {
    std::size_t advance = 1;
    for (auto idx : by_length) {
      const auto& pt = phrase_tokens_[idx];
      if (pos + pt.size() > tokens.size()) continue;
      if (std::equal(pt.begin(), pt.end(), tokens.begin() + static_cast<long>(pos))) {
        ++counts[idx];
        advance = pt.size();
        break;
      }
    }
    pos += advance;
  }
  return counts;
}

bool OrientationLexicon::contains(std::string_view text, std::string_view phrase) const {
  const auto counts = match_counts(text);
  for (std::size_t i = 0; i < base_phrases_.size(); ++i) {
    if (base_phrases_[i] == phrase) return counts[i] > 0;
  }
  return false;
}

std::vector<std::string> OrientationLexicon::absolute_phrases() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < base_phrases_.size(); ++i) {
    if (phrase_tokens_[i].size() > 1 && phrase_tokens_[i].front() == "your") {
      out.push_back(base_phrases_[i]);
    }
  }
  return out;
}

bool OrientationLexicon::has_absolute_phrase(std::string_view text) const {
  const auto counts = match_counts(text);
  for (std::size_t i = 0; i < base_phrases_.size(); ++i) {
    if (counts[i] > 0 && phrase_tokens_[i].size() > 1 && phrase_tokens_[i].front() == "your") {
      return true;
    }
  }
  return false;
}

nlohmann::json OrientationLexicon::to_json() const {
  nlohmann::json freq = nlohmann::json::object();
  for (std::size_t i = 0; i < base_phrases_.size(); ++i) freq[base_phrases_[i]] = frequencies_[i];
  return {{"phrases", base_phrases_}, {"frequencies", freq}, {"selected", selected_}, {"k", k()}};
}

OrientationLexicon OrientationLexicon::from_json(const nlohmann::json& j) {
  OrientationLexicon lex;
  try {
    lex.base_phrases_ = j.at("phrases").get<std::vector<std::string>>();
    lex.selected_ = j.at("selected").get<std::vector<std::string>>();
    const auto& freq = j.at("frequencies");
    for (const auto& p : lex.base_phrases_) {
      lex.frequencies_.push_back(freq.contains(p) ? freq.at(p).get<long>() : 0);
    }
    if (j.at("k").get<int>() != lex.k()) throw ConfigError("lexicon: k does not match selected");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("lexicon json: ") + e.what());
  }
  for (const auto& s : lex.selected_) {
    if (std::find(lex.base_phrases_.begin(), lex.base_phrases_.end(), s) == lex.base_phrases_.end()) {
      throw ConfigError("lexicon: selected phrase '" + s + "' not in base phrases");
    }
  }
  lex.prepare_tokens();
  return lex;
}

GateVector gates_for(std::string_view description, const OrientationLexicon& lexicon) {
  const auto counts = lexicon.match_counts(description);
  const auto& base = lexicon.base_phrases();
  GateVector gates;
  for (const auto& s : lexicon.selected()) {
    const auto idx = static_cast<std::size_t>(std::find(base.begin(), base.end(), s) - base.begin());
    gates.bits.push_back(counts[idx] > 0 ? 1 : 0);
  }
  return gates;
}

}  // namespace siri
