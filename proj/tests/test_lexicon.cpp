#include <doctest.h>

#include <algorithm>

#include "siri/errors.hpp"
#include "siri/lexicon.hpp"
#include "siri/random.hpp"
#include "siri/vocabulary.hpp"

using namespace siri;

TEST_CASE("hand-counted lexicon") {
  const auto lex = OrientationLexicon::build({"go left", "left of the door", "on your right"},
                                             {"left", "right", "front"}, 2);
  CHECK(lex.selected() == std::vector<std::string>{"left", "right"});
  CHECK(lex.frequency("left") == 2);
  CHECK(lex.frequency("right") == 1);
  CHECK(lex.frequency("front") == 0);
  CHECK(lex.k() == 2);
}

TEST_CASE("no matches still gives a valid lexicon") {
  const auto lex = OrientationLexicon::build({"hello world"}, {"left"}, 1);
  CHECK(lex.selected() == std::vector<std::string>{"left"});
  CHECK(lex.frequency("left") == 0);
}

TEST_CASE("lexicon errors") {
  CHECK_THROWS_AS(OrientationLexicon::build({}, {"left"}, 1), ConfigError);
  CHECK_THROWS_AS(OrientationLexicon::build({"go left"}, {"left"}, 2), ConfigError);
  CHECK_THROWS_AS(OrientationLexicon::build({"go left"}, {"left"}, 0), ConfigError);
  CHECK_THROWS_AS(OrientationLexicon::build({"go left"}, {"left", "left"}, 1), ConfigError);
}

TEST_CASE("longer phrases consume their tokens first") {
  const auto lex = OrientationLexicon::build({"the car on your left", "left again"}, {"left", "your left"}, 2);
  CHECK(lex.frequency("your left") == 1);
  CHECK(lex.frequency("left") == 1);
  CHECK(lex.selected() == std::vector<std::string>{"left", "your left"});
}

TEST_CASE("top-k ties follow the base order") {
  const auto lex = OrientationLexicon::build({"right left", "front"}, {"front", "left", "right"}, 3);
  CHECK(lex.selected() == std::vector<std::string>{"front", "left", "right"});
}

TEST_CASE("gate vectors") {
  const auto lr = OrientationLexicon::build({"left right"}, {"left", "right"}, 2);
  CHECK(gates_for("turn left then left again", lr).bits == std::vector<std::uint8_t>{1, 0});
  CHECK(gates_for("", lr).bits == std::vector<std::uint8_t>{0, 0});

  const auto lrf = OrientationLexicon::build({"left right front"}, {"left", "right", "front"}, 3);
  CHECK(gates_for("next to the light on your right, left of the bench", lrf).bits ==
        std::vector<std::uint8_t>{1, 1, 0});
  CHECK(gates_for("TURN LEFT.", lrf).bits == std::vector<std::uint8_t>{1, 0, 0});
}

TEST_CASE("gates are idempotent under duplication and binary") {
  const auto lex = OrientationLexicon::build({"a"}, default_orientation_phrases(), 12);
  Rng rng(4);
  const auto& words = default_orientation_phrases();
  for (int trial = 0; trial < 200; ++trial) {
    std::string d;
    const int n = static_cast<int>(rng.uniform_int(0, 8));
    for (int i = 0; i < n; ++i) {
      d += (rng.bernoulli(0.5) ? words[rng.uniform_int(0, static_cast<long>(words.size()) - 1)] : std::string("the"));
      d += " ";
    }
    const auto g = gates_for(d, lex);
    CHECK(gates_for(d + " " + d, lex) == g);
    for (auto b : g.bits) CHECK((b == 0 || b == 1));
  }
}

TEST_CASE("selection does not depend on corpus order") {
  std::vector<std::string> corpus = {"go left", "on your right", "left of the box", "above the sign",
                                     "below it on your left", "front door", "right there"};
  const auto base = OrientationLexicon::build(corpus, default_orientation_phrases(), 6);
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    rng.shuffle(corpus);
    CHECK(OrientationLexicon::build(corpus, default_orientation_phrases(), 6).selected() == base.selected());
  }
}

TEST_CASE("absolute phrases") {
  const auto lex = OrientationLexicon::build({"x"}, default_orientation_phrases(), 6);
  CHECK(lex.absolute_phrases() == std::vector<std::string>{"your left", "your right"});
  CHECK(lex.has_absolute_phrase("the pole on your left"));
  CHECK_FALSE(lex.has_absolute_phrase("the pole left of the car"));
}

TEST_CASE("lexicon json round trip") {
  const auto lex = OrientationLexicon::build({"go left", "on your right"}, default_orientation_phrases(), 4);
  const auto j = lex.to_json();
  CHECK(j.at("k") == 4);
  CHECK(j.at("frequencies").at("left") == 1);
  CHECK(j.at("phrases").size() == default_orientation_phrases().size());
  CHECK(OrientationLexicon::from_json(j) == lex);
}

TEST_CASE("tokenization") {
  CHECK(tokenize("  Go LEFT, then  right! ") == std::vector<std::string>{"go", "left", "then", "right"});
  CHECK(tokenize("").empty());
}

TEST_CASE("vocabulary") {
  const auto v = Vocabulary::build({"b a a", "c a b"});
  CHECK(v.size() == 5);
  CHECK(v.token(Vocabulary::kPad) == "<pad>");
  CHECK(v.token(Vocabulary::kUnknown) == "<unk>");
  CHECK(v.encode("a b c") == std::vector<int>{2, 3, 4});
  CHECK(v.encode("a zebra") == std::vector<int>{2, Vocabulary::kUnknown});
  CHECK(v.encode("") == std::vector<int>{Vocabulary::kPad});
  CHECK(Vocabulary::from_json(v.to_json()) == v);
}
