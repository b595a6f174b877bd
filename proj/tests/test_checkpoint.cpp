#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "helpers.hpp"
#include "siri/checkpoint.hpp"
#include "siri/errors.hpp"

using namespace siri;
using namespace siri::test;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "siri_test_checkpoint";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

}  // namespace

TEST_CASE("checkpoint round trip keeps everything") {
  auto cfg = tiny_model_config();
  cfg.head = HeadKind::conv;
  const auto model = tiny_model(cfg, 5);
  auto ckpt = make_checkpoint(model, 42);
  ckpt.metadata["note"] = "x";
  const auto path = scratch("round.ckpt");
  save_checkpoint(path, ckpt);
  const auto back = load_checkpoint(path);
  CHECK(back.step == 42);
  CHECK(back.config.to_json() == ckpt.config.to_json());
  CHECK(back.lexicon == model.lexicon());
  CHECK(back.vocabulary == model.vocabulary());
  CHECK(back.metadata == ckpt.metadata);
  CHECK(back.tensors == ckpt.tensors);
  CHECK(back.tensors.size() == model.params().size());
}

TEST_CASE("reloaded model reproduces forward outputs exactly") {
  const auto model = tiny_model();
  const auto path = scratch("forward.ckpt");
  save_checkpoint(path, make_checkpoint(model, 0));
  const auto reloaded = model_from_checkpoint(load_checkpoint(path));
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto s = tiny_sample(seed, tiny_corpus()[seed]);
    CHECK(reloaded.predict(s).values == model.predict(s).values);
  }
  // Saving the reloaded model gives the same bytes.
  const auto again = scratch("forward2.ckpt");
  save_checkpoint(again, make_checkpoint(reloaded, 0));
  CHECK(slurp(again) == slurp(path));
}

TEST_CASE("corrupt checkpoints raise DataError") {
  const auto path = scratch("good.ckpt");
  save_checkpoint(path, make_checkpoint(tiny_model(), 3));
  const auto bytes = slurp(path);
  const auto bad = scratch("bad.ckpt");

  SUBCASE("truncated") {
    spit(bad, bytes.substr(0, bytes.size() - 7));
    CHECK_THROWS_AS(load_checkpoint(bad), DataError);
  }
  SUBCASE("wrong magic") {
    auto b = bytes;
    b[0] = 'X';
    spit(bad, b);
    CHECK_THROWS_AS(load_checkpoint(bad), DataError);
  }
  SUBCASE("garbled header") {
    auto b = bytes;
    b[22] = '}';
    spit(bad, b);
    CHECK_THROWS_AS(load_checkpoint(bad), DataError);
  }
  SUBCASE("empty") {
    spit(bad, "");
    CHECK_THROWS_AS(load_checkpoint(bad), DataError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint(scratch("nope.ckpt")), DataError);
  }
}

TEST_CASE("a checkpoint missing a tensor cannot build a model") {
  auto ckpt = make_checkpoint(tiny_model(), 0);
  ckpt.tensors.pop_back();
  CHECK_THROWS_AS(model_from_checkpoint(ckpt), DataError);
  auto wrong = make_checkpoint(tiny_model(), 0);
  wrong.tensors.front().shape.back() += 1;
  CHECK_THROWS_AS(model_from_checkpoint(wrong), DataError);
}
