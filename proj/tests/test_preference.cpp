#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "ftlab/errors.hpp"
#include "ftlab/preference.hpp"

using namespace ftlab;

namespace {

ModelConfig small_config(std::uint64_t seed = 3) {
  ModelConfig cfg;
  cfg.vocab_size = kTaskVocabSize;
  cfg.context_len = 64;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.seed = seed;
  return cfg;
}

Dataset two_sample_dataset() {
  Dataset ds;
  Sample a;
  a.task_id = "t";
  a.query = {2, 30, 31};
  a.answer = {32, 33};  // gold length 2
  Sample b;
  b.task_id = "t";
  b.query = {2, 34, 35};
  b.answer = {36, 37, 38};  // gold length 3
  ds.samples = {a, b};
  return ds;
}

}  // namespace

TEST_CASE("overlength ratio on hand-made lengths") {
  // Force generation lengths [5, 3] against gold [2, 3]: strictly greater
  // only for the first sample, so the ratio is exactly 0.5.
  // A repeater model: never emits END, so generations hit max_new_tokens.
  PolicyParams p = PolicyParams::zero_init(small_config());
  p.b_out.at(0, 40) = 50.0;  // always emit token 40

  Dataset ds = two_sample_dataset();
  SamplerConfig s;
  s.temperature = 0.0;
  s.max_new_tokens = 5;
  // first query: 5 generated > 2 gold; second: cap to 3 via a second dataset
  // with matching gold length 3 -> generated 5 > 3 as well. Use per-sample
  // max instead: shrink gold to demonstrate the strict inequality boundary.
  ds.samples[1].answer = {36, 37, 38, 39, 41};  // gold length 5, generated 5 -> tie
  const double ratio = overlength_ratio(p, ds, s, 1);
  CHECK(ratio == 0.5);  // ties are not overlength
}

TEST_CASE("a model that stops immediately has ratio zero") {
  PolicyParams p = PolicyParams::zero_init(small_config());
  p.b_out.at(0, kEndToken) = 50.0;
  Dataset ds = two_sample_dataset();
  SamplerConfig s;
  s.temperature = 0.0;
  s.max_new_tokens = 8;
  CHECK(overlength_ratio(p, ds, s, 1) == 0.0);
  CHECK(build_pairs(p, ds, s, 1).empty());
}

TEST_CASE("immediate-END model with an empty gold answer ties, not overlength") {
  PolicyParams p = PolicyParams::zero_init(small_config());
  p.b_out.at(0, kEndToken) = 50.0;
  Dataset ds = two_sample_dataset();
  ds.samples[0].answer = {};  // gold empty; generated empty -> tie
  SamplerConfig s;
  s.temperature = 0.0;
  s.max_new_tokens = 8;
  CHECK(overlength_ratio(p, ds, s, 1) == 0.0);
}

TEST_CASE("pair yield equals ratio times dataset size, same pass") {
  const ModelConfig cfg = small_config(11);
  const PolicyParams p = PolicyParams::init(cfg);

  Dataset ds;
  Rng rng(5);
  for (int i = 0; i < 64; ++i) {
    Sample s;
    s.task_id = "t";
    s.query = {2};
    for (int j = 0; j < 6; ++j) s.query.push_back(rng.uniform_int(30, 46));
    s.answer = {rng.uniform_int(30, 46)};
    ds.samples.push_back(std::move(s));
  }

  SamplerConfig s;
  s.temperature = 1.0;
  s.max_new_tokens = 6;
  const GenerationPass pass = run_generation_pass(p, ds, s, 99);
  CHECK(pass.pairs.size() ==
        static_cast<std::size_t>(pass.overlength_ratio * ds.size() + 0.5));
  CHECK(overlength_ratio(p, ds, s, 99) == pass.overlength_ratio);
  CHECK(build_pairs(p, ds, s, 99).size() == pass.pairs.size());

  // recount from the generation log
  std::size_t recount = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (pass.generations[i].tokens.size() > ds.samples[i].answer.size()) ++recount;
  }
  CHECK(recount == pass.pairs.size());
}

TEST_CASE("every emitted pair satisfies the length invariant verbatim") {
  const ModelConfig cfg = small_config(13);
  const PolicyParams p = PolicyParams::init(cfg);
  Dataset ds;
  Rng rng(7);
  for (int i = 0; i < 128; ++i) {
    Sample s;
    s.task_id = "t";
    s.query = {3};
    for (int j = 0; j < 5; ++j) s.query.push_back(rng.uniform_int(30, 62));
    const int alen = rng.uniform_int(0, 3);
    for (int j = 0; j < alen; ++j) s.answer.push_back(rng.uniform_int(30, 62));
    ds.samples.push_back(std::move(s));
  }
  SamplerConfig s;
  s.temperature = 1.2;
  s.max_new_tokens = 7;
  const auto pairs = build_pairs(p, ds, s, 3);
  CHECK(!pairs.empty());
  for (const auto& pr : pairs) {
    CHECK(pr.rejected.size() > pr.accepted.size());
    bool found = false;
    for (const auto& sample : ds.samples) {
      if (sample.query == pr.query && sample.answer == pr.accepted) found = true;
    }
    CHECK(found);  // accepted equals the dataset answer verbatim
  }
}

TEST_CASE("generation pass is deterministic in (params, ds, sampler, seed)") {
  const ModelConfig cfg = small_config(17);
  const PolicyParams p = PolicyParams::init(cfg);
  Dataset ds = two_sample_dataset();
  SamplerConfig s;
  s.temperature = 1.0;
  s.max_new_tokens = 8;
  const GenerationPass a = run_generation_pass(p, ds, s, 5);
  const GenerationPass b = run_generation_pass(p, ds, s, 5);
  CHECK(a.overlength_ratio == b.overlength_ratio);
  REQUIRE(a.generations.size() == b.generations.size());
  for (std::size_t i = 0; i < a.generations.size(); ++i) {
    CHECK(a.generations[i].tokens == b.generations[i].tokens);
  }
  const GenerationPass c = run_generation_pass(p, ds, s, 6);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.generations.size(); ++i) {
    if (a.generations[i].tokens != c.generations[i].tokens) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("empty dataset is rejected") {
  const PolicyParams p = PolicyParams::zero_init(small_config());
  Dataset ds;
  SamplerConfig s;
  CHECK_THROWS_AS(overlength_ratio(p, ds, s, 1), ShapeError);
}

TEST_CASE("pair files round-trip") {
  std::vector<PreferenceSample> pairs;
  PreferenceSample a;
  a.query = {2, 30};
  a.accepted = {31};
  a.rejected = {31, 32, 33};
  pairs.push_back(a);

  const auto path = std::filesystem::temp_directory_path() / "ftlab_pairs_test.jsonl";
  save_pairs(pairs, path.string());
  const auto loaded = load_pairs(path.string());
  std::filesystem::remove(path);
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0] == pairs[0]);
}
