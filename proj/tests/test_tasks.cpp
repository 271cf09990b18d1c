#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <set>

#include "ftlab/errors.hpp"
#include "ftlab/tasks.hpp"

using namespace ftlab;

TEST_CASE("same seed gives identical specs, different seeds differ") {
  const TaskSpec a = make_task(TaskKind::kClassification, 7);
  const TaskSpec b = make_task(TaskKind::kClassification, 7);
  CHECK(a == b);
  const TaskSpec c = make_task(TaskKind::kClassification, 8);
  CHECK(a.pos_indicators != c.pos_indicators);
}

TEST_CASE("unknown kind is rejected") {
  CHECK_THROWS_AS(make_task("sorting", 1), ValidationError);
  CHECK(make_task("tagging", 1).kind == TaskKind::kTagging);
  CHECK(make_task("regression", 1).kind == TaskKind::kRegression);
}

TEST_CASE("gold answers are reproducible from the spec alone") {
  for (auto kind :
       {TaskKind::kTagging, TaskKind::kClassification, TaskKind::kRegression}) {
    const TaskSpec spec = make_task(kind, 11);
    const Dataset ds = sample_dataset(spec, 1000, "train", 3);
    for (const auto& s : ds.samples) {
      const TokenSeq content(s.query.begin() + 1, s.query.end());
      CHECK(gold_answer(spec, content) == s.answer);
      CHECK(answer_matches_format(spec, s.answer));
    }
  }
}

TEST_CASE("queries carry the task prompt prefix") {
  const TaskSpec spec = make_task(TaskKind::kTagging, 2);
  const Dataset ds = sample_dataset(spec, 10, "train", 1);
  for (const auto& s : ds.samples) CHECK(s.query[0] == spec.prompt);
}

TEST_CASE("n must be at least one") {
  const TaskSpec spec = make_task(TaskKind::kTagging, 2);
  CHECK_THROWS_AS(sample_dataset(spec, 0, "train", 1), ShapeError);
}

TEST_CASE("train and eval splits are disjoint by query on 10k draws") {
  const TaskSpec spec = make_task(TaskKind::kClassification, 5);
  const Dataset train = sample_dataset(spec, 5000, "train", 1);
  const Dataset eval = sample_dataset(spec, 5000, "eval", 1);
  std::set<TokenSeq> seen;
  for (const auto& s : train.samples) seen.insert(s.query);
  for (const auto& s : eval.samples) CHECK(seen.count(s.query) == 0);
}

TEST_CASE("token count equals the sum of sequence lengths") {
  const TaskSpec spec = make_task(TaskKind::kRegression, 5);
  const Dataset ds = sample_dataset(spec, 50, "train", 1);
  std::size_t expected = 0;
  for (const auto& s : ds.samples) expected += s.query.size() + s.answer.size();
  CHECK(ds.token_count() == expected);
}

TEST_CASE("subsample identities and bounds") {
  const TaskSpec spec = make_task(TaskKind::kClassification, 5);
  const Dataset ds = sample_dataset(spec, 100, "train", 1);

  const Dataset whole = subsample(ds, 1.0, 9);
  CHECK(whole.size() == 100);
  CHECK(whole.samples == ds.samples);

  const Dataset half = subsample(ds, 0.5, 9);
  CHECK(half.size() == 50);

  CHECK_THROWS_AS(subsample(ds, 0.001, 9), ShapeError);
  CHECK_THROWS_AS(subsample(ds, 0.0, 9), ShapeError);
  CHECK_THROWS_AS(subsample(ds, 1.5, 9), ShapeError);

  CHECK(is_paper_fraction(0.125));
  CHECK_FALSE(is_paper_fraction(0.3));
}

TEST_CASE("subsample inclusion probability matches the fraction") {
  const TaskSpec spec = make_task(TaskKind::kClassification, 5);
  const Dataset ds = sample_dataset(spec, 40, "train", 1);
  std::vector<int> hits(ds.size(), 0);
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    const Dataset sub = subsample(ds, 0.25, 1000 + t);
    std::set<TokenSeq> queries;
    for (const auto& s : sub.samples) queries.insert(s.query);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (queries.count(ds.samples[i].query)) ++hits[i];
    }
  }
  // Monte Carlo oracle: each sample should appear in ~25% of trials;
  // 4 sigma of a binomial(1000, 0.25) is ~0.055.
  for (int h : hits) {
    CHECK(std::abs(h / static_cast<double>(trials) - 0.25) < 0.055);
  }
}

TEST_CASE("regression gold values stay within [-1, 1]") {
  const TaskSpec spec = make_task(TaskKind::kRegression, 7);
  const Dataset ds = sample_dataset(spec, 500, "train", 2);
  for (const auto& s : ds.samples) {
    const double v = decode_value(s.answer[0]);
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  CHECK(decode_value(encode_value_token(0)) == -1.0);
  CHECK(decode_value(encode_value_token(5)) == 0.0);
  CHECK(decode_value(encode_value_token(10)) == 1.0);
}

TEST_CASE("dataset serialization round-trips losslessly") {
  const TaskSpec spec = make_task(TaskKind::kTagging, 3);
  Dataset ds = sample_dataset(spec, 64, "eval", 4);
  ds.provenance = "synthesized-round-2";

  const auto path = std::filesystem::temp_directory_path() / "ftlab_ds_test.jsonl";
  save_dataset(ds, path.string());
  const Dataset loaded = load_dataset(path.string());
  std::filesystem::remove(path);

  CHECK(loaded.split == ds.split);
  CHECK(loaded.provenance == ds.provenance);
  REQUIRE(loaded.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) CHECK(loaded.samples[i] == ds.samples[i]);
}

TEST_CASE("answer format checks per kind") {
  const TaskSpec tag = make_task(TaskKind::kTagging, 1);
  CHECK(answer_matches_format(tag, {}));  // entity-free inputs have empty answers
  CHECK(answer_matches_format(tag, {kPool1Base, kPool1Base + 1}));
  CHECK_FALSE(answer_matches_format(tag, {kPool1Base, kPool1Base}));  // duplicate
  CHECK_FALSE(answer_matches_format(tag, {kLabelPositive}));          // not content
  CHECK_FALSE(answer_matches_format(
      tag, {kPool1Base, kPool1Base + 1, kPool1Base + 2, kPool1Base + 3}));

  const TaskSpec cls = make_task(TaskKind::kClassification, 1);
  CHECK(answer_matches_format(cls, {kLabelPositive}));
  CHECK_FALSE(answer_matches_format(cls, {kLabelPositive, kLabelNegative}));
  CHECK_FALSE(answer_matches_format(cls, {kLabelUp}));  // wrong label family

  const TaskSpec reg = make_task(TaskKind::kRegression, 1);
  CHECK(answer_matches_format(reg, {kValueBase + 3}));
  CHECK_FALSE(answer_matches_format(reg, {kValueBase + kValueCount}));
}

TEST_CASE("variant tasks shift the content pool but keep the answer space") {
  const TaskSpec src = make_task(TaskKind::kClassification, 6);
  const TaskSpec var = make_variant_task(src, 60, "clsb2", kClsBVariantPrompt);
  CHECK(var.labels == src.labels);
  CHECK(var.prompt == kClsBVariantPrompt);
  for (Token t : var.content_pool) CHECK(t >= kPool2Base);

  int shared = 0;
  for (Token t : var.pos_indicators) {
    if (std::find(src.pos_indicators.begin(), src.pos_indicators.end(), t) !=
        src.pos_indicators.end()) {
      ++shared;
    }
  }
  CHECK(shared >= 1);  // transfer channel
  CHECK(shared < static_cast<int>(var.pos_indicators.size()));

  const Dataset ds = sample_dataset(var, 200, "train", 2);
  for (const auto& s : ds.samples) {
    const TokenSeq content(s.query.begin() + 1, s.query.end());
    CHECK(gold_answer(var, content) == s.answer);
  }

  const TaskSpec reg = make_task(TaskKind::kRegression, 6);
  const TaskSpec regv = make_variant_task(reg, 61, "reg2", kRegVariantPrompt);
  CHECK(regv.count_token == reg.count_token);
}

TEST_CASE("parse_prediction handles malformed generations") {
  const TaskSpec cls = make_task(TaskKind::kClassification, 1);
  const ParsedPrediction bad = parse_prediction(cls, {kPool1Base});
  CHECK_FALSE(bad.ok);
  CHECK(bad.label_index == -1);

  const ParsedPrediction good = parse_prediction(cls, {cls.labels[2]});
  CHECK(good.ok);
  CHECK(good.label_index == 2);

  const TaskSpec reg = make_task(TaskKind::kRegression, 1);
  const ParsedPrediction imputed = parse_prediction(reg, {kLabelPositive});
  CHECK_FALSE(imputed.ok);
  CHECK(imputed.value == 0.0);

  const TaskSpec tag = make_task(TaskKind::kTagging, 1);
  const ParsedPrediction partial =
      parse_prediction(tag, {kPool1Base, kLabelPositive, kPool1Base + 2});
  CHECK_FALSE(partial.ok);
  CHECK(partial.entities == std::vector<Token>{kPool1Base, kPool1Base + 2});
}

TEST_CASE("chance levels are analytic") {
  CHECK(make_task(TaskKind::kTagging, 1).chance_level() == 0.0);
  CHECK(make_task(TaskKind::kClassification, 1).chance_level() ==
        doctest::Approx(1.0 / 3).epsilon(1e-12));
  TaskOptions two;
  two.n_labels = 2;
  CHECK(make_task(TaskKind::kClassification, 1, two).chance_level() ==
        doctest::Approx(0.5).epsilon(1e-12));
  // uniform counts 0..10 mapped to [-1, 1]: sqrt(E v^2) = sqrt(0.4)
  CHECK(make_task(TaskKind::kRegression, 1).chance_level() ==
        doctest::Approx(std::sqrt(0.4)).epsilon(1e-12));
}
