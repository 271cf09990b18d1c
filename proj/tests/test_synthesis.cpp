#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>

#include "ftlab/errors.hpp"
#include "ftlab/evaluation.hpp"
#include "ftlab/synthesis.hpp"

using namespace ftlab;

namespace {

ModelConfig small_config(std::uint64_t seed = 3, int d = 16) {
  ModelConfig cfg;
  cfg.vocab_size = kTaskVocabSize;
  cfg.context_len = 64;
  cfg.d_model = d;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.seed = seed;
  return cfg;
}

/// Deterministic annotator: emits [marker, labels[0]] for any prompt.
PolicyParams rigged_annotator(const TaskSpec& task) {
  PolicyParams p = PolicyParams::zero_init(small_config());
  p.b_out.at(0, kAnswerMarker) = 3.0;
  p.b_out.at(0, task.labels.at(0)) = 2.9;
  p.b_out.at(0, kEndToken) = 2.8;
  return p;
}

SamplerConfig rigged_sampler() {
  SamplerConfig s;
  s.temperature = 0.0;
  s.repetition_penalty = 2.0;  // break the argmax fixpoint after each emission
  s.max_new_tokens = 6;
  return s;
}

}  // namespace

TEST_CASE("extract_answer basics") {
  const TaskSpec cls = make_task(TaskKind::kClassification, 1);

  Extraction ok = extract_answer({kAnswerMarker, cls.labels[1]}, cls);
  CHECK(ok.ok);
  CHECK(ok.answer == TokenSeq{cls.labels[1]});

  Extraction with_end = extract_answer(
      {kPool1Base, kAnswerMarker, cls.labels[0], kEndToken, kPool1Base}, cls);
  CHECK(with_end.ok);
  CHECK(with_end.answer == TokenSeq{cls.labels[0]});

  Extraction none = extract_answer({kPool1Base, cls.labels[0]}, cls);
  CHECK_FALSE(none.ok);
  CHECK(none.reason == ExtractReason::kNoMarker);

  Extraction multi =
      extract_answer({kAnswerMarker, cls.labels[0], kAnswerMarker}, cls);
  CHECK_FALSE(multi.ok);
  CHECK(multi.reason == ExtractReason::kMultiMarker);

  Extraction bad = extract_answer({kAnswerMarker, kPool1Base}, cls);
  CHECK_FALSE(bad.ok);
  CHECK(bad.reason == ExtractReason::kFormatMismatch);
}

TEST_CASE("reasoning tokens before the marker are ignored") {
  const TaskSpec reg = make_task(TaskKind::kRegression, 2);
  const TokenSeq response = {kPool1Base,      kPool1Base + 3, kPool1Base + 5,
                             kAnswerMarker, kValueBase + 7};
  const Extraction ex = extract_answer(response, reg);
  CHECK(ex.ok);
  CHECK(ex.answer == TokenSeq{kValueBase + 7});
}

TEST_CASE("extract_answer survives 10k fuzzed responses") {
  const TaskSpec tag = make_task(TaskKind::kTagging, 3);
  const TaskSpec cls = make_task(TaskKind::kClassification, 3);
  const TaskSpec reg = make_task(TaskKind::kRegression, 3);
  Rng rng(1234);
  int accepted = 0;
  for (int i = 0; i < 10000; ++i) {
    const int len = rng.uniform_int(0, 20);
    TokenSeq response;
    for (int j = 0; j < len; ++j)
      response.push_back(rng.uniform_int(0, kTaskVocabSize - 1));
    for (const TaskSpec* spec : {&tag, &cls, &reg}) {
      const Extraction ex = extract_answer(response, *spec);
      if (ex.ok) {
        ++accepted;
        CHECK(answer_matches_format(*spec, ex.answer));
      }
    }
  }
  CHECK(accepted > 0);  // the fuzz actually exercises acceptance
}

TEST_CASE("corpus items are unlabeled task content") {
  const TaskSpec cls = make_task(TaskKind::kClassification, 7);
  SynthesisConfig cfg;
  cfg.task = cls;
  cfg.n_corpus = 200;
  cfg.seed = 9;

  const auto corpus = collect_corpus(cfg, 1);
  CHECK(corpus.size() == 200);
  for (const auto& item : corpus) {
    CHECK(!item.empty());
    for (Token t : item) {
      // no gold labels or prompts in the corpus
      CHECK(t != cls.labels[0]);
      CHECK(t != cls.labels[1]);
      CHECK(t != cls.labels[2]);
      CHECK(t != cls.prompt);
    }
  }
}

TEST_CASE("corpora from different seeds are essentially disjoint") {
  const TaskSpec tag = make_task(TaskKind::kTagging, 7);
  SynthesisConfig a;
  a.task = tag;
  a.n_corpus = 1000;
  a.seed = 1;
  SynthesisConfig b = a;
  b.seed = 2;

  const auto ca = collect_corpus(a, 1);
  const auto cb = collect_corpus(b, 1);
  std::set<TokenSeq> seen(ca.begin(), ca.end());
  int overlap = 0;
  for (const auto& item : cb) overlap += seen.count(item) ? 1 : 0;
  CHECK(overlap == 0);
}

TEST_CASE("annotation is deterministic at temperature zero") {
  const TaskSpec cls = make_task(TaskKind::kClassification, 11);
  SynthesisConfig cfg;
  cfg.task = cls;
  cfg.n_corpus = 16;
  cfg.seed = 5;
  cfg.sampler = rigged_sampler();
  const PolicyParams policy = rigged_annotator(cls);

  const auto corpus = collect_corpus(cfg, 1);
  const auto r1 = annotate(policy, corpus, cfg);
  const auto r2 = annotate(policy, corpus, cfg);
  CHECK(r1.size() == corpus.size());
  CHECK(r1 == r2);
}

TEST_CASE("round accounting conserves annotations") {
  const TaskSpec cls = make_task(TaskKind::kClassification, 13);
  SynthesisConfig cfg;
  cfg.task = cls;
  cfg.n_corpus = 64;
  cfg.seed = 3;
  cfg.sampler = rigged_sampler();
  const PolicyParams policy = rigged_annotator(cls);

  const auto [ds, row] = synthesize_round(policy, cfg, 1);
  CHECK(row.annotations == row.accepted + row.rejected);
  CHECK(row.rejected == row.no_marker + row.multi_marker + row.format_mismatch);
  CHECK(static_cast<int>(ds.size()) == row.accepted);
  CHECK(ds.provenance == "synthesized-round-1");
  CHECK(row.dataset_tokens == ds.token_count());

  // the rigged annotator always answers labels[0]
  CHECK(row.accepted == 64);
  for (const auto& s : ds.samples) {
    CHECK(s.query[0] == cls.prompt);
    CHECK(s.answer == TokenSeq{cls.labels[0]});
  }
}

TEST_CASE("synthesized samples satisfy dataset invariants") {
  const TaskSpec cls = make_task(TaskKind::kClassification, 17);
  SynthesisConfig cfg;
  cfg.task = cls;
  cfg.n_corpus = 32;
  cfg.seed = 4;
  cfg.sampler = rigged_sampler();
  const auto [ds, row] = synthesize_round(rigged_annotator(cls), cfg, 2);
  for (const auto& s : ds.samples) {
    CHECK(answer_matches_format(cls, s.answer));
    CHECK(s.task_id == cls.task_id);
  }
}

TEST_CASE("iterate with rounds=1 runs one synthesize+train cycle") {
  const TaskSpec cls = make_task(TaskKind::kClassification, 19);
  const Dataset eval_split = sample_dataset(cls, 40, "eval", 21);

  SynthesisConfig cfg;
  cfg.task = cls;
  cfg.n_corpus = 32;
  cfg.rounds = 1;
  cfg.seed = 6;
  cfg.sampler = rigged_sampler();
  cfg.train.learning_rate = 1e-3;
  cfg.train.batch_size = 8;
  cfg.train_steps = 5;
  cfg.eval_split = &eval_split;

  auto [policy, report] = iterate(rigged_annotator(cls), cfg);
  CHECK(report.rounds.size() == 1);
  CHECK(report.rounds[0].accepted > 0);

  cfg.rounds = 3;
  auto [policy3, report3] = iterate(rigged_annotator(cls), cfg);
  CHECK(report3.rounds.size() == 3);  // metrics trace length = rounds
}

TEST_CASE("a policy that never emits the marker fails the round loudly") {
  const TaskSpec cls = make_task(TaskKind::kClassification, 23);
  const Dataset eval_split = sample_dataset(cls, 20, "eval", 5);
  PolicyParams mute = PolicyParams::zero_init(small_config());
  mute.b_out.at(0, kEndToken) = 50.0;  // immediate END, no marker ever

  SynthesisConfig cfg;
  cfg.task = cls;
  cfg.n_corpus = 16;
  cfg.rounds = 1;
  cfg.seed = 7;
  cfg.sampler = rigged_sampler();
  cfg.train_steps = 5;
  cfg.eval_split = &eval_split;

  CHECK_THROWS_AS(iterate(mute, cfg), SynthesisError);
  try {
    iterate(mute, cfg);
  } catch (const SynthesisError& e) {
    CHECK(e.partial.rounds.empty());  // failed in round 1
  }
}

TEST_CASE("self-training on own accurate annotations does not degrade the metric") {
  // Teach a small model the task (in both plain and annotation formats), then
  // run one self-training round; with high annotation accuracy the eval metric
  // must hold within the flake guard.
  const TaskSpec cls = make_task(TaskKind::kClassification, 29);
  const Dataset train_plain = sample_dataset(cls, 192, "train", 31);
  const Dataset train_cot = to_annotation_format(train_plain);
  Dataset mixed = train_plain;
  mixed.samples.insert(mixed.samples.end(), train_cot.samples.begin(),
                       train_cot.samples.end());
  const Dataset eval_split = sample_dataset(cls, 64, "eval", 33);

  PolicyParams policy = PolicyParams::init(small_config(41, 24));
  TrainConfig tc;
  tc.learning_rate = 2e-3;
  tc.batch_size = 16;
  tc.seed = 8;
  TrainStage stage;
  stage.kind = StageKind::kSft;
  stage.data = &mixed;
  stage.steps = 220;
  tc.curriculum = {stage};
  train(policy, tc);

  SynthesisConfig cfg;
  cfg.task = cls;
  cfg.n_corpus = 96;
  cfg.rounds = 1;
  cfg.seed = 9;
  cfg.sampler.temperature = 0.0;
  cfg.sampler.max_new_tokens = 6;
  cfg.train.learning_rate = 1e-3;
  cfg.train.batch_size = 16;
  cfg.train_steps = 30;
  cfg.eval_split = &eval_split;

  auto [next, report] = iterate(policy, cfg);
  REQUIRE(report.rounds.size() == 1);
  INFO("baseline ", report.baseline_metric, " accuracy ",
       report.rounds[0].annotation_accuracy, " after ", report.rounds[0].eval_metric);
  CHECK(report.rounds[0].annotation_accuracy > cls.chance_level());
  CHECK(report.rounds[0].eval_metric >= report.baseline_metric - 0.02);
}

TEST_CASE("validation rejects a marker inside the answer alphabet") {
  const TaskSpec cls = make_task(TaskKind::kClassification, 31);
  const Dataset eval_split = sample_dataset(cls, 10, "eval", 1);
  SynthesisConfig cfg;
  cfg.task = cls;
  cfg.eval_split = &eval_split;
  cfg.answer_marker = cls.labels[0];
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}
