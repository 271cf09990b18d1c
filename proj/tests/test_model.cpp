#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "ftlab/errors.hpp"
#include "ftlab/model.hpp"
#include "ftlab/rng.hpp"

using namespace ftlab;

namespace {

ModelConfig tiny_config(int vocab = 16, int d = 16, int layers = 2, int heads = 2,
                        std::uint64_t seed = 5) {
  ModelConfig cfg;
  cfg.vocab_size = vocab;
  cfg.context_len = 32;
  cfg.d_model = d;
  cfg.n_heads = heads;
  cfg.n_layers = layers;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig cfg = tiny_config();
  cfg.d_model = 15;
  CHECK_THROWS_AS(cfg.validate(), ShapeError);
  cfg = tiny_config(1);
  CHECK_THROWS_AS(cfg.validate(), ShapeError);
}

TEST_CASE("uniform-logit model gives -T ln V per answer token") {
  const ModelConfig cfg = tiny_config(64, 16, 1, 2);
  const PolicyParams p = PolicyParams::zero_init(cfg);
  const TokenSeq query = {2, 3, 4};
  const TokenSeq answer = {5, 6, 7};  // T = 4 including END
  const double lp = logprob_answer(p, query, answer);
  CHECK(lp == doctest::Approx(-4.0 * std::log(64.0)).epsilon(1e-12));
}

TEST_CASE("known next-token probability 0.25 gives ln 4 as negated loss") {
  const ModelConfig cfg = tiny_config(4, 8, 1, 1);
  const PolicyParams p = PolicyParams::zero_init(cfg);
  const TokenSeq query = {2, 3};
  const double lp = logprob_answer(p, query, {});  // only END is scored
  CHECK(lp == doctest::Approx(-1.3862943611198906).epsilon(1e-12));
}

TEST_CASE("logprob matches per-position softmax chain oracle") {
  const ModelConfig cfg = tiny_config(8, 16, 2, 2);
  const PolicyParams p = PolicyParams::init(cfg);
  const TokenSeq query = {2, 5, 3};
  const TokenSeq answer = {4, 6};

  TokenSeq input = query;
  input.insert(input.end(), answer.begin(), answer.end());
  const Evaluator eval(p);
  const Matrix logits = eval.logits(input);
  const Matrix probs = softmax_rows(logits);

  TokenSeq scored = answer;
  scored.push_back(kEndToken);
  double expected = 0.0;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    expected += std::log(probs.at(static_cast<int>(query.size() - 1 + i), scored[i]));
  }
  CHECK(logprob_answer(p, query, answer) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("over-long sequences are rejected with lengths reported") {
  const ModelConfig cfg = tiny_config();
  const PolicyParams p = PolicyParams::zero_init(cfg);
  const TokenSeq query(20, 2);
  const TokenSeq answer(12, 3);
  CHECK_THROWS_WITH_AS(logprob_answer(p, query, answer), doctest::Contains("20"),
                       ShapeError);
}

TEST_CASE("tape forward and plain forward agree") {
  const ModelConfig cfg = tiny_config(12, 16, 2, 2, 9);
  const PolicyParams p = PolicyParams::init(cfg);
  const TokenSeq tokens = {2, 7, 3, 11, 4};

  GradTape tape;
  BoundParams bp = bind_params(tape, p, false);
  const Matrix tape_logits = tape.value(forward_logits_node(tape, bp, tokens));
  const Matrix plain_logits = Evaluator(p).logits(tokens);

  REQUIRE(tape_logits.same_shape(plain_logits));
  for (std::size_t i = 0; i < tape_logits.size(); ++i) {
    CHECK(tape_logits.data[i] == plain_logits.data[i]);
  }
}

TEST_CASE("zero-initialized adapter B leaves the forward pass unchanged") {
  const ModelConfig cfg = tiny_config(12, 16, 2, 2, 13);
  PolicyParams base = PolicyParams::init(cfg);
  PolicyParams adapted = base;
  adapted.attach_lora(4, 8.0, 77);

  const TokenSeq tokens = {2, 7, 3, 11};
  const Matrix a = Evaluator(base).logits(tokens);
  const Matrix b = Evaluator(adapted).logits(tokens);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data[i] == b.data[i]);

  GradTape tape;
  BoundParams bp = bind_params(tape, adapted, false);
  const Matrix c = tape.value(forward_logits_node(tape, bp, tokens));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data[i] == c.data[i]);
}

TEST_CASE("adapter factorization matches merged weights closely") {
  const ModelConfig cfg = tiny_config(12, 16, 1, 2, 21);
  PolicyParams p = PolicyParams::init(cfg);
  p.attach_lora(4, 8.0, 78);
  Rng rng(3);
  for (auto& [name, f] : p.lora->factors) {
    for (auto& x : f.b.data) x = rng.normal(0.0, 0.05);
  }

  const TokenSeq tokens = {2, 7, 3};
  GradTape tape;
  BoundParams bp = bind_params(tape, p, false);
  const Matrix structured = tape.value(forward_logits_node(tape, bp, tokens));
  const Matrix folded = Evaluator(p).logits(tokens);  // merges before running
  for (std::size_t i = 0; i < structured.size(); ++i) {
    CHECK(structured.data[i] == doctest::Approx(folded.data[i]).epsilon(1e-10));
  }
}

TEST_CASE("causality: a future token never changes earlier logits") {
  const ModelConfig cfg = tiny_config(12, 16, 2, 2, 31);
  const PolicyParams p = PolicyParams::init(cfg);
  const Evaluator eval(p);
  TokenSeq tokens = {2, 7, 3, 11, 4, 9};
  const Matrix before = eval.logits(tokens);
  tokens[4] = 5;  // change token at position 4
  const Matrix after = eval.logits(tokens);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < before.cols; ++j) {
      CHECK(before.at(i, j) == after.at(i, j));
    }
  }
}

TEST_CASE("single-token answer probabilities sum to the next-token mass") {
  const ModelConfig cfg = tiny_config(8, 16, 1, 2, 17);
  const PolicyParams p = PolicyParams::init(cfg);
  const TokenSeq query = {2, 3};

  // Sum over all single-token answers of exp(ln p(tok) + ln p(END|tok))
  // equals sum over tok of p(tok) * p(END | tok); compare against the direct
  // enumeration from the forward pass.
  const Evaluator eval(p);
  double total = 0.0;
  double expected = 0.0;
  for (Token tok = 0; tok < 8; ++tok) {
    total += std::exp(logprob_answer(p, query, {tok}));
    TokenSeq extended = query;
    extended.push_back(tok);
    const Matrix l0 = softmax_rows(eval.last_logits(query));
    const Matrix l1 = softmax_rows(eval.last_logits(extended));
    expected += l0.at(0, tok) * l1.at(0, kEndToken);
  }
  CHECK(total == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("snapshot equals source now and stays frozen") {
  const ModelConfig cfg = tiny_config(12, 16, 1, 2, 41);
  PolicyParams p = PolicyParams::init(cfg);
  const PolicyParams ref = snapshot_reference(p);
  CHECK(ref.role == ParamRole::kReferenceFrozen);

  const TokenSeq query = {2, 7};
  const TokenSeq answer = {3};
  CHECK(logprob_answer(p, query, answer) == logprob_answer(ref, query, answer));

  const std::uint64_t hash_before = params_hash(ref);
  p.tok_embed.at(2, 0) += 0.5;  // "training" the source; token 2 is in the query
  CHECK(params_hash(ref) == hash_before);
  CHECK(logprob_answer(p, query, answer) != logprob_answer(ref, query, answer));
}

TEST_CASE("temperature 0 equals greedy argmax and top_k 1") {
  const ModelConfig cfg = tiny_config(12, 16, 1, 2, 43);
  const PolicyParams p = PolicyParams::init(cfg);
  const Evaluator eval(p);
  const TokenSeq query = {2, 7, 5};

  SamplerConfig greedy;
  greedy.temperature = 0.0;
  greedy.max_new_tokens = 8;
  const Generation a = generate(eval, query, greedy, 1);

  // manual argmax decode
  TokenSeq current = query;
  TokenSeq expected;
  for (int i = 0; i < 8; ++i) {
    const Matrix l = eval.last_logits(current);
    Token best = 0;
    for (int j = 1; j < l.cols; ++j)
      if (l.at(0, j) > l.at(0, best)) best = j;
    if (best == kEndToken) break;
    expected.push_back(best);
    current.push_back(best);
  }
  CHECK(a.tokens == expected);

  SamplerConfig topk1;
  topk1.temperature = 1.0;
  topk1.top_k = 1;
  topk1.max_new_tokens = 8;
  const Generation b = generate(eval, query, topk1, 2);
  CHECK(b.tokens == a.tokens);
}

TEST_CASE("sampled token frequencies match softmax within 3 sigma") {
  Matrix logits(1, 5);
  logits.at(0, 0) = 0.3;
  logits.at(0, 1) = -0.7;
  logits.at(0, 2) = 1.1;
  logits.at(0, 3) = 0.0;
  logits.at(0, 4) = -1.4;
  const Matrix probs = softmax_rows(logits);

  SamplerConfig cfg;
  cfg.temperature = 1.0;
  Rng rng(99);
  const int n = 10000;
  std::vector<int> counts(5, 0);
  for (int i = 0; i < n; ++i) counts[sample_token(logits, {}, cfg, rng)]++;
  for (int j = 0; j < 5; ++j) {
    const double expct = probs.at(0, j);
    const double sigma = std::sqrt(expct * (1.0 - expct) / n);
    CHECK(std::abs(counts[j] / static_cast<double>(n) - expct) < 3.0 * sigma);
  }
}

TEST_CASE("repetition penalty strictly lowers emitted-token logits") {
  Matrix logits(1, 4);
  logits.at(0, 0) = 2.0;
  logits.at(0, 1) = -1.0;
  logits.at(0, 2) = 0.5;
  logits.at(0, 3) = -0.25;

  SamplerConfig plain;
  SamplerConfig penalized;
  penalized.repetition_penalty = 1.7;

  // Exercise through the argmax path: token 0 was emitted, so its penalized
  // logit 2.0/1.7 ~ 1.18 still wins; after also emitting 2 the order holds.
  Rng rng(1);
  SamplerConfig greedy = penalized;
  greedy.temperature = 0.0;
  CHECK(sample_token(logits, {0}, greedy, rng) == 0);

  // Direct contract: positive logits divide, negative multiply.
  const double pos = 2.0 / 1.7;
  const double neg = -1.0 * 1.7;
  CHECK(pos < 2.0);
  CHECK(neg < -1.0);
}

TEST_CASE("generation flags truncation at max_new_tokens") {
  const ModelConfig cfg = tiny_config(12, 16, 1, 2, 47);
  PolicyParams p = PolicyParams::zero_init(cfg);
  p.b_out.at(0, 3) = 50.0;  // always emit token 3, never END
  SamplerConfig s;
  s.temperature = 0.0;
  s.max_new_tokens = 5;
  const Generation g = generate(p, {2}, s, 1);
  CHECK(g.truncated);
  CHECK(g.tokens == TokenSeq{3, 3, 3, 3, 3});
}

TEST_CASE("sampler config validation") {
  SamplerConfig s;
  s.top_k = 4;
  s.top_p = 0.9;
  CHECK_THROWS_AS(s.validate(), ShapeError);
  s = SamplerConfig{};
  s.repetition_penalty = 0.5;
  CHECK_THROWS_AS(s.validate(), ShapeError);
  s = SamplerConfig{};
  s.top_p = 1.5;
  CHECK_THROWS_AS(s.validate(), ShapeError);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  const ModelConfig cfg = tiny_config(12, 16, 2, 2, 53);
  PolicyParams p = PolicyParams::init(cfg);
  p.attach_lora(4, 8.0, 79);
  Rng rng(5);
  for (auto& [name, f] : p.lora->factors)
    for (auto& x : f.b.data) x = rng.normal(0.0, 0.05);

  const auto path = std::filesystem::temp_directory_path() / "ftlab_ckpt_test.bin";
  save_checkpoint(p, path.string());
  const PolicyParams q = load_checkpoint(path.string());
  std::filesystem::remove(path);

  CHECK(params_hash(p) == params_hash(q));
  CHECK(q.config.d_model == cfg.d_model);
  REQUIRE(q.lora.has_value());
  CHECK(q.lora->rank == 4);

  auto pt = named_tensors(p);
  auto qt = named_tensors(q);
  REQUIRE(pt.size() == qt.size());
  for (std::size_t i = 0; i < pt.size(); ++i) {
    CHECK(pt[i].first == qt[i].first);
    REQUIRE(pt[i].second->size() == qt[i].second->size());
    for (std::size_t j = 0; j < pt[i].second->size(); ++j) {
      // bit-exact: compare binary representations
      CHECK(pt[i].second->data[j] == qt[i].second->data[j]);
    }
  }
}

TEST_CASE("merge_lora folds the adapters exactly once") {
  const ModelConfig cfg = tiny_config(12, 16, 1, 2, 59);
  PolicyParams p = PolicyParams::init(cfg);
  p.attach_lora(4, 8.0, 80);
  Rng rng(7);
  for (auto& [name, f] : p.lora->factors)
    for (auto& x : f.b.data) x = rng.normal(0.0, 0.05);

  const TokenSeq tokens = {2, 7, 3};
  const Matrix before = Evaluator(p).logits(tokens);  // evaluator folds a copy
  p.merge_lora();
  CHECK_FALSE(p.lora.has_value());
  const Matrix after = Evaluator(p).logits(tokens);
  for (std::size_t i = 0; i < before.size(); ++i)
    CHECK(before.data[i] == after.data[i]);
}
