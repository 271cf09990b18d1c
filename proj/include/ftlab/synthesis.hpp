#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ftlab/model.hpp"
#include "ftlab/tasks.hpp"
#include "ftlab/training.hpp"

namespace ftlab {

enum class ExtractReason { kOk, kNoMarker, kMultiMarker, kFormatMismatch };

struct Extraction {
  bool ok = false;
  TokenSeq answer;
  ExtractReason reason = ExtractReason::kOk;
};

/// Pulls the final answer out of a reasoning-then-answer response: exactly one
/// marker, then the tokens up to END (or end of response), which must match
/// the task answer format. Rejection is a normal outcome, never an abort.
Extraction extract_answer(const TokenSeq& response, const TaskSpec& task,
                          Token marker = kAnswerMarker);

/// Rewrites (query, answer) into the annotation format: the query gains the
/// CoT request prefix and the answer gains the marker prefix. Mixing this
/// into source-task SFT data teaches a policy to answer annotation prompts.
Dataset to_annotation_format(const Dataset& ds, Token cot_prompt = kCotPrompt,
                             Token marker = kAnswerMarker);

struct SynthesisConfig {
  TaskSpec task;       // target task; its planted training labels are never used
  int n_corpus = 256;
  TokenSeq cot_template;  // defaults to {kCotPrompt, task.prompt}
  Token answer_marker = kAnswerMarker;
  int rounds = 1;
  std::uint64_t seed = 0;
  SamplerConfig sampler;     // annotation sampler; temperature 0 by default
  TrainConfig train;         // template; curriculum is filled per round
  int train_steps = 200;
  bool dpo_substage = false;  // off by default
  SamplerConfig dpo_sampler;
  int dpo_steps = 0;
  const Dataset* eval_split = nullptr;  // held-out planted eval split

  TokenSeq annotation_query(const TokenSeq& content) const;
  void validate() const;
};

struct SynthesisRound {
  int round = 0;
  int corpus_size = 0;
  int annotations = 0;
  int accepted = 0;
  int rejected = 0;
  int no_marker = 0;
  int multi_marker = 0;
  int format_mismatch = 0;
  std::size_t dataset_tokens = 0;
  double annotation_accuracy = 0.0;  // accepted answers vs planted gold
  double eval_metric = 0.0;          // after this round's training
};

struct SynthesisReport {
  double baseline_metric = 0.0;  // pre-round policy on the eval split
  std::vector<SynthesisRound> rounds;
};

/// A failed round carries the partial report up to that point.
struct SynthesisError : std::runtime_error {
  SynthesisReport partial;
  SynthesisError(const std::string& msg, SynthesisReport partial_)
      : std::runtime_error(msg), partial(std::move(partial_)) {}
};

/// Step (1): unlabeled task inputs from the planted generator, labels withheld.
std::vector<TokenSeq> collect_corpus(const SynthesisConfig& cfg,
                                     std::uint64_t round_seed);

/// Step (2): one response per corpus item from the current policy.
std::vector<TokenSeq> annotate(const PolicyParams& policy,
                               const std::vector<TokenSeq>& corpus,
                               const SynthesisConfig& cfg);

/// Steps (1)-(4): corpus, annotation, extraction and query formatting.
/// The returned dataset is empty when every annotation was rejected; the
/// round row carries the accounting either way.
std::pair<Dataset, SynthesisRound> synthesize_round(const PolicyParams& policy,
                                                    const SynthesisConfig& cfg,
                                                    int round_index);

/// Full loop: synthesize, train (SFT, optional DPO), evaluate; repeated
/// `rounds` times. Throws SynthesisError with the partial report when a round
/// yields nothing.
std::pair<PolicyParams, SynthesisReport> iterate(const PolicyParams& policy0,
                                                 const SynthesisConfig& cfg);

void save_synthesis_csv(const SynthesisReport& report, const std::string& path);

}  // namespace ftlab
