#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ftlab/model.hpp"

namespace ftlab {

// Task vocabulary layout on top of the reserved PAD/END slots. All five task
// families and their domain-shifted variants fit in the default 64-slot vocab.
constexpr Token kTagPrompt = 2;
constexpr Token kClsAPrompt = 3;
constexpr Token kClsBPrompt = 4;
constexpr Token kClsCPrompt = 5;
constexpr Token kRegPrompt = 6;
constexpr Token kAnswerMarker = 7;  // delimits the final answer in CoT responses
constexpr Token kMarkLeft = 8;
constexpr Token kMarkRight = 9;
constexpr Token kLabelPositive = 10;
constexpr Token kLabelNegative = 11;
constexpr Token kLabelNeutral = 12;
constexpr Token kLabelUp = 13;
constexpr Token kLabelDown = 14;
constexpr Token kValueBase = 15;  // 11 consecutive value tokens, -1.0 .. 1.0
constexpr int kValueCount = 11;
constexpr Token kClsBVariantPrompt = 26;
constexpr Token kClsCVariantPrompt = 27;
constexpr Token kRegVariantPrompt = 28;
constexpr Token kCotPrompt = 29;  // asks for reasoning-then-answer output
constexpr Token kPool1Base = 30;
constexpr Token kPool1End = 47;
constexpr Token kPool2Base = 47;
constexpr Token kPool2End = 64;
constexpr int kTaskVocabSize = 64;

enum class TaskKind { kTagging, kClassification, kRegression };
enum class MetricKind { kF1Tagging, kF1Classification, kRmse };

/// Planted generative grammar for one synthetic task. The rule determines a
/// unique gold answer for every query it generates.
struct TaskSpec {
  std::string task_id;
  TaskKind kind = TaskKind::kTagging;
  MetricKind metric = MetricKind::kF1Tagging;
  Token prompt = kTagPrompt;
  std::uint64_t seed = 0;

  std::vector<Token> content_pool;  // filler alphabet

  // tagging: entities are single tokens flanked by kMarkLeft / kMarkRight.
  // Defaults keep the copy mechanism learnable from scratch at desk scale.
  int min_filler = 8;
  int max_filler = 14;
  int max_entities = 1;

  // classification: label = majority of planted indicator tokens
  std::vector<Token> labels;
  std::vector<Token> pos_indicators;
  std::vector<Token> neg_indicators;

  // regression: value = scaled count of the designated token
  Token count_token = 0;
  int max_count = kValueCount - 1;
  int reg_len = 16;

  int answer_max_len() const;
  double chance_level() const;
  bool operator==(const TaskSpec&) const = default;
};

struct TaskOptions {
  std::string task_id;            // defaults to the kind name
  std::optional<Token> prompt;    // defaults per kind
  int n_labels = 3;               // classification only: 2 or 3
};

TaskSpec make_task(TaskKind kind, std::uint64_t seed, const TaskOptions& opts = {});

/// String-keyed front door: kind in {tagging, classification, regression}.
/// Unknown kinds are rejected.
TaskSpec make_task(const std::string& kind, std::uint64_t seed);

/// Domain-shifted variant: content vocabulary moves to the second pool and
/// roughly half of the indicator tokens are replaced, while labels, answer
/// format and (for regression) the designated token carry over. Stands in for
/// a dataset with no training split of its own.
TaskSpec make_variant_task(const TaskSpec& source, std::uint64_t seed,
                           const std::string& task_id, Token prompt);

/// (query, answer) pair; the query carries the task prompt prefix.
struct Sample {
  TokenSeq query;
  TokenSeq answer;
  std::string task_id;
  bool operator==(const Sample&) const = default;
};

struct Dataset {
  std::vector<Sample> samples;
  std::string split = "train";
  std::string provenance = "planted";
  std::optional<TaskSpec> task;  // embedded so dataset files are self-describing

  std::size_t size() const { return samples.size(); }
  std::size_t token_count() const;
};

/// Unlabeled task contentplus its gold answer, before prompt formatting.
struct ContentSample {
  TokenSeq content;
  TokenSeq answer;
};

ContentSample sample_content(const TaskSpec& spec, Rng& rng);

/// The planted rule: re-derives the unique gold answer from raw content.
TokenSeq gold_answer(const TaskSpec& spec, const TokenSeq& content);

/// n samples with gold answers. Train and eval splits draw from disjoint
/// seed streams so their queries never collide.
Dataset sample_dataset(const TaskSpec& spec, int n, const std::string& split,
                       std::uint64_t seed);

/// Uniform without-replacement subset of round(fraction * n) samples.
/// The paper protocol uses {1.0, 0.5, 0.25, 0.125}; other fractions work but
/// are flagged by is_paper_fraction.
Dataset subsample(const Dataset& ds, double fraction, std::uint64_t seed);
bool is_paper_fraction(double fraction);

/// Answer-format predicate shared by extraction and evaluation parsing.
bool answer_matches_format(const TaskSpec& spec, const TokenSeq& answer);

/// Numeric value carried by a regression answer token.
double decode_value(Token tok);
Token encode_value_token(int count);

struct ParsedPrediction {
  bool ok = false;                // generated tokens matched the answer format
  std::vector<Token> entities;    // tagging
  int label_index = -1;           // classification; -1 means INVALID
  double value = 0.0;             // regression; midpoint-imputed when !ok
};

ParsedPrediction parse_prediction(const TaskSpec& spec, const TokenSeq& generated);

nlohmann::json task_to_json(const TaskSpec& spec);
TaskSpec task_from_json(const nlohmann::json& j);

// Line-delimited dataset container (JSONL with a schema header line).
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace ftlab
