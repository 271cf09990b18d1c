#include "ftlab/synthesis.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "ftlab/errors.hpp"
#include "ftlab/evaluation.hpp"
#include "ftlab/rng.hpp"

namespace ftlab {

Extraction extract_answer(const TokenSeq& response, const TaskSpec& task,
                          Token marker) {
  Extraction ex;
  std::size_t marker_pos = response.size();
  int markers = 0;
  for (std::size_t i = 0; i < response.size(); ++i) {
    if (response[i] == marker) {
      ++markers;
      marker_pos = i;
    }
  }
  if (markers == 0) {
    ex.reason = ExtractReason::kNoMarker;
    return ex;
  }
  if (markers > 1) {
    ex.reason = ExtractReason::kMultiMarker;
    return ex;
  }
  TokenSeq candidate;
  for (std::size_t i = marker_pos + 1; i < response.size(); ++i) {
    if (response[i] == kEndToken) break;
    candidate.push_back(response[i]);
  }
  if (!answer_matches_format(task, candidate)) {
    ex.reason = ExtractReason::kFormatMismatch;
    return ex;
  }
  ex.ok = true;
  ex.answer = std::move(candidate);
  return ex;
}

Dataset to_annotation_format(const Dataset& ds, Token cot_prompt, Token marker) {
  Dataset out;
  out.split = ds.split;
  out.provenance = ds.provenance;
  out.task = ds.task;
  out.samples.reserve(ds.size());
  for (const auto& s : ds.samples) {
    Sample t;
    t.task_id = s.task_id;
    t.query.push_back(cot_prompt);
    t.query.insert(t.query.end(), s.query.begin(), s.query.end());
    t.answer.push_back(marker);
    t.answer.insert(t.answer.end(), s.answer.begin(), s.answer.end());
    out.samples.push_back(std::move(t));
  }
  return out;
}

TokenSeq SynthesisConfig::annotation_query(const TokenSeq& content) const {
  TokenSeq q = cot_template.empty() ? TokenSeq{kCotPrompt, task.prompt} : cot_template;
  q.insert(q.end(), content.begin(), content.end());
  return q;
}

void SynthesisConfig::validate() const {
  if (n_corpus < 1) throw ValidationError("n_corpus", "must be >= 1");
  if (rounds < 1) throw ValidationError("rounds", "must be >= 1");
  if (train_steps < 1) throw ValidationError("train_steps", "must be >= 1");
  if (eval_split == nullptr) throw ValidationError("eval_split", "required");
  sampler.validate();
  // The marker must stay outside the answer alphabet or matches are ambiguous.
  if (answer_matches_format(task, {answer_marker})) {
    throw ValidationError("answer_marker", "collides with the task answer format");
  }
}

std::vector<TokenSeq> collect_corpus(const SynthesisConfig& cfg,
                                     std::uint64_t round_seed) {
  if (cfg.n_corpus < 1) throw ValidationError("n_corpus", "must be >= 1");
  std::vector<TokenSeq> corpus;
  corpus.reserve(static_cast<std::size_t>(cfg.n_corpus));
  const std::uint64_t base = derive_seed(cfg.seed, 0x636f72707573ULL, round_seed);
  for (int i = 0; i < cfg.n_corpus; ++i) {
    Rng rng(derive_seed(base, static_cast<std::uint64_t>(i)));
    corpus.push_back(sample_content(cfg.task, rng).content);  // labels withheld
  }
  return corpus;
}

std::vector<TokenSeq> annotate(const PolicyParams& policy,
                               const std::vector<TokenSeq>& corpus,
                               const SynthesisConfig& cfg) {
  if (corpus.empty()) throw ShapeError("annotate: corpus is empty");
  const Evaluator eval(policy);
  std::vector<TokenSeq> responses;
  responses.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    responses.push_back(
        generate(eval, cfg.annotation_query(corpus[i]), cfg.sampler,
                 derive_seed(cfg.seed, 0x616e6eULL, i))
            .tokens);
  }
  return responses;
}

namespace {

double eval_metric_on(const PolicyParams& policy, const SynthesisConfig& cfg) {
  SamplerConfig decode;
  decode.max_new_tokens = cfg.task.answer_max_len() + 2;
  const MetricReport rep =
      evaluate(policy, {cfg.task}, {*cfg.eval_split}, decode, "synthesis");
  return rep.rows.at(0).value;
}

}  // namespace

std::pair<Dataset, SynthesisRound> synthesize_round(const PolicyParams& policy,
                                                    const SynthesisConfig& cfg,
                                                    int round_index) {
  const std::vector<TokenSeq> corpus =
      collect_corpus(cfg, static_cast<std::uint64_t>(round_index));
  const std::vector<TokenSeq> responses = annotate(policy, corpus, cfg);

  SynthesisRound row;
  row.round = round_index;
  row.corpus_size = static_cast<int>(corpus.size());
  row.annotations = static_cast<int>(responses.size());

  Dataset ds;
  ds.split = "train";
  ds.provenance = "synthesized-round-" + std::to_string(round_index);
  ds.task = cfg.task;
  int accurate = 0;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    const Extraction ex = extract_answer(responses[i], cfg.task, cfg.answer_marker);
    if (!ex.ok) {
      ++row.rejected;
      switch (ex.reason) {
        case ExtractReason::kNoMarker: ++row.no_marker; break;
        case ExtractReason::kMultiMarker: ++row.multi_marker; break;
        case ExtractReason::kFormatMismatch: ++row.format_mismatch; break;
        case ExtractReason::kOk: break;
      }
      continue;
    }
    ++row.accepted;
    if (ex.answer == gold_answer(cfg.task, corpus[i])) ++accurate;
    Sample s;
    s.task_id = cfg.task.task_id;
    s.query.push_back(cfg.task.prompt);
    s.query.insert(s.query.end(), corpus[i].begin(), corpus[i].end());
    s.answer = ex.answer;
    ds.samples.push_back(std::move(s));
  }
  row.dataset_tokens = ds.token_count();
  row.annotation_accuracy =
      row.accepted == 0 ? 0.0 : static_cast<double>(accurate) / row.accepted;
  return {std::move(ds), row};
}

std::pair<PolicyParams, SynthesisReport> iterate(const PolicyParams& policy0,
                                                 const SynthesisConfig& cfg) {
  cfg.validate();
  SynthesisReport report;
  report.baseline_metric = eval_metric_on(policy0, cfg);

  PolicyParams policy = policy0;
  for (int t = 1; t <= cfg.rounds; ++t) {
    auto [ds, row] = synthesize_round(policy, cfg, t);
    if (ds.size() == 0) {
      throw SynthesisError("synthesis round " + std::to_string(t) +
                               " accepted zero annotations",
                           report);
    }

    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, 0x747261696eULL, static_cast<std::uint64_t>(t));
    TrainStage sft;
    sft.kind = StageKind::kSft;
    sft.data = &ds;
    sft.steps = cfg.train_steps;
    tc.curriculum = {sft};
    std::vector<PreferenceSample> pairs;
    if (cfg.dpo_substage && cfg.dpo_steps > 0) {
      TrainStage dpo;
      dpo.kind = StageKind::kDpo;
      const SamplerConfig dpo_sampler = cfg.dpo_sampler;
      const Dataset* ds_ptr = &ds;
      const std::uint64_t pair_seed = derive_seed(cfg.seed, 0x64706fULL, t);
      dpo.pair_builder = [ds_ptr, dpo_sampler, pair_seed](const PolicyParams& p) {
        return build_pairs(p, *ds_ptr, dpo_sampler, pair_seed);
      };
      dpo.steps = cfg.dpo_steps;
      tc.curriculum.push_back(dpo);
    }
    train(policy, tc);

    row.eval_metric = eval_metric_on(policy, cfg);
    report.rounds.push_back(row);
  }
  return {std::move(policy), std::move(report)};
}

void save_synthesis_csv(const SynthesisReport& report, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open synthesis csv for writing: " + path);
  os << "round,corpus,annotations,accepted,rejected,no_marker,multi_marker,"
        "format_mismatch,dataset_tokens,annotation_accuracy,eval_metric\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", report.baseline_metric);
  os << "0,0,0,0,0,0,0,0,0,0," << buf << "\n";  // baseline row
  for (const auto& r : report.rounds) {
    os << r.round << "," << r.corpus_size << "," << r.annotations << "," << r.accepted
       << "," << r.rejected << "," << r.no_marker << "," << r.multi_marker << ","
       << r.format_mismatch << "," << r.dataset_tokens << ",";
    std::snprintf(buf, sizeof buf, "%.10g", r.annotation_accuracy);
    os << buf << ",";
    std::snprintf(buf, sizeof buf, "%.10g", r.eval_metric);
    os << buf << "\n";
  }
  if (!os) throw IoError("short write on synthesis csv: " + path);
}

}  // namespace ftlab
