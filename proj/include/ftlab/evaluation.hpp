#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ftlab/model.hpp"
#include "ftlab/tasks.hpp"

namespace ftlab {

enum class F1Scheme { kMicro, kMacro, kWeighted };

std::string f1_scheme_name(F1Scheme scheme);

/// Micro-averaged tagging F1 over per-sample entity sets. Entities compare by
/// exact token equality. An entity-free corpus with entity-free predictions
/// scores 1.0; zero precision and recall scores 0.
double f1_tagging(const std::vector<std::vector<Token>>& pred,
                  const std::vector<std::vector<Token>>& gold);

/// Classification F1 over label indices in [0, n_labels); -1 is the reserved
/// INVALID label for unparseable predictions and is always wrong.
double f1_classification(const std::vector<int>& pred, const std::vector<int>& gold,
                         int n_labels, F1Scheme scheme = F1Scheme::kWeighted);

double rmse(const std::vector<double>& pred, const std::vector<double>& gold);

/// Per-sample audit record kept inside a MetricRow.
struct SampleRecord {
  TokenSeq generated;
  TokenSeq gold;
  bool parse_ok = false;
};

struct MetricRow {
  std::string model_name;
  std::string task_id;
  std::string metric_name;  // f1_tagging | f1_weighted | rmse
  double value = 0.0;
  int n = 0;
  double parse_failure_rate = 0.0;
  std::string f1_scheme;  // the flagged averaging choice, empty for rmse
  std::vector<SampleRecord> records;
};

struct MetricReport {
  std::vector<MetricRow> rows;

  const MetricRow* find(const std::string& task_id) const;
};

/// Generation hook so oracle policies can stand in for a model.
using GenerateFn = std::function<TokenSeq(const TokenSeq& query)>;

/// Deterministic-decode evaluation of one task on its eval split.
MetricRow evaluate_task(const GenerateFn& gen, const TaskSpec& spec, const Dataset& ds,
                        const std::string& model_name,
                        F1Scheme scheme = F1Scheme::kWeighted);

/// Generates with temperature 0 (the sampler's other knobs are honored),
/// parses per the task answer format and scores the task metric.
MetricReport evaluate(const PolicyParams& params, const std::vector<TaskSpec>& tasks,
                      const std::vector<Dataset>& eval_sets,
                      const SamplerConfig& sampler, const std::string& model_name,
                      F1Scheme scheme = F1Scheme::kWeighted);

/// CSV export: one row per model x task x metric; stable formatting.
void save_metric_csv(const MetricReport& report, const std::string& path);

/// Human-readable fixed-width table.
std::string render_metric_table(const MetricReport& report);

}  // namespace ftlab
