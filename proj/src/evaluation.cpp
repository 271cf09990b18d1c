#include "ftlab/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "ftlab/errors.hpp"
#include "ftlab/rng.hpp"

namespace ftlab {

std::string f1_scheme_name(F1Scheme scheme) {
  switch (scheme) {
    case F1Scheme::kMicro: return "micro";
    case F1Scheme::kMacro: return "macro";
    case F1Scheme::kWeighted: return "weighted";
  }
  return "weighted";
}

double f1_tagging(const std::vector<std::vector<Token>>& pred,
                  const std::vector<std::vector<Token>>& gold) {
  if (pred.size() != gold.size()) {
    throw ShapeError("f1_tagging: " + std::to_string(pred.size()) + " predictions vs " +
                     std::to_string(gold.size()) + " references");
  }
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::set<Token> ps(pred[i].begin(), pred[i].end());
    const std::set<Token> gs(gold[i].begin(), gold[i].end());
    for (Token t : ps) {
      if (gs.count(t)) {
        ++tp;
      } else {
        ++fp;
      }
    }
    for (Token t : gs) {
      if (!ps.count(t)) ++fn;
    }
  }
  if (tp + fp + fn == 0) return 1.0;  // correct abstention everywhere
  const double p = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp);
  const double r = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn);
  if (p + r == 0.0) return 0.0;
  return 2.0 * p * r / (p + r);
}

double f1_classification(const std::vector<int>& pred, const std::vector<int>& gold,
                         int n_labels, F1Scheme scheme) {
  if (pred.size() != gold.size()) {
    throw ShapeError("f1_classification: prediction/reference length mismatch");
  }
  if (gold.empty()) throw ShapeError("f1_classification: empty reference set");
  for (int g : gold) {
    if (g < 0 || g >= n_labels) {
      throw ShapeError("f1_classification: gold label out of range");
    }
  }

  if (scheme == F1Scheme::kMicro) {
    // Single-label micro F1 reduces to accuracy; INVALID (-1) is never a hit.
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] == gold[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(pred.size());
  }

  double total = 0.0;
  double weight_sum = 0.0;
  int classes_counted = 0;
  for (int c = 0; c < n_labels; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] == c && gold[i] == c) ++tp;
      if (pred[i] == c && gold[i] != c) ++fp;
      if (pred[i] != c && gold[i] == c) ++fn;
    }
    const std::size_t support = tp + fn;
    const double p = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp);
    const double r = support == 0 ? 0.0 : static_cast<double>(tp) / support;
    const double f1 = p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
    if (scheme == F1Scheme::kWeighted) {
      total += f1 * static_cast<double>(support);
      weight_sum += static_cast<double>(support);
    } else if (support > 0) {  // macro over classes present in the reference
      total += f1;
      ++classes_counted;
    }
  }
  if (scheme == F1Scheme::kWeighted) return total / weight_sum;
  return classes_counted == 0 ? 0.0 : total / classes_counted;
}

double rmse(const std::vector<double>& pred, const std::vector<double>& gold) {
  if (pred.size() != gold.size()) {
    throw ShapeError("rmse: prediction/reference length mismatch");
  }
  if (gold.empty()) throw ShapeError("rmse: empty reference set");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - gold[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(pred.size()));
}

const MetricRow* MetricReport::find(const std::string& task_id) const {
  for (const auto& row : rows) {
    if (row.task_id == task_id) return &row;
  }
  return nullptr;
}

MetricRow evaluate_task(const GenerateFn& gen, const TaskSpec& spec, const Dataset& ds,
                        const std::string& model_name, F1Scheme scheme) {
  if (ds.size() == 0) throw ShapeError("evaluate: empty eval dataset");
  MetricRow row;
  row.model_name = model_name;
  row.task_id = spec.task_id;
  row.n = static_cast<int>(ds.size());

  std::vector<std::vector<Token>> pred_entities, gold_entities;
  std::vector<int> pred_labels, gold_labels;
  std::vector<double> pred_values, gold_values;
  std::size_t failures = 0;

  for (const auto& s : ds.samples) {
    const TokenSeq out = gen(s.query);
    const ParsedPrediction parsed = parse_prediction(spec, out);
    if (!parsed.ok) ++failures;
    row.records.push_back({out, s.answer, parsed.ok});
    switch (spec.kind) {
      case TaskKind::kTagging: {
        pred_entities.push_back(parsed.entities);
        gold_entities.push_back(s.answer);
        break;
      }
      case TaskKind::kClassification: {
        pred_labels.push_back(parsed.label_index);
        const int g = static_cast<int>(
            std::find(spec.labels.begin(), spec.labels.end(), s.answer.at(0)) -
            spec.labels.begin());
        gold_labels.push_back(g);
        break;
      }
      case TaskKind::kRegression: {
        pred_values.push_back(parsed.value);
        gold_values.push_back(decode_value(s.answer.at(0)));
        break;
      }
    }
  }

  switch (spec.kind) {
    case TaskKind::kTagging:
      row.metric_name = "f1_tagging";
      row.value = f1_tagging(pred_entities, gold_entities);
      row.f1_scheme = "micro";
      break;
    case TaskKind::kClassification:
      row.metric_name = "f1_" + f1_scheme_name(scheme);
      row.value = f1_classification(pred_labels, gold_labels,
                                    static_cast<int>(spec.labels.size()), scheme);
      row.f1_scheme = f1_scheme_name(scheme);
      break;
    case TaskKind::kRegression:
      row.metric_name = "rmse";
      row.value = rmse(pred_values, gold_values);
      break;
  }
  row.parse_failure_rate =
      static_cast<double>(failures) / static_cast<double>(ds.size());
  return row;
}

MetricReport evaluate(const PolicyParams& params, const std::vector<TaskSpec>& tasks,
                      const std::vector<Dataset>& eval_sets,
                      const SamplerConfig& sampler, const std::string& model_name,
                      F1Scheme scheme) {
  if (tasks.size() != eval_sets.size()) {
    throw ShapeError("evaluate: tasks/eval datasets count mismatch");
  }
  SamplerConfig decode = sampler;
  decode.temperature = 0.0;  // deterministic leaderboard-style decoding
  decode.validate();

  const Evaluator eval(params);
  MetricReport report;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    auto gen = [&](const TokenSeq& query) {
      return generate(eval, query, decode, 0).tokens;
    };
    report.rows.push_back(evaluate_task(gen, tasks[i], eval_sets[i], model_name, scheme));
  }
  return report;
}

void save_metric_csv(const MetricReport& report, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open metrics csv for writing: " + path);
  os << "model,task,metric,value,n,parse_failure_rate,f1_scheme\n";
  char buf[64];
  for (const auto& row : report.rows) {
    std::snprintf(buf, sizeof buf, "%.10g", row.value);
    os << row.model_name << "," << row.task_id << "," << row.metric_name << "," << buf
       << "," << row.n << ",";
    std::snprintf(buf, sizeof buf, "%.10g", row.parse_failure_rate);
    os << buf << "," << row.f1_scheme << "\n";
  }
  if (!os) throw IoError("short write on metrics csv: " + path);
}

std::string render_metric_table(const MetricReport& report) {
  std::ostringstream out;
  out << "model                 task         metric         value      n     parse_fail\n";
  out << "--------------------------------------------------------------------------\n";
  char buf[128];
  for (const auto& row : report.rows) {
    std::snprintf(buf, sizeof buf, "%-21s %-12s %-14s %-10.4f %-6d %.3f\n",
                  row.model_name.c_str(), row.task_id.c_str(), row.metric_name.c_str(),
                  row.value, row.n, row.parse_failure_rate);
    out << buf;
  }
  return out.str();
}

}  // namespace ftlab
