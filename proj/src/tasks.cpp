#include "ftlab/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"

#include "ftlab/errors.hpp"

namespace ftlab {

namespace {

std::vector<Token> pool_tokens(Token base, Token end) {
  std::vector<Token> v;
  for (Token t = base; t < end; ++t) v.push_back(t);
  return v;
}

std::uint64_t split_salt(const std::string& split) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : split) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<Token> pick_distinct(std::vector<Token> pool, int n, Rng& rng) {
  rng.shuffle(pool);
  pool.resize(n);
  std::sort(pool.begin(), pool.end());
  return pool;
}

bool contains(const std::vector<Token>& v, Token t) {
  return std::find(v.begin(), v.end(), t) != v.end();
}

}  // namespace

int TaskSpec::answer_max_len() const {
  switch (kind) {
    case TaskKind::kTagging: return max_entities;
    case TaskKind::kClassification: return 1;
    case TaskKind::kRegression: return 1;
  }
  return 1;
}

double TaskSpec::chance_level() const {
  switch (kind) {
    case TaskKind::kTagging:
      return 0.0;
    case TaskKind::kClassification:
      return 1.0 / static_cast<double>(labels.size());
    case TaskKind::kRegression: {
      // RMSE of always answering the range midpoint, counts uniform.
      double acc = 0.0;
      for (int k = 0; k <= max_count; ++k) {
        const double v = decode_value(encode_value_token(k));
        acc += v * v;
      }
      return std::sqrt(acc / (max_count + 1));
    }
  }
  return 0.0;
}

TaskSpec make_task(TaskKind kind, std::uint64_t seed, const TaskOptions& opts) {
  TaskSpec spec;
  spec.kind = kind;
  spec.seed = seed;
  Rng rng(derive_seed(seed, 0x7461736bULL));
  const std::vector<Token> pool1 = pool_tokens(kPool1Base, kPool1End);

  switch (kind) {
    case TaskKind::kTagging: {
      spec.task_id = opts.task_id.empty() ? "tagging" : opts.task_id;
      spec.prompt = opts.prompt.value_or(kTagPrompt);
      spec.metric = MetricKind::kF1Tagging;
      spec.content_pool = pool1;
      break;
    }
    case TaskKind::kClassification: {
      spec.task_id = opts.task_id.empty() ? "classification" : opts.task_id;
      spec.metric = MetricKind::kF1Classification;
      if (opts.n_labels == 3) {
        spec.labels = {kLabelPositive, kLabelNegative, kLabelNeutral};
        spec.prompt = opts.prompt.value_or(kClsAPrompt);
      } else if (opts.n_labels == 2) {
        spec.labels = {kLabelUp, kLabelDown};
        spec.prompt = opts.prompt.value_or(kClsCPrompt);
      } else {
        throw ShapeError("make_task: classification supports 2 or 3 labels");
      }
      std::vector<Token> picked = pick_distinct(pool1, 6, rng);
      rng.shuffle(picked);
      spec.pos_indicators.assign(picked.begin(), picked.begin() + 3);
      spec.neg_indicators.assign(picked.begin() + 3, picked.end());
      std::sort(spec.pos_indicators.begin(), spec.pos_indicators.end());
      std::sort(spec.neg_indicators.begin(), spec.neg_indicators.end());
      spec.content_pool.clear();
      for (Token t : pool1) {
        if (!contains(spec.pos_indicators, t) && !contains(spec.neg_indicators, t)) {
          spec.content_pool.push_back(t);
        }
      }
      break;
    }
    case TaskKind::kRegression: {
      spec.task_id = opts.task_id.empty() ? "regression" : opts.task_id;
      spec.prompt = opts.prompt.value_or(kRegPrompt);
      spec.metric = MetricKind::kRmse;
      spec.count_token = pool1[rng.index(pool1.size())];
      spec.content_pool.clear();
      for (Token t : pool1) {
        if (t != spec.count_token) spec.content_pool.push_back(t);
      }
      break;
    }
  }
  return spec;
}

TaskSpec make_task(const std::string& kind, std::uint64_t seed) {
  if (kind == "tagging") return make_task(TaskKind::kTagging, seed);
  if (kind == "classification") return make_task(TaskKind::kClassification, seed);
  if (kind == "regression") return make_task(TaskKind::kRegression, seed);
  throw ValidationError("kind", "unknown task kind '" + kind + "'");
}

TaskSpec make_variant_task(const TaskSpec& source, std::uint64_t seed,
                           const std::string& task_id, Token prompt) {
  TaskSpec spec = source;
  spec.task_id = task_id;
  spec.prompt = prompt;
  spec.seed = seed;
  Rng rng(derive_seed(seed, 0x76617269616e74ULL));
  std::vector<Token> pool2 = pool_tokens(kPool2Base, kPool2End);

  switch (source.kind) {
    case TaskKind::kTagging: {
      spec.content_pool = pool2;
      break;
    }
    case TaskKind::kClassification: {
      // Keep roughly half of each indicator set, refresh the rest from the
      // shifted pool; the carried-over tokens are what transfers.
      auto shift = [&](const std::vector<Token>& src) {
        std::vector<Token> kept(src.begin(), src.begin() + (src.size() + 1) / 2);
        return kept;
      };
      std::vector<Token> fresh = pick_distinct(pool2, 4, rng);
      spec.pos_indicators = shift(source.pos_indicators);
      spec.neg_indicators = shift(source.neg_indicators);
      spec.pos_indicators.push_back(fresh[0]);
      spec.neg_indicators.push_back(fresh[1]);
      if (source.pos_indicators.size() >= 3) {
        spec.pos_indicators.push_back(fresh[2]);
        spec.neg_indicators.push_back(fresh[3]);
      }
      std::sort(spec.pos_indicators.begin(), spec.pos_indicators.end());
      std::sort(spec.neg_indicators.begin(), spec.neg_indicators.end());
      spec.content_pool.clear();
      for (Token t : pool2) {
        if (!contains(spec.pos_indicators, t) && !contains(spec.neg_indicators, t)) {
          spec.content_pool.push_back(t);
        }
      }
      break;
    }
    case TaskKind::kRegression: {
      // Same designated token, shifted filler.
      spec.content_pool.clear();
      for (Token t : pool2) {
        if (t != spec.count_token) spec.content_pool.push_back(t);
      }
      break;
    }
  }
  return spec;
}

ContentSample sample_content(const TaskSpec& spec, Rng& rng) {
  ContentSample cs;
  switch (spec.kind) {
    case TaskKind::kTagging: {
      const int filler = rng.uniform_int(spec.min_filler, spec.max_filler);
      const int entities = rng.uniform_int(1, spec.max_entities);
      std::vector<Token> ent = pick_distinct(spec.content_pool, entities, rng);
      rng.shuffle(ent);
      // Units: single filler tokens plus [L, e, R] triples, shuffled together.
      std::vector<int> order(filler + entities);
      for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i < static_cast<std::size_t>(filler) ? -1 : static_cast<int>(i - filler);
      rng.shuffle(order);
      for (int u : order) {
        if (u < 0) {
          cs.content.push_back(spec.content_pool[rng.index(spec.content_pool.size())]);
        } else {
          cs.content.push_back(kMarkLeft);
          cs.content.push_back(ent[u]);
          cs.content.push_back(kMarkRight);
        }
      }
      break;
    }
    case TaskKind::kClassification: {
      const int label = static_cast<int>(rng.index(spec.labels.size()));
      int npos = 0, nneg = 0;
      if (label == 0) {
        npos = rng.uniform_int(2, 4);
        nneg = rng.uniform_int(0, npos - 1);
      } else if (label == 1) {
        nneg = rng.uniform_int(2, 4);
        npos = rng.uniform_int(0, nneg - 1);
      } else {
        npos = nneg = rng.uniform_int(0, 2);
      }
      const int len = rng.uniform_int(10, 16);
      std::vector<Token> toks;
      for (int i = 0; i < npos; ++i)
        toks.push_back(spec.pos_indicators[rng.index(spec.pos_indicators.size())]);
      for (int i = 0; i < nneg; ++i)
        toks.push_back(spec.neg_indicators[rng.index(spec.neg_indicators.size())]);
      while (static_cast<int>(toks.size()) < len)
        toks.push_back(spec.content_pool[rng.index(spec.content_pool.size())]);
      rng.shuffle(toks);
      cs.content = std::move(toks);
      break;
    }
    case TaskKind::kRegression: {
      const int k = rng.uniform_int(0, spec.max_count);
      std::vector<Token> toks(static_cast<std::size_t>(spec.reg_len));
      for (int i = 0; i < spec.reg_len; ++i) {
        toks[i] = i < k ? spec.count_token
                        : spec.content_pool[rng.index(spec.content_pool.size())];
      }
      rng.shuffle(toks);
      cs.content = std::move(toks);
      break;
    }
  }
  cs.answer = gold_answer(spec, cs.content);
  return cs;
}

TokenSeq gold_answer(const TaskSpec& spec, const TokenSeq& content) {
  switch (spec.kind) {
    case TaskKind::kTagging: {
      TokenSeq out;
      for (std::size_t i = 0; i + 2 < content.size(); ++i) {
        if (content[i] == kMarkLeft && content[i + 2] == kMarkRight) {
          out.push_back(content[i + 1]);
        }
      }
      return out;
    }
    case TaskKind::kClassification: {
      int npos = 0, nneg = 0;
      for (Token t : content) {
        if (contains(spec.pos_indicators, t)) ++npos;
        if (contains(spec.neg_indicators, t)) ++nneg;
      }
      if (npos > nneg) return {spec.labels[0]};
      if (nneg > npos) return {spec.labels[1]};
      if (spec.labels.size() == 3) return {spec.labels[2]};
      return {spec.labels[0]};  // binary generator never produces ties
    }
    case TaskKind::kRegression: {
      int k = 0;
      for (Token t : content) {
        if (t == spec.count_token) ++k;
      }
      k = std::min(k, spec.max_count);
      return {encode_value_token(k)};
    }
  }
  return {};
}

Dataset sample_dataset(const TaskSpec& spec, int n, const std::string& split,
                       std::uint64_t seed) {
  if (n < 1) throw ShapeError("sample_dataset: n must be >= 1");
  Dataset ds;
  ds.split = split;
  ds.provenance = "planted";
  ds.task = spec;
  ds.samples.reserve(static_cast<std::size_t>(n));
  const std::uint64_t base = derive_seed(spec.seed ^ seed, split_salt(split));
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(base, static_cast<std::uint64_t>(i)));
    ContentSample cs = sample_content(spec, rng);
    Sample s;
    s.task_id = spec.task_id;
    s.query.push_back(spec.prompt);
    s.query.insert(s.query.end(), cs.content.begin(), cs.content.end());
    s.answer = std::move(cs.answer);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

Dataset subsample(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (fraction <= 0.0 || fraction > 1.0) {
    throw ShapeError("subsample: fraction must be in (0, 1]");
  }
  const auto n = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(ds.size())));
  if (n == 0) throw ShapeError("subsample: resulting dataset would be empty");

  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(derive_seed(seed, 0x73756273ULL));
  rng.shuffle(idx);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());

  Dataset out;
  out.split = ds.split;
  out.provenance = ds.provenance;
  out.task = ds.task;
  for (std::size_t i : idx) out.samples.push_back(ds.samples[i]);
  return out;
}

bool is_paper_fraction(double fraction) {
  for (double f : {1.0, 0.5, 0.25, 0.125}) {
    if (fraction == f) return true;
  }
  return false;
}

std::size_t Dataset::token_count() const {
  std::size_t total = 0;
  for (const auto& s : samples) total += s.query.size() + s.answer.size();
  return total;
}

bool answer_matches_format(const TaskSpec& spec, const TokenSeq& answer) {
  switch (spec.kind) {
    case TaskKind::kTagging: {
      if (static_cast<int>(answer.size()) > spec.max_entities) return false;
      std::set<Token> seen;
      for (Token t : answer) {
        if (!contains(spec.content_pool, t)) return false;
        if (!seen.insert(t).second) return false;
      }
      return true;
    }
    case TaskKind::kClassification:
      return answer.size() == 1 && contains(spec.labels, answer[0]);
    case TaskKind::kRegression:
      return answer.size() == 1 && answer[0] >= kValueBase &&
             answer[0] < kValueBase + kValueCount;
  }
  return false;
}

double decode_value(Token tok) {
  const int idx = tok - kValueBase;
  const int mid = (kValueCount - 1) / 2;
  return static_cast<double>(idx - mid) / mid;
}

Token encode_value_token(int count) { return kValueBase + count; }

ParsedPrediction parse_prediction(const TaskSpec& spec, const TokenSeq& generated) {
  ParsedPrediction p;
  p.ok = answer_matches_format(spec, generated);
  switch (spec.kind) {
    case TaskKind::kTagging: {
      std::set<Token> ents;
      for (Token t : generated) {
        if (contains(spec.content_pool, t)) ents.insert(t);
      }
      p.entities.assign(ents.begin(), ents.end());
      break;
    }
    case TaskKind::kClassification: {
      if (p.ok) {
        p.label_index = static_cast<int>(
            std::find(spec.labels.begin(), spec.labels.end(), generated[0]) -
            spec.labels.begin());
      }
      break;
    }
    case TaskKind::kRegression: {
      p.value = p.ok ? decode_value(generated[0]) : 0.0;  // midpoint imputation
      break;
    }
  }
  return p;
}

// --- dataset container --------------------------------------------------------

namespace {

std::string kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kTagging: return "tagging";
    case TaskKind::kClassification: return "classification";
    case TaskKind::kRegression: return "regression";
  }
  return "tagging";
}

TaskKind kind_from_name(const std::string& name) {
  if (name == "tagging") return TaskKind::kTagging;
  if (name == "classification") return TaskKind::kClassification;
  if (name == "regression") return TaskKind::kRegression;
  throw ValidationError("kind", "unknown task kind '" + name + "'");
}

}  // namespace

nlohmann::json task_to_json(const TaskSpec& spec) {
  return {{"task_id", spec.task_id},
          {"kind", kind_name(spec.kind)},
          {"prompt", spec.prompt},
          {"seed", spec.seed},
          {"content_pool", spec.content_pool},
          {"min_filler", spec.min_filler},
          {"max_filler", spec.max_filler},
          {"max_entities", spec.max_entities},
          {"labels", spec.labels},
          {"pos_indicators", spec.pos_indicators},
          {"neg_indicators", spec.neg_indicators},
          {"count_token", spec.count_token},
          {"max_count", spec.max_count},
          {"reg_len", spec.reg_len}};
}

TaskSpec task_from_json(const nlohmann::json& j) {
  TaskSpec spec;
  spec.task_id = j.at("task_id").get<std::string>();
  spec.kind = kind_from_name(j.at("kind").get<std::string>());
  switch (spec.kind) {
    case TaskKind::kTagging: spec.metric = MetricKind::kF1Tagging; break;
    case TaskKind::kClassification: spec.metric = MetricKind::kF1Classification; break;
    case TaskKind::kRegression: spec.metric = MetricKind::kRmse; break;
  }
  spec.prompt = j.at("prompt").get<Token>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  spec.content_pool = j.at("content_pool").get<std::vector<Token>>();
  spec.min_filler = j.at("min_filler").get<int>();
  spec.max_filler = j.at("max_filler").get<int>();
  spec.max_entities = j.at("max_entities").get<int>();
  spec.labels = j.at("labels").get<std::vector<Token>>();
  spec.pos_indicators = j.at("pos_indicators").get<std::vector<Token>>();
  spec.neg_indicators = j.at("neg_indicators").get<std::vector<Token>>();
  spec.count_token = j.at("count_token").get<Token>();
  spec.max_count = j.at("max_count").get<int>();
  spec.reg_len = j.at("reg_len").get<int>();
  return spec;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open dataset for writing: " + path);
  nlohmann::json header = {{"schema", "ftlab.dataset.v1"}, {"split", ds.split}};
  header["task"] = ds.task ? task_to_json(*ds.task) : nlohmann::json(nullptr);
  os << header.dump() << "\n";
  for (const auto& s : ds.samples) {
    nlohmann::json line = {{"task_id", s.task_id},
                           {"query_tokens", s.query},
                           {"answer_tokens", s.answer},
                           {"provenance", ds.provenance}};
    os << line.dump() << "\n";
  }
  if (!os) throw IoError("short write on dataset: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open dataset: " + path);
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty dataset file: " + path);
  const nlohmann::json header = nlohmann::json::parse(line);
  if (header.value("schema", "") != "ftlab.dataset.v1") {
    throw IoError("not an ftlab dataset: " + path);
  }
  Dataset ds;
  ds.split = header.value("split", "train");
  if (header.contains("task") && !header["task"].is_null()) {
    ds.task = task_from_json(header["task"]);
  }
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const nlohmann::json rec = nlohmann::json::parse(line);
    Sample s;
    s.task_id = rec.at("task_id").get<std::string>();
    s.query = rec.at("query_tokens").get<TokenSeq>();
    s.answer = rec.at("answer_tokens").get<TokenSeq>();
    ds.provenance = rec.at("provenance").get<std::string>();
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace ftlab
