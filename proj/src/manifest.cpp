#include "ftlab/manifest.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "ftlab/errors.hpp"
#include "ftlab/rng.hpp"
#include "ftlab/training.hpp"

namespace fs = std::filesystem;

namespace ftlab {

namespace {

using nlohmann::json;

// --- strict-schema helpers ----------------------------------------------------

void check_fields(const json& obj, const std::string& path,
                  const std::set<std::string>& allowed,
                  const std::vector<std::string>& required) {
  if (!obj.is_object()) throw ValidationError(path, "must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) {
      throw ValidationError(path + "." + key, "unknown field (strict schema)");
    }
  }
  for (const auto& key : required) {
    if (!obj.contains(key)) {
      throw ValidationError(path + "." + key, "required field missing");
    }
  }
}

Token prompt_from_name(const std::string& name, const std::string& path) {
  static const std::map<std::string, Token> kPrompts = {
      {"tag", kTagPrompt},    {"clsa", kClsAPrompt},         {"clsb", kClsBPrompt},
      {"clsc", kClsCPrompt},  {"reg", kRegPrompt},           {"clsb2", kClsBVariantPrompt},
      {"clsc2", kClsCVariantPrompt}, {"reg2", kRegVariantPrompt}};
  auto it = kPrompts.find(name);
  if (it == kPrompts.end()) {
    throw ValidationError(path, "unknown prompt name '" + name + "'");
  }
  return it->second;
}

SamplerConfig sampler_from_json(const json& j, const std::string& path) {
  check_fields(j, path,
               {"temperature", "top_k", "top_p", "repetition_penalty",
                "max_new_tokens"},
               {});
  SamplerConfig s;
  s.temperature = j.value("temperature", 1.0);
  if (j.contains("top_k")) s.top_k = j["top_k"].get<int>();
  if (j.contains("top_p")) s.top_p = j["top_p"].get<double>();
  s.repetition_penalty = j.value("repetition_penalty", 1.0);
  s.max_new_tokens = j.value("max_new_tokens", 16);
  try {
    s.validate();
  } catch (const ShapeError& e) {
    throw ValidationError(path, e.what());
  }
  return s;
}

json sampler_to_json(const SamplerConfig& s) {
  json j = {{"temperature", s.temperature},
            {"repetition_penalty", s.repetition_penalty},
            {"max_new_tokens", s.max_new_tokens}};
  if (s.top_k) j["top_k"] = *s.top_k;
  if (s.top_p) j["top_p"] = *s.top_p;
  return j;
}

std::string prompt_name_default(const json& jt) {
  if (jt.contains("prompt")) return jt["prompt"].get<std::string>();
  const std::string kind = jt.value("kind", "");
  if (kind == "tagging") return "tag";
  if (kind == "regression") return "reg";
  if (kind == "classification") return jt.value("labels", 3) == 2 ? "clsc" : "clsa";
  return "tag";
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex12(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf).substr(4);
}

// Created exclusively at run start; removed when the run finishes. A stale
// lock means another process owns the directory.
struct RunLock {
  fs::path path;
  explicit RunLock(const fs::path& dir) : path(dir / ".lock") {
    std::error_code ec;
    fs::create_directories(dir, ec);
    std::ofstream probe;
    if (fs::exists(path)) {
      throw IoError("run directory is locked by another process: " + dir.string());
    }
    probe.open(path);
    if (!probe) throw IoError("cannot create lock file in " + dir.string());
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path, ec);
  }
};

// --- schema tables --------------------------------------------------------------

const std::set<std::string> kTopFields = {"schema_version", "seed", "out_dir",
                                          "model",          "tasks", "stages"};
const std::set<std::string> kModelFields = {"vocab_size", "context_len", "d_model",
                                            "n_heads",    "n_layers",    "seed"};
const std::set<std::string> kTaskFields = {"task_id", "kind",   "seed",
                                           "labels",  "prompt", "variant_of"};

const std::map<std::string, std::set<std::string>> kStageFields = {
    {"gen-data",
     {"stage", "name", "task", "split", "n", "seed", "from", "fraction", "union",
      "annotation_format"}},
    {"train-sft",
     {"stage", "name", "init", "datasets", "steps", "learning_rate", "batch_size",
      "lora", "seed", "sequential"}},
    {"build-pairs", {"stage", "name", "checkpoint", "dataset", "sampler", "seed"}},
    {"train-dpo",
     {"stage", "name", "init", "pairs", "steps", "learning_rate", "batch_size", "beta",
      "lora", "seed", "merge_adapters"}},
    {"synthesize",
     {"stage", "name", "init", "task", "n_corpus", "rounds", "train_steps",
      "learning_rate", "batch_size", "seed", "eval_dataset", "sampler"}},
    {"evaluate",
     {"stage", "name", "checkpoint", "datasets", "max_new_tokens", "f1_scheme"}},
    {"scaling",
     {"stage", "name", "dataset", "eval_datasets", "fractions", "seeds", "steps",
      "learning_rate", "batch_size", "model_seed"}},
    {"report", {"stage", "name", "inputs"}},
};

LoraTrainConfig lora_from_json(const json& j, const std::string& path) {
  check_fields(j, path, {"rank", "alpha"}, {"rank", "alpha"});
  LoraTrainConfig lc;
  lc.rank = j["rank"].get<int>();
  lc.alpha = j["alpha"].get<double>();
  return lc;
}

// --- validation -----------------------------------------------------------------

enum class ArtifactKind { kDataset, kCheckpoint, kPairs, kMetrics, kScaling, kReport };

void validate_stage(const json& st, const std::string& path,
                    std::map<std::string, ArtifactKind>& defined,
                    const std::set<std::string>& task_ids) {
  if (!st.contains("stage")) throw ValidationError(path + ".stage", "required");
  const std::string kind = st["stage"].get<std::string>();
  auto it = kStageFields.find(kind);
  if (it == kStageFields.end()) {
    throw ValidationError(path + ".stage", "unknown stage kind '" + kind + "'");
  }
  check_fields(st, path, it->second, {"stage", "name"});
  const std::string name = st["name"].get<std::string>();
  if (defined.count(name)) {
    throw ValidationError(path + ".name", "duplicate artifact name '" + name + "'");
  }

  auto need = [&](const char* field) {
    if (!st.contains(field)) {
      throw ValidationError(path + "." + field, "required field missing");
    }
  };
  auto ref = [&](const char* field, ArtifactKind want, const std::string& value) {
    auto d = defined.find(value);
    if (d == defined.end()) {
      throw ValidationError(path + "." + field,
                            "reference '" + value + "' is not defined yet");
    }
    if (d->second != want) {
      throw ValidationError(path + "." + field,
                            "reference '" + value + "' has the wrong artifact kind");
    }
  };

  if (kind == "gen-data") {
    const int modes = st.contains("task") + st.contains("from") + st.contains("union");
    if (modes != 1) {
      throw ValidationError(path, "gen-data needs exactly one of task/from/union");
    }
    if (st.contains("task")) {
      need("n");
      if (!task_ids.count(st["task"].get<std::string>())) {
        throw ValidationError(path + ".task", "unknown task");
      }
      if (st.contains("n") && st["n"].get<int>() < 1) {
        throw ValidationError(path + ".n", "must be >= 1");
      }
      const std::string split = st.value("split", "train");
      if (split != "train" && split != "eval") {
        throw ValidationError(path + ".split", "must be train or eval");
      }
    }
    if (st.contains("from")) {
      need("fraction");
      ref("from", ArtifactKind::kDataset, st["from"].get<std::string>());
    }
    if (st.contains("union")) {
      for (const auto& u : st["union"]) {
        ref("union", ArtifactKind::kDataset, u.get<std::string>());
      }
    }
    const std::string fmt = st.value("annotation_format", "plain");
    if (fmt != "plain" && fmt != "cot" && fmt != "mixed") {
      throw ValidationError(path + ".annotation_format", "plain, cot or mixed");
    }
    defined[name] = ArtifactKind::kDataset;
  } else if (kind == "train-sft") {
    need("init");
    need("datasets");
    need("steps");
    const std::string init = st["init"].get<std::string>();
    if (init != "fresh") ref("init", ArtifactKind::kCheckpoint, init);
    if (st["datasets"].empty()) {
      throw ValidationError(path + ".datasets", "must be nonempty");
    }
    for (const auto& d : st["datasets"]) {
      ref("datasets", ArtifactKind::kDataset, d.get<std::string>());
    }
    if (st.contains("lora")) lora_from_json(st["lora"], path + ".lora");
    defined[name] = ArtifactKind::kCheckpoint;
  } else if (kind == "build-pairs") {
    need("checkpoint");
    need("dataset");
    ref("checkpoint", ArtifactKind::kCheckpoint, st["checkpoint"].get<std::string>());
    ref("dataset", ArtifactKind::kDataset, st["dataset"].get<std::string>());
    if (st.contains("sampler")) sampler_from_json(st["sampler"], path + ".sampler");
    defined[name] = ArtifactKind::kPairs;
  } else if (kind == "train-dpo") {
    need("init");
    need("pairs");
    need("steps");
    ref("init", ArtifactKind::kCheckpoint, st["init"].get<std::string>());
    ref("pairs", ArtifactKind::kPairs, st["pairs"].get<std::string>());
    if (st.contains("lora")) lora_from_json(st["lora"], path + ".lora");
    defined[name] = ArtifactKind::kCheckpoint;
  } else if (kind == "synthesize") {
    need("init");
    need("task");
    need("eval_dataset");
    need("train_steps");
    ref("init", ArtifactKind::kCheckpoint, st["init"].get<std::string>());
    if (!task_ids.count(st["task"].get<std::string>())) {
      throw ValidationError(path + ".task", "unknown task");
    }
    ref("eval_dataset", ArtifactKind::kDataset, st["eval_dataset"].get<std::string>());
    if (st.contains("sampler")) sampler_from_json(st["sampler"], path + ".sampler");
    defined[name] = ArtifactKind::kCheckpoint;
  } else if (kind == "evaluate") {
    need("checkpoint");
    need("datasets");
    ref("checkpoint", ArtifactKind::kCheckpoint, st["checkpoint"].get<std::string>());
    if (st["datasets"].empty()) {
      throw ValidationError(path + ".datasets", "must be nonempty");
    }
    for (const auto& d : st["datasets"]) {
      ref("datasets", ArtifactKind::kDataset, d.get<std::string>());
    }
    const std::string scheme = st.value("f1_scheme", "weighted");
    if (scheme != "micro" && scheme != "macro" && scheme != "weighted") {
      throw ValidationError(path + ".f1_scheme", "micro, macro or weighted");
    }
    defined[name] = ArtifactKind::kMetrics;
  } else if (kind == "scaling") {
    need("dataset");
    need("eval_datasets");
    need("steps");
    ref("dataset", ArtifactKind::kDataset, st["dataset"].get<std::string>());
    for (const auto& d : st["eval_datasets"]) {
      ref("eval_datasets", ArtifactKind::kDataset, d.get<std::string>());
    }
    defined[name] = ArtifactKind::kScaling;
  } else if (kind == "report") {
    need("inputs");
    for (const auto& i : st["inputs"]) {
      ref("inputs", ArtifactKind::kMetrics, i.get<std::string>());
    }
    defined[name] = ArtifactKind::kReport;
  }
}

}  // namespace

std::string default_out_root() {
  if (const char* env = std::getenv("FTLAB_OUT_ROOT")) return env;
  return "runs";
}

void validate_manifest(const json& manifest) {
  check_fields(manifest, "manifest", kTopFields, {"schema_version", "seed", "stages"});
  if (manifest["schema_version"].get<int>() != 1) {
    throw ValidationError("manifest.schema_version", "only version 1 is supported");
  }
  if (manifest.contains("model")) {
    check_fields(manifest["model"], "manifest.model", kModelFields, {});
  }

  std::set<std::string> task_ids;
  std::set<Token> prompts;
  if (manifest.contains("tasks")) {
    int i = 0;
    for (const auto& jt : manifest["tasks"]) {
      const std::string path = "manifest.tasks[" + std::to_string(i++) + "]";
      check_fields(jt, path, kTaskFields, {"task_id", "seed"});
      const std::string id = jt["task_id"].get<std::string>();
      if (task_ids.count(id)) {
        throw ValidationError(path + ".task_id", "duplicate task_id '" + id + "'");
      }
      if (jt.contains("variant_of")) {
        if (!task_ids.count(jt["variant_of"].get<std::string>())) {
          throw ValidationError(path + ".variant_of", "unknown source task");
        }
        if (!jt.contains("prompt")) {
          throw ValidationError(path + ".prompt", "variants need an explicit prompt");
        }
      } else if (!jt.contains("kind")) {
        throw ValidationError(path + ".kind", "required unless variant_of is given");
      }
      const Token p = prompt_from_name(prompt_name_default(jt), path + ".prompt");
      if (!prompts.insert(p).second) {
        throw ValidationError(path + ".prompt",
                              "prompt already taken by another task (set one explicitly)");
      }
      task_ids.insert(id);
    }
  }

  if (manifest["stages"].empty()) {
    throw ValidationError("manifest.stages", "stage list must be nonempty");
  }
  std::map<std::string, ArtifactKind> defined;
  int i = 0;
  for (const auto& st : manifest["stages"]) {
    validate_stage(st, "manifest.stages[" + std::to_string(i++) + "]", defined,
                   task_ids);
  }
}

namespace {

// --- execution -------------------------------------------------------------------

struct RunPaths {
  fs::path root;
  fs::path dir(const char* sub) const {
    const fs::path p = root / sub;
    fs::create_directories(p);
    return p;
  }
};

ModelConfig model_from_json(const json& manifest) {
  ModelConfig mc;
  mc.vocab_size = kTaskVocabSize;
  mc.context_len = 64;
  mc.d_model = 32;
  mc.n_heads = 4;
  mc.n_layers = 2;
  mc.seed = 1;
  if (manifest.contains("model")) {
    const json& jm = manifest["model"];
    mc.vocab_size = jm.value("vocab_size", mc.vocab_size);
    mc.context_len = jm.value("context_len", mc.context_len);
    mc.d_model = jm.value("d_model", mc.d_model);
    mc.n_heads = jm.value("n_heads", mc.n_heads);
    mc.n_layers = jm.value("n_layers", mc.n_layers);
    mc.seed = jm.value("seed", mc.seed);
  }
  mc.validate();
  return mc;
}

json materialize_model(const ModelConfig& mc) {
  return {{"vocab_size", mc.vocab_size}, {"context_len", mc.context_len},
          {"d_model", mc.d_model},       {"n_heads", mc.n_heads},
          {"n_layers", mc.n_layers},     {"seed", mc.seed}};
}

TrainConfig train_template(const json& st, std::uint64_t run_seed, int stage_index) {
  TrainConfig tc;
  tc.learning_rate = st.value("learning_rate", 1e-3);
  tc.batch_size = st.value("batch_size", 16);
  tc.beta = st.value("beta", 1.0);
  tc.seed = st.contains("seed")
                ? st["seed"].get<std::uint64_t>()
                : derive_seed(run_seed, 0x7374616765ULL, stage_index);
  if (st.contains("lora")) {
    tc.lora = LoraTrainConfig{st["lora"]["rank"].get<int>(),
                              st["lora"]["alpha"].get<double>()};
  }
  return tc;
}

struct Execution {
  ManifestRun& run;
  RunPaths paths;
  ModelConfig model;
  std::uint64_t seed;
  json resolved_stages = json::array();

  const Dataset& dataset(const std::string& name) { return run.datasets.at(name); }
  const PolicyParams& checkpoint(const std::string& name) {
    return run.checkpoints.at(name);
  }

  void exec_gen_data(const json& st, int idx);
  void exec_train_sft(const json& st, int idx);
  void exec_build_pairs(const json& st, int idx);
  void exec_train_dpo(const json& st, int idx);
  void exec_synthesize(const json& st, int idx);
  void exec_evaluate(const json& st, int idx);
  void exec_scaling(const json& st, int idx);
  void exec_report(const json& st, int idx);
};

void Execution::exec_gen_data(const json& st, int idx) {
  const std::string name = st["name"].get<std::string>();
  Dataset ds;
  json resolved = st;
  if (st.contains("task")) {
    const TaskSpec& spec = run.tasks.at(st["task"].get<std::string>());
    const std::string split = st.value("split", "train");
    const std::uint64_t seed_v = st.contains("seed")
                                     ? st["seed"].get<std::uint64_t>()
                                     : derive_seed(seed, 0x67656e64ULL, idx);
    ds = sample_dataset(spec, st["n"].get<int>(), split, seed_v);
    resolved["split"] = split;
    resolved["seed"] = seed_v;
  } else if (st.contains("from")) {
    const std::uint64_t seed_v = st.contains("seed")
                                     ? st["seed"].get<std::uint64_t>()
                                     : derive_seed(seed, 0x73756273ULL, idx);
    ds = subsample(dataset(st["from"].get<std::string>()),
                   st["fraction"].get<double>(), seed_v);
    resolved["seed"] = seed_v;
  } else {
    for (const auto& u : st["union"]) {
      const Dataset& part = dataset(u.get<std::string>());
      if (ds.samples.empty()) {
        ds.split = part.split;
        ds.provenance = part.provenance;
      }
      ds.samples.insert(ds.samples.end(), part.samples.begin(), part.samples.end());
    }
  }
  const std::string fmt = st.value("annotation_format", "plain");
  if (fmt == "cot") {
    ds = to_annotation_format(ds);
  } else if (fmt == "mixed") {
    const Dataset cot = to_annotation_format(ds);
    ds.samples.insert(ds.samples.end(), cot.samples.begin(), cot.samples.end());
  }
  resolved["annotation_format"] = fmt;
  save_dataset(ds, (paths.dir("datasets") / (name + ".jsonl")).string());
  run.datasets.emplace(name, std::move(ds));
  resolved_stages.push_back(std::move(resolved));
}

void Execution::exec_train_sft(const json& st, int idx) {
  const std::string name = st["name"].get<std::string>();
  const std::string init = st["init"].get<std::string>();
  TrainConfig tc = train_template(st, seed, idx);

  PolicyParams params = init == "fresh"
                            ? PolicyParams::init([&] {
                                ModelConfig mc = model;
                                mc.seed = derive_seed(model.seed, tc.seed);
                                return mc;
                              }())
                            : checkpoint(init);

  const bool sequential = st.value("sequential", false);
  const int steps = st["steps"].get<int>();
  std::vector<const Dataset*> sets;
  for (const auto& d : st["datasets"]) sets.push_back(&dataset(d.get<std::string>()));

  Dataset joint;
  if (!sequential && sets.size() > 1) {
    for (const Dataset* d : sets) {
      joint.samples.insert(joint.samples.end(), d->samples.begin(), d->samples.end());
    }
  }

  if (sequential) {
    for (const Dataset* d : sets) {
      TrainStage stage;
      stage.kind = StageKind::kSft;
      stage.data = d;
      stage.steps = steps;  // per-dataset budget, matching the paper's protocol
      tc.curriculum.push_back(stage);
    }
  } else {
    TrainStage stage;
    stage.kind = StageKind::kSft;
    stage.data = sets.size() == 1 ? sets[0] : &joint;
    stage.steps = steps;
    tc.curriculum.push_back(stage);
  }

  const TrainReport rep = train(params, tc);

  // loss trace CSV, one row per step
  {
    std::ofstream os(paths.dir("checkpoints") / (name + ".loss.csv"));
    os << "step,loss\n";
    char buf[64];
    int step = 0;
    for (const double l : rep.flat_losses()) {
      std::snprintf(buf, sizeof buf, "%.10g", l);
      os << step++ << "," << buf << "\n";
    }
  }
  save_checkpoint(params, (paths.dir("checkpoints") / (name + ".ckpt")).string());
  run.checkpoints.emplace(name, std::move(params));

  json resolved = st;
  resolved["learning_rate"] = tc.learning_rate;
  resolved["batch_size"] = tc.batch_size;
  resolved["seed"] = tc.seed;
  resolved_stages.push_back(std::move(resolved));
}

void Execution::exec_build_pairs(const json& st, int idx) {
  const std::string name = st["name"].get<std::string>();
  SamplerConfig sampler;
  sampler.temperature = 1.0;
  sampler.max_new_tokens = 12;
  if (st.contains("sampler")) sampler = sampler_from_json(st["sampler"], "sampler");
  const std::uint64_t seed_v = st.contains("seed")
                                   ? st["seed"].get<std::uint64_t>()
                                   : derive_seed(seed, 0x7061697273ULL, idx);

  const GenerationPass pass = run_generation_pass(
      checkpoint(st["checkpoint"].get<std::string>()),
      dataset(st["dataset"].get<std::string>()), sampler, seed_v);

  save_pairs(pass.pairs, (paths.dir("pairs") / (name + ".jsonl")).string());
  {
    std::ofstream os(paths.dir("pairs") / (name + ".stats.csv"));
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", pass.overlength_ratio);
    os << "overlength_ratio,yield\n" << buf << "," << pass.pairs.size() << "\n";
  }
  run.pair_overlength[name] = pass.overlength_ratio;
  run.pairs.emplace(name, pass.pairs);

  json resolved = st;
  resolved["sampler"] = sampler_to_json(sampler);
  resolved["seed"] = seed_v;
  resolved_stages.push_back(std::move(resolved));
}

void Execution::exec_train_dpo(const json& st, int idx) {
  const std::string name = st["name"].get<std::string>();
  TrainConfig tc = train_template(st, seed, idx);
  if (!tc.lora && !st.contains("lora")) {
    tc.lora = LoraTrainConfig{4, 8.0};  // desk-scale DPO default
  }

  PolicyParams params = checkpoint(st["init"].get<std::string>());
  const auto& pair_set = run.pairs.at(st["pairs"].get<std::string>());

  TrainStage stage;
  stage.kind = StageKind::kDpo;
  stage.pairs = &pair_set;
  stage.steps = st["steps"].get<int>();
  tc.curriculum.push_back(stage);
  train(params, tc);

  if (st.value("merge_adapters", true)) params.merge_lora();
  save_checkpoint(params, (paths.dir("checkpoints") / (name + ".ckpt")).string());
  run.checkpoints.emplace(name, std::move(params));

  json resolved = st;
  resolved["learning_rate"] = tc.learning_rate;
  resolved["batch_size"] = tc.batch_size;
  resolved["beta"] = tc.beta;
  resolved["seed"] = tc.seed;
  resolved["merge_adapters"] = st.value("merge_adapters", true);
  resolved_stages.push_back(std::move(resolved));
}

void Execution::exec_synthesize(const json& st, int idx) {
  const std::string name = st["name"].get<std::string>();
  SynthesisConfig cfg;
  cfg.task = run.tasks.at(st["task"].get<std::string>());
  cfg.n_corpus = st.value("n_corpus", 256);
  cfg.rounds = st.value("rounds", 1);
  cfg.seed = st.contains("seed") ? st["seed"].get<std::uint64_t>()
                                 : derive_seed(seed, 0x73796eULL, idx);
  cfg.sampler.temperature = 0.0;
  cfg.sampler.max_new_tokens = cfg.task.answer_max_len() + 4;
  if (st.contains("sampler")) cfg.sampler = sampler_from_json(st["sampler"], "sampler");
  cfg.train.learning_rate = st.value("learning_rate", 1e-3);
  cfg.train.batch_size = st.value("batch_size", 16);
  cfg.train_steps = st["train_steps"].get<int>();
  const Dataset& eval_split = dataset(st["eval_dataset"].get<std::string>());
  cfg.eval_split = &eval_split;

  auto [policy, report] = iterate(checkpoint(st["init"].get<std::string>()), cfg);
  save_synthesis_csv(report, (paths.dir("synthesis") / (name + ".csv")).string());
  save_checkpoint(policy, (paths.dir("checkpoints") / (name + ".ckpt")).string());
  run.synthesis.emplace(name, std::move(report));
  run.checkpoints.emplace(name, std::move(policy));

  json resolved = st;
  resolved["n_corpus"] = cfg.n_corpus;
  resolved["rounds"] = cfg.rounds;
  resolved["seed"] = cfg.seed;
  resolved["sampler"] = sampler_to_json(cfg.sampler);
  resolved_stages.push_back(std::move(resolved));
}

void Execution::exec_evaluate(const json& st, int idx) {
  const std::string name = st["name"].get<std::string>();
  std::vector<TaskSpec> tasks;
  std::vector<Dataset> sets;
  for (const auto& d : st["datasets"]) {
    const Dataset& ds = dataset(d.get<std::string>());
    if (!ds.task) {
      throw ValidationError("stages[" + std::to_string(idx) + "].datasets",
                            "dataset '" + d.get<std::string>() +
                                "' carries no task spec");
    }
    tasks.push_back(*ds.task);
    sets.push_back(ds);
  }
  SamplerConfig sampler;
  sampler.max_new_tokens = st.value("max_new_tokens", 8);
  const std::string scheme_name = st.value("f1_scheme", "weighted");
  const F1Scheme scheme = scheme_name == "micro"   ? F1Scheme::kMicro
                          : scheme_name == "macro" ? F1Scheme::kMacro
                                                   : F1Scheme::kWeighted;

  const MetricReport rep = evaluate(checkpoint(st["checkpoint"].get<std::string>()),
                                    tasks, sets, sampler,
                                    st["checkpoint"].get<std::string>(), scheme);
  save_metric_csv(rep, (paths.dir("metrics") / (name + ".csv")).string());
  run.metrics.emplace(name, rep);

  json resolved = st;
  resolved["max_new_tokens"] = sampler.max_new_tokens;
  resolved["f1_scheme"] = scheme_name;
  resolved_stages.push_back(std::move(resolved));
}

void Execution::exec_scaling(const json& st, int idx) {
  const std::string name = st["name"].get<std::string>();
  ScalingRunConfig cfg;
  if (st.contains("fractions")) {
    cfg.fractions = st["fractions"].get<std::vector<double>>();
  }
  if (st.contains("seeds")) {
    cfg.seeds = st["seeds"].get<std::vector<std::uint64_t>>();
  }
  cfg.model = model;
  cfg.model.seed = st.value("model_seed", model.seed);
  cfg.train.learning_rate = st.value("learning_rate", 1e-3);
  cfg.train.batch_size = st.value("batch_size", 16);
  cfg.steps = st["steps"].get<int>();
  for (const auto& d : st["eval_datasets"]) {
    const Dataset& ds = dataset(d.get<std::string>());
    if (!ds.task) {
      throw ValidationError("stages[" + std::to_string(idx) + "].eval_datasets",
                            "dataset carries no task spec");
    }
    cfg.eval_tasks.push_back(*ds.task);
    cfg.eval_sets.push_back(ds);
  }
  cfg.eval_sampler.max_new_tokens = 8;

  const auto points = run_fractions(dataset(st["dataset"].get<std::string>()), cfg);
  const ScalingFit fit = fit_power_law(points);
  const double derived = derive_cross_domain_exponent(0.076, 0.095, 0.195);
  const UniversalityReport uni = compare_to_universality(fit, derived);

  const fs::path dir = paths.dir("scaling");
  save_scaling_csv(points, fit, (dir / (name + ".csv")).string());
  save_scaling_svg(points, fit, derived, (dir / (name + ".svg")).string());
  {
    json jf = {{"alpha", fit.alpha},
               {"intercept", fit.intercept},
               {"r_squared", fit.r_squared},
               {"alpha_stderr", fit.alpha_stderr},
               {"points_used", fit.points_used},
               {"points_dropped", fit.points_dropped},
               {"derived_constant", derived},
               {"gap", uni.gap},
               {"within_two_stderr", uni.within_two_stderr}};
    std::ofstream os(dir / (name + ".fit.json"));
    os << jf.dump(2) << "\n";
  }
  run.scaling_points.emplace(name, points);
  run.scaling_fits.emplace(name, fit);

  json resolved = st;
  resolved["fractions"] = cfg.fractions;
  resolved["seeds"] = cfg.seeds;
  resolved_stages.push_back(std::move(resolved));
}

void Execution::exec_report(const json& st, int idx) {
  (void)idx;
  const std::string name = st["name"].get<std::string>();
  std::string text;
  for (const auto& i : st["inputs"]) {
    text += "== " + i.get<std::string>() + " ==\n";
    text += render_metric_table(run.metrics.at(i.get<std::string>()));
    text += "\n";
  }
  std::ofstream os(paths.dir("reports") / (name + ".txt"));
  os << text;
  resolved_stages.push_back(st);
}

fs::path pick_run_dir(const std::string& out_dir, const std::string& name,
                      const std::string& hash) {
  const fs::path root = out_dir.empty() ? default_out_root() : out_dir;
  fs::path dir = root / (name + "-" + hash);
  int k = 2;
  while (fs::exists(dir)) {
    if (fs::exists(dir / ".lock")) {
      throw IoError("run directory is locked by another process: " + dir.string());
    }
    dir = root / (name + "-" + hash + "-" + std::to_string(k++));
  }
  return dir;
}

}  // namespace

ManifestRun run_manifest_json(const json& manifest, const std::string& name,
                              const std::string& out_dir) {
  validate_manifest(manifest);

  ManifestRun run;
  const std::string hash = hex12(fnv1a64(manifest.dump()));
  const fs::path dir = pick_run_dir(out_dir, name, hash);
  RunLock lock(dir);
  run.run_dir = dir.string();

  Execution ex{run, RunPaths{dir}, model_from_json(manifest),
               manifest["seed"].get<std::uint64_t>()};

  // tasks section
  if (manifest.contains("tasks")) {
    for (const auto& jt : manifest["tasks"]) {
      const std::string id = jt["task_id"].get<std::string>();
      const std::uint64_t tseed = jt["seed"].get<std::uint64_t>();
      TaskSpec spec;
      if (jt.contains("variant_of")) {
        const TaskSpec& src = run.tasks.at(jt["variant_of"].get<std::string>());
        spec = make_variant_task(src, tseed, id,
                                 prompt_from_name(jt["prompt"].get<std::string>(), id));
      } else {
        TaskOptions opts;
        opts.task_id = id;
        opts.n_labels = jt.value("labels", 3);
        opts.prompt = prompt_from_name(prompt_name_default(jt), id);
        const std::string kind = jt["kind"].get<std::string>();
        spec = make_task(kind == "tagging"          ? TaskKind::kTagging
                         : kind == "classification" ? TaskKind::kClassification
                                                    : TaskKind::kRegression,
                         tseed, opts);
      }
      run.tasks.emplace(id, std::move(spec));
    }
  }

  int idx = 0;
  for (const auto& st : manifest["stages"]) {
    const std::string kind = st["stage"].get<std::string>();
    if (kind == "gen-data") {
      ex.exec_gen_data(st, idx);
    } else if (kind == "train-sft") {
      ex.exec_train_sft(st, idx);
    } else if (kind == "build-pairs") {
      ex.exec_build_pairs(st, idx);
    } else if (kind == "train-dpo") {
      ex.exec_train_dpo(st, idx);
    } else if (kind == "synthesize") {
      ex.exec_synthesize(st, idx);
    } else if (kind == "evaluate") {
      ex.exec_evaluate(st, idx);
    } else if (kind == "scaling") {
      ex.exec_scaling(st, idx);
    } else {
      ex.exec_report(st, idx);
    }
    ++idx;
  }

  // resolved config: enough to re-run without the original manifest
  run.resolved = manifest;
  run.resolved["model"] = materialize_model(ex.model);
  run.resolved["out_dir"] = (out_dir.empty() ? default_out_root() : out_dir);
  run.resolved["stages"] = ex.resolved_stages;
  {
    std::ofstream os(dir / "resolved.json");
    os << run.resolved.dump(2) << "\n";
  }
  return run;
}

ManifestRun run_manifest(const std::string& path, const std::string& out_dir) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path);
  json manifest;
  try {
    manifest = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ValidationError("manifest", std::string("not valid JSON: ") + e.what());
  }
  const std::string stem = fs::path(path).stem().string();
  const std::string out =
      !out_dir.empty() ? out_dir
                       : manifest.is_object() && manifest.contains("out_dir")
                             ? manifest["out_dir"].get<std::string>()
                             : "";
  return run_manifest_json(manifest, stem, out);
}

}  // namespace ftlab
