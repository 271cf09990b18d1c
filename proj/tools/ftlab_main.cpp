#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ftlab/errors.hpp"
#include "ftlab/evaluation.hpp"
#include "ftlab/manifest.hpp"
#include "ftlab/preference.hpp"
#include "ftlab/scaling.hpp"
#include "ftlab/synthesis.hpp"
#include "ftlab/tasks.hpp"
#include "ftlab/training.hpp"

namespace fs = std::filesystem;
using namespace ftlab;

namespace {

TaskSpec task_from_flags(const std::string& kind, int labels, std::uint64_t seed,
                         const std::string& task_id, bool variant,
                         std::uint64_t variant_seed) {
  TaskOptions opts;
  opts.task_id = task_id;
  opts.n_labels = labels;
  TaskKind tk;
  if (kind == "tagging") {
    tk = TaskKind::kTagging;
  } else if (kind == "classification") {
    tk = TaskKind::kClassification;
  } else if (kind == "regression") {
    tk = TaskKind::kRegression;
  } else {
    throw ValidationError("kind", "unknown task kind '" + kind + "'");
  }
  TaskSpec spec = make_task(tk, seed, opts);
  if (variant) {
    const Token prompt = tk == TaskKind::kTagging ? kClsBVariantPrompt
                         : tk == TaskKind::kClassification
                             ? (labels == 2 ? kClsCVariantPrompt : kClsBVariantPrompt)
                             : kRegVariantPrompt;
    spec = make_variant_task(spec, variant_seed, task_id + "-variant", prompt);
  }
  return spec;
}

ModelConfig model_from_flags(int d_model, int n_heads, int n_layers, int context,
                             std::uint64_t seed) {
  ModelConfig mc;
  mc.vocab_size = kTaskVocabSize;
  mc.context_len = context;
  mc.d_model = d_model;
  mc.n_heads = n_heads;
  mc.n_layers = n_layers;
  mc.seed = seed;
  return mc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ftlab: a desk-scale fine-tuning laboratory"};
  app.require_subcommand(1);

  // --- gen-data ---------------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data", "Generate a planted task dataset");
  std::string g_kind = "classification", g_split = "train", g_out = "dataset.jsonl";
  std::string g_task_id;
  int g_labels = 3, g_n = 512;
  std::uint64_t g_task_seed = 1, g_seed = 1, g_variant_seed = 2;
  bool g_variant = false;
  gen->add_option("--kind", g_kind, "tagging | classification | regression");
  gen->add_option("--labels", g_labels, "label count for classification (2 or 3)");
  gen->add_option("--task-seed", g_task_seed, "seed of the planted rule");
  gen->add_option("--task-id", g_task_id, "task identifier (defaults to the kind)");
  gen->add_flag("--variant", g_variant, "domain-shifted variant of the task");
  gen->add_option("--variant-seed", g_variant_seed, "seed of the domain shift");
  gen->add_option("--split", g_split, "train | eval");
  gen->add_option("-n,--n", g_n, "sample count");
  gen->add_option("--seed", g_seed, "sampling seed");
  gen->add_option("-o,--out", g_out, "output dataset path");

  // --- train --------------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "Run an SFT/DPO curriculum");
  std::string t_init = "fresh", t_out = "model.ckpt";
  std::vector<std::string> t_curriculum;
  int t_steps = 400, t_batch = 16, t_d = 32, t_heads = 4, t_layers = 2, t_ctx = 64;
  double t_lr = 1e-3, t_beta = 1.0;
  std::uint64_t t_seed = 1;
  int t_lora_rank = 0;
  double t_lora_alpha = 0.0;
  tr->add_option("--init", t_init, "'fresh' or a checkpoint path");
  tr->add_option("--curriculum", t_curriculum,
                 "ordered stages, each sft:<dataset.jsonl> or dpo:<pairs.jsonl>")
      ->required();
  tr->add_option("--steps", t_steps, "steps per stage");
  tr->add_option("--lr", t_lr, "constant learning rate");
  tr->add_option("--batch", t_batch, "batch size");
  tr->add_option("--beta", t_beta, "DPO temperature");
  tr->add_option("--lora-rank", t_lora_rank,
                 "adapter-only training with this rank (0 = full finetune)");
  tr->add_option("--lora-alpha", t_lora_alpha, "adapter alpha (default 2x rank)");
  tr->add_option("--seed", t_seed, "training seed");
  tr->add_option("--d-model", t_d, "model width (fresh init)");
  tr->add_option("--heads", t_heads, "attention heads (fresh init)");
  tr->add_option("--layers", t_layers, "transformer layers (fresh init)");
  tr->add_option("--context", t_ctx, "context length (fresh init)");
  tr->add_option("-o,--out", t_out, "output checkpoint path");

  // --- build-pairs ----------------------------------------------------------------
  auto* bp = app.add_subcommand("build-pairs",
                                "Mine overlength preference pairs from a checkpoint");
  std::string b_ckpt, b_data, b_out = "pairs.jsonl";
  double b_temp = 1.0, b_top_p = 0.0, b_rep = 1.0;
  int b_max_new = 12, b_top_k = 0;
  std::uint64_t b_seed = 1;
  bp->add_option("--checkpoint", b_ckpt)->required();
  bp->add_option("--data", b_data)->required();
  bp->add_option("--temperature", b_temp);
  bp->add_option("--top-k", b_top_k, "top-k filtering (0 = off)");
  bp->add_option("--top-p", b_top_p, "nucleus filtering (0 = off)");
  bp->add_option("--repetition-penalty", b_rep);
  bp->add_option("--max-new", b_max_new);
  bp->add_option("--seed", b_seed);
  bp->add_option("-o,--out", b_out, "output pair file");

  // --- synthesize -----------------------------------------------------------------
  auto* sy = app.add_subcommand("synthesize",
                                "Iterative synthetic-data RL on a target task");
  std::string s_init, s_kind = "classification", s_out = "model_rl.ckpt";
  std::string s_report = "synthesis.csv", s_task_id;
  int s_labels = 3, s_corpus = 256, s_rounds = 1, s_steps = 200, s_batch = 16;
  int s_eval_n = 128;
  double s_lr = 1e-3;
  std::uint64_t s_task_seed = 1, s_variant_seed = 2, s_seed = 1, s_eval_seed = 9;
  bool s_variant = false;
  sy->add_option("--init", s_init, "starting checkpoint")->required();
  sy->add_option("--kind", s_kind, "tagging | classification | regression");
  sy->add_option("--labels", s_labels);
  sy->add_option("--task-seed", s_task_seed);
  sy->add_option("--task-id", s_task_id);
  sy->add_flag("--variant", s_variant, "synthesize for the domain-shifted variant");
  sy->add_option("--variant-seed", s_variant_seed);
  sy->add_option("--n-corpus", s_corpus);
  sy->add_option("--rounds", s_rounds);
  sy->add_option("--train-steps", s_steps);
  sy->add_option("--lr", s_lr);
  sy->add_option("--batch", s_batch);
  sy->add_option("--eval-n", s_eval_n, "held-out eval samples");
  sy->add_option("--eval-seed", s_eval_seed);
  sy->add_option("--seed", s_seed);
  sy->add_option("-o,--out", s_out, "output checkpoint path");
  sy->add_option("--report", s_report, "synthesis report CSV path");

  // --- evaluate -------------------------------------------------------------------
  auto* ev = app.add_subcommand("evaluate", "Score a checkpoint on eval datasets");
  std::string e_ckpt, e_out = "metrics.csv", e_scheme = "weighted";
  std::vector<std::string> e_data;
  int e_max_new = 8;
  bool e_table = false;
  ev->add_option("--checkpoint", e_ckpt)->required();
  ev->add_option("--data", e_data, "eval dataset files (task spec embedded)")
      ->required();
  ev->add_option("--max-new", e_max_new);
  ev->add_option("--f1-scheme", e_scheme, "micro | macro | weighted");
  ev->add_flag("--table", e_table, "print a human-readable table");
  ev->add_option("-o,--out", e_out, "metrics CSV path");

  // --- scaling --------------------------------------------------------------------
  auto* sc = app.add_subcommand("scaling", "Fractional-data sweep and power-law fit");
  std::string c_data, c_out_dir = ".";
  std::vector<std::string> c_eval;
  std::vector<double> c_fractions = {1.0, 0.5, 0.25, 0.125};
  std::vector<std::uint64_t> c_seeds = {1, 2, 3};
  int c_steps = 400, c_batch = 16, c_d = 32, c_heads = 4, c_layers = 2, c_ctx = 64;
  double c_lr = 1e-3;
  std::uint64_t c_model_seed = 1;
  sc->add_option("--data", c_data, "base training dataset")->required();
  sc->add_option("--eval-data", c_eval, "eval dataset files")->required();
  sc->add_option("--fractions", c_fractions);
  sc->add_option("--seeds", c_seeds);
  sc->add_option("--steps", c_steps);
  sc->add_option("--lr", c_lr);
  sc->add_option("--batch", c_batch);
  sc->add_option("--d-model", c_d);
  sc->add_option("--heads", c_heads);
  sc->add_option("--layers", c_layers);
  sc->add_option("--context", c_ctx);
  sc->add_option("--model-seed", c_model_seed);
  sc->add_option("--out-dir", c_out_dir, "directory for scaling.{csv,svg}");

  // --- replicate ------------------------------------------------------------------
  auto* rp = app.add_subcommand("replicate", "Run a bundled exhibit preset");
  std::string r_preset, r_out;
  rp->add_option("--preset", r_preset, "table1 | table3 | table4 | figure2")
      ->required();
  rp->add_option("--out-dir", r_out, "output root (default $FTLAB_OUT_ROOT or runs/)");

  // --- run ------------------------------------------------------------------------
  auto* rn = app.add_subcommand("run", "Execute an experiment manifest");
  std::string m_path, m_out;
  rn->add_option("manifest", m_path, "manifest JSON path")->required();
  rn->add_option("--out-dir", m_out, "output root (default $FTLAB_OUT_ROOT or runs/)");

  // --- report ---------------------------------------------------------------------
  auto* rpt = app.add_subcommand("report", "Render metric CSVs from a run directory");
  std::string p_run_dir;
  rpt->add_option("run_dir", p_run_dir, "a finished run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const TaskSpec spec = task_from_flags(g_kind, g_labels, g_task_seed,
                                            g_task_id.empty() ? g_kind : g_task_id,
                                            g_variant, g_variant_seed);
      const Dataset ds = sample_dataset(spec, g_n, g_split, g_seed);
      save_dataset(ds, g_out);
      std::printf("wrote %zu samples (%zu tokens) to %s\n", ds.size(),
                  ds.token_count(), g_out.c_str());
    } else if (*tr) {
      PolicyParams params =
          t_init == "fresh"
              ? PolicyParams::init(model_from_flags(t_d, t_heads, t_layers, t_ctx,
                                                    derive_seed(t_seed, 0xccULL)))
              : load_checkpoint(t_init);

      std::vector<Dataset> datasets;
      std::vector<std::vector<PreferenceSample>> pair_sets;
      TrainConfig tc;
      tc.learning_rate = t_lr;
      tc.batch_size = t_batch;
      tc.beta = t_beta;
      tc.seed = t_seed;
      if (t_lora_rank > 0) {
        tc.lora = LoraTrainConfig{
            t_lora_rank, t_lora_alpha > 0.0 ? t_lora_alpha : 2.0 * t_lora_rank};
      }
      // load artifacts first so stage pointers stay stable
      for (const auto& item : t_curriculum) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) {
          throw ValidationError("curriculum", "expected sft:<path> or dpo:<path>");
        }
        const std::string kind = item.substr(0, colon);
        const std::string path = item.substr(colon + 1);
        if (kind == "sft") {
          datasets.push_back(load_dataset(path));
        } else if (kind == "dpo") {
          pair_sets.push_back(load_pairs(path));
        } else {
          throw ValidationError("curriculum", "unknown stage kind '" + kind + "'");
        }
      }
      std::size_t di = 0, pi = 0;
      for (const auto& item : t_curriculum) {
        TrainStage stage;
        stage.steps = t_steps;
        if (item.rfind("sft:", 0) == 0) {
          stage.kind = StageKind::kSft;
          stage.data = &datasets[di++];
        } else {
          stage.kind = StageKind::kDpo;
          stage.pairs = &pair_sets[pi++];
        }
        tc.curriculum.push_back(stage);
      }
      const TrainReport rep = train(params, tc);
      save_checkpoint(params, t_out);
      std::printf("trained %zu stages, %zu tokens, %.1fs; final loss %.5f -> %s\n",
                  rep.stages.size(), rep.tokens_consumed, rep.wall_clock_seconds,
                  rep.flat_losses().empty() ? 0.0 : rep.flat_losses().back(),
                  t_out.c_str());
    } else if (*bp) {
      const PolicyParams params = load_checkpoint(b_ckpt);
      const Dataset ds = load_dataset(b_data);
      SamplerConfig sampler;
      sampler.temperature = b_temp;
      if (b_top_k > 0) sampler.top_k = b_top_k;
      if (b_top_p > 0.0) sampler.top_p = b_top_p;
      sampler.repetition_penalty = b_rep;
      sampler.max_new_tokens = b_max_new;
      const GenerationPass pass = run_generation_pass(params, ds, sampler, b_seed);
      save_pairs(pass.pairs, b_out);
      std::printf("overlength ratio %.4f, %zu pairs -> %s\n", pass.overlength_ratio,
                  pass.pairs.size(), b_out.c_str());
    } else if (*sy) {
      const TaskSpec spec = task_from_flags(s_kind, s_labels, s_task_seed,
                                            s_task_id.empty() ? s_kind : s_task_id,
                                            s_variant, s_variant_seed);
      const Dataset eval_split = sample_dataset(spec, s_eval_n, "eval", s_eval_seed);
      SynthesisConfig cfg;
      cfg.task = spec;
      cfg.n_corpus = s_corpus;
      cfg.rounds = s_rounds;
      cfg.seed = s_seed;
      cfg.sampler.temperature = 0.0;
      cfg.sampler.max_new_tokens = spec.answer_max_len() + 4;
      cfg.train.learning_rate = s_lr;
      cfg.train.batch_size = s_batch;
      cfg.train_steps = s_steps;
      cfg.eval_split = &eval_split;
      auto [policy, report] = iterate(load_checkpoint(s_init), cfg);
      save_checkpoint(policy, s_out);
      save_synthesis_csv(report, s_report);
      std::printf("baseline %.4f -> round %d metric %.4f; %s, %s\n",
                  report.baseline_metric, s_rounds,
                  report.rounds.back().eval_metric, s_out.c_str(), s_report.c_str());
    } else if (*ev) {
      const PolicyParams params = load_checkpoint(e_ckpt);
      std::vector<TaskSpec> tasks;
      std::vector<Dataset> sets;
      for (const auto& path : e_data) {
        Dataset ds = load_dataset(path);
        if (!ds.task) {
          throw ValidationError("data", path + " carries no embedded task spec");
        }
        tasks.push_back(*ds.task);
        sets.push_back(std::move(ds));
      }
      SamplerConfig sampler;
      sampler.max_new_tokens = e_max_new;
      const F1Scheme scheme = e_scheme == "micro"   ? F1Scheme::kMicro
                              : e_scheme == "macro" ? F1Scheme::kMacro
                                                    : F1Scheme::kWeighted;
      const MetricReport rep = evaluate(params, tasks, sets, sampler,
                                        fs::path(e_ckpt).stem().string(), scheme);
      save_metric_csv(rep, e_out);
      if (e_table) std::fputs(render_metric_table(rep).c_str(), stdout);
      std::printf("wrote %zu metric rows to %s\n", rep.rows.size(), e_out.c_str());
    } else if (*sc) {
      ScalingRunConfig cfg;
      cfg.fractions = c_fractions;
      cfg.seeds = c_seeds;
      cfg.model = model_from_flags(c_d, c_heads, c_layers, c_ctx, c_model_seed);
      cfg.train.learning_rate = c_lr;
      cfg.train.batch_size = c_batch;
      cfg.steps = c_steps;
      for (const auto& path : c_eval) {
        Dataset ds = load_dataset(path);
        if (!ds.task) {
          throw ValidationError("eval-data", path + " carries no embedded task spec");
        }
        cfg.eval_tasks.push_back(*ds.task);
        cfg.eval_sets.push_back(std::move(ds));
      }
      cfg.eval_sampler.max_new_tokens = 8;
      const Dataset base = load_dataset(c_data);
      const auto points = run_fractions(base, cfg);
      const ScalingFit fit = fit_power_law(points);
      const double derived = derive_cross_domain_exponent(0.076, 0.095, 0.195);
      fs::create_directories(c_out_dir);
      save_scaling_csv(points, fit, (fs::path(c_out_dir) / "scaling.csv").string());
      save_scaling_svg(points, fit, derived,
                       (fs::path(c_out_dir) / "scaling.svg").string());
      std::printf("alpha %.4f (stderr %.4f), r^2 %.4f, derived constant %.5f\n",
                  fit.alpha, fit.alpha_stderr, fit.r_squared, derived);
    } else if (*rp) {
      const ManifestRun run = replicate_tables(r_preset, r_out);
      std::printf("%s artifacts under %s\n", r_preset.c_str(), run.run_dir.c_str());
    } else if (*rn) {
      const ManifestRun run = run_manifest(m_path, m_out);
      std::printf("run complete: %s\n", run.run_dir.c_str());
    } else if (*rpt) {
      const fs::path metrics = fs::path(p_run_dir) / "metrics";
      if (!fs::exists(metrics)) {
        throw IoError("no metrics directory under " + p_run_dir);
      }
      std::vector<fs::path> files;
      for (const auto& entry : fs::directory_iterator(metrics)) {
        if (entry.path().extension() == ".csv") files.push_back(entry.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& file : files) {
        std::printf("== %s ==\n", file.filename().c_str());
        std::ifstream is(file);
        std::string line;
        while (std::getline(is, line)) std::printf("%s\n", line.c_str());
        std::printf("\n");
      }
    }
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
