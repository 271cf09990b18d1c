#include "ftlab/training.hpp"

#include <chrono>
#include <cmath>

#include "ftlab/errors.hpp"

namespace ftlab {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

double plain_logprob(const Evaluator& eval, const TokenSeq& query,
                     const TokenSeq& answer) {
  TokenSeq input = query;
  input.insert(input.end(), answer.begin(), answer.end());
  const Matrix logp = log_softmax_rows(eval.logits(input));
  const int q = static_cast<int>(query.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < answer.size(); ++i) {
    acc += logp.at(q - 1 + static_cast<int>(i), answer[i]);
  }
  acc += logp.at(q + static_cast<int>(answer.size()) - 1, kEndToken);
  return acc;
}

Var sft_loss_node(GradTape& tape, const BoundParams& bp,
                  const std::vector<Sample>& batch) {
  std::vector<Var> terms;
  terms.reserve(batch.size());
  for (const auto& s : batch) {
    terms.push_back(logprob_answer_node(tape, bp, s.query, s.answer));
  }
  return tape.affine(tape.add_n(terms), -1.0 / static_cast<double>(batch.size()), 0.0);
}

struct RefLogProbs {
  std::vector<double> accepted;
  std::vector<double> rejected;
};

RefLogProbs reference_logprobs(const PolicyParams& ref,
                               const std::vector<PreferenceSample>& batch) {
  if (ref.role != ParamRole::kReferenceFrozen) {
    throw ShapeError("dpo: reference params must be a frozen snapshot");
  }
  const Evaluator eval(ref);
  RefLogProbs out;
  out.accepted.reserve(batch.size());
  out.rejected.reserve(batch.size());
  for (const auto& p : batch) {
    out.accepted.push_back(plain_logprob(eval, p.query, p.accepted));
    out.rejected.push_back(plain_logprob(eval, p.query, p.rejected));
  }
  return out;
}

Var dpo_loss_node(GradTape& tape, const BoundParams& bp,
                  const std::vector<PreferenceSample>& batch, const RefLogProbs& ref,
                  double beta) {
  std::vector<Var> terms;
  terms.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& p = batch[i];
    const Var lp_acc = logprob_answer_node(tape, bp, p.query, p.accepted);
    const Var lp_rej = logprob_answer_node(tape, bp, p.query, p.rejected);
    const Var diff = tape.add(lp_acc, tape.affine(lp_rej, -1.0, 0.0));
    // z = beta * ((lp_acc - ref_acc) - (lp_rej - ref_rej))
    const Var z =
        tape.affine(diff, beta, -beta * (ref.accepted[i] - ref.rejected[i]));
    terms.push_back(tape.softplus(tape.affine(z, -1.0, 0.0)));
  }
  return tape.affine(tape.add_n(terms), 1.0 / static_cast<double>(batch.size()), 0.0);
}

GradMap collect_grads(GradTape& tape, const BoundParams& bp,
                      const PolicyParams& params) {
  GradMap out;
  for (const auto& name : trainable_names(params)) {
    out.emplace_back(name, tape.grad(bp.by_name.at(name)));
  }
  return out;
}

void clip_global_norm(GradMap& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) sq += dot_all(g, g);
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (auto& [name, g] : grads) {
      for (auto& x : g.data) x *= scale;
    }
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw ValidationError("learning_rate", "must be positive");
  if (schedule != "constant") {
    throw ValidationError("schedule", "only the constant schedule is supported");
  }
  if (batch_size < 1) throw ValidationError("batch_size", "must be >= 1");
  if (beta <= 0.0) throw ValidationError("beta", "must be positive");
  if (curriculum.empty()) throw ValidationError("curriculum", "must be nonempty");
  for (std::size_t i = 0; i < curriculum.size(); ++i) {
    const auto& st = curriculum[i];
    const std::string field = "curriculum[" + std::to_string(i) + "]";
    if (st.steps < 0) throw ValidationError(field, "steps must be >= 0");
    if (st.kind == StageKind::kSft && st.data == nullptr) {
      throw ValidationError(field, "SFT stage needs a dataset");
    }
    if (st.kind == StageKind::kDpo && st.pairs == nullptr && !st.pair_builder) {
      throw ValidationError(field, "DPO stage needs pairs or a pair builder");
    }
  }
  if (lora && (lora->rank < 1 || lora->alpha <= 0.0)) {
    throw ValidationError("lora", "rank must be >= 1 and alpha positive");
  }
}

std::vector<double> TrainReport::flat_losses() const {
  std::vector<double> out;
  for (const auto& st : stages) out.insert(out.end(), st.losses.begin(), st.losses.end());
  return out;
}

double sft_loss(const PolicyParams& params, const std::vector<Sample>& batch) {
  if (batch.empty()) throw ShapeError("sft_loss: batch must be nonempty");
  const Evaluator eval(params);
  double acc = 0.0;
  for (const auto& s : batch) acc += plain_logprob(eval, s.query, s.answer);
  const double loss = -acc / static_cast<double>(batch.size());
  if (!std::isfinite(loss)) throw TrainError("sft_loss: non-finite loss", -1, 0);
  return loss;
}

double dpo_loss(const PolicyParams& params, const PolicyParams& ref,
                const std::vector<PreferenceSample>& batch, double beta) {
  if (batch.empty()) throw ShapeError("dpo_loss: batch must be nonempty");
  if (beta <= 0.0) throw ShapeError("dpo_loss: beta must be positive");
  const RefLogProbs rlp = reference_logprobs(ref, batch);
  const Evaluator eval(params);
  double acc = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& p = batch[i];
    const double d_acc = plain_logprob(eval, p.query, p.accepted) - rlp.accepted[i];
    const double d_rej = plain_logprob(eval, p.query, p.rejected) - rlp.rejected[i];
    acc += softplus_value(-beta * (d_acc - d_rej));
  }
  const double loss = acc / static_cast<double>(batch.size());
  if (!std::isfinite(loss)) throw TrainError("dpo_loss: non-finite loss", -1, 0);
  return loss;
}

LossGrad grad_of(const PolicyParams& params,
                 const std::function<Var(GradTape&, const BoundParams&)>& builder) {
  GradTape tape;
  BoundParams bp = bind_params(tape, params, true);
  const Var loss = builder(tape, bp);
  LossGrad out;
  out.loss = tape.scalar(loss);
  if (!std::isfinite(out.loss)) throw TrainError("grad: non-finite loss", -1, 0);
  tape.backward(loss);
  out.grads = collect_grads(tape, bp, params);
  return out;
}

LossGrad grad_sft(const PolicyParams& params, const std::vector<Sample>& batch) {
  if (batch.empty()) throw ShapeError("grad_sft: batch must be nonempty");
  return grad_of(params, [&](GradTape& tape, const BoundParams& bp) {
    return sft_loss_node(tape, bp, batch);
  });
}

LossGrad grad_dpo(const PolicyParams& params, const PolicyParams& ref,
                  const std::vector<PreferenceSample>& batch, double beta) {
  if (batch.empty()) throw ShapeError("grad_dpo: batch must be nonempty");
  const RefLogProbs rlp = reference_logprobs(ref, batch);
  return grad_of(params, [&](GradTape& tape, const BoundParams& bp) {
    return dpo_loss_node(tape, bp, batch, rlp, beta);
  });
}

void optimizer_step(PolicyParams& params, const GradMap& grads, AdamState& state,
                    double lr) {
  auto trainable = trainable_tensors(params);
  if (grads.size() != trainable.size()) {
    throw ShapeError("optimizer_step: gradient not congruent to trainable params");
  }
  if (state.m.empty()) {
    for (const auto& [name, m] : trainable) {
      state.m.emplace_back(m->rows, m->cols);
      state.v.emplace_back(m->rows, m->cols);
    }
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, state.t);
  const double bc2 = 1.0 - std::pow(kAdamBeta2, state.t);
  for (std::size_t i = 0; i < trainable.size(); ++i) {
    auto& [name, theta] = trainable[i];
    const auto& [gname, g] = grads[i];
    if (gname != name || !g.same_shape(*theta)) {
      throw ShapeError("optimizer_step: gradient mismatch at " + name);
    }
    Matrix& m = state.m[i];
    Matrix& v = state.v[i];
    for (std::size_t j = 0; j < theta->data.size(); ++j) {
      const double gj = g.data[j];
      m.data[j] = kAdamBeta1 * m.data[j] + (1.0 - kAdamBeta1) * gj;
      v.data[j] = kAdamBeta2 * v.data[j] + (1.0 - kAdamBeta2) * gj * gj;
      const double mh = m.data[j] / bc1;
      const double vh = v.data[j] / bc2;
      theta->data[j] -= lr * mh / (std::sqrt(vh) + kAdamEps);
    }
  }
}

TrainReport train(PolicyParams& params, const TrainConfig& cfg) {
  cfg.validate();
  if (params.role == ParamRole::kReferenceFrozen) {
    throw ShapeError("train: params are a frozen reference");
  }
  const auto wall_start = std::chrono::steady_clock::now();

  if (cfg.lora) {
    if (params.lora) params.merge_lora();
    params.attach_lora(cfg.lora->rank, cfg.lora->alpha, derive_seed(cfg.seed, 0xabULL));
  } else if (params.lora) {
    params.merge_lora();
  }

  TrainReport report;
  int global_step = 0;

  for (std::size_t stage_idx = 0; stage_idx < cfg.curriculum.size(); ++stage_idx) {
    const TrainStage& stage = cfg.curriculum[stage_idx];
    StageTrace trace;
    trace.kind = stage.kind;

    PolicyParams ref;  // DPO only
    std::vector<PreferenceSample> built_pairs;
    const std::vector<PreferenceSample>* pairs = nullptr;
    RefLogProbs ref_lps;

    std::size_t n_items = 0;
    if (stage.kind == StageKind::kSft) {
      n_items = stage.data->size();
      if (n_items == 0) throw ShapeError("train: SFT stage dataset is empty");
    } else {
      ref = snapshot_reference(params);
      if (stage.pairs) {
        pairs = stage.pairs;
      } else {
        built_pairs = stage.pair_builder(params);
        pairs = &built_pairs;
      }
      n_items = pairs->size();
      if (n_items == 0) {
        trace.skipped_empty = true;  // zero yield: stage skipped
        report.stages.push_back(std::move(trace));
        continue;
      }
      ref_lps = reference_logprobs(ref, *pairs);
    }

    Rng order_rng(derive_seed(cfg.seed, 0x737461676500ULL + stage_idx));
    std::vector<std::size_t> order(n_items);
    for (std::size_t i = 0; i < n_items; ++i) order[i] = i;
    std::size_t cursor = n_items;  // force a shuffle on first use
    AdamState adam;                // fresh moments per stage

    for (int step = 0; step < stage.steps; ++step, ++global_step) {
      std::vector<std::size_t> batch_idx;
      for (int b = 0; b < cfg.batch_size; ++b) {
        if (cursor >= n_items) {
          order_rng.shuffle(order);
          cursor = 0;
        }
        batch_idx.push_back(order[cursor++]);
      }

      GradTape tape;
      BoundParams bp = bind_params(tape, params, true);
      Var loss_node;
      if (stage.kind == StageKind::kSft) {
        std::vector<Sample> batch;
        for (std::size_t i : batch_idx) {
          batch.push_back(stage.data->samples[i]);
          report.tokens_consumed +=
              batch.back().query.size() + batch.back().answer.size();
        }
        loss_node = sft_loss_node(tape, bp, batch);
      } else {
        std::vector<PreferenceSample> batch;
        RefLogProbs batch_ref;
        for (std::size_t i : batch_idx) {
          batch.push_back((*pairs)[i]);
          batch_ref.accepted.push_back(ref_lps.accepted[i]);
          batch_ref.rejected.push_back(ref_lps.rejected[i]);
          report.tokens_consumed += 2 * batch.back().query.size() +
                                    batch.back().accepted.size() +
                                    batch.back().rejected.size();
        }
        loss_node = dpo_loss_node(tape, bp, batch, batch_ref, cfg.beta);
      }

      const double loss = tape.scalar(loss_node);
      if (!std::isfinite(loss)) {
        throw TrainError("train: non-finite loss at step " + std::to_string(global_step),
                         global_step, static_cast<int>(batch_idx.front()));
      }
      if (loss > cfg.divergence_threshold) {
        throw TrainError("train: diverged (loss " + std::to_string(loss) +
                             ") at step " + std::to_string(global_step),
                         global_step, static_cast<int>(batch_idx.front()));
      }

      tape.backward(loss_node);
      GradMap grads = collect_grads(tape, bp, params);
      clip_global_norm(grads, cfg.clip_norm);
      optimizer_step(params, grads, adam, cfg.learning_rate);
      trace.losses.push_back(loss);
    }
    report.stages.push_back(std::move(trace));
  }

  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start)
          .count();
  return report;
}

}  // namespace ftlab
