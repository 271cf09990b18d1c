#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ftlab/model.hpp"
#include "ftlab/preference.hpp"
#include "ftlab/tasks.hpp"

namespace ftlab {

struct LoraTrainConfig {
  int rank = 8;
  double alpha = 16.0;
};

enum class StageKind { kSft, kDpo };

/// One curriculum stage. SFT stages train on `data`. DPO stages use `pairs`
/// when provided, otherwise call `pair_builder` on the current params at stage
/// entry (fresh negatives per round). A DPO stage always re-snapshots its
/// reference from the current params.
struct TrainStage {
  StageKind kind = StageKind::kSft;
  const Dataset* data = nullptr;
  const std::vector<PreferenceSample>* pairs = nullptr;
  std::function<std::vector<PreferenceSample>(const PolicyParams&)> pair_builder;
  int steps = 0;
};

struct TrainConfig {
  double learning_rate = 1e-3;  // paper-scale 5e-5 is accepted config input
  std::string schedule = "constant";
  int batch_size = 16;
  double beta = 1.0;  // DPO temperature
  std::optional<LoraTrainConfig> lora;
  double clip_norm = 1.0;
  double divergence_threshold = 1e6;
  std::uint64_t seed = 0;
  std::vector<TrainStage> curriculum;

  void validate() const;
};

struct StageTrace {
  StageKind kind = StageKind::kSft;
  std::vector<double> losses;
  bool skipped_empty = false;  // DPO stage with zero pairs
};

struct TrainReport {
  std::vector<StageTrace> stages;
  double wall_clock_seconds = 0.0;
  std::size_t tokens_consumed = 0;

  std::vector<double> flat_losses() const;
};

/// Mean over the batch of -ln pi(answer | query).
double sft_loss(const PolicyParams& params, const std::vector<Sample>& batch);

/// Mean over the batch of -ln sigmoid(beta * (accepted log-ratio - rejected
/// log-ratio)) against the frozen reference.
double dpo_loss(const PolicyParams& params, const PolicyParams& ref,
                const std::vector<PreferenceSample>& batch, double beta);

/// Gradient congruent to the trainable tensors (adapter factors in adapter
/// mode, all base tensors otherwise).
using GradMap = std::vector<std::pair<std::string, Matrix>>;

struct LossGrad {
  double loss = 0.0;
  GradMap grads;
};

LossGrad grad_sft(const PolicyParams& params, const std::vector<Sample>& batch);
LossGrad grad_dpo(const PolicyParams& params, const PolicyParams& ref,
                  const std::vector<PreferenceSample>& batch, double beta);

/// Gradient of an arbitrary tape-built scalar loss of the policy.
LossGrad grad_of(const PolicyParams& params,
                 const std::function<Var(GradTape&, const BoundParams&)>& builder);

/// Adam moments, congruent to the trainable tensor list.
struct AdamState {
  int t = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

/// One Adam update (beta1 0.9, beta2 0.999, eps 1e-8) on the trainable
/// tensors only; frozen entries are untouched.
void optimizer_step(PolicyParams& params, const GradMap& grads, AdamState& state,
                    double lr);

/// Runs the curriculum in order with the constant-rate schedule, mutating
/// `params`. Throws TrainError on divergence or non-finite loss.
TrainReport train(PolicyParams& params, const TrainConfig& cfg);

}  // namespace ftlab
