#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ftlab/matrix.hpp"
#include "ftlab/tape.hpp"

namespace ftlab {

using Token = int;
using TokenSeq = std::vector<Token>;

/// Reserved vocabulary slots. Every task vocabulary builds on top of these.
constexpr Token kPadToken = 0;
constexpr Token kEndToken = 1;

struct ModelConfig {
  int vocab_size = 64;
  int context_len = 128;
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 2;
  std::uint64_t seed = 0;

  int head_dim() const { return d_model / n_heads; }
  void validate() const;
};

struct LayerParams {
  Matrix attn_norm_gain;  // 1 x d
  Matrix wq, wk, wv, wo;  // d x d
  Matrix ffn_norm_gain;   // 1 x d
  Matrix w1;              // d x 4d
  Matrix b1;              // 1 x 4d
  Matrix w2;              // 4d x d
  Matrix b2;              // 1 x d
};

/// Low-rank factors for one linear layer: base + (alpha/rank) * a * b.
struct LoraFactors {
  Matrix a;  // in x rank
  Matrix b;  // rank x out, zero-initialized so the adapted model equals the base
};

struct LoraSet {
  int rank = 8;
  double alpha = 16.0;
  std::map<std::string, LoraFactors> factors;  // keyed by linear-layer name
  double scale() const { return alpha / rank; }
};

enum class ParamRole { kTrainable, kReferenceFrozen };

/// All weights of the toy policy. When `lora` is present, training updates
/// only the adapter factors and the base tensors are frozen.
struct PolicyParams {
  ModelConfig config;
  ParamRole role = ParamRole::kTrainable;
  Matrix tok_embed;  // V x d
  Matrix pos_embed;  // C x d
  std::vector<LayerParams> layers;
  Matrix final_norm_gain;  // 1 x d
  Matrix w_out;            // d x V
  Matrix b_out;            // 1 x V
  std::optional<LoraSet> lora;

  /// Seeded gaussian init (weights), ones (norm gains), zeros (biases).
  static PolicyParams init(const ModelConfig& cfg);
  /// All-zero weights: every position emits exactly uniform logits.
  static PolicyParams zero_init(const ModelConfig& cfg);

  void attach_lora(int rank, double alpha, std::uint64_t seed);
  /// Folds adapters into the base weights (w += scale * a * b) and drops them.
  void merge_lora();

  bool adapter_mode() const { return lora.has_value(); }
};

/// Deep immutable copy tagged as the frozen reference policy.
PolicyParams snapshot_reference(const PolicyParams& params);

/// Content hash over config, role and every tensor bit pattern.
std::uint64_t params_hash(const PolicyParams& params);

/// Stable (name, tensor) enumeration: "tok_embed", "layer0.wq", "w_out", ...
/// Adapter factors appear as "<linear>.lora_a" / "<linear>.lora_b".
std::vector<std::pair<std::string, Matrix*>> named_tensors(PolicyParams& params);
std::vector<std::pair<std::string, const Matrix*>> named_tensors(const PolicyParams& params);

/// The tensors a training step may update: adapter factors in adapter mode,
/// every base tensor otherwise.
std::vector<std::pair<std::string, Matrix*>> trainable_tensors(PolicyParams& params);
std::vector<std::string> trainable_names(const PolicyParams& params);

// --- differentiable forward -------------------------------------------------

/// Tape handles for one forward pass.
struct BoundParams {
  const ModelConfig* cfg = nullptr;
  double lora_scale = 0.0;
  Var tok_embed, pos_embed;
  struct BoundLayer {
    Var attn_norm_gain, wq, wk, wv, wo, ffn_norm_gain, w1, b1, w2, b2;
    std::map<std::string, std::pair<Var, Var>> lora;  // key: "wq", "w1", ...
  };
  std::vector<BoundLayer> layers;
  Var final_norm_gain, w_out, b_out;
  std::map<std::string, std::pair<Var, Var>> head_lora;  // key: "w_out"
  std::map<std::string, Var> by_name;                    // every bound tensor
};

/// Binds every tensor as a tape leaf. With `train` set, the trainable set
/// (per adapter_mode) requires gradients.
BoundParams bind_params(GradTape& tape, const PolicyParams& params, bool train);

/// Causal-logits node, one row per input position.
Var forward_logits_node(GradTape& tape, const BoundParams& bp, const TokenSeq& tokens);

/// ln pi(answer | query) as a differentiable 1x1 node. END is appended to the
/// answer internally; query tokens contribute no loss terms.
Var logprob_answer_node(GradTape& tape, const BoundParams& bp, const TokenSeq& query,
                        const TokenSeq& answer);

/// Value-only convenience wrapper.
double logprob_answer(const PolicyParams& params, const TokenSeq& query,
                      const TokenSeq& answer);

// --- inference --------------------------------------------------------------

/// Read-only forward pass with adapter factors folded in once. Use one
/// Evaluator per model for a batch of generations or evaluations.
class Evaluator {
 public:
  explicit Evaluator(const PolicyParams& params);

  const ModelConfig& config() const { return cfg_; }
  Matrix logits(const TokenSeq& tokens) const;       // T x V
  Matrix last_logits(const TokenSeq& tokens) const;  // 1 x V

 private:
  Matrix trunk(const TokenSeq& tokens) const;  // final-norm hidden states, T x d

  ModelConfig cfg_;
  Matrix tok_embed_, pos_embed_;
  std::vector<LayerParams> layers_;
  Matrix final_norm_gain_, w_out_, b_out_;
};

struct SamplerConfig {
  double temperature = 1.0;
  std::optional<int> top_k;
  std::optional<double> top_p;
  double repetition_penalty = 1.0;
  int max_new_tokens = 16;

  void validate() const;  // at most one of top_k / top_p may be set
};

struct Generation {
  TokenSeq tokens;         // END not included
  bool truncated = false;  // stopped by max_new_tokens instead of END
};

/// Seeded autoregressive sampling until END or max_new_tokens. The repetition
/// penalty divides positive (multiplies negative) logits of already-emitted
/// tokens before temperature scaling; temperature 0 is greedy argmax.
Generation generate(const Evaluator& eval, const TokenSeq& query,
                    const SamplerConfig& cfg, std::uint64_t seed);
Generation generate(const PolicyParams& params, const TokenSeq& query,
                    const SamplerConfig& cfg, std::uint64_t seed);

/// One sampling step on a 1 x V logits row; exposed for the sampler tests.
Token sample_token(const Matrix& logits, const TokenSeq& emitted,
                   const SamplerConfig& cfg, Rng& rng);

// --- checkpoint container ---------------------------------------------------

/// Versioned binary checkpoint; round-trips bit-exactly.
void save_checkpoint(const PolicyParams& params, const std::string& path);
PolicyParams load_checkpoint(const std::string& path);

}  // namespace ftlab
