#include "ftlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>

#include "json.hpp"

#include "ftlab/errors.hpp"
#include "ftlab/rng.hpp"

namespace ftlab {

namespace {

constexpr double kMaskValue = -1e9;
constexpr double kInitSd = 0.08;

Matrix causal_mask(int t) {
  Matrix m(t, t);
  for (int i = 0; i < t; ++i)
    for (int j = i + 1; j < t; ++j) m.at(i, j) = kMaskValue;
  return m;
}

std::vector<std::string> lora_target_names(const ModelConfig& cfg) {
  std::vector<std::string> names;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    for (const char* w : {"wq", "wk", "wv", "wo", "w1", "w2"}) names.push_back(p + w);
  }
  names.push_back("w_out");
  return names;
}

template <typename P, typename M>
void visit_tensors(P& p, const std::function<void(const std::string&, M*)>& fn) {
  fn("tok_embed", &p.tok_embed);
  fn("pos_embed", &p.pos_embed);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    auto& lay = p.layers[l];
    fn(pre + "attn_norm_gain", &lay.attn_norm_gain);
    fn(pre + "wq", &lay.wq);
    fn(pre + "wk", &lay.wk);
    fn(pre + "wv", &lay.wv);
    fn(pre + "wo", &lay.wo);
    fn(pre + "ffn_norm_gain", &lay.ffn_norm_gain);
    fn(pre + "w1", &lay.w1);
    fn(pre + "b1", &lay.b1);
    fn(pre + "w2", &lay.w2);
    fn(pre + "b2", &lay.b2);
  }
  fn("final_norm_gain", &p.final_norm_gain);
  fn("w_out", &p.w_out);
  fn("b_out", &p.b_out);
  if (p.lora) {
    for (auto& [name, f] : p.lora->factors) {
      fn(name + ".lora_a", &f.a);
      fn(name + ".lora_b", &f.b);
    }
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ShapeError("ModelConfig: vocab_size must cover PAD and END");
  if (context_len < 2 || d_model < 1 || n_heads < 1 || n_layers < 1) {
    throw ShapeError("ModelConfig: all dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ShapeError("ModelConfig: d_model " + std::to_string(d_model) +
                     " not divisible by n_heads " + std::to_string(n_heads));
  }
}

PolicyParams PolicyParams::init(const ModelConfig& cfg) {
  cfg.validate();
  PolicyParams p = zero_init(cfg);
  Rng rng(derive_seed(cfg.seed, 0x6d6f64656cULL));
  auto fill = [&](Matrix& m) {
    for (auto& x : m.data) x = rng.normal(0.0, kInitSd);
  };
  fill(p.tok_embed);
  fill(p.pos_embed);
  for (auto& lay : p.layers) {
    fill(lay.wq);
    fill(lay.wk);
    fill(lay.wv);
    fill(lay.wo);
    fill(lay.w1);
    fill(lay.w2);
    lay.attn_norm_gain = Matrix::full(1, cfg.d_model, 1.0);
    lay.ffn_norm_gain = Matrix::full(1, cfg.d_model, 1.0);
  }
  fill(p.w_out);
  p.final_norm_gain = Matrix::full(1, cfg.d_model, 1.0);
  return p;
}

PolicyParams PolicyParams::zero_init(const ModelConfig& cfg) {
  cfg.validate();
  PolicyParams p;
  p.config = cfg;
  const int d = cfg.d_model;
  p.tok_embed = Matrix(cfg.vocab_size, d);
  p.pos_embed = Matrix(cfg.context_len, d);
  p.layers.resize(cfg.n_layers);
  for (auto& lay : p.layers) {
    lay.attn_norm_gain = Matrix(1, d);
    lay.wq = Matrix(d, d);
    lay.wk = Matrix(d, d);
    lay.wv = Matrix(d, d);
    lay.wo = Matrix(d, d);
    lay.ffn_norm_gain = Matrix(1, d);
    lay.w1 = Matrix(d, 4 * d);
    lay.b1 = Matrix(1, 4 * d);
    lay.w2 = Matrix(4 * d, d);
    lay.b2 = Matrix(1, d);
  }
  p.final_norm_gain = Matrix(1, d);
  p.w_out = Matrix(d, cfg.vocab_size);
  p.b_out = Matrix(1, cfg.vocab_size);
  return p;
}

void PolicyParams::attach_lora(int rank, double alpha, std::uint64_t seed) {
  if (role == ParamRole::kReferenceFrozen) {
    throw ShapeError("attach_lora: reference params are frozen");
  }
  if (rank < 1 || alpha <= 0.0) throw ShapeError("attach_lora: rank/alpha invalid");
  LoraSet set;
  set.rank = rank;
  set.alpha = alpha;
  Rng rng(derive_seed(seed, 0x6c6f7261ULL));
  auto shapes = named_tensors(*this);
  for (const auto& name : lora_target_names(config)) {
    const Matrix* w = nullptr;
    for (auto& [n, m] : shapes) {
      if (n == name) w = m;
    }
    LoraFactors f;
    f.a = Matrix::randn(w->rows, rank, kInitSd, rng);
    f.b = Matrix(rank, w->cols);  // zeros: adapted model starts equal to base
    set.factors.emplace(name, std::move(f));
  }
  lora = std::move(set);
}

void PolicyParams::merge_lora() {
  if (!lora) return;
  const double s = lora->scale();
  auto tensors = named_tensors(*this);
  for (auto& [name, f] : lora->factors) {
    for (auto& [n, m] : tensors) {
      if (n == name) {
        Matrix delta = matmul(f.a, f.b);
        axpy(*m, s, delta);
      }
    }
  }
  lora.reset();
}

PolicyParams snapshot_reference(const PolicyParams& params) {
  PolicyParams copy = params;
  copy.role = ParamRole::kReferenceFrozen;
  return copy;
}

std::uint64_t params_hash(const PolicyParams& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  mix(static_cast<std::uint64_t>(params.config.vocab_size));
  mix(static_cast<std::uint64_t>(params.config.context_len));
  mix(static_cast<std::uint64_t>(params.config.d_model));
  mix(static_cast<std::uint64_t>(params.config.n_heads));
  mix(static_cast<std::uint64_t>(params.config.n_layers));
  mix(params.role == ParamRole::kReferenceFrozen ? 1 : 0);
  for (const auto& [name, m] : named_tensors(params)) {
    for (char c : name) mix(static_cast<std::uint64_t>(c));
    for (double x : m->data) {
      std::uint64_t bits;
      std::memcpy(&bits, &x, sizeof bits);
      mix(bits);
    }
  }
  return h;
}

std::vector<std::pair<std::string, Matrix*>> named_tensors(PolicyParams& params) {
  std::vector<std::pair<std::string, Matrix*>> out;
  visit_tensors<PolicyParams, Matrix>(
      params, [&](const std::string& n, Matrix* m) { out.emplace_back(n, m); });
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> named_tensors(
    const PolicyParams& params) {
  std::vector<std::pair<std::string, const Matrix*>> out;
  visit_tensors<const PolicyParams, const Matrix>(
      params, [&](const std::string& n, const Matrix* m) { out.emplace_back(n, m); });
  return out;
}

std::vector<std::pair<std::string, Matrix*>> trainable_tensors(PolicyParams& params) {
  std::vector<std::pair<std::string, Matrix*>> out;
  if (params.adapter_mode()) {
    for (auto& [name, f] : params.lora->factors) {
      out.emplace_back(name + ".lora_a", &f.a);
      out.emplace_back(name + ".lora_b", &f.b);
    }
    return out;
  }
  for (auto& [name, m] : named_tensors(params)) out.emplace_back(name, m);
  return out;
}

std::vector<std::string> trainable_names(const PolicyParams& params) {
  std::vector<std::string> out;
  if (params.adapter_mode()) {
    for (const auto& [name, f] : params.lora->factors) {
      out.push_back(name + ".lora_a");
      out.push_back(name + ".lora_b");
    }
    return out;
  }
  for (const auto& [name, m] : named_tensors(params)) out.push_back(name);
  return out;
}

// --- differentiable forward -------------------------------------------------

BoundParams bind_params(GradTape& tape, const PolicyParams& params, bool train) {
  const bool adapter = params.adapter_mode();
  const bool base_grad = train && !adapter;
  const bool lora_grad = train && adapter;

  BoundParams bp;
  bp.cfg = &params.config;
  bp.lora_scale = adapter ? params.lora->scale() : 0.0;
  auto bind = [&](const std::string& name, const Matrix& m, bool grad) {
    const Var v = tape.leaf(m, grad);
    bp.by_name.emplace(name, v);
    return v;
  };
  bp.tok_embed = bind("tok_embed", params.tok_embed, base_grad);
  bp.pos_embed = bind("pos_embed", params.pos_embed, base_grad);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& lay = params.layers[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    BoundParams::BoundLayer bl;
    bl.attn_norm_gain = bind(pre + "attn_norm_gain", lay.attn_norm_gain, base_grad);
    bl.wq = bind(pre + "wq", lay.wq, base_grad);
    bl.wk = bind(pre + "wk", lay.wk, base_grad);
    bl.wv = bind(pre + "wv", lay.wv, base_grad);
    bl.wo = bind(pre + "wo", lay.wo, base_grad);
    bl.ffn_norm_gain = bind(pre + "ffn_norm_gain", lay.ffn_norm_gain, base_grad);
    bl.w1 = bind(pre + "w1", lay.w1, base_grad);
    bl.b1 = bind(pre + "b1", lay.b1, base_grad);
    bl.w2 = bind(pre + "w2", lay.w2, base_grad);
    bl.b2 = bind(pre + "b2", lay.b2, base_grad);
    bp.layers.push_back(std::move(bl));
  }
  bp.final_norm_gain = bind("final_norm_gain", params.final_norm_gain, base_grad);
  bp.w_out = bind("w_out", params.w_out, base_grad);
  bp.b_out = bind("b_out", params.b_out, base_grad);

  if (adapter) {
    for (const auto& [name, f] : params.lora->factors) {
      const Var a = bind(name + ".lora_a", f.a, lora_grad);
      const Var b = bind(name + ".lora_b", f.b, lora_grad);
      const auto dot = name.find('.');
      if (dot == std::string::npos) {
        bp.head_lora.emplace(name, std::make_pair(a, b));
      } else {
        const int l = std::stoi(name.substr(5, dot - 5));
        bp.layers[l].lora.emplace(name.substr(dot + 1), std::make_pair(a, b));
      }
    }
  }
  return bp;
}

namespace {

Var linear(GradTape& tape, Var x, Var w,
           const std::map<std::string, std::pair<Var, Var>>& lora,
           const std::string& key, double scale) {
  Var y = tape.matmul(x, w);
  auto it = lora.find(key);
  if (it != lora.end()) {
    Var delta = tape.matmul(tape.matmul(x, it->second.first), it->second.second);
    y = tape.add(y, tape.affine(delta, scale, 0.0));
  }
  return y;
}

}  // namespace

Var forward_logits_node(GradTape& tape, const BoundParams& bp, const TokenSeq& tokens) {
  const ModelConfig& cfg = *bp.cfg;
  const int t = static_cast<int>(tokens.size());
  if (t == 0) throw ShapeError("forward: empty token sequence");
  if (t > cfg.context_len) {
    throw ShapeError("forward: sequence length " + std::to_string(t) +
                     " exceeds context " + std::to_string(cfg.context_len));
  }
  for (Token tok : tokens) {
    if (tok < 0 || tok >= cfg.vocab_size) {
      throw ShapeError("forward: token " + std::to_string(tok) + " outside vocab");
    }
  }

  std::vector<int> pos(tokens.size());
  for (int i = 0; i < t; ++i) pos[i] = i;
  Var x = tape.add(tape.gather_rows(bp.tok_embed, tokens),
                   tape.gather_rows(bp.pos_embed, pos));

  const int dh = cfg.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  const Matrix mask = causal_mask(t);

  for (const auto& bl : bp.layers) {
    Var h = tape.rms_norm(x, bl.attn_norm_gain);
    Var q = linear(tape, h, bl.wq, bl.lora, "wq", bp.lora_scale);
    Var k = linear(tape, h, bl.wk, bl.lora, "wk", bp.lora_scale);
    Var v = linear(tape, h, bl.wv, bl.lora, "wv", bp.lora_scale);

    std::vector<Var> heads;
    for (int hd = 0; hd < cfg.n_heads; ++hd) {
      Var qh = tape.slice_cols(q, hd * dh, dh);
      Var kh = tape.slice_cols(k, hd * dh, dh);
      Var vh = tape.slice_cols(v, hd * dh, dh);
      Var scores = tape.add_const(tape.affine(tape.matmul_nt(qh, kh), inv_sqrt_dh, 0.0),
                                  mask);
      heads.push_back(tape.matmul(tape.row_softmax(scores), vh));
    }
    Var ctx = cfg.n_heads == 1 ? heads[0] : tape.concat_cols(heads);
    x = tape.add(x, linear(tape, ctx, bl.wo, bl.lora, "wo", bp.lora_scale));

    Var h2 = tape.rms_norm(x, bl.ffn_norm_gain);
    Var f = tape.gelu(
        tape.add_row(linear(tape, h2, bl.w1, bl.lora, "w1", bp.lora_scale), bl.b1));
    Var out = tape.add_row(linear(tape, f, bl.w2, bl.lora, "w2", bp.lora_scale), bl.b2);
    x = tape.add(x, out);
  }

  Var h = tape.rms_norm(x, bp.final_norm_gain);
  return tape.add_row(linear(tape, h, bp.w_out, bp.head_lora, "w_out", bp.lora_scale),
                      bp.b_out);
}

Var logprob_answer_node(GradTape& tape, const BoundParams& bp, const TokenSeq& query,
                        const TokenSeq& answer) {
  const ModelConfig& cfg = *bp.cfg;
  const int q = static_cast<int>(query.size());
  const int a = static_cast<int>(answer.size());
  if (q < 1) throw ShapeError("logprob_answer: query must be nonempty");
  if (q + a + 1 > cfg.context_len) {
    throw ShapeError("logprob_answer: query " + std::to_string(q) + " + answer " +
                     std::to_string(a) + " + END exceeds context " +
                     std::to_string(cfg.context_len));
  }

  TokenSeq input = query;
  input.insert(input.end(), answer.begin(), answer.end());
  Var logits = forward_logits_node(tape, bp, input);
  Var logp = tape.row_log_softmax(logits);

  // Position q-1+i predicts answer[i]; the last input position predicts END.
  std::vector<std::pair<int, int>> cells;
  for (int i = 0; i < a; ++i) cells.emplace_back(q - 1 + i, answer[i]);
  cells.emplace_back(q + a - 1, kEndToken);
  return tape.select_sum(logp, std::move(cells));
}

double logprob_answer(const PolicyParams& params, const TokenSeq& query,
                      const TokenSeq& answer) {
  GradTape tape;
  BoundParams bp = bind_params(tape, params, false);
  return tape.scalar(logprob_answer_node(tape, bp, query, answer));
}

// --- inference --------------------------------------------------------------

namespace {

Matrix slice_cols_copy(const Matrix& m, int start, int len) {
  Matrix out(m.rows, len);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < len; ++j) out.at(i, j) = m.at(i, start + j);
  return out;
}

void add_row_inplace(Matrix& m, const Matrix& row) {
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) m.at(i, j) += row.at(0, j);
}

}  // namespace

Evaluator::Evaluator(const PolicyParams& params) {
  PolicyParams folded = params;
  folded.merge_lora();
  cfg_ = folded.config;
  tok_embed_ = std::move(folded.tok_embed);
  pos_embed_ = std::move(folded.pos_embed);
  layers_ = std::move(folded.layers);
  final_norm_gain_ = std::move(folded.final_norm_gain);
  w_out_ = std::move(folded.w_out);
  b_out_ = std::move(folded.b_out);
}

Matrix Evaluator::trunk(const TokenSeq& tokens) const {
  const int t = static_cast<int>(tokens.size());
  if (t == 0) throw ShapeError("forward: empty token sequence");
  if (t > cfg_.context_len) {
    throw ShapeError("forward: sequence length " + std::to_string(t) +
                     " exceeds context " + std::to_string(cfg_.context_len));
  }
  const int d = cfg_.d_model;
  Matrix x(t, d);
  for (int i = 0; i < t; ++i) {
    const Token tok = tokens[i];
    if (tok < 0 || tok >= cfg_.vocab_size) {
      throw ShapeError("forward: token " + std::to_string(tok) + " outside vocab");
    }
    for (int j = 0; j < d; ++j)
      x.at(i, j) = tok_embed_.at(tok, j) + pos_embed_.at(i, j);
  }

  const int dh = cfg_.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  const Matrix mask = causal_mask(t);

  for (const auto& lay : layers_) {
    Matrix h = rms_norm_rows(x, lay.attn_norm_gain);
    Matrix q = matmul(h, lay.wq);
    Matrix k = matmul(h, lay.wk);
    Matrix v = matmul(h, lay.wv);

    Matrix ctx(t, d);
    for (int hd = 0; hd < cfg_.n_heads; ++hd) {
      Matrix qh = slice_cols_copy(q, hd * dh, dh);
      Matrix kh = slice_cols_copy(k, hd * dh, dh);
      Matrix vh = slice_cols_copy(v, hd * dh, dh);
      Matrix scores(t, t);
      matmul_nt_acc(scores, qh, kh);
      for (std::size_t i = 0; i < scores.data.size(); ++i)
        scores.data[i] = scores.data[i] * inv_sqrt_dh + mask.data[i];
      Matrix probs = softmax_rows(scores);
      Matrix ctx_h = matmul(probs, vh);
      for (int i = 0; i < t; ++i)
        for (int j = 0; j < dh; ++j) ctx.at(i, hd * dh + j) = ctx_h.at(i, j);
    }
    add_inplace(x, matmul(ctx, lay.wo));

    Matrix h2 = rms_norm_rows(x, lay.ffn_norm_gain);
    Matrix f = matmul(h2, lay.w1);
    add_row_inplace(f, lay.b1);
    for (auto& e : f.data) e = gelu_value(e);
    Matrix out = matmul(f, lay.w2);
    add_row_inplace(out, lay.b2);
    add_inplace(x, out);
  }
  return rms_norm_rows(x, final_norm_gain_);
}

Matrix Evaluator::logits(const TokenSeq& tokens) const {
  Matrix h = trunk(tokens);
  Matrix l = matmul(h, w_out_);
  add_row_inplace(l, b_out_);
  return l;
}

Matrix Evaluator::last_logits(const TokenSeq& tokens) const {
  Matrix h = trunk(tokens);
  Matrix last(1, h.cols);
  for (int j = 0; j < h.cols; ++j) last.at(0, j) = h.at(h.rows - 1, j);
  Matrix l = matmul(last, w_out_);
  add_row_inplace(l, b_out_);
  return l;
}

// --- sampling ----------------------------------------------------------------

void SamplerConfig::validate() const {
  if (temperature < 0.0) throw ShapeError("sampler: temperature must be >= 0");
  if (top_k && top_p) throw ShapeError("sampler: at most one of top_k/top_p");
  if (top_k && *top_k < 1) throw ShapeError("sampler: top_k must be >= 1");
  if (top_p && (*top_p <= 0.0 || *top_p > 1.0)) {
    throw ShapeError("sampler: top_p must be in (0, 1]");
  }
  if (repetition_penalty < 1.0) throw ShapeError("sampler: repetition_penalty >= 1");
  if (max_new_tokens < 1) throw ShapeError("sampler: max_new_tokens must be >= 1");
}

Token sample_token(const Matrix& logits, const TokenSeq& emitted,
                   const SamplerConfig& cfg, Rng& rng) {
  std::vector<double> l(logits.data);

  if (cfg.repetition_penalty != 1.0) {
    for (Token tok : emitted) {
      double& v = l[tok];
      v = v > 0.0 ? v / cfg.repetition_penalty : v * cfg.repetition_penalty;
    }
  }

  if (cfg.temperature == 0.0) {
    return static_cast<Token>(std::max_element(l.begin(), l.end()) - l.begin());
  }
  for (auto& v : l) v /= cfg.temperature;

  // Candidates ordered by (logit desc, id asc); ties resolve deterministically.
  std::vector<int> order(l.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return l[a] > l[b]; });

  std::size_t keep = order.size();
  if (cfg.top_k) keep = std::min<std::size_t>(keep, static_cast<std::size_t>(*cfg.top_k));

  const double mx = l[order[0]];
  std::vector<double> probs(order.size());
  double z = 0.0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    probs[i] = std::exp(l[order[i]] - mx);
    z += probs[i];
  }
  for (auto& p : probs) p /= z;

  if (cfg.top_p) {
    double cum = 0.0;
    std::size_t count = 0;
    while (count < probs.size()) {
      cum += probs[count];
      ++count;
      if (cum >= *cfg.top_p) break;
    }
    keep = std::min(keep, count);
  }

  double kept_mass = 0.0;
  for (std::size_t i = 0; i < keep; ++i) kept_mass += probs[i];
  const double u = rng.uniform() * kept_mass;
  double cum = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    cum += probs[i];
    if (u < cum) return order[i];
  }
  return order[keep - 1];
}

Generation generate(const Evaluator& eval, const TokenSeq& query,
                    const SamplerConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const ModelConfig& mc = eval.config();
  if (query.empty()) throw ShapeError("generate: query must be nonempty");
  if (static_cast<int>(query.size()) >= mc.context_len) {
    throw ShapeError("generate: query of " + std::to_string(query.size()) +
                     " tokens leaves no room in context " +
                     std::to_string(mc.context_len));
  }

  Rng rng(derive_seed(seed, 0x67656eULL));
  TokenSeq current = query;
  Generation gen;
  for (int step = 0; step < cfg.max_new_tokens; ++step) {
    const Matrix logits = eval.last_logits(current);
    const Token tok = sample_token(logits, gen.tokens, cfg, rng);
    if (tok == kEndToken) return gen;
    gen.tokens.push_back(tok);
    current.push_back(tok);
    if (static_cast<int>(current.size()) >= mc.context_len) break;
  }
  gen.truncated = true;
  return gen;
}

Generation generate(const PolicyParams& params, const TokenSeq& query,
                    const SamplerConfig& cfg, std::uint64_t seed) {
  return generate(Evaluator(params), query, cfg, seed);
}

// --- checkpoint container ---------------------------------------------------

namespace {
constexpr char kMagic[4] = {'F', 'T', 'L', 'B'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
}  // namespace

void save_checkpoint(const PolicyParams& params, const std::string& path) {
  nlohmann::json header;
  header["config"] = {{"vocab_size", params.config.vocab_size},
                      {"context_len", params.config.context_len},
                      {"d_model", params.config.d_model},
                      {"n_heads", params.config.n_heads},
                      {"n_layers", params.config.n_layers},
                      {"seed", params.config.seed}};
  header["role"] =
      params.role == ParamRole::kReferenceFrozen ? "reference_frozen" : "trainable";
  if (params.lora) {
    header["lora"] = {{"rank", params.lora->rank}, {"alpha", params.lora->alpha}};
  } else {
    header["lora"] = nullptr;
  }
  auto tensors = named_tensors(params);
  nlohmann::json table = nlohmann::json::array();
  for (const auto& [name, m] : tensors) {
    table.push_back({{"name", name}, {"rows", m->rows}, {"cols", m->cols}});
  }
  header["tensors"] = std::move(table);

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  const std::string hs = header.dump();
  write_u32(os, static_cast<std::uint32_t>(hs.size()));
  os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, m] : tensors) {
    os.write(reinterpret_cast<const char*>(m->data.data()),
             static_cast<std::streamsize>(m->data.size() * sizeof(double)));
  }
  if (!os) throw IoError("short write on checkpoint: " + path);
}

PolicyParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("not an ftlab checkpoint: " + path);
  }
  const std::uint32_t version = read_u32(is);
  if (version != kVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t hlen = read_u32(is);
  std::string hs(hlen, '\0');
  is.read(hs.data(), hlen);
  if (!is) throw IoError("truncated checkpoint header: " + path);
  const nlohmann::json header = nlohmann::json::parse(hs);

  ModelConfig cfg;
  const auto& jc = header.at("config");
  cfg.vocab_size = jc.at("vocab_size").get<int>();
  cfg.context_len = jc.at("context_len").get<int>();
  cfg.d_model = jc.at("d_model").get<int>();
  cfg.n_heads = jc.at("n_heads").get<int>();
  cfg.n_layers = jc.at("n_layers").get<int>();
  cfg.seed = jc.at("seed").get<std::uint64_t>();

  PolicyParams params = PolicyParams::zero_init(cfg);
  params.role = header.at("role").get<std::string>() == "reference_frozen"
                    ? ParamRole::kReferenceFrozen
                    : ParamRole::kTrainable;
  if (!header.at("lora").is_null()) {
    LoraSet set;
    set.rank = header["lora"].at("rank").get<int>();
    set.alpha = header["lora"].at("alpha").get<double>();
    for (const auto& name : lora_target_names(cfg)) {
      set.factors.emplace(name, LoraFactors{});
    }
    params.lora = std::move(set);
  }

  auto tensors = named_tensors(params);
  std::size_t idx = 0;
  for (const auto& jt : header.at("tensors")) {
    if (idx >= tensors.size()) throw IoError("checkpoint tensor table too long");
    auto& [name, m] = tensors[idx];
    if (jt.at("name").get<std::string>() != name) {
      throw IoError("checkpoint tensor order mismatch at " + name);
    }
    const int rows = jt.at("rows").get<int>();
    const int cols = jt.at("cols").get<int>();
    *m = Matrix(rows, cols);
    is.read(reinterpret_cast<char*>(m->data.data()),
            static_cast<std::streamsize>(m->data.size() * sizeof(double)));
    if (!is) throw IoError("truncated checkpoint tensor " + name);
    ++idx;
  }
  if (idx != tensors.size()) throw IoError("checkpoint tensor table too short");
  return params;
}

}  // namespace ftlab
