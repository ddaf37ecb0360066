#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "ehrmamba/embedding.hpp"
#include "ehrmamba/error.hpp"
#include "ehrmamba/sequence.hpp"
#include "ehrmamba/ssm.hpp"
#include "ehrmamba/tensor.hpp"

namespace ehrmamba {

struct ModelConfig {
  std::size_t d = 64;
  std::size_t n_blocks = 2;
  std::size_t state_size = 16;
  std::size_t conv_width = 4;
  std::size_t context_length = 256;
  std::size_t vocab_size = 0;
  std::size_t time_width = 32;
  std::size_t expansion = 2;
  int max_visit_order = 64;
  double dropout = 0.1;
  bool use_position = false;
  std::uint64_t seed = 1;

  void validate() const {
    if (d == 0 || state_size == 0 || conv_width == 0 || context_length < 2 || expansion == 0) {
      throw ConfigError("model: dimensions must be positive");
    }
    if (vocab_size < static_cast<std::size_t>(tokens::kSpecialCount)) {
      throw ConfigError("model: vocab_size must cover the " + std::to_string(tokens::kSpecialCount) + " special tokens");
    }
    if (time_width < 2) throw ConfigError("model: time_width must be at least 2");
    if (max_visit_order < 1) throw ConfigError("model: max_visit_order must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must lie in [0,1)");
  }

  std::size_t inner() const { return expansion * d; }
};

struct Model {
  ModelConfig config;
  EmbeddingTables tables;
  std::vector<MambaBlockWeights> blocks;
  Matrix head_norm;  // 1 x d
  Matrix head_out;   // d x v
  Matrix head_bias;  // 1 x v
  Matrix clf_weight; // d x 1, shared across every task
  Matrix clf_bias;   // 1 x 1
};

// Visits every parameter tensor in a fixed order with a stable name. Two
// models of the same config visit identically-shaped tensors in lockstep.
template <class M, class F>
void for_each_parameter(M& m, F&& f) {
  auto& t = m.tables;
  f(std::string("emb.concepts"), t.concepts);
  f(std::string("emb.type"), t.type);
  f(std::string("emb.segment"), t.segment);
  f(std::string("emb.visit_order"), t.visit_order);
  if (m.config.use_position) f(std::string("emb.position"), t.position);
  f(std::string("emb.age_omega"), t.age_t2v.omega);
  f(std::string("emb.age_phi"), t.age_t2v.phi);
  f(std::string("emb.age_proj"), t.age_proj);
  f(std::string("emb.time_omega"), t.time_t2v.omega);
  f(std::string("emb.time_phi"), t.time_t2v.phi);
  f(std::string("emb.time_proj"), t.time_proj);
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    auto& b = m.blocks[i];
    const std::string p = "block" + std::to_string(i) + ".";
    f(p + "norm", b.norm);
    f(p + "in_main", b.in_main);
    f(p + "in_gate", b.in_gate);
    f(p + "conv", b.conv);
    f(p + "x_proj", b.x_proj);
    f(p + "dt_proj", b.dt_proj);
    f(p + "dt_bias", b.dt_bias);
    f(p + "a_log", b.a_log);
    f(p + "out_proj", b.out_proj);
  }
  f(std::string("head.norm"), m.head_norm);
  f(std::string("head.out"), m.head_out);
  f(std::string("head.bias"), m.head_bias);
  f(std::string("clf.weight"), m.clf_weight);
  f(std::string("clf.bias"), m.clf_bias);
}

inline std::size_t parameter_count(const Model& m) {
  std::size_t n = 0;
  for_each_parameter(m, [&](const std::string&, const Matrix& x) { n += x.size(); });
  return n;
}

// Closed form of parameter_count for a config:
//   v*d + 9d + 3d + (V_max+1)*d [+ l_c*d] + 2*(2k + k*d)
//   + n_blocks * (d + 2*d*di + K*di + di*(R+2N) + R*di + di + di*N + di*d)
//   + d + d*v + v + d + 1
// with di = expansion*d and R = ceil(d/16).
inline std::size_t expected_parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d, v = c.vocab_size, k = c.time_width, di = c.inner(), N = c.state_size,
                    K = c.conv_width, R = dt_rank_for(d);
  std::size_t n = v * d + 9 * d + 3 * d + (static_cast<std::size_t>(c.max_visit_order) + 1) * d + 2 * (2 * k + k * d);
  if (c.use_position) n += c.context_length * d;
  n += c.n_blocks * (d + 2 * d * di + K * di + di * (R + 2 * N) + R * di + di + di * N + di * d);
  n += d + d * v + v + d + 1;
  return n;
}

inline Model init_model(const ModelConfig& cfg) {
  cfg.validate();
  Model m;
  m.config = cfg;
  Rng rng(derive_seed(cfg.seed, 0x6d6f64));
  m.tables = init_embedding_tables(cfg.vocab_size, cfg.d, cfg.time_width, cfg.max_visit_order, cfg.context_length,
                                   cfg.use_position, rng);
  for (std::size_t i = 0; i < cfg.n_blocks; ++i) {
    m.blocks.push_back(init_mamba_block(cfg.d, cfg.expansion, cfg.state_size, cfg.conv_width, rng));
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  m.head_norm = Matrix(1, cfg.d, 1.0);
  m.head_out = Matrix(cfg.d, cfg.vocab_size);
  fill_normal(m.head_out, rng, scale);
  m.head_bias = Matrix(1, cfg.vocab_size);
  m.clf_weight = Matrix(cfg.d, 1);
  fill_normal(m.clf_weight, rng, scale);
  m.clf_bias = Matrix(1, 1);
  return m;
}

// Model with every parameter set to zero; used as gradient and moment
// accumulators.
inline Model zeros_like(const Model& m) {
  Model z = m;
  for_each_parameter(z, [](const std::string&, Matrix& x) { x.fill(0.0); });
  return z;
}

// ---------------------------------------------------------------------------
// Dropout masks derive from (seed, step, sequence index, site) so train-mode
// forwards are reproducible and identical across evaluation paths.

enum class Mode { Train, Eval };

struct ForwardContext {
  Mode mode = Mode::Eval;
  std::uint64_t step = 0;
  std::uint64_t sequence = 0;
};

enum class DropoutSite : std::uint64_t { Embedding = 1, Classifier = 2 };

inline Matrix dropout_mask(const ModelConfig& cfg, const ForwardContext& ctx, DropoutSite site, std::size_t rows,
                           std::size_t cols) {
  Matrix mask(rows, cols, 1.0);
  if (ctx.mode != Mode::Train || cfg.dropout == 0.0) return mask;
  Rng rng(derive_seed(derive_seed(cfg.seed, 0x64726f70, ctx.step), static_cast<std::uint64_t>(site), ctx.sequence));
  const double keep = 1.0 / (1.0 - cfg.dropout);
  for (auto& v : mask.values()) v = uniform01(rng) < cfg.dropout ? 0.0 : keep;
  return mask;
}

// ---------------------------------------------------------------------------
// Reference forward (no tape). Instantiated with double for inference and
// with long double for finite-difference gradient checks.

template <class S>
BasicMatrix<S> hidden_states(const Model& m, const PatientSequence& seq, std::size_t rows,
                             const ForwardContext& ctx = {}) {
  if (seq.length() > m.config.context_length) {
    throw ShapeError("forward: sequence of length " + std::to_string(seq.length()) + " exceeds context length " +
                     std::to_string(m.config.context_length));
  }
  BasicMatrix<S> h = embed_prefix<S>(seq, m.tables, m.config.use_position, rows);
  if (ctx.mode == Mode::Train) {
    const Matrix mask = dropout_mask(m.config, ctx, DropoutSite::Embedding, rows, m.config.d);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] *= static_cast<S>(mask[i]);
  }
  for (const auto& b : m.blocks) h = mamba_block_forward(h, b);
  return h;
}

// Hidden states for a batch of sequences padded to l_c: b matrices of
// l_c x d.
inline std::vector<Matrix> forward(const Model& m, const std::vector<PatientSequence>& batch, Mode mode = Mode::Eval,
                                   std::uint64_t step = 0) {
  std::vector<Matrix> out;
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].length() != m.config.context_length) {
      throw ShapeError("forward: sequence " + std::to_string(i) + " has length " + std::to_string(batch[i].length()) +
                       ", expected " + std::to_string(m.config.context_length));
    }
    out.push_back(hidden_states<double>(m, batch[i], batch[i].length(), {mode, step, i}));
  }
  return out;
}

// Raw forecasting logits: (RMSNorm(H) * scale) W_out + bias.
template <class S>
BasicMatrix<S> forecast_logits(const Model& m, const BasicMatrix<S>& H) {
  BasicMatrix<S> logits = matmul(rms_norm(H, m.head_norm), m.head_out);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    for (std::size_t j = 0; j < logits.cols(); ++j) logits(i, j) += static_cast<S>(m.head_bias[j]);
  }
  return logits;
}

template <class S>
BasicMatrix<S> log_softmax_rows(const BasicMatrix<S>& x) {
  using std::exp;
  using std::log;
  BasicMatrix<S> out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    S mx = x(i, 0);
    for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, x(i, j));
    S sum = S(0);
    for (std::size_t j = 0; j < x.cols(); ++j) sum += exp(x(i, j) - mx);
    const S lse = mx + log(sum);
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) - lse;
  }
  return out;
}

template <class S>
BasicMatrix<S> forecast_log_probs(const Model& m, const BasicMatrix<S>& H) {
  return log_softmax_rows(forecast_logits(m, H));
}

// Next-token distribution for every row of H.
inline Matrix forecasting_head(const Model& m, const Matrix& H) {
  Matrix p = forecast_log_probs(m, H);
  for (auto& v : p.values()) v = std::exp(v);
  return p;
}

template <class S>
S clinical_logit(const Model& m, const BasicMatrix<S>& H, const PatientSequence& seq, const ForwardContext& ctx = {}) {
  if (seq.true_length == 0) throw DataError("prediction_head: empty sequence");
  const std::size_t last = seq.true_length - 1;
  if (last >= H.rows()) throw ShapeError("prediction_head: hidden states do not cover the last token");
  const Matrix mask = dropout_mask(m.config, ctx, DropoutSite::Classifier, 1, m.config.d);
  S z = static_cast<S>(m.clf_bias[0]);
  for (std::size_t j = 0; j < m.config.d; ++j) z += H(last, j) * static_cast<S>(mask[j]) * static_cast<S>(m.clf_weight[j]);
  return z;
}

// Probability from the shared clinical head, read at the last non-pad token.
template <class S = double>
S prediction_head(const Model& m, const BasicMatrix<S>& H, const PatientSequence& seq, const ForwardContext& ctx = {}) {
  return sigmoid(clinical_logit(m, H, seq, ctx));
}

// End-to-end eval-mode probability for a task-tokenized sequence.
inline double predict(const Model& m, const PatientSequence& seq) {
  if (seq.true_length == 0) throw DataError("predict: empty sequence");
  return prediction_head(m, hidden_states<double>(m, seq, seq.true_length), seq);
}

// Reference losses used by gradient checks; they mirror the taped versions.
inline constexpr double kProbClamp = 1e-12;

template <class S>
S bce_term(S p, int y) {
  using std::log;
  p = std::clamp(p, S(kProbClamp), S(1) - S(kProbClamp));
  return -(y == 1 ? log(p) : log(S(1) - p));
}

// ---------------------------------------------------------------------------
// Recurrent inference.

struct RecurrentState {
  std::vector<BlockState<double>> blocks;
  std::size_t position = 0;

  std::size_t bytes() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.bytes();
    return n;
  }
};

inline RecurrentState init_recurrent_state(const Model& m) {
  RecurrentState s;
  for (const auto& b : m.blocks) s.blocks.push_back(init_block_state<double>(b));
  return s;
}

// Feeds one embedded token through every block; returns its hidden state.
inline Matrix recurrent_step(const Model& m, RecurrentState& s, Matrix row) {
  for (std::size_t i = 0; i < m.blocks.size(); ++i) row = mamba_block_step(m.blocks[i], s.blocks[i], row);
  ++s.position;
  return row;
}

inline Matrix embed_token_row(const Model& m, const PatientSequence& seq, std::size_t i) {
  Matrix row(1, m.config.d);
  add_token_embedding<double>(m.tables, seq.ids[i], seq.types[i], seq.ages[i], seq.times[i], seq.segments[i],
                              seq.visit_orders[i], seq.positions[i], m.config.use_position, row.row(0));
  return row;
}

// Hidden states of the first `rows` tokens computed position by position.
inline Matrix recurrent_hidden_states(const Model& m, const PatientSequence& seq, std::size_t rows) {
  RecurrentState s = init_recurrent_state(m);
  Matrix H(rows, m.config.d);
  for (std::size_t i = 0; i < rows; ++i) {
    Matrix row = i < seq.true_length ? embed_token_row(m, seq, i) : Matrix(1, m.config.d);
    const Matrix h = recurrent_step(m, s, std::move(row));
    std::copy(h.data(), h.data() + h.size(), H.data() + i * m.config.d);
  }
  return H;
}

// ---------------------------------------------------------------------------
// Greedy forecasting.

enum class DecodeMode { Recurrent, Rerun };

namespace detail {

// Attribute rollout for decoded tokens: events inherit the latest event's
// age/time/segment/visit order; a decoded [VS] opens a new visit.
struct Rollout {
  double age = 0.0;
  double time = 0.0;
  int segment = 0;
  int visit_order = 0;
  bool new_visit = false;

  static Rollout from(const PatientSequence& seq) {
    Rollout r;
    for (std::size_t i = 0; i < seq.true_length; ++i) {
      if (is_event_type(seq.types[i])) {
        r.age = seq.ages[i];
        r.time = seq.times[i];
        r.segment = seq.segments[i];
        r.visit_order = seq.visit_orders[i];
        r.new_visit = false;
      } else if (seq.ids[i] == tokens::VS) {
        r.new_visit = true;
      }
    }
    return r;
  }

  void append(PatientSequence& seq, TokenId id, TokenType type) {
    const std::size_t j = seq.true_length;
    seq.ids[j] = id;
    seq.types[j] = type;
    seq.positions[j] = static_cast<int>(j);
    if (id == tokens::VS) new_visit = true;
    if (is_event_type(type)) {
      if (new_visit || visit_order == 0) {
        visit_order += 1;
        segment = segment == 1 ? 2 : 1;
        new_visit = false;
      }
      seq.ages[j] = age;
      seq.times[j] = time;
      seq.segments[j] = segment;
      seq.visit_orders[j] = visit_order;
    }
    seq.true_length = j + 1;
  }
};

inline TokenId argmax_no_pad(const Matrix& logits, std::size_t row) {
  TokenId best = 1;
  double best_v = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 1; j < logits.cols(); ++j) {
    if (logits(row, j) > best_v) {
      best_v = logits(row, j);
      best = static_cast<TokenId>(j);
    }
  }
  return best;
}

}  // namespace detail

inline TokenType decoded_type(const Vocabulary* vocab, TokenId id) {
  if (vocab) return vocab->type_of(id);
  return id < tokens::kSpecialCount ? Vocabulary::special_type(id) : TokenType::Procedure;
}

// Greedy decoding of n tokens after the sequence's true_length prefix.
// [PAD] is never emitted. Both modes produce identical tokens; Recurrent
// keeps an O(N)-per-block state, Rerun recomputes the whole prefix.
inline std::vector<TokenId> forecast_tokens(const Model& m, const PatientSequence& seq, std::size_t n,
                                            const Vocabulary* vocab = nullptr,
                                            DecodeMode mode = DecodeMode::Recurrent) {
  if (seq.true_length == 0) throw DataError("forecast_tokens: empty sequence");
  if (seq.true_length + n > seq.length() || seq.true_length + n > m.config.context_length) {
    throw ArgumentError("forecast_tokens: context overflow, " + std::to_string(seq.true_length) + " + " +
                        std::to_string(n) + " tokens exceed " + std::to_string(seq.length()));
  }
  std::vector<TokenId> out;
  if (n == 0) return out;
  PatientSequence work = seq;
  detail::Rollout rollout = detail::Rollout::from(seq);
  if (mode == DecodeMode::Recurrent) {
    RecurrentState s = init_recurrent_state(m);
    Matrix h;
    for (std::size_t i = 0; i < work.true_length; ++i) h = recurrent_step(m, s, embed_token_row(m, work, i));
    for (std::size_t k = 0; k < n; ++k) {
      const TokenId next = detail::argmax_no_pad(forecast_logits(m, h), 0);
      out.push_back(next);
      rollout.append(work, next, decoded_type(vocab, next));
      if (k + 1 < n) h = recurrent_step(m, s, embed_token_row(m, work, work.true_length - 1));
    }
  } else {
    for (std::size_t k = 0; k < n; ++k) {
      const Matrix H = hidden_states<double>(m, work, work.true_length);
      const Matrix logits = forecast_logits(m, H);
      const TokenId next = detail::argmax_no_pad(logits, logits.rows() - 1);
      out.push_back(next);
      rollout.append(work, next, decoded_type(vocab, next));
    }
  }
  return out;
}

}  // namespace ehrmamba
