#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ehrmamba/autodiff.hpp"
#include "ehrmamba/ehr_data.hpp"
#include "ehrmamba/error.hpp"
#include "ehrmamba/model.hpp"
#include "ehrmamba/sequence.hpp"

namespace ehrmamba {

// ---------------------------------------------------------------------------
// Losses on precomputed log-probabilities.

// Mean NLL of ids[j+1] under log_probs[j] over j < true_length - 1.
inline double ntp_loss(const std::vector<Matrix>& log_probs, const std::vector<PatientSequence>& batch) {
  if (log_probs.size() != batch.size()) throw ShapeError("ntp_loss: batch size mismatch");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& s = batch[b];
    for (std::size_t j = 0; j + 1 < s.true_length; ++j) {
      if (j >= log_probs[b].rows()) throw ShapeError("ntp_loss: log-probabilities shorter than sequence");
      sum -= log_probs[b](j, static_cast<std::size_t>(s.ids[j + 1]));
      ++count;
    }
  }
  if (count == 0) throw DataError("ntp_loss: no valid positions");
  return sum / static_cast<double>(count);
}

struct MlmSample {
  PatientSequence sequence;        // with [MASK] at masked positions
  std::vector<std::size_t> masked;  // ascending positions
};

// Replaces each event token independently with probability p.
inline MlmSample mlm_corrupt(const PatientSequence& seq, double p, Rng& rng) {
  if (!(p > 0.0 && p < 1.0)) throw ArgumentError("mlm_corrupt: mask probability must lie in (0,1)");
  MlmSample out{seq, {}};
  for (std::size_t j = 0; j < seq.true_length; ++j) {
    if (!is_event_type(seq.types[j])) continue;
    if (uniform01(rng) < p) {
      out.sequence.ids[j] = tokens::MASK;
      out.masked.push_back(j);
    }
  }
  return out;
}

// Mean NLL of the original ids at masked positions.
inline double mlm_loss(const std::vector<Matrix>& log_probs, const std::vector<PatientSequence>& originals,
                       const std::vector<std::vector<std::size_t>>& masked) {
  if (log_probs.size() != originals.size() || masked.size() != originals.size()) {
    throw ShapeError("mlm_loss: batch size mismatch");
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < originals.size(); ++b) {
    for (std::size_t j : masked[b]) {
      sum -= log_probs[b](j, static_cast<std::size_t>(originals[b].ids[j]));
      ++count;
    }
  }
  if (count == 0) throw DataError("mlm_loss: empty mask set");
  return sum / static_cast<double>(count);
}

inline void check_label(int y) {
  if (y != 0 && y != 1) throw DataError("label must be 0 or 1, got " + std::to_string(y));
}

inline double mpf_bce_loss(std::span<const double> yhat, std::span<const int> y) {
  if (yhat.size() != y.size()) throw ShapeError("mpf_bce_loss: length mismatch");
  if (yhat.empty()) throw DataError("mpf_bce_loss: empty batch");
  double sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    check_label(y[i]);
    sum += bce_term(yhat[i], y[i]);
  }
  return sum / static_cast<double>(y.size());
}

// ---------------------------------------------------------------------------
// Taped forward pass.

// Registers model parameters on a tape on first use, bound to the matching
// tensor of a same-shaped gradient model.
class ParameterBinder {
 public:
  ParameterBinder(Tape& tape, const Model& model, Model& grads) : tape_(tape) {
    std::vector<const Matrix*> params;
    for_each_parameter(model, [&](const std::string&, const Matrix& w) { params.push_back(&w); });
    std::size_t i = 0;
    for_each_parameter(grads, [&](const std::string&, Matrix& g) { sinks_.emplace(params.at(i++), &g); });
  }

  Tape::Var operator()(const Matrix& w) {
    auto it = vars_.find(&w);
    if (it != vars_.end()) return it->second;
    const Tape::Var v = tape_.param(w, *sinks_.at(&w));
    vars_.emplace(&w, v);
    return v;
  }

 private:
  Tape& tape_;
  std::unordered_map<const Matrix*, Matrix*> sinks_;
  std::unordered_map<const Matrix*, Tape::Var> vars_;
};

inline Tape::Var tape_embedding(Tape& tp, ParameterBinder& P, const Model& m, const PatientSequence& seq, std::size_t rows) {
  const EmbeddingTables& t = m.tables;
  std::vector<std::size_t> ids(rows), types(rows), segs(rows), orders(rows), pos(rows);
  std::vector<double> ages(rows), times(rows);
  std::vector<bool> active(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    if (seq.ids[i] < 0 || static_cast<std::size_t>(seq.ids[i]) >= t.vocab_size()) {
      throw ShapeError("embedding: token id " + std::to_string(seq.ids[i]) + " outside vocabulary");
    }
    ids[i] = static_cast<std::size_t>(seq.ids[i]);
    types[i] = static_cast<std::size_t>(seq.types[i]);
    active[i] = is_event_type(seq.types[i]);
    if (active[i] && (seq.segments[i] < 0 || seq.segments[i] > 2)) throw ShapeError("embedding: segment outside {0,1,2}");
    segs[i] = active[i] ? static_cast<std::size_t>(seq.segments[i]) : 0;
    orders[i] = active[i] ? clamp_visit_order(seq.visit_orders[i], t) : 0;
    ages[i] = seq.ages[i];
    times[i] = seq.times[i];
    pos[i] = static_cast<std::size_t>(std::max(seq.positions[i], 0));
  }
  Tape::Var e = tp.gather(P(t.concepts), ids, true);
  e = tp.add(e, tp.gather(P(t.type), types));
  e = tp.add(e, tp.matmul(tp.time2vec(P(t.age_t2v.omega), P(t.age_t2v.phi), ages, active), P(t.age_proj)));
  e = tp.add(e, tp.matmul(tp.time2vec(P(t.time_t2v.omega), P(t.time_t2v.phi), times, active), P(t.time_proj)));
  e = tp.add(e, tp.gather(P(t.segment), segs, true));
  e = tp.add(e, tp.gather(P(t.visit_order), orders, true));
  if (m.config.use_position) e = tp.add(e, tp.gather(P(t.position), pos));
  return e;
}

inline Tape::Var tape_block(Tape& tp, ParameterBinder& P, const MambaBlockWeights& w, Tape::Var h) {
  const std::size_t N = w.state(), R = w.rank();
  const Tape::Var xn = tp.rms_norm(h, P(w.norm));
  const Tape::Var main = tp.matmul(xn, P(w.in_main));
  const Tape::Var gate = tp.matmul(xn, P(w.in_gate));
  const Tape::Var u = tp.silu(tp.causal_conv(main, P(w.conv)));
  const Tape::Var dbc = tp.matmul(u, P(w.x_proj));
  const Tape::Var delta = tp.softplus(tp.add_row(tp.matmul(tp.columns(dbc, 0, R), P(w.dt_proj)), P(w.dt_bias)));
  const Tape::Var y = tp.selective_scan(u, delta, tp.columns(dbc, R, N), tp.columns(dbc, R + N, N), P(w.a_log));
  const Tape::Var z = tp.mul(y, tp.silu(gate));
  return tp.add(h, tp.matmul(z, P(w.out_proj)));
}

// Hidden states of the first `rows` tokens.
inline Tape::Var tape_hidden(Tape& tp, ParameterBinder& P, const Model& m, const PatientSequence& seq, std::size_t rows,
                             const ForwardContext& ctx) {
  if (rows == 0 || rows > seq.length()) throw ShapeError("forward: invalid prefix length");
  if (seq.length() > m.config.context_length) throw ShapeError("forward: sequence exceeds context length");
  Tape::Var h = tape_embedding(tp, P, m, seq, rows);
  if (ctx.mode == Mode::Train && m.config.dropout > 0.0) {
    h = tp.scale_by(h, dropout_mask(m.config, ctx, DropoutSite::Embedding, rows, m.config.d));
  }
  for (const auto& b : m.blocks) h = tape_block(tp, P, b, h);
  return h;
}

inline Tape::Var tape_log_probs(Tape& tp, ParameterBinder& P, const Model& m, Tape::Var h) {
  const Tape::Var logits = tp.add_row(tp.matmul(tp.rms_norm(h, P(m.head_norm)), P(m.head_out)), P(m.head_bias));
  return tp.log_softmax(logits);
}

inline Tape::Var tape_clinical_logit(Tape& tp, ParameterBinder& P, const Model& m, Tape::Var h, std::size_t last,
                                     const ForwardContext& ctx) {
  Tape::Var row = tp.slice_row(h, last);
  if (ctx.mode == Mode::Train && m.config.dropout > 0.0) {
    row = tp.scale_by(row, dropout_mask(m.config, ctx, DropoutSite::Classifier, 1, m.config.d));
  }
  return tp.add(tp.matmul(row, P(m.clf_weight)), P(m.clf_bias));
}

struct TokenStats {
  double nll = 0.0;
  std::size_t count = 0;
  std::size_t correct = 0;
};

inline std::size_t row_argmax(const Matrix& m, std::size_t r) {
  const auto row = m.row(r);
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

// Adds weight * d(sum of next-token NLL)/d(theta) into grads; returns the
// unweighted NLL sum.
inline double accumulate_ntp(const Model& m, Model& grads, const PatientSequence& seq, double weight,
                             const ForwardContext& ctx, TokenStats* stats = nullptr) {
  const std::size_t T = seq.true_length;
  if (T < 2) return 0.0;
  Tape tp;
  ParameterBinder P(tp, m, grads);
  const Tape::Var h = tape_hidden(tp, P, m, seq, T, ctx);
  const Tape::Var lp = tape_log_probs(tp, P, m, h);
  std::vector<std::size_t> rows(T - 1), targets(T - 1);
  for (std::size_t j = 0; j + 1 < T; ++j) {
    rows[j] = j;
    targets[j] = static_cast<std::size_t>(seq.ids[j + 1]);
  }
  const Tape::Var loss = tp.nll(lp, rows, targets, 1.0);
  const double value = tp.value(loss)[0];
  if (stats) {
    stats->nll += value;
    stats->count += T - 1;
    for (std::size_t j = 0; j + 1 < T; ++j) stats->correct += row_argmax(tp.value(lp), j) == targets[j] ? 1 : 0;
  }
  tp.backward(loss, weight);
  return value;
}

// Masked-token variant: predicts original ids at masked positions.
inline double accumulate_mlm(const Model& m, Model& grads, const MlmSample& sample, const PatientSequence& original,
                             double weight, const ForwardContext& ctx, TokenStats* stats = nullptr) {
  if (sample.masked.empty()) return 0.0;
  Tape tp;
  ParameterBinder P(tp, m, grads);
  const Tape::Var h = tape_hidden(tp, P, m, sample.sequence, original.true_length, ctx);
  const Tape::Var lp = tape_log_probs(tp, P, m, h);
  std::vector<std::size_t> targets;
  for (std::size_t j : sample.masked) targets.push_back(static_cast<std::size_t>(original.ids[j]));
  const Tape::Var loss = tp.nll(lp, sample.masked, targets, 1.0);
  const double value = tp.value(loss)[0];
  if (stats) {
    stats->nll += value;
    stats->count += targets.size();
    for (std::size_t i = 0; i < targets.size(); ++i) stats->correct += row_argmax(tp.value(lp), sample.masked[i]) == targets[i] ? 1 : 0;
  }
  tp.backward(loss, weight);
  return value;
}

struct MpfExample {
  PatientSequence sequence;  // task-tokenized
  TaskKind task = TaskKind::MOR;
  int label = 0;
};

// Adds weight * dBCE/d(theta); returns (BCE, probability).
inline std::pair<double, double> accumulate_mpf(const Model& m, Model& grads, const MpfExample& ex, double weight,
                                                const ForwardContext& ctx) {
  check_label(ex.label);
  const std::size_t T = ex.sequence.true_length;
  if (T == 0) throw DataError("prediction_head: empty sequence");
  Tape tp;
  ParameterBinder P(tp, m, grads);
  const Tape::Var h = tape_hidden(tp, P, m, ex.sequence, T, ctx);
  const Tape::Var z = tape_clinical_logit(tp, P, m, h, T - 1, ctx);
  const double p = sigmoid(tp.value(z)[0]);
  const Tape::Var loss = tp.bce_with_logit(z, ex.label, 1.0);
  const double value = tp.value(loss)[0];
  tp.backward(loss, weight);
  return {value, p};
}

// ---------------------------------------------------------------------------
// Optimization.

// Linear ramp floor -> peak over [0, wT], then peak -> floor over [wT, T].
inline double lr_schedule(std::size_t t, std::size_t total, double peak, double floor, double warmup_fraction) {
  if (total == 0) throw ArgumentError("lr_schedule: total steps must be positive");
  if (t > total) throw ArgumentError("lr_schedule: step beyond schedule");
  if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) throw ArgumentError("lr_schedule: warmup fraction must lie in (0,1)");
  const double T = static_cast<double>(total);
  const double w = warmup_fraction * T;
  const double s = static_cast<double>(t);
  if (s <= w) return floor + (peak - floor) * s / w;
  return floor + (peak - floor) * (T - s) / (T - w);
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct OptimizerState {
  Model m;
  Model v;
  std::uint64_t t = 0;
  AdamWConfig hp;
};

inline OptimizerState init_optimizer(const Model& params, AdamWConfig hp = {}) {
  return {zeros_like(params), zeros_like(params), 0, hp};
}

// One decoupled-weight-decay update of a single tensor at (1-based) step t.
inline void adamw_update(Matrix& p, const Matrix& g, Matrix& m, Matrix& v, std::uint64_t t, const AdamWConfig& hp,
                         double lr) {
  if (!p.same_shape(g) || !p.same_shape(m) || !p.same_shape(v)) throw ShapeError("adamw: shape mismatch");
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] *= 1.0 - lr * hp.weight_decay;
    m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
    v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
    p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + hp.eps);
  }
}

inline void adamw_step(Model& params, const Model& grads, OptimizerState& st, double lr) {
  for_each_parameter(grads, [](const std::string& name, const Matrix& g) {
    for (double x : g.values()) {
      if (!std::isfinite(x)) throw NumericalError("non-finite gradient in parameter '" + name + "'");
    }
  });
  ++st.t;
  std::vector<Matrix*> p, m, v;
  std::vector<const Matrix*> g;
  for_each_parameter(params, [&](const std::string&, Matrix& x) { p.push_back(&x); });
  for_each_parameter(grads, [&](const std::string&, const Matrix& x) { g.push_back(&x); });
  for_each_parameter(st.m, [&](const std::string&, Matrix& x) { m.push_back(&x); });
  for_each_parameter(st.v, [&](const std::string&, Matrix& x) { v.push_back(&x); });
  if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size()) throw ShapeError("adamw: parameter sets differ");
  for (std::size_t i = 0; i < p.size(); ++i) adamw_update(*p[i], *g[i], *m[i], *v[i], st.t, st.hp, lr);
}

// ---------------------------------------------------------------------------
// Training loops.

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double peak_lr = 3e-3;
  double floor_lr = 3e-5;
  double warmup_fraction = 0.1;
  double mask_probability = 0.15;
  bool use_mlm = false;
  std::vector<TaskKind> tasks{kAllTasks.begin(), kAllTasks.end()};
  std::uint64_t seed = 1;
  AdamWConfig adamw;

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
    if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) throw ConfigError("warmup_fraction must lie in (0,1)");
    if (!(peak_lr > 0.0) || !(floor_lr >= 0.0)) throw ConfigError("learning rates must be positive");
    if (use_mlm && !(mask_probability > 0.0 && mask_probability < 1.0)) throw ConfigError("mask_probability must lie in (0,1)");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::string split;
  std::string objective;
  double loss = 0.0;
  double accuracy = 0.0;
};

using TrainLog = std::vector<EpochRecord>;

// Called after each epoch with that epoch's records; returning false stops
// training early.
using EpochHook = std::function<bool(std::size_t epoch, const Model&, const TrainLog&)>;

inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed, std::uint64_t stream, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, stream, epoch));
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(sample::uniform_int(rng, 0, static_cast<std::int64_t>(i - 1)));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

struct NtpEvaluation {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t positions = 0;
};

// Eval-mode next-token loss and argmax accuracy over valid positions.
inline NtpEvaluation evaluate_ntp(const Model& m, const std::vector<PatientSequence>& data) {
  NtpEvaluation e;
  double nll = 0.0;
  std::size_t correct = 0;
  for (const auto& s : data) {
    if (s.true_length < 2) continue;
    const Matrix lp = forecast_log_probs(m, hidden_states<double>(m, s, s.true_length));
    for (std::size_t j = 0; j + 1 < s.true_length; ++j) {
      const auto target = static_cast<std::size_t>(s.ids[j + 1]);
      nll -= lp(j, target);
      correct += row_argmax(lp, j) == target ? 1 : 0;
      ++e.positions;
    }
  }
  if (e.positions == 0) throw DataError("evaluate_ntp: no valid positions");
  e.loss = nll / static_cast<double>(e.positions);
  e.accuracy = static_cast<double>(correct) / static_cast<double>(e.positions);
  return e;
}

inline constexpr std::uint64_t kShuffleStream = 0x7368756666;
inline constexpr std::uint64_t kMaskStream = 0x6d61736b;

// Next-token (or masked-token) pretraining. No task labels are consumed.
inline TrainLog pretrain(Model& m, const std::vector<PatientSequence>& data, const TrainConfig& cfg,
                         const std::vector<PatientSequence>* heldout = nullptr, const EpochHook& hook = {}) {
  cfg.validate();
  if (data.empty()) throw DataError("pretrain: empty split");
  TrainLog log;
  if (cfg.epochs == 0) return log;
  const std::size_t per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = cfg.epochs * per_epoch;
  OptimizerState opt = init_optimizer(m, cfg.adamw);
  Model grads = zeros_like(m);
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(data.size(), cfg.seed, kShuffleStream, epoch);
    TokenStats stats;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      for_each_parameter(grads, [](const std::string&, Matrix& g) { g.fill(0.0); });
      if (cfg.use_mlm) {
        std::vector<MlmSample> samples;
        std::size_t masked = 0;
        for (std::size_t i = start; i < end; ++i) {
          Rng rng(derive_seed(cfg.seed, kMaskStream, step * 1000003 + order[i]));
          samples.push_back(mlm_corrupt(data[order[i]], cfg.mask_probability, rng));
          masked += samples.back().masked.size();
        }
        if (masked > 0) {
          for (std::size_t i = start; i < end; ++i) {
            accumulate_mlm(m, grads, samples[i - start], data[order[i]], 1.0 / static_cast<double>(masked),
                           {Mode::Train, step, order[i]}, &stats);
          }
        }
      } else {
        std::size_t valid = 0;
        for (std::size_t i = start; i < end; ++i) valid += data[order[i]].true_length > 1 ? data[order[i]].true_length - 1 : 0;
        if (valid > 0) {
          for (std::size_t i = start; i < end; ++i) {
            accumulate_ntp(m, grads, data[order[i]], 1.0 / static_cast<double>(valid), {Mode::Train, step, order[i]}, &stats);
          }
        }
      }
      adamw_step(m, grads, opt, lr_schedule(step, total, cfg.peak_lr, cfg.floor_lr, cfg.warmup_fraction));
      ++step;
    }
    if (stats.count == 0) throw DataError("pretrain: no trainable positions");
    TrainLog epoch_log;
    const std::string objective = cfg.use_mlm ? "mlm" : "ntp";
    epoch_log.push_back({epoch, "pretrain", objective, stats.nll / static_cast<double>(stats.count),
                         static_cast<double>(stats.correct) / static_cast<double>(stats.count)});
    if (heldout && !heldout->empty()) {
      const auto e = evaluate_ntp(m, *heldout);
      epoch_log.push_back({epoch, "heldout", "ntp", e.loss, e.accuracy});
    }
    log.insert(log.end(), epoch_log.begin(), epoch_log.end());
    if (hook && !hook(epoch, m, epoch_log)) break;
  }
  return log;
}

// One (sequence, task token, label) example per patient and defined task,
// with task-specific record views applied before encoding. Records are
// expected to be lab-binned already.
inline std::vector<MpfExample> build_mpf_examples(const std::vector<PatientRecord>& records, const Vocabulary& vocab,
                                                  std::size_t l_c, const std::vector<TaskKind>& tasks,
                                                  std::map<TaskKind, std::size_t>* counts = nullptr) {
  std::vector<MpfExample> out;
  for (const auto& r : records) {
    const TaskLabels labels = derive_labels(r);
    for (TaskKind task : tasks) {
      auto view = task_view(r, task, labels);
      if (!view) continue;
      out.push_back({apply_task_token(encode_patient(*view, vocab, l_c), task), task, *labels.get(task)});
      if (counts) ++(*counts)[task];
    }
  }
  return out;
}

// Epoch order that interleaves tasks: each slot picks a task uniformly among
// those with examples left, then that task's next (shuffled) example.
inline std::vector<std::size_t> mpf_order(const std::vector<MpfExample>& examples, std::uint64_t seed, std::uint64_t epoch) {
  std::map<TaskKind, std::vector<std::size_t>> by_task;
  const auto shuffled = shuffled_indices(examples.size(), seed, kShuffleStream, epoch);
  for (std::size_t i : shuffled) by_task[examples[i].task].push_back(i);
  std::vector<std::vector<std::size_t>*> queues;
  for (auto& [task, q] : by_task) queues.push_back(&q);
  std::vector<std::size_t> heads(queues.size(), 0), order;
  Rng rng(derive_seed(seed, 0x7461736b, epoch));
  while (order.size() < examples.size()) {
    std::vector<std::size_t> live;
    for (std::size_t q = 0; q < queues.size(); ++q) {
      if (heads[q] < queues[q]->size()) live.push_back(q);
    }
    const std::size_t q = live[static_cast<std::size_t>(sample::uniform_int(rng, 0, static_cast<std::int64_t>(live.size() - 1)))];
    order.push_back((*queues[q])[heads[q]++]);
  }
  return order;
}

// Joint finetuning of every weight through the single shared clinical head.
// Tasks without examples are skipped with a warning.
inline TrainLog finetune_mpf(Model& m, const std::vector<MpfExample>& examples, const std::vector<TaskKind>& tasks,
                             const TrainConfig& cfg, std::vector<std::string>* warnings = nullptr,
                             const EpochHook& hook = {}) {
  cfg.validate();
  std::vector<MpfExample> used;
  for (TaskKind t : tasks) {
    std::size_t n = 0;
    for (const auto& e : examples) {
      if (e.task == t) {
        used.push_back(e);
        ++n;
      }
    }
    if (n == 0 && warnings) warnings->push_back("task " + std::string(task_name(t)) + " has no labeled examples; skipped");
  }
  if (used.empty()) throw DataError("finetune: no labeled examples for any requested task");
  TrainLog log;
  if (cfg.epochs == 0) return log;
  const std::size_t per_epoch = (used.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = cfg.epochs * per_epoch;
  OptimizerState opt = init_optimizer(m, cfg.adamw);
  Model grads = zeros_like(m);
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = mpf_order(used, cfg.seed, epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      for_each_parameter(grads, [](const std::string&, Matrix& g) { g.fill(0.0); });
      const double w = 1.0 / static_cast<double>(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const auto [loss, p] = accumulate_mpf(m, grads, used[order[i]], w, {Mode::Train, step, order[i]});
        loss_sum += loss;
        correct += (p >= 0.5 ? 1 : 0) == used[order[i]].label ? 1 : 0;
      }
      adamw_step(m, grads, opt, lr_schedule(step, total, cfg.peak_lr, cfg.floor_lr, cfg.warmup_fraction));
      ++step;
    }
    TrainLog epoch_log{{epoch, "finetune", "mpf", loss_sum / static_cast<double>(used.size()),
                        static_cast<double>(correct) / static_cast<double>(used.size())}};
    log.insert(log.end(), epoch_log.begin(), epoch_log.end());
    if (hook && !hook(epoch, m, epoch_log)) break;
  }
  return log;
}

}  // namespace ehrmamba
