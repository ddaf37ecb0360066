#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "ehrmamba/autodiff.hpp"
#include "ehrmamba/model.hpp"
#include "ehrmamba/sequence.hpp"
#include "ehrmamba/train.hpp"

namespace ehrmamba {

// ---------------------------------------------------------------------------
// Forecasting evaluation.

inline constexpr std::array<std::size_t, 4> kForecastHorizons{1, 2, 5, 10};
inline constexpr std::size_t kForecastCutoff = 10;

struct ForecastSplitReport {
  std::array<double, 4> accuracy{};
  std::array<double, 4> cosine{};
  std::size_t evaluated = 0;
  std::size_t skipped = 0;
};

struct ForecastReport {
  ForecastSplitReport train;
  ForecastSplitReport test;
};

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return aa == bb ? 1.0 : 0.0;
  return ab / std::sqrt(aa * bb);
}

// Hides the final 10 tokens of each sequence, greedily decodes 10 and scores
// exact matches and concept-row cosine similarity over the first 1, 2, 5, 10
// predictions. Sequences with fewer than 11 tokens are skipped.
inline ForecastSplitReport forecasting_eval(const Model& m, const std::vector<PatientSequence>& data,
                                            const Vocabulary* vocab = nullptr) {
  ForecastSplitReport r;
  for (const auto& s : data) {
    if (s.true_length < kForecastCutoff + 1) {
      ++r.skipped;
      continue;
    }
    PatientSequence prefix = s;
    const std::size_t keep = s.true_length - kForecastCutoff;
    for (std::size_t j = keep; j < s.true_length; ++j) {
      prefix.ids[j] = tokens::PAD;
      prefix.types[j] = TokenType::Pad;
      prefix.ages[j] = prefix.times[j] = 0.0;
      prefix.segments[j] = prefix.visit_orders[j] = prefix.positions[j] = 0;
    }
    prefix.true_length = keep;
    const auto pred = forecast_tokens(m, prefix, kForecastCutoff, vocab);
    double hits = 0.0, cos = 0.0;
    std::size_t h = 0;
    for (std::size_t k = 0; k < kForecastCutoff; ++k) {
      const TokenId actual = s.ids[keep + k];
      hits += pred[k] == actual ? 1.0 : 0.0;
      cos += cosine_similarity(m.tables.concepts.row(static_cast<std::size_t>(pred[k])),
                               m.tables.concepts.row(static_cast<std::size_t>(actual)));
      if (k + 1 == kForecastHorizons[h]) {
        r.accuracy[h] += hits / static_cast<double>(k + 1);
        r.cosine[h] += cos / static_cast<double>(k + 1);
        ++h;
      }
    }
    ++r.evaluated;
  }
  if (r.evaluated > 0) {
    for (std::size_t h = 0; h < kForecastHorizons.size(); ++h) {
      r.accuracy[h] /= static_cast<double>(r.evaluated);
      r.cosine[h] /= static_cast<double>(r.evaluated);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Integrated gradients.

// Value and gradient of a scalar function of a matrix.
using ScalarField = std::function<std::pair<double, Matrix>(const Matrix&)>;

struct IntegratedGradients {
  Matrix attribution;  // same shape as the input
  double f_input = 0.0;
  double f_baseline = 0.0;
  double residual = 0.0;  // |sum attribution - (F(x) - F(0))|
};

// Midpoint Riemann approximation of the path integral from the zero baseline
// to x.
inline IntegratedGradients integrated_gradients(const ScalarField& f, const Matrix& x, std::size_t steps) {
  if (steps < 1) throw ArgumentError("integrated_gradients: step count must be at least 1");
  Matrix avg(x.rows(), x.cols());
  for (std::size_t i = 0; i < steps; ++i) {
    const double alpha = (static_cast<double>(i) + 0.5) / static_cast<double>(steps);
    Matrix xa = x;
    for (auto& v : xa.values()) v *= alpha;
    const Matrix g = f(xa).second;
    for (std::size_t k = 0; k < avg.size(); ++k) avg[k] += g[k];
  }
  IntegratedGradients out;
  out.attribution = Matrix(x.rows(), x.cols());
  double total = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    out.attribution[k] = x[k] * avg[k] / static_cast<double>(steps);
    total += out.attribution[k];
  }
  out.f_input = f(x).first;
  out.f_baseline = f(Matrix(x.rows(), x.cols())).first;
  out.residual = std::abs(total - (out.f_input - out.f_baseline));
  return out;
}

// ŷ as a function of the embedding matrix of a task-tokenized sequence, with
// its gradient (eval mode).
inline ScalarField clinical_probability_field(const Model& m, const PatientSequence& seq) {
  return [&m, &seq](const Matrix& e) {
    Model scratch = zeros_like(m);
    Tape tp;
    ParameterBinder P(tp, m, scratch);
    const Tape::Var in = tp.input(e);
    Tape::Var h = in;
    for (const auto& b : m.blocks) h = tape_block(tp, P, b, h);
    const Tape::Var z = tape_clinical_logit(tp, P, m, h, seq.true_length - 1, {});
    const double p = sigmoid(tp.value(z)[0]);
    tp.backward(z, p * (1.0 - p));
    Matrix g = tp.grad(in);
    return std::make_pair(p, std::move(g));
  };
}

struct AttributionReport {
  std::vector<double> scores;  // one per non-pad position
  std::vector<TokenType> types;
  std::map<TokenType, double> type_means;
  double f_input = 0.0;
  double f_baseline = 0.0;
  double residual = 0.0;
};

// Mean attribution per token type; types that never occur are absent.
inline std::map<TokenType, double> attribution_by_type(std::span<const double> scores, std::span<const TokenType> types) {
  if (scores.size() != types.size()) throw ShapeError("attribution_by_type: scores and types differ in length");
  std::map<TokenType, std::pair<double, std::size_t>> acc;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (types[i] == TokenType::Pad) continue;
    auto& [sum, n] = acc[types[i]];
    sum += scores[i];
    ++n;
  }
  std::map<TokenType, double> out;
  for (const auto& [t, sn] : acc) out[t] = sn.first / static_cast<double>(sn.second);
  return out;
}

// Per-token attribution: the embedding-dimension sum of E * avg-gradient.
inline AttributionReport integrated_gradients(const Model& m, const PatientSequence& seq, std::size_t steps) {
  if (steps < 1) throw ArgumentError("integrated_gradients: step count must be at least 1");
  if (seq.true_length == 0) throw DataError("integrated_gradients: empty sequence");
  const Matrix e = embed_prefix<double>(seq, m.tables, m.config.use_position, seq.true_length);
  const auto ig = integrated_gradients(clinical_probability_field(m, seq), e, steps);
  AttributionReport r;
  r.scores.assign(seq.true_length, 0.0);
  for (std::size_t j = 0; j < seq.true_length; ++j) {
    for (std::size_t k = 0; k < e.cols(); ++k) r.scores[j] += ig.attribution(j, k);
  }
  r.types.assign(seq.types.begin(), seq.types.begin() + static_cast<std::ptrdiff_t>(seq.true_length));
  r.type_means = attribution_by_type(r.scores, r.types);
  r.f_input = ig.f_input;
  r.f_baseline = ig.f_baseline;
  r.residual = ig.residual;
  return r;
}

// Pools positions across many reports before averaging per type.
inline std::map<TokenType, double> pooled_type_means(const std::vector<AttributionReport>& reports) {
  std::vector<double> scores;
  std::vector<TokenType> types;
  for (const auto& r : reports) {
    scores.insert(scores.end(), r.scores.begin(), r.scores.end());
    types.insert(types.end(), r.types.begin(), r.types.end());
  }
  return attribution_by_type(scores, types);
}

}  // namespace ehrmamba
