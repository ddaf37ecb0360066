#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "ehrmamba/error.hpp"
#include "ehrmamba/sequence.hpp"
#include "ehrmamba/tensor.hpp"

namespace ehrmamba {

// Learnable temporal features: component 0 is linear, the rest periodic.
struct Time2VecParams {
  Matrix omega;  // 1 x k
  Matrix phi;    // 1 x k

  std::size_t width() const { return omega.cols(); }

  void validate() const {
    if (omega.rows() != 1 || !omega.same_shape(phi)) throw ShapeError("time2vec: omega/phi shape mismatch");
    if (omega.cols() < 2) throw ShapeError("time2vec: width must be at least 2");
  }
};

template <class S>
std::vector<S> time2vec(S t, const Time2VecParams& p) {
  using std::sin;
  const std::size_t k = p.width();
  std::vector<S> out(k);
  out[0] = static_cast<S>(p.omega[0]) * t + static_cast<S>(p.phi[0]);
  for (std::size_t i = 1; i < k; ++i) out[i] = sin(static_cast<S>(p.omega[i]) * t + static_cast<S>(p.phi[i]));
  return out;
}

struct EmbeddingTables {
  Matrix concepts;     // v x d, row [PAD] zero
  Matrix type;         // 9 x d
  Matrix segment;      // 3 x d, row 0 zero
  Matrix visit_order;  // (V_max + 1) x d, row 0 zero
  Matrix position;     // l_c x d, empty unless positions are used
  Time2VecParams age_t2v;
  Time2VecParams time_t2v;
  Matrix age_proj;   // k x d
  Matrix time_proj;  // k x d

  std::size_t dim() const { return concepts.cols(); }
  std::size_t vocab_size() const { return concepts.rows(); }
  int max_visit_order() const { return static_cast<int>(visit_order.rows()) - 1; }
};

inline EmbeddingTables init_embedding_tables(std::size_t v, std::size_t d, std::size_t k, int max_visit_order,
                                             std::size_t l_c, bool use_position, Rng& rng) {
  if (v <= static_cast<std::size_t>(tokens::kSpecialCount) - 1 || d == 0 || k < 2 || max_visit_order < 1) {
    throw ConfigError("embedding: invalid table sizes");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  EmbeddingTables t;
  t.concepts = Matrix(v, d);
  t.type = Matrix(kTokenTypeCount, d);
  t.segment = Matrix(3, d);
  t.visit_order = Matrix(static_cast<std::size_t>(max_visit_order) + 1, d);
  fill_normal(t.concepts, rng, scale);
  fill_normal(t.type, rng, scale);
  fill_normal(t.segment, rng, scale);
  fill_normal(t.visit_order, rng, scale);
  for (std::size_t j = 0; j < d; ++j) {
    t.concepts(tokens::PAD, j) = 0.0;
    t.segment(0, j) = 0.0;
    t.visit_order(0, j) = 0.0;
  }
  if (use_position) {
    t.position = Matrix(l_c, d);
    fill_normal(t.position, rng, scale);
  }
  for (Time2VecParams* p : {&t.age_t2v, &t.time_t2v}) {
    p->omega = Matrix(1, k);
    p->phi = Matrix(1, k);
    for (auto& w : p->omega.values()) w = std::exp(std::log(1e-2) * (1.0 - uniform01(rng)));
    fill_uniform(p->phi, rng, 0.0, 2.0 * std::numbers::pi);
  }
  const double proj_scale = 1.0 / std::sqrt(static_cast<double>(k * d));
  t.age_proj = Matrix(k, d);
  t.time_proj = Matrix(k, d);
  fill_normal(t.age_proj, rng, proj_scale);
  fill_normal(t.time_proj, rng, proj_scale);
  return t;
}

inline std::size_t clamp_visit_order(int order, const EmbeddingTables& t) {
  if (order < 0) throw ShapeError("embedding: negative visit order");
  return static_cast<std::size_t>(std::min(order, t.max_visit_order()));
}

// Adds the embedding of one token to out (length d). Special tokens carry no
// age, time, segment or visit-order contribution.
template <class S>
void add_token_embedding(const EmbeddingTables& t, TokenId id, TokenType type, double age, double time,
                         int segment, int visit_order, int position, bool use_position, std::span<S> out) {
  const std::size_t d = t.dim();
  if (id < 0 || static_cast<std::size_t>(id) >= t.vocab_size()) {
    throw ShapeError("embedding: token id " + std::to_string(id) + " outside vocabulary of " +
                     std::to_string(t.vocab_size()));
  }
  if (id == tokens::PAD) return;
  for (std::size_t j = 0; j < d; ++j) {
    out[j] += static_cast<S>(t.concepts(static_cast<std::size_t>(id), j)) +
              static_cast<S>(t.type(static_cast<std::size_t>(type), j));
  }
  if (is_event_type(type)) {
    if (segment < 0 || segment > 2) throw ShapeError("embedding: segment outside {0,1,2}");
    const std::size_t k = t.age_proj.rows();
    const auto fa = time2vec<S>(static_cast<S>(age), t.age_t2v);
    const auto ft = time2vec<S>(static_cast<S>(time), t.time_t2v);
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        out[j] += fa[i] * static_cast<S>(t.age_proj(i, j)) + ft[i] * static_cast<S>(t.time_proj(i, j));
      }
    }
    const std::size_t vo = clamp_visit_order(visit_order, t);
    for (std::size_t j = 0; j < d; ++j) {
      out[j] += static_cast<S>(t.segment(static_cast<std::size_t>(segment), j)) + static_cast<S>(t.visit_order(vo, j));
    }
  }
  if (use_position) {
    if (t.position.empty()) throw ShapeError("embedding: positions requested but no position table");
    if (position < 0 || static_cast<std::size_t>(position) >= t.position.rows()) {
      throw ShapeError("embedding: position outside table");
    }
    for (std::size_t j = 0; j < d; ++j) out[j] += static_cast<S>(t.position(static_cast<std::size_t>(position), j));
  }
}

// Embeds the first `rows` positions of seq; rows at or after true_length
// (padding) are zero.
template <class S>
BasicMatrix<S> embed_prefix(const PatientSequence& seq, const EmbeddingTables& t, bool use_position, std::size_t rows) {
  if (rows > seq.length()) throw ShapeError("embedding: prefix longer than sequence");
  BasicMatrix<S> out(rows, t.dim());
  const std::size_t live = std::min(rows, seq.true_length);
  for (std::size_t i = 0; i < live; ++i) {
    add_token_embedding<S>(t, seq.ids[i], seq.types[i], seq.ages[i], seq.times[i], seq.segments[i],
                           seq.visit_orders[i], seq.positions[i], use_position, out.row(i));
  }
  return out;
}

template <class S = double>
BasicMatrix<S> embed_sequence(const PatientSequence& seq, const EmbeddingTables& t, bool use_position = false) {
  return embed_prefix<S>(seq, t, use_position, seq.length());
}

}  // namespace ehrmamba
