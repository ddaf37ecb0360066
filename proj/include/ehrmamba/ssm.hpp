#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ehrmamba/error.hpp"
#include "ehrmamba/tensor.hpp"

namespace ehrmamba {

// ---------------------------------------------------------------------------
// Zero-order-hold discretization.

template <class S>
struct ZohPair {
  S a_bar;
  S b_bar;
};

inline constexpr double kZohSmallLimit = 1e-8;

// (exp(delta*a) - 1) / a, the input gain per unit b. Below the small-step
// limit the series is cut after the linear term: delta alone is off by
// |delta*a|/2 relative, delta*(1 + z/2) by z^2/6.
template <class S>
S zoh_gain(S a, S delta) {
  using std::abs;
  using std::expm1;
  const S x = delta * a;
  if (abs(x) < S(kZohSmallLimit)) return delta * (S(1) + x / S(2));
  return expm1(x) / a;
}

template <class S>
ZohPair<S> discretize_zoh(S a, S b, S delta) {
  using std::exp;
  if (!(a < S(0))) throw ArgumentError("discretize_zoh: unstable state coefficient a = " + std::to_string(static_cast<double>(a)));
  if (!(delta > S(0))) throw ArgumentError("discretize_zoh: step size must be positive");
  return {exp(delta * a), zoh_gain(a, delta) * b};
}

// ---------------------------------------------------------------------------
// Single-channel diagonal SSM in discrete form. For LTI systems a_bar, b_bar
// and c hold N values; time-varying systems hold L x N values row-major.

struct DiscreteSsm {
  std::vector<double> a_bar;
  std::vector<double> b_bar;
  std::vector<double> c;
  std::size_t state_size = 0;
  bool time_varying = false;

  static DiscreteSsm lti(std::vector<double> a_bar, std::vector<double> b_bar, std::vector<double> c) {
    if (a_bar.size() != b_bar.size() || a_bar.size() != c.size()) throw ShapeError("ssm: parameter lengths differ");
    DiscreteSsm s;
    s.state_size = a_bar.size();
    s.a_bar = std::move(a_bar);
    s.b_bar = std::move(b_bar);
    s.c = std::move(c);
    return s;
  }

  static DiscreteSsm from_continuous(std::span<const double> a, std::span<const double> b, std::span<const double> c,
                                     double delta) {
    std::vector<double> ab(a.size()), bb(a.size());
    for (std::size_t n = 0; n < a.size(); ++n) {
      const auto z = discretize_zoh(a[n], b[n], delta);
      ab[n] = z.a_bar;
      bb[n] = z.b_bar;
    }
    return lti(std::move(ab), std::move(bb), std::vector<double>(c.begin(), c.end()));
  }
};

// h_t = a_bar h_{t-1} + b_bar x_t, y_t = c . h_t, with h_0 = 0.
inline std::vector<double> ssm_recurrence(std::span<const double> x, const DiscreteSsm& s) {
  const std::size_t n_state = s.state_size;
  if (s.time_varying && s.a_bar.size() < x.size() * n_state) throw ShapeError("ssm: time-varying parameters too short");
  std::vector<double> h(n_state, 0.0), y(x.size(), 0.0);
  for (std::size_t t = 0; t < x.size(); ++t) {
    const std::size_t off = s.time_varying ? t * n_state : 0;
    double acc = 0.0;
    for (std::size_t n = 0; n < n_state; ++n) {
      h[n] = s.a_bar[off + n] * h[n] + s.b_bar[off + n] * x[t];
      acc += s.c[off + n] * h[n];
    }
    y[t] = acc;
  }
  return y;
}

// K_k = sum_n c_n a_bar_n^k b_bar_n for k < length.
inline std::vector<double> ssm_kernel(const DiscreteSsm& s, std::size_t length) {
  if (s.time_varying) throw ArgumentError("ssm_kernel: convolution mode requires time-invariant parameters");
  std::vector<double> k(length, 0.0);
  std::vector<double> power(s.b_bar);
  for (std::size_t i = 0; i < length; ++i) {
    double acc = 0.0;
    for (std::size_t n = 0; n < s.state_size; ++n) {
      acc += s.c[n] * power[n];
      power[n] *= s.a_bar[n];
    }
    k[i] = acc;
  }
  return k;
}

// Causal convolution y = x * K over the whole sequence.
inline std::vector<double> ssm_convolution(std::span<const double> x, const DiscreteSsm& s) {
  const auto k = ssm_kernel(s, x.size());
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t t = 0; t < x.size(); ++t) {
    double acc = 0.0;
    for (std::size_t j = 0; j <= t; ++j) acc += k[j] * x[t - j];
    y[t] = acc;
  }
  return y;
}

// ---------------------------------------------------------------------------
// Selective scan over d_inner channels with input-dependent step, B and C.
//
//   u:     L x di   channel inputs
//   delta: L x di   positive step sizes
//   b, c:  L x N    shared across channels
//   a_log: di x N   A = -exp(a_log)
//
// When `states` is non-null it receives every h_t (L x di x N) for the
// reverse sweep.

template <class S>
void check_scan_shapes(const BasicMatrix<S>& u, const BasicMatrix<S>& delta, const BasicMatrix<S>& b,
                       const BasicMatrix<S>& c, const Matrix& a_log) {
  if (!u.same_shape(delta) || b.rows() != u.rows() || !b.same_shape(c) || a_log.rows() != u.cols() ||
      a_log.cols() != b.cols()) {
    throw ShapeError("selective_scan: inconsistent shapes u=" + u.shape_string() + " delta=" + delta.shape_string() +
                     " B=" + b.shape_string() + " C=" + c.shape_string() + " a_log=" + a_log.shape_string());
  }
}

template <class S>
BasicMatrix<S> selective_scan(const BasicMatrix<S>& u, const BasicMatrix<S>& delta, const BasicMatrix<S>& b,
                              const BasicMatrix<S>& c, const Matrix& a_log, std::vector<S>* states = nullptr) {
  using std::exp;
  check_scan_shapes(u, delta, b, c, a_log);
  const std::size_t L = u.rows(), di = u.cols(), N = b.cols();
  std::vector<S> a(di * N);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = -exp(static_cast<S>(a_log[i]));
  std::vector<S> h(di * N, S(0));
  if (states) states->assign(L * di * N, S(0));
  BasicMatrix<S> y(L, di);
  for (std::size_t t = 0; t < L; ++t) {
    const S* bt = b.data() + t * N;
    const S* ct = c.data() + t * N;
    for (std::size_t ch = 0; ch < di; ++ch) {
      const S dt = delta(t, ch);
      const S x = u(t, ch);
      S* hc = h.data() + ch * N;
      const S* ac = a.data() + ch * N;
      S acc = S(0);
      for (std::size_t n = 0; n < N; ++n) {
        hc[n] = exp(dt * ac[n]) * hc[n] + zoh_gain(ac[n], dt) * bt[n] * x;
        acc += ct[n] * hc[n];
      }
      y(t, ch) = acc;
    }
    if (states) std::copy(h.begin(), h.end(), states->begin() + static_cast<std::ptrdiff_t>(t * di * N));
  }
  return y;
}

// Two-level evaluation: each chunk is scanned from a zero state while the
// running product of a_bar is tracked, then the carried state from the
// previous chunk is folded in as h_t = h_local_t + P_t * carry.
template <class S>
BasicMatrix<S> selective_scan_chunked(const BasicMatrix<S>& u, const BasicMatrix<S>& delta, const BasicMatrix<S>& b,
                                      const BasicMatrix<S>& c, const Matrix& a_log, std::size_t chunk) {
  using std::exp;
  check_scan_shapes(u, delta, b, c, a_log);
  if (chunk == 0) throw ArgumentError("selective_scan_chunked: chunk size must be positive");
  const std::size_t L = u.rows(), di = u.cols(), N = b.cols();
  std::vector<S> a(di * N);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = -exp(static_cast<S>(a_log[i]));
  std::vector<S> carry(di * N, S(0));
  BasicMatrix<S> y(L, di);
  std::vector<S> local(chunk * di * N), prod(chunk * di * N);
  for (std::size_t s0 = 0; s0 < L; s0 += chunk) {
    const std::size_t len = std::min(chunk, L - s0);
    std::vector<S> h(di * N, S(0)), p(di * N, S(1));
    for (std::size_t q = 0; q < len; ++q) {
      const std::size_t t = s0 + q;
      for (std::size_t ch = 0; ch < di; ++ch) {
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t i = ch * N + n;
          const S a_bar = exp(delta(t, ch) * a[i]);
          h[i] = a_bar * h[i] + zoh_gain(a[i], delta(t, ch)) * b(t, n) * u(t, ch);
          p[i] *= a_bar;
          local[q * di * N + i] = h[i];
          prod[q * di * N + i] = p[i];
        }
      }
    }
    for (std::size_t q = 0; q < len; ++q) {
      const std::size_t t = s0 + q;
      for (std::size_t ch = 0; ch < di; ++ch) {
        S acc = S(0);
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t i = ch * N + n;
          acc += c(t, n) * (local[q * di * N + i] + prod[q * di * N + i] * carry[i]);
        }
        y(t, ch) = acc;
      }
    }
    for (std::size_t i = 0; i < di * N; ++i) {
      carry[i] = local[(len - 1) * di * N + i] + prod[(len - 1) * di * N + i] * carry[i];
    }
  }
  return y;
}

// ---------------------------------------------------------------------------
// Mamba block.

inline constexpr double kRmsEps = 1e-5;

template <class S>
BasicMatrix<S> rms_norm(const BasicMatrix<S>& x, const Matrix& scale) {
  using std::sqrt;
  require_shape(scale, 1, x.cols(), "rms_norm scale");
  BasicMatrix<S> y(x.rows(), x.cols());
  const std::size_t d = x.cols();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    S ms = S(0);
    for (std::size_t j = 0; j < d; ++j) ms += x(i, j) * x(i, j);
    const S inv = S(1) / sqrt(ms / static_cast<S>(d) + S(kRmsEps));
    for (std::size_t j = 0; j < d; ++j) y(i, j) = x(i, j) * inv * static_cast<S>(scale[j]);
  }
  return y;
}

// Depthwise causal convolution with left zero padding:
// y[t][j] = sum_k kernel[k][j] * x[t - (K-1) + k][j].
template <class S>
BasicMatrix<S> causal_conv(const BasicMatrix<S>& x, const Matrix& kernel) {
  if (kernel.cols() != x.cols()) throw ShapeError("causal_conv: kernel " + kernel.shape_string() + " for input " + x.shape_string());
  const std::size_t K = kernel.rows(), C = x.cols();
  BasicMatrix<S> y(x.rows(), C);
  for (std::size_t t = 0; t < x.rows(); ++t) {
    for (std::size_t k = 0; k < K; ++k) {
      if (t + k + 1 < K) continue;
      const std::size_t src = t + k + 1 - K;
      for (std::size_t j = 0; j < C; ++j) y(t, j) += static_cast<S>(kernel(k, j)) * x(src, j);
    }
  }
  return y;
}

struct MambaBlockWeights {
  Matrix norm;      // 1 x d
  Matrix in_main;   // d x di
  Matrix in_gate;   // d x di
  Matrix conv;      // K x di
  Matrix x_proj;    // di x (R + 2N)
  Matrix dt_proj;   // R x di
  Matrix dt_bias;   // 1 x di
  Matrix a_log;     // di x N
  Matrix out_proj;  // di x d

  std::size_t dim() const { return norm.cols(); }
  std::size_t inner() const { return in_main.cols(); }
  std::size_t state() const { return a_log.cols(); }
  std::size_t rank() const { return dt_proj.rows(); }
  std::size_t conv_width() const { return conv.rows(); }

  void validate() const {
    const std::size_t d = dim(), di = inner(), N = state(), R = rank();
    require_shape(norm, 1, d, "block.norm");
    require_shape(in_main, d, di, "block.in_main");
    require_shape(in_gate, d, di, "block.in_gate");
    require_shape(conv, conv.rows(), di, "block.conv");
    require_shape(x_proj, di, R + 2 * N, "block.x_proj");
    require_shape(dt_proj, R, di, "block.dt_proj");
    require_shape(dt_bias, 1, di, "block.dt_bias");
    require_shape(a_log, di, N, "block.a_log");
    require_shape(out_proj, di, d, "block.out_proj");
    if (conv.rows() == 0) throw ShapeError("block.conv: width must be positive");
  }
};

inline std::size_t dt_rank_for(std::size_t d) { return (d + 15) / 16; }

inline MambaBlockWeights init_mamba_block(std::size_t d, std::size_t expansion, std::size_t N, std::size_t K, Rng& rng) {
  const std::size_t di = expansion * d, R = dt_rank_for(d);
  MambaBlockWeights w;
  w.norm = Matrix(1, d, 1.0);
  w.in_main = Matrix(d, di);
  w.in_gate = Matrix(d, di);
  w.conv = Matrix(K, di);
  w.x_proj = Matrix(di, R + 2 * N);
  w.dt_proj = Matrix(R, di);
  w.dt_bias = Matrix(1, di);
  w.a_log = Matrix(di, N);
  w.out_proj = Matrix(di, d);
  fill_normal(w.in_main, rng, 1.0 / std::sqrt(static_cast<double>(d)));
  fill_normal(w.in_gate, rng, 1.0 / std::sqrt(static_cast<double>(d)));
  fill_normal(w.conv, rng, 1.0 / std::sqrt(static_cast<double>(K)));
  fill_normal(w.x_proj, rng, 1.0 / std::sqrt(static_cast<double>(di)));
  fill_normal(w.dt_proj, rng, 1.0 / std::sqrt(static_cast<double>(R)));
  // step sizes start log-uniform in [1e-3, 1e-1]; the bias is their inverse softplus
  for (auto& b : w.dt_bias.values()) {
    const double dt = std::exp(std::log(1e-3) + uniform01(rng) * (std::log(1e-1) - std::log(1e-3)));
    b = dt + std::log(-std::expm1(-dt));
  }
  for (std::size_t c = 0; c < di; ++c) {
    for (std::size_t n = 0; n < N; ++n) w.a_log(c, n) = std::log(static_cast<double>(n + 1));
  }
  fill_normal(w.out_proj, rng, 1.0 / std::sqrt(static_cast<double>(di)));
  return w;
}

template <class S>
BasicMatrix<S> columns(const BasicMatrix<S>& x, std::size_t begin, std::size_t count) {
  BasicMatrix<S> out(x.rows(), count);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < count; ++j) out(i, j) = x(i, begin + j);
  }
  return out;
}

// Step sizes softplus(dt_in * dt_proj + dt_bias); non-finite values abort.
template <class S>
BasicMatrix<S> step_sizes(const BasicMatrix<S>& dt_in, const MambaBlockWeights& w) {
  using std::isfinite;
  BasicMatrix<S> pre = matmul(dt_in, w.dt_proj);
  for (std::size_t i = 0; i < pre.rows(); ++i) {
    for (std::size_t j = 0; j < pre.cols(); ++j) {
      const S v = pre(i, j) + static_cast<S>(w.dt_bias[j]);
      if (!isfinite(static_cast<double>(v))) throw NumericalError("selective_scan: non-finite step size");
      pre(i, j) = softplus(v);
    }
  }
  return pre;
}

// out = H + out_proj(SSM(SiLU(conv(in_main(norm H)))) * SiLU(in_gate(norm H)))
template <class S>
BasicMatrix<S> mamba_block_forward(const BasicMatrix<S>& H, const MambaBlockWeights& w) {
  w.validate();
  if (H.cols() != w.dim()) throw ShapeError("mamba block: input " + H.shape_string() + " for d=" + std::to_string(w.dim()));
  const std::size_t N = w.state(), R = w.rank();
  const BasicMatrix<S> xn = rms_norm(H, w.norm);
  const BasicMatrix<S> main = matmul(xn, w.in_main);
  BasicMatrix<S> gate = matmul(xn, w.in_gate);
  BasicMatrix<S> u = causal_conv(main, w.conv);
  for (auto& v : u.values()) v = silu(v);
  const BasicMatrix<S> dbc = matmul(u, w.x_proj);
  const BasicMatrix<S> delta = step_sizes(columns(dbc, 0, R), w);
  BasicMatrix<S> y = selective_scan(u, delta, columns(dbc, R, N), columns(dbc, R + N, N), w.a_log);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= silu(gate[i]);
  BasicMatrix<S> out = matmul(y, w.out_proj);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += H[i];
  return out;
}

// Constant-size per-block state for token-by-token inference: the last K-1
// conv inputs and the SSM state.
template <class S>
struct BlockState {
  BasicMatrix<S> conv_history;  // (K-1) x di, oldest first
  BasicMatrix<S> h;             // di x N

  std::size_t bytes() const { return (conv_history.size() + h.size()) * sizeof(S); }
};

template <class S>
BlockState<S> init_block_state(const MambaBlockWeights& w) {
  return {BasicMatrix<S>(w.conv_width() - 1, w.inner()), BasicMatrix<S>(w.inner(), w.state())};
}

// One position of mamba_block_forward; performs the same arithmetic in the
// same order, so it reproduces the full forward exactly.
template <class S>
BasicMatrix<S> mamba_block_step(const MambaBlockWeights& w, BlockState<S>& st, const BasicMatrix<S>& row) {
  using std::exp;
  const std::size_t di = w.inner(), N = w.state(), R = w.rank(), K = w.conv_width();
  const BasicMatrix<S> xn = rms_norm(row, w.norm);
  const BasicMatrix<S> main = matmul(xn, w.in_main);
  const BasicMatrix<S> gate = matmul(xn, w.in_gate);
  BasicMatrix<S> u(1, di);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t j = 0; j < di; ++j) {
      const S x = k + 1 < K ? st.conv_history(k, j) : main[j];
      u[j] += static_cast<S>(w.conv(k, j)) * x;
    }
  }
  for (std::size_t k = 0; k + 2 < K; ++k) {
    for (std::size_t j = 0; j < di; ++j) st.conv_history(k, j) = st.conv_history(k + 1, j);
  }
  if (K > 1) {
    for (std::size_t j = 0; j < di; ++j) st.conv_history(K - 2, j) = main[j];
  }
  for (auto& v : u.values()) v = silu(v);
  const BasicMatrix<S> dbc = matmul(u, w.x_proj);
  const BasicMatrix<S> delta = step_sizes(columns(dbc, 0, R), w);
  BasicMatrix<S> y(1, di);
  for (std::size_t ch = 0; ch < di; ++ch) {
    S acc = S(0);
    for (std::size_t n = 0; n < N; ++n) {
      const S a = -exp(static_cast<S>(w.a_log(ch, n)));
      S& h = st.h(ch, n);
      h = exp(delta[ch] * a) * h + zoh_gain(a, delta[ch]) * dbc[R + n] * u[ch];
      acc += dbc[R + N + n] * h;
    }
    y[ch] = acc * silu(gate[ch]);
  }
  BasicMatrix<S> out = matmul(y, w.out_proj);
  for (std::size_t j = 0; j < out.size(); ++j) out[j] += row[j];
  return out;
}

}  // namespace ehrmamba
