#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ehrmamba/error.hpp"
#include "ehrmamba/model.hpp"
#include "ehrmamba/ssm.hpp"
#include "ehrmamba/tensor.hpp"

namespace ehrmamba {

// Reverse-mode tape over matrix-valued operations. Nodes are appended in
// evaluation order, so that order is a topological order and the reverse
// sweep visits each node once. Parameter leaves write their gradient straight
// into a caller-owned sink; fan-out accumulates additively.
class Tape {
 public:
  using Var = std::size_t;

  Var param(const Matrix& value, Matrix& grad_sink) {
    if (!value.same_shape(grad_sink)) throw ShapeError("tape: gradient sink shape differs from parameter");
    Node n;
    n.ref = &value;
    n.sink = &grad_sink;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  // Constant leaf; its gradient is computed but never read.
  Var input(Matrix value) {
    Node n;
    n.owned = std::move(value);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  const Matrix& value(Var v) const { return nodes_[v].ref ? *nodes_[v].ref : nodes_[v].owned; }

  Matrix& grad(Var v) {
    Node& n = nodes_[v];
    if (n.sink) return *n.sink;
    if (n.grad.empty() && !value(v).empty()) n.grad = Matrix(value(v).rows(), value(v).cols());
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  // Seeds d(root) = seed and sweeps every node in reverse.
  void backward(Var root, double seed = 1.0) {
    const Matrix& r = value(root);
    if (r.rows() != 1 || r.cols() != 1) {
      throw ArgumentError("backward: root must be a scalar, got " + r.shape_string());
    }
    grad(root)[0] += seed;
    for (std::size_t i = root + 1; i-- > 0;) {
      if (nodes_[i].backward && !nodes_[i].grad.empty()) nodes_[i].backward(*this);
    }
  }

  // ---- operations --------------------------------------------------------

  // Rows of a table selected by index; with skip_zero, index 0 names the
  // fixed zero row and receives no gradient.
  Var gather(Var table, std::vector<std::size_t> idx, bool skip_zero = false) {
    const Matrix& t = value(table);
    Matrix out(idx.size(), t.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= t.rows()) throw ShapeError("gather: index " + std::to_string(idx[i]) + " outside table of " + std::to_string(t.rows()) + " rows");
      if (skip_zero && idx[i] == 0) continue;
      std::copy(t.row(idx[i]).begin(), t.row(idx[i]).end(), out.row(i).begin());
    }
    return push(std::move(out), [=](Tape& tp, Var self) {
      const Matrix& g = tp.grad(self);
      Matrix& gt = tp.grad(table);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (skip_zero && idx[i] == 0) continue;
        for (std::size_t j = 0; j < g.cols(); ++j) gt(idx[i], j) += g(i, j);
      }
    });
  }

  Var matmul(Var x, Var w) {
    Matrix out = ehrmamba::matmul(value(x), value(w));
    return push(std::move(out), [=](Tape& tp, Var self) {
      const Matrix& g = tp.grad(self);
      const Matrix gx = matmul_transposed(g, tp.value(w));
      Matrix& dx = tp.grad(x);
      for (std::size_t i = 0; i < gx.size(); ++i) dx[i] += gx[i];
      add_transposed_product(tp.value(x), g, tp.grad(w));
    });
  }

  Var add(Var a, Var b) {
    const Matrix& va = value(a);
    const Matrix& vb = value(b);
    if (!va.same_shape(vb)) throw ShapeError("add: " + va.shape_string() + " + " + vb.shape_string());
    Matrix out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
    return push(std::move(out), [=](Tape& tp, Var self) {
      const Matrix& g = tp.grad(self);
      Matrix& ga = tp.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      Matrix& gb = tp.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    });
  }

  // x (L x n) plus a 1 x n row broadcast over rows.
  Var add_row(Var x, Var rowv) {
    const Matrix& vx = value(x);
    const Matrix& vr = value(rowv);
    require_shape(vr, 1, vx.cols(), "add_row");
    Matrix out = vx;
    for (std::size_t i = 0; i < out.rows(); ++i) {
      for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += vr[j];
    }
    return push(std::move(out), [=](Tape& tp, Var self) {
      const Matrix& g = tp.grad(self);
      Matrix& gx = tp.grad(x);
      Matrix& gr = tp.grad(rowv);
      for (std::size_t i = 0; i < g.rows(); ++i) {
        for (std::size_t j = 0; j < g.cols(); ++j) {
          gx(i, j) += g(i, j);
          gr[j] += g(i, j);
        }
      }
    });
  }

  Var mul(Var a, Var b) {
    const Matrix& va = value(a);
    const Matrix& vb = value(b);
    if (!va.same_shape(vb)) throw ShapeError("mul: " + va.shape_string() + " * " + vb.shape_string());
    Matrix out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
    return push(std::move(out), [=](Tape& tp, Var self) {
      const Matrix& g = tp.grad(self);
      const Matrix& xa = tp.value(a);
      const Matrix& xb = tp.value(b);
      Matrix& ga = tp.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * xb[i];
      Matrix& gb = tp.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * xa[i];
    });
  }

  // Elementwise product with a constant matrix (dropout masks).
  Var scale_by(Var x, Matrix factor) {
    const Matrix& vx = value(x);
    if (!vx.same_shape(factor)) throw ShapeError("scale_by: shape mismatch");
    Matrix out = vx;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor[i];
    return push(std::move(out), [=, f = std::move(factor)](Tape& tp, Var self) {
      const Matrix& g = tp.grad(self);
      Matrix& gx = tp.grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * f[i];
    });
  }

  Var silu(Var x) {
    Matrix out = value(x);
    for (auto& v : out.values()) v = ehrmamba::silu(v);
    return push(std::move(out), [=](Tape& tp, Var self) {
      const Matrix& g = tp.grad(self);
      const Matrix& vx = tp.value(x);
      Matrix& gx = tp.grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = sigmoid(vx[i]);
        gx[i] += g[i] * s * (1.0 + vx[i] * (1.0 - s));
      }
    });
  }

  Var softplus(Var x) {
    Matrix out = value(x);
    for (auto& v : out.values()) {
      if (!std::isfinite(v)) throw NumericalError("selective_scan: non-finite step size");
      v = ehrmamba::softplus(v);
    }
    return push(std::move(out), [=](Tape& tp, Var self) {
      const Matrix& g = tp.grad(self);
      const Matrix& vx = tp.value(x);
      Matrix& gx = tp.grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * sigmoid(vx[i]);
    });
  }

  Var columns(Var x, std::size_t begin, std::size_t count) {
    const Matrix& vx = value(x);
    if (begin + count > vx.cols()) throw ShapeError("columns: range outside matrix");
    Matrix out = ehrmamba::columns(vx, begin, count);
    return push(std::move(out), [=](Tape& tp, Var self) {
      const Matrix& g = tp.grad(self);
      Matrix& gx = tp.grad(x);
      for (std::size_t i = 0; i < g.rows(); ++i) {
        for (std::size_t j = 0; j < count; ++j) gx(i, begin + j) += g(i, j);
      }
    });
  }

  Var slice_row(Var x, std::size_t r) {
    const Matrix& vx = value(x);
    if (r >= vx.rows()) throw ShapeError("slice_row: row outside matrix");
    Matrix out(1, vx.cols());
    std::copy(vx.row(r).begin(), vx.row(r).end(), out.data());
    return push(std::move(out), [=](Tape& tp, Var self) {
      const Matrix& g = tp.grad(self);
      Matrix& gx = tp.grad(x);
      for (std::size_t j = 0; j < g.cols(); ++j) gx(r, j) += g[j];
    });
  }

  // Row-wise x / sqrt(mean(x^2) + eps) * scale.
  Var rms_norm(Var x, Var scale) {
    const Matrix& vx = value(x);
    const Matrix& vs = value(scale);
    require_shape(vs, 1, vx.cols(), "rms_norm scale");
    const std::size_t d = vx.cols();
    std::vector<double> inv(vx.rows());
    Matrix out(vx.rows(), d);
    for (std::size_t i = 0; i < vx.rows(); ++i) {
      double ms = 0.0;
      for (std::size_t j = 0; j < d; ++j) ms += vx(i, j) * vx(i, j);
      inv[i] = 1.0 / std::sqrt(ms / static_cast<double>(d) + kRmsEps);
      for (std::size_t j = 0; j < d; ++j) out(i, j) = vx(i, j) * inv[i] * vs[j];
    }
    return push(std::move(out), [=, inv = std::move(inv)](Tape& tp, Var self) {
      const Matrix& g = tp.grad(self);
      const Matrix& xv = tp.value(x);
      const Matrix& sv = tp.value(scale);
      Matrix& gx = tp.grad(x);
      Matrix& gs = tp.grad(scale);
      for (std::size_t i = 0; i < xv.rows(); ++i) {
        // y_j = x_j r s_j with r = (mean x^2 + eps)^(-1/2); dr/dx_k = -r^3 x_k / d
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          gs[j] += g(i, j) * xv(i, j) * inv[i];
          dot += g(i, j) * sv[j] * xv(i, j);
        }
        const double r3 = inv[i] * inv[i] * inv[i] / static_cast<double>(d);
        for (std::size_t k = 0; k < d; ++k) gx(i, k) += g(i, k) * sv[k] * inv[i] - dot * r3 * xv(i, k);
      }
    });
  }

  Var causal_conv(Var x, Var kernel) {
    Matrix out = ehrmamba::causal_conv(value(x), value(kernel));
    return push(std::move(out), [=](Tape& tp, Var self) {
      const Matrix& g = tp.grad(self);
      const Matrix& xv = tp.value(x);
      const Matrix& kv = tp.value(kernel);
      Matrix& gx = tp.grad(x);
      Matrix& gk = tp.grad(kernel);
      const std::size_t K = kv.rows(), C = xv.cols();
      for (std::size_t t = 0; t < xv.rows(); ++t) {
        for (std::size_t k = 0; k < K; ++k) {
          if (t + k + 1 < K) continue;
          const std::size_t src = t + k + 1 - K;
          for (std::size_t j = 0; j < C; ++j) {
            gk(k, j) += g(t, j) * xv(src, j);
            gx(src, j) += g(t, j) * kv(k, j);
          }
        }
      }
    });
  }

  // Selective scan with per-step ZOH; see ehrmamba::selective_scan.
  Var selective_scan(Var u, Var delta, Var b, Var c, Var a_log) {
    auto states = std::make_shared<std::vector<double>>();
    Matrix out = ehrmamba::selective_scan(value(u), value(delta), value(b), value(c), value(a_log), states.get());
    return push(std::move(out), [=](Tape& tp, Var self) {
      const Matrix& g = tp.grad(self);
      const Matrix& uv = tp.value(u);
      const Matrix& dv = tp.value(delta);
      const Matrix& bv = tp.value(b);
      const Matrix& cv = tp.value(c);
      const Matrix& av = tp.value(a_log);
      Matrix& gu = tp.grad(u);
      Matrix& gd = tp.grad(delta);
      Matrix& gb = tp.grad(b);
      Matrix& gc = tp.grad(c);
      Matrix& ga = tp.grad(a_log);
      const std::size_t L = uv.rows(), di = uv.cols(), N = bv.cols();
      const std::vector<double>& hs = *states;
      std::vector<double> a(di * N), da(di * N, 0.0), dh(di * N, 0.0);
      for (std::size_t i = 0; i < a.size(); ++i) a[i] = -std::exp(av[i]);
      for (std::size_t t = L; t-- > 0;) {
        const double* h_t = hs.data() + t * di * N;
        const double* h_prev = t > 0 ? hs.data() + (t - 1) * di * N : nullptr;
        for (std::size_t ch = 0; ch < di; ++ch) {
          const double dt = dv(t, ch);
          const double x = uv(t, ch);
          const double gy = g(t, ch);
          double gx = 0.0, gdt = 0.0;
          for (std::size_t n = 0; n < N; ++n) {
            const std::size_t i = ch * N + n;
            const double an = a[i];
            gc(t, n) += gy * h_t[i];
            double dhi = dh[i] + gy * cv(t, n);
            const double z = dt * an;
            const double a_bar = std::exp(z);
            const double phi = zoh_gain(an, dt);
            const double hp = h_prev ? h_prev[i] : 0.0;
            const double d_abar = dhi * hp;
            const double d_phi = dhi * x * bv(t, n);
            gb(t, n) += dhi * x * phi;
            gx += dhi * phi * bv(t, n);
            // d phi / d delta = exp(delta a); d phi / d a = (z e^z - expm1 z) / a^2
            double dphi_da;
            if (std::abs(z) < 1e-4) {
              dphi_da = dt * dt * (0.5 + z / 3.0 + z * z / 8.0 + z * z * z / 30.0);
            } else {
              dphi_da = (z * a_bar - std::expm1(z)) / (an * an);
            }
            gdt += d_abar * a_bar * an + d_phi * a_bar;
            da[i] += d_abar * a_bar * dt + d_phi * dphi_da;
            dh[i] = dhi * a_bar;
          }
          gu(t, ch) += gx;
          gd(t, ch) += gdt;
        }
      }
      for (std::size_t i = 0; i < a.size(); ++i) ga[i] += da[i] * a[i];
    });
  }

  // Time2Vec features for constant times t (L values); rows with
  // active[i] == false are zero.
  Var time2vec(Var omega, Var phi, std::vector<double> t, std::vector<bool> active) {
    const Matrix& w = value(omega);
    const Matrix& p = value(phi);
    const std::size_t k = w.cols();
    Matrix out(t.size(), k);
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (!active[i]) continue;
      out(i, 0) = w[0] * t[i] + p[0];
      for (std::size_t j = 1; j < k; ++j) out(i, j) = std::sin(w[j] * t[i] + p[j]);
    }
    return push(std::move(out), [=, t = std::move(t), active = std::move(active)](Tape& tp, Var self) {
      const Matrix& g = tp.grad(self);
      const Matrix& wv = tp.value(omega);
      const Matrix& pv = tp.value(phi);
      Matrix& gw = tp.grad(omega);
      Matrix& gp = tp.grad(phi);
      for (std::size_t i = 0; i < t.size(); ++i) {
        if (!active[i]) continue;
        gw[0] += g(i, 0) * t[i];
        gp[0] += g(i, 0);
        for (std::size_t j = 1; j < k; ++j) {
          const double cs = std::cos(wv[j] * t[i] + pv[j]);
          gw[j] += g(i, j) * cs * t[i];
          gp[j] += g(i, j) * cs;
        }
      }
    });
  }

  Var log_softmax(Var x) {
    Matrix out = log_softmax_rows(value(x));
    return push(std::move(out), [=](Tape& tp, Var self) {
      const Matrix& g = tp.grad(self);
      const Matrix& y = tp.value(self);
      Matrix& gx = tp.grad(x);
      for (std::size_t i = 0; i < y.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < y.cols(); ++j) sum += g(i, j);
        for (std::size_t j = 0; j < y.cols(); ++j) gx(i, j) += g(i, j) - std::exp(y(i, j)) * sum;
      }
    });
  }

  // weight * -sum_i logp[rows[i], targets[i]]; a 1 x 1 result.
  Var nll(Var logp, std::vector<std::size_t> rows, std::vector<std::size_t> targets, double weight) {
    const Matrix& lp = value(logp);
    if (rows.size() != targets.size()) throw ShapeError("nll: rows/targets length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] >= lp.rows() || targets[i] >= lp.cols()) throw ShapeError("nll: index outside log-probabilities");
      s -= lp(rows[i], targets[i]);
    }
    return push(Matrix(1, 1, weight * s), [=, rows = std::move(rows), targets = std::move(targets)](Tape& tp, Var self) {
      const double g = tp.grad(self)[0];
      Matrix& gl = tp.grad(logp);
      for (std::size_t i = 0; i < rows.size(); ++i) gl(rows[i], targets[i]) -= g * weight;
    });
  }

  // weight * BCE(sigmoid(z), y) for a 1 x 1 logit, with the probability
  // clamped to [1e-12, 1 - 1e-12]; the clamped region has zero slope.
  Var bce_with_logit(Var z, int y, double weight) {
    const Matrix& vz = value(z);
    require_shape(vz, 1, 1, "bce_with_logit");
    const double p = sigmoid(vz[0]);
    const bool clamped = p < kProbClamp || p > 1.0 - kProbClamp;
    return push(Matrix(1, 1, weight * bce_term(p, y)), [=](Tape& tp, Var self) {
      if (clamped) return;
      tp.grad(z)[0] += tp.grad(self)[0] * weight * (p - static_cast<double>(y));
    });
  }

  Var sum_all(Var x) {
    double s = 0.0;
    for (double v : value(x).values()) s += v;
    return push(Matrix(1, 1, s), [=](Tape& tp, Var self) {
      const double g = tp.grad(self)[0];
      Matrix& gx = tp.grad(x);
      for (auto& v : gx.values()) v += g;
    });
  }

  Var dot_all(Var x, Matrix w) {
    const Matrix& vx = value(x);
    if (!vx.same_shape(w)) throw ShapeError("dot_all: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += vx[i] * w[i];
    return push(Matrix(1, 1, s), [=, w = std::move(w)](Tape& tp, Var self) {
      const double g = tp.grad(self)[0];
      Matrix& gx = tp.grad(x);
      for (std::size_t i = 0; i < w.size(); ++i) gx[i] += g * w[i];
    });
  }

 private:
  struct Node {
    Matrix owned;
    const Matrix* ref = nullptr;
    Matrix* sink = nullptr;
    Matrix grad;
    std::function<void(Tape&)> backward;
  };

  template <class F>
  Var push(Matrix value, F&& back) {
    Node n;
    n.owned = std::move(value);
    const Var self = nodes_.size();
    n.backward = [self, back = std::forward<F>(back)](Tape& tp) { back(tp, self); };
    nodes_.push_back(std::move(n));
    return self;
  }

  std::vector<Node> nodes_;
};

}  // namespace ehrmamba
