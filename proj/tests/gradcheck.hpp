#pragma once

// Central finite differences of NTP + BCE on the tape-free long double
// forward, compared against the taped gradients.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ehrmamba/train.hpp"

namespace gradcheck {

using namespace ehrmamba;

inline long double reference_loss(const Model& m, const PatientSequence& seq, int label) {
  using LD = long double;
  const std::size_t T = seq.true_length;
  const auto H = hidden_states<LD>(m, seq, T);
  const auto lp = forecast_log_probs(m, H);
  LD ntp = 0.0L;
  for (std::size_t j = 0; j + 1 < T; ++j) ntp -= lp(j, static_cast<std::size_t>(seq.ids[j + 1]));
  ntp /= static_cast<LD>(T - 1);
  return ntp + bce_term(sigmoid(clinical_logit(m, H, seq)), label);
}

inline Model taped_gradient(const Model& m, const PatientSequence& seq, int label) {
  Model g = zeros_like(m);
  const ForwardContext eval{};
  accumulate_ntp(m, g, seq, 1.0 / static_cast<double>(seq.true_length - 1), eval);
  accumulate_mpf(m, g, {seq, TaskKind::MOR, label}, 1.0, eval);
  return g;
}

struct TensorReport {
  std::string name;
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst = 0.0;  // largest |analytic - fd| / (|analytic| + 1e-8)
};

// stride > 1 checks every stride-th element of each tensor (always the first).
inline std::vector<TensorReport> check(Model m, const PatientSequence& seq, int label, double eps = 1e-5,
                                       double tol = 1e-4, std::size_t stride = 1) {
  const Model g = taped_gradient(m, seq, label);
  std::vector<const Matrix*> grads;
  for_each_parameter(g, [&](const std::string&, const Matrix& x) { grads.push_back(&x); });
  std::vector<TensorReport> out;
  std::size_t k = 0;
  for_each_parameter(m, [&](const std::string& name, Matrix& p) {
    const Matrix& gp = *grads[k++];
    TensorReport r{name};
    for (std::size_t i = 0; i < p.size(); i += stride) {
      const double orig = p[i];
      const double hi = orig + eps, lo = orig - eps;
      p[i] = hi;
      const long double fp = reference_loss(m, seq, label);
      p[i] = lo;
      const long double fm = reference_loss(m, seq, label);
      p[i] = orig;
      const double fd = static_cast<double>((fp - fm) / (static_cast<long double>(hi) - static_cast<long double>(lo)));
      const double rel = std::fabs(gp[i] - fd) / (std::fabs(gp[i]) + 1e-8);
      r.worst = std::max(r.worst, rel);
      ++r.checked;
      if (!(rel < tol)) ++r.failed;
    }
    out.push_back(r);
  });
  return out;
}

}  // namespace gradcheck
