#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "ehrmamba/autodiff.hpp"
#include "gradcheck.hpp"
#include "fixtures.hpp"

using namespace ehrmamba;

namespace {

using Builder = std::function<Tape::Var(Tape&, const std::vector<Tape::Var>&)>;

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  fill_uniform(m, rng, lo, hi);
  return m;
}

// Projects the op output onto fixed random weights and compares the taped
// gradient of every input with central differences of the forward values.
void expect_op_gradient(std::vector<Matrix> inputs, const Builder& build, double tol = 1e-7) {
  Rng rng(99);
  Matrix probe;
  auto evaluate = [&](std::vector<Matrix>& in, std::vector<Matrix>* grads) {
    Tape tp;
    std::vector<Tape::Var> vars;
    for (std::size_t i = 0; i < in.size(); ++i) vars.push_back(grads ? tp.param(in[i], (*grads)[i]) : tp.input(in[i]));
    const Tape::Var out = build(tp, vars);
    if (probe.empty()) probe = random_matrix(rng, tp.value(out).rows(), tp.value(out).cols());
    const Tape::Var loss = tp.dot_all(out, probe);
    if (grads) tp.backward(loss);
    return tp.value(loss)[0];
  };
  std::vector<Matrix> grads;
  for (const auto& m : inputs) grads.emplace_back(m.rows(), m.cols());
  evaluate(inputs, &grads);
  const double eps = 1e-6;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k][i];
      inputs[k][i] = orig + eps;
      const double fp = evaluate(inputs, nullptr);
      inputs[k][i] = orig - eps;
      const double fm = evaluate(inputs, nullptr);
      inputs[k][i] = orig;
      const double fd = (fp - fm) / (2.0 * eps);
      EXPECT_NEAR(grads[k][i], fd, tol * (1.0 + std::fabs(fd))) << "input " << k << " element " << i;
    }
  }
}

}  // namespace

TEST(Tape, DisconnectedParameterGetsZero) {
  Matrix a(2, 2, 1.5), b(3, 1, 2.0), ga(2, 2), gb(3, 1);
  Tape tp;
  const auto va = tp.param(a, ga);
  tp.param(b, gb);
  tp.backward(tp.sum_all(tp.silu(va)));
  for (double v : gb.values()) EXPECT_EQ(v, 0.0);
  for (double v : ga.values()) EXPECT_NE(v, 0.0);
}

TEST(Tape, SumGivesOnesAndFanOutAccumulates) {
  Matrix a(1, 5, 0.3), ga(1, 5);
  {
    Tape tp;
    tp.backward(tp.sum_all(tp.param(a, ga)));
  }
  for (double v : ga.values()) EXPECT_EQ(v, 1.0);
  ga.fill(0.0);
  Tape tp;
  const auto va = tp.param(a, ga);
  tp.backward(tp.sum_all(tp.add(va, tp.add(va, va))));
  for (double v : ga.values()) EXPECT_EQ(v, 3.0);
}

TEST(Tape, NonScalarRootRejected) {
  Matrix a(2, 2), ga(2, 2);
  Tape tp;
  const auto va = tp.param(a, ga);
  EXPECT_THROW(tp.backward(va), ArgumentError);
  Matrix wrong(3, 3);
  EXPECT_THROW(tp.param(a, wrong), ShapeError);
}

TEST(TapeOps, ElementwiseAndLinear) {
  Rng rng(1);
  const Matrix x = random_matrix(rng, 4, 3), y = random_matrix(rng, 4, 3), w = random_matrix(rng, 3, 5);
  const Matrix row = random_matrix(rng, 1, 3);
  expect_op_gradient({x, w}, [](Tape& tp, const auto& v) { return tp.matmul(v[0], v[1]); });
  expect_op_gradient({x, y}, [](Tape& tp, const auto& v) { return tp.mul(v[0], v[1]); });
  expect_op_gradient({x, y}, [](Tape& tp, const auto& v) { return tp.add(v[0], v[1]); });
  expect_op_gradient({x, row}, [](Tape& tp, const auto& v) { return tp.add_row(v[0], v[1]); });
  expect_op_gradient({x}, [](Tape& tp, const auto& v) { return tp.silu(v[0]); });
  expect_op_gradient({x}, [](Tape& tp, const auto& v) { return tp.softplus(v[0]); });
  const Matrix f = random_matrix(rng, 4, 3);
  expect_op_gradient({x}, [f](Tape& tp, const auto& v) { return tp.scale_by(v[0], f); });
  expect_op_gradient({x}, [](Tape& tp, const auto& v) { return tp.columns(v[0], 1, 2); });
  expect_op_gradient({x}, [](Tape& tp, const auto& v) { return tp.slice_row(v[0], 2); });
}

TEST(TapeOps, GatherSkipsZeroRow) {
  Rng rng(2);
  Matrix table = random_matrix(rng, 6, 3), g(6, 3);
  Tape tp;
  const auto out = tp.gather(tp.param(table, g), {0, 2, 2, 5}, true);
  tp.backward(tp.sum_all(out));
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(g(0, j), 0.0);
    EXPECT_EQ(g(2, j), 2.0);
    EXPECT_EQ(g(5, j), 1.0);
    EXPECT_EQ(g(1, j), 0.0);
  }
  expect_op_gradient({table}, [](Tape& t, const auto& v) { return t.gather(v[0], {1, 3, 1}); });
  Tape bad;
  EXPECT_THROW(bad.gather(bad.input(table), {6}), ShapeError);
}

TEST(TapeOps, NormConvScan) {
  Rng rng(3);
  const Matrix x = random_matrix(rng, 5, 4, -2, 2), scale = random_matrix(rng, 1, 4, 0.5, 1.5);
  expect_op_gradient({x, scale}, [](Tape& tp, const auto& v) { return tp.rms_norm(v[0], v[1]); });
  const Matrix kernel = random_matrix(rng, 3, 4);
  expect_op_gradient({x, kernel}, [](Tape& tp, const auto& v) { return tp.causal_conv(v[0], v[1]); });
  const std::size_t L = 7, di = 3, N = 4;
  const Matrix u = random_matrix(rng, L, di), delta = random_matrix(rng, L, di, 0.05, 1.5);
  const Matrix b = random_matrix(rng, L, N), c = random_matrix(rng, L, N), a_log = random_matrix(rng, di, N, -1, 1.5);
  expect_op_gradient({u, delta, b, c, a_log},
                     [](Tape& tp, const auto& v) { return tp.selective_scan(v[0], v[1], v[2], v[3], v[4]); }, 1e-6);
}

TEST(TapeOps, ScanSmallStepBranch) {
  // delta * a around 1e-5 exercises the series branch of d(gain)/da.
  Rng rng(4);
  const std::size_t L = 5, di = 2, N = 3;
  const Matrix u = random_matrix(rng, L, di), delta = random_matrix(rng, L, di, 1e-6, 2e-6);
  const Matrix b = random_matrix(rng, L, N), c = random_matrix(rng, L, N), a_log = random_matrix(rng, di, N, 0.5, 2.0);
  expect_op_gradient({u, delta, b, c, a_log},
                     [](Tape& tp, const auto& v) { return tp.selective_scan(v[0], v[1], v[2], v[3], v[4]); }, 1e-5);
}

TEST(TapeOps, Time2VecAndLosses) {
  Rng rng(5);
  const Matrix omega = random_matrix(rng, 1, 4), phi = random_matrix(rng, 1, 4);
  expect_op_gradient({omega, phi}, [](Tape& tp, const auto& v) {
    return tp.time2vec(v[0], v[1], {0.0, 1.5, 3.0, 7.25}, {true, true, false, true});
  });
  const Matrix logits = random_matrix(rng, 3, 6, -3, 3);
  expect_op_gradient({logits}, [](Tape& tp, const auto& v) { return tp.log_softmax(v[0]); });
  expect_op_gradient({logits},
                     [](Tape& tp, const auto& v) { return tp.nll(tp.log_softmax(v[0]), {0, 1, 2}, {5, 0, 3}, 0.7); });
  const Matrix z(1, 1, 0.4);
  for (int y : {0, 1}) {
    expect_op_gradient({z}, [y](Tape& tp, const auto& v) { return tp.bce_with_logit(v[0], y, 1.3); });
  }
}

TEST(FullModel, SampledFiniteDifferences) {
  auto catalog = fixtures::small_catalog();
  ModelConfig cfg;
  cfg.d = 8;
  cfg.n_blocks = 2;
  cfg.state_size = 4;
  cfg.time_width = 4;
  cfg.context_length = 24;
  cfg.vocab_size = 34;
  cfg.dropout = 0.0;
  cfg.seed = 11;
  Model m = init_model(cfg);
  Rng rng(6);
  fill_normal(m.head_bias, rng, 0.5);
  m.clf_bias[0] = 0.2;
  const auto seq = apply_task_token(encode_patient(fixtures::three_visit_record(), Vocabulary::build(catalog), 24),
                                    TaskKind::MOR);
  for (const auto& r : gradcheck::check(m, seq, 1, 1e-5, 1e-4, 3)) {
    EXPECT_EQ(r.failed, 0u) << r.name << " worst relative error " << r.worst;
  }
}
