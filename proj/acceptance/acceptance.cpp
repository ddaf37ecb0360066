// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ehrmamba/checkpoint.hpp"
#include "ehrmamba/config.hpp"
#include "ehrmamba/interpret.hpp"
#include "ehrmamba/metrics.hpp"
#include "ehrmamba/pipeline.hpp"
#include "ehrmamba/train.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "label_oracle.hpp"
#include "oracles.hpp"

using namespace ehrmamba;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double normal01(Rng& rng) { return sample::normal(rng); }

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

std::size_t uniform_size(Rng& rng, std::size_t lo, std::size_t hi) {
  return static_cast<std::size_t>(sample::uniform_int(rng, static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
}

// 1. Recurrent and convolutional evaluation of random LTI systems agree.
Outcome lti_equivalence() {
  Rng rng(101);
  double worst = 0.0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t L = uniform_size(rng, 1, 64), N = uniform_size(rng, 1, 16);
    std::vector<double> a(N), b(N), c(N), x(L);
    for (std::size_t n = 0; n < N; ++n) {
      a[n] = -std::exp(uniform(rng, -3.0, 1.0));
      b[n] = normal01(rng);
      c[n] = normal01(rng);
    }
    for (auto& v : x) v = normal01(rng);
    const auto s = DiscreteSsm::from_continuous(a, b, c, std::exp(uniform(rng, -6.0, 0.0)));
    const auto yr = ssm_recurrence(x, s), yc = ssm_convolution(x, s);
    for (std::size_t t = 0; t < L; ++t) worst = std::max(worst, std::fabs(yr[t] - yc[t]));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-10 && secs < 10.0,
          "1000 systems, max |recurrent - convolution| = " + num(worst) + " in " + num(secs) + " s"};
}

// 2. Chunked selective scan matches the sequential scan.
Outcome chunked_scan() {
  Rng rng(202);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t L = uniform_size(rng, 1, 128), di = uniform_size(rng, 1, 8), N = uniform_size(rng, 1, 16);
    Matrix u(L, di), delta(L, di), B(L, N), C(L, N), a_log(di, N);
    for (auto& v : u.values()) v = normal01(rng);
    for (auto& v : delta.values()) v = std::log1p(std::exp(normal01(rng) - 2.0));
    for (auto& v : B.values()) v = normal01(rng);
    for (auto& v : C.values()) v = normal01(rng);
    for (auto& v : a_log.values()) v = uniform(rng, -2.0, 3.0);
    const std::size_t chunk = uniform_size(rng, 1, L);
    const Matrix ys = selective_scan(u, delta, B, C, a_log), yc = selective_scan_chunked(u, delta, B, C, a_log, chunk);
    for (std::size_t i = 0; i < ys.size(); ++i) {
      worst = std::max(worst, std::fabs(ys[i] - yc[i]) / std::max(1.0, std::fabs(ys[i])));
    }
  }
  return {worst <= 1e-10, "100 instances, max scaled difference = " + num(worst)};
}

// 3. ZOH discretization against the long double series oracle.
Outcome zoh_grid() {
  double worst_a = 0.0, worst_b = 0.0;
  std::size_t cases = 0, small = 0;
  for (int i = 0; i < 25; ++i) {
    const double a = -std::pow(10.0, -4.0 + 6.0 * i / 24.0);
    for (int j = 0; j < 80; ++j) {
      const double delta = std::pow(10.0, -13.0 + 13.5 * j / 79.0);
      const double b = 1.0 + 0.1 * j;
      const auto got = discretize_zoh(a, b, delta);
      const auto want = oracles::zoh(a, b, delta);
      worst_a = std::max(worst_a, static_cast<double>(std::fabs((got.a_bar - want.a_bar) / want.a_bar)));
      worst_b = std::max(worst_b, static_cast<double>(std::fabs((got.b_bar - want.b_bar) / want.b_bar)));
      ++cases;
      small += std::fabs(a * delta) < 1e-8;
    }
  }
  return {worst_a <= 1e-12 && worst_b <= 1e-12 && small > 0,
          std::to_string(cases) + " grid points (" + std::to_string(small) + " with |delta a| < 1e-8), max rel err a_bar " +
              num(worst_a) + ", b_bar " + num(worst_b)};
}

// Four visits of four events each: 32 tokens with [CLS], intervals and
// visit delimiters.
PatientRecord gradcheck_record() {
  using fixtures::ev;
  PatientRecord r;
  r.patient_id = "gc";
  r.birth_date = make_timestamp(1955, 6, 1);
  const char* codes[] = {"proc_0", "proc_1", "med_0", "med_1", "lab_0"};
  const EventKind kinds[] = {EventKind::Procedure, EventKind::Procedure, EventKind::Medication, EventKind::Medication,
                             EventKind::Lab};
  Timestamp t = make_timestamp(2016, 2, 3, 9);
  for (int k = 0; k < 4; ++k) {
    Visit v{"v" + std::to_string(k), t, t + 2 * kSecondsPerDay, {}};
    for (int e = 0; e < 4; ++e) {
      const int c = (k + 2 * e) % 5;
      v.events.push_back(ev(codes[c], kinds[c], t + (e + 1) * 3 * kSecondsPerHour));
    }
    r.visits.push_back(v);
    t = v.end + (10 + 25 * k) * kSecondsPerDay;
  }
  return r;
}

// 4. Taped gradients of NTP + BCE against central finite differences over
// every parameter element.
Outcome gradient_check() {
  std::vector<CatalogEntry> cat{{"proc_0", EventKind::Procedure}, {"proc_1", EventKind::Procedure},
                                {"med_0", EventKind::Medication}, {"med_1", EventKind::Medication},
                                {"lab_0", EventKind::Lab}};
  const auto vocab = Vocabulary::build(cat);
  ModelConfig c;
  c.d = 16;
  c.n_blocks = 2;
  c.state_size = 8;
  c.context_length = 32;
  c.time_width = 8;
  c.vocab_size = vocab.size();
  c.dropout = 0.0;
  c.seed = 44;
  Model m = init_model(c);
  Rng rng(45);
  fill_normal(m.clf_weight, rng, 0.5);
  fill_normal(m.head_bias, rng, 0.1);
  m.clf_bias[0] = 0.2;
  const auto seq = apply_task_token(encode_patient(gradcheck_record(), vocab, c.context_length), TaskKind::MOR);
  if (seq.true_length != 32) return {false, "gradient-check sequence has length " + std::to_string(seq.true_length)};
  const auto reports = gradcheck::check(m, seq, 1, 1e-5, 1e-4, 1);
  std::size_t checked = 0, failed = 0;
  double worst = 0.0;
  std::string worst_name;
  for (const auto& r : reports) {
    checked += r.checked;
    failed += r.failed;
    if (r.worst > worst) {
      worst = r.worst;
      worst_name = r.name;
    }
  }
  return {failed == 0 && checked == parameter_count(m),
          std::to_string(checked) + " elements (v = " + std::to_string(vocab.size()) + "), " + std::to_string(failed) +
              " above 1e-4, worst " + num(worst) + " in " + worst_name};
}

// Deterministic bigram chains over 19 event codes in a 50-token vocabulary.
std::vector<PatientSequence> bigram_corpus(std::size_t n, std::size_t length, std::uint64_t seed,
                                           const std::vector<TokenId>& successor) {
  Rng rng(seed);
  const TokenId first = tokens::kSpecialCount, count = static_cast<TokenId>(successor.size());
  std::vector<PatientSequence> out;
  for (std::size_t i = 0; i < n; ++i) {
    PatientSequence s;
    s.patient_id = "b" + std::to_string(i);
    TokenId id = first + static_cast<TokenId>(sample::uniform_int(rng, 0, count - 1));
    for (std::size_t j = 0; j < length; ++j) {
      s.push(id, TokenType::Medication, 60.0, 0.01 * static_cast<double>(j), 1, 1);
      id = successor[static_cast<std::size_t>(id - first)];
    }
    s.true_length = length;
    out.push_back(std::move(s));
  }
  return out;
}

// 5. Next-token pretraining learns a deterministic bigram corpus.
Outcome ntp_learnability() {
  const std::size_t codes = 50 - tokens::kSpecialCount;
  std::vector<TokenId> successor(codes);
  for (std::size_t i = 0; i < codes; ++i) successor[i] = tokens::kSpecialCount + static_cast<TokenId>(i);
  std::mt19937_64 perm_rng(5);
  std::shuffle(successor.begin(), successor.end(), perm_rng);
  const auto all = bigram_corpus(2000, 32, 55, successor);
  const std::vector<PatientSequence> train(all.begin(), all.begin() + 1800), heldout(all.begin() + 1800, all.end());
  ModelConfig c;  // desk scale: d = 64, 2 blocks, N = 16, l_c = 256
  c.vocab_size = 50;
  c.seed = 56;
  Model m = init_model(c);
  TrainConfig tc;
  tc.epochs = 20;
  tc.batch_size = 16;
  tc.seed = 57;
  double best = 0.0;
  std::size_t epochs = 0;
  const auto hook = [&](std::size_t epoch, const Model&, const TrainLog& log) {
    epochs = epoch;
    for (const auto& r : log) {
      if (r.split == "heldout") best = std::max(best, r.accuracy);
    }
    return best < 0.95;
  };
  pretrain(m, train, tc, &heldout, hook);
  return {best >= 0.95, "held-out next-token accuracy " + num(best) + " after " + std::to_string(epochs) + " epochs"};
}

// Shared by criteria 6 and 9: a model finetuned jointly on three tasks whose
// labels are the presence of a marker token.
struct ConditionRun {
  Model model;
  std::vector<PatientRecord> test;
  Vocabulary vocab;
  std::size_t epochs = 0;
  double train_seconds = 0.0;
};

const std::vector<TaskKind> kConditionTasks{TaskKind::C0, TaskKind::C1, TaskKind::C2};

const ConditionRun& condition_run() {
  static std::optional<ConditionRun> run;
  if (run) return *run;
  GeneratorConfig g;
  g.n_patients = 1000;
  g.seed = 61;
  const auto cohort = generate_cohort(g);
  const auto split = split_cohort(cohort.size(), kDefaultSplitRatios, 62);
  std::vector<PatientRecord> train = select(cohort, split.pretrain);
  const auto more = select(cohort, split.finetune);
  train.insert(train.end(), more.begin(), more.end());
  const auto labs = LabBinner::fit(train);
  for (auto& r : train) r = labs.apply(r);
  ConditionRun out;
  out.test = select(cohort, split.test);
  for (auto& r : out.test) r = labs.apply(r);
  out.vocab = Vocabulary::build(catalog_from_records(train));
  // Pipeline defaults: desk-scale model and the configured finetuning
  // schedule, run to completion.
  const RunConfig defaults;
  ModelConfig c = defaults.model;
  c.vocab_size = out.vocab.size();
  c.seed = 63;
  out.model = init_model(c);
  const auto examples = build_mpf_examples(train, out.vocab, c.context_length, kConditionTasks);
  TrainConfig tc = defaults.finetune;
  tc.seed = 64;
  const auto hook = [&](std::size_t epoch, const Model&, const TrainLog&) {
    out.epochs = epoch;
    return true;
  };
  const auto t0 = std::chrono::steady_clock::now();
  finetune_mpf(out.model, examples, kConditionTasks, tc, nullptr, hook);
  out.train_seconds = seconds_since(t0);
  run = std::move(out);
  return *run;
}

// 6. Joint finetuning separates token-determined labels and the prediction
// depends on the task token.
Outcome mpf_learnability() {
  const auto& run = condition_run();
  const std::size_t l_c = run.model.config.context_length;
  std::string detail = "after " + std::to_string(run.epochs) + " epochs:";
  bool pass = true;
  std::vector<std::vector<double>> yhat(3);
  for (std::size_t t = 0; t < 3; ++t) {
    std::vector<double> s;
    std::vector<int> y;
    for (const auto& r : run.test) {
      const auto labels = derive_labels(r);
      s.push_back(predict(run.model, apply_task_token(encode_patient(r, run.vocab, l_c), kConditionTasks[t])));
      y.push_back(*labels.get(kConditionTasks[t]));
    }
    yhat[t] = s;
    const double a = auroc(s, y);
    pass = pass && a >= 0.9;
    detail += " AUROC " + std::string(task_name(kConditionTasks[t])) + " " + num(a);
  }
  // Each swap between two task tokens must change the prediction of at least
  // 90% of test patients.
  const std::pair<std::size_t, std::size_t> swaps[] = {{0, 1}, {0, 2}, {1, 2}};
  const double n = static_cast<double>(run.test.size());
  double lowest = 1.0;
  for (const auto& [p, q] : swaps) {
    std::size_t changed = 0;
    for (std::size_t i = 0; i < run.test.size(); ++i) changed += std::fabs(yhat[p][i] - yhat[q][i]) > 1e-3;
    const double frac = static_cast<double>(changed) / n;
    lowest = std::min(lowest, frac);
    detail += ", swap " + std::string(task_name(kConditionTasks[p])) + "/" + std::string(task_name(kConditionTasks[q])) +
              " changes yhat (> 1e-3) for " + num(100.0 * frac) + "%";
  }
  pass = pass && lowest >= 0.9 && run.train_seconds < 900.0;
  detail += " of " + std::to_string(run.test.size()) + " test patients; training took " + num(run.train_seconds) + " s";
  return {pass, detail};
}

// 7. Recurrent inference time doubles with the sequence length and the
// state does not grow.
Outcome linear_scaling() {
  std::vector<CatalogEntry> cat;
  for (int i = 0; i < 20; ++i) cat.push_back({"med_" + std::to_string(i), EventKind::Medication});
  const auto vocab = Vocabulary::build(cat);
  ModelConfig c;
  c.context_length = 2048;
  c.vocab_size = vocab.size();
  c.seed = 71;
  const Model m = init_model(c);
  Rng rng(72);
  PatientSequence s;
  s.push(tokens::CLS, TokenType::Start);
  s.push(tokens::VS, TokenType::VisitStart);
  while (s.ids.size() < 2048) {
    s.push(tokens::kSpecialCount + static_cast<TokenId>(sample::uniform_int(rng, 0, 19)), TokenType::Medication, 60.0,
           0.001 * static_cast<double>(s.ids.size()), 1, 1);
  }
  s.true_length = s.ids.size();
  auto time_rows = [&](std::size_t rows) {
    const auto t0 = std::chrono::steady_clock::now();
    const Matrix H = recurrent_hidden_states(m, s, rows);
    const double secs = seconds_since(t0);
    if (!std::isfinite(H[H.size() - 1])) throw NumericalError("non-finite hidden state");
    return secs;
  };
  time_rows(256);
  bool pass = true;
  std::string detail;
  for (std::size_t L : {256u, 512u, 1024u}) {
    double t1 = 0.0, t2 = 0.0;
    for (int run = 0; run < 20; ++run) {
      t1 += time_rows(L);
      t2 += time_rows(2 * L);
    }
    const double ratio = t2 / t1;
    pass = pass && ratio >= 1.8 && ratio <= 2.4;
    detail += (detail.empty() ? "" : ", ") + std::string("T(") + std::to_string(2 * L) + ")/T(" + std::to_string(L) +
              ") = " + num(ratio);
  }
  std::set<std::size_t> sizes;
  for (std::size_t L : {1u, 256u, 512u, 1024u, 2048u}) {
    RecurrentState st = init_recurrent_state(m);
    for (std::size_t i = 0; i < L; ++i) recurrent_step(m, st, embed_token_row(m, s, i));
    sizes.insert(st.bytes());
  }
  pass = pass && sizes.size() == 1;
  detail += ", state " + std::to_string(*sizes.begin()) + " bytes" + (sizes.size() == 1 ? " at every length" : " varies");
  return {pass, detail};
}

// 8. AUROC, AUPRC and F1 against brute-force oracles.
Outcome metric_oracles() {
  Rng rng(81);
  double worst_roc = 0.0, worst_prc = 0.0, worst_f1 = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = uniform_size(rng, 2, 200);
    const double grid = uniform01(rng) < 0.5 ? 10.0 : 1e6;
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t k = 0; k < n; ++k) {
      s[k] = std::floor(uniform01(rng) * grid) / grid;
      y[k] = uniform01(rng) < 0.3 ? 1 : 0;
    }
    y[0] = 1;
    y[1] = 0;
    const double t = uniform01(rng);
    worst_roc = std::max(worst_roc, std::fabs(auroc(s, y) - oracles::pairwise_auroc(s, y)));
    worst_prc = std::max(worst_prc, std::fabs(auprc(s, y) - oracles::sweep_auprc(s, y)));
    worst_f1 = std::max(worst_f1, std::fabs(f1_score(s, y, t) - oracles::confusion_f1(s, y, t)));
  }
  return {worst_roc <= 1e-9 && worst_prc <= 1e-9 && worst_f1 <= 1e-9,
          "1000 instances, max |diff| AUROC " + num(worst_roc) + ", AUPRC " + num(worst_prc) + ", F1 " + num(worst_f1)};
}

// 9. Integrated-gradients completeness on the finetuned model.
Outcome ig_completeness() {
  const auto& run = condition_run();
  const std::size_t l_c = run.model.config.context_length;
  std::size_t n = 0, bounded = 0, monotone = 0;
  double worst_ratio = 0.0;
  for (const auto& r : run.test) {
    if (n == 50) break;
    const auto seq = apply_task_token(encode_patient(r, run.vocab, l_c), TaskKind::C0);
    const auto r16 = integrated_gradients(run.model, seq, 16), r64 = integrated_gradients(run.model, seq, 64),
               r256 = integrated_gradients(run.model, seq, 256);
    const double bound = 0.02 * std::fabs(r256.f_input - r256.f_baseline) + 1e-3;
    bounded += r256.residual <= bound;
    monotone += r16.residual >= r64.residual && r64.residual >= r256.residual;
    worst_ratio = std::max(worst_ratio, r256.residual / bound);
    ++n;
  }
  return {n == 50 && bounded == n && monotone == n,
          std::to_string(bounded) + "/" + std::to_string(n) + " within bound at 256 steps (worst residual/bound " +
              num(worst_ratio) + "), " + std::to_string(monotone) + "/" + std::to_string(n) +
              " non-increasing over 16, 64, 256 steps"};
}

// 10. The pipeline is reproducible and checkpoints round-trip byte for byte.
Outcome pipeline_determinism() {
  const fs::path dir = fs::temp_directory_path() / "ehrmamba_acceptance_pipeline";
  fs::remove_all(dir);
  const auto c = parse_config({}, {"seed=13", "gen.n_patients=120", "model.d=16", "model.n_blocks=1",
                                   "model.state_size=8", "model.context_length=128", "model.time_width=8",
                                   "pretrain.epochs=1", "finetune.epochs=2", "attribute.steps=16",
                                   "attribute.max_sequences=4", "path.workdir=" + dir.string()});
  std::ostringstream sink;
  auto run_all = [&] {
    pipeline::run_generate(c, sink);
    pipeline::run_pretrain(c, sink);
    pipeline::run_finetune(c, sink);
    pipeline::run_evaluate(c, sink);
    return pipeline::read_text(dir / "metrics.csv");
  };
  const std::string first = run_all();
  const auto ckpt_first = read_file_bytes(dir / "finetune.ckpt");
  const std::string second = run_all();
  const auto ckpt_second = read_file_bytes(dir / "finetune.ckpt");
  const auto ck = load_checkpoint(dir / "finetune.ckpt");
  const bool round_trip = serialize_checkpoint(ck.model, ck.metadata) == ckpt_second;
  fs::remove_all(dir);
  return {first == second && ckpt_first == ckpt_second && round_trip,
          std::string("metrics.csv ") + (first == second ? "identical" : "differs") + ", finetune.ckpt " +
              (ckpt_first == ckpt_second ? "identical" : "differs") + ", reload+save " +
              (round_trip ? "byte-identical" : "differs")};
}

// 11. Split counts, calendar-exact labels, and the 24 h LoS window.
Outcome data_contracts() {
  const auto s = split_cohort(100, kDefaultSplitRatios, 111);
  const bool counts = s.pretrain.size() == 57 && s.finetune.size() == 28 && s.test.size() == 15;
  std::mt19937_64 rng(112);
  std::size_t label_mismatch = 0;
  for (int i = 0; i < 500; ++i) {
    const auto r = label_oracle::random_record(rng, i);
    const auto got = derive_labels(r);
    const auto want = label_oracle::oracle_labels(r);
    label_mismatch += got.mortality != want.mortality || got.los != want.los || got.readmission != want.readmission ||
                      got.c0 != want.conditions[0] || got.c1 != want.conditions[1] || got.c2 != want.conditions[2];
  }
  GeneratorConfig g;
  g.n_patients = 500;
  g.seed = 113;
  const auto cohort = generate_cohort(g);
  const auto vocab = Vocabulary::build(generator_catalog(g));
  std::size_t los_views = 0, late = 0;
  for (const auto& r : cohort) {
    const auto view = task_view(r, TaskKind::LOS, derive_labels(r));
    if (!view) continue;
    ++los_views;
    const Timestamp cutoff = r.visits.back().start + 24 * kSecondsPerHour;
    for (const auto& v : view->visits) {
      for (const auto& e : v.events) late += e.timestamp > cutoff;
    }
    const auto seq = encode_patient(*view, vocab, 1024);
    const double limit = weeks_between(r.visits.front().start, cutoff);
    for (std::size_t i = 0; i < seq.true_length; ++i) late += seq.times[i] > limit + 1e-12;
  }
  return {counts && label_mismatch == 0 && late == 0 && los_views > 0,
          "split " + std::to_string(s.pretrain.size()) + "/" + std::to_string(s.finetune.size()) + "/" +
              std::to_string(s.test.size()) + ", " + std::to_string(label_mismatch) + "/500 label mismatches, " +
              std::to_string(late) + " tokens past the LoS window in " + std::to_string(los_views) + " views"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"recurrent/convolution equivalence", lti_equivalence},
      {"chunked selective scan", chunked_scan},
      {"ZOH discretization accuracy", zoh_grid},
      {"gradient check", gradient_check},
      {"next-token learnability", ntp_learnability},
      {"multitask finetuning learnability", mpf_learnability},
      {"linear-time recurrent inference", linear_scaling},
      {"metric oracles", metric_oracles},
      {"integrated-gradients completeness", ig_completeness},
      {"pipeline determinism", pipeline_determinism},
      {"data contracts", data_contracts},
  };
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(static_cast<std::size_t>(std::stoul(argv[i])));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.count(i + 1)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << (i + 1) << " " << criteria[i].first << ": " << o.detail
              << " [" << num(seconds_since(t0)) << " s]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
