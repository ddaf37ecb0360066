#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ehrmamba/checkpoint.hpp"
#include "ehrmamba/config.hpp"
#include "ehrmamba/ehr_data.hpp"
#include "ehrmamba/interpret.hpp"
#include "ehrmamba/metrics.hpp"
#include "ehrmamba/model.hpp"
#include "ehrmamba/sequence.hpp"
#include "ehrmamba/train.hpp"

// Subcommand bodies. Every artifact lives under path.workdir:
//   cohort.ndjson  split.tsv  labs.tsv  vocab.tsv
//   pretrain.ckpt  finetune.ckpt
//   loss_pretrain.csv  loss_finetune.csv  metrics.csv  forecast.csv
//   attribution.csv  <command>.txt
namespace ehrmamba::pipeline {

namespace fs = std::filesystem;

inline fs::path workdir(const RunConfig& c) {
  if (c.workdir.empty()) throw ConfigError("missing required path: path.workdir");
  return fs::path(c.workdir);
}

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read '" + p.string() + "'; run the earlier pipeline stage first");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& p, const std::string& s) { write_file_atomic(p, s); }

inline std::string fmt(double v) { return detail::fmt_double(v); }

inline Metadata checkpoint_metadata(const RunConfig& c, std::string_view command) {
  return {{"code_version", std::string(kCodeVersion)},
          {"command", std::string(command)},
          {"config_hash", config_hash(c)},
          {"seed", std::to_string(c.seed)},
          {"config", [&] {
             std::string s = echo_config(c);
             for (auto& ch : s) ch = ch == '\n' ? ';' : ch;
             return s;
           }()}};
}

// ---------------------------------------------------------------------------
// Cohort and split persistence.

struct Dataset {
  std::vector<PatientRecord> records;
  SplitAssignment split;
};

inline std::string split_tsv(const std::vector<PatientRecord>& records, const SplitAssignment& s) {
  std::map<std::size_t, std::string> name;
  for (auto i : s.pretrain) name[i] = "pretrain";
  for (auto i : s.finetune) name[i] = "finetune";
  for (auto i : s.test) name[i] = "test";
  std::string out;
  for (const auto& [i, n] : name) out += records[i].patient_id + "\t" + n + "\n";
  return out;
}

inline Dataset load_dataset(const RunConfig& c) {
  const fs::path dir = workdir(c);
  Dataset ds;
  std::istringstream cohort(read_text(dir / "cohort.ndjson"));
  ds.records = ingest_fhir_lines(cohort).records;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < ds.records.size(); ++i) index[ds.records[i].patient_id] = i;
  std::istringstream split(read_text(dir / "split.tsv"));
  std::string id, which;
  while (split >> id >> which) {
    auto it = index.find(id);
    if (it == index.end()) throw DataError("split.tsv names unknown patient '" + id + "'");
    if (which == "pretrain") ds.split.pretrain.push_back(it->second);
    else if (which == "finetune") ds.split.finetune.push_back(it->second);
    else if (which == "test") ds.split.test.push_back(it->second);
    else throw DataError("split.tsv: unknown split '" + which + "'");
  }
  return ds;
}

inline void write_cohort(const RunConfig& c, const std::vector<PatientRecord>& records, std::ostream& log) {
  const fs::path dir = workdir(c);
  std::ostringstream nd;
  write_fhir_lines(records, nd);
  write_text(dir / "cohort.ndjson", nd.str());
  const auto split = split_cohort(records.size(), c.split, derive_seed(c.seed, 3));
  write_text(dir / "split.tsv", split_tsv(records, split));
  log << "patients=" << records.size() << " pretrain=" << split.pretrain.size() << " finetune=" << split.finetune.size()
      << " test=" << split.test.size() << "\n";
}

// ---------------------------------------------------------------------------
// Subcommands.

inline void run_generate(const RunConfig& c, std::ostream& log) {
  const auto records = generate_cohort(c.generator);
  write_cohort(c, records, log);
  std::ostringstream summary;
  summary << artifact_header(c, "generate");
  std::map<TaskKind, std::pair<std::size_t, std::size_t>> counts;
  for (const auto& r : records) {
    const auto labels = derive_labels(r);
    for (TaskKind t : kAllTasks) {
      if (auto y = labels.get(t)) {
        ++counts[t].first;
        counts[t].second += static_cast<std::size_t>(*y);
      }
    }
  }
  summary << "task,defined,positive\n";
  for (const auto& [t, n] : counts) summary << task_name(t) << "," << n.first << "," << n.second << "\n";
  write_text(workdir(c) / "generate.txt", summary.str());
}

inline void run_ingest(const RunConfig& c, std::ostream& log) {
  if (c.input.empty()) throw ConfigError("missing required path: path.input");
  std::ifstream in(c.input);
  if (!in) throw DataError("cannot read input '" + c.input + "'");
  const auto result = ingest_fhir_lines(in);
  log << "skipped_unknown_resources=" << result.skipped << "\n";
  write_cohort(c, result.records, log);
}

struct Prepared {
  Dataset data;
  LabBinner labs;
  Vocabulary vocab;
  std::vector<PatientRecord> pretrain, finetune, test;  // lab-binned
};

inline std::vector<PatientRecord> binned(const LabBinner& b, const std::vector<PatientRecord>& records) {
  std::vector<PatientRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(b.apply(r));
  return out;
}

// Fits lab bins and the vocabulary on the pretraining split when `fit` is
// set, otherwise reads them back from the workdir.
inline Prepared prepare(const RunConfig& c, bool fit) {
  Prepared p;
  p.data = load_dataset(c);
  const auto pre_raw = select(p.data.records, p.data.split.pretrain);
  const fs::path dir = workdir(c);
  if (fit) {
    p.labs = LabBinner::fit(pre_raw);
    std::ostringstream ls;
    p.labs.write_tsv(ls);
    write_text(dir / "labs.tsv", ls.str());
  } else {
    std::istringstream ls(read_text(dir / "labs.tsv"));
    p.labs = LabBinner::read_tsv(ls);
  }
  p.pretrain = binned(p.labs, pre_raw);
  p.finetune = binned(p.labs, select(p.data.records, p.data.split.finetune));
  p.test = binned(p.labs, select(p.data.records, p.data.split.test));
  if (fit) {
    p.vocab = Vocabulary::build(catalog_from_records(p.pretrain));
    std::ostringstream vs;
    p.vocab.write_tsv(vs);
    write_text(dir / "vocab.tsv", vs.str());
  } else {
    std::istringstream vs(read_text(dir / "vocab.tsv"));
    p.vocab = Vocabulary::read_tsv(vs);
  }
  return p;
}

inline std::vector<PatientSequence> encode_all(const std::vector<PatientRecord>& records, const Vocabulary& v, std::size_t l_c) {
  std::vector<PatientSequence> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(encode_patient(r, v, l_c));
  return out;
}

inline std::string loss_csv(const RunConfig& c, std::string_view command, const TrainLog& log) {
  std::string out = artifact_header(c, command) + "epoch,split,objective,loss,accuracy\n";
  for (const auto& r : log) {
    out += std::to_string(r.epoch) + "," + r.split + "," + r.objective + "," + fmt(r.loss) + "," + fmt(r.accuracy) + "\n";
  }
  return out;
}

inline void run_pretrain(const RunConfig& c, std::ostream& log) {
  const Prepared p = prepare(c, true);
  ModelConfig mc = c.model;
  mc.vocab_size = p.vocab.size();
  Model m = init_model(mc);
  const auto seqs = encode_all(p.pretrain, p.vocab, mc.context_length);
  const fs::path dir = workdir(c);
  const auto hook = [&](std::size_t epoch, const Model& cur, const TrainLog& records) {
    save_checkpoint(cur, dir / "pretrain.ckpt", checkpoint_metadata(c, "pretrain"));
    for (const auto& r : records) log << "epoch " << epoch << " " << r.split << " " << r.objective << " loss=" << r.loss << " acc=" << r.accuracy << "\n";
    return true;
  };
  const TrainLog tl = pretrain(m, seqs, c.pretrain, nullptr, hook);
  if (c.pretrain.epochs == 0) save_checkpoint(m, dir / "pretrain.ckpt", checkpoint_metadata(c, "pretrain"));
  write_text(dir / "loss_pretrain.csv", loss_csv(c, "pretrain", tl));
}

inline Model load_model(const RunConfig& c, const std::string& name) {
  return load_checkpoint(workdir(c) / name).model;
}

inline void run_finetune(const RunConfig& c, std::ostream& log) {
  const Prepared p = prepare(c, false);
  Model m = load_model(c, "pretrain.ckpt");
  std::map<TaskKind, std::size_t> counts;
  const auto examples = build_mpf_examples(p.finetune, p.vocab, m.config.context_length, c.finetune.tasks, &counts);
  for (const auto& [t, n] : counts) log << "task " << task_name(t) << " examples=" << n << "\n";
  std::vector<std::string> warnings;
  const fs::path dir = workdir(c);
  const auto hook = [&](std::size_t epoch, const Model& cur, const TrainLog& records) {
    save_checkpoint(cur, dir / "finetune.ckpt", checkpoint_metadata(c, "finetune"));
    for (const auto& r : records) log << "epoch " << epoch << " loss=" << r.loss << " acc=" << r.accuracy << "\n";
    return true;
  };
  const TrainLog tl = finetune_mpf(m, examples, c.finetune.tasks, c.finetune, &warnings, hook);
  for (const auto& w : warnings) log << "warning: " << w << "\n";
  if (c.finetune.epochs == 0) save_checkpoint(m, dir / "finetune.ckpt", checkpoint_metadata(c, "finetune"));
  write_text(dir / "loss_finetune.csv", loss_csv(c, "finetune", tl));
}

inline void run_evaluate(const RunConfig& c, std::ostream& log) {
  const Prepared p = prepare(c, false);
  const Model m = load_model(c, "finetune.ckpt");
  std::string out = artifact_header(c, "evaluate") + "task,n,n_pos,n_neg,auroc,auprc,f1,threshold\n";
  for (TaskKind t : c.finetune.tasks) {
    const auto examples = build_mpf_examples(p.test, p.vocab, m.config.context_length, {t});
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& e : examples) {
      scores.push_back(predict(m, e.sequence));
      labels.push_back(e.label);
    }
    std::size_t pos = 0;
    for (int y : labels) pos += static_cast<std::size_t>(y);
    const double f1 = f1_score(scores, labels, c.threshold);
    std::string auroc_s = "nan", auprc_s = "nan";
    if (pos > 0 && pos < labels.size()) {
      const auto r = compute_metrics(scores, labels, c.threshold);
      auroc_s = fmt(r.auroc);
      auprc_s = fmt(r.auprc);
    } else {
      log << "warning: task " << task_name(t) << " has a single class on the test split; AUROC/AUPRC undefined\n";
    }
    out += std::string(task_name(t)) + "," + std::to_string(labels.size()) + "," + std::to_string(pos) + "," +
           std::to_string(labels.size() - pos) + "," + auroc_s + "," + auprc_s + "," + fmt(f1) + "," + fmt(c.threshold) + "\n";
    log << task_name(t) << " n=" << labels.size() << " auroc=" << auroc_s << " auprc=" << auprc_s << " f1=" << f1 << "\n";
  }
  write_text(workdir(c) / "metrics.csv", out);
}

inline void run_forecast(const RunConfig& c, std::ostream& log) {
  const Prepared p = prepare(c, false);
  const Model m = load_model(c, "pretrain.ckpt");
  ForecastReport rep;
  rep.train = forecasting_eval(m, encode_all(p.pretrain, p.vocab, m.config.context_length), &p.vocab);
  rep.test = forecasting_eval(m, encode_all(p.test, p.vocab, m.config.context_length), &p.vocab);
  std::string out = artifact_header(c, "forecast") + "split,horizon,accuracy,cosine,evaluated,skipped\n";
  for (const auto& [name, r] : {std::pair<std::string, const ForecastSplitReport*>{"train", &rep.train}, {"test", &rep.test}}) {
    for (std::size_t h = 0; h < kForecastHorizons.size(); ++h) {
      out += name + "," + std::to_string(kForecastHorizons[h]) + "," + fmt(r->accuracy[h]) + "," + fmt(r->cosine[h]) + "," +
             std::to_string(r->evaluated) + "," + std::to_string(r->skipped) + "\n";
    }
    log << name << " acc@1=" << r->accuracy[0] << " acc@10=" << r->accuracy[3] << " evaluated=" << r->evaluated
        << " skipped=" << r->skipped << "\n";
  }
  write_text(workdir(c) / "forecast.csv", out);
}

inline void run_attribute(const RunConfig& c, std::ostream& log) {
  const Prepared p = prepare(c, false);
  const Model m = load_model(c, "finetune.ckpt");
  auto examples = build_mpf_examples(p.test, p.vocab, m.config.context_length, {c.ig_task});
  if (examples.size() > c.ig_sequences) examples.resize(c.ig_sequences);
  if (examples.empty()) throw DataError("attribute: no test examples for task " + std::string(task_name(c.ig_task)));
  std::vector<AttributionReport> reports;
  double worst = 0.0;
  for (const auto& e : examples) {
    reports.push_back(integrated_gradients(m, e.sequence, c.ig_steps));
    worst = std::max(worst, reports.back().residual);
  }
  std::map<TokenType, std::size_t> counts;
  for (const auto& r : reports) {
    for (TokenType t : r.types) ++counts[t];
  }
  std::string out = artifact_header(c, "attribute") + "token_type,mean_attribution,positions\n";
  for (const auto& [t, mean] : pooled_type_means(reports)) {
    out += std::string(token_type_name(t)) + "," + fmt(mean) + "," + std::to_string(counts[t]) + "\n";
  }
  write_text(workdir(c) / "attribution.csv", out);
  log << "sequences=" << reports.size() << " max_completeness_residual=" << worst << "\n";
}

inline void inspect_checkpoint(const fs::path& path, std::ostream& out) {
  const auto ck = load_checkpoint(path);
  out << "format_version=" << kCheckpointVersion << "\n";
  for (const auto& [k, v] : ck.metadata) out << k << "=" << v << "\n";
  std::size_t total = 0;
  for_each_parameter(ck.model, [&](const std::string& name, const Matrix& x) {
    out << "tensor " << name << " " << x.shape_string() << "\n";
    total += x.size();
  });
  out << "parameters=" << total << "\n";
}

}  // namespace ehrmamba::pipeline
