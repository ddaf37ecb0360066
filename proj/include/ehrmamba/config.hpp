#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ehrmamba/ehr_data.hpp"
#include "ehrmamba/error.hpp"
#include "ehrmamba/model.hpp"
#include "ehrmamba/train.hpp"

namespace ehrmamba {

inline constexpr std::string_view kCodeVersion = "1.0.0";

// Everything a CLI run needs, read from key=value text with overrides.
struct RunConfig {
  std::uint64_t seed = 7;
  GeneratorConfig generator;
  ModelConfig model;
  TrainConfig pretrain;
  TrainConfig finetune;
  std::array<double, 3> split = kDefaultSplitRatios;
  double threshold = 0.5;
  std::size_t ig_steps = 64;
  TaskKind ig_task = TaskKind::MOR;
  std::size_t ig_sequences = 50;
  std::string workdir;
  std::string input;

  RunConfig() {
    pretrain.epochs = 5;
    finetune.epochs = 10;
    finetune.peak_lr = 1e-3;
    finetune.floor_lr = 1e-5;
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "' as a number");
  }
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + text + "'");
}

inline std::vector<TaskKind> parse_task_list(const std::string& key, const std::string& text) {
  std::vector<TaskKind> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(parse_task(item));
    } catch (const ArgumentError&) {
      throw ConfigError("config key '" + key + "': unknown task '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("config key '" + key + "': empty task list");
  return out;
}

inline std::string format_task_list(const std::vector<TaskKind>& tasks) {
  std::string s;
  for (std::size_t i = 0; i < tasks.size(); ++i) s += (i ? "," : "") + std::string(task_name(tasks[i]));
  return s;
}

}  // namespace detail

struct ConfigKey {
  std::string key;
  std::string doc;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

// The full key table; its order is the echo order.
inline const std::vector<ConfigKey>& config_keys() {
  using detail::fmt_double;
  using detail::parse_number;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    auto sz = [&](std::string key, std::string doc, auto field) {
      k.push_back({key, doc, [field](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); },
                   [field, key](RunConfig& c, const std::string& v) { field(c) = parse_number<std::size_t>(key, v); }});
    };
    auto dbl = [&](std::string key, std::string doc, auto field) {
      k.push_back({key, doc, [field](const RunConfig& c) { return fmt_double(field(const_cast<RunConfig&>(c))); },
                   [field, key](RunConfig& c, const std::string& v) { field(c) = parse_number<double>(key, v); }});
    };
    auto integer = [&](std::string key, std::string doc, auto field) {
      k.push_back({key, doc, [field](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); },
                   [field, key](RunConfig& c, const std::string& v) { field(c) = parse_number<int>(key, v); }});
    };
    auto boolean = [&](std::string key, std::string doc, auto field) {
      k.push_back({key, doc, [field](const RunConfig& c) { return std::string(field(const_cast<RunConfig&>(c)) ? "true" : "false"); },
                   [field, key](RunConfig& c, const std::string& v) { field(c) = detail::parse_bool(key, v); }});
    };
    auto text = [&](std::string key, std::string doc, auto field) {
      k.push_back({key, doc, [field](const RunConfig& c) { return field(const_cast<RunConfig&>(c)); },
                   [field](RunConfig& c, const std::string& v) { field(c) = v; }});
    };

    k.push_back({"seed", "master seed for generation, initialization and training",
                 [](const RunConfig& c) { return std::to_string(c.seed); },
                 [](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); }});
    text("path.workdir", "directory holding every artifact of a run (required)", [](RunConfig& c) -> std::string& { return c.workdir; });
    text("path.input", "FHIR NDJSON file read by `ingest`", [](RunConfig& c) -> std::string& { return c.input; });

    sz("gen.n_patients", "number of synthetic patients", [](RunConfig& c) -> std::size_t& { return c.generator.n_patients; });
    dbl("gen.mean_extra_visits", "mean of the Poisson number of visits beyond the first", [](RunConfig& c) -> double& { return c.generator.mean_extra_visits; });
    integer("gen.max_visits", "cap on visits per patient", [](RunConfig& c) -> int& { return c.generator.max_visits; });
    dbl("gen.mean_events_per_visit", "mean events per visit (>= 1)", [](RunConfig& c) -> double& { return c.generator.mean_events_per_visit; });
    integer("gen.n_procedures", "procedure concepts", [](RunConfig& c) -> int& { return c.generator.n_procedures; });
    integer("gen.n_medications", "medication concepts", [](RunConfig& c) -> int& { return c.generator.n_medications; });
    integer("gen.n_labs", "lab codes (each binned into five concepts)", [](RunConfig& c) -> int& { return c.generator.n_labs; });
    dbl("gen.p_frail", "prevalence of the frailty factor", [](RunConfig& c) -> double& { return c.generator.p_frail; });
    dbl("gen.p_condition", "prevalence of each of the three conditions", [](RunConfig& c) -> double& { return c.generator.p_condition; });
    dbl("gen.mortality_signal", "0: mortality independent of tokens, 1: fully determined by frailty", [](RunConfig& c) -> double& { return c.generator.mortality_signal; });
    dbl("gen.base_mortality", "mortality rate of the token-independent component", [](RunConfig& c) -> double& { return c.generator.base_mortality; });
    dbl("gen.severity_rate", "share of a frail patient's events drawn from severity concepts", [](RunConfig& c) -> double& { return c.generator.severity_rate; });
    dbl("gen.condition_signal", "per-visit probability that a condition emits its marker", [](RunConfig& c) -> double& { return c.generator.condition_signal; });

    sz("model.d", "embedding size", [](RunConfig& c) -> std::size_t& { return c.model.d; });
    sz("model.n_blocks", "number of Mamba blocks", [](RunConfig& c) -> std::size_t& { return c.model.n_blocks; });
    sz("model.state_size", "SSM state size N", [](RunConfig& c) -> std::size_t& { return c.model.state_size; });
    sz("model.conv_width", "depthwise causal convolution width", [](RunConfig& c) -> std::size_t& { return c.model.conv_width; });
    sz("model.context_length", "context length l_c", [](RunConfig& c) -> std::size_t& { return c.model.context_length; });
    sz("model.time_width", "Time2Vec width k", [](RunConfig& c) -> std::size_t& { return c.model.time_width; });
    sz("model.expansion", "inner expansion factor", [](RunConfig& c) -> std::size_t& { return c.model.expansion; });
    integer("model.max_visit_order", "largest visit-order embedding index; later visits share it", [](RunConfig& c) -> int& { return c.model.max_visit_order; });
    dbl("model.dropout", "dropout probability in [0,1)", [](RunConfig& c) -> double& { return c.model.dropout; });
    boolean("model.use_position", "add absolute position embeddings", [](RunConfig& c) -> bool& { return c.model.use_position; });

    for (const char* phase : {"pretrain", "finetune"}) {
      const std::string p = phase;
      auto tc = [p](RunConfig& c) -> TrainConfig& { return p == "pretrain" ? c.pretrain : c.finetune; };
      sz(p + ".epochs", "training epochs", [tc](RunConfig& c) -> std::size_t& { return tc(c).epochs; });
      sz(p + ".batch_size", "sequences per optimizer step", [tc](RunConfig& c) -> std::size_t& { return tc(c).batch_size; });
      dbl(p + ".peak_lr", "learning rate at the end of warmup", [tc](RunConfig& c) -> double& { return tc(c).peak_lr; });
      dbl(p + ".floor_lr", "learning rate at the first and last step", [tc](RunConfig& c) -> double& { return tc(c).floor_lr; });
      dbl(p + ".warmup_fraction", "share of steps spent warming up, in (0,1)", [tc](RunConfig& c) -> double& { return tc(c).warmup_fraction; });
      dbl(p + ".weight_decay", "AdamW decoupled weight decay", [tc](RunConfig& c) -> double& { return tc(c).adamw.weight_decay; });
    }
    boolean("pretrain.mlm", "pretrain with masked-token prediction instead of next-token prediction", [](RunConfig& c) -> bool& { return c.pretrain.use_mlm; });
    dbl("pretrain.mask_probability", "masking probability for the masked-token objective", [](RunConfig& c) -> double& { return c.pretrain.mask_probability; });
    k.push_back({"finetune.tasks", "comma-separated tasks among MOR,LOS,REA,C0,C1,C2",
                 [](const RunConfig& c) { return detail::format_task_list(c.finetune.tasks); },
                 [](RunConfig& c, const std::string& v) { c.finetune.tasks = detail::parse_task_list("finetune.tasks", v); }});

    dbl("split.pretrain", "share of patients in the pretraining split", [](RunConfig& c) -> double& { return c.split[0]; });
    dbl("split.finetune", "share of patients in the finetuning split", [](RunConfig& c) -> double& { return c.split[1]; });
    dbl("split.test", "share of patients in the test split", [](RunConfig& c) -> double& { return c.split[2]; });
    dbl("eval.threshold", "decision threshold for F1", [](RunConfig& c) -> double& { return c.threshold; });
    sz("attribute.steps", "integrated-gradients Riemann steps", [](RunConfig& c) -> std::size_t& { return c.ig_steps; });
    k.push_back({"attribute.task", "task token used for attribution",
                 [](const RunConfig& c) { return std::string(task_name(c.ig_task)); },
                 [](RunConfig& c, const std::string& v) {
                   try {
                     c.ig_task = parse_task(v);
                   } catch (const ArgumentError&) {
                     throw ConfigError("config key 'attribute.task': unknown task '" + v + "'");
                   }
                 }});
    sz("attribute.max_sequences", "test sequences attributed", [](RunConfig& c) -> std::size_t& { return c.ig_sequences; });
    return k;
  }();
  return keys;
}

inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  for (const auto& k : config_keys()) {
    if (k.key == key) {
      k.set(c, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

// Applies `key=value` lines; blank lines and '#' comments are ignored.
inline void apply_config_text(RunConfig& c, std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(n) + ": expected key=value");
    set_config_value(c, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
  }
}

inline void validate_config(RunConfig& c) {
  c.generator.seed = c.seed;
  c.model.seed = c.seed;
  c.pretrain.seed = derive_seed(c.seed, 1);
  c.finetune.seed = derive_seed(c.seed, 2);
  c.generator.validate();
  c.pretrain.validate();
  c.finetune.validate();
  double sum = 0.0;
  for (double r : c.split) {
    if (!(r > 0.0)) throw ConfigError("split shares must be positive");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split shares must sum to 1");
  if (!(c.model.dropout >= 0.0 && c.model.dropout < 1.0)) throw ConfigError("model.dropout must lie in [0,1)");
}

// File (optional) first, then each "key=value" override in order.
inline RunConfig parse_config(const std::filesystem::path& file, const std::vector<std::string>& overrides = {}) {
  RunConfig c;
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot read config file '" + file.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    apply_config_text(c, ss.str());
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "': expected key=value");
    set_config_value(c, detail::trim(o.substr(0, eq)), detail::trim(o.substr(eq + 1)));
  }
  validate_config(c);
  return c;
}

// Canonical key=value text of every key; parsing it reproduces the config.
inline std::string echo_config(const RunConfig& c) {
  std::string out;
  for (const auto& k : config_keys()) out += k.key + "=" + k.get(c) + "\n";
  return out;
}

inline std::string config_reference() {
  RunConfig defaults;
  std::string out;
  for (const auto& k : config_keys()) out += "# " + k.doc + "\n" + k.key + "=" + k.get(defaults) + "\n";
  return out;
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string config_hash(const RunConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(echo_config(c))));
  return buf;
}

// "# "-prefixed header written at the top of every text artifact.
inline std::string artifact_header(const RunConfig& c, std::string_view command) {
  std::string out = "# ehrmamba " + std::string(kCodeVersion) + " " + std::string(command) + "\n";
  out += "# config_hash=" + config_hash(c) + "\n";
  std::istringstream in(echo_config(c));
  std::string line;
  while (std::getline(in, line)) out += "# " + line + "\n";
  return out;
}

}  // namespace ehrmamba
