#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "ehrmamba/error.hpp"
#include "ehrmamba/record.hpp"
#include "ehrmamba/sequence.hpp"
#include "ehrmamba/tensor.hpp"

namespace ehrmamba {

// ---------------------------------------------------------------------------
// Sampling helpers built on the raw engine so that cohorts do not depend on
// the standard library's distribution implementations.

namespace sample {

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

inline std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
  const auto span = static_cast<double>(hi - lo + 1);
  auto v = lo + static_cast<std::int64_t>(uniform01(rng) * span);
  return std::min(v, hi);
}

inline double normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline int poisson(Rng& rng, double mean) {
  const double limit = std::exp(-mean);
  int k = 0;
  double p = uniform01(rng);
  while (p > limit) {
    ++k;
    p *= uniform01(rng);
  }
  return k;
}

}  // namespace sample

// ---------------------------------------------------------------------------
// Synthetic cohort generator.

struct GeneratorConfig {
  std::size_t n_patients = 300;
  double mean_extra_visits = 2.0;  // visits = 1 + Poisson(mean), capped
  int max_visits = 6;
  double mean_events_per_visit = 6.0;
  int n_procedures = 20;
  int n_medications = 15;
  int n_labs = 6;
  double p_frail = 0.3;
  double p_condition = 0.4;
  // 0: mortality independent of every emitted token; 1: death within the
  // label horizon iff the patient carries the frailty factor.
  double mortality_signal = 0.9;
  double base_mortality = 0.15;
  // Probability that a frail patient's event is drawn from the severity set.
  double severity_rate = 0.35;
  // Per-visit probability that a patient with condition i emits its marker.
  double condition_signal = 0.8;
  std::uint64_t seed = 7;

  void validate() const {
    auto prob = [](double p, const char* name) {
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0,1]");
    };
    prob(p_frail, "p_frail");
    prob(p_condition, "p_condition");
    prob(mortality_signal, "mortality_signal");
    prob(base_mortality, "base_mortality");
    prob(severity_rate, "severity_rate");
    prob(condition_signal, "condition_signal");
    if (max_visits < 1 || n_procedures < 1 || n_medications < 1 || n_labs < 1) {
      throw ConfigError("generator counts must be positive");
    }
    if (!(mean_extra_visits >= 0.0) || !(mean_events_per_visit >= 1.0)) {
      throw ConfigError("generator means out of range");
    }
  }
};

inline constexpr int kSeverityConcepts = 3;
inline constexpr int kConditionCount = 3;

inline std::string procedure_code(int i) { return "proc_" + std::to_string(i); }
inline std::string medication_code(int i) { return "med_" + std::to_string(i); }
inline std::string lab_code(int i) { return "lab_" + std::to_string(i); }
inline std::string severity_code(int i) { return "proc_severe_" + std::to_string(i); }
inline std::string condition_marker(int i) { return "med_marker_c" + std::to_string(i); }

inline std::string binned_concept(const std::string& lab, std::size_t bin) {
  return lab + "_bin" + std::to_string(bin);
}

// Every concept the generator can emit once labs are binned.
inline std::vector<CatalogEntry> generator_catalog(const GeneratorConfig& cfg) {
  std::vector<CatalogEntry> out;
  for (int i = 0; i < cfg.n_procedures; ++i) out.push_back({procedure_code(i), EventKind::Procedure});
  for (int i = 0; i < kSeverityConcepts; ++i) out.push_back({severity_code(i), EventKind::Procedure});
  for (int i = 0; i < cfg.n_medications; ++i) out.push_back({medication_code(i), EventKind::Medication});
  for (int i = 0; i < kConditionCount; ++i) out.push_back({condition_marker(i), EventKind::Medication});
  for (int i = 0; i < cfg.n_labs; ++i) {
    for (std::size_t b = 0; b < 5; ++b) out.push_back({binned_concept(lab_code(i), b), EventKind::Lab});
  }
  return out;
}

namespace detail {

inline constexpr std::uint64_t kGeneratorStream = 0x67656e;

inline PatientRecord generate_patient(const GeneratorConfig& cfg, std::size_t index) {
  Rng rng(derive_seed(cfg.seed, kGeneratorStream, index));
  char pid[32];
  std::snprintf(pid, sizeof pid, "p%06zu", index);

  const bool frail = sample::bernoulli(rng, cfg.p_frail);
  std::array<bool, kConditionCount> condition{};
  for (auto& c : condition) c = sample::bernoulli(rng, cfg.p_condition);

  PatientRecord r;
  r.patient_id = pid;
  r.birth_date = make_timestamp(1930, 1, 1) + sample::uniform_int(rng, 0, 70 * 365) * kSecondsPerDay;

  const int n_visits = std::min(cfg.max_visits, 1 + sample::poisson(rng, cfg.mean_extra_visits));
  Timestamp cursor = make_timestamp(2012, 1, 1) + sample::uniform_int(rng, 0, 3 * 365 * kSecondsPerDay);
  for (int k = 0; k < n_visits; ++k) {
    if (k > 0) {
      const bool quick_return = sample::bernoulli(rng, frail ? 0.6 : 0.25);
      const std::int64_t gap_days = quick_return ? sample::uniform_int(rng, 1, 29) : sample::uniform_int(rng, 30, 700);
      cursor += gap_days * kSecondsPerDay + sample::uniform_int(rng, 0, kSecondsPerDay - 1);
    }
    const bool long_stay = sample::bernoulli(rng, frail ? 0.7 : 0.2);
    const Timestamp duration = long_stay ? sample::uniform_int(rng, 7 * kSecondsPerDay + kSecondsPerHour, 20 * kSecondsPerDay)
                                         : sample::uniform_int(rng, 2 * kSecondsPerHour, 7 * kSecondsPerDay);
    Visit v;
    v.id = r.patient_id + "-v" + std::to_string(k);
    v.start = cursor;
    v.end = cursor + duration;

    const int n_events = 1 + sample::poisson(rng, cfg.mean_events_per_visit - 1.0);
    std::vector<Timestamp> offsets(static_cast<std::size_t>(n_events));
    for (auto& o : offsets) o = sample::uniform_int(rng, 0, duration - n_events);
    std::sort(offsets.begin(), offsets.end());
    for (int j = 0; j < n_events; ++j) {
      RawEvent e;
      e.timestamp = v.start + offsets[static_cast<std::size_t>(j)] + j;  // strictly increasing
      if (frail && sample::bernoulli(rng, cfg.severity_rate)) {
        e.kind = EventKind::Procedure;
        e.code = severity_code(static_cast<int>(sample::uniform_int(rng, 0, kSeverityConcepts - 1)));
      } else {
        const double u = uniform01(rng);
        if (u < 0.3) {
          e.kind = EventKind::Procedure;
          e.code = procedure_code(static_cast<int>(sample::uniform_int(rng, 0, cfg.n_procedures - 1)));
        } else if (u < 0.6) {
          e.kind = EventKind::Medication;
          e.code = medication_code(static_cast<int>(sample::uniform_int(rng, 0, cfg.n_medications - 1)));
        } else {
          e.kind = EventKind::Lab;
          const int lab = static_cast<int>(sample::uniform_int(rng, 0, cfg.n_labs - 1));
          e.code = lab_code(lab);
          e.value = 10.0 * (lab + 1) + 3.0 * sample::normal(rng) + (frail ? 2.0 : 0.0);
        }
      }
      v.events.push_back(std::move(e));
    }
    // Condition markers replace a random event of the visit so the event
    // count distribution does not leak the condition.
    for (int c = 0; c < kConditionCount; ++c) {
      if (condition[static_cast<std::size_t>(c)] && sample::bernoulli(rng, cfg.condition_signal)) {
        auto& e = v.events[static_cast<std::size_t>(sample::uniform_int(rng, 0, n_events - 1))];
        e.kind = EventKind::Medication;
        e.code = condition_marker(c);
        e.value.reset();
      }
    }
    r.visits.push_back(std::move(v));
    cursor = r.visits.back().end;
  }

  const double p_soon = cfg.mortality_signal * (frail ? 1.0 : 0.0) + (1.0 - cfg.mortality_signal) * cfg.base_mortality;
  const bool dies_soon = sample::bernoulli(rng, p_soon);
  const Timestamp last_event = r.visits.back().events.back().timestamp;
  if (dies_soon) {
    r.death_time = last_event + sample::uniform_int(rng, kSecondsPerHour, 31 * kSecondsPerDay);
  } else if (sample::bernoulli(rng, 0.3)) {
    r.death_time = last_event + sample::uniform_int(rng, 33 * kSecondsPerDay, 1500 * kSecondsPerDay);
  }
  return r;
}

}  // namespace detail

// Deterministic in cfg: patient i draws from the stream (seed, i), so any
// subset of patients can be generated independently.
inline std::vector<PatientRecord> generate_cohort(const GeneratorConfig& cfg) {
  cfg.validate();
  std::vector<PatientRecord> cohort;
  cohort.reserve(cfg.n_patients);
  for (std::size_t i = 0; i < cfg.n_patients; ++i) cohort.push_back(detail::generate_patient(cfg, i));
  return cohort;
}

// ---------------------------------------------------------------------------
// FHIR-flavored newline-delimited JSON.

struct IngestResult {
  std::vector<PatientRecord> records;
  std::size_t skipped = 0;  // lines with an unsupported resourceType
  std::map<std::string, std::size_t> skipped_by_type;
};

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) {
    throw DataError("line " + std::to_string(line) + ": missing field '" + key + "'");
  }
  return *it;
}

inline std::string require_string(const nlohmann::json& obj, const char* key, std::size_t line) {
  const auto& v = require_field(obj, key, line);
  if (!v.is_string()) throw DataError("line " + std::to_string(line) + ": field '" + key + "' must be a string");
  return v.get<std::string>();
}

inline Timestamp require_time(const nlohmann::json& obj, const char* key, std::size_t line) {
  try {
    return parse_iso8601(require_string(obj, key, line));
  } catch (const DataError& e) {
    throw DataError("line " + std::to_string(line) + ": " + e.what());
  }
}

}  // namespace detail

inline IngestResult ingest_fhir_lines(std::istream& in) {
  struct EncounterRow {
    std::string subject;
    Visit visit;
    std::size_t line;
  };
  struct EventRow {
    std::string subject;
    std::string encounter;
    RawEvent event;
    std::size_t line;
  };
  IngestResult result;
  std::vector<std::string> patient_order;
  std::unordered_map<std::string, PatientRecord> patients;
  std::vector<EncounterRow> encounters;
  std::unordered_map<std::string, std::size_t> encounter_index;
  std::vector<EventRow> events;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError("line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
    }
    if (!obj.is_object()) throw DataError("line " + std::to_string(line_no) + ": expected a JSON object");
    const std::string type = detail::require_string(obj, "resourceType", line_no);
    if (type == "Patient") {
      PatientRecord r;
      r.patient_id = detail::require_string(obj, "id", line_no);
      r.birth_date = detail::require_time(obj, "birthDate", line_no);
      if (obj.contains("deceasedDateTime") && !obj["deceasedDateTime"].is_null()) {
        r.death_time = detail::require_time(obj, "deceasedDateTime", line_no);
      }
      if (patients.count(r.patient_id) != 0) {
        throw DataError("line " + std::to_string(line_no) + ": duplicate Patient '" + r.patient_id + "'");
      }
      patient_order.push_back(r.patient_id);
      patients.emplace(r.patient_id, std::move(r));
    } else if (type == "Encounter") {
      EncounterRow row;
      row.visit.id = detail::require_string(obj, "id", line_no);
      row.subject = detail::require_string(obj, "subject", line_no);
      row.visit.start = detail::require_time(obj, "periodStart", line_no);
      row.visit.end = detail::require_time(obj, "periodEnd", line_no);
      row.line = line_no;
      if (encounter_index.count(row.visit.id) != 0) {
        throw DataError("line " + std::to_string(line_no) + ": duplicate Encounter '" + row.visit.id + "'");
      }
      encounter_index.emplace(row.visit.id, encounters.size());
      encounters.push_back(std::move(row));
    } else if (type == "Procedure" || type == "MedicationAdministration" || type == "Observation") {
      EventRow row;
      row.line = line_no;
      row.subject = detail::require_string(obj, "subject", line_no);
      row.encounter = detail::require_string(obj, "encounter", line_no);
      row.event.code = detail::require_string(obj, "code", line_no);
      if (type == "Procedure") {
        row.event.kind = EventKind::Procedure;
        row.event.timestamp = detail::require_time(obj, "performedDateTime", line_no);
      } else {
        row.event.kind = type == "Observation" ? EventKind::Lab : EventKind::Medication;
        row.event.timestamp = detail::require_time(obj, "effectiveDateTime", line_no);
      }
      if (type == "Observation") {
        const auto& v = detail::require_field(obj, "valueQuantity", line_no);
        if (!v.is_number()) throw DataError("line " + std::to_string(line_no) + ": valueQuantity must be numeric");
        row.event.value = v.get<double>();
      }
      events.push_back(std::move(row));
    } else {
      ++result.skipped;
      ++result.skipped_by_type[type];
    }
  }

  for (auto& e : events) {
    auto it = encounter_index.find(e.encounter);
    if (it == encounter_index.end()) {
      throw DataError("line " + std::to_string(e.line) + ": orphan event references unknown encounter '" + e.encounter + "'");
    }
    auto& enc = encounters[it->second];
    if (enc.subject != e.subject) {
      throw DataError("line " + std::to_string(e.line) + ": event subject '" + e.subject +
                      "' does not match encounter subject '" + enc.subject + "'");
    }
    enc.visit.events.push_back(std::move(e.event));
  }
  for (auto& enc : encounters) {
    auto it = patients.find(enc.subject);
    if (it == patients.end()) {
      throw DataError("line " + std::to_string(enc.line) + ": encounter references unknown patient '" + enc.subject + "'");
    }
    std::stable_sort(enc.visit.events.begin(), enc.visit.events.end(),
                     [](const RawEvent& a, const RawEvent& b) { return a.timestamp < b.timestamp; });
    it->second.visits.push_back(std::move(enc.visit));
  }
  for (const auto& id : patient_order) {
    auto& r = patients.at(id);
    std::stable_sort(r.visits.begin(), r.visits.end(), [](const Visit& a, const Visit& b) { return a.start < b.start; });
    result.records.push_back(std::move(r));
  }
  return result;
}

inline void write_fhir_lines(const std::vector<PatientRecord>& records, std::ostream& out) {
  using nlohmann::ordered_json;
  for (const auto& r : records) {
    ordered_json p;
    p["resourceType"] = "Patient";
    p["id"] = r.patient_id;
    p["birthDate"] = format_date(r.birth_date);
    if (r.death_time) p["deceasedDateTime"] = format_iso8601(*r.death_time);
    out << p.dump() << '\n';
    for (const auto& v : r.visits) {
      ordered_json e;
      e["resourceType"] = "Encounter";
      e["id"] = v.id;
      e["subject"] = r.patient_id;
      e["periodStart"] = format_iso8601(v.start);
      e["periodEnd"] = format_iso8601(v.end);
      out << e.dump() << '\n';
      for (const auto& ev : v.events) {
        ordered_json j;
        switch (ev.kind) {
          case EventKind::Procedure:
            j["resourceType"] = "Procedure";
            break;
          case EventKind::Medication:
            j["resourceType"] = "MedicationAdministration";
            break;
          case EventKind::Lab:
            j["resourceType"] = "Observation";
            break;
        }
        j["subject"] = r.patient_id;
        j["encounter"] = v.id;
        j["code"] = ev.code;
        j[ev.kind == EventKind::Procedure ? "performedDateTime" : "effectiveDateTime"] = format_iso8601(ev.timestamp);
        if (ev.kind == EventKind::Lab) {
          if (ev.value) {
            j["valueQuantity"] = *ev.value;
          } else {
            j["valueQuantity"] = nullptr;
          }
        }
        out << j.dump() << '\n';
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Lab binning.

// Index of the half-open interval containing value: (-inf,e0), [e0,e1), ...,
// [e3,+inf).
inline std::size_t bin_lab_value(double value, std::span<const double> edges) {
  if (std::isnan(value)) throw DataError("invalid lab value: NaN");
  if (edges.size() != 4) throw ArgumentError("bin_lab_value: expected 4 edges");
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (!(edges[i] > edges[i - 1])) throw ArgumentError("bin_lab_value: edges must be strictly ascending");
  }
  return static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), value) - edges.begin());
}

// Per-lab-code quintile edges fitted on a training split.
class LabBinner {
 public:
  using Edges = std::array<double, 4>;

  static LabBinner fit(std::span<const PatientRecord> records) {
    std::map<std::string, std::vector<double>> values;
    for (const auto& r : records) {
      for (const auto& v : r.visits) {
        for (const auto& e : v.events) {
          if (e.kind == EventKind::Lab && e.value && !std::isnan(*e.value)) values[e.code].push_back(*e.value);
        }
      }
    }
    LabBinner b;
    for (auto& [code, vals] : values) {
      std::sort(vals.begin(), vals.end());
      Edges edges{};
      for (std::size_t q = 0; q < 4; ++q) {
        const double pos = 0.2 * static_cast<double>(q + 1) * static_cast<double>(vals.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, vals.size() - 1);
        edges[q] = vals[lo] + (pos - static_cast<double>(lo)) * (vals[hi] - vals[lo]);
        if (q > 0 && !(edges[q] > edges[q - 1])) edges[q] = std::nextafter(edges[q - 1], INFINITY);
      }
      b.edges_.emplace(code, edges);
    }
    return b;
  }

  const std::map<std::string, Edges>& edges() const { return edges_; }
  void set_edges(const std::string& code, const Edges& e) { edges_[code] = e; }

  // Lab events with a value and fitted edges become "<code>_bin<i>".
  PatientRecord apply(PatientRecord r) const {
    for (auto& v : r.visits) {
      for (auto& e : v.events) {
        if (e.kind != EventKind::Lab || !e.value) continue;
        auto it = edges_.find(e.code);
        if (it == edges_.end()) continue;
        e.code = binned_concept(e.code, bin_lab_value(*e.value, it->second));
      }
    }
    return r;
  }

  void write_tsv(std::ostream& os) const {
    os.precision(17);
    for (const auto& [code, e] : edges_) os << code << '\t' << e[0] << '\t' << e[1] << '\t' << e[2] << '\t' << e[3] << '\n';
  }

  static LabBinner read_tsv(std::istream& is) {
    LabBinner b;
    std::string code;
    Edges e{};
    while (is >> code >> e[0] >> e[1] >> e[2] >> e[3]) b.edges_[code] = e;
    return b;
  }

 private:
  std::map<std::string, Edges> edges_;
};

// Unique (concept, kind) pairs in order of first appearance-independent
// lexicographic order.
inline std::vector<CatalogEntry> catalog_from_records(std::span<const PatientRecord> records) {
  std::map<std::string, EventKind> seen;
  for (const auto& r : records) {
    for (const auto& v : r.visits) {
      for (const auto& e : v.events) {
        auto [it, inserted] = seen.emplace(e.code, e.kind);
        if (!inserted && it->second != e.kind) {
          throw DataError("concept '" + e.code + "' appears with two event types");
        }
      }
    }
  }
  std::vector<CatalogEntry> out;
  for (const auto& [c, k] : seen) out.push_back({c, k});
  return out;
}

// ---------------------------------------------------------------------------
// Task labels.

inline constexpr Timestamp kMortalityHorizon = 32 * kSecondsPerDay;
inline constexpr std::int64_t kReadmissionWindowDays = 30;
inline constexpr Timestamp kLosObservationWindow = 24 * kSecondsPerHour;
inline constexpr Timestamp kLongStay = 7 * kSecondsPerDay;

struct TaskLabels {
  std::optional<int> mortality;
  std::optional<int> los;
  std::optional<int> readmission;
  std::optional<int> c0;
  std::optional<int> c1;
  std::optional<int> c2;
  std::optional<Timestamp> los_truncation_time;
  std::optional<std::size_t> readmission_excluded_visit;

  std::optional<int> get(TaskKind t) const {
    switch (t) {
      case TaskKind::MOR: return mortality;
      case TaskKind::LOS: return los;
      case TaskKind::REA: return readmission;
      case TaskKind::C0: return c0;
      case TaskKind::C1: return c1;
      case TaskKind::C2: return c2;
    }
    return std::nullopt;
  }

  friend bool operator==(const TaskLabels&, const TaskLabels&) = default;
};

inline Timestamp last_event_time(const Visit& v) {
  Timestamp t = v.start;
  bool any = false;
  for (const auto& e : v.events) {
    t = any ? std::max(t, e.timestamp) : e.timestamp;
    any = true;
  }
  return any ? t : v.end;
}

inline TaskLabels derive_labels(const PatientRecord& r) {
  if (r.visits.empty()) throw DataError("cannot derive labels for '" + r.patient_id + "': no visits");
  TaskLabels out;
  const Visit& last = r.visits.back();

  out.mortality = 0;
  if (r.death_time) out.mortality = (*r.death_time - last_event_time(last)) < kMortalityHorizon ? 1 : 0;

  if (last.end - last.start >= kLosObservationWindow) {
    out.los = (last.end - last.start) > kLongStay ? 1 : 0;
    out.los_truncation_time = last.start + kLosObservationWindow;
  }

  if (r.visits.size() >= 2) {
    const auto gap = visit_gap_days(r.visits[r.visits.size() - 2], last);
    out.readmission = gap < kReadmissionWindowDays ? 1 : 0;
    out.readmission_excluded_visit = r.visits.size() - 1;
  }

  std::array<int, kConditionCount> present{};
  for (const auto& v : r.visits) {
    for (const auto& e : v.events) {
      for (int c = 0; c < kConditionCount; ++c) {
        if (e.code == condition_marker(c)) present[static_cast<std::size_t>(c)] = 1;
      }
    }
  }
  out.c0 = present[0];
  out.c1 = present[1];
  out.c2 = present[2];
  return out;
}

// Task-specific view of a record: the LoS view keeps only the first 24 hours
// of the last visit, the readmission view drops the last visit. Returns
// nullopt when the task's label is undefined for the record.
inline std::optional<PatientRecord> task_view(const PatientRecord& r, TaskKind task, const TaskLabels& labels) {
  if (!labels.get(task)) return std::nullopt;
  PatientRecord view = r;
  if (task == TaskKind::LOS) {
    auto& last = view.visits.back();
    const Timestamp cutoff = *labels.los_truncation_time;
    std::erase_if(last.events, [&](const RawEvent& e) { return e.timestamp > cutoff; });
  } else if (task == TaskKind::REA) {
    view.visits.pop_back();
  }
  return view;
}

// ---------------------------------------------------------------------------
// Splits.

struct SplitAssignment {
  std::vector<std::size_t> pretrain;  // indices into the cohort
  std::vector<std::size_t> finetune;
  std::vector<std::size_t> test;
  std::array<double, 3> ratios{0.57, 0.28, 0.15};
};

inline constexpr std::array<double, 3> kDefaultSplitRatios{0.57, 0.28, 0.15};

inline SplitAssignment split_cohort(std::size_t n, std::array<double, 3> ratios, std::uint64_t seed) {
  if (n < 3) throw DataError("degenerate split: need at least 3 patients, got " + std::to_string(n));
  double sum = 0.0;
  for (double r : ratios) {
    if (!(r > 0.0)) throw ArgumentError("split ratios must be positive");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ArgumentError("split ratios must sum to 1");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0x73706c));
  for (std::size_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(sample::uniform_int(rng, 0, static_cast<std::int64_t>(i)));
    std::swap(order[i], order[j]);
  }
  std::array<std::size_t, 3> counts{};
  counts[0] = static_cast<std::size_t>(std::llround(ratios[0] * static_cast<double>(n)));
  counts[1] = static_cast<std::size_t>(std::llround(ratios[1] * static_cast<double>(n)));
  counts[0] = std::min(counts[0], n);
  counts[1] = std::min(counts[1], n - counts[0]);
  counts[2] = n - counts[0] - counts[1];
  for (auto& c : counts) {
    if (c == 0) {
      auto largest = std::max_element(counts.begin(), counts.end());
      --*largest;
      c = 1;
    }
  }
  SplitAssignment s;
  s.ratios = ratios;
  s.pretrain.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(counts[0]));
  s.finetune.assign(order.begin() + static_cast<std::ptrdiff_t>(counts[0]),
                    order.begin() + static_cast<std::ptrdiff_t>(counts[0] + counts[1]));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(counts[0] + counts[1]), order.end());
  return s;
}

inline std::vector<PatientRecord> select(std::span<const PatientRecord> cohort, std::span<const std::size_t> idx) {
  std::vector<PatientRecord> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(cohort[i]);
  return out;
}

}  // namespace ehrmamba
