#pragma once

#include <string>
#include <vector>

#include "ehrmamba/record.hpp"
#include "ehrmamba/sequence.hpp"

namespace fixtures {

using namespace ehrmamba;

inline RawEvent ev(const std::string& code, EventKind kind, Timestamp t, std::optional<double> value = {}) {
  return RawEvent{code, kind, t, value};
}

// Three visits: day 0 (two events), day 14 (one event), day 100 (two events).
inline PatientRecord three_visit_record() {
  PatientRecord r;
  r.patient_id = "fx";
  r.birth_date = make_timestamp(1960, 1, 1);
  const Timestamp t0 = make_timestamp(2015, 3, 1, 8);
  Visit a{"a", t0, t0 + 2 * kSecondsPerDay, {}};
  a.events = {ev("proc_A", EventKind::Procedure, t0 + 3600), ev("med_B", EventKind::Medication, t0 + 7200)};
  const Timestamp t1 = a.end + 14 * kSecondsPerDay;
  Visit b{"b", t1, t1 + kSecondsPerDay, {}};
  b.events = {ev("lab_C", EventKind::Lab, t1 + 60)};
  const Timestamp t2 = b.end + 100 * kSecondsPerDay;
  Visit c{"c", t2, t2 + 3 * kSecondsPerDay, {}};
  c.events = {ev("med_B", EventKind::Medication, t2 + 10), ev("proc_A", EventKind::Procedure, t2 + 20)};
  r.visits = {a, b, c};
  return r;
}

inline std::vector<CatalogEntry> small_catalog() {
  return {{"proc_A", EventKind::Procedure}, {"med_B", EventKind::Medication}, {"lab_C", EventKind::Lab}};
}

}  // namespace fixtures
