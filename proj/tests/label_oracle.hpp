#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <optional>
#include <random>
#include <string>

#include "ehrmamba/ehr_data.hpp"

namespace label_oracle {

using namespace ehrmamba;

// Independent label oracle on std::chrono calendar arithmetic.
struct OracleLabels {
  int mortality;
  std::optional<int> los;
  std::optional<int> readmission;
  std::array<int, 3> conditions;
};

OracleLabels oracle_labels(const PatientRecord& r) {
  using namespace std::chrono;
  using secs = sys_seconds;
  auto at = [](Timestamp t) { return secs{seconds{t}}; };
  OracleLabels o{};
  const Visit& last = r.visits.back();
  secs last_event = at(last.events.empty() ? last.end : last.events.front().timestamp);
  for (const auto& e : last.events) last_event = std::max(last_event, at(e.timestamp));
  o.mortality = r.death_time && at(*r.death_time) - last_event < days{32} ? 1 : 0;
  const auto stay = at(last.end) - at(last.start);
  if (stay >= hours{24}) o.los = stay > days{7} ? 1 : 0;
  if (r.visits.size() >= 2) {
    const auto gap = at(last.start) - at(r.visits[r.visits.size() - 2].end);
    const auto whole_days = gap <= seconds{0} ? days{0} : floor<days>(gap);
    o.readmission = whole_days < days{30} ? 1 : 0;
  }
  for (const auto& v : r.visits) {
    for (const auto& e : v.events) {
      for (int c = 0; c < 3; ++c) {
        if (e.code == "med_marker_c" + std::to_string(c)) o.conditions[static_cast<std::size_t>(c)] = 1;
      }
    }
  }
  return o;
}

// Random records concentrated around every label boundary.
PatientRecord random_record(std::mt19937_64& rng, int idx) {
  auto pick = [&](std::int64_t lo, std::int64_t hi) { return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng); };
  const std::int64_t D = kSecondsPerDay;
  auto near = [&](std::int64_t boundary) { return boundary + pick(-3, 3) * (pick(0, 1) ? 1 : D / 2); };
  PatientRecord r;
  r.patient_id = "r" + std::to_string(idx);
  r.birth_date = make_timestamp(1950, 1, 1);
  Timestamp cursor = make_timestamp(2010, 1, 1) + pick(0, 1000) * D;
  const int n_visits = static_cast<int>(pick(1, 4));
  for (int k = 0; k < n_visits; ++k) {
    if (k > 0) cursor += pick(0, 2) == 0 ? near(30 * D) : pick(-D, 90 * D);
    const Timestamp dur = pick(0, 2) == 0 ? near(7 * D) : (pick(0, 1) ? near(24 * 3600) : pick(1, 20 * D));
    Visit v{"v" + std::to_string(k), cursor, cursor + std::max<Timestamp>(dur, 1), {}};
    const int n_ev = static_cast<int>(pick(0, 4));
    for (int j = 0; j < n_ev; ++j) {
      const int c = static_cast<int>(pick(0, 5));
      const std::string code = c < 3 ? "med_marker_c" + std::to_string(c) : "proc_" + std::to_string(c);
      v.events.push_back({code, EventKind::Medication, v.start + pick(0, v.end - v.start), std::nullopt});
    }
    std::sort(v.events.begin(), v.events.end(), [](const RawEvent& a, const RawEvent& b) { return a.timestamp < b.timestamp; });
    cursor = v.end;
    r.visits.push_back(std::move(v));
  }
  if (pick(0, 3) != 0) {
    const auto& last = r.visits.back();
    const Timestamp le = last.events.empty() ? last.end : last.events.back().timestamp;
    r.death_time = le + std::max<std::int64_t>(0, pick(0, 1) ? near(32 * D) : pick(0, 400 * D));
  }
  return r;
}

}  // namespace label_oracle
