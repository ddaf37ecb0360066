#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ehrmamba/error.hpp"

namespace ehrmamba {

// Seconds since 1970-01-01T00:00:00Z.
using Timestamp = std::int64_t;

inline constexpr Timestamp kSecondsPerDay = 86400;
inline constexpr Timestamp kSecondsPerHour = 3600;
inline constexpr double kDaysPerYear = 365.25;

inline Timestamp make_timestamp(int y, unsigned mo, unsigned d, int h = 0, int mi = 0, int s = 0) {
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{mo}, day{d}};
  if (!ymd.ok()) throw DataError("invalid calendar date");
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return static_cast<Timestamp>(days) * kSecondsPerDay + h * kSecondsPerHour + mi * 60 + s;
}

// Accepts "YYYY-MM-DD" and "YYYY-MM-DDTHH:MM:SS[Z]".
inline Timestamp parse_iso8601(std::string_view text) {
  int y = 0;
  unsigned mo = 0, d = 0;
  int h = 0, mi = 0, s = 0;
  const std::string buf(text);
  int n = 0;
  if (std::sscanf(buf.c_str(), "%d-%u-%u%n", &y, &mo, &d, &n) != 3 || n != 10) {
    throw DataError("invalid ISO-8601 timestamp '" + buf + "'");
  }
  if (buf.size() > 10) {
    int m = 0;
    if (std::sscanf(buf.c_str() + 10, "T%d:%d:%d%n", &h, &mi, &s, &m) != 3) {
      throw DataError("invalid ISO-8601 timestamp '" + buf + "'");
    }
    const std::string_view rest = std::string_view(buf).substr(10 + static_cast<std::size_t>(m));
    if (!(rest.empty() || rest == "Z" || rest == "+00:00")) {
      throw DataError("only UTC timestamps are supported: '" + buf + "'");
    }
    if (h < 0 || h > 23 || mi < 0 || mi > 59 || s < 0 || s > 60) {
      throw DataError("invalid time of day in '" + buf + "'");
    }
  }
  return make_timestamp(y, mo, d, h, mi, s);
}

inline std::string format_date(Timestamp t) {
  using namespace std::chrono;
  Timestamp days = t / kSecondsPerDay;
  if (t % kSecondsPerDay < 0) --days;
  const year_month_day ymd{sys_days{std::chrono::days{days}}};
  char out[16];
  std::snprintf(out, sizeof out, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return out;
}

inline std::string format_iso8601(Timestamp t) {
  Timestamp secs = t % kSecondsPerDay;
  if (secs < 0) secs += kSecondsPerDay;
  char out[32];
  std::snprintf(out, sizeof out, "%sT%02d:%02d:%02dZ", format_date(t).c_str(),
                static_cast<int>(secs / 3600), static_cast<int>(secs / 60 % 60),
                static_cast<int>(secs % 60));
  return out;
}

enum class EventKind { Procedure, Medication, Lab };

inline char event_kind_code(EventKind k) {
  switch (k) {
    case EventKind::Procedure: return 'P';
    case EventKind::Medication: return 'M';
    case EventKind::Lab: return 'L';
  }
  return '?';
}

struct RawEvent {
  std::string code;
  EventKind kind = EventKind::Procedure;
  Timestamp timestamp = 0;
  std::optional<double> value;  // labs only

  friend bool operator==(const RawEvent&, const RawEvent&) = default;
};

struct Visit {
  std::string id;
  Timestamp start = 0;
  Timestamp end = 0;
  std::vector<RawEvent> events;

  friend bool operator==(const Visit&, const Visit&) = default;
};

struct PatientRecord {
  std::string patient_id;
  Timestamp birth_date = 0;  // midnight UTC of the birth date
  std::optional<Timestamp> death_time;
  std::vector<Visit> visits;

  friend bool operator==(const PatientRecord&, const PatientRecord&) = default;
};

}  // namespace ehrmamba
