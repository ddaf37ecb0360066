#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ehrmamba/error.hpp"
#include "ehrmamba/record.hpp"

namespace ehrmamba {

using TokenId = std::int32_t;

// The nine token categories indexed by the type embedding table.
enum class TokenType : std::uint8_t {
  Pad = 0,
  Start,       // [CLS] and task tokens
  VisitStart,  // [VS]
  VisitEnd,    // [VE]
  Interval,    // [W_i], [M_i], [LT]
  Register,    // [REG]
  Procedure,
  Medication,
  Lab,
};

inline constexpr std::size_t kTokenTypeCount = 9;

inline constexpr std::array<std::string_view, kTokenTypeCount> kTokenTypeNames = {
    "pad", "start", "visit_start", "visit_end", "interval", "register", "procedure", "medication", "lab"};

inline std::string_view token_type_name(TokenType t) { return kTokenTypeNames[static_cast<std::size_t>(t)]; }

inline TokenType parse_token_type(std::string_view name) {
  for (std::size_t i = 0; i < kTokenTypeCount; ++i) {
    if (kTokenTypeNames[i] == name) return static_cast<TokenType>(i);
  }
  throw DataError("unknown token type '" + std::string(name) + "'");
}

inline bool is_event_type(TokenType t) {
  return t == TokenType::Procedure || t == TokenType::Medication || t == TokenType::Lab;
}

inline TokenType token_type_for(EventKind k) {
  switch (k) {
    case EventKind::Procedure: return TokenType::Procedure;
    case EventKind::Medication: return TokenType::Medication;
    case EventKind::Lab: return TokenType::Lab;
  }
  return TokenType::Procedure;
}

enum class TaskKind { MOR = 0, LOS, REA, C0, C1, C2 };

inline constexpr std::array<TaskKind, 6> kAllTasks = {TaskKind::MOR, TaskKind::LOS, TaskKind::REA,
                                                      TaskKind::C0,  TaskKind::C1,  TaskKind::C2};

inline std::string_view task_name(TaskKind t) {
  static constexpr std::array<std::string_view, 6> names = {"MOR", "LOS", "REA", "C0", "C1", "C2"};
  return names[static_cast<std::size_t>(t)];
}

inline TaskKind parse_task(std::string_view name) {
  for (TaskKind t : kAllTasks) {
    if (task_name(t) == name) return t;
  }
  throw ArgumentError("unknown task '" + std::string(name) + "'");
}

// Fixed ids of the special-token registry; catalog concepts follow.
namespace tokens {
inline constexpr TokenId PAD = 0;
inline constexpr TokenId CLS = 1;
inline constexpr TokenId VS = 2;
inline constexpr TokenId VE = 3;
inline constexpr TokenId REG = 4;
inline constexpr TokenId UNK = 5;
inline constexpr TokenId MASK = 6;
inline constexpr TokenId W0 = 7;  // W_0..W_3
inline constexpr TokenId M0 = 11;  // M_0..M_12
inline constexpr TokenId LT = 24;
inline constexpr TokenId TASK0 = 25;  // MOR, LOS, REA, C0, C1, C2
inline constexpr TokenId kSpecialCount = 31;
}  // namespace tokens

inline constexpr int kWeekTokens = 4;
inline constexpr int kMonthTokens = 13;

inline TokenId week_token(int w) { return tokens::W0 + w; }
inline TokenId month_token(int m) { return tokens::M0 + m; }
inline TokenId task_token(TaskKind t) { return tokens::TASK0 + static_cast<TokenId>(t); }

inline bool is_task_token(TokenId id) { return id >= tokens::TASK0 && id < tokens::TASK0 + 6; }

// Maps a non-negative gap in whole days to its interval token:
// [W_floor(g/7)] below 28 days, [M_floor(g/30.44)] (capped at 12) below a
// year, [LT] otherwise.
inline TokenId interval_token(std::int64_t gap_days) {
  if (gap_days < 0) throw ArgumentError("interval_token: negative gap " + std::to_string(gap_days));
  if (gap_days < 28) return week_token(static_cast<int>(gap_days / 7));
  if (gap_days < 365) {
    const int m = static_cast<int>(static_cast<double>(gap_days) / 30.44);
    return month_token(std::min(m, kMonthTokens - 1));
  }
  return tokens::LT;
}

// Whole days between the end of one visit and the start of the next,
// floored and clamped at zero for overlapping visits.
inline std::int64_t visit_gap_days(const Visit& previous, const Visit& next) {
  const Timestamp delta = next.start - previous.end;
  if (delta <= 0) return 0;
  return delta / kSecondsPerDay;
}

struct CatalogEntry {
  std::string code;
  EventKind kind = EventKind::Procedure;
};

// Token vocabulary: special tokens at fixed ids, then catalog concepts in
// catalog order. Immutable after construction.
class Vocabulary {
 public:
  static Vocabulary build(const std::vector<CatalogEntry>& catalog) {
    Vocabulary v;
    for (TokenId id = 0; id < tokens::kSpecialCount; ++id) {
      v.add(special_name(id), special_type(id));
    }
    for (const auto& e : catalog) {
      if (v.token_to_id_.count(e.code) != 0) {
        throw DataError("duplicate vocabulary entry '" + e.code + "'");
      }
      v.add(e.code, token_type_for(e.kind));
    }
    return v;
  }

  std::size_t size() const { return id_to_token_.size(); }

  const std::string& token(TokenId id) const {
    check(id);
    return id_to_token_[static_cast<std::size_t>(id)];
  }

  TokenType type_of(TokenId id) const {
    check(id);
    return types_[static_cast<std::size_t>(id)];
  }

  std::optional<TokenId> find(std::string_view tok) const {
    auto it = token_to_id_.find(std::string(tok));
    if (it == token_to_id_.end()) return std::nullopt;
    return it->second;
  }

  TokenId id_or_unk(std::string_view tok) const { return find(tok).value_or(tokens::UNK); }

  // Name -> id for every registered special and task token.
  std::vector<std::pair<std::string, TokenId>> special_ids() const {
    std::vector<std::pair<std::string, TokenId>> out;
    for (TokenId id = 0; id < tokens::kSpecialCount; ++id) out.emplace_back(id_to_token_[id], id);
    return out;
  }

  // One line per token: "<id>\t<token>\t<type>", sorted by id.
  void write_tsv(std::ostream& os) const {
    for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
      os << i << '\t' << id_to_token_[i] << '\t' << token_type_name(types_[i]) << '\n';
    }
  }

  static Vocabulary read_tsv(std::istream& is) {
    Vocabulary v;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto t1 = line.find('\t');
      const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
      if (t2 == std::string::npos) throw FormatError("vocabulary line " + std::to_string(line_no) + ": expected 3 fields");
      const std::string id_text = line.substr(0, t1);
      const std::string tok = line.substr(t1 + 1, t2 - t1 - 1);
      const TokenType type = parse_token_type(line.substr(t2 + 1));
      if (id_text != std::to_string(v.size())) {
        throw FormatError("vocabulary line " + std::to_string(line_no) + ": ids must be dense and sorted");
      }
      if (v.token_to_id_.count(tok) != 0) throw DataError("duplicate vocabulary entry '" + tok + "'");
      const auto id = static_cast<TokenId>(v.size());
      if (id < tokens::kSpecialCount && (tok != special_name(id) || type != special_type(id))) {
        throw FormatError("vocabulary line " + std::to_string(line_no) + ": special token registry mismatch");
      }
      v.add(tok, type);
    }
    if (v.size() < static_cast<std::size_t>(tokens::kSpecialCount)) {
      throw FormatError("vocabulary is missing special tokens");
    }
    return v;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.id_to_token_ == b.id_to_token_ && a.types_ == b.types_;
  }

  static std::string special_name(TokenId id) {
    switch (id) {
      case tokens::PAD: return "[PAD]";
      case tokens::CLS: return "[CLS]";
      case tokens::VS: return "[VS]";
      case tokens::VE: return "[VE]";
      case tokens::REG: return "[REG]";
      case tokens::UNK: return "[UNK]";
      case tokens::MASK: return "[MASK]";
      case tokens::LT: return "[LT]";
      default: break;
    }
    if (id >= tokens::W0 && id < tokens::W0 + kWeekTokens) return "[W_" + std::to_string(id - tokens::W0) + "]";
    if (id >= tokens::M0 && id < tokens::M0 + kMonthTokens) return "[M_" + std::to_string(id - tokens::M0) + "]";
    if (is_task_token(id)) return "[" + std::string(task_name(static_cast<TaskKind>(id - tokens::TASK0))) + "]";
    throw ArgumentError("not a special token id: " + std::to_string(id));
  }

  static TokenType special_type(TokenId id) {
    switch (id) {
      case tokens::PAD:
      case tokens::UNK:
      case tokens::MASK: return TokenType::Pad;
      case tokens::CLS: return TokenType::Start;
      case tokens::VS: return TokenType::VisitStart;
      case tokens::VE: return TokenType::VisitEnd;
      case tokens::REG: return TokenType::Register;
      default: break;
    }
    if (is_task_token(id)) return TokenType::Start;
    return TokenType::Interval;
  }

 private:
  void add(std::string tok, TokenType type) {
    token_to_id_.emplace(tok, static_cast<TokenId>(id_to_token_.size()));
    id_to_token_.push_back(std::move(tok));
    types_.push_back(type);
  }

  void check(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
      throw ShapeError("token id " + std::to_string(id) + " out of range [0, " + std::to_string(size()) + ")");
    }
  }

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<TokenType> types_;
};

// Encoded patient: token ids plus parallel attribute streams. Special tokens
// and padding carry zero age/time/segment/visit order.
struct PatientSequence {
  std::string patient_id;
  std::vector<TokenId> ids;
  std::vector<TokenType> types;
  std::vector<double> ages;   // years
  std::vector<double> times;  // weeks since the first visit start
  std::vector<int> segments;  // 1/2 alternating per visit, 0 for special tokens
  std::vector<int> visit_orders;
  std::vector<int> positions;
  std::size_t true_length = 0;

  std::size_t length() const { return ids.size(); }

  void push(TokenId id, TokenType type, double age = 0.0, double time = 0.0, int segment = 0,
            int visit_order = 0) {
    positions.push_back(static_cast<int>(ids.size()));
    ids.push_back(id);
    types.push_back(type);
    ages.push_back(age);
    times.push_back(time);
    segments.push_back(segment);
    visit_orders.push_back(visit_order);
  }

  friend bool operator==(const PatientSequence&, const PatientSequence&) = default;
};

inline double age_in_years(Timestamp t, Timestamp birth) {
  return static_cast<double>(t - birth) / (kDaysPerYear * static_cast<double>(kSecondsPerDay));
}

inline double weeks_between(Timestamp from, Timestamp to) {
  return static_cast<double>(to - from) / (7.0 * static_cast<double>(kSecondsPerDay));
}

namespace detail {

inline void pad_to(PatientSequence& s, std::size_t l_c) {
  s.ids.resize(l_c, tokens::PAD);
  s.types.resize(l_c, TokenType::Pad);
  s.ages.resize(l_c, 0.0);
  s.times.resize(l_c, 0.0);
  s.segments.resize(l_c, 0);
  s.visit_orders.resize(l_c, 0);
  s.positions.resize(l_c, 0);
}

inline void erase_range(PatientSequence& s, std::size_t begin, std::size_t end) {
  auto cut = [&](auto& v) { v.erase(v.begin() + static_cast<std::ptrdiff_t>(begin), v.begin() + static_cast<std::ptrdiff_t>(end)); };
  cut(s.ids);
  cut(s.types);
  cut(s.ages);
  cut(s.times);
  cut(s.segments);
  cut(s.visit_orders);
  cut(s.positions);
}

struct VisitBlock {
  std::size_t begin = 0;        // interval token or [VS]
  std::size_t visit_start = 0;  // [VS]
  std::size_t visit_end = 0;    // [VE]
  std::size_t end = 0;          // one past the token after [VE]
};

inline std::vector<VisitBlock> visit_blocks(const PatientSequence& s, std::size_t length) {
  std::vector<VisitBlock> blocks;
  std::size_t i = 1;
  while (i < length) {
    VisitBlock b;
    b.begin = i;
    if (s.types[i] == TokenType::Interval) ++i;
    if (i >= length || s.ids[i] != tokens::VS) {
      throw DataError("malformed sequence: expected [VS] at position " + std::to_string(i));
    }
    b.visit_start = i;
    while (i < length && s.ids[i] != tokens::VE) ++i;
    if (i >= length) throw DataError("malformed sequence: [VS] without matching [VE]");
    b.visit_end = i;
    b.end = std::min(i + 2, length);
    i = b.end;
    blocks.push_back(b);
  }
  return blocks;
}

}  // namespace detail

// Right-pads to l_c, or drops the oldest whole visits (with the interval
// token that followed them) until the sequence fits. Positions are
// re-indexed from 0.
inline PatientSequence pad_truncate(PatientSequence seq, std::size_t l_c) {
  if (l_c < 2) throw ArgumentError("context length must be at least 2");
  std::size_t len = seq.true_length;
  if (len > seq.ids.size()) throw DataError("true_length exceeds sequence length");
  detail::pad_to(seq, len);
  while (len > l_c) {
    auto blocks = detail::visit_blocks(seq, len);
    if (blocks.empty()) throw DataError("sequence longer than context but has no visits to drop");
    if (blocks.size() == 1) {
      const auto& b = blocks.front();
      throw DataError("oversize visit: " + std::to_string(b.visit_end - b.visit_start + 1) +
                      " tokens exceed context budget " + std::to_string(l_c - 2));
    }
    const auto& last = blocks.back();
    if (last.visit_end - last.visit_start + 1 > l_c - 2) {
      throw DataError("oversize visit: " + std::to_string(last.visit_end - last.visit_start + 1) +
                      " tokens exceed context budget " + std::to_string(l_c - 2));
    }
    std::size_t cut_end = blocks[0].end;
    if (cut_end < len && seq.types[cut_end] == TokenType::Interval) ++cut_end;
    detail::erase_range(seq, blocks[0].begin, cut_end);
    len -= cut_end - blocks[0].begin;
  }
  seq.true_length = len;
  detail::pad_to(seq, l_c);
  for (std::size_t i = 0; i < l_c; ++i) seq.positions[i] = i < len ? static_cast<int>(i) : 0;
  return seq;
}

// Builds [CLS], then per visit: interval token (after the first visit),
// [VS], chronologically ordered events, [VE], [REG]; padded or truncated to
// l_c. Unknown concepts map to [UNK] with the event's own type.
inline PatientSequence encode_patient(const PatientRecord& record, const Vocabulary& vocab, std::size_t l_c) {
  if (record.visits.empty()) throw DataError("cannot encode patient '" + record.patient_id + "': no visits");
  PatientSequence s;
  s.patient_id = record.patient_id;
  const Timestamp reference = record.visits.front().start;
  s.push(tokens::CLS, TokenType::Start);
  for (std::size_t k = 0; k < record.visits.size(); ++k) {
    const Visit& visit = record.visits[k];
    if (k > 0) {
      s.push(interval_token(visit_gap_days(record.visits[k - 1], visit)), TokenType::Interval);
    }
    s.push(tokens::VS, TokenType::VisitStart);
    std::vector<const RawEvent*> events;
    events.reserve(visit.events.size());
    for (const auto& e : visit.events) events.push_back(&e);
    std::stable_sort(events.begin(), events.end(),
                     [](const RawEvent* a, const RawEvent* b) { return a->timestamp < b->timestamp; });
    const int segment = k % 2 == 0 ? 1 : 2;
    const int order = static_cast<int>(k) + 1;
    for (const RawEvent* e : events) {
      s.push(vocab.id_or_unk(e->code), token_type_for(e->kind), age_in_years(e->timestamp, record.birth_date),
             weeks_between(reference, e->timestamp), segment, order);
    }
    s.push(tokens::VE, TokenType::VisitEnd);
    s.push(tokens::REG, TokenType::Register);
  }
  s.true_length = s.ids.size();
  return pad_truncate(std::move(s), l_c);
}

// Replaces the first token and the last non-pad token with the task token.
inline PatientSequence apply_task_token(PatientSequence seq, TaskKind task) {
  if (seq.true_length == 0) throw DataError("malformed sequence: empty");
  const TokenId first = seq.ids.front();
  if (first != tokens::CLS && !is_task_token(first)) {
    throw DataError("malformed sequence: first token is not [CLS] or a task token");
  }
  const std::size_t last = seq.true_length - 1;
  if (last == 0 || (seq.ids[last] != tokens::REG && !is_task_token(seq.ids[last]))) {
    throw DataError("malformed sequence: last non-pad token is not [REG]");
  }
  const TokenId t = task_token(task);
  seq.ids.front() = t;
  seq.ids[last] = t;
  seq.types.front() = TokenType::Start;
  seq.types[last] = TokenType::Start;
  return seq;
}

// Concept strings per visit, in order.
inline std::vector<std::vector<std::string>> decode_visits(const PatientSequence& seq, const Vocabulary& vocab) {
  std::vector<std::vector<std::string>> visits;
  bool inside = false;
  for (std::size_t i = 0; i < seq.true_length; ++i) {
    const TokenId id = seq.ids[i];
    if (id == tokens::VS) {
      visits.emplace_back();
      inside = true;
    } else if (id == tokens::VE) {
      inside = false;
    } else if (inside) {
      visits.back().push_back(vocab.token(id));
    }
  }
  return visits;
}

// Returns the first structural violation, if any.
inline std::optional<std::string> check_sequence(const PatientSequence& s) {
  const std::size_t n = s.ids.size();
  if (s.types.size() != n || s.ages.size() != n || s.times.size() != n || s.segments.size() != n ||
      s.visit_orders.size() != n || s.positions.size() != n) {
    return "attribute streams differ in length";
  }
  if (s.true_length > n) return "true_length exceeds context length";
  if (s.true_length == 0) return "empty sequence";
  if (s.ids[0] != tokens::CLS && !is_task_token(s.ids[0])) return "first token is not [CLS] or a task token";
  for (std::size_t i = s.true_length; i < n; ++i) {
    if (s.ids[i] != tokens::PAD || s.types[i] != TokenType::Pad || s.ages[i] != 0.0 || s.times[i] != 0.0 ||
        s.segments[i] != 0 || s.visit_orders[i] != 0 || s.positions[i] != 0) {
      return "non-zero padding at position " + std::to_string(i);
    }
  }
  bool inside = false;
  int prev_order = 0;
  int prev_segment = 0;
  int visit_order = 0;
  int visit_segment = 0;
  double prev_time = 0.0;
  bool first_event = true;
  for (std::size_t i = 0; i < s.true_length; ++i) {
    const TokenId id = s.ids[i];
    if (s.positions[i] != static_cast<int>(i)) return "position stream not contiguous at " + std::to_string(i);
    if (id == tokens::PAD) return "[PAD] inside sequence at " + std::to_string(i);
    if (id == tokens::VS) {
      if (inside) return "nested [VS] at " + std::to_string(i);
      inside = true;
      visit_order = 0;
      first_event = true;
    } else if (id == tokens::VE) {
      if (!inside) return "[VE] without [VS] at " + std::to_string(i);
      inside = false;
      const bool last = i + 1 == s.true_length - 1;
      if (i + 1 >= s.true_length) return "[VE] not followed by [REG] at " + std::to_string(i);
      if (s.ids[i + 1] != tokens::REG && !(last && is_task_token(s.ids[i + 1]))) {
        return "[VE] not followed by [REG] at " + std::to_string(i);
      }
      if (visit_order != 0) {
        if (prev_order != 0 && visit_order != prev_order + 1) return "visit order does not increment";
        if (prev_segment != 0 && visit_segment == prev_segment) return "segment does not alternate";
        prev_order = visit_order;
        prev_segment = visit_segment;
      }
    } else if (is_event_type(s.types[i])) {
      if (!inside) return "event token outside a visit at " + std::to_string(i);
      if (s.segments[i] != 1 && s.segments[i] != 2) return "event segment not in {1,2} at " + std::to_string(i);
      if (first_event) {
        visit_order = s.visit_orders[i];
        visit_segment = s.segments[i];
        first_event = false;
      } else {
        if (s.visit_orders[i] != visit_order || s.segments[i] != visit_segment) {
          return "visit attributes change within a visit at " + std::to_string(i);
        }
        if (s.times[i] < prev_time) return "times decrease within a visit at " + std::to_string(i);
      }
      prev_time = s.times[i];
    } else {
      if (s.ages[i] != 0.0 || s.times[i] != 0.0 || s.segments[i] != 0 || s.visit_orders[i] != 0) {
        return "special token with non-zero attributes at " + std::to_string(i);
      }
    }
  }
  if (inside) return "[VS] without matching [VE]";
  return std::nullopt;
}

inline void validate_sequence(const PatientSequence& s) {
  if (auto problem = check_sequence(s)) throw DataError("invalid sequence '" + s.patient_id + "': " + *problem);
}

}  // namespace ehrmamba
