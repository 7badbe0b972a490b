#pragma once

#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ugl/date.hpp"
#include "ugl/error.hpp"
#include "ugl/lifecycle.hpp"

namespace ugl {

namespace detail {

inline std::string require_string(const nlohmann::json& obj, const char* field, std::size_t line) {
  auto it = obj.find(field);
  if (it == obj.end()) throw ParseError(line, field, "missing");
  if (!it->is_string()) throw ParseError(line, field, "expected a string");
  return it->get<std::string>();
}

inline Day require_day(const nlohmann::json& obj, const char* field, std::size_t line) {
  const std::string text = require_string(obj, field, line);
  auto day = parse_day(text);
  if (!day) throw ParseError(line, field, "invalid calendar day '" + text + "'");
  return *day;
}

inline bool is_blank(const std::string& line) {
  return line.find_first_not_of(" \t\r") == std::string::npos;
}

// Reserved spellings would alias the markers the lifecycle inserts.
inline bool is_reserved_symbol(const std::string& s) {
  return s == kSilenceSymbol || (!s.empty() && s.front() == kLostPrefix) || s == "[M]" || s == "[PAD]";
}

}  // namespace detail

/// Reads newline-delimited event objects. Blank lines are skipped.
inline std::vector<EventRecord> parse_event_log(std::istream& in) {
  std::vector<EventRecord> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::is_blank(line)) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(line_no, "<record>", std::string("not a JSON object: ") + e.what());
    }
    if (!obj.is_object()) throw ParseError(line_no, "<record>", "not a JSON object");
    EventRecord rec;
    rec.user_id = detail::require_string(obj, "user", line_no);
    rec.action_type = detail::require_string(obj, "type", line_no);
    rec.game_id = detail::require_string(obj, "game", line_no);
    rec.date = detail::require_day(obj, "date", line_no);
    if (rec.action_type.empty()) throw ParseError(line_no, "type", "empty");
    if (rec.game_id.empty()) throw ParseError(line_no, "game", "empty");
    if (detail::is_reserved_symbol(rec.action_type))
      throw ParseError(line_no, "type", "reserved symbol '" + rec.action_type + "'");
    if (detail::is_reserved_symbol(rec.game_id))
      throw ParseError(line_no, "game", "reserved symbol '" + rec.game_id + "'");
    events.push_back(std::move(rec));
  }
  return events;
}

inline void write_event_log(std::ostream& out, std::span<const EventRecord> events) {
  for (const EventRecord& e : events) {
    nlohmann::ordered_json obj;
    obj["user"] = e.user_id;
    obj["type"] = e.action_type;
    obj["game"] = e.game_id;
    obj["date"] = format_day(e.date);
    out << obj.dump() << '\n';
  }
}

inline const char* tag_name(ActionTag tag) {
  switch (tag) {
    case ActionTag::Lost:
      return "lost";
    case ActionTag::Silence:
      return "silence";
    case ActionTag::Basic:
      break;
  }
  return "basic";
}

inline void write_ugl(std::ostream& out, std::span<const UglSequence> corpus) {
  for (const UglSequence& seq : corpus) {
    nlohmann::ordered_json obj;
    obj["user"] = seq.user_id;
    auto actions = nlohmann::ordered_json::array();
    for (const AggregatedAction& a : seq.actions) {
      nlohmann::ordered_json x;
      x["k"] = tag_name(a.kind.tag);
      x["t"] = a.kind.base_type;
      x["g"] = a.game;
      x["s"] = format_day(a.start);
      x["e"] = format_day(a.end);
      x["f"] = a.freq;
      actions.push_back(std::move(x));
    }
    obj["actions"] = std::move(actions);
    out << obj.dump() << '\n';
  }
}

inline std::vector<UglSequence> read_ugl(std::istream& in) {
  std::vector<UglSequence> corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::is_blank(line)) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(line_no, "<record>", std::string("not a JSON object: ") + e.what());
    }
    if (!obj.is_object()) throw ParseError(line_no, "<record>", "not a JSON object");
    UglSequence seq;
    seq.user_id = detail::require_string(obj, "user", line_no);
    auto actions = obj.find("actions");
    if (actions == obj.end() || !actions->is_array()) throw ParseError(line_no, "actions", "expected an array");
    for (const auto& x : *actions) {
      if (!x.is_object()) throw ParseError(line_no, "actions", "expected objects");
      const std::string k = detail::require_string(x, "k", line_no);
      AggregatedAction a;
      const std::string t = detail::require_string(x, "t", line_no);
      if (k == "basic") {
        a.kind = ActionKind::basic(t);
      } else if (k == "lost") {
        a.kind = ActionKind::lost(t);
      } else if (k == "silence") {
        a.kind = ActionKind::silence();
      } else {
        throw ParseError(line_no, "k", "unknown action kind '" + k + "'");
      }
      a.game = detail::require_string(x, "g", line_no);
      a.start = detail::require_day(x, "s", line_no);
      a.end = detail::require_day(x, "e", line_no);
      auto f = x.find("f");
      if (f == x.end() || !f->is_number_integer() || f->get<long long>() < 1)
        throw ParseError(line_no, "f", "expected a positive integer");
      a.freq = static_cast<std::int32_t>(f->get<long long>());
      if (a.end < a.start) throw ParseError(line_no, "e", "end precedes start");
      seq.actions.push_back(std::move(a));
    }
    corpus.push_back(std::move(seq));
  }
  return corpus;
}

}  // namespace ugl
