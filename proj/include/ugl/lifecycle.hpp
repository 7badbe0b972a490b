#pragma once

#include <algorithm>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ugl/date.hpp"
#include "ugl/error.hpp"

namespace ugl {

/// Symbol shared by the silence action type and its game.
inline constexpr std::string_view kSilenceSymbol = "o";
/// Prefix marking the lost counterpart of a basic action type in token symbols.
inline constexpr char kLostPrefix = '~';

/// One raw (user, action type, game, date) observation.
struct EventRecord {
  std::string user_id;
  std::string action_type;
  std::string game_id;
  Day date;

  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

enum class ActionTag : std::uint8_t { Basic, Lost, Silence };

/// What happened: a basic action type, the lost marker of one, or silence.
struct ActionKind {
  ActionTag tag = ActionTag::Basic;
  std::string base_type;

  static ActionKind basic(std::string type) { return {ActionTag::Basic, std::move(type)}; }
  static ActionKind lost(std::string type) { return {ActionTag::Lost, std::move(type)}; }
  static ActionKind silence() { return {ActionTag::Silence, std::string(kSilenceSymbol)}; }

  bool is_basic() const { return tag == ActionTag::Basic; }
  bool is_negative() const { return tag != ActionTag::Basic; }

  /// Token-level spelling: "login", "~login" for its lost marker, "o" for silence.
  std::string symbol() const {
    switch (tag) {
      case ActionTag::Lost:
        return kLostPrefix + base_type;
      case ActionTag::Silence:
        return std::string(kSilenceSymbol);
      case ActionTag::Basic:
        break;
    }
    return base_type;
  }

  friend auto operator<=>(const ActionKind&, const ActionKind&) = default;
};

/// An element of a (possibly enriched) day-granular action sequence.
struct Action {
  ActionKind kind;
  std::string game;
  Day date;

  static Action basic(std::string type, std::string game, Day date) {
    return {ActionKind::basic(std::move(type)), std::move(game), date};
  }

  friend bool operator==(const Action&, const Action&) = default;
};

/// A run of identical actions collapsed to (kind, game, start, end, freq).
struct AggregatedAction {
  ActionKind kind;
  std::string game;
  Day start;
  Day end;
  std::int32_t freq = 1;

  friend bool operator==(const AggregatedAction&, const AggregatedAction&) = default;
};

/// The enriched per-user lifecycle, oldest action first.
struct UglSequence {
  std::string user_id;
  std::vector<AggregatedAction> actions;

  friend bool operator==(const UglSequence&, const UglSequence&) = default;
};

struct LifecycleConfig {
  /// Use as a threshold to disable the corresponding marker entirely.
  static constexpr std::int32_t kNever = std::numeric_limits<std::int32_t>::max();

  std::int32_t lost_threshold_days = 7;
  /// Per-(type, game) lost thresholds overriding the global one.
  std::map<std::pair<std::string, std::string>, std::int32_t> lost_threshold_overrides;
  std::int32_t silence_threshold_days = 7;
  std::size_t max_len = 128;
  /// Ablation switches. Both on reproduces the full lifecycle.
  bool negative_feedback = true;
  bool aggregation = true;

  std::int32_t lost_threshold(const std::string& type, const std::string& game) const {
    if (auto it = lost_threshold_overrides.find({type, game}); it != lost_threshold_overrides.end())
      return it->second;
    return lost_threshold_days;
  }

  void validate() const {
    if (lost_threshold_days < 1 || silence_threshold_days < 1)
      throw ContractViolation("lifecycle thresholds must be >= 1 day");
    for (const auto& [key, days] : lost_threshold_overrides)
      if (days < 1)
        throw ContractViolation("lost threshold for (" + key.first + ", " + key.second + ") must be >= 1");
    if (max_len < 1) throw ContractViolation("max_len must be >= 1");
  }
};

namespace detail {

inline void require_sorted_basic(std::span<const Action> seq, std::string_view op) {
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (!seq[i].kind.is_basic())
      throw ContractViolation(std::string(op) + ": expected only basic actions, found '" +
                              seq[i].kind.symbol() + "' at position " + std::to_string(i));
    if (i > 0 && seq[i].date < seq[i - 1].date)
      throw ContractViolation(std::string(op) + ": input not sorted by date at position " +
                              std::to_string(i));
  }
}

// Markers attached to each basic position. Lost pairs and silence pairs are
// both derived from the basic view and spliced in one pass, so enrichment
// never reacts to its own output.
struct NegativePlan {
  std::vector<std::uint8_t> lost_after;      // lost marker right after basic i, dated d_i
  std::vector<std::uint8_t> lost_before;     // lost marker right before basic j, dated d_j
  std::vector<std::uint8_t> silence_after;   // silence pair between basic i and i + 1
};

inline NegativePlan plan_negative_actions(std::span<const Action> seq, const LifecycleConfig& cfg,
                                          bool lost, bool silence) {
  NegativePlan plan{std::vector<std::uint8_t>(seq.size()), std::vector<std::uint8_t>(seq.size()),
                    std::vector<std::uint8_t>(seq.size())};
  if (lost) {
    std::map<std::pair<std::string_view, std::string_view>, std::size_t> last_seen;
    for (std::size_t j = 0; j < seq.size(); ++j) {
      const auto key = std::pair<std::string_view, std::string_view>{seq[j].kind.base_type, seq[j].game};
      auto [it, inserted] = last_seen.try_emplace(key, j);
      if (!inserted) {
        const std::size_t i = it->second;
        if (days_between(seq[i].date, seq[j].date) > cfg.lost_threshold(seq[j].kind.base_type, seq[j].game)) {
          plan.lost_after[i] = 1;
          plan.lost_before[j] = 1;
        }
        it->second = j;
      }
    }
  }
  if (silence) {
    for (std::size_t i = 0; i + 1 < seq.size(); ++i)
      if (days_between(seq[i].date, seq[i + 1].date) > cfg.silence_threshold_days) plan.silence_after[i] = 1;
  }
  return plan;
}

inline std::vector<Action> splice(std::span<const Action> seq, const NegativePlan& plan) {
  std::vector<Action> out;
  out.reserve(seq.size() * 2);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (plan.lost_before[i]) out.push_back({ActionKind::lost(seq[i].kind.base_type), seq[i].game, seq[i].date});
    out.push_back(seq[i]);
    if (plan.lost_after[i]) out.push_back({ActionKind::lost(seq[i].kind.base_type), seq[i].game, seq[i].date});
    if (plan.silence_after[i]) {
      out.push_back({ActionKind::silence(), std::string(kSilenceSymbol), seq[i].date});
      out.push_back({ActionKind::silence(), std::string(kSilenceSymbol), seq[i + 1].date});
    }
  }
  return out;
}

}  // namespace detail

/// Splices a lost marker pair around every over-threshold gap between
/// consecutive occurrences of the same (type, game).
inline std::vector<Action> insert_lost_actions(std::span<const Action> seq, const LifecycleConfig& cfg) {
  detail::require_sorted_basic(seq, "insert_lost_actions");
  return detail::splice(seq, detail::plan_negative_actions(seq, cfg, true, false));
}

/// Splices a silence pair (o, o, d_i), (o, o, d_j) between adjacent basic
/// actions whose dates differ by more than the silence threshold.
inline std::vector<Action> insert_silence_actions(std::span<const Action> seq, const LifecycleConfig& cfg) {
  detail::require_sorted_basic(seq, "insert_silence_actions");
  return detail::splice(seq, detail::plan_negative_actions(seq, cfg, false, true));
}

/// Lost and silence enrichment together, both computed from the basic view.
inline std::vector<Action> insert_negative_actions(std::span<const Action> seq, const LifecycleConfig& cfg) {
  detail::require_sorted_basic(seq, "insert_negative_actions");
  return detail::splice(seq, detail::plan_negative_actions(seq, cfg, true, true));
}

/// Collapses maximal runs of consecutive identical basic (kind, game) entries.
/// Negative markers pass through untouched with freq 1.
inline std::vector<AggregatedAction> aggregate_runs(std::span<const Action> seq) {
  std::vector<AggregatedAction> out;
  out.reserve(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const Action& a = seq[i];
    if (i > 0 && a.date < seq[i - 1].date)
      throw ContractViolation("aggregate_runs: input not sorted by date at position " + std::to_string(i));
    if (a.kind.is_basic() && !out.empty()) {
      AggregatedAction& prev = out.back();
      if (prev.kind == a.kind && prev.game == a.game) {
        prev.end = a.date;
        ++prev.freq;
        continue;
      }
    }
    out.push_back({a.kind, a.game, a.date, a.date, 1});
  }
  return out;
}

/// Every entry becomes its own freq-1 aggregated action (the no-aggregation ablation).
inline std::vector<AggregatedAction> as_singletons(std::span<const Action> seq) {
  std::vector<AggregatedAction> out;
  out.reserve(seq.size());
  for (const Action& a : seq) out.push_back({a.kind, a.game, a.date, a.date, 1});
  return out;
}

/// Builds one user's lifecycle: stable date sort, negative feedback,
/// aggregation, then truncation to the most recent `max_len` entries.
inline UglSequence build_ugl(std::span<const EventRecord> events, const LifecycleConfig& cfg) {
  cfg.validate();
  UglSequence ugl;
  if (events.empty()) return ugl;
  ugl.user_id = events.front().user_id;
  for (const EventRecord& e : events)
    if (e.user_id != ugl.user_id)
      throw ContractViolation("build_ugl: mixed user ids '" + ugl.user_id + "' and '" + e.user_id + "'");

  std::vector<Action> basic;
  basic.reserve(events.size());
  for (const EventRecord& e : events) basic.push_back(Action::basic(e.action_type, e.game_id, e.date));
  std::stable_sort(basic.begin(), basic.end(), [](const Action& a, const Action& b) { return a.date < b.date; });

  std::vector<Action> enriched = cfg.negative_feedback ? insert_negative_actions(basic, cfg) : std::move(basic);
  ugl.actions = cfg.aggregation ? aggregate_runs(enriched) : as_singletons(enriched);
  if (ugl.actions.size() > cfg.max_len)
    ugl.actions.erase(ugl.actions.begin(), ugl.actions.end() - static_cast<std::ptrdiff_t>(cfg.max_len));
  return ugl;
}

/// Groups a mixed event log by user and builds every lifecycle. Output is
/// ordered by user id; per-user input order is preserved for same-day ties.
inline std::vector<UglSequence> build_corpus(std::span<const EventRecord> events, const LifecycleConfig& cfg) {
  std::map<std::string, std::vector<EventRecord>> by_user;
  for (const EventRecord& e : events) by_user[e.user_id].push_back(e);
  std::vector<UglSequence> corpus;
  corpus.reserve(by_user.size());
  for (const auto& [user, user_events] : by_user) corpus.push_back(build_ugl(user_events, cfg));
  return corpus;
}

}  // namespace ugl
