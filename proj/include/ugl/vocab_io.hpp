#pragma once

#include <cstdio>
#include <istream>
#include <ostream>
#include <string>
#include <utility>

#include <json.hpp>

#include "ugl/error.hpp"
#include "ugl/vocab.hpp"

namespace ugl {

/// Vocabulary file: token order in `tokens` is the canonical TokenId assignment.
inline void write_vocab(std::ostream& out, const VocabStats& stats, const IpmTable& ipm) {
  nlohmann::ordered_json doc;
  auto tokens = nlohmann::ordered_json::array();
  for (std::uint32_t i = 0; i < stats.size(); ++i) {
    const TokenId id{i};
    nlohmann::ordered_json t;
    t["t"] = stats.symbol(id);
    t["g"] = stats.is_reserved(id) ? std::string() : stats.token(id).game;
    t["count"] = stats.count(id);
    t["q_ipm"] = ipm[id];
    tokens.push_back(std::move(t));
  }
  doc["tokens"] = std::move(tokens);
  doc["q_c"] = ipm.q_c;
  doc["q_v"] = ipm.q_v;
  doc["n_types"] = stats.n_types();
  doc["n_games"] = stats.n_games();
  out << doc.dump(1) << '\n';
}

struct VocabFile {
  VocabStats stats;
  IpmTable ipm;
};

inline VocabFile read_vocab(std::istream& in) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(1, "<document>", e.what());
  }
  auto field = [&](const char* name) -> const nlohmann::json& {
    auto it = doc.find(name);
    if (it == doc.end()) throw ParseError(1, name, "missing");
    return *it;
  };
  const auto& tokens = field("tokens");
  if (!tokens.is_array()) throw ParseError(1, "tokens", "expected an array");

  std::vector<std::pair<TokenKey, std::uint64_t>> counts;
  std::vector<double> q;
  bool saw_mask = false, saw_pad = false;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto& t = tokens[i];
    const std::string sym = t.at("t").get<std::string>();
    const std::string game = t.at("g").get<std::string>();
    const auto count = t.at("count").get<std::uint64_t>();
    q.push_back(t.at("q_ipm").get<double>());
    if (sym == kMaskSymbol || sym == kPadSymbol) {
      (sym == kMaskSymbol ? saw_mask : saw_pad) = true;
      continue;
    }
    if (saw_mask || saw_pad) throw ParseError(1, "tokens", "reserved tokens must come last");
    ActionKind kind;
    if (sym == kSilenceSymbol)
      kind = ActionKind::silence();
    else if (!sym.empty() && sym.front() == kLostPrefix)
      kind = ActionKind::lost(sym.substr(1));
    else
      kind = ActionKind::basic(sym);
    counts.push_back({TokenKey{std::move(kind), game}, count});
  }
  if (!saw_mask || !saw_pad) throw ParseError(1, "tokens", "missing reserved [M]/[PAD] entries");

  // Counts in a written file are already in canonical order; from_counts re-sorts
  // and must reproduce it.
  VocabStats stats = VocabStats::from_counts(counts, field("n_types").get<std::size_t>(),
                                             field("n_games").get<std::size_t>());
  for (std::size_t i = 0; i < counts.size(); ++i)
    if (stats.token(TokenId{static_cast<std::uint32_t>(i)}) != counts[i].first)
      throw ParseError(1, "tokens", "token order is not canonical at index " + std::to_string(i));
  IpmTable ipm{field("q_c").get<double>(), field("q_v").get<double>(), std::move(q)};
  return {std::move(stats), std::move(ipm)};
}

/// rank,t,g,count,share,cumulative_share followed by a summary block.
inline void write_longtail(std::ostream& out, const VocabStats& stats, const LongtailReport& report) {
  char buf[64];
  out << "rank,t,g,count,share,cumulative_share\n";
  for (const LongtailEntry& e : report.ranked) {
    out << e.rank << ',' << stats.symbol(e.id) << ',' << stats.token(e.id).game << ',' << e.count;
    std::snprintf(buf, sizeof buf, ",%.9g,%.9g\n", e.share, e.cumulative_share);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "%.9g", report.head_share);
  out << "# head_tokens=" << report.head_tokens << " head_share=" << buf;
  std::snprintf(buf, sizeof buf, "%.9g", report.tail_share);
  out << " tail_share=" << buf;
  std::snprintf(buf, sizeof buf, "%.9g", report.top_decile_share);
  out << " top_decile_tokens=" << report.top_decile_tokens << " top_decile_share=" << buf << '\n';
}

}  // namespace ugl
