#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ugl/error.hpp"
#include "ugl/lifecycle.hpp"

namespace ugl {

/// Index into a vocabulary. Reserved tokens sit after every observed token.
enum class TokenId : std::uint32_t {};

constexpr std::uint32_t index_of(TokenId id) { return static_cast<std::uint32_t>(id); }

/// The fused type-game symbol that masking and prediction operate on.
struct TokenKey {
  ActionKind kind;
  std::string game;

  friend auto operator<=>(const TokenKey&, const TokenKey&) = default;
};

inline TokenKey token_of(const AggregatedAction& a) { return {a.kind, a.game}; }

inline constexpr std::string_view kMaskSymbol = "[M]";
inline constexpr std::string_view kPadSymbol = "[PAD]";

/// Observed type-game tokens with occurrence counts, followed by [M] and [PAD].
class VocabStats {
 public:
  VocabStats() = default;

  /// Canonical construction: sorts by descending count, then by (symbol, game).
  static VocabStats from_counts(std::vector<std::pair<TokenKey, std::uint64_t>> counts, std::size_t n_types,
                                std::size_t n_games) {
    for (const auto& [key, n] : counts)
      if (n == 0) throw ContractViolation("observed token '" + key.kind.symbol() + "·" + key.game + "' has count 0");
    std::sort(counts.begin(), counts.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      const std::string sa = a.first.kind.symbol(), sb = b.first.kind.symbol();
      if (sa != sb) return sa < sb;
      return a.first.game < b.first.game;
    });
    VocabStats s;
    s.n_types_ = n_types;
    s.n_games_ = n_games;
    for (auto& [key, n] : counts) {
      if (!s.index_.emplace(key, TokenId{static_cast<std::uint32_t>(s.tokens_.size())}).second)
        throw ContractViolation("duplicate token '" + key.kind.symbol() + "·" + key.game + "'");
      s.tokens_.push_back(std::move(key));
      s.counts_.push_back(n);
      s.total_ += n;
    }
    return s;
  }

  /// Observed tokens plus the two reserved entries.
  std::size_t size() const { return tokens_.size() + 2; }
  std::size_t n_observed() const { return tokens_.size(); }
  std::size_t n_types() const { return n_types_; }
  std::size_t n_games() const { return n_games_; }
  std::uint64_t total() const { return total_; }

  TokenId mask_id() const { return TokenId{static_cast<std::uint32_t>(tokens_.size())}; }
  TokenId pad_id() const { return TokenId{static_cast<std::uint32_t>(tokens_.size() + 1)}; }
  bool is_reserved(TokenId id) const { return index_of(id) >= tokens_.size(); }

  const TokenKey& token(TokenId id) const { return tokens_.at(index_of(id)); }
  /// Zero for reserved tokens.
  std::uint64_t count(TokenId id) const { return is_reserved(id) ? 0 : counts_.at(index_of(id)); }
  std::span<const std::uint64_t> observed_counts() const { return counts_; }

  std::optional<TokenId> find(const TokenKey& key) const {
    auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// Display form of any token id, including reserved ones.
  std::string symbol(TokenId id) const {
    if (id == mask_id()) return std::string(kMaskSymbol);
    if (id == pad_id()) return std::string(kPadSymbol);
    return token(id).kind.symbol();
  }

 private:
  std::vector<TokenKey> tokens_;
  std::vector<std::uint64_t> counts_;
  std::map<TokenKey, TokenId> index_;
  std::size_t n_types_ = 0;
  std::size_t n_games_ = 0;
  std::uint64_t total_ = 0;
};

/// Accumulates token counts. Partial counters from disjoint shards merge commutatively.
class VocabCounter {
 public:
  void add(const UglSequence& seq) {
    ++sequences_;
    for (const AggregatedAction& a : seq.actions) {
      ++counts_[token_of(a)];
      types_.insert(a.kind.symbol());
      games_.insert(a.game);
    }
  }

  void merge(const VocabCounter& other) {
    sequences_ += other.sequences_;
    for (const auto& [key, n] : other.counts_) counts_[key] += n;
    types_.insert(other.types_.begin(), other.types_.end());
    games_.insert(other.games_.begin(), other.games_.end());
  }

  /// |T| and |G| always include the silence symbol `o`, observed or not.
  VocabStats finish() const {
    if (sequences_ == 0) throw ContractViolation("build_vocab: empty corpus");
    auto types = types_;
    auto games = games_;
    types.insert(std::string(kSilenceSymbol));
    games.insert(std::string(kSilenceSymbol));
    return VocabStats::from_counts({counts_.begin(), counts_.end()}, types.size(), games.size());
  }

 private:
  std::map<TokenKey, std::uint64_t> counts_;
  std::set<std::string> types_;
  std::set<std::string> games_;
  std::size_t sequences_ = 0;
};

/// Every aggregated action contributes one occurrence, regardless of its freq.
inline VocabStats build_vocab(std::span<const UglSequence> corpus) {
  VocabCounter counter;
  for (const UglSequence& seq : corpus) counter.add(seq);
  return counter.finish();
}

/// Per-token masking probabilities. Reserved tokens always carry 0.
struct IpmTable {
  double q_c = 0.15;
  double q_v = 0.5;
  std::vector<double> q;

  double operator[](TokenId id) const { return q.at(index_of(id)); }
};

/// Inverse Probability Masking. With m = n / total and alpha = 1 / (m |T| |G|),
/// a token is masked with alpha * q_v, capped at q_c.
inline IpmTable ipm_probabilities(const VocabStats& stats, double q_c, double q_v) {
  if (!(q_c > 0.0 && q_c <= 1.0)) throw ContractViolation("q_c must lie in (0, 1]");
  if (!(q_v > 0.0 && q_v <= 1.0)) throw ContractViolation("q_v must lie in (0, 1]");
  if (stats.total() == 0) throw ContractViolation("ipm_probabilities: vocabulary has zero total count");
  if (stats.n_types() == 0 || stats.n_games() == 0) throw ContractViolation("ipm_probabilities: empty |T| or |G|");

  IpmTable table{q_c, q_v, std::vector<double>(stats.size(), 0.0)};
  const double classes = static_cast<double>(stats.n_types()) * static_cast<double>(stats.n_games());
  const auto counts = stats.observed_counts();
  for (std::size_t i = 0; i < counts.size(); ++i) {
    // alpha depends on n / total only; reducing the fraction first makes q
    // bit-identical under any uniform rescaling of the counts.
    const std::uint64_t g = std::gcd(counts[i], stats.total());
    const double n = static_cast<double>(counts[i] / g);
    const double total = static_cast<double>(stats.total() / g);
    const double scaled = q_v * total / (n * classes);
    table.q[i] = scaled >= q_c ? q_c : scaled;
  }
  return table;
}

/// Constant masking probability q for every observed token.
inline IpmTable vanilla_probabilities(const VocabStats& stats, double q) {
  if (!(q >= 0.0 && q <= 1.0)) throw ContractViolation("mask probability must lie in [0, 1]");
  IpmTable table{q, q, std::vector<double>(stats.size(), 0.0)};
  std::fill_n(table.q.begin(), stats.n_observed(), q);
  return table;
}

struct LongtailEntry {
  std::size_t rank = 0;
  TokenId id{};
  std::uint64_t count = 0;
  double share = 0.0;
  double cumulative_share = 0.0;
};

/// Ranked frequency profile of the observed tokens.
struct LongtailReport {
  std::vector<LongtailEntry> ranked;
  std::size_t head_tokens = 0;  // ranks [0, head_tokens) form the head; the rest the tail
  double head_share = 0.0;
  double tail_share = 0.0;
  std::size_t top_decile_tokens = 0;
  double top_decile_share = 0.0;
};

inline LongtailReport longtail_report(const VocabStats& stats) {
  LongtailReport report;
  const std::size_t n = stats.n_observed();
  if (n == 0 || stats.total() == 0) return report;
  const double total = static_cast<double>(stats.total());
  // Vocabulary order already ranks tokens by descending count.
  std::uint64_t running = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const TokenId id{static_cast<std::uint32_t>(r)};
    running += stats.count(id);
    report.ranked.push_back({r, id, stats.count(id), stats.count(id) / total, running / total});
  }
  report.head_tokens = (n + 1) / 2;
  report.head_share = report.ranked[report.head_tokens - 1].cumulative_share;
  report.tail_share = 1.0 - report.head_share;
  report.top_decile_tokens = std::max<std::size_t>(1, (n + 9) / 10);
  report.top_decile_share = report.ranked[report.top_decile_tokens - 1].cumulative_share;
  return report;
}

}  // namespace ugl
