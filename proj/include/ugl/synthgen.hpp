#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ugl/date.hpp"
#include "ugl/error.hpp"
#include "ugl/lifecycle.hpp"
#include "ugl/seed.hpp"

namespace ugl {

struct SynthConfig {
  std::size_t n_users = 2000;
  std::size_t n_games = 20;
  std::size_t n_types = 8;
  double zipf_exponent = 1.2;
  double games_per_user_mean = 3.5;
  std::int32_t horizon_days = 180;
  double session_rate = 6.0;   // expected active days per user
  double gap_mean_days = 6.0;  // mean gap between active days
  double plays_mean = 2.0;     // mean plays per session, merged by aggregation
  std::size_t target_game = 3; // popularity rank of the game driving labels
  double label_noise = 0.1;
  double label_scale = 8.0;    // logit slope on target-game interest
  double label_offset = 0.4;   // interest at which P(label) = 1/2
  double interest_min = 0.0;
  double interest_max = 1.0;
  Day start_date = *parse_day("2022-07-01");
  std::uint64_t seed = 7;

  void validate() const {
    if (n_users < 1 || n_games < 1 || n_types < 1 || horizon_days < 1)
      throw ContractViolation("synth counts must be >= 1");
    if (!(zipf_exponent > 0)) throw ContractViolation("zipf_exponent must be > 0");
    if (!(label_noise >= 0 && label_noise < 0.5)) throw ContractViolation("label_noise must lie in [0, 0.5)");
    if (target_game >= n_games) throw ContractViolation("target_game must be < n_games");
    if (!(games_per_user_mean > 0) || !(session_rate > 0) || !(gap_mean_days >= 1))
      throw ContractViolation("games_per_user_mean and session_rate must be > 0, gap_mean_days >= 1");
    if (!(plays_mean >= 1)) throw ContractViolation("plays_mean must be >= 1");
    if (!(interest_min >= 0 && interest_min <= interest_max && interest_max <= 1))
      throw ContractViolation("interest range must satisfy 0 <= min <= max <= 1");
  }
};

/// Funnel-ordered action types: earlier types are more frequent.
inline std::string type_name(std::size_t i) {
  static const char* names[] = {"login", "play", "click", "download", "appoint", "register", "pay", "share"};
  return i < std::size(names) ? names[i] : "act" + std::to_string(i);
}

/// Games are named by popularity rank: "A" is the most popular.
inline std::string game_name(std::size_t i) {
  return i < 26 ? std::string(1, static_cast<char>('A' + i)) : "G" + std::to_string(i);
}

inline std::string user_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "u%06zu", i);
  return buf;
}

/// Normalised Zipf popularity mass of each game rank.
inline std::vector<double> zipf_mass(std::size_t n, double exponent) {
  std::vector<double> w(n);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) total += w[i] = std::pow(static_cast<double>(i + 1), -exponent);
  for (double& x : w) x /= total;
  return w;
}

struct LabelRow {
  std::string user_id;
  int label = 0;
  std::vector<double> features;
};

struct TruthRow {
  std::string user_id;
  std::string game;
  double interest = 0.0;
};

struct SynthData {
  std::vector<EventRecord> events;
  std::vector<LabelRow> labels;
  std::vector<TruthRow> truth;
};

namespace detail {

// Per-session probability of each type beyond login/play, scaled by interest.
inline double funnel_rate(std::size_t type) { return 0.4 * std::pow(0.6, static_cast<double>(type - 2)); }

inline std::size_t weighted_pick(const std::vector<double>& w, std::mt19937_64& rng) {
  return std::discrete_distribution<std::size_t>(w.begin(), w.end())(rng);
}

}  // namespace detail

/// Synthetic population: Zipf game popularity, a few owned games per user
/// with a latent interest each, geometric inactivity gaps, and labels driven
/// by interest in the target game.
inline SynthData generate(const SynthConfig& cfg) {
  cfg.validate();
  SynthData data;
  const std::vector<double> popularity = zipf_mass(cfg.n_games, cfg.zipf_exponent);
  const std::string target = game_name(cfg.target_game);

  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    std::mt19937_64 rng(derive_seed(cfg.seed, u));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::string user = user_name(u);

    // owned games, sampled without replacement by popularity
    const auto n_owned = std::clamp<std::size_t>(
        std::poisson_distribution<std::size_t>(cfg.games_per_user_mean)(rng), 1, cfg.n_games);
    std::vector<double> weights = popularity;
    std::vector<std::size_t> owned;
    std::vector<double> interest;
    for (std::size_t k = 0; k < n_owned; ++k) {
      const std::size_t g = detail::weighted_pick(weights, rng);
      weights[g] = 0;
      owned.push_back(g);
      interest.push_back(cfg.interest_min + (cfg.interest_max - cfg.interest_min) * unit(rng));
    }
    std::vector<double> session_weight(owned.size());
    for (std::size_t k = 0; k < owned.size(); ++k) session_weight[k] = popularity[owned[k]] * (0.25 + interest[k]);

    const auto n_active = std::max<std::size_t>(1, std::poisson_distribution<std::size_t>(cfg.session_rate)(rng));
    std::geometric_distribution<std::int32_t> gap(1.0 / cfg.gap_mean_days);
    std::int32_t day = std::uniform_int_distribution<std::int32_t>(0, std::max(0, cfg.horizon_days / 3 - 1))(rng);
    std::size_t prev_game = owned.size();
    std::size_t pay_like = 0;
    std::size_t active_days = 0;
    auto emit = [&](std::size_t type, std::size_t game, std::int32_t d) {
      data.events.push_back({user, type_name(std::min(type, cfg.n_types - 1)), game_name(game),
                             add_days(cfg.start_date, d)});
      if (type >= 5) ++pay_like;
    };
    for (std::size_t s = 0; s < n_active && day < cfg.horizon_days; ++s) {
      ++active_days;
      const std::size_t sessions = unit(rng) < 0.25 && owned.size() > 1 ? 2 : 1;
      std::size_t last = owned.size();
      for (std::size_t k = 0; k < sessions; ++k) {
        const std::size_t pick = detail::weighted_pick(session_weight, rng);
        if (k > 0 && pick == last) break;  // a repeat draw means a one-game day
        last = pick;
        const std::size_t game = owned[pick];
        const std::size_t plays = 1 + std::geometric_distribution<std::size_t>(1.0 / cfg.plays_mean)(rng);
        if (k == 0 && pick == prev_game && unit(rng) < 0.5) {
          // continuing streak: plays only, so runs span days
          for (std::size_t p = 0; p < plays; ++p) emit(1, game, day);
          continue;
        }
        emit(0, game, day);
        if (cfg.n_types > 1)
          for (std::size_t p = 0; p < plays; ++p) emit(1, game, day);
        for (std::size_t t = 2; t < cfg.n_types; ++t)
          if (unit(rng) < detail::funnel_rate(t) * (0.5 + interest[pick])) emit(t, game, day);
      }
      prev_game = last;
      day += gap(rng) + 1;
    }

    double target_interest = 0;
    for (std::size_t k = 0; k < owned.size(); ++k) {
      data.truth.push_back({user, game_name(owned[k]), interest[k]});
      if (owned[k] == cfg.target_game) target_interest = interest[k];
    }
    const double p = 1.0 / (1.0 + std::exp(-cfg.label_scale * (target_interest - cfg.label_offset)));
    int label = unit(rng) < p ? 1 : 0;
    if (unit(rng) < cfg.label_noise) label = 1 - label;
    std::normal_distribution<double> noise(0.0, 1.0);
    LabelRow row{user, label, {}};
    row.features.push_back(std::log1p(static_cast<double>(active_days)) + 0.3 * noise(rng));
    row.features.push_back(std::log1p(static_cast<double>(pay_like)) + 0.3 * noise(rng));
    row.features.push_back(static_cast<double>(owned.size()) + noise(rng));
    row.features.push_back(noise(rng));
    data.labels.push_back(std::move(row));
  }
  return data;
}

/// user,label,feat_0..feat_k
inline void write_labels(std::ostream& out, const std::vector<LabelRow>& rows) {
  out << "user,label";
  const std::size_t k = rows.empty() ? 0 : rows.front().features.size();
  for (std::size_t i = 0; i < k; ++i) out << ",feat_" << i;
  out << '\n';
  char buf[32];
  for (const LabelRow& r : rows) {
    out << r.user_id << ',' << r.label;
    for (double f : r.features) {
      std::snprintf(buf, sizeof buf, ",%.9g", f);
      out << buf;
    }
    out << '\n';
  }
}

inline std::vector<LabelRow> read_labels(std::istream& in) {
  std::vector<LabelRow> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t n_features = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (line_no == 1) {
      if (cells.size() < 2 || cells[0] != "user" || cells[1] != "label") throw ParseError(1, "header", "expected user,label,...");
      n_features = cells.size() - 2;
      continue;
    }
    if (line.empty()) continue;
    if (cells.size() != n_features + 2) throw ParseError(line_no, "<row>", "wrong number of columns");
    LabelRow row{cells[0], 0, {}};
    if (cells[1] != "0" && cells[1] != "1") throw ParseError(line_no, "label", "expected 0 or 1");
    row.label = cells[1] == "1";
    for (std::size_t i = 2; i < cells.size(); ++i) {
      try {
        std::size_t used = 0;
        row.features.push_back(std::stod(cells[i], &used));
        if (used != cells[i].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ParseError(line_no, "feat_" + std::to_string(i - 2), "not a number");
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_truth(std::ostream& out, const std::vector<TruthRow>& rows) {
  out << "user,game,interest\n";
  char buf[32];
  for (const TruthRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%.9g", r.interest);
    out << r.user_id << ',' << r.game << ',' << buf << '\n';
  }
}

}  // namespace ugl
