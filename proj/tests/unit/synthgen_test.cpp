#include <map>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "ugl/lifecycle.hpp"
#include "ugl/lifecycle_io.hpp"
#include "ugl/synthgen.hpp"

namespace ugl {
namespace {

std::map<std::string, std::size_t> game_counts(const SynthData& d) {
  std::map<std::string, std::size_t> c;
  for (const EventRecord& e : d.events) ++c[e.game_id];
  return c;
}

TEST(ZipfMass, SumsToOneAndDecreases) {
  const auto w = zipf_mass(20, 1.2);
  double total = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    total += w[i];
    if (i) {
      EXPECT_LT(w[i], w[i - 1]);
    }
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_NEAR(w[0] / w[1], std::pow(2.0, 1.2), 1e-12);
}

TEST(Generate, SingleUserSingleDay) {
  SynthConfig cfg;
  cfg.n_users = 1;
  cfg.horizon_days = 1;
  const SynthData d = generate(cfg);
  ASSERT_FALSE(d.events.empty());
  for (const EventRecord& e : d.events) {
    EXPECT_EQ(e.user_id, "u000000");
    EXPECT_EQ(e.date, cfg.start_date);
  }
  EXPECT_EQ(d.labels.size(), 1u);
}

TEST(Generate, SteepZipfConcentratesOnTopGame) {
  SynthConfig cfg;
  cfg.n_users = 500;
  cfg.zipf_exponent = 3.0;
  const SynthData d = generate(cfg);
  const auto c = game_counts(d);
  EXPECT_GT(zipf_mass(cfg.n_games, 3.0)[0], 0.8);
  EXPECT_GT(static_cast<double>(c.at(game_name(0))) / static_cast<double>(d.events.size()), 0.8);
}

TEST(Generate, GameCountsFollowPopularityRank) {
  SynthConfig cfg;
  cfg.n_users = 2000;
  const SynthData d = generate(cfg);
  ASSERT_GE(d.events.size(), 10000u);
  const auto c = game_counts(d);
  // mean count over doubling rank bins smooths the sparse tail
  const std::vector<std::pair<std::size_t, std::size_t>> bins{{0, 1}, {1, 2}, {2, 4}, {4, 8}, {8, 16}, {16, 20}};
  std::vector<double> means;
  for (auto [lo, hi] : bins) {
    double sum = 0;
    for (std::size_t g = lo; g < hi; ++g) sum += c.count(game_name(g)) ? static_cast<double>(c.at(game_name(g))) : 0.0;
    means.push_back(sum / static_cast<double>(hi - lo));
  }
  for (std::size_t i = 1; i < means.size(); ++i) EXPECT_LE(means[i], means[i - 1]) << "bin " << i;
}

TEST(Generate, NoiselessLabelsFollowTargetOwnership) {
  SynthConfig cfg;
  cfg.n_users = 400;
  cfg.label_noise = 0;
  cfg.interest_min = cfg.interest_max = 1.0;
  cfg.label_scale = 200;
  const SynthData d = generate(cfg);
  std::set<std::string> owners;
  for (const TruthRow& t : d.truth)
    if (t.game == game_name(cfg.target_game)) owners.insert(t.user_id);
  ASSERT_FALSE(owners.empty());
  ASSERT_LT(owners.size(), d.labels.size());
  for (const LabelRow& r : d.labels) EXPECT_EQ(r.label, owners.count(r.user_id) ? 1 : 0) << r.user_id;
}

TEST(Generate, Determinism) {
  SynthConfig cfg;
  cfg.n_users = 200;
  std::ostringstream a, b, la, lb;
  const SynthData x = generate(cfg), y = generate(cfg);
  write_event_log(a, x.events);
  write_event_log(b, y.events);
  write_labels(la, x.labels);
  write_labels(lb, y.labels);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(la.str(), lb.str());
  cfg.seed = 8;
  EXPECT_NE(generate(cfg).events, x.events);
}

TEST(Generate, PopulationInvariants) {
  SynthConfig cfg;
  const SynthData d = generate(cfg);
  std::set<std::string> active;
  std::set<std::string> types;
  for (const EventRecord& e : d.events) {
    active.insert(e.user_id);
    types.insert(e.action_type);
    const int off = days_between(cfg.start_date, e.date);
    EXPECT_GE(off, 0);
    EXPECT_LT(off, cfg.horizon_days);
  }
  EXPECT_EQ(active.size(), cfg.n_users);
  EXPECT_LE(types.size(), cfg.n_types);
  ASSERT_EQ(d.labels.size(), cfg.n_users);
  std::size_t positives = 0;
  for (const LabelRow& r : d.labels) {
    positives += static_cast<std::size_t>(r.label);
    EXPECT_EQ(r.features.size(), 4u);
  }
  EXPECT_GT(positives, cfg.n_users / 20);
  EXPECT_LT(positives, cfg.n_users - cfg.n_users / 20);

  const auto corpus = build_corpus(d.events, LifecycleConfig{});
  std::size_t with_silence = 0;
  for (const UglSequence& s : corpus) {
    bool found = false;
    for (const AggregatedAction& a : s.actions) found = found || a.kind.tag == ActionTag::Silence;
    with_silence += found;
  }
  EXPECT_GE(2 * with_silence, corpus.size());
}

TEST(Generate, InvalidConfig) {
  SynthConfig cfg;
  cfg.target_game = cfg.n_games;
  EXPECT_THROW(generate(cfg), ContractViolation);
  cfg = SynthConfig{};
  cfg.label_noise = 0.5;
  EXPECT_THROW(generate(cfg), ContractViolation);
  cfg = SynthConfig{};
  cfg.plays_mean = 0.5;
  EXPECT_THROW(generate(cfg), ContractViolation);
}

TEST(LabelFile, RoundTrip) {
  SynthConfig cfg;
  cfg.n_users = 30;
  const auto rows = generate(cfg).labels;
  std::stringstream io;
  write_labels(io, rows);
  const auto back = read_labels(io);
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].user_id, rows[i].user_id);
    EXPECT_EQ(back[i].label, rows[i].label);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(back[i].features[k], rows[i].features[k], 1e-7);
  }
}

TEST(LabelFile, RejectsMalformedRows) {
  std::istringstream bad_header("id,label\n");
  EXPECT_THROW(read_labels(bad_header), ParseError);
  std::istringstream bad_label("user,label,feat_0\nu,2,0.5\n");
  EXPECT_THROW(read_labels(bad_label), ParseError);
  std::istringstream bad_number("user,label,feat_0\nu,1,abc\n");
  EXPECT_THROW(read_labels(bad_number), ParseError);
  std::istringstream short_row("user,label,feat_0\nu,1\n");
  EXPECT_THROW(read_labels(short_row), ParseError);
}

}  // namespace
}  // namespace ugl
