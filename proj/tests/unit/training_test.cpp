#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "ugl/checkpoint.hpp"
#include "ugl/lifecycle.hpp"
#include "ugl/synthgen.hpp"
#include "ugl/training.hpp"

namespace ugl {
namespace {

struct SmallSetup {
  std::vector<UglSequence> corpus;
  VocabStats vocab;
  ModelConfig model;
  TrainConfig train;
};

const SmallSetup& small() {
  static const SmallSetup s = [] {
    SynthConfig sc;
    sc.n_users = 120;
    sc.n_games = 6;
    SmallSetup out;
    out.corpus = build_corpus(generate(sc).events, LifecycleConfig{});
    out.vocab = build_vocab(out.corpus);
    out.model.dim = 8;
    out.model.n_layers = 1;
    out.model.n_heads = 2;
    out.model.vocab_size = out.vocab.size();
    out.train.steps = 30;
    out.train.batch_size = 16;
    out.train.learning_rate = 5e-3;
    return out;
  }();
  return s;
}

std::string bytes(const ModelParams<float>& p) {
  std::ostringstream out;
  write_checkpoint(out, p);
  return out.str();
}

// ---- sample_mask ----

TEST(SampleMask, ZeroProbabilityWithoutForcingIsEmpty) {
  std::vector<std::int32_t> tok{0, 1, 2, 1};
  std::vector<std::uint8_t> pad(4, 0);
  std::vector<double> p{0, 0, 0};
  std::mt19937_64 rng(1);
  EXPECT_EQ(sample_mask(tok, pad, p, rng, false).size(), 0u);
}

TEST(SampleMask, CertaintyMasksEveryNonPadPosition) {
  std::vector<std::int32_t> tok{0, 1, 2, 3, 3};
  std::vector<std::uint8_t> pad{0, 0, 0, 1, 1};
  std::vector<double> p{1, 1, 1, 0};
  std::mt19937_64 rng(1);
  const RowMask m = sample_mask(tok, pad, p, rng, true);
  EXPECT_EQ(m.positions, (std::vector<std::int32_t>{0, 1, 2}));
  EXPECT_EQ(m.targets, (std::vector<std::int32_t>{0, 1, 2}));
}

TEST(SampleMask, ForcesOneUniformPosition) {
  std::vector<std::int32_t> tok{0, 1, 2, 3};
  std::vector<std::uint8_t> pad{0, 0, 0, 1};
  std::vector<double> p{1e-300, 1e-300, 1e-300, 0};
  std::mt19937_64 rng(9);
  std::vector<int> seen(4, 0);
  for (int i = 0; i < 3000; ++i) {
    const RowMask m = sample_mask(tok, pad, p, rng, true);
    ASSERT_EQ(m.size(), 1u);
    ++seen[static_cast<std::size_t>(m.positions[0])];
    EXPECT_EQ(m.targets[0], tok[static_cast<std::size_t>(m.positions[0])]);
  }
  EXPECT_EQ(seen[3], 0);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(seen[static_cast<std::size_t>(k)], 1000, 3 * std::sqrt(3000 * (1.0 / 3) * (2.0 / 3)));
}

TEST(SampleMask, AllPadWithForcingIsAnError) {
  std::vector<std::int32_t> tok{0, 0};
  std::vector<std::uint8_t> pad{1, 1};
  std::vector<double> p{0.5};
  std::mt19937_64 rng(1);
  EXPECT_THROW(sample_mask(tok, pad, p, rng, true), ContractViolation);
  EXPECT_EQ(sample_mask(tok, pad, p, rng, false).size(), 0u);
}

TEST(SampleMask, BinomialRateWithinThreeSigma) {
  const std::size_t positions = 20, draws = 10000;
  std::vector<std::int32_t> tok(positions, 0);
  std::vector<std::uint8_t> pad(positions, 0);
  std::vector<double> p{0.15};
  std::mt19937_64 rng(77);
  std::vector<std::size_t> hits(positions, 0);
  for (std::size_t d = 0; d < draws; ++d)
    for (auto pos : sample_mask(tok, pad, p, rng, false).positions) ++hits[static_cast<std::size_t>(pos)];
  const double sd = std::sqrt(draws * 0.15 * 0.85);
  for (std::size_t i = 0; i < positions; ++i) EXPECT_LT(std::abs(hits[i] - 0.15 * draws), 3 * sd) << i;
}

TEST(SampleMask, ReservedAndPadNeverMasked) {
  const VocabStats& v = small().vocab;
  const IpmTable t = ipm_probabilities(v, 0.15, 0.5);
  std::vector<std::int32_t> tok{0, static_cast<std::int32_t>(index_of(v.mask_id())), 1, 0};
  std::vector<std::uint8_t> pad{0, 0, 0, 1};
  std::mt19937_64 rng(3);
  for (int i = 0; i < 500; ++i) {
    const RowMask m = sample_mask(tok, pad, t.q, rng, true);
    for (std::size_t k = 0; k < m.size(); ++k) {
      EXPECT_NE(m.positions[k], 1);
      EXPECT_NE(m.positions[k], 3);
      if (k) {
        EXPECT_LT(m.positions[k - 1], m.positions[k]);
      }
    }
  }
}

TEST(SampleMask, IpmMasksBelowCapClassesEqually) {
  // One long row holding each class `count` times; below-cap classes should
  // each be masked q_v * total / (|T| |G|) times per pass on average.
  const std::vector<std::uint64_t> counts{3000, 1500, 600, 8};
  std::vector<std::pair<TokenKey, std::uint64_t>> c;
  std::vector<std::int32_t> tok;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    c.push_back({TokenKey{ActionKind::basic("t" + std::to_string(i)), "g"}, counts[i]});
    tok.insert(tok.end(), counts[i], static_cast<std::int32_t>(i));
  }
  const VocabStats v = VocabStats::from_counts(c, 8, 8);
  const IpmTable t = ipm_probabilities(v, 0.3, 0.5);
  std::vector<std::uint8_t> pad(tok.size(), 0);
  std::mt19937_64 rng(21);
  const std::size_t passes = 200;
  std::vector<double> masked(counts.size(), 0);
  for (std::size_t r = 0; r < passes; ++r)
    for (auto target : sample_mask(tok, pad, t.q, rng, false).targets) masked[static_cast<std::size_t>(target)] += 1;
  const double per_pass = 0.5 * 5108.0 / 64.0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double q = t[TokenId{static_cast<std::uint32_t>(i)}];
    ASSERT_LT(q, 0.3);
    const double sd = std::sqrt(passes * counts[i] * q * (1 - q));
    EXPECT_LT(std::abs(masked[i] - passes * per_pass), 3 * sd) << i;
  }
}

// ---- config ----

TEST(TrainConfig, PaperScaleIsExpressible) {
  const TrainConfig p = TrainConfig::paper_scale();
  EXPECT_EQ(p.learning_rate, 1.76e-3);
  EXPECT_EQ(p.batch_size, 4096u);
  EXPECT_EQ(p.steps, 300000u);
  EXPECT_EQ(p.weight_decay, 0.01);
  EXPECT_EQ(p.q_c, 0.15);
  EXPECT_EQ(p.q_v, 0.5);
  EXPECT_NO_THROW(p.validate());
}

TEST(TrainConfig, RejectsOutOfRangeProbabilities) {
  TrainConfig c;
  c.q_c = 0;
  EXPECT_THROW(c.validate(), ContractViolation);
  c = {};
  c.q_v = 1.5;
  EXPECT_THROW(c.validate(), ContractViolation);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ContractViolation);
}

// ---- train ----

TEST(Train, ZeroStepsReturnsInitialization) {
  const SmallSetup& s = small();
  TrainConfig c = s.train;
  c.steps = 0;
  const TrainResult r = train(s.corpus, s.vocab, s.model, c);
  EXPECT_TRUE(r.telemetry.empty());
  EXPECT_EQ(bytes(r.params), bytes(init_params<float>(s.model, derive_seed(c.seed, "train.init"))));
}

TEST(Train, LearnsAndIsDeterministic) {
  const SmallSetup& s = small();
  std::vector<StepRecord> observed;
  const TrainResult a = train(s.corpus, s.vocab, s.model, s.train, [&](const StepRecord& r) { observed.push_back(r); });
  const TrainResult b = train(s.corpus, s.vocab, s.model, s.train);
  ASSERT_EQ(a.telemetry.records.size(), s.train.steps);
  EXPECT_EQ(observed.size(), s.train.steps);
  for (const StepRecord& r : a.telemetry.records) {
    EXPECT_TRUE(std::isfinite(r.loss));
    EXPECT_GE(r.accuracy, 0.0);
    EXPECT_LE(r.accuracy, 1.0);
  }
  EXPECT_LE(a.telemetry.min_loss(), a.telemetry.initial_loss());
  EXPECT_LT(a.telemetry.final_loss(), a.telemetry.initial_loss());
  EXPECT_EQ(bytes(a.params), bytes(b.params));
  std::ostringstream ta, tb;
  write_telemetry(ta, a.telemetry);
  write_telemetry(tb, b.telemetry);
  EXPECT_EQ(ta.str(), tb.str());
}

TEST(Train, SeedChangesTheRun) {
  const SmallSetup& s = small();
  TrainConfig c = s.train;
  c.steps = 3;
  const TrainResult a = train(s.corpus, s.vocab, s.model, c);
  c.seed = 2;
  const TrainResult b = train(s.corpus, s.vocab, s.model, c);
  EXPECT_NE(bytes(a.params), bytes(b.params));
}

TEST(Train, RejectsMismatchedVocabAndEmptyCorpus) {
  const SmallSetup& s = small();
  ModelConfig m = s.model;
  m.vocab_size += 1;
  EXPECT_THROW(train(s.corpus, s.vocab, m, s.train), ContractViolation);
  const std::vector<UglSequence> empty{{"u", {}}};
  EXPECT_THROW(train(empty, s.vocab, s.model, s.train), ContractViolation);
}

TEST(Train, DivergenceReportsStep) {
  const SmallSetup& s = small();
  TrainConfig c = s.train;
  c.learning_rate = 1e30;
  c.steps = 50;
  try {
    train(s.corpus, s.vocab, s.model, c);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_GE(e.step(), 1u);
    EXPECT_LE(e.step(), 50u);
  }
}

TEST(Telemetry, FileFormat) {
  Telemetry t;
  t.records = {{1, 2.5, 0.25}, {2, 2.0, 0.5}};
  std::ostringstream out;
  write_telemetry(out, t);
  EXPECT_EQ(out.str(), "step,loss,masked_accuracy\n1,2.5,0.25\n2,2,0.5\n");
  EXPECT_DOUBLE_EQ(t.final_loss(), 2.0);
  EXPECT_DOUBLE_EQ(t.final_loss(2), 2.25);
}

// ---- comparison and stratified accuracy ----

TEST(CompareMasking, SameModeGivesIdenticalCurves) {
  const SmallSetup& s = small();
  TrainConfig c = s.train;
  c.steps = 10;
  const MaskingComparison cmp = compare_masking(s.corpus, s.vocab, s.model, c, c, 3);
  ASSERT_EQ(cmp.first.result.telemetry.records.size(), cmp.second.result.telemetry.records.size());
  for (std::size_t i = 0; i < cmp.first.result.telemetry.records.size(); ++i) {
    EXPECT_EQ(cmp.first.result.telemetry.records[i].loss, cmp.second.result.telemetry.records[i].loss);
    EXPECT_EQ(cmp.first.result.telemetry.records[i].accuracy, cmp.second.result.telemetry.records[i].accuracy);
  }
  ASSERT_EQ(cmp.first.deciles.size(), 10u);
}

TEST(CompareMasking, RejectsConfigsDifferingBeyondMasking) {
  const SmallSetup& s = small();
  TrainConfig a = s.train, b = s.train;
  b.learning_rate *= 2;
  EXPECT_THROW(compare_masking(s.corpus, s.vocab, s.model, a, b), ContractViolation);
  b = a;
  b.masking = MaskingMode::Vanilla;
  b.q = 0.2;
  b.steps = 1;
  a.steps = 1;
  EXPECT_NO_THROW(compare_masking(s.corpus, s.vocab, s.model, a, b, 1));
}

TEST(DecileAccuracy, MatchesStratifiedOracle) {
  const SmallSetup& s = small();
  const std::size_t n = s.vocab.n_observed();
  std::vector<ClassRecovery> rec(s.vocab.size());
  std::mt19937_64 rng(4);
  for (std::size_t i = 0; i < n; ++i) {
    rec[i].trials = rng() % 7;
    rec[i].hits = rec[i].trials ? rng() % (rec[i].trials + 1) : 0;
  }
  const auto dec = decile_accuracy(rec, s.vocab);
  for (std::size_t d = 0; d < 10; ++d) {
    std::size_t trials = 0, hits = 0;
    for (std::size_t r = 0; r < n; ++r) {
      // decile by rank position: r / n in [d/10, (d+1)/10)
      if (10 * r >= d * n && 10 * r < (d + 1) * n) {
        trials += rec[r].trials;
        hits += rec[r].hits;
      }
    }
    EXPECT_EQ(dec[d].trials, trials);
    EXPECT_EQ(dec[d].hits, hits);
  }
  double sum = 0;
  std::size_t classes = 0;
  for (std::size_t r = (n + 1) / 2; r < n; ++r)
    if (rec[r].trials) {
      sum += rec[r].accuracy();
      ++classes;
    }
  EXPECT_DOUBLE_EQ(tail_macro_accuracy(rec, s.vocab), sum / static_cast<double>(classes));
}

TEST(RecoveryByClass, RespectsPerClassCap) {
  const SmallSetup& s = small();
  const auto params = init_params<float>(s.model, 5);
  const auto rec = recovery_by_class(params, s.corpus, s.vocab, 2);
  for (std::size_t i = 0; i < s.vocab.n_observed(); ++i) {
    EXPECT_LE(rec[i].trials, 2u);
    EXPECT_GE(rec[i].trials, 1u);
  }
  EXPECT_EQ(rec[index_of(s.vocab.mask_id())].trials, 0u);
}

// ---- checkpoint ----

TEST(Checkpoint, BitExactRoundTrip) {
  const SmallSetup& s = small();
  const auto p = init_params<float>(s.model, 11);
  std::stringstream io;
  write_checkpoint(io, p);
  const std::string first = io.str();
  const auto q = read_checkpoint<float>(io);
  EXPECT_EQ(q.config.dim, s.model.dim);
  EXPECT_EQ(q.config.vocab_size, s.model.vocab_size);
  EXPECT_EQ(bytes(q), first);
  const auto pt = p.tensors();
  const auto qt = q.tensors();
  ASSERT_EQ(pt.size(), qt.size());
  for (std::size_t i = 0; i < pt.size(); ++i) EXPECT_TRUE(*pt[i].second == *qt[i].second) << pt[i].first;
}

TEST(Checkpoint, HeaderLayout) {
  const SmallSetup& s = small();
  const std::string b = bytes(init_params<float>(s.model, 1));
  EXPECT_EQ(b.substr(0, 4), "UGL1");
  EXPECT_EQ(static_cast<unsigned char>(b[4]), 8);  // n_config, little-endian
  EXPECT_EQ(static_cast<unsigned char>(b[8]), s.model.dim);
}

TEST(Checkpoint, RejectsCorruptInput) {
  std::istringstream bad("XXXX");
  EXPECT_THROW(read_checkpoint<float>(bad), Error);
  const std::string b = bytes(init_params<float>(small().model, 1));
  std::istringstream truncated(b.substr(0, b.size() - 3));
  EXPECT_THROW(read_checkpoint<float>(truncated), Error);
  std::string renamed = b;
  renamed[renamed.find("token_table")] = 'X';
  std::istringstream wrong_name(renamed);
  EXPECT_THROW(read_checkpoint<float>(wrong_name), Error);
}

}  // namespace
}  // namespace ugl
