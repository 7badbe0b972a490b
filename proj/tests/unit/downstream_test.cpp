#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "ugl/downstream.hpp"
#include "ugl/inference.hpp"
#include "ugl/lifecycle.hpp"
#include "ugl/training.hpp"
#include "ugl/vocab.hpp"

namespace ugl {
namespace {

double pair_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  return wins / pairs;
}

std::vector<LabelRow> synth_labels(std::size_t users, std::uint64_t seed = 7) {
  SynthConfig cfg;
  cfg.n_users = users;
  cfg.seed = seed;
  return generate(cfg).labels;
}

TEST(Auc, PerfectSeparation) {
  const std::vector<double> s{0.1, 0.2, 0.8, 0.9};
  const std::vector<int> y{0, 0, 1, 1};
  EXPECT_EQ(auc(s, y), 1.0);
}

TEST(Auc, AllTies) {
  const std::vector<double> s(6, 0.3);
  const std::vector<int> y{0, 1, 0, 1, 1, 0};
  EXPECT_EQ(auc(s, y), 0.5);
}

TEST(Auc, SmallExampleMatchesPairCount) {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y{0, 0, 1, 1};
  EXPECT_EQ(auc(s, y), pair_auc(s, y));
  EXPECT_EQ(auc(s, y), 0.75);
}

TEST(Auc, RandomTiedScoresMatchPairCount) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng() % 60;
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % 7);
      y[i] = static_cast<int>(rng() % 2);
    }
    y[0] = 0;
    y[1] = 1;
    EXPECT_NEAR(auc(s, y), pair_auc(s, y), 1e-15);
  }
}

TEST(Auc, MonotoneTransformAndNegation) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> s(200), t(200), neg(200);
  std::vector<int> y(200);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = std::round(4 * n(rng)) / 4;
    y[i] = n(rng) + s[i] > 0;
    t[i] = std::exp(3 * s[i]) + 1;
    neg[i] = -s[i];
  }
  EXPECT_EQ(auc(s, y), auc(t, y));
  EXPECT_NEAR(auc(s, y) + auc(neg, y), 1.0, 1e-12);
}

TEST(Auc, SingleClassIsAnError) {
  const std::vector<double> s{0.1, 0.2};
  const std::vector<int> y{1, 1};
  EXPECT_THROW(auc(s, y), ContractViolation);
}

TEST(AssembleRows, MissingUsersGetZeros) {
  const std::vector<LabelRow> labels{{"a", 1, {1.0}}, {"b", 0, {2.0}}};
  const RepresentationDb db{{"a", {0.5, 0.25}}};
  const auto rows = assemble_rows(labels, &db);
  EXPECT_EQ(rows[0].rep, (std::vector<double>{0.5, 0.25}));
  EXPECT_EQ(rows[1].rep, (std::vector<double>{0.0, 0.0}));
  EXPECT_TRUE(assemble_rows(labels, nullptr)[0].rep.empty());
  const std::vector<LabelRow> bad{{"a", 1, {NAN}}};
  EXPECT_THROW(assemble_rows(bad, nullptr), ContractViolation);
}

TEST(TaskModel, SeparableRowsAreFitExactly) {
  std::vector<FeatureRow> rows;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double a = u(rng), b = u(rng);
    if (std::abs(a + b) < 0.2) continue;
    rows.push_back({"u" + std::to_string(i), {a, b}, {}, a + b > 0});
  }
  TaskModelConfig cfg;
  cfg.l2 = 0;
  cfg.epochs = 1000;
  cfg.learning_rate = 0.05;
  EXPECT_EQ(TaskModel::fit(rows, cfg).accuracy(rows), 1.0);
}

TEST(TaskModel, SingleClassIsAnError) {
  const std::vector<FeatureRow> rows{{"a", {1.0}, {}, 1}, {"b", {2.0}, {}, 1}};
  EXPECT_THROW(TaskModel::fit(rows, TaskModelConfig{}), ContractViolation);
}

TEST(TaskModel, Deterministic) {
  const auto rows = assemble_rows(synth_labels(300), nullptr);
  const TaskModel a = TaskModel::fit(rows, TaskModelConfig{});
  const TaskModel b = TaskModel::fit(rows, TaskModelConfig{});
  EXPECT_EQ(a.score(rows), b.score(rows));
}

TEST(TaskLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  const Eigen::Index rows = 12, in = 5, hidden = 4;
  Matrix<double> x(rows, in);
  std::vector<int> y(rows);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  for (auto& v : y) v = static_cast<int>(rng() % 2);
  TaskParams<double> p;
  p.w1.resize(in, hidden);
  p.b1.resize(1, hidden);
  p.w2.resize(hidden, 1);
  for (Matrix<double>* m : {&p.w1, &p.b1, &p.w2})
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = 0.5 * n(rng);
  p.b2 = 0.1;
  const double l2 = 0.1, h = 1e-5;
  const TaskLoss<double> base = task_loss(p, x, y, l2);

  double worst = 0;
  auto check = [&](double& param, double analytic) {
    const double keep = param;
    param = keep + h;
    const double up = task_loss(p, x, y, l2).loss;
    param = keep - h;
    const double down = task_loss(p, x, y, l2).loss;
    param = keep;
    const double numeric = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(numeric - analytic) / std::max(1e-3, std::abs(numeric) + std::abs(analytic)));
  };
  for (Eigen::Index i = 0; i < p.w1.size(); ++i) check(p.w1.data()[i], base.grad.w1.data()[i]);
  for (Eigen::Index i = 0; i < p.b1.size(); ++i) check(p.b1.data()[i], base.grad.b1.data()[i]);
  for (Eigen::Index i = 0; i < p.w2.size(); ++i) check(p.w2.data()[i], base.grad.w2.data()[i]);
  check(p.b2, base.grad.b2);
  EXPECT_LT(worst, 1e-4);
}

TEST(EvaluateAuc, ZeroRepColumnsAreInert) {
  const auto labels = synth_labels(600);
  RepresentationDb zeros;
  for (const LabelRow& l : labels) zeros.push_back({l.user_id, std::vector<double>(16, 0.0)});
  const auto dense = assemble_rows(labels, nullptr);
  const auto padded = assemble_rows(labels, &zeros);
  std::vector<double> a, b;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    a.push_back(evaluate_auc(dense, seed, EvalConfig{}));
    b.push_back(evaluate_auc(padded, seed, EvalConfig{}));
  }
  EXPECT_NEAR(median(a), median(b), 0.01);
  EXPECT_LE(*std::min_element(a.begin(), a.end()), *std::max_element(b.begin(), b.end()));
  EXPECT_LE(*std::min_element(b.begin(), b.end()), *std::max_element(a.begin(), a.end()));
}

TEST(AssignFolds, StratifiedAndBalanced) {
  const auto rows = assemble_rows(synth_labels(203), nullptr);
  const auto folds = assign_folds(rows, 5, 9);
  std::array<std::array<int, 2>, 5> count{};
  for (std::size_t i = 0; i < rows.size(); ++i) ++count[folds[i]][static_cast<std::size_t>(rows[i].label)];
  for (int cls : {0, 1}) {
    int lo = 1 << 30, hi = 0;
    for (const auto& f : count) {
      lo = std::min(lo, f[static_cast<std::size_t>(cls)]);
      hi = std::max(hi, f[static_cast<std::size_t>(cls)]);
    }
    EXPECT_LE(hi - lo, 1);
  }
}

TEST(AblationSuite, MissingVariantIsNamed) {
  const auto labels = synth_labels(100);
  AblationBundle bundle;
  const std::vector<std::uint64_t> seeds{1};
  try {
    ablation_suite(labels, bundle, seeds, EvalConfig{}, {"no-ipm"});
    FAIL() << "expected an error";
  } catch (const ContractViolation& e) {
    EXPECT_NE(std::string(e.what()).find("'no-ipm'"), std::string::npos);
  }
  EXPECT_THROW(ablation_suite(labels, bundle, seeds, EvalConfig{}, {"bogus"}), ContractViolation);
}

TEST(AblationSuite, RepeatedVariantGivesIdenticalMedians) {
  const auto labels = synth_labels(200);
  AblationBundle bundle;
  for (const LabelRow& l : labels) bundle["ugl"].push_back({l.user_id, {l.features[0], 1.0, 2.0, 3.0}});
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const auto r = ablation_suite(labels, bundle, seeds, EvalConfig{}, {"ugl", "dense-only", "ugl", "no-var"});
  ASSERT_EQ(r.summary.size(), 4u);
  EXPECT_EQ(r.summary[0].median, r.summary[2].median);
  std::ostringstream a, b;
  write_ablation_report(a, r);
  write_ablation_report(b, ablation_suite(labels, bundle, seeds, EvalConfig{}, {"ugl", "dense-only", "ugl", "no-var"}));
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(a.str().substr(0, 17), "variant,seed,auc\n");
  EXPECT_NE(a.str().find("# summary\nvariant,median,min,max\n"), std::string::npos);
}

TEST(AblationSuite, RandomVariantKeepsUsersAndWidth) {
  const auto labels = synth_labels(50);
  RepresentationDb ugl;
  for (const LabelRow& l : labels) ugl.push_back({l.user_id, std::vector<double>(8, 0.0)});
  const auto r = random_representations(ugl, 8, derive_seed(0, "eval.random"));
  ASSERT_EQ(r.size(), ugl.size());
  EXPECT_EQ(r[0].user_id, ugl[0].user_id);
  EXPECT_EQ(r[0].vector.size(), 8u);
}

TEST(AblationSuite, TrainedRepresentationsBeatDenseOnly) {
  SynthConfig sc;
  sc.n_users = 800;
  const SynthData data = generate(sc);
  const auto corpus = build_corpus(data.events, LifecycleConfig{});
  const VocabStats vocab = build_vocab(corpus);
  ModelConfig mc;
  mc.dim = 16;
  mc.n_layers = 1;
  mc.n_heads = 2;
  mc.vocab_size = vocab.size();
  TrainConfig tc;
  tc.steps = 300;
  tc.batch_size = 32;
  const auto trained = train(corpus, vocab, mc, tc);
  AblationBundle bundle;
  bundle["ugl"] = infer_representations(std::span<const UglSequence>(corpus), trained.params, vocab);
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  const auto r = ablation_suite(data.labels, bundle, seeds, EvalConfig{}, {"dense-only", "ugl"});
  EXPECT_GT(r.at("ugl").median, r.at("dense-only").median);
}

}  // namespace
}  // namespace ugl
