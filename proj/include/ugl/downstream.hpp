#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ugl/error.hpp"
#include "ugl/inference.hpp"
#include "ugl/seed.hpp"
#include "ugl/synthgen.hpp"
#include "ugl/tensor.hpp"

namespace ugl {

struct FeatureRow {
  std::string user_id;
  std::vector<double> dense;
  std::vector<double> rep;  // empty, or the user's representation (zeros if absent)
  int label = 0;
};

/// Joins labels with representations. `db == nullptr` gives dense-only rows.
inline std::vector<FeatureRow> assemble_rows(std::span<const LabelRow> labels, const RepresentationDb* db) {
  std::unordered_map<std::string, const std::vector<double>*> index;
  std::size_t width = 0;
  if (db) {
    for (const UserRepresentation& r : *db) {
      if (width == 0) width = r.vector.size();
      if (r.vector.size() != width) throw ContractViolation("representation widths differ");
      index.emplace(r.user_id, &r.vector);
    }
  }
  std::vector<FeatureRow> rows;
  rows.reserve(labels.size());
  for (const LabelRow& l : labels) {
    FeatureRow row{l.user_id, l.features, {}, l.label};
    for (double v : row.dense)
      if (!std::isfinite(v)) throw ContractViolation("non-finite dense feature for user " + l.user_id);
    if (db) {
      const auto it = index.find(l.user_id);
      row.rep = it == index.end() ? std::vector<double>(width, 0.0) : *it->second;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Exact AUC via mid-ranks (ties count 1/2).
inline double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ContractViolation("auc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) {
        pos_rank_sum += mid;
        ++n_pos;
      }
    i = j;
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ContractViolation("auc: both classes must be present");
  const double np = static_cast<double>(n_pos);
  return (pos_rank_sum - np * (np + 1) / 2) / (np * static_cast<double>(n_neg));
}

struct TaskModelConfig {
  std::size_t hidden = 8;
  std::size_t epochs = 200;
  double learning_rate = 0.01;
  double l2 = 0.1;  // on weights, not biases
  std::uint64_t seed = 1;
};

/// One tanh hidden layer, logistic output.
template <class Real>
struct TaskParams {
  Matrix<Real> w1;  // in x hidden
  Matrix<Real> b1;  // 1 x hidden
  Matrix<Real> w2;  // hidden x 1
  Real b2 = 0;
};

template <class Real>
struct TaskLoss {
  Real loss = 0;
  TaskParams<Real> grad;
};

/// Mean log-loss plus 0.5 * l2 * |W|^2 and its exact gradient.
template <class Real>
TaskLoss<Real> task_loss(const TaskParams<Real>& p, const Matrix<Real>& x, std::span<const int> y, Real l2) {
  const auto n = x.rows();
  Matrix<Real> a = x * p.w1;
  a.rowwise() += p.b1.row(0);
  const Matrix<Real> h = a.array().tanh().matrix();
  Matrix<Real> z = h * p.w2;
  z.array() += p.b2;
  TaskLoss<Real> out;
  Matrix<Real> dz(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Real zi = z(i, 0);
    // log(1 + e^-|z|) form keeps large logits finite
    const Real softplus = std::log1p(std::exp(-std::abs(zi))) + std::max(zi, Real(0));
    out.loss += softplus - (y[static_cast<std::size_t>(i)] ? zi : Real(0));
    const Real sig = zi >= 0 ? 1 / (1 + std::exp(-zi)) : std::exp(zi) / (1 + std::exp(zi));
    dz(i, 0) = (sig - static_cast<Real>(y[static_cast<std::size_t>(i)])) / static_cast<Real>(n);
  }
  out.loss /= static_cast<Real>(n);
  out.loss += Real(0.5) * l2 * (p.w1.squaredNorm() + p.w2.squaredNorm());
  out.grad.w2 = h.transpose() * dz + l2 * p.w2;
  out.grad.b2 = dz.sum();
  const Matrix<Real> dh = dz * p.w2.transpose();
  const Matrix<Real> da = (dh.array() * (1 - h.array().square())).matrix();
  out.grad.w1 = x.transpose() * da + l2 * p.w1;
  out.grad.b1 = da.colwise().sum();
  return out;
}

class TaskModel {
 public:
  /// Full-batch Adam on standardized features.
  static TaskModel fit(std::span<const FeatureRow> rows, const TaskModelConfig& cfg) {
    if (rows.empty()) throw ContractViolation("task model: no training rows");
    std::size_t pos = 0;
    for (const FeatureRow& r : rows) pos += r.label ? 1 : 0;
    if (pos == 0 || pos == rows.size()) throw ContractViolation("task model: training rows contain a single class");

    TaskModel m;
    const Matrix<double> raw = stack(rows);
    const auto in = raw.cols();
    m.mean_ = raw.colwise().mean();
    m.scale_ = Matrix<double>::Ones(1, in);
    for (Eigen::Index c = 0; c < in; ++c) {
      const double sd = std::sqrt((raw.col(c).array() - m.mean_(0, c)).square().mean());
      if (sd > 1e-12) m.scale_(0, c) = 1.0 / sd;
    }
    const Matrix<double> x = m.standardize(raw);
    std::vector<int> y;
    for (const FeatureRow& r : rows) y.push_back(r.label);

    std::mt19937_64 rng(derive_seed(cfg.seed, "task.init"));
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto h = static_cast<Eigen::Index>(cfg.hidden);
    TaskParams<double>& p = m.params_;
    p.w1.resize(in, h);
    p.w2.resize(h, 1);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(in, 1)));
    for (Eigen::Index i = 0; i < p.w1.size(); ++i) p.w1.data()[i] = s1 * normal(rng);
    for (Eigen::Index i = 0; i < p.w2.size(); ++i) p.w2.data()[i] = normal(rng) / std::sqrt(static_cast<double>(h));
    p.b1 = Matrix<double>::Zero(1, h);
    p.b2 = 0;

    TaskParams<double> m1{Matrix<double>::Zero(in, h), Matrix<double>::Zero(1, h), Matrix<double>::Zero(h, 1), 0};
    TaskParams<double> m2 = m1;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (std::size_t t = 1; t <= cfg.epochs; ++t) {
      const TaskLoss<double> g = task_loss(p, x, y, cfg.l2);
      const double c1 = 1 - std::pow(b1, static_cast<double>(t));
      const double c2 = 1 - std::pow(b2, static_cast<double>(t));
      auto adam = [&](Matrix<double>& w, const Matrix<double>& gw, Matrix<double>& mm, Matrix<double>& vv) {
        mm = b1 * mm + (1 - b1) * gw;
        vv = b2 * vv + (1 - b2) * gw.cwiseProduct(gw);
        w.array() -= cfg.learning_rate * (mm.array() / c1) / ((vv.array() / c2).sqrt() + eps);
      };
      adam(p.w1, g.grad.w1, m1.w1, m2.w1);
      adam(p.b1, g.grad.b1, m1.b1, m2.b1);
      adam(p.w2, g.grad.w2, m1.w2, m2.w2);
      m1.b2 = b1 * m1.b2 + (1 - b1) * g.grad.b2;
      m2.b2 = b2 * m2.b2 + (1 - b2) * g.grad.b2 * g.grad.b2;
      p.b2 -= cfg.learning_rate * (m1.b2 / c1) / (std::sqrt(m2.b2 / c2) + eps);
    }
    return m;
  }

  /// Logits (monotone in the positive-class probability).
  std::vector<double> score(std::span<const FeatureRow> rows) const {
    const Matrix<double> x = standardize(stack(rows));
    if (x.cols() != params_.w1.rows()) throw ContractViolation("task model: feature width mismatch");
    Matrix<double> a = x * params_.w1;
    a.rowwise() += params_.b1.row(0);
    const Matrix<double> z = a.array().tanh().matrix() * params_.w2;
    std::vector<double> out(static_cast<std::size_t>(z.rows()));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = z(static_cast<Eigen::Index>(i), 0) + params_.b2;
    return out;
  }

  double accuracy(std::span<const FeatureRow> rows) const {
    const auto s = score(rows);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) hit += (s[i] > 0) == (rows[i].label == 1);
    return rows.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(rows.size());
  }

  const TaskParams<double>& params() const { return params_; }

  static Matrix<double> stack(std::span<const FeatureRow> rows) {
    const std::size_t w = rows.empty() ? 0 : rows.front().dense.size() + rows.front().rep.size();
    Matrix<double> x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(w));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const FeatureRow& r = rows[i];
      if (r.dense.size() + r.rep.size() != w) throw ContractViolation("feature rows differ in width");
      std::size_t c = 0;
      for (double v : r.dense) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c++)) = v;
      for (double v : r.rep) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c++)) = v;
    }
    return x;
  }

 private:
  Matrix<double> standardize(const Matrix<double>& raw) const {
    Matrix<double> x = raw;
    x.rowwise() -= mean_.row(0);
    return (x.array().rowwise() * scale_.row(0).array()).matrix();
  }

  Matrix<double> mean_;
  Matrix<double> scale_;
  TaskParams<double> params_;
};

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
inline std::vector<std::size_t> assign_folds(std::span<const FeatureRow> rows, std::size_t folds, std::uint64_t seed) {
  if (folds < 2) throw ContractViolation("cross-validation needs at least 2 folds");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> fold(rows.size());
  for (int cls : {0, 1}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (rows[i].label == cls) idx.push_back(i);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < idx.size(); ++k) fold[idx[k]] = k % folds;
  }
  return fold;
}

struct EvalConfig {
  std::size_t folds = 5;
  TaskModelConfig model;
};

/// Cross-validated AUC for one feature set and seed: the mean of the
/// held-out AUCs over stratified folds. Folds depend on the seed only, so
/// variants evaluated with the same seed share their splits.
inline double evaluate_auc(std::span<const FeatureRow> rows, std::uint64_t seed, const EvalConfig& cfg) {
  const auto fold = assign_folds(rows, cfg.folds, derive_seed(seed, "eval.split"));
  double sum = 0;
  for (std::size_t f = 0; f < cfg.folds; ++f) {
    std::vector<FeatureRow> train_rows, test_rows;
    for (std::size_t i = 0; i < rows.size(); ++i) (fold[i] == f ? test_rows : train_rows).push_back(rows[i]);
    TaskModelConfig mc = cfg.model;
    mc.seed = derive_seed(derive_seed(seed, "eval.model"), f);
    const TaskModel model = TaskModel::fit(train_rows, mc);
    std::vector<int> y;
    for (const FeatureRow& r : test_rows) y.push_back(r.label);
    sum += auc(model.score(test_rows), y);
  }
  return sum / static_cast<double>(cfg.folds);
}

/// Variant names in report order. "dense-only" needs no representation.
inline const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> names{"dense-only", "raw-seq",  "random",  "no-ipm",  "no-neg-feedback",
                                              "no-aggregation", "no-max", "no-avg", "no-min", "no-var", "ugl"};
  return names;
}

using AblationBundle = std::map<std::string, RepresentationDb>;

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  double auc = 0;
};

struct VariantSummary {
  std::string variant;
  double median = 0;
  double min = 0;
  double max = 0;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  std::vector<VariantSummary> summary;

  const VariantSummary& at(const std::string& variant) const {
    for (const VariantSummary& s : summary)
      if (s.variant == variant) return s;
    throw ContractViolation("ablation report has no variant '" + variant + "'");
  }
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw ContractViolation("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Pooling-block variants ("no-max", ...) are derived from "ugl" and "random"
/// is drawn here, so the bundle must hold "ugl", "raw-seq", "no-ipm",
/// "no-neg-feedback" and "no-aggregation". `variants` defaults to all.
inline AblationReport ablation_suite(std::span<const LabelRow> labels, const AblationBundle& bundle,
                                     std::span<const std::uint64_t> seeds, const EvalConfig& cfg,
                                     std::vector<std::string> variants = {}) {
  if (variants.empty()) variants = ablation_variants();
  if (seeds.empty()) throw ContractViolation("ablation suite needs at least one seed");
  auto need = [&](const std::string& name) -> const RepresentationDb& {
    const auto it = bundle.find(name);
    if (it == bundle.end()) throw ContractViolation("ablation bundle is missing variant '" + name + "'");
    return it->second;
  };
  static const std::map<std::string, std::size_t> block{{"no-max", 0}, {"no-avg", 1}, {"no-min", 2}, {"no-var", 3}};

  AblationReport report;
  for (const std::string& v : variants) {
    std::optional<RepresentationDb> db;
    if (v == "dense-only") {
    } else if (v == "random") {
      const RepresentationDb& ugl = need("ugl");
      const std::size_t w = ugl.empty() ? 0 : ugl.front().vector.size();
      db = random_representations(ugl, w, derive_seed(0, "eval.random"));
    } else if (block.contains(v)) {
      const RepresentationDb& ugl = need("ugl");
      const std::size_t w = ugl.empty() ? 0 : ugl.front().vector.size();
      std::array<bool, 4> keep{true, true, true, true};
      keep[block.at(v)] = false;
      db = select_blocks(ugl, w / 4, keep);
    } else if (std::find(ablation_variants().begin(), ablation_variants().end(), v) != ablation_variants().end()) {
      db = need(v);
    } else {
      throw ContractViolation("unknown ablation variant '" + v + "'");
    }
    const auto rows = assemble_rows(labels, db ? &*db : nullptr);
    std::vector<double> aucs;
    for (std::uint64_t seed : seeds) {
      aucs.push_back(evaluate_auc(rows, seed, cfg));
      report.rows.push_back({v, seed, aucs.back()});
    }
    report.summary.push_back({v, median(aucs), *std::min_element(aucs.begin(), aucs.end()),
                              *std::max_element(aucs.begin(), aucs.end())});
  }
  return report;
}

/// variant,seed,auc rows, then a `# summary` block: variant,median,min,max.
inline void write_ablation_report(std::ostream& out, const AblationReport& r) {
  char buf[64];
  out << "variant,seed,auc\n";
  for (const AblationRow& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%.9g", row.auc);
    out << row.variant << ',' << row.seed << ',' << buf << '\n';
  }
  out << "# summary\nvariant,median,min,max\n";
  for (const VariantSummary& s : r.summary) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g", s.median, s.min, s.max);
    out << s.variant << ',' << buf << '\n';
  }
}

}  // namespace ugl
