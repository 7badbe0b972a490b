#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ugl/error.hpp"
#include "ugl/mask_plan.hpp"
#include "ugl/model.hpp"
#include "ugl/objective.hpp"
#include "ugl/seed.hpp"
#include "ugl/vocab.hpp"

namespace ugl {

enum class MaskingMode { Vanilla, Ipm };

inline const char* masking_name(MaskingMode m) { return m == MaskingMode::Ipm ? "ipm" : "vanilla"; }

struct TrainConfig {
  MaskingMode masking = MaskingMode::Ipm;
  double q = 0.15;    // vanilla mask probability
  double q_c = 0.15;  // IPM cap
  double q_v = 0.5;   // IPM scale
  std::size_t batch_size = 64;
  std::size_t steps = 2000;
  double learning_rate = 2e-3;
  double weight_decay = 0.01;
  std::uint64_t seed = 1;
  bool force_min_one_mask = true;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  /// Production schedule: lr 1.76e-3, batch 4096, 300k steps, decay 0.01.
  static TrainConfig paper_scale() {
    TrainConfig c;
    c.learning_rate = 1.76e-3;
    c.batch_size = 4096;
    c.steps = 300000;
    c.weight_decay = 0.01;
    c.q_c = 0.15;
    c.q_v = 0.5;
    return c;
  }

  void validate() const {
    auto prob = [](double p, const char* name) {
      if (!(p > 0.0 && p <= 1.0)) throw ContractViolation(std::string(name) + " must lie in (0, 1]");
    };
    prob(q, "q");
    prob(q_c, "q_c");
    prob(q_v, "q_v");
    if (batch_size < 1) throw ContractViolation("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ContractViolation("learning_rate must be positive");
    if (weight_decay < 0.0) throw ContractViolation("weight_decay must be non-negative");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Per-token masking probabilities for the configured mode.
inline IpmTable masking_table(const VocabStats& vocab, const TrainConfig& cfg) {
  return cfg.masking == MaskingMode::Ipm ? ipm_probabilities(vocab, cfg.q_c, cfg.q_v)
                                         : vanilla_probabilities(vocab, cfg.q);
}

/// Independent Bernoulli masking of each non-pad position with its token's
/// probability. With `force_min_one`, an empty draw falls back to one uniformly
/// chosen maskable position.
inline RowMask sample_mask(std::span<const std::int32_t> tokens, std::span<const std::uint8_t> pad,
                           std::span<const double> probability, std::mt19937_64& rng, bool force_min_one) {
  RowMask m;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::int32_t> maskable;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (pad[i]) continue;
    const auto t = static_cast<std::size_t>(tokens[i]);
    if (t >= probability.size()) throw ContractViolation("token id outside the probability table");
    const double p = probability[t];
    if (!(p >= 0.0 && p <= 1.0)) throw ContractViolation("mask probability outside [0, 1]");
    if (p == 0.0) continue;  // reserved tokens carry probability 0
    maskable.push_back(static_cast<std::int32_t>(i));
    if (unit(rng) < p) {
      m.positions.push_back(static_cast<std::int32_t>(i));
      m.targets.push_back(tokens[i]);
    }
  }
  if (force_min_one && m.positions.empty()) {
    if (maskable.empty()) throw ContractViolation("sample_mask: no maskable position in sequence");
    const auto pick = maskable[std::uniform_int_distribution<std::size_t>(0, maskable.size() - 1)(rng)];
    m.positions.push_back(pick);
    m.targets.push_back(tokens[static_cast<std::size_t>(pick)]);
  }
  return m;
}

/// Adam with decoupled weight decay applied to weight matrices and tables.
template <class Real>
class AdamW {
 public:
  AdamW(const ModelConfig& cfg, const TrainConfig& train)
      : cfg_(train), m_(ModelParams<Real>::zeros(cfg)), v_(ModelParams<Real>::zeros(cfg)) {}

  void step(ModelParams<Real>& params, const ModelParams<Real>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const Real lr = static_cast<Real>(cfg_.learning_rate);
    const Real b1 = static_cast<Real>(cfg_.beta1), b2 = static_cast<Real>(cfg_.beta2);
    const Real inv_c1 = static_cast<Real>(1.0 / c1), inv_c2 = static_cast<Real>(1.0 / c2);
    const Real eps = static_cast<Real>(cfg_.epsilon);
    auto p = params.tensors();
    auto g = grads.tensors();
    auto m = m_.tensors();
    auto v = v_.tensors();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const Real decay = is_decayed_tensor(p[i].first) ? static_cast<Real>(cfg_.weight_decay) : Real(0);
      auto& w = *p[i].second;
      const auto& gr = *g[i].second;
      auto& mm = *m[i].second;
      auto& vv = *v[i].second;
      mm = b1 * mm + (Real(1) - b1) * gr;
      vv = b2 * vv + (Real(1) - b2) * gr.cwiseProduct(gr);
      const auto update = (mm.array() * inv_c1) / ((vv.array() * inv_c2).sqrt() + eps);
      w.array() -= lr * (update + decay * w.array());
    }
  }

 private:
  TrainConfig cfg_;
  ModelParams<Real> m_, v_;
  std::size_t t_ = 0;
};

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double accuracy = 0.0;

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct Telemetry {
  std::vector<StepRecord> records;

  bool empty() const { return records.empty(); }
  double initial_loss() const { return records.empty() ? 0.0 : records.front().loss; }
  double min_loss() const {
    double m = records.empty() ? 0.0 : records.front().loss;
    for (const auto& r : records) m = std::min(m, r.loss);
    return m;
  }
  /// Mean over the last `window` steps (default: last 10%).
  double final_loss(std::size_t window = 0) const { return tail_mean(window, &StepRecord::loss); }
  double final_accuracy(std::size_t window = 0) const { return tail_mean(window, &StepRecord::accuracy); }

  friend bool operator==(const Telemetry&, const Telemetry&) = default;

 private:
  double tail_mean(std::size_t window, double StepRecord::*field) const {
    if (records.empty()) return 0.0;
    if (window == 0) window = std::max<std::size_t>(1, records.size() / 10);
    window = std::min(window, records.size());
    double s = 0;
    for (std::size_t i = records.size() - window; i < records.size(); ++i) s += records[i].*field;
    return s / static_cast<double>(window);
  }
};

/// step,loss,masked_accuracy rows.
inline void write_telemetry(std::ostream& out, const Telemetry& t, bool header = true) {
  if (header) out << "step,loss,masked_accuracy\n";
  char buf[96];
  for (const StepRecord& r : t.records) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", r.step, r.loss, r.accuracy);
    out << buf;
  }
}

struct TrainResult {
  ModelParams<float> params;
  Telemetry telemetry;
};

using StepObserver = std::function<void(const StepRecord&)>;

/// Masked action modeling. Batches are drawn from a seeded reshuffle of the
/// corpus each epoch and padded to their longest sequence.
inline TrainResult train(std::span<const UglSequence> corpus, const VocabStats& vocab, const ModelConfig& model_cfg,
                         const TrainConfig& cfg, const StepObserver& observer = {}) {
  cfg.validate();
  model_cfg.validate();
  if (model_cfg.vocab_size != vocab.size())
    throw ContractViolation("model vocab_size " + std::to_string(model_cfg.vocab_size) +
                            " does not match vocabulary size " + std::to_string(vocab.size()));
  std::vector<EncodedSequence> encoded;
  for (const UglSequence& seq : corpus)
    if (!seq.actions.empty()) encoded.push_back(encode_sequence(seq, vocab, model_cfg));
  if (encoded.empty()) throw ContractViolation("train: corpus has no non-empty sequences");

  TrainResult result{init_params<float>(model_cfg, derive_seed(cfg.seed, "train.init")), {}};
  if (cfg.steps == 0) return result;

  const IpmTable table = masking_table(vocab, cfg);
  std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, "train.shuffle"));
  std::mt19937_64 mask_rng(derive_seed(cfg.seed, "train.mask"));
  AdamW<float> optimizer(model_cfg, cfg);

  std::vector<std::size_t> order(encoded.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::vector<std::size_t> rows;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    rows.clear();
    while (rows.size() < std::min(cfg.batch_size, encoded.size())) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        cursor = 0;
      }
      rows.push_back(order[cursor++]);
    }
    const EncodedBatch batch = assemble_batch(encoded, rows, model_cfg);
    MaskPlan plan;
    for (std::size_t r = 0; r < batch.rows; ++r)
      plan.rows.push_back(sample_mask(batch.token_row(r), batch.pad_row(r), table.q, mask_rng, cfg.force_min_one_mask));
    if (plan.total() == 0) continue;  // only possible with force_min_one_mask off

    GradientResult<float> g;
    try {
      g = gradients(batch, plan, result.params);
    } catch (const Error& e) {
      throw DivergenceError(step, e.what());
    }
    const StepRecord rec{step, static_cast<double>(g.loss), g.accuracy()};
    result.telemetry.records.push_back(rec);
    if (observer) observer(rec);
    optimizer.step(result.params, g.grads);
    for (const auto& [name, t] : std::as_const(result.params).tensors())
      if (!t->allFinite()) throw DivergenceError(step, "non-finite parameter " + name);
  }
  return result;
}

/// Single-position recovery counts for one token class.
struct ClassRecovery {
  std::size_t trials = 0;
  std::size_t hits = 0;

  double accuracy() const { return trials == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(trials); }
};

/// For each occurrence (up to `max_per_class` per token, in corpus order) mask
/// that single position, run the model and check the arg-max prediction.
/// Deterministic: no sampling involved.
inline std::vector<ClassRecovery> recovery_by_class(const ModelParams<float>& params, std::span<const UglSequence> corpus,
                                                    const VocabStats& vocab, std::size_t max_per_class) {
  const ModelConfig& cfg = params.config;
  std::vector<ClassRecovery> out(vocab.size());
  const auto eligible = static_cast<Eigen::Index>(cfg.vocab_size - 2);
  for (const UglSequence& seq : corpus) {
    if (seq.actions.empty()) continue;
    const EncodedSequence enc = encode_sequence(seq, vocab, cfg);
    const std::size_t row = 0;
    const EncodedBatch clean = assemble_batch(std::span(&enc, 1), std::span(&row, 1), cfg);
    for (std::size_t i = 0; i < enc.size(); ++i) {
      ClassRecovery& cls = out[static_cast<std::size_t>(enc.tokens[i])];
      if (cls.trials >= max_per_class) continue;
      EncodedBatch b = clean;
      b.token_ids[i] = cfg.mask_id();
      const auto h0 = embed(b, params);
      const auto fwd = forward_sequence(h0[0], b.pad_row(0), params);
      Matrix<float> hidden = fwd.output().row(static_cast<Eigen::Index>(i));
      Matrix<float> logits = hidden * params.head_weight.leftCols(eligible);
      logits += params.head_bias.leftCols(eligible);
      Eigen::Index best = 0;
      logits.row(0).maxCoeff(&best);
      ++cls.trials;
      if (best == enc.tokens[i]) ++cls.hits;
    }
  }
  return out;
}

/// Mean per-class accuracy over the tail half of the vocabulary (ranks at or
/// after the median token), skipping classes without trials.
inline double tail_macro_accuracy(std::span<const ClassRecovery> recovery, const VocabStats& vocab) {
  const std::size_t n = vocab.n_observed();
  double sum = 0;
  std::size_t classes = 0;
  for (std::size_t r = (n + 1) / 2; r < n; ++r) {
    if (recovery[r].trials == 0) continue;
    sum += recovery[r].accuracy();
    ++classes;
  }
  return classes == 0 ? 0.0 : sum / static_cast<double>(classes);
}

struct DecileAccuracy {
  std::size_t decile = 0;  // 0 = most frequent tokens
  std::size_t classes = 0;
  std::size_t trials = 0;
  std::size_t hits = 0;

  double accuracy() const { return trials == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(trials); }
};

/// Recovery accuracy stratified by vocabulary count decile.
inline std::vector<DecileAccuracy> decile_accuracy(std::span<const ClassRecovery> recovery, const VocabStats& vocab) {
  std::vector<DecileAccuracy> out(10);
  for (std::size_t d = 0; d < 10; ++d) out[d].decile = d;
  const std::size_t n = vocab.n_observed();
  for (std::size_t r = 0; r < n; ++r) {
    DecileAccuracy& d = out[r * 10 / n];
    ++d.classes;
    d.trials += recovery[r].trials;
    d.hits += recovery[r].hits;
  }
  return out;
}

struct MaskingRun {
  TrainConfig config;
  TrainResult result;
  std::vector<ClassRecovery> recovery;
  std::vector<DecileAccuracy> deciles;
};

struct MaskingComparison {
  MaskingRun first;
  MaskingRun second;
};

/// Trains two models that differ only in their masking settings and
/// evaluates both with the same deterministic recovery protocol.
inline MaskingComparison compare_masking(std::span<const UglSequence> corpus, const VocabStats& vocab,
                                         const ModelConfig& model_cfg, const TrainConfig& first,
                                         const TrainConfig& second, std::size_t max_per_class = 20) {
  TrainConfig a = first, b = second;
  a.masking = b.masking;
  a.q = b.q;
  a.q_c = b.q_c;
  a.q_v = b.q_v;
  if (!(a == b)) throw ContractViolation("compare_masking: configs may differ only in masking settings");
  auto run = [&](const TrainConfig& cfg) {
    MaskingRun r{cfg, train(corpus, vocab, model_cfg, cfg), {}, {}};
    r.recovery = recovery_by_class(r.result.params, corpus, vocab, max_per_class);
    r.deciles = decile_accuracy(r.recovery, vocab);
    return r;
  };
  return {run(first), run(second)};
}

}  // namespace ugl
