#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ugl/error.hpp"
#include "ugl/lifecycle.hpp"
#include "ugl/tensor.hpp"
#include "ugl/vocab.hpp"

namespace ugl {

struct ModelConfig {
  std::size_t dim = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t max_len = 128;
  std::size_t vocab_size = 0;  // observed tokens + [M] + [PAD]
  std::size_t date_buckets = 365;
  std::size_t freq_buckets = 64;
  std::size_t ffn_mult = 4;

  /// Width 64, six layers: the production configuration.
  static ModelConfig paper_scale(std::size_t vocab_size) {
    ModelConfig c;
    c.dim = 64;
    c.n_layers = 6;
    c.n_heads = 4;
    c.vocab_size = vocab_size;
    return c;
  }

  std::int32_t mask_id() const { return static_cast<std::int32_t>(vocab_size) - 2; }
  std::int32_t pad_id() const { return static_cast<std::int32_t>(vocab_size) - 1; }
  std::size_t head_dim() const { return dim / n_heads; }
  std::size_t ffn_dim() const { return dim * ffn_mult; }
  /// Length of a pooled user representation.
  std::size_t representation_width() const { return 4 * dim; }

  void validate() const {
    if (dim < 1 || n_heads < 1 || max_len < 1 || date_buckets < 1 || freq_buckets < 1 || ffn_mult < 1)
      throw ContractViolation("model sizes must be >= 1");
    if (dim % n_heads != 0) throw ContractViolation("dim must be divisible by n_heads");
    if (vocab_size < 3) throw ContractViolation("vocab_size must include at least one token plus [M] and [PAD]");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <class Real>
struct LayerParams {
  Matrix<Real> wq, bq, wk, bk, wv, bv, wo, bo;
  Matrix<Real> ln1_gain, ln1_bias;
  Matrix<Real> w1, b1, w2, b2;
  Matrix<Real> ln2_gain, ln2_bias;
};

/// Every learnable tensor. Biases and norm parameters are 1 x n matrices.
/// The same structure doubles as a gradient set.
template <class Real>
struct ModelParams {
  ModelConfig config;
  Matrix<Real> token_table;  // vocab_size x dim
  Matrix<Real> start_table;  // date_buckets x dim
  Matrix<Real> end_table;    // date_buckets x dim
  Matrix<Real> freq_table;   // freq_buckets x dim
  std::vector<LayerParams<Real>> layers;
  Matrix<Real> head_weight;  // dim x vocab_size
  Matrix<Real> head_bias;    // 1 x vocab_size

  static ModelParams zeros(const ModelConfig& cfg) {
    cfg.validate();
    const auto d = static_cast<Eigen::Index>(cfg.dim);
    const auto f = static_cast<Eigen::Index>(cfg.ffn_dim());
    const auto v = static_cast<Eigen::Index>(cfg.vocab_size);
    ModelParams p;
    p.config = cfg;
    p.token_table = Matrix<Real>::Zero(v, d);
    p.start_table = Matrix<Real>::Zero(static_cast<Eigen::Index>(cfg.date_buckets), d);
    p.end_table = Matrix<Real>::Zero(static_cast<Eigen::Index>(cfg.date_buckets), d);
    p.freq_table = Matrix<Real>::Zero(static_cast<Eigen::Index>(cfg.freq_buckets), d);
    p.layers.resize(cfg.n_layers);
    for (auto& l : p.layers) {
      for (Matrix<Real>* w : {&l.wq, &l.wk, &l.wv, &l.wo}) *w = Matrix<Real>::Zero(d, d);
      for (Matrix<Real>* b : {&l.bq, &l.bk, &l.bv, &l.bo, &l.ln1_gain, &l.ln1_bias, &l.b2, &l.ln2_gain, &l.ln2_bias})
        *b = Matrix<Real>::Zero(1, d);
      l.w1 = Matrix<Real>::Zero(d, f);
      l.b1 = Matrix<Real>::Zero(1, f);
      l.w2 = Matrix<Real>::Zero(f, d);
    }
    p.head_weight = Matrix<Real>::Zero(d, v);
    p.head_bias = Matrix<Real>::Zero(1, v);
    return p;
  }

  /// Named tensors in canonical (checkpoint) order.
  std::vector<std::pair<std::string, Matrix<Real>*>> tensors() { return collect<Matrix<Real>>(*this); }
  std::vector<std::pair<std::string, const Matrix<Real>*>> tensors() const {
    return collect<const Matrix<Real>>(*this);
  }

  template <class Other>
  ModelParams<Other> cast() const {
    ModelParams<Other> out = ModelParams<Other>::zeros(config);
    auto src = tensors();
    auto dst = out.tensors();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].second = src[i].second->template cast<Other>();
    return out;
  }

  void set_zero() {
    for (auto& [name, t] : tensors()) t->setZero();
  }

 private:
  template <class T, class Self>
  static std::vector<std::pair<std::string, T*>> collect(Self& self) {
    std::vector<std::pair<std::string, T*>> out{{"token_table", &self.token_table},
                                                {"start_table", &self.start_table},
                                                {"end_table", &self.end_table},
                                                {"freq_table", &self.freq_table}};
    for (std::size_t i = 0; i < self.layers.size(); ++i) {
      auto& l = self.layers[i];
      const std::string p = "layer" + std::to_string(i) + ".";
      for (auto& [name, t] : std::initializer_list<std::pair<const char*, T*>>{
               {"wq", &l.wq}, {"bq", &l.bq}, {"wk", &l.wk}, {"bk", &l.bk}, {"wv", &l.wv}, {"bv", &l.bv},
               {"wo", &l.wo}, {"bo", &l.bo}, {"ln1_gain", &l.ln1_gain}, {"ln1_bias", &l.ln1_bias},
               {"w1", &l.w1}, {"b1", &l.b1}, {"w2", &l.w2}, {"b2", &l.b2}, {"ln2_gain", &l.ln2_gain},
               {"ln2_bias", &l.ln2_bias}})
        out.emplace_back(p + name, t);
    }
    out.emplace_back("head_weight", &self.head_weight);
    out.emplace_back("head_bias", &self.head_bias);
    return out;
  }
};

/// True for tensors that receive decoupled weight decay (weights and tables, not biases or norms).
inline bool is_decayed_tensor(const std::string& name) {
  auto ends_with = [&](std::string_view suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return !(ends_with("_bias") || ends_with("_gain") || ends_with(".bq") || ends_with(".bk") || ends_with(".bv") ||
           ends_with(".bo") || ends_with(".b1") || ends_with(".b2"));
}

/// Gaussian initialisation (std 0.02) for weights and tables; unit norm gains.
template <class Real>
ModelParams<Real> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams<Real> p = ModelParams<Real>::zeros(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  for (auto& [name, t] : p.tensors()) {
    if (name.ends_with("_gain")) {
      t->setOnes();
    } else if (is_decayed_tensor(name)) {
      for (Eigen::Index i = 0; i < t->size(); ++i) t->data()[i] = static_cast<Real>(normal(rng));
    }
  }
  return p;
}

/// One sequence's four id channels, before padding.
struct EncodedSequence {
  std::vector<std::int32_t> tokens, starts, ends, freqs;

  std::size_t size() const { return tokens.size(); }
};

/// Row-major rows x len id grids plus the padding mask (1 = pad).
struct EncodedBatch {
  std::size_t rows = 0;
  std::size_t len = 0;
  std::vector<std::int32_t> token_ids, start_ids, end_ids, freq_ids;
  std::vector<std::uint8_t> pad_mask;

  std::size_t at(std::size_t row, std::size_t pos) const { return row * len + pos; }
  std::span<const std::uint8_t> pad_row(std::size_t row) const { return {pad_mask.data() + row * len, len}; }
  std::span<const std::int32_t> token_row(std::size_t row) const { return {token_ids.data() + row * len, len}; }
};

/// Relative-day and frequency bucketing of one lifecycle. Dates are offsets
/// back from the newest end date in the sequence.
inline EncodedSequence encode_sequence(const UglSequence& seq, const VocabStats& vocab, const ModelConfig& cfg) {
  if (seq.actions.size() > cfg.max_len)
    throw ContractViolation("sequence of length " + std::to_string(seq.actions.size()) + " exceeds max_len " +
                            std::to_string(cfg.max_len));
  if (vocab.size() != cfg.vocab_size)
    throw ContractViolation("vocabulary size " + std::to_string(vocab.size()) + " does not match model vocab_size " +
                            std::to_string(cfg.vocab_size));
  EncodedSequence out;
  if (seq.actions.empty()) return out;
  Day reference = seq.actions.front().end;
  for (const AggregatedAction& a : seq.actions) reference = std::max(reference, a.end);
  const auto last_bucket = static_cast<std::int32_t>(cfg.date_buckets) - 1;
  const auto max_freq = static_cast<std::int32_t>(cfg.freq_buckets);
  for (const AggregatedAction& a : seq.actions) {
    auto id = vocab.find(token_of(a));
    if (!id) throw Error("token (" + a.kind.symbol() + ", " + a.game + ") is not in the vocabulary");
    out.tokens.push_back(static_cast<std::int32_t>(index_of(*id)));
    out.starts.push_back(std::clamp(days_between(a.start, reference), 0, last_bucket));
    out.ends.push_back(std::clamp(days_between(a.end, reference), 0, last_bucket));
    out.freqs.push_back(std::clamp(a.freq, 1, max_freq) - 1);
  }
  return out;
}

/// Right-pads the selected sequences to `len` (0 = longest selected).
inline EncodedBatch assemble_batch(std::span<const EncodedSequence> seqs, std::span<const std::size_t> rows,
                                   const ModelConfig& cfg, std::size_t len = 0) {
  EncodedBatch b;
  b.rows = rows.size();
  if (len == 0)
    for (std::size_t r : rows) len = std::max(len, seqs[r].size());
  b.len = len;
  const std::size_t n = b.rows * b.len;
  b.token_ids.assign(n, cfg.pad_id());
  b.start_ids.assign(n, 0);
  b.end_ids.assign(n, 0);
  b.freq_ids.assign(n, 0);
  b.pad_mask.assign(n, 1);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const EncodedSequence& s = seqs[rows[r]];
    if (s.size() > len) throw ContractViolation("sequence longer than batch length");
    for (std::size_t i = 0; i < s.size(); ++i) {
      const std::size_t k = b.at(r, i);
      b.token_ids[k] = s.tokens[i];
      b.start_ids[k] = s.starts[i];
      b.end_ids[k] = s.ends[i];
      b.freq_ids[k] = s.freqs[i];
      b.pad_mask[k] = 0;
    }
  }
  return b;
}

/// Single-row batch padded to max_len.
inline EncodedBatch encode_inputs(const UglSequence& seq, const VocabStats& vocab, const ModelConfig& cfg) {
  const EncodedSequence s = encode_sequence(seq, vocab, cfg);
  const std::size_t row = 0;
  return assemble_batch(std::span(&s, 1), std::span(&row, 1), cfg, cfg.max_len);
}

/// H0 for every position: the sum of the type-game, start, end and frequency lookups.
template <class Real>
std::vector<Matrix<Real>> embed(const EncodedBatch& batch, const ModelParams<Real>& params) {
  const ModelConfig& cfg = params.config;
  auto check = [](std::int32_t id, std::size_t bound, const char* table) {
    if (id < 0 || static_cast<std::size_t>(id) >= bound)
      throw ContractViolation(std::string("id ") + std::to_string(id) + " out of range for " + table);
  };
  std::vector<Matrix<Real>> h0;
  h0.reserve(batch.rows);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    Matrix<Real> h(static_cast<Eigen::Index>(batch.len), static_cast<Eigen::Index>(cfg.dim));
    for (std::size_t i = 0; i < batch.len; ++i) {
      const std::size_t k = batch.at(r, i);
      check(batch.token_ids[k], cfg.vocab_size, "token_table");
      check(batch.start_ids[k], cfg.date_buckets, "start_table");
      check(batch.end_ids[k], cfg.date_buckets, "end_table");
      check(batch.freq_ids[k], cfg.freq_buckets, "freq_table");
      h.row(static_cast<Eigen::Index>(i)) = params.token_table.row(batch.token_ids[k]) +
                                            params.start_table.row(batch.start_ids[k]) +
                                            params.end_table.row(batch.end_ids[k]) +
                                            params.freq_table.row(batch.freq_ids[k]);
    }
    h0.push_back(std::move(h));
  }
  return h0;
}

}  // namespace ugl
