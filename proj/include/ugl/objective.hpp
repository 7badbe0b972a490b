#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "ugl/encoder.hpp"
#include "ugl/error.hpp"
#include "ugl/mask_plan.hpp"
#include "ugl/model.hpp"

namespace ugl {

/// (row, position) of a masked token in a batch.
struct MaskedSlot {
  std::size_t row = 0;
  std::size_t pos = 0;
};

namespace detail {

// Softmax over the observed tokens only; [M] and [PAD] get probability 0.
template <class Real>
Matrix<Real> head_probabilities(const Matrix<Real>& hidden, const ModelParams<Real>& params) {
  const auto eligible = static_cast<Eigen::Index>(params.config.vocab_size - 2);
  Matrix<Real> probs = Matrix<Real>::Zero(hidden.rows(), static_cast<Eigen::Index>(params.config.vocab_size));
  Matrix<Real> logits = hidden * params.head_weight.leftCols(eligible);
  logits.rowwise() += params.head_bias.leftCols(eligible).row(0);
  softmax_rows(logits);
  probs.leftCols(eligible) = logits;
  return probs;
}

inline void check_target(std::int32_t target, const ModelConfig& cfg) {
  if (target < 0 || target >= cfg.mask_id())
    throw ContractViolation("target token " + std::to_string(target) + " is reserved or out of range");
}

}  // namespace detail

/// Full forward pass: embed then encode.
template <class Real>
std::vector<Matrix<Real>> forward(const EncodedBatch& batch, const ModelParams<Real>& params) {
  return encode(embed(batch, params), std::span<const std::uint8_t>(batch.pad_mask), params);
}

/// Posterior over observed tokens for each masked slot, one row per slot.
template <class Real>
Matrix<Real> predict_masked(const std::vector<Matrix<Real>>& hl, std::span<const std::uint8_t> pad_mask,
                            std::span<const MaskedSlot> slots, const ModelParams<Real>& params) {
  if (slots.empty()) throw ContractViolation("predict_masked: no masked positions");
  Matrix<Real> hidden(static_cast<Eigen::Index>(slots.size()), static_cast<Eigen::Index>(params.config.dim));
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto [row, pos] = slots[i];
    if (row >= hl.size() || pos >= static_cast<std::size_t>(hl[row].rows()))
      throw ContractViolation("predict_masked: slot out of bounds");
    const std::size_t len = static_cast<std::size_t>(hl[row].rows());
    if (pad_mask[row * len + pos]) throw ContractViolation("predict_masked: masked slot lies on padding");
    hidden.row(static_cast<Eigen::Index>(i)) = hl[row].row(static_cast<Eigen::Index>(pos));
  }
  return detail::head_probabilities(hidden, params);
}

/// Mean negative log-likelihood of the targets.
template <class Real>
Real masked_loss(const Matrix<Real>& probs, std::span<const std::int32_t> targets, const ModelConfig& cfg) {
  if (targets.empty() || static_cast<std::size_t>(probs.rows()) != targets.size())
    throw ContractViolation("masked_loss: need one target per masked position");
  Real sum = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    detail::check_target(targets[i], cfg);
    sum -= std::log(probs(static_cast<Eigen::Index>(i), targets[i]));
  }
  return sum / static_cast<Real>(targets.size());
}

/// Copy of `batch` with every masked position's type-game id replaced by [M].
/// Date and frequency channels are left intact.
inline EncodedBatch apply_mask(const EncodedBatch& batch, const MaskPlan& plan, std::int32_t mask_id) {
  if (plan.rows.size() != batch.rows) throw ContractViolation("mask plan has a different number of rows");
  EncodedBatch out = batch;
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const RowMask& m = plan.rows[r];
    if (m.positions.size() != m.targets.size()) throw ContractViolation("mask plan positions/targets mismatch");
    for (std::size_t i = 0; i < m.positions.size(); ++i) {
      const auto pos = m.positions[i];
      if (pos < 0 || static_cast<std::size_t>(pos) >= batch.len) throw ContractViolation("mask position out of range");
      if (batch.pad_mask[batch.at(r, static_cast<std::size_t>(pos))])
        throw ContractViolation("mask position lies on padding");
      if (i > 0 && pos <= m.positions[i - 1]) throw ContractViolation("mask positions must be sorted and distinct");
      out.token_ids[out.at(r, static_cast<std::size_t>(pos))] = mask_id;
    }
  }
  return out;
}

template <class Real>
struct GradientResult {
  Real loss = 0;
  std::size_t masked = 0;
  std::size_t correct = 0;  // argmax == target
  ModelParams<Real> grads;

  double accuracy() const { return masked == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(masked); }
};

/// Masked-token loss and its exact gradient w.r.t. every parameter tensor.
/// `batch` is the uncorrupted input; masking is applied here from `plan`.
/// Rows are reduced in order, so results are bit-reproducible.
template <class Real>
GradientResult<Real> gradients(const EncodedBatch& batch, const MaskPlan& plan, const ModelParams<Real>& params) {
  const ModelConfig& cfg = params.config;
  const EncodedBatch corrupted = apply_mask(batch, plan, cfg.mask_id());
  const std::size_t total = plan.total();
  if (total == 0) throw ContractViolation("gradients: mask plan selects no positions");

  GradientResult<Real> res{0, total, 0, ModelParams<Real>::zeros(cfg)};
  ModelParams<Real>& g = res.grads;
  const std::vector<Matrix<Real>> h0 = embed(corrupted, params);
  const auto eligible = static_cast<Eigen::Index>(cfg.vocab_size - 2);
  const Real inv_total = Real(1) / static_cast<Real>(total);

  for (std::size_t r = 0; r < corrupted.rows; ++r) {
    const RowMask& m = plan.rows[r];
    if (m.positions.empty()) continue;
    const SequenceForward<Real> fwd = forward_sequence(h0[r], corrupted.pad_row(r), params);
    const Matrix<Real>& out = fwd.output();

    // compact index of each masked position (positions are sorted)
    std::vector<Eigen::Index> compact;
    compact.reserve(m.size());
    std::size_t c = 0;
    for (auto pos : m.positions) {
      while (fwd.positions[c] != pos) ++c;
      compact.push_back(static_cast<Eigen::Index>(c));
    }
    Matrix<Real> hidden(static_cast<Eigen::Index>(m.size()), out.cols());
    for (std::size_t i = 0; i < m.size(); ++i) hidden.row(static_cast<Eigen::Index>(i)) = out.row(compact[i]);
    Matrix<Real> probs = detail::head_probabilities(hidden, params);

    Matrix<Real> d_logits = probs.leftCols(eligible);
    for (std::size_t i = 0; i < m.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      const std::int32_t t = m.targets[i];
      detail::check_target(t, cfg);
      res.loss -= std::log(probs(row, t));
      Eigen::Index best = 0;
      probs.row(row).leftCols(eligible).maxCoeff(&best);
      if (best == t) ++res.correct;
      d_logits(row, t) -= Real(1);
    }
    d_logits *= inv_total;
    g.head_weight.leftCols(eligible).noalias() += hidden.transpose() * d_logits;
    g.head_bias.leftCols(eligible) += d_logits.colwise().sum();
    const Matrix<Real> d_hidden = d_logits * params.head_weight.leftCols(eligible).transpose();

    Matrix<Real> d_x = Matrix<Real>::Zero(out.rows(), out.cols());
    for (std::size_t i = 0; i < m.size(); ++i) d_x.row(compact[i]) += d_hidden.row(static_cast<Eigen::Index>(i));
    for (std::size_t l = params.layers.size(); l-- > 0;)
      d_x = layer_backward(d_x, fwd.layers[l], params.layers[l], g.layers[l], cfg.n_heads);

    for (std::size_t i = 0; i < fwd.positions.size(); ++i) {
      const std::size_t k = corrupted.at(r, static_cast<std::size_t>(fwd.positions[i]));
      const auto row = d_x.row(static_cast<Eigen::Index>(i));
      g.token_table.row(corrupted.token_ids[k]) += row;
      g.start_table.row(corrupted.start_ids[k]) += row;
      g.end_table.row(corrupted.end_ids[k]) += row;
      g.freq_table.row(corrupted.freq_ids[k]) += row;
    }
  }
  res.loss *= inv_total;
  if (!std::isfinite(static_cast<double>(res.loss))) throw Error("non-finite masked loss");
  for (const auto& [name, t] : std::as_const(g).tensors())
    if (!t->allFinite()) throw Error("non-finite gradient in " + name);
  return res;
}

}  // namespace ugl
