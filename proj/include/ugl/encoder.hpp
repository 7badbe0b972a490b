#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "ugl/error.hpp"
#include "ugl/model.hpp"
#include "ugl/tensor.hpp"

namespace ugl {

namespace detail {

template <class Real>
constexpr Real kLayerNormEps = Real(1e-5);

// tanh approximation of GELU and its derivative.
template <class Real>
Real gelu(Real x) {
  constexpr Real c = Real(0.7978845608028654);
  const Real u = c * (x + Real(0.044715) * x * x * x);
  return Real(0.5) * x * (Real(1) + std::tanh(u));
}

template <class Real>
Real gelu_grad(Real x) {
  constexpr Real c = Real(0.7978845608028654);
  const Real u = c * (x + Real(0.044715) * x * x * x);
  const Real t = std::tanh(u);
  return Real(0.5) * (Real(1) + t) + Real(0.5) * x * (Real(1) - t * t) * c * (Real(1) + Real(3 * 0.044715) * x * x);
}

template <class Real>
void softmax_rows(Matrix<Real>& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    const Real mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
  }
}

template <class Real>
struct NormCache {
  Matrix<Real> xhat;
  std::vector<Real> rstd;
};

template <class Real>
Matrix<Real> layer_norm(const Matrix<Real>& x, const Matrix<Real>& gain, const Matrix<Real>& bias,
                        NormCache<Real>& cache) {
  const Eigen::Index n = x.rows();
  cache.xhat.resize(n, x.cols());
  cache.rstd.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const Real mean = x.row(i).mean();
    const Real var = (x.row(i).array() - mean).square().mean();
    const Real rstd = Real(1) / std::sqrt(var + kLayerNormEps<Real>);
    cache.rstd[static_cast<std::size_t>(i)] = rstd;
    cache.xhat.row(i) = (x.row(i).array() - mean) * rstd;
  }
  Matrix<Real> y = cache.xhat.array().rowwise() * gain.row(0).array();
  y.rowwise() += bias.row(0);
  return y;
}

template <class Real>
Matrix<Real> layer_norm_backward(const Matrix<Real>& dy, const Matrix<Real>& gain, const NormCache<Real>& cache,
                                 Matrix<Real>& dgain, Matrix<Real>& dbias) {
  dgain += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  dbias += dy.colwise().sum();
  Matrix<Real> dxhat = dy.array().rowwise() * gain.row(0).array();
  Matrix<Real> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const Real mean_d = dxhat.row(i).mean();
    const Real mean_dx = (dxhat.row(i).array() * cache.xhat.row(i).array()).mean();
    dx.row(i) = cache.rstd[static_cast<std::size_t>(i)] *
                (dxhat.row(i).array() - mean_d - cache.xhat.row(i).array() * mean_dx);
  }
  return dx;
}

template <class Real>
Matrix<Real> affine(const Matrix<Real>& x, const Matrix<Real>& w, const Matrix<Real>& b) {
  Matrix<Real> y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

}  // namespace detail

/// Activations one encoder layer keeps for its backward pass.
template <class Real>
struct LayerCache {
  Matrix<Real> input;
  Matrix<Real> q, k, v;
  std::vector<Matrix<Real>> attention;  // per head, queries x keys, rows sum to 1
  Matrix<Real> context;
  detail::NormCache<Real> norm1;
  Matrix<Real> x1;
  Matrix<Real> pre_activation;
  Matrix<Real> activation;
  detail::NormCache<Real> norm2;
  Matrix<Real> output;
};

/// Forward pass over the non-pad positions of one row. Pad keys would get an
/// attention weight of exp(-inf) = 0, so they are dropped before the softmax.
template <class Real>
struct SequenceForward {
  std::vector<std::int32_t> positions;  // original indices of the non-pad positions
  Matrix<Real> h0;                      // compact, positions.size() x dim
  std::vector<LayerCache<Real>> layers;

  const Matrix<Real>& output() const { return layers.empty() ? h0 : layers.back().output; }
};

template <class Real>
LayerCache<Real> layer_forward(const Matrix<Real>& x, const LayerParams<Real>& p, std::size_t n_heads) {
  LayerCache<Real> c;
  c.input = x;
  c.q = detail::affine(x, p.wq, p.bq);
  c.k = detail::affine(x, p.wk, p.bk);
  c.v = detail::affine(x, p.wv, p.bv);
  const Eigen::Index n = x.rows();
  const Eigen::Index dh = x.cols() / static_cast<Eigen::Index>(n_heads);
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));
  c.context.resize(n, x.cols());
  c.attention.resize(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const Eigen::Index off = static_cast<Eigen::Index>(h) * dh;
    Matrix<Real> scores = (c.q.middleCols(off, dh) * c.k.middleCols(off, dh).transpose()) * scale;
    detail::softmax_rows(scores);
    c.context.middleCols(off, dh) = scores * c.v.middleCols(off, dh);
    c.attention[h] = std::move(scores);
  }
  Matrix<Real> r1 = x + detail::affine(c.context, p.wo, p.bo);
  c.x1 = detail::layer_norm(r1, p.ln1_gain, p.ln1_bias, c.norm1);
  c.pre_activation = detail::affine(c.x1, p.w1, p.b1);
  c.activation = c.pre_activation.unaryExpr([](Real v) { return detail::gelu(v); });
  Matrix<Real> r2 = c.x1 + detail::affine(c.activation, p.w2, p.b2);
  c.output = detail::layer_norm(r2, p.ln2_gain, p.ln2_bias, c.norm2);
  return c;
}

/// Accumulates parameter gradients into `g` and returns the gradient w.r.t. the layer input.
template <class Real>
Matrix<Real> layer_backward(const Matrix<Real>& d_out, const LayerCache<Real>& c, const LayerParams<Real>& p,
                            LayerParams<Real>& g, std::size_t n_heads) {
  Matrix<Real> dr2 = detail::layer_norm_backward(d_out, p.ln2_gain, c.norm2, g.ln2_gain, g.ln2_bias);
  Matrix<Real> dx1 = dr2;
  g.w2.noalias() += c.activation.transpose() * dr2;
  g.b2 += dr2.colwise().sum();
  Matrix<Real> d_pre = (dr2 * p.w2.transpose()).array() *
                       c.pre_activation.unaryExpr([](Real v) { return detail::gelu_grad(v); }).array();
  g.w1.noalias() += c.x1.transpose() * d_pre;
  g.b1 += d_pre.colwise().sum();
  dx1.noalias() += d_pre * p.w1.transpose();

  Matrix<Real> dr1 = detail::layer_norm_backward(dx1, p.ln1_gain, c.norm1, g.ln1_gain, g.ln1_bias);
  Matrix<Real> dx = dr1;
  g.wo.noalias() += c.context.transpose() * dr1;
  g.bo += dr1.colwise().sum();
  Matrix<Real> d_context = dr1 * p.wo.transpose();

  const Eigen::Index n = c.input.rows();
  const Eigen::Index dh = c.input.cols() / static_cast<Eigen::Index>(n_heads);
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));
  Matrix<Real> dq(n, c.input.cols()), dk(n, c.input.cols()), dv(n, c.input.cols());
  for (std::size_t h = 0; h < n_heads; ++h) {
    const Eigen::Index off = static_cast<Eigen::Index>(h) * dh;
    const Matrix<Real>& attn = c.attention[h];
    const Matrix<Real> d_ctx = d_context.middleCols(off, dh);
    dv.middleCols(off, dh) = attn.transpose() * d_ctx;
    Matrix<Real> d_attn = d_ctx * c.v.middleCols(off, dh).transpose();
    // softmax backward, row by row
    const auto row_dot = (d_attn.array() * attn.array()).rowwise().sum().eval();
    Matrix<Real> d_scores = (attn.array() * (d_attn.array().colwise() - row_dot)) * scale;
    dq.middleCols(off, dh) = d_scores * c.k.middleCols(off, dh);
    dk.middleCols(off, dh) = d_scores.transpose() * c.q.middleCols(off, dh);
  }
  g.wq.noalias() += c.input.transpose() * dq;
  g.bq += dq.colwise().sum();
  g.wk.noalias() += c.input.transpose() * dk;
  g.bk += dk.colwise().sum();
  g.wv.noalias() += c.input.transpose() * dv;
  g.bv += dv.colwise().sum();
  dx.noalias() += dq * p.wq.transpose();
  dx.noalias() += dk * p.wk.transpose();
  dx.noalias() += dv * p.wv.transpose();
  return dx;
}

/// Runs the encoder stack on one row of H0 (len x dim) with its padding mask.
template <class Real>
SequenceForward<Real> forward_sequence(const Matrix<Real>& h0_row, std::span<const std::uint8_t> pad_row,
                                       const ModelParams<Real>& params) {
  SequenceForward<Real> fwd;
  for (std::size_t i = 0; i < pad_row.size(); ++i)
    if (!pad_row[i]) fwd.positions.push_back(static_cast<std::int32_t>(i));
  fwd.h0.resize(static_cast<Eigen::Index>(fwd.positions.size()), h0_row.cols());
  for (std::size_t i = 0; i < fwd.positions.size(); ++i)
    fwd.h0.row(static_cast<Eigen::Index>(i)) = h0_row.row(fwd.positions[i]);
  if (fwd.positions.empty()) return fwd;
  const Matrix<Real>* x = &fwd.h0;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    fwd.layers.push_back(layer_forward(*x, params.layers[l], params.config.n_heads));
    if (!fwd.layers.back().output.allFinite())
      throw Error("non-finite activation in encoder layer " + std::to_string(l));
    x = &fwd.layers.back().output;
  }
  return fwd;
}

/// HL for every row. Pad positions keep their H0 rows and carry no meaning.
template <class Real>
std::vector<Matrix<Real>> encode(const std::vector<Matrix<Real>>& h0, std::span<const std::uint8_t> pad_mask,
                                 const ModelParams<Real>& params) {
  std::vector<Matrix<Real>> out;
  out.reserve(h0.size());
  std::size_t offset = 0;
  for (const Matrix<Real>& row : h0) {
    const auto len = static_cast<std::size_t>(row.rows());
    if (offset + len > pad_mask.size()) throw ContractViolation("pad mask shorter than H0");
    const SequenceForward<Real> fwd = forward_sequence(row, pad_mask.subspan(offset, len), params);
    Matrix<Real> hl = row;
    const Matrix<Real>& o = fwd.output();
    for (std::size_t i = 0; i < fwd.positions.size(); ++i) hl.row(fwd.positions[i]) = o.row(static_cast<Eigen::Index>(i));
    out.push_back(std::move(hl));
    offset += len;
  }
  return out;
}

}  // namespace ugl
