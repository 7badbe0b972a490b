#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ugl/encoder.hpp"
#include "ugl/error.hpp"
#include "ugl/model.hpp"
#include "ugl/vocab.hpp"

namespace ugl {

/// Pooled representation: max, avg, min and population variance blocks.
struct UserRepresentation {
  std::string user_id;
  std::vector<double> vector;
};

using RepresentationDb = std::vector<UserRepresentation>;

/// Pools HL (len x dim) over its non-pad positions.
template <class Real>
std::vector<double> pool(const Matrix<Real>& hl, std::span<const std::uint8_t> pad_row) {
  if (pad_row.size() != static_cast<std::size_t>(hl.rows())) throw ContractViolation("pad mask length does not match HL");
  const auto dim = static_cast<std::size_t>(hl.cols());
  std::vector<double> mx(dim, -std::numeric_limits<double>::infinity());
  std::vector<double> mn(dim, std::numeric_limits<double>::infinity());
  std::vector<double> sum(dim, 0.0);
  std::size_t n = 0;
  for (std::size_t i = 0; i < pad_row.size(); ++i) {
    if (pad_row[i]) continue;
    ++n;
    for (std::size_t d = 0; d < dim; ++d) {
      const double v = static_cast<double>(hl(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)));
      mx[d] = std::max(mx[d], v);
      mn[d] = std::min(mn[d], v);
      sum[d] += v;
    }
  }
  if (n == 0) throw ContractViolation("pool: sequence has no non-pad position");
  std::vector<double> out(4 * dim);
  for (std::size_t d = 0; d < dim; ++d) {
    const double mean = sum[d] / static_cast<double>(n);
    double var = 0;
    for (std::size_t i = 0; i < pad_row.size(); ++i) {
      if (pad_row[i]) continue;
      const double c = static_cast<double>(hl(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d))) - mean;
      var += c * c;
    }
    out[d] = mx[d];
    out[dim + d] = std::clamp(mean, mn[d], mx[d]);
    out[2 * dim + d] = mn[d];
    out[3 * dim + d] = var / static_cast<double>(n);
  }
  return out;
}

/// Uncorrupted forward pass and pooling for one sequence.
template <class Real>
std::vector<double> represent(const UglSequence& seq, const ModelParams<Real>& params, const VocabStats& vocab) {
  const EncodedBatch batch = encode_inputs(seq, vocab, params.config);
  const auto h0 = embed(batch, params);
  const auto fwd = forward_sequence(h0[0], batch.pad_row(0), params);
  const Matrix<Real>& out = fwd.output();
  std::vector<std::uint8_t> pad(static_cast<std::size_t>(out.rows()), 0);
  return pool(out, pad);
}

/// One representation per non-empty sequence, ordered by user id.
template <class Real>
RepresentationDb infer_representations(std::span<const UglSequence> corpus, const ModelParams<Real>& params,
                                       const VocabStats& vocab) {
  if (params.config.vocab_size != vocab.size())
    throw ContractViolation("model vocab_size " + std::to_string(params.config.vocab_size) +
                            " does not match vocabulary size " + std::to_string(vocab.size()));
  RepresentationDb db;
  for (const UglSequence& seq : corpus) {
    if (seq.actions.empty()) continue;
    db.push_back({seq.user_id, represent(seq, params, vocab)});
  }
  std::stable_sort(db.begin(), db.end(), [](const auto& a, const auto& b) { return a.user_id < b.user_id; });
  return db;
}

/// Keeps only the pooling blocks flagged in `keep` (max, avg, min, var).
inline RepresentationDb select_blocks(const RepresentationDb& db, std::size_t dim, const std::array<bool, 4>& keep) {
  RepresentationDb out;
  out.reserve(db.size());
  for (const UserRepresentation& r : db) {
    if (r.vector.size() != 4 * dim) throw ContractViolation("representation width is not 4 x dim");
    UserRepresentation s{r.user_id, {}};
    for (std::size_t b = 0; b < 4; ++b)
      if (keep[b]) s.vector.insert(s.vector.end(), r.vector.begin() + b * dim, r.vector.begin() + (b + 1) * dim);
    out.push_back(std::move(s));
  }
  return out;
}

/// Standard-normal vectors for the same users.
inline RepresentationDb random_representations(const RepresentationDb& like, std::size_t width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  RepresentationDb out;
  for (const UserRepresentation& r : like) {
    UserRepresentation s{r.user_id, std::vector<double>(width)};
    for (double& v : s.vector) v = normal(rng);
    out.push_back(std::move(s));
  }
  return out;
}

/// user,u_0,...,u_{w-1}
inline void write_representations(std::ostream& out, const RepresentationDb& db) {
  const std::size_t w = db.empty() ? 0 : db.front().vector.size();
  out << "user";
  for (std::size_t i = 0; i < w; ++i) out << ",u_" << i;
  out << '\n';
  char buf[32];
  for (const UserRepresentation& r : db) {
    if (r.vector.size() != w) throw ContractViolation("representation widths differ");
    out << r.user_id;
    for (double v : r.vector) {
      std::snprintf(buf, sizeof buf, ",%.9g", v);
      out << buf;
    }
    out << '\n';
  }
}

inline RepresentationDb read_representations(std::istream& in) {
  RepresentationDb db;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (line_no == 1) {
      if (cells.empty() || cells[0] != "user") throw ParseError(1, "header", "expected user,u_0,...");
      width = cells.size() - 1;
      continue;
    }
    if (line.empty()) continue;
    if (cells.size() != width + 1) throw ParseError(line_no, "<row>", "wrong number of columns");
    UserRepresentation r{cells[0], {}};
    for (std::size_t i = 1; i < cells.size(); ++i) {
      try {
        std::size_t used = 0;
        r.vector.push_back(std::stod(cells[i], &used));
        if (used != cells[i].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ParseError(line_no, "u_" + std::to_string(i - 1), "not a number");
      }
    }
    db.push_back(std::move(r));
  }
  return db;
}

}  // namespace ugl
