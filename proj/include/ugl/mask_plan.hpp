#pragma once

#include <cstdint>
#include <vector>

namespace ugl {

/// Masked positions of one sequence and the token ids they held before masking.
struct RowMask {
  std::vector<std::int32_t> positions;  // sorted, distinct, never padding
  std::vector<std::int32_t> targets;

  std::size_t size() const { return positions.size(); }
  friend bool operator==(const RowMask&, const RowMask&) = default;
};

/// One RowMask per batch row.
struct MaskPlan {
  std::vector<RowMask> rows;

  std::size_t total() const {
    std::size_t n = 0;
    for (const RowMask& r : rows) n += r.size();
    return n;
  }
  friend bool operator==(const MaskPlan&, const MaskPlan&) = default;
};

}  // namespace ugl
