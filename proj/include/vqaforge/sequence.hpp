#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "vqaforge/errors.hpp"
#include "vqaforge/tensor.hpp"

namespace vqaforge {

// Index 0 is reserved for padding, index 1 for unknown words, in every
// vocabulary. Left-padding with 0 therefore marks inactive positions.
inline constexpr std::int32_t kPadIndex = 0;
inline constexpr std::int32_t kUnkIndex = 1;

using TokenMatrix = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MaskMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// A batch of equal-length token rows plus the mask that marks which
// positions hold real tokens. Padding is on the left: within each row every
// masked-off position precedes every active one, and a token is 0 exactly
// where the mask is off.
struct MaskedSequence {
  TokenMatrix tokens;  // batch x maxlen word indices
  MaskMatrix mask;     // batch x maxlen, 1 = real token

  MaskedSequence() = default;

  MaskedSequence(TokenMatrix t, MaskMatrix m) : tokens(std::move(t)), mask(std::move(m)) {
    validate();
  }

  static MaskedSequence from_tokens(TokenMatrix t) {
    MaskMatrix m = (t.array() != 0).template cast<std::uint8_t>();
    return MaskedSequence(std::move(t), std::move(m));
  }

  static MaskedSequence from_rows(const std::vector<std::vector<std::int32_t>>& rows) {
    if (rows.empty()) throw DimensionError("masked sequence: empty batch");
    TokenMatrix t(static_cast<Index>(rows.size()), static_cast<Index>(rows[0].size()));
    for (Index r = 0; r < t.rows(); ++r) {
      if (static_cast<Index>(rows[static_cast<std::size_t>(r)].size()) != t.cols())
        throw DimensionError("masked sequence: ragged rows");
      for (Index c = 0; c < t.cols(); ++c)
        t(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    }
    return from_tokens(std::move(t));
  }

  Index batch() const { return tokens.rows(); }
  Index length() const { return tokens.cols(); }

  void validate() const {
    if (tokens.rows() != mask.rows() || tokens.cols() != mask.cols())
      throw DimensionError("masked sequence: token/mask shapes differ");
    for (Index r = 0; r < tokens.rows(); ++r) {
      bool seen_real = false;
      for (Index c = 0; c < tokens.cols(); ++c) {
        bool on = mask(r, c) != 0;
        if ((tokens(r, c) == kPadIndex) == on)
          throw ValueError("masked sequence: token 0 must coincide with mask off (row " +
                           std::to_string(r) + ", col " + std::to_string(c) + ")");
        if (on) seen_real = true;
        else if (seen_real)
          throw ValueError("masked sequence: padding after a real token in row " +
                           std::to_string(r) + " (left-padding required)");
      }
    }
  }
};

}  // namespace vqaforge
