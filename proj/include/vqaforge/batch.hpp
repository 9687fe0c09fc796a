#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "vqaforge/sequence.hpp"
#include "vqaforge/tensor.hpp"

namespace vqaforge {

// One model-ready batch. The question is always present; the story branch is
// used by the text-QA architecture, the feature matrix by the VQA ones.
template <typename Scalar>
struct Batch {
  MaskedSequence question;
  std::optional<MaskedSequence> story;
  MatrixX<Scalar> features;             // (batch, D); 0x0 when absent
  std::vector<std::int32_t> targets;    // empty for unlabeled prediction

  Index size() const { return question.batch(); }
};

// Hands out model-ready batches for arbitrary index subsets. The training
// loop shuffles indices and slices them into batches; implementations must
// be safe to gather from concurrently.
template <typename Scalar>
class BatchSource {
 public:
  virtual ~BatchSource() = default;
  virtual Index size() const = 0;
  virtual Batch<Scalar> gather(std::span<const Index> indices) const = 0;
};

}  // namespace vqaforge
