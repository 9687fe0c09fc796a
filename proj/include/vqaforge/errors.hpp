#pragma once

#include <stdexcept>
#include <string>

namespace vqaforge {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or rank mismatch between tensors.
struct DimensionError : Error { using Error::Error; };
// Index outside a valid range.
struct BoundsError : Error { using Error::Error; };
// Invalid parameter value or violated precondition.
struct ValueError : Error { using Error::Error; };
// API called in the wrong order (e.g. backward before forward).
struct StateError : Error { using Error::Error; };
// Malformed file contents.
struct FormatError : Error { using Error::Error; };
// Cross-file mismatch (missing annotation, feature coverage gap, ...).
struct ConsistencyError : Error { using Error::Error; };
// Weight file does not match the requested model configuration.
struct CompatibilityError : Error { using Error::Error; };
// Non-finite loss or gradients during training.
struct DivergenceError : Error { using Error::Error; };
// Lookup of an absent key.
struct NotFoundError : Error { using Error::Error; };

}  // namespace vqaforge
