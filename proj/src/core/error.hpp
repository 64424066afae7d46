// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace timar {

/// Bad input, violated invariant, or malformed file content.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Archive bytes that cannot be decoded (bad magic, truncated blob, ...).
class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Filesystem failures: unreadable, unwritable, missing paths.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A non-finite activation or loss was produced inside the model.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace timar
