// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "core/types.hpp"

#include <vector>

namespace timar {

inline constexpr double kStdFloor = 1e-6;

/// Per-dimension z-score statistics of agent head frames.
struct NormStats {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd std;

  bool empty() const { return mean.size() == 0; }
  MatD normalize(const MatD& frames) const;
  MatD denormalize(const MatD& frames) const;
};

/// Population mean and standard deviation over every agent frame of every
/// sample, with the deviation floored at kStdFloor.
NormStats compute_norm_stats(const std::vector<DialogueSample>& samples);

}  // namespace timar
