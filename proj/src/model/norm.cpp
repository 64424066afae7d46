// SPDX-License-Identifier: Apache-2.0
#include "model/norm.hpp"

#include "core/error.hpp"

namespace timar {

MatD NormStats::normalize(const MatD& frames) const {
  if (frames.cols() != mean.size()) throw ValidationError("normalisation width mismatch");
  return (frames.rowwise() - mean).array().rowwise() / std.array();
}

MatD NormStats::denormalize(const MatD& frames) const {
  if (frames.cols() != mean.size()) throw ValidationError("normalisation width mismatch");
  return (frames.array().rowwise() * std.array()).matrix().rowwise() + mean;
}

NormStats compute_norm_stats(const std::vector<DialogueSample>& samples) {
  if (samples.empty()) throw ValidationError("cannot compute normalisation over an empty dataset");
  const auto d = samples.front().agent_head.frames.cols();
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(d);
  double count = 0;
  for (const auto& s : samples) {
    if (s.agent_head.frames.cols() != d) throw ValidationError("inconsistent head width");
    sum += s.agent_head.frames.colwise().sum();
    count += static_cast<double>(s.agent_head.frames.rows());
  }
  if (count == 0) throw ValidationError("cannot compute normalisation over zero frames");
  NormStats n;
  n.mean = sum / count;
  Eigen::RowVectorXd sq = Eigen::RowVectorXd::Zero(d);
  for (const auto& s : samples) {
    sq += (s.agent_head.frames.rowwise() - n.mean).colwise().squaredNorm();
  }
  n.std = (sq / count).cwiseSqrt().cwiseMax(kStdFloor);
  return n;
}

}  // namespace timar
