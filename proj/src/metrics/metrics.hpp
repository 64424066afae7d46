// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "core/types.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace timar {

/// Regulariser added to every covariance before the matrix square root.
inline constexpr double kCovarianceRidge = 1e-6;

/// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)) with population
/// covariances, each plus kCovarianceRidge * I.
double frechet_distance(const MatD& a, const MatD& b);

/// Same formula on given Gaussian statistics (no ridge added).
double gaussian_frechet(const Eigen::VectorXd& mu1, const MatD& cov1, const Eigen::VectorXd& mu2,
                        const MatD& cov2);

/// Frechet distance of per-frame [agent || user] concatenations.
double paired_frechet(const MatD& a_agent, const MatD& a_user, const MatD& b_agent,
                      const MatD& b_user);

/// (1/L) sum_t ||pred_t - gt_t||^2.
double mse(const MatD& pred, const MatD& gt);

struct KMeansResult {
  MatD centroids;  // [k, d]
  int iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding, at most `max_iter` rounds,
/// stopping once no centroid moves more than `tol`.
KMeansResult kmeans(const MatD& points, int k, std::uint64_t seed, int max_iter = 100,
                    double tol = 1e-6);

/// Index of the nearest centroid (lowest index on ties).
int nearest_centroid(const MatD& centroids, const Eigen::RowVectorXd& x);

inline constexpr double kSidEpsilon = 1e-12;

/// -sum_k p_k log2(p_k + eps) of the cluster histogram (unclamped).
double histogram_entropy(const std::vector<long>& counts);

/// Entropy of the generated frames' assignment to clusters fitted on the
/// reference frames. Negative rounding residue is clamped to 0.
double sid(const MatD& generated, const MatD& reference, int k, std::uint64_t seed);

/// Mean over dims of |rho(gen, user) - rho(gt, user)|, with a zero-variance
/// series treated as uncorrelated (rho = 0).
double rpcc_sample(const MatD& gen_agent, const MatD& gt_agent, const MatD& user);

struct RpccTriple {
  MatD gen_agent;
  MatD gt_agent;
  MatD user;
};
/// Mean of rpcc_sample over dialogues.
double rpcc(const std::vector<RpccTriple>& triples);

/// Pearson correlation; 0 when either series has variance below 1e-12.
double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

struct ComponentScores {
  double fd = 0;
  double pfd = 0;
  double mse = 0;
  double sid = 0;
  double rpcc = 0;
};

/// The five metrics for expression, jaw and pose.
struct MetricReport {
  std::array<ComponentScores, 3> components;
  std::size_t samples = 0;
};

/// One evaluated dialogue: generated and ground-truth agent motion plus the
/// user motion they respond to, all [L, 56].
struct EvalItem {
  MatD generated;
  MatD ground_truth;
  MatD user;
};

/// FD / P-FD / SID pool frames over all items; MSE is the mean over all
/// frames; rPCC is averaged per item.
MetricReport evaluate(const std::vector<EvalItem>& items, int sid_clusters, std::uint64_t seed);

}  // namespace timar
