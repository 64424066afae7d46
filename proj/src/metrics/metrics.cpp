// SPDX-License-Identifier: Apache-2.0
#include "metrics/metrics.hpp"

#include "core/error.hpp"
#include "core/rng.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace timar {

namespace {

constexpr double kVarianceFloor = 1e-12;

void check_finite(const MatD& m, const char* what) {
  if (!m.allFinite()) throw ValidationError(std::string(what) + " contains non-finite values");
}

Eigen::VectorXd column_mean(const MatD& x) { return x.colwise().mean().transpose(); }

MatD population_cov(const MatD& x, const Eigen::VectorXd& mu) {
  const MatD centered = x.rowwise() - mu.transpose();
  return (centered.transpose() * centered) / static_cast<double>(x.rows());
}

MatD sym_sqrt(const MatD& s) {
  Eigen::SelfAdjointEigenSolver<MatD> es(s);
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double gaussian_frechet(const Eigen::VectorXd& mu1, const MatD& cov1, const Eigen::VectorXd& mu2,
                        const MatD& cov2) {
  const MatD root1 = sym_sqrt(cov1);
  const MatD inner = root1 * cov2 * root1;
  Eigen::SelfAdjointEigenSolver<MatD> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return (mu1 - mu2).squaredNorm() + cov1.trace() + cov2.trace() - 2.0 * cross;
}

double frechet_distance(const MatD& a, const MatD& b) {
  if (a.cols() != b.cols()) throw ValidationError("frechet_distance: feature widths differ");
  if (a.rows() == 0 || b.rows() == 0) throw ValidationError("frechet_distance: empty input");
  check_finite(a, "frechet_distance input");
  check_finite(b, "frechet_distance input");
  const MatD ridge = kCovarianceRidge * MatD::Identity(a.cols(), a.cols());
  const Eigen::VectorXd mu1 = column_mean(a);
  const Eigen::VectorXd mu2 = column_mean(b);
  return gaussian_frechet(mu1, population_cov(a, mu1) + ridge, mu2, population_cov(b, mu2) + ridge);
}

double paired_frechet(const MatD& a_agent, const MatD& a_user, const MatD& b_agent,
                      const MatD& b_user) {
  if (a_agent.rows() != a_user.rows() || b_agent.rows() != b_user.rows()) {
    throw ValidationError("paired_frechet: agent and user streams differ in length");
  }
  MatD a(a_agent.rows(), a_agent.cols() + a_user.cols());
  a << a_agent, a_user;
  MatD b(b_agent.rows(), b_agent.cols() + b_user.cols());
  b << b_agent, b_user;
  return frechet_distance(a, b);
}

double mse(const MatD& pred, const MatD& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) {
    throw ValidationError("mse: shape mismatch");
  }
  if (pred.rows() == 0) throw ValidationError("mse: empty input");
  return (pred - gt).rowwise().squaredNorm().mean();
}

int nearest_centroid(const MatD& centroids, const Eigen::RowVectorXd& x) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const double d = (centroids.row(c) - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

KMeansResult kmeans(const MatD& points, int k, std::uint64_t seed, int max_iter, double tol) {
  const Eigen::Index n = points.rows();
  if (k < 1) throw ValidationError("kmeans: k must be positive");
  if (n < k) {
    throw ValidationError("kmeans: " + std::to_string(n) + " points cannot form " +
                          std::to_string(k) + " clusters");
  }
  RandomStream rng = seeded_rng(seed, "kmeans");
  MatD c(k, points.cols());
  c.row(0) = points.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
  Eigen::VectorXd d2 = (points.rowwise() - c.row(0)).rowwise().squaredNorm();
  for (int j = 1; j < k; ++j) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0) {
      const double target = rng.uniform() * total;
      double acc = 0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2(i);
        if (acc > target && d2(i) > 0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
    }
    c.row(j) = points.row(pick);
    d2 = d2.cwiseMin((points.rowwise() - c.row(j)).rowwise().squaredNorm());
  }

  KMeansResult res;
  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  for (int it = 0; it < max_iter; ++it) {
    res.iterations = it + 1;
    for (Eigen::Index i = 0; i < n; ++i) {
      assign[static_cast<std::size_t>(i)] = nearest_centroid(c, points.row(i));
    }
    MatD next = MatD::Zero(k, points.cols());
    std::vector<long> count(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      next.row(assign[static_cast<std::size_t>(i)]) += points.row(i);
      ++count[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    }
    double shift = 0;
    for (int j = 0; j < k; ++j) {
      if (count[static_cast<std::size_t>(j)] == 0) {
        next.row(j) = c.row(j);  // empty clusters stay put
      } else {
        next.row(j) /= static_cast<double>(count[static_cast<std::size_t>(j)]);
      }
      shift = std::max(shift, (next.row(j) - c.row(j)).norm());
    }
    c = std::move(next);
    if (shift <= tol) break;
  }
  res.centroids = std::move(c);
  return res;
}

double histogram_entropy(const std::vector<long>& counts) {
  double total = 0;
  for (long v : counts) total += static_cast<double>(v);
  if (total <= 0) throw ValidationError("entropy of an empty histogram");
  double h = 0;
  for (long v : counts) {
    const double p = static_cast<double>(v) / total;
    h -= p * std::log2(p + kSidEpsilon);
  }
  return h;
}

double sid(const MatD& generated, const MatD& reference, int k, std::uint64_t seed) {
  if (generated.cols() != reference.cols()) throw ValidationError("sid: feature widths differ");
  if (generated.rows() == 0) throw ValidationError("sid: no generated frames");
  check_finite(generated, "sid input");
  check_finite(reference, "sid input");
  const KMeansResult km = kmeans(reference, k, seed);
  std::vector<long> counts(static_cast<std::size_t>(k), 0);
  for (Eigen::Index i = 0; i < generated.rows(); ++i) {
    ++counts[static_cast<std::size_t>(nearest_centroid(km.centroids, generated.row(i)))];
  }
  return std::max(0.0, histogram_entropy(counts));
}

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::VectorXd ca = a.array() - a.mean();
  const Eigen::VectorXd cb = b.array() - b.mean();
  const double n = static_cast<double>(a.size());
  const double va = ca.squaredNorm() / n;
  const double vb = cb.squaredNorm() / n;
  if (va < kVarianceFloor || vb < kVarianceFloor) return 0.0;
  return ca.dot(cb) / std::sqrt(ca.squaredNorm() * cb.squaredNorm());
}

double rpcc_sample(const MatD& gen_agent, const MatD& gt_agent, const MatD& user) {
  if (gen_agent.rows() != gt_agent.rows() || gen_agent.rows() != user.rows() ||
      gen_agent.cols() != gt_agent.cols() || gen_agent.cols() != user.cols()) {
    throw ValidationError("rpcc: streams must be frame-aligned with equal widths");
  }
  if (gen_agent.rows() < 2) throw ValidationError("rpcc: at least 2 frames are required");
  double total = 0;
  for (Eigen::Index j = 0; j < gen_agent.cols(); ++j) {
    const Eigen::VectorXd u = user.col(j);
    total += std::abs(pearson(gen_agent.col(j), u) - pearson(gt_agent.col(j), u));
  }
  return total / static_cast<double>(gen_agent.cols());
}

double rpcc(const std::vector<RpccTriple>& triples) {
  if (triples.empty()) throw ValidationError("rpcc: no samples");
  double total = 0;
  for (const auto& t : triples) total += rpcc_sample(t.gen_agent, t.gt_agent, t.user);
  return total / static_cast<double>(triples.size());
}

MetricReport evaluate(const std::vector<EvalItem>& items, int sid_clusters, std::uint64_t seed) {
  if (items.empty()) throw ValidationError("evaluate: no items");
  Eigen::Index frames = 0;
  for (const auto& it : items) {
    if (it.generated.rows() != it.ground_truth.rows() || it.generated.rows() != it.user.rows() ||
        it.generated.cols() != kHeadDim || it.ground_truth.cols() != kHeadDim ||
        it.user.cols() != kHeadDim) {
      throw ValidationError("evaluate: every item needs aligned [L, 56] streams");
    }
    frames += it.generated.rows();
  }
  MatD gen(frames, kHeadDim), gt(frames, kHeadDim), user(frames, kHeadDim);
  Eigen::Index row = 0;
  for (const auto& it : items) {
    gen.middleRows(row, it.generated.rows()) = it.generated;
    gt.middleRows(row, it.generated.rows()) = it.ground_truth;
    user.middleRows(row, it.generated.rows()) = it.user;
    row += it.generated.rows();
  }

  MetricReport rep;
  rep.samples = items.size();
  for (std::size_t c = 0; c < kComponents.size(); ++c) {
    const auto& comp = kComponents[c];
    auto cols = [&](const MatD& m) { return MatD(m.middleCols(comp.begin, comp.size())); };
    ComponentScores& s = rep.components[c];
    const MatD g = cols(gen), t = cols(gt), u = cols(user);
    s.fd = frechet_distance(g, t);
    s.pfd = paired_frechet(g, u, t, u);
    s.mse = mse(g, t);
    s.sid = sid(g, t, sid_clusters, seed);
    std::vector<RpccTriple> triples;
    for (const auto& it : items) {
      triples.push_back({cols(it.generated), cols(it.ground_truth), cols(it.user)});
    }
    s.rpcc = rpcc(triples);
  }
  return rep;
}

}  // namespace timar
