// SPDX-License-Identifier: Apache-2.0
#include "diffusion/denoiser.hpp"

#include "core/error.hpp"

#include <cmath>
#include <string>

namespace timar {

namespace {

constexpr double kNormEps = 1e-6;

void check_frames(const std::vector<int>& frames, int capacity, std::size_t rows) {
  if (frames.size() != rows) throw ValidationError("one frame index is required per row");
  for (int f : frames) {
    if (f < 0 || f >= capacity) {
      throw ValidationError("frame index " + std::to_string(f) + " outside [0, " +
                            std::to_string(capacity) + ")");
    }
  }
}

}  // namespace

template <typename T>
Mat<T> timestep_embedding(const std::vector<int>& taus, int dim) {
  Mat<T> e(static_cast<Eigen::Index>(taus.size()), dim);
  for (std::size_t i = 0; i < taus.size(); ++i) {
    e.row(static_cast<Eigen::Index>(i)) = nn::sinusoid(taus[i], dim).cast<T>();
  }
  return e;
}

template <typename T>
Denoiser<T> Denoiser<T>::create(nn::ParamStore<T>& store, const ModelConfig& config,
                                std::uint64_t seed) {
  const int dm = config.d_m;
  Denoiser d;
  d.in = nn::Linear<T>::create(store, "diff.in", config.d_h, dm, seed);
  d.cond = nn::Linear<T>::create(store, "diff.cond", config.d_e, dm, seed);
  d.p2 = &store.add("diff.P2", config.N_max * config.k_frames(), dm);
  for (Eigen::Index f = 0; f < d.p2->value.rows(); ++f) {
    d.p2->value.row(f) = (0.5 * nn::sinusoid(static_cast<double>(f), dm)).cast<T>();
  }
  d.t1 = nn::Linear<T>::create(store, "diff.t1", dm, dm, seed);
  d.t2 = nn::Linear<T>::create(store, "diff.t2", dm, dm, seed);
  for (int b = 0; b < config.K_blocks; ++b) {
    const std::string prefix = "diff.block" + std::to_string(b);
    ModulationBlock<T> blk;
    blk.ada = nn::Linear<T>::create(store, prefix + ".ada", dm, 3 * dm, seed);
    blk.ada.weight->value.rightCols(dm).setZero();
    blk.ada.bias->value.rightCols(dm).setZero();
    blk.fc1 = nn::Linear<T>::create(store, prefix + ".fc1", dm, dm, seed);
    blk.fc2 = nn::Linear<T>::create(store, prefix + ".fc2", dm, dm, seed);
    d.blocks.push_back(blk);
  }
  d.final_ada = nn::Linear<T>::create(store, "diff.final.ada", dm, 2 * dm, seed);
  d.out = nn::Linear<T>::create(store, "diff.out", dm, config.d_h, seed);
  d.out.zero();
  return d;
}

template <typename T>
nn::Var Denoiser<T>::operator()(nn::Graph<T>& g, nn::Var x_tau, const std::vector<int>& taus,
                                nn::Var cond_rows, const std::vector<int>& frames) const {
  const auto m = g.rows(x_tau);
  check_frames(frames, frame_capacity(), static_cast<std::size_t>(m));
  if (taus.size() != static_cast<std::size_t>(m) || g.rows(cond_rows) != m) {
    throw ValidationError("denoiser inputs disagree on the number of positions");
  }
  const int dm = width();
  nn::Var temb = g.constant(timestep_embedding<T>(taus, dm));
  temb = t2(g, g.silu(t1(g, temb)));
  nn::Var c = g.add(g.add(cond(g, cond_rows), g.gather_rows(g.param(*p2), frames)), temb);

  nn::Var x = in(g, x_tau);
  const nn::Var none;
  for (const auto& blk : blocks) {
    nn::Var mod = blk.ada(g, c);
    nn::Var h = g.layer_norm(x, none, none, static_cast<T>(kNormEps));
    h = g.modulate(h, g.slice_cols(mod, 0, dm), g.slice_cols(mod, dm, dm));
    h = blk.fc2(g, g.silu(blk.fc1(g, h)));
    x = g.add(x, g.mul(g.slice_cols(mod, 2 * dm, dm), h));
  }
  nn::Var mod = final_ada(g, c);
  nn::Var h = g.layer_norm(x, none, none, static_cast<T>(kNormEps));
  h = g.modulate(h, g.slice_cols(mod, 0, dm), g.slice_cols(mod, dm, dm));
  return out(g, h);
}

template <typename T>
Mat<T> Denoiser<T>::predict(const Mat<T>& x_tau, const std::vector<int>& taus,
                            const Mat<T>& cond_rows, const std::vector<int>& frames) const {
  nn::Graph<T> g(false);
  return g.value((*this)(g, g.constant(x_tau), taus, g.constant(cond_rows), frames));
}

template <typename T>
DiffusionLoss<T> diffusion_loss(nn::Graph<T>& g, const Denoiser<T>& denoiser,
                                const NoiseSchedule& schedule, const Mat<T>& x0,
                                nn::Var cond_rows, const std::vector<int>& frames,
                                RandomStream& rng, int repeats) {
  if (x0.rows() == 0) throw ValidationError("diffusion loss needs at least one masked position");
  if (x0.cols() != kHeadDim) throw ValidationError("diffusion targets must have 56 columns");
  if (repeats < 1) throw ValidationError("diffusion repeats must be positive");
  const auto m = x0.rows();
  const auto total = m * repeats;

  Mat<T> targets(total, kHeadDim);
  Mat<T> noised(total, kHeadDim);
  std::vector<int> taus(static_cast<std::size_t>(total));
  std::vector<int> rows(static_cast<std::size_t>(total));
  std::vector<int> pos_frames(static_cast<std::size_t>(total));
  for (Eigen::Index i = 0; i < total; ++i) {
    const auto src = i % m;
    const int tau = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.steps())));
    taus[static_cast<std::size_t>(i)] = tau;
    rows[static_cast<std::size_t>(i)] = static_cast<int>(src);
    pos_frames[static_cast<std::size_t>(i)] = frames.at(static_cast<std::size_t>(src));
    targets.row(i) = x0.row(src);
    noised.row(i) = forward_noise<T>(schedule, Mat<T>(x0.row(src)), tau, rng);
  }
  nn::Var cond = repeats == 1 ? cond_rows : g.gather_rows(cond_rows, rows);
  nn::Var pred = denoiser(g, g.constant(std::move(noised)), taus, cond, pos_frames);

  DiffusionLoss<T> loss;
  loss.exp = g.squared_error(pred, targets, kComponents[0].begin, kComponents[0].end);
  loss.jaw = g.squared_error(pred, targets, kComponents[1].begin, kComponents[1].end);
  loss.pose = g.squared_error(pred, targets, kComponents[2].begin, kComponents[2].end);
  loss.total = g.add(g.add(loss.exp, loss.jaw), loss.pose);
  return loss;
}

template <typename T>
Mat<T> guide(const Mat<T>& cond_pred, const Mat<T>& uncond_pred, double omega) {
  return uncond_pred + static_cast<T>(omega) * (cond_pred - uncond_pred);
}

template <typename T>
Mat<T> sample(const Denoiser<T>& denoiser, const NoiseSchedule& schedule,
              const Mat<T>& cond_rows, const std::vector<int>& frames, double omega,
              const Mat<T>* uncond_rows, int steps_out, const RandomStream& rng) {
  const bool guided = omega != 1.0;
  if (guided && uncond_rows == nullptr) {
    throw ValidationError("guidance scale != 1 requires unconditional condition rows");
  }
  if (guided && (uncond_rows->rows() != cond_rows.rows() || uncond_rows->cols() != cond_rows.cols())) {
    throw ValidationError("conditional and unconditional rows differ in shape");
  }
  const auto m = cond_rows.rows();
  check_frames(frames, denoiser.frame_capacity(), static_cast<std::size_t>(m));
  const std::vector<int> ts = schedule.respaced(steps_out);

  std::vector<RandomStream> streams;
  streams.reserve(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) streams.push_back(rng.fork("row/" + std::to_string(i)));
  auto draw = [&](Mat<T>& x) {
    for (Eigen::Index i = 0; i < m; ++i) {
      auto& s = streams[static_cast<std::size_t>(i)];
      for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = static_cast<T>(s.normal());
    }
  };

  Mat<T> x(m, kHeadDim);
  draw(x);
  Mat<T> noise(m, kHeadDim);
  for (int j = steps_out - 1; j >= 0; --j) {
    const int tau = ts[static_cast<std::size_t>(j)];
    const std::vector<int> taus(static_cast<std::size_t>(m), tau);
    Mat<T> pred = denoiser.predict(x, taus, cond_rows, frames);
    if (guided) pred = guide<T>(pred, denoiser.predict(x, taus, *uncond_rows, frames), omega);
    if (!pred.allFinite()) throw NumericError("non-finite denoiser output at step " + std::to_string(tau));
    if (j == 0) {
      x = std::move(pred);
      break;
    }
    const auto pc = posterior(schedule, tau, ts[static_cast<std::size_t>(j) - 1]);
    draw(noise);
    x = static_cast<T>(pc.coef_x0) * pred + static_cast<T>(pc.coef_xt) * x +
        static_cast<T>(std::sqrt(pc.variance)) * noise;
  }
  return x;
}

#define TIMAR_INSTANTIATE(T)                                                                   \
  template struct Denoiser<T>;                                                                 \
  template Mat<T> timestep_embedding<T>(const std::vector<int>&, int);                         \
  template DiffusionLoss<T> diffusion_loss(nn::Graph<T>&, const Denoiser<T>&,                  \
                                           const NoiseSchedule&, const Mat<T>&, nn::Var,       \
                                           const std::vector<int>&, RandomStream&, int);       \
  template Mat<T> guide(const Mat<T>&, const Mat<T>&, double);                                 \
  template Mat<T> sample(const Denoiser<T>&, const NoiseSchedule&, const Mat<T>&,              \
                         const std::vector<int>&, double, const Mat<T>*, int,                  \
                         const RandomStream&);
TIMAR_INSTANTIATE(float)
TIMAR_INSTANTIATE(double)
#undef TIMAR_INSTANTIATE

}  // namespace timar
