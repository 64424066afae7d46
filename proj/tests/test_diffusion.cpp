// SPDX-License-Identifier: Apache-2.0
#include "core/error.hpp"
#include "diffusion/denoiser.hpp"
#include "diffusion/schedule.hpp"

#include "support.hpp"

#include "doctest.h"

#include <cmath>
#include <numbers>

using namespace timar;
using nn::Graph;
using nn::Var;

namespace {

double cosine_f(int tau, int steps) {
  const double s = 0.008;
  const double c = std::cos(((static_cast<double>(tau) / steps + s) / (1 + s)) * std::numbers::pi / 2);
  return c * c;
}

struct Head {
  ModelConfig config = test::tiny_config();
  nn::ParamStore<double> store;
  Denoiser<double> den;
  NoiseSchedule sched{config.diff_train_steps};

  explicit Head(std::uint64_t seed) { den = Denoiser<double>::create(store, config, seed); }
};

}  // namespace

TEST_CASE("cosine schedule matches the closed form") {
  for (int steps : {10, 100, 1000}) {
    NoiseSchedule s(steps);
    CHECK(s.alpha_bar(0) == 1.0);
    CHECK(s.beta(0) == 0.0);
    for (int tau = 1; tau <= steps; ++tau) {
      CHECK(s.alpha_bar(tau) < s.alpha_bar(tau - 1));
      CHECK(s.beta(tau) > 0.0);
      CHECK(s.beta(tau) < 1.0);
      // Clipping only bites where the raw ratio would exceed 0.999.
      const double raw = 1.0 - cosine_f(tau, steps) / cosine_f(tau - 1, steps);
      if (raw < NoiseSchedule::kMaxBeta) {
        CHECK(s.beta(tau) == doctest::Approx(raw).epsilon(1e-12));
      }
      if (tau < steps) {
        CHECK(s.alpha_bar(tau) == doctest::Approx(cosine_f(tau, steps) / cosine_f(0, steps)).epsilon(1e-9));
      }
    }
  }
  CHECK_THROWS_AS(NoiseSchedule(0), ValidationError);
}

TEST_CASE("respacing and posterior coefficients") {
  NoiseSchedule s(1000);
  const auto all = s.respaced(1000);
  for (int j = 0; j < 1000; ++j) CHECK(all[static_cast<std::size_t>(j)] == j + 1);
  CHECK(s.respaced(1) == std::vector<int>{1000});
  const auto hundred = s.respaced(100);
  CHECK(hundred.front() == 10);
  CHECK(hundred.back() == 1000);
  CHECK(std::adjacent_find(hundred.begin(), hundred.end(), std::greater_equal<>()) == hundred.end());
  const auto odd = NoiseSchedule(10).respaced(3);
  CHECK(odd == std::vector<int>{3, 7, 10});  // round(10/3), round(20/3), 10
  CHECK_THROWS_AS(s.respaced(0), ValidationError);
  CHECK_THROWS_AS(s.respaced(1001), ValidationError);

  for (int j = 1; j < 100; ++j) {
    const int tau = hundred[static_cast<std::size_t>(j)];
    const int prev = hundred[static_cast<std::size_t>(j) - 1];
    const auto pc = posterior(s, tau, prev);
    CHECK(pc.variance >= 0.0);
    CHECK(pc.variance < 1.0);
    // A noiseless x_tau = sqrt(ab) x0 maps to the mean sqrt(ab_prev) x0.
    const double mean = pc.coef_x0 + pc.coef_xt * std::sqrt(s.alpha_bar(tau));
    CHECK(mean == doctest::Approx(std::sqrt(s.alpha_bar(prev))).epsilon(1e-12));
  }
  // Single-step posterior variance is the textbook beta tilde.
  const auto one = posterior(s, 500, 499);
  CHECK(one.variance == doctest::Approx(s.beta(500) * (1 - s.alpha_bar(499)) / (1 - s.alpha_bar(500))).epsilon(1e-12));
}

TEST_CASE("forward noising") {
  NoiseSchedule s(1000);
  RandomStream rng = seeded_rng(1, "noise");
  const MatD x0 = test::random_matrix(1, 56, rng);

  RandomStream a = seeded_rng(2, "eps"), b = seeded_rng(2, "eps");
  const MatD zero_out = forward_noise<double>(s, MatD::Zero(1, 56), 300, a);
  for (int j = 0; j < 56; ++j) {
    CHECK(zero_out(0, j) == std::sqrt(1 - s.alpha_bar(300)) * b.normal());
  }

  RandomStream c = seeded_rng(3, "eps");
  const MatD near = forward_noise<double>(s, x0, 1, c);
  CHECK((near - x0 * std::sqrt(s.alpha_bar(1))).norm() < std::sqrt(1 - s.alpha_bar(1)) * 20);
  CHECK((near - x0).norm() < 0.1);

  const int draws = 100000;
  const int tau = 400;
  double sum = 0, sum2 = 0;
  RandomStream d = seeded_rng(4, "mc");
  MatD one = MatD::Constant(1, 1, 0.7);
  for (int i = 0; i < draws; ++i) {
    const double v = forward_noise<double>(s, one, tau, d)(0, 0);
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / draws;
  const double var = sum2 / draws - mean * mean;
  CHECK(std::abs(mean - 0.7 * std::sqrt(s.alpha_bar(tau))) < 4 * std::sqrt((1 - s.alpha_bar(tau)) / draws));
  CHECK(var == doctest::Approx(1 - s.alpha_bar(tau)).epsilon(0.02));

  CHECK_THROWS_AS(forward_noise<double>(s, x0, 0, d), ValidationError);
  CHECK_THROWS_AS(forward_noise<double>(s, x0, 1001, d), ValidationError);
}

TEST_CASE("modulate primitive") {
  Graph<double> g(false);
  const Var x = g.constant(MatD::Constant(1, 1, 2.0));
  const Var out = g.modulate(x, g.constant(MatD::Constant(1, 1, 1.0)), g.constant(MatD::Constant(1, 1, 0.5)));
  CHECK(g.value(out)(0, 0) == 4.0);
}

TEST_CASE("denoiser initialisation and validation") {
  Head h(1);
  RandomStream rng = seeded_rng(5, "den");
  const MatD x = test::random_matrix(6, 56, rng);
  const MatD cond = test::random_matrix(6, h.config.d_e, rng);
  const std::vector<int> frames{0, 1, 2, 3, 10, 19};
  const std::vector<int> taus{1, 5, 10, 20, 40, 50};
  CHECK(h.den.predict(x, taus, cond, frames).isZero(0));
  CHECK(h.den.frame_capacity() == h.config.N_max * h.config.k_frames());
  CHECK(h.store.find("diff.P2") != nullptr);
  CHECK(h.store.find("diff.block1.ada.w") != nullptr);
  CHECK_THROWS_AS(h.den.predict(x, taus, cond, {0, 1, 2, 3, 4, 20}), ValidationError);
  CHECK_THROWS_AS(h.den.predict(x, taus, cond, {0, 1}), ValidationError);
  CHECK_THROWS_AS(h.den.predict(x, {1, 2}, cond, frames), ValidationError);

  const MatD emb = timestep_embedding<double>({7, 0}, 8);
  CHECK((emb.row(0) - nn::sinusoid(7, 8)).norm() == 0.0);
  CHECK((emb.row(1) - nn::sinusoid(0, 8)).norm() == 0.0);
}

TEST_CASE("diffusion loss decomposition") {
  Head h(2);
  RandomStream rng = seeded_rng(6, "loss");
  const MatD x0 = test::random_matrix(5, 56, rng);
  const MatD cond = test::random_matrix(5, h.config.d_e, rng);
  const std::vector<int> frames{0, 3, 6, 9, 12};

  SUBCASE("zero-initialised head scores the squared norm of the targets") {
    Graph<double> g(false);
    RandomStream r = seeded_rng(7, "diff");
    const auto l = diffusion_loss(g, h.den, h.sched, x0, g.constant(cond), frames, r);
    double e = 0, j = 0, p = 0;
    for (int i = 0; i < 5; ++i) {
      for (int c = 0; c < 50; ++c) e += x0(i, c) * x0(i, c);
      for (int c = 50; c < 53; ++c) j += x0(i, c) * x0(i, c);
      for (int c = 53; c < 56; ++c) p += x0(i, c) * x0(i, c);
    }
    CHECK(g.value(l.exp)(0, 0) == doctest::Approx(e / 5).epsilon(1e-12));
    CHECK(g.value(l.jaw)(0, 0) == doctest::Approx(j / 5).epsilon(1e-12));
    CHECK(g.value(l.pose)(0, 0) == doctest::Approx(p / 5).epsilon(1e-12));
    CHECK(g.value(l.total)(0, 0) ==
          g.value(l.exp)(0, 0) + g.value(l.jaw)(0, 0) + g.value(l.pose)(0, 0));
  }
  SUBCASE("permuting positions leaves the zero-head loss unchanged") {
    MatD perm = x0;
    perm.row(0).swap(perm.row(4));
    MatD pc = cond;
    pc.row(0).swap(pc.row(4));
    Graph<double> g(false);
    RandomStream r1 = seeded_rng(8, "diff"), r2 = seeded_rng(8, "diff");
    const auto a = diffusion_loss(g, h.den, h.sched, x0, g.constant(cond), frames, r1);
    const auto b = diffusion_loss(g, h.den, h.sched, perm, g.constant(pc), {12, 3, 6, 9, 0}, r2);
    CHECK(g.value(a.total)(0, 0) == doctest::Approx(g.value(b.total)(0, 0)).epsilon(1e-14));
  }
  SUBCASE("repeats noise every position several times") {
    test::randomize(h.store, 3);
    Graph<double> g(false);
    RandomStream r = seeded_rng(9, "diff");
    const auto l = diffusion_loss(g, h.den, h.sched, x0, g.constant(cond), frames, r, 3);
    CHECK(std::isfinite(g.value(l.total)(0, 0)));
    CHECK(g.value(l.total)(0, 0) ==
          g.value(l.exp)(0, 0) + g.value(l.jaw)(0, 0) + g.value(l.pose)(0, 0));
  }
  SUBCASE("errors") {
    Graph<double> g(false);
    RandomStream r = seeded_rng(9, "diff");
    CHECK_THROWS_AS(diffusion_loss(g, h.den, h.sched, MatD(0, 56), g.constant(MatD(0, h.config.d_e)), {}, r),
                    ValidationError);
  }
}

TEST_CASE("denoiser gradients match central differences") {
  Head h(3);
  test::randomize(h.store, 10, 0.3);
  RandomStream rng = seeded_rng(10, "grad");
  const MatD x0 = test::random_matrix(4, 56, rng);
  const MatD cond = test::random_matrix(4, h.config.d_e, rng);
  const std::vector<int> frames{1, 5, 9, 13};
  const RandomStream fixed = seeded_rng(11, "diff");
  MatD cond_grad;
  auto loss = [&](bool grad) {
    Graph<double> g(grad);
    RandomStream r = fixed;
    Var c = g.leaf(cond);
    const auto l = diffusion_loss(g, h.den, h.sched, x0, c, frames, r, 2);
    if (grad) {
      g.backward(l.total);
      cond_grad = g.grad(c);
    }
    return g.value(l.total)(0, 0);
  };
  const auto res = test::check_param_grads(h.store, loss);
  INFO(res.where);
  CHECK(res.worst < 1e-4);

  // Condition input gradient along a random direction.
  const MatD dir = test::random_matrix(4, h.config.d_e, rng);
  h.store.zero_grad();
  loss(true);
  auto at = [&](const MatD& c) {
    Graph<double> g(false);
    RandomStream r = fixed;
    return g.value(diffusion_loss(g, h.den, h.sched, x0, g.constant(c), frames, r, 2).total)(0, 0);
  };
  const double step = 1e-6;
  const double numeric = (at(cond + step * dir) - at(cond - step * dir)) / (2 * step);
  const double analytic = (cond_grad.array() * dir.array()).sum();
  CHECK(std::abs(numeric - analytic) / std::abs(analytic) < 1e-6);
}

TEST_CASE("guidance identities") {
  Head h(4);
  test::randomize(h.store, 12, 0.3);
  RandomStream rng = seeded_rng(12, "cfg");
  const MatD cond = test::random_matrix(5, h.config.d_e, rng);
  const MatD uncond = test::random_matrix(5, h.config.d_e, rng);
  const std::vector<int> frames{0, 1, 2, 3, 4};
  const RandomStream stream = seeded_rng(13, "sample");
  const int steps = 10;

  const MatD c_only = sample<double>(h.den, h.sched, cond, frames, 1.0, nullptr, steps, stream);
  const MatD w1 = sample<double>(h.den, h.sched, cond, frames, 1.0, &uncond, steps, stream);
  CHECK(w1 == c_only);
  const MatD w0 = sample<double>(h.den, h.sched, cond, frames, 0.0, &uncond, steps, stream);
  const MatD u_only = sample<double>(h.den, h.sched, uncond, frames, 1.0, nullptr, steps, stream);
  CHECK(w0 == u_only);

  const MatD x = test::random_matrix(5, 56, rng);
  const std::vector<int> taus(5, 300 % h.sched.steps() + 1);
  const MatD c = h.den.predict(x, taus, cond, frames);
  const MatD u = h.den.predict(x, taus, uncond, frames);
  CHECK(guide<double>(c, u, 0.0) == u);
  const MatD g1 = guide<double>(c, u, 0.5), g2 = guide<double>(c, u, 1.5), g3 = guide<double>(c, u, 4.0);
  CHECK(((g3 - g1) - (4.0 - 0.5) / (1.5 - 0.5) * (g2 - g1)).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((guide<double>(c, u, 1.0) - c).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(sample<double>(h.den, h.sched, cond, frames, 2.0, nullptr, steps, stream),
                  ValidationError);
}

TEST_CASE("sampler behaviour") {
  Head h(5);
  RandomStream rng = seeded_rng(14, "sampler");
  const MatD cond = test::random_matrix(6, h.config.d_e, rng);
  const std::vector<int> frames{0, 1, 2, 3, 4, 5};
  const RandomStream stream = seeded_rng(15, "sample");

  SUBCASE("a constant denoiser is a fixed point") {
    Eigen::RowVectorXd v(56);
    for (int j = 0; j < 56; ++j) v(j) = 0.1 * j - 2.0;
    h.den.out.weight->value.setZero();
    h.den.out.bias->value = v;
    ModelConfig c = h.config;
    NoiseSchedule s(1000);
    nn::ParamStore<double> store;
    c.diff_train_steps = 1000;
    auto den = Denoiser<double>::create(store, c, 5);
    den.out.weight->value.setZero();
    den.out.bias->value = v;
    const MatD out = sample<double>(den, s, cond, frames, 1.0, nullptr, 100, stream);
    for (int i = 0; i < 6; ++i) CHECK((out.row(i) - v).cwiseAbs().maxCoeff() < 1e-3);
  }
  SUBCASE("determinism and per-row streams") {
    test::randomize(h.store, 16, 0.3);
    const MatD a = sample<double>(h.den, h.sched, cond, frames, 1.0, nullptr, 10, stream);
    const MatD b = sample<double>(h.den, h.sched, cond, frames, 1.0, nullptr, 10, stream);
    CHECK(a == b);
    const MatD top = sample<double>(h.den, h.sched, MatD(cond.topRows(3)), {0, 1, 2}, 1.0,
                                    nullptr, 10, stream);
    CHECK((top - a.topRows(3)).cwiseAbs().maxCoeff() < 1e-10);
    const MatD other = sample<double>(h.den, h.sched, cond, frames, 1.0, nullptr, 10,
                                      seeded_rng(16, "sample"));
    CHECK(other != a);
  }
}
