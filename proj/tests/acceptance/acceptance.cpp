// SPDX-License-Identifier: Apache-2.0
// Acceptance runner: one PASS/FAIL line per criterion, non-zero exit when any
// selected criterion fails.

#include "core/error.hpp"
#include "core/fileio.hpp"
#include "datagen/datagen.hpp"
#include "featurize/encoders.hpp"
#include "fusion/fusion.hpp"
#include "metrics/metrics.hpp"
#include "nn/optim.hpp"
#include "streamer/streamer.hpp"
#include "trainer/trainer.hpp"

#include "../support.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <sys/wait.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#ifndef TIMAR_CLI_PATH
#define TIMAR_CLI_PATH "timar"
#endif

using namespace timar;
namespace fs = std::filesystem;
using Json = nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Settings {
  fs::path workdir;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  long trend_steps = 600;
  double trend_minutes = 30.0;
  std::string cli = TIMAR_CLI_PATH;
};

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome tlca_correctness(const Settings&) {
  const auto t0 = Clock::now();
  RandomStream rng = seeded_rng(2024, "acceptance/tlca");
  long cells = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int L = 1 + static_cast<int>(rng.below(64));
    const auto ids = test::random_turn_ids(L, rng);
    const TlcaMask mask = build_tlca_mask(ids);
    for (int q = 0; q < L; ++q) {
      for (int k = 0; k < L; ++k, ++cells) {
        const bool expected = ids[static_cast<std::size_t>(k)] <= ids[static_cast<std::size_t>(q)];
        if (mask(q, k) != expected) {
          return {false, "trial " + std::to_string(trial) + " differs at (" + std::to_string(q) +
                             ", " + std::to_string(k) + ")"};
        }
      }
    }
  }
  const double s = seconds_since(t0);
  return {s < 5.0, std::to_string(cells) + " cells over 200 masks in " + fmt("%.3f s", s)};
}

// ---------------------------------------------------------------------------

/// A tiny model with random weights plus observations of one dialogue.
struct TinySetup {
  ModelConfig config = test::tiny_config();
  std::unique_ptr<TimarModel<float>> model;
  std::vector<DialogueSample> dialogues;

  TinySetup(std::uint64_t seed, int count) {
    SynthParams p;
    p.duration = config.N_max * config.c;
    p.f_s = config.f_s;
    p.f_h = config.f_h;
    for (int i = 0; i < count; ++i) dialogues.push_back(gen_sample(seed * 1000 + i, p));
    model = std::make_unique<TimarModel<float>>(config, seed);
    test::randomize(model->params, seed, 0.3);
    model->norm = compute_norm_stats(dialogues);
  }
};

Mat<float> fuse_full(const TimarModel<float>& m, const std::vector<TurnInputs>& turns) {
  nn::Graph<float> g(false);
  std::vector<TurnTokens> tokens;
  for (const auto& t : turns) tokens.push_back(m.tokenize(g, t, true));
  const InterleavedContext ctx = interleave(g, g.param(*m.special.separators), tokens);
  return g.value(m.fusion(g, ctx, {}).z);
}

Outcome turn_causality(const Settings&) {
  const auto t0 = Clock::now();
  TinySetup s(7, 1);
  const ModelConfig& c = s.config;
  const int n = c.N_max, k = c.k_frames(), tl = 4 * k + 10;
  const auto base_turns = prepare_dialogue(s.dialogues[0], c, s.model->norm);
  const auto base_obs = observe_dialogue(s.dialogues[0], c);
  const Mat<float> z_base = fuse_full(*s.model, base_turns);
  Streamer<float> base_stream(*s.model, n - 1, 2.0, 5, 99);
  const MatD out_base = base_stream.run(base_obs);
  RandomStream rng = seeded_rng(8, "acceptance/causality");
  const RandomStream sampler_rng = seeded_rng(9, "acceptance/causality/sample");

  for (int trial = 0; trial < 50; ++trial) {
    const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(n - 1)));
    auto turns = base_turns;
    auto obs = base_obs;
    const int which = static_cast<int>(rng.below(3));
    const auto next = static_cast<std::size_t>(t + 1);
    const auto row = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(k)));
    if (which == 0) {
      turns[next].user_speech.row(row).array() += 1.0;
      obs[next].user_wave.samples[rng.below(obs[next].user_wave.samples.size())] += 0.5f;
    } else if (which == 1) {
      turns[next].agent_speech.row(row).array() -= 1.0;
      obs[next].agent_wave.samples[rng.below(obs[next].agent_wave.samples.size())] -= 0.5f;
    } else {
      turns[next].user_head.row(row).array() += 1.0;
      obs[next].user_head.row(row).array() += 0.2;
    }
    const Mat<float> z = fuse_full(*s.model, turns);
    const Eigen::Index keep = static_cast<Eigen::Index>(t + 1) * tl;
    if (z.topRows(keep) != z_base.topRows(keep)) {
      return {false, "trial " + std::to_string(trial) + ": fused rows of turns <= " +
                         std::to_string(t) + " changed"};
    }
    if (z.bottomRows(z.rows() - keep) == z_base.bottomRows(z.rows() - keep)) {
      return {false, "trial " + std::to_string(trial) + ": perturbation had no effect"};
    }
    // Sampled outputs of turns <= t from the full-window features.
    std::vector<int> frames;
    for (int f = 0; f < (t + 1) * k; ++f) frames.push_back(f);
    ContextLayout layout{n, k};
    Mat<float> rows_a(static_cast<Eigen::Index>(frames.size()), c.d_e), rows_b(rows_a);
    for (std::size_t i = 0; i < frames.size(); ++i) {
      rows_a.row(static_cast<Eigen::Index>(i)) = z_base.row(layout.agent_head_position(frames[i]));
      rows_b.row(static_cast<Eigen::Index>(i)) = z.row(layout.agent_head_position(frames[i]));
    }
    const auto& d = s.model->denoiser;
    if (sample<float>(d, s.model->schedule, rows_a, frames, 1.0, nullptr, 5, sampler_rng) !=
        sample<float>(d, s.model->schedule, rows_b, frames, 1.0, nullptr, 5, sampler_rng)) {
      return {false, "trial " + std::to_string(trial) + ": sampled frames changed"};
    }
    // Streaming outputs.
    Streamer<float> stream(*s.model, n - 1, 2.0, 5, 99);
    const MatD out = stream.run(obs);
    if (out.topRows(keep / tl * k) != out_base.topRows(keep / tl * k)) {
      return {false, "trial " + std::to_string(trial) + ": streamed output changed"};
    }
  }
  const double sec = seconds_since(t0);
  return {sec < 60.0, "50 perturbations, earlier turns bit-identical, " + fmt("%.2f s", sec)};
}

// ---------------------------------------------------------------------------

Outcome shape_laws(const Settings&) {
  ModelConfig c;
  const int k = c.k_frames();
  std::string detail;
  for (int n = 1; n <= 8; ++n) {
    nn::Graph<float> g(false);
    std::vector<TurnTokens> turns;
    for (int i = 0; i < n; ++i) {
      const auto block = [&] { return g.constant(Mat<float>::Zero(k, 4)); };
      turns.push_back({block(), block(), block(), block(), std::vector<char>(k, 0)});
    }
    const InterleavedContext ctx = interleave(g, g.constant(Mat<float>::Ones(10, 4)), turns);
    const int expected = n * (4 * k + 10);
    if (g.rows(ctx.tokens) != expected || ctx.layout.length() != expected) {
      return {false, "N=" + std::to_string(n) + ": length " + std::to_string(g.rows(ctx.tokens))};
    }
    for (double r : {0.7, 0.3, 1.0}) {
      RandomStream rng = seeded_rng(static_cast<std::uint64_t>(n), "acceptance/shape");
      const auto [masked, frames] =
          apply_agent_mask(g, ctx, r, rng, g.constant(Mat<float>::Ones(1, 4)));
      const auto want = static_cast<std::size_t>(std::ceil(r * n * k - 1e-9));
      if (frames.size() != want) {
        return {false, "N=" + std::to_string(n) + " r=" + fmt("%.1f", r) + ": " +
                           std::to_string(frames.size()) + " masked rows"};
      }
    }
    if (n == 8) {
      RandomStream rng = seeded_rng(8, "acceptance/shape");
      const auto [masked, frames] =
          apply_agent_mask(g, ctx, c.r, rng, g.constant(Mat<float>::Ones(1, 4)));
      detail = "N=8: length " + std::to_string(g.rows(ctx.tokens)) + ", masked rows " +
               std::to_string(frames.size());
    }
  }
  return {true, detail};
}

// ---------------------------------------------------------------------------

Outcome gradient_fidelity(const Settings&) {
  const auto t0 = Clock::now();
  const ModelConfig c = test::tiny_config();
  RandomStream rng = seeded_rng(31, "acceptance/grad");
  const MatD aligned = test::random_matrix(c.k_frames(), c.d_raw, rng);
  const MatD frames = test::random_matrix(c.k_frames(), kHeadDim, rng);
  const MatD target = test::random_matrix(c.k_frames(), c.d_t, rng);
  std::map<std::string, test::GradCheck> results;

  {
    nn::ParamStore<double> store;
    auto head = HeadEncoder<double>::create(store, c, 1);
    results["head_encode"] = test::check_param_grads(store, [&](bool grad) {
      nn::Graph<double> g(grad);
      auto l = g.squared_error(head(g, g.constant(frames)), target, 0, c.d_t);
      if (grad) g.backward(l);
      return g.value(l)(0, 0);
    });
  }
  {
    nn::ParamStore<double> store;
    auto speech = SpeechEncoder<double>::create(store, c, 2);
    results["speech_encode"] = test::check_param_grads(store, [&](bool grad) {
      nn::Graph<double> g(grad);
      auto l = g.squared_error(speech(g, g.constant(aligned)), target, 0, c.d_t);
      if (grad) g.backward(l);
      return g.value(l)(0, 0);
    });
  }
  {
    nn::ParamStore<double> store;
    auto layer = nn::TransformerLayer<double>::create(store, "fusion.layer0", c.d_e, 2, 3);
    test::randomize(store, 3, 0.4);
    const MatD x = test::random_matrix(12, c.d_e, rng);
    const MatD y = test::random_matrix(12, c.d_e, rng);
    const auto limits = tlca_key_limits({0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2});
    // Key biases have an exactly zero gradient under softmax; the floor keeps
    // their rounding noise out of the relative error.
    results["fusion_layer"] = test::check_param_grads(
        store,
        [&](bool grad) {
          nn::Graph<double> g(grad);
          auto l = g.squared_error(layer(g, g.constant(x), limits), y, 0, c.d_e);
          if (grad) g.backward(l);
          return g.value(l)(0, 0);
        },
        1000, 1e-6, 1e-3);
  }
  {
    nn::ParamStore<double> store;
    auto den = Denoiser<double>::create(store, c, 4);
    test::randomize(store, 4, 0.3);
    const NoiseSchedule sched(c.diff_train_steps);
    const MatD x0 = test::random_matrix(6, kHeadDim, rng);
    const MatD cond = test::random_matrix(6, c.d_e, rng);
    const std::vector<int> fr{0, 3, 5, 9, 12, 19};
    results["diffusion_head"] = test::check_param_grads(store, [&](bool grad) {
      nn::Graph<double> g(grad);
      RandomStream noise = seeded_rng(5, "acceptance/grad/noise");
      auto loss = diffusion_loss(g, den, sched, x0, g.constant(cond), fr, noise);
      if (grad) g.backward(loss.total);
      return g.value(loss.total)(0, 0);
    });
  }
  bool pass = true;
  std::string detail;
  for (const auto& [name, r] : results) {
    pass = pass && r.worst < 1e-4;
    detail += name + " " + fmt("%.1e", r.worst) + "; ";
  }
  const double s = seconds_since(t0);
  return {pass && s < 120.0, detail + fmt("%.1f s", s)};
}

// ---------------------------------------------------------------------------

Outcome diffusion_sanity(const Settings&) {
  const auto t0 = Clock::now();
  ModelConfig c = test::tiny_config();
  c.d_e = 16;
  c.d_m = 64;
  c.K_blocks = 2;
  c.diff_train_steps = 1000;
  nn::ParamStore<float> store;
  const auto den = Denoiser<float>::create(store, c, 11);
  const NoiseSchedule sched(c.diff_train_steps);
  const nn::AdamWSettings adam{0.9, 0.95, 1e-8, 0.0};
  const int rows = 64;
  const Mat<float> cond = Mat<float>::Zero(rows, c.d_e);
  const std::vector<int> frames(rows, 0);
  RandomStream data = seeded_rng(12, "acceptance/sanity/data");
  for (long step = 1; step <= 2000; ++step) {
    Mat<float> x0(rows, kHeadDim);
    for (Eigen::Index i = 0; i < x0.size(); ++i) {
      x0.data()[i] = static_cast<float>(0.5 + 0.2 * data.normal());
    }
    store.zero_grad();
    nn::Graph<float> g(true);
    RandomStream noise = seeded_rng(13, "acceptance/sanity/step" + std::to_string(step));
    const auto loss = diffusion_loss(g, den, sched, x0, g.constant(cond), frames, noise);
    g.backward(loss.total);
    nn::adamw_update(store, adam, nn::warmup_lr(2e-3, 50, step), step);
  }
  const int draws = 512;
  const Mat<float> samples = sample<float>(den, sched, Mat<float>(Mat<float>::Zero(draws, c.d_e)),
                                    std::vector<int>(draws, 0), 1.0, nullptr, 100,
                                    seeded_rng(14, "acceptance/sanity/sample"));
  const Eigen::ArrayXd v = samples.cast<double>().reshaped().array();
  const double mean = v.mean();
  const double sd = std::sqrt((v - mean).square().mean());
  const double s = seconds_since(t0);
  const bool pass = std::abs(mean - 0.5) <= 0.05 && std::abs(sd - 0.2) <= 0.05 && s < 300.0;
  return {pass, "sample mean " + fmt("%.4f", mean) + ", std " + fmt("%.4f", sd) + " after 2000 steps, " +
                    fmt("%.1f s", s)};
}

// ---------------------------------------------------------------------------

Outcome cfg_identities(const Settings&) {
  ModelConfig c = test::tiny_config();
  nn::ParamStore<double> store;
  const auto den = Denoiser<double>::create(store, c, 21);
  test::randomize(store, 21, 0.3);
  const NoiseSchedule sched(c.diff_train_steps);
  RandomStream rng = seeded_rng(22, "acceptance/cfg");
  const MatD cond = test::random_matrix(7, c.d_e, rng);
  const MatD uncond = test::random_matrix(7, c.d_e, rng);
  const std::vector<int> frames{0, 1, 2, 3, 4, 5, 6};
  const RandomStream stream = seeded_rng(23, "acceptance/cfg/sample");
  const int steps = c.diff_sample_steps;

  const MatD c_only = sample<double>(den, sched, cond, frames, 1.0, nullptr, steps, stream);
  const MatD w1 = sample<double>(den, sched, cond, frames, 1.0, &uncond, steps, stream);
  const MatD u_only = sample<double>(den, sched, uncond, frames, 1.0, nullptr, steps, stream);
  const MatD w0 = sample<double>(den, sched, cond, frames, 0.0, &uncond, steps, stream);
  const bool id1 = w1 == c_only;
  const bool id0 = w0 == u_only;

  double worst = 0;
  for (int tau : {1, 17, 33, 49}) {
    const MatD x = test::random_matrix(7, kHeadDim, rng);
    const std::vector<int> taus(7, tau);
    const MatD pc = den.predict(x, taus, cond, frames);
    const MatD pu = den.predict(x, taus, uncond, frames);
    const MatD a = guide<double>(pc, pu, -0.5), b = guide<double>(pc, pu, 1.7),
               d = guide<double>(pc, pu, 6.0);
    // Three points on a line: d - a is parallel to b - a with ratio 6.5 / 2.2.
    worst = std::max(worst, ((d - a) - (6.5 / 2.2) * (b - a)).cwiseAbs().maxCoeff());
  }
  const bool pass = id1 && id0 && worst < 1e-9;
  return {pass, std::string("omega=1 ") + (id1 ? "bit-exact" : "DIFFERS") + ", omega=0 " +
                    (id0 ? "bit-exact" : "DIFFERS") + ", collinearity residual " +
                    fmt("%.1e", worst)};
}

// ---------------------------------------------------------------------------

Outcome metric_oracles(const Settings&) {
  RandomStream rng = seeded_rng(41, "acceptance/metrics");
  std::vector<std::string> failures;

  // Closed form against eigenvalues of the non-symmetric product.
  double fd_err = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const int d = 2 + trial % 5;
    const MatD a = test::random_matrix(d, d, rng), b = test::random_matrix(d, d, rng);
    const MatD s1 = a * a.transpose() / d + 0.1 * MatD::Identity(d, d);
    const MatD s2 = b * b.transpose() / d + 0.1 * MatD::Identity(d, d);
    const Eigen::VectorXd m1 = test::random_matrix(d, 1, rng), m2 = test::random_matrix(d, 1, rng);
    Eigen::EigenSolver<MatD> es(s1 * s2, false);
    double tr = 0;
    for (Eigen::Index i = 0; i < d; ++i) tr += std::sqrt(std::max(0.0, es.eigenvalues()(i).real()));
    const double oracle = (m1 - m2).squaredNorm() + s1.trace() + s2.trace() - 2 * tr;
    fd_err = std::max(fd_err, std::abs(gaussian_frechet(m1, s1, m2, s2) - oracle));
  }
  if (fd_err > 1e-6) failures.push_back("FD closed form " + fmt("%.1e", fd_err));

  const double one_d = gaussian_frechet(Eigen::VectorXd::Zero(1), MatD::Identity(1, 1),
                                        Eigen::VectorXd::Ones(1), MatD::Identity(1, 1));
  if (std::abs(one_d - 1.0) > 1e-12) failures.push_back("1-D FD " + fmt("%.12f", one_d));
  // {0, 2} against {1, 3}: population variance 1 on both sides, means 1 apart.
  MatD lo(2, 1), hi(2, 1);
  lo << 0.0, 2.0;
  hi << 1.0, 3.0;
  const double pop = frechet_distance(lo, hi);
  if (std::abs(pop - 1.0) > 1e-6) failures.push_back("population FD " + fmt("%.9f", pop));

  const MatD gen = test::random_matrix(50, 6, rng), gt = test::random_matrix(50, 6, rng);
  const MatD user = test::random_matrix(50, 6, rng);
  double sq = 0;
  for (int t = 0; t < 50; ++t) {
    for (int j = 0; j < 6; ++j) sq += (gen(t, j) - gt(t, j)) * (gen(t, j) - gt(t, j));
  }
  const double mse_err = std::abs(mse(gen, gt) - sq / 50);
  if (mse_err > 1e-10) failures.push_back("MSE " + fmt("%.1e", mse_err));

  auto loop_pcc = [](const MatD& a, const MatD& b, int j) {
    double ma = 0, mb = 0;
    for (Eigen::Index t = 0; t < a.rows(); ++t) {
      ma += a(t, j);
      mb += b(t, j);
    }
    ma /= a.rows();
    mb /= b.rows();
    double sab = 0, saa = 0, sbb = 0;
    for (Eigen::Index t = 0; t < a.rows(); ++t) {
      sab += (a(t, j) - ma) * (b(t, j) - mb);
      saa += (a(t, j) - ma) * (a(t, j) - ma);
      sbb += (b(t, j) - mb) * (b(t, j) - mb);
    }
    return sab / std::sqrt(saa * sbb);
  };
  double rp = 0;
  for (int j = 0; j < 6; ++j) rp += std::abs(loop_pcc(gen, user, j) - loop_pcc(gt, user, j));
  const double rpcc_err = std::abs(rpcc_sample(gen, gt, user) - rp / 6);
  if (rpcc_err > 1e-10) failures.push_back("rPCC " + fmt("%.1e", rpcc_err));

  const MatD centres = 50.0 * test::random_matrix(40, 3, rng);
  const double sid40 = sid(centres, centres, 40, 1);
  if (std::abs(sid40 - std::log2(40.0)) > 1e-6) failures.push_back("SID40 " + fmt("%.9f", sid40));
  const MatD ref = test::random_matrix(200, 3, rng);
  const double sid1 = sid(ref.row(3).replicate(60, 1), ref, 12, 1);
  if (std::abs(sid1) >= 1e-11) failures.push_back("SID single " + fmt("%.1e", sid1));

  if (!failures.empty()) {
    std::string d;
    for (const auto& f : failures) d += f + "; ";
    return {false, d};
  }
  return {true, "FD err " + fmt("%.1e", fd_err) + ", 1-D FD " + fmt("%.12f", one_d) + ", MSE err " +
                    fmt("%.1e", mse_err) + ", rPCC err " + fmt("%.1e", rpcc_err) + ", SID40 " +
                    fmt("%.9f", sid40) + ", SID single " + fmt("%.1e", sid1)};
}

// ---------------------------------------------------------------------------

struct TrendSeed {
  std::uint64_t seed;
  long steps;
  double train_minutes;
  double loss_first;  // median of the first 50 losses
  double loss_last;   // median of the last 50 losses
  double mse_n0;
  double mse_n3;
  double baseline;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

ModelConfig trend_config() {
  ModelConfig c;
  c.d_t = c.d_e = c.d_m = 256;
  c.encoder_layers = 4;
  c.encoder_heads = 4;
  c.K_blocks = 3;
  c.lr = 5e-4;
  c.warmup = 30;
  c.batch_size = 4;
  c.diff_batch_mul = 4;
  c.diff_sample_steps = 50;
  // Every agent frame of a training window is masked, as at inference. With a
  // partial mask the model learns to interpolate visible agent frames of this
  // smooth synthetic motion and drifts once nothing is visible.
  c.r = 1.0;
  c.validate();
  return c;
}

double exp_mse(const TimarModel<float>& m, const std::vector<DialogueSample>& test, int n,
               std::uint64_t seed) {
  const ComponentRange exp = kComponents[0];
  double total = 0;
  long frames = 0;
  for (const auto& s : test) {
    Streamer<float> stream(m, n, 1.0, m.config.diff_sample_steps,
                           seeded_rng(seed, "acceptance/trend/" + s.id).next_u64());
    const MatD gen = stream.run(observe_dialogue(s, m.config));
    total += (gen.middleCols(exp.begin, exp.size()) -
              s.agent_head.frames.middleCols(exp.begin, exp.size()))
                 .squaredNorm();
    frames += gen.rows();
  }
  return total / static_cast<double>(frames);
}

Outcome trend_reproduction(const Settings& st) {
  const fs::path data = st.workdir / "trend_data";
  fs::remove_all(data);
  gen_dataset(400, 0, 40, 1, data);
  const auto train = load_split(data, Split::train);
  const auto test = load_split(data, Split::test);
  const ModelConfig config = trend_config();

  double baseline = 0;
  {
    const NormStats stats = compute_norm_stats(train);
    const ComponentRange exp = kComponents[0];
    long frames = 0;
    for (const auto& s : test) {
      baseline += (s.agent_head.frames.middleCols(exp.begin, exp.size()).rowwise() -
                   stats.mean.segment(exp.begin, exp.size()))
                      .squaredNorm();
      frames += s.agent_head.frames.rows();
    }
    baseline /= static_cast<double>(frames);
  }

  std::vector<TrendSeed> runs;
  Json log = Json::array();
  for (std::uint64_t seed : st.seeds) {
    TrendSeed r{seed, 0, 0, 0, 0, 0, 0, baseline};
    Trainer<float> trainer(config, seed, train);
    std::vector<double> losses;
    const auto t0 = Clock::now();
    while (r.steps < st.trend_steps && seconds_since(t0) < st.trend_minutes * 60.0) {
      losses.push_back(trainer.step().loss);
      ++r.steps;
    }
    r.train_minutes = seconds_since(t0) / 60.0;
    const std::size_t w = std::min<std::size_t>(50, losses.size());
    r.loss_first = median({losses.begin(), losses.begin() + static_cast<long>(w)});
    r.loss_last = median({losses.end() - static_cast<long>(w), losses.end()});
    r.mse_n0 = exp_mse(trainer.model(), test, 0, seed);
    r.mse_n3 = exp_mse(trainer.model(), test, 3, seed);
    std::cerr << "  trend seed " << seed << ": " << r.steps << " steps in "
              << fmt("%.1f", r.train_minutes) << " min, loss " << fmt("%.2f", r.loss_first)
              << " -> " << fmt("%.2f", r.loss_last) << ", exp MSE n=0 " << fmt("%.4f", r.mse_n0)
              << ", n=3 " << fmt("%.4f", r.mse_n3) << ", baseline " << fmt("%.4f", baseline)
              << '\n';
    log.push_back({{"seed", seed},
                   {"steps", r.steps},
                   {"train_minutes", r.train_minutes},
                   {"loss_first50_median", r.loss_first},
                   {"loss_last50_median", r.loss_last},
                   {"exp_mse_n0", r.mse_n0},
                   {"exp_mse_n3", r.mse_n3},
                   {"exp_mse_mean_baseline", baseline}});
    runs.push_back(r);
  }
  write_file_atomic(st.workdir / "trend.json", log.dump(2) + "\n");

  std::vector<double> context_gain, vs_baseline, minutes;
  for (const auto& r : runs) {
    context_gain.push_back(1.0 - r.mse_n3 / r.mse_n0);
    vs_baseline.push_back(1.0 - r.mse_n0 / r.baseline);
    minutes.push_back(r.train_minutes);
  }
  const double gain = median(context_gain);
  const double below = median(vs_baseline);
  const double max_minutes = *std::max_element(minutes.begin(), minutes.end());
  const bool pass = gain >= 0.05 && below >= 0.30 && max_minutes <= st.trend_minutes;
  return {pass, "median n=3 gain over n=0 " + fmt("%.1f%%", 100 * gain) + " (need >= 5%), n=0 below mean baseline " +
                    fmt("%.1f%%", 100 * below) + " (need >= 30%), " + std::to_string(runs.size()) +
                    " seeds, longest training " + fmt("%.1f min", max_minutes)};
}

// ---------------------------------------------------------------------------

Outcome no_feedback(const Settings&) {
  const ModelConfig c = test::tiny_config();
  int compared = 0;
  for (int conv = 0; conv < 20; ++conv) {
    TinySetup s(100 + static_cast<std::uint64_t>(conv), 1);
    const auto obs = observe_dialogue(s.dialogues[0], c);
    // Same encoders and fusion, different denoiser output layer: predictions
    // differ, so any leak of them into the context would show up.
    TimarModel<float> other(c, 1);
    for (const auto& p : s.model->params.all()) other.params.find(p.name)->value = p.value;
    other.norm = s.model->norm;
    other.denoiser.out.weight->value *= -1.0f;
    other.denoiser.out.bias->value.array() += 1.0f;

    Streamer<float> a(*s.model, c.N_max - 1, 1.5, 4, 5);
    Streamer<float> b(*s.model, c.N_max - 1, 1.5, 4, 5);
    Streamer<float> x(other, c.N_max - 1, 1.5, 4, 5);
    RandomStream junk = seeded_rng(static_cast<std::uint64_t>(conv), "acceptance/junk");
    for (std::size_t t = 0; t < obs.size(); ++t) {
      const auto ca = a.push_turn(obs[t]);
      const auto cx = x.push_turn(obs[t]);
      if (a.fuse_window(ca, false) != x.fuse_window(cx, false) ||
          a.fuse_window(ca, true) != x.fuse_window(cx, true)) {
        return {false, "conversation " + std::to_string(conv) + " turn " + std::to_string(t) +
                           ": context depends on earlier predictions"};
      }
      const MatD out_a = a.generate_turn(ca);
      MatD out_b = b.generate_turn(b.push_turn(obs[t]));
      x.generate_turn(cx);
      if (out_a != out_b) {
        return {false, "conversation " + std::to_string(conv) + ": outputs diverged"};
      }
      // Overwrite the returned prediction; later turns must not notice.
      out_b = test::random_matrix(out_b.rows(), out_b.cols(), junk, 10.0);
      ++compared;
    }
    const Mat<float> mask_rows = s.model->special.mask->value.replicate(c.k_frames(), 1);
    for (const auto& t : a.buffer().turns()) {
      if (t.agent_head != mask_rows) return {false, "buffer holds non-mask agent tokens"};
    }
  }
  return {true, std::to_string(compared) + " turns over 20 conversations, exact equality"};
}

// ---------------------------------------------------------------------------

int run_cli(const Settings& st, const std::string& args, const fs::path& log) {
  const std::string cmd = "\"" + st.cli + "\" " + args + " 2>>\"" + log.string() + "\"";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> hash_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    if (name == "run_manifest.json" || name == "cli.log") continue;  // wall-clock stamps
    out[fs::relative(e.path(), root).string()] = file_hash(e.path());
  }
  return out;
}

Outcome reproducibility(const Settings& st) {
  const fs::path cfg = st.workdir / "repro.cfg";
  write_file_atomic(cfg,
                    "d_t=32\nd_e=32\nd_m=32\nencoder_layers=2\nencoder_heads=2\nK_blocks=2\n"
                    "batch_size=2\nwarmup=10\nlr=0.001\ndiff_sample_steps=10\n");
  std::vector<std::map<std::string, std::string>> trees;
  for (int run = 0; run < 2; ++run) {
    // Both passes use the same directory: outputs record absolute paths.
    const fs::path dir = st.workdir / "repro";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const fs::path log = dir / "cli.log";
    const std::string d = "\"" + (dir / "data").string() + "\"";
    const std::string steps[] = {
        "gen-data --out " + d + " --train 6 --val 0 --test 2 --seed 3 --strict",
        "train --data " + d + " --out \"" + (dir / "run").string() + "\" --config \"" +
            cfg.string() + "\" --steps 200 --seed 3 --strict",
        "sample --checkpoint \"" + (dir / "run" / "checkpoint.tmr").string() + "\" --data " + d +
            " --out \"" + (dir / "gen").string() + "\" --context-n 0,3 --omega 1,2 --seed 3 --strict",
        "eval --data " + d + " --generated \"" + (dir / "gen").string() + "\" --out \"" +
            (dir / "report.json").string() + "\" --seed 3 --strict",
    };
    for (const auto& s : steps) {
      if (run_cli(st, s, log) != 0) return {false, "command failed: timar " + s};
    }
    trees.push_back(hash_tree(dir));
  }
  if (trees[0].size() < 10) return {false, "too few outputs (" + std::to_string(trees[0].size()) + ")"};
  for (const auto& [file, hash] : trees[0]) {
    const auto it = trees[1].find(file);
    if (it == trees[1].end()) return {false, file + " missing from the second run"};
    if (it->second != hash) return {false, file + " differs: " + hash + " vs " + it->second};
  }
  if (trees[0].size() != trees[1].size()) return {false, "output sets differ"};
  return {true, std::to_string(trees[0].size()) + " output files identical, checkpoint " +
                    trees[0].at("run/checkpoint.tmr") + ", report " + trees[0].at("report.json")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TIMAR acceptance criteria"};
  Settings st;
  std::vector<int> only;
  std::string workdir = (fs::temp_directory_path() / "timar_acceptance").string();
  app.add_option("--only", only, "criteria to run (default: all)")->delimiter(',');
  app.add_option("--workdir", workdir, "scratch directory");
  app.add_option("--seeds", st.seeds, "training seeds of the trend criterion")->delimiter(',');
  app.add_option("--trend-steps", st.trend_steps, "update cap per trend seed");
  app.add_option("--trend-minutes", st.trend_minutes, "training time cap per trend seed");
  app.add_option("--cli", st.cli, "path of the timar executable");
  CLI11_PARSE(app, argc, argv);
  st.workdir = workdir;
  fs::create_directories(st.workdir);

  const std::vector<std::pair<const char*, std::function<Outcome(const Settings&)>>> criteria{
      {"TLCA correctness", tlca_correctness},
      {"end-to-end turn causality", turn_causality},
      {"shape laws", shape_laws},
      {"gradient fidelity", gradient_fidelity},
      {"diffusion sanity", diffusion_sanity},
      {"CFG identities", cfg_identities},
      {"metric oracles", metric_oracles},
      {"trend reproduction", trend_reproduction},
      {"buffer no-feedback law", no_feedback},
      {"reproducibility", reproducibility},
  };
  int failed = 0;
  Json summary = Json::array();
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second(st);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << criteria[i].first << ": "
              << o.detail << " (" << fmt("%.1f s", seconds_since(t0)) << ")" << std::endl;
    summary.push_back({{"criterion", id}, {"name", criteria[i].first}, {"pass", o.pass},
                       {"detail", o.detail}});
  }
  write_file_atomic(st.workdir / "acceptance.json", summary.dump(2) + "\n");
  return failed == 0 ? 0 : 1;
}
