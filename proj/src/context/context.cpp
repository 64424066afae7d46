// SPDX-License-Identifier: Apache-2.0
#include "context/context.hpp"

#include "core/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace timar {

int ContextLayout::block_start(int turn, Modality m) const {
  const int base = turn * turn_length();
  switch (m) {
    case Modality::user_speech: return base + 2;
    case Modality::agent_speech: return base + 4 + k_frames;
    case Modality::user_head: return base + 6 + 2 * k_frames;
    case Modality::agent_head: return base + 8 + 3 * k_frames;
    case Modality::separator: break;
  }
  throw ValidationError("block_start: separators have no block");
}

int ContextLayout::separator_position(int turn, Separator s) const {
  const int base = turn * turn_length();
  const int k = k_frames;
  switch (s) {
    case Separator::turn_begin: return base;
    case Separator::user_speech_begin: return base + 1;
    case Separator::user_speech_end: return base + 2 + k;
    case Separator::agent_speech_begin: return base + 3 + k;
    case Separator::agent_speech_end: return base + 4 + 2 * k;
    case Separator::user_head_begin: return base + 5 + 2 * k;
    case Separator::user_head_end: return base + 6 + 3 * k;
    case Separator::agent_head_begin: return base + 7 + 3 * k;
    case Separator::agent_head_end: return base + 8 + 4 * k;
    case Separator::turn_end: return base + 9 + 4 * k;
  }
  return -1;
}

int ContextLayout::agent_head_position(int global_frame) const {
  return block_start(global_frame / k_frames, Modality::agent_head) + global_frame % k_frames;
}

std::vector<RawTurn> chunk_sequences(const Waveform& user_wave, const Waveform& agent_wave,
                                     const HeadSequence& user_head,
                                     const HeadSequence& agent_head, const ModelConfig& config) {
  for (const Waveform* w : {&user_wave, &agent_wave}) {
    if (std::lround(w->rate) != config.f_s) {
      throw ValidationError("waveform rate does not match f_s");
    }
  }
  for (const HeadSequence* h : {&user_head, &agent_head}) {
    if (std::lround(h->rate) != config.f_h) {
      throw ValidationError("head sequence rate does not match f_h");
    }
    if (h->frames.cols() != config.d_h) {
      throw ValidationError("head sequence must have 56 parameters per frame");
    }
  }
  const auto samples = user_wave.samples.size();
  const Eigen::Index frames = user_head.frames.rows();
  if (agent_wave.samples.size() != samples || agent_head.frames.rows() != frames) {
    throw ValidationError("duration mismatch between user and agent streams");
  }
  if (static_cast<double>(samples) * config.f_h !=
      static_cast<double>(frames) * config.f_s) {
    throw ValidationError("duration mismatch between audio and head streams");
  }
  const int k = config.k_frames();
  const int chunk = config.chunk_samples();
  if (frames == 0 || frames % k != 0 || samples % static_cast<std::size_t>(chunk) != 0) {
    throw ValidationError("duration " + std::to_string(static_cast<double>(frames) / config.f_h) +
                          " s is not divisible by c = " + std::to_string(config.c) + " s");
  }
  const int turns = static_cast<int>(frames / k);
  std::vector<RawTurn> out(static_cast<std::size_t>(turns));
  for (int i = 0; i < turns; ++i) {
    auto& t = out[static_cast<std::size_t>(i)];
    const auto s0 = user_wave.samples.begin() + static_cast<std::ptrdiff_t>(i) * chunk;
    const auto a0 = agent_wave.samples.begin() + static_cast<std::ptrdiff_t>(i) * chunk;
    t.user_wave = {std::vector<float>(s0, s0 + chunk), user_wave.rate};
    t.agent_wave = {std::vector<float>(a0, a0 + chunk), agent_wave.rate};
    t.user_head = user_head.frames.middleRows(static_cast<Eigen::Index>(i) * k, k);
    t.agent_head = agent_head.frames.middleRows(static_cast<Eigen::Index>(i) * k, k);
  }
  return out;
}

template <typename T>
SpecialTokens<T> SpecialTokens<T>::create(nn::ParamStore<T>& store, const ModelConfig& config,
                                          std::uint64_t seed) {
  SpecialTokens s;
  s.mask = &store.add("special.mask", 1, config.d_t);
  s.fake = &store.add("special.fake", 1, config.d_t);
  s.separators = &store.add("special.sep", kSeparatorCount, config.d_t);
  nn::init_normal(*s.mask, seed, 1.0);
  nn::init_normal(*s.fake, seed, 1.0);
  nn::init_normal(*s.separators, seed, 1.0);
  return s;
}

template <typename T>
InterleavedContext interleave(nn::Graph<T>& g, nn::Var separators,
                              const std::vector<TurnTokens>& turns) {
  if (turns.empty()) throw ValidationError("interleave: no turns");
  const int k = static_cast<int>(g.rows(turns[0].user_speech));
  for (const auto& t : turns) {
    for (nn::Var v : {t.user_speech, t.agent_speech, t.user_head, t.agent_head}) {
      if (g.rows(v) != k) throw ValidationError("interleave: inconsistent K_frames across turns");
    }
    if (static_cast<int>(t.agent_head_is_mask.size()) != k) {
      throw ValidationError("interleave: agent mask flags do not match K_frames");
    }
  }
  if (g.rows(separators) != kSeparatorCount) {
    throw ValidationError("interleave: expected 10 separator embeddings");
  }

  InterleavedContext ctx;
  ctx.layout = {static_cast<int>(turns.size()), k};
  const int len = ctx.layout.length();
  ctx.turn_id.assign(len, 0);
  ctx.modality_id.assign(len, static_cast<int>(Modality::separator));
  ctx.frame_index.assign(len, -1);

  std::vector<nn::Var> sep(kSeparatorCount);
  for (int s = 0; s < kSeparatorCount; ++s) sep[s] = g.slice_rows(separators, s, 1);

  std::vector<nn::Var> parts;
  parts.reserve(turns.size() * 14);
  for (int i = 0; i < static_cast<int>(turns.size()); ++i) {
    const auto& t = turns[static_cast<std::size_t>(i)];
    auto sp = [&](Separator s) { parts.push_back(sep[static_cast<int>(s)]); };
    sp(Separator::turn_begin);
    sp(Separator::user_speech_begin);
    parts.push_back(t.user_speech);
    sp(Separator::user_speech_end);
    sp(Separator::agent_speech_begin);
    parts.push_back(t.agent_speech);
    sp(Separator::agent_speech_end);
    sp(Separator::user_head_begin);
    parts.push_back(t.user_head);
    sp(Separator::user_head_end);
    sp(Separator::agent_head_begin);
    parts.push_back(t.agent_head);
    sp(Separator::agent_head_end);
    sp(Separator::turn_end);

    const int base = i * ctx.layout.turn_length();
    std::fill(ctx.turn_id.begin() + base, ctx.turn_id.begin() + base + ctx.layout.turn_length(),
              i);
    for (Modality m : {Modality::user_speech, Modality::agent_speech, Modality::user_head,
                       Modality::agent_head}) {
      const int start = ctx.layout.block_start(i, m);
      for (int f = 0; f < k; ++f) {
        ctx.modality_id[static_cast<std::size_t>(start + f)] = static_cast<int>(m);
        if (m == Modality::agent_head) ctx.frame_index[static_cast<std::size_t>(start + f)] = i * k + f;
      }
    }
    ctx.agent_head_is_mask.insert(ctx.agent_head_is_mask.end(), t.agent_head_is_mask.begin(),
                                  t.agent_head_is_mask.end());
  }
  ctx.tokens = g.concat_rows(parts);
  return ctx;
}

int mask_count(double r, int total) {
  const int n = static_cast<int>(std::ceil(r * total - 1e-9));
  return std::clamp(n, 0, total);
}

std::vector<int> sample_without_replacement(int total, int count, RandomStream& rng) {
  std::vector<int> pool(static_cast<std::size_t>(total));
  std::iota(pool.begin(), pool.end(), 0);
  for (int i = 0; i < count; ++i) {
    const auto j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(total - i)));
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
  }
  pool.resize(static_cast<std::size_t>(count));
  std::sort(pool.begin(), pool.end());
  return pool;
}

template <typename T>
std::pair<InterleavedContext, std::vector<int>> apply_agent_mask(nn::Graph<T>& g,
                                                                  const InterleavedContext& ctx,
                                                                  double r, RandomStream& rng,
                                                                  nn::Var mask_token) {
  if (!(r > 0.0 && r <= 1.0)) throw ValidationError("mask ratio must lie in (0, 1]");
  const int total = ctx.layout.turns * ctx.layout.k_frames;
  std::vector<int> chosen = sample_without_replacement(total, mask_count(r, total), rng);

  InterleavedContext out = ctx;
  std::vector<char> flags(static_cast<std::size_t>(ctx.layout.length()), 0);
  for (int f : chosen) {
    flags[static_cast<std::size_t>(ctx.layout.agent_head_position(f))] = 1;
    out.agent_head_is_mask[static_cast<std::size_t>(f)] = 1;
  }
  out.tokens = g.replace_rows(ctx.tokens, mask_token, std::move(flags));
  return {std::move(out), std::move(chosen)};
}

template <typename T>
InterleavedContext apply_cfg_drop(nn::Graph<T>& g, const InterleavedContext& ctx,
                                  nn::Var fake_token) {
  std::vector<char> flags(ctx.modality_id.size(), 0);
  for (std::size_t i = 0; i < flags.size(); ++i) {
    const auto m = static_cast<Modality>(ctx.modality_id[i]);
    flags[i] = m == Modality::user_speech || m == Modality::user_head;
  }
  InterleavedContext out = ctx;
  out.tokens = g.replace_rows(ctx.tokens, fake_token, std::move(flags));
  return out;
}

template struct SpecialTokens<float>;
template struct SpecialTokens<double>;
template InterleavedContext interleave(nn::Graph<float>&, nn::Var, const std::vector<TurnTokens>&);
template InterleavedContext interleave(nn::Graph<double>&, nn::Var, const std::vector<TurnTokens>&);
template std::pair<InterleavedContext, std::vector<int>> apply_agent_mask(
    nn::Graph<float>&, const InterleavedContext&, double, RandomStream&, nn::Var);
template std::pair<InterleavedContext, std::vector<int>> apply_agent_mask(
    nn::Graph<double>&, const InterleavedContext&, double, RandomStream&, nn::Var);
template InterleavedContext apply_cfg_drop(nn::Graph<float>&, const InterleavedContext&, nn::Var);
template InterleavedContext apply_cfg_drop(nn::Graph<double>&, const InterleavedContext&, nn::Var);

}  // namespace timar
