// SPDX-License-Identifier: Apache-2.0
#include "trainer/trainer.hpp"

#include "core/error.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace timar {

std::vector<TurnInputs> prepare_dialogue(const DialogueSample& sample, const ModelConfig& config,
                                         const NormStats& norm) {
  const auto raw = chunk_sequences(sample.user_wave, sample.agent_wave, sample.user_head,
                                   sample.agent_head, config);
  if (static_cast<int>(raw.size()) > config.N_max) {
    throw ValidationError("dialogue '" + sample.id + "' has " + std::to_string(raw.size()) +
                          " turns, more than N_max = " + std::to_string(config.N_max));
  }
  std::vector<TurnInputs> out;
  out.reserve(raw.size());
  for (const auto& t : raw) out.push_back(prepare_turn(t, config, norm));
  return out;
}

template <typename T>
WindowObjective<T> window_objective(nn::Graph<T>& g, const TimarModel<T>& model,
                                    const std::vector<TurnInputs>& turns,
                                    const RandomStream& rng) {
  const ModelConfig& cfg = model.config;
  WindowObjective<T> obj;
  std::vector<TurnTokens> tokens;
  tokens.reserve(turns.size());
  for (const auto& t : turns) {
    tokens.push_back(model.tokenize(g, t, false));
    obj.agent_head_blocks.push_back(tokens.back().agent_head);
  }
  InterleavedContext ctx = interleave(g, g.param(*model.special.separators), tokens);

  RandomStream cfg_rng = rng.fork("cfg");
  obj.cfg_dropped = cfg_rng.uniform() < cfg.p_cfg;
  if (obj.cfg_dropped) ctx = apply_cfg_drop(g, ctx, g.param(*model.special.fake));

  RandomStream mask_rng = rng.fork("mask");
  auto [masked, frames] = apply_agent_mask(g, ctx, cfg.r, mask_rng, g.param(*model.special.mask));
  obj.masked_frames = std::move(frames);

  const FusedFeatures<T> fused = model.fusion(g, masked, obj.masked_frames);

  const int k = cfg.k_frames();
  Mat<T> targets(static_cast<Eigen::Index>(obj.masked_frames.size()), cfg.d_h);
  for (std::size_t i = 0; i < obj.masked_frames.size(); ++i) {
    const int f = obj.masked_frames[i];
    targets.row(static_cast<Eigen::Index>(i)) =
        turns[static_cast<std::size_t>(f / k)].agent_head.row(f % k).template cast<T>();
  }
  RandomStream diff_rng = rng.fork("diff");
  obj.loss = diffusion_loss(g, model.denoiser, model.schedule, targets, fused.masked,
                            obj.masked_frames, diff_rng, cfg.diff_batch_mul);
  return obj;
}

template <typename T>
Trainer<T>::Trainer(const ModelConfig& config, std::uint64_t seed,
                    std::vector<DialogueSample> data)
    : model_(std::make_unique<TimarModel<T>>(config, seed)), data_(std::move(data)) {
  if (data_.empty()) throw ValidationError("training set is empty");
  model_->norm = compute_norm_stats(data_);
  adam_ = {config.beta1, config.beta2, config.adam_eps, config.weight_decay};
}

template <typename T>
Trainer<T>::Trainer(const Archive& ckpt, std::vector<DialogueSample> data)
    : data_(std::move(data)) {
  if (data_.empty()) throw ValidationError("training set is empty");
  const ModelConfig config = checkpoint_config(ckpt);
  const auto state = ckpt.at("state.step").to_ints();
  const auto seed = ckpt.at("state.seed").to_ints();
  if (state.size() != 1 || seed.size() != 1) throw FormatError("malformed trainer state arrays");
  model_ = std::make_unique<TimarModel<T>>(config, static_cast<std::uint64_t>(seed[0]));
  model_->load_weights(ckpt, true);
  step_ = static_cast<long>(state[0]);
  adam_ = {config.beta1, config.beta2, config.adam_eps, config.weight_decay};
}

template <typename T>
long Trainer<T>::epoch() const {
  return step_ * model_->config.batch_size / static_cast<long>(data_.size());
}

template <typename T>
std::vector<std::size_t> Trainer<T>::batch_indices(long step) const {
  const long n = static_cast<long>(data_.size());
  const long b = model_->config.batch_size;
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(b));
  long cached_epoch = -1;
  std::vector<std::size_t> perm;
  for (long p = step * b; p < (step + 1) * b; ++p) {
    const long e = p / n;
    if (e != cached_epoch) {
      perm.resize(static_cast<std::size_t>(n));
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      RandomStream rng = seeded_rng(model_->seed, "epoch/" + std::to_string(e));
      for (long i = n - 1; i > 0; --i) {
        const auto j = static_cast<long>(rng.below(static_cast<std::uint64_t>(i + 1)));
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
      }
      cached_epoch = e;
    }
    out.push_back(perm[static_cast<std::size_t>(p % n)]);
  }
  return out;
}

template <typename T>
TrainRecord Trainer<T>::step() {
  TimarModel<T>& m = *model_;
  const auto batch = batch_indices(step_);
  m.params.zero_grad();

  TrainRecord rec;
  const T weight = static_cast<T>(1.0 / static_cast<double>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto turns = prepare_dialogue(data_[batch[i]], m.config, m.norm);
    const RandomStream rng = seeded_rng(
        m.seed, "train/step" + std::to_string(step_) + "/item" + std::to_string(i));
    nn::Graph<T> g(true);
    const WindowObjective<T> obj = window_objective(g, m, turns, rng);
    const double total = static_cast<double>(g.value(obj.loss.total)(0, 0));
    if (!std::isfinite(total)) {
      throw NumericError("non-finite loss at step " + std::to_string(step_) + " on sample '" +
                         data_[batch[i]].id + "'");
    }
    g.backward(g.scale(obj.loss.total, weight));
    rec.loss += total;
    rec.exp += static_cast<double>(g.value(obj.loss.exp)(0, 0));
    rec.jaw += static_cast<double>(g.value(obj.loss.jaw)(0, 0));
    rec.pose += static_cast<double>(g.value(obj.loss.pose)(0, 0));
  }
  const double nb = static_cast<double>(batch.size());
  rec.loss /= nb;
  rec.exp /= nb;
  rec.jaw /= nb;
  rec.pose /= nb;

  ++step_;
  rec.lr = nn::warmup_lr(m.config.lr, m.config.warmup, step_);
  nn::adamw_update(m.params, adam_, rec.lr, step_);
  rec.step = step_;
  rec.epoch = epoch();
  return rec;
}

template <typename T>
Archive Trainer<T>::checkpoint() const {
  Archive a = model_->to_archive(true);
  a.add(NamedArray::from_vector<std::int64_t>("state.step", {step_}));
  a.add(NamedArray::from_vector<std::int64_t>("state.epoch", {epoch()}));
  a.add(NamedArray::from_vector<std::int64_t>("state.seed",
                                              {static_cast<std::int64_t>(model_->seed)}));
  return a;
}

template <typename T>
void Trainer<T>::save(const std::filesystem::path& path) const {
  archive_write(checkpoint(), path);
}

template class Trainer<float>;
template class Trainer<double>;
template WindowObjective<float> window_objective(nn::Graph<float>&, const TimarModel<float>&,
                                                 const std::vector<TurnInputs>&,
                                                 const RandomStream&);
template WindowObjective<double> window_objective(nn::Graph<double>&, const TimarModel<double>&,
                                                  const std::vector<TurnInputs>&,
                                                  const RandomStream&);

}  // namespace timar
