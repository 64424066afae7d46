// SPDX-License-Identifier: Apache-2.0
#include "timar.h"

#include "core/archive.hpp"
#include "core/error.hpp"
#include "core/fileio.hpp"
#include "datagen/datagen.hpp"
#include "metrics/metrics.hpp"
#include "streamer/streamer.hpp"
#include "trainer/trainer.hpp"

#include "json.hpp"

#include <atomic>
#include <cstring>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <variant>

using namespace timar;
using Json = nlohmann::json;

namespace {

thread_local std::string g_error;

timar_status fail(timar_status s, const std::string& msg) {
  g_error = msg;
  return s;
}

template <typename F>
timar_status guarded(F&& f) {
  g_error.clear();
  try {
    f();
    return TIMAR_OK;
  } catch (const ValidationError& e) {
    return fail(TIMAR_ERR_VALIDATION, e.what());
  } catch (const IoError& e) {
    return fail(TIMAR_ERR_IO, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(TIMAR_ERR_IO, e.what());
  } catch (const NumericError& e) {
    return fail(TIMAR_ERR_NUMERIC, e.what());
  } catch (const std::bad_alloc&) {
    return fail(TIMAR_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(TIMAR_ERR_INTERNAL, e.what());
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw ValidationError(std::string(what) + " must not be null");
}

ModelConfig config_from(const char* path) {
  if (path == nullptr || *path == '\0') {
    ModelConfig c;
    c.validate();
    return c;
  }
  return load_config(path);
}

template <typename T>
using ModelPtr = std::unique_ptr<TimarModel<T>>;
using AnyModel = std::variant<ModelPtr<float>, ModelPtr<double>>;

template <typename T>
using TrainerPtr = std::unique_ptr<Trainer<T>>;
using AnyTrainer = std::variant<TrainerPtr<float>, TrainerPtr<double>>;

}  // namespace

struct timar_trainer {
  AnyTrainer impl;
};

struct timar_model {
  AnyModel impl;
  ModelConfig config;
};

struct timar_conversation {
  const timar_model* model = nullptr;
  std::variant<std::unique_ptr<Streamer<float>>, std::unique_ptr<Streamer<double>>> impl;
};

extern "C" {

const char* timar_version(void) { return "0.1.0"; }

const char* timar_last_error(void) { return g_error.c_str(); }

void timar_free(char* s) { std::free(s); }

timar_status timar_config_expand(const char* config_path, char** out_text) {
  return guarded([&] {
    require(out_text, "out_text");
    *out_text = dup_string(config_from(config_path).to_text());
  });
}

timar_status timar_gen_dataset(const char* out_dir, int n_train, int n_val, int n_test,
                               uint64_t seed) {
  return guarded([&] {
    require(out_dir, "out_dir");
    gen_dataset(n_train, n_val, n_test, seed, out_dir);
  });
}

timar_status timar_dataset_count(const char* data_dir, const char* split, size_t* out_count) {
  return guarded([&] {
    require(data_dir, "data_dir");
    require(split, "split");
    require(out_count, "out_count");
    const Split s = parse_split(split);
    std::size_t n = 0;
    for (const auto& e : read_manifest(data_dir).entries) n += e.split == s;
    *out_count = n;
  });
}

timar_status timar_trainer_create(const char* config_path, const char* data_dir, uint64_t seed,
                                  timar_trainer** out) {
  return guarded([&] {
    require(data_dir, "data_dir");
    require(out, "out");
    const ModelConfig config = config_from(config_path);
    auto data = load_split(data_dir, Split::train);
    auto t = std::make_unique<timar_trainer>();
    if (config.precision == Precision::f64) {
      t->impl = std::make_unique<Trainer<double>>(config, seed, std::move(data));
    } else {
      t->impl = std::make_unique<Trainer<float>>(config, seed, std::move(data));
    }
    *out = t.release();
  });
}

timar_status timar_trainer_resume(const char* checkpoint_path, const char* data_dir,
                                  timar_trainer** out) {
  return guarded([&] {
    require(checkpoint_path, "checkpoint_path");
    require(data_dir, "data_dir");
    require(out, "out");
    const Archive ckpt = archive_read(checkpoint_path);
    const ModelConfig config = checkpoint_config(ckpt);
    auto data = load_split(data_dir, Split::train);
    auto t = std::make_unique<timar_trainer>();
    if (config.precision == Precision::f64) {
      t->impl = std::make_unique<Trainer<double>>(ckpt, std::move(data));
    } else {
      t->impl = std::make_unique<Trainer<float>>(ckpt, std::move(data));
    }
    *out = t.release();
  });
}

timar_status timar_trainer_step(timar_trainer* t, timar_train_record* out) {
  return guarded([&] {
    require(t, "trainer");
    const TrainRecord r = std::visit([](auto& p) { return p->step(); }, t->impl);
    if (out) *out = {r.step, r.epoch, r.loss, r.exp, r.jaw, r.pose, r.lr};
  });
}

timar_status timar_trainer_save(const timar_trainer* t, const char* path) {
  return guarded([&] {
    require(t, "trainer");
    require(path, "path");
    std::visit([&](const auto& p) { p->save(path); }, t->impl);
  });
}

int64_t timar_trainer_steps_done(const timar_trainer* t) {
  if (t == nullptr) return -1;
  return std::visit([](const auto& p) -> int64_t { return p->steps_done(); }, t->impl);
}

void timar_trainer_destroy(timar_trainer* t) { delete t; }

timar_status timar_model_load(const char* checkpoint_path, timar_model** out) {
  return guarded([&] {
    require(checkpoint_path, "checkpoint_path");
    require(out, "out");
    const Archive a = archive_read(checkpoint_path);
    auto m = std::make_unique<timar_model>();
    m->config = checkpoint_config(a);
    if (m->config.precision == Precision::f64) {
      m->impl = load_model<double>(a);
    } else {
      m->impl = load_model<float>(a);
    }
    *out = m.release();
  });
}

timar_status timar_model_config(const timar_model* m, char** out_text) {
  return guarded([&] {
    require(m, "model");
    require(out_text, "out_text");
    *out_text = dup_string(m->config.to_text());
  });
}

int timar_model_turn_frames(const timar_model* m) { return m ? m->config.k_frames() : -1; }

int timar_model_turn_samples(const timar_model* m) { return m ? m->config.chunk_samples() : -1; }

void timar_model_destroy(timar_model* m) { delete m; }

timar_status timar_sample_split(const timar_model* m, const char* data_dir, const char* split,
                                int context_n, double omega, int steps, uint64_t seed,
                                int workers, const char* out_dir) {
  return guarded([&] {
    require(m, "model");
    require(data_dir, "data_dir");
    require(split, "split");
    require(out_dir, "out_dir");
    const int steps_out = steps > 0 ? steps : m->config.diff_sample_steps;
    const auto samples = load_split(data_dir, parse_split(split));
    if (samples.empty()) throw ValidationError(std::string("split '") + split + "' is empty");
    std::filesystem::create_directories(out_dir);

    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::exception_ptr first_error;
    auto work = [&] {
      for (std::size_t i = next++; i < samples.size(); i = next++) {
        try {
          const DialogueSample& s = samples[i];
          const std::uint64_t conv_seed = seeded_rng(seed, "sample/" + s.id).next_u64();
          const MatD gen = std::visit(
              [&](const auto& model) {
                Streamer streamer(*model, context_n, omega, steps_out, conv_seed);
                return streamer.run(observe_dialogue(s, model->config));
              },
              m->impl);
          Archive a;
          a.add(NamedArray::from_matrix("agent_head", gen));
          a.meta["id"] = s.id;
          a.meta["context_n"] = std::to_string(context_n);
          a.meta["omega"] = Json(omega).dump();
          a.meta["steps_out"] = std::to_string(steps_out);
          a.meta["seed"] = std::to_string(seed);
          const std::filesystem::path dir(out_dir);
          archive_write(a, dir / (s.id + ".tmr"));
          const Json side{{"id", s.id},         {"seed", seed},
                          {"context_n", context_n}, {"omega", omega},
                          {"steps_out", steps_out}, {"frames", gen.rows()}};
          write_file_atomic(dir / (s.id + ".json"), side.dump(2) + "\n");
        } catch (...) {
          std::lock_guard lock(err_mu);
          if (!first_error) first_error = std::current_exception();
          next = samples.size();
        }
      }
    };
    const int n_workers = std::max(1, std::min<int>(workers, static_cast<int>(samples.size())));
    std::vector<std::thread> pool;
    for (int w = 1; w < n_workers; ++w) pool.emplace_back(work);
    work();
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
  });
}

timar_status timar_conversation_create(const timar_model* m, int context_n, double omega,
                                       int steps, uint64_t seed, timar_conversation** out) {
  return guarded([&] {
    require(m, "model");
    require(out, "out");
    const int steps_out = steps > 0 ? steps : m->config.diff_sample_steps;
    auto c = std::make_unique<timar_conversation>();
    c->model = m;
    std::visit(
        [&](const auto& model) {
          using T = typename std::decay_t<decltype(*model)>::Scalar;
          c->impl = std::make_unique<Streamer<T>>(*model, context_n, omega, steps_out, seed);
        },
        m->impl);
    *out = c.release();
  });
}

timar_status timar_conversation_push(timar_conversation* c, const float* user_wave,
                                     const float* agent_wave, const double* user_head,
                                     double* out_agent_head) {
  return guarded([&] {
    require(c, "conversation");
    require(user_wave, "user_wave");
    require(agent_wave, "agent_wave");
    require(user_head, "user_head");
    require(out_agent_head, "out_agent_head");
    const ModelConfig& cfg = c->model->config;
    const auto n = static_cast<std::size_t>(cfg.chunk_samples());
    const int k = cfg.k_frames();
    TurnObservation obs;
    obs.user_wave = {std::vector<float>(user_wave, user_wave + n), static_cast<double>(cfg.f_s)};
    obs.agent_wave = {std::vector<float>(agent_wave, agent_wave + n), static_cast<double>(cfg.f_s)};
    obs.user_head = Eigen::Map<const MatD>(user_head, k, kHeadDim);
    const MatD out = std::visit(
        [&](auto& s) { return s->generate_turn(s->push_turn(obs)); }, c->impl);
    Eigen::Map<MatD>(out_agent_head, k, kHeadDim) = out;
  });
}

void timar_conversation_destroy(timar_conversation* c) { delete c; }

timar_status timar_evaluate(const char* data_dir, const char* split, const char* generated_dir,
                            uint64_t seed, char** out_json) {
  return guarded([&] {
    require(data_dir, "data_dir");
    require(split, "split");
    require(generated_dir, "generated_dir");
    require(out_json, "out_json");
    const auto truth = load_split(data_dir, parse_split(split));
    std::vector<EvalItem> items;
    const std::filesystem::path gen_dir(generated_dir);
    for (const auto& s : truth) {
      const auto path = gen_dir / (s.id + ".tmr");
      if (!std::filesystem::exists(path)) continue;
      MatD gen = archive_read(path).at("agent_head").to_matrix<double>();
      if (gen.rows() != s.agent_head.frames.rows() || gen.cols() != kHeadDim) {
        throw ValidationError("generated motion for '" + s.id + "' has the wrong shape");
      }
      items.push_back({std::move(gen), s.agent_head.frames, s.user_head.frames});
    }
    if (items.empty()) {
      throw ValidationError("no generated archive in '" + gen_dir.string() +
                            "' matches a dialogue of split '" + split + "'");
    }
    const MetricReport rep = evaluate(items, 40, seed);

    // Reference: always predict the mean agent frame of the train split.
    auto train = load_split(data_dir, Split::train);
    const NormStats stats = compute_norm_stats(train.empty() ? truth : train);
    Json metrics = Json::object();
    Json baseline = Json::object();
    for (std::size_t c = 0; c < kComponents.size(); ++c) {
      const auto& comp = kComponents[c];
      const ComponentScores& sc = rep.components[c];
      metrics[comp.name] = {{"fd", sc.fd}, {"pfd", sc.pfd}, {"mse", sc.mse},
                            {"sid", sc.sid}, {"rpcc", sc.rpcc}};
      double total = 0;
      long frames = 0;
      for (const auto& it : items) {
        const MatD mean = stats.mean.segment(comp.begin, comp.size()).replicate(it.ground_truth.rows(), 1);
        total += mse(mean, it.ground_truth.middleCols(comp.begin, comp.size())) *
                 static_cast<double>(it.ground_truth.rows());
        frames += it.ground_truth.rows();
      }
      baseline[comp.name] = {{"mse", total / static_cast<double>(frames)}};
    }
    const Json report{{"samples", rep.samples}, {"metrics", metrics}, {"mean_baseline", baseline}};
    *out_json = dup_string(report.dump());
  });
}

timar_status timar_archive_describe(const char* path, char** out_json) {
  return guarded([&] {
    require(path, "path");
    require(out_json, "out_json");
    std::map<std::string, std::string> meta;
    const auto entries = archive_manifest(path, &meta);
    Json j{{"entries", Json::array()}, {"meta", meta}};
    for (const auto& e : entries) {
      j["entries"].push_back({{"name", e.name},
                              {"dtype", dtype_name(e.dtype)},
                              {"shape", e.shape},
                              {"byte_offset", e.byte_offset},
                              {"byte_length", e.byte_length}});
    }
    *out_json = dup_string(j.dump());
  });
}

timar_status timar_file_hash(const char* path, char** out_hex) {
  return guarded([&] {
    require(path, "path");
    require(out_hex, "out_hex");
    *out_hex = dup_string(file_hash(path));
  });
}

}  // extern "C"
