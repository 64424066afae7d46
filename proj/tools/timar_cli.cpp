// SPDX-License-Identifier: Apache-2.0
// timar: command-line front end over the C interface.

#include "timar.h"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#ifndef TIMAR_DESCRIBE
#define TIMAR_DESCRIBE "unknown"
#endif

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;
constexpr int kExitOther = 3;
constexpr int kSchemaVersion = 1;

/// Carries a C-API failure up to main().
struct CommandError {
  timar_status status;
  std::string message;
};

void check(timar_status s) {
  if (s != TIMAR_OK) throw CommandError{s, timar_last_error()};
}

void log_line(Json j) {
  std::cerr << j.dump() << '\n';
}

std::string take(char* s) {
  std::string out = s ? s : "";
  timar_free(s);
  return out;
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CommandError{TIMAR_ERR_IO, "cannot open '" + tmp.string() + "' for writing"};
    out << text;
    if (!out) throw CommandError{TIMAR_ERR_IO, "write failed for '" + tmp.string() + "'"};
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw CommandError{TIMAR_ERR_IO, "cannot rename into '" + path.string() + "'"};
}

std::string format_omega(double w) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", w);
  return buf;
}

/// Shared flags; not every command uses every field.
struct Options {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string split = "test";
  std::vector<int> context_n{0};
  std::vector<double> omega{1.0};
  int steps = -1;
  int workers = 1;
  bool strict = false;
};

class RunManifest {
 public:
  RunManifest(std::string command, const Options& o) : command_(std::move(command)), opts_(o) {
    start_ = utc_now();
  }
  void add_output(const fs::path& p) { outputs_.push_back(p.string()); }
  void write(const fs::path& dir) const {
    const Json j{{"command", command_},
                 {"config", opts_.config},
                 {"seed", opts_.seed},
                 {"version", std::string(timar_version()) + "-" + TIMAR_DESCRIBE},
                 {"strict", opts_.strict},
                 {"start", start_},
                 {"end", utc_now()},
                 {"outputs", outputs_}};
    write_atomic(dir / "run_manifest.json", j.dump(2) + "\n");
  }

 private:
  std::string command_;
  Options opts_;
  std::string start_;
  std::vector<std::string> outputs_;
};

int effective_workers(const Options& o) { return o.strict ? 1 : std::max(1, o.workers); }

void cmd_gen_data(const Options& o, int n_train, int n_val, int n_test) {
  RunManifest run("gen-data", o);
  check(timar_gen_dataset(o.out.c_str(), n_train, n_val, n_test, o.seed));
  run.add_output(fs::path(o.out) / "manifest.json");
  run.write(o.out);
  log_line({{"event", "gen-data"}, {"out", o.out}, {"train", n_train}, {"val", n_val},
            {"test", n_test}});
}

void cmd_train(const Options& o, const std::string& resume, int save_every) {
  RunManifest run("train", o);
  fs::create_directories(o.out);
  timar_trainer* t = nullptr;
  if (!resume.empty()) {
    check(timar_trainer_resume(resume.c_str(), o.data.c_str(), &t));
  } else {
    check(timar_trainer_create(o.config.empty() ? nullptr : o.config.c_str(), o.data.c_str(),
                               o.seed, &t));
  }
  std::unique_ptr<timar_trainer, decltype(&timar_trainer_destroy)> guard(t, timar_trainer_destroy);

  long steps = o.steps;
  if (steps < 0) {
    // Default budget: the configured number of epochs.
    char* text = nullptr;
    check(timar_config_expand(o.config.empty() ? nullptr : o.config.c_str(), &text));
    long epochs = 0, batch = 1;
    std::istringstream in(take(text));
    for (std::string line; std::getline(in, line);) {
      if (line.rfind("epochs=", 0) == 0) epochs = std::stol(line.substr(7));
      if (line.rfind("batch_size=", 0) == 0) batch = std::stol(line.substr(11));
    }
    std::size_t n = 0;
    check(timar_dataset_count(o.data.c_str(), "train", &n));
    steps = epochs * static_cast<long>((n + batch - 1) / batch);
  }

  const fs::path out(o.out);
  const fs::path ckpt = out / "checkpoint.tmr";
  const fs::path log_path = out / "train_log.jsonl";
  std::ofstream log(log_path, resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw CommandError{TIMAR_ERR_IO, "cannot open '" + log_path.string() + "'"};
  for (long i = 0; i < steps; ++i) {
    timar_train_record r{};
    check(timar_trainer_step(t, &r));
    const Json line{{"step", r.step}, {"epoch", r.epoch}, {"loss", r.loss}, {"exp", r.exp},
                    {"jaw", r.jaw},   {"pose", r.pose},   {"lr", r.lr}};
    log << line.dump() << '\n';
    log_line(line);
    if (save_every > 0 && r.step % save_every == 0) check(timar_trainer_save(t, ckpt.string().c_str()));
  }
  log.flush();
  check(timar_trainer_save(t, ckpt.string().c_str()));
  run.add_output(ckpt);
  run.add_output(log_path);
  run.write(out);
  log_line({{"event", "train-done"}, {"steps", timar_trainer_steps_done(t)},
            {"checkpoint", ckpt.string()}});
}

void cmd_sample(const Options& o) {
  RunManifest run("sample", o);
  timar_model* m = nullptr;
  check(timar_model_load(o.checkpoint.c_str(), &m));
  std::unique_ptr<timar_model, decltype(&timar_model_destroy)> guard(m, timar_model_destroy);
  const fs::path out(o.out);
  fs::create_directories(out);
  for (int n : o.context_n) {
    for (double w : o.omega) {
      const fs::path dir = out / ("n" + std::to_string(n) + "_omega" + format_omega(w));
      const auto t0 = std::chrono::steady_clock::now();
      check(timar_sample_split(m, o.data.c_str(), o.split.c_str(), n, w, o.steps, o.seed,
                               effective_workers(o), dir.string().c_str()));
      const Json group{{"context_n", n}, {"omega", w}, {"steps_out", o.steps}, {"split", o.split},
                       {"seed", o.seed}, {"checkpoint", o.checkpoint}};
      write_atomic(dir / "group.json", group.dump(2) + "\n");
      run.add_output(dir);
      log_line({{"event", "sample"}, {"context_n", n}, {"omega", w}, {"dir", dir.string()},
                {"seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}});
    }
  }
  run.write(out);
}

void cmd_eval(const Options& o, const std::string& generated) {
  RunManifest run("eval", o);
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(generated)) {
    if (e.is_directory() && fs::exists(e.path() / "group.json")) dirs.push_back(e.path());
  }
  if (fs::exists(fs::path(generated) / "group.json")) dirs.push_back(generated);
  if (dirs.empty()) {
    throw CommandError{TIMAR_ERR_VALIDATION, "no sample groups (group.json) under '" + generated + "'"};
  }
  std::vector<std::pair<Json, Json>> groups;
  for (const auto& d : dirs) {
    std::ifstream in(d / "group.json");
    const Json g = Json::parse(in, nullptr, false);
    if (g.is_discarded()) throw CommandError{TIMAR_ERR_VALIDATION, "malformed " + (d / "group.json").string()};
    char* report = nullptr;
    check(timar_evaluate(o.data.c_str(), o.split.c_str(), d.string().c_str(), o.seed, &report));
    groups.emplace_back(g, Json::parse(take(report)));
  }
  std::sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) {
    const auto ka = std::make_pair(a.first.value("context_n", 0), a.first.value("omega", 1.0));
    const auto kb = std::make_pair(b.first.value("context_n", 0), b.first.value("omega", 1.0));
    return ka < kb;
  });
  Json doc{{"schema_version", kSchemaVersion}, {"split", o.split}, {"seed", o.seed},
           {"groups", Json::array()}};
  for (const auto& [g, r] : groups) {
    doc["groups"].push_back({{"context_n", g.value("context_n", 0)},
                             {"omega", g.value("omega", 1.0)},
                             {"samples", r["samples"]},
                             {"metrics", r["metrics"]},
                             {"mean_baseline", r["mean_baseline"]}});
  }
  const std::string text = doc.dump(2) + "\n";
  if (o.out.empty()) {
    std::cout << text;
  } else {
    const fs::path out(o.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_atomic(out, text);
    run.add_output(out);
    run.write(out.has_parent_path() ? out.parent_path() : fs::path("."));
  }
}

void cmd_inspect(const std::string& path) {
  char* desc = nullptr;
  check(timar_archive_describe(path.c_str(), &desc));
  const Json j = Json::parse(take(desc));
  for (const auto& e : j["entries"]) {
    std::string shape = "[";
    for (std::size_t i = 0; i < e["shape"].size(); ++i) {
      if (i) shape += ", ";
      shape += std::to_string(e["shape"][i].get<long long>());
    }
    shape += "]";
    std::cout << e["name"].get<std::string>() << ' ' << e["dtype"].get<std::string>() << ' '
              << shape << '\n';
  }
  for (const auto& [k, v] : j["meta"].items()) {
    if (k == "config") continue;
    std::cout << "# " << k << '=' << v.get<std::string>() << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TIMAR: turn-level interleaved masked autoregression for dyadic head motion"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(timar_version()) + "-" + TIMAR_DESCRIBE);
  Options o;

  auto common = [&](CLI::App* c) {
    c->add_option("--seed", o.seed, "random seed");
    c->add_flag("--strict", o.strict, "single-threaded, bit-reproducible execution");
    c->add_option("--workers", o.workers, "worker threads")->check(CLI::PositiveNumber);
  };

  int n_train = 400, n_val = 40, n_test = 40;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dialogue dataset");
  gen->add_option("--out", o.out, "dataset directory")->required();
  gen->add_option("--train", n_train, "training dialogues")->check(CLI::NonNegativeNumber);
  gen->add_option("--val", n_val, "validation dialogues")->check(CLI::NonNegativeNumber);
  gen->add_option("--test", n_test, "test dialogues")->check(CLI::NonNegativeNumber);
  common(gen);

  std::string resume;
  int save_every = 0;
  auto* train = app.add_subcommand("train", "train a model on a dataset");
  train->add_option("--data", o.data, "dataset directory")->required();
  train->add_option("--out", o.out, "run directory")->required();
  train->add_option("--config", o.config, "key=value config file");
  train->add_option("--steps", o.steps, "updates to run (default: configured epochs)");
  train->add_option("--resume", resume, "checkpoint to continue from");
  train->add_option("--save-every", save_every, "checkpoint interval in updates");
  common(train);

  auto* sample = app.add_subcommand("sample", "generate agent motion for a split");
  sample->add_option("--checkpoint", o.checkpoint, "model checkpoint")->required();
  sample->add_option("--data", o.data, "dataset directory")->required();
  sample->add_option("--out", o.out, "output directory")->required();
  sample->add_option("--split", o.split, "train, val or test");
  sample->add_option("--context-n", o.context_n, "history turns (list)")->delimiter(',');
  sample->add_option("--omega", o.omega, "guidance scales (list)")->delimiter(',');
  sample->add_option("--steps", o.steps, "sampler steps (default: configured)");
  common(sample);

  std::string generated;
  auto* eval = app.add_subcommand("eval", "score generated motion against ground truth");
  eval->add_option("--data", o.data, "dataset directory")->required();
  eval->add_option("--generated", generated, "output directory of `sample`")->required();
  eval->add_option("--split", o.split, "train, val or test");
  eval->add_option("--out", o.out, "report path (default: stdout)");
  common(eval);

  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect", "list the arrays of an archive");
  inspect->add_option("path", inspect_path, "archive file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    log_line({{"level", "error"}, {"kind", "validation"}, {"message", e.what()}});
    return kExitValidation;
  }

  try {
    if (*gen) cmd_gen_data(o, n_train, n_val, n_test);
    if (*train) cmd_train(o, resume, save_every);
    if (*sample) cmd_sample(o);
    if (*eval) cmd_eval(o, generated);
    if (*inspect) cmd_inspect(inspect_path);
  } catch (const CommandError& e) {
    const char* kind = e.status == TIMAR_ERR_VALIDATION ? "validation"
                       : e.status == TIMAR_ERR_IO       ? "io"
                       : e.status == TIMAR_ERR_NUMERIC  ? "numeric"
                                                        : "internal";
    log_line({{"level", "error"}, {"kind", kind}, {"message", e.message}});
    if (e.status == TIMAR_ERR_VALIDATION || e.status == TIMAR_ERR_NUMERIC) return kExitValidation;
    return e.status == TIMAR_ERR_IO ? kExitIo : kExitOther;
  } catch (const fs::filesystem_error& e) {
    log_line({{"level", "error"}, {"kind", "io"}, {"message", e.what()}});
    return kExitIo;
  } catch (const std::exception& e) {
    log_line({{"level", "error"}, {"kind", "internal"}, {"message", e.what()}});
    return kExitOther;
  }
  return 0;
}
