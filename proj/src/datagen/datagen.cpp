// SPDX-License-Identifier: Apache-2.0
#include "datagen/datagen.hpp"

#include "core/archive.hpp"
#include "core/error.hpp"
#include "core/fileio.hpp"
#include "core/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace timar {

namespace {

using Json = nlohmann::json;

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Segment {
  double begin;
  double end;
  int speaker;  // 0 user, 1 agent, -1 silence
};

std::vector<Segment> turn_taking(double total, const SynthParams& p, RandomStream& rng) {
  auto hold = [&] {
    const double h = -p.hold_mean * std::log(1.0 - rng.uniform());
    return std::clamp(h, p.hold_min, p.hold_max);
  };
  std::vector<Segment> segs;
  int speaker = static_cast<int>(rng.below(2));
  double t = 0;
  while (t < total) {
    if (!segs.empty() && rng.uniform() < p.silence_prob) {
      const double h = hold();
      segs.push_back({t, t + h, -1});
      t += h;
    }
    const double h = hold();
    segs.push_back({t, t + h, speaker});
    t += h;
    speaker = 1 - speaker;
  }
  return segs;
}

/// Centred moving average of a 0/1 activity track; samples outside the
/// track count as silence.
std::vector<double> envelope(const std::vector<std::uint8_t>& active, int window) {
  const std::size_t n = active.size();
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + active[i];
  std::vector<double> out(n);
  const long half = window / 2;
  for (std::size_t i = 0; i < n; ++i) {
    const long lo = std::max(0L, static_cast<long>(i) - half);
    const long hi = std::min(static_cast<long>(n), static_cast<long>(i) - half + window);
    out[i] = (prefix[static_cast<std::size_t>(hi)] - prefix[static_cast<std::size_t>(lo)]) / window;
  }
  return out;
}

/// AR(1) walk started from its stationary distribution.
std::vector<double> ar_walk(int n, double phi, double sigma, RandomStream& rng) {
  std::vector<double> x(static_cast<std::size_t>(n));
  double v = sigma / std::sqrt(1.0 - phi * phi) * rng.normal();
  for (int i = 0; i < n; ++i) {
    x[static_cast<std::size_t>(i)] = v;
    v = phi * v + sigma * rng.normal();
  }
  return x;
}

Json entry_json(const DatasetEntry& e) {
  return Json{{"id", e.id}, {"split", split_name(e.split)}, {"seed", e.seed}, {"file", e.file}};
}

}  // namespace

DialogueSample gen_sample(std::uint64_t seed, const SynthParams& p, SynthTrace* trace) {
  if (p.f_s % p.f_h != 0) throw ValidationError("audio rate must be a multiple of the frame rate");
  const int hop = p.f_s / p.f_h;
  const int frames = static_cast<int>(std::lround(p.duration * p.f_h));
  const int burn = static_cast<int>(std::lround(p.burn_in * p.f_h));
  const int total_frames = frames + burn;
  const std::size_t total_samples = static_cast<std::size_t>(total_frames) * hop;

  RandomStream turn_rng = seeded_rng(seed, "synth/turns");
  const auto segs = turn_taking(static_cast<double>(total_frames) / p.f_h, p, turn_rng);

  std::vector<std::uint8_t> act_u(total_samples, 0), act_a(total_samples, 0);
  for (const auto& s : segs) {
    if (s.speaker < 0) continue;
    auto& act = s.speaker == 0 ? act_u : act_a;
    const auto lo = static_cast<std::size_t>(std::ceil(s.begin * p.f_s));
    const auto hi = std::min(total_samples, static_cast<std::size_t>(std::ceil(s.end * p.f_s)));
    for (std::size_t i = lo; i < hi; ++i) act[i] = 1;
  }
  const int window = static_cast<int>(std::lround(p.envelope_window * p.f_s));
  const auto env_u = envelope(act_u, window);
  const auto env_a = envelope(act_a, window);

  DialogueSample out;
  out.seed = seed;
  const std::size_t first_sample = static_cast<std::size_t>(burn) * hop;
  const std::size_t samples = total_samples - first_sample;
  for (int speaker = 0; speaker < 2; ++speaker) {
    const auto& env = speaker == 0 ? env_u : env_a;
    RandomStream rng = seeded_rng(seed, speaker == 0 ? "synth/wave/user" : "synth/wave/agent");
    Waveform w;
    w.rate = p.f_s;
    w.samples.resize(samples);
    const double freq = 220.0 * (1 + speaker);
    for (std::size_t i = 0; i < samples; ++i) {
      const double e = env[first_sample + i];
      const double t = static_cast<double>(i) / p.f_s;
      w.samples[i] = static_cast<float>((rng.uniform() - 0.5) * e + 0.3 * e * std::sin(kTwoPi * freq * t));
    }
    (speaker == 0 ? out.user_wave : out.agent_wave) = std::move(w);
  }

  // Frame-rate envelopes sampled at frame centres.
  std::vector<double> eu(static_cast<std::size_t>(total_frames)), ea(eu.size());
  for (int i = 0; i < total_frames; ++i) {
    const auto at = static_cast<std::size_t>(i) * hop + static_cast<std::size_t>(hop / 2);
    eu[static_cast<std::size_t>(i)] = env_u[at];
    ea[static_cast<std::size_t>(i)] = env_a[at];
  }
  std::vector<double> lagged(eu.size()), drive(eu.size());
  const double alpha = 1.0 - std::exp(-1.0 / (p.listener_smoothing * p.f_h));
  for (int i = 0; i < total_frames; ++i) {
    lagged[static_cast<std::size_t>(i)] = eu[static_cast<std::size_t>(std::max(0, i - p.lag_frames))];
    const double prev = i == 0 ? lagged[0] : drive[static_cast<std::size_t>(i) - 1];
    drive[static_cast<std::size_t>(i)] = prev + alpha * (lagged[static_cast<std::size_t>(i)] - prev);
  }

  MatD hu(total_frames, kHeadDim), ha(total_frames, kHeadDim);
  RandomStream user_rng = seeded_rng(seed, "synth/head/user");
  RandomStream agent_rng = seeded_rng(seed, "synth/head/agent");
  for (int j = 0; j < kExpDim; ++j) {
    const auto wu = ar_walk(total_frames, p.walk_phi, p.user_walk_sigma, user_rng);
    const auto wa = ar_walk(total_frames, p.walk_phi, p.agent_walk_sigma, agent_rng);
    for (int i = 0; i < total_frames; ++i) {
      const auto s = static_cast<std::size_t>(i);
      hu(i, j) = (j < 5 ? 0.5 * eu[s] : 0.0) + wu[s];
      ha(i, j) = j < 5 ? 0.6 * drive[s] + 0.3 * ea[s] : wa[s];
    }
  }
  double phase_u[kPoseDim], phase_a[kPoseDim];
  for (int j = 0; j < kPoseDim; ++j) phase_u[j] = kTwoPi * user_rng.uniform();
  for (int j = 0; j < kPoseDim; ++j) phase_a[j] = kTwoPi * agent_rng.uniform();
  for (int i = 0; i < total_frames; ++i) {
    const auto s = static_cast<std::size_t>(i);
    const double t = static_cast<double>(i) / p.f_h;
    for (int j = 0; j < kJawDim; ++j) {
      hu(i, kExpDim + j) = 0.04 * eu[s] + 0.002 * user_rng.normal();
      ha(i, kExpDim + j) = 0.04 * ea[s];
    }
    for (int j = 0; j < kPoseDim; ++j) {
      hu(i, kExpDim + kJawDim + j) = 0.05 * std::sin(kTwoPi * 0.2 * t + phase_u[j]);
      ha(i, kExpDim + kJawDim + j) =
          j == 0 ? 0.08 * lagged[s] : 0.03 * std::sin(kTwoPi * 0.2 * t + phase_a[j]);
    }
    for (int j = 0; j < kHeadDim; ++j) ha(i, j) += p.observation_noise * agent_rng.normal();
  }

  out.user_head = {hu.bottomRows(frames), static_cast<double>(p.f_h)};
  out.agent_head = {ha.bottomRows(frames), static_cast<double>(p.f_h)};
  if (trace) {
    auto crop = [&](const std::vector<double>& v) {
      return std::vector<double>(v.begin() + burn, v.end());
    };
    *trace = {crop(eu), crop(ea), crop(lagged), crop(drive)};
  }
  return out;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ValidationError("unknown split '" + name + "' (expected train, val or test)");
}

void write_sample(const DialogueSample& s, const std::filesystem::path& path) {
  Archive a;
  a.add(NamedArray::from_vector<float>("user_wave", s.user_wave.samples));
  a.add(NamedArray::from_vector<float>("agent_wave", s.agent_wave.samples));
  a.add(NamedArray::from_matrix("user_head", s.user_head.frames));
  a.add(NamedArray::from_matrix("agent_head", s.agent_head.frames));
  a.meta["id"] = s.id;
  a.meta["split"] = split_name(s.split);
  a.meta["seed"] = std::to_string(s.seed);
  a.meta["audio_rate"] = std::to_string(static_cast<long>(s.user_wave.rate));
  a.meta["frame_rate"] = std::to_string(static_cast<long>(s.user_head.rate));
  archive_write(a, path);
}

DialogueSample read_sample(const std::filesystem::path& path) {
  const Archive a = archive_read(path);
  DialogueSample s;
  auto meta = [&](const char* key, const std::string& fallback) {
    const auto it = a.meta.find(key);
    return it == a.meta.end() ? fallback : it->second;
  };
  s.id = meta("id", path.stem().string());
  s.split = parse_split(meta("split", "train"));
  s.seed = std::stoull(meta("seed", "0"));
  const double audio_rate = std::stod(meta("audio_rate", "16000"));
  const double frame_rate = std::stod(meta("frame_rate", "25"));
  auto wave = [&](const char* name) {
    const NamedArray& arr = a.at(name);
    if (arr.shape.size() != 1) throw FormatError(std::string("array '") + name + "' must be 1-D");
    const auto v = arr.to_doubles();
    Waveform w;
    w.rate = audio_rate;
    w.samples.assign(v.begin(), v.end());
    return w;
  };
  auto head = [&](const char* name) {
    const NamedArray& arr = a.at(name);
    if (arr.shape.size() != 2 || arr.shape[1] != kHeadDim || arr.shape[0] < 1) {
      throw FormatError(std::string("array '") + name + "' must have shape [L, 56]");
    }
    HeadSequence h{arr.to_matrix<double>(), frame_rate};
    if (!h.frames.allFinite()) throw FormatError(std::string("array '") + name + "' is not finite");
    return h;
  };
  s.user_wave = wave("user_wave");
  s.agent_wave = wave("agent_wave");
  s.user_head = head("user_head");
  s.agent_head = head("agent_head");
  return s;
}

DatasetManifest gen_dataset(int n_train, int n_val, int n_test, std::uint64_t seed,
                            const std::filesystem::path& out_dir, const SynthParams& params) {
  if (n_train < 0 || n_val < 0 || n_test < 0) throw ValidationError("sample counts must be >= 0");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create directory '" + out_dir.string() + "': " + ec.message());

  DatasetManifest m;
  m.seed = seed;
  const std::pair<Split, int> plan[] = {{Split::train, n_train}, {Split::val, n_val},
                                        {Split::test, n_test}};
  for (const auto& [split, count] : plan) {
    for (int i = 0; i < count; ++i) {
      char id[64];
      std::snprintf(id, sizeof id, "%s_%04d", split_name(split), i);
      const std::uint64_t s = seeded_rng(seed, std::string("dataset/") + id).next_u64();
      DialogueSample sample = gen_sample(s, params);
      sample.id = id;
      sample.split = split;
      const std::string file = std::string(id) + ".tmr";
      write_sample(sample, out_dir / file);
      m.entries.push_back({id, split, s, file});
    }
  }
  Json j{{"format", "timar-dataset"}, {"version", 1}, {"seed", seed}, {"samples", Json::array()}};
  for (const auto& e : m.entries) j["samples"].push_back(entry_json(e));
  write_file_atomic(out_dir / "manifest.json", j.dump(2) + "\n");
  return m;
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
  const std::string text = read_text_file(dir / "manifest.json");
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }
  DatasetManifest m;
  try {
    m.seed = j.value("seed", std::uint64_t{0});
    for (const auto& e : j.at("samples")) {
      m.entries.push_back({e.at("id").get<std::string>(),
                           parse_split(e.at("split").get<std::string>()),
                           e.value("seed", std::uint64_t{0}), e.at("file").get<std::string>()});
    }
  } catch (const Json::exception& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }
  return m;
}

std::vector<DialogueSample> load_split(const std::filesystem::path& dir, Split split) {
  const DatasetManifest m = read_manifest(dir);
  std::vector<DialogueSample> out;
  for (const auto& e : m.entries) {
    if (e.split != split) continue;
    DialogueSample s = read_sample(dir / e.file);
    s.id = e.id;
    s.split = e.split;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace timar
