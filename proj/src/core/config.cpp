// SPDX-License-Identifier: Apache-2.0
#include "core/config.hpp"

#include "core/error.hpp"
#include "core/fileio.hpp"

#include <charconv>
#include <cmath>
#include <sstream>
#include <variant>
#include <vector>

namespace timar {
namespace {

using FieldPtr = std::variant<int ModelConfig::*, double ModelConfig::*,
                              Precision ModelConfig::*>;

struct Field {
  const char* name;
  FieldPtr ptr;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"d_t", &ModelConfig::d_t},
      {"d_e", &ModelConfig::d_e},
      {"encoder_layers", &ModelConfig::encoder_layers},
      {"encoder_heads", &ModelConfig::encoder_heads},
      {"d_m", &ModelConfig::d_m},
      {"K_blocks", &ModelConfig::K_blocks},
      {"d_h", &ModelConfig::d_h},
      {"f_s", &ModelConfig::f_s},
      {"f_h", &ModelConfig::f_h},
      {"f_w", &ModelConfig::f_w},
      {"d_raw", &ModelConfig::d_raw},
      {"c", &ModelConfig::c},
      {"N_max", &ModelConfig::N_max},
      {"r", &ModelConfig::r},
      {"p_cfg", &ModelConfig::p_cfg},
      {"diff_train_steps", &ModelConfig::diff_train_steps},
      {"diff_sample_steps", &ModelConfig::diff_sample_steps},
      {"omega", &ModelConfig::omega},
      {"diff_batch_mul", &ModelConfig::diff_batch_mul},
      {"lr", &ModelConfig::lr},
      {"warmup", &ModelConfig::warmup},
      {"batch_size", &ModelConfig::batch_size},
      {"epochs", &ModelConfig::epochs},
      {"weight_decay", &ModelConfig::weight_decay},
      {"beta1", &ModelConfig::beta1},
      {"beta2", &ModelConfig::beta2},
      {"adam_eps", &ModelConfig::adam_eps},
      {"precision", &ModelConfig::precision},
  };
  return table;
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void fail_line(int line, const std::string& what) {
  throw ValidationError("config line " + std::to_string(line) + ": " + what);
}

[[noreturn]] void fail_key(const char* key, const std::string& what) {
  throw ValidationError("config key '" + std::string(key) + "': " + what);
}

bool is_integral(double v) { return std::abs(v - std::round(v)) < 1e-9; }

}  // namespace

const char* precision_name(Precision p) {
  return p == Precision::f32 ? "f32" : "f64";
}

int ModelConfig::k_frames() const {
  return static_cast<int>(std::lround(c * f_h));
}

int ModelConfig::chunk_samples() const {
  return static_cast<int>(std::lround(c * f_s));
}

int ModelConfig::raw_rows() const {
  return static_cast<int>(std::lround(c * f_w)) - 1;
}

void ModelConfig::validate() const {
  auto positive = [](const char* key, double v) {
    if (!(v > 0)) fail_key(key, "must be positive");
  };
  positive("d_t", d_t);
  positive("d_e", d_e);
  positive("encoder_layers", encoder_layers);
  positive("encoder_heads", encoder_heads);
  positive("d_m", d_m);
  positive("K_blocks", K_blocks);
  positive("f_s", f_s);
  positive("f_h", f_h);
  positive("f_w", f_w);
  positive("d_raw", d_raw);
  positive("c", c);
  positive("N_max", N_max);
  positive("diff_train_steps", diff_train_steps);
  positive("diff_sample_steps", diff_sample_steps);
  positive("diff_batch_mul", diff_batch_mul);
  positive("batch_size", batch_size);
  positive("epochs", epochs);
  if (d_h != 56) fail_key("d_h", "must be 56 (50 expression + 3 jaw + 3 pose)");
  if (d_raw < 2) fail_key("d_raw", "must be at least 2");
  if (!is_integral(c * f_h)) fail_key("c", "c * f_h must be an integer");
  if (!is_integral(c * f_s)) fail_key("c", "c * f_s must be an integer");
  if (!is_integral(c * f_w) || c * f_w < 3) {
    fail_key("c", "c * f_w must be an integer >= 3");
  }
  if (d_e % encoder_heads != 0) fail_key("encoder_heads", "must divide d_e");
  if (d_t % encoder_heads != 0) fail_key("encoder_heads", "must divide d_t");
  if (d_t % 2 != 0) fail_key("d_t", "must be even");
  if (d_m % 2 != 0) fail_key("d_m", "must be even");
  if (!(r > 0.0 && r <= 1.0)) fail_key("r", "must lie in (0, 1]");
  if (!(p_cfg >= 0.0 && p_cfg <= 1.0)) fail_key("p_cfg", "must lie in [0, 1]");
  if (diff_sample_steps > diff_train_steps) {
    fail_key("diff_sample_steps", "must not exceed diff_train_steps");
  }
  if (!std::isfinite(omega)) fail_key("omega", "must be finite");
  if (!(lr >= 0.0)) fail_key("lr", "must be non-negative");
  if (warmup < 0) fail_key("warmup", "must be non-negative");
  if (!(weight_decay >= 0.0)) fail_key("weight_decay", "must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail_key("beta1", "must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail_key("beta2", "must lie in [0, 1)");
  if (!(adam_eps > 0.0)) fail_key("adam_eps", "must be positive");
}

std::string ModelConfig::to_text() const {
  std::ostringstream out;
  out.precision(17);
  for (const auto& f : fields()) {
    out << f.name << '=';
    std::visit(
        [&](auto ptr) {
          using P = decltype(ptr);
          if constexpr (std::is_same_v<P, Precision ModelConfig::*>) {
            out << precision_name(this->*ptr);
          } else {
            out << this->*ptr;
          }
        },
        f.ptr);
    out << '\n';
  }
  return out.str();
}

ModelConfig parse_config(std::string_view text) {
  ModelConfig config;
  int line_no = 0;
  std::vector<std::string> seen;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);

    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;

    const auto eq = line.find('=');
    if (eq == std::string_view::npos) fail_line(line_no, "expected key=value");
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    if (key.empty()) fail_line(line_no, "empty key");
    if (value.empty()) fail_line(line_no, "empty value for '" + key + "'");

    const Field* field = nullptr;
    for (const auto& f : fields()) {
      if (key == f.name) field = &f;
    }
    if (field == nullptr) fail_line(line_no, "unknown key '" + key + "'");
    for (const auto& s : seen) {
      if (s == key) fail_line(line_no, "duplicate key '" + key + "'");
    }
    seen.push_back(key);

    std::visit(
        [&](auto ptr) {
          using P = decltype(ptr);
          if constexpr (std::is_same_v<P, Precision ModelConfig::*>) {
            if (value == "f32") {
              config.*ptr = Precision::f32;
            } else if (value == "f64") {
              config.*ptr = Precision::f64;
            } else {
              fail_line(line_no, "'" + key + "' must be f32 or f64");
            }
          } else if constexpr (std::is_same_v<P, int ModelConfig::*>) {
            int v = 0;
            const auto res = std::from_chars(value.data(), value.data() + value.size(), v);
            if (res.ec != std::errc{} || res.ptr != value.data() + value.size()) {
              fail_line(line_no, "'" + key + "' expects an integer, got '" +
                                     std::string(value) + "'");
            }
            config.*ptr = v;
          } else {
            double v = 0;
            const auto res = std::from_chars(value.data(), value.data() + value.size(), v);
            if (res.ec != std::errc{} || res.ptr != value.data() + value.size()) {
              fail_line(line_no, "'" + key + "' expects a number, got '" +
                                     std::string(value) + "'");
            }
            config.*ptr = v;
          }
        },
        field->ptr);
  }
  config.validate();
  return config;
}

ModelConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_text_file(path));
}

void save_config(const ModelConfig& config, const std::filesystem::path& path) {
  write_file_atomic(path, config.to_text());
}

}  // namespace timar
