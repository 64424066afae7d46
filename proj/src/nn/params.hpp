// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "core/archive.hpp"
#include "core/rng.hpp"
#include "core/types.hpp"

#include <deque>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace timar::nn {

template <typename T>
struct Parameter {
  std::string name;
  Mat<T> value;
  Mat<T> grad;
  // AdamW moments.
  Mat<T> m;
  Mat<T> v;
};

/// Owns every trainable array of a model. Addresses are stable for the
/// lifetime of the store, so modules keep raw pointers into it.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  /// Registers a zero-filled [rows, cols] parameter.
  Parameter<T>& add(std::string name, Eigen::Index rows, Eigen::Index cols);
  Parameter<T>* find(std::string_view name);
  const Parameter<T>* find(std::string_view name) const;
  Parameter<T>& at(std::string_view name);

  std::deque<Parameter<T>>& all() { return params_; }
  const std::deque<Parameter<T>>& all() const { return params_; }

  void zero_grad();
  std::size_t scalar_count() const;

  /// Appends every value as `name` (and moments as `opt.m.name`, `opt.v.name`).
  void export_to(Archive& archive, bool with_moments) const;
  /// Loads values (and moments) by name; missing names are an error.
  void import_from(const Archive& archive, bool with_moments);

 private:
  std::deque<Parameter<T>> params_;
  std::map<std::string, Parameter<T>*, std::less<>> by_name_;
};

/// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) from the stream (seed, "init/<name>").
template <typename T>
void init_uniform_fan_in(Parameter<T>& p, std::uint64_t seed, int fan_in);

template <typename T>
void init_normal(Parameter<T>& p, std::uint64_t seed, double stddev);

}  // namespace timar::nn
