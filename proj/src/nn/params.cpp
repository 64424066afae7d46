// SPDX-License-Identifier: Apache-2.0
#include "nn/params.hpp"

#include "core/error.hpp"

#include <cmath>

namespace timar::nn {

template <typename T>
Parameter<T>& ParamStore<T>::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
  if (by_name_.count(name) != 0) {
    throw ValidationError("duplicate parameter '" + name + "'");
  }
  auto& p = params_.emplace_back();
  p.name = std::move(name);
  p.value = Mat<T>::Zero(rows, cols);
  by_name_[p.name] = &p;
  return p;
}

template <typename T>
Parameter<T>* ParamStore<T>::find(std::string_view name) {
  const auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

template <typename T>
const Parameter<T>* ParamStore<T>::find(std::string_view name) const {
  const auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

template <typename T>
Parameter<T>& ParamStore<T>::at(std::string_view name) {
  if (auto* p = find(name)) return *p;
  throw ValidationError("missing parameter '" + std::string(name) + "'");
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) {
    if (p.grad.size() == 0) {
      p.grad = Mat<T>::Zero(p.value.rows(), p.value.cols());
    } else {
      p.grad.setZero();
    }
  }
}

template <typename T>
std::size_t ParamStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

template <typename T>
void ParamStore<T>::export_to(Archive& archive, bool with_moments) const {
  for (const auto& p : params_) archive.add(NamedArray::from_matrix(p.name, p.value));
  if (!with_moments) return;
  for (const auto& p : params_) {
    const Mat<T> zero = Mat<T>::Zero(p.value.rows(), p.value.cols());
    archive.add(NamedArray::from_matrix("opt.m." + p.name, p.m.size() ? p.m : zero));
    archive.add(NamedArray::from_matrix("opt.v." + p.name, p.v.size() ? p.v : zero));
  }
}

template <typename T>
void ParamStore<T>::import_from(const Archive& archive, bool with_moments) {
  auto load = [&](const std::string& name, Mat<T>& dst, const Mat<T>& like) {
    Mat<T> m = archive.at(name).template to_matrix<T>();
    if (m.rows() != like.rows() || m.cols() != like.cols()) {
      throw ValidationError("array '" + name + "' has shape [" + std::to_string(m.rows()) +
                            ", " + std::to_string(m.cols()) + "], expected [" +
                            std::to_string(like.rows()) + ", " +
                            std::to_string(like.cols()) + "]");
    }
    dst = std::move(m);
  };
  for (auto& p : params_) {
    load(p.name, p.value, p.value);
    if (with_moments) {
      load("opt.m." + p.name, p.m, p.value);
      load("opt.v." + p.name, p.v, p.value);
    }
  }
}

template <typename T>
void init_uniform_fan_in(Parameter<T>& p, std::uint64_t seed, int fan_in) {
  RandomStream rng(seed, "init/" + p.name);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Eigen::Index i = 0; i < p.value.size(); ++i) {
    p.value.data()[i] = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
  }
}

template <typename T>
void init_normal(Parameter<T>& p, std::uint64_t seed, double stddev) {
  RandomStream rng(seed, "init/" + p.name);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) {
    p.value.data()[i] = static_cast<T>(stddev * rng.normal());
  }
}

template class ParamStore<float>;
template class ParamStore<double>;
template void init_uniform_fan_in<float>(Parameter<float>&, std::uint64_t, int);
template void init_uniform_fan_in<double>(Parameter<double>&, std::uint64_t, int);
template void init_normal<float>(Parameter<float>&, std::uint64_t, double);
template void init_normal<double>(Parameter<double>&, std::uint64_t, double);

}  // namespace timar::nn
