// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "core/types.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace timar {

// On-disk layout:
//   bytes 0..3    magic "TMR1"
//   bytes 4..11   manifest length M, little-endian u64
//   bytes 12..    M bytes of UTF-8 JSON manifest
//   remainder     blob; arrays row-major little-endian at manifest offsets

enum class DType { f32, f64, i64 };

const char* dtype_name(DType d);
std::size_t dtype_size(DType d);

struct NamedArray {
  using Storage =
      std::variant<std::vector<float>, std::vector<double>, std::vector<std::int64_t>>;

  std::string name;
  std::vector<std::int64_t> shape;
  Storage data;

  DType dtype() const;
  std::size_t element_count() const;

  template <typename T>
  static NamedArray from_matrix(std::string name, const Mat<T>& m);
  template <typename T>
  static NamedArray from_vector(std::string name, std::vector<T> values);

  /// Exact copy when the stored dtype matches T; otherwise converts.
  template <typename T>
  Mat<T> to_matrix() const;
  std::vector<double> to_doubles() const;
  std::vector<std::int64_t> to_ints() const;
};

struct ManifestEntry {
  std::string name;
  DType dtype;
  std::vector<std::int64_t> shape;
  std::uint64_t byte_offset;
  std::uint64_t byte_length;
};

struct Archive {
  std::vector<NamedArray> entries;
  std::map<std::string, std::string> meta;

  /// Throws ValidationError on a duplicate name.
  void add(NamedArray array);
  const NamedArray* find(std::string_view name) const;
  /// Throws ValidationError("missing array ...") when absent.
  const NamedArray& at(std::string_view name) const;
};

std::string archive_encode(const Archive& archive);
Archive archive_decode(std::string_view bytes);

void archive_write(const Archive& archive, const std::filesystem::path& path);
Archive archive_read(const std::filesystem::path& path);

/// Reads only the header and manifest.
std::vector<ManifestEntry> archive_manifest(const std::filesystem::path& path,
                                            std::map<std::string, std::string>* meta = nullptr);

}  // namespace timar
