// SPDX-License-Identifier: Apache-2.0
#include "core/archive.hpp"

#include "core/error.hpp"
#include "core/fileio.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

namespace timar {
namespace {

static_assert(std::endian::native == std::endian::little,
              "archive encoding assumes a little-endian host");

constexpr char kMagic[4] = {'T', 'M', 'R', '1'};
constexpr std::size_t kHeaderBytes = 12;

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  if (s == "i64") return DType::i64;
  throw FormatError("corrupt header: unknown dtype '" + s + "'");
}

std::size_t shape_count(const std::vector<std::int64_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw FormatError("corrupt header: negative dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

nlohmann::json manifest_json(const Archive& archive, std::vector<ManifestEntry>& layout) {
  nlohmann::json entries = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : archive.entries) {
    const std::uint64_t length = a.element_count() * dtype_size(a.dtype());
    layout.push_back({a.name, a.dtype(), a.shape, offset, length});
    entries.push_back({{"name", a.name},
                       {"dtype", dtype_name(a.dtype())},
                       {"shape", a.shape},
                       {"byte_offset", offset},
                       {"byte_length", length}});
    offset += length;
  }
  nlohmann::json meta = nlohmann::json::object();
  for (const auto& [k, v] : archive.meta) meta[k] = v;
  return {{"entries", entries}, {"meta", meta}};
}

struct Header {
  std::vector<ManifestEntry> entries;
  std::map<std::string, std::string> meta;
  std::uint64_t manifest_length = 0;
};

Header parse_header(std::string_view bytes) {
  if (bytes.size() < kHeaderBytes || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("corrupt header: bad magic");
  }
  std::uint64_t m = 0;
  std::memcpy(&m, bytes.data() + 4, 8);
  if (m > bytes.size() - kHeaderBytes) {
    throw FormatError("corrupt header: manifest length exceeds file size");
  }
  Header h;
  h.manifest_length = m;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.substr(kHeaderBytes, m));
    for (const auto& e : j.at("entries")) {
      ManifestEntry me;
      me.name = e.at("name").get<std::string>();
      me.dtype = parse_dtype(e.at("dtype").get<std::string>());
      me.shape = e.at("shape").get<std::vector<std::int64_t>>();
      me.byte_offset = e.at("byte_offset").get<std::uint64_t>();
      me.byte_length = e.at("byte_length").get<std::uint64_t>();
      h.entries.push_back(std::move(me));
    }
    if (j.contains("meta")) {
      for (const auto& [k, v] : j.at("meta").items()) h.meta[k] = v.get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corrupt header: ") + e.what());
  }

  std::set<std::string> names;
  for (const auto& e : h.entries) {
    if (!names.insert(e.name).second) {
      throw FormatError("corrupt header: duplicate name '" + e.name + "'");
    }
    if (e.byte_length != shape_count(e.shape) * dtype_size(e.dtype)) {
      throw FormatError("corrupt header: byte_length mismatch for '" + e.name + "'");
    }
  }
  std::vector<const ManifestEntry*> sorted;
  for (const auto& e : h.entries) sorted.push_back(&e);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) {
    return a->byte_offset < b->byte_offset;
  });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i - 1]->byte_offset + sorted[i - 1]->byte_length > sorted[i]->byte_offset) {
      throw FormatError("corrupt header: overlapping arrays '" + sorted[i - 1]->name +
                        "' and '" + sorted[i]->name + "'");
    }
  }
  return h;
}

template <typename V>
V read_values(std::string_view blob, const ManifestEntry& e) {
  V values(e.byte_length / sizeof(typename V::value_type));
  if (!values.empty()) std::memcpy(values.data(), blob.data() + e.byte_offset, e.byte_length);
  return values;
}

}  // namespace

const char* dtype_name(DType d) {
  switch (d) {
    case DType::f32: return "f32";
    case DType::f64: return "f64";
    case DType::i64: return "i64";
  }
  return "?";
}

std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

DType NamedArray::dtype() const {
  switch (data.index()) {
    case 0: return DType::f32;
    case 1: return DType::f64;
    default: return DType::i64;
  }
}

std::size_t NamedArray::element_count() const {
  return std::visit([](const auto& v) { return v.size(); }, data);
}

template <typename T>
NamedArray NamedArray::from_matrix(std::string name, const Mat<T>& m) {
  NamedArray a;
  a.name = std::move(name);
  a.shape = {m.rows(), m.cols()};
  a.data = std::vector<T>(m.data(), m.data() + m.size());
  return a;
}

template <typename T>
NamedArray NamedArray::from_vector(std::string name, std::vector<T> values) {
  NamedArray a;
  a.name = std::move(name);
  a.shape = {static_cast<std::int64_t>(values.size())};
  a.data = std::move(values);
  return a;
}

template <typename T>
Mat<T> NamedArray::to_matrix() const {
  Eigen::Index rows = 1, cols = 1;
  if (shape.size() == 1) {
    rows = shape[0];
  } else if (shape.size() == 2) {
    rows = shape[0];
    cols = shape[1];
  } else if (!shape.empty()) {
    throw ValidationError("array '" + name + "' is not rank 1 or 2");
  }
  Mat<T> m(rows, cols);
  std::visit(
      [&](const auto& v) {
        for (std::size_t i = 0; i < v.size(); ++i) m.data()[i] = static_cast<T>(v[i]);
      },
      data);
  return m;
}

std::vector<double> NamedArray::to_doubles() const {
  return std::visit(
      [](const auto& v) { return std::vector<double>(v.begin(), v.end()); }, data);
}

std::vector<std::int64_t> NamedArray::to_ints() const {
  if (const auto* v = std::get_if<std::vector<std::int64_t>>(&data)) return *v;
  throw ValidationError("array '" + name + "' is not i64");
}

template NamedArray NamedArray::from_matrix<float>(std::string, const Mat<float>&);
template NamedArray NamedArray::from_matrix<double>(std::string, const Mat<double>&);
template NamedArray NamedArray::from_vector<float>(std::string, std::vector<float>);
template NamedArray NamedArray::from_vector<double>(std::string, std::vector<double>);
template NamedArray NamedArray::from_vector<std::int64_t>(std::string,
                                                          std::vector<std::int64_t>);
template Mat<float> NamedArray::to_matrix<float>() const;
template Mat<double> NamedArray::to_matrix<double>() const;

void Archive::add(NamedArray array) {
  if (find(array.name) != nullptr) {
    throw ValidationError("duplicate array name '" + array.name + "'");
  }
  entries.push_back(std::move(array));
}

const NamedArray* Archive::find(std::string_view name) const {
  for (const auto& a : entries) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

const NamedArray& Archive::at(std::string_view name) const {
  if (const auto* a = find(name)) return *a;
  throw ValidationError("missing array '" + std::string(name) + "'");
}

namespace {

std::string encode_prefix(const Archive& archive, std::vector<ManifestEntry>& layout) {
  std::set<std::string> names;
  for (const auto& a : archive.entries) {
    if (!names.insert(a.name).second) {
      throw ValidationError("duplicate array name '" + a.name + "'");
    }
    if (a.element_count() != shape_count(a.shape)) {
      throw ValidationError("array '" + a.name + "' shape does not match its data");
    }
  }
  const std::string manifest = manifest_json(archive, layout).dump();
  const std::uint64_t m = manifest.size();
  std::string out;
  out.append(kMagic, 4);
  out.append(reinterpret_cast<const char*>(&m), 8);
  out += manifest;
  return out;
}

template <class Sink>
void emit_arrays(const Archive& archive, const std::vector<ManifestEntry>& layout, Sink&& sink) {
  for (std::size_t i = 0; i < archive.entries.size(); ++i) {
    std::visit(
        [&](const auto& v) {
          sink(reinterpret_cast<const char*>(v.data()), layout[i].byte_length);
        },
        archive.entries[i].data);
  }
}

}  // namespace

std::string archive_encode(const Archive& archive) {
  std::vector<ManifestEntry> layout;
  std::string out = encode_prefix(archive, layout);
  emit_arrays(archive, layout, [&](const char* p, std::size_t n) { out.append(p, n); });
  return out;
}

Archive archive_decode(std::string_view bytes) {
  Header h = parse_header(bytes);
  const std::string_view blob = bytes.substr(kHeaderBytes + h.manifest_length);
  Archive archive;
  archive.meta = std::move(h.meta);
  for (const auto& e : h.entries) {
    if (e.byte_offset + e.byte_length > blob.size()) {
      throw FormatError("truncated blob: array '" + e.name + "' extends past end of file");
    }
    NamedArray a;
    a.name = e.name;
    a.shape = e.shape;
    switch (e.dtype) {
      case DType::f32: a.data = read_values<std::vector<float>>(blob, e); break;
      case DType::f64: a.data = read_values<std::vector<double>>(blob, e); break;
      case DType::i64: a.data = read_values<std::vector<std::int64_t>>(blob, e); break;
    }
    archive.entries.push_back(std::move(a));
  }
  return archive;
}

// Arrays go straight to disk so a large checkpoint never exists twice in memory.
void archive_write(const Archive& archive, const std::filesystem::path& path) {
  std::vector<ManifestEntry> layout;
  const std::string prefix = encode_prefix(archive, layout);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(prefix.data(), static_cast<std::streamsize>(prefix.size()));
    emit_arrays(archive, layout, [&](const char* p, std::size_t n) {
      out.write(p, static_cast<std::streamsize>(n));
    });
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw IoError("write failed for '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot rename into '" + path.string() + "'");
  }
}

Archive archive_read(const std::filesystem::path& path) {
  std::map<std::string, std::string> meta;
  const auto entries = archive_manifest(path, &meta);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  in.seekg(4);
  std::uint64_t m = 0;
  in.read(reinterpret_cast<char*>(&m), 8);
  const std::uint64_t blob_start = kHeaderBytes + m;
  Archive archive;
  archive.meta = std::move(meta);
  for (const auto& e : entries) {
    NamedArray a;
    a.name = e.name;
    a.shape = e.shape;
    const std::size_t n = shape_count(e.shape);
    auto fill = [&](auto vec) {
      in.seekg(static_cast<std::streamoff>(blob_start + e.byte_offset));
      in.read(reinterpret_cast<char*>(vec.data()), static_cast<std::streamsize>(e.byte_length));
      if (!in) throw IoError("read failed for '" + path.string() + "'");
      a.data = std::move(vec);
    };
    switch (e.dtype) {
      case DType::f32: fill(std::vector<float>(n)); break;
      case DType::f64: fill(std::vector<double>(n)); break;
      case DType::i64: fill(std::vector<std::int64_t>(n)); break;
    }
    archive.entries.push_back(std::move(a));
  }
  return archive;
}

std::vector<ManifestEntry> archive_manifest(const std::filesystem::path& path,
                                            std::map<std::string, std::string>* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  char head[kHeaderBytes];
  in.read(head, kHeaderBytes);
  if (in.gcount() != static_cast<std::streamsize>(kHeaderBytes) ||
      std::memcmp(head, kMagic, 4) != 0) {
    throw FormatError(path.string() + ": corrupt header: bad magic");
  }
  std::uint64_t m = 0;
  std::memcpy(&m, head + 4, 8);
  const auto file_size = std::filesystem::file_size(path);
  if (m > file_size - kHeaderBytes) {
    throw FormatError(path.string() + ": corrupt header: manifest length exceeds file size");
  }
  std::string bytes(kHeaderBytes + m, '\0');
  std::memcpy(bytes.data(), head, kHeaderBytes);
  in.read(bytes.data() + kHeaderBytes, static_cast<std::streamsize>(m));
  Header h = parse_header(bytes);
  const std::uint64_t blob_size = file_size - kHeaderBytes - m;
  for (const auto& e : h.entries) {
    if (e.byte_offset + e.byte_length > blob_size) {
      throw FormatError(path.string() + ": truncated blob: array '" + e.name + "'");
    }
  }
  if (meta != nullptr) *meta = std::move(h.meta);
  return h.entries;
}

}  // namespace timar
