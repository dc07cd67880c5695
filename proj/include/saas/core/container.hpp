#pragma once

// On-disk array container: a directory holding `manifest.json` (schema version,
// array table, text metadata) and `data.bin` (row-major little-endian payloads,
// each starting on a 64-byte boundary).

#include "saas/core/types.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace saas {

static_assert(std::endian::native == std::endian::little, "container payloads are written as host little-endian");

inline constexpr int kContainerSchemaVersion = 1;
inline constexpr std::size_t kPayloadAlignment = 64;

class ContainerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType { f32, i64 };

inline const char* dtype_name(DType d) { return d == DType::f32 ? "f32" : "i64"; }

struct NamedArray {
  std::string name;
  std::vector<std::int64_t> shape;
  std::variant<std::vector<float>, std::vector<std::int64_t>> data;

  DType dtype() const { return std::holds_alternative<std::vector<float>>(data) ? DType::f32 : DType::i64; }
  std::size_t element_count() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, std::int64_t b) { return a * static_cast<std::size_t>(b); });
  }
  std::size_t byte_size() const { return element_count() * 4 * (dtype() == DType::f32 ? 1 : 2); }
  const std::vector<float>& floats() const { return std::get<std::vector<float>>(data); }
  const std::vector<std::int64_t>& ints() const { return std::get<std::vector<std::int64_t>>(data); }
};

struct Container {
  std::vector<NamedArray> arrays;
  std::map<std::string, std::string> metadata;

  bool contains(const std::string& name) const {
    return std::any_of(arrays.begin(), arrays.end(), [&](const NamedArray& a) { return a.name == name; });
  }

  const NamedArray& get(const std::string& name) const {
    for (const auto& a : arrays) {
      if (a.name == name) return a;
    }
    throw ContainerError("container has no array named '" + name + "'");
  }

  void add_floats(std::string name, std::vector<std::int64_t> shape, std::vector<float> values) {
    arrays.push_back({std::move(name), std::move(shape), std::move(values)});
  }

  void add_ints(std::string name, std::vector<std::int64_t> shape, std::vector<std::int64_t> values) {
    arrays.push_back({std::move(name), std::move(shape), std::move(values)});
  }

  template <class Derived>
  void add_matrix(std::string name, const Eigen::MatrixBase<Derived>& m) {
    const MatrixT<float> rm = m.template cast<float>();
    add_floats(std::move(name), {rm.rows(), rm.cols()}, std::vector<float>(rm.data(), rm.data() + rm.size()));
  }

  /// 2-D view of a float array; higher-rank arrays are flattened to (shape[0], rest).
  Matrix matrix(const std::string& name) const {
    const NamedArray& a = get(name);
    if (a.dtype() != DType::f32) throw ContainerError("array '" + name + "' is not f32");
    const Eigen::Index rows = a.shape.empty() ? 1 : a.shape.front();
    const Eigen::Index cols = rows == 0 ? 0 : static_cast<Eigen::Index>(a.element_count()) / rows;
    return Eigen::Map<const Matrix>(a.floats().data(), rows, cols);
  }

  std::string meta(const std::string& key) const {
    auto it = metadata.find(key);
    if (it == metadata.end()) throw ContainerError("container metadata has no key '" + key + "'");
    return it->second;
  }
};

namespace detail {

inline std::size_t align_up(std::size_t n) {
  return (n + kPayloadAlignment - 1) / kPayloadAlignment * kPayloadAlignment;
}

}  // namespace detail

inline void save_container(const std::filesystem::path& dir, const Container& c) {
  std::set<std::string> names;
  for (const auto& a : c.arrays) {
    if (!names.insert(a.name).second) throw ContainerError("duplicate array name '" + a.name + "'");
    if (a.dtype() == DType::f32) {
      for (float v : a.floats()) {
        if (!std::isfinite(v)) throw ContainerError("array '" + a.name + "' holds a non-finite value");
      }
    }
    const std::size_t stored = a.dtype() == DType::f32 ? a.floats().size() : a.ints().size();
    if (stored != a.element_count()) throw ContainerError("array '" + a.name + "' shape does not match payload");
  }
  std::filesystem::create_directories(dir);

  nlohmann::json table = nlohmann::json::array();
  std::vector<char> blob;
  for (const auto& a : c.arrays) {
    const std::size_t offset = detail::align_up(blob.size());
    blob.resize(offset, 0);
    const auto* bytes = a.dtype() == DType::f32 ? reinterpret_cast<const char*>(a.floats().data())
                                                : reinterpret_cast<const char*>(a.ints().data());
    blob.insert(blob.end(), bytes, bytes + a.byte_size());
    table.push_back({{"name", a.name},
                     {"dtype", dtype_name(a.dtype())},
                     {"shape", a.shape},
                     {"byte_offset", offset},
                     {"byte_size", a.byte_size()}});
  }
  nlohmann::json manifest = {{"schema_version", kContainerSchemaVersion},
                             {"arrays", table},
                             {"metadata", c.metadata},
                             {"data_bytes", blob.size()}};

  std::ofstream m(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  m << manifest.dump(2) << '\n';
  std::ofstream d(dir / "data.bin", std::ios::binary | std::ios::trunc);
  d.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!m || !d) throw ContainerError("failed writing container at " + dir.string());
}

inline Container load_container(const std::filesystem::path& dir) {
  std::ifstream m(dir / "manifest.json", std::ios::binary);
  if (!m) throw ContainerError("missing manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(m);
  } catch (const nlohmann::json::exception& e) {
    throw ContainerError("unreadable manifest in " + dir.string() + ": " + e.what());
  }
  const int version = manifest.value("schema_version", -1);
  if (version != kContainerSchemaVersion) {
    throw ContainerError("container schema version " + std::to_string(version) + " is not supported (expected " +
                         std::to_string(kContainerSchemaVersion) + ")");
  }

  std::ifstream d(dir / "data.bin", std::ios::binary);
  if (!d) throw ContainerError("missing data.bin in " + dir.string());
  const std::vector<char> blob((std::istreambuf_iterator<char>(d)), std::istreambuf_iterator<char>());
  if (blob.size() != manifest.value("data_bytes", std::size_t{0})) {
    throw ContainerError("data.bin size " + std::to_string(blob.size()) + " does not match manifest in " +
                         dir.string());
  }

  Container c;
  c.metadata = manifest.at("metadata").get<std::map<std::string, std::string>>();
  for (const auto& entry : manifest.at("arrays")) {
    NamedArray a;
    a.name = entry.at("name").get<std::string>();
    a.shape = entry.at("shape").get<std::vector<std::int64_t>>();
    const std::string dtype = entry.at("dtype").get<std::string>();
    const auto offset = entry.at("byte_offset").get<std::size_t>();
    const auto size = entry.at("byte_size").get<std::size_t>();
    if (dtype == "f32") {
      a.data = std::vector<float>();
    } else if (dtype == "i64") {
      a.data = std::vector<std::int64_t>();
    } else {
      throw ContainerError("array '" + a.name + "' has unknown dtype " + dtype);
    }
    if (size != a.byte_size() || offset + size > blob.size()) {
      throw ContainerError("array '" + a.name + "' byte count does not match its shape or the payload");
    }
    if (a.dtype() == DType::f32) {
      std::vector<float> v(a.element_count());
      std::memcpy(v.data(), blob.data() + offset, size);
      a.data = std::move(v);
    } else {
      std::vector<std::int64_t> v(a.element_count());
      std::memcpy(v.data(), blob.data() + offset, size);
      a.data = std::move(v);
    }
    c.arrays.push_back(std::move(a));
  }
  return c;
}

}  // namespace saas
