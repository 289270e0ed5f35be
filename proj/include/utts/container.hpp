// Copyright 2026 The utts Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

namespace utts {

// Flat array container shared by checkpoints and corpus utterances.
//
// Layout (all integers little-endian):
//   "UTTS" | u32 version | u64 header length | header JSON (UTF-8)
//   | raw array payloads | u32 CRC32 of every preceding byte
//
// The header is {"meta": {...}, "arrays": [{name, dtype, shape, offset,
// nbytes}, ...]} where offsets are relative to the start of the payload block.
// Matrices are stored row-major with shape [rows, cols].

inline constexpr std::uint32_t kContainerVersion = 1;

enum class DType { f64, i32 };

struct ArrayEntry {
  std::string name;
  DType dtype = DType::f64;
  std::vector<std::int64_t> shape;
  std::vector<double> f64;
  std::vector<std::int32_t> i32;

  std::int64_t element_count() const;
};

class Container {
 public:
  nlohmann::json meta = nlohmann::json::object();

  void put(std::string name, const Eigen::MatrixXd& m);
  void put(std::string name, const Eigen::VectorXd& v);
  void put(std::string name, const std::vector<int>& v);

  bool has(std::string_view name) const;
  const ArrayEntry& entry(std::string_view name) const;
  Eigen::MatrixXd matrix(std::string_view name) const;
  Eigen::VectorXd vector(std::string_view name) const;
  std::vector<int> ints(std::string_view name) const;

  const std::vector<ArrayEntry>& arrays() const { return arrays_; }

  std::string encode() const;
  static Container decode(std::string_view bytes);

  void save(const std::filesystem::path& path) const;
  static Container load(const std::filesystem::path& path);

 private:
  ArrayEntry& insert(std::string name);
  std::vector<ArrayEntry> arrays_;
};

std::uint32_t crc32_of(std::string_view bytes);

}  // namespace utts
