// Copyright 2026 The utts Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "utts/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <zlib.h>

#include "utts/error.hpp"

namespace utts {

static_assert(std::endian::native == std::endian::little,
              "container encoding assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'U', 'T', 'T', 'S'};

const char* dtype_name(DType d) { return d == DType::f64 ? "f64" : "i32"; }

DType parse_dtype(const std::string& s) {
  if (s == "f64") return DType::f64;
  if (s == "i32") return DType::i32;
  throw LoadError("unknown dtype '" + s + "'");
}

template <typename T>
void append_raw(std::string& out, const T& v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T read_raw(std::string_view bytes, std::size_t pos) {
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  return v;
}

}  // namespace

std::int64_t ArrayEntry::element_count() const {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos), static_cast<uInt>(n));
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

ArrayEntry& Container::insert(std::string name) {
  for (auto& a : arrays_) {
    if (a.name == name) {
      a = ArrayEntry{};
      a.name = std::move(name);
      return a;
    }
  }
  arrays_.push_back(ArrayEntry{});
  arrays_.back().name = std::move(name);
  return arrays_.back();
}

void Container::put(std::string name, const Eigen::MatrixXd& m) {
  auto& e = insert(std::move(name));
  e.dtype = DType::f64;
  e.shape = {m.rows(), m.cols()};
  e.f64.resize(static_cast<std::size_t>(m.size()));
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) e.f64[k++] = m(r, c);
}

void Container::put(std::string name, const Eigen::VectorXd& v) {
  auto& e = insert(std::move(name));
  e.dtype = DType::f64;
  e.shape = {v.size()};
  e.f64.assign(v.data(), v.data() + v.size());
}

void Container::put(std::string name, const std::vector<int>& v) {
  auto& e = insert(std::move(name));
  e.dtype = DType::i32;
  e.shape = {static_cast<std::int64_t>(v.size())};
  e.i32.assign(v.begin(), v.end());
}

bool Container::has(std::string_view name) const {
  for (const auto& a : arrays_)
    if (a.name == name) return true;
  return false;
}

const ArrayEntry& Container::entry(std::string_view name) const {
  for (const auto& a : arrays_)
    if (a.name == name) return a;
  throw LoadError("container has no array named '" + std::string(name) + "'");
}

Eigen::MatrixXd Container::matrix(std::string_view name) const {
  const auto& e = entry(name);
  if (e.dtype != DType::f64 || e.shape.size() != 2)
    throw LoadError("array '" + e.name + "' is not a 2-D f64 matrix");
  Eigen::MatrixXd m(e.shape[0], e.shape[1]);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = e.f64[k++];
  return m;
}

Eigen::VectorXd Container::vector(std::string_view name) const {
  const auto& e = entry(name);
  if (e.dtype != DType::f64 || e.shape.size() != 1)
    throw LoadError("array '" + e.name + "' is not a 1-D f64 vector");
  return Eigen::Map<const Eigen::VectorXd>(e.f64.data(), static_cast<Eigen::Index>(e.f64.size()));
}

std::vector<int> Container::ints(std::string_view name) const {
  const auto& e = entry(name);
  if (e.dtype != DType::i32 || e.shape.size() != 1)
    throw LoadError("array '" + e.name + "' is not a 1-D i32 vector");
  return {e.i32.begin(), e.i32.end()};
}

std::string Container::encode() const {
  nlohmann::json dir = nlohmann::json::array();
  std::string payload;
  for (const auto& a : arrays_) {
    const std::size_t offset = payload.size();
    if (a.dtype == DType::f64) {
      payload.append(reinterpret_cast<const char*>(a.f64.data()), a.f64.size() * sizeof(double));
    } else {
      payload.append(reinterpret_cast<const char*>(a.i32.data()), a.i32.size() * sizeof(std::int32_t));
    }
    dir.push_back({{"name", a.name},
                   {"dtype", dtype_name(a.dtype)},
                   {"shape", a.shape},
                   {"offset", offset},
                   {"nbytes", payload.size() - offset}});
  }
  const nlohmann::json header = {{"meta", meta}, {"arrays", dir}};
  const std::string header_text = header.dump();

  std::string out;
  out.reserve(16 + header_text.size() + payload.size() + 4);
  out.append(kMagic, 4);
  append_raw(out, kContainerVersion);
  append_raw(out, static_cast<std::uint64_t>(header_text.size()));
  out += header_text;
  out += payload;
  append_raw(out, crc32_of(out));
  return out;
}

Container Container::decode(std::string_view bytes) {
  constexpr std::size_t kFixed = 4 + 4 + 8;
  if (bytes.size() < kFixed + 4) throw LoadError("container truncated: " + std::to_string(bytes.size()) + " bytes");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw LoadError("bad container magic");
  const auto version = read_raw<std::uint32_t>(bytes, 4);
  if (version != kContainerVersion)
    throw LoadError("unsupported container version " + std::to_string(version));
  const auto stored_crc = read_raw<std::uint32_t>(bytes, bytes.size() - 4);
  if (crc32_of(bytes.substr(0, bytes.size() - 4)) != stored_crc) throw LoadError("container checksum mismatch");

  const auto header_len = read_raw<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - kFixed - 4) throw LoadError("container header length out of range");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(kFixed, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("container header is not valid JSON: ") + e.what());
  }
  const std::string_view payload = bytes.substr(kFixed + header_len, bytes.size() - kFixed - header_len - 4);

  Container c;
  try {
    c.meta = header.at("meta");
    for (const auto& d : header.at("arrays")) {
      ArrayEntry e;
      e.name = d.at("name").get<std::string>();
      e.dtype = parse_dtype(d.at("dtype").get<std::string>());
      e.shape = d.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = d.at("offset").get<std::uint64_t>();
      const auto nbytes = d.at("nbytes").get<std::uint64_t>();
      const std::size_t elem = e.dtype == DType::f64 ? sizeof(double) : sizeof(std::int32_t);
      if (e.element_count() < 0 || static_cast<std::uint64_t>(e.element_count()) * elem != nbytes)
        throw LoadError("array '" + e.name + "' size does not match its shape");
      if (offset > payload.size() || nbytes > payload.size() - offset)
        throw LoadError("array '" + e.name + "' extends past the payload");
      if (e.dtype == DType::f64) {
        e.f64.resize(nbytes / elem);
        std::memcpy(e.f64.data(), payload.data() + offset, nbytes);
      } else {
        e.i32.resize(nbytes / elem);
        std::memcpy(e.i32.data(), payload.data() + offset, nbytes);
      }
      c.arrays_.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("malformed container directory: ") + e.what());
  }
  return c;
}

void Container::save(const std::filesystem::path& path) const {
  const std::string bytes = encode();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Container Container::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode(ss.str());
}

}  // namespace utts
