#include "streetgen/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

namespace streetgen {

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

namespace {

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  if (s == "u8") return DType::u8;
  if (s == "i32") return DType::i32;
  throw Error("archive: unknown dtype '" + s + "'");
}

std::size_t element_count(const std::vector<std::int64_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::int64_t b) {
                           if (b < 0) throw Error("archive: negative shape");
                           return a * static_cast<std::size_t>(b);
                         });
}

template <typename T>
std::vector<T> decode(const Archive::Entry& e, DType expected, const std::string& name) {
  if (e.dtype != expected) {
    throw Error("archive: entry '" + name + "' has dtype " + to_string(e.dtype) +
                ", requested " + to_string(expected));
  }
  std::vector<T> out(e.bytes.size() / sizeof(T));
  if (!out.empty()) std::memcpy(out.data(), e.bytes.data(), e.bytes.size());
  return out;
}

}  // namespace

std::string to_string(DType t) {
  switch (t) {
    case DType::f32: return "f32";
    case DType::f64: return "f64";
    case DType::u8: return "u8";
    case DType::i32: return "i32";
  }
  return "?";
}

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::u8: return 1;
    case DType::i32: return 4;
  }
  return 0;
}

void Archive::put_raw(const std::string& name, DType dtype, std::vector<std::int64_t> shape,
                      const void* data, std::size_t count) {
  if (element_count(shape) != count) {
    throw Error("archive: entry '" + name + "' shape does not match value count");
  }
  Entry e;
  e.dtype = dtype;
  e.shape = std::move(shape);
  e.bytes.resize(count * dtype_size(dtype));
  if (!e.bytes.empty()) std::memcpy(e.bytes.data(), data, e.bytes.size());
  entries_[name] = std::move(e);
}

void Archive::put_f32(const std::string& name, std::vector<std::int64_t> shape,
                      std::span<const float> values) {
  put_raw(name, DType::f32, std::move(shape), values.data(), values.size());
}
void Archive::put_f64(const std::string& name, std::vector<std::int64_t> shape,
                      std::span<const double> values) {
  put_raw(name, DType::f64, std::move(shape), values.data(), values.size());
}
void Archive::put_u8(const std::string& name, std::vector<std::int64_t> shape,
                     std::span<const unsigned char> values) {
  put_raw(name, DType::u8, std::move(shape), values.data(), values.size());
}
void Archive::put_i32(const std::string& name, std::vector<std::int64_t> shape,
                      std::span<const std::int32_t> values) {
  put_raw(name, DType::i32, std::move(shape), values.data(), values.size());
}

void Archive::put_grid(const std::string& name, const FloatGrid& g) {
  put_f32(name, {g.height(), g.width()}, g.values());
}
void Archive::put_grid(const std::string& name, const ByteGrid& g) {
  put_u8(name, {g.height(), g.width()}, g.values());
}

const Archive::Entry& Archive::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error("archive: missing entry '" + name + "'");
  return it->second;
}

std::vector<std::string> Archive::names() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : entries_) out.push_back(k);
  return out;
}

std::vector<float> Archive::get_f32(const std::string& name) const {
  return decode<float>(entry(name), DType::f32, name);
}
std::vector<double> Archive::get_f64(const std::string& name) const {
  return decode<double>(entry(name), DType::f64, name);
}
std::vector<unsigned char> Archive::get_u8(const std::string& name) const {
  return decode<unsigned char>(entry(name), DType::u8, name);
}
std::vector<std::int32_t> Archive::get_i32(const std::string& name) const {
  return decode<std::int32_t>(entry(name), DType::i32, name);
}

FloatGrid Archive::get_float_grid(const std::string& name) const {
  const auto& e = entry(name);
  if (e.shape.size() != 2) throw Error("archive: entry '" + name + "' is not 2-D");
  FloatGrid g(static_cast<int>(e.shape[1]), static_cast<int>(e.shape[0]));
  auto v = get_f32(name);
  std::copy(v.begin(), v.end(), g.data());
  return g;
}

ByteGrid Archive::get_byte_grid(const std::string& name) const {
  const auto& e = entry(name);
  if (e.shape.size() != 2) throw Error("archive: entry '" + name + "' is not 2-D");
  ByteGrid g(static_cast<int>(e.shape[1]), static_cast<int>(e.shape[0]));
  auto v = get_u8(name);
  std::copy(v.begin(), v.end(), g.data());
  return g;
}

std::vector<unsigned char> Archive::serialize() const {
  nlohmann::json header;
  header["meta"] = meta_;
  header["entries"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, e] : entries_) {
    header["entries"].push_back({{"name", name},
                                 {"dtype", to_string(e.dtype)},
                                 {"shape", e.shape},
                                 {"offset", offset},
                                 {"nbytes", e.bytes.size()}});
    offset += e.bytes.size();
  }
  const std::string text = header.dump();
  std::vector<unsigned char> out;
  out.reserve(16 + text.size() + offset);
  out.insert(out.end(), kMagic, kMagic + 8);
  const std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((len >> (8 * i)) & 0xffu));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [_, e] : entries_) out.insert(out.end(), e.bytes.begin(), e.bytes.end());
  return out;
}

Archive Archive::deserialize(std::span<const unsigned char> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw Error("archive: bad magic (not a streetgen container)");
  }
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(bytes[8 + i]) << (8 * i);
  if (16 + len > bytes.size()) throw Error("archive: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("archive: corrupt header: ") + e.what());
  }
  Archive a;
  a.meta_ = header.value("meta", nlohmann::json::object());
  const std::size_t base = 16 + len;
  for (const auto& je : header.at("entries")) {
    Entry e;
    e.dtype = parse_dtype(je.at("dtype").get<std::string>());
    e.shape = je.at("shape").get<std::vector<std::int64_t>>();
    const auto off = je.at("offset").get<std::uint64_t>();
    const auto n = je.at("nbytes").get<std::uint64_t>();
    if (base + off + n > bytes.size()) throw Error("archive: truncated payload");
    if (element_count(e.shape) * dtype_size(e.dtype) != n) {
      throw Error("archive: entry size mismatch for '" + je.at("name").get<std::string>() + "'");
    }
    e.bytes.assign(bytes.begin() + static_cast<long>(base + off),
                   bytes.begin() + static_cast<long>(base + off + n));
    a.entries_[je.at("name").get<std::string>()] = std::move(e);
  }
  return a;
}

void Archive::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  write_file_bytes(path, bytes);
}

Archive Archive::load(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return deserialize(bytes);
}

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "' for reading");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

}  // namespace streetgen
