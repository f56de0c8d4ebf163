#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "streetgen/grid.hpp"

namespace streetgen {

enum class DType : std::uint8_t { f32, f64, u8, i32 };

std::string to_string(DType t);
std::size_t dtype_size(DType t);

/// Single-file container: 8-byte magic, little-endian u64 header length,
/// JSON header, then the raw row-major little-endian arrays back to back.
/// The header carries free-form metadata plus an entry table with
/// name/dtype/shape/offset/nbytes for every array.
class Archive {
 public:
  static constexpr char kMagic[9] = "SGARC001";

  struct Entry {
    DType dtype = DType::f32;
    std::vector<std::int64_t> shape;
    std::vector<unsigned char> bytes;
  };

  nlohmann::json& meta() { return meta_; }
  const nlohmann::json& meta() const { return meta_; }

  void put_f32(const std::string& name, std::vector<std::int64_t> shape,
               std::span<const float> values);
  void put_f64(const std::string& name, std::vector<std::int64_t> shape,
               std::span<const double> values);
  void put_u8(const std::string& name, std::vector<std::int64_t> shape,
              std::span<const unsigned char> values);
  void put_i32(const std::string& name, std::vector<std::int64_t> shape,
               std::span<const std::int32_t> values);

  void put_grid(const std::string& name, const FloatGrid& g);
  void put_grid(const std::string& name, const ByteGrid& g);

  bool has(const std::string& name) const { return entries_.count(name) != 0; }
  const Entry& entry(const std::string& name) const;
  std::vector<std::string> names() const;

  std::vector<float> get_f32(const std::string& name) const;
  std::vector<double> get_f64(const std::string& name) const;
  std::vector<unsigned char> get_u8(const std::string& name) const;
  std::vector<std::int32_t> get_i32(const std::string& name) const;

  FloatGrid get_float_grid(const std::string& name) const;
  ByteGrid get_byte_grid(const std::string& name) const;

  std::vector<unsigned char> serialize() const;
  static Archive deserialize(std::span<const unsigned char> bytes);

  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);

 private:
  void put_raw(const std::string& name, DType dtype, std::vector<std::int64_t> shape,
               const void* data, std::size_t count);

  nlohmann::json meta_ = nlohmann::json::object();
  std::map<std::string, Entry> entries_;
};

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const unsigned char> bytes);

}  // namespace streetgen
