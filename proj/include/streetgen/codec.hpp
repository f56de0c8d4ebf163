#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "streetgen/grid.hpp"

namespace streetgen::codec {

/// Grayscale PNG decoded to raw sample values (0..255 or 0..65535).
struct GrayImage {
  int width = 0;
  int height = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> samples;
};

std::vector<unsigned char> encode_png(const GrayImage& image);
GrayImage decode_png(std::span<const unsigned char> bytes);

std::string base64_encode(std::span<const unsigned char> bytes);
std::vector<unsigned char> base64_decode(std::string_view text);

std::string sha256_hex(std::span<const unsigned char> bytes);
inline std::string sha256_hex(std::string_view text) {
  return sha256_hex(std::span<const unsigned char>(
      reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

/// 16-bit quantization: value = offset + scale * sample / 65535.
GrayImage quantize16(const FloatGrid& g, float scale = 1.0f, float offset = 0.0f);
FloatGrid dequantize(const GrayImage& img, float scale = 1.0f, float offset = 0.0f);

}  // namespace streetgen::codec
