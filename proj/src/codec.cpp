#include "streetgen/codec.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>

#include <openssl/evp.h>
#include <openssl/sha.h>
#include <png.h>

namespace streetgen::codec {

namespace {

struct ReadCursor {
  std::span<const unsigned char> bytes;
  std::size_t pos = 0;
};

void png_read_cb(png_structp png, png_bytep out, png_size_t n) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + n > cur->bytes.size()) png_error(png, "truncated PNG");
  std::memcpy(out, cur->bytes.data() + cur->pos, n);
  cur->pos += n;
}

void png_write_cb(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<unsigned char>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

void png_flush_cb(png_structp) {}

void png_error_cb(png_structp png, png_const_charp msg) {
  auto* err = static_cast<std::string*>(png_get_error_ptr(png));
  if (err) *err = msg;
  png_longjmp(png, 1);
}

void png_warn_cb(png_structp, png_const_charp) {}

}  // namespace

std::vector<unsigned char> encode_png(const GrayImage& image) {
  if (image.bit_depth != 8 && image.bit_depth != 16) throw Error("png: bit depth must be 8 or 16");
  if (image.samples.size() != static_cast<std::size_t>(image.width) * image.height) {
    throw Error("png: sample count does not match dimensions");
  }
  std::string err;
  std::vector<unsigned char> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_cb, png_warn_cb);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("png: allocation failed");
  }
  std::vector<unsigned char> row;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("png: encode failed: " + err);
  }
  png_set_write_fn(png, &out, png_write_cb, png_flush_cb);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height),
               image.bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t bpp = image.bit_depth / 8;
  row.resize(static_cast<std::size_t>(image.width) * bpp);
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      const std::uint16_t s = image.samples[static_cast<std::size_t>(r) * image.width + c];
      if (bpp == 1) {
        row[c] = static_cast<unsigned char>(s);
      } else {
        row[2 * c] = static_cast<unsigned char>(s >> 8);
        row[2 * c + 1] = static_cast<unsigned char>(s & 0xff);
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

GrayImage decode_png(std::span<const unsigned char> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw Error("png: not a PNG stream");
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_cb, png_warn_cb);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("png: allocation failed");
  }
  ReadCursor cursor{bytes, 0};
  GrayImage img;
  std::vector<unsigned char> row;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("png: decode failed: " + err);
  }
  png_set_read_fn(png, &cursor, png_read_cb);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (color != PNG_COLOR_TYPE_GRAY) png_error(png, "only single-channel grayscale PNG is supported");
  if (depth < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
    depth = 8;
  }
  png_read_update_info(png, info);
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.bit_depth = depth;
  img.samples.resize(static_cast<std::size_t>(img.width) * img.height);
  row.resize(png_get_rowbytes(png, info));
  for (int r = 0; r < img.height; ++r) {
    png_read_row(png, row.data(), nullptr);
    for (int c = 0; c < img.width; ++c) {
      img.samples[static_cast<std::size_t>(r) * img.width + c] =
          depth == 8 ? row[c] : static_cast<std::uint16_t>((row[2 * c] << 8) | row[2 * c + 1]);
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

std::string base64_encode(std::span<const unsigned char> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<unsigned char> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw Error("base64: length is not a multiple of 4");
  std::vector<unsigned char> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw Error("base64: invalid input");
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

std::string sha256_hex(std::span<const unsigned char> bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

GrayImage quantize16(const FloatGrid& g, float scale, float offset) {
  if (scale == 0.0f) throw Error("quantize16: zero scale");
  GrayImage img;
  img.width = g.width();
  img.height = g.height();
  img.bit_depth = 16;
  img.samples.resize(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double t = (static_cast<double>(g.data()[i]) - offset) / scale;
    img.samples[i] = static_cast<std::uint16_t>(std::lround(std::clamp(t, 0.0, 1.0) * 65535.0));
  }
  return img;
}

FloatGrid dequantize(const GrayImage& img, float scale, float offset) {
  FloatGrid g(img.width, img.height);
  const double full = img.bit_depth == 16 ? 65535.0 : 255.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    g.data()[i] = static_cast<float>(offset + scale * (img.samples[i] / full));
  }
  return g;
}

}  // namespace streetgen::codec
