#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "streetgen/geo_ingest.hpp"
#include "streetgen/nn/netcore.hpp"
#include "streetgen/sampler.hpp"

namespace streetgen::serve {

/// How a float raster travels inside JSON.
///   png16: base64 16-bit grayscale PNG, value = offset + scale * sample / 65535
///   png8:  base64 8-bit grayscale PNG, value = offset + scale * sample / 255
///   f32:   base64 of little-endian float32, row-major, with width and height
struct RasterEncoding {
  std::string kind = "png16";
  float scale = 1.0f;
  float offset = 0.0f;
};

nlohmann::json encode_raster(const FloatGrid& grid, const RasterEncoding& encoding);
FloatGrid decode_raster(const nlohmann::json& j, RasterEncoding* encoding = nullptr);
/// Masks travel as png8 with nonzero = generate.
nlohmann::json encode_mask(const sampling::Mask& mask);
sampling::Mask decode_mask(const nlohmann::json& j);
nlohmann::json encode_codes(const ByteGrid& codes);
ByteGrid decode_codes(const nlohmann::json& j);

/// Pattern annotation polygon in continuous pixel coordinates (x = column,
/// y = row). A pixel is covered when its center lies inside.
struct PatternStroke {
  std::vector<geo::Point> polygon;
  geo::PatternType type = geo::PatternType::orthogonal_grid;
};

struct GenerationRequest {
  FloatGrid streets;
  FloatGrid elevation;
  FloatGrid aspect;
  RasterEncoding street_encoding{};
  sampling::Mask mask;
  std::vector<Pixel> junctions;
  std::vector<PatternStroke> strokes;
  std::optional<ByteGrid> pattern_raster;  // painted codes; replaces strokes
  int model_level = 1;
  std::uint64_t seed = 0;
  std::string raw_encoding = "png16";
  /// The network sees context streets collapsed to {0, 1}; the composite keeps the request values.
  bool binary_streets = true;
};

struct GenerationResponse {
  FloatGrid composite;
  FloatGrid raw;
  double elapsed_ms = 0.0;
  std::string request_hash;
  RasterEncoding street_encoding{};
  std::string raw_encoding = "png16";
  int model_level = 1;
  std::uint64_t seed = 0;
};

/// Request rejected with an HTTP status (400 malformed, 422 invalid content).
class RequestError : public Error {
 public:
  RequestError(int status, const std::string& what) : Error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

/// Parses a request; `map` resolves {"map_origin": [row, col], "size": n} references.
GenerationRequest request_from_json(const nlohmann::json& j, const geo::MultiChannelMap* map = nullptr);
nlohmann::json request_to_json(const GenerationRequest& r);
nlohmann::json response_to_json(const GenerationResponse& r);
GenerationResponse response_from_json(const nlohmann::json& j);

/// Pattern codes inside the mask from strokes (later strokes win) or the painted raster.
ByteGrid render_guidance(const GenerationRequest& r);

/// Input sample exactly as build_sample would lay it out for this request.
sampling::PatchSample request_sample(const GenerationRequest& r);

/// Pattern legend colors keyed by pattern type name.
nlohmann::json pattern_legend();

class Service {
 public:
  explicit Service(nn::Checkpoint checkpoint, std::optional<geo::MultiChannelMap> map = std::nullopt);

  void validate(const GenerationRequest& r) const;
  GenerationResponse generate(const GenerationRequest& r) const;

  nlohmann::json health() const;
  nlohmann::json meta() const;

  struct Reply {
    int status;
    std::string body;
  };
  /// Routes one HTTP request; used by the server and directly by tests.
  Reply handle(const std::string& method, const std::string& path, const std::string& body) const;

  const nn::Checkpoint& checkpoint() const { return checkpoint_; }
  const std::string& checkpoint_hash() const { return checkpoint_hash_; }

 private:
  nn::Checkpoint checkpoint_;
  nn::Generator<float> generator_;
  std::optional<geo::MultiChannelMap> map_;
  std::string checkpoint_hash_;
};

/// HTTP front end on a background thread.
class HttpServer {
 public:
  explicit HttpServer(const Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds (port 0 picks a free port) and starts serving; returns the port.
  int start(const std::string& host, int port);
  void stop();
  /// Serves on the calling thread until stopped.
  void run(const std::string& host, int port);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace streetgen::serve
