#include "streetgen/genserve.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>

#include <httplib.h>

#include "streetgen/codec.hpp"
#include "streetgen/rng.hpp"

namespace streetgen::serve {

using nlohmann::json;

namespace {

RequestError bad_request(const std::string& what) { return RequestError(400, what); }
RequestError unprocessable(const std::string& what) { return RequestError(422, what); }

std::string point_string(int row, int col) {
  return "(" + std::to_string(row) + ", " + std::to_string(col) + ")";
}

}  // namespace

json encode_raster(const FloatGrid& grid, const RasterEncoding& e) {
  if (e.kind == "f32") {
    const auto* bytes = reinterpret_cast<const unsigned char*>(grid.data());
    return {{"encoding", "f32"},
            {"width", grid.width()},
            {"height", grid.height()},
            {"data", codec::base64_encode({bytes, grid.size() * sizeof(float)})}};
  }
  codec::GrayImage img;
  if (e.kind == "png16") {
    img = codec::quantize16(grid, e.scale, e.offset);
  } else if (e.kind == "png8") {
    if (e.scale == 0.0f) throw Error("png8 encoding needs a nonzero scale");
    img.width = grid.width();
    img.height = grid.height();
    img.bit_depth = 8;
    img.samples.resize(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double t = (static_cast<double>(grid.data()[i]) - e.offset) / e.scale;
      img.samples[i] = static_cast<std::uint16_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
    }
  } else {
    throw Error("unknown raster encoding '" + e.kind + "'");
  }
  return {{"encoding", e.kind},
          {"scale", e.scale},
          {"offset", e.offset},
          {"data", codec::base64_encode(codec::encode_png(img))}};
}

FloatGrid decode_raster(const json& j, RasterEncoding* encoding) {
  try {
    RasterEncoding e;
    e.kind = j.at("encoding").get<std::string>();
    const auto bytes = codec::base64_decode(j.at("data").get<std::string>());
    FloatGrid out;
    if (e.kind == "f32") {
      const int w = j.at("width").get<int>(), h = j.at("height").get<int>();
      if (w <= 0 || h <= 0) throw bad_request("f32 raster needs positive width and height");
      if (bytes.size() != static_cast<std::size_t>(w) * h * sizeof(float)) {
        throw bad_request("f32 raster payload has " + std::to_string(bytes.size()) + " bytes, expected " +
                          std::to_string(static_cast<std::size_t>(w) * h * sizeof(float)));
      }
      out = FloatGrid(w, h);
      std::memcpy(out.data(), bytes.data(), bytes.size());
    } else if (e.kind == "png16" || e.kind == "png8") {
      e.scale = j.value("scale", 1.0f);
      e.offset = j.value("offset", 0.0f);
      const auto img = codec::decode_png(bytes);
      if ((e.kind == "png16") != (img.bit_depth == 16)) {
        throw bad_request(e.kind + " raster holds a " + std::to_string(img.bit_depth) + "-bit image");
      }
      out = codec::dequantize(img, e.scale, e.offset);
    } else {
      throw bad_request("unknown raster encoding '" + e.kind + "'");
    }
    for (float v : out.values()) {
      if (!std::isfinite(v)) throw bad_request("raster holds non-finite values");
    }
    if (encoding) *encoding = e;
    return out;
  } catch (const RequestError&) {
    throw;
  } catch (const json::exception& ex) {
    throw bad_request(std::string("malformed raster: ") + ex.what());
  } catch (const Error& ex) {
    throw bad_request(std::string("undecodable raster: ") + ex.what());
  }
}

json encode_mask(const sampling::Mask& mask) {
  FloatGrid g(mask.grid.width(), mask.grid.height());
  for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] = mask.grid.data()[i] ? 1.0f : 0.0f;
  return encode_raster(g, {"png8", 1.0f, 0.0f});
}

sampling::Mask decode_mask(const json& j) {
  const FloatGrid g = decode_raster(j);
  sampling::Mask m{ByteGrid(g.width(), g.height(), 0)};
  for (std::size_t i = 0; i < g.size(); ++i) m.grid.data()[i] = g.data()[i] > 0.0f ? 1 : 0;
  return m;
}

json encode_codes(const ByteGrid& codes) {
  FloatGrid g(codes.width(), codes.height());
  for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] = static_cast<float>(codes.data()[i]);
  return encode_raster(g, {"png8", 255.0f, 0.0f});
}

ByteGrid decode_codes(const json& j) {
  const FloatGrid g = decode_raster(j);
  ByteGrid out(g.width(), g.height(), 0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const long v = std::lround(g.data()[i]);
    if (v < 0 || !geo::is_valid_pattern_code(static_cast<unsigned>(v))) {
      throw unprocessable("pattern raster holds invalid code " + std::to_string(v));
    }
    out.data()[i] = static_cast<unsigned char>(v);
  }
  return out;
}

GenerationRequest request_from_json(const json& j, const geo::MultiChannelMap* map) {
  if (!j.is_object()) throw bad_request("request body must be a JSON object");
  GenerationRequest r;
  try {
    r.model_level = j.at("model_level").get<int>();
    r.seed = j.value("seed", std::uint64_t{0});
    r.raw_encoding = j.value("raw_encoding", std::string("png16"));
    r.binary_streets = j.value("binary_streets", true);
    if (r.raw_encoding != "png16" && r.raw_encoding != "f32") {
      throw bad_request("raw_encoding must be png16 or f32");
    }
    r.mask = decode_mask(j.at("mask"));
    if (j.contains("map_origin")) {
      if (!map) throw unprocessable("map references need a service started with a map");
      const int row = j.at("map_origin").at(0).get<int>();
      const int col = j.at("map_origin").at(1).get<int>();
      const int size = j.value("size", r.mask.size());
      if (row < 0 || col < 0 || row + size > map->frame.height || col + size > map->frame.width) {
        throw unprocessable("map window " + point_string(row, col) + " of size " + std::to_string(size) +
                            " leaves the map");
      }
      r.streets = map->streets.crop(row, col, size, size);
      r.elevation = map->elevation.crop(row, col, size, size);
      r.aspect = map->aspect.crop(row, col, size, size);
      r.street_encoding = {"f32", 1.0f, 0.0f};
    } else {
      const auto& c = j.at("context");
      r.streets = decode_raster(c.at("streets"), &r.street_encoding);
      r.elevation = decode_raster(c.at("elevation"));
      r.aspect = decode_raster(c.at("aspect"));
    }
    for (const auto& p : j.value("junctions", json::array())) {
      r.junctions.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
    }
    if (j.contains("pattern_raster")) r.pattern_raster = decode_codes(j.at("pattern_raster"));
    for (const auto& s : j.value("patterns", json::array())) {
      PatternStroke stroke;
      const auto name = s.at("type").get<std::string>();
      const auto type = geo::parse_pattern_type(name);
      if (!type || *type == geo::PatternType::unlabeled) throw unprocessable("unknown pattern type '" + name + "'");
      stroke.type = *type;
      for (const auto& p : s.at("polygon")) {
        stroke.polygon.push_back({p.at(1).get<double>(), p.at(0).get<double>()});
      }
      r.strokes.push_back(std::move(stroke));
    }
  } catch (const RequestError&) {
    throw;
  } catch (const json::exception& ex) {
    throw bad_request(std::string("malformed request: ") + ex.what());
  }
  return r;
}

json request_to_json(const GenerationRequest& r) {
  json j{{"model_level", r.model_level},
         {"seed", r.seed},
         {"raw_encoding", r.raw_encoding},
         {"binary_streets", r.binary_streets},
         {"mask", encode_mask(r.mask)},
         {"context",
          {{"streets", encode_raster(r.streets, r.street_encoding)},
           {"elevation", encode_raster(r.elevation, {"f32", 1.0f, 0.0f})},
           {"aspect", encode_raster(r.aspect, {"f32", 1.0f, 0.0f})}}},
         {"junctions", json::array()},
         {"patterns", json::array()}};
  for (const auto& p : r.junctions) j["junctions"].push_back({p.row, p.col});
  for (const auto& s : r.strokes) {
    json poly = json::array();
    for (const auto& v : s.polygon) poly.push_back({v.y, v.x});
    j["patterns"].push_back({{"type", std::string(geo::to_string(s.type))}, {"polygon", poly}});
  }
  if (r.pattern_raster) j["pattern_raster"] = encode_codes(*r.pattern_raster);
  return j;
}

json response_to_json(const GenerationResponse& r) {
  return {{"composite", encode_raster(r.composite, r.street_encoding)},
          {"raw", encode_raster(r.raw, {r.raw_encoding, 1.0f, 0.0f})},
          {"elapsed_ms", r.elapsed_ms},
          {"request_hash", r.request_hash},
          {"model_level", r.model_level},
          {"seed", r.seed}};
}

GenerationResponse response_from_json(const json& j) {
  GenerationResponse r;
  r.composite = decode_raster(j.at("composite"), &r.street_encoding);
  RasterEncoding raw;
  r.raw = decode_raster(j.at("raw"), &raw);
  r.raw_encoding = raw.kind;
  r.elapsed_ms = j.at("elapsed_ms").get<double>();
  r.request_hash = j.at("request_hash").get<std::string>();
  r.model_level = j.at("model_level").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  return r;
}

ByteGrid render_guidance(const GenerationRequest& r) {
  const int size = r.mask.size();
  ByteGrid out(size, size, 0);
  if (r.pattern_raster) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (r.mask.grid.data()[i]) out.data()[i] = r.pattern_raster->data()[i];
    }
    return out;
  }
  for (const auto& s : r.strokes) {
    for (int row = 0; row < size; ++row) {
      for (int col = 0; col < size; ++col) {
        if (!r.mask.at(row, col)) continue;
        if (geo::point_in_polygon({col + 0.5, row + 0.5}, s.polygon)) out(row, col) = static_cast<unsigned char>(s.type);
      }
    }
  }
  return out;
}

sampling::PatchSample request_sample(const GenerationRequest& r) {
  sampling::PatchSample s;
  const int size = r.mask.size();
  s.mask = r.mask;
  s.model_level = r.model_level;
  s.seed = r.seed;
  s.retention_fraction = 1.0;
  s.ground_truth_streets = r.streets;
  s.context_streets = r.streets;
  for (std::size_t i = 0; i < s.context_streets.size(); ++i) {
    float& v = s.context_streets.data()[i];
    if (r.mask.grid.data()[i]) {
      v = 0.0f;
    } else if (r.binary_streets) {
      v = v > 0.0f ? 1.0f : 0.0f;
    }
  }
  s.elevation = r.elevation;
  s.aspect = r.aspect;
  s.noise = sampling::make_noise_channel(r.mask, mix_seed(r.seed, 1));
  s.junction_channel = FloatGrid(size, size, 0.0f);
  s.pattern_guidance = ByteGrid(size, size, 0);
  if (r.model_level >= 2) {
    s.mask_junctions = r.junctions;
    std::sort(s.mask_junctions.begin(), s.mask_junctions.end());
    s.mask_junctions.erase(std::unique(s.mask_junctions.begin(), s.mask_junctions.end()), s.mask_junctions.end());
    sampling::rerender_junctions(s, 1.0, mix_seed(r.seed, 2));
  }
  if (r.model_level >= 3) s.pattern_guidance = render_guidance(r);
  return s;
}

json pattern_legend() {
  return {{"linear_development", {{"color", "green"}, {"hex", "#00ff00"}}},
          {"gated_compound", {{"color", "yellow"}, {"hex", "#ffff00"}}},
          {"medieval", {{"color", "magenta"}, {"hex", "#ff00ff"}}},
          {"irregular_grid", {{"color", "red"}, {"hex", "#ff0000"}}},
          {"orthogonal_grid", {{"color", "orange"}, {"hex", "#ffa500"}}}};
}

Service::Service(nn::Checkpoint checkpoint, std::optional<geo::MultiChannelMap> map)
    : checkpoint_(std::move(checkpoint)), generator_(checkpoint_.generator), map_(std::move(map)) {
  for (const auto& p : checkpoint_.g_params.all()) {
    for (float v : p.value) {
      if (!std::isfinite(v)) throw Error("checkpoint parameter '" + p.name + "' is not finite");
    }
  }
  checkpoint_hash_ = codec::sha256_hex(checkpoint_.serialize());
}

void Service::validate(const GenerationRequest& r) const {
  if (r.model_level != checkpoint_.model_level) {
    throw unprocessable("request is for model level " + std::to_string(r.model_level) +
                        " but the loaded checkpoint is level " + std::to_string(checkpoint_.model_level));
  }
  const int size = r.mask.size();
  if (size <= 0 || r.mask.grid.height() != size) throw unprocessable("mask must be a non-empty square raster");
  const int f = checkpoint_.generator.downsample_factor();
  if (size % f) throw unprocessable("patch size must be a multiple of " + std::to_string(f));
  for (const auto* g : {&r.streets, &r.elevation, &r.aspect}) {
    if (g->width() != size || g->height() != size) {
      throw unprocessable("context rasters must match the " + std::to_string(size) + "x" + std::to_string(size) +
                          " mask");
    }
  }
  if (r.mask.generation_pixels() == 0) throw unprocessable("mask has no generation pixels");
  for (const auto& p : r.junctions) {
    if (!r.mask.grid.contains(p.row, p.col)) {
      throw unprocessable("junction " + point_string(p.row, p.col) + " lies outside the patch");
    }
    if (!r.mask.at(p.row, p.col)) {
      throw unprocessable("junction " + point_string(p.row, p.col) + " lies outside the generation region");
    }
  }
  if (r.pattern_raster) {
    if (r.pattern_raster->width() != size || r.pattern_raster->height() != size) {
      throw unprocessable("pattern raster must match the mask size");
    }
  }
  for (std::size_t k = 0; k < r.strokes.size(); ++k) {
    const auto& s = r.strokes[k];
    if (s.polygon.size() < 3) throw unprocessable("pattern stroke " + std::to_string(k) + " has fewer than 3 vertices");
    bool hit = false;
    for (int row = 0; row < size && !hit; ++row)
      for (int col = 0; col < size && !hit; ++col)
        hit = r.mask.at(row, col) && geo::point_in_polygon({col + 0.5, row + 0.5}, s.polygon);
    if (!hit) throw unprocessable("pattern stroke " + std::to_string(k) + " lies outside the generation region");
  }
}

GenerationResponse Service::generate(const GenerationRequest& r) const {
  validate(r);
  const auto t0 = std::chrono::steady_clock::now();
  const sampling::PatchSample sample = request_sample(r);
  const auto out = generator_.forward(checkpoint_.g_params, nn::generator_input<float>(sample, r.model_level));
  GenerationResponse resp;
  resp.raw = nn::get_channel(out, 0, 0);
  resp.composite = nn::composite(resp.raw, r.streets, r.mask);
  resp.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  resp.street_encoding = r.street_encoding;
  resp.raw_encoding = r.raw_encoding;
  resp.model_level = r.model_level;
  resp.seed = r.seed;

  std::vector<unsigned char> digest;
  auto append = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    digest.insert(digest.end(), b, b + n);
  };
  append(&r.model_level, sizeof r.model_level);
  append(&r.seed, sizeof r.seed);
  append(&r.binary_streets, sizeof r.binary_streets);
  for (const auto* g : {&r.streets, &r.elevation, &r.aspect}) append(g->data(), g->size() * sizeof(float));
  append(r.mask.grid.data(), r.mask.grid.size());
  for (const auto& p : r.junctions) append(&p, sizeof p);
  append(sample.pattern_guidance.data(), sample.pattern_guidance.size());
  resp.request_hash = codec::sha256_hex(digest);
  return resp;
}

json Service::health() const {
  return {{"status", "ok"}, {"model_level", checkpoint_.model_level}, {"checkpoint_hash", checkpoint_hash_}};
}

json Service::meta() const {
  json trace = json::array();
  for (const auto& t : generator_.trace(256)) {
    trace.push_back({{"layer", t.layer}, {"channels", t.channels}, {"height", t.height}, {"width", t.width}});
  }
  json generator_channels = {"context_streets", "elevation", "aspect", "mask", "noise"};
  if (checkpoint_.model_level >= 2) generator_channels.push_back("junctions");
  if (checkpoint_.model_level >= 3) generator_channels.push_back("pattern_guidance");
  json codes = json::object();
  for (int c = 0; c < geo::kPatternTypeCount; ++c) {
    codes[std::string(geo::to_string(static_cast<geo::PatternType>(c)))] = c;
  }
  return {{"model_level", checkpoint_.model_level},
          {"checkpoint_hash", checkpoint_hash_},
          {"iteration", checkpoint_.iteration},
          {"architecture",
           {{"generator", nn::to_json(checkpoint_.generator)},
            {"discriminator", nn::to_json(checkpoint_.discriminator)},
            {"generator_trace_256", trace},
            {"receptive_field_at_mid", checkpoint_.generator.receptive_field_at_mid()}}},
          {"channels",
           {{"generator", generator_channels},
            {"discriminator",
             {"street_image", "context_streets", "elevation", "aspect", "mask", "junctions", "pattern_guidance"}}}},
          {"pattern_legend", pattern_legend()},
          {"pattern_codes", codes},
          {"raster_encodings", {"png16", "png8", "f32"}},
          {"patch_size_multiple", checkpoint_.generator.downsample_factor()},
          {"map_loaded", map_.has_value()}};
}

Service::Reply Service::handle(const std::string& method, const std::string& path, const std::string& body) const {
  auto error = [](int status, const std::string& msg) { return Reply{status, json{{"error", msg}}.dump()}; };
  if (path == "/health" || path == "/meta") {
    if (method != "GET") return error(405, "use GET for " + path);
    return {200, (path == "/health" ? health() : meta()).dump()};
  }
  if (path == "/generate") {
    if (method != "POST") return error(405, "use POST for /generate");
    json j;
    try {
      j = json::parse(body);
    } catch (const json::exception& ex) {
      return error(400, std::string("request body is not valid JSON: ") + ex.what());
    }
    try {
      const auto req = request_from_json(j, map_ ? &*map_ : nullptr);
      return {200, response_to_json(generate(req)).dump()};
    } catch (const RequestError& ex) {
      return error(ex.status(), ex.what());
    } catch (const Error& ex) {
      return error(500, ex.what());
    }
  }
  return error(404, "no route for " + path);
}

struct HttpServer::Impl {
  const Service& service;
  httplib::Server server;
  std::thread thread;

  explicit Impl(const Service& s) : service(s) {
    server.set_payload_max_length(512u << 20);
    auto route = [this](const httplib::Request& req, httplib::Response& res) {
      const auto reply = service.handle(req.method, req.path, req.body);
      res.status = reply.status;
      res.set_content(reply.body, "application/json");
    };
    server.Get(".*", route);
    server.Post(".*", route);
    server.Put(".*", route);
    server.Delete(".*", route);
    server.Patch(".*", route);
  }
};

HttpServer::HttpServer(const Service& service) : impl_(std::make_unique<Impl>(service)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw Error("cannot bind " + host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    throw Error("cannot bind " + host + ":" + std::to_string(port));
  }
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void HttpServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

void HttpServer::run(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw Error("cannot serve on " + host + ":" + std::to_string(port));
}

}  // namespace streetgen::serve
