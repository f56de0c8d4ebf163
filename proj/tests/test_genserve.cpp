#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <httplib.h>

#include <cmath>
#include <cstring>

#include "streetgen/genserve.hpp"
#include "streetgen/synthcity.hpp"
#include "support.hpp"

using namespace streetgen;
using namespace streetgen::serve;
using json = nlohmann::json;

namespace {

constexpr int kSize = 32;

nn::Checkpoint small_checkpoint(int level, std::uint64_t seed = 1) {
  return nn::Checkpoint::fresh(nn::GeneratorSpec::standard(level, 4), nn::DiscriminatorSpec::standard(4, kSize), seed);
}

sampling::Mask box_mask(int size, int r0, int c0, int r1, int c1) {
  sampling::Mask m{ByteGrid(size, size, 0)};
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) m.grid(r, c) = 1;
  return m;
}

GenerationRequest make_request(int level, Rng& rng) {
  GenerationRequest r;
  r.model_level = level;
  r.seed = 5;
  r.mask = box_mask(kSize, 6, 6, 26, 26);
  r.streets = FloatGrid(kSize, kSize);
  for (float& v : r.streets.values()) v = rng.uniform() < 0.25 ? 0.7f : 0.0f;
  r.elevation = FloatGrid(kSize, kSize);
  for (float& v : r.elevation.values()) v = static_cast<float>(rng.uniform(20, 40));
  r.aspect = FloatGrid(kSize, kSize);
  for (float& v : r.aspect.values()) v = static_cast<float>(rng.uniform(0, 359));
  if (level >= 2) r.junctions = {{10, 10}, {20, 15}};
  if (level >= 3) r.strokes.push_back({{{6, 6}, {26, 6}, {26, 26}, {6, 26}}, geo::PatternType::medieval});
  return r;
}

bool context_bit_equal(const FloatGrid& composite, const FloatGrid& context, const sampling::Mask& mask) {
  for (std::size_t i = 0; i < composite.size(); ++i) {
    if (mask.grid.data()[i]) continue;
    if (std::memcmp(&composite.data()[i], &context.data()[i], sizeof(float)) != 0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("raster codecs") {
  Rng rng(1);
  FloatGrid g(13, 7);
  for (float& v : g.values()) v = static_cast<float>(rng.uniform(-3, 9));
  SUBCASE("f32 is exact") {
    RasterEncoding e;
    const auto back = decode_raster(encode_raster(g, {"f32", 1, 0}), &e);
    CHECK(back == g);
    CHECK(e.kind == "f32");
  }
  SUBCASE("png16 quantizes within half a step") {
    const RasterEncoding e{"png16", 12.0f, -3.0f};
    const auto back = decode_raster(encode_raster(g, e));
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::abs(back.data()[i] - g.data()[i]) <= 12.0 / 65535.0);
    // Decoded values survive a second round trip unchanged.
    CHECK(decode_raster(encode_raster(back, e)) == back);
  }
  SUBCASE("png8") {
    FloatGrid b(4, 4, 0.0f);
    b(1, 2) = 1.0f;
    CHECK(decode_raster(encode_raster(b, {"png8", 1, 0})) == b);
  }
  SUBCASE("masks and codes") {
    const auto m = box_mask(16, 2, 3, 9, 11);
    CHECK(decode_mask(encode_mask(m)).grid == m.grid);
    ByteGrid codes(5, 5, 0);
    codes(1, 1) = 3;
    codes(4, 0) = 5;
    CHECK(decode_codes(encode_codes(codes)) == codes);
    FloatGrid bad(2, 2, 9.0f);
    try {
      decode_codes(encode_raster(bad, {"png8", 255, 0}));
      FAIL("expected an error");
    } catch (const RequestError& e) {
      CHECK(e.status() == 422);
    }
  }
  SUBCASE("malformed payloads") {
    auto expect400 = [](const json& j) {
      try {
        decode_raster(j);
        FAIL("expected an error");
      } catch (const RequestError& e) {
        CHECK(e.status() == 400);
      }
    };
    expect400(json{{"encoding", "png16"}, {"data", "not base64 !!"}});
    expect400(json{{"encoding", "tiff"}, {"data", ""}});
    expect400(json{{"encoding", "f32"}, {"width", 3}, {"height", 3}, {"data", "AAAA"}});
    expect400(json{{"data", "AAAA"}});
    auto eight = encode_raster(g, {"png8", 12, -3});
    eight["encoding"] = "png16";
    expect400(eight);
    FloatGrid nan(1, 1, std::nanf(""));
    expect400(encode_raster(nan, {"f32", 1, 0}));
  }
}

TEST_CASE("request JSON round trip") {
  Rng rng(2);
  auto r = make_request(3, rng);
  r.street_encoding = {"png16", 1.0f, 0.0f};
  r.streets = decode_raster(encode_raster(r.streets, r.street_encoding));
  const auto back = request_from_json(request_to_json(r));
  CHECK(back.model_level == 3);
  CHECK(back.seed == 5);
  CHECK(back.streets == r.streets);
  CHECK(back.elevation == r.elevation);
  CHECK(back.aspect == r.aspect);
  CHECK(back.mask.grid == r.mask.grid);
  REQUIRE(back.strokes.size() == 1);
  CHECK(back.strokes[0].polygon == r.strokes[0].polygon);
  CHECK(back.strokes[0].type == geo::PatternType::medieval);
  CHECK(back.binary_streets);

  CHECK_THROWS_AS(request_from_json(json::array()), RequestError);
  auto j = request_to_json(r);
  j.erase("model_level");
  CHECK_THROWS_AS(request_from_json(j), RequestError);
  j = request_to_json(r);
  j["raw_encoding"] = "jpeg";
  CHECK_THROWS_AS(request_from_json(j), RequestError);
  j = request_to_json(r);
  j["patterns"][0]["type"] = "spiral";
  try {
    request_from_json(j);
    FAIL("expected an error");
  } catch (const RequestError& e) {
    CHECK(e.status() == 422);
    CHECK(std::string(e.what()).find("spiral") != std::string::npos);
  }
}

TEST_CASE("guidance rendering") {
  Rng rng(3);
  auto r = make_request(3, rng);
  r.strokes = {{{{6, 6}, {16, 6}, {16, 26}, {6, 26}}, geo::PatternType::irregular_grid},
               {{{12, 6}, {26, 6}, {26, 26}, {12, 26}}, geo::PatternType::gated_compound}};
  const auto g = render_guidance(r);
  for (int row = 0; row < kSize; ++row)
    for (int col = 0; col < kSize; ++col) {
      unsigned expected = 0;
      if (r.mask.at(row, col)) {
        const double x = col + 0.5;
        if (x > 12 && x < 26) expected = static_cast<unsigned>(geo::PatternType::gated_compound);
        else if (x > 6 && x < 16) expected = static_cast<unsigned>(geo::PatternType::irregular_grid);
      }
      CHECK(g(row, col) == expected);
    }
  ByteGrid painted(kSize, kSize, 2);
  r.pattern_raster = painted;
  const auto p = render_guidance(r);
  for (int row = 0; row < kSize; ++row)
    for (int col = 0; col < kSize; ++col) CHECK(p(row, col) == (r.mask.at(row, col) ? 2 : 0));
}

TEST_CASE("request sample satisfies the masking invariants") {
  Rng rng(4);
  for (int level : {1, 2, 3}) {
    auto r = make_request(level, rng);
    const auto s = request_sample(r);
    CHECK_NOTHROW(s.validate());
    CHECK(s.model_level == level);
    for (std::size_t i = 0; i < s.mask.grid.size(); ++i) {
      if (s.mask.grid.data()[i]) continue;
      CHECK(s.noise.data()[i] == 0.0f);
      CHECK(s.junction_channel.data()[i] == 0.0f);
      CHECK(s.pattern_guidance.data()[i] == 0);
      const float v = r.streets.data()[i];
      CHECK(s.context_streets.data()[i] == (v > 0.0f ? 1.0f : 0.0f));
    }
    if (level >= 2) {
      CHECK(s.junction_channel(10, 10) == 1.0f);
      CHECK(s.junction_channel(20, 15) == 1.0f);
    }
    r.binary_streets = false;
    const auto raw = request_sample(r);
    for (std::size_t i = 0; i < s.mask.grid.size(); ++i)
      if (!s.mask.grid.data()[i]) CHECK(raw.context_streets.data()[i] == r.streets.data()[i]);
  }
}

TEST_CASE("health, meta and legend") {
  const Service svc(small_checkpoint(3));
  const auto h = svc.health();
  CHECK(h.at("status") == "ok");
  CHECK(h.at("model_level") == 3);
  CHECK(h.at("checkpoint_hash").get<std::string>().size() == 64);
  const auto m = svc.meta();
  CHECK(m.at("channels").at("generator").size() == 7);
  CHECK(m.at("architecture").at("receptive_field_at_mid") == 255);
  CHECK(m.at("patch_size_multiple") == 4);
  CHECK(m.at("map_loaded") == false);
  const auto legend = pattern_legend();
  for (auto t : {geo::PatternType::orthogonal_grid, geo::PatternType::irregular_grid,
                 geo::PatternType::linear_development, geo::PatternType::medieval, geo::PatternType::gated_compound}) {
    const std::string name(geo::to_string(t));
    REQUIRE(legend.contains(name));
    CHECK(legend.at(name).at("hex").get<std::string>().size() == 7);
    CHECK(m.at("pattern_codes").at(name) == static_cast<unsigned>(t));
  }
  CHECK(legend.at("linear_development").at("color") == "green");
  CHECK(legend.at("gated_compound").at("color") == "yellow");
  CHECK(legend.at("medieval").at("color") == "magenta");
  CHECK(legend.at("irregular_grid").at("color") == "red");
  CHECK(legend.at("orthogonal_grid").at("color") == "orange");
  CHECK(legend.at("orthogonal_grid").at("hex") == "#ffa500");
  CHECK(m.at("pattern_legend") == legend);

  auto bad = small_checkpoint(1);
  bad.g_params.at("g.enc0.w").value[0] = std::nanf("");
  CHECK_THROWS_AS(Service{bad}, Error);
}

TEST_CASE("validation") {
  Rng rng(5);
  const Service svc(small_checkpoint(2));
  auto expect422 = [&](const GenerationRequest& r, const std::string& needle) {
    try {
      svc.validate(r);
      FAIL("expected an error");
    } catch (const RequestError& e) {
      CHECK(e.status() == 422);
      CHECK_MESSAGE(std::string(e.what()).find(needle) != std::string::npos, e.what());
    }
  };
  auto r = make_request(2, rng);
  CHECK_NOTHROW(svc.validate(r));
  auto outside = r;
  outside.junctions.push_back({2, 30});
  expect422(outside, "(2, 30)");
  auto beyond = r;
  beyond.junctions.push_back({40, 3});
  expect422(beyond, "(40, 3)");
  auto none = r;
  none.junctions.clear();
  CHECK_NOTHROW(svc.validate(none));
  CHECK_NOTHROW(svc.generate(none));
  auto level = make_request(3, rng);
  expect422(level, "level");
  auto empty = r;
  empty.mask = box_mask(kSize, 0, 0, 0, 0);
  empty.junctions.clear();
  expect422(empty, "no generation pixels");
  auto odd = r;
  odd.mask = box_mask(30, 5, 5, 20, 20);
  expect422(odd, "multiple of 4");
  auto shape = r;
  shape.elevation = FloatGrid(kSize, kSize - 4);
  expect422(shape, "match");

  const Service svc3(small_checkpoint(3));
  auto s3 = make_request(3, rng);
  s3.strokes.push_back({{{0, 0}, {3, 0}, {3, 3}}, geo::PatternType::medieval});
  try {
    svc3.validate(s3);
    FAIL("expected an error");
  } catch (const RequestError& e) {
    CHECK(e.status() == 422);
    CHECK(std::string(e.what()).find("stroke 1") != std::string::npos);
  }
  s3.strokes.back().polygon.pop_back();
  CHECK_THROWS_AS(svc3.validate(s3), RequestError);
}

TEST_CASE("generation is deterministic and keeps the context exact") {
  Rng rng(6);
  for (int level : {1, 2, 3}) {
    const Service svc(small_checkpoint(level, 10 + level));
    const auto r = make_request(level, rng);
    const auto a = svc.generate(r), b = svc.generate(r);
    CHECK(a.raw == b.raw);
    CHECK(a.composite == b.composite);
    CHECK(a.request_hash == b.request_hash);
    CHECK(context_bit_equal(a.composite, r.streets, r.mask));
    for (int row = 0; row < kSize; ++row)
      for (int col = 0; col < kSize; ++col)
        if (r.mask.at(row, col)) CHECK(a.composite(row, col) == a.raw(row, col));
    for (float v : a.raw.values()) CHECK((v >= 0.0f && v <= 1.0f));
    auto other = r;
    other.seed = 6;
    const auto c = svc.generate(other);
    CHECK(c.request_hash != a.request_hash);
    CHECK_FALSE(c.raw == a.raw);
  }
}

TEST_CASE("moving a junction changes the infill only") {
  Rng rng(7);
  const Service svc(small_checkpoint(2, 3));
  auto r = make_request(2, rng);
  r.junctions = {{8, 8}};
  const auto a = svc.generate(r);
  r.junctions = {{8, 24}};
  const auto b = svc.generate(r);
  CHECK(context_bit_equal(a.composite, r.streets, r.mask));
  CHECK(context_bit_equal(b.composite, r.streets, r.mask));
  double diff = 0;
  for (int row = 0; row < kSize; ++row)
    for (int col = 0; col < kSize; ++col)
      if (r.mask.at(row, col)) diff += std::abs(a.raw(row, col) - b.raw(row, col));
  CHECK(diff > 0.0);
  CHECK(a.request_hash != b.request_hash);
}

TEST_CASE("handle routes requests") {
  Rng rng(8);
  const Service svc(small_checkpoint(1));
  CHECK(svc.handle("GET", "/health", "").status == 200);
  CHECK(svc.handle("POST", "/health", "").status == 405);
  CHECK(svc.handle("GET", "/generate", "").status == 405);
  CHECK(svc.handle("GET", "/nothing", "").status == 404);
  CHECK(svc.handle("POST", "/generate", "{not json").status == 400);
  const auto r = make_request(1, rng);
  const auto ok = svc.handle("POST", "/generate", request_to_json(r).dump());
  REQUIRE(ok.status == 200);
  const auto resp = response_from_json(json::parse(ok.body));
  CHECK(resp.model_level == 1);
  CHECK(resp.composite.width() == kSize);
  auto bad = r;
  bad.junctions = {{1, 1}};
  const auto reply = svc.handle("POST", "/generate", request_to_json(bad).dump());
  CHECK(reply.status == 422);
  CHECK(json::parse(reply.body).at("error").get<std::string>().find("(1, 1)") != std::string::npos);
}

TEST_CASE("context survives the JSON path bit for bit") {
  Rng rng(9);
  const Service svc(small_checkpoint(1));
  for (const char* kind : {"png16", "f32"}) {
    auto r = make_request(1, rng);
    r.street_encoding = {kind, 1.0f, 0.0f};
    r.raw_encoding = kind;
    const auto body = request_to_json(r).dump();
    const auto parsed = request_from_json(json::parse(body));
    const auto reply = svc.handle("POST", "/generate", body);
    REQUIRE(reply.status == 200);
    const auto resp = response_from_json(json::parse(reply.body));
    CHECK(context_bit_equal(resp.composite, parsed.streets, parsed.mask));
    CHECK(resp.raw_encoding == kind);
  }
}

TEST_CASE("map references") {
  synth::TiledLayout layout;
  layout.width = layout.height = 200.0;
  layout.rows = layout.cols = 1;
  layout.seed = 4;
  auto map = synth::render_map(synth::synth_map(synth::make_tiled_spec(layout)));
  const Service svc(small_checkpoint(1), map);
  CHECK(svc.meta().at("map_loaded") == true);
  json j{{"model_level", 1}, {"seed", 3}, {"mask", encode_mask(box_mask(kSize, 4, 4, 20, 20))},
         {"map_origin", {10, 20}}, {"size", kSize}};
  const auto reply = svc.handle("POST", "/generate", j.dump());
  REQUIRE(reply.status == 200);
  const auto req = request_from_json(j, &map);
  CHECK(req.streets == map.streets.crop(10, 20, kSize, kSize));
  CHECK(req.elevation == map.elevation.crop(10, 20, kSize, kSize));
  const auto resp = response_from_json(json::parse(reply.body));
  CHECK(context_bit_equal(resp.composite, req.streets, req.mask));
  j["map_origin"] = {90, 90};
  CHECK(svc.handle("POST", "/generate", j.dump()).status == 422);
  const Service nomap(small_checkpoint(1));
  j["map_origin"] = {10, 20};
  CHECK(nomap.handle("POST", "/generate", j.dump()).status == 422);
}

TEST_CASE("HTTP round trip") {
  Rng rng(10);
  const Service svc(small_checkpoint(2));
  HttpServer server(svc);
  const int port = server.start("127.0.0.1", 0);
  REQUIRE(port > 0);
  httplib::Client client("127.0.0.1", port);
  client.set_read_timeout(30, 0);

  const auto health = client.Get("/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(json::parse(health->body).at("model_level") == 2);
  const auto meta = client.Get("/meta");
  REQUIRE(meta);
  CHECK(json::parse(meta->body).contains("pattern_legend"));

  const auto r = make_request(2, rng);
  const auto body = request_to_json(r).dump();
  const auto first = client.Post("/generate", body, "application/json");
  const auto second = client.Post("/generate", body, "application/json");
  REQUIRE(first);
  REQUIRE(second);
  CHECK(first->status == 200);
  const auto a = response_from_json(json::parse(first->body));
  const auto b = response_from_json(json::parse(second->body));
  CHECK(a.composite == b.composite);
  CHECK(a.raw == b.raw);
  CHECK(a.request_hash == svc.generate(request_from_json(json::parse(body))).request_hash);

  const auto missing = client.Get("/nope");
  REQUIRE(missing);
  CHECK(missing->status == 404);
  const auto wrong = client.Get("/generate");
  REQUIRE(wrong);
  CHECK(wrong->status == 405);
  const auto junk = client.Post("/generate", "[1,2", "application/json");
  REQUIRE(junk);
  CHECK(junk->status == 400);
  server.stop();
}
