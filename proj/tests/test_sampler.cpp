#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>

#include "streetgen/archive.hpp"
#include "streetgen/rng.hpp"
#include "streetgen/sampler.hpp"

using namespace streetgen;
using namespace streetgen::sampling;
namespace fs = std::filesystem;

namespace {

geo::Frame frame_of(int n) {
  geo::Frame f;
  f.origin = {0.0, static_cast<double>(n)};
  f.resolution = 1.0;
  f.width = n;
  f.height = n;
  return f;
}

// Street pieces of a blocks x blocks grid with the given spacing, split at every node.
std::vector<geo::StreetSegment> grid_segments(int blocks, double spacing, double offset) {
  std::vector<geo::StreetSegment> out;
  for (int i = 0; i <= blocks; ++i) {
    for (int j = 0; j < blocks; ++j) {
      const double a = offset + i * spacing, b0 = offset + j * spacing, b1 = b0 + spacing;
      out.push_back({{{a, b0}, {a, b1}}, geo::RoadClass::residential});
      out.push_back({{{b0, a}, {b1, a}}, geo::RoadClass::residential});
    }
  }
  return out;
}

geo::MultiChannelMap grid_map(int n) {
  const auto f = frame_of(n);
  const auto segs = grid_segments(n / 16 - 1, 16.0, 8.5);
  auto streets = geo::rasterize_streets(segs, f);
  FloatGrid z(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) z(r, c) = static_cast<float>(100 + 0.5 * c + 0.25 * r);
  auto asp = geo::compute_aspect(z, 1.0);
  ByteGrid pat(n, n, 0);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n / 2; ++c) pat(r, c) = static_cast<unsigned char>(geo::PatternType::orthogonal_grid);
  auto m = geo::assemble_map(streets, z, asp, pat, f);
  m.junctions = extract_junctions(segs, f).points;
  return m;
}

Mask full_mask(int n, unsigned char v) { return Mask{ByteGrid(n, n, v)}; }

}  // namespace

TEST_CASE("patch origins") {
  SUBCASE("city-scale draw is pairwise distinct") {
    const auto o = choose_patch_origins(3000, 5000, 46856, 256, 1);
    CHECK(o.size() == 46856);
    CHECK(std::set<Pixel>(o.begin(), o.end()).size() == 46856);
    for (const auto& p : o) CHECK((p.row >= 0 && p.col >= 0 && p.row + 256 <= 5000 && p.col + 256 <= 3000));
  }
  SUBCASE("exact-size map has one patch") {
    const auto o = choose_patch_origins(256, 256, 1, 256, 4);
    REQUIRE(o.size() == 1);
    CHECK(o[0] == Pixel{0, 0});
  }
  SUBCASE("pigeonhole") {
    const auto n = distinct_origins(40, 30, 16);
    CHECK(n == 25u * 15u);
    try {
      choose_patch_origins(40, 30, n + 1, 16, 0);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find(std::to_string(n)) != std::string::npos);
    }
    CHECK(choose_patch_origins(40, 30, n, 16, 0).size() == n);
  }
  SUBCASE("deterministic and seed dependent") {
    CHECK(choose_patch_origins(500, 500, 50, 64, 9) == choose_patch_origins(500, 500, 50, 64, 9));
    CHECK(choose_patch_origins(500, 500, 50, 64, 9) != choose_patch_origins(500, 500, 50, 64, 10));
  }
}

TEST_CASE("crop_patches copies map windows") {
  const auto m = grid_map(96);
  const auto crops = crop_patches(m, 20, 32, 3);
  REQUIRE(crops.size() == 20);
  for (const auto& c : crops) {
    for (int r = 0; r < 32; ++r)
      for (int k = 0; k < 32; ++k) {
        CHECK(c.streets(r, k) == m.streets(c.origin.row + r, c.origin.col + k));
        CHECK(c.pattern(r, k) == m.pattern(c.origin.row + r, c.origin.col + k));
      }
  }
}

TEST_CASE("generate_mask") {
  SUBCASE("deterministic") {
    CHECK(generate_mask(64, 17).grid == generate_mask(64, 17).grid);
  }
  SUBCASE("unreachable area fails after bounded retries") {
    MaskOptions o;
    o.area = {0.999, 1.0};
    o.max_attempts = 200;
    CHECK_THROWS_AS(generate_mask(256, 1, o), Error);
  }
  SUBCASE("area stays in range and coverage spans the analysis axis") {
    double lo = 1.0, hi = 0.0;
    for (std::uint64_t s = 0; s < 10000; ++s) {
      const auto m = generate_mask(256, s);
      const double a = m.area_fraction();
      CHECK((a >= 0.1 - 0.02 && a <= 0.7 + 0.02));
      const double cov = context_coverage(m);
      lo = std::min(lo, cov);
      hi = std::max(hi, cov);
    }
    CHECK(lo < 0.33);
    CHECK(hi > 0.87);
    CHECK(lo >= 0.28);
    CHECK(hi <= 0.92);
  }
  SUBCASE("masks are unions of at most three rectangles") {
    for (std::uint64_t s = 0; s < 200; ++s) {
      const auto m = generate_mask(64, s);
      // A union of k axis-aligned rectangles has at most 4k convex corners; count
      // 2x2 windows with exactly one set pixel.
      int corners = 0;
      for (int r = -1; r < 64; ++r)
        for (int c = -1; c < 64; ++c) {
          int set = 0;
          for (int dr = 0; dr < 2; ++dr)
            for (int dc = 0; dc < 2; ++dc) {
              const int rr = r + dr, cc = c + dc;
              set += m.grid.contains(rr, cc) && m.at(rr, cc);
            }
          corners += set == 1;
        }
      CHECK(corners <= 12);
      CHECK(corners >= 4);
    }
  }
}

TEST_CASE("vector junction extraction") {
  const auto f = frame_of(100);
  SUBCASE("degree two is not a junction") {
    const std::vector<geo::StreetSegment> s{{{{10, 10}, {20, 10}}}, {{{20, 10}, {30, 20}}}};
    CHECK(extract_junctions(s, f).points.empty());
  }
  SUBCASE("plus crossing split at the center") {
    const std::vector<geo::StreetSegment> s{{{{40.5, 50.5}, {50.5, 50.5}}}, {{{50.5, 50.5}, {60.5, 50.5}}},
                                            {{{50.5, 40.5}, {50.5, 50.5}}}, {{{50.5, 50.5}, {50.5, 60.5}}}};
    const auto j = extract_junctions(s, f);
    REQUIRE(j.points.size() == 1);
    CHECK(j.points[0] == f.pixel_of({50.5, 50.5}));
    CHECK(j.source == JunctionSet::Source::extracted);
  }
  SUBCASE("4x4 block grid agrees with brute-force degree counting") {
    const auto segs = grid_segments(4, 20.0, 10.5);
    std::map<Pixel, int> degree;
    for (const auto& s : segs) {
      ++degree[f.pixel_of(s.polyline.front())];
      ++degree[f.pixel_of(s.polyline.back())];
    }
    std::set<Pixel> want;
    int interior = 0;
    for (const auto& [p, d] : degree) {
      if (d >= 3) want.insert(p);
      interior += d == 4;
    }
    CHECK(interior == 9);
    const auto got = extract_junctions(segs, f).points;
    CHECK(std::set<Pixel>(got.begin(), got.end()) == want);
    int got_interior = 0;
    for (const auto& p : got) got_interior += degree[p] == 4;
    CHECK(got_interior == 9);
  }
}

TEST_CASE("raster junction fallback finds a plus crossing") {
  FloatGrid g(21, 21, 0.0f);
  for (int i = 2; i < 19; ++i) g(10, i) = g(i, 10) = 1.0f;
  const auto j = extract_junctions(g);
  REQUIRE(j.points.size() == 1);
  CHECK(std::abs(j.points[0].row - 10) <= 1);
  CHECK(std::abs(j.points[0].col - 10) <= 1);
}

TEST_CASE("retain_junctions") {
  const int n = 40;
  Mask mask = full_mask(n, 0);
  for (int r = 5; r < 35; ++r)
    for (int c = 5; c < 35; ++c) mask.grid(r, c) = 1;
  JunctionSet js;
  for (int i = 0; i < 10; ++i) js.points.push_back({7 + 3 * i, 8 + 2 * i});
  js.points.push_back({1, 1});  // outside the mask
  auto lit = [](const FloatGrid& g) { return std::count(g.values().begin(), g.values().end(), 1.0f); };
  CHECK(lit(retain_junctions(js, mask, 1.0, 1, false)) == 10);
  CHECK(lit(retain_junctions(js, mask, 0.0, 1, false)) == 0);
  CHECK(lit(retain_junctions(js, mask, 0.6, 1, false)) == 6);
  CHECK(retained_count(10, 0.6) == 6);
  CHECK(retained_count(5, 0.5) == 3);
  CHECK(retained_count(10, 0.25) == 3);
  const auto all = retain_junctions(js, mask, 1.0, 1, true);
  CHECK(all(1, 1) == 0.0f);
  ByteGrid boxes(n, n, 0);
  for (int i = 0; i < 10; ++i)
    for (int dr = -1; dr <= 1; ++dr)
      for (int dc = -1; dc <= 1; ++dc) boxes(js.points[i].row + dr, js.points[i].col + dc) = 1;
  long want = 0;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      want += boxes(r, c) && mask.at(r, c);
      CHECK((all(r, c) == 1.0f) == (boxes(r, c) && mask.at(r, c)));
    }
  CHECK(lit(all) == want);
  SUBCASE("selection is uniform") {
    std::map<Pixel, int> hits;
    const int trials = 4000;
    for (int s = 0; s < trials; ++s) {
      const auto g = retain_junctions(js, mask, 0.3, static_cast<std::uint64_t>(s), false);
      for (int i = 0; i < 10; ++i) hits[js.points[i]] += g(js.points[i].row, js.points[i].col) > 0;
    }
    for (const auto& [p, h] : hits) CHECK(std::abs(h / double(trials) - 0.3) < 0.04);
  }
}

TEST_CASE("noise channel") {
  CHECK(make_noise_channel(full_mask(32, 0), 5) == FloatGrid(32, 32, 0.0f));
  const auto m = generate_mask(64, 3);
  CHECK(make_noise_channel(m, 8) == make_noise_channel(m, 8));
  CHECK_FALSE(make_noise_channel(m, 8) == make_noise_channel(m, 9));
  const auto big = make_noise_channel(full_mask(1000, 1), 21);
  double sum = 0.0;
  for (float v : big.values()) {
    sum += v;
    CHECK_MESSAGE((v >= 0.0f && v < 1.0f), v);
  }
  CHECK(std::abs(sum / big.size() - 0.5) < 0.005);
}

TEST_CASE("build_sample channel selection") {
  const auto map = grid_map(96);
  const auto mask = generate_mask(64, 2);
  SUBCASE("level 1 has no guidance") {
    const auto s = build_sample(map, {10, 10}, mask, 1.0, 1, 4);
    CHECK(s.junction_channel == FloatGrid(64, 64, 0.0f));
    CHECK(s.pattern_guidance == ByteGrid(64, 64, 0));
  }
  SUBCASE("level 2 has junctions but no pattern") {
    const auto s = build_sample(map, {10, 10}, mask, 1.0, 2, 4);
    CHECK(s.pattern_guidance == ByteGrid(64, 64, 0));
    CHECK_FALSE(s.mask_junctions.empty());
    for (const auto& p : s.mask_junctions) CHECK(s.junction_channel(p.row, p.col) == 1.0f);
  }
  SUBCASE("level 3 pattern is the annotation restricted to the mask") {
    const auto s = build_sample(map, {10, 20}, mask, 0.5, 3, 4);
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 64; ++c) {
        const bool ortho = map.pattern(10 + r, 20 + c) == static_cast<unsigned char>(geo::PatternType::orthogonal_grid);
        CHECK((s.pattern_guidance(r, c) != 0) == (ortho && mask.at(r, c)));
      }
  }
  SUBCASE("out of bounds origin") {
    CHECK_THROWS_AS(build_sample(map, {40, 0}, mask, 1.0, 1, 4), Error);
    CHECK_THROWS_AS(build_sample(map, {-1, 0}, mask, 1.0, 1, 4), Error);
    CHECK_THROWS_AS(build_sample(map, {0, 0}, mask, 1.0, 4, 4), Error);
  }
}

TEST_CASE("masking invariants hold on random samples") {
  const auto map = grid_map(96);
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto mask = generate_mask(32, rng.next());
    const Pixel o{static_cast<int>(rng.below(65)), static_cast<int>(rng.below(65))};
    const auto s = build_sample(map, o, mask, rng.uniform(), 1 + static_cast<int>(rng.below(3)), rng.next());
    for (int r = 0; r < 32; ++r)
      for (int c = 0; c < 32; ++c) {
        const bool m = mask.at(r, c);
        if (m) CHECK(s.context_streets(r, c) == 0.0f);
        if (!m) {
          CHECK(s.noise(r, c) == 0.0f);
          CHECK(s.junction_channel(r, c) == 0.0f);
          CHECK(s.pattern_guidance(r, c) == 0);
          CHECK(s.context_streets(r, c) == s.ground_truth_streets(r, c));
        }
      }
    CHECK_NOTHROW(s.validate());
  }
}

TEST_CASE("context coverage counts context pixels") {
  CHECK(context_coverage(full_mask(16, 1)) == 0.0);
  CHECK(context_coverage(full_mask(16, 0)) == 1.0);
  Mask half = full_mask(16, 0);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 16; ++c) half.grid(r, c) = 1;
  CHECK(context_coverage(half) == 0.5);
}

TEST_CASE("retention policies") {
  CHECK(Retention::parse("rand").random);
  CHECK(Retention::parse("30").fraction == doctest::Approx(0.3));
  CHECK(Retention::parse("0.45").fraction == doctest::Approx(0.45));
  CHECK_THROWS_AS(Retention::parse("abc"), Error);
  const auto r = Retention::parse("rand");
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const double f = r.draw(s);
    CHECK((f >= 0.1 && f <= 0.9));
  }
}

TEST_CASE("datasets are byte-identical for equal seeds") {
  const auto map = grid_map(96);
  DatasetConfig cfg;
  cfg.count = 12;
  cfg.size = 32;
  cfg.model_level = 3;
  cfg.seed = 77;
  const auto a = fs::temp_directory_path() / "streetgen_ds_a", b = fs::temp_directory_path() / "streetgen_ds_b";
  fs::remove_all(a);
  fs::remove_all(b);
  write_dataset(map, "h", cfg, a);
  write_dataset(map, "h", cfg, b);
  CHECK(read_file_bytes(a / "manifest.json") == read_file_bytes(b / "manifest.json"));
  for (int i = 0; i < 12; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "records/%06d.bin", i);
    CHECK(read_file_bytes(a / name) == read_file_bytes(b / name));
  }
  const auto ds = Dataset::load(a);
  REQUIRE(ds.samples.size() == 12);
  CHECK(ds.model_level() == 3);
  const auto mem = make_samples(map, cfg);
  for (int i = 0; i < 12; ++i) {
    CHECK(ds.samples[i].context_streets == mem[i].context_streets);
    CHECK(ds.samples[i].junction_channel == mem[i].junction_channel);
    CHECK(ds.samples[i].pattern_guidance == mem[i].pattern_guidance);
    CHECK(ds.samples[i].mask.grid == mem[i].mask.grid);
    CHECK(ds.samples[i].mask_junctions == mem[i].mask_junctions);
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("rerender_junctions keeps a subset of the mask junctions") {
  const auto map = grid_map(96);
  auto s = build_sample(map, {0, 0}, full_mask(64, 1), 1.0, 2, 1);
  const auto full = s.junction_channel;
  rerender_junctions(s, 0.3, 5, true);
  for (std::size_t i = 0; i < full.size(); ++i) {
    if (s.junction_channel.data()[i] > 0) CHECK(full.data()[i] > 0);
  }
  CHECK_NOTHROW(s.validate());
}
