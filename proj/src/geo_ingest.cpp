#include "streetgen/geo_ingest.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <unordered_map>

#include "streetgen/archive.hpp"
#include "streetgen/codec.hpp"

namespace streetgen::geo {

namespace {

constexpr std::array<std::string_view, kRoadClassCount> kRoadClassNames{
    "motorway", "primary", "secondary", "tertiary", "residential"};

constexpr std::array<std::string_view, kPatternTypeCount> kPatternNames{
    "unlabeled", "linear_development", "gated_compound", "medieval", "irregular_grid",
    "orthogonal_grid"};

double cross(const Point& a, const Point& b) { return a.x * b.y - a.y * b.x; }
Point sub(const Point& a, const Point& b) { return {a.x - b.x, a.y - b.y}; }
double dot(const Point& a, const Point& b) { return a.x * b.x + a.y * b.y; }

void stamp_disk(FloatGrid& g, Pixel p, int radius, float value) {
  for (int dr = -radius; dr <= radius; ++dr) {
    for (int dc = -radius; dc <= radius; ++dc) {
      if (dr * dr + dc * dc > radius * radius) continue;
      const int r = p.row + dr;
      const int c = p.col + dc;
      if (g.contains(r, c) && g(r, c) < value) g(r, c) = value;
    }
  }
}

}  // namespace

std::string_view to_string(RoadClass c) { return kRoadClassNames[static_cast<int>(c)]; }

std::optional<RoadClass> parse_road_class(std::string_view s) {
  for (int i = 0; i < kRoadClassCount; ++i) {
    if (s == kRoadClassNames[i]) return static_cast<RoadClass>(i);
  }
  if (s == "motorway_link") return RoadClass::motorway;
  if (s == "trunk" || s == "trunk_link" || s == "primary_link") return RoadClass::primary;
  if (s == "secondary_link") return RoadClass::secondary;
  if (s == "tertiary_link") return RoadClass::tertiary;
  if (s == "unclassified" || s == "living_street" || s == "service") return RoadClass::residential;
  return std::nullopt;
}

std::string_view to_string(PatternType t) { return kPatternNames[static_cast<int>(t)]; }

std::optional<PatternType> parse_pattern_type(std::string_view s) {
  for (int i = 0; i < kPatternTypeCount; ++i) {
    if (s == kPatternNames[i]) return static_cast<PatternType>(i);
  }
  return std::nullopt;
}

bool is_valid_pattern_code(unsigned code) { return code < kPatternTypeCount; }

void validate_segment(const StreetSegment& s, std::size_t index) {
  if (s.polyline.size() < 2) {
    throw Error("street segment #" + std::to_string(index) + " has " +
                std::to_string(s.polyline.size()) + " vertices (need at least 2)");
  }
  for (std::size_t i = 1; i < s.polyline.size(); ++i) {
    if (s.polyline[i] == s.polyline[i - 1]) {
      throw Error("street segment #" + std::to_string(index) + " repeats vertex " +
                  std::to_string(i));
    }
  }
}

Pixel Frame::pixel_of(const Point& p) const {
  return {static_cast<int>(std::floor(row_of(p.y))), static_cast<int>(std::floor(col_of(p.x)))};
}

void Frame::validate() const {
  if (!(resolution > 0.0) || !std::isfinite(resolution)) throw Error("frame resolution must be > 0");
  if (width <= 0 || height <= 0) {
    throw Error("empty frame (" + std::to_string(width) + "x" + std::to_string(height) + ")");
  }
}

std::vector<Pixel> trace_line(Pixel from, Pixel to) {
  std::vector<Pixel> out;
  int r = from.row, c = from.col;
  const int dr = std::abs(to.row - r), dc = std::abs(to.col - c);
  const int sr = r < to.row ? 1 : -1, sc = c < to.col ? 1 : -1;
  int err = dc - dr;
  out.reserve(static_cast<std::size_t>(std::max(dr, dc)) + 1);
  while (true) {
    out.push_back({r, c});
    if (r == to.row && c == to.col) break;
    const int e2 = 2 * err;
    if (e2 > -dr) {
      err -= dr;
      c += sc;
    }
    if (e2 < dc) {
      err += dc;
      r += sr;
    }
  }
  return out;
}

FloatGrid rasterize_streets(std::span<const StreetSegment> segments, const Frame& frame,
                            const RasterOptions& options) {
  frame.validate();
  for (int i = 1; i < kRoadClassCount; ++i) {
    if (!(options.intensity[i] < options.intensity[i - 1])) {
      throw Error("hierarchy intensities must strictly decrease with class rank");
    }
  }
  FloatGrid out(frame.width, frame.height, 0.0f);
  for (std::size_t i = 0; i < segments.size(); ++i) validate_segment(segments[i], i);

  for (const auto& seg : segments) {
    const int cls = static_cast<int>(seg.hierarchy);
    const float value = options.binary ? 1.0f : options.intensity[cls];
    const int radius = std::max(0, options.dilation_radius[cls]);
    for (std::size_t v = 1; v < seg.polyline.size(); ++v) {
      const Pixel a = frame.pixel_of(seg.polyline[v - 1]);
      const Pixel b = frame.pixel_of(seg.polyline[v]);
      // Skip pieces that cannot touch the frame.
      if (std::max(a.row, b.row) < -radius || std::min(a.row, b.row) >= frame.height + radius ||
          std::max(a.col, b.col) < -radius || std::min(a.col, b.col) >= frame.width + radius) {
        continue;
      }
      for (const Pixel& p : trace_line(a, b)) {
        if (radius == 0) {
          if (out.contains(p.row, p.col) && out(p.row, p.col) < value) out(p.row, p.col) = value;
        } else {
          stamp_disk(out, p, radius, value);
        }
      }
    }
  }
  return out;
}

FloatGrid compute_aspect(const FloatGrid& elevation, double resolution) {
  const int h = elevation.height(), w = elevation.width();
  if (h < 2 || w < 2) throw Error("compute_aspect: elevation must be at least 2x2 pixels");
  if (!(resolution > 0.0)) throw Error("compute_aspect: resolution must be > 0");
  for (std::size_t i = 0; i < elevation.size(); ++i) {
    if (!std::isfinite(elevation.data()[i])) {
      const int r = static_cast<int>(i / static_cast<std::size_t>(w));
      const int c = static_cast<int>(i % static_cast<std::size_t>(w));
      throw Error("compute_aspect: non-finite elevation at (" + std::to_string(r) + ", " +
                  std::to_string(c) + ")");
    }
  }
  FloatGrid out(w, h, kFlatAspect);
  auto z = [&](int r, int c) { return static_cast<double>(elevation(r, c)); };
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double dzdx = 0.0;  // toward east
      double dzdy = 0.0;  // toward north
      if (r > 0 && r < h - 1 && c > 0 && c < w - 1) {
        const double a = z(r - 1, c - 1), b = z(r - 1, c), cc = z(r - 1, c + 1);
        const double d = z(r, c - 1), f = z(r, c + 1);
        const double g = z(r + 1, c - 1), hh = z(r + 1, c), i = z(r + 1, c + 1);
        dzdx = ((cc + 2 * f + i) - (a + 2 * d + g)) / (8.0 * resolution);
        dzdy = ((a + 2 * b + cc) - (g + 2 * hh + i)) / (8.0 * resolution);
      } else {
        if (c == 0) {
          dzdx = (z(r, 1) - z(r, 0)) / resolution;
        } else if (c == w - 1) {
          dzdx = (z(r, w - 1) - z(r, w - 2)) / resolution;
        } else {
          dzdx = (z(r, c + 1) - z(r, c - 1)) / (2.0 * resolution);
        }
        // Row index grows southward.
        if (r == 0) {
          dzdy = (z(0, c) - z(1, c)) / resolution;
        } else if (r == h - 1) {
          dzdy = (z(h - 2, c) - z(h - 1, c)) / resolution;
        } else {
          dzdy = (z(r - 1, c) - z(r + 1, c)) / (2.0 * resolution);
        }
      }
      if (std::hypot(dzdx, dzdy) < 1e-9) continue;
      double deg = std::atan2(-dzdx, -dzdy) * 180.0 / std::numbers::pi;
      if (deg < 0.0) deg += 360.0;
      float v = static_cast<float>(deg);
      if (v >= 360.0f) v = 0.0f;
      out(r, c) = v;
    }
  }
  return out;
}

bool point_in_polygon(const Point& p, std::span<const Point> ring) {
  bool inside = false;
  const std::size_t n = ring.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point& a = ring[i];
    const Point& b = ring[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x) inside = !inside;
    }
  }
  return inside;
}

ByteGrid rasterize_pattern_annotation(std::span<const PatternPolygon> polygons, const Frame& frame) {
  frame.validate();
  ByteGrid out(frame.width, frame.height, static_cast<unsigned char>(PatternType::unlabeled));
  for (std::size_t k = 0; k < polygons.size(); ++k) {
    const auto& poly = polygons[k];
    if (poly.ring.size() < 3) {
      throw Error("pattern polygon #" + std::to_string(k) + " is degenerate (" +
                  std::to_string(poly.ring.size()) + " vertices)");
    }
    double minx = poly.ring[0].x, maxx = minx, miny = poly.ring[0].y, maxy = miny;
    for (const auto& p : poly.ring) {
      minx = std::min(minx, p.x);
      maxx = std::max(maxx, p.x);
      miny = std::min(miny, p.y);
      maxy = std::max(maxy, p.y);
    }
    const int r0 = std::max(0, static_cast<int>(std::floor(frame.row_of(maxy))) - 1);
    const int r1 = std::min(frame.height - 1, static_cast<int>(std::ceil(frame.row_of(miny))) + 1);
    const int c0 = std::max(0, static_cast<int>(std::floor(frame.col_of(minx))) - 1);
    const int c1 = std::min(frame.width - 1, static_cast<int>(std::ceil(frame.col_of(maxx))) + 1);
    const auto code = static_cast<unsigned char>(poly.type);
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        if (point_in_polygon(frame.center_of(r, c), poly.ring)) out(r, c) = code;
      }
    }
  }
  return out;
}

void MultiChannelMap::validate() const {
  frame.validate();
  auto check = [&](const char* name, int w, int h) {
    if (w != frame.width || h != frame.height) {
      std::ostringstream os;
      os << "channel dimension mismatch: '" << name << "' is " << w << "x" << h
         << ", frame is " << frame.width << "x" << frame.height;
      throw Error(os.str());
    }
  };
  check("streets", streets.width(), streets.height());
  check("elevation", elevation.width(), elevation.height());
  check("aspect", aspect.width(), aspect.height());
  check("pattern", pattern.width(), pattern.height());
  for (float v : streets.values()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw Error("streets channel value outside [0,1]");
  }
  for (float v : elevation.values()) {
    if (!std::isfinite(v)) throw Error("elevation channel has non-finite values");
  }
  for (float v : aspect.values()) {
    if (!(v == kFlatAspect || (v >= 0.0f && v < 360.0f))) {
      throw Error("aspect channel value outside {-1} U [0,360)");
    }
  }
  for (unsigned char v : pattern.values()) {
    if (!is_valid_pattern_code(v)) throw Error("pattern channel has invalid code " + std::to_string(v));
  }
  for (const auto& j : junctions) {
    if (!streets.contains(j.row, j.col)) throw Error("junction outside map bounds");
  }
}

MultiChannelMap assemble_map(FloatGrid streets, FloatGrid elevation, FloatGrid aspect,
                             ByteGrid pattern, const Frame& frame, const RasterOptions& options) {
  if (!streets.same_shape(elevation) || !streets.same_shape(aspect) ||
      streets.width() != pattern.width() || streets.height() != pattern.height()) {
    std::ostringstream os;
    os << "channel dimension mismatch: streets " << streets.width() << "x" << streets.height()
       << ", elevation " << elevation.width() << "x" << elevation.height() << ", aspect "
       << aspect.width() << "x" << aspect.height() << ", pattern " << pattern.width() << "x"
       << pattern.height();
    throw Error(os.str());
  }
  MultiChannelMap m;
  m.frame = frame;
  m.streets = std::move(streets);
  m.elevation = std::move(elevation);
  m.aspect = std::move(aspect);
  m.pattern = std::move(pattern);
  m.raster_options = options;
  m.validate();
  return m;
}

void save_map(const MultiChannelMap& map, const std::filesystem::path& path) {
  map.validate();
  Archive a;
  auto& meta = a.meta();
  meta["kind"] = "multi_channel_map";
  meta["origin"] = {map.frame.origin.x, map.frame.origin.y};
  meta["resolution"] = map.frame.resolution;
  meta["width"] = map.frame.width;
  meta["height"] = map.frame.height;
  meta["channels"] = {"streets", "elevation", "aspect", "pattern"};
  nlohmann::json table = nlohmann::json::object();
  nlohmann::json radii = nlohmann::json::object();
  for (int i = 0; i < kRoadClassCount; ++i) {
    table[std::string(kRoadClassNames[i])] = map.raster_options.intensity[i];
    radii[std::string(kRoadClassNames[i])] = map.raster_options.dilation_radius[i];
  }
  meta["hierarchy_intensity"] = table;
  meta["dilation_radius"] = radii;
  meta["street_encoding"] = map.raster_options.binary ? "binary" : "hierarchy";
  nlohmann::json codes = nlohmann::json::object();
  for (int i = 0; i < kPatternTypeCount; ++i) codes[std::string(kPatternNames[i])] = i;
  meta["pattern_codes"] = codes;
  a.put_grid("streets", map.streets);
  a.put_grid("elevation", map.elevation);
  a.put_grid("aspect", map.aspect);
  a.put_grid("pattern", map.pattern);
  if (!map.junctions.empty()) {
    std::vector<std::int32_t> flat;
    for (const auto& j : map.junctions) {
      flat.push_back(j.row);
      flat.push_back(j.col);
    }
    a.put_i32("junctions", {static_cast<std::int64_t>(map.junctions.size()), 2}, flat);
  }
  a.save(path);
}

MultiChannelMap load_map(const std::filesystem::path& path) {
  const Archive a = Archive::load(path);
  const auto& meta = a.meta();
  if (meta.value("kind", "") != "multi_channel_map") {
    throw Error("'" + path.string() + "' is not a multi-channel map container");
  }
  MultiChannelMap m;
  m.frame.origin = {meta.at("origin")[0].get<double>(), meta.at("origin")[1].get<double>()};
  m.frame.resolution = meta.at("resolution").get<double>();
  m.frame.width = meta.at("width").get<int>();
  m.frame.height = meta.at("height").get<int>();
  for (int i = 0; i < kRoadClassCount; ++i) {
    const std::string key(kRoadClassNames[i]);
    m.raster_options.intensity[i] = meta.at("hierarchy_intensity").at(key).get<float>();
    if (meta.contains("dilation_radius")) {
      m.raster_options.dilation_radius[i] = meta.at("dilation_radius").at(key).get<int>();
    }
  }
  m.raster_options.binary = meta.value("street_encoding", "hierarchy") == "binary";
  m.streets = a.get_float_grid("streets");
  m.elevation = a.get_float_grid("elevation");
  m.aspect = a.get_float_grid("aspect");
  m.pattern = a.get_byte_grid("pattern");
  if (a.has("junctions")) {
    const auto flat = a.get_i32("junctions");
    for (std::size_t i = 0; i + 1 < flat.size(); i += 2) m.junctions.push_back({flat[i], flat[i + 1]});
  }
  m.validate();
  return m;
}

std::vector<StreetSegment> node_network(std::span<const StreetSegment> segments, double tolerance) {
  struct Piece {
    Point a, b;
    RoadClass cls;
    std::vector<double> cuts;
  };
  std::vector<Piece> pieces;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    validate_segment(segments[i], i);
    for (std::size_t v = 1; v < segments[i].polyline.size(); ++v) {
      pieces.push_back({segments[i].polyline[v - 1], segments[i].polyline[v], segments[i].hierarchy, {}});
    }
  }
  if (pieces.empty()) return {};

  double total = 0.0;
  for (const auto& p : pieces) total += std::hypot(p.b.x - p.a.x, p.b.y - p.a.y);
  const double cell = std::max(10.0 * tolerance, total / static_cast<double>(pieces.size()));

  std::unordered_map<std::int64_t, std::vector<std::uint32_t>> buckets;
  auto key = [](std::int64_t i, std::int64_t j) { return (i << 32) ^ (j & 0xffffffff); };
  for (std::uint32_t k = 0; k < pieces.size(); ++k) {
    const auto& p = pieces[k];
    const auto i0 = static_cast<std::int64_t>(std::floor((std::min(p.a.x, p.b.x) - tolerance) / cell));
    const auto i1 = static_cast<std::int64_t>(std::floor((std::max(p.a.x, p.b.x) + tolerance) / cell));
    const auto j0 = static_cast<std::int64_t>(std::floor((std::min(p.a.y, p.b.y) - tolerance) / cell));
    const auto j1 = static_cast<std::int64_t>(std::floor((std::max(p.a.y, p.b.y) + tolerance) / cell));
    for (auto i = i0; i <= i1; ++i)
      for (auto j = j0; j <= j1; ++j) buckets[key(i, j)].push_back(k);
  }
  std::vector<std::uint64_t> pairs;
  for (const auto& [_, ids] : buckets) {
    for (std::size_t x = 0; x < ids.size(); ++x)
      for (std::size_t y = x + 1; y < ids.size(); ++y) {
        const auto lo = std::min(ids[x], ids[y]), hi = std::max(ids[x], ids[y]);
        pairs.push_back((static_cast<std::uint64_t>(lo) << 32) | hi);
      }
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());

  // Parameter along `p` of the point on it nearest `q`, if within tolerance.
  auto contact = [&](const Piece& p, const Point& q) -> std::optional<double> {
    const Point d = sub(p.b, p.a);
    const double len2 = dot(d, d);
    const double s = dot(sub(q, p.a), d) / len2;
    if (s < 0.0 || s > 1.0) return std::nullopt;
    const Point proj{p.a.x + s * d.x, p.a.y + s * d.y};
    if (std::hypot(q.x - proj.x, q.y - proj.y) > tolerance) return std::nullopt;
    return s;
  };

  for (auto pr : pairs) {
    Piece& p = pieces[pr >> 32];
    Piece& q = pieces[pr & 0xffffffffu];
    const Point d1 = sub(p.b, p.a), d2 = sub(q.b, q.a);
    const double denom = cross(d1, d2);
    const double len1 = std::sqrt(dot(d1, d1)), len2 = std::sqrt(dot(d2, d2));
    if (std::abs(denom) > 1e-12 * len1 * len2) {
      const Point w = sub(q.a, p.a);
      const double t = cross(w, d2) / denom;
      const double u = cross(w, d1) / denom;
      const double et = tolerance / len1, eu = tolerance / len2;
      if (t >= -et && t <= 1.0 + et && u >= -eu && u <= 1.0 + eu) {
        p.cuts.push_back(std::clamp(t, 0.0, 1.0));
        q.cuts.push_back(std::clamp(u, 0.0, 1.0));
      }
    }
    for (const Point& e : {q.a, q.b})
      if (auto s = contact(p, e)) p.cuts.push_back(*s);
    for (const Point& e : {p.a, p.b})
      if (auto s = contact(q, e)) q.cuts.push_back(*s);
  }

  // Quantized undirected key for dedup.
  auto qpt = [&](const Point& p) {
    return std::pair<std::int64_t, std::int64_t>{std::llround(p.x / tolerance), std::llround(p.y / tolerance)};
  };
  std::map<std::pair<std::pair<std::int64_t, std::int64_t>, std::pair<std::int64_t, std::int64_t>>,
           std::size_t>
      seen;
  std::vector<StreetSegment> out;
  for (auto& p : pieces) {
    const Point d = sub(p.b, p.a);
    const double len = std::sqrt(dot(d, d));
    std::vector<double> ts{0.0};
    std::sort(p.cuts.begin(), p.cuts.end());
    for (double t : p.cuts) {
      if (t * len > tolerance && (1.0 - t) * len > tolerance && (t - ts.back()) * len > tolerance) {
        ts.push_back(t);
      }
    }
    ts.push_back(1.0);
    for (std::size_t k = 1; k < ts.size(); ++k) {
      const Point a{p.a.x + ts[k - 1] * d.x, p.a.y + ts[k - 1] * d.y};
      const Point b = k + 1 == ts.size() ? p.b : Point{p.a.x + ts[k] * d.x, p.a.y + ts[k] * d.y};
      auto ka = qpt(a), kb = qpt(b);
      if (ka == kb) continue;
      if (kb < ka) std::swap(ka, kb);
      auto [it, inserted] = seen.try_emplace({ka, kb}, out.size());
      if (inserted) {
        out.push_back({{a, b}, p.cls});
      } else if (p.cls < out[it->second].hierarchy) {
        out[it->second].hierarchy = p.cls;
      }
    }
  }
  return out;
}

std::vector<StreetSegment> streets_from_geojson(const nlohmann::json& fc) {
  if (fc.value("type", "") != "FeatureCollection") throw Error("streets GeoJSON must be a FeatureCollection");
  std::vector<StreetSegment> out;
  auto add_line = [&](const nlohmann::json& coords, RoadClass cls) {
    StreetSegment s;
    s.hierarchy = cls;
    for (const auto& c : coords) {
      Point p{c.at(0).get<double>(), c.at(1).get<double>()};
      if (s.polyline.empty() || !(s.polyline.back() == p)) s.polyline.push_back(p);
    }
    out.push_back(std::move(s));
  };
  for (const auto& f : fc.at("features")) {
    const auto& props = f.value("properties", nlohmann::json::object());
    if (!props.contains("highway") || !props["highway"].is_string()) continue;
    const auto cls = parse_road_class(props["highway"].get<std::string>());
    if (!cls) continue;
    const auto& geom = f.at("geometry");
    const auto type = geom.at("type").get<std::string>();
    if (type == "LineString") {
      add_line(geom.at("coordinates"), *cls);
    } else if (type == "MultiLineString") {
      for (const auto& line : geom.at("coordinates")) add_line(line, *cls);
    }
  }
  return out;
}

nlohmann::json streets_to_geojson(std::span<const StreetSegment> segments) {
  nlohmann::json fc{{"type", "FeatureCollection"}, {"features", nlohmann::json::array()}};
  for (const auto& s : segments) {
    nlohmann::json coords = nlohmann::json::array();
    for (const auto& p : s.polyline) coords.push_back({p.x, p.y});
    fc["features"].push_back({{"type", "Feature"},
                              {"properties", {{"highway", std::string(to_string(s.hierarchy))}}},
                              {"geometry", {{"type", "LineString"}, {"coordinates", coords}}}});
  }
  return fc;
}

std::vector<PatternPolygon> patterns_from_geojson(const nlohmann::json& fc) {
  if (fc.value("type", "") != "FeatureCollection") throw Error("pattern GeoJSON must be a FeatureCollection");
  std::vector<PatternPolygon> out;
  for (const auto& f : fc.at("features")) {
    const auto& props = f.value("properties", nlohmann::json::object());
    if (!props.contains("pattern")) continue;
    const auto name = props["pattern"].get<std::string>();
    const auto type = parse_pattern_type(name);
    if (!type) throw Error("unknown pattern type '" + name + "'");
    const auto& geom = f.at("geometry");
    if (geom.at("type").get<std::string>() != "Polygon") continue;
    PatternPolygon poly;
    poly.type = *type;
    // Outer ring only.
    for (const auto& c : geom.at("coordinates").at(0)) {
      poly.ring.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
    }
    if (poly.ring.size() > 1 && poly.ring.front() == poly.ring.back()) poly.ring.pop_back();
    out.push_back(std::move(poly));
  }
  return out;
}

nlohmann::json patterns_to_geojson(std::span<const PatternPolygon> polygons) {
  nlohmann::json fc{{"type", "FeatureCollection"}, {"features", nlohmann::json::array()}};
  for (const auto& poly : polygons) {
    nlohmann::json ring = nlohmann::json::array();
    for (const auto& p : poly.ring) ring.push_back({p.x, p.y});
    if (!poly.ring.empty()) ring.push_back({poly.ring.front().x, poly.ring.front().y});
    fc["features"].push_back({{"type", "Feature"},
                              {"properties", {{"pattern", std::string(to_string(poly.type))}}},
                              {"geometry", {{"type", "Polygon"}, {"coordinates", {ring}}}}});
  }
  return fc;
}

FloatGrid load_dem_png(const std::filesystem::path& path, double lo, double hi) {
  const auto img = codec::decode_png(read_file_bytes(path));
  return codec::dequantize(img, static_cast<float>(hi - lo), static_cast<float>(lo));
}

}  // namespace streetgen::geo
