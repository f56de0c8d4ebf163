#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "streetgen/grid.hpp"

namespace streetgen {

/// Pixel coordinate inside a raster or patch.
struct Pixel {
  int row = 0;
  int col = 0;
  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

}  // namespace streetgen

namespace streetgen::geo {

/// Map coordinates in meters, local metric frame, y grows northward.
struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// Road classes in decreasing rank.
enum class RoadClass : std::uint8_t { motorway = 0, primary, secondary, tertiary, residential };
inline constexpr int kRoadClassCount = 5;

std::string_view to_string(RoadClass c);
/// Accepts the five class names plus common OSM highway variants
/// (trunk, *_link, unclassified, living_street, service).
std::optional<RoadClass> parse_road_class(std::string_view s);

/// Stored as u8 codes in the pattern channel; unlabeled is background (0).
enum class PatternType : std::uint8_t {
  unlabeled = 0,
  linear_development = 1,
  gated_compound = 2,
  medieval = 3,
  irregular_grid = 4,
  orthogonal_grid = 5,
};
inline constexpr int kPatternTypeCount = 6;

std::string_view to_string(PatternType t);
std::optional<PatternType> parse_pattern_type(std::string_view s);
bool is_valid_pattern_code(unsigned code);

struct StreetSegment {
  std::vector<Point> polyline;
  RoadClass hierarchy = RoadClass::residential;
};

/// Throws if the polyline has fewer than two vertices or repeats a vertex
/// consecutively; `index` is used in the message.
void validate_segment(const StreetSegment& s, std::size_t index);

struct PatternPolygon {
  std::vector<Point> ring;  // open ring; closing edge is implicit
  PatternType type = PatternType::unlabeled;
};

/// Raster geometry. origin is the north-west corner of pixel (0, 0).
struct Frame {
  Point origin;
  double resolution = 2.0;  // meters per pixel
  int width = 0;
  int height = 0;

  double col_of(double x) const { return (x - origin.x) / resolution; }
  double row_of(double y) const { return (origin.y - y) / resolution; }
  Point center_of(int row, int col) const {
    return {origin.x + (col + 0.5) * resolution, origin.y - (row + 0.5) * resolution};
  }
  Pixel pixel_of(const Point& p) const;
  void validate() const;
  friend bool operator==(const Frame&, const Frame&) = default;
};

struct RasterOptions {
  /// Intensity per class (motorway..residential); must be strictly decreasing.
  std::array<float, kRoadClassCount> intensity{1.0f, 0.85f, 0.7f, 0.55f, 0.4f};
  /// Disk dilation radius per class, in pixels. 0 draws the bare 1-px trace.
  std::array<int, kRoadClassCount> dilation_radius{2, 1, 1, 1, 1};
  /// Collapse every street pixel to 1.0.
  bool binary = false;

  static RasterOptions bare_lines() {
    RasterOptions o;
    o.dilation_radius.fill(0);
    return o;
  }
};

/// 8-connected integer line trace between two pixels, endpoints included.
std::vector<Pixel> trace_line(Pixel from, Pixel to);

FloatGrid rasterize_streets(std::span<const StreetSegment> segments, const Frame& frame,
                            const RasterOptions& options = {});

inline constexpr float kFlatAspect = -1.0f;

/// Downslope compass direction (north = 0, clockwise) per pixel. Interior
/// pixels use the 3x3 Horn stencil, border pixels one-sided differences.
FloatGrid compute_aspect(const FloatGrid& elevation, double resolution);

ByteGrid rasterize_pattern_annotation(std::span<const PatternPolygon> polygons, const Frame& frame);

/// Even-odd test.
bool point_in_polygon(const Point& p, std::span<const Point> ring);

struct MultiChannelMap {
  Frame frame;
  FloatGrid streets;
  FloatGrid elevation;
  FloatGrid aspect;
  ByteGrid pattern;
  /// Junction nodes in map pixel coordinates; empty when not known.
  std::vector<Pixel> junctions;
  RasterOptions raster_options;

  /// Throws on any violated channel invariant.
  void validate() const;
};

MultiChannelMap assemble_map(FloatGrid streets, FloatGrid elevation, FloatGrid aspect,
                             ByteGrid pattern, const Frame& frame,
                             const RasterOptions& options = {});

void save_map(const MultiChannelMap& map, const std::filesystem::path& path);
MultiChannelMap load_map(const std::filesystem::path& path);

/// Splits polylines into two-point pieces noded at every crossing and
/// T-contact (within `tolerance` meters); duplicate pieces keep the
/// higher class.
std::vector<StreetSegment> node_network(std::span<const StreetSegment> segments,
                                        double tolerance);

// GeoJSON-style FeatureCollections in the local metric frame.
std::vector<StreetSegment> streets_from_geojson(const nlohmann::json& fc);
nlohmann::json streets_to_geojson(std::span<const StreetSegment> segments);
std::vector<PatternPolygon> patterns_from_geojson(const nlohmann::json& fc);
nlohmann::json patterns_to_geojson(std::span<const PatternPolygon> polygons);

/// DEM from a 16-bit grayscale PNG; samples map linearly onto [lo, hi] meters.
FloatGrid load_dem_png(const std::filesystem::path& path, double lo, double hi);

}  // namespace streetgen::geo
