#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "streetgen/geo_ingest.hpp"

namespace streetgen::synth {

struct DistrictParams {
  double block_size = 100.0;       // meters, [10, 1000]
  double orientation_deg = 0.0;    // grid / spine rotation
  double irregularity = 0.0;       // [0, 1]
};

/// A convex district polygon with the archetype generated inside it.
struct District {
  std::vector<geo::Point> polygon;
  geo::PatternType pattern = geo::PatternType::orthogonal_grid;
  DistrictParams params;
};

struct Hill {
  double x = 0.0, y = 0.0;
  double height = 0.0;
  double sigma = 100.0;
};

struct TerrainSpec {
  double base_elevation = 200.0;
  std::vector<Hill> hills;
};

/// Extent spans x in [0, width], y in [0, height] meters.
struct SynthSpec {
  double width = 1000.0;
  double height = 1000.0;
  double resolution = 2.0;
  std::vector<District> districts;
  TerrainSpec terrain;
  std::uint64_t seed = 0;

  /// Throws on invalid parameters, non-convex districts, or coverage gaps
  /// wider than one block.
  void validate() const;
  geo::Frame frame() const;
};

struct SynthOutput {
  geo::Frame frame;
  std::vector<geo::StreetSegment> streets;  // noded two-point pieces
  std::vector<geo::PatternPolygon> patterns;
  FloatGrid elevation;
};

/// Raw street pieces of one district generator, before noding with the
/// district-boundary arterials.
std::vector<geo::StreetSegment> generate_district(const District& district, std::uint64_t seed);

SynthOutput synth_map(const SynthSpec& spec);

/// Rasterizes a synthetic city into a map with vector-extracted junctions.
geo::MultiChannelMap render_map(const SynthOutput& out, const geo::RasterOptions& options = {});

/// Regular tiling of the extent into rows x cols rectangular districts with
/// archetypes drawn from `patterns`.
struct TiledLayout {
  double width = 2000.0;
  double height = 2000.0;
  double resolution = 2.0;
  int rows = 2;
  int cols = 2;
  std::vector<geo::PatternType> patterns{geo::PatternType::orthogonal_grid};
  double block_min = 80.0;
  double block_max = 120.0;
  double irregularity_min = 0.3;
  double irregularity_max = 0.8;
  double orientation_max_deg = 30.0;
  int hills = 3;
  std::uint64_t seed = 0;
};
SynthSpec make_tiled_spec(const TiledLayout& layout);

SynthSpec spec_from_json(const nlohmann::json& j);
nlohmann::json spec_to_json(const SynthSpec& spec);

/// Connected components of a segment set where pieces touch within `tolerance`.
std::vector<int> connected_components(std::span<const geo::StreetSegment> segments, double tolerance);

/// Clips segment a-b to a convex polygon, boundary inclusive.
bool clip_to_convex(std::span<const geo::Point> polygon, geo::Point& a, geo::Point& b);

bool is_convex(std::span<const geo::Point> polygon);

}  // namespace streetgen::synth
