#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "streetgen/geo_ingest.hpp"
#include "streetgen/grid.hpp"

namespace streetgen::sampling {

/// Binary generation-region mask: 1 = generate, 0 = context.
struct Mask {
  ByteGrid grid;

  int size() const { return grid.width(); }
  std::size_t generation_pixels() const;
  double area_fraction() const;
  bool at(int row, int col) const { return grid(row, col) != 0; }
  void validate() const;
};

struct AreaRange {
  double lo = 0.1;
  double hi = 0.7;
};

struct MaskOptions {
  AreaRange area{};
  /// Rectangles stay this many pixels away from the frame edge; <0 picks size/32.
  int margin = -1;
  int max_attempts = 2000;
};

/// Union of 1-3 random axis-aligned rectangles whose area fraction lies in
/// the requested range. Throws after max_attempts when infeasible.
Mask generate_mask(int size, std::uint64_t seed, const MaskOptions& options = {});

int default_mask_margin(int size);

struct JunctionSet {
  enum class Source { extracted, user };
  std::vector<Pixel> points;
  Source source = Source::extracted;
};

/// Vector mode: endpoints of >= 3 segments meeting within `snap_px` pixels.
JunctionSet extract_junctions(std::span<const geo::StreetSegment> segments, const geo::Frame& frame,
                              double snap_px = 1.0);
/// Raster fallback: pixels of the thinned street raster with >= 3 skeleton
/// neighbours, one point per 8-connected cluster.
JunctionSet extract_junctions(const FloatGrid& streets);

/// Zhang-Suen thinning of the nonzero pixels.
ByteGrid skeletonize(const FloatGrid& streets);

/// Round-half-up count of retained in-mask junctions.
std::size_t retained_count(std::size_t in_mask, double fraction);

/// Renders round(fraction * |in-mask junctions|) junctions, drawn without
/// replacement. Dilation to 3x3 is clipped to the mask.
FloatGrid retain_junctions(const JunctionSet& junctions, const Mask& mask, double fraction,
                           std::uint64_t seed, bool dilate = true);

/// i.i.d. uniform [0,1) inside the generation region, exact 0 outside.
FloatGrid make_noise_channel(const Mask& mask, std::uint64_t seed);

/// Junction retention policy; `rand` draws a per-sample fraction in [0.1, 0.9].
struct Retention {
  bool random = true;
  double fraction = 0.5;

  static Retention parse(const std::string& s);  // "rand", "30", "60", "90", or "0.45"
  std::string label() const;
  double draw(std::uint64_t seed) const;
};

struct PatchSample {
  FloatGrid context_streets;
  FloatGrid elevation;
  FloatGrid aspect;
  Mask mask;
  FloatGrid noise;
  FloatGrid junction_channel;
  ByteGrid pattern_guidance;
  FloatGrid ground_truth_streets;
  Pixel origin;
  /// Every junction inside the generation region, before retention.
  std::vector<Pixel> mask_junctions;
  int model_level = 1;
  double retention_fraction = 0.0;
  std::uint64_t seed = 0;

  int size() const { return mask.size(); }
  /// Checks the masking invariants; throws naming the first violation.
  void validate() const;
};

struct Crop {
  Pixel origin;
  FloatGrid streets;
  FloatGrid elevation;
  FloatGrid aspect;
  ByteGrid pattern;
};

/// Number of distinct top-left corners for a size x size window.
std::uint64_t distinct_origins(int map_width, int map_height, int size);

/// n pairwise-distinct origins, deterministic in the seed.
std::vector<Pixel> choose_patch_origins(int map_width, int map_height, std::size_t n, int size,
                                        std::uint64_t seed);

std::vector<Crop> crop_patches(const geo::MultiChannelMap& map, std::size_t n, int size,
                               std::uint64_t seed);

struct SampleOptions {
  /// Collapse street rasters to {0,1} in emitted samples.
  bool binary_streets = true;
  bool dilate_junctions = true;
};

PatchSample build_sample(const geo::MultiChannelMap& map, Pixel origin, const Mask& mask,
                         double retention_fraction, int model_level, std::uint64_t seed,
                         const SampleOptions& options = {});

/// Re-renders the junction channel of `sample` for a new retention fraction.
void rerender_junctions(PatchSample& sample, double fraction, std::uint64_t seed,
                        bool dilate = true);

double context_coverage(const Mask& mask);

// Dataset persistence: manifest.json + records/NNNNNN.bin.
void save_sample(const PatchSample& sample, const std::filesystem::path& path);
PatchSample load_sample(const std::filesystem::path& path);

struct DatasetConfig {
  std::size_t count = 0;
  int size = 256;
  int model_level = 1;
  Retention retention{};
  MaskOptions mask{};
  SampleOptions sample{};
  std::uint64_t seed = 0;
};

/// Builds the samples write_dataset would write, in memory.
std::vector<PatchSample> make_samples(const geo::MultiChannelMap& map, const DatasetConfig& config);
/// Builds and writes a dataset; returns the manifest it wrote.
nlohmann::json write_dataset(const geo::MultiChannelMap& map, const std::string& map_source_hash,
                             const DatasetConfig& config, const std::filesystem::path& dir);

struct Dataset {
  nlohmann::json manifest;
  std::vector<PatchSample> samples;

  int model_level() const { return manifest.at("model_level").get<int>(); }
  static Dataset load(const std::filesystem::path& dir);
};

}  // namespace streetgen::sampling
