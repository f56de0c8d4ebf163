#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "streetgen/nn/netcore.hpp"
#include "streetgen/sampler.hpp"

namespace streetgen::eval {

/// Mean absolute difference over mask pixels. Throws on an empty mask.
double l1_error(std::span<const double> generated, std::span<const double> ground_truth,
                std::span<const unsigned char> mask);
/// Root-mean-square difference over mask pixels. Throws on an empty mask.
double l2_error(std::span<const double> generated, std::span<const double> ground_truth,
                std::span<const unsigned char> mask);
double l1_error(const FloatGrid& generated, const FloatGrid& ground_truth, const sampling::Mask& mask);
double l2_error(const FloatGrid& generated, const FloatGrid& ground_truth, const sampling::Mask& mask);

using sampling::context_coverage;

struct SampleResult {
  std::string id;
  double l1 = 0.0;
  double l2 = 0.0;
  double coverage = 0.0;
  int model_level = 1;
  std::string retention;
  double retention_fraction = 0.0;
};

/// Counts over [coverage bin] x [error bin]. Edge k of an axis with n bins
/// is lo + (hi - lo) * k / n; bins are half-open except the last, which
/// also holds hi. Values outside [lo, hi] are clamped into the end bins.
struct Histogram {
  std::vector<double> coverage_edges;
  std::vector<double> error_edges;
  std::vector<std::vector<std::uint64_t>> counts;  // [coverage][error]

  std::uint64_t total() const;
  std::size_t coverage_bins() const { return coverage_edges.size() - 1; }
  std::size_t error_bins() const { return error_edges.size() - 1; }
};

struct HistogramAxes {
  int coverage_bins = 10;  // 10% wide over [0, 1]
  double error_max = 1.0;
  int error_bins = 100;  // 1% wide over [0, error_max]
};

std::size_t bin_index(double value, std::span<const double> edges);
Histogram coverage_histogram(std::span<const SampleResult> results, const HistogramAxes& axes = {});

struct EvalReport {
  std::string label;
  int model_level = 1;
  std::string retention;
  std::vector<SampleResult> results;
  double mean_l1 = 0.0;
  double mean_l2 = 0.0;
  Histogram histogram;

  /// Recomputes means and histogram from `results`.
  void finalize(const HistogramAxes& axes = {});
  nlohmann::json to_json() const;
  void write_csv(const std::filesystem::path& path) const;
  void write_histogram_csv(const std::filesystem::path& path) const;
  /// Text rendering of the coverage x l2 histogram with per-row mean errors.
  std::string render(double error_max = 0.2) const;
};

struct ExperimentOptions {
  sampling::Retention retention{};
  std::uint64_t seed = 0;
  int batch_size = 8;
  std::string label;
  HistogramAxes axes{};
};

/// Evaluates raw generator output on every sample. For model levels >= 2 the
/// junction channel is re-rendered under the retention policy first.
EvalReport run_experiment(const nn::Checkpoint& checkpoint, std::span<const sampling::PatchSample> samples,
                          const ExperimentOptions& options);

/// Metrics for externally produced outputs, one per sample.
EvalReport evaluate_outputs(std::span<const FloatGrid> generated, std::span<const sampling::PatchSample> samples,
                            const std::string& label);

}  // namespace streetgen::eval
