#include "streetgen/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "streetgen/rng.hpp"

namespace streetgen::eval {

namespace {

struct MaskedSums {
  double abs = 0.0;
  double sq = 0.0;
  std::size_t count = 0;
};

MaskedSums masked_sums(std::span<const double> g, std::span<const double> t, std::span<const unsigned char> m) {
  if (g.size() != t.size() || g.size() != m.size()) throw Error("metric inputs differ in size");
  MaskedSums s;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!m[i]) continue;
    const double d = g[i] - t[i];
    s.abs += std::abs(d);
    s.sq += d * d;
    ++s.count;
  }
  if (s.count == 0) throw Error("error metric undefined for an empty generation region");
  return s;
}

MaskedSums grid_sums(const FloatGrid& g, const FloatGrid& t, const sampling::Mask& mask) {
  if (!g.same_shape(t) || g.width() != mask.grid.width() || g.height() != mask.grid.height()) {
    throw Error("metric inputs differ in shape");
  }
  MaskedSums s;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!mask.grid.data()[i]) continue;
    const double d = static_cast<double>(g.data()[i]) - static_cast<double>(t.data()[i]);
    s.abs += std::abs(d);
    s.sq += d * d;
    ++s.count;
  }
  if (s.count == 0) throw Error("error metric undefined for an empty generation region");
  return s;
}

std::vector<double> axis_edges(double lo, double hi, int n) {
  std::vector<double> e(static_cast<std::size_t>(n) + 1);
  for (int k = 0; k <= n; ++k) e[static_cast<std::size_t>(k)] = lo + (hi - lo) * k / n;
  return e;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

double l1_error(std::span<const double> g, std::span<const double> t, std::span<const unsigned char> m) {
  const auto s = masked_sums(g, t, m);
  return s.abs / static_cast<double>(s.count);
}

double l2_error(std::span<const double> g, std::span<const double> t, std::span<const unsigned char> m) {
  const auto s = masked_sums(g, t, m);
  return std::sqrt(s.sq / static_cast<double>(s.count));
}

double l1_error(const FloatGrid& g, const FloatGrid& t, const sampling::Mask& mask) {
  const auto s = grid_sums(g, t, mask);
  return s.abs / static_cast<double>(s.count);
}

double l2_error(const FloatGrid& g, const FloatGrid& t, const sampling::Mask& mask) {
  const auto s = grid_sums(g, t, mask);
  return std::sqrt(s.sq / static_cast<double>(s.count));
}

std::uint64_t Histogram::total() const {
  std::uint64_t n = 0;
  for (const auto& row : counts)
    for (auto c : row) n += c;
  return n;
}

std::size_t bin_index(double value, std::span<const double> edges) {
  const std::size_t bins = edges.size() - 1;
  if (!(value >= edges.front())) return 0;
  const auto it = std::upper_bound(edges.begin(), edges.end(), value);
  const auto idx = static_cast<std::size_t>(it - edges.begin());
  return std::min(bins - 1, idx == 0 ? 0 : idx - 1);
}

Histogram coverage_histogram(std::span<const SampleResult> results, const HistogramAxes& axes) {
  if (axes.coverage_bins <= 0 || axes.error_bins <= 0 || !(axes.error_max > 0.0)) {
    throw Error("invalid histogram axes");
  }
  Histogram h;
  h.coverage_edges = axis_edges(0.0, 1.0, axes.coverage_bins);
  h.error_edges = axis_edges(0.0, axes.error_max, axes.error_bins);
  h.counts.assign(h.coverage_bins(), std::vector<std::uint64_t>(h.error_bins(), 0));
  for (const auto& r : results) {
    ++h.counts[bin_index(r.coverage, h.coverage_edges)][bin_index(r.l2, h.error_edges)];
  }
  return h;
}

void EvalReport::finalize(const HistogramAxes& axes) {
  double s1 = 0.0, s2 = 0.0;
  for (const auto& r : results) {
    s1 += r.l1;
    s2 += r.l2;
  }
  const double n = static_cast<double>(results.size());
  mean_l1 = results.empty() ? 0.0 : s1 / n;
  mean_l2 = results.empty() ? 0.0 : s2 / n;
  histogram = coverage_histogram(results, axes);
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : results) {
    rows.push_back({{"id", r.id},
                    {"l1", r.l1},
                    {"l2", r.l2},
                    {"context_coverage", r.coverage},
                    {"model_level", r.model_level},
                    {"retention", r.retention},
                    {"retention_fraction", r.retention_fraction}});
  }
  return {{"label", label},
          {"model_level", model_level},
          {"retention", retention},
          {"samples", results.size()},
          {"mean_l1", mean_l1},
          {"mean_l2", mean_l2},
          {"mean_l1_percent", mean_l1 * 100.0},
          {"mean_l2_percent", mean_l2 * 100.0},
          {"histogram",
           {{"coverage_edges", histogram.coverage_edges},
            {"error_edges", histogram.error_edges},
            {"counts", histogram.counts}}},
          {"results", rows}};
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  f << "id,model_level,retention,retention_fraction,context_coverage,l1,l2\n";
  char buf[256];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, ",%d,%s,%.6f,%.9f,%.9f,%.9f\n", r.model_level, csv_escape(r.retention).c_str(),
                  r.retention_fraction, r.coverage, r.l1, r.l2);
    f << csv_escape(r.id) << buf;
  }
}

void EvalReport::write_histogram_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  f << "coverage_lo,coverage_hi";
  for (std::size_t e = 0; e < histogram.error_bins(); ++e) {
    f << ",l2_" << histogram.error_edges[e] << "_" << histogram.error_edges[e + 1];
  }
  f << "\n";
  for (std::size_t c = 0; c < histogram.coverage_bins(); ++c) {
    f << histogram.coverage_edges[c] << "," << histogram.coverage_edges[c + 1];
    for (auto v : histogram.counts[c]) f << "," << v;
    f << "\n";
  }
}

std::string EvalReport::render(double error_max) const {
  std::ostringstream out;
  const std::size_t eb = histogram.error_bins();
  std::size_t shown = eb;
  for (std::size_t e = 0; e < eb; ++e) {
    if (histogram.error_edges[e] >= error_max - 1e-12) {
      shown = e;
      break;
    }
  }
  std::uint64_t peak = 1;
  for (const auto& row : histogram.counts)
    for (std::size_t e = 0; e < shown; ++e) peak = std::max(peak, row[e]);
  const char* shades = " .:-=+*#%@";
  char buf[128];
  std::snprintf(buf, sizeof buf, "%s  (model %d, retention %s, n=%zu)\n", label.c_str(), model_level,
                retention.c_str(), results.size());
  out << buf;
  std::snprintf(buf, sizeof buf, "mean l1 %.2f%%  mean l2 %.2f%%\n", mean_l1 * 100.0, mean_l2 * 100.0);
  out << buf;
  out << "coverage   | l2 error bins from 0% to " << static_cast<int>(std::lround(error_max * 100)) << "%"
      << "          | n     mean l2\n";
  for (std::size_t c = histogram.coverage_bins(); c-- > 0;) {
    std::snprintf(buf, sizeof buf, "%3.0f-%3.0f%%  |", histogram.coverage_edges[c] * 100,
                  histogram.coverage_edges[c + 1] * 100);
    out << buf;
    std::uint64_t n = 0;
    double sum = 0.0;
    for (const auto& r : results) {
      if (bin_index(r.coverage, histogram.coverage_edges) == c) {
        ++n;
        sum += r.l2;
      }
    }
    for (std::size_t e = 0; e < shown; ++e) {
      const auto v = histogram.counts[c][e];
      const int level = v == 0 ? 0 : 1 + static_cast<int>(8.0 * static_cast<double>(v) / static_cast<double>(peak));
      out << shades[std::min(level, 9)];
    }
    if (n) {
      std::snprintf(buf, sizeof buf, "| %-5llu %.2f%%\n", static_cast<unsigned long long>(n), 100.0 * sum / n);
    } else {
      std::snprintf(buf, sizeof buf, "| %-5d -\n", 0);
    }
    out << buf;
  }
  return out.str();
}

namespace {

SampleResult score(const FloatGrid& generated, const sampling::PatchSample& s, std::size_t index) {
  SampleResult r;
  r.id = std::to_string(index);
  r.l1 = l1_error(generated, s.ground_truth_streets, s.mask);
  r.l2 = l2_error(generated, s.ground_truth_streets, s.mask);
  r.coverage = context_coverage(s.mask);
  r.model_level = s.model_level;
  r.retention_fraction = s.retention_fraction;
  return r;
}

}  // namespace

EvalReport run_experiment(const nn::Checkpoint& checkpoint, std::span<const sampling::PatchSample> samples,
                          const ExperimentOptions& options) {
  if (samples.empty()) throw Error("evaluation set is empty");
  for (const auto& s : samples) {
    if (s.model_level != checkpoint.model_level) {
      throw Error("checkpoint is model level " + std::to_string(checkpoint.model_level) +
                  " but the dataset holds level " + std::to_string(s.model_level) + " samples");
    }
  }
  const nn::Generator<float> gen(checkpoint.generator);
  EvalReport report;
  report.label = options.label.empty() ? "model " + std::to_string(checkpoint.model_level) : options.label;
  report.model_level = checkpoint.model_level;
  report.retention = checkpoint.model_level >= 2 ? options.retention.label() : "n/a";
  const int bs = std::max(1, options.batch_size);
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(bs)) {
    const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(bs));
    std::vector<sampling::PatchSample> batch(samples.begin() + static_cast<std::ptrdiff_t>(start),
                                             samples.begin() + static_cast<std::ptrdiff_t>(end));
    std::vector<const sampling::PatchSample*> ptrs;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      auto& s = batch[i];
      if (s.model_level >= 2) {
        const std::uint64_t seed = mix_seed(options.seed, start + i);
        sampling::rerender_junctions(s, options.retention.draw(mix_seed(seed, 1)), mix_seed(seed, 2));
      }
      ptrs.push_back(&s);
    }
    const auto out = gen.forward(checkpoint.g_params, nn::generator_input<float>(ptrs, checkpoint.model_level));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      auto r = score(nn::get_channel(out, static_cast<int>(i), 0), batch[i], start + i);
      r.retention = report.retention;
      report.results.push_back(std::move(r));
    }
  }
  report.finalize(options.axes);
  return report;
}

EvalReport evaluate_outputs(std::span<const FloatGrid> generated, std::span<const sampling::PatchSample> samples,
                            const std::string& label) {
  if (generated.size() != samples.size()) throw Error("output and sample counts differ");
  EvalReport report;
  report.label = label;
  report.model_level = samples.empty() ? 1 : samples.front().model_level;
  report.retention = "n/a";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto r = score(generated[i], samples[i], i);
    r.retention = report.retention;
    report.results.push_back(std::move(r));
  }
  report.finalize();
  return report;
}

}  // namespace streetgen::eval
