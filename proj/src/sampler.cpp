#include "streetgen/sampler.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <numeric>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "streetgen/archive.hpp"
#include "streetgen/rng.hpp"

namespace streetgen::sampling {

std::size_t Mask::generation_pixels() const {
  return static_cast<std::size_t>(std::count_if(grid.values().begin(), grid.values().end(),
                                                [](unsigned char v) { return v != 0; }));
}

double Mask::area_fraction() const {
  if (grid.empty()) return 0.0;
  return static_cast<double>(generation_pixels()) / static_cast<double>(grid.size());
}

void Mask::validate() const {
  if (grid.empty()) throw Error("mask is empty");
  if (grid.width() != grid.height()) throw Error("mask must be square");
  for (unsigned char v : grid.values()) {
    if (v > 1) throw Error("mask values must be 0 or 1");
  }
}

int default_mask_margin(int size) { return std::max(1, size / 32); }

Mask generate_mask(int size, std::uint64_t seed, const MaskOptions& options) {
  const auto [lo, hi] = options.area;
  if (size <= 0) throw Error("generate_mask: size must be positive");
  if (!(lo > 0.0 && lo <= hi && hi <= 1.0)) {
    throw Error("generate_mask: area range must satisfy 0 < lo <= hi <= 1");
  }
  const int margin = options.margin < 0 ? default_mask_margin(size) : options.margin;
  const int inner = size - 2 * margin;
  if (inner < 2) throw Error("generate_mask: margin leaves no room for rectangles");

  Rng rng(seed);
  Mask mask{ByteGrid(size, size, 0)};
  const double total = static_cast<double>(size) * size;
  for (int attempt = 0; attempt < options.max_attempts; ++attempt) {
    mask.grid.fill(0);
    const int k = rng.between(1, 3);
    const double target = rng.uniform(lo, hi);
    for (int i = 0; i < k; ++i) {
      const double area = target * total / k * rng.uniform(0.8, 1.25);
      const double aspect = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
      const int w = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 2, inner);
      const int h = std::clamp(static_cast<int>(std::lround(area / std::max(1, w))), 2, inner);
      const int r0 = margin + rng.between(0, inner - h);
      const int c0 = margin + rng.between(0, inner - w);
      for (int r = r0; r < r0 + h; ++r)
        for (int c = c0; c < c0 + w; ++c) mask.grid(r, c) = 1;
    }
    const double frac = mask.area_fraction();
    if (frac >= lo && frac <= hi) return mask;
  }
  throw Error("generate_mask: could not reach area fraction [" + std::to_string(lo) + ", " +
              std::to_string(hi) + "] within " + std::to_string(options.max_attempts) +
              " attempts (size " + std::to_string(size) + ", margin " + std::to_string(margin) + ")");
}

JunctionSet extract_junctions(std::span<const geo::StreetSegment> segments, const geo::Frame& frame,
                              double snap_px) {
  struct End {
    double row, col;
  };
  std::vector<End> ends;
  for (const auto& s : segments) {
    if (s.polyline.size() < 2) continue;
    const auto& a = s.polyline.front();
    const auto& b = s.polyline.back();
    ends.push_back({frame.row_of(a.y), frame.col_of(a.x)});
    ends.push_back({frame.row_of(b.y), frame.col_of(b.x)});
  }
  // Union-find over endpoints closer than the snap tolerance.
  std::vector<std::size_t> parent(ends.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::unordered_map<std::int64_t, std::vector<std::size_t>> cells;
  auto cell_key = [](std::int64_t r, std::int64_t c) { return (r << 32) ^ (c & 0xffffffff); };
  const double cell = std::max(snap_px, 1e-9);
  for (std::size_t i = 0; i < ends.size(); ++i) {
    const auto r = static_cast<std::int64_t>(std::floor(ends[i].row / cell));
    const auto c = static_cast<std::int64_t>(std::floor(ends[i].col / cell));
    for (std::int64_t dr = -1; dr <= 1; ++dr)
      for (std::int64_t dc = -1; dc <= 1; ++dc) {
        auto it = cells.find(cell_key(r + dr, c + dc));
        if (it == cells.end()) continue;
        for (std::size_t j : it->second) {
          if (std::hypot(ends[i].row - ends[j].row, ends[i].col - ends[j].col) <= snap_px) {
            parent[find(i)] = find(j);
          }
        }
      }
    cells[cell_key(r, c)].push_back(i);
  }
  std::map<std::size_t, std::vector<std::size_t>> clusters;
  for (std::size_t i = 0; i < ends.size(); ++i) clusters[find(i)].push_back(i);

  std::set<Pixel> points;
  for (const auto& [_, members] : clusters) {
    if (members.size() < 3) continue;
    double mr = 0.0, mc = 0.0;
    for (auto m : members) {
      mr += ends[m].row;
      mc += ends[m].col;
    }
    mr /= static_cast<double>(members.size());
    mc /= static_cast<double>(members.size());
    // Report the member endpoint nearest the centroid so the point sits on a traced pixel.
    std::size_t best = members.front();
    double best_d = 1e300;
    for (auto m : members) {
      const double d = std::hypot(ends[m].row - mr, ends[m].col - mc);
      if (d < best_d) {
        best_d = d;
        best = m;
      }
    }
    const Pixel p{static_cast<int>(std::floor(ends[best].row)), static_cast<int>(std::floor(ends[best].col))};
    if (p.row >= 0 && p.col >= 0 && p.row < frame.height && p.col < frame.width) points.insert(p);
  }
  return {std::vector<Pixel>(points.begin(), points.end()), JunctionSet::Source::extracted};
}

ByteGrid skeletonize(const FloatGrid& streets) {
  const int h = streets.height(), w = streets.width();
  ByteGrid img(w, h, 0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) img(r, c) = streets(r, c) > 0.0f ? 1 : 0;
  auto px = [&](int r, int c) -> int { return img.contains(r, c) ? img(r, c) : 0; };
  std::vector<Pixel> to_clear;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int pass = 0; pass < 2; ++pass) {
      to_clear.clear();
      for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
          if (!img(r, c)) continue;
          // P2..P9 clockwise from north.
          const int p[8] = {px(r - 1, c), px(r - 1, c + 1), px(r, c + 1), px(r + 1, c + 1),
                            px(r + 1, c), px(r + 1, c - 1), px(r, c - 1), px(r - 1, c - 1)};
          int b = 0, a = 0;
          for (int i = 0; i < 8; ++i) {
            b += p[i];
            if (p[i] == 0 && p[(i + 1) % 8] == 1) ++a;
          }
          if (b < 2 || b > 6 || a != 1) continue;
          if (pass == 0) {
            if (p[0] * p[2] * p[4] != 0 || p[2] * p[4] * p[6] != 0) continue;
          } else {
            if (p[0] * p[2] * p[6] != 0 || p[0] * p[4] * p[6] != 0) continue;
          }
          to_clear.push_back({r, c});
        }
      }
      for (const auto& q : to_clear) img(q.row, q.col) = 0;
      if (!to_clear.empty()) changed = true;
    }
  }
  return img;
}

JunctionSet extract_junctions(const FloatGrid& streets) {
  const ByteGrid skel = skeletonize(streets);
  const int h = skel.height(), w = skel.width();
  ByteGrid cand(w, h, 0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!skel(r, c)) continue;
      int n = 0;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc)
          if ((dr || dc) && skel.contains(r + dr, c + dc) && skel(r + dr, c + dc)) ++n;
      if (n >= 3) cand(r, c) = 1;
    }
  }
  // One representative per 8-connected candidate cluster.
  JunctionSet out;
  ByteGrid seen(w, h, 0);
  std::vector<Pixel> stack, members;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!cand(r, c) || seen(r, c)) continue;
      members.clear();
      stack.push_back({r, c});
      seen(r, c) = 1;
      while (!stack.empty()) {
        const Pixel q = stack.back();
        stack.pop_back();
        members.push_back(q);
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            const int rr = q.row + dr, cc = q.col + dc;
            if (cand.contains(rr, cc) && cand(rr, cc) && !seen(rr, cc)) {
              seen(rr, cc) = 1;
              stack.push_back({rr, cc});
            }
          }
      }
      double mr = 0, mc = 0;
      for (const auto& m : members) {
        mr += m.row;
        mc += m.col;
      }
      mr /= static_cast<double>(members.size());
      mc /= static_cast<double>(members.size());
      Pixel best = members.front();
      double bd = 1e300;
      for (const auto& m : members) {
        const double d = std::hypot(m.row - mr, m.col - mc);
        if (d < bd) {
          bd = d;
          best = m;
        }
      }
      out.points.push_back(best);
    }
  }
  std::sort(out.points.begin(), out.points.end());
  return out;
}

std::size_t retained_count(std::size_t in_mask, double fraction) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(in_mask) + 0.5));
}

FloatGrid retain_junctions(const JunctionSet& junctions, const Mask& mask, double fraction,
                           std::uint64_t seed, bool dilate) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw Error("retention fraction must lie in [0,1]");
  const int size = mask.size();
  FloatGrid out(size, size, 0.0f);
  std::vector<Pixel> inside;
  for (const auto& p : junctions.points) {
    if (mask.grid.contains(p.row, p.col) && mask.at(p.row, p.col)) inside.push_back(p);
  }
  std::sort(inside.begin(), inside.end());
  inside.erase(std::unique(inside.begin(), inside.end()), inside.end());
  const std::size_t keep = std::min(inside.size(), retained_count(inside.size(), fraction));
  Rng rng(seed);
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(inside.size() - i));
    std::swap(inside[i], inside[j]);
  }
  for (std::size_t i = 0; i < keep; ++i) {
    const Pixel p = inside[i];
    const int rad = dilate ? 1 : 0;
    for (int dr = -rad; dr <= rad; ++dr)
      for (int dc = -rad; dc <= rad; ++dc) {
        const int r = p.row + dr, c = p.col + dc;
        if (mask.grid.contains(r, c) && mask.at(r, c)) out(r, c) = 1.0f;
      }
  }
  return out;
}

FloatGrid make_noise_channel(const Mask& mask, std::uint64_t seed) {
  FloatGrid out(mask.grid.width(), mask.grid.height(), 0.0f);
  Rng rng(seed);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float u = static_cast<float>(rng.uniform());
    if (mask.grid.data()[i]) out.data()[i] = u;
  }
  return out;
}

Retention Retention::parse(const std::string& s) {
  if (s == "rand" || s == "random") return {true, 0.5};
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || ptr != end) throw Error("invalid retention policy '" + s + "'");
  if (v > 1.0) v /= 100.0;
  if (v < 0.0 || v > 1.0) throw Error("retention fraction out of range: '" + s + "'");
  return {false, v};
}

std::string Retention::label() const {
  if (random) return "rand";
  return std::to_string(static_cast<int>(std::lround(fraction * 100.0)));
}

double Retention::draw(std::uint64_t seed) const {
  if (!random) return fraction;
  Rng rng(seed);
  return rng.uniform(0.1, 0.9);
}

void PatchSample::validate() const {
  mask.validate();
  const int s = size();
  auto check_shape = [&](const char* name, int w, int h) {
    if (w != s || h != s) throw Error(std::string("sample channel '") + name + "' has wrong size");
  };
  check_shape("context_streets", context_streets.width(), context_streets.height());
  check_shape("elevation", elevation.width(), elevation.height());
  check_shape("aspect", aspect.width(), aspect.height());
  check_shape("noise", noise.width(), noise.height());
  check_shape("junction_channel", junction_channel.width(), junction_channel.height());
  check_shape("pattern_guidance", pattern_guidance.width(), pattern_guidance.height());
  check_shape("ground_truth_streets", ground_truth_streets.width(), ground_truth_streets.height());
  for (std::size_t i = 0; i < mask.grid.size(); ++i) {
    const bool m = mask.grid.data()[i] != 0;
    if (m && context_streets.data()[i] != 0.0f) throw Error("context streets nonzero inside mask");
    if (!m && noise.data()[i] != 0.0f) throw Error("noise nonzero outside mask");
    if (!m && junction_channel.data()[i] != 0.0f) throw Error("junction pixel outside mask");
    if (!m && pattern_guidance.data()[i] != 0) throw Error("pattern guidance outside mask");
  }
}

std::uint64_t distinct_origins(int map_width, int map_height, int size) {
  if (size <= 0 || size > map_width || size > map_height) return 0;
  return static_cast<std::uint64_t>(map_width - size + 1) * static_cast<std::uint64_t>(map_height - size + 1);
}

std::vector<Pixel> choose_patch_origins(int map_width, int map_height, std::size_t n, int size,
                                        std::uint64_t seed) {
  if (size <= 0 || size > map_width || size > map_height) {
    throw Error("patch size " + std::to_string(size) + " exceeds map dimensions " +
                std::to_string(map_width) + "x" + std::to_string(map_height));
  }
  const std::uint64_t total = distinct_origins(map_width, map_height, size);
  if (n > total) {
    throw Error("requested " + std::to_string(n) + " patches but only " + std::to_string(total) +
                " distinct origins exist (maximum)");
  }
  const auto cols = static_cast<std::uint64_t>(map_width - size + 1);
  // Floyd's sampling of n distinct indices from [0, total).
  Rng rng(seed);
  std::unordered_set<std::uint64_t> chosen;
  chosen.reserve(n * 2);
  std::vector<Pixel> out;
  out.reserve(n);
  for (std::uint64_t j = total - n; j < total; ++j) {
    std::uint64_t t = rng.below(j + 1);
    if (!chosen.insert(t).second) {
      t = j;
      chosen.insert(j);
    }
    out.push_back({static_cast<int>(t / cols), static_cast<int>(t % cols)});
  }
  return out;
}

std::vector<Crop> crop_patches(const geo::MultiChannelMap& map, std::size_t n, int size,
                               std::uint64_t seed) {
  const auto origins = choose_patch_origins(map.frame.width, map.frame.height, n, size, seed);
  std::vector<Crop> out;
  out.reserve(origins.size());
  for (const auto& o : origins) {
    out.push_back({o, map.streets.crop(o.row, o.col, size, size), map.elevation.crop(o.row, o.col, size, size),
                   map.aspect.crop(o.row, o.col, size, size), map.pattern.crop(o.row, o.col, size, size)});
  }
  return out;
}

PatchSample build_sample(const geo::MultiChannelMap& map, Pixel origin, const Mask& mask,
                         double retention_fraction, int model_level, std::uint64_t seed,
                         const SampleOptions& options) {
  if (model_level < 1 || model_level > 3) throw Error("model level must be 1, 2 or 3");
  mask.validate();
  const int size = mask.size();
  if (origin.row < 0 || origin.col < 0 || origin.row + size > map.frame.height ||
      origin.col + size > map.frame.width) {
    throw Error("patch origin (" + std::to_string(origin.row) + ", " + std::to_string(origin.col) +
                ") with size " + std::to_string(size) + " is out of map bounds");
  }
  PatchSample s;
  s.origin = origin;
  s.model_level = model_level;
  s.seed = seed;
  s.mask = mask;
  s.ground_truth_streets = map.streets.crop(origin.row, origin.col, size, size);
  if (options.binary_streets) {
    for (float& v : s.ground_truth_streets.values()) v = v > 0.0f ? 1.0f : 0.0f;
  }
  s.context_streets = s.ground_truth_streets;
  for (std::size_t i = 0; i < mask.grid.size(); ++i) {
    if (mask.grid.data()[i]) s.context_streets.data()[i] = 0.0f;
  }
  s.elevation = map.elevation.crop(origin.row, origin.col, size, size);
  s.aspect = map.aspect.crop(origin.row, origin.col, size, size);
  s.noise = make_noise_channel(mask, mix_seed(seed, 1));
  s.junction_channel = FloatGrid(size, size, 0.0f);
  s.pattern_guidance = ByteGrid(size, size, 0);

  if (model_level >= 2) {
    JunctionSet local;
    if (!map.junctions.empty()) {
      for (const auto& j : map.junctions) {
        const Pixel p{j.row - origin.row, j.col - origin.col};
        if (p.row >= 0 && p.col >= 0 && p.row < size && p.col < size) local.points.push_back(p);
      }
    } else {
      local = extract_junctions(map.streets.crop(origin.row, origin.col, size, size));
    }
    for (const auto& p : local.points) {
      if (mask.at(p.row, p.col)) s.mask_junctions.push_back(p);
    }
    std::sort(s.mask_junctions.begin(), s.mask_junctions.end());
    rerender_junctions(s, retention_fraction, mix_seed(seed, 2), options.dilate_junctions);
  }
  if (model_level >= 3) {
    const ByteGrid pat = map.pattern.crop(origin.row, origin.col, size, size);
    for (std::size_t i = 0; i < pat.size(); ++i) {
      if (mask.grid.data()[i]) s.pattern_guidance.data()[i] = pat.data()[i];
    }
  }
  return s;
}

void rerender_junctions(PatchSample& sample, double fraction, std::uint64_t seed, bool dilate) {
  sample.retention_fraction = fraction;
  if (sample.model_level < 2) {
    sample.junction_channel.fill(0.0f);
    return;
  }
  JunctionSet set{sample.mask_junctions, JunctionSet::Source::extracted};
  sample.junction_channel = retain_junctions(set, sample.mask, fraction, seed, dilate);
}

double context_coverage(const Mask& mask) {
  if (mask.grid.empty()) return 0.0;
  std::size_t zeros = 0;
  for (unsigned char v : mask.grid.values()) zeros += v == 0 ? 1 : 0;
  return static_cast<double>(zeros) / static_cast<double>(mask.grid.size());
}

void save_sample(const PatchSample& s, const std::filesystem::path& path) {
  Archive a;
  a.meta() = {{"kind", "patch_sample"},
              {"origin", {s.origin.row, s.origin.col}},
              {"model_level", s.model_level},
              {"retention_fraction", s.retention_fraction},
              {"seed", s.seed}};
  a.put_grid("context_streets", s.context_streets);
  a.put_grid("elevation", s.elevation);
  a.put_grid("aspect", s.aspect);
  a.put_grid("mask", s.mask.grid);
  a.put_grid("noise", s.noise);
  a.put_grid("junction_channel", s.junction_channel);
  a.put_grid("pattern_guidance", s.pattern_guidance);
  a.put_grid("ground_truth_streets", s.ground_truth_streets);
  std::vector<std::int32_t> flat;
  for (const auto& j : s.mask_junctions) {
    flat.push_back(j.row);
    flat.push_back(j.col);
  }
  a.put_i32("mask_junctions", {static_cast<std::int64_t>(s.mask_junctions.size()), 2}, flat);
  a.save(path);
}

PatchSample load_sample(const std::filesystem::path& path) {
  const Archive a = Archive::load(path);
  if (a.meta().value("kind", "") != "patch_sample") {
    throw Error("'" + path.string() + "' is not a patch sample record");
  }
  PatchSample s;
  s.origin = {a.meta().at("origin")[0].get<int>(), a.meta().at("origin")[1].get<int>()};
  s.model_level = a.meta().at("model_level").get<int>();
  s.retention_fraction = a.meta().at("retention_fraction").get<double>();
  s.seed = a.meta().at("seed").get<std::uint64_t>();
  s.context_streets = a.get_float_grid("context_streets");
  s.elevation = a.get_float_grid("elevation");
  s.aspect = a.get_float_grid("aspect");
  s.mask.grid = a.get_byte_grid("mask");
  s.noise = a.get_float_grid("noise");
  s.junction_channel = a.get_float_grid("junction_channel");
  s.pattern_guidance = a.get_byte_grid("pattern_guidance");
  s.ground_truth_streets = a.get_float_grid("ground_truth_streets");
  const auto flat = a.get_i32("mask_junctions");
  for (std::size_t i = 0; i + 1 < flat.size(); i += 2) s.mask_junctions.push_back({flat[i], flat[i + 1]});
  return s;
}

std::vector<PatchSample> make_samples(const geo::MultiChannelMap& map, const DatasetConfig& config) {
  const auto origins =
      choose_patch_origins(map.frame.width, map.frame.height, config.count, config.size, config.seed);
  std::vector<PatchSample> out;
  out.reserve(origins.size());
  for (std::size_t i = 0; i < origins.size(); ++i) {
    const std::uint64_t s = mix_seed(config.seed, 1000 + i);
    const Mask mask = generate_mask(config.size, mix_seed(s, 10), config.mask);
    const double frac = config.retention.draw(mix_seed(s, 11));
    PatchSample sample = build_sample(map, origins[i], mask, frac, config.model_level, s, config.sample);
    sample.validate();
    out.push_back(std::move(sample));
  }
  return out;
}

nlohmann::json write_dataset(const geo::MultiChannelMap& map, const std::string& map_source_hash,
                             const DatasetConfig& config, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "records");
  const auto samples = make_samples(map, config);
  nlohmann::json manifest{{"map_source_hash", map_source_hash},
                          {"seed", config.seed},
                          {"size", config.size},
                          {"count", config.count},
                          {"model_level", config.model_level},
                          {"retention", {{"policy", config.retention.random ? "rand" : "fixed"},
                                         {"fraction", config.retention.fraction},
                                         {"label", config.retention.label()}}},
                          {"mask_area_range", {config.mask.area.lo, config.mask.area.hi}},
                          {"street_encoding", config.sample.binary_streets ? "binary" : "hierarchy"},
                          {"records", nlohmann::json::array()}};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const PatchSample& sample = samples[i];
    char name[32];
    std::snprintf(name, sizeof(name), "records/%06zu.bin", i);
    save_sample(sample, dir / name);
    manifest["records"].push_back({{"path", name},
                                   {"seed", sample.seed},
                                   {"origin", {sample.origin.row, sample.origin.col}},
                                   {"mask_fraction", sample.mask.area_fraction()},
                                   {"retention_fraction", sample.retention_fraction},
                                   {"junctions_in_mask", sample.mask_junctions.size()}});
  }
  const std::string text = manifest.dump(2);
  write_file_bytes(dir / "manifest.json",
                   std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
  return manifest;
}

Dataset Dataset::load(const std::filesystem::path& dir) {
  const auto bytes = read_file_bytes(dir / "manifest.json");
  Dataset d;
  try {
    d.manifest = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw Error("dataset manifest is not valid JSON: " + std::string(e.what()));
  }
  for (const auto& rec : d.manifest.at("records")) {
    d.samples.push_back(load_sample(dir / rec.at("path").get<std::string>()));
  }
  return d;
}

}  // namespace streetgen::sampling
