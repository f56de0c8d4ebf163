#include "streetgen/synthcity.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <numbers>
#include <numeric>
#include <unordered_map>

#include "streetgen/rng.hpp"
#include "streetgen/sampler.hpp"

namespace streetgen::synth {

using geo::PatternType;
using geo::Point;
using geo::RoadClass;
using geo::StreetSegment;

namespace {

constexpr double kEps = 1e-7;

Point sub(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
Point add(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
Point scale(Point a, double s) { return {a.x * s, a.y * s}; }
double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }
double cross(Point a, Point b) { return a.x * b.y - a.y * b.x; }
double norm(Point a) { return std::hypot(a.x, a.y); }

double signed_area(std::span<const Point> poly) {
  double a = 0.0;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) a += cross(poly[j], poly[i]);
  return 0.5 * a;
}

std::vector<Point> ccw(std::span<const Point> poly) {
  std::vector<Point> out(poly.begin(), poly.end());
  if (signed_area(out) < 0) std::reverse(out.begin(), out.end());
  return out;
}

Point centroid(std::span<const Point> poly) {
  double a = 0.0, cx = 0.0, cy = 0.0;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const double f = cross(poly[j], poly[i]);
    a += f;
    cx += (poly[j].x + poly[i].x) * f;
    cy += (poly[j].y + poly[i].y) * f;
  }
  if (std::abs(a) < 1e-12) return poly.front();
  return {cx / (3.0 * a), cy / (3.0 * a)};
}

double point_segment_distance(Point p, Point a, Point b) {
  const Point d = sub(b, a);
  const double len2 = dot(d, d);
  double t = len2 > 0 ? dot(sub(p, a), d) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return norm(sub(p, add(a, scale(d, t))));
}

double segment_distance(Point a, Point b, Point c, Point d) {
  const Point r = sub(b, a), s = sub(d, c);
  const double den = cross(r, s);
  if (std::abs(den) > 1e-15) {
    const double t = cross(sub(c, a), s) / den;
    const double u = cross(sub(c, a), r) / den;
    if (t >= 0 && t <= 1 && u >= 0 && u <= 1) return 0.0;
  }
  return std::min({point_segment_distance(a, c, d), point_segment_distance(b, c, d),
                   point_segment_distance(c, a, b), point_segment_distance(d, a, b)});
}

double polygon_distance(Point p, std::span<const Point> poly) {
  if (geo::point_in_polygon(p, poly)) return 0.0;
  double best = 1e300;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    best = std::min(best, point_segment_distance(p, poly[j], poly[i]));
  }
  return best;
}

struct Frame2 {
  Point center;
  double c, s;
  Point to_local(Point p) const {
    const Point d = sub(p, center);
    return {c * d.x + s * d.y, -s * d.x + c * d.y};
  }
  Point to_world(Point p) const { return {center.x + c * p.x - s * p.y, center.y + s * p.x + c * p.y}; }
};

void push_piece(std::vector<StreetSegment>& out, Point a, Point b, RoadClass cls) {
  if (norm(sub(b, a)) < 1e-6) return;
  out.push_back({{a, b}, cls});
}

/// Keeps only the largest touch-connected component.
std::vector<StreetSegment> keep_largest_component(std::vector<StreetSegment> segs) {
  if (segs.empty()) return segs;
  const auto comp = connected_components(segs, 1e-5);
  std::map<int, double> length;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    length[comp[i]] += norm(sub(segs[i].polyline.back(), segs[i].polyline.front()));
  }
  int best = comp[0];
  for (const auto& [c, len] : length)
    if (len > length[best]) best = c;
  std::vector<StreetSegment> out;
  for (std::size_t i = 0; i < segs.size(); ++i)
    if (comp[i] == best) out.push_back(std::move(segs[i]));
  return out;
}

std::vector<StreetSegment> lattice(const std::vector<Point>& poly, const DistrictParams& p, Rng& rng) {
  const Frame2 fr{centroid(poly), std::cos(p.orientation_deg * std::numbers::pi / 180.0),
                  std::sin(p.orientation_deg * std::numbers::pi / 180.0)};
  std::vector<Point> local;
  for (const auto& v : poly) local.push_back(fr.to_local(v));
  double minx = 1e300, maxx = -1e300, miny = 1e300, maxy = -1e300;
  for (const auto& v : local) {
    minx = std::min(minx, v.x);
    maxx = std::max(maxx, v.x);
    miny = std::min(miny, v.y);
    maxy = std::max(maxy, v.y);
  }
  const double b = p.block_size;
  const int nx = static_cast<int>(std::floor((maxx - minx) / b + 1e-9)) + 1;
  const int ny = static_cast<int>(std::floor((maxy - miny) / b + 1e-9)) + 1;
  std::vector<Point> nodes(static_cast<std::size_t>(nx) * ny);
  const double jitter = p.irregularity * b / 3.0;
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      Point q{minx + i * b, miny + j * b};
      const double ux = rng.uniform(-1.0, 1.0), uy = rng.uniform(-1.0, 1.0);
      // Only interior nodes move, so the district outline keeps its streets.
      if (jitter > 0 && geo::point_in_polygon(q, local) && polygon_distance(q, local) == 0.0) {
        double edge = 1e300;
        for (std::size_t a = 0, c = local.size() - 1; a < local.size(); c = a++) {
          edge = std::min(edge, point_segment_distance(q, local[c], local[a]));
        }
        if (edge > 1e-6) q = add(q, Point{jitter * ux, jitter * uy});
      }
      nodes[static_cast<std::size_t>(j) * nx + i] = q;
    }
  }
  std::vector<StreetSegment> out;
  auto edge = [&](Point a, Point c) {
    if (clip_to_convex(local, a, c)) push_piece(out, fr.to_world(a), fr.to_world(c), RoadClass::residential);
  };
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const Point q = nodes[static_cast<std::size_t>(j) * nx + i];
      if (i + 1 < nx) edge(q, nodes[static_cast<std::size_t>(j) * nx + i + 1]);
      if (j + 1 < ny) edge(q, nodes[static_cast<std::size_t>(j + 1) * nx + i]);
    }
  return out;
}

std::vector<StreetSegment> linear_development(const std::vector<Point>& poly, const DistrictParams& p,
                                              Rng& rng) {
  const Frame2 fr{centroid(poly), std::cos(p.orientation_deg * std::numbers::pi / 180.0),
                  std::sin(p.orientation_deg * std::numbers::pi / 180.0)};
  std::vector<Point> local;
  for (const auto& v : poly) local.push_back(fr.to_local(v));
  double minx = 1e300, maxx = -1e300, span_y = 0.0;
  for (const auto& v : local) {
    minx = std::min(minx, v.x);
    maxx = std::max(maxx, v.x);
    span_y = std::max(span_y, std::abs(v.y));
  }
  Point s0{minx - 1.0, 0.0}, s1{maxx + 1.0, 0.0};
  std::vector<StreetSegment> out;
  if (!clip_to_convex(local, s0, s1)) return out;
  const double b = p.block_size;
  const double spacing = b / 2.0;
  std::vector<double> stops{s0.x};
  for (double x = s0.x + spacing / 2; x < s1.x - spacing / 4; x += spacing) {
    const double jitter = p.irregularity * spacing * 0.3 * rng.uniform(-1.0, 1.0);
    const double sx = std::clamp(x + jitter, s0.x + 1.0, s1.x - 1.0);
    bool any = false;
    for (double side : {1.0, -1.0}) {
      const double len = b * rng.uniform(0.5, 0.9);
      Point a{sx, 0.0}, c{sx, side * len};
      if (clip_to_convex(local, a, c) && norm(sub(c, a)) > 1.0) {
        push_piece(out, fr.to_world(a), fr.to_world(c), RoadClass::residential);
        any = true;
      }
    }
    if (any) stops.push_back(sx);
  }
  stops.push_back(s1.x);
  std::sort(stops.begin(), stops.end());
  for (std::size_t i = 1; i < stops.size(); ++i) {
    push_piece(out, fr.to_world({stops[i - 1], 0.0}), fr.to_world({stops[i], 0.0}), RoadClass::tertiary);
  }
  (void)span_y;
  return out;
}

struct Cell {
  std::vector<Point> v;
  std::vector<char> street;  // edge i: v[i] -> v[i+1]
};

double cell_area(const Cell& c) { return std::abs(signed_area(c.v)); }

std::vector<StreetSegment> medieval(const std::vector<Point>& poly, const DistrictParams& p, Rng& rng) {
  std::vector<StreetSegment> out;
  const double target = p.block_size * p.block_size;
  std::deque<Cell> queue;
  queue.push_back({poly, std::vector<char>(poly.size(), 0)});
  std::vector<Cell> done;
  while (!queue.empty() && done.size() + queue.size() < 5000) {
    Cell cell = std::move(queue.front());
    queue.pop_front();
    if (cell_area(cell) < target * rng.uniform(0.8, 1.6)) {
      done.push_back(std::move(cell));
      continue;
    }
    const std::size_t n = cell.v.size();
    // Longest street edge; any edge for the root cell.
    std::size_t e1 = n;
    double best = -1.0;
    bool has_street = std::any_of(cell.street.begin(), cell.street.end(), [](char s) { return s != 0; });
    for (std::size_t i = 0; i < n; ++i) {
      if (has_street && !cell.street[i]) continue;
      const double len = norm(sub(cell.v[(i + 1) % n], cell.v[i]));
      if (len > best) {
        best = len;
        e1 = i;
      }
    }
    const Point a = cell.v[e1], b = cell.v[(e1 + 1) % n];
    const Point start = add(a, scale(sub(b, a), rng.uniform(0.35, 0.65)));
    const Point t = scale(sub(b, a), 1.0 / norm(sub(b, a)));
    const Point inward{-t.y, t.x};  // CCW polygon: left normal points inside
    const double ang = rng.uniform(-0.45, 0.45);
    const Point dir{inward.x * std::cos(ang) - inward.y * std::sin(ang),
                    inward.x * std::sin(ang) + inward.y * std::cos(ang)};
    // Exit point on another edge.
    std::size_t e2 = n;
    double tmin = 1e300, u2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (i == e1) continue;
      const Point c = cell.v[i], d = cell.v[(i + 1) % n];
      const Point s = sub(d, c);
      const double den = cross(dir, s);
      if (std::abs(den) < 1e-12) continue;
      const double tt = cross(sub(c, start), s) / den;
      const double uu = cross(sub(c, start), dir) / den;
      if (tt > 1e-6 && uu >= 0.0 && uu <= 1.0 && tt < tmin) {
        tmin = tt;
        e2 = i;
        u2 = uu;
      }
    }
    if (e2 == n || tmin < 1.0) {
      done.push_back(std::move(cell));
      continue;
    }
    const Point end = add(cell.v[e2], scale(sub(cell.v[(e2 + 1) % n], cell.v[e2]), u2));
    push_piece(out, start, end, RoadClass::residential);
    Cell A, B;
    A.v.push_back(start);
    A.street.push_back(cell.street[e1]);
    for (std::size_t i = (e1 + 1) % n;; i = (i + 1) % n) {
      A.v.push_back(cell.v[i]);
      A.street.push_back(cell.street[i]);
      if (i == e2) break;
    }
    A.v.push_back(end);
    A.street.push_back(1);
    B.v.push_back(end);
    B.street.push_back(cell.street[e2]);
    for (std::size_t i = (e2 + 1) % n;; i = (i + 1) % n) {
      B.v.push_back(cell.v[i]);
      B.street.push_back(cell.street[i]);
      if (i == e1) break;
    }
    B.v.push_back(start);
    B.street.push_back(1);
    queue.push_back(std::move(A));
    queue.push_back(std::move(B));
  }
  for (auto& c : queue) done.push_back(std::move(c));
  // Short dead-end links into some of the final cells.
  const double link_prob = 0.25 + 0.5 * p.irregularity;
  for (const auto& cell : done) {
    if (rng.uniform() > link_prob) continue;
    const std::size_t n = cell.v.size();
    std::vector<std::size_t> streets;
    for (std::size_t i = 0; i < n; ++i)
      if (cell.street[i]) streets.push_back(i);
    if (streets.empty()) continue;
    const std::size_t e = streets[rng.below(streets.size())];
    const Point a = cell.v[e], b = cell.v[(e + 1) % n];
    const double len = norm(sub(b, a));
    if (len < 4.0) continue;
    const Point mid = add(a, scale(sub(b, a), rng.uniform(0.4, 0.6)));
    const Point t = scale(sub(b, a), 1.0 / len);
    Point tip = add(mid, scale(Point{-t.y, t.x}, 0.35 * std::sqrt(cell_area(cell))));
    Point base = mid;
    if (clip_to_convex(cell.v, base, tip)) push_piece(out, base, tip, RoadClass::residential);
  }
  return out;
}

std::vector<StreetSegment> gated_compound(const std::vector<Point>& poly, const DistrictParams& p, Rng& rng) {
  std::vector<StreetSegment> out;
  const Point c = centroid(poly);
  std::vector<Point> loop;
  for (const auto& v : poly) loop.push_back(add(c, scale(sub(v, c), 0.65)));
  const std::size_t n = loop.size();
  const std::size_t entrance_edge = rng.below(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Point a = loop[i], b = loop[(i + 1) % n];
    const Point mid = add(a, scale(sub(b, a), 0.5));
    // Loop edges are split at their midpoints where the entrance or a cul-de-sac attaches.
    push_piece(out, a, mid, RoadClass::residential);
    push_piece(out, mid, b, RoadClass::residential);
    const Point outward = sub(mid, c);
    if (i == entrance_edge) {
      // Ray from the loop midpoint away from the centroid to the district boundary.
      double tmin = 1e300;
      for (std::size_t k = 0, j = poly.size() - 1; k < poly.size(); j = k++) {
        const Point s = sub(poly[k], poly[j]);
        const double den = cross(outward, s);
        if (std::abs(den) < 1e-12) continue;
        const double tt = cross(sub(poly[j], mid), s) / den;
        const double uu = cross(sub(poly[j], mid), outward) / den;
        if (tt > 0 && uu >= 0 && uu <= 1) tmin = std::min(tmin, tt);
      }
      if (tmin < 1e299) push_piece(out, mid, add(mid, scale(outward, tmin)), RoadClass::residential);
    } else {
      const double depth = rng.uniform(0.3, 0.6) * (1.0 - 0.3 * p.irregularity);
      push_piece(out, mid, add(mid, scale(outward, -depth)), RoadClass::residential);
    }
  }
  return out;
}

}  // namespace

bool is_convex(std::span<const Point> polygon) {
  if (polygon.size() < 3) return false;
  int sign = 0;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double z = cross(sub(polygon[(i + 1) % n], polygon[i]), sub(polygon[(i + 2) % n], polygon[(i + 1) % n]));
    if (std::abs(z) < 1e-12) continue;
    const int s = z > 0 ? 1 : -1;
    if (sign == 0) sign = s;
    if (s != sign) return false;
  }
  return sign != 0;
}

bool clip_to_convex(std::span<const Point> polygon_in, Point& a, Point& b) {
  const auto poly = ccw(polygon_in);
  const Point d = sub(b, a);
  double te = 0.0, tl = 1.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point v0 = poly[i], v1 = poly[(i + 1) % poly.size()];
    const Point e = sub(v1, v0);
    const Point nrm{-e.y, e.x};  // inward for CCW
    const double len = norm(nrm);
    const double num = dot(nrm, sub(a, v0)) + kEps * len;
    const double den = dot(nrm, d);
    if (std::abs(den) < 1e-15) {
      if (num < 0) return false;
      continue;
    }
    const double t = -num / den;
    if (den > 0) {
      te = std::max(te, t);
    } else {
      tl = std::min(tl, t);
    }
    if (te > tl) return false;
  }
  if ((tl - te) * norm(d) < 1e-9) return false;
  const Point a0 = a;
  a = add(a0, scale(d, te));
  b = add(a0, scale(d, tl));
  return true;
}

std::vector<int> connected_components(std::span<const StreetSegment> segments, double tolerance) {
  const std::size_t n = segments.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  double total = 0.0;
  std::size_t pieces = 0;
  for (const auto& s : segments)
    for (std::size_t v = 1; v < s.polyline.size(); ++v) {
      total += norm(sub(s.polyline[v], s.polyline[v - 1]));
      ++pieces;
    }
  const double cell = std::max(1.0, pieces ? total / static_cast<double>(pieces) : 1.0);
  std::unordered_map<std::int64_t, std::vector<std::pair<std::size_t, std::size_t>>> buckets;
  auto key = [](std::int64_t i, std::int64_t j) { return (i << 32) ^ (j & 0xffffffff); };
  for (std::size_t k = 0; k < n; ++k) {
    const auto& pl = segments[k].polyline;
    for (std::size_t v = 1; v < pl.size(); ++v) {
      const auto i0 = static_cast<std::int64_t>(std::floor((std::min(pl[v - 1].x, pl[v].x) - tolerance) / cell));
      const auto i1 = static_cast<std::int64_t>(std::floor((std::max(pl[v - 1].x, pl[v].x) + tolerance) / cell));
      const auto j0 = static_cast<std::int64_t>(std::floor((std::min(pl[v - 1].y, pl[v].y) - tolerance) / cell));
      const auto j1 = static_cast<std::int64_t>(std::floor((std::max(pl[v - 1].y, pl[v].y) + tolerance) / cell));
      for (auto i = i0; i <= i1; ++i)
        for (auto j = j0; j <= j1; ++j) buckets[key(i, j)].push_back({k, v});
    }
  }
  for (const auto& [_, items] : buckets) {
    for (std::size_t x = 0; x < items.size(); ++x)
      for (std::size_t y = x + 1; y < items.size(); ++y) {
        const auto [k1, v1] = items[x];
        const auto [k2, v2] = items[y];
        if (find(k1) == find(k2)) continue;
        const auto& p1 = segments[k1].polyline;
        const auto& p2 = segments[k2].polyline;
        if (segment_distance(p1[v1 - 1], p1[v1], p2[v2 - 1], p2[v2]) <= tolerance) parent[find(k1)] = find(k2);
      }
  }
  std::vector<int> out(n);
  std::map<std::size_t, int> ids;
  for (std::size_t k = 0; k < n; ++k) {
    auto [it, _] = ids.try_emplace(find(k), static_cast<int>(ids.size()));
    out[k] = it->second;
  }
  return out;
}

void SynthSpec::validate() const {
  if (!(width > 0 && height > 0)) throw Error("synth spec: extent must be positive");
  if (!(resolution > 0)) throw Error("synth spec: resolution must be positive");
  if (districts.empty()) throw Error("synth spec: empty district list");
  double min_block = 1e300;
  for (std::size_t i = 0; i < districts.size(); ++i) {
    const auto& d = districts[i];
    const std::string tag = "synth spec: district #" + std::to_string(i);
    if (d.polygon.size() < 3 || !is_convex(d.polygon)) throw Error(tag + " polygon must be convex with >= 3 vertices");
    if (d.pattern == PatternType::unlabeled) throw Error(tag + " must carry a labeled pattern type");
    if (!(d.params.block_size >= 10.0 && d.params.block_size <= 1000.0)) {
      throw Error(tag + " block size outside [10, 1000] m");
    }
    if (!(d.params.irregularity >= 0.0 && d.params.irregularity <= 1.0)) {
      throw Error(tag + " irregularity outside [0, 1]");
    }
    if (!std::isfinite(d.params.orientation_deg)) throw Error(tag + " orientation is not finite");
    min_block = std::min(min_block, d.params.block_size);
  }
  for (const auto& h : terrain.hills) {
    if (!(h.sigma > 0)) throw Error("synth spec: hill sigma must be positive");
  }
  const double step = min_block / 2.0;
  for (double y = 0.0; y <= height; y += step) {
    for (double x = 0.0; x <= width; x += step) {
      bool ok = false;
      for (const auto& d : districts) {
        if (polygon_distance({x, y}, d.polygon) <= d.params.block_size) {
          ok = true;
          break;
        }
      }
      if (!ok) {
        throw Error("synth spec: districts leave a gap wider than one block near (" + std::to_string(x) + ", " +
                    std::to_string(y) + ")");
      }
    }
  }
}

geo::Frame SynthSpec::frame() const {
  geo::Frame f;
  f.origin = {0.0, height};
  f.resolution = resolution;
  f.width = static_cast<int>(std::ceil(width / resolution - 1e-9));
  f.height = static_cast<int>(std::ceil(height / resolution - 1e-9));
  return f;
}

std::vector<StreetSegment> generate_district(const District& district, std::uint64_t seed) {
  Rng rng(seed);
  const auto poly = ccw(district.polygon);
  std::vector<StreetSegment> segs;
  switch (district.pattern) {
    case PatternType::orthogonal_grid: {
      DistrictParams p = district.params;
      p.irregularity = 0.0;
      segs = lattice(poly, p, rng);
      break;
    }
    case PatternType::irregular_grid: segs = lattice(poly, district.params, rng); break;
    case PatternType::linear_development: segs = linear_development(poly, district.params, rng); break;
    case PatternType::medieval: segs = medieval(poly, district.params, rng); break;
    case PatternType::gated_compound: segs = gated_compound(poly, district.params, rng); break;
    case PatternType::unlabeled: throw Error("cannot generate an unlabeled district");
  }
  return keep_largest_component(std::move(segs));
}

SynthOutput synth_map(const SynthSpec& spec) {
  spec.validate();
  SynthOutput out;
  out.frame = spec.frame();
  std::vector<StreetSegment> all;
  for (std::size_t i = 0; i < spec.districts.size(); ++i) {
    const auto& d = spec.districts[i];
    auto segs = generate_district(d, mix_seed(spec.seed, i));
    all.insert(all.end(), segs.begin(), segs.end());
    // District outlines double as arterials linking neighbouring districts.
    const std::size_t n = d.polygon.size();
    for (std::size_t k = 0; k < n; ++k) {
      push_piece(all, d.polygon[k], d.polygon[(k + 1) % n], RoadClass::secondary);
    }
    out.patterns.push_back({d.polygon, d.pattern});
  }
  out.streets = geo::node_network(all, spec.resolution * 0.25);

  out.elevation = FloatGrid(out.frame.width, out.frame.height);
  for (int r = 0; r < out.frame.height; ++r) {
    for (int c = 0; c < out.frame.width; ++c) {
      const Point q = out.frame.center_of(r, c);
      double z = spec.terrain.base_elevation;
      for (const auto& h : spec.terrain.hills) {
        const double d2 = (q.x - h.x) * (q.x - h.x) + (q.y - h.y) * (q.y - h.y);
        z += h.height * std::exp(-d2 / (2.0 * h.sigma * h.sigma));
      }
      out.elevation(r, c) = static_cast<float>(z);
    }
  }
  return out;
}

geo::MultiChannelMap render_map(const SynthOutput& out, const geo::RasterOptions& options) {
  auto streets = geo::rasterize_streets(out.streets, out.frame, options);
  auto aspect = geo::compute_aspect(out.elevation, out.frame.resolution);
  auto pattern = geo::rasterize_pattern_annotation(out.patterns, out.frame);
  auto map = geo::assemble_map(std::move(streets), out.elevation, std::move(aspect), std::move(pattern),
                               out.frame, options);
  map.junctions = sampling::extract_junctions(out.streets, out.frame).points;
  return map;
}

SynthSpec make_tiled_spec(const TiledLayout& layout) {
  if (layout.rows <= 0 || layout.cols <= 0) throw Error("tiled layout needs positive rows and cols");
  if (layout.patterns.empty()) throw Error("tiled layout needs at least one pattern type");
  Rng rng(mix_seed(layout.seed, 99));
  SynthSpec spec;
  spec.width = layout.width;
  spec.height = layout.height;
  spec.resolution = layout.resolution;
  spec.seed = layout.seed;
  const double dw = layout.width / layout.cols, dh = layout.height / layout.rows;
  for (int r = 0; r < layout.rows; ++r) {
    for (int c = 0; c < layout.cols; ++c) {
      District d;
      const double x0 = c * dw, y0 = r * dh;
      d.polygon = {{x0, y0}, {x0 + dw, y0}, {x0 + dw, y0 + dh}, {x0, y0 + dh}};
      d.pattern = layout.patterns[rng.below(layout.patterns.size())];
      d.params.block_size = rng.uniform(layout.block_min, layout.block_max);
      d.params.orientation_deg = rng.uniform(-layout.orientation_max_deg, layout.orientation_max_deg);
      d.params.irregularity = d.pattern == PatternType::orthogonal_grid
                                  ? 0.0
                                  : rng.uniform(layout.irregularity_min, layout.irregularity_max);
      spec.districts.push_back(std::move(d));
    }
  }
  spec.terrain.base_elevation = 200.0;
  for (int i = 0; i < layout.hills; ++i) {
    spec.terrain.hills.push_back({rng.uniform(0.0, layout.width), rng.uniform(0.0, layout.height),
                                  rng.uniform(20.0, 80.0),
                                  rng.uniform(0.1, 0.3) * std::min(layout.width, layout.height)});
  }
  return spec;
}

SynthSpec spec_from_json(const nlohmann::json& j) {
  if (j.contains("tiled")) {
    const auto& t = j.at("tiled");
    TiledLayout l;
    l.width = t.value("width", l.width);
    l.height = t.value("height", l.height);
    l.resolution = t.value("resolution", l.resolution);
    l.rows = t.value("rows", l.rows);
    l.cols = t.value("cols", l.cols);
    if (t.contains("patterns")) {
      l.patterns.clear();
      for (const auto& p : t.at("patterns")) {
        const auto pt = geo::parse_pattern_type(p.get<std::string>());
        if (!pt) throw Error("unknown pattern type '" + p.get<std::string>() + "'");
        l.patterns.push_back(*pt);
      }
    }
    l.block_min = t.value("block_min", l.block_min);
    l.block_max = t.value("block_max", l.block_max);
    l.irregularity_min = t.value("irregularity_min", l.irregularity_min);
    l.irregularity_max = t.value("irregularity_max", l.irregularity_max);
    l.orientation_max_deg = t.value("orientation_max", l.orientation_max_deg);
    l.hills = t.value("hills", l.hills);
    l.seed = j.value("seed", t.value("seed", std::uint64_t{0}));
    return make_tiled_spec(l);
  }
  SynthSpec s;
  s.width = j.at("extent").at(0).get<double>();
  s.height = j.at("extent").at(1).get<double>();
  s.resolution = j.value("resolution", 2.0);
  s.seed = j.value("seed", std::uint64_t{0});
  for (const auto& jd : j.at("districts")) {
    District d;
    for (const auto& p : jd.at("polygon")) d.polygon.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    const auto name = jd.at("pattern").get<std::string>();
    const auto pt = geo::parse_pattern_type(name);
    if (!pt) throw Error("unknown pattern type '" + name + "'");
    d.pattern = *pt;
    d.params.block_size = jd.value("block_size", 100.0);
    d.params.orientation_deg = jd.value("orientation", 0.0);
    d.params.irregularity = jd.value("irregularity", 0.0);
    s.districts.push_back(std::move(d));
  }
  if (j.contains("terrain")) {
    const auto& t = j.at("terrain");
    s.terrain.base_elevation = t.value("base", 200.0);
    for (const auto& h : t.value("hills", nlohmann::json::array())) {
      s.terrain.hills.push_back({h.at("x").get<double>(), h.at("y").get<double>(), h.at("height").get<double>(),
                                 h.at("sigma").get<double>()});
    }
  }
  return s;
}

nlohmann::json spec_to_json(const SynthSpec& spec) {
  nlohmann::json j{{"extent", {spec.width, spec.height}},
                   {"resolution", spec.resolution},
                   {"seed", spec.seed},
                   {"districts", nlohmann::json::array()}};
  for (const auto& d : spec.districts) {
    nlohmann::json poly = nlohmann::json::array();
    for (const auto& p : d.polygon) poly.push_back({p.x, p.y});
    j["districts"].push_back({{"polygon", poly},
                              {"pattern", std::string(geo::to_string(d.pattern))},
                              {"block_size", d.params.block_size},
                              {"orientation", d.params.orientation_deg},
                              {"irregularity", d.params.irregularity}});
  }
  nlohmann::json hills = nlohmann::json::array();
  for (const auto& h : spec.terrain.hills) {
    hills.push_back({{"x", h.x}, {"y", h.y}, {"height", h.height}, {"sigma", h.sigma}});
  }
  j["terrain"] = {{"base", spec.terrain.base_elevation}, {"hills", hills}};
  return j;
}

}  // namespace streetgen::synth
