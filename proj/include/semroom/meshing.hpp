#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "semroom/core.hpp"
#include "semroom/mc_tables.hpp"

namespace semroom {

struct MeshError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  int class_id = -1;

  bool empty() const { return triangles.empty(); }
};

struct Polyline2D {
  std::vector<Vec2> points;
  bool closed = false;
};

inline double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * norm(cross(b - a, c - a));
}

inline double polygon_area(const std::vector<Vec2>& pts) {
  double s = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vec2& p = pts[i];
    const Vec2& q = pts[(i + 1) % pts.size()];
    s += p.x * q.y - q.x * p.y;
  }
  return 0.5 * s;
}

// Drops triangles with repeated indices or area below eps.
inline void remove_degenerate_triangles(TriangleMesh& mesh, double eps = 1e-12) {
  std::vector<std::array<int, 3>> kept;
  kept.reserve(mesh.triangles.size());
  for (const auto& t : mesh.triangles) {
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) continue;
    if (triangle_area(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]) <= eps)
      continue;
    kept.push_back(t);
  }
  mesh.triangles = std::move(kept);
}

struct EdgeAudit {
  std::size_t boundary_edges = 0;      // used by exactly one triangle
  std::size_t non_manifold_edges = 0;  // used by three or more
  std::size_t interior_edges = 0;      // used by exactly two
};

inline EdgeAudit audit_edges(const TriangleMesh& mesh) {
  std::map<std::pair<int, int>, int> uses;
  for (const auto& t : mesh.triangles) {
    for (int e = 0; e < 3; ++e) {
      int a = t[e], b = t[(e + 1) % 3];
      uses[{std::min(a, b), std::max(a, b)}] += 1;
    }
  }
  EdgeAudit audit;
  for (const auto& [edge, n] : uses) {
    (void)edge;
    if (n == 1)
      ++audit.boundary_edges;
    else if (n == 2)
      ++audit.interior_edges;
    else
      ++audit.non_manifold_edges;
  }
  return audit;
}

// Zero-isosurface of `field` sampled on a grid_res^3 lattice over [-1,1]^3
// with linear edge interpolation. Grid nodes follow the align-corners
// convention (node i at -1 + 2i/(grid_res-1)). Triangles are oriented with
// normals pointing toward positive field values. Shared edge vertices are
// welded so the output is edge-manifold wherever the field is clean.
inline TriangleMesh marching_cubes(const std::function<double(const Vec3&)>& field, int grid_res) {
  if (grid_res < 8) throw MeshError("marching_cubes: grid_res must be >= 8");
  const int n = grid_res;
  const double step = 2.0 / (n - 1);
  auto node = [&](int i, int j, int k) {
    return Vec3{-1.0 + step * i, -1.0 + step * j, -1.0 + step * k};
  };

  std::vector<double> values(static_cast<std::size_t>(n) * n * n);
  auto vat = [&](int i, int j, int k) -> double& {
    return values[(static_cast<std::size_t>(i) * n + j) * n + k];
  };
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) vat(i, j, k) = field(node(i, j, k));

  TriangleMesh mesh;
  // Shared vertex per lattice edge: key = (node index, axis).
  std::map<std::array<int, 4>, int> edge_vertex;
  auto edge_point = [&](int i0, int j0, int k0, int i1, int j1, int k1) {
    std::array<int, 4> key{std::min(i0, i1), std::min(j0, j1), std::min(k0, k1),
                           (i0 != i1) ? 0 : (j0 != j1) ? 1 : 2};
    auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    double f0 = vat(i0, j0, k0), f1 = vat(i1, j1, k1);
    double mu = (f0 == f1) ? 0.5 : clampd(-f0 / (f1 - f0), 0.0, 1.0);
    Vec3 a = node(i0, j0, k0), b = node(i1, j1, k1);
    int idx = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back(a + (b - a) * mu);
    edge_vertex.emplace(key, idx);
    return idx;
  };

  for (int i = 0; i + 1 < n; ++i) {
    for (int j = 0; j + 1 < n; ++j) {
      for (int k = 0; k + 1 < n; ++k) {
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          const int* o = mc::kCornerOffset[c];
          if (vat(i + o[0], j + o[1], k + o[2]) < 0.0) cube |= 1 << c;
        }
        if (mc::kEdgeTable[cube] == 0) continue;
        int verts[12];
        for (int e = 0; e < 12; ++e) {
          if (!(mc::kEdgeTable[cube] & (1u << e))) continue;
          const int* a = mc::kCornerOffset[mc::kEdgeCorners[e][0]];
          const int* b = mc::kCornerOffset[mc::kEdgeCorners[e][1]];
          verts[e] = edge_point(i + a[0], j + a[1], k + a[2], i + b[0], j + b[1], k + b[2]);
        }
        for (int t = 0; mc::kTriTable[cube][t] != -1; t += 3) {
          // Table order already winds counter-clockwise seen from the
          // positive-field side.
          mesh.triangles.push_back({verts[mc::kTriTable[cube][t]],
                                    verts[mc::kTriTable[cube][t + 1]],
                                    verts[mc::kTriTable[cube][t + 2]]});
        }
      }
    }
  }
  remove_degenerate_triangles(mesh);
  return mesh;
}

// Contours of the 0.5 level of a binary mask (cell (i,j) spans
// [i,i+1]x[j,j+1]; outside is empty). Directed boundary edges keep filled
// cells on the left, so outer contours come out counter-clockwise and holes
// clockwise. Points are lattice corner coordinates in cell units.
inline std::vector<Polyline2D> extract_boundary(const std::vector<std::uint8_t>& mask, int r) {
  if (static_cast<int>(mask.size()) != r * r) throw MeshError("extract_boundary: bad mask size");
  auto filled = [&](int i, int j) {
    return i >= 0 && j >= 0 && i < r && j < r && mask[static_cast<std::size_t>(i) * r + j] != 0;
  };
  struct Pt {
    int x, y;
    bool operator<(const Pt& o) const { return x != o.x ? x < o.x : y < o.y; }
    bool operator==(const Pt& o) const { return x == o.x && y == o.y; }
  };
  // Directed edges start -> end, grouped by start point.
  std::multimap<Pt, Pt> edges;
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < r; ++j) {
      if (!filled(i, j)) continue;
      if (!filled(i, j - 1)) edges.insert({{i, j}, {i + 1, j}});
      if (!filled(i + 1, j)) edges.insert({{i + 1, j}, {i + 1, j + 1}});
      if (!filled(i, j + 1)) edges.insert({{i + 1, j + 1}, {i, j + 1}});
      if (!filled(i - 1, j)) edges.insert({{i, j + 1}, {i, j}});
    }
  }

  std::vector<Polyline2D> contours;
  while (!edges.empty()) {
    auto first = edges.begin();
    Pt start = first->first;
    Pt prev = start, cur = first->second;
    edges.erase(first);
    std::vector<Pt> loop{start};
    while (!(cur == start)) {
      loop.push_back(cur);
      auto [lo, hi] = edges.equal_range(cur);
      if (lo == edges.end() || lo == hi) throw MeshError("extract_boundary: open contour");
      // At pinch points prefer the sharpest left turn so loops stay simple.
      auto best = lo;
      int best_turn = -3;
      int dx = cur.x - prev.x, dy = cur.y - prev.y;
      for (auto it = lo; it != hi; ++it) {
        int ex = it->second.x - cur.x, ey = it->second.y - cur.y;
        int turn = dx * ey - dy * ex;  // +1 left, 0 straight, -1 right
        if (turn > best_turn) {
          best_turn = turn;
          best = it;
        }
      }
      prev = cur;
      cur = best->second;
      edges.erase(best);
    }
    Polyline2D poly;
    poly.closed = true;
    poly.points.reserve(loop.size());
    for (const Pt& p : loop) poly.points.push_back({double(p.x), double(p.y)});
    contours.push_back(std::move(poly));
  }
  return contours;
}

namespace detail {

inline double point_segment_dist(const Vec2& p, const Vec2& a, const Vec2& b) {
  Vec2 ab{b.x - a.x, b.y - a.y};
  Vec2 ap{p.x - a.x, p.y - a.y};
  double len2 = dot2(ab, ab);
  double t = len2 > 0 ? clampd(dot2(ap, ab) / len2, 0.0, 1.0) : 0.0;
  Vec2 d{ap.x - t * ab.x, ap.y - t * ab.y};
  return std::sqrt(dot2(d, d));
}

inline void rdp_open(const std::vector<Vec2>& pts, std::size_t lo, std::size_t hi, double tol,
                     std::vector<char>& keep) {
  if (hi <= lo + 1) return;
  double worst = -1;
  std::size_t split = lo;
  for (std::size_t i = lo + 1; i < hi; ++i) {
    double d = point_segment_dist(pts[i], pts[lo], pts[hi]);
    if (d > worst) {
      worst = d;
      split = i;
    }
  }
  if (worst > tol) {
    keep[split] = 1;
    rdp_open(pts, lo, split, tol, keep);
    rdp_open(pts, split, hi, tol, keep);
  }
}

}  // namespace detail

// Ramer-Douglas-Peucker. Open chains keep both endpoints; closed chains are
// split at the two mutually farthest points and each half simplified.
inline Polyline2D rdp_simplify(const Polyline2D& poly, double tol) {
  if (tol < 0) throw MeshError("rdp_simplify: tol must be >= 0");
  const auto& pts = poly.points;
  if (pts.size() <= 2) return poly;
  std::vector<char> keep(pts.size(), 0);
  if (!poly.closed) {
    keep.front() = keep.back() = 1;
    detail::rdp_open(pts, 0, pts.size() - 1, tol, keep);
  } else {
    std::size_t a = 0, b = 0;
    double best = -1;
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (std::size_t j = i + 1; j < pts.size(); ++j) {
        Vec2 d{pts[i].x - pts[j].x, pts[i].y - pts[j].y};
        double n2 = dot2(d, d);
        if (n2 > best) {
          best = n2;
          a = i;
          b = j;
        }
      }
    keep[a] = keep[b] = 1;
    // Two open halves a..b and b..a (wrapping) in a rotated copy.
    std::vector<Vec2> rot(pts.size() + 1);
    std::vector<std::size_t> src(pts.size() + 1);
    for (std::size_t i = 0; i <= pts.size(); ++i) {
      src[i] = (a + i) % pts.size();
      rot[i] = pts[src[i]];
    }
    std::size_t bpos = (b + pts.size() - a) % pts.size();
    std::vector<char> rkeep(rot.size(), 0);
    detail::rdp_open(rot, 0, bpos, tol, rkeep);
    detail::rdp_open(rot, bpos, rot.size() - 1, tol, rkeep);
    for (std::size_t i = 0; i < rot.size() - 1; ++i)
      if (rkeep[i]) keep[src[i]] = 1;
  }
  Polyline2D out;
  out.closed = poly.closed;
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (keep[i]) out.points.push_back(pts[i]);
  return out;
}

namespace detail {

inline bool segments_intersect(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
  auto orient = [](const Vec2& p, const Vec2& q, const Vec2& r) {
    double v = (q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x);
    return v > 1e-12 ? 1 : v < -1e-12 ? -1 : 0;
  };
  int o1 = orient(a, b, c), o2 = orient(a, b, d), o3 = orient(c, d, a), o4 = orient(c, d, b);
  if (o1 != o2 && o3 != o4 && o1 != 0 && o2 != 0 && o3 != 0 && o4 != 0) return true;
  return false;
}

inline bool polygon_self_intersects(const std::vector<Vec2>& pts) {
  std::size_t n = pts.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      // Skip adjacent edges (shared endpoint).
      if (j == i || (j + 1) % n == i || (i + 1) % n == j) continue;
      if (segments_intersect(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n])) return true;
    }
  }
  return false;
}

inline bool point_in_triangle(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c) {
  auto side = [](const Vec2& p, const Vec2& q, const Vec2& r) {
    return (q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x);
  };
  double d1 = side(a, b, p), d2 = side(b, c, p), d3 = side(c, a, p);
  bool neg = d1 < 0 || d2 < 0 || d3 < 0;
  bool pos = d1 > 0 || d2 > 0 || d3 > 0;
  return !(neg && pos);
}

}  // namespace detail

// Ear clipping: returns exactly n-2 index triples into poly.points, oriented
// counter-clockwise. Throws on self-intersecting input.
inline std::vector<std::array<int, 3>> triangulate_polygon(const Polyline2D& poly) {
  if (!poly.closed || poly.points.size() < 3)
    throw MeshError("triangulate_polygon: need a closed polygon with >= 3 points");
  if (detail::polygon_self_intersects(poly.points))
    throw MeshError("triangulate_polygon: self-intersecting polygon");
  const auto& pts = poly.points;
  const int n = static_cast<int>(pts.size());
  bool ccw = polygon_area(pts) > 0;

  std::vector<int> ring(n);
  for (int i = 0; i < n; ++i) ring[i] = ccw ? i : n - 1 - i;

  auto convex = [&](int prev, int cur, int next) {
    const Vec2& a = pts[ring[prev]];
    const Vec2& b = pts[ring[cur]];
    const Vec2& c = pts[ring[next]];
    return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x) > 1e-15;
  };

  std::vector<std::array<int, 3>> tris;
  int guard = 0;
  while (static_cast<int>(ring.size()) > 3) {
    int m = static_cast<int>(ring.size());
    bool clipped = false;
    for (int i = 0; i < m; ++i) {
      int prev = (i + m - 1) % m, next = (i + 1) % m;
      if (!convex(prev, i, next)) continue;
      bool ear = true;
      for (int k = 0; k < m && ear; ++k) {
        if (k == prev || k == i || k == next) continue;
        if (detail::point_in_triangle(pts[ring[k]], pts[ring[prev]], pts[ring[i]],
                                      pts[ring[next]]))
          ear = false;
      }
      if (!ear) continue;
      tris.push_back({ring[prev], ring[i], ring[next]});
      ring.erase(ring.begin() + i);
      clipped = true;
      break;
    }
    if (!clipped || ++guard > 4 * n)
      throw MeshError("triangulate_polygon: no ear found (degenerate polygon)");
  }
  tris.push_back({ring[0], ring[1], ring[2]});
  return tris;
}

// Closed prism shell around the footprint: outer and inner rings offset by
// +-thickness/2 (miter joints), extruded from y=0 to y=height, with top and
// bottom annulus bands so the wall band has no boundary edges. The floor is
// an ear-clipped triangulation of the footprint at y=0. height <= 0 yields
// the floor only.
inline TriangleMesh build_wall_mesh(const Polyline2D& footprint, double height, double thickness,
                                    int class_id = -1) {
  if (!footprint.closed || footprint.points.size() < 3)
    throw MeshError("build_wall_mesh: need a closed footprint with >= 3 points");
  if (detail::polygon_self_intersects(footprint.points))
    throw MeshError("build_wall_mesh: self-intersecting footprint");

  std::vector<Vec2> pts = footprint.points;
  if (polygon_area(pts) < 0) std::reverse(pts.begin(), pts.end());
  const int n = static_cast<int>(pts.size());

  TriangleMesh mesh;
  mesh.class_id = class_id;

  // Floor at y=0 (x maps to plane-x, polyline y to world z). Footprint is CCW
  // in (x, y); viewed from +world-y that ordering appears clockwise, so swap
  // two vertices per triangle to face the floor upward.
  Polyline2D fp;
  fp.closed = true;
  fp.points = pts;
  auto floor_tris = triangulate_polygon(fp);
  for (const Vec2& p : pts) mesh.vertices.push_back({p.x, 0.0, p.y});
  for (const auto& t : floor_tris) mesh.triangles.push_back({t[0], t[2], t[1]});

  if (height > 0) {
    if (thickness <= 0) throw MeshError("build_wall_mesh: thickness must be > 0");
    // Miter offsets: outward is to the right of travel for a CCW ring.
    std::vector<Vec2> outer(n), inner(n);
    for (int i = 0; i < n; ++i) {
      const Vec2& p0 = pts[(i + n - 1) % n];
      const Vec2& p1 = pts[i];
      const Vec2& p2 = pts[(i + 1) % n];
      auto edge_normal = [](const Vec2& a, const Vec2& b) {
        Vec2 d{b.x - a.x, b.y - a.y};
        double len = std::sqrt(dot2(d, d));
        if (len < 1e-12) throw MeshError("build_wall_mesh: duplicate footprint points");
        return Vec2{d.y / len, -d.x / len};
      };
      Vec2 n0 = edge_normal(p0, p1), n1 = edge_normal(p1, p2);
      double denom = 1.0 + dot2(n0, n1);
      if (denom < 1e-6) throw MeshError("build_wall_mesh: miter offset degenerate at sharp joint");
      Vec2 m{(n0.x + n1.x) / denom, (n0.y + n1.y) / denom};
      double h = thickness / 2;
      outer[i] = {p1.x + h * m.x, p1.y + h * m.y};
      inner[i] = {p1.x - h * m.x, p1.y - h * m.y};
    }
    if (detail::polygon_self_intersects(outer) || detail::polygon_self_intersects(inner))
      throw MeshError("build_wall_mesh: offset footprint self-intersects");

    int base = static_cast<int>(mesh.vertices.size());
    // Layout: outer bottom [0,n), outer top [n,2n), inner bottom [2n,3n), inner top [3n,4n).
    for (const Vec2& p : outer) mesh.vertices.push_back({p.x, 0.0, p.y});
    for (const Vec2& p : outer) mesh.vertices.push_back({p.x, height, p.y});
    for (const Vec2& p : inner) mesh.vertices.push_back({p.x, 0.0, p.y});
    for (const Vec2& p : inner) mesh.vertices.push_back({p.x, height, p.y});
    auto quad = [&](int a, int b, int c, int d) {
      mesh.triangles.push_back({a, c, b});
      mesh.triangles.push_back({a, d, c});
    };
    for (int i = 0; i < n; ++i) {
      int j = (i + 1) % n;
      // The footprint is CCW in (x,y); mapped into world (x,z) with y up,
      // ring traversal i->j followed by bottom->top must be reversed for the
      // outer sheet to face outward. quad() handles the flip.
      quad(base + i, base + j, base + n + j, base + n + i);               // outer side
      quad(base + 3 * n + i, base + 3 * n + j, base + 2 * n + j,
           base + 2 * n + i);                                             // inner side
      quad(base + n + i, base + n + j, base + 3 * n + j, base + 3 * n + i);  // top band
      quad(base + 2 * n + i, base + 2 * n + j, base + j, base + i);          // bottom band
    }
  }
  remove_degenerate_triangles(mesh);
  return mesh;
}

inline void save_obj(const TriangleMesh& mesh, const std::string& label, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw MeshError("save_obj: cannot open " + path);
  std::fprintf(f, "o %s\n", label.c_str());
  for (const Vec3& v : mesh.vertices) std::fprintf(f, "v %.9g %.9g %.9g\n", v.x, v.y, v.z);
  for (const auto& t : mesh.triangles)
    std::fprintf(f, "f %d %d %d\n", t[0] + 1, t[1] + 1, t[2] + 1);
  if (std::fclose(f) != 0) throw MeshError("save_obj: write failed for " + path);
}

inline TriangleMesh load_obj(const std::string& path, std::string* label = nullptr) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw MeshError("load_obj: cannot open " + path);
  TriangleMesh mesh;
  char line[512];
  while (std::fgets(line, sizeof line, f)) {
    if (line[0] == 'o' && line[1] == ' ') {
      if (label) {
        std::string s(line + 2);
        while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
        *label = s;
      }
    } else if (line[0] == 'v' && line[1] == ' ') {
      Vec3 v;
      if (std::sscanf(line + 2, "%lf %lf %lf", &v.x, &v.y, &v.z) != 3)
        throw MeshError("load_obj: bad vertex line");
      mesh.vertices.push_back(v);
    } else if (line[0] == 'f' && line[1] == ' ') {
      int a, b, c;
      if (std::sscanf(line + 2, "%d %d %d", &a, &b, &c) != 3)
        throw MeshError("load_obj: bad face line");
      mesh.triangles.push_back({a - 1, b - 1, c - 1});
    }
  }
  std::fclose(f);
  return mesh;
}

// One OBJ file per mesh, named scene_<id>_class_<name>.obj under dir.
inline std::vector<std::string> export_meshes(const std::vector<TriangleMesh>& meshes,
                                              const std::vector<std::string>& class_names,
                                              int scene_id, const std::string& dir) {
  if (meshes.size() != class_names.size())
    throw MeshError("export_meshes: meshes/class_names size mismatch");
  std::vector<std::string> paths;
  for (std::size_t l = 0; l < meshes.size(); ++l) {
    std::string label = "scene_" + std::to_string(scene_id) + "_class_" + class_names[l];
    std::string path = dir + "/" + label + ".obj";
    save_obj(meshes[l], label, path);
    paths.push_back(path);
  }
  return paths;
}

}  // namespace semroom
