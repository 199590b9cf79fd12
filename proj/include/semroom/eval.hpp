#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "semroom/core.hpp"
#include "semroom/decoder.hpp"
#include "semroom/fitting.hpp"
#include "semroom/meshing.hpp"
#include "semroom/scene.hpp"
#include "semroom/triplane.hpp"

namespace semroom {

struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Reported when an expected class mesh came out empty.
inline constexpr double kCdSentinel = 1e3;

namespace detail {

// Exact nearest-neighbor kd-tree over 3D points (median split).
class KdTree {
 public:
  explicit KdTree(const std::vector<Vec3>& pts) : pts_(pts) {
    if (pts.empty()) throw EvalError("KdTree: empty point set");
    order_.resize(pts.size());
    std::iota(order_.begin(), order_.end(), 0u);
    nodes_.reserve(2 * pts.size());
    root_ = build(0, pts.size(), 0);
  }

  double nearest_sq(const Vec3& q) const {
    double best = std::numeric_limits<double>::infinity();
    search(root_, q, best);
    return best;
  }

 private:
  struct Node {
    int left = -1, right = -1;
    std::uint32_t point = 0;
    int axis = 0;
  };

  int build(std::size_t lo, std::size_t hi, int axis) {
    if (lo >= hi) return -1;
    std::size_t mid = (lo + hi) / 2;
    std::nth_element(order_.begin() + lo, order_.begin() + mid, order_.begin() + hi,
                     [&](std::uint32_t a, std::uint32_t b) {
                       return pts_[a][axis] < pts_[b][axis];
                     });
    int id = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    nodes_[id].point = order_[mid];
    nodes_[id].axis = axis;
    int left = build(lo, mid, (axis + 1) % 3);
    int right = build(mid + 1, hi, (axis + 1) % 3);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  void search(int id, const Vec3& q, double& best) const {
    if (id < 0) return;
    const Node& n = nodes_[id];
    const Vec3& p = pts_[n.point];
    Vec3 d = q - p;
    best = std::min(best, dot(d, d));
    double delta = q[n.axis] - p[n.axis];
    int near = delta < 0 ? n.left : n.right;
    int far = delta < 0 ? n.right : n.left;
    search(near, q, best);
    if (delta * delta < best) search(far, q, best);
  }

  const std::vector<Vec3>& pts_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

inline double nearest_sq_brute(const Vec3& q, const std::vector<Vec3>& pts) {
  double best = std::numeric_limits<double>::infinity();
  for (const Vec3& p : pts) {
    Vec3 d = q - p;
    best = std::min(best, dot(d, d));
  }
  return best;
}

}  // namespace detail

// Symmetric mean of squared nearest-neighbor distances:
// 0.5*mean_a min_b |a-b|^2 + 0.5*mean_b min_a |a-b|^2.
inline double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
                      bool brute_force = false) {
  if (a.empty() || b.empty()) throw EvalError("chamfer: empty point set");
  double sum_ab = 0, sum_ba = 0;
  if (brute_force) {
    for (const Vec3& p : a) sum_ab += detail::nearest_sq_brute(p, b);
    for (const Vec3& p : b) sum_ba += detail::nearest_sq_brute(p, a);
  } else {
    detail::KdTree ta(a), tb(b);
    for (const Vec3& p : a) sum_ab += tb.nearest_sq(p);
    for (const Vec3& p : b) sum_ba += ta.nearest_sq(p);
  }
  return 0.5 * sum_ab / static_cast<double>(a.size()) +
         0.5 * sum_ba / static_cast<double>(b.size());
}

// Area-weighted uniform surface samples on a triangle mesh.
inline std::vector<Vec3> sample_mesh_points(const TriangleMesh& mesh, std::size_t n, Rng& rng) {
  if (mesh.empty()) throw EvalError("sample_mesh_points: empty mesh");
  std::vector<double> cum(mesh.triangles.size());
  double total = 0;
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
    const auto& t = mesh.triangles[i];
    total += triangle_area(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
    cum[i] = total;
  }
  if (total <= 0) throw EvalError("sample_mesh_points: zero-area mesh");
  std::vector<Vec3> out;
  out.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    double r = rng.uniform() * total;
    std::size_t i = std::lower_bound(cum.begin(), cum.end(), r) - cum.begin();
    if (i >= mesh.triangles.size()) i = mesh.triangles.size() - 1;
    const auto& t = mesh.triangles[i];
    double u = rng.uniform(), v = rng.uniform();
    if (u + v > 1) {
      u = 1 - u;
      v = 1 - v;
    }
    const Vec3& a = mesh.vertices[t[0]];
    const Vec3& b = mesh.vertices[t[1]];
    const Vec3& c = mesh.vertices[t[2]];
    out.push_back(a + (b - a) * u + (c - a) * v);
  }
  return out;
}

struct ClassCdResult {
  double cd = kCdSentinel;
  bool empty_mesh = false;
};

// Chamfer between samples on an extracted class mesh and analytic surface
// samples of the same class.
inline ClassCdResult class_cd(const TriangleMesh& mesh, const Scene& scene, int l,
                              std::size_t n_samples, std::uint64_t seed) {
  if (mesh.empty()) return {kCdSentinel, true};
  Rng rng(mix_seed(seed, 0xCD00 + static_cast<std::uint64_t>(l)));
  std::vector<Vec3> mesh_pts = sample_mesh_points(mesh, n_samples, rng);
  std::vector<int> counts(scene.classes.size(), 0);
  counts[l] = static_cast<int>(n_samples);
  SurfaceSamples ana = std::move(sample_surface(scene, counts, rng.raw())[l]);
  return {chamfer(mesh_pts, ana.points), false};
}

inline ClassCdResult class_cd(const TriPlane& T, const DecoderMlp& decoder, const Scene& scene,
                              int l, int grid_res, std::size_t n_samples, std::uint64_t seed) {
  auto field = [&](const Vec3& p) { return sdf_at(T, decoder, p)[l]; };
  TriangleMesh mesh = marching_cubes(field, grid_res);
  mesh.class_id = l;
  return class_cd(mesh, scene, l, n_samples, seed);
}

// Signed distance of a point to a closed mesh: unsigned nearest distance to
// any triangle, negated when a ray-parity test says the point is inside.
inline double point_triangle_dist_sq(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Ericson, Real-Time Collision Detection, closest-point-on-triangle.
  Vec3 ab = b - a, ac = c - a, ap = p - a;
  double d1 = dot(ab, ap), d2 = dot(ac, ap);
  if (d1 <= 0 && d2 <= 0) {
    return dot(ap, ap);
  }
  Vec3 bp = p - b;
  double d3 = dot(ab, bp), d4 = dot(ac, bp);
  if (d3 >= 0 && d4 <= d3) {
    return dot(bp, bp);
  }
  double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    double v = d1 / (d1 - d3);
    Vec3 q = ap - ab * v;
    return dot(q, q);
  }
  Vec3 cp = p - c;
  double d5 = dot(ab, cp), d6 = dot(ac, cp);
  if (d6 >= 0 && d5 <= d6) {
    return dot(cp, cp);
  }
  double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    double w = d2 / (d2 - d6);
    Vec3 q = ap - ac * w;
    return dot(q, q);
  }
  double va = d3 * d6 - d5 * d4;
  if (va <= 0 && d4 - d3 >= 0 && d5 - d6 >= 0) {
    double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    Vec3 q = bp - (c - b) * w;
    return dot(q, q);
  }
  double denom = 1.0 / (va + vb + vc);
  double v = vb * denom, w = vc * denom;
  Vec3 q = ap - ab * v - ac * w;
  return dot(q, q);
}

inline bool mesh_contains(const TriangleMesh& mesh, const Vec3& p) {
  // Parity of crossings along +x with a slightly irrational direction to
  // dodge edge-on hits.
  Vec3 dir = normalized({1.0, 1e-4, 2e-4});
  int crossings = 0;
  for (const auto& t : mesh.triangles) {
    const Vec3& a = mesh.vertices[t[0]];
    const Vec3& b = mesh.vertices[t[1]];
    const Vec3& c = mesh.vertices[t[2]];
    // Moller-Trumbore.
    Vec3 e1 = b - a, e2 = c - a;
    Vec3 h = cross(dir, e2);
    double det = dot(e1, h);
    if (std::fabs(det) < 1e-14) continue;
    double inv = 1.0 / det;
    Vec3 s = p - a;
    double u = dot(s, h) * inv;
    if (u < 0 || u > 1) continue;
    Vec3 q = cross(s, e1);
    double v = dot(dir, q) * inv;
    if (v < 0 || u + v > 1) continue;
    double dist = dot(e2, q) * inv;
    if (dist > 1e-12) ++crossings;
  }
  return (crossings % 2) == 1;
}

inline double mesh_signed_distance(const TriangleMesh& mesh, const Vec3& p) {
  if (mesh.empty()) return kEmptyClassSdf;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& t : mesh.triangles)
    best = std::min(best, point_triangle_dist_sq(p, mesh.vertices[t[0]], mesh.vertices[t[1]],
                                                 mesh.vertices[t[2]]));
  double d = std::sqrt(best);
  return mesh_contains(mesh, p) ? -d : d;
}

// A scene interpenetrates iff some cross-class pair has a surface sample of
// one class at depth > tau inside the other class.
inline bool scene_interpenetrates(const Scene& scene, double tau, std::size_t n_per_class,
                                  std::uint64_t seed) {
  int L = static_cast<int>(scene.classes.size());
  std::vector<int> counts(L, 0);
  for (int l = 0; l < L; ++l)
    counts[l] = class_surface_area(scene, l) > 0 ? static_cast<int>(n_per_class) : 0;
  std::vector<SurfaceSamples> samples = sample_surface(scene, counts, mix_seed(seed, 0x9E5));
  for (int l = 0; l < L; ++l) {
    for (const Vec3& p : samples[l].points) {
      for (int m = 0; m < L; ++m) {
        if (m == l) continue;
        if (scene_sdf_class(scene, p, m) < -tau) return true;
      }
    }
  }
  return false;
}

inline bool meshes_interpenetrate(const std::vector<TriangleMesh>& meshes, double tau,
                                  std::size_t n_per_class, std::uint64_t seed) {
  int L = static_cast<int>(meshes.size());
  for (int l = 0; l < L; ++l) {
    if (meshes[l].empty()) continue;
    Rng rng(mix_seed(seed, 0xA11 + l));
    std::vector<Vec3> pts = sample_mesh_points(meshes[l], n_per_class, rng);
    for (const Vec3& p : pts) {
      for (int m = 0; m < L; ++m) {
        if (m == l || meshes[m].empty()) continue;
        if (mesh_signed_distance(meshes[m], p) < -tau) return true;
      }
    }
  }
  return false;
}

// Fraction of scenes with no cross-class interpenetration.
inline double penetration_rate(const std::vector<Scene>& scenes, double tau,
                               std::size_t n_per_class = 400, std::uint64_t seed = 1) {
  if (scenes.empty()) return 1.0;
  std::size_t clean = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i)
    if (!scene_interpenetrates(scenes[i], tau, n_per_class, mix_seed(seed, i))) ++clean;
  return static_cast<double>(clean) / static_cast<double>(scenes.size());
}

inline double penetration_rate(const std::vector<std::vector<TriangleMesh>>& scenes, double tau,
                               std::size_t n_per_class = 400, std::uint64_t seed = 1) {
  if (scenes.empty()) return 1.0;
  std::size_t clean = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i)
    if (!meshes_interpenetrate(scenes[i], tau, n_per_class, mix_seed(seed, i))) ++clean;
  return static_cast<double>(clean) / static_cast<double>(scenes.size());
}

namespace detail {

inline bool point_in_tri2(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c) {
  auto side = [](const Vec2& u, const Vec2& v, const Vec2& w) {
    return (v.x - u.x) * (w.y - u.y) - (v.y - u.y) * (w.x - u.x);
  };
  double d1 = side(a, b, p), d2 = side(b, c, p), d3 = side(c, a, p);
  bool neg = d1 < 0 || d2 < 0 || d3 < 0;
  bool pos = d1 > 0 || d2 > 0 || d3 > 0;
  return !(neg && pos);
}

}  // namespace detail

// Occupancy of the mesh footprint on the layout raster: cell (i,j) covers
// center (x,z) = (-1+(i+0.5)*2/r, -1+(j+0.5)*2/r) and is set when any
// triangle's xz-projection contains it.
inline std::vector<std::uint8_t> rasterize_footprint(const TriangleMesh& mesh, int r) {
  std::vector<std::uint8_t> grid(static_cast<std::size_t>(r) * r, 0);
  double cell = 2.0 / r;
  for (const auto& t : mesh.triangles) {
    Vec2 a{mesh.vertices[t[0]].x, mesh.vertices[t[0]].z};
    Vec2 b{mesh.vertices[t[1]].x, mesh.vertices[t[1]].z};
    Vec2 c{mesh.vertices[t[2]].x, mesh.vertices[t[2]].z};
    double lox = std::min({a.x, b.x, c.x}), hix = std::max({a.x, b.x, c.x});
    double loz = std::min({a.y, b.y, c.y}), hiz = std::max({a.y, b.y, c.y});
    int i0 = std::max(0, static_cast<int>(std::floor((lox + 1) / cell)));
    int i1 = std::min(r - 1, static_cast<int>(std::floor((hix + 1) / cell)));
    int j0 = std::max(0, static_cast<int>(std::floor((loz + 1) / cell)));
    int j1 = std::min(r - 1, static_cast<int>(std::floor((hiz + 1) / cell)));
    for (int i = i0; i <= i1; ++i) {
      for (int j = j0; j <= j1; ++j) {
        Vec2 p{-1 + (i + 0.5) * cell, -1 + (j + 0.5) * cell};
        if (detail::point_in_tri2(p, a, b, c)) grid[static_cast<std::size_t>(i) * r + j] = 1;
      }
    }
  }
  return grid;
}

// Per-class IoU between input layout channels and re-rasterized meshes.
// Classes empty in both are reported as 1.0.
inline std::vector<double> layout_iou(const LayoutMap& f_in,
                                      const std::vector<TriangleMesh>& meshes) {
  if (static_cast<int>(meshes.size()) != f_in.L) throw EvalError("layout_iou: class count");
  std::vector<double> out(f_in.L, 1.0);
  for (int l = 0; l < f_in.L; ++l) {
    std::vector<std::uint8_t> got = rasterize_footprint(meshes[l], f_in.r);
    std::size_t inter = 0, uni = 0;
    for (int i = 0; i < f_in.r; ++i) {
      for (int j = 0; j < f_in.r; ++j) {
        bool a = f_in.at(l, i, j) > 0.5;
        bool b = got[static_cast<std::size_t>(i) * f_in.r + j] != 0;
        inter += (a && b) ? 1 : 0;
        uni += (a || b) ? 1 : 0;
      }
    }
    out[l] = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  }
  return out;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw EvalError("median: empty");
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct EvalReport {
  std::vector<std::string> class_names;
  std::vector<std::vector<double>> cd;  // [scene][class], scene units
  std::vector<bool> penetrating;        // per scene
  std::vector<std::vector<double>> iou; // [scene][class]
  std::vector<double> cd_median;        // per class

  void finalize() {
    if (cd.empty()) return;
    std::size_t L = cd.front().size();
    cd_median.assign(L, 0.0);
    for (std::size_t l = 0; l < L; ++l) {
      std::vector<double> col;
      for (const auto& row : cd) col.push_back(row[l]);
      cd_median[l] = median(col);
    }
  }
};

// --- Ablation report ------------------------------------------------------

struct AblationConfig {
  std::string name;
  bool c2f = true, sss = true, sns = true;
};

struct AblationRow {
  AblationConfig config;
  std::vector<double> cd_median;  // per class, scene units
  LossReport final_loss;          // averaged over scenes
  std::size_t failures = 0;
};

// Published reference medians (x1e-3, squared CD convention differs; shown
// for context only).
inline constexpr double kReferenceCdWall = 0.94e-3;
inline constexpr double kReferenceCdBed = 0.11e-3;
inline constexpr double kReferenceCdCabinet = 0.26e-3;

// Runs per-scene fitting once per config against a shared frozen decoder and
// reports per-class CD medians. Deterministic given `seed`.
inline std::vector<AblationRow> ablation_report(const std::vector<AblationConfig>& configs,
                                                const std::vector<Scene>& scenes,
                                                const DecoderMlp& decoder, const FitConfig& base,
                                                int grid_res, std::size_t n_samples,
                                                std::uint64_t seed, int threads = 0) {
  if (scenes.size() < 3) throw EvalError("ablation_report: need >= 3 scenes per config");
  std::vector<AblationRow> rows;
  for (const AblationConfig& ac : configs) {
    FitConfig cfg = base;
    cfg.c2f = ac.c2f;
    cfg.sss = ac.sss;
    cfg.sns = ac.sns;
    AblationRow row;
    row.config = ac;
    std::size_t L = scenes.front().classes.size();
    std::vector<std::vector<double>> cds(scenes.size());
    std::vector<LossReport> losses(scenes.size());
    std::vector<char> failed(scenes.size(), 0);
    parallel_for(scenes.size(), threads, [&](std::size_t i) {
      try {
        FitResult fr = fit_scene(scenes[i], decoder, cfg, mix_seed(seed, i), nullptr);
        losses[i] = fr.history.back();
        for (std::size_t l = 0; l < L; ++l) {
          ClassCdResult r = class_cd(fr.plane, decoder, scenes[i], static_cast<int>(l), grid_res,
                                     n_samples, mix_seed(seed, 1000 + i));
          cds[i].push_back(r.cd);
        }
      } catch (const std::exception&) {
        failed[i] = 1;
      }
    });
    row.cd_median.assign(L, 0.0);
    for (std::size_t l = 0; l < L; ++l) {
      std::vector<double> col;
      for (std::size_t i = 0; i < scenes.size(); ++i)
        if (!failed[i]) col.push_back(cds[i][l]);
      row.cd_median[l] = col.empty() ? kCdSentinel : median(col);
    }
    double inv = 0;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      if (failed[i]) {
        ++row.failures;
        continue;
      }
      row.final_loss.eik += losses[i].eik;
      row.final_loss.sdf += losses[i].sdf;
      row.final_loss.sur += losses[i].sur;
      row.final_loss.nor += losses[i].nor;
      row.final_loss.total += losses[i].total;
      inv += 1;
    }
    if (inv > 0) {
      row.final_loss.eik /= inv;
      row.final_loss.sdf /= inv;
      row.final_loss.sur /= inv;
      row.final_loss.nor /= inv;
      row.final_loss.total /= inv;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string ablation_table(const std::vector<AblationRow>& rows,
                                  const std::vector<std::string>& class_names) {
  std::string out;
  char buf[256];
  out += "config            C2F SSS SNS";
  for (const auto& n : class_names) out += "  CD_" + n + " (x1e-3)";
  out += "  failures\n";
  for (const AblationRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%-18s %s   %s   %s ", r.config.name.c_str(),
                  r.config.c2f ? "+" : "-", r.config.sss ? "+" : "-", r.config.sns ? "+" : "-");
    out += buf;
    for (double cd : r.cd_median) {
      std::snprintf(buf, sizeof buf, "  %14.4f", cd * 1e3);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, "  %zu\n", r.failures);
    out += buf;
  }
  std::snprintf(buf, sizeof buf,
                "reference medians (x1e-3, different CD convention): wall %.2f bed %.2f "
                "cabinet %.2f\n",
                kReferenceCdWall * 1e3, kReferenceCdBed * 1e3, kReferenceCdCabinet * 1e3);
  out += buf;
  return out;
}

}  // namespace semroom
