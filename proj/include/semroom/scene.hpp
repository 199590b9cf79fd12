#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "semroom/core.hpp"

namespace semroom {

// SDF value reported for classes with no geometry; larger than the diameter
// of [-1,1]^3 so isosurfacing yields an empty mesh.
inline constexpr double kEmptyClassSdf = 10.0;

struct PartClass {
  int id = 0;
  std::string name;
};

struct Primitive {
  enum class Kind { AxisBox, YawBox };
  Kind kind = Kind::AxisBox;
  Vec3 center;
  Vec3 half_extents;  // strictly positive
  double yaw = 0.0;   // radians, about +y; used when kind == YawBox
};

struct Scene {
  std::vector<PartClass> classes;
  std::vector<std::vector<Primitive>> parts;  // parts[l]: primitives of class l

  int num_classes() const { return static_cast<int>(classes.size()); }
};

struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Exact signed distance to an (optionally yawed) box; negative inside.
inline double sdf_primitive(const Vec3& p, const Primitive& prim) {
  Vec3 d = p - prim.center;
  if (prim.kind == Primitive::Kind::YawBox && prim.yaw != 0.0) {
    double c = std::cos(prim.yaw), s = std::sin(prim.yaw);
    // world -> local: rotate by -yaw about y
    d = Vec3{c * d.x - s * d.z, d.y, s * d.x + c * d.z};
  }
  Vec3 q{std::fabs(d.x) - prim.half_extents.x,
         std::fabs(d.y) - prim.half_extents.y,
         std::fabs(d.z) - prim.half_extents.z};
  double outside = std::sqrt(std::max(q.x, 0.0) * std::max(q.x, 0.0) +
                             std::max(q.y, 0.0) * std::max(q.y, 0.0) +
                             std::max(q.z, 0.0) * std::max(q.z, 0.0));
  double inside = std::min(std::max(q.x, std::max(q.y, q.z)), 0.0);
  return outside + inside;
}

// Per-class union SDF. Union-min is exact outside and conservative inside
// shared corners (wall shell interior), which training queries rarely hit.
inline std::vector<double> scene_sdf(const Scene& scene, const Vec3& p) {
  std::vector<double> d(scene.classes.size(), kEmptyClassSdf);
  for (std::size_t l = 0; l < scene.parts.size(); ++l) {
    for (const Primitive& prim : scene.parts[l]) {
      d[l] = std::min(d[l], sdf_primitive(p, prim));
    }
  }
  return d;
}

inline double scene_sdf_class(const Scene& scene, const Vec3& p, int l) {
  double d = kEmptyClassSdf;
  for (const Primitive& prim : scene.parts[l]) d = std::min(d, sdf_primitive(p, prim));
  return d;
}

// ---------------------------------------------------------------------------
// Procedural room generation

struct FurnitureSpec {
  std::string name;
  int count_min = 1, count_max = 1;
  Vec3 half_min{0.1, 0.1, 0.1};
  Vec3 half_max{0.2, 0.2, 0.2};
  bool allow_yaw = false;
};

struct GenConfig {
  // Class 0 is always the wall shell.
  std::vector<FurnitureSpec> furniture = {
      {"bed", 1, 1, {0.18, 0.08, 0.25}, {0.30, 0.15, 0.40}, false},
      {"cabinet", 1, 2, {0.06, 0.15, 0.06}, {0.14, 0.30, 0.14}, false},
  };
  double room_half_min = 0.55, room_half_max = 0.85;
  double wall_thickness_min = 0.07, wall_thickness_max = 0.10;
  double wall_height_min = 0.8, wall_height_max = 1.1;
  double floor_y = -0.6;
  double wall_clearance = 0.02;   // furniture to wall
  double object_clearance = 0.03; // furniture to furniture
  int max_retries = 200;

  int num_classes() const { return 1 + static_cast<int>(furniture.size()); }
};

namespace detail {

struct Rect {
  double x0, z0, x1, z1;
  bool overlaps(const Rect& o) const {
    return x0 < o.x1 && o.x0 < x1 && z0 < o.z1 && o.z0 < z1;
  }
};

inline Rect footprint(const Primitive& p, double pad = 0.0) {
  double hx = p.half_extents.x, hz = p.half_extents.z;
  if (p.kind == Primitive::Kind::YawBox && p.yaw != 0.0) {
    double c = std::fabs(std::cos(p.yaw)), s = std::fabs(std::sin(p.yaw));
    double ex = c * hx + s * hz, ez = s * hx + c * hz;
    hx = ex;
    hz = ez;
  }
  return {p.center.x - hx - pad, p.center.z - hz - pad, p.center.x + hx + pad, p.center.z + hz + pad};
}

}  // namespace detail

// Deterministic room: 4-segment wall shell plus rejection-sampled furniture.
inline Scene generate_room(std::uint64_t seed, const GenConfig& cfg = GenConfig{}) {
  Rng rng(mix_seed(seed, 0x5ce9e));
  Scene scene;
  scene.classes.push_back({0, "wall"});
  for (std::size_t i = 0; i < cfg.furniture.size(); ++i)
    scene.classes.push_back({static_cast<int>(i) + 1, cfg.furniture[i].name});
  scene.parts.resize(scene.classes.size());

  double hx = rng.uniform(cfg.room_half_min, cfg.room_half_max);
  double hz = rng.uniform(cfg.room_half_min, cfg.room_half_max);
  double t = rng.uniform(cfg.wall_thickness_min, cfg.wall_thickness_max);
  double wh = rng.uniform(cfg.wall_height_min, cfg.wall_height_max);
  double y0 = cfg.floor_y, y1 = y0 + wh;
  double yc = 0.5 * (y0 + y1), hy = 0.5 * wh;

  // Ring of 4 boxes; the +-z slabs span the full width so segments meet
  // flush at the corners without volume overlap.
  auto wall = [&](double cx, double cz, double ex, double ez) {
    scene.parts[0].push_back({Primitive::Kind::AxisBox, {cx, yc, cz}, {ex, hy, ez}, 0.0});
  };
  wall(0.0, -hz - t / 2, hx + t, t / 2);
  wall(0.0, hz + t / 2, hx + t, t / 2);
  wall(-hx - t / 2, 0.0, t / 2, hz);
  wall(hx + t / 2, 0.0, t / 2, hz);

  std::vector<detail::Rect> placed;
  for (std::size_t fi = 0; fi < cfg.furniture.size(); ++fi) {
    const FurnitureSpec& spec = cfg.furniture[fi];
    int count = spec.count_min +
                static_cast<int>(spec.count_max > spec.count_min
                                     ? rng.uniform_index(static_cast<std::uint64_t>(spec.count_max - spec.count_min + 1))
                                     : 0);
    for (int k = 0; k < count; ++k) {
      bool ok = false;
      for (int attempt = 0; attempt < cfg.max_retries && !ok; ++attempt) {
        Vec3 half{rng.uniform(spec.half_min.x, spec.half_max.x),
                  rng.uniform(spec.half_min.y, spec.half_max.y),
                  rng.uniform(spec.half_min.z, spec.half_max.z)};
        double yaw = spec.allow_yaw ? rng.uniform(0.0, 2.0 * 3.14159265358979323846) : 0.0;
        Primitive prim;
        prim.kind = spec.allow_yaw ? Primitive::Kind::YawBox : Primitive::Kind::AxisBox;
        prim.half_extents = half;
        prim.yaw = yaw;
        prim.center = {0, y0 + half.y, 0};
        detail::Rect fp0 = detail::footprint(prim);
        double ex = (fp0.x1 - fp0.x0) / 2, ez = (fp0.z1 - fp0.z0) / 2;
        double limx = hx - ex - cfg.wall_clearance;
        double limz = hz - ez - cfg.wall_clearance;
        if (limx <= 0 || limz <= 0) continue;
        prim.center.x = rng.uniform(-limx, limx);
        prim.center.z = rng.uniform(-limz, limz);
        detail::Rect fp = detail::footprint(prim, cfg.object_clearance / 2);
        bool collide = false;
        for (const auto& r : placed) collide = collide || fp.overlaps(r);
        if (collide) continue;
        placed.push_back(fp);
        scene.parts[1 + fi].push_back(prim);
        ok = true;
      }
      if (!ok)
        throw GenerationError("generate_room: placement failed for class '" + spec.name +
                              "' after " + std::to_string(cfg.max_retries) + " retries (seed " +
                              std::to_string(seed) + ")");
    }
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Training point sampling

struct SurfaceSamples {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;
};

namespace detail {

// One rectangular box face: origin corner, two edge vectors, outward normal.
struct Face {
  Vec3 origin, eu, ev, normal;
  double area;
};

inline void box_faces(const Primitive& prim, std::vector<Face>& out) {
  const Vec3& h = prim.half_extents;
  double c = std::cos(prim.yaw), s = std::sin(prim.yaw);
  bool yawed = prim.kind == Primitive::Kind::YawBox && prim.yaw != 0.0;
  auto rot = [&](const Vec3& v) {
    if (!yawed) return v;
    // local -> world: rotate by +yaw about y
    return Vec3{c * v.x + s * v.z, v.y, -s * v.x + c * v.z};
  };
  for (int axis = 0; axis < 3; ++axis) {
    for (int sign = -1; sign <= 1; sign += 2) {
      Vec3 n{0, 0, 0};
      n[axis] = sign;
      int u = (axis + 1) % 3, v = (axis + 2) % 3;
      Vec3 eu{0, 0, 0}, ev{0, 0, 0};
      eu[u] = 2 * h[u];
      ev[v] = 2 * h[v];
      Vec3 corner = n * h[axis] - eu * 0.5 - ev * 0.5;
      out.push_back({prim.center + rot(corner), rot(eu), rot(ev), rot(n),
                     4 * h[u] * h[v]});
    }
  }
}

inline std::vector<Face> class_faces(const Scene& scene, int l) {
  std::vector<Face> faces;
  for (const Primitive& p : scene.parts[l]) box_faces(p, faces);
  return faces;
}

}  // namespace detail

// Area-uniform surface samples per class with analytic face normals.
// Class budgets are honored exactly (the semantic-aware strategy).
inline std::vector<SurfaceSamples> sample_surface(const Scene& scene, const std::vector<int>& counts,
                                                  std::uint64_t seed) {
  if (counts.size() != scene.classes.size())
    throw std::invalid_argument("sample_surface: counts size mismatch");
  std::vector<SurfaceSamples> out(scene.classes.size());
  Rng rng(mix_seed(seed, 0x5a3f1));
  for (std::size_t l = 0; l < scene.classes.size(); ++l) {
    if (counts[l] == 0) continue;
    auto faces = detail::class_faces(scene, static_cast<int>(l));
    if (faces.empty())
      throw std::invalid_argument("sample_surface: class '" + scene.classes[l].name + "' has no geometry");
    std::vector<double> cum(faces.size());
    double acc = 0;
    for (std::size_t i = 0; i < faces.size(); ++i) {
      acc += faces[i].area;
      cum[i] = acc;
    }
    out[l].points.reserve(counts[l]);
    out[l].normals.reserve(counts[l]);
    for (int i = 0; i < counts[l]; ++i) {
      double pick = rng.uniform() * acc;
      std::size_t fi = std::lower_bound(cum.begin(), cum.end(), pick) - cum.begin();
      if (fi >= faces.size()) fi = faces.size() - 1;
      const auto& f = faces[fi];
      Vec3 p = f.origin + f.eu * rng.uniform() + f.ev * rng.uniform();
      out[l].points.push_back(p);
      out[l].normals.push_back(f.normal);
    }
  }
  return out;
}

struct VolumeSamples {
  std::vector<Vec3> points;          // M x 3
  std::vector<std::vector<double>> sdf;  // M x L
};

// Volumetric SDF supervision points. With near-surface sampling (sns) on,
// half the budget is surface points jittered by an isotropic Gaussian
// (class chosen uniformly, then area-uniform), clamped to the domain.
inline VolumeSamples sample_volume(const Scene& scene, int M, bool sns, double sigma_near,
                                   std::uint64_t seed) {
  if (M <= 0) throw std::invalid_argument("sample_volume: M must be positive");
  VolumeSamples vs;
  vs.points.reserve(M);
  Rng rng(mix_seed(seed, 0x7b221));
  int n_near = sns ? M / 2 : 0;
  int n_uniform = M - n_near;
  for (int i = 0; i < n_uniform; ++i)
    vs.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
  if (n_near > 0) {
    std::vector<int> occupied;
    for (std::size_t l = 0; l < scene.parts.size(); ++l)
      if (!scene.parts[l].empty()) occupied.push_back(static_cast<int>(l));
    if (occupied.empty()) {
      for (int i = 0; i < n_near; ++i)
        vs.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    } else {
      std::vector<std::vector<detail::Face>> faces(occupied.size());
      std::vector<std::vector<double>> cum(occupied.size());
      std::vector<double> total(occupied.size());
      for (std::size_t k = 0; k < occupied.size(); ++k) {
        faces[k] = detail::class_faces(scene, occupied[k]);
        double acc = 0;
        for (auto& f : faces[k]) {
          acc += f.area;
          cum[k].push_back(acc);
        }
        total[k] = acc;
      }
      for (int i = 0; i < n_near; ++i) {
        std::size_t k = rng.uniform_index(occupied.size());
        double pick = rng.uniform() * total[k];
        std::size_t fi = std::lower_bound(cum[k].begin(), cum[k].end(), pick) - cum[k].begin();
        if (fi >= faces[k].size()) fi = faces[k].size() - 1;
        const auto& f = faces[k][fi];
        Vec3 p = f.origin + f.eu * rng.uniform() + f.ev * rng.uniform();
        p.x = clampd(p.x + sigma_near * rng.gaussian(), -1, 1);
        p.y = clampd(p.y + sigma_near * rng.gaussian(), -1, 1);
        p.z = clampd(p.z + sigma_near * rng.gaussian(), -1, 1);
        vs.points.push_back(p);
      }
    }
  }
  vs.sdf.reserve(M);
  for (const Vec3& p : vs.points) vs.sdf.push_back(scene_sdf(scene, p));
  return vs;
}

// Everything the geometry loss consumes for one scene: per-class surface
// points with normals, volumetric SDF supervision, and the re-drawn
// free-space points.
struct SampleBatch {
  std::vector<SurfaceSamples> surface;  // per class
  VolumeSamples volume;
  std::vector<Vec3> rnd;  // refreshed every epoch by the fitting loop
};

inline std::vector<Vec3> draw_uniform_points(int n, Rng& rng) {
  std::vector<Vec3> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
  return out;
}

inline double class_surface_area(const Scene& scene, int l) {
  double a = 0;
  for (const Primitive& p : scene.parts[l]) {
    const Vec3& h = p.half_extents;
    a += 8 * (h.x * h.y + h.y * h.z + h.x * h.z);
  }
  return a;
}

// Surface budgets: equal per class when sss is on (the semantic-aware
// strategy), proportional to class surface area otherwise. total_surface is
// split over classes that have geometry.
inline std::vector<int> surface_budgets(const Scene& scene, int total_surface, bool sss) {
  int L = scene.num_classes();
  std::vector<int> counts(L, 0);
  std::vector<int> occupied;
  for (int l = 0; l < L; ++l)
    if (!scene.parts[l].empty()) occupied.push_back(l);
  if (occupied.empty()) return counts;
  if (sss) {
    int per = total_surface / static_cast<int>(occupied.size());
    for (int l : occupied) counts[l] = per;
  } else {
    double total_area = 0;
    for (int l : occupied) total_area += class_surface_area(scene, l);
    for (int l : occupied)
      counts[l] = std::max(1, static_cast<int>(total_surface * class_surface_area(scene, l) / total_area));
  }
  return counts;
}

inline SampleBatch make_sample_batch(const Scene& scene, const std::vector<int>& surface_counts,
                                     int M, bool sns, double sigma_near, std::uint64_t seed) {
  SampleBatch b;
  b.surface = sample_surface(scene, surface_counts, mix_seed(seed, 1));
  b.volume = sample_volume(scene, M, sns, sigma_near, mix_seed(seed, 2));
  Rng rng(mix_seed(seed, 3));
  b.rnd = draw_uniform_points(M, rng);
  return b;
}

// L x r x r binary floor layout; cell (i,j) covers center
// x = -1 + (i+0.5)*2/r, z = -1 + (j+0.5)*2/r. Cell-center containment.
struct LayoutMap {
  int L = 0, r = 0;
  std::vector<std::uint8_t> data;  // L*r*r, channel-major

  std::uint8_t& at(int l, int i, int j) { return data[(static_cast<std::size_t>(l) * r + i) * r + j]; }
  std::uint8_t at(int l, int i, int j) const { return data[(static_cast<std::size_t>(l) * r + i) * r + j]; }
};

inline bool footprint_contains(const Primitive& prim, double x, double z) {
  double dx = x - prim.center.x, dz = z - prim.center.z;
  if (prim.kind == Primitive::Kind::YawBox && prim.yaw != 0.0) {
    double c = std::cos(prim.yaw), s = std::sin(prim.yaw);
    double lx = c * dx - s * dz, lz = s * dx + c * dz;
    dx = lx;
    dz = lz;
  }
  return std::fabs(dx) <= prim.half_extents.x && std::fabs(dz) <= prim.half_extents.z;
}

inline LayoutMap layout_map(const Scene& scene, int r) {
  if (r < 4) throw std::invalid_argument("layout_map: r must be >= 4");
  LayoutMap F;
  F.L = scene.num_classes();
  F.r = r;
  F.data.assign(static_cast<std::size_t>(F.L) * r * r, 0);
  for (int l = 0; l < F.L; ++l) {
    for (const Primitive& prim : scene.parts[l]) {
      for (int i = 0; i < r; ++i) {
        double x = -1.0 + (i + 0.5) * 2.0 / r;
        for (int j = 0; j < r; ++j) {
          double z = -1.0 + (j + 0.5) * 2.0 / r;
          if (footprint_contains(prim, x, z)) F.at(l, i, j) = 1;
        }
      }
    }
  }
  return F;
}

// ---------------------------------------------------------------------------
// Scene text serialization (versioned)

inline std::string scene_to_text(const Scene& scene) {
  std::ostringstream os;
  os << "semroom-scene v1\n";
  os << "classes " << scene.classes.size() << "\n";
  for (const auto& c : scene.classes) os << "class " << c.id << " " << c.name << "\n";
  std::size_t nprim = 0;
  for (const auto& ps : scene.parts) nprim += ps.size();
  os << "prims " << nprim << "\n";
  char buf[256];
  for (std::size_t l = 0; l < scene.parts.size(); ++l) {
    for (const Primitive& p : scene.parts[l]) {
      if (p.kind == Primitive::Kind::AxisBox) {
        std::snprintf(buf, sizeof(buf), "prim %zu box %.17g %.17g %.17g %.17g %.17g %.17g\n", l,
                      p.center.x, p.center.y, p.center.z, p.half_extents.x, p.half_extents.y,
                      p.half_extents.z);
      } else {
        std::snprintf(buf, sizeof(buf), "prim %zu yawbox %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n",
                      l, p.center.x, p.center.y, p.center.z, p.half_extents.x, p.half_extents.y,
                      p.half_extents.z, p.yaw);
      }
      os << buf;
    }
  }
  return os.str();
}

inline Scene scene_from_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "semroom-scene v1")
    throw std::runtime_error("scene_from_text: bad or missing header");
  Scene scene;
  std::size_t nclass = 0, nprim = 0;
  {
    std::string kw;
    std::getline(is, line);
    std::istringstream ls(line);
    ls >> kw >> nclass;
    if (kw != "classes") throw std::runtime_error("scene_from_text: expected 'classes'");
  }
  scene.parts.resize(nclass);
  for (std::size_t i = 0; i < nclass; ++i) {
    std::getline(is, line);
    std::istringstream ls(line);
    std::string kw, name;
    int id;
    ls >> kw >> id >> name;
    if (kw != "class") throw std::runtime_error("scene_from_text: expected 'class'");
    scene.classes.push_back({id, name});
  }
  {
    std::string kw;
    std::getline(is, line);
    std::istringstream ls(line);
    ls >> kw >> nprim;
    if (kw != "prims") throw std::runtime_error("scene_from_text: expected 'prims'");
  }
  for (std::size_t i = 0; i < nprim; ++i) {
    std::getline(is, line);
    std::istringstream ls(line);
    std::string kw, kind;
    std::size_t l;
    ls >> kw >> l >> kind;
    if (kw != "prim" || l >= nclass) throw std::runtime_error("scene_from_text: bad prim record");
    Primitive p;
    ls >> p.center.x >> p.center.y >> p.center.z >> p.half_extents.x >> p.half_extents.y >>
        p.half_extents.z;
    if (kind == "yawbox") {
      p.kind = Primitive::Kind::YawBox;
      ls >> p.yaw;
    } else if (kind != "box") {
      throw std::runtime_error("scene_from_text: unknown primitive kind '" + kind + "'");
    }
    scene.parts[l].push_back(p);
  }
  return scene;
}

inline void scene_save(const Scene& scene, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << scene_to_text(scene);
}

inline Scene scene_load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return scene_from_text(text);
}

}  // namespace semroom
