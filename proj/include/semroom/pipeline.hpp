#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "semroom/container.hpp"
#include "semroom/core.hpp"
#include "semroom/decoder.hpp"
#include "semroom/diffusion.hpp"
#include "semroom/eval.hpp"
#include "semroom/fitting.hpp"
#include "semroom/meshing.hpp"
#include "semroom/scene.hpp"
#include "semroom/triplane.hpp"
#include "semroom/vae.hpp"

namespace semroom {

// Exit codes: 1 usage/config, 2 numeric failure, 3 missing artifact.
struct PipelineError : std::runtime_error {
  int exit_code;
  PipelineError(int code, const std::string& msg) : std::runtime_error(msg), exit_code(code) {}
};

// --- Configuration -----------------------------------------------------------

struct PipelineConfig {
  std::string preset = "desk-scale";
  std::uint64_t seed = 1;
  int threads = 1;
  int n_scenes = 10;
  int shared_scenes = 10;  // scenes used for the shared-decoder stage
  int grid_res = 32;       // marching-cubes resolution
  int layout_res = 8;      // layout map resolution (= diffusion latent r)
  double tau_pen = 0.01;
  std::size_t eval_samples = 2000;
  FitConfig fit;
  VaeConfig vae;
  DiffConfig diff;
};

inline PipelineConfig preset_desk_scale() {
  PipelineConfig c;  // module defaults are the desk preset
  return c;
}

// Full-scale constants, retained for documentation; not exercised by tests.
inline PipelineConfig preset_paper_scale() {
  PipelineConfig c;
  c.preset = "paper-scale";
  c.fit.channels = 32;
  c.fit.R_low = 5;
  c.fit.eta = 5;  // R_high = 160
  c.fit.surface_total = 30000;
  c.fit.M = 300000;
  c.vae.C = 32;
  c.vae.R_high = 160;
  c.vae.latent_c = 4;
  c.vae.latent_r = 40;
  c.vae.width = 64;
  c.vae.surface_counts = {20000, 5000, 5000};
  c.diff.latent_c = 4;
  c.diff.r = 40;
  c.diff.width = 64;
  c.layout_res = 40;
  c.grid_res = 128;
  return c;
}

inline PipelineConfig make_preset(const std::string& name) {
  if (name == "desk-scale") return preset_desk_scale();
  if (name == "paper-scale") return preset_paper_scale();
  throw PipelineError(1, "unknown preset '" + name + "'");
}

namespace detail {

inline bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw PipelineError(1, "bad boolean value '" + v + "'");
}

}  // namespace detail

// Applies one key=value override. Unknown keys are usage errors.
inline void apply_config_key(PipelineConfig& c, const std::string& key, const std::string& val) {
  try {
    if (key == "preset") {
      c = make_preset(val);
    } else if (key == "seed") {
      c.seed = std::stoull(val);
    } else if (key == "threads") {
      c.threads = std::stoi(val);
    } else if (key == "n_scenes") {
      c.n_scenes = std::stoi(val);
    } else if (key == "shared_scenes") {
      c.shared_scenes = std::stoi(val);
    } else if (key == "grid_res") {
      c.grid_res = std::stoi(val);
    } else if (key == "tau_pen") {
      c.tau_pen = std::stod(val);
    } else if (key == "eval_samples") {
      c.eval_samples = std::stoull(val);
    } else if (key == "fit.R_low") {
      c.fit.R_low = std::stoi(val);
    } else if (key == "fit.eta") {
      c.fit.eta = std::stoi(val);
    } else if (key == "fit.channels") {
      c.fit.channels = std::stoi(val);
    } else if (key == "fit.surface_total") {
      c.fit.surface_total = std::stoi(val);
    } else if (key == "fit.M") {
      c.fit.M = std::stoi(val);
    } else if (key == "fit.iterations") {
      c.fit.iterations = std::stoi(val);
    } else if (key == "fit.shared_iterations") {
      c.fit.shared_iterations = std::stoi(val);
    } else if (key == "fit.lr_plane") {
      c.fit.lr_plane = std::stod(val);
    } else if (key == "fit.lr_mlp") {
      c.fit.lr_mlp = std::stod(val);
    } else if (key == "fit.c2f") {
      c.fit.c2f = detail::parse_bool(val);
    } else if (key == "fit.sss") {
      c.fit.sss = detail::parse_bool(val);
    } else if (key == "fit.sns") {
      c.fit.sns = detail::parse_bool(val);
    } else if (key == "fit.batch_surface_per_class") {
      c.fit.batch_surface_per_class = std::stoi(val);
    } else if (key == "fit.batch_volume") {
      c.fit.batch_volume = std::stoi(val);
    } else if (key == "fit.batch_rnd") {
      c.fit.batch_rnd = std::stoi(val);
    } else if (key == "vae.latent_c") {
      c.vae.latent_c = std::stoi(val);
    } else if (key == "vae.latent_r") {
      c.vae.latent_r = std::stoi(val);
    } else if (key == "vae.width") {
      c.vae.width = std::stoi(val);
    } else if (key == "vae.steps") {
      c.vae.steps = std::stoi(val);
    } else if (key == "vae.lr") {
      c.vae.lr = std::stod(val);
    } else if (key == "vae.lr_halflife") {
      c.vae.lr_halflife = std::stoi(val);
    } else if (key == "vae.lambda_rec") {
      c.vae.lambda_rec = std::stod(val);
    } else if (key == "vae.lambda_kl") {
      c.vae.lambda_kl = std::stod(val);
    } else if (key == "vae.lambda_tri") {
      c.vae.lambda_tri = std::stod(val);
    } else if (key == "vae.augment") {
      c.vae.augment = detail::parse_bool(val);
    } else if (key == "vae.M") {
      c.vae.M = std::stoi(val);
    } else if (key == "diff.width") {
      c.diff.width = std::stoi(val);
    } else if (key == "diff.stages") {
      c.diff.stages = std::stoi(val);
    } else if (key == "diff.T") {
      c.diff.T = std::stoi(val);
    } else if (key == "diff.steps") {
      c.diff.steps = std::stoi(val);
    } else if (key == "diff.lr") {
      c.diff.lr = std::stod(val);
    } else if (key == "diff.batch") {
      c.diff.batch = std::stoi(val);
    } else if (key == "diff.sample_steps") {
      c.diff.sample_steps = std::stoi(val);
    } else {
      throw PipelineError(1, "unknown config key '" + key + "'");
    }
  } catch (const std::invalid_argument&) {
    throw PipelineError(1, "bad value '" + val + "' for key '" + key + "'");
  } catch (const std::out_of_range&) {
    throw PipelineError(1, "value out of range for key '" + key + "'");
  }
}

// Key=value config file; '#' starts a comment; `preset` must come first if used.
inline PipelineConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw PipelineError(3, "config file not found: " + path);
  PipelineConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto eq = line.find('=');
    std::string stripped;
    for (char ch : line)
      if (!std::isspace(static_cast<unsigned char>(ch))) stripped += ch;
    if (stripped.empty()) continue;
    if (eq == std::string::npos)
      throw PipelineError(1, path + ":" + std::to_string(lineno) + ": expected key=value");
    auto eq2 = stripped.find('=');
    apply_config_key(c, stripped.substr(0, eq2), stripped.substr(eq2 + 1));
  }
  return c;
}

// Derives the cross-module shape fields and checks the rest. The VAE input
// shape always matches the fitted tri-planes, and the diffusion latent shape
// always matches the VAE bottleneck, so those are synced rather than set.
inline void validate_config(PipelineConfig& c) {
  if (c.threads < 1) throw PipelineError(1, "threads must be >= 1");
  if (c.n_scenes < 0) throw PipelineError(1, "n_scenes must be >= 0");
  c.vae.C = c.fit.channels;
  c.vae.R_high = c.fit.R_high();
  c.diff.latent_c = c.vae.latent_c;
  c.diff.r = c.vae.latent_r;
  c.layout_res = c.vae.latent_r;
  try {
    c.vae.stages();
  } catch (const VaeError& e) {
    throw PipelineError(1, e.what());
  }
}

// --- Layout files ------------------------------------------------------------

inline std::string layout_to_text(const LayoutMap& f) {
  std::ostringstream out;
  out << "layout " << f.r << ' ' << f.L << '\n';
  for (int l = 0; l < f.L; ++l) {
    for (int i = 0; i < f.r; ++i) {
      for (int j = 0; j < f.r; ++j) out << (f.at(l, i, j) ? '1' : '0');
      out << '\n';
    }
    out << '\n';
  }
  return out.str();
}

inline LayoutMap layout_from_text(const std::string& text) {
  std::istringstream in(text);
  std::string tag;
  LayoutMap f;
  if (!(in >> tag >> f.r >> f.L) || tag != "layout")
    throw PipelineError(1, "bad layout file: expected 'layout <r> <L>'");
  if (f.r < 1 || f.L < 1) throw PipelineError(1, "bad layout dimensions");
  f.data.assign(static_cast<std::size_t>(f.L) * f.r * f.r, 0);
  for (int l = 0; l < f.L; ++l)
    for (int i = 0; i < f.r; ++i) {
      std::string row;
      if (!(in >> row) || static_cast<int>(row.size()) != f.r)
        throw PipelineError(1, "bad layout row");
      for (int j = 0; j < f.r; ++j) {
        if (row[j] != '0' && row[j] != '1') throw PipelineError(1, "layout cells must be 0/1");
        f.at(l, i, j) = row[j] == '1';
      }
    }
  return f;
}

inline void layout_save(const LayoutMap& f, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw PipelineError(3, "cannot write " + path);
  out << layout_to_text(f);
}

inline LayoutMap layout_load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PipelineError(3, "layout file not found: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return layout_from_text(text);
}

// --- Artifact store ------------------------------------------------------------

// Directory layout under root: scenes/, layouts/, triplanes/, weights/,
// meshes/, reports/, logs/. manifest.txt maps relative paths to FNV-1a64
// content hashes; loads verify the hash before use.
struct ArtifactStore {
  std::filesystem::path root;
  std::map<std::string, std::string> manifest;

  explicit ArtifactStore(const std::string& root_dir) : root(root_dir) {
    for (const char* d :
         {"", "scenes", "layouts", "triplanes", "weights", "meshes", "reports", "logs"})
      std::filesystem::create_directories(root / d);
    load_manifest();
  }

  std::string path(const std::string& rel) const { return (root / rel).string(); }
  bool has(const std::string& rel) const { return std::filesystem::exists(root / rel); }

  void load_manifest() {
    manifest.clear();
    std::ifstream f(root / "manifest.txt");
    std::string hash, rel;
    while (f >> hash >> rel) manifest[rel] = hash;
  }

  void save_manifest() const {
    std::ofstream f(root / "manifest.txt", std::ios::trunc);
    for (const auto& [rel, hash] : manifest) f << hash << ' ' << rel << '\n';
  }

  static std::string file_hash(const std::string& full) {
    std::ifstream f(full, std::ios::binary);
    if (!f) throw PipelineError(3, "missing artifact: " + full);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes)));
    return buf;
  }

  // Records a freshly written artifact in the manifest.
  void record(const std::string& rel) {
    manifest[rel] = file_hash(path(rel));
    save_manifest();
  }

  // Verifies existence and content hash; returns the full path.
  std::string require(const std::string& rel) const {
    if (!has(rel)) throw PipelineError(3, "missing artifact: " + rel);
    auto it = manifest.find(rel);
    if (it == manifest.end()) throw PipelineError(3, "artifact not in manifest: " + rel);
    if (file_hash(path(rel)) != it->second)
      throw PipelineError(3, "artifact hash mismatch: " + rel);
    return path(rel);
  }
};

namespace detail {

inline std::string scene_rel(int i) { return "scenes/scene_" + std::to_string(i) + ".txt"; }
inline std::string layout_rel(int i) { return "layouts/layout_" + std::to_string(i) + ".txt"; }
inline std::string plane_rel(int i) { return "triplanes/plane_" + std::to_string(i) + ".bin"; }

inline std::vector<Scene> load_scenes(const ArtifactStore& store, int n) {
  std::vector<Scene> scenes;
  for (int i = 0; i < n; ++i) scenes.push_back(scene_load(store.require(scene_rel(i))));
  return scenes;
}

template <typename F>
inline auto numeric_guard(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const GenerationError& e) {
    throw PipelineError(2, e.what());
  } catch (const FitError& e) {
    throw PipelineError(2, e.what());
  } catch (const VaeError& e) {
    throw PipelineError(2, e.what());
  } catch (const DiffusionError& e) {
    throw PipelineError(2, e.what());
  } catch (const MeshError& e) {
    throw PipelineError(2, e.what());
  } catch (const EvalError& e) {
    throw PipelineError(2, e.what());
  }
}

}  // namespace detail

// --- Commands ------------------------------------------------------------------

inline void cmd_gen_data(PipelineConfig cfg, ArtifactStore& store, std::ostream& log) {
  validate_config(cfg);
  for (int i = 0; i < cfg.n_scenes; ++i) {
    Scene scene = generate_room(mix_seed(cfg.seed, 0x5C31E + static_cast<std::uint64_t>(i)));
    scene_save(scene, store.path(detail::scene_rel(i)));
    store.record(detail::scene_rel(i));
    layout_save(layout_map(scene, cfg.layout_res), store.path(detail::layout_rel(i)));
    store.record(detail::layout_rel(i));
  }
  log << "gen-data: wrote " << cfg.n_scenes << " scenes\n";
}

// Shared-decoder stage over the first `shared_scenes` scenes, then per-scene
// fitting for the rest against the frozen decoder. Per-scene divergence is
// logged and skipped, not fatal.
inline void cmd_fit(PipelineConfig cfg, ArtifactStore& store, std::ostream& log) {
  validate_config(cfg);
  int n_shared = std::min(cfg.shared_scenes, cfg.n_scenes);
  if (n_shared < 1) throw PipelineError(1, "fit: need at least one scene");
  std::vector<Scene> scenes = detail::load_scenes(store, cfg.n_scenes);

  std::ofstream metrics(store.path("logs/fit_metrics.txt"), std::ios::trunc);
  std::vector<Scene> shared(scenes.begin(), scenes.begin() + n_shared);
  SharedFitResult sres = detail::numeric_guard([&] {
    return fit_shared(shared, cfg.fit, mix_seed(cfg.seed, 0xF17), cfg.threads, &metrics);
  });
  decoder_save(sres.decoder, store.path("weights/decoder.bin"));
  store.record("weights/decoder.bin");
  for (int i = 0; i < n_shared; ++i) {
    triplane_save(sres.planes[i], store.path(detail::plane_rel(i)));
    store.record(detail::plane_rel(i));
  }
  for (int i = n_shared; i < cfg.n_scenes; ++i) {
    try {
      FitResult r = fit_scene(scenes[i], sres.decoder, cfg.fit,
                              mix_seed(cfg.seed, 0xF17000 + static_cast<std::uint64_t>(i)),
                              &metrics);
      triplane_save(r.plane, store.path(detail::plane_rel(i)));
      store.record(detail::plane_rel(i));
    } catch (const FitError& e) {
      log << "fit: scene " << i << " diverged: " << e.what() << "\n";
    }
  }
  log << "fit: done\n";
}

inline void cmd_train_vae(PipelineConfig cfg, ArtifactStore& store, std::ostream& log,
                          bool resume = false) {
  validate_config(cfg);
  DecoderMlp phi = decoder_load(store.require("weights/decoder.bin"));
  std::vector<Scene> scenes;
  std::vector<TriPlane> planes;
  for (int i = 0; i < cfg.n_scenes; ++i) {
    if (!store.has(detail::plane_rel(i))) continue;  // diverged scene, skipped by fit
    scenes.push_back(scene_load(store.require(detail::scene_rel(i))));
    planes.push_back(triplane_load(store.require(detail::plane_rel(i))));
  }
  if (planes.empty()) throw PipelineError(3, "missing artifact: triplanes/*");

  TrainState st;
  const TrainState* resume_ptr = nullptr;
  if (resume) {
    st = train_state_load(store.require("weights/vae_ckpt.bin"));
    resume_ptr = &st;
  }
  std::ofstream metrics(store.path("logs/vae_metrics.txt"), resume ? std::ios::app : std::ios::trunc);
  VaeTrainResult res = detail::numeric_guard([&] {
    return train_vae(planes, scenes, phi, cfg.vae, mix_seed(cfg.seed, 0x7AE), &metrics,
                     resume_ptr);
  });
  vae_save(res.params, store.path("weights/vae.bin"));
  store.record("weights/vae.bin");
  norm_stats_save(res.stats, store.path("weights/tpnorm.bin"));
  store.record("weights/tpnorm.bin");
  train_state_save(res.state, store.path("weights/vae_ckpt.bin"));
  store.record("weights/vae_ckpt.bin");
  log << "train-vae: done at step " << res.state.step << "\n";
}

inline void latent_stats_save(const LatentNormStats& st, const std::string& path) {
  Container c;
  c.kind = "latstats";
  c.dtype = Dtype::F64;
  c.meta = {static_cast<std::uint64_t>(st.mean.size())};
  c.values = st.mean;
  c.values.insert(c.values.end(), st.stddev.begin(), st.stddev.end());
  container_save(c, path);
}

inline LatentNormStats latent_stats_load(const std::string& path) {
  Container c = container_load(path, "latstats");
  std::size_t n = c.meta.at(0);
  if (c.values.size() != 2 * n) throw PipelineError(2, "latent stats size mismatch");
  LatentNormStats st;
  st.mean.assign(c.values.begin(), c.values.begin() + n);
  st.stddev.assign(c.values.begin() + n, c.values.end());
  return st;
}

inline void cmd_train_diff(PipelineConfig cfg, ArtifactStore& store, std::ostream& log,
                           bool resume = false) {
  validate_config(cfg);
  VaeParams vae = vae_load(store.require("weights/vae.bin"), cfg.vae);
  NormStats tpnorm = norm_stats_load(store.require("weights/tpnorm.bin"));

  std::vector<LatentTriPlane> latents;
  std::vector<LayoutMap> layouts;
  for (int i = 0; i < cfg.n_scenes; ++i) {
    if (!store.has(detail::plane_rel(i))) continue;
    TriPlane T = triplane_load(store.require(detail::plane_rel(i)));
    LatentTriPlane mu, logvar;
    encode(vae, normalize(T, tpnorm), mu, logvar);
    latents.push_back(mu);
    layouts.push_back(layout_load(store.require(detail::layout_rel(i))));
  }
  if (latents.empty()) throw PipelineError(3, "missing artifact: triplanes/*");

  DiffConfig dcfg = cfg.diff;
  dcfg.L = layouts[0].L;
  TrainState st;
  const TrainState* resume_ptr = nullptr;
  if (resume) {
    st = train_state_load(store.require("weights/ddpm_ckpt.bin"));
    resume_ptr = &st;
  }
  std::ofstream metrics(store.path("logs/diff_metrics.txt"),
                        resume ? std::ios::app : std::ios::trunc);
  DiffTrainResult res = detail::numeric_guard([&] {
    return train_diffusion(latents, layouts, dcfg, mix_seed(cfg.seed, 0xDDF), &metrics,
                           resume_ptr);
  });
  denoiser_save(res.denoiser, store.path("weights/ddpm.bin"));
  store.record("weights/ddpm.bin");
  latent_stats_save(res.stats, store.path("weights/latnorm.bin"));
  store.record("weights/latnorm.bin");
  // Checkpoint carries the noise schedule so a resumed run can verify it.
  train_state_save(res.state, store.path("weights/ddpm_ckpt.bin"), res.schedule.alpha_bar);
  store.record("weights/ddpm_ckpt.bin");
  log << "train-diff: done at step " << res.state.step << "\n";
}

// --- Meshing helpers --------------------------------------------------------------

template <typename Field>
inline TriangleMesh remesh_walls(Field&& wall_sdf, const TriangleMesh& mc_wall, int grid_res);

// Meshes every class of a tri-plane through the frozen decoder; the wall
// class additionally goes through the remeshing path (boundary -> simplify ->
// extrude) with the marching-cubes mesh as fallback.
inline std::vector<TriangleMesh> mesh_triplane(const TriPlane& T, const DecoderMlp& dec,
                                               const Scene& proto, int grid_res,
                                               std::ostream* log = nullptr) {
  int L = static_cast<int>(proto.classes.size());
  std::vector<TriangleMesh> meshes;
  for (int l = 0; l < L; ++l) {
    TriangleMesh m = marching_cubes([&](const Vec3& p) { return sdf_at(T, dec, p)[l]; }, grid_res);
    m.class_id = l;
    meshes.push_back(std::move(m));
  }
  if (L > 0 && !meshes[0].empty()) {
    try {
      meshes[0] = remesh_walls([&](const Vec3& p) { return sdf_at(T, dec, p)[0]; }, meshes[0],
                               grid_res);
    } catch (const std::exception& e) {
      if (log) (*log) << "wall remesh fell back to marching cubes: " << e.what() << "\n";
    }
  }
  return meshes;
}

// Wall remesh: rasterize the wall SDF at mid-height, trace the inner cavity
// boundary, simplify to corners, offset outward to the wall centerline and
// extrude a prism band of the measured height/thickness.
template <typename Field>
inline TriangleMesh remesh_walls(Field&& wall_sdf, const TriangleMesh& mc_wall, int grid_res) {
  double y_min = 1e9, y_max = -1e9;
  for (const Vec3& v : mc_wall.vertices) {
    y_min = std::min(y_min, v.y);
    y_max = std::max(y_max, v.y);
  }
  double height = y_max - y_min;
  if (height <= 0) throw MeshError("remesh_walls: degenerate wall height");
  double y_mid = 0.5 * (y_min + y_max);

  int m = grid_res;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(m) * m, 0);
  auto cell_center = [&](int i) { return -1.0 + (i + 0.5) * 2.0 / m; };
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      Vec3 p{cell_center(i), y_mid, cell_center(j)};
      mask[static_cast<std::size_t>(i) * m + j] = wall_sdf(p) < 0 ? 1 : 0;
    }

  std::vector<Polyline2D> contours = extract_boundary(mask, m);
  if (contours.size() < 2) throw MeshError("remesh_walls: wall section has no cavity");
  // Outer ring: largest absolute area; cavity: largest opposite-sign ring.
  double best_outer = 0, best_hole = 0;
  const Polyline2D* outer = nullptr;
  const Polyline2D* hole = nullptr;
  for (const Polyline2D& c : contours) {
    double a = polygon_area(c.points);
    if (a > best_outer) {
      best_outer = a;
      outer = &c;
    }
    if (a < best_hole) {
      best_hole = a;
      hole = &c;
    }
  }
  if (!outer || !hole) throw MeshError("remesh_walls: could not identify outer/cavity rings");

  double cell = 2.0 / m;
  // Thickness from ring areas: area between rings ~= perimeter * thickness.
  Polyline2D outer_s = rdp_simplify(*outer, 1.5);
  Polyline2D hole_s = rdp_simplify(*hole, 1.5);
  double perim = 0;
  for (std::size_t i = 0; i < hole_s.points.size(); ++i) {
    Vec2 a = hole_s.points[i];
    Vec2 b = hole_s.points[(i + 1) % hole_s.points.size()];
    perim += norm2d({b.x - a.x, b.y - a.y});
  }
  if (perim <= 0) throw MeshError("remesh_walls: degenerate cavity");
  double thickness = (best_outer + best_hole) / perim;  // hole area is negative
  thickness = std::max(thickness, 0.5);                 // in cell units

  // Centerline: cavity ring pushed outward by thickness/2. The cavity ring is
  // clockwise (hole orientation), so "outward" is to the left of travel; use
  // the CCW-reversed ring and offset right.
  std::vector<Vec2> ccw(hole_s.points.rbegin(), hole_s.points.rend());
  std::size_t n = ccw.size();
  std::vector<Vec2> center(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vec2 prev = ccw[(i + n - 1) % n], cur = ccw[i], next = ccw[(i + 1) % n];
    auto edge_n = [](Vec2 a, Vec2 b) {
      Vec2 d{b.x - a.x, b.y - a.y};
      double len = norm2d(d);
      return Vec2{d.y / len, -d.x / len};  // right of travel = outward for CCW
    };
    Vec2 n0 = edge_n(prev, cur), n1 = edge_n(cur, next);
    double denom = 1.0 + dot2(n0, n1);
    if (std::fabs(denom) < 1e-9) throw MeshError("remesh_walls: centerline miter degenerate");
    double h = thickness / 2.0;
    center[i] = {cur.x + h * (n0.x + n1.x) / denom, cur.y + h * (n0.y + n1.y) / denom};
  }

  // Back to world coordinates. Mask index i maps to x in [-1,1] with corner
  // lattice spacing `cell`; contour coordinates are in cell units.
  Polyline2D footprint;
  footprint.closed = true;
  for (const Vec2& p : center) footprint.points.push_back({-1.0 + p.x * cell, -1.0 + p.y * cell});
  TriangleMesh wall = build_wall_mesh(footprint, height, thickness * cell, 0);
  for (Vec3& v : wall.vertices) v.y += y_min;
  return wall;
}

inline void cmd_mesh(PipelineConfig cfg, ArtifactStore& store, std::ostream& log) {
  validate_config(cfg);
  DecoderMlp dec = decoder_load(store.require("weights/decoder.bin"));
  for (int i = 0; i < cfg.n_scenes; ++i) {
    if (!store.has(detail::plane_rel(i))) continue;
    Scene scene = scene_load(store.require(detail::scene_rel(i)));
    TriPlane T = triplane_load(store.require(detail::plane_rel(i)));
    std::vector<TriangleMesh> meshes = detail::numeric_guard(
        [&] { return mesh_triplane(T, dec, scene, cfg.grid_res, &log); });
    std::vector<std::string> names;
    for (const auto& c : scene.classes) names.push_back(c.name);
    std::vector<std::string> files =
        export_meshes(meshes, names, i, store.path("meshes"));
    for (const std::string& f : files)
      store.record("meshes/" + std::filesystem::path(f).filename().string());
  }
  log << "mesh: done\n";
}

inline void cmd_sample(PipelineConfig cfg, ArtifactStore& store,
                       const std::string& layout_path, std::uint64_t sample_seed,
                       std::ostream& log) {
  validate_config(cfg);
  LayoutMap F = layout_load(layout_path);
  if (F.r != cfg.layout_res)
    throw PipelineError(1, "layout resolution mismatch: expected " +
                               std::to_string(cfg.layout_res));
  Denoiser den = denoiser_load(store.require("weights/ddpm.bin"), cfg.diff);
  if (den.cfg.L != F.L) throw PipelineError(1, "layout class count mismatch");
  LatentNormStats latnorm = latent_stats_load(store.require("weights/latnorm.bin"));
  VaeParams vae = vae_load(store.require("weights/vae.bin"), cfg.vae);
  NormStats tpnorm = norm_stats_load(store.require("weights/tpnorm.bin"));
  DecoderMlp dec = decoder_load(store.require("weights/decoder.bin"));

  NoiseSchedule sched = build_schedule(den.cfg.T, cfg.diff.beta1, cfg.diff.betaT);
  LatentTriPlane z = detail::numeric_guard(
      [&] { return sample_latent(den, F, sched, sample_seed, cfg.diff.sample_steps); });
  TriPlane T = denormalize(decode_latent(vae, denormalize_latent(z, latnorm)), tpnorm);

  Scene proto;  // class table for naming; the wall + generator furniture names
  proto.classes.resize(F.L);
  GenConfig gen;
  proto.classes[0] = {0, "wall"};
  for (int l = 1; l < F.L; ++l)
    proto.classes[l] = {l, l - 1 < static_cast<int>(gen.furniture.size())
                               ? gen.furniture[l - 1].name
                               : "class" + std::to_string(l)};
  std::vector<TriangleMesh> meshes =
      detail::numeric_guard([&] { return mesh_triplane(T, dec, proto, cfg.grid_res, &log); });

  std::vector<std::string> names;
  for (const auto& c : proto.classes) names.push_back(c.name);
  int tag = static_cast<int>(sample_seed % 1000000);
  std::vector<std::string> files = export_meshes(meshes, names, tag, store.path("meshes"));
  for (const std::string& f : files)
    store.record("meshes/" + std::filesystem::path(f).filename().string());

  std::vector<double> iou = layout_iou(F, meshes);
  std::ofstream rep(store.path("reports/sample_" + std::to_string(tag) + ".txt"),
                    std::ios::trunc);
  double mean_iou = 0;
  for (int l = 0; l < F.L; ++l) {
    rep << "class " << l << " iou " << iou[l] << "\n";
    mean_iou += iou[l];
  }
  rep << "mean_iou " << mean_iou / F.L << "\n";
  rep.close();
  store.record("reports/sample_" + std::to_string(tag) + ".txt");
  log << "sample: mean layout IoU " << mean_iou / F.L << "\n";
}

inline void cmd_eval(PipelineConfig cfg, ArtifactStore& store, std::ostream& log) {
  validate_config(cfg);
  std::vector<Scene> scenes;
  std::vector<std::vector<TriangleMesh>> mesh_sets;
  std::vector<std::string> class_names;
  for (int i = 0; i < cfg.n_scenes; ++i) {
    if (!store.has(detail::scene_rel(i))) continue;
    Scene scene = scene_load(store.require(detail::scene_rel(i)));
    std::vector<TriangleMesh> meshes;
    bool all = true;
    for (const auto& c : scene.classes) {
      std::string rel = "meshes/scene_" + std::to_string(i) + "_class_" + c.name + ".obj";
      if (!store.has(rel)) {
        all = false;
        break;
      }
      meshes.push_back(load_obj(store.require(rel)));
    }
    if (!all) continue;
    if (class_names.empty())
      for (const auto& c : scene.classes) class_names.push_back(c.name);
    scenes.push_back(std::move(scene));
    mesh_sets.push_back(std::move(meshes));
  }
  if (scenes.empty()) throw PipelineError(3, "missing artifact: meshes/*");

  EvalReport report;
  report.class_names = class_names;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    std::vector<double> row;
    for (std::size_t l = 0; l < class_names.size(); ++l) {
      ClassCdResult r = detail::numeric_guard([&] {
        return class_cd(mesh_sets[s][l], scenes[s], static_cast<int>(l), cfg.eval_samples,
                        mix_seed(cfg.seed, 0xE7A1 + s));
      });
      row.push_back(r.cd);
    }
    report.cd.push_back(std::move(row));
    report.penetrating.push_back(
        meshes_interpenetrate(mesh_sets[s], cfg.tau_pen, 400, mix_seed(cfg.seed, 0xE7A9 + s)));
    LayoutMap F = layout_map(scenes[s], cfg.layout_res);
    report.iou.push_back(layout_iou(F, mesh_sets[s]));
  }
  report.finalize();

  std::ostringstream text;
  text << "scenes " << scenes.size() << "\n";
  double pen = 0, mean_iou = 0;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    pen += report.penetrating[s] ? 1.0 : 0.0;
    for (double v : report.iou[s]) mean_iou += v / report.iou[s].size();
  }
  for (std::size_t l = 0; l < class_names.size(); ++l)
    text << "cd_median " << class_names[l] << ' ' << report.cd_median[l] << "\n";
  text << "penetration_rate " << pen / scenes.size() << "\n";
  text << "mean_layout_iou " << mean_iou / scenes.size() << "\n";

  std::ofstream out(store.path("reports/eval.txt"), std::ios::trunc);
  out << text.str();
  out.close();
  store.record("reports/eval.txt");
  log << text.str();
}

inline void cmd_ablate(PipelineConfig cfg, ArtifactStore& store, std::ostream& log) {
  validate_config(cfg);
  std::vector<Scene> scenes = detail::load_scenes(store, cfg.n_scenes);
  if (scenes.empty()) throw PipelineError(3, "missing artifact: scenes/*");
  DecoderMlp dec = decoder_load(store.require("weights/decoder.bin"));
  std::vector<AblationConfig> configs = {
      {"full", true, true, true},
      {"no-c2f", false, true, true},
      {"no-sss", true, false, true},
      {"no-sns", true, true, false},
  };
  std::vector<AblationRow> rows = detail::numeric_guard([&] {
    return ablation_report(configs, scenes, dec, cfg.fit, cfg.grid_res, cfg.eval_samples,
                           mix_seed(cfg.seed, 0xAB1A7E), cfg.threads);
  });
  std::vector<std::string> names;
  for (const auto& c : scenes[0].classes) names.push_back(c.name);
  std::string table = ablation_table(rows, names);
  std::ofstream out(store.path("reports/ablation.txt"), std::ios::trunc);
  out << table;
  out.close();
  store.record("reports/ablation.txt");
  log << table;
}

}  // namespace semroom
