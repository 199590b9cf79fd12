#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "semroom/core.hpp"
#include "semroom/decoder.hpp"
#include "semroom/scene.hpp"
#include "semroom/triplane.hpp"

namespace semroom {

struct FitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FitConfig {
  // Loss weights (lambda_1..lambda_4).
  double lambda_eik = 0.2, lambda_sdf = 10.0, lambda_sur = 10.0, lambda_nor = 0.5;

  // Resolution schedule: R_high = 2^eta * R_low.
  int R_low = 4;
  int eta = 3;
  int channels = 16;

  // Sample counts (per scene). surface_total is split across classes.
  int surface_total = 15000;
  int M = 20000;
  double sigma_near = 0.02;

  // Optimization.
  int iterations = 500;         // total per scene, split across levels when c2f
  int shared_iterations = 400;  // joint MLP + tri-plane stage
  double lr_plane = 1e-2;
  double lr_final = 0;  // >0: geometric plane-lr decay to this value within each level
  double lambda_smooth = 0;  // plane Laplacian penalty; leaves the geometry loss untouched
  double lr_mlp = 1e-3;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  double plane_init_std = 1e-2;

  // Per-iteration minibatch (points drawn from the precomputed batch;
  // free-space points are redrawn fresh).
  int batch_surface_per_class = 512;
  int batch_volume = 768;
  int batch_rnd = 768;

  // Ablation toggles.
  bool c2f = true;
  bool sss = true;
  bool sns = true;

  std::vector<int> mlp_hidden = {32, 32, 32};
  double mlp_sharpness = 100.0;

  int R_high() const { return R_low << eta; }
};

struct LossReport {
  double total = 0, eik = 0, sdf = 0, sur = 0, nor = 0;
};

// Dense gradients of the geometry loss w.r.t. tri-plane features and,
// optionally, decoder weights.
struct LossGrads {
  std::array<std::vector<double>, 3> plane;
  MlpGrads mlp;
  bool want_mlp = false;

  void init(const TriPlane& T, const DecoderMlp& dec, bool with_mlp) {
    for (int p = 0; p < 3; ++p) plane[p].assign(T.plane_size(), 0.0);
    want_mlp = with_mlp;
    if (with_mlp) mlp.init(dec);
  }
};

// View of the points one loss evaluation runs over.
struct LossBatch {
  std::vector<std::vector<Vec3>> surf_pts;   // per class
  std::vector<std::vector<Vec3>> surf_nrm;   // per class
  std::vector<Vec3> vol_pts;
  std::vector<std::vector<double>> vol_sdf;  // per point, length L
  std::vector<Vec3> rnd_pts;
};

namespace detail {

// Scratch for one group of evaluations (a point plus its 6-point stencil).
struct EvalScratch {
  MlpScratch mlp[7];
  QueryTouch touch[7];
  std::vector<double> gout[7];
  std::vector<double> gin;
  std::vector<double> delta_buf;

  void resize(const DecoderMlp& dec) {
    for (auto& s : mlp) s.resize(dec);
    for (auto& g : gout) g.assign(dec.out_dim(), 0.0);
    gin.resize(dec.in_dim());
  }
};

inline void backprop_eval(const TriPlane& T, const DecoderMlp& dec, EvalScratch& es, int slot,
                          LossGrads* grads) {
  if (!grads) return;
  decode_backward(dec, es.mlp[slot], es.gout[slot].data(), es.gin.data(),
                  grads->want_mlp ? &grads->mlp : nullptr, es.delta_buf);
  scatter_query_grad(T, es.touch[slot], es.gin.data(), grads->plane);
}

}  // namespace detail

// The four-term geometry loss over `batch`, with exact analytic gradients.
// Slots 0..5 of a stencil are (+x,-x,+y,-y,+z,-z); slot 6 is the base point.
// `sss` selects per-class weighting (on) vs pooling over all surface points
// (off). Throws FitError naming the first non-finite component.
inline LossReport loss_tri(const TriPlane& T, const DecoderMlp& dec, const LossBatch& batch,
                           const FitConfig& cfg, double eps, LossGrads* grads = nullptr) {
  const int L = dec.out_dim();
  const int C = dec.in_dim();
  (void)C;
  detail::EvalScratch es;
  es.resize(dec);

  LossReport rep;

  auto forward_at = [&](const Vec3& p, int slot) {
    es.touch[slot] = query_touch(T, p);
    query_into(T, es.touch[slot], es.mlp[slot].act[0].data());
    decode_into(dec, es.mlp[slot].act[0].data(), es.mlp[slot]);
    std::fill(es.gout[slot].begin(), es.gout[slot].end(), 0.0);
  };
  auto stencil = [&](const Vec3& p) {
    for (int axis = 0; axis < 3; ++axis) {
      Vec3 pp = p, pm = p;
      pp[axis] += eps;
      pm[axis] -= eps;
      forward_at(pp, 2 * axis);
      forward_at(pm, 2 * axis + 1);
    }
  };

  // ---- L_sur and L_nor over per-class surface points
  std::size_t total_surf = 0;
  for (const auto& v : batch.surf_pts) total_surf += v.size();
  for (std::size_t l = 0; l < batch.surf_pts.size(); ++l) {
    const auto& pts = batch.surf_pts[l];
    if (pts.empty()) continue;
    // Per-point weights under the two pooling modes.
    double w_sur = cfg.sss ? 1.0 / static_cast<double>(pts.size())
                           : 1.0 / static_cast<double>(total_surf);
    double w_nor = cfg.sss ? 1.0 / (static_cast<double>(L) * static_cast<double>(pts.size()))
                           : 1.0 / static_cast<double>(total_surf);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const Vec3& p = pts[i];
      forward_at(p, 6);
      double d = es.mlp[6].act.back()[l];
      rep.sur += w_sur * std::fabs(d);
      if (grads) es.gout[6][l] = cfg.lambda_sur * w_sur * (d >= 0 ? 1.0 : -1.0);
      detail::backprop_eval(T, dec, es, 6, grads);

      stencil(p);
      Vec3 nt;
      for (int axis = 0; axis < 3; ++axis)
        nt[axis] = (es.mlp[2 * axis].act.back()[l] - es.mlp[2 * axis + 1].act.back()[l]) / (2 * eps);
      Vec3 e = nt - batch.surf_nrm[l][i];
      double en = norm(e);
      rep.nor += w_nor * en;
      if (grads && en > 1e-12) {
        for (int axis = 0; axis < 3; ++axis) {
          double g = cfg.lambda_nor * w_nor * e[axis] / en / (2 * eps);
          es.gout[2 * axis][l] = g;
          es.gout[2 * axis + 1][l] = -g;
        }
      }
      if (grads)
        for (int slot = 0; slot < 6; ++slot) detail::backprop_eval(T, dec, es, slot, grads);
    }
  }

  // ---- L_sdf over volume points
  if (!batch.vol_pts.empty()) {
    double w = 1.0 / (static_cast<double>(batch.vol_pts.size()) * L);
    for (std::size_t i = 0; i < batch.vol_pts.size(); ++i) {
      forward_at(batch.vol_pts[i], 6);
      const auto& d = es.mlp[6].act.back();
      for (int l = 0; l < L; ++l) {
        double r = d[l] - batch.vol_sdf[i][l];
        rep.sdf += w * std::fabs(r);
        if (grads) es.gout[6][l] = cfg.lambda_sdf * w * (r >= 0 ? 1.0 : -1.0);
      }
      detail::backprop_eval(T, dec, es, 6, grads);
    }
  }

  // ---- L_eik over free-space points, all classes per stencil
  if (!batch.rnd_pts.empty()) {
    double w = 1.0 / (static_cast<double>(batch.rnd_pts.size()) * L);
    for (const Vec3& p : batch.rnd_pts) {
      stencil(p);
      for (int l = 0; l < L; ++l) {
        Vec3 nt;
        for (int axis = 0; axis < 3; ++axis)
          nt[axis] = (es.mlp[2 * axis].act.back()[l] - es.mlp[2 * axis + 1].act.back()[l]) / (2 * eps);
        double nn = norm(nt);
        rep.eik += w * (nn - 1.0) * (nn - 1.0);
        if (grads && nn > 1e-12) {
          double scale = cfg.lambda_eik * w * 2.0 * (nn - 1.0) / nn / (2 * eps);
          for (int axis = 0; axis < 3; ++axis) {
            es.gout[2 * axis][l] += scale * nt[axis];
            es.gout[2 * axis + 1][l] -= scale * nt[axis];
          }
        }
      }
      if (grads)
        for (int slot = 0; slot < 6; ++slot) detail::backprop_eval(T, dec, es, slot, grads);
    }
  }

  rep.total = cfg.lambda_eik * rep.eik + cfg.lambda_sdf * rep.sdf + cfg.lambda_sur * rep.sur +
              cfg.lambda_nor * rep.nor;
  if (!std::isfinite(rep.total)) {
    const char* which = !std::isfinite(rep.eik)   ? "L_eik"
                        : !std::isfinite(rep.sdf) ? "L_sdf"
                        : !std::isfinite(rep.sur) ? "L_sur"
                                                  : "L_nor";
    throw FitError(std::string("loss_tri: non-finite component ") + which);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Adam

struct Adam {
  double lr, b1, b2, eps;
  std::vector<double> m, v;
  long t = 0;

  Adam(std::size_t n, double lr_, double b1_ = 0.9, double b2_ = 0.999, double eps_ = 1e-8)
      : lr(lr_), b1(b1_), b2(b2_), eps(eps_), m(n, 0.0), v(n, 0.0) {}

  void step(double* params, const double* grads, std::size_t n) {
    ++t;
    double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + (1 - b1) * grads[i];
      v[i] = b2 * v[i] + (1 - b2) * grads[i] * grads[i];
      params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

// ---------------------------------------------------------------------------
// Minibatch selection

namespace detail {

inline LossBatch draw_minibatch(const SampleBatch& full, const FitConfig& cfg, Rng& rng) {
  LossBatch mb;
  std::size_t L = full.surface.size();
  mb.surf_pts.resize(L);
  mb.surf_nrm.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    const auto& ss = full.surface[l];
    if (ss.points.empty()) continue;
    int want = std::min<std::size_t>(cfg.batch_surface_per_class, ss.points.size());
    for (int k = 0; k < want; ++k) {
      std::size_t idx = rng.uniform_index(ss.points.size());
      mb.surf_pts[l].push_back(ss.points[idx]);
      mb.surf_nrm[l].push_back(ss.normals[idx]);
    }
  }
  int nv = std::min<std::size_t>(cfg.batch_volume, full.volume.points.size());
  for (int k = 0; k < nv; ++k) {
    std::size_t idx = rng.uniform_index(full.volume.points.size());
    mb.vol_pts.push_back(full.volume.points[idx]);
    mb.vol_sdf.push_back(full.volume.sdf[idx]);
  }
  mb.rnd_pts = draw_uniform_points(cfg.batch_rnd, rng);
  return mb;
}

inline TriPlane random_triplane(int C, int R, double stddev, Rng& rng) {
  TriPlane T(C, R);
  for (auto& plane : T.planes)
    for (double& v : plane) v = stddev * rng.gaussian();
  return T;
}

// Adds the gradient of lambda * mean((4v - N4(v))^2) over plane pixels with
// clamped (Neumann) borders. Quadratic in features, so the gradient is the
// stencil applied to the Laplacian field.
inline void add_smoothness_grad(const TriPlane& T, double lambda,
                                std::array<std::vector<double>, 3>& grad) {
  int R = T.R;
  auto cl = [R](int i) { return i < 0 ? 0 : (i >= R ? R - 1 : i); };
  double scale = 2.0 * lambda / (3.0 * T.C * R * R);
  std::vector<double> lap(static_cast<std::size_t>(R) * R);
  for (int p = 0; p < 3; ++p) {
    for (int c = 0; c < T.C; ++c) {
      for (int i = 0; i < R; ++i)
        for (int j = 0; j < R; ++j)
          lap[static_cast<std::size_t>(i) * R + j] =
              4.0 * T.at(p, c, i, j) - T.at(p, c, cl(i - 1), j) - T.at(p, c, cl(i + 1), j) -
              T.at(p, c, i, cl(j - 1)) - T.at(p, c, i, cl(j + 1));
      for (int i = 0; i < R; ++i)
        for (int j = 0; j < R; ++j) {
          double g = 4.0 * lap[static_cast<std::size_t>(i) * R + j];
          // Transposed stencil with the same clamped borders.
          for (auto [di, dj] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}}) {
            int ii = i + di, jj = j + dj;
            if (ii >= 0 && ii < R && jj >= 0 && jj < R)
              g -= lap[static_cast<std::size_t>(ii) * R + jj];
          }
          // On the border a pixel is its own clamped neighbor, once per
          // clamped side.
          int self = (i == 0) + (i == R - 1) + (j == 0) + (j == R - 1);
          g -= self * lap[static_cast<std::size_t>(i) * R + j];
          grad[p][(static_cast<std::size_t>(c) * R + i) * R + j] += scale * g;
        }
    }
  }
}

inline void log_iteration(std::ostream* log, int iter, int level_R, const LossReport& r) {
  if (!log) return;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "iter %d level %d eik %.6g sdf %.6g sur %.6g nor %.6g total %.6g\n",
                iter, level_R, r.eik, r.sdf, r.sur, r.nor, r.total);
  (*log) << buf;
}

}  // namespace detail

struct FitResult {
  TriPlane plane;
  std::vector<LossReport> history;
};

// Per-scene fitting against a frozen decoder. Coarse-to-fine: optimize at
// R_low, upsample2x, repeat until R_high, splitting the iteration budget
// equally across levels; with c2f off, all iterations run at R_high.
inline FitResult fit_scene(const Scene& scene, const DecoderMlp& dec, const FitConfig& cfg,
                           std::uint64_t seed, std::ostream* log = nullptr) {
  if (!dec.frozen) throw FitError("fit_scene: decoder must be frozen");
  SampleBatch batch = make_sample_batch(scene, surface_budgets(scene, cfg.surface_total, cfg.sss),
                                        cfg.M, cfg.sns, cfg.sigma_near, mix_seed(seed, 11));
  Rng rng(mix_seed(seed, 12));

  int n_levels = cfg.c2f ? cfg.eta + 1 : 1;
  int R = cfg.c2f ? cfg.R_low : cfg.R_high();
  FitResult res;
  res.plane = detail::random_triplane(cfg.channels, R, cfg.plane_init_std, rng);

  int iter_counter = 0;
  for (int level = 0; level < n_levels; ++level) {
    int iters = cfg.iterations / n_levels + (level == n_levels - 1 ? cfg.iterations % n_levels : 0);
    double eps = fd_step_for_resolution(res.plane.R);
    std::array<std::optional<Adam>, 3> opt;
    for (int p = 0; p < 3; ++p)
      opt[p].emplace(res.plane.plane_size(), cfg.lr_plane, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    LossGrads grads;
    for (int it = 0; it < iters; ++it) {
      LossBatch mb = detail::draw_minibatch(batch, cfg, rng);
      grads.init(res.plane, dec, false);
      LossReport rep = loss_tri(res.plane, dec, mb, cfg, eps, &grads);
      if (cfg.lambda_smooth > 0) detail::add_smoothness_grad(res.plane, cfg.lambda_smooth, grads.plane);
      if (cfg.lr_final > 0 && iters > 1) {
        double frac = static_cast<double>(it) / (iters - 1);
        double lr = cfg.lr_plane * std::pow(cfg.lr_final / cfg.lr_plane, frac);
        for (int p = 0; p < 3; ++p) opt[p]->lr = lr;
      }
      for (int p = 0; p < 3; ++p)
        opt[p]->step(res.plane.planes[p].data(), grads.plane[p].data(), res.plane.plane_size());
      res.history.push_back(rep);
      detail::log_iteration(log, iter_counter++, res.plane.R, rep);
    }
    if (level + 1 < n_levels) res.plane = upsample2x(res.plane);
  }
  return res;
}

struct SharedFitResult {
  DecoderMlp decoder;            // frozen on return
  std::vector<TriPlane> planes;  // one per input scene
  std::vector<LossReport> history;  // mean over scenes per iteration
};

// Joint optimization of the shared decoder and the tri-planes of a scene
// subset. Decoder gradients are averaged over scenes each iteration; scene
// gradient evaluation is parallel, the reduction order is fixed.
inline SharedFitResult fit_shared(const std::vector<Scene>& scenes, const FitConfig& cfg,
                                  std::uint64_t seed, int threads = 1, std::ostream* log = nullptr) {
  if (scenes.empty()) throw FitError("fit_shared: need at least one scene");
  SharedFitResult res;
  std::vector<int> widths;
  widths.push_back(cfg.channels);
  for (int h : cfg.mlp_hidden) widths.push_back(h);
  widths.push_back(scenes[0].num_classes());
  res.decoder = init_decoder(mix_seed(seed, 21), widths, cfg.mlp_sharpness);

  std::size_t n = scenes.size();
  std::vector<SampleBatch> batches(n);
  std::vector<Rng> rngs;
  for (std::size_t s = 0; s < n; ++s) {
    batches[s] = make_sample_batch(scenes[s], surface_budgets(scenes[s], cfg.surface_total, cfg.sss),
                                   cfg.M, cfg.sns, cfg.sigma_near, mix_seed(seed, 100 + s));
    rngs.emplace_back(mix_seed(seed, 200 + s));
  }

  int n_levels = cfg.c2f ? cfg.eta + 1 : 1;
  int R0 = cfg.c2f ? cfg.R_low : cfg.R_high();
  res.planes.clear();
  for (std::size_t s = 0; s < n; ++s)
    res.planes.push_back(detail::random_triplane(cfg.channels, R0, cfg.plane_init_std, rngs[s]));

  std::size_t n_mlp_params = 0;
  for (int l = 0; l < res.decoder.num_layers(); ++l)
    n_mlp_params += res.decoder.W[l].size() + res.decoder.b[l].size();
  Adam mlp_opt(n_mlp_params, cfg.lr_mlp, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

  int iter_counter = 0;
  for (int level = 0; level < n_levels; ++level) {
    int iters = cfg.shared_iterations / n_levels +
                (level == n_levels - 1 ? cfg.shared_iterations % n_levels : 0);
    double eps = fd_step_for_resolution(res.planes[0].R);
    std::vector<std::array<std::optional<Adam>, 3>> opts(n);
    for (std::size_t s = 0; s < n; ++s)
      for (int p = 0; p < 3; ++p)
        opts[s][p].emplace(res.planes[s].plane_size(), cfg.lr_plane, cfg.adam_beta1, cfg.adam_beta2,
                           cfg.adam_eps);
    std::vector<LossGrads> grads(n);
    std::vector<LossReport> reps(n);
    for (int it = 0; it < iters; ++it) {
      parallel_for(n, threads, [&](std::size_t s) {
        LossBatch mb = detail::draw_minibatch(batches[s], cfg, rngs[s]);
        grads[s].init(res.planes[s], res.decoder, true);
        reps[s] = loss_tri(res.planes[s], res.decoder, mb, cfg, eps, &grads[s]);
        if (cfg.lambda_smooth > 0)
          detail::add_smoothness_grad(res.planes[s], cfg.lambda_smooth, grads[s].plane);
      });
      if (cfg.lr_final > 0 && iters > 1) {
        double frac = static_cast<double>(it) / (iters - 1);
        double lr = cfg.lr_plane * std::pow(cfg.lr_final / cfg.lr_plane, frac);
        for (std::size_t s = 0; s < n; ++s)
          for (int p = 0; p < 3; ++p) opts[s][p]->lr = lr;
      }
      LossReport mean;
      for (std::size_t s = 0; s < n; ++s) {
        for (int p = 0; p < 3; ++p)
          opts[s][p]->step(res.planes[s].planes[p].data(), grads[s].plane[p].data(),
                           res.planes[s].plane_size());
        mean.total += reps[s].total / n;
        mean.eik += reps[s].eik / n;
        mean.sdf += reps[s].sdf / n;
        mean.sur += reps[s].sur / n;
        mean.nor += reps[s].nor / n;
      }
      // Flatten averaged decoder grads and take one Adam step.
      MlpGrads sum = grads[0].mlp;
      for (std::size_t s = 1; s < n; ++s) sum.add(grads[s].mlp);
      std::vector<double> flat_p, flat_g;
      flat_p.reserve(n_mlp_params);
      flat_g.reserve(n_mlp_params);
      for (int l = 0; l < res.decoder.num_layers(); ++l) {
        flat_p.insert(flat_p.end(), res.decoder.W[l].begin(), res.decoder.W[l].end());
        flat_p.insert(flat_p.end(), res.decoder.b[l].begin(), res.decoder.b[l].end());
        for (double g : sum.W[l]) flat_g.push_back(g / static_cast<double>(n));
        for (double g : sum.b[l]) flat_g.push_back(g / static_cast<double>(n));
      }
      mlp_opt.step(flat_p.data(), flat_g.data(), n_mlp_params);
      std::size_t off = 0;
      for (int l = 0; l < res.decoder.num_layers(); ++l) {
        std::copy(flat_p.begin() + off, flat_p.begin() + off + res.decoder.W[l].size(),
                  res.decoder.W[l].begin());
        off += res.decoder.W[l].size();
        std::copy(flat_p.begin() + off, flat_p.begin() + off + res.decoder.b[l].size(),
                  res.decoder.b[l].begin());
        off += res.decoder.b[l].size();
      }
      res.history.push_back(mean);
      detail::log_iteration(log, iter_counter++, res.planes[0].R, mean);
    }
    if (level + 1 < n_levels)
      for (auto& T : res.planes) T = upsample2x(T);
  }
  res.decoder.frozen = true;
  return res;
}

struct DatasetFitOutcome {
  std::vector<std::optional<TriPlane>> planes;
  std::vector<std::pair<std::size_t, std::string>> failures;  // (scene index, error)
};

// Batch driver: per-scene fitting is independent; failures are collected,
// not fatal. Deterministic per scene regardless of worker count.
inline DatasetFitOutcome fit_dataset(const std::vector<Scene>& scenes, const DecoderMlp& dec,
                                     const FitConfig& cfg, int parallelism, std::uint64_t seed) {
  DatasetFitOutcome out;
  out.planes.resize(scenes.size());
  std::vector<std::optional<std::string>> errs(scenes.size());
  parallel_for(scenes.size(), parallelism, [&](std::size_t i) {
    try {
      out.planes[i] = fit_scene(scenes[i], dec, cfg, mix_seed(seed, 1000 + i)).plane;
    } catch (const std::exception& e) {
      errs[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < scenes.size(); ++i)
    if (errs[i]) out.failures.emplace_back(i, *errs[i]);
  return out;
}

}  // namespace semroom
