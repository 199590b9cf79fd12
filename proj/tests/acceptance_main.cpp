// Acceptance suite: prints one PASS/FAIL line per criterion and exits
// non-zero if any fail. Heavier criteria reuse artifacts from earlier ones.
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "semroom/pipeline.hpp"

using namespace semroom;

namespace {

using clk = std::chrono::steady_clock;

int g_failures = 0;

void report(int id, const char* name, bool ok, const std::string& detail, double secs) {
  std::printf("%s  %2d %-28s %s  (%.1fs)\n", ok ? "PASS" : "FAIL", id, name, detail.c_str(),
              secs);
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

void run(int id, const char* name, const std::function<bool(std::string&)>& body) {
  auto t0 = clk::now();
  std::string detail;
  bool ok = false;
  try {
    ok = body(detail);
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
  }
  report(id, name, ok, detail, std::chrono::duration<double>(clk::now() - t0).count());
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

// ---- shared fixtures ------------------------------------------------------

// Reduced desk scale used by the compression/diffusion criteria: C=8 planes
// at R=16, fitted smoothly enough for the VAE to compress.
FitConfig small_fit_config() {
  FitConfig fc;
  fc.R_low = 4;
  fc.eta = 2;
  fc.channels = 8;
  fc.mlp_hidden = {16, 16};
  fc.surface_total = 1500;
  fc.M = 2000;
  fc.iterations = 300;
  fc.shared_iterations = 200;
  fc.batch_surface_per_class = 64;
  fc.batch_volume = 96;
  fc.batch_rnd = 96;
  fc.lr_final = 5e-5;
  fc.lambda_smooth = 30.0;
  return fc;
}

VaeConfig small_vae_config() {
  VaeConfig vc;
  vc.C = 8;
  vc.R_high = 16;
  vc.latent_c = 8;
  vc.latent_r = 8;
  vc.width = 48;
  vc.steps = 2000;
  vc.M = 400;
  vc.augment = false;
  vc.lr = 3e-3;
  vc.lr_halflife = 400;
  vc.lambda_rec = 1.0;
  vc.lambda_kl = 1e-3;
  vc.lambda_tri = 0.0;
  vc.surface_counts = {800, 200, 200};
  return vc;
}

double median_of(std::vector<double> v) { return median(std::move(v)); }

// ---- criterion 1: gradient oracle -----------------------------------------

bool crit_gradient_oracle(std::string& detail) {
  TriPlane T(4, 8);
  Rng rng(404);
  for (auto& p : T.planes)
    for (double& v : p) v = 0.3 * rng.gaussian();
  DecoderMlp mlp = init_decoder(7, {4, 8, 8, 3});
  LossBatch batch;
  batch.surf_pts.resize(3);
  batch.surf_nrm.resize(3);
  for (int l = 0; l < 3; ++l)
    for (int i = 0; i < 3; ++i) {
      batch.surf_pts[l].push_back(
          {rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)});
      Vec3 n{rng.gaussian(), rng.gaussian(), rng.gaussian()};
      batch.surf_nrm[l].push_back(normalized(n));
    }
  for (int i = 0; i < 6; ++i) {
    batch.vol_pts.push_back(
        {rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)});
    batch.vol_sdf.push_back({rng.gaussian(), rng.gaussian(), rng.gaussian()});
  }
  for (int i = 0; i < 5; ++i)
    batch.rnd_pts.push_back(
        {rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)});

  FitConfig cfg;
  double eps = fd_step_for_resolution(T.R);
  LossGrads grads;
  grads.init(T, mlp, true);
  loss_tri(T, mlp, batch, cfg, eps, &grads);

  const double h = 1e-6;
  auto eval = [&](const TriPlane& Tq, const DecoderMlp& m) {
    return loss_tri(Tq, m, batch, cfg, eps).total;
  };
  Rng pick(11);
  double worst = 0;
  for (int trial = 0; trial < 6; ++trial) {
    TriPlane Tp = T, Tm = T;
    double proj = 0;
    for (int pl = 0; pl < 3; ++pl)
      for (std::size_t i = 0; i < T.plane_size(); ++i) {
        double d = pick.gaussian();
        proj += d * grads.plane[pl][i];
        Tp.planes[pl][i] += h * d;
        Tm.planes[pl][i] -= h * d;
      }
    double fd = (eval(Tp, mlp) - eval(Tm, mlp)) / (2 * h);
    worst = std::max(worst,
                     std::fabs(fd - proj) / std::max({1e-7, std::fabs(fd), std::fabs(proj)}));
  }
  for (int trial = 0; trial < 6; ++trial) {
    DecoderMlp mp = mlp, mm = mlp;
    double proj = 0;
    for (int l = 0; l < mlp.num_layers(); ++l) {
      for (std::size_t k = 0; k < mlp.W[l].size(); ++k) {
        double d = pick.gaussian();
        proj += d * grads.mlp.W[l][k];
        mp.W[l][k] += h * d;
        mm.W[l][k] -= h * d;
      }
      for (std::size_t k = 0; k < mlp.b[l].size(); ++k) {
        double d = pick.gaussian();
        proj += d * grads.mlp.b[l][k];
        mp.b[l][k] += h * d;
        mm.b[l][k] -= h * d;
      }
    }
    double fd = (eval(T, mp) - eval(T, mm)) / (2 * h);
    worst = std::max(worst,
                     std::fabs(fd - proj) / std::max({1e-7, std::fabs(fd), std::fabs(proj)}));
  }
  detail = fmt("worst rel err %.2e (limit 1e-4)", worst);
  return worst < 1e-4;
}

// ---- criterion 2: query exactness ------------------------------------------

bool crit_query_exactness(std::string& detail) {
  Rng rng(5);
  TriPlane T(3, 6);
  for (auto& p : T.planes)
    for (double& v : p) v = rng.gaussian();
  double worst = 0;

  // Partition of unity: constant planes decode to 3x the constant everywhere.
  TriPlane Tc(2, 5);
  for (int p = 0; p < 3; ++p)
    for (std::size_t i = 0; i < Tc.plane_size(); ++i) Tc.planes[p][i] = 0.5;
  for (int i = 0; i < 200; ++i) {
    Vec3 q{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    for (double f : query(Tc, q)) worst = std::max(worst, std::fabs(f - 1.5));
  }

  // Node exactness: at shared lattice nodes the query equals the sum of the
  // three node features.
  int R = T.R;
  auto node = [&](int i) { return -1.0 + 2.0 * i / (R - 1); };
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < R; ++j)
      for (int k = 0; k < R; ++k) {
        if ((i + j + k) % 7) continue;  // subsample for speed
        Vec3 q{node(i), node(j), node(k)};
        std::vector<double> f = query(T, q);
        for (int c = 0; c < T.C; ++c) {
          double expect = T.at(0, c, i, j) + T.at(1, c, i, k) + T.at(2, c, j, k);
          worst = std::max(worst, std::fabs(f[c] - expect));
        }
      }

  // Linearity in features.
  TriPlane A(3, 6), B(3, 6);
  for (int p = 0; p < 3; ++p)
    for (std::size_t i = 0; i < A.plane_size(); ++i) {
      A.planes[p][i] = rng.gaussian();
      B.planes[p][i] = rng.gaussian();
    }
  TriPlane S = A;
  for (int p = 0; p < 3; ++p)
    for (std::size_t i = 0; i < S.plane_size(); ++i) S.planes[p][i] += 2.0 * B.planes[p][i];
  for (int i = 0; i < 100; ++i) {
    Vec3 q{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    std::vector<double> fa = query(A, q), fb = query(B, q), fs = query(S, q);
    for (int c = 0; c < 3; ++c) worst = std::max(worst, std::fabs(fs[c] - fa[c] - 2.0 * fb[c]));
  }

  // Upsample: corners are preserved, and globally bilinear plane content is
  // reproduced exactly by both the resampling and the query.
  TriPlane U = upsample2x(T);
  for (int pl = 0; pl < 3; ++pl)
    for (int c = 0; c < T.C; ++c)
      for (int ci : {0, R - 1})
        for (int cj : {0, R - 1})
          worst = std::max(worst, std::fabs(U.at(pl, c, ci == 0 ? 0 : 2 * R - 1,
                                                 cj == 0 ? 0 : 2 * R - 1) -
                                            T.at(pl, c, ci, cj)));
  TriPlane BL(2, 7);
  double coef[3][2][4];
  for (int pl = 0; pl < 3; ++pl)
    for (int c = 0; c < 2; ++c)
      for (int k = 0; k < 4; ++k) coef[pl][c][k] = rng.gaussian();
  for (int pl = 0; pl < 3; ++pl)
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 7; ++j) {
          double u = i / 6.0, v = j / 6.0;
          const double* a = coef[pl][c];
          BL.at(pl, c, i, j) = a[0] + a[1] * u + a[2] * v + a[3] * u * v;
        }
  TriPlane BU = upsample2x(BL);
  auto analytic = [&](const Vec3& q, int c) {
    double s = 0;
    for (int pl = 0; pl < 3; ++pl) {
      double u = (q[kPlaneAxes[pl][0]] + 1) * 0.5, v = (q[kPlaneAxes[pl][1]] + 1) * 0.5;
      const double* a = coef[pl][c];
      s += a[0] + a[1] * u + a[2] * v + a[3] * u * v;
    }
    return s;
  };
  for (int i = 0; i < 100; ++i) {
    Vec3 q{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    std::vector<double> f0 = query(BL, q), f1 = query(BU, q);
    for (int c = 0; c < 2; ++c) {
      double ref = analytic(q, c);
      worst = std::max({worst, std::fabs(f0[c] - ref), std::fabs(f1[c] - ref)});
    }
  }

  detail = fmt("worst abs err %.2e (limit 1e-12)", worst);
  return worst < 1e-12;
}

// ---- criteria 3/4/5: fitting quality, ablations, shared-MLP trend ----------

struct FitSuite {
  std::vector<Scene> scenes;
  SharedFitResult shared;
  FitConfig cfg;
  std::vector<std::vector<double>> cd;  // [scene][class] from per-scene refits
  bool ready = false;
};

FitSuite g_suite;

bool crit_fitting_quality(std::string& detail) {
  FitConfig fc;  // desk defaults: R_low=4, eta=3 (R_high=32), C=16, 500 iters
  g_suite.cfg = fc;
  for (int i = 0; i < 5; ++i) g_suite.scenes.push_back(generate_room(700 + i));
  g_suite.shared = fit_shared(g_suite.scenes, fc, 99, 1);
  std::vector<double> med(3);
  std::vector<std::vector<double>> per_class(3);
  g_suite.cd.resize(5);
  for (int s = 0; s < 5; ++s) {
    FitResult fr = fit_scene(g_suite.scenes[s], g_suite.shared.decoder, fc, mix_seed(31, s));
    for (int l = 0; l < 3; ++l) {
      ClassCdResult r =
          class_cd(fr.plane, g_suite.shared.decoder, g_suite.scenes[s], l, 32, 2000, 5);
      g_suite.cd[s].push_back(r.cd);
      per_class[l].push_back(r.cd);
    }
  }
  for (int l = 0; l < 3; ++l) med[l] = median_of(per_class[l]);
  g_suite.ready = true;
  detail = fmt("median CD wall %.2e bed %.2e cabinet %.2e (limit 5e-3)", med[0], med[1], med[2]);
  return med[0] <= 5e-3 && med[1] <= 5e-3 && med[2] <= 5e-3;
}

bool crit_ablation_trends(std::string& detail) {
  if (!g_suite.ready) {
    detail = "fitting suite unavailable";
    return false;
  }
  // Full-config medians come straight from criterion 3's refits.
  auto med_class = [&](const std::vector<std::vector<double>>& cd, int l) {
    std::vector<double> col;
    for (const auto& row : cd) col.push_back(row[l]);
    return median_of(col);
  };
  auto med_furniture = [&](const std::vector<std::vector<double>>& cd) {
    std::vector<double> pool;
    for (const auto& row : cd) {
      pool.push_back(row[1]);
      pool.push_back(row[2]);
    }
    return median_of(pool);
  };
  double full_wall = med_class(g_suite.cd, 0);
  double full_small = med_class(g_suite.cd, 2);  // cabinet: smallest objects
  double full_furn = med_furniture(g_suite.cd);

  auto run_variant = [&](bool c2f, bool sss, bool sns) {
    FitConfig fc = g_suite.cfg;
    fc.c2f = c2f;
    fc.sss = sss;
    fc.sns = sns;
    std::vector<std::vector<double>> cd(5);
    for (int s = 0; s < 5; ++s) {
      FitResult fr = fit_scene(g_suite.scenes[s], g_suite.shared.decoder, fc, mix_seed(31, s));
      for (int l = 0; l < 3; ++l)
        cd[s].push_back(
            class_cd(fr.plane, g_suite.shared.decoder, g_suite.scenes[s], l, 32, 2000, 5).cd);
    }
    return cd;
  };
  auto no_c2f = run_variant(false, true, true);
  auto no_sss = run_variant(true, false, true);
  auto no_sns = run_variant(true, true, false);

  double c2f_wall = med_class(no_c2f, 0);
  double sns_small = med_class(no_sns, 2);
  double sss_furn = med_furniture(no_sss);

  // "No improvement beyond 10% tolerance": the ablated run may not beat the
  // full configuration by more than 10%.
  bool a = c2f_wall >= 0.9 * full_wall;
  bool b = sns_small >= 0.9 * full_small;
  bool c = sss_furn >= 0.9 * full_furn;
  detail = fmt("wall full %.2e no-c2f %.2e | small full %.2e no-sns %.2e | furn full %.2e no-sss %.2e",
               full_wall, c2f_wall, full_small, sns_small, full_furn, sss_furn);
  return a && b && c;
}

bool crit_shared_mlp_trend(std::string& detail) {
  FitConfig fc = small_fit_config();
  std::vector<Scene> pool;
  for (int i = 0; i < 10; ++i) pool.push_back(generate_room(800 + i));
  std::vector<Scene> test_scenes;
  for (int i = 0; i < 3; ++i) test_scenes.push_back(generate_room(900 + i));

  auto test_cd = [&](const DecoderMlp& dec) {
    std::vector<double> cds;
    for (std::size_t s = 0; s < test_scenes.size(); ++s) {
      FitResult fr = fit_scene(test_scenes[s], dec, fc, mix_seed(41, s));
      for (int l = 0; l < 3; ++l)
        cds.push_back(class_cd(fr.plane, dec, test_scenes[s], l, 24, 1500, 5).cd);
    }
    return median_of(cds);
  };

  std::vector<Scene> one(pool.begin(), pool.begin() + 1);
  SharedFitResult s1 = fit_shared(one, fc, 99, 1);
  SharedFitResult s10 = fit_shared(pool, fc, 99, 1);
  double cd1 = test_cd(s1.decoder);
  double cd10 = test_cd(s10.decoder);
  detail = fmt("test median CD: 1-scene %.2e vs 10-scene %.2e", cd1, cd10);
  return cd1 > 0.9 * cd10;  // strictly worse, with 10% slack for sampling noise
}

// ---- criterion 6: VAE overfit ----------------------------------------------

struct VaeFixture {
  std::vector<Scene> scenes;
  SharedFitResult fit;
  VaeTrainResult vae;
  bool ready = false;
};

VaeFixture g_vae;

bool crit_vae_overfit(std::string& detail) {
  FitConfig fc = small_fit_config();
  for (int i = 0; i < 4; ++i) g_vae.scenes.push_back(generate_room(300 + i));
  g_vae.fit = fit_shared(g_vae.scenes, fc, 99, 1);
  VaeConfig vc = small_vae_config();
  g_vae.vae = train_vae(g_vae.fit.planes, g_vae.scenes, g_vae.fit.decoder, vc, 7);
  double tail = 0;
  for (std::size_t i = g_vae.vae.history.size() - 100; i < g_vae.vae.history.size(); ++i)
    tail += g_vae.vae.history[i].rec;
  tail /= 100;

  std::vector<std::vector<double>> ratios(3);
  std::vector<std::vector<double>> base_cd(3), rec_cd(3);
  for (int s = 0; s < 4; ++s) {
    TriPlane Tn = normalize(g_vae.fit.planes[s], g_vae.vae.stats);
    LatentTriPlane mu, lv;
    encode(g_vae.vae.params, Tn, mu, lv);
    TriPlane Trec = denormalize(decode_latent(g_vae.vae.params, mu), g_vae.vae.stats);
    for (int l = 0; l < 3; ++l) {
      base_cd[l].push_back(
          class_cd(g_vae.fit.planes[s], g_vae.fit.decoder, g_vae.scenes[s], l, 24, 1500, 5).cd);
      rec_cd[l].push_back(
          class_cd(Trec, g_vae.fit.decoder, g_vae.scenes[s], l, 24, 1500, 5).cd);
    }
  }
  bool cd_ok = true;
  std::string cds;
  for (int l = 0; l < 3; ++l) {
    double b = median_of(base_cd[l]), r = median_of(rec_cd[l]);
    cds += fmt(" c%d %.2e/%.2e", l, r, b);
    if (r > 2.0 * b) cd_ok = false;
  }
  g_vae.ready = true;
  detail = fmt("L_rec tail %.4f (limit 0.05); recon/base CD medians:%s", tail, cds.c_str());
  return tail < 0.05 && cd_ok;
}

// ---- criterion 7: augmentation bookkeeping ----------------------------------

// Smooth-ish random planes so bilinear/rotation index algebra is the only
// error source.
TriPlane random_smooth_plane(Rng& rng) {
  TriPlane T0 = semroom::detail::random_triplane(6, 8, 0.5, rng);
  return upsample2x(T0);
}

bool crit_augmentation(std::string& detail) {
  Rng rng(21);
  TriPlane T = random_smooth_plane(rng);
  DecoderMlp dec = init_decoder(3, {T.C, 16, 3});
  double worst = 0;
  for (int g = 0; g < 8; ++g) {
    TriPlane Tg = aug_planes(T, g);
    for (int i = 0; i < 1250; ++i) {
      Vec3 p{rng.uniform(-0.95, 0.95), rng.uniform(-0.95, 0.95), rng.uniform(-0.95, 0.95)};
      std::vector<double> a = sdf_at(Tg, dec, aug_point(g, p));
      std::vector<double> b = sdf_at(T, dec, p);
      for (int l = 0; l < 3; ++l) worst = std::max(worst, std::fabs(a[l] - b[l]));
    }
  }
  detail = fmt("max abs SDF discrepancy %.2e over 10^4 points (limit 1e-5)", worst);
  return worst < 1e-5;
}

// ---- criterion 8: diffusion schedule and sampler ----------------------------

bool crit_diffusion_schedule(std::string& detail) {
  NoiseSchedule sched = build_schedule(1000, 1e-4, 0.02);
  if (std::fabs(sched.alpha_bar[0] - 0.9999) > 1e-12) {
    detail = "alpha_bar(1) != 0.9999";
    return false;
  }
  for (int t = 1; t < 1000; ++t)
    if (sched.alpha_bar[t] >= sched.alpha_bar[t - 1]) {
      detail = "alpha_bar not strictly decreasing";
      return false;
    }

  // Condition channels bit-stable through q_sample and ancestral sampling.
  Rng rng(2);
  Scene scene = generate_room(5);
  LayoutMap F = layout_map(scene, 8);
  LatentTriPlane z0 = gaussian_latent(4, 8, 11);
  ConditionedLatent c0 = assemble_condition(z0, F);
  LatentTriPlane noise = gaussian_latent(4, 8, 12);
  ConditionedLatent ct = q_sample(c0, 500, noise, sched);
  for (int p = 0; p < 3; ++p)
    for (int ch = c0.c; ch < c0.c + c0.L; ++ch)
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j)
          if (ct.planes[p].v[(static_cast<std::size_t>(ch) * 8 + i) * 8 + j] !=
              c0.planes[p].v[(static_cast<std::size_t>(ch) * 8 + i) * 8 + j]) {
            detail = "condition changed under q_sample";
            return false;
          }

  // Deterministic-posterior oracle recovery.
  auto oracle = [&](const ConditionedLatent& zt, int) {
    (void)zt;
    LatentTriPlane out = z0;
    return out;
  };
  ConditionedLatent init = q_sample(assemble_condition(z0, F), 1000, gaussian_latent(4, 8, 13), sched);
  LatentTriPlane rec =
      sample_latent(oracle, F, sched, 77, 250, 4, 1e9, /*zero_variance=*/true, &init);
  double worst = 0;
  for (int p = 0; p < 3; ++p)
    for (std::size_t i = 0; i < rec.planes[p].v.size(); ++i)
      worst = std::max(worst, std::fabs(rec.planes[p].v[i] - z0.planes[p].v[i]));
  detail = fmt("oracle recovery max err %.2e (limit 1e-5)", worst);
  return worst < 1e-5;
}

// ---- criterion 9: end-to-end overfit generation -----------------------------

bool crit_end_to_end(std::string& detail) {
  FitConfig fc = small_fit_config();
  std::vector<Scene> scenes;
  for (int i = 0; i < 8; ++i) scenes.push_back(generate_room(300 + i));
  SharedFitResult sf = fit_shared(scenes, fc, 99, 1);
  VaeConfig vc = small_vae_config();
  VaeTrainResult vr = train_vae(sf.planes, scenes, sf.decoder, vc, 7);

  std::vector<LatentTriPlane> latents;
  std::vector<LayoutMap> layouts;
  for (int s = 0; s < 8; ++s) {
    LatentTriPlane mu, lv;
    encode(vr.params, normalize(sf.planes[s], vr.stats), mu, lv);
    latents.push_back(mu);
    layouts.push_back(layout_map(scenes[s], 8));
  }
  DiffConfig dc;
  dc.latent_c = 8;
  dc.L = 3;
  dc.r = 8;
  dc.width = 32;
  dc.stages = 2;
  dc.steps = 1500;
  dc.batch = 8;
  dc.sample_steps = 100;
  DiffTrainResult dr = train_diffusion(latents, layouts, dc, 5);

  NoiseSchedule sched = build_schedule(dc.T, dc.beta1, dc.betaT);
  LatentTriPlane z = sample_latent(dr.denoiser, layouts[0], sched, 1234);
  TriPlane T = denormalize(decode_latent(vr.params, denormalize_latent(z, dr.stats)), vr.stats);
  std::vector<TriangleMesh> meshes = mesh_triplane(T, sf.decoder, scenes[0], 24);
  bool nonempty = true;
  for (const auto& m : meshes) nonempty = nonempty && !m.empty();
  std::vector<double> iou = layout_iou(layouts[0], meshes);
  double mean = (iou[0] + iou[1] + iou[2]) / 3.0;
  detail = fmt("IoU wall %.2f bed %.2f cabinet %.2f mean %.2f (limit 0.5); all meshes non-empty: %s",
               iou[0], iou[1], iou[2], mean, nonempty ? "yes" : "no");
  return nonempty && mean >= 0.5;
}

// ---- criterion 10: geometry post-process -------------------------------------

bool crit_geometry_postprocess(std::string& detail) {
  // RDP: noised square, noise < tol, exactly 4 corners.
  Rng rng(9);
  Polyline2D sq;
  sq.closed = true;
  auto push_edge = [&](Vec2 a, Vec2 b) {
    for (int i = 0; i < 25; ++i) {
      double t = i / 25.0;
      Vec2 p{a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
      // jitter along the normal, well under tol
      double j = 0.03 * (rng.uniform() - 0.5);
      Vec2 d{b.x - a.x, b.y - a.y};
      double len = norm2d(d);
      p.x += j * d.y / len;
      p.y -= j * d.x / len;
      sq.points.push_back(p);
    }
  };
  push_edge({0, 0}, {10, 0});
  push_edge({10, 0}, {10, 10});
  push_edge({10, 10}, {0, 10});
  push_edge({0, 10}, {0, 0});
  Polyline2D simple = rdp_simplify(sq, 0.5);
  if (simple.points.size() != 4) {
    detail = fmt("RDP corners: %zu (want 4)", simple.points.size());
    return false;
  }

  // Ear clipping: n-2 triangles, shoelace area conserved to rel 1e-9.
  Polyline2D poly;
  poly.closed = true;
  poly.points = {{0, 0}, {4, 0}, {4, 1}, {2, 1}, {2, 3}, {4, 3}, {4, 4}, {0, 4}};
  auto tris = triangulate_polygon(poly);
  if (tris.size() != poly.points.size() - 2) {
    detail = fmt("ear clip: %zu triangles (want n-2=%zu)", tris.size(), poly.points.size() - 2);
    return false;
  }
  double area = polygon_area(poly.points);
  double tri_area = 0;
  for (const auto& t : tris) {
    const Vec2 &a = poly.points[t[0]], &b = poly.points[t[1]], &c = poly.points[t[2]];
    tri_area += 0.5 * ((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x));
  }
  double rel = std::fabs(tri_area - area) / std::fabs(area);
  if (rel > 1e-9) {
    detail = fmt("ear clip area rel err %.2e", rel);
    return false;
  }

  // Wall band edge-manifold audit: the extruded band of a closed footprint
  // has no boundary or non-manifold edges except the open floor sheet.
  Polyline2D fp;
  fp.closed = true;
  fp.points = {{-0.5, -0.5}, {0.5, -0.5}, {0.5, 0.5}, {-0.5, 0.5}};
  TriangleMesh wall = build_wall_mesh(fp, 0.8, 0.08, 0);
  EdgeAudit audit = audit_edges(wall);
  bool ok = audit.non_manifold_edges == 0 && audit.boundary_edges == fp.points.size();
  detail = fmt("RDP 4 corners; ear clip n-2, area rel %.1e; wall audit boundary %zu non-manifold %zu",
               rel, audit.boundary_edges, audit.non_manifold_edges);
  return ok;
}

// ---- criterion 11: chamfer oracle --------------------------------------------

bool crit_chamfer_oracle(std::string& detail) {
  Rng rng(99);
  auto random_points = [&](std::size_t n) {
    std::vector<Vec3> v;
    for (std::size_t i = 0; i < n; ++i)
      v.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    return v;
  };
  std::vector<Vec3> p = random_points(500), q = random_points(500);
  double fast = chamfer(p, q);
  double brute = chamfer(p, q, /*brute_force=*/true);
  double err = std::fabs(fast - brute);
  if (err > 1e-12) {
    detail = fmt("kd-tree vs brute force err %.2e", err);
    return false;
  }

  // Penetration detector: overlapping box pair flags, disjoint pair does not.
  auto box_scene = [&](double gap) {
    Scene s;
    s.classes = {{0, "a"}, {1, "b"}};
    s.parts.resize(2);
    Primitive a, b;
    a.kind = Primitive::Kind::AxisBox;
    a.center = {0, 0, 0};
    a.half_extents = {0.2, 0.2, 0.2};
    b = a;
    b.center = {0.4 + gap, 0, 0};
    s.parts[0].push_back(a);
    s.parts[1].push_back(b);
    return s;
  };
  bool overlap = scene_interpenetrates(box_scene(-0.1), 0.01, 400, 1);
  bool disjoint = scene_interpenetrates(box_scene(0.1), 0.01, 400, 1);
  detail = fmt("chamfer err %.1e; overlap flagged %s, disjoint flagged %s", err,
               overlap ? "yes" : "no", disjoint ? "yes" : "no");
  return overlap && !disjoint;
}

// ---- criterion 12: determinism ------------------------------------------------

bool crit_determinism(std::string& detail) {
  namespace fs = std::filesystem;
  PipelineConfig cfg;
  cfg.n_scenes = 2;
  cfg.shared_scenes = 2;
  cfg.grid_res = 16;
  cfg.eval_samples = 300;
  cfg.threads = 1;
  cfg.fit = small_fit_config();
  cfg.fit.iterations = 40;
  cfg.fit.shared_iterations = 60;
  cfg.vae = small_vae_config();
  cfg.vae.width = 12;
  cfg.vae.latent_c = 2;
  cfg.vae.steps = 40;
  cfg.diff.width = 8;
  cfg.diff.steps = 40;
  cfg.diff.batch = 2;
  cfg.diff.sample_steps = 10;
  validate_config(cfg);

  auto run_pipeline = [&](const std::string& dir) {
    ArtifactStore store(dir);
    std::ostringstream log;
    cmd_gen_data(cfg, store, log);
    cmd_fit(cfg, store, log);
    cmd_train_vae(cfg, store, log);
    cmd_train_diff(cfg, store, log);
    cmd_mesh(cfg, store, log);
    cmd_sample(cfg, store, store.path("layouts/layout_0.txt"), 3, log);
    cmd_eval(cfg, store, log);
    return store;
  };
  fs::path base = fs::temp_directory_path() / "semroom_accept_det";
  fs::remove_all(base);
  ArtifactStore a = run_pipeline((base / "a").string());
  ArtifactStore b = run_pipeline((base / "b").string());
  bool same = a.manifest.size() == b.manifest.size();
  std::size_t n = 0;
  for (const auto& [rel, hash] : a.manifest) {
    auto it = b.manifest.find(rel);
    if (it == b.manifest.end() || it->second != hash) {
      same = false;
      detail = "mismatch at " + rel;
      break;
    }
    ++n;
  }
  fs::remove_all(base);
  if (same) detail = fmt("%zu artifacts byte-identical across two runs", n);
  return same;
}

}  // namespace

int main(int argc, char** argv) {
  // Optional args: criterion numbers to run (default: all). Criterion 4
  // reuses criterion 3's fits and forces it on.
  std::vector<int> want;
  for (int i = 1; i < argc; ++i) want.push_back(std::atoi(argv[i]));
  auto wanted = [&](int id) {
    if (want.empty()) return true;
    for (int w : want)
      if (w == id || (id == 3 && w == 4)) return true;
    return false;
  };
  auto maybe = [&](int id, const char* name, const std::function<bool(std::string&)>& body) {
    if (wanted(id)) run(id, name, body);
  };
  maybe(1, "gradient oracle", crit_gradient_oracle);
  maybe(2, "query exactness", crit_query_exactness);
  maybe(7, "augmentation bookkeeping", crit_augmentation);
  maybe(8, "diffusion schedule/sampler", crit_diffusion_schedule);
  maybe(10, "geometry post-process", crit_geometry_postprocess);
  maybe(11, "chamfer oracle", crit_chamfer_oracle);
  maybe(12, "pipeline determinism", crit_determinism);
  maybe(3, "fitting quality", crit_fitting_quality);
  maybe(4, "ablation trends", crit_ablation_trends);
  maybe(5, "shared-MLP trend", crit_shared_mlp_trend);
  maybe(6, "vae overfit", crit_vae_overfit);
  maybe(9, "end-to-end generation", crit_end_to_end);
  std::printf("%s: %d criterion(s) failed\n", g_failures ? "FAILURES" : "ALL PASS", g_failures);
  return g_failures ? 1 : 0;
}
