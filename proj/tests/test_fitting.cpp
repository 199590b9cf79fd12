#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "semroom/fitting.hpp"

using namespace semroom;

namespace {

// Tiny instance for gradient checks: R=8, C=4, L=3, width 8, 20 points.
struct TinySetup {
  TriPlane T;
  DecoderMlp mlp;
  LossBatch batch;
  FitConfig cfg;
  double eps;

  TinySetup() : T(4, 8) {
    Rng rng(404);
    for (auto& p : T.planes)
      for (double& v : p) v = 0.3 * rng.gaussian();
    mlp = init_decoder(7, {4, 8, 8, 3});
    batch.surf_pts.resize(3);
    batch.surf_nrm.resize(3);
    for (int l = 0; l < 3; ++l)
      for (int i = 0; i < 3; ++i) {
        batch.surf_pts[l].push_back({rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)});
        Vec3 n{rng.gaussian(), rng.gaussian(), rng.gaussian()};
        batch.surf_nrm[l].push_back(normalized(n));
      }
    for (int i = 0; i < 6; ++i) {
      batch.vol_pts.push_back({rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)});
      batch.vol_sdf.push_back({rng.gaussian(), rng.gaussian(), rng.gaussian()});
    }
    for (int i = 0; i < 5; ++i)
      batch.rnd_pts.push_back({rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)});
    eps = fd_step_for_resolution(T.R);
  }
};

}  // namespace

TEST_CASE("loss decomposition identity") {
  TinySetup ts;
  auto rep = loss_tri(ts.T, ts.mlp, ts.batch, ts.cfg, ts.eps);
  double expect = ts.cfg.lambda_eik * rep.eik + ts.cfg.lambda_sdf * rep.sdf +
                  ts.cfg.lambda_sur * rep.sur + ts.cfg.lambda_nor * rep.nor;
  CHECK(rep.total == expect);
}

TEST_CASE("gradient oracle: tri-plane features and MLP weights vs finite differences") {
  TinySetup ts;
  LossGrads grads;
  grads.init(ts.T, ts.mlp, true);
  loss_tri(ts.T, ts.mlp, ts.batch, ts.cfg, ts.eps, &grads);

  const double h = 1e-6;
  auto eval = [&](const TriPlane& T, const DecoderMlp& m) {
    return loss_tri(T, m, ts.batch, ts.cfg, ts.eps).total;
  };

  // Directional probes over all tri-plane features: FD of the full loss along
  // a random direction vs the projection of the analytic gradient.
  Rng pick(11);
  for (int trial = 0; trial < 6; ++trial) {
    std::array<std::vector<double>, 3> dir;
    double proj = 0;
    TriPlane Tp = ts.T, Tm = ts.T;
    for (int pl = 0; pl < 3; ++pl) {
      dir[pl].resize(ts.T.plane_size());
      for (std::size_t i = 0; i < dir[pl].size(); ++i) {
        dir[pl][i] = pick.gaussian();
        proj += dir[pl][i] * grads.plane[pl][i];
        Tp.planes[pl][i] += h * dir[pl][i];
        Tm.planes[pl][i] -= h * dir[pl][i];
      }
    }
    double fd = (eval(Tp, ts.mlp) - eval(Tm, ts.mlp)) / (2 * h);
    CHECK(std::fabs(fd - proj) / std::max({1e-7, std::fabs(fd), std::fabs(proj)}) < 1e-4);
  }

  // Directional probes over all decoder weights and biases.
  for (int trial = 0; trial < 6; ++trial) {
    DecoderMlp mp = ts.mlp, mm = ts.mlp;
    double proj = 0;
    for (int l = 0; l < ts.mlp.num_layers(); ++l) {
      for (std::size_t k = 0; k < ts.mlp.W[l].size(); ++k) {
        double d = pick.gaussian();
        proj += d * grads.mlp.W[l][k];
        mp.W[l][k] += h * d;
        mm.W[l][k] -= h * d;
      }
      for (std::size_t k = 0; k < ts.mlp.b[l].size(); ++k) {
        double d = pick.gaussian();
        proj += d * grads.mlp.b[l][k];
        mp.b[l][k] += h * d;
        mm.b[l][k] -= h * d;
      }
    }
    double fd = (eval(ts.T, mp) - eval(ts.T, mm)) / (2 * h);
    CHECK(std::fabs(fd - proj) / std::max({1e-7, std::fabs(fd), std::fabs(proj)}) < 1e-4);
  }

  // Guarded per-coordinate spot checks.
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    int pl = static_cast<int>(pick.uniform_index(3));
    std::size_t idx = pick.uniform_index(ts.T.planes[pl].size());
    TriPlane Tp = ts.T, Tm = ts.T;
    Tp.planes[pl][idx] += h;
    Tm.planes[pl][idx] -= h;
    double fd = (eval(Tp, ts.mlp) - eval(Tm, ts.mlp)) / (2 * h);
    double an = grads.plane[pl][idx];
    if (std::max(std::fabs(fd), std::fabs(an)) < 1e-5) continue;
    CHECK(std::fabs(fd - an) / std::max(std::fabs(fd), std::fabs(an)) < 1e-3);
    ++checked;
  }
  CHECK(checked > 20);
}

TEST_CASE("perfect SDF prediction zeroes L_sdf") {
  // decoder ignores features and outputs exactly the stored targets only if
  // targets are constant; use constant targets equal to the decoder bias.
  DecoderMlp constd;
  constd.widths = {4, 3};
  constd.W = {std::vector<double>(12, 0.0)};
  constd.b = {{0.4, -0.2, 0.1}};
  constd.frozen = true;
  TriPlane T(4, 8);
  LossBatch b;
  b.surf_pts.resize(3);
  b.surf_nrm.resize(3);
  for (int i = 0; i < 10; ++i) {
    b.vol_pts.push_back({0.1 * i - 0.5, 0.0, 0.0});
    b.vol_sdf.push_back({0.4, -0.2, 0.1});
  }
  FitConfig cfg;
  auto rep = loss_tri(T, constd, b, cfg, 0.05);
  CHECK(rep.sdf == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("constant decoder output: normals zero, L_eik exactly 1") {
  DecoderMlp constd;
  constd.widths = {2, 2};
  constd.W = {std::vector<double>(4, 0.0)};
  constd.b = {{0.7, -0.3}};
  constd.frozen = true;
  TriPlane T(2, 8);
  Rng rng(3);
  for (auto& p : T.planes)
    for (double& v : p) v = rng.gaussian();  // features irrelevant: zero weights
  LossBatch b;
  b.surf_pts.resize(2);
  b.surf_nrm.resize(2);
  for (int i = 0; i < 7; ++i)
    b.rnd_pts.push_back({rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)});
  FitConfig cfg;
  auto rep = loss_tri(T, constd, b, cfg, 0.05);
  CHECK(rep.eik == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("hand-built linear SDF field: L_eik, L_nor, L_sur vanish") {
  // One class, planar wall at x=0: field d(p) = p.x.
  DecoderMlp lin;
  lin.widths = {1, 1};
  lin.W = {{1.0}};
  lin.b = {{0.0}};
  lin.frozen = true;
  const int R = 9;
  TriPlane T(1, R);
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < R; ++j) T.at(0, 0, i, j) = -1.0 + 2.0 * i / (R - 1);

  LossBatch b;
  b.surf_pts.resize(1);
  b.surf_nrm.resize(1);
  Rng rng(8);
  for (int i = 0; i < 10; ++i) {
    b.surf_pts[0].push_back({0.0, rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)});
    b.surf_nrm[0].push_back({1, 0, 0});
  }
  for (int i = 0; i < 10; ++i) {
    Vec3 p{rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)};
    b.rnd_pts.push_back(p);
    b.vol_pts.push_back(p);
    b.vol_sdf.push_back({p.x});
  }
  FitConfig cfg;
  auto rep = loss_tri(T, lin, b, cfg, 0.05);
  CHECK(rep.eik < 1e-6);
  CHECK(rep.nor < 1e-6);
  CHECK(rep.sur < 1e-6);
  CHECK(rep.sdf < 1e-6);
}

TEST_CASE("non-finite loss raises with component attribution") {
  DecoderMlp bad;
  bad.widths = {1, 1};
  bad.W = {{std::numeric_limits<double>::quiet_NaN()}};
  bad.b = {{0.0}};
  bad.frozen = true;
  TriPlane T(1, 4);
  for (auto& p : T.planes)
    for (double& v : p) v = 1.0;
  LossBatch b;
  b.surf_pts.resize(1);
  b.surf_nrm.resize(1);
  b.vol_pts.push_back({0, 0, 0});
  b.vol_sdf.push_back({0.0});
  FitConfig cfg;
  CHECK_THROWS_AS(loss_tri(T, bad, b, cfg, 0.05), FitError);
}

TEST_CASE("c2f level schedule arithmetic") {
  FitConfig cfg;
  cfg.R_low = 4;
  cfg.eta = 3;
  CHECK(cfg.R_high() == 32);
  // fit a trivially small run and confirm level sequence from a metrics log
  cfg.channels = 4;
  cfg.mlp_hidden = {8};
  cfg.iterations = 8;
  cfg.surface_total = 300;
  cfg.M = 200;
  cfg.batch_surface_per_class = 16;
  cfg.batch_volume = 16;
  cfg.batch_rnd = 16;
  Scene s = generate_room(2);
  auto shared = fit_shared({s}, cfg, 5);
  std::ostringstream log;
  auto res = fit_scene(s, shared.decoder, cfg, 6, &log);
  CHECK(res.plane.R == 32);
  std::string text = log.str();
  CHECK(text.find("level 4 ") != std::string::npos);
  CHECK(text.find("level 8 ") != std::string::npos);
  CHECK(text.find("level 16 ") != std::string::npos);
  CHECK(text.find("level 32 ") != std::string::npos);
}

TEST_CASE("training loss decreases on a short desk run") {
  FitConfig cfg;
  cfg.channels = 8;
  cfg.mlp_hidden = {16, 16};
  cfg.iterations = 160;
  cfg.shared_iterations = 160;
  cfg.R_low = 4;
  cfg.eta = 2;
  cfg.surface_total = 3000;
  cfg.M = 3000;
  cfg.batch_surface_per_class = 128;
  cfg.batch_volume = 196;
  cfg.batch_rnd = 196;
  Scene s = generate_room(21);
  auto shared = fit_shared({s}, cfg, 77);
  REQUIRE(shared.history.size() == 160);
  auto median_window = [&](std::size_t lo, std::size_t hi) {
    std::vector<double> v;
    for (std::size_t i = lo; i < hi; ++i) v.push_back(shared.history[i].total);
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  double first = median_window(0, 50);
  double last = median_window(shared.history.size() - 50, shared.history.size());
  CHECK(last < first);
  // final L_sdf well below initial
  double sdf0 = shared.history.front().sdf;
  double sdfN = shared.history.back().sdf;
  CHECK(sdfN < 0.5 * sdf0);
}

TEST_CASE("frozen decoder is untouched by fit_scene; unfrozen rejected") {
  FitConfig cfg;
  cfg.channels = 4;
  cfg.mlp_hidden = {8};
  cfg.iterations = 4;
  cfg.surface_total = 300;
  cfg.M = 200;
  cfg.batch_surface_per_class = 8;
  cfg.batch_volume = 8;
  cfg.batch_rnd = 8;
  Scene s = generate_room(3);
  auto shared = fit_shared({s}, cfg, 1);
  auto weights_before = shared.decoder.W;
  fit_scene(s, shared.decoder, cfg, 2);
  CHECK(shared.decoder.W == weights_before);
  DecoderMlp unfrozen = shared.decoder;
  unfrozen.frozen = false;
  CHECK_THROWS_AS(fit_scene(s, unfrozen, cfg, 2), FitError);
}

TEST_CASE("fit_dataset: worker count does not change results; failures collected") {
  FitConfig cfg;
  cfg.channels = 4;
  cfg.mlp_hidden = {8};
  cfg.iterations = 6;
  cfg.shared_iterations = 6;
  cfg.surface_total = 300;
  cfg.M = 200;
  cfg.batch_surface_per_class = 8;
  cfg.batch_volume = 8;
  cfg.batch_rnd = 8;
  std::vector<Scene> scenes = {generate_room(31), generate_room(32), generate_room(33)};
  auto shared = fit_shared(scenes, cfg, 9);
  auto out1 = fit_dataset(scenes, shared.decoder, cfg, 1, 55);
  auto out2 = fit_dataset(scenes, shared.decoder, cfg, 2, 55);
  REQUIRE(out1.failures.empty());
  REQUIRE(out2.failures.empty());
  for (std::size_t i = 0; i < scenes.size(); ++i)
    for (int pl = 0; pl < 3; ++pl) CHECK(out1.planes[i]->planes[pl] == out2.planes[i]->planes[pl]);
}
