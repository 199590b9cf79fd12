#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "semroom/triplane.hpp"

using namespace semroom;

namespace {

TriPlane random_plane(int C, int R, std::uint64_t seed) {
  TriPlane T(C, R);
  Rng rng(seed);
  for (auto& p : T.planes)
    for (double& v : p) v = rng.gaussian();
  return T;
}

double node_coord(int i, int R) { return -1.0 + 2.0 * i / (R - 1); }

}  // namespace

TEST_CASE("query: zero planes give zero vector") {
  TriPlane T(4, 8);
  auto f = query(T, {0.3, -0.7, 0.1});
  for (double v : f) CHECK(v == 0.0);
}

TEST_CASE("query: exact at shared grid nodes") {
  const int C = 3, R = 5;
  TriPlane T = random_plane(C, R, 2);
  int i = 1, j = 3, k = 2;
  Vec3 p{node_coord(i, R), node_coord(j, R), node_coord(k, R)};
  auto f = query(T, p);
  for (int c = 0; c < C; ++c) {
    double expect = T.at(0, c, i, j) + T.at(1, c, i, k) + T.at(2, c, j, k);
    CHECK(f[c] == Catch::Approx(expect).margin(1e-12));
  }
}

TEST_CASE("query: cell-center is the mean of 4 corners") {
  const int R = 4;
  TriPlane T(1, R);
  // populate only the xy plane
  Rng rng(4);
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < R; ++j) T.at(0, 0, i, j) = rng.gaussian();
  int i = 1, j = 2;
  Vec3 p{(node_coord(i, R) + node_coord(i + 1, R)) / 2, (node_coord(j, R) + node_coord(j + 1, R)) / 2, -1.0};
  // yz/xz contributions are zero planes
  double expect = (T.at(0, 0, i, j) + T.at(0, 0, i + 1, j) + T.at(0, 0, i, j + 1) + T.at(0, 0, i + 1, j + 1)) / 4;
  CHECK(query(T, p)[0] == Catch::Approx(expect).margin(1e-12));
}

TEST_CASE("query_with_gradients: partition of unity and node weights") {
  const int R = 7;
  TriPlane T = random_plane(2, R, 5);
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    Vec3 p{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    QueryTouch qt;
    query_with_gradients(T, p, qt);
    for (int pl = 0; pl < 3; ++pl) {
      double s = qt.plane[pl].w[0] + qt.plane[pl].w[1] + qt.plane[pl].w[2] + qt.plane[pl].w[3];
      CHECK(s == Catch::Approx(1.0).margin(1e-12));
    }
  }
  // at a node: weight 1 on that node
  Vec3 pn{node_coord(2, R), node_coord(4, R), node_coord(1, R)};
  QueryTouch qt;
  query_with_gradients(T, pn, qt);
  for (int pl = 0; pl < 3; ++pl) {
    int big = 0;
    for (int k = 0; k < 4; ++k)
      if (std::fabs(qt.plane[pl].w[k] - 1.0) < 1e-12) ++big;
    CHECK(big == 1);
  }
}

TEST_CASE("query gradients match finite differences") {
  const int C = 2, R = 6;
  TriPlane T = random_plane(C, R, 7);
  Vec3 p{0.23, -0.51, 0.77};
  QueryTouch qt;
  auto f0 = query_with_gradients(T, p, qt);
  (void)f0;
  const double h = 1e-5;
  // derivative of f[c] w.r.t. touched feature (pl, c, i, j) is the bilinear weight
  for (int pl = 0; pl < 3; ++pl) {
    const PlaneTouch& t = qt.plane[pl];
    int nodes[4][2] = {{t.i0, t.j0}, {t.i0 + 1, t.j0}, {t.i0, t.j0 + 1}, {t.i0 + 1, t.j0 + 1}};
    for (int k = 0; k < 4; ++k) {
      for (int c = 0; c < C; ++c) {
        TriPlane Tp = T, Tm = T;
        Tp.at(pl, c, nodes[k][0], nodes[k][1]) += h;
        Tm.at(pl, c, nodes[k][0], nodes[k][1]) -= h;
        double fd = (query(Tp, p)[c] - query(Tm, p)[c]) / (2 * h);
        double rel = std::fabs(fd - t.w[k]) / std::max(1.0, std::fabs(t.w[k]));
        CHECK(rel < 1e-6);
      }
    }
  }
}

TEST_CASE("query is linear in plane features") {
  const int C = 3, R = 5;
  TriPlane T1 = random_plane(C, R, 8), T2 = random_plane(C, R, 9);
  double a = 0.37, b = -1.21;
  TriPlane Tc(C, R);
  for (int pl = 0; pl < 3; ++pl)
    for (std::size_t i = 0; i < Tc.planes[pl].size(); ++i)
      Tc.planes[pl][i] = a * T1.planes[pl][i] + b * T2.planes[pl][i];
  Rng rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    Vec3 p{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    auto f1 = query(T1, p), f2 = query(T2, p), fc = query(Tc, p);
    for (int c = 0; c < C; ++c)
      CHECK(fc[c] == Catch::Approx(a * f1[c] + b * f2[c]).margin(1e-12));
  }
}

TEST_CASE("upsample2x: constants, corners, and query agreement") {
  SECTION("constant plane stays constant") {
    TriPlane T(1, 4);
    for (auto& p : T.planes)
      for (double& v : p) v = 3.0;
    TriPlane U = upsample2x(T);
    REQUIRE(U.R == 8);
    for (auto& p : U.planes)
      for (double v : p) CHECK(v == Catch::Approx(3.0).margin(1e-14));
  }
  SECTION("R=2 corners preserved exactly") {
    TriPlane T(1, 2);
    T.at(0, 0, 0, 0) = 0;
    T.at(0, 0, 1, 0) = 0;
    T.at(0, 0, 0, 1) = 0;
    T.at(0, 0, 1, 1) = 1;
    TriPlane U = upsample2x(T);
    CHECK(U.at(0, 0, 0, 0) == 0.0);
    CHECK(U.at(0, 0, 3, 0) == 0.0);
    CHECK(U.at(0, 0, 0, 3) == 0.0);
    CHECK(U.at(0, 0, 3, 3) == 1.0);
  }
  SECTION("query before/after upsample within local second difference") {
    const int R = 6;
    TriPlane T = random_plane(2, R, 12);
    TriPlane U = upsample2x(T);
    // bound: max local second difference over the grid
    double bound = 0;
    for (int pl = 0; pl < 3; ++pl)
      for (int c = 0; c < 2; ++c)
        for (int i = 1; i + 1 < R; ++i)
          for (int j = 1; j + 1 < R; ++j) {
            bound = std::max(bound, std::fabs(T.at(pl, c, i - 1, j) - 2 * T.at(pl, c, i, j) + T.at(pl, c, i + 1, j)));
            bound = std::max(bound, std::fabs(T.at(pl, c, i, j - 1) - 2 * T.at(pl, c, i, j) + T.at(pl, c, i, j + 1)));
          }
    Rng rng(13);
    for (int trial = 0; trial < 200; ++trial) {
      Vec3 p{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
      auto f = query(T, p), g = query(U, p);
      for (int c = 0; c < 2; ++c) CHECK(std::fabs(f[c] - g[c]) <= 3 * bound + 1e-12);
    }
  }
}

TEST_CASE("norm stats: channel-wise and scale") {
  std::vector<TriPlane> dataset;
  for (int k = 0; k < 4; ++k) dataset.push_back(random_plane(3, 8, 100 + k));
  // shift channel 1
  for (auto& T : dataset)
    for (auto& p : T.planes)
      for (int i = 0; i < 64; ++i) p[64 + i] = p[64 + i] * 4.0 + 2.0;

  SECTION("channel-wise: normalized dataset has mean 0 std 1") {
    auto st = fit_norm_stats(dataset, NormStats::Mode::ChannelWise);
    std::vector<double> mean(3, 0), var(3, 0);
    std::size_t n = 0;
    for (auto& T : dataset) {
      auto N = normalize(T, st);
      for (auto& p : N.planes)
        for (int c = 0; c < 3; ++c)
          for (int i = 0; i < 64; ++i) mean[c] += p[c * 64 + i];
      n += 3 * 64;
    }
    for (int c = 0; c < 3; ++c) mean[c] /= n;
    for (auto& T : dataset) {
      auto N = normalize(T, st);
      for (auto& p : N.planes)
        for (int c = 0; c < 3; ++c)
          for (int i = 0; i < 64; ++i) var[c] += (p[c * 64 + i] - mean[c]) * (p[c * 64 + i] - mean[c]);
    }
    for (int c = 0; c < 3; ++c) {
      CHECK(std::fabs(mean[c]) < 1e-6);
      CHECK(std::fabs(std::sqrt(var[c] / n) - 1.0) < 1e-6);
    }
  }
  SECTION("round-trip identity") {
    auto st = fit_norm_stats(dataset, NormStats::Mode::ChannelWise);
    auto T2 = denormalize(normalize(dataset[0], st), st);
    for (int pl = 0; pl < 3; ++pl)
      for (std::size_t i = 0; i < T2.planes[pl].size(); ++i)
        CHECK(std::fabs(T2.planes[pl][i] - dataset[0].planes[pl][i]) < 1e-12);
  }
  SECTION("scale mode: global std becomes 1") {
    // synthetic data with rms 4
    std::vector<TriPlane> d2;
    TriPlane T(1, 4);
    Rng rng(55);
    double sumsq = 0;
    for (auto& p : T.planes)
      for (double& v : p) v = rng.gaussian();
    // rescale to exact rms 4
    std::size_t n = 0;
    for (auto& p : T.planes)
      for (double v : p) {
        sumsq += v * v;
        ++n;
      }
    double rms = std::sqrt(sumsq / n);
    for (auto& p : T.planes)
      for (double& v : p) v *= 4.0 / rms;
    d2.push_back(T);
    auto st = fit_norm_stats(d2, NormStats::Mode::Scale);
    CHECK(st.scale == Catch::Approx(4.0).margin(1e-9));
    auto N = normalize(T, st);
    CHECK(N.planes[0][0] == Catch::Approx(T.planes[0][0] / 4.0));
  }
  SECTION("degenerate: all-zero tri-plane floors std") {
    std::vector<TriPlane> z = {TriPlane(2, 4)};
    auto st = fit_norm_stats(z, NormStats::Mode::ChannelWise);
    for (double m : st.mean) CHECK(m == 0.0);
    for (double s : st.stddev) CHECK(s == kStdFloor);
  }
  SECTION("empty dataset errors; channel mismatch errors") {
    std::vector<TriPlane> empty;
    CHECK_THROWS(fit_norm_stats(empty, NormStats::Mode::ChannelWise));
    auto st = fit_norm_stats(dataset, NormStats::Mode::ChannelWise);
    TriPlane wrong(5, 4);
    CHECK_THROWS(normalize(wrong, st));
  }
}

TEST_CASE("triplane binary container round trip is bit exact") {
  TriPlane T = random_plane(4, 6, 33);
  // force representable f32 values so f32 storage is lossless
  for (auto& p : T.planes)
    for (double& v : p) v = static_cast<double>(static_cast<float>(v));
  std::string path = (std::filesystem::temp_directory_path() / "semroom_tp_test.bin").string();
  triplane_save(T, path);
  TriPlane L = triplane_load(path);
  CHECK(L.C == T.C);
  CHECK(L.R == T.R);
  for (int pl = 0; pl < 3; ++pl)
    for (std::size_t i = 0; i < T.planes[pl].size(); ++i) CHECK(L.planes[pl][i] == T.planes[pl][i]);
  // save-load-save reproduces the file byte for byte
  triplane_save(L, path + "2");
  std::ifstream a(path, std::ios::binary), b(path + "2", std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
  std::filesystem::remove(path);
  std::filesystem::remove(path + "2");
}
