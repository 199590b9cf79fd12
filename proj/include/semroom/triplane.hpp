#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "semroom/container.hpp"
#include "semroom/core.hpp"

namespace semroom {

// Three C x R x R feature planes (order xy, xz, yz) over [-1,1]^3.
// Grid node (i,j) of a plane sits at coordinate -1 + 2i/(R-1) on each of its
// two axes (align-corners convention). Out-of-domain queries clamp.
struct TriPlane {
  int C = 0, R = 0;
  std::array<std::vector<double>, 3> planes;  // each C*R*R, [c][i][j] row-major

  TriPlane() = default;
  TriPlane(int C_, int R_) : C(C_), R(R_) {
    for (auto& p : planes) p.assign(static_cast<std::size_t>(C) * R * R, 0.0);
  }

  double& at(int p, int c, int i, int j) {
    return planes[p][(static_cast<std::size_t>(c) * R + i) * R + j];
  }
  double at(int p, int c, int i, int j) const {
    return planes[p][(static_cast<std::size_t>(c) * R + i) * R + j];
  }

  std::size_t plane_size() const { return static_cast<std::size_t>(C) * R * R; }
};

// Which scene axes each plane projects onto: xy -> (x,y), xz -> (x,z), yz -> (y,z).
inline constexpr int kPlaneAxes[3][2] = {{0, 1}, {0, 2}, {1, 2}};

// Bilinear footprint of a query on one plane: base node and weights.
struct PlaneTouch {
  int i0, j0;          // weights apply to nodes (i0,j0),(i0+1,j0),(i0,j0+1),(i0+1,j0+1)
  double w[4];
};

struct QueryTouch {
  PlaneTouch plane[3];
};

namespace detail {

inline PlaneTouch plane_touch(const Vec3& p, int R, int plane) {
  double u = clampd(p[kPlaneAxes[plane][0]], -1.0, 1.0);
  double v = clampd(p[kPlaneAxes[plane][1]], -1.0, 1.0);
  double gu = (u + 1.0) * 0.5 * (R - 1);
  double gv = (v + 1.0) * 0.5 * (R - 1);
  int i0 = static_cast<int>(gu);
  int j0 = static_cast<int>(gv);
  if (i0 > R - 2) i0 = R - 2;
  if (j0 > R - 2) j0 = R - 2;
  double fu = gu - i0, fv = gv - j0;
  PlaneTouch t;
  t.i0 = i0;
  t.j0 = j0;
  t.w[0] = (1 - fu) * (1 - fv);
  t.w[1] = fu * (1 - fv);
  t.w[2] = (1 - fu) * fv;
  t.w[3] = fu * fv;
  return t;
}

}  // namespace detail

inline QueryTouch query_touch(const TriPlane& T, const Vec3& p) {
  QueryTouch qt;
  for (int pl = 0; pl < 3; ++pl) qt.plane[pl] = detail::plane_touch(p, T.R, pl);
  return qt;
}

// f = sum over planes of the bilinear sample at p's projection.
inline void query_into(const TriPlane& T, const QueryTouch& qt, double* f) {
  const int R = T.R, C = T.C;
  for (int c = 0; c < C; ++c) f[c] = 0.0;
  for (int pl = 0; pl < 3; ++pl) {
    const PlaneTouch& t = qt.plane[pl];
    const double* base = T.planes[pl].data();
    std::size_t o00 = static_cast<std::size_t>(t.i0) * R + t.j0;
    for (int c = 0; c < C; ++c) {
      const double* pc = base + static_cast<std::size_t>(c) * R * R + o00;
      f[c] += t.w[0] * pc[0] + t.w[1] * pc[R] + t.w[2] * pc[1] + t.w[3] * pc[R + 1];
    }
  }
}

inline std::vector<double> query(const TriPlane& T, const Vec3& p) {
  std::vector<double> f(T.C);
  query_into(T, query_touch(T, p), f.data());
  return f;
}

// Same value plus the exact sparsity pattern of df/d(plane features):
// per plane, the 4 touched nodes and their bilinear weights (the weight of a
// node applies identically to every channel).
inline std::vector<double> query_with_gradients(const TriPlane& T, const Vec3& p, QueryTouch& touch) {
  touch = query_touch(T, p);
  std::vector<double> f(T.C);
  query_into(T, touch, f.data());
  return f;
}

// Accumulates g (dL/df, length C) into dense plane gradients via the touch.
inline void scatter_query_grad(const TriPlane& T, const QueryTouch& qt, const double* g,
                               std::array<std::vector<double>, 3>& plane_grads) {
  const int R = T.R, C = T.C;
  for (int pl = 0; pl < 3; ++pl) {
    const PlaneTouch& t = qt.plane[pl];
    double* base = plane_grads[pl].data();
    std::size_t o00 = static_cast<std::size_t>(t.i0) * R + t.j0;
    for (int c = 0; c < C; ++c) {
      double* pc = base + static_cast<std::size_t>(c) * R * R + o00;
      double gc = g[c];
      pc[0] += t.w[0] * gc;
      pc[R] += t.w[1] * gc;
      pc[1] += t.w[2] * gc;
      pc[R + 1] += t.w[3] * gc;
    }
  }
}

// Bilinear resample R -> 2R over the same extent; align-corners, so the four
// extreme nodes are preserved exactly and constant planes stay constant.
inline TriPlane upsample2x(const TriPlane& T) {
  int R = T.R, R2 = 2 * R;
  TriPlane out(T.C, R2);
  for (int pl = 0; pl < 3; ++pl) {
    for (int c = 0; c < T.C; ++c) {
      for (int i = 0; i < R2; ++i) {
        double gi = static_cast<double>(i) * (R - 1) / (R2 - 1);
        int i0 = std::min(static_cast<int>(gi), R - 2);
        double fi = gi - i0;
        for (int j = 0; j < R2; ++j) {
          double gj = static_cast<double>(j) * (R - 1) / (R2 - 1);
          int j0 = std::min(static_cast<int>(gj), R - 2);
          double fj = gj - j0;
          out.at(pl, c, i, j) = (1 - fi) * (1 - fj) * T.at(pl, c, i0, j0) +
                                fi * (1 - fj) * T.at(pl, c, i0 + 1, j0) +
                                (1 - fi) * fj * T.at(pl, c, i0, j0 + 1) +
                                fi * fj * T.at(pl, c, i0 + 1, j0 + 1);
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset normalization

inline constexpr double kStdFloor = 1e-6;

struct NormStats {
  enum class Mode { ChannelWise, Scale };
  Mode mode = Mode::ChannelWise;
  std::vector<double> mean;  // C (ChannelWise) or empty (Scale)
  std::vector<double> stddev;
  double scale = 1.0;
};

template <typename PlaneSet>
inline NormStats fit_norm_stats(const std::vector<PlaneSet>& dataset, NormStats::Mode mode) {
  if (dataset.empty()) throw std::invalid_argument("fit_norm_stats: empty dataset");
  int C = dataset[0].C;
  NormStats st;
  st.mode = mode;
  if (mode == NormStats::Mode::Scale) {
    double sum = 0, sumsq = 0;
    std::size_t n = 0;
    for (const auto& T : dataset)
      for (const auto& plane : T.planes)
        for (double v : plane) {
          sum += v;
          sumsq += v * v;
          ++n;
        }
    // Scale mode assumes mean 0; s is the global RMS.
    (void)sum;
    st.scale = std::max(std::sqrt(sumsq / static_cast<double>(n)), kStdFloor);
    return st;
  }
  st.mean.assign(C, 0.0);
  st.stddev.assign(C, 0.0);
  std::size_t per_channel = 0;
  for (const auto& T : dataset) {
    int R = T.R;
    per_channel += 3 * static_cast<std::size_t>(R) * R;
    for (const auto& plane : T.planes) {
      for (int c = 0; c < C; ++c) {
        const double* pc = plane.data() + static_cast<std::size_t>(c) * R * R;
        for (int k = 0; k < R * R; ++k) st.mean[c] += pc[k];
      }
    }
  }
  for (int c = 0; c < C; ++c) st.mean[c] /= static_cast<double>(per_channel);
  for (const auto& T : dataset) {
    int R = T.R;
    for (const auto& plane : T.planes) {
      for (int c = 0; c < C; ++c) {
        const double* pc = plane.data() + static_cast<std::size_t>(c) * R * R;
        for (int k = 0; k < R * R; ++k) {
          double d = pc[k] - st.mean[c];
          st.stddev[c] += d * d;
        }
      }
    }
  }
  for (int c = 0; c < C; ++c)
    st.stddev[c] = std::max(std::sqrt(st.stddev[c] / static_cast<double>(per_channel)), kStdFloor);
  return st;
}

template <typename PlaneSet>
inline PlaneSet normalize(const PlaneSet& T, const NormStats& st) {
  if (st.mode == NormStats::Mode::ChannelWise && static_cast<int>(st.mean.size()) != T.C)
    throw std::invalid_argument("normalize: channel count mismatch");
  PlaneSet out = T;
  int R = T.R;
  for (auto& plane : out.planes) {
    for (int c = 0; c < T.C; ++c) {
      double* pc = plane.data() + static_cast<std::size_t>(c) * R * R;
      double m = st.mode == NormStats::Mode::ChannelWise ? st.mean[c] : 0.0;
      double s = st.mode == NormStats::Mode::ChannelWise ? st.stddev[c] : st.scale;
      for (int k = 0; k < R * R; ++k) pc[k] = (pc[k] - m) / s;
    }
  }
  return out;
}

template <typename PlaneSet>
inline PlaneSet denormalize(const PlaneSet& T, const NormStats& st) {
  if (st.mode == NormStats::Mode::ChannelWise && static_cast<int>(st.mean.size()) != T.C)
    throw std::invalid_argument("denormalize: channel count mismatch");
  PlaneSet out = T;
  int R = T.R;
  for (auto& plane : out.planes) {
    for (int c = 0; c < T.C; ++c) {
      double* pc = plane.data() + static_cast<std::size_t>(c) * R * R;
      double m = st.mode == NormStats::Mode::ChannelWise ? st.mean[c] : 0.0;
      double s = st.mode == NormStats::Mode::ChannelWise ? st.stddev[c] : st.scale;
      for (int k = 0; k < R * R; ++k) pc[k] = pc[k] * s + m;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence. Tri-planes are stored as little-endian f32 per the container
// contract; meta = {C, R}; plane order fixed xy, xz, yz.

inline void triplane_save(const TriPlane& T, const std::string& path) {
  Container c;
  c.kind = "triplane";
  c.dtype = Dtype::F32;
  c.meta = {static_cast<std::uint64_t>(T.C), static_cast<std::uint64_t>(T.R)};
  c.values.reserve(3 * T.plane_size());
  for (const auto& plane : T.planes) c.values.insert(c.values.end(), plane.begin(), plane.end());
  container_save(c, path);
}

inline TriPlane triplane_load(const std::string& path) {
  Container c = container_load(path, "triplane");
  if (c.meta.size() != 2) throw std::runtime_error("triplane_load: bad meta");
  TriPlane T(static_cast<int>(c.meta[0]), static_cast<int>(c.meta[1]));
  std::size_t ps = T.plane_size();
  if (c.values.size() != 3 * ps) throw std::runtime_error("triplane_load: bad payload size");
  for (int pl = 0; pl < 3; ++pl)
    std::copy(c.values.begin() + pl * ps, c.values.begin() + (pl + 1) * ps, T.planes[pl].begin());
  return T;
}

inline void norm_stats_save(const NormStats& st, const std::string& path) {
  Container c;
  c.kind = "nrmstats";
  c.dtype = Dtype::F64;
  c.meta = {st.mode == NormStats::Mode::ChannelWise ? 0ull : 1ull,
            static_cast<std::uint64_t>(st.mean.size())};
  if (st.mode == NormStats::Mode::ChannelWise) {
    c.values = st.mean;
    c.values.insert(c.values.end(), st.stddev.begin(), st.stddev.end());
  } else {
    c.values = {st.scale};
  }
  container_save(c, path);
}

inline NormStats norm_stats_load(const std::string& path) {
  Container c = container_load(path, "nrmstats");
  NormStats st;
  st.mode = c.meta.at(0) == 0 ? NormStats::Mode::ChannelWise : NormStats::Mode::Scale;
  std::size_t C = c.meta.at(1);
  if (st.mode == NormStats::Mode::ChannelWise) {
    st.mean.assign(c.values.begin(), c.values.begin() + C);
    st.stddev.assign(c.values.begin() + C, c.values.begin() + 2 * C);
  } else {
    st.scale = c.values.at(0);
  }
  return st;
}

}  // namespace semroom
