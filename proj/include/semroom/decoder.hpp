#pragma once

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

#include "semroom/container.hpp"
#include "semroom/core.hpp"
#include "semroom/triplane.hpp"

namespace semroom {

// Shared multi-head SDF decoder: C -> hidden... -> L, smooth softplus-style
// activation on hidden layers, linear output (SDF values are unbounded).
// No positional encoding: the decoder sees only the queried feature vector.
struct DecoderMlp {
  std::vector<int> widths;             // [C, H, ..., L]
  std::vector<std::vector<double>> W;  // per layer, out x in row-major
  std::vector<std::vector<double>> b;  // per layer, out
  double sharpness = 100.0;
  bool frozen = false;

  int in_dim() const { return widths.front(); }
  int out_dim() const { return widths.back(); }
  int num_layers() const { return static_cast<int>(W.size()); }
};

inline double soft_act(double x, double beta) {
  double z = beta * x;
  if (z > 30.0) return x;
  if (z < -30.0) return std::exp(z) / beta;
  return std::log1p(std::exp(z)) / beta;
}

inline double soft_act_deriv(double x, double beta) {
  double z = beta * x;
  if (z > 30.0) return 1.0;
  if (z < -30.0) return std::exp(z);
  return 1.0 / (1.0 + std::exp(-z));
}

// Fan-in-scaled Gaussian init; deterministic per seed.
inline DecoderMlp init_decoder(std::uint64_t seed, const std::vector<int>& widths,
                               double sharpness = 100.0) {
  if (widths.size() < 2) throw std::invalid_argument("init_decoder: need at least input and output widths");
  for (int w : widths)
    if (w <= 0) throw std::invalid_argument("init_decoder: widths must be positive");
  DecoderMlp mlp;
  mlp.widths = widths;
  mlp.sharpness = sharpness;
  Rng rng(mix_seed(seed, 0xd3c0d));
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    int fan_in = widths[l], fan_out = widths[l + 1];
    std::vector<double> W(static_cast<std::size_t>(fan_out) * fan_in);
    double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& w : W) w = s * rng.gaussian();
    mlp.W.push_back(std::move(W));
    mlp.b.push_back(std::vector<double>(fan_out, 0.0));
  }
  return mlp;
}

// Per-point forward scratch; reuse across calls to avoid allocation.
struct MlpScratch {
  std::vector<std::vector<double>> act;  // act[0]=input, act[k]=post-activation of layer k
  std::vector<std::vector<double>> pre;  // pre-activation of each layer

  void resize(const DecoderMlp& mlp) {
    act.resize(mlp.num_layers() + 1);
    pre.resize(mlp.num_layers());
    for (int l = 0; l <= mlp.num_layers(); ++l) act[l].resize(mlp.widths[l]);
    for (int l = 0; l < mlp.num_layers(); ++l) pre[l].resize(mlp.widths[l + 1]);
  }
};

struct MlpGrads {
  std::vector<std::vector<double>> W, b;

  void init(const DecoderMlp& mlp) {
    W.clear();
    b.clear();
    for (int l = 0; l < mlp.num_layers(); ++l) {
      W.emplace_back(mlp.W[l].size(), 0.0);
      b.emplace_back(mlp.b[l].size(), 0.0);
    }
  }
  void add(const MlpGrads& o) {
    for (std::size_t l = 0; l < W.size(); ++l) {
      for (std::size_t i = 0; i < W[l].size(); ++i) W[l][i] += o.W[l][i];
      for (std::size_t i = 0; i < b[l].size(); ++i) b[l][i] += o.b[l][i];
    }
  }
};

inline void decode_into(const DecoderMlp& mlp, const double* f, MlpScratch& s) {
  if (f != s.act[0].data()) std::memcpy(s.act[0].data(), f, sizeof(double) * mlp.in_dim());
  int L = mlp.num_layers();
  for (int l = 0; l < L; ++l) {
    int nin = mlp.widths[l], nout = mlp.widths[l + 1];
    const double* W = mlp.W[l].data();
    const double* x = s.act[l].data();
    double* z = s.pre[l].data();
    for (int o = 0; o < nout; ++o) {
      double acc = mlp.b[l][o];
      const double* row = W + static_cast<std::size_t>(o) * nin;
      for (int i = 0; i < nin; ++i) acc += row[i] * x[i];
      z[o] = acc;
    }
    double* a = s.act[l + 1].data();
    if (l + 1 < L) {
      for (int o = 0; o < nout; ++o) a[o] = soft_act(z[o], mlp.sharpness);
    } else {
      std::memcpy(a, z, sizeof(double) * nout);
    }
  }
}

inline std::vector<double> decode(const DecoderMlp& mlp, const std::vector<double>& f) {
  if (static_cast<int>(f.size()) != mlp.in_dim())
    throw std::invalid_argument("decode: feature width mismatch");
  MlpScratch s;
  s.resize(mlp);
  decode_into(mlp, f.data(), s);
  return s.act.back();
}

// Backprop for the point held in `s`. g_out has length L; g_in (length C)
// receives dL/df; grads, when non-null, accumulates dL/dW and dL/db.
inline void decode_backward(const DecoderMlp& mlp, const MlpScratch& s, const double* g_out,
                            double* g_in, MlpGrads* grads, std::vector<double>& delta_buf) {
  int L = mlp.num_layers();
  int max_w = 0;
  for (int w : mlp.widths) max_w = std::max(max_w, w);
  delta_buf.resize(2 * static_cast<std::size_t>(max_w));
  double* delta = delta_buf.data();
  double* delta_prev = delta_buf.data() + max_w;
  std::memcpy(delta, g_out, sizeof(double) * mlp.out_dim());
  for (int l = L - 1; l >= 0; --l) {
    int nin = mlp.widths[l], nout = mlp.widths[l + 1];
    if (l < L - 1) {
      const double* z = s.pre[l].data();
      for (int o = 0; o < nout; ++o) delta[o] *= soft_act_deriv(z[o], mlp.sharpness);
    }
    const double* x = s.act[l].data();
    if (grads) {
      double* gW = grads->W[l].data();
      double* gb = grads->b[l].data();
      for (int o = 0; o < nout; ++o) {
        double d = delta[o];
        gb[o] += d;
        double* row = gW + static_cast<std::size_t>(o) * nin;
        for (int i = 0; i < nin; ++i) row[i] += d * x[i];
      }
    }
    const double* W = mlp.W[l].data();
    for (int i = 0; i < nin; ++i) delta_prev[i] = 0.0;
    for (int o = 0; o < nout; ++o) {
      double d = delta[o];
      const double* row = W + static_cast<std::size_t>(o) * nin;
      for (int i = 0; i < nin; ++i) delta_prev[i] += d * row[i];
    }
    std::swap(delta, delta_prev);
  }
  std::memcpy(g_in, delta, sizeof(double) * mlp.in_dim());
}

// D(p) = decode(query(T, p)).
inline std::vector<double> sdf_at(const TriPlane& T, const DecoderMlp& mlp, const Vec3& p) {
  return decode(mlp, query(T, p));
}

// Finite-difference step tied to the tri-plane cell at the active level:
// half a cell, clamped. Coarse levels use a wide stencil so normal gradients
// reach beyond adjacent grid nodes.
inline double fd_step_for_resolution(int R) {
  return clampd((2.0 / (R - 1)) / 2.0, 1e-3, 0.125);
}

// Central-difference gradient of class-l SDF; NOT normalized.
inline Vec3 normal_at(const TriPlane& T, const DecoderMlp& mlp, const Vec3& p, int l, double eps) {
  Vec3 n;
  for (int axis = 0; axis < 3; ++axis) {
    Vec3 pp = p, pm = p;
    pp[axis] += eps;
    pm[axis] -= eps;
    n[axis] = (sdf_at(T, mlp, pp)[l] - sdf_at(T, mlp, pm)[l]) / (2.0 * eps);
  }
  return n;
}

// ---------------------------------------------------------------------------
// Persistence: meta = {n_widths, widths..., sharpness bits}.

inline void decoder_save(const DecoderMlp& mlp, const std::string& path) {
  Container c;
  c.kind = "mlp";
  c.dtype = Dtype::F64;
  c.meta.push_back(mlp.widths.size());
  for (int w : mlp.widths) c.meta.push_back(static_cast<std::uint64_t>(w));
  std::uint64_t bits;
  std::memcpy(&bits, &mlp.sharpness, 8);
  c.meta.push_back(bits);
  for (int l = 0; l < mlp.num_layers(); ++l) {
    c.values.insert(c.values.end(), mlp.W[l].begin(), mlp.W[l].end());
    c.values.insert(c.values.end(), mlp.b[l].begin(), mlp.b[l].end());
  }
  container_save(c, path);
}

inline DecoderMlp decoder_load(const std::string& path) {
  Container c = container_load(path, "mlp");
  std::size_t nw = c.meta.at(0);
  DecoderMlp mlp;
  for (std::size_t i = 0; i < nw; ++i) mlp.widths.push_back(static_cast<int>(c.meta.at(1 + i)));
  std::uint64_t bits = c.meta.at(1 + nw);
  std::memcpy(&mlp.sharpness, &bits, 8);
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < mlp.widths.size(); ++l) {
    std::size_t nW = static_cast<std::size_t>(mlp.widths[l]) * mlp.widths[l + 1];
    std::size_t nb = mlp.widths[l + 1];
    if (off + nW + nb > c.values.size()) throw std::runtime_error("decoder_load: truncated payload");
    mlp.W.emplace_back(c.values.begin() + off, c.values.begin() + off + nW);
    off += nW;
    mlp.b.emplace_back(c.values.begin() + off, c.values.begin() + off + nb);
    off += nb;
  }
  mlp.frozen = true;
  return mlp;
}

}  // namespace semroom
