#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "semroom/container.hpp"
#include "semroom/core.hpp"
#include "semroom/decoder.hpp"
#include "semroom/fitting.hpp"
#include "semroom/nn.hpp"
#include "semroom/scene.hpp"
#include "semroom/triplane.hpp"

namespace semroom {

struct VaeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LatentTriPlane {
  int c = 0, r = 0;
  std::array<nn::Tensor, 3> planes;  // order xy, xz, yz

  LatentTriPlane() = default;
  LatentTriPlane(int c_, int r_) : c(c_), r(r_) {
    for (auto& p : planes) p.resize(c_, r_, r_);
  }
};

// --- Symmetry group: 4 yaw rotations x 2 x-flips (ids 0..7, id = rot + 4*flip).

inline Vec3 aug_point(int g, const Vec3& p) {
  Vec3 q = p;
  if (g & 4) q.x = -q.x;
  for (int k = 0; k < (g & 3); ++k) q = {q.z, q.y, -q.x};
  return q;
}

// Exact index algebra mirroring aug_point under the align-corners convention:
// negating a coordinate reverses that index, swapping coordinates transposes.
template <typename PlaneSet>
inline PlaneSet aug_planes(const PlaneSet& T, int g) {
  int R = T.R;
  auto rev = [R](int i) { return R - 1 - i; };
  auto rotate_once = [&](const PlaneSet& in) {
    PlaneSet out = in;
    for (int c = 0; c < in.C; ++c) {
      for (int i = 0; i < R; ++i) {
        for (int j = 0; j < R; ++j) {
          std::size_t dst = (static_cast<std::size_t>(c) * R + i) * R + j;
          // T'_xy(a,b) = T_yz(b,a)
          out.planes[0][dst] = in.planes[2][(static_cast<std::size_t>(c) * R + j) * R + i];
          // T'_xz(a,b) = T_xz(-b,a)
          out.planes[1][dst] = in.planes[1][(static_cast<std::size_t>(c) * R + rev(j)) * R + i];
          // T'_yz(a,b) = T_xy(-b,a)
          out.planes[2][dst] = in.planes[0][(static_cast<std::size_t>(c) * R + rev(j)) * R + i];
        }
      }
    }
    return out;
  };
  PlaneSet out = T;
  if (g & 4) {
    // x -> -x: reverse the first index of xy and xz; yz untouched.
    PlaneSet f = out;
    for (int c = 0; c < T.C; ++c)
      for (int i = 0; i < R; ++i)
        for (int j = 0; j < R; ++j) {
          std::size_t dst = (static_cast<std::size_t>(c) * R + i) * R + j;
          std::size_t src = (static_cast<std::size_t>(c) * R + rev(i)) * R + j;
          f.planes[0][dst] = out.planes[0][src];
          f.planes[1][dst] = out.planes[1][src];
        }
    out = f;
  }
  for (int k = 0; k < (g & 3); ++k) out = rotate_once(out);
  return out;
}

inline LayoutMap aug_layout(const LayoutMap& f, int g) {
  LayoutMap out = f;
  auto rev = [&](int i) { return f.r - 1 - i; };
  LayoutMap cur = f;
  if (g & 4) {
    for (int l = 0; l < f.L; ++l)
      for (int i = 0; i < f.r; ++i)
        for (int j = 0; j < f.r; ++j) out.at(l, i, j) = cur.at(l, rev(i), j);
    cur = out;
  }
  for (int k = 0; k < (g & 3); ++k) {
    // (x,z) -> (z,-x); inverse (x,z) -> (-z,x).
    for (int l = 0; l < f.L; ++l)
      for (int i = 0; i < f.r; ++i)
        for (int j = 0; j < f.r; ++j) out.at(l, i, j) = cur.at(l, rev(j), i);
    cur = out;
  }
  return cur;
}

inline SampleBatch aug_batch(const SampleBatch& b, int g) {
  SampleBatch out = b;
  for (auto& cls : out.surface) {
    for (Vec3& p : cls.points) p = aug_point(g, p);
    for (Vec3& n : cls.normals) n = aug_point(g, n);
  }
  for (Vec3& p : out.volume.points) p = aug_point(g, p);
  for (Vec3& p : out.rnd) p = aug_point(g, p);
  return out;
}

// --- Architecture -----------------------------------------------------------

struct VaeConfig {
  int C = 16, R_high = 32;
  int latent_c = 4, latent_r = 8;
  int width = 32;
  double lambda_rec = 0.1, lambda_kl = 1.0, lambda_tri = 1.0;
  double logvar_clamp = 10.0;

  // Training.
  int steps = 2000;
  double lr = 1e-3;
  int lr_halflife = 0;  // steps per lr halving; 0 disables decay
  bool augment = true;
  std::vector<int> surface_counts = {2000, 500, 500};  // per class (4:1:1)
  int M = 4000;
  double sigma_near = 0.02;
  int batch_surface_per_class = 96;
  int batch_volume = 128;
  int batch_rnd = 128;

  int stages() const {
    int k = 0, r = latent_r;
    while (r < R_high) {
      r *= 2;
      ++k;
    }
    if (r != R_high) throw VaeError("VaeConfig: R_high must be latent_r * 2^k");
    return k;
  }
};

// Shared 2D weights applied to each plane independently. Encoder: stem conv,
// k stride-2 convs, head to 2c channels (mean, log-variance). Decoder: stem
// conv from c, k nearest-upsample+conv stages, head to C channels.
struct VaeParams {
  VaeConfig cfg;
  nn::Conv2d enc_stem, enc_head, dec_stem, dec_head;
  std::vector<nn::Conv2d> enc_down, dec_up, dec_refine;

  static VaeParams init(const VaeConfig& cfg, std::uint64_t seed) {
    VaeParams p;
    p.cfg = cfg;
    Rng rng(mix_seed(seed, 0x7AE));
    int k = cfg.stages();
    p.enc_stem.init(cfg.C, cfg.width, 1, rng);
    p.enc_down.resize(k);
    for (auto& c : p.enc_down) c.init(cfg.width, cfg.width, 2, rng);
    p.enc_head.init(cfg.width, 2 * cfg.latent_c, 1, rng);
    // Start near-deterministic: bias the log-variance half of the head low so
    // early reconstruction is not drowned in posterior noise.
    for (int ch = cfg.latent_c; ch < 2 * cfg.latent_c; ++ch) p.enc_head.b[ch] = -6.0;
    p.dec_stem.init(cfg.latent_c, cfg.width, 1, rng);
    p.dec_up.resize(k);
    for (auto& c : p.dec_up) c.init(cfg.width, cfg.width, 1, rng);
    p.dec_refine.resize(k);
    for (auto& c : p.dec_refine) c.init(cfg.width, cfg.width, 1, rng);
    p.dec_head.init(cfg.width, cfg.C, 1, rng);
    return p;
  }

  std::vector<nn::Conv2d*> conv_list() {
    std::vector<nn::Conv2d*> out{&enc_stem};
    for (auto& c : enc_down) out.push_back(&c);
    out.push_back(&enc_head);
    out.push_back(&dec_stem);
    for (std::size_t s = 0; s < dec_up.size(); ++s) {
      out.push_back(&dec_up[s]);
      out.push_back(&dec_refine[s]);
    }
    out.push_back(&dec_head);
    return out;
  }

  nn::ParamList params() {
    nn::ParamList list;
    for (nn::Conv2d* c : conv_list()) list.add(*c);
    return list;
  }
};

namespace detail {

struct PlaneCache {
  // pre[i]: conv output before activation; post[i]: after activation.
  std::vector<nn::Tensor> pre, post, up_in;
  nn::Tensor input, raw_head;
};

}  // namespace detail

inline nn::Tensor plane_to_tensor(const TriPlane& T, int p) {
  nn::Tensor t(T.C, T.R, T.R);
  std::copy(T.planes[p].begin(), T.planes[p].end(), t.v.begin());
  return t;
}

// Encoder over one plane tensor. Returns (mu, logvar), logvar clamped.
inline void encode_plane(const VaeParams& vp, const nn::Tensor& x, nn::Tensor& mu,
                         nn::Tensor& logvar, detail::PlaneCache* cache = nullptr) {
  detail::PlaneCache local;
  detail::PlaneCache& c = cache ? *cache : local;
  c.input = x;
  std::size_t n_convs = 1 + vp.enc_down.size();
  c.pre.resize(n_convs);
  c.post.resize(n_convs);
  vp.enc_stem.forward(x, c.pre[0]);
  nn::silu_forward(c.pre[0], c.post[0]);
  for (std::size_t k = 0; k < vp.enc_down.size(); ++k) {
    vp.enc_down[k].forward(c.post[k], c.pre[k + 1]);
    nn::silu_forward(c.pre[k + 1], c.post[k + 1]);
  }
  vp.enc_head.forward(c.post.back(), c.raw_head);
  nn::split_channels(c.raw_head, mu, logvar, vp.cfg.latent_c);
  for (double& v : logvar.v) v = clampd(v, -vp.cfg.logvar_clamp, vp.cfg.logvar_clamp);
  for (double v : mu.v)
    if (!std::isfinite(v)) throw VaeError("encode: non-finite mean");
}

inline void encode(const VaeParams& vp, const TriPlane& T, LatentTriPlane& mu,
                   LatentTriPlane& logvar) {
  if (T.C != vp.cfg.C || T.R != vp.cfg.R_high) throw VaeError("encode: shape mismatch");
  mu = LatentTriPlane(vp.cfg.latent_c, vp.cfg.latent_r);
  logvar = LatentTriPlane(vp.cfg.latent_c, vp.cfg.latent_r);
  for (int p = 0; p < 3; ++p) {
    nn::Tensor x = plane_to_tensor(T, p);
    encode_plane(vp, x, mu.planes[p], logvar.planes[p]);
  }
}

// z = mu + exp(logvar/2) * eps, deterministic per seed.
inline LatentTriPlane reparameterize(const LatentTriPlane& mu, const LatentTriPlane& logvar,
                                     std::uint64_t seed, LatentTriPlane* eps_out = nullptr) {
  LatentTriPlane z(mu.c, mu.r);
  if (eps_out) *eps_out = LatentTriPlane(mu.c, mu.r);
  Rng rng(mix_seed(seed, 0xEB5));
  for (int p = 0; p < 3; ++p) {
    for (std::size_t i = 0; i < z.planes[p].v.size(); ++i) {
      double eps = rng.gaussian();
      if (eps_out) eps_out->planes[p].v[i] = eps;
      z.planes[p].v[i] = mu.planes[p].v[i] + std::exp(0.5 * logvar.planes[p].v[i]) * eps;
    }
  }
  return z;
}

inline void decode_plane(const VaeParams& vp, const nn::Tensor& z, nn::Tensor& out,
                         detail::PlaneCache* cache = nullptr) {
  detail::PlaneCache local;
  detail::PlaneCache& c = cache ? *cache : local;
  c.input = z;
  std::size_t n_convs = 1 + 2 * vp.dec_up.size();
  c.pre.resize(n_convs);
  c.post.resize(n_convs);
  c.up_in.resize(vp.dec_up.size());
  vp.dec_stem.forward(z, c.pre[0]);
  nn::silu_forward(c.pre[0], c.post[0]);
  for (std::size_t k = 0; k < vp.dec_up.size(); ++k) {
    nn::upsample_nearest2x(c.post[2 * k], c.up_in[k]);
    vp.dec_up[k].forward(c.up_in[k], c.pre[2 * k + 1]);
    nn::silu_forward(c.pre[2 * k + 1], c.post[2 * k + 1]);
    vp.dec_refine[k].forward(c.post[2 * k + 1], c.pre[2 * k + 2]);
    nn::silu_forward(c.pre[2 * k + 2], c.post[2 * k + 2]);
  }
  vp.dec_head.forward(c.post.back(), out);
}

// Decodes a latent tri-plane to a tri-plane in normalized space.
inline TriPlane decode_latent(const VaeParams& vp, const LatentTriPlane& z) {
  if (z.c != vp.cfg.latent_c || z.r != vp.cfg.latent_r) throw VaeError("decode: shape mismatch");
  TriPlane T(vp.cfg.C, vp.cfg.R_high);
  for (int p = 0; p < 3; ++p) {
    nn::Tensor out;
    decode_plane(vp, z.planes[p], out);
    if (out.c != T.C || out.h != T.R) throw VaeError("decode: output shape mismatch");
    std::copy(out.v.begin(), out.v.end(), T.planes[p].begin());
  }
  return T;
}

struct VaeLossReport {
  double rec = 0, kl = 0, tri = 0, total = 0;
};

// Per-element Gaussian KL against the standard normal.
inline double kl_term(double mu, double logvar) {
  return 0.5 * (mu * mu + std::exp(logvar) - 1.0 - logvar);
}

namespace detail {

// Backward through the decoder chain of one plane; accumulates parameter
// grads (GradList ordered as VaeParams::conv_list, (w,b) pairs) and returns
// the gradient at the latent input.
inline void decode_plane_backward(const VaeParams& vp, const PlaneCache& c, const nn::Tensor& gout,
                                  nn::GradList& grads, std::size_t conv_base, nn::Tensor& g_z) {
  std::size_t k = vp.dec_up.size();
  std::size_t head_idx = conv_base + 1 + 2 * k;
  nn::Tensor g_post;
  vp.dec_head.backward(c.post.back(), gout, grads.tensors[2 * head_idx],
                       grads.tensors[2 * head_idx + 1], &g_post);
  for (std::size_t s = k; s-- > 0;) {
    nn::Tensor g_pre, g_mid, g_up, g_prev;
    std::size_t ridx = conv_base + 2 + 2 * s;  // dec_refine[s]
    std::size_t uidx = conv_base + 1 + 2 * s;  // dec_up[s]
    nn::silu_backward(c.pre[2 * s + 2], g_post, g_pre);
    vp.dec_refine[s].backward(c.post[2 * s + 1], g_pre, grads.tensors[2 * ridx],
                              grads.tensors[2 * ridx + 1], &g_mid);
    nn::silu_backward(c.pre[2 * s + 1], g_mid, g_pre);
    vp.dec_up[s].backward(c.up_in[s], g_pre, grads.tensors[2 * uidx], grads.tensors[2 * uidx + 1],
                          &g_up);
    nn::upsample_nearest2x_backward(g_up, g_prev);
    g_post = std::move(g_prev);
  }
  nn::Tensor g_pre;
  nn::silu_backward(c.pre[0], g_post, g_pre);
  vp.dec_stem.backward(c.input, g_pre, grads.tensors[2 * conv_base],
                       grads.tensors[2 * conv_base + 1], &g_z);
}

inline void encode_plane_backward(const VaeParams& vp, const PlaneCache& c,
                                  const nn::Tensor& g_head, nn::GradList& grads) {
  std::size_t k = vp.enc_down.size();
  std::size_t head_idx = 1 + k;
  nn::Tensor g_post;
  vp.enc_head.backward(c.post.back(), g_head, grads.tensors[2 * head_idx],
                       grads.tensors[2 * head_idx + 1], &g_post);
  for (std::size_t s = k; s-- > 0;) {
    nn::Tensor g_pre, g_prev;
    nn::silu_backward(c.pre[s + 1], g_post, g_pre);
    std::size_t idx = 1 + s;
    vp.enc_down[s].backward(c.post[s], g_pre, grads.tensors[2 * idx], grads.tensors[2 * idx + 1],
                            &g_prev);
    g_post = std::move(g_prev);
  }
  nn::Tensor g_pre;
  nn::silu_backward(c.pre[0], g_post, g_pre);
  vp.enc_stem.backward(c.input, g_pre, grads.tensors[0], grads.tensors[1], nullptr);
}

}  // namespace detail

// Full VAE loss with gradients. T_norm is the normalized target tri-plane;
// the geometry term queries the denormalized reconstruction through the
// frozen stage-1 decoder on `batch`.
inline VaeLossReport loss_vae(VaeParams& vp, const TriPlane& T_norm, const NormStats& stats,
                              const DecoderMlp& phi, const LossBatch& batch,
                              std::uint64_t reparam_seed, nn::GradList* grads_out = nullptr) {
  if (!phi.frozen) throw VaeError("loss_vae: stage-1 decoder must be frozen");
  const VaeConfig& cfg = vp.cfg;

  // Forward.
  std::array<detail::PlaneCache, 3> enc_cache, dec_cache;
  LatentTriPlane mu(cfg.latent_c, cfg.latent_r), logvar(cfg.latent_c, cfg.latent_r);
  for (int p = 0; p < 3; ++p) {
    nn::Tensor x = plane_to_tensor(T_norm, p);
    encode_plane(vp, x, mu.planes[p], logvar.planes[p], &enc_cache[p]);
  }
  LatentTriPlane eps;
  LatentTriPlane z = reparameterize(mu, logvar, reparam_seed, &eps);

  TriPlane T_rec(cfg.C, cfg.R_high);
  for (int p = 0; p < 3; ++p) {
    nn::Tensor out;
    decode_plane(vp, z.planes[p], out, &dec_cache[p]);
    std::copy(out.v.begin(), out.v.end(), T_rec.planes[p].begin());
  }

  VaeLossReport rep;
  // L_rec: mean absolute error in normalized space.
  std::size_t n_rec = 3 * T_norm.plane_size();
  for (int p = 0; p < 3; ++p)
    for (std::size_t i = 0; i < T_norm.plane_size(); ++i)
      rep.rec += std::fabs(T_rec.planes[p][i] - T_norm.planes[p][i]);
  rep.rec /= static_cast<double>(n_rec);

  // L_KL: mean over latent elements of 0.5*(mu^2 + sigma^2 - 1 - logvar).
  std::size_t n_lat = 3 * mu.planes[0].v.size();
  for (int p = 0; p < 3; ++p)
    for (std::size_t i = 0; i < mu.planes[p].v.size(); ++i) {
      rep.kl += kl_term(mu.planes[p].v[i], logvar.planes[p].v[i]);
    }
  rep.kl /= static_cast<double>(n_lat);

  // L_tri on the denormalized reconstruction.
  TriPlane T_den = denormalize(T_rec, stats);
  FitConfig fit_lambdas;
  LossGrads tri_grads;
  LossGrads* tg = nullptr;
  if (grads_out) {
    tri_grads.init(T_den, phi, false);
    tg = &tri_grads;
  }
  LossReport tri;
  try {
    tri = loss_tri(T_den, phi, batch, fit_lambdas, fd_step_for_resolution(T_den.R), tg);
  } catch (const FitError& e) {
    throw VaeError(std::string("loss_vae: geometry term failed: ") + e.what());
  }
  rep.tri = tri.total;
  rep.total = cfg.lambda_rec * rep.rec + cfg.lambda_kl * rep.kl + cfg.lambda_tri * rep.tri;
  if (!std::isfinite(rep.total)) {
    std::string which = !std::isfinite(rep.rec)  ? "rec"
                        : !std::isfinite(rep.kl) ? "kl"
                                                 : "tri";
    throw VaeError("loss_vae: non-finite " + which + " component");
  }
  if (!grads_out) return rep;

  // Backward.
  nn::GradList& grads = *grads_out;
  std::size_t dec_base = 1 + vp.enc_down.size() + 1;  // conv index of dec_stem
  for (int p = 0; p < 3; ++p) {
    // d(total)/dT_rec: rec term + geometry term chained through denormalize.
    nn::Tensor g_rec(cfg.C, cfg.R_high, cfg.R_high);
    for (int ch = 0; ch < cfg.C; ++ch) {
      double scale = stats.mode == NormStats::Mode::ChannelWise ? stats.stddev[ch] : stats.scale;
      for (int i = 0; i < cfg.R_high; ++i) {
        for (int j = 0; j < cfg.R_high; ++j) {
          std::size_t idx = (static_cast<std::size_t>(ch) * cfg.R_high + i) * cfg.R_high + j;
          double diff = T_rec.planes[p][idx] - T_norm.planes[p][idx];
          double g = cfg.lambda_rec * (diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0)) /
                     static_cast<double>(n_rec);
          g += cfg.lambda_tri * tri_grads.plane[p][idx] * scale;
          g_rec.v[idx] = g;
        }
      }
    }
    nn::Tensor g_z;
    detail::decode_plane_backward(vp, dec_cache[p], g_rec, grads, dec_base, g_z);

    // Reparameterization + KL into (mu, logvar), then through the encoder.
    nn::Tensor g_mu(cfg.latent_c, cfg.latent_r, cfg.latent_r);
    nn::Tensor g_logvar(cfg.latent_c, cfg.latent_r, cfg.latent_r);
    for (std::size_t i = 0; i < g_z.v.size(); ++i) {
      double lv = logvar.planes[p].v[i];
      double m = mu.planes[p].v[i];
      g_mu.v[i] = g_z.v[i] + cfg.lambda_kl * m / static_cast<double>(n_lat);
      double g_lv = g_z.v[i] * eps.planes[p].v[i] * 0.5 * std::exp(0.5 * lv) +
                    cfg.lambda_kl * 0.5 * (std::exp(lv) - 1.0) / static_cast<double>(n_lat);
      // Clamp: zero gradient where the clamp is active.
      if (std::fabs(lv) >= cfg.logvar_clamp) g_lv = 0.0;
      g_logvar.v[i] = g_lv;
    }
    nn::Tensor g_head;
    nn::concat_channels(g_mu, g_logvar, g_head);
    detail::encode_plane_backward(vp, enc_cache[p], g_head, grads);
  }
  return rep;
}

// --- Training ---------------------------------------------------------------

struct VaeTrainEntry {
  TriPlane plane_norm;
  SampleBatch batch;
};

// Optimizer snapshot for checkpoint/resume. Training draws per-step RNG from
// (seed, step), so params + Adam moments + the step index fully determine the
// remainder of a run.
struct TrainState {
  std::vector<double> params, m, v;
  long t = 0;
  int step = 0;
};

inline void train_state_save(const TrainState& st, const std::string& path,
                             const std::vector<double>& extra = {}) {
  Container c;
  c.kind = "ckpt";
  c.dtype = Dtype::F64;
  c.meta = {static_cast<std::uint64_t>(st.step), static_cast<std::uint64_t>(st.t),
            static_cast<std::uint64_t>(st.params.size()),
            static_cast<std::uint64_t>(extra.size())};
  c.values.reserve(3 * st.params.size() + extra.size());
  c.values.insert(c.values.end(), st.params.begin(), st.params.end());
  c.values.insert(c.values.end(), st.m.begin(), st.m.end());
  c.values.insert(c.values.end(), st.v.begin(), st.v.end());
  c.values.insert(c.values.end(), extra.begin(), extra.end());
  container_save(c, path);
}

inline TrainState train_state_load(const std::string& path, std::vector<double>* extra = nullptr) {
  Container c = container_load(path, "ckpt");
  if (c.meta.size() != 4) throw VaeError("train_state_load: bad metadata");
  TrainState st;
  st.step = static_cast<int>(c.meta[0]);
  st.t = static_cast<long>(c.meta[1]);
  std::size_t n = c.meta[2], ne = c.meta[3];
  if (c.values.size() != 3 * n + ne) throw VaeError("train_state_load: size mismatch");
  st.params.assign(c.values.begin(), c.values.begin() + n);
  st.m.assign(c.values.begin() + n, c.values.begin() + 2 * n);
  st.v.assign(c.values.begin() + 2 * n, c.values.begin() + 3 * n);
  if (extra) extra->assign(c.values.begin() + 3 * n, c.values.end());
  return st;
}

struct VaeTrainResult {
  VaeParams params;
  NormStats stats;
  std::vector<VaeLossReport> history;
  std::size_t augmented_size = 0;
  TrainState state;
};

inline VaeTrainResult train_vae(const std::vector<TriPlane>& dataset,
                                const std::vector<Scene>& scenes, const DecoderMlp& phi,
                                const VaeConfig& cfg, std::uint64_t seed,
                                std::ostream* log = nullptr,
                                const TrainState* resume = nullptr) {
  if (dataset.empty() || dataset.size() != scenes.size())
    throw VaeError("train_vae: dataset/scenes mismatch or empty");
  VaeTrainResult res;
  res.stats = fit_norm_stats(dataset, NormStats::Mode::ChannelWise);
  res.params = VaeParams::init(cfg, seed);

  // Assemble (augmented) training entries.
  std::vector<VaeTrainEntry> entries;
  int n_aug = cfg.augment ? 8 : 1;
  for (std::size_t s = 0; s < dataset.size(); ++s) {
    std::vector<int> counts = cfg.surface_counts;
    counts.resize(scenes[s].classes.size(), cfg.surface_counts.back());
    for (std::size_t l = 0; l < counts.size(); ++l)
      if (scenes[s].parts[l].empty()) counts[l] = 0;
    SampleBatch base = make_sample_batch(scenes[s], counts, cfg.M, true, cfg.sigma_near,
                                         mix_seed(seed, 0xBA7C + s));
    TriPlane norm_plane = normalize(dataset[s], res.stats);
    for (int g = 0; g < n_aug; ++g)
      entries.push_back({aug_planes(norm_plane, g), aug_batch(base, g)});
  }
  res.augmented_size = entries.size();

  nn::ParamList params = res.params.params();
  nn::GradList grads;
  grads.match(params);
  std::vector<double> flat_p, flat_g;
  Adam opt(params.total(), cfg.lr);
  int start_step = 0;
  if (resume) {
    if (resume->params.size() != params.total()) throw VaeError("train_vae: checkpoint mismatch");
    params.scatter(resume->params);
    opt.m = resume->m;
    opt.v = resume->v;
    opt.t = resume->t;
    start_step = resume->step;
  }

  FitConfig mb_cfg;
  mb_cfg.batch_surface_per_class = cfg.batch_surface_per_class;
  mb_cfg.batch_volume = cfg.batch_volume;
  mb_cfg.batch_rnd = cfg.batch_rnd;

  for (int step = start_step; step < cfg.steps; ++step) {
    if (cfg.lr_halflife > 0)
      opt.lr = cfg.lr * std::pow(0.5, static_cast<double>(step) / cfg.lr_halflife);
    Rng rng(mix_seed(seed, 0x7EA1 + static_cast<std::uint64_t>(step)));
    const VaeTrainEntry& e = entries[rng.uniform_index(entries.size())];
    LossBatch mb = detail::draw_minibatch(e.batch, mb_cfg, rng);
    grads.zero();
    VaeLossReport rep = loss_vae(res.params, e.plane_norm, res.stats, phi, mb, rng.raw(), &grads);
    res.history.push_back(rep);
    params.gather(flat_p);
    grads.gather(flat_g);
    opt.step(flat_p.data(), flat_g.data(), flat_p.size());
    params.scatter(flat_p);
    if (log && (step % 50 == 0 || step + 1 == cfg.steps)) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "vae step %d rec %.6g kl %.6g tri %.6g total %.6g\n", step,
                    rep.rec, rep.kl, rep.tri, rep.total);
      (*log) << buf;
    }
  }
  params.gather(res.state.params);
  res.state.m = opt.m;
  res.state.v = opt.v;
  res.state.t = opt.t;
  res.state.step = cfg.steps;
  return res;
}

// --- Persistence ------------------------------------------------------------

inline void vae_save(VaeParams& vp, const std::string& path) {
  Container c;
  c.kind = "vaeparam";
  c.dtype = Dtype::F64;
  c.meta = {static_cast<std::uint64_t>(vp.cfg.C), static_cast<std::uint64_t>(vp.cfg.R_high),
            static_cast<std::uint64_t>(vp.cfg.latent_c),
            static_cast<std::uint64_t>(vp.cfg.latent_r), static_cast<std::uint64_t>(vp.cfg.width)};
  std::vector<double> flat;
  vp.params().gather(flat);
  c.values = std::move(flat);
  container_save(c, path);
}

inline VaeParams vae_load(const std::string& path, const VaeConfig& base = VaeConfig{}) {
  Container c = container_load(path);
  if (c.kind != "vaeparam") throw VaeError("vae_load: wrong container kind");
  if (c.meta.size() != 5) throw VaeError("vae_load: bad metadata");
  VaeConfig cfg = base;
  cfg.C = static_cast<int>(c.meta[0]);
  cfg.R_high = static_cast<int>(c.meta[1]);
  cfg.latent_c = static_cast<int>(c.meta[2]);
  cfg.latent_r = static_cast<int>(c.meta[3]);
  cfg.width = static_cast<int>(c.meta[4]);
  VaeParams vp = VaeParams::init(cfg, 0);
  nn::ParamList list = vp.params();
  if (c.values.size() != list.total()) throw VaeError("vae_load: size mismatch");
  list.scatter(c.values);
  return vp;
}

}  // namespace semroom
