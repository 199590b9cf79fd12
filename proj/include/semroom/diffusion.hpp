#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "semroom/container.hpp"
#include "semroom/core.hpp"
#include "semroom/fitting.hpp"
#include "semroom/nn.hpp"
#include "semroom/scene.hpp"
#include "semroom/vae.hpp"

namespace semroom {

struct DiffusionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- Schedule ---------------------------------------------------------------

struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta, alpha, alpha_bar;  // 1-indexed via [t-1]
};

inline NoiseSchedule build_schedule(int T, double beta1 = 1e-4, double betaT = 0.02) {
  if (T < 1 || beta1 <= 0 || beta1 > betaT || betaT >= 1)
    throw DiffusionError("build_schedule: need 0 < beta_1 <= beta_T < 1");
  NoiseSchedule s;
  s.T = T;
  s.beta.resize(T);
  s.alpha.resize(T);
  s.alpha_bar.resize(T);
  double prod = 1;
  for (int t = 0; t < T; ++t) {
    s.beta[t] = T == 1 ? beta1 : beta1 + (betaT - beta1) * t / (T - 1);
    s.alpha[t] = 1.0 - s.beta[t];
    prod *= s.alpha[t];
    s.alpha_bar[t] = prod;
  }
  return s;
}

// --- Conditioned latents ------------------------------------------------------

// Per plane (c+L) x r x r; channels [0,c) carry the latent, [c,c+L) carry the
// condition: the floor layout on the xz plane, zeros elsewhere.
struct ConditionedLatent {
  int c = 0, L = 0, r = 0;
  std::array<nn::Tensor, 3> planes;

  ConditionedLatent() = default;
  ConditionedLatent(int c_, int L_, int r_) : c(c_), L(L_), r(r_) {
    for (auto& p : planes) p.resize(c_ + L_, r_, r_);
  }
};

inline ConditionedLatent assemble_condition(const LatentTriPlane& z, const LayoutMap& F) {
  if (F.r != z.r) throw DiffusionError("assemble_condition: layout resolution mismatch");
  ConditionedLatent out(z.c, F.L, z.r);
  for (int p = 0; p < 3; ++p) {
    std::copy(z.planes[p].v.begin(), z.planes[p].v.end(), out.planes[p].v.begin());
    if (p != 1) continue;
    for (int l = 0; l < F.L; ++l)
      for (int i = 0; i < F.r; ++i)
        for (int j = 0; j < F.r; ++j)
          out.planes[p].v[(static_cast<std::size_t>(z.c + l) * F.r + i) * F.r + j] =
              static_cast<double>(F.at(l, i, j));
  }
  return out;
}

inline LatentTriPlane extract_latent(const ConditionedLatent& zc) {
  LatentTriPlane z(zc.c, zc.r);
  for (int p = 0; p < 3; ++p)
    std::copy(zc.planes[p].v.begin(),
              zc.planes[p].v.begin() + static_cast<std::ptrdiff_t>(z.planes[p].v.size()),
              z.planes[p].v.begin());
  return z;
}

// Forward noising: latent channels get sqrt(abar_t) z0 + sqrt(1-abar_t) eps;
// condition channels are copied through untouched.
inline ConditionedLatent q_sample(const ConditionedLatent& z0, int t, const LatentTriPlane& eps,
                                  const NoiseSchedule& sched) {
  if (t < 1 || t > sched.T) throw DiffusionError("q_sample: t out of range");
  if (eps.c != z0.c || eps.r != z0.r) throw DiffusionError("q_sample: noise shape mismatch");
  double a = std::sqrt(sched.alpha_bar[t - 1]);
  double b = std::sqrt(1.0 - sched.alpha_bar[t - 1]);
  ConditionedLatent zt = z0;
  std::size_t n_lat = static_cast<std::size_t>(z0.c) * z0.r * z0.r;
  for (int p = 0; p < 3; ++p)
    for (std::size_t i = 0; i < n_lat; ++i)
      zt.planes[p].v[i] = a * z0.planes[p].v[i] + b * eps.planes[p].v[i];
  return zt;
}

inline LatentTriPlane gaussian_latent(int c, int r, std::uint64_t seed) {
  LatentTriPlane z(c, r);
  Rng rng(mix_seed(seed, 0xD1F));
  for (int p = 0; p < 3; ++p)
    for (double& v : z.planes[p].v) v = rng.gaussian();
  return z;
}

// --- Timestep embedding -------------------------------------------------------

inline std::vector<double> time_embedding(int t, int width) {
  if (t < 0 || width < 2 || width % 2 != 0)
    throw DiffusionError("time_embedding: t >= 0 and even width >= 2 required");
  std::vector<double> e(width);
  int half = width / 2;
  for (int k = 0; k < half; ++k) {
    double freq = std::exp(-std::log(10000.0) * k / std::max(1, half - 1));
    e[2 * k] = std::sin(t * freq);
    e[2 * k + 1] = std::cos(t * freq);
  }
  return e;
}

// --- Denoiser ------------------------------------------------------------------

// Shared-weight 2D U-Net applied per plane: conv in, `stages` stride-2 down
// convs, a middle conv, mirrored nearest-up + conv stages with skip
// concatenation, conv out to the latent channels. A per-plane learned
// embedding added to the sinusoidal timestep embedding feeds per-channel
// biases at every convolution stage.
struct DiffConfig {
  int latent_c = 4, L = 3, r = 8;
  int width = 32, stages = 2, emb_width = 32;
  int T = 1000;
  double beta1 = 1e-4, betaT = 0.02;
  int sample_steps = 250;
  double clamp = 3.0;

  // Training.
  int steps = 2000;
  double lr = 1e-3;
  int batch = 8;
};

struct Denoiser {
  DiffConfig cfg;
  nn::Conv2d conv_in, conv_mid, conv_out;
  std::vector<nn::Conv2d> conv_down, conv_up;
  nn::Linear lin_emb;                  // emb_width -> emb_width
  std::vector<nn::Linear> lin_bias;    // emb_width -> width, one per injection
  std::array<std::vector<double>, 3> plane_emb;

  int n_inject() const { return 2 * cfg.stages + 2; }

  static Denoiser init(const DiffConfig& cfg, std::uint64_t seed) {
    if (cfg.r % (1 << cfg.stages) != 0)
      throw DiffusionError("Denoiser: r must be divisible by 2^stages");
    Denoiser d;
    d.cfg = cfg;
    Rng rng(mix_seed(seed, 0xDE401));
    d.conv_in.init(cfg.latent_c + cfg.L, cfg.width, 1, rng);
    d.conv_down.resize(cfg.stages);
    for (auto& c : d.conv_down) c.init(cfg.width, cfg.width, 2, rng);
    d.conv_mid.init(cfg.width, cfg.width, 1, rng);
    d.conv_up.resize(cfg.stages);
    for (auto& c : d.conv_up) c.init(2 * cfg.width, cfg.width, 1, rng);
    d.conv_out.init(cfg.width, cfg.latent_c, 1, rng);
    d.lin_emb.init(cfg.emb_width, cfg.emb_width, rng);
    d.lin_bias.resize(d.n_inject());
    for (auto& l : d.lin_bias) l.init(cfg.emb_width, cfg.width, rng);
    for (auto& e : d.plane_emb) {
      e.resize(cfg.emb_width);
      for (double& v : e) v = 0.1 * rng.gaussian();
    }
    return d;
  }

  nn::ParamList params() {
    nn::ParamList list;
    list.add(conv_in);
    for (auto& c : conv_down) list.add(c);
    list.add(conv_mid);
    for (auto& c : conv_up) list.add(c);
    list.add(conv_out);
    list.add(lin_emb);
    for (auto& l : lin_bias) list.add(l);
    for (auto& e : plane_emb) list.add(e);
    return list;
  }
};

namespace detail {

struct DenoiserCache {
  std::vector<double> emb_in, emb_pre, emb_h;  // embedding path
  std::vector<std::vector<double>> bias;       // per injection, width
  // Conv chain, in forward order: in, down[0..k), mid, up[k..0); for each we
  // keep the conv input, the pre-activation (conv out + bias), and the
  // post-activation.
  std::vector<nn::Tensor> conv_in_x, pre, post;
};

inline void add_channel_bias(nn::Tensor& t, const std::vector<double>& bias) {
  std::size_t hw = static_cast<std::size_t>(t.h) * t.w;
  for (int c = 0; c < t.c; ++c)
    for (std::size_t i = 0; i < hw; ++i) t.v[c * hw + i] += bias[c];
}

}  // namespace detail

// Forward pass over one plane. `x` is (c+L, r, r); output (c, r, r).
inline nn::Tensor denoise_plane(const Denoiser& d, const nn::Tensor& x, int t, int plane,
                                detail::DenoiserCache* cache = nullptr) {
  detail::DenoiserCache local;
  detail::DenoiserCache& cc = cache ? *cache : local;
  const DiffConfig& cfg = d.cfg;
  int k = cfg.stages;

  // Embedding path.
  std::vector<double> emb = time_embedding(t, cfg.emb_width);
  for (int i = 0; i < cfg.emb_width; ++i) emb[i] += d.plane_emb[plane][i];
  cc.emb_in = emb;
  d.lin_emb.forward(emb, cc.emb_pre);
  cc.emb_h.resize(cc.emb_pre.size());
  for (std::size_t i = 0; i < cc.emb_pre.size(); ++i) cc.emb_h[i] = nn::silu(cc.emb_pre[i]);
  cc.bias.resize(d.n_inject());
  for (int i = 0; i < d.n_inject(); ++i) d.lin_bias[i].forward(cc.emb_h, cc.bias[i]);

  int n_convs = 2 * k + 2;  // in, downs, mid, ups (out conv handled separately)
  cc.conv_in_x.resize(n_convs);
  cc.pre.resize(n_convs);
  cc.post.resize(n_convs);
  int ci = 0;
  auto stage = [&](const nn::Conv2d& conv, const nn::Tensor& input) -> const nn::Tensor& {
    cc.conv_in_x[ci] = input;
    conv.forward(input, cc.pre[ci]);
    detail::add_channel_bias(cc.pre[ci], cc.bias[ci]);
    nn::silu_forward(cc.pre[ci], cc.post[ci]);
    return cc.post[ci++];
  };

  const nn::Tensor* cur = &stage(d.conv_in, x);
  std::vector<const nn::Tensor*> skips{cur};
  for (int s = 0; s < k; ++s) {
    cur = &stage(d.conv_down[s], *cur);
    if (s + 1 < k) skips.push_back(cur);
  }
  cur = &stage(d.conv_mid, *cur);
  for (int s = k; s-- > 0;) {
    nn::Tensor up, cat;
    nn::upsample_nearest2x(*cur, up);
    nn::concat_channels(up, *skips[s], cat);
    cur = &stage(d.conv_up[k - 1 - s], cat);
  }
  nn::Tensor out;
  d.conv_out.forward(*cur, out);
  return out;
}

// Whole conditioned latent -> predicted z0 (latent channels, all planes).
inline LatentTriPlane denoise(const Denoiser& d, const ConditionedLatent& zt, int t,
                              std::array<detail::DenoiserCache, 3>* caches = nullptr) {
  LatentTriPlane out(zt.c, zt.r);
  for (int p = 0; p < 3; ++p) {
    nn::Tensor y = denoise_plane(d, zt.planes[p], t, p, caches ? &(*caches)[p] : nullptr);
    out.planes[p].v = y.v;
  }
  return out;
}

namespace detail {

// Gradient index bases inside the ParamList built by Denoiser::params().
struct DenoiserGradIndex {
  int conv_in, conv_down, conv_mid, conv_up, conv_out, lin_emb, lin_bias, plane_emb;
  explicit DenoiserGradIndex(const DiffConfig& cfg) {
    int k = cfg.stages;
    conv_in = 0;
    conv_down = 2;
    conv_mid = conv_down + 2 * k;
    conv_up = conv_mid + 2;
    conv_out = conv_up + 2 * k;
    lin_emb = conv_out + 2;
    lin_bias = lin_emb + 2;
    plane_emb = lin_bias + 2 * (2 * k + 2);
  }
};

inline void denoise_plane_backward(const Denoiser& d, const DenoiserCache& cc,
                                   const nn::Tensor& g_out, int plane, nn::GradList& g) {
  const DiffConfig& cfg = d.cfg;
  int k = cfg.stages;
  DenoiserGradIndex ix(cfg);
  std::vector<std::vector<double>> g_bias(d.n_inject());
  for (auto& b : g_bias) b.assign(cfg.width, 0.0);

  auto stage_backward = [&](const nn::Conv2d& conv, int ci, int widx, const nn::Tensor& gy,
                            nn::Tensor* gx) {
    nn::Tensor g_pre;
    nn::silu_backward(cc.pre[ci], gy, g_pre);
    std::size_t hw = static_cast<std::size_t>(g_pre.h) * g_pre.w;
    for (int c = 0; c < g_pre.c; ++c)
      for (std::size_t i = 0; i < hw; ++i) g_bias[ci][c] += g_pre.v[c * hw + i];
    conv.backward(cc.conv_in_x[ci], g_pre, g.tensors[widx], g.tensors[widx + 1], gx);
  };

  // Output conv back to the last up stage.
  int last = 2 * k + 1;
  nn::Tensor g_cur;
  d.conv_out.backward(cc.post[last], g_out, g.tensors[ix.conv_out], g.tensors[ix.conv_out + 1],
                      &g_cur);

  // Up stages (forward order up[0..k) corresponds to ci = k+2 .. 2k+1).
  std::vector<nn::Tensor> g_skip(k);
  for (int u = k; u-- > 0;) {
    int ci = k + 2 + u;
    int s = k - 1 - u;  // skip index consumed by this stage
    nn::Tensor g_cat;
    stage_backward(d.conv_up[u], ci, ix.conv_up + 2 * u, g_cur, &g_cat);
    nn::Tensor g_up;
    int half = cfg.width;
    nn::Tensor ga(half, g_cat.h, g_cat.w), gb(half, g_cat.h, g_cat.w);
    nn::split_channels(g_cat, ga, gb, half);
    nn::upsample_nearest2x_backward(ga, g_up);
    g_skip[s] = std::move(gb);
    g_cur = std::move(g_up);
  }

  // Mid conv (ci = k+1).
  {
    nn::Tensor gx;
    stage_backward(d.conv_mid, k + 1, ix.conv_mid, g_cur, &gx);
    g_cur = std::move(gx);
  }

  // Down stages (ci = 1..k), adding the skip gradients where they branch.
  for (int s = k; s-- > 0;) {
    if (s + 1 < k)
      for (std::size_t i = 0; i < g_cur.v.size(); ++i) g_cur.v[i] += g_skip[s + 1].v[i];
    nn::Tensor gx;
    stage_backward(d.conv_down[s], 1 + s, ix.conv_down + 2 * s, g_cur, &gx);
    g_cur = std::move(gx);
  }
  for (std::size_t i = 0; i < g_cur.v.size(); ++i) g_cur.v[i] += g_skip[0].v[i];
  stage_backward(d.conv_in, 0, ix.conv_in, g_cur, nullptr);

  // Embedding path: accumulate through every bias injection.
  std::vector<double> g_h(cfg.emb_width, 0.0);
  for (int i = 0; i < d.n_inject(); ++i) {
    std::vector<double> gh_i;
    d.lin_bias[i].backward(cc.emb_h, g_bias[i], g.tensors[ix.lin_bias + 2 * i],
                           g.tensors[ix.lin_bias + 2 * i + 1], &gh_i);
    for (int j = 0; j < cfg.emb_width; ++j) g_h[j] += gh_i[j];
  }
  std::vector<double> g_emb_pre(cfg.emb_width);
  for (int j = 0; j < cfg.emb_width; ++j) g_emb_pre[j] = g_h[j] * nn::silu_deriv(cc.emb_pre[j]);
  std::vector<double> g_emb_in;
  d.lin_emb.backward(cc.emb_in, g_emb_pre, g.tensors[ix.lin_emb], g.tensors[ix.lin_emb + 1],
                     &g_emb_in);
  for (int j = 0; j < cfg.emb_width; ++j) g.tensors[ix.plane_emb + plane][j] += g_emb_in[j];
}

}  // namespace detail

// --- Training -----------------------------------------------------------------

struct DiffTrainItem {
  LatentTriPlane z0;  // normalized latent
  LayoutMap layout;
};

// One gradient step over a batch: per element draw t uniform in [1,T] and
// fresh noise, predict z0 from z_t, MSE over the latent channels only.
// Returns the mean loss; accumulates gradients into `grads` (pre-zeroed by
// the caller or here).
inline double diffusion_loss_step(Denoiser& d, const std::vector<DiffTrainItem>& batch,
                                  const NoiseSchedule& sched, Rng& rng,
                                  nn::GradList* grads = nullptr) {
  if (batch.empty()) throw DiffusionError("diffusion_loss_step: empty batch");
  double total = 0;
  std::size_t n_lat = 0;
  for (const DiffTrainItem& item : batch) {
    int t = 1 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(sched.T)));
    LatentTriPlane eps = gaussian_latent(item.z0.c, item.z0.r, rng.raw());
    ConditionedLatent z0c = assemble_condition(item.z0, item.layout);
    ConditionedLatent zt = q_sample(z0c, t, eps, sched);
    std::array<detail::DenoiserCache, 3> caches;
    LatentTriPlane pred = denoise(d, zt, t, grads ? &caches : nullptr);
    n_lat = 3 * pred.planes[0].v.size();
    for (int p = 0; p < 3; ++p) {
      nn::Tensor g_out(pred.planes[0].c, pred.planes[0].h, pred.planes[0].w);
      for (std::size_t i = 0; i < pred.planes[p].v.size(); ++i) {
        double diff = pred.planes[p].v[i] - item.z0.planes[p].v[i];
        total += diff * diff;
        g_out.v[i] = 2.0 * diff / (static_cast<double>(n_lat) * batch.size());
      }
      if (grads) detail::denoise_plane_backward(d, caches[p], g_out, p, *grads);
    }
  }
  double loss = total / (static_cast<double>(n_lat) * batch.size());
  if (!std::isfinite(loss)) throw DiffusionError("diffusion_loss_step: non-finite loss");
  return loss;
}

// Loss of an arbitrary predictor (for oracle checks): psi(zt, t) -> LatentTriPlane.
template <typename Psi>
inline double diffusion_loss_oracle(Psi&& psi, const std::vector<DiffTrainItem>& batch,
                                    const NoiseSchedule& sched, Rng& rng) {
  if (batch.empty()) throw DiffusionError("diffusion_loss_oracle: empty batch");
  double total = 0;
  std::size_t n_lat = 0;
  for (const DiffTrainItem& item : batch) {
    int t = 1 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(sched.T)));
    LatentTriPlane eps = gaussian_latent(item.z0.c, item.z0.r, rng.raw());
    ConditionedLatent zt = q_sample(assemble_condition(item.z0, item.layout), t, eps, sched);
    LatentTriPlane pred = psi(zt, t);
    n_lat = 3 * pred.planes[0].v.size();
    for (int p = 0; p < 3; ++p)
      for (std::size_t i = 0; i < pred.planes[p].v.size(); ++i) {
        double diff = pred.planes[p].v[i] - item.z0.planes[p].v[i];
        total += diff * diff;
      }
  }
  return total / (static_cast<double>(n_lat) * batch.size());
}

// --- Sampling -----------------------------------------------------------------

// Strided ancestral sampling with x0 prediction. Psi(zt, t) -> predicted z0
// (latent channels). The condition channels stay clean throughout: they are
// re-injected after every update. alpha_bar at t=0 is defined as 1, which
// makes the final update return the prediction exactly.
template <typename Psi>
inline LatentTriPlane sample_latent(Psi&& psi, const LayoutMap& F, const NoiseSchedule& sched,
                                    std::uint64_t seed, int steps, int latent_c, double clamp,
                                    bool zero_variance = false,
                                    const ConditionedLatent* init = nullptr) {
  if (steps < 1 || steps > sched.T) throw DiffusionError("sample_latent: bad step count");
  std::vector<int> ts;  // descending strided subsequence ending at 1
  for (int i = 0; i < steps; ++i) {
    int t = 1 + static_cast<int>(std::llround(static_cast<double>(i) * (sched.T - 1) /
                                              std::max(1, steps - 1)));
    ts.push_back(t);
  }
  if (steps == 1) ts = {sched.T};
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  std::reverse(ts.begin(), ts.end());  // T = ts[0] > ... > ts.back() = 1

  Rng rng(mix_seed(seed, 0x5A4));
  ConditionedLatent z;
  if (init) {
    z = *init;
  } else {
    LatentTriPlane z_init = gaussian_latent(latent_c, F.r, rng.raw());
    z = assemble_condition(z_init, F);
  }
  std::size_t n_lat = static_cast<std::size_t>(latent_c) * F.r * F.r;

  auto abar = [&](int t) { return t == 0 ? 1.0 : sched.alpha_bar[t - 1]; };
  for (std::size_t s = 0; s < ts.size(); ++s) {
    int t = ts[s];
    int t_prev = s + 1 < ts.size() ? ts[s + 1] : 0;
    LatentTriPlane z0 = psi(z, t);
    for (int p = 0; p < 3; ++p)
      for (double& v : z0.planes[p].v) v = clampd(v, -clamp, clamp);

    double ab_t = abar(t), ab_p = abar(t_prev);
    double alpha_eff = ab_t / ab_p;
    double beta_eff = 1.0 - alpha_eff;
    double coef0 = std::sqrt(ab_p) * beta_eff / (1.0 - ab_t);
    double coeft = std::sqrt(alpha_eff) * (1.0 - ab_p) / (1.0 - ab_t);
    double var = (1.0 - ab_p) / (1.0 - ab_t) * beta_eff;
    double sigma = (zero_variance || t_prev == 0) ? 0.0 : std::sqrt(std::max(0.0, var));
    for (int p = 0; p < 3; ++p)
      for (std::size_t i = 0; i < n_lat; ++i) {
        double mean = coef0 * z0.planes[p].v[i] + coeft * z.planes[p].v[i];
        z.planes[p].v[i] = mean + sigma * rng.gaussian();
      }
    // Clean condition channels are preserved by construction: the update only
    // touches the first latent_c channels.
  }
  return extract_latent(z);
}

inline LatentTriPlane sample_latent(const Denoiser& d, const LayoutMap& F,
                                    const NoiseSchedule& sched, std::uint64_t seed,
                                    int steps = 0) {
  int n = steps > 0 ? steps : d.cfg.sample_steps;
  return sample_latent(
      [&](const ConditionedLatent& zt, int t) { return denoise(d, zt, t); }, F, sched, seed, n,
      d.cfg.latent_c, d.cfg.clamp);
}

// --- Latent normalization -------------------------------------------------------

struct LatentNormStats {
  std::vector<double> mean, stddev;  // per latent channel
};

inline LatentNormStats latent_norm_stats(const std::vector<LatentTriPlane>& data) {
  if (data.empty()) throw DiffusionError("latent_norm_stats: empty dataset");
  int c = data[0].c, r = data[0].r;
  LatentNormStats st;
  st.mean.assign(c, 0.0);
  st.stddev.assign(c, 0.0);
  std::size_t per_ch = 3ull * data.size() * r * r;
  for (const LatentTriPlane& z : data)
    for (int p = 0; p < 3; ++p)
      for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < r * r; ++i)
          st.mean[ch] += z.planes[p].v[static_cast<std::size_t>(ch) * r * r + i];
  for (int ch = 0; ch < c; ++ch) st.mean[ch] /= static_cast<double>(per_ch);
  for (const LatentTriPlane& z : data)
    for (int p = 0; p < 3; ++p)
      for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < r * r; ++i) {
          double d = z.planes[p].v[static_cast<std::size_t>(ch) * r * r + i] - st.mean[ch];
          st.stddev[ch] += d * d;
        }
  for (int ch = 0; ch < c; ++ch)
    st.stddev[ch] = std::max(1e-6, std::sqrt(st.stddev[ch] / static_cast<double>(per_ch)));
  return st;
}

inline LatentTriPlane normalize_latent(const LatentTriPlane& z, const LatentNormStats& st) {
  LatentTriPlane out = z;
  int rr = z.r * z.r;
  for (int p = 0; p < 3; ++p)
    for (int ch = 0; ch < z.c; ++ch)
      for (int i = 0; i < rr; ++i) {
        double& v = out.planes[p].v[static_cast<std::size_t>(ch) * rr + i];
        v = (v - st.mean[ch]) / st.stddev[ch];
      }
  return out;
}

inline LatentTriPlane denormalize_latent(const LatentTriPlane& z, const LatentNormStats& st) {
  LatentTriPlane out = z;
  int rr = z.r * z.r;
  for (int p = 0; p < 3; ++p)
    for (int ch = 0; ch < z.c; ++ch)
      for (int i = 0; i < rr; ++i) {
        double& v = out.planes[p].v[static_cast<std::size_t>(ch) * rr + i];
        v = v * st.stddev[ch] + st.mean[ch];
      }
  return out;
}

// --- Training loop ----------------------------------------------------------------

struct DiffTrainResult {
  Denoiser denoiser;
  NoiseSchedule schedule;
  LatentNormStats stats;
  std::vector<double> history;
  TrainState state;
};

inline DiffTrainResult train_diffusion(const std::vector<LatentTriPlane>& latents,
                                       const std::vector<LayoutMap>& layouts,
                                       const DiffConfig& cfg, std::uint64_t seed,
                                       std::ostream* log = nullptr,
                                       const TrainState* resume = nullptr) {
  if (latents.empty() || latents.size() != layouts.size())
    throw DiffusionError("train_diffusion: latents/layouts mismatch or empty");
  DiffTrainResult res;
  res.schedule = build_schedule(cfg.T, cfg.beta1, cfg.betaT);
  res.stats = latent_norm_stats(latents);
  res.denoiser = Denoiser::init(cfg, seed);

  std::vector<DiffTrainItem> pool;
  for (std::size_t i = 0; i < latents.size(); ++i)
    pool.push_back({normalize_latent(latents[i], res.stats), layouts[i]});

  nn::ParamList params = res.denoiser.params();
  nn::GradList grads;
  grads.match(params);
  std::vector<double> flat_p, flat_g;
  Adam opt(params.total(), cfg.lr);
  int start_step = 0;
  if (resume) {
    if (resume->params.size() != params.total())
      throw DiffusionError("train_diffusion: checkpoint mismatch");
    params.scatter(resume->params);
    opt.m = resume->m;
    opt.v = resume->v;
    opt.t = resume->t;
    start_step = resume->step;
  }
  for (int step = start_step; step < cfg.steps; ++step) {
    Rng rng(mix_seed(seed, 0xD7A1 + static_cast<std::uint64_t>(step)));
    std::vector<DiffTrainItem> batch;
    for (int b = 0; b < cfg.batch; ++b) batch.push_back(pool[rng.uniform_index(pool.size())]);
    grads.zero();
    double loss = diffusion_loss_step(res.denoiser, batch, res.schedule, rng, &grads);
    res.history.push_back(loss);
    params.gather(flat_p);
    grads.gather(flat_g);
    opt.step(flat_p.data(), flat_g.data(), flat_p.size());
    params.scatter(flat_p);
    if (log && (step % 100 == 0 || step + 1 == cfg.steps)) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "diff step %d loss %.6g\n", step, loss);
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

// --- Persistence --------------------------------------------------------------------

inline void denoiser_save(Denoiser& d, const std::string& path) {
  Container c;
  c.kind = "ddpm";
  c.dtype = Dtype::F64;
  c.meta = {static_cast<std::uint64_t>(d.cfg.latent_c), static_cast<std::uint64_t>(d.cfg.L),
            static_cast<std::uint64_t>(d.cfg.r),        static_cast<std::uint64_t>(d.cfg.width),
            static_cast<std::uint64_t>(d.cfg.stages),   static_cast<std::uint64_t>(d.cfg.emb_width),
            static_cast<std::uint64_t>(d.cfg.T)};
  d.params().gather(c.values);
  container_save(c, path);
}

inline Denoiser denoiser_load(const std::string& path, const DiffConfig& base = DiffConfig{}) {
  Container c = container_load(path);
  if (c.kind != "ddpm") throw DiffusionError("denoiser_load: wrong container kind");
  if (c.meta.size() != 7) throw DiffusionError("denoiser_load: bad metadata");
  DiffConfig cfg = base;
  cfg.latent_c = static_cast<int>(c.meta[0]);
  cfg.L = static_cast<int>(c.meta[1]);
  cfg.r = static_cast<int>(c.meta[2]);
  cfg.width = static_cast<int>(c.meta[3]);
  cfg.stages = static_cast<int>(c.meta[4]);
  cfg.emb_width = static_cast<int>(c.meta[5]);
  cfg.T = static_cast<int>(c.meta[6]);
  Denoiser d = Denoiser::init(cfg, 0);
  nn::ParamList list = d.params();
  if (c.values.size() != list.total()) throw DiffusionError("denoiser_load: size mismatch");
  list.scatter(c.values);
  return d;
}

}  // namespace semroom
