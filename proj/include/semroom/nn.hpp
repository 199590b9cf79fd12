#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "semroom/core.hpp"

namespace semroom::nn {

struct NnError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_) { resize(c_, h_, w_); }

  void resize(int c_, int h_, int w_) {
    c = c_;
    h = h_;
    w = w_;
    v.assign(static_cast<std::size_t>(c) * h * w, 0.0);
  }

  double& at(int ch, int i, int j) { return v[(static_cast<std::size_t>(ch) * h + i) * w + j]; }
  double at(int ch, int i, int j) const {
    return v[(static_cast<std::size_t>(ch) * h + i) * w + j];
  }
  std::size_t size() const { return v.size(); }

  void zero() { std::fill(v.begin(), v.end(), 0.0); }
};

// 3x3 convolution, padding 1, stride 1 or 2.
struct Conv2d {
  int in_c = 0, out_c = 0, stride = 1;
  std::vector<double> w;  // [out][in][3][3]
  std::vector<double> b;  // [out]

  void init(int in, int out, int stride_, Rng& rng) {
    in_c = in;
    out_c = out;
    stride = stride_;
    w.resize(static_cast<std::size_t>(out) * in * 9);
    b.assign(out, 0.0);
    double std = std::sqrt(2.0 / (in * 9.0));
    for (double& x : w) x = std * rng.gaussian();
  }

  int out_h(int h) const { return (h + 2 - 3) / stride + 1; }

  void forward(const Tensor& x, Tensor& y) const {
    if (x.c != in_c) throw NnError("Conv2d: channel mismatch");
    y.resize(out_c, out_h(x.h), out_h(x.w));
    for (int oc = 0; oc < out_c; ++oc) {
      for (int oi = 0; oi < y.h; ++oi) {
        for (int oj = 0; oj < y.w; ++oj) {
          double acc = b[oc];
          int bi = oi * stride - 1, bj = oj * stride - 1;
          for (int ic = 0; ic < in_c; ++ic) {
            const double* wk = &w[(static_cast<std::size_t>(oc) * in_c + ic) * 9];
            for (int ki = 0; ki < 3; ++ki) {
              int i = bi + ki;
              if (i < 0 || i >= x.h) continue;
              for (int kj = 0; kj < 3; ++kj) {
                int j = bj + kj;
                if (j < 0 || j >= x.w) continue;
                acc += wk[ki * 3 + kj] * x.at(ic, i, j);
              }
            }
          }
          y.at(oc, oi, oj) = acc;
        }
      }
    }
  }

  // Accumulates into gw/gb/gx (gx may be null for input layers).
  void backward(const Tensor& x, const Tensor& gy, std::vector<double>& gw,
                std::vector<double>& gb, Tensor* gx) const {
    if (gx) gx->resize(x.c, x.h, x.w);
    for (int oc = 0; oc < out_c; ++oc) {
      for (int oi = 0; oi < gy.h; ++oi) {
        for (int oj = 0; oj < gy.w; ++oj) {
          double g = gy.at(oc, oi, oj);
          if (g == 0) continue;
          gb[oc] += g;
          int bi = oi * stride - 1, bj = oj * stride - 1;
          for (int ic = 0; ic < in_c; ++ic) {
            double* gwk = &gw[(static_cast<std::size_t>(oc) * in_c + ic) * 9];
            const double* wk = &w[(static_cast<std::size_t>(oc) * in_c + ic) * 9];
            for (int ki = 0; ki < 3; ++ki) {
              int i = bi + ki;
              if (i < 0 || i >= x.h) continue;
              for (int kj = 0; kj < 3; ++kj) {
                int j = bj + kj;
                if (j < 0 || j >= x.w) continue;
                gwk[ki * 3 + kj] += g * x.at(ic, i, j);
                if (gx) gx->at(ic, i, j) += g * wk[ki * 3 + kj];
              }
            }
          }
        }
      }
    }
  }
};

struct Linear {
  int in_c = 0, out_c = 0;
  std::vector<double> w;  // [out][in]
  std::vector<double> b;

  void init(int in, int out, Rng& rng) {
    in_c = in;
    out_c = out;
    w.resize(static_cast<std::size_t>(out) * in);
    b.assign(out, 0.0);
    double std = std::sqrt(1.0 / in);
    for (double& x : w) x = std * rng.gaussian();
  }

  void forward(const std::vector<double>& x, std::vector<double>& y) const {
    y.assign(out_c, 0.0);
    for (int o = 0; o < out_c; ++o) {
      double acc = b[o];
      const double* row = &w[static_cast<std::size_t>(o) * in_c];
      for (int i = 0; i < in_c; ++i) acc += row[i] * x[i];
      y[o] = acc;
    }
  }

  void backward(const std::vector<double>& x, const std::vector<double>& gy,
                std::vector<double>& gw, std::vector<double>& gb,
                std::vector<double>* gx) const {
    if (gx) gx->assign(in_c, 0.0);
    for (int o = 0; o < out_c; ++o) {
      double g = gy[o];
      gb[o] += g;
      const double* row = &w[static_cast<std::size_t>(o) * in_c];
      double* grow = &gw[static_cast<std::size_t>(o) * in_c];
      for (int i = 0; i < in_c; ++i) {
        grow[i] += g * x[i];
        if (gx) (*gx)[i] += g * row[i];
      }
    }
  }
};

inline double silu(double x) {
  double s = 1.0 / (1.0 + std::exp(-x));
  return x * s;
}

inline double silu_deriv(double x) {
  double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

inline void silu_forward(const Tensor& x, Tensor& y) {
  y.resize(x.c, x.h, x.w);
  for (std::size_t i = 0; i < x.v.size(); ++i) y.v[i] = silu(x.v[i]);
}

inline void silu_backward(const Tensor& x, const Tensor& gy, Tensor& gx) {
  gx.resize(x.c, x.h, x.w);
  for (std::size_t i = 0; i < x.v.size(); ++i) gx.v[i] = gy.v[i] * silu_deriv(x.v[i]);
}

inline void upsample_nearest2x(const Tensor& x, Tensor& y) {
  y.resize(x.c, 2 * x.h, 2 * x.w);
  for (int c = 0; c < x.c; ++c)
    for (int i = 0; i < y.h; ++i)
      for (int j = 0; j < y.w; ++j) y.at(c, i, j) = x.at(c, i / 2, j / 2);
}

inline void upsample_nearest2x_backward(const Tensor& gy, Tensor& gx) {
  gx.resize(gy.c, gy.h / 2, gy.w / 2);
  for (int c = 0; c < gy.c; ++c)
    for (int i = 0; i < gy.h; ++i)
      for (int j = 0; j < gy.w; ++j) gx.at(c, i / 2, j / 2) += gy.at(c, i, j);
}

inline void concat_channels(const Tensor& a, const Tensor& b, Tensor& y) {
  if (a.h != b.h || a.w != b.w) throw NnError("concat_channels: spatial mismatch");
  y.resize(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), y.v.begin());
  std::copy(b.v.begin(), b.v.end(), y.v.begin() + a.v.size());
}

inline void split_channels(const Tensor& y, Tensor& a, Tensor& b, int ca) {
  a.resize(ca, y.h, y.w);
  b.resize(y.c - ca, y.h, y.w);
  std::copy(y.v.begin(), y.v.begin() + a.v.size(), a.v.begin());
  std::copy(y.v.begin() + a.v.size(), y.v.end(), b.v.begin());
}

// Parameter bookkeeping: modules expose their tensors; a flat view feeds one
// Adam instance.
struct ParamList {
  std::vector<std::vector<double>*> tensors;

  void add(std::vector<double>& t) { tensors.push_back(&t); }
  void add(Conv2d& c) {
    add(c.w);
    add(c.b);
  }
  void add(Linear& l) {
    add(l.w);
    add(l.b);
  }

  std::size_t total() const {
    std::size_t n = 0;
    for (auto* t : tensors) n += t->size();
    return n;
  }

  void gather(std::vector<double>& flat) const {
    flat.resize(total());
    std::size_t k = 0;
    for (auto* t : tensors)
      for (double x : *t) flat[k++] = x;
  }

  void scatter(const std::vector<double>& flat) {
    std::size_t k = 0;
    for (auto* t : tensors)
      for (double& x : *t) x = flat[k++];
  }
};

// Mirror of ParamList for gradient accumulation: same shapes, zero-initable.
struct GradList {
  std::vector<std::vector<double>> tensors;

  void match(const ParamList& params) {
    tensors.clear();
    for (auto* t : params.tensors) tensors.emplace_back(t->size(), 0.0);
  }

  void zero() {
    for (auto& t : tensors)
      for (double& x : t) x = 0.0;
  }

  void gather(std::vector<double>& flat) const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    flat.resize(n);
    std::size_t k = 0;
    for (const auto& t : tensors)
      for (double x : t) flat[k++] = x;
  }

  void scale(double s) {
    for (auto& t : tensors)
      for (double& x : t) x *= s;
  }

  void add(const GradList& o) {
    for (std::size_t i = 0; i < tensors.size(); ++i)
      for (std::size_t j = 0; j < tensors[i].size(); ++j) tensors[i][j] += o.tensors[i][j];
  }
};

}  // namespace semroom::nn
