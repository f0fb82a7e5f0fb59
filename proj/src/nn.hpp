#pragma once

// Minimal dense NN kernels: im2col convolution, global average pooling and
// affine layers with exact analytic backward passes. Templated on the scalar
// type so the same code path runs in float for training and in double for
// finite-difference probes.

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <vector>

#include "common.hpp"

namespace kfwc::nn {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// One feature map: channels x (h*w), spatial index i = y*w + x.
template <class S>
struct FeatureMap {
  Mat<S> m;
  int h = 0, w = 0;
  int channels() const { return static_cast<int>(m.rows()); }
  int positions() const { return h * w; }
};

struct ConvSpec {
  int out_c = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
};

inline int conv_out_dim(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

// He fan-in initialization, drawn in double so all scalar instantiations of a
// given seed share the same values.
template <class S>
void init_normal(Mat<S>& w, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index c = 0; c < w.cols(); ++c)
    for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = static_cast<S>(dist(rng));
}

// Convolution followed by an optional ReLU. Parameters only; per-forward
// state lives in a caller-owned Cache so one layer can serve many samples
// concurrently.
template <class S>
struct Conv2d {
  int in_c = 0, out_c = 0, kernel = 1, stride = 1, pad = 0;
  bool relu = true;
  Mat<S> w;  // out_c x (in_c*kernel*kernel)
  Vec<S> b;  // out_c

  struct Cache {
    Mat<S> cols;  // (in_c*k*k) x out_positions
    Mat<S> pre;   // pre-activation, out_c x out_positions
    int in_h = 0, in_w = 0;
    // backward workspaces, reused across steps
    Mat<S> dz, dcols;
  };

  void init(int in_channels, const ConvSpec& spec, Rng& rng) {
    in_c = in_channels;
    out_c = spec.out_c;
    kernel = spec.kernel;
    stride = spec.stride;
    pad = spec.pad;
    w.resize(out_c, in_c * kernel * kernel);
    b = Vec<S>::Zero(out_c);
    init_normal(w, std::sqrt(2.0 / (in_c * kernel * kernel)), rng);
  }

  void im2col(const FeatureMap<S>& x, Mat<S>& cols) const {
    const int oh = conv_out_dim(x.h, kernel, stride, pad);
    const int ow = conv_out_dim(x.w, kernel, stride, pad);
    cols.resize(in_c * kernel * kernel, oh * ow);
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const int col = oy * ow + ox;
        S* dst = cols.col(col).data();
        for (int ci = 0; ci < in_c; ++ci) {
          for (int ky = 0; ky < kernel; ++ky) {
            const int iy = oy * stride - pad + ky;
            for (int kx = 0; kx < kernel; ++kx) {
              const int ix = ox * stride - pad + kx;
              const bool inside = iy >= 0 && iy < x.h && ix >= 0 && ix < x.w;
              *dst++ = inside ? x.m(ci, iy * x.w + ix) : S(0);
            }
          }
        }
      }
    }
  }

  FeatureMap<S> forward(const FeatureMap<S>& x, Cache& cache) const {
    if (x.channels() != in_c) throw ContractError("Conv2d: channel mismatch");
    FeatureMap<S> out;
    out.h = conv_out_dim(x.h, kernel, stride, pad);
    out.w = conv_out_dim(x.w, kernel, stride, pad);
    if (out.h <= 0 || out.w <= 0) throw ContractError("Conv2d: input smaller than kernel");
    im2col(x, cache.cols);
    cache.in_h = x.h;
    cache.in_w = x.w;
    cache.pre.noalias() = w * cache.cols;
    cache.pre.colwise() += b;
    out.m = relu ? cache.pre.cwiseMax(S(0)) : cache.pre;
    return out;
  }

  // dy is the gradient w.r.t. the layer output (post-ReLU). Parameter
  // gradients are accumulated into dw/db; the input gradient lands in dx
  // unless need_dx is false (first layer).
  void backward(Cache& cache, const Mat<S>& dy, Mat<S>& dw, Vec<S>& db, FeatureMap<S>& dx,
                bool need_dx = true) const {
    if (relu) {
      cache.dz = dy;
      cache.dz.array() *= (cache.pre.array() > S(0)).template cast<S>();
    } else {
      cache.dz = dy;
    }
    dw.noalias() += cache.dz * cache.cols.transpose();
    db.noalias() += cache.dz.rowwise().sum();
    if (!need_dx) return;
    cache.dcols.resize(in_c * kernel * kernel, cache.dz.cols());
    cache.dcols.noalias() = w.transpose() * cache.dz;

    dx.h = cache.in_h;
    dx.w = cache.in_w;
    dx.m.resize(in_c, cache.in_h * cache.in_w);
    dx.m.setZero();
    const int oh = conv_out_dim(cache.in_h, kernel, stride, pad);
    const int ow = conv_out_dim(cache.in_w, kernel, stride, pad);
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const int col = oy * ow + ox;
        const S* src = cache.dcols.col(col).data();
        for (int ci = 0; ci < in_c; ++ci) {
          for (int ky = 0; ky < kernel; ++ky) {
            const int iy = oy * stride - pad + ky;
            for (int kx = 0; kx < kernel; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (iy >= 0 && iy < cache.in_h && ix >= 0 && ix < cache.in_w)
                dx.m(ci, iy * cache.in_w + ix) += src[0];
              ++src;
            }
          }
        }
      }
    }
  }
};

// Channel-wise spatial mean.
template <class S>
struct GlobalAvgPool {
  static Vec<S> forward(const FeatureMap<S>& x) { return x.m.rowwise().mean(); }

  static Mat<S> backward(const Vec<S>& dz, int positions) {
    return (dz / S(positions)).replicate(1, positions);
  }
};

template <class S>
struct Linear {
  Mat<S> w;  // out x in
  Vec<S> b;  // out

  void init(int in_dim, int out_dim, Rng& rng) {
    w.resize(out_dim, in_dim);
    b = Vec<S>::Zero(out_dim);
    init_normal(w, std::sqrt(1.0 / in_dim), rng);
  }

  Vec<S> forward(const Vec<S>& x) const {
    if (x.size() != w.cols()) throw ContractError("Linear: dimension mismatch");
    Vec<S> y = w * x;
    y += b;
    return y;
  }

  Vec<S> backward(const Vec<S>& x, const Vec<S>& dy, Mat<S>& dw, Vec<S>& db) const {
    dw.noalias() += dy * x.transpose();
    db += dy;
    return w.transpose() * dy;
  }
};

// Numerically stable sigmoid.
template <class S>
inline S sigmoid(S z) {
  if (z >= S(0)) return S(1) / (S(1) + std::exp(-z));
  const S e = std::exp(z);
  return e / (S(1) + e);
}

// Mean binary cross-entropy over the flag vector, computed from logits.
// dlogits, when non-null, receives d(loss)/dlogits.
template <class S>
S bce_with_logits(const Vec<S>& logits, const Vec<S>& targets, Vec<S>* dlogits) {
  if (logits.size() != targets.size()) throw ContractError("bce: size mismatch");
  const auto k = logits.size();
  S loss = 0;
  if (dlogits) dlogits->resize(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const S z = logits[i], t = targets[i];
    // max(z,0) - z*t + log(1 + exp(-|z|))
    loss += std::max(z, S(0)) - z * t + std::log1p(std::exp(-std::abs(z)));
    if (dlogits) (*dlogits)[i] = (sigmoid(z) - t) / S(k);
  }
  return loss / S(k);
}

template <class S>
Vec<S> softmax(const Vec<S>& z) {
  Vec<S> p = (z.array() - z.maxCoeff()).exp();
  p /= p.sum();
  return p;
}

// Cross-entropy from logits for one sample; optional per-class weight
// multiplies both the loss and its gradient.
template <class S>
S softmax_xent(const Vec<S>& logits, int label, S weight, Vec<S>* dlogits) {
  if (label < 0 || label >= logits.size()) throw ContractError("xent: label out of range");
  const S m = logits.maxCoeff();
  const S lse = std::log((logits.array() - m).exp().sum()) + m;
  const S loss = weight * (lse - logits[label]);
  if (dlogits) {
    *dlogits = softmax(logits) * weight;
    (*dlogits)[label] -= weight;
  }
  return loss;
}

// SGD with classic momentum and coupled L2 weight decay:
//   v <- momentum*v + (g + wd*p);  p <- p - lr*v
// Throws NumericError naming `name` if a non-finite gradient shows up.
template <class S>
void sgd_update(S* p, const S* g, S* v, size_t n, S lr, S momentum, S wd,
                const std::string& name) {
  for (size_t i = 0; i < n; ++i) {
    if (!std::isfinite(static_cast<double>(g[i])))
      throw NumericError("non-finite gradient in parameter '" + name + "'");
    v[i] = momentum * v[i] + (g[i] + wd * p[i]);
    p[i] -= lr * v[i];
  }
}

}  // namespace kfwc::nn
