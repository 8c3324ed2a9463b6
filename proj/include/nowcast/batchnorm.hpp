#pragma once

#include "nowcast/tensor.hpp"

namespace nowcast {

/// Per-channel affine batch normalization over (batch, time, height, width).
template <class S>
struct BatchNormParams {
  Tensor<S> gamma, beta, running_mean, running_var;  // each (C)
  S epsilon = S(1e-5);
  S momentum = S(0.9);

  static BatchNormParams init(int channels) {
    BatchNormParams p;
    p.gamma = Tensor<S>::constant({channels}, S(1));
    p.beta = Tensor<S>({channels});
    p.running_mean = Tensor<S>({channels});
    p.running_var = Tensor<S>::constant({channels}, S(1));
    return p;
  }
};

template <class S>
struct BatchNormCache {
  Tensor<S> xhat;     // (B,T,C,H,W)
  Tensor<S> inv_std;  // (C)
};

namespace detail {

template <class S, class Fn>
void for_each_channel_plane(const Shape& shape, Fn&& fn) {
  // shape (B,T,C,H,W); visits each contiguous (H*W) plane of channel c
  const Eigen::Index B = shape[0], T = shape[1], C = shape[2], plane = shape[3] * shape[4];
  for (Eigen::Index c = 0; c < C; ++c)
    for (Eigen::Index b = 0; b < B; ++b)
      for (Eigen::Index t = 0; t < T; ++t) fn(c, (((b * T + t) * C) + c) * plane, plane);
}

}  // namespace detail

/// Train mode uses batch statistics (biased variance) and updates the running
/// averages; infer mode uses the stored running statistics.
template <class S>
Tensor<S> batchnorm_forward(const Tensor<S>& x, BatchNormParams<S>& p, bool train,
                            BatchNormCache<S>* cache = nullptr) {
  if (x.rank() != 5) throw std::invalid_argument("batchnorm: input must be (B,T,C,H,W)");
  const Eigen::Index C = x.dim(2);
  if (p.gamma.dim(0) != C) throw std::invalid_argument("batchnorm: channel count mismatch");
  const Eigen::Index per_channel = x.size() / C;

  Tensor<S> mean({C}), var({C});
  if (train) {
    detail::for_each_channel_plane<S>(x.shape(), [&](Eigen::Index c, Eigen::Index off, Eigen::Index n) {
      mean[c] += Eigen::Map<const ArrayX<S>>(x.data() + off, n).sum();
    });
    mean.array() /= S(per_channel);
    detail::for_each_channel_plane<S>(x.shape(), [&](Eigen::Index c, Eigen::Index off, Eigen::Index n) {
      var[c] += (Eigen::Map<const ArrayX<S>>(x.data() + off, n) - mean[c]).square().sum();
    });
    var.array() /= S(per_channel);
    p.running_mean.array() = p.momentum * p.running_mean.array() + (S(1) - p.momentum) * mean.array();
    p.running_var.array() = p.momentum * p.running_var.array() + (S(1) - p.momentum) * var.array();
  } else {
    mean = p.running_mean;
    var = p.running_var;
  }

  Tensor<S> inv_std({C});
  inv_std.array() = (var.array() + p.epsilon).rsqrt();
  Tensor<S> y(x.shape());
  Tensor<S> xhat(x.shape());
  detail::for_each_channel_plane<S>(x.shape(), [&](Eigen::Index c, Eigen::Index off, Eigen::Index n) {
    Eigen::Map<const ArrayX<S>> in(x.data() + off, n);
    Eigen::Map<ArrayX<S>> xh(xhat.data() + off, n);
    Eigen::Map<ArrayX<S>> out(y.data() + off, n);
    xh = (in - mean[c]) * inv_std[c];
    out = p.gamma[c] * xh + p.beta[c];
  });
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <class S>
struct BatchNormGrads {
  Tensor<S> dx;
  Tensor<S> dgamma, dbeta;
};

/// Backward for train-mode normalization (batch statistics).
template <class S>
BatchNormGrads<S> batchnorm_backward(const Tensor<S>& dy, const BatchNormCache<S>& cache,
                                     const BatchNormParams<S>& p) {
  if (cache.xhat.size() == 0) throw std::invalid_argument("batchnorm_backward: missing cache");
  const Eigen::Index C = cache.inv_std.dim(0);
  const Eigen::Index per_channel = dy.size() / C;
  BatchNormGrads<S> g{Tensor<S>(dy.shape()), Tensor<S>({C}), Tensor<S>({C})};
  Tensor<S> sum_dy({C}), sum_dy_xhat({C});
  detail::for_each_channel_plane<S>(dy.shape(), [&](Eigen::Index c, Eigen::Index off, Eigen::Index n) {
    Eigen::Map<const ArrayX<S>> d(dy.data() + off, n);
    Eigen::Map<const ArrayX<S>> xh(cache.xhat.data() + off, n);
    sum_dy[c] += d.sum();
    sum_dy_xhat[c] += (d * xh).sum();
  });
  g.dbeta = sum_dy;
  g.dgamma = sum_dy_xhat;
  const S N = S(per_channel);
  detail::for_each_channel_plane<S>(dy.shape(), [&](Eigen::Index c, Eigen::Index off, Eigen::Index n) {
    Eigen::Map<const ArrayX<S>> d(dy.data() + off, n);
    Eigen::Map<const ArrayX<S>> xh(cache.xhat.data() + off, n);
    Eigen::Map<ArrayX<S>> dx(g.dx.data() + off, n);
    dx = p.gamma[c] * cache.inv_std[c] / N * (N * d - sum_dy[c] - xh * sum_dy_xhat[c]);
  });
  return g;
}

}  // namespace nowcast
