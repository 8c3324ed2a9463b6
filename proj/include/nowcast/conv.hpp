#pragma once

#include <algorithm>
#include <cstring>

#include "nowcast/tensor.hpp"

namespace nowcast {

/// Convolution weights (out_channels, in_channels, [kT,] kH, kW) plus per-output-channel bias.
template <class Scalar>
struct ConvKernel {
  Tensor<Scalar> weights;
  Tensor<Scalar> bias;

  int out_channels() const { return static_cast<int>(weights.dim(0)); }
  int in_channels() const { return static_cast<int>(weights.dim(1)); }

  void validate() const {
    if (weights.rank() != 4 && weights.rank() != 5)
      throw std::invalid_argument("ConvKernel: weights must be rank 4 or 5, got rank " +
                                  std::to_string(weights.rank()));
    for (int d = 2; d < weights.rank(); ++d)
      if (weights.dim(d) % 2 == 0)
        throw std::invalid_argument("ConvKernel: even kernel dimension " +
                                    std::to_string(weights.dim(d)) + "; same padding needs odd");
    if (bias.rank() != 1 || bias.dim(0) != weights.dim(0))
      throw std::invalid_argument("ConvKernel: bias length must equal out_channels");
  }
};

template <class S>
ConvKernel<S> make_kernel2d(int out_ch, int in_ch, int kh, int kw) {
  return {Tensor<S>({out_ch, in_ch, kh, kw}), Tensor<S>({out_ch})};
}

template <class S>
ConvKernel<S> make_kernel3d(int out_ch, int in_ch, int kt, int kh, int kw) {
  return {Tensor<S>({out_ch, in_ch, kt, kh, kw}), Tensor<S>({out_ch})};
}

namespace detail {

// im2col patch matrix: K = C*kT*kH*kW rows, one column per output voxel,
// column order (t, y, x). Tiles are aligned to whole (t, y) output rows.
template <class S>
struct ConvDims {
  Eigen::Index C, T, H, W;       // input
  Eigen::Index O, kT, kH, kW;    // kernel
  Eigen::Index K() const { return C * kT * kH * kW; }
  Eigen::Index N() const { return T * H * W; }
};

// Fills patches(k, 0..count-1) for output columns [n0, n0+count), n = (t*H + y)*W + x.
template <class S>
void im2col_tile(const S* in, const ConvDims<S>& d, Eigen::Index n0, Eigen::Index count,
                 RowMat<S>& patches) {
  const Eigen::Index pt = d.kT / 2, ph = d.kH / 2, pw = d.kW / 2;
  const Eigen::Index rows_in_tile = count / d.W;  // tiles are whole output rows
  Eigen::Index k = 0;
  for (Eigen::Index c = 0; c < d.C; ++c) {
    for (Eigen::Index dt = 0; dt < d.kT; ++dt) {
      for (Eigen::Index dy = 0; dy < d.kH; ++dy) {
        for (Eigen::Index dx = 0; dx < d.kW; ++dx, ++k) {
          S* dst = patches.data() + k * patches.cols();
          for (Eigen::Index r = 0; r < rows_in_tile; ++r) {
            const Eigen::Index n = n0 + r * d.W;
            const Eigen::Index t = n / (d.H * d.W);
            const Eigen::Index y = (n / d.W) % d.H;
            S* row = dst + r * d.W;
            const Eigen::Index it = t + dt - pt, iy = y + dy - ph;
            if (it < 0 || it >= d.T || iy < 0 || iy >= d.H) {
              std::memset(row, 0, sizeof(S) * static_cast<size_t>(d.W));
              continue;
            }
            const S* src = in + ((c * d.T + it) * d.H + iy) * d.W;
            const Eigen::Index shift = dx - pw;  // in_x = x + shift
            const Eigen::Index x0 = std::max<Eigen::Index>(0, -shift);
            const Eigen::Index x1 = std::min<Eigen::Index>(d.W, d.W - shift);
            if (x0 > 0) std::memset(row, 0, sizeof(S) * static_cast<size_t>(x0));
            if (x1 > x0)
              std::memcpy(row + x0, src + x0 + shift, sizeof(S) * static_cast<size_t>(x1 - x0));
            if (x1 < d.W) std::memset(row + x1, 0, sizeof(S) * static_cast<size_t>(d.W - x1));
          }
        }
      }
    }
  }
}

// Transpose of im2col_tile: scatter-adds cols(k, .) into grad_in.
template <class S>
void col2im_tile(const RowMat<S>& cols, const ConvDims<S>& d, Eigen::Index n0, Eigen::Index count,
                 S* grad_in) {
  const Eigen::Index pt = d.kT / 2, ph = d.kH / 2, pw = d.kW / 2;
  const Eigen::Index rows_in_tile = count / d.W;
  Eigen::Index k = 0;
  for (Eigen::Index c = 0; c < d.C; ++c) {
    for (Eigen::Index dt = 0; dt < d.kT; ++dt) {
      for (Eigen::Index dy = 0; dy < d.kH; ++dy) {
        for (Eigen::Index dx = 0; dx < d.kW; ++dx, ++k) {
          const S* src_row = cols.data() + k * cols.cols();
          for (Eigen::Index r = 0; r < rows_in_tile; ++r) {
            const Eigen::Index n = n0 + r * d.W;
            const Eigen::Index t = n / (d.H * d.W);
            const Eigen::Index y = (n / d.W) % d.H;
            const S* src = src_row + r * d.W;
            const Eigen::Index it = t + dt - pt, iy = y + dy - ph;
            if (it < 0 || it >= d.T || iy < 0 || iy >= d.H) continue;
            S* dst = grad_in + ((c * d.T + it) * d.H + iy) * d.W;
            const Eigen::Index shift = dx - pw;
            const Eigen::Index x0 = std::max<Eigen::Index>(0, -shift);
            const Eigen::Index x1 = std::min<Eigen::Index>(d.W, d.W - shift);
            for (Eigen::Index x = x0; x < x1; ++x) dst[x + shift] += src[x];
          }
        }
      }
    }
  }
}

inline Eigen::Index conv_tile_cols(Eigen::Index K, Eigen::Index W, Eigen::Index N,
                                   size_t scalar_bytes) {
  constexpr Eigen::Index kBudgetBytes = 64ll << 20;
  Eigen::Index rows = std::max<Eigen::Index>(
      1, kBudgetBytes / static_cast<Eigen::Index>(scalar_bytes) / std::max<Eigen::Index>(1, K * W));
  return std::min(N, rows * W);
}

// out(O x N) = Wmat(O x K) * patches(K x N) + bias, tiled over columns.
template <class S>
void conv_same_core(const S* in, const ConvDims<S>& d, const S* wdata, const S* bdata, S* out) {
  const Eigen::Index K = d.K(), N = d.N();
  Eigen::Map<const RowMat<S>> Wmat(wdata, d.O, K);
  Eigen::Map<RowMat<S>> Omat(out, d.O, N);
  const Eigen::Index tile = conv_tile_cols(K, d.W, N, sizeof(S));
  RowMat<S> patches(K, tile);
  for (Eigen::Index n0 = 0; n0 < N; n0 += tile) {
    const Eigen::Index count = std::min(tile, N - n0);
    im2col_tile(in, d, n0, count, patches);
    Omat.middleCols(n0, count).noalias() = Wmat * patches.leftCols(count);
  }
  if (bdata) {
    Eigen::Map<const ArrayX<S>> bias(bdata, d.O);
    Omat.array().colwise() += bias;
  }
}

// Backward of conv_same_core. Any of the grad pointers may be null to skip.
template <class S>
void conv_same_backward_core(const S* grad_out, const S* in, const ConvDims<S>& d, const S* wdata,
                             S* grad_in, S* grad_w, S* grad_b) {
  const Eigen::Index K = d.K(), N = d.N();
  Eigen::Map<const RowMat<S>> Gmat(grad_out, d.O, N);
  if (grad_b) {
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> gb(grad_b, d.O);
    gb = Gmat.rowwise().sum();
  }
  const Eigen::Index tile = conv_tile_cols(K, d.W, N, sizeof(S));
  RowMat<S> patches;
  if (grad_w) patches.resize(K, tile);
  RowMat<S> cols;
  if (grad_in) cols.resize(K, tile);
  Eigen::Map<RowMat<S>> GW(grad_w ? grad_w : (S*)nullptr, grad_w ? d.O : 0, grad_w ? K : 0);
  Eigen::Map<const RowMat<S>> Wmat(wdata, d.O, K);
  for (Eigen::Index n0 = 0; n0 < N; n0 += tile) {
    const Eigen::Index count = std::min(tile, N - n0);
    if (grad_w) {
      im2col_tile(in, d, n0, count, patches);
      GW.noalias() += Gmat.middleCols(n0, count) * patches.leftCols(count).transpose();
    }
    if (grad_in) {
      cols.leftCols(count).noalias() = Wmat.transpose() * Gmat.middleCols(n0, count);
      col2im_tile(cols, d, n0, count, grad_in);
    }
  }
}

template <class S>
ConvDims<S> dims2d(const Tensor<S>& input, const ConvKernel<S>& k) {
  k.validate();
  if (input.rank() != 3)
    throw std::invalid_argument("conv2d_same: input must be (C,H,W), got " +
                                shape_str(input.shape()));
  if (k.weights.rank() != 4)
    throw std::invalid_argument("conv2d_same: kernel must be rank 4");
  if (input.dim(0) != k.weights.dim(1))
    throw std::invalid_argument("conv2d_same: input channels " + std::to_string(input.dim(0)) +
                                " != kernel in_channels " + std::to_string(k.weights.dim(1)));
  return {input.dim(0), 1, input.dim(1), input.dim(2),
          k.weights.dim(0), 1, k.weights.dim(2), k.weights.dim(3)};
}

template <class S>
ConvDims<S> dims3d(const Tensor<S>& input, const ConvKernel<S>& k) {
  k.validate();
  if (input.rank() != 4)
    throw std::invalid_argument("conv3d_same: input must be (C,T,H,W), got " +
                                shape_str(input.shape()));
  if (k.weights.rank() != 5)
    throw std::invalid_argument("conv3d_same: kernel must be rank 5");
  if (input.dim(0) != k.weights.dim(1))
    throw std::invalid_argument("conv3d_same: input channels " + std::to_string(input.dim(0)) +
                                " != kernel in_channels " + std::to_string(k.weights.dim(1)));
  return {input.dim(0), input.dim(1), input.dim(2), input.dim(3),
          k.weights.dim(0), k.weights.dim(2), k.weights.dim(3), k.weights.dim(4)};
}

}  // namespace detail

template <class S>
struct ConvGrads {
  Tensor<S> grad_input;
  Tensor<S> grad_weights;
  Tensor<S> grad_bias;
};

/// Zero-padded "same" 2-D convolution: (C,H,W) -> (O,H,W).
template <class S>
Tensor<S> conv2d_same(const Tensor<S>& input, const ConvKernel<S>& kernel) {
  auto d = detail::dims2d(input, kernel);
  Tensor<S> out({d.O, d.H, d.W});
  detail::conv_same_core(input.data(), d, kernel.weights.data(), kernel.bias.data(), out.data());
  return out;
}

template <class S>
ConvGrads<S> conv2d_same_backward(const Tensor<S>& grad_out, const Tensor<S>& input,
                                  const ConvKernel<S>& kernel) {
  auto d = detail::dims2d(input, kernel);
  if (grad_out.rank() != 3 || grad_out.dim(0) != d.O || grad_out.dim(1) != d.H ||
      grad_out.dim(2) != d.W)
    throw std::invalid_argument("conv2d_same_backward: grad_out shape mismatch " +
                                shape_str(grad_out.shape()));
  ConvGrads<S> g{Tensor<S>(input.shape()), Tensor<S>(kernel.weights.shape()),
                 Tensor<S>(kernel.bias.shape())};
  detail::conv_same_backward_core(grad_out.data(), input.data(), d, kernel.weights.data(),
                                  g.grad_input.data(), g.grad_weights.data(), g.grad_bias.data());
  return g;
}

/// Zero-padded "same" 3-D convolution: (C,T,H,W) -> (O,T,H,W).
template <class S>
Tensor<S> conv3d_same(const Tensor<S>& input, const ConvKernel<S>& kernel) {
  auto d = detail::dims3d(input, kernel);
  Tensor<S> out({d.O, d.T, d.H, d.W});
  detail::conv_same_core(input.data(), d, kernel.weights.data(), kernel.bias.data(), out.data());
  return out;
}

template <class S>
ConvGrads<S> conv3d_same_backward(const Tensor<S>& grad_out, const Tensor<S>& input,
                                  const ConvKernel<S>& kernel) {
  auto d = detail::dims3d(input, kernel);
  if (grad_out.rank() != 4 || grad_out.dim(0) != d.O || grad_out.dim(1) != d.T ||
      grad_out.dim(2) != d.H || grad_out.dim(3) != d.W)
    throw std::invalid_argument("conv3d_same_backward: grad_out shape mismatch " +
                                shape_str(grad_out.shape()));
  ConvGrads<S> g{Tensor<S>(input.shape()), Tensor<S>(kernel.weights.shape()),
                 Tensor<S>(kernel.bias.shape())};
  detail::conv_same_backward_core(grad_out.data(), input.data(), d, kernel.weights.data(),
                                  g.grad_input.data(), g.grad_weights.data(), g.grad_bias.data());
  return g;
}

}  // namespace nowcast
