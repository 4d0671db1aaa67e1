#pragma once

// Minimal dense layers with explicit backward passes. Activations are stored
// channels x (batch * height * width), column index b*h*w + y*w + x.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ncd/common.hpp"

namespace ncd {

template <typename Scalar>
struct Param {
  std::string name;
  Mat<Scalar> value;
  Mat<Scalar> grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

struct ConvGeometry {
  Index in_channels = 0;
  Index out_channels = 0;
  Index kernel = 3;
  Index stride = 1;
  Index in_h = 0;
  Index in_w = 0;

  Index pad() const { return kernel / 2; }
  Index out_h() const { return (in_h + 2 * pad() - kernel) / stride + 1; }
  Index out_w() const { return (in_w + 2 * pad() - kernel) / stride + 1; }
  Index patch() const { return in_channels * kernel * kernel; }
};

/// (C*k*k) x (B*oh*ow) patch matrix with zero padding.
template <typename Scalar>
Mat<Scalar> im2col(const Mat<Scalar>& x, const ConvGeometry& g, Index batch) {
  const Index oh = g.out_h(), ow = g.out_w(), k = g.kernel, pad = g.pad();
  const Index in_hw = g.in_h * g.in_w, c = g.in_channels, patch = g.patch();
  Mat<Scalar> cols(patch, batch * oh * ow);
  const Scalar* src = x.data();
  Scalar* dst = cols.data();
  for (Index b = 0; b < batch; ++b) {
    for (Index oy = 0; oy < oh; ++oy) {
      for (Index ox = 0; ox < ow; ++ox, dst += patch) {
        Scalar* out = dst;
        for (Index ky = 0; ky < k; ++ky) {
          const Index iy = oy * g.stride + ky - pad;
          for (Index kx = 0; kx < k; ++kx, out += c) {
            const Index ix = ox * g.stride + kx - pad;
            if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) {
              std::fill(out, out + c, Scalar(0));
            } else {
              const Scalar* in = src + (b * in_hw + iy * g.in_w + ix) * c;
              std::copy(in, in + c, out);
            }
          }
        }
      }
    }
  }
  return cols;
}

/// Adjoint of im2col.
template <typename Scalar>
Mat<Scalar> col2im(const Mat<Scalar>& cols, const ConvGeometry& g, Index batch) {
  const Index oh = g.out_h(), ow = g.out_w(), k = g.kernel, pad = g.pad();
  const Index in_hw = g.in_h * g.in_w, c = g.in_channels, patch = g.patch();
  Mat<Scalar> x = Mat<Scalar>::Zero(c, batch * in_hw);
  Scalar* dst = x.data();
  const Scalar* src = cols.data();
  for (Index b = 0; b < batch; ++b) {
    for (Index oy = 0; oy < oh; ++oy) {
      for (Index ox = 0; ox < ow; ++ox, src += patch) {
        const Scalar* in = src;
        for (Index ky = 0; ky < k; ++ky) {
          const Index iy = oy * g.stride + ky - pad;
          for (Index kx = 0; kx < k; ++kx, in += c) {
            const Index ix = ox * g.stride + kx - pad;
            if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
            Scalar* out = dst + (b * in_hw + iy * g.in_w + ix) * c;
            for (Index ch = 0; ch < c; ++ch) out[ch] += in[ch];
          }
        }
      }
    }
  }
  return x;
}

/// Convolution followed by ReLU.
template <typename Scalar>
struct ConvRelu {
  ConvGeometry geom;
  Param<Scalar> weight;  // out x (k*k*in), patch rows ordered (ky, kx, channel)
  Param<Scalar> bias;    // out x 1

  struct Cache {
    Mat<Scalar> cols;
    Mat<Scalar> out;  // post-activation
    Index batch = 0;
  };

  ConvRelu() = default;
  ConvRelu(const ConvGeometry& g, const std::string& name) : geom(g) {
    weight.name = name + ".weight";
    bias.name = name + ".bias";
    weight.value = Mat<Scalar>::Zero(g.out_channels, g.patch());
    bias.value = Mat<Scalar>::Zero(g.out_channels, 1);
    weight.zero_grad();
    bias.zero_grad();
  }

  template <typename Rng>
  void init(Rng& rng) {
    // He-uniform on fan-in; small positive bias keeps units alive at start.
    const double bound = std::sqrt(6.0 / static_cast<double>(geom.patch()));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Index i = 0; i < weight.value.size(); ++i) weight.value(i) = static_cast<Scalar>(u(rng));
    bias.value.setConstant(Scalar(0.01));
  }

  Mat<Scalar> forward(const Mat<Scalar>& x, Index batch, Cache* cache) const {
    if (x.rows() != geom.in_channels || x.cols() != batch * geom.in_h * geom.in_w) {
      throw std::invalid_argument("ConvRelu::forward: input shape mismatch for " + weight.name);
    }
    Mat<Scalar> cols = im2col(x, geom, batch);
    Mat<Scalar> out = weight.value * cols;
    out.colwise() += bias.value.col(0);
    out = out.cwiseMax(Scalar(0));
    if (cache != nullptr) {
      cache->cols = std::move(cols);
      cache->out = out;
      cache->batch = batch;
    }
    return out;
  }

  /// Accumulates parameter gradients; returns d(loss)/d(input) when
  /// `want_input_grad`, otherwise an empty matrix.
  Mat<Scalar> backward(const Cache& cache, const Mat<Scalar>& dout, bool want_input_grad) {
    const Mat<Scalar> dpre = (cache.out.array() > Scalar(0)).select(dout, Scalar(0));
    weight.grad.noalias() += dpre * cache.cols.transpose();
    bias.grad.col(0) += dpre.rowwise().sum();
    if (!want_input_grad) return {};
    const Mat<Scalar> dcols = weight.value.transpose() * dpre;
    return col2im(dcols, geom, cache.batch);
  }
};

/// Affine map on row-vector samples: logits = x W^T + b^T.
template <typename Scalar>
struct Linear {
  Param<Scalar> weight;  // out x in
  Param<Scalar> bias;    // out x 1

  Linear() = default;
  Linear(Index in, Index out, const std::string& name) {
    weight.name = name + ".weight";
    bias.name = name + ".bias";
    weight.value = Mat<Scalar>::Zero(out, in);
    bias.value = Mat<Scalar>::Zero(out, 1);
    weight.zero_grad();
    bias.zero_grad();
  }

  Index in_dim() const { return weight.value.cols(); }
  Index out_dim() const { return weight.value.rows(); }

  template <typename Rng>
  void init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim()));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Index i = 0; i < weight.value.size(); ++i) weight.value(i) = static_cast<Scalar>(u(rng));
    bias.value.setZero();
  }

  Mat<Scalar> forward(const Mat<Scalar>& x) const {
    Mat<Scalar> out = x * weight.value.transpose();
    out.rowwise() += bias.value.col(0).transpose();
    return out;
  }

  Mat<Scalar> backward(const Mat<Scalar>& x, const Mat<Scalar>& dlogits) {
    weight.grad.noalias() += dlogits.transpose() * x;
    bias.grad.col(0) += dlogits.colwise().sum().transpose();
    return dlogits * weight.value;
  }
};

/// Row-wise softmax with max subtraction.
template <typename Derived>
Mat<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  Mat<Scalar> out = logits;
  for (Index r = 0; r < out.rows(); ++r) {
    const Scalar mx = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

/// Row-wise log-softmax.
template <typename Derived>
Mat<typename Derived::Scalar> log_softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  Mat<Scalar> out = logits;
  for (Index r = 0; r < out.rows(); ++r) {
    const Scalar mx = out.row(r).maxCoeff();
    const Scalar lse = mx + std::log((out.row(r).array() - mx).exp().sum());
    out.row(r).array() -= lse;
  }
  return out;
}

/// Pull a gradient on softmax probabilities back to the logits.
template <typename Scalar>
Mat<Scalar> softmax_backward(const Mat<Scalar>& probs, const Mat<Scalar>& dprobs) {
  const Vec<Scalar> inner = (probs.array() * dprobs.array()).rowwise().sum();
  Mat<Scalar> out = dprobs;
  out.colwise() -= inner;
  return probs.cwiseProduct(out);
}

/// Spatial mean per image: (C x B*hw) -> B x C.
template <typename Scalar>
Mat<Scalar> global_average_pool(const Mat<Scalar>& maps, Index batch) {
  const Index hw = maps.cols() / batch;
  Mat<Scalar> out(batch, maps.rows());
  for (Index b = 0; b < batch; ++b) {
    out.row(b) = maps.middleCols(b * hw, hw).rowwise().mean().transpose();
  }
  return out;
}

template <typename Scalar>
Mat<Scalar> global_average_pool_backward(const Mat<Scalar>& dpooled, Index hw) {
  const Index batch = dpooled.rows();
  Mat<Scalar> out(dpooled.cols(), batch * hw);
  for (Index b = 0; b < batch; ++b) {
    const Vec<Scalar> g = dpooled.row(b).transpose() / static_cast<Scalar>(hw);
    out.middleCols(b * hw, hw).colwise() = g;
  }
  return out;
}

}  // namespace ncd
