// Scaled dot-product attention and its query / key-value mean-pooled variant.
#pragma once

#include "stochpool/ops.hpp"
#include "stochpool/pooling.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace stochpool {

/// Per-layer pooling factors: s_q pools queries, s_k pools keys and values jointly.
struct PoolFactors {
  int s_q = 1;
  int s_k = 1;

  void validate() const {
    if (s_q < 1 || s_k < 1) {
      throw ConfigError("pool factors must be >= 1, got (s_q=" + std::to_string(s_q) +
                        ", s_k=" + std::to_string(s_k) + ")");
    }
  }
  friend bool operator==(const PoolFactors&, const PoolFactors&) = default;
};

/// Projection weights of one multi-head attention block. Weights are [E×E],
/// biases [1×E]; head_dim = E / heads.
template <typename Scalar>
struct AttentionWeights {
  Tensor<Scalar> wq, bq, wk, bk, wv, bv, wo, bo;
  int heads = 1;

  Eigen::Index model_dim() const { return wq.rows(); }
  Eigen::Index head_dim() const { return model_dim() / heads; }
};

/// softmax(q·kᵀ/√D_k)·v. Masked-out keys get −∞ logits; a mask with no valid
/// key is an error because the distribution is undefined.
template <typename Scalar>
Tensor<Scalar> attend(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                      const RowMask& key_mask = {}) {
  if (q.cols() != k.cols()) {
    throw DimensionError("attend: query " + q.shape_string() + " and key " + k.shape_string() + " widths differ");
  }
  if (k.rows() != v.rows()) {
    throw DimensionError("attend: key " + k.shape_string() + " and value " + v.shape_string() + " lengths differ");
  }
  const Scalar inv_scale = Scalar(1) / std::sqrt(static_cast<Scalar>(q.cols()));
  auto logits = scale(matmul(q, transpose(k)), inv_scale);
  if (!key_mask.empty()) {
    if (static_cast<Eigen::Index>(key_mask.size()) != k.rows()) {
      throw DimensionError("attend: key mask length " + std::to_string(key_mask.size()) + " vs " + k.shape_string());
    }
    bool any_valid = false;
    Matrix<Scalar> bias = Matrix<Scalar>::Zero(q.rows(), k.rows());
    for (Eigen::Index j = 0; j < k.rows(); ++j) {
      if (key_mask[static_cast<std::size_t>(j)]) {
        any_valid = true;
      } else {
        bias.col(j).setConstant(-std::numeric_limits<Scalar>::infinity());
      }
    }
    if (!any_valid) throw DimensionError("attend: every key is masked out; attention distribution undefined");
    logits = add_constant(logits, bias);
  }
  return matmul(softmax_rows(logits), v);
}

/// Mean-pooled attention: Q_p = D(q, s_q), K_p = D(k, s_k), V_p = D(v, s_k),
/// output U(A(Q_p, K_p, V_p), s_q) truncated to the original query length.
template <typename Scalar>
Tensor<Scalar> pooled_attend(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                             PoolFactors factors, const RowMask& mask = {}) {
  factors.validate();
  const auto [qp, qmask] = downsample_masked(q, factors.s_q, mask);
  const auto [kp, kmask] = downsample_masked(k, factors.s_k, mask);
  const auto vp = downsample_masked(v, factors.s_k, mask).first;
  return upsample(attend(qp, kp, vp, kmask), factors.s_q, q.rows());
}

/// Multi-head attention with pooling applied to the full projected Q/K/V along
/// time (before the head split). Parameter-free with respect to the factors.
template <typename Scalar>
Tensor<Scalar> multi_head_pooled(const Tensor<Scalar>& x, const AttentionWeights<Scalar>& w, PoolFactors factors,
                                 const RowMask& mask = {}) {
  factors.validate();
  const Eigen::Index e = w.model_dim();
  if (x.cols() != e) throw DimensionError("multi_head_pooled: input " + x.shape_string() + " expects width " + std::to_string(e));
  if (w.heads < 1 || e % w.heads != 0) {
    throw ConfigError("multi_head_pooled: model dim " + std::to_string(e) + " not divisible by " +
                      std::to_string(w.heads) + " heads");
  }
  Tensor<Scalar> q, k, v;
  {
    MacScope scope(MacCategory::AttnProjection);
    q = linear(x, w.wq, w.bq);
    k = linear(x, w.wk, w.bk);
    v = linear(x, w.wv, w.bv);
  }
  const auto [qp, qmask] = downsample_masked(q, factors.s_q, mask);
  const auto [kp, kmask] = downsample_masked(k, factors.s_k, mask);
  const auto vp = downsample_masked(v, factors.s_k, mask).first;

  const Eigen::Index dh = w.head_dim();
  std::vector<Tensor<Scalar>> heads;
  heads.reserve(static_cast<std::size_t>(w.heads));
  {
    MacScope scope(MacCategory::AttnScores);
    for (int h = 0; h < w.heads; ++h) {
      heads.push_back(attend(slice_cols(qp, h * dh, dh), slice_cols(kp, h * dh, dh), slice_cols(vp, h * dh, dh), kmask));
    }
  }
  auto merged = upsample(w.heads == 1 ? heads.front() : concat_cols(heads), factors.s_q, x.rows());
  MacScope scope(MacCategory::AttnProjection);
  return linear(merged, w.wo, w.bo);
}

}  // namespace stochpool
