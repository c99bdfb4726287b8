// Test-only helpers: seeded generators and independent oracles.
#pragma once

#include "stochpool/ctc.hpp"
#include "stochpool/encoder.hpp"
#include "stochpool/ops.hpp"
#include "stochpool/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace testing {

using stochpool::Matrix;
using Mat = Matrix<double>;

inline Mat random_matrix(stochpool::Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = scale * rng.normal();
  }
  return m;
}

/// Triple-loop product, independent of Eigen's kernels.
inline Mat loop_matmul(const Mat& a, const Mat& b) {
  Mat out = Mat::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (Eigen::Index k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  }
  return out;
}

/// Scalar-loop attention softmax(q·kᵀ/√d)·v with optional key mask.
inline Mat loop_attention(const Mat& q, const Mat& k, const Mat& v, const std::vector<bool>& mask = {}) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Mat out = Mat::Zero(q.rows(), v.cols());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    std::vector<double> logits(static_cast<std::size_t>(k.rows()));
    double mx = -1e300;
    for (Eigen::Index j = 0; j < k.rows(); ++j) {
      double dot = 0.0;
      for (Eigen::Index d = 0; d < q.cols(); ++d) dot += q(i, d) * k(j, d);
      logits[static_cast<std::size_t>(j)] = dot * scale;
      if (mask.empty() || mask[static_cast<std::size_t>(j)]) mx = std::max(mx, dot * scale);
    }
    double z = 0.0;
    std::vector<double> w(logits.size(), 0.0);
    for (std::size_t j = 0; j < logits.size(); ++j) {
      if (!mask.empty() && !mask[j]) continue;
      w[j] = std::exp(logits[j] - mx);
      z += w[j];
    }
    for (std::size_t j = 0; j < logits.size(); ++j) {
      for (Eigen::Index d = 0; d < v.cols(); ++d) out(i, d) += w[j] / z * v(static_cast<Eigen::Index>(j), d);
    }
  }
  return out;
}

struct GradCheck {
  double worst_relative_error = 0.0;
  std::size_t entries_checked = 0;
};

/// Central finite differences against tape gradients.
///
/// `loss` builds a scalar from the given inputs (tape leaves or constants).
/// Per input, up to `max_entries` coordinates are probed and compared as a
/// vector: ||analytic − numeric|| / max(||analytic||, ||numeric||).
inline constexpr double kGradientFloor = 1e-6;

inline GradCheck check_gradients(const std::function<stochpool::Tensor<double>(const std::vector<stochpool::Tensor<double>>&)>& loss,
                                 const std::vector<Mat>& inputs, double step = 1e-5, std::size_t max_entries = 64,
                                 std::uint64_t seed = 7) {
  using stochpool::Tensor;
  stochpool::Tape<double> tape;
  std::vector<Tensor<double>> leaves;
  for (const auto& m : inputs) leaves.push_back(tape.variable(m));
  auto l = loss(leaves);
  const double floor = kGradientFloor * std::max(1.0, std::abs(l.item()));
  tape.backward(l);

  auto evaluate = [&](const std::vector<Mat>& values) {
    std::vector<Tensor<double>> consts;
    for (const auto& m : values) consts.emplace_back(m);
    return loss(consts).item();
  };

  GradCheck result;
  stochpool::Rng rng(seed);
  std::vector<Mat> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Mat analytic_full = leaves[i].grad();
    std::vector<Eigen::Index> coords(static_cast<std::size_t>(inputs[i].size()));
    for (std::size_t c = 0; c < coords.size(); ++c) coords[c] = static_cast<Eigen::Index>(c);
    if (coords.size() > max_entries) {
      for (std::size_t c = 0; c < max_entries; ++c) {
        std::swap(coords[c], coords[c + rng.uniform_index(coords.size() - c)]);
      }
      coords.resize(max_entries);
    }
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (auto c : coords) {
      const double saved = probe[i].data()[c];
      probe[i].data()[c] = saved + step;
      const double up = evaluate(probe);
      probe[i].data()[c] = saved - step;
      const double down = evaluate(probe);
      probe[i].data()[c] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = analytic_full.data()[c];
      diff2 += (analytic - numeric) * (analytic - numeric);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
    }
    // Identically-zero gradients (key biases under softmax) see only roundoff, which scales with |loss|.
    const double denom = std::max(std::sqrt(std::max(a2, n2)), floor);
    const double rel = std::sqrt(diff2) / denom;
    result.worst_relative_error = std::max(result.worst_relative_error, rel);
    result.entries_checked += coords.size();
  }
  return result;
}

// Plain post-LN transformer encoder built directly from ops with the model's parameters.
inline stochpool::Tensor<double> plain_encoder(const stochpool::EncoderModel<double>& model, const stochpool::Tensor<double>& features) {
  using namespace stochpool;
  const auto p = model.constants();
  const auto& L = model.layout();
  const auto h = model.config().heads;
  const auto dh = model.config().model_dim / h;
  auto x = features;
  auto pos = conv1d(x, p[L.pos_w], p[L.pos_b], model.pos_conv_spec());
  x = layer_norm(add(x, gelu(pos)), p[L.enc_ln_g], p[L.enc_ln_b]);
  for (const auto& s : L.layers) {
    const auto q = linear(x, p[s.wq], p[s.bq]), k = linear(x, p[s.wk], p[s.bk]), v = linear(x, p[s.wv], p[s.bv]);
    std::vector<Tensor<double>> heads;
    for (int i = 0; i < h; ++i) heads.push_back(attend(slice_cols(q, i * dh, dh), slice_cols(k, i * dh, dh), slice_cols(v, i * dh, dh)));
    const auto attn = linear(concat_cols(heads), p[s.wo], p[s.bo]);
    x = layer_norm(add(x, attn), p[s.ln1_g], p[s.ln1_b]);
    const auto ff = linear(gelu(linear(x, p[s.ff1_w], p[s.ff1_b])), p[s.ff2_w], p[s.ff2_b]);
    x = layer_norm(add(x, ff), p[s.ln2_g], p[s.ln2_b]);
  }
  return x;
}

// Sums path probabilities over all (V+1)^T frame labellings whose collapse
// equals `labels`.
inline double brute_force_nll(const Mat& logits, const stochpool::LabelSeq& labels) {
  const Eigen::Index frames = logits.rows(), classes = logits.cols();
  Mat probs(frames, classes);
  for (Eigen::Index t = 0; t < frames; ++t) {
    double z = 0.0;
    for (Eigen::Index k = 0; k < classes; ++k) z += std::exp(logits(t, k));
    for (Eigen::Index k = 0; k < classes; ++k) probs(t, k) = std::exp(logits(t, k)) / z;
  }
  std::vector<int> path(static_cast<std::size_t>(frames), 0);
  double total = 0.0;
  while (true) {
    stochpool::LabelSeq collapsed;
    int prev = -1;
    for (int k : path) {
      if (k != 0 && k != prev) collapsed.push_back(k);
      prev = k;
    }
    if (collapsed == labels) {
      double p = 1.0;
      for (Eigen::Index t = 0; t < frames; ++t) p *= probs(t, path[static_cast<std::size_t>(t)]);
      total += p;
    }
    std::size_t i = 0;
    while (i < path.size() && ++path[i] == classes) path[i++] = 0;
    if (i == path.size()) break;
  }
  return -std::log(total);
}

}  // namespace testing
