// Mean-pool downsampling and replicate upsampling along the time axis.
//
// Windows are 0-based: output row i averages input rows [i·s, min((i+1)·s, N)).
// The last window may be partial and is divided by its actual row count
// rather than zero-padded. Upsampling repeats row ⌊i/s⌋ and can be truncated
// back to an original length so residual paths line up.
#pragma once

#include "stochpool/ops.hpp"

#include <atomic>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace stochpool {

/// Per-row validity; empty means "all rows valid".
using RowMask = std::vector<bool>;

struct PoolSpec {
  int factor = 1;
  std::optional<Eigen::Index> truncate_to;

  void validate() const {
    if (factor < 1) throw ConfigError("pooling factor must be >= 1, got " + std::to_string(factor));
  }
};

/// Fault-injection hook for the verification harness: when set, upsample
/// ignores truncate_to. Never enabled outside `verify --inject-fault`.
inline std::atomic<bool>& fault_skip_truncation() {
  static std::atomic<bool> flag{false};
  return flag;
}

inline Eigen::Index pooled_length(Eigen::Index n, int factor) { return (n + factor - 1) / factor; }

namespace detail {

/// Row weights of the linear downsample map; window i gets (row, weight) pairs.
template <typename Scalar>
std::vector<std::vector<std::pair<Eigen::Index, Scalar>>> downsample_weights(Eigen::Index n, int factor,
                                                                              const RowMask& mask,
                                                                              RowMask& pooled_mask) {
  const Eigen::Index out = pooled_length(n, factor);
  std::vector<std::vector<std::pair<Eigen::Index, Scalar>>> windows(static_cast<std::size_t>(out));
  pooled_mask.assign(static_cast<std::size_t>(out), true);
  for (Eigen::Index i = 0; i < out; ++i) {
    const Eigen::Index begin = i * factor;
    const Eigen::Index end = std::min<Eigen::Index>(begin + factor, n);
    std::vector<Eigen::Index> rows;
    if (!mask.empty()) {
      for (Eigen::Index r = begin; r < end; ++r) {
        if (mask[static_cast<std::size_t>(r)]) rows.push_back(r);
      }
    }
    if (rows.empty()) {
      // Either unmasked or a fully masked window: plain mean over the window.
      if (!mask.empty()) pooled_mask[static_cast<std::size_t>(i)] = false;
      for (Eigen::Index r = begin; r < end; ++r) rows.push_back(r);
    }
    const Scalar w = Scalar(1) / static_cast<Scalar>(rows.size());
    auto& window = windows[static_cast<std::size_t>(i)];
    for (auto r : rows) window.emplace_back(r, w);
  }
  if (mask.empty()) pooled_mask.clear();
  return windows;
}

}  // namespace detail

/// Mean-pool with key validity: windows average only their valid rows and are
/// valid iff any source row is valid. Returns the pooled tensor and mask.
template <typename Scalar>
std::pair<Tensor<Scalar>, RowMask> downsample_masked(const Tensor<Scalar>& x, int factor, const RowMask& mask) {
  PoolSpec{factor, {}}.validate();
  if (x.rows() < 1) throw DimensionError("downsample: empty sequence " + x.shape_string());
  if (!mask.empty() && static_cast<Eigen::Index>(mask.size()) != x.rows()) {
    throw DimensionError("downsample: mask length " + std::to_string(mask.size()) + " vs " + x.shape_string());
  }
  if (factor == 1) return {x, mask};
  RowMask pooled_mask;
  auto windows = detail::downsample_weights<Scalar>(x.rows(), factor, mask, pooled_mask);
  Matrix<Scalar> out = Matrix<Scalar>::Zero(static_cast<Eigen::Index>(windows.size()), x.cols());
  // Running mean: a window of identical rows reproduces the row exactly.
  for (std::size_t i = 0; i < windows.size(); ++i) {
    auto row = out.row(static_cast<Eigen::Index>(i));
    Scalar k = 0;
    for (const auto& entry : windows[i]) {
      k += Scalar(1);
      row += (x.value().row(entry.first) - row) / k;
    }
  }
  auto y = detail::make_result<Scalar>(std::move(out), {&x}, [x, windows](detail::Node<Scalar>& self) {
    Matrix<Scalar> g = Matrix<Scalar>::Zero(x.rows(), x.cols());
    for (std::size_t i = 0; i < windows.size(); ++i) {
      for (const auto& [r, w] : windows[i]) g.row(r) += w * self.grad.row(static_cast<Eigen::Index>(i));
    }
    detail::push_grad<Scalar>(x, g);
  });
  return {y, pooled_mask};
}

/// D(x, s): [N×D] → [⌈N/s⌉×D].
template <typename Scalar>
Tensor<Scalar> downsample(const Tensor<Scalar>& x, int factor) {
  return downsample_masked(x, factor, RowMask{}).first;
}

/// U(x, s): [N_p×D] → [N_p·s×D], optionally truncated to `truncate_to` rows.
template <typename Scalar>
Tensor<Scalar> upsample(const Tensor<Scalar>& x, int factor, std::optional<Eigen::Index> truncate_to = std::nullopt) {
  PoolSpec{factor, truncate_to}.validate();
  const Eigen::Index full = x.rows() * factor;
  const Eigen::Index length = fault_skip_truncation() ? full : truncate_to.value_or(full);
  if (length > full || length < 0) {
    throw DimensionError("upsample: truncate_to " + std::to_string(length) + " exceeds " + std::to_string(full) +
                         " rows available from " + x.shape_string() + " at factor " + std::to_string(factor));
  }
  if (factor == 1 && length == x.rows()) return x;
  Matrix<Scalar> out(length, x.cols());
  for (Eigen::Index i = 0; i < length; ++i) out.row(i) = x.value().row(i / factor);
  return detail::make_result<Scalar>(std::move(out), {&x}, [x, factor, length](detail::Node<Scalar>& self) {
    Matrix<Scalar> g = Matrix<Scalar>::Zero(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < length; ++i) g.row(i / factor) += self.grad.row(i);
    detail::push_grad<Scalar>(x, g);
  });
}

}  // namespace stochpool
