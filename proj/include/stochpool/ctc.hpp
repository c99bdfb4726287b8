// CTC loss (log-space forward-backward) and greedy decoding. Blank is label 0.
#pragma once

#include "stochpool/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace stochpool {

inline constexpr int kBlank = 0;

using LabelSeq = std::vector<int>;

class CtcInfeasible : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Minimum frame count needed to emit `labels`: one frame per label plus a
/// separating blank between equal neighbours.
inline std::size_t ctc_min_frames(const LabelSeq& labels) {
  std::size_t n = labels.size();
  for (std::size_t i = 1; i < labels.size(); ++i) n += labels[i] == labels[i - 1] ? 1 : 0;
  return n;
}

namespace detail {

template <typename Scalar>
Scalar log_add(Scalar a, Scalar b) {
  constexpr Scalar ninf = -std::numeric_limits<Scalar>::infinity();
  if (a == ninf) return b;
  if (b == ninf) return a;
  const Scalar m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace detail

/// Negative log-likelihood of `labels` given per-frame log-probabilities
/// [T×(V+1)]; differentiable with respect to the log-probabilities.
template <typename Scalar>
Tensor<Scalar> ctc_nll(const Tensor<Scalar>& log_probs, const LabelSeq& labels) {
  const Eigen::Index frames = log_probs.rows();
  const Eigen::Index classes = log_probs.cols();
  if (frames < 1 || classes < 2) throw DimensionError("ctc: need T >= 1 and V >= 1, got " + log_probs.shape_string());
  for (int l : labels) {
    if (l < 1 || l >= classes) {
      throw std::invalid_argument("ctc: label " + std::to_string(l) + " outside 1.." + std::to_string(classes - 1));
    }
  }
  if (ctc_min_frames(labels) > static_cast<std::size_t>(frames)) {
    throw CtcInfeasible("ctc: " + std::to_string(labels.size()) + " labels need " +
                        std::to_string(ctc_min_frames(labels)) + " frames, only " + std::to_string(frames) +
                        " available");
  }
  constexpr Scalar ninf = -std::numeric_limits<Scalar>::infinity();
  // Extended sequence: blank, l1, blank, l2, ..., blank.
  const Eigen::Index states = 2 * static_cast<Eigen::Index>(labels.size()) + 1;
  std::vector<int> ext(static_cast<std::size_t>(states), kBlank);
  for (std::size_t i = 0; i < labels.size(); ++i) ext[2 * i + 1] = labels[i];
  const auto skip_allowed = [ext](Eigen::Index s) {
    return s >= 2 && ext[static_cast<std::size_t>(s)] != kBlank &&
           ext[static_cast<std::size_t>(s)] != ext[static_cast<std::size_t>(s - 2)];
  };
  const auto& lp = log_probs.value();
  const auto emit = [&](Eigen::Index t, Eigen::Index s) { return lp(t, ext[static_cast<std::size_t>(s)]); };

  Matrix<Scalar> alpha = Matrix<Scalar>::Constant(frames, states, ninf);
  alpha(0, 0) = emit(0, 0);
  if (states > 1) alpha(0, 1) = emit(0, 1);
  for (Eigen::Index t = 1; t < frames; ++t) {
    for (Eigen::Index s = 0; s < states; ++s) {
      Scalar a = alpha(t - 1, s);
      if (s >= 1) a = detail::log_add(a, alpha(t - 1, s - 1));
      if (skip_allowed(s)) a = detail::log_add(a, alpha(t - 1, s - 2));
      alpha(t, s) = a == ninf ? ninf : a + emit(t, s);
    }
  }
  Scalar log_p = alpha(frames - 1, states - 1);
  if (states > 1) log_p = detail::log_add(log_p, alpha(frames - 1, states - 2));

  Matrix<Scalar> out(1, 1);
  out(0, 0) = -log_p;
  return detail::make_result<Scalar>(
      std::move(out), {&log_probs}, [log_probs, ext, alpha, log_p, states, frames, skip_allowed](detail::Node<Scalar>& self) {
        constexpr Scalar ninf = -std::numeric_limits<Scalar>::infinity();
        const auto& lp = log_probs.value();
        Matrix<Scalar> beta = Matrix<Scalar>::Constant(frames, states, ninf);
        beta(frames - 1, states - 1) = lp(frames - 1, ext[static_cast<std::size_t>(states - 1)]);
        if (states > 1) beta(frames - 1, states - 2) = lp(frames - 1, ext[static_cast<std::size_t>(states - 2)]);
        for (Eigen::Index t = frames - 2; t >= 0; --t) {
          for (Eigen::Index s = 0; s < states; ++s) {
            Scalar b = beta(t + 1, s);
            if (s + 1 < states) b = detail::log_add(b, beta(t + 1, s + 1));
            if (s + 2 < states && skip_allowed(s + 2)) b = detail::log_add(b, beta(t + 1, s + 2));
            beta(t, s) = b == ninf ? ninf : b + lp(t, ext[static_cast<std::size_t>(s)]);
          }
        }
        Matrix<Scalar> occupancy = Matrix<Scalar>::Constant(frames, lp.cols(), ninf);
        for (Eigen::Index t = 0; t < frames; ++t) {
          for (Eigen::Index s = 0; s < states; ++s) {
            const int k = ext[static_cast<std::size_t>(s)];
            if (alpha(t, s) == ninf || beta(t, s) == ninf) continue;
            occupancy(t, k) = detail::log_add(occupancy(t, k), alpha(t, s) + beta(t, s) - lp(t, k));
          }
        }
        Matrix<Scalar> g = (occupancy.array() - log_p).exp().matrix() * -self.grad(0, 0);
        detail::push_grad<Scalar>(log_probs, g);
      });
}

/// CTC negative log-likelihood from unnormalised per-frame scores.
template <typename Scalar>
Tensor<Scalar> ctc_loss(const Tensor<Scalar>& logits, const LabelSeq& labels) {
  return ctc_nll(log_softmax_rows(logits), labels);
}

/// Per-frame argmax (ties -> lowest index), collapse repeats, drop blanks.
template <typename Derived>
LabelSeq greedy_decode(const Eigen::MatrixBase<Derived>& logits) {
  LabelSeq out;
  int previous = -1;
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < logits.cols(); ++k) {
      if (logits(t, k) > logits(t, best)) best = k;
    }
    const int label = static_cast<int>(best);
    if (label != kBlank && label != previous) out.push_back(label);
    previous = label;
  }
  return out;
}

/// Levenshtein distance between two token sequences.
template <typename T>
std::size_t edit_distance(const std::vector<T>& ref, const std::vector<T>& hyp) {
  std::vector<std::size_t> row(hyp.size() + 1);
  for (std::size_t j = 0; j <= hyp.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (ref[i - 1] == hyp[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[hyp.size()];
}

/// Word (or symbol) error rate: edit distance / reference length.
double wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);

}  // namespace stochpool
