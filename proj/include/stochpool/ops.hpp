// Differentiable operators over Tensor.
//
// Broadcasting is limited to add_row_bias; every other shape mismatch raises
// DimensionError naming both shapes.
#pragma once

#include "stochpool/mac_counter.hpp"
#include "stochpool/tensor.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

namespace stochpool {

namespace detail {

template <typename Scalar>
void require_same_shape(const char* op, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree " + a.shape_string() + " x " +
                         b.shape_string());
  }
  count_macs(static_cast<std::uint64_t>(a.rows() * a.cols() * b.cols()));
  Matrix<Scalar> out = a.value() * b.value();
  return detail::make_result<Scalar>(std::move(out), {&a, &b}, [a, b](detail::Node<Scalar>& self) {
    if (a.requires_grad()) detail::push_grad<Scalar>(a, self.grad * b.value().transpose());
    if (b.requires_grad()) detail::push_grad<Scalar>(b, a.value().transpose() * self.grad);
  });
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape("add", a, b);
  return detail::make_result<Scalar>(a.value() + b.value(), {&a, &b}, [a, b](detail::Node<Scalar>& self) {
    detail::push_grad<Scalar>(a, self.grad);
    detail::push_grad<Scalar>(b, self.grad);
  });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape("sub", a, b);
  return detail::make_result<Scalar>(a.value() - b.value(), {&a, &b}, [a, b](detail::Node<Scalar>& self) {
    detail::push_grad<Scalar>(a, self.grad);
    detail::push_grad<Scalar>(b, Matrix<Scalar>(-self.grad));
  });
}

/// Elementwise product.
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape("mul", a, b);
  Matrix<Scalar> out = a.value().cwiseProduct(b.value());
  return detail::make_result<Scalar>(std::move(out), {&a, &b}, [a, b](detail::Node<Scalar>& self) {
    if (a.requires_grad()) detail::push_grad<Scalar>(a, self.grad.cwiseProduct(b.value()));
    if (b.requires_grad()) detail::push_grad<Scalar>(b, self.grad.cwiseProduct(a.value()));
  });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor) {
  return detail::make_result<Scalar>(a.value() * factor, {&a}, [a, factor](detail::Node<Scalar>& self) {
    detail::push_grad<Scalar>(a, Matrix<Scalar>(self.grad * factor));
  });
}

/// x[N×D] + bias[1×D] broadcast over rows.
template <typename Scalar>
Tensor<Scalar> add_row_bias(const Tensor<Scalar>& x, const Tensor<Scalar>& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw DimensionError("add_row_bias: bias " + bias.shape_string() + " does not fit " + x.shape_string());
  }
  Matrix<Scalar> out = x.value().rowwise() + bias.value().row(0);
  return detail::make_result<Scalar>(std::move(out), {&x, &bias}, [x, bias](detail::Node<Scalar>& self) {
    detail::push_grad<Scalar>(x, self.grad);
    if (bias.requires_grad()) detail::push_grad<Scalar>(bias, Matrix<Scalar>(self.grad.colwise().sum()));
  });
}

/// x·W + b, the position-wise affine map used throughout the encoder.
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias) {
  return add_row_bias(matmul(x, weight), bias);
}

/// Exact (erf-based) GELU.
template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x) {
  const Scalar inv_sqrt2 = Scalar(1) / std::sqrt(Scalar(2));
  Matrix<Scalar> out = x.value().unaryExpr(
      [inv_sqrt2](Scalar v) { return Scalar(0.5) * v * (Scalar(1) + std::erf(v * inv_sqrt2)); });
  return detail::make_result<Scalar>(std::move(out), {&x}, [x, inv_sqrt2](detail::Node<Scalar>& self) {
    const Scalar inv_sqrt_2pi = Scalar(1) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
    Matrix<Scalar> d = x.value().unaryExpr([&](Scalar v) {
      const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(v * inv_sqrt2));
      const Scalar pdf = inv_sqrt_2pi * std::exp(Scalar(-0.5) * v * v);
      return cdf + v * pdf;
    });
    detail::push_grad<Scalar>(x, Matrix<Scalar>(self.grad.cwiseProduct(d)));
  });
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  Matrix<Scalar> out = x.value().cwiseMax(Scalar(0));
  return detail::make_result<Scalar>(std::move(out), {&x}, [x](detail::Node<Scalar>& self) {
    Matrix<Scalar> g = (x.value().array() > Scalar(0)).select(self.grad, Scalar(0));
    detail::push_grad<Scalar>(x, g);
  });
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& x) {
  Matrix<Scalar> out = x.value().transpose();
  return detail::make_result<Scalar>(std::move(out), {&x}, [x](detail::Node<Scalar>& self) {
    detail::push_grad<Scalar>(x, Matrix<Scalar>(self.grad.transpose()));
  });
}

/// Reinterprets the row-major data with a new shape.
template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != x.size()) {
    throw DimensionError("reshape: cannot view " + x.shape_string() + " as [" + std::to_string(rows) + "x" +
                         std::to_string(cols) + "]");
  }
  Matrix<Scalar> out = Eigen::Map<const Matrix<Scalar>>(x.value().data(), rows, cols);
  const auto r = x.rows();
  const auto c = x.cols();
  return detail::make_result<Scalar>(std::move(out), {&x}, [x, r, c](detail::Node<Scalar>& self) {
    detail::push_grad<Scalar>(x, Matrix<Scalar>(Eigen::Map<const Matrix<Scalar>>(self.grad.data(), r, c)));
  });
}

template <typename Scalar>
Tensor<Scalar> slice_rows(const Tensor<Scalar>& x, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > x.rows()) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + x.shape_string());
  }
  Matrix<Scalar> out = x.value().middleRows(begin, count);
  return detail::make_result<Scalar>(std::move(out), {&x}, [x, begin, count](detail::Node<Scalar>& self) {
    Matrix<Scalar> g = Matrix<Scalar>::Zero(x.rows(), x.cols());
    g.middleRows(begin, count) = self.grad;
    detail::push_grad<Scalar>(x, g);
  });
}

template <typename Scalar>
Tensor<Scalar> slice_cols(const Tensor<Scalar>& x, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > x.cols()) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + x.shape_string());
  }
  Matrix<Scalar> out = x.value().middleCols(begin, count);
  return detail::make_result<Scalar>(std::move(out), {&x}, [x, begin, count](detail::Node<Scalar>& self) {
    Matrix<Scalar> g = Matrix<Scalar>::Zero(x.rows(), x.cols());
    g.middleCols(begin, count) = self.grad;
    detail::push_grad<Scalar>(x, g);
  });
}

/// Concatenates along columns (axis 1); all parts share the row count.
template <typename Scalar>
Tensor<Scalar> concat_cols(const std::vector<Tensor<Scalar>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  Eigen::Index total = 0;
  Tape<Scalar>* tape = nullptr;
  for (const auto& p : parts) {
    if (p.rows() != parts.front().rows()) {
      throw DimensionError("concat_cols: row mismatch " + parts.front().shape_string() + " vs " + p.shape_string());
    }
    total += p.cols();
    tape = detail::common_tape<Scalar>({&p}) ? p.tape() : tape;
  }
  Matrix<Scalar> out(parts.front().rows(), total);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  auto node = std::make_shared<detail::Node<Scalar>>();
  node->value = std::move(out);
  if (tape != nullptr) {
    for (const auto& p : parts) {
      if (p.tape() != nullptr && p.tape() != tape) throw UsageError("operands live on different tapes");
    }
    node->tape = tape;
    node->backward = [parts](detail::Node<Scalar>& self) {
      Eigen::Index offset = 0;
      for (const auto& p : parts) {
        if (p.requires_grad()) detail::push_grad<Scalar>(p, Matrix<Scalar>(self.grad.middleCols(offset, p.cols())));
        offset += p.cols();
      }
    };
    tape->record(node);
  }
  return Tensor<Scalar>(std::move(node));
}

/// Concatenates along rows (axis 0); all parts share the column count.
template <typename Scalar>
Tensor<Scalar> concat_rows(const std::vector<Tensor<Scalar>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  std::vector<Tensor<Scalar>> transposed;
  transposed.reserve(parts.size());
  for (const auto& p : parts) transposed.push_back(transpose(p));
  return transpose(concat_cols(transposed));
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  return detail::make_result<Scalar>(Matrix<Scalar>::Constant(1, 1, x.value().sum()), {&x},
                                     [x](detail::Node<Scalar>& self) {
                                       detail::push_grad<Scalar>(
                                           x, Matrix<Scalar>::Constant(x.rows(), x.cols(), self.grad(0, 0)));
                                     });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x) {
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.size()));
}

/// Row-wise softmax with max subtraction.
template <typename Scalar>
Tensor<Scalar> softmax_rows(const Tensor<Scalar>& x) {
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar m = x.value().row(r).maxCoeff();
    out.row(r) = (x.value().row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  Matrix<Scalar> y = out;
  return detail::make_result<Scalar>(std::move(out), {&x}, [x, y](detail::Node<Scalar>& self) {
    Matrix<Scalar> g(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const Scalar dot = self.grad.row(r).dot(y.row(r));
      g.row(r) = y.row(r).cwiseProduct((self.grad.row(r).array() - dot).matrix());
    }
    detail::push_grad<Scalar>(x, g);
  });
}

template <typename Scalar>
Tensor<Scalar> log_softmax_rows(const Tensor<Scalar>& x) {
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar m = x.value().row(r).maxCoeff();
    const Scalar lse = m + std::log((x.value().row(r).array() - m).exp().sum());
    out.row(r) = x.value().row(r).array() - lse;
  }
  Matrix<Scalar> y = out;
  return detail::make_result<Scalar>(std::move(out), {&x}, [x, y](detail::Node<Scalar>& self) {
    Matrix<Scalar> g(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const Scalar total = self.grad.row(r).sum();
      g.row(r) = self.grad.row(r) - (y.row(r).array().exp() * total).matrix();
    }
    detail::push_grad<Scalar>(x, g);
  });
}

/// Per-row normalisation followed by gamma/beta; gamma and beta are [1×D].
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                          Scalar eps = Scalar(1e-5)) {
  const Eigen::Index d = x.cols();
  if (d < 1) throw DimensionError("layer_norm: empty feature dimension");
  if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d) {
    throw DimensionError("layer_norm: gamma " + gamma.shape_string() + " / beta " + beta.shape_string() +
                         " do not fit " + x.shape_string());
  }
  Matrix<Scalar> xhat(x.rows(), d);
  std::vector<Scalar> inv_std(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar mu = x.value().row(r).mean();
    const Scalar var = (x.value().row(r).array() - mu).square().mean();
    inv_std[static_cast<std::size_t>(r)] = Scalar(1) / std::sqrt(var + eps);
    xhat.row(r) = (x.value().row(r).array() - mu) * inv_std[static_cast<std::size_t>(r)];
  }
  Matrix<Scalar> out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
                       beta.value().row(0).array();
  return detail::make_result<Scalar>(
      std::move(out), {&x, &gamma, &beta}, [x, gamma, beta, xhat, inv_std](detail::Node<Scalar>& self) {
        const auto& g = self.grad;
        if (gamma.requires_grad()) {
          detail::push_grad<Scalar>(gamma, Matrix<Scalar>(g.cwiseProduct(xhat).colwise().sum()));
        }
        if (beta.requires_grad()) detail::push_grad<Scalar>(beta, Matrix<Scalar>(g.colwise().sum()));
        if (x.requires_grad()) {
          const Scalar n = static_cast<Scalar>(xhat.cols());
          Matrix<Scalar> gx(xhat.rows(), xhat.cols());
          for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
            RowVector<Scalar> gh = g.row(r).cwiseProduct(gamma.value().row(0));
            const Scalar mean_gh = gh.sum() / n;
            const Scalar mean_ghx = gh.dot(xhat.row(r)) / n;
            gx.row(r) = inv_std[static_cast<std::size_t>(r)] *
                        (gh.array() - mean_gh - xhat.row(r).array() * mean_ghx).matrix();
          }
          detail::push_grad<Scalar>(x, gx);
        }
      });
}

/// Adds a constant matrix (e.g. an attention mask of 0 / -inf entries).
template <typename Scalar>
Tensor<Scalar> add_constant(const Tensor<Scalar>& x, const Matrix<Scalar>& c) {
  if (c.rows() != x.rows() || c.cols() != x.cols()) {
    throw DimensionError("add_constant: shape mismatch " + x.shape_string());
  }
  return detail::make_result<Scalar>(x.value() + c, {&x}, [x](detail::Node<Scalar>& self) {
    detail::push_grad<Scalar>(x, self.grad);
  });
}

/// Convolution geometry. Input is time-major [L × C_in]; output [L_out × C_out]
/// with L_out = floor((L + 2·padding − kernel) / stride) + 1.
struct Conv1dSpec {
  Eigen::Index in_channels = 1;
  Eigen::Index out_channels = 1;
  Eigen::Index kernel = 1;
  Eigen::Index stride = 1;
  Eigen::Index groups = 1;
  Eigen::Index padding = 0;

  void validate() const {
    if (kernel < 1) throw ConfigError("conv1d: kernel must be >= 1, got " + std::to_string(kernel));
    if (stride < 1) throw ConfigError("conv1d: stride must be >= 1, got " + std::to_string(stride));
    if (padding < 0) throw ConfigError("conv1d: padding must be >= 0");
    if (groups < 1 || in_channels % groups != 0 || out_channels % groups != 0) {
      throw ConfigError("conv1d: groups " + std::to_string(groups) + " must divide channels " +
                        std::to_string(in_channels) + " -> " + std::to_string(out_channels));
    }
  }
  Eigen::Index output_length(Eigen::Index length) const {
    const Eigen::Index span = length + 2 * padding - kernel;
    return span < 0 ? 0 : span / stride + 1;
  }
  /// Weight matrix shape: rows index (tap, in-channel-within-group), columns index out channels.
  Eigen::Index weight_rows() const { return kernel * (in_channels / groups); }
  std::uint64_t macs(Eigen::Index length) const {
    return static_cast<std::uint64_t>(output_length(length) * out_channels * (in_channels / groups) * kernel);
  }
};

/// Strided, grouped, zero-padded 1-D convolution (im2col per group).
/// weight: [kernel·(C_in/groups) × C_out]; bias: [1 × C_out].
template <typename Scalar>
Tensor<Scalar> conv1d(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                      const Conv1dSpec& spec) {
  spec.validate();
  if (x.cols() != spec.in_channels) {
    throw DimensionError("conv1d: input " + x.shape_string() + " has wrong channel count, expected " +
                         std::to_string(spec.in_channels));
  }
  if (weight.rows() != spec.weight_rows() || weight.cols() != spec.out_channels) {
    throw DimensionError("conv1d: weight " + weight.shape_string() + " does not match kernel/channels");
  }
  if (bias.rows() != 1 || bias.cols() != spec.out_channels) {
    throw DimensionError("conv1d: bias " + bias.shape_string() + " does not match output channels");
  }
  const Eigen::Index length = x.rows();
  const Eigen::Index out_len = spec.output_length(length);
  if (out_len < 1) {
    throw DimensionError("conv1d: input length " + std::to_string(length) + " shorter than kernel " +
                         std::to_string(spec.kernel));
  }
  const Eigen::Index cin_g = spec.in_channels / spec.groups;
  const Eigen::Index cout_g = spec.out_channels / spec.groups;

  auto im2col = [spec, out_len, cin_g, length](const Matrix<Scalar>& in, Eigen::Index g) {
    Matrix<Scalar> cols = Matrix<Scalar>::Zero(out_len, spec.kernel * cin_g);
    for (Eigen::Index t = 0; t < out_len; ++t) {
      for (Eigen::Index tap = 0; tap < spec.kernel; ++tap) {
        const Eigen::Index src = t * spec.stride + tap - spec.padding;
        if (src < 0 || src >= length) continue;
        cols.block(t, tap * cin_g, 1, cin_g) = in.block(src, g * cin_g, 1, cin_g);
      }
    }
    return cols;
  };

  count_macs(spec.macs(length));
  Matrix<Scalar> out(out_len, spec.out_channels);
  for (Eigen::Index g = 0; g < spec.groups; ++g) {
    out.middleCols(g * cout_g, cout_g).noalias() = im2col(x.value(), g) * weight.value().middleCols(g * cout_g, cout_g);
  }
  out.rowwise() += bias.value().row(0);

  return detail::make_result<Scalar>(
      std::move(out), {&x, &weight, &bias},
      [x, weight, bias, spec, im2col, out_len, cin_g, cout_g, length](detail::Node<Scalar>& self) {
        Matrix<Scalar> gx = Matrix<Scalar>::Zero(length, spec.in_channels);
        Matrix<Scalar> gw = Matrix<Scalar>::Zero(weight.rows(), weight.cols());
        for (Eigen::Index g = 0; g < spec.groups; ++g) {
          const Matrix<Scalar> go = self.grad.middleCols(g * cout_g, cout_g);
          if (weight.requires_grad()) gw.middleCols(g * cout_g, cout_g) = im2col(x.value(), g).transpose() * go;
          if (x.requires_grad()) {
            const Matrix<Scalar> gcols = go * weight.value().middleCols(g * cout_g, cout_g).transpose();
            for (Eigen::Index t = 0; t < out_len; ++t) {
              for (Eigen::Index tap = 0; tap < spec.kernel; ++tap) {
                const Eigen::Index src = t * spec.stride + tap - spec.padding;
                if (src < 0 || src >= length) continue;
                gx.block(src, g * cin_g, 1, cin_g) += gcols.block(t, tap * cin_g, 1, cin_g);
              }
            }
          }
        }
        detail::push_grad<Scalar>(x, gx);
        detail::push_grad<Scalar>(weight, gw);
        if (bias.requires_grad()) detail::push_grad<Scalar>(bias, Matrix<Scalar>(self.grad.colwise().sum()));
      });
}

/// Casts a constant tensor between precisions (no gradient flow).
template <typename To, typename From>
Matrix<To> cast_matrix(const Matrix<From>& m) {
  return m.template cast<To>();
}

}  // namespace stochpool
