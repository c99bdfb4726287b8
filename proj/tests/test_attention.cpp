#include "doctest.h"
#include "support.hpp"

#include "stochpool/attention.hpp"

#include <algorithm>
#include <numeric>

using namespace stochpool;
using testing::Mat;

namespace {

AttentionWeights<double> random_weights(Rng& rng, Eigen::Index e, int heads) {
  auto m = [&](Eigen::Index r, Eigen::Index c) { return Tensor<double>(testing::random_matrix(rng, r, c, 0.4)); };
  return {m(e, e), m(1, e), m(e, e), m(1, e), m(e, e), m(1, e), m(e, e), m(1, e), heads};
}

// Standard multi-head attention assembled directly from attend().
Tensor<double> plain_multi_head(const Tensor<double>& x, const AttentionWeights<double>& w) {
  const auto q = linear(x, w.wq, w.bq), k = linear(x, w.wk, w.bk), v = linear(x, w.wv, w.bv);
  std::vector<Tensor<double>> heads;
  const auto dh = w.head_dim();
  for (int h = 0; h < w.heads; ++h) {
    heads.push_back(attend(slice_cols(q, h * dh, dh), slice_cols(k, h * dh, dh), slice_cols(v, h * dh, dh)));
  }
  return linear(concat_cols(heads), w.wo, w.bo);
}

}  // namespace

TEST_CASE("attend examples") {
  Rng rng(1);
  const Mat v = testing::random_matrix(rng, 1, 3);
  const Mat q = testing::random_matrix(rng, 4, 2);
  const Mat k = testing::random_matrix(rng, 1, 2);
  const Mat out = attend(Tensor<double>(q), Tensor<double>(k), Tensor<double>(v)).value();
  for (Eigen::Index r = 0; r < 4; ++r) CHECK((out.row(r) - v.row(0)).cwiseAbs().maxCoeff() < 1e-15);

  // Identical keys: uniform weights -> masked mean of values.
  Mat kk(3, 2);
  kk << 0.3, -1, 0.3, -1, 0.3, -1;
  const Mat vv = testing::random_matrix(rng, 3, 2);
  const RowMask mask{true, false, true};
  const Mat mean_out = attend(Tensor<double>(q), Tensor<double>(kk), Tensor<double>(vv), mask).value();
  const Mat expect = (vv.row(0) + vv.row(2)) / 2.0;
  for (Eigen::Index r = 0; r < 4; ++r) CHECK((mean_out.row(r) - expect).cwiseAbs().maxCoeff() < 1e-15);

  const Mat q4 = testing::random_matrix(rng, 4, 2);
  const Mat k4 = testing::random_matrix(rng, 4, 2);
  const Mat v4 = testing::random_matrix(rng, 4, 2);
  const Mat got = attend(Tensor<double>(q4), Tensor<double>(k4), Tensor<double>(v4)).value();
  CHECK((got - testing::loop_attention(q4, k4, v4)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("attend errors") {
  Rng rng(2);
  const Tensor<double> q(testing::random_matrix(rng, 2, 3));
  const Tensor<double> k(testing::random_matrix(rng, 4, 3));
  const Tensor<double> v(testing::random_matrix(rng, 4, 2));
  CHECK_THROWS_AS(attend(q, k, v, RowMask(4, false)), DimensionError);
  CHECK_THROWS_AS(attend(q, Tensor<double>(testing::random_matrix(rng, 4, 2)), v), DimensionError);
  CHECK_THROWS_AS(attend(q, k, Tensor<double>(testing::random_matrix(rng, 3, 2))), DimensionError);
}

TEST_CASE("pooled_attend examples") {
  Rng rng(3);
  const Tensor<double> q(testing::random_matrix(rng, 8, 4));
  const Tensor<double> k(testing::random_matrix(rng, 8, 4));
  const Tensor<double> v(testing::random_matrix(rng, 8, 4));
  CHECK(pooled_attend(q, k, v, {1, 1}).value() == attend(q, k, v).value());

  const Tensor<double> q2(testing::random_matrix(rng, 2, 4));
  const Tensor<double> k2(testing::random_matrix(rng, 2, 4));
  const Mat v2 = testing::random_matrix(rng, 2, 4);
  const Mat out = pooled_attend(q2, k2, Tensor<double>(v2), {2, 2}).value();
  const Mat vmean = (v2.row(0) + v2.row(1)) / 2.0;
  CHECK((out.row(0) - vmean).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((out.row(1) - vmean).cwiseAbs().maxCoeff() < 1e-15);

  // Composition oracle from already verified operators.
  const Mat composed = upsample(attend(downsample(q, 2), downsample(k, 2), downsample(v, 2)), 2, 8).value();
  CHECK((pooled_attend(q, k, v, {2, 2}).value() - composed).cwiseAbs().maxCoeff() < 1e-12);

  // Hand-pooled scalar-loop oracle.
  auto pool = [](const Mat& m, int s) {
    Mat out = Mat::Zero((m.rows() + s - 1) / s, m.cols());
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const Eigen::Index end = std::min<Eigen::Index>(m.rows(), (i + 1) * s);
      for (Eigen::Index r = i * s; r < end; ++r) out.row(i) += m.row(r) / static_cast<double>(end - i * s);
    }
    return out;
  };
  const Mat small = testing::loop_attention(pool(q.value(), 2), pool(k.value(), 2), pool(v.value(), 2));
  const Mat got = pooled_attend(q, k, v, {2, 2}).value();
  for (Eigen::Index r = 0; r < 8; ++r) CHECK((got.row(r) - small.row(r / 2)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("pooled attention invariants") {
  Rng rng(4);
  for (int trial = 0; trial < 40; ++trial) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.uniform_index(9));
    const Eigen::Index s = 1 + static_cast<Eigen::Index>(rng.uniform_index(9));
    const Tensor<double> q(testing::random_matrix(rng, n, 3));
    const Tensor<double> k(testing::random_matrix(rng, s, 3));
    const Mat vv = testing::random_matrix(rng, s, 2);
    const Tensor<double> v(vv);
    // Degenerate factors reduce to plain attention.
    CHECK((pooled_attend(q, k, v, {1, 1}).value() - attend(q, k, v).value()).cwiseAbs().maxCoeff() <= 1e-14);
    // Convex combination of value rows.
    const Mat out = attend(q, k, v).value();
    for (Eigen::Index c = 0; c < 2; ++c) {
      CHECK(out.col(c).minCoeff() >= vv.col(c).minCoeff() - 1e-12);
      CHECK(out.col(c).maxCoeff() <= vv.col(c).maxCoeff() + 1e-12);
    }
  }
  // Query pooling makes output blockwise constant.
  const Tensor<double> q(testing::random_matrix(rng, 10, 3));
  const Tensor<double> k(testing::random_matrix(rng, 10, 3));
  const Tensor<double> v(testing::random_matrix(rng, 10, 3));
  for (int sk : {1, 2, 3}) {
    const Mat out = pooled_attend(q, k, v, {2, sk}).value();
    for (int i = 0; i < 5; ++i) CHECK(out.row(2 * i) == out.row(2 * i + 1));
  }
}

TEST_CASE("permuting masked-out keys leaves the output unchanged") {
  Rng rng(5);
  const Mat q = testing::random_matrix(rng, 5, 4);
  Mat k = testing::random_matrix(rng, 7, 4);
  Mat v = testing::random_matrix(rng, 7, 3);
  const RowMask mask{true, false, true, false, false, true, true};
  const Mat base = attend(Tensor<double>(q), Tensor<double>(k), Tensor<double>(v), mask).value();
  // Rotate the masked rows 1 -> 3 -> 4 -> 1.
  Mat k2 = k, v2 = v;
  k2.row(3) = k.row(1), k2.row(4) = k.row(3), k2.row(1) = k.row(4);
  v2.row(3) = v.row(1), v2.row(4) = v.row(3), v2.row(1) = v.row(4);
  const Mat moved = attend(Tensor<double>(q), Tensor<double>(k2), Tensor<double>(v2), mask).value();
  CHECK((base - moved).cwiseAbs().maxCoeff() < 1e-12);
  // Arbitrary garbage in masked rows is also ignored.
  k2.row(1).setConstant(1e3);
  v2.row(4).setConstant(-1e3);
  const Mat junk = attend(Tensor<double>(q), Tensor<double>(k2), Tensor<double>(v2), mask).value();
  CHECK((base - junk).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("multi_head_pooled") {
  Rng rng(6);
  const Eigen::Index e = 8;
  const auto w = random_weights(rng, e, 2);
  const Tensor<double> x(testing::random_matrix(rng, 9, e));
  CHECK(multi_head_pooled(x, w, {1, 1}).value() == plain_multi_head(x, w).value());
  for (int sq = 1; sq <= 3; ++sq) {
    for (int sk = 1; sk <= 3; ++sk) {
      const auto y = multi_head_pooled(x, w, {sq, sk});
      CHECK(y.rows() == 9);
      CHECK(y.cols() == e);
      CHECK(y.value().allFinite());
    }
  }
  CHECK_THROWS_AS(multi_head_pooled(x, random_weights(rng, e, 3), {1, 1}), ConfigError);
}

TEST_CASE("multi_head_pooled gradients for factors in {1,2}^2") {
  Rng rng(7);
  const Eigen::Index e = 4;
  std::vector<Mat> inputs{testing::random_matrix(rng, 7, e)};
  for (int i = 0; i < 4; ++i) {
    inputs.push_back(testing::random_matrix(rng, e, e, 0.5));
    inputs.push_back(testing::random_matrix(rng, 1, e, 0.5));
  }
  Rng pr(70);
  const Mat proj = testing::random_matrix(pr, 7, e);
  for (int sq : {1, 2}) {
    for (int sk : {1, 2}) {
      CAPTURE(sq);
      CAPTURE(sk);
      const auto r = testing::check_gradients(
          [&](const std::vector<Tensor<double>>& v) {
            AttentionWeights<double> w{v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], 2};
            return sum(mul(multi_head_pooled(v[0], w, {sq, sk}), Tensor<double>(proj)));
          },
          inputs);
      CHECK(r.worst_relative_error < 1e-4);
    }
  }
}
