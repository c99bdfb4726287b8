// Squeezed-context encoder with per-layer pooled attention.
//
// Pipeline: audio -> conv feature extractor -> [T×E] features. The encoder
// mean-pools features by S_f, adds a grouped convolutional positional term,
// runs post-layer-norm transformer layers (each with its own (s_k, s_q)),
// replicate-upsamples back to T and applies a shared E->E projection. S_f = 1
// skips squeeze, upsample and projection entirely.
#pragma once

#include "stochpool/attention.hpp"
#include "stochpool/encoder_config.hpp"
#include "stochpool/ops.hpp"
#include "stochpool/pooling.hpp"
#include "stochpool/rng.hpp"
#include "stochpool/stochastic.hpp"

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace stochpool {

/// Bound parameter handles for one pass: constants for inference, tape
/// leaves for training. Indexed by the model's layout.
template <typename Scalar>
using ParamSet = std::vector<Tensor<Scalar>>;

struct ForwardOptions {
  /// Test hook: compute the last layer's FFN sublayer without its residual add.
  bool drop_final_residual = false;
};

template <typename Scalar>
class EncoderModel {
 public:
  struct LayerSlots {
    int wq, bq, wk, bk, wv, bv, wo, bo, ln1_g, ln1_b, ff1_w, ff1_b, ff2_w, ff2_b, ln2_g, ln2_b;
  };
  struct Layout {
    std::vector<int> fe_conv_w, fe_conv_b;
    int fe_ln_g = -1, fe_ln_b = -1, fe_proj_w = -1, fe_proj_b = -1;
    int mask_emb = -1, pos_w = -1, pos_b = -1, enc_ln_g = -1, enc_ln_b = -1;
    std::vector<LayerSlots> layers;
    int up_w = -1, up_b = -1;
    int head_w = -1, head_b = -1;
  };

  /// Fresh, seeded initialisation.
  EncoderModel(EncoderConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    build_layout();
    Rng root = Rng(seed).fork("init");
    for (std::size_t i = 0; i < names_.size(); ++i) {
      params_.push_back(Tensor<Scalar>(initial_value(i, root.fork(names_[i]))));
    }
  }

  /// From stored values in declaration order (names and shapes are checked).
  EncoderModel(EncoderConfig config, const std::vector<std::pair<std::string, Matrix<Scalar>>>& values)
      : config_(std::move(config)) {
    config_.validate();
    build_layout();
    if (values.size() != names_.size()) {
      throw DimensionError("model expects " + std::to_string(names_.size()) + " parameters, got " +
                           std::to_string(values.size()));
    }
    for (std::size_t i = 0; i < names_.size(); ++i) {
      const auto& [name, m] = values[i];
      if (name != names_[i] || m.rows() != shapes_[i].first || m.cols() != shapes_[i].second) {
        throw DimensionError("parameter " + std::to_string(i) + " '" + name + "' does not match expected '" +
                             names_[i] + "' [" + std::to_string(shapes_[i].first) + "x" +
                             std::to_string(shapes_[i].second) + "]");
      }
      params_.push_back(Tensor<Scalar>(m));
    }
  }

  const EncoderConfig& config() const { return config_; }
  const Layout& layout() const { return layout_; }
  const std::vector<std::string>& parameter_names() const { return names_; }
  std::size_t parameter_tensors() const { return params_.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.size());
    return n;
  }

  const Matrix<Scalar>& parameter(std::size_t i) const { return params_[i].value(); }
  void set_parameter(std::size_t i, Matrix<Scalar> value) {
    if (value.rows() != params_[i].rows() || value.cols() != params_[i].cols()) {
      throw DimensionError("set_parameter: shape mismatch for '" + names_[i] + "'");
    }
    params_[i] = Tensor<Scalar>(std::move(value));
  }

  std::vector<std::pair<std::string, Matrix<Scalar>>> named_values() const {
    std::vector<std::pair<std::string, Matrix<Scalar>>> out;
    for (std::size_t i = 0; i < names_.size(); ++i) out.emplace_back(names_[i], params_[i].value());
    return out;
  }

  template <typename To>
  EncoderModel<To> cast() const {
    std::vector<std::pair<std::string, Matrix<To>>> values;
    for (std::size_t i = 0; i < names_.size(); ++i) values.emplace_back(names_[i], params_[i].value().template cast<To>());
    return EncoderModel<To>(config_, values);
  }

  /// Replaces (or adds) a freshly initialised CTC output layer for `vocab_size` labels + blank.
  void reset_head(int vocab_size, std::uint64_t seed) {
    if (vocab_size < 1) throw ConfigError("CTC head needs vocab_size >= 1");
    const auto old = named_values();
    config_.vocab_size = vocab_size;
    names_.clear();
    shapes_.clear();
    build_layout();
    params_.clear();
    Rng root = Rng(seed).fork("head");
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (static_cast<int>(i) == layout_.head_w || static_cast<int>(i) == layout_.head_b) {
        params_.push_back(Tensor<Scalar>(initial_value(i, root.fork(names_[i]))));
      } else {
        params_.push_back(Tensor<Scalar>(old[i].second));
      }
    }
  }

  ParamSet<Scalar> constants() const { return params_; }

  ParamSet<Scalar> watch(Tape<Scalar>& tape) const {
    ParamSet<Scalar> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(tape.variable(p.value()));
    return out;
  }

  /// 16 kHz mono samples -> [T×E] frame features.
  Tensor<Scalar> extract_features(const ParamSet<Scalar>& p, std::span<const Scalar> audio) const {
    const auto& fe = config_.feature_extractor;
    if (static_cast<std::int64_t>(audio.size()) < fe.receptive_field()) {
      throw std::invalid_argument("audio too short: " + std::to_string(audio.size()) + " samples, need at least " +
                                  std::to_string(fe.receptive_field()));
    }
    MacScope scope(MacCategory::FeatureExtractor);
    Matrix<Scalar> samples(static_cast<Eigen::Index>(audio.size()), 1);
    for (std::size_t i = 0; i < audio.size(); ++i) samples(static_cast<Eigen::Index>(i), 0) = audio[i];
    Tensor<Scalar> x(std::move(samples));
    for (std::size_t l = 0; l < fe.layers.size(); ++l) {
      x = gelu(conv1d(x, p[idx(layout_.fe_conv_w[l])], p[idx(layout_.fe_conv_b[l])], fe_conv_spec(l)));
    }
    x = layer_norm(x, p[idx(layout_.fe_ln_g)], p[idx(layout_.fe_ln_b)]);
    return linear(x, p[idx(layout_.fe_proj_w)], p[idx(layout_.fe_proj_b)]);
  }

  void check_config(const CompressionConfig& c) const { validate_config(config_, c); }

  /// Throws ConfigError unless `c` fits a model built from `config`.
  static void validate_config(const EncoderConfig& config, const CompressionConfig& c) {
    if (c.depth() != config.depth) {
      throw ConfigError("compression config has " + std::to_string(c.depth()) + " layers, model has " +
                        std::to_string(config.depth));
    }
    if (c.s_f < 1 || c.s_f > config.max_squeeze) {
      throw ConfigError("squeeze factor " + std::to_string(c.s_f) + " outside supported 1.." +
                        std::to_string(config.max_squeeze));
    }
    for (const auto& f : c.per_layer) {
      f.validate();
      if (f.s_k > config.max_kv || f.s_q > config.max_q) {
        throw ConfigError("pool factors " + c.to_string() + " exceed supported ceilings (kv " +
                          std::to_string(config.max_kv) + ", q " + std::to_string(config.max_q) + ")");
      }
    }
  }

  /// [T×E] features -> [T×E] contextual representations.
  Tensor<Scalar> forward(const ParamSet<Scalar>& p, const Tensor<Scalar>& features, const CompressionConfig& c,
                         const RowMask& mask = {}, const ForwardOptions& opts = {}) const {
    check_config(c);
    if (features.cols() != config_.model_dim) {
      throw DimensionError("forward: features " + features.shape_string() + " expect width " +
                           std::to_string(config_.model_dim));
    }
    const Eigen::Index frames = features.rows();
    auto [x, m] = downsample_masked(features, c.s_f, mask);
    if (!m.empty()) x = mul(x, Tensor<Scalar>(mask_matrix(m, x.cols())));
    {
      MacScope scope(MacCategory::FeatureExtractor);
      auto pos = conv1d(x, p[idx(layout_.pos_w)], p[idx(layout_.pos_b)], pos_conv_spec());
      x = layer_norm(add(x, gelu(pos)), p[idx(layout_.enc_ln_g)], p[idx(layout_.enc_ln_b)]);
    }
    for (std::size_t l = 0; l < layout_.layers.size(); ++l) {
      const auto& s = layout_.layers[l];
      const auto attn = multi_head_pooled(x, attention_weights(p, s), c.per_layer[l], m);
      x = layer_norm(add(x, attn), p[idx(s.ln1_g)], p[idx(s.ln1_b)]);
      Tensor<Scalar> h;
      {
        MacScope scope(MacCategory::Ffn);
        h = linear(gelu(linear(x, p[idx(s.ff1_w)], p[idx(s.ff1_b)])), p[idx(s.ff2_w)], p[idx(s.ff2_b)]);
      }
      const bool last = l + 1 == layout_.layers.size();
      x = layer_norm(last && opts.drop_final_residual ? h : add(x, h), p[idx(s.ln2_g)], p[idx(s.ln2_b)]);
    }
    if (c.s_f > 1) {
      x = upsample(x, c.s_f, frames);
      MacScope scope(MacCategory::Upsample);
      x = linear(x, p[idx(layout_.up_w)], p[idx(layout_.up_b)]);
    }
    return x;
  }

  /// Encoder output -> [T×(V+1)] CTC logits (blank = column 0).
  Tensor<Scalar> head_logits(const ParamSet<Scalar>& p, const Tensor<Scalar>& encoded) const {
    if (!config_.has_head()) throw ConfigError("model has no CTC head");
    MacScope scope(MacCategory::Other);
    return linear(encoded, p[idx(layout_.head_w)], p[idx(layout_.head_b)]);
  }

  /// Replaces masked rows with the learned mask embedding (pre-training).
  Tensor<Scalar> apply_frame_mask(const ParamSet<Scalar>& p, const Tensor<Scalar>& features,
                                  const std::vector<bool>& masked) const {
    Matrix<Scalar> keep = Matrix<Scalar>::Ones(features.rows(), features.cols());
    Matrix<Scalar> sel = Matrix<Scalar>::Zero(features.rows(), 1);
    for (Eigen::Index t = 0; t < features.rows(); ++t) {
      if (masked[static_cast<std::size_t>(t)]) {
        keep.row(t).setZero();
        sel(t, 0) = Scalar(1);
      }
    }
    MacScope scope(MacCategory::Other);
    return add(mul(features, Tensor<Scalar>(std::move(keep))), matmul(Tensor<Scalar>(std::move(sel)), p[idx(layout_.mask_emb)]));
  }

  AttentionWeights<Scalar> attention_weights(const ParamSet<Scalar>& p, const LayerSlots& s) const {
    return {p[idx(s.wq)], p[idx(s.bq)], p[idx(s.wk)], p[idx(s.bk)], p[idx(s.wv)],
            p[idx(s.bv)], p[idx(s.wo)], p[idx(s.bo)], config_.heads};
  }

  Conv1dSpec fe_conv_spec(std::size_t l) const {
    const auto& fe = config_.feature_extractor;
    const Eigen::Index cin = l == 0 ? 1 : fe.channels(l - 1);
    return {cin, fe.channels(l), fe.layers[l].kernel, fe.layers[l].stride, 1, 0};
  }

  Conv1dSpec pos_conv_spec() const {
    const Eigen::Index e = config_.model_dim;
    return {e, e, config_.pos_conv_kernel, 1, config_.pos_conv_groups, (config_.pos_conv_kernel - 1) / 2};
  }

 private:
  static std::size_t idx(int slot) { return static_cast<std::size_t>(slot); }

  static Matrix<Scalar> mask_matrix(const RowMask& m, Eigen::Index cols) {
    Matrix<Scalar> out(static_cast<Eigen::Index>(m.size()), cols);
    for (std::size_t i = 0; i < m.size(); ++i) out.row(static_cast<Eigen::Index>(i)).setConstant(m[i] ? Scalar(1) : Scalar(0));
    return out;
  }

  int declare(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    names_.push_back(name);
    shapes_.emplace_back(rows, cols);
    return static_cast<int>(names_.size() - 1);
  }

  void build_layout() {
    layout_ = Layout{};
    const auto& fe = config_.feature_extractor;
    const Eigen::Index e = config_.model_dim;
    for (std::size_t l = 0; l < fe.layers.size(); ++l) {
      const auto spec = fe_conv_spec(l);
      const std::string prefix = "fe.conv" + std::to_string(l);
      layout_.fe_conv_w.push_back(declare(prefix + ".weight", spec.weight_rows(), spec.out_channels));
      layout_.fe_conv_b.push_back(declare(prefix + ".bias", 1, spec.out_channels));
    }
    const Eigen::Index c_out = fe.output_channels();
    layout_.fe_ln_g = declare("fe.norm.gamma", 1, c_out);
    layout_.fe_ln_b = declare("fe.norm.beta", 1, c_out);
    layout_.fe_proj_w = declare("fe.proj.weight", c_out, e);
    layout_.fe_proj_b = declare("fe.proj.bias", 1, e);
    layout_.mask_emb = declare("mask_embedding", 1, e);
    const auto pos = pos_conv_spec();
    layout_.pos_w = declare("pos_conv.weight", pos.weight_rows(), e);
    layout_.pos_b = declare("pos_conv.bias", 1, e);
    layout_.enc_ln_g = declare("encoder.norm.gamma", 1, e);
    layout_.enc_ln_b = declare("encoder.norm.beta", 1, e);
    const Eigen::Index f = config_.ffn_dim;
    for (int l = 0; l < config_.depth; ++l) {
      const std::string pre = "layers." + std::to_string(l) + ".";
      LayerSlots s{};
      s.wq = declare(pre + "attn.q.weight", e, e);
      s.bq = declare(pre + "attn.q.bias", 1, e);
      s.wk = declare(pre + "attn.k.weight", e, e);
      s.bk = declare(pre + "attn.k.bias", 1, e);
      s.wv = declare(pre + "attn.v.weight", e, e);
      s.bv = declare(pre + "attn.v.bias", 1, e);
      s.wo = declare(pre + "attn.out.weight", e, e);
      s.bo = declare(pre + "attn.out.bias", 1, e);
      s.ln1_g = declare(pre + "norm1.gamma", 1, e);
      s.ln1_b = declare(pre + "norm1.beta", 1, e);
      s.ff1_w = declare(pre + "ffn.fc1.weight", e, f);
      s.ff1_b = declare(pre + "ffn.fc1.bias", 1, f);
      s.ff2_w = declare(pre + "ffn.fc2.weight", f, e);
      s.ff2_b = declare(pre + "ffn.fc2.bias", 1, e);
      s.ln2_g = declare(pre + "norm2.gamma", 1, e);
      s.ln2_b = declare(pre + "norm2.beta", 1, e);
      layout_.layers.push_back(s);
    }
    if (config_.has_squeeze()) {
      layout_.up_w = declare("squeeze.upsample.weight", e, e);
      layout_.up_b = declare("squeeze.upsample.bias", 1, e);
    }
    if (config_.has_head()) {
      layout_.head_w = declare("head.weight", e, config_.vocab_size + 1);
      layout_.head_b = declare("head.bias", 1, config_.vocab_size + 1);
    }
  }

  Matrix<Scalar> initial_value(std::size_t i, Rng rng) const {
    const auto [rows, cols] = shapes_[i];
    const std::string& name = names_[i];
    const auto ends_with = [&name](std::string_view suffix) {
      return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (ends_with(".gamma")) return Matrix<Scalar>::Ones(rows, cols);
    if (ends_with(".beta") || ends_with(".bias")) return Matrix<Scalar>::Zero(rows, cols);
    // Weights: N(0, 1/fan_in); the mask embedding is N(0, 1).
    const double stddev = name == "mask_embedding" ? 1.0 : 1.0 / std::sqrt(static_cast<double>(rows));
    Matrix<Scalar> m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = static_cast<Scalar>(stddev * rng.normal());
    }
    return m;
  }

  EncoderConfig config_;
  Layout layout_;
  std::vector<std::string> names_;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes_;
  std::vector<Tensor<Scalar>> params_;
};

}  // namespace stochpool
