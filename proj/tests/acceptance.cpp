// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance            all criteria
//   acceptance 2 5 9      a subset
#include "support.hpp"

#include "stochpool/attention.hpp"
#include "stochpool/cost_model.hpp"
#include "stochpool/run_config.hpp"
#include "stochpool/training.hpp"

#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

using namespace stochpool;
using testing::Mat;

namespace {

enum class Verdict { Pass, SoftFail, Fail };

struct Outcome {
  Verdict verdict = Verdict::Pass;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Accumulates worst-case numbers across many checks for one criterion.
struct Tally {
  bool ok = true;
  std::ostringstream failures;
  void require(bool cond, const std::string& what) {
    if (!cond && ok) failures << what;
    ok = ok && cond;
  }
  Outcome finish(const std::string& summary) const {
    return {ok ? Verdict::Pass : Verdict::Fail, ok ? summary : summary + "; first failure: " + failures.str()};
  }
};

// 1 ----------------------------------------------------------------------

Mat loop_multi_head(const Mat& x, const AttentionWeights<double>& w) {
  const auto proj = [&](const Tensor<double>& W, const Tensor<double>& b) {
    Mat y = testing::loop_matmul(x, W.value());
    for (Eigen::Index r = 0; r < y.rows(); ++r) y.row(r) += b.value().row(0);
    return y;
  };
  const Mat q = proj(w.wq, w.bq), k = proj(w.wk, w.bk), v = proj(w.wv, w.bv);
  const auto dh = w.head_dim();
  Mat merged(x.rows(), x.cols());
  for (int h = 0; h < w.heads; ++h) {
    merged.middleCols(h * dh, dh) =
        testing::loop_attention(q.middleCols(h * dh, dh), k.middleCols(h * dh, dh), v.middleCols(h * dh, dh));
  }
  Mat out = testing::loop_matmul(merged, w.wo.value());
  for (Eigen::Index r = 0; r < out.rows(); ++r) out.row(r) += w.bo.value().row(0);
  return out;
}

Outcome degenerate_equivalence() {
  Rng rng(101);
  double attn_err = 0.0, mha_err = 0.0, enc_err = 0.0;
  for (Eigen::Index t : {1, 2, 7, 16, 33}) {
    const Mat q = testing::random_matrix(rng, t, 8), k = testing::random_matrix(rng, t, 8), v = testing::random_matrix(rng, t, 8);
    const Mat pooled = pooled_attend(Tensor<double>(q), Tensor<double>(k), Tensor<double>(v), {1, 1}).value();
    attn_err = std::max(attn_err, (pooled - testing::loop_attention(q, k, v)).cwiseAbs().maxCoeff());

    auto m = [&](Eigen::Index r, Eigen::Index c) { return Tensor<double>(testing::random_matrix(rng, r, c, 0.4)); };
    const AttentionWeights<double> w{m(8, 8), m(1, 8), m(8, 8), m(1, 8), m(8, 8), m(1, 8), m(8, 8), m(1, 8), 2};
    const Mat x = testing::random_matrix(rng, t, 8);
    mha_err = std::max(mha_err, (multi_head_pooled(Tensor<double>(x), w, {1, 1}).value() - loop_multi_head(x, w)).cwiseAbs().maxCoeff());
  }
  const auto cfg = preset("tiny");
  for (std::uint64_t seed : {1, 2, 3}) {
    const EncoderModel<double> model(cfg, seed);
    for (Eigen::Index t : {5, 24, 61}) {
      const Tensor<double> x(testing::random_matrix(rng, t, cfg.model_dim));
      const Mat a = model.forward(model.constants(), x, fixed_config(1, 1, 1, cfg.depth)).value();
      enc_err = std::max(enc_err, (a - testing::plain_encoder(model, x).value()).cwiseAbs().maxCoeff());
    }
  }
  const bool ok = attn_err < 1e-14 && mha_err < 1e-14 && enc_err < 1e-12;
  return {ok ? Verdict::Pass : Verdict::Fail, "max |pooled-plain| attention " + fmt("%.2e", attn_err) + ", multi-head " +
                                                  fmt("%.2e", mha_err) + " (tol 1e-14); encoder " + fmt("%.2e", enc_err) +
                                                  " (tol 1e-12)"};
}

// 2 ----------------------------------------------------------------------

Outcome operator_laws() {
  Rng rng(202);
  Tally tally;
  double lin = 0.0;
  int cases = 0;
  for (Eigen::Index n = 1; n <= 64; ++n) {
    for (int s = 1; s <= 4; ++s) {
      const std::string where = "T=" + std::to_string(n) + " s=" + std::to_string(s);
      const Mat x = testing::random_matrix(rng, n, 4), y = testing::random_matrix(rng, n, 4);
      const Mat p = testing::random_matrix(rng, pooled_length(n, s), 4);
      const Tensor<double> tx(x), ty(y);
      const Mat dx = downsample(tx, s).value();
      tally.require(dx.rows() == (n + s - 1) / s, where + " length law");
      tally.require(upsample(Tensor<double>(p), s).rows() == pooled_length(n, s) * s, where + " upsample length");
      tally.require(downsample(Tensor<double>(upsample(Tensor<double>(p), s).value()), s).value() == p, where + " round trip");
      tally.require(downsample(Tensor<double>(upsample(Tensor<double>(x), s).value()), s).value() == x, where + " round trip");
      if (s == 1) {
        tally.require(dx == x, where + " identity");
        tally.require(upsample(tx, 1).value() == x, where + " identity");
      }
      const double a = rng.normal(), b = rng.normal();
      const Tensor<double> combo(Mat(a * x + b * y));
      lin = std::max(lin, (downsample(combo, s).value() - (a * dx + b * downsample(ty, s).value())).cwiseAbs().maxCoeff());
      lin = std::max(lin, (upsample(combo, s).value() - (a * upsample(tx, s).value() + b * upsample(ty, s).value()))
                              .cwiseAbs()
                              .maxCoeff());
      ++cases;
    }
  }
  tally.require(lin < 1e-12, "linearity " + fmt("%.2e", lin));
  return tally.finish(std::to_string(cases) + " (T, s) cases; length, identity, round trip exact; linearity max " +
                      fmt("%.2e", lin) + " (tol 1e-12)");
}

// 3 ----------------------------------------------------------------------

Outcome gradient_suite() {
  Rng rng(303);
  auto R = [&](Eigen::Index r, Eigen::Index c) { return testing::random_matrix(rng, r, c); };
  using V = std::vector<Tensor<double>>;
  auto project = [](const Tensor<double>& y, std::uint64_t s) {
    Rng r(s);
    return sum(mul(y, Tensor<double>(testing::random_matrix(r, y.rows(), y.cols()))));
  };
  struct Case {
    std::string name;
    std::function<Tensor<double>(const V&)> fn;
    std::vector<Mat> inputs;
  };
  const Conv1dSpec conv{4, 4, 3, 2, 2, 1};
  Mat shift = R(4, 5);
  const RowMask key_mask{true, false, true, true, false, true, true};
  std::vector<Case> cases = {
      {"matmul", [&](const V& v) { return project(matmul(v[0], v[1]), 1); }, {R(5, 4), R(4, 3)}},
      {"add", [&](const V& v) { return project(add(v[0], v[1]), 2); }, {R(3, 3), R(3, 3)}},
      {"sub", [&](const V& v) { return project(sub(v[0], v[1]), 3); }, {R(3, 3), R(3, 3)}},
      {"mul", [&](const V& v) { return project(mul(v[0], v[1]), 4); }, {R(4, 2), R(4, 2)}},
      {"scale", [&](const V& v) { return project(scale(v[0], -1.7), 5); }, {R(2, 5)}},
      {"add_row_bias", [&](const V& v) { return project(add_row_bias(v[0], v[1]), 6); }, {R(6, 3), R(1, 3)}},
      {"add_constant", [&](const V& v) { return project(add_constant(v[0], shift), 7); }, {R(4, 5)}},
      {"linear", [&](const V& v) { return project(linear(v[0], v[1], v[2]), 8); }, {R(5, 4), R(4, 3), R(1, 3)}},
      {"gelu", [&](const V& v) { return project(gelu(v[0]), 9); }, {R(8, 8)}},
      {"relu", [&](const V& v) { return project(relu(v[0]), 10); }, {R(8, 8)}},
      {"transpose", [&](const V& v) { return project(transpose(v[0]), 11); }, {R(3, 5)}},
      {"reshape", [&](const V& v) { return project(reshape(v[0], 5, 3), 12); }, {R(3, 5)}},
      {"slice_rows", [&](const V& v) { return project(slice_rows(v[0], 1, 3), 13); }, {R(5, 2)}},
      {"slice_cols", [&](const V& v) { return project(slice_cols(v[0], 2, 2), 14); }, {R(3, 5)}},
      {"concat_cols", [&](const V& v) { return project(concat_cols<double>({v[0], v[1]}), 15); }, {R(3, 2), R(3, 4)}},
      {"concat_rows", [&](const V& v) { return project(concat_rows<double>({v[0], v[1]}), 16); }, {R(2, 3), R(4, 3)}},
      {"sum", [&](const V& v) { return sum(mul(v[0], v[0])); }, {R(4, 4)}},
      {"mean", [&](const V& v) { return mean(mul(v[0], v[0])); }, {R(4, 4)}},
      {"softmax_rows", [&](const V& v) { return project(softmax_rows(v[0]), 17); }, {R(6, 5)}},
      {"log_softmax_rows", [&](const V& v) { return project(log_softmax_rows(v[0]), 18); }, {R(6, 5)}},
      {"layer_norm", [&](const V& v) { return project(layer_norm(v[0], v[1], v[2]), 19); }, {R(5, 6), R(1, 6), R(1, 6)}},
      {"conv1d", [&](const V& v) { return project(conv1d(v[0], v[1], v[2], conv), 20); },
       {R(9, 4), R(conv.weight_rows(), 4), R(1, 4)}},
      {"attend", [&](const V& v) { return project(attend(v[0], v[1], v[2]), 21); }, {R(5, 3), R(6, 3), R(6, 2)}},
      {"attend masked", [&](const V& v) { return project(attend(v[0], v[1], v[2], key_mask), 22); },
       {R(4, 3), R(7, 3), R(7, 2)}},
      {"ctc_loss", [&](const V& v) { return ctc_loss(v[0], {1, 2, 2}); }, {R(7, 3)}},
  };
  for (int s = 1; s <= 4; ++s) {
    for (Eigen::Index n : {1, 6, 9}) {
      const auto tag = " s=" + std::to_string(s) + " T=" + std::to_string(n);
      cases.push_back({"downsample" + tag, [=](const V& v) { return project(downsample(v[0], s), 30 + s); }, {R(n, 3)}});
      cases.push_back(
          {"upsample" + tag, [=](const V& v) { return project(upsample(v[0], s, n), 40 + s); }, {R(pooled_length(n, s), 3)}});
    }
  }
  for (int sq : {1, 2, 3}) {
    for (int sk : {1, 2, 3}) {
      const auto tag = " sq=" + std::to_string(sq) + " sk=" + std::to_string(sk);
      cases.push_back({"pooled_attend" + tag, [=](const V& v) { return project(pooled_attend(v[0], v[1], v[2], {sq, sk}), 50); },
                       {R(7, 3), R(7, 3), R(7, 3)}});
      std::vector<Mat> in{R(7, 4)};
      for (int i = 0; i < 4; ++i) {
        in.push_back(testing::random_matrix(rng, 4, 4, 0.5));
        in.push_back(testing::random_matrix(rng, 1, 4, 0.5));
      }
      cases.push_back({"multi_head_pooled" + tag,
                       [=](const V& v) {
                         const AttentionWeights<double> w{v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], 2};
                         return project(multi_head_pooled(v[0], w, {sq, sk}), 60);
                       },
                       in});
    }
  }

  Tally tally;
  double worst = 0.0;
  for (const auto& c : cases) {
    const auto r = testing::check_gradients(c.fn, c.inputs);
    worst = std::max(worst, r.worst_relative_error);
    tally.require(r.worst_relative_error < 1e-4, c.name + " rel " + fmt("%.2e", r.worst_relative_error));
  }

  // Full tiny model from raw audio through the CTC head.
  auto cfg = preset("tiny");
  EncoderModel<double> model(cfg, 31);
  model.reset_head(4, 32);
  const auto samples = cfg.feature_extractor.samples_for_frames(9);
  std::vector<double> audio(static_cast<std::size_t>(samples));
  for (auto& a : audio) a = 0.3 * rng.normal();
  RowMask frame_mask(9, false);
  frame_mask[2] = frame_mask[3] = frame_mask[7] = true;
  std::vector<Mat> params;
  for (std::size_t i = 0; i < model.parameter_tensors(); ++i) params.push_back(model.parameter(i));
  double model_worst = 0.0;
  std::size_t entries = 0;
  for (const auto& c : {fixed_config(1, 1, 1, cfg.depth), fixed_config(2, 2, 2, cfg.depth)}) {
    const auto r = testing::check_gradients(
        [&](const V& p) {
          const auto features = model.apply_frame_mask(p, model.extract_features(p, audio), frame_mask);
          return ctc_loss(model.head_logits(p, model.forward(p, features, c)), {1, 3, 3, 2});
        },
        params, 1e-5, 8);
    model_worst = std::max(model_worst, r.worst_relative_error);
    entries += r.entries_checked;
    tally.require(r.worst_relative_error < 1e-4, "tiny model " + c.to_string() + " rel " + fmt("%.2e", r.worst_relative_error));
  }
  return tally.finish(std::to_string(cases.size()) + " op cases, worst rel " + fmt("%.2e", worst) + "; tiny model " +
                      std::to_string(params.size()) + " tensors, " + std::to_string(entries) + " probes, worst rel " +
                      fmt("%.2e", model_worst) + " (tol 1e-4)");
}

// 4 ----------------------------------------------------------------------

Outcome ctc_oracle() {
  Rng rng(404);
  double worst = 0.0;
  int instances = 0, infeasible_ok = 0, infeasible = 0;
  while (instances < 200) {
    const int frames = 1 + static_cast<int>(rng.uniform_index(6));
    const int vocab = 1 + static_cast<int>(rng.uniform_index(3));
    const int len = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(frames) + 1));
    LabelSeq labels;
    for (int i = 0; i < len; ++i) labels.push_back(1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(vocab))));
    if (ctc_min_frames(labels) > static_cast<std::size_t>(frames)) {
      ++infeasible;
      try {
        ctc_loss(Tensor<double>(Mat::Zero(frames, vocab + 1)), labels);
      } catch (const CtcInfeasible&) {
        ++infeasible_ok;
      }
      continue;
    }
    const Mat logits = testing::random_matrix(rng, frames, vocab + 1, 2.0);
    worst = std::max(worst, std::abs(ctc_loss(Tensor<double>(logits), labels).item() - testing::brute_force_nll(logits, labels)));
    ++instances;
  }

  // Every argmax path over 3 classes up to length 6.
  int paths = 0, collapse_errors = 0;
  for (int frames = 1; frames <= 6; ++frames) {
    std::vector<int> path(static_cast<std::size_t>(frames), 0);
    while (true) {
      Mat m = Mat::Zero(frames, 3);
      for (int t = 0; t < frames; ++t) m(t, path[static_cast<std::size_t>(t)]) = 1.0;
      LabelSeq expect;
      int prev = -1;
      for (int k : path) {
        if (k != prev && k != kBlank) expect.push_back(k);
        prev = k;
      }
      collapse_errors += greedy_decode(m) == expect ? 0 : 1;
      ++paths;
      std::size_t i = 0;
      while (i < path.size() && ++path[i] == 3) path[i++] = 0;
      if (i == path.size()) break;
    }
  }
  const bool ok = worst < 1e-9 && collapse_errors == 0 && infeasible_ok == infeasible;
  return {ok ? Verdict::Pass : Verdict::Fail,
          std::to_string(instances) + " instances, max |ctc-brute| " + fmt("%.2e", worst) + " (tol 1e-9); " +
              std::to_string(infeasible_ok) + "/" + std::to_string(infeasible) + " infeasible rejected; " +
              std::to_string(paths - collapse_errors) + "/" + std::to_string(paths) + " greedy paths collapse correctly"};
}

// 5 ----------------------------------------------------------------------

Outcome cost_structure() {
  Tally tally;
  const EncoderModel<double> tiny(preset("tiny"), 1);
  int exact = 0;
  for (int sf : {1, 2}) {
    for (int sk : {1, 2}) {
      for (int sq : {1, 2}) {
        const auto c = fixed_config(sf, sk, sq, tiny.config().depth);
        const bool eq = instrumented_cost(tiny, c, 50) == analytic_cost(c, tiny.config(), 50).macs;
        tally.require(eq, c.to_string() + " analytic != instrumented");
        exact += eq ? 1 : 0;
      }
    }
  }
  const auto small = preset("small");
  const auto configs = standard_configs(small.depth);
  std::vector<std::uint64_t> macs;
  for (const auto& c : configs) macs.push_back(analytic_cost(c, small, 1000).macs.total());
  for (std::size_t i = 1; i < macs.size(); ++i) tally.require(macs[i] < macs[i - 1], "analytic MACs not strictly decreasing");
  for (const auto& name : {"tiny", "B", "L"}) {
    const auto enc = preset(name);
    const auto cs = standard_configs(enc.depth);
    for (std::size_t i = 1; i < cs.size(); ++i) {
      tally.require(analytic_cost(cs[i], enc, 1000).macs.total() < analytic_cost(cs[i - 1], enc, 1000).macs.total(),
                    std::string(name) + " analytic MACs not strictly decreasing");
    }
  }

  const auto model = EncoderModel<double>(small, 1).cast<float>();
  const auto data = multi_sine_features(4, small.model_dim, 5, 1000, 1000);
  std::string times;
  std::vector<double> ms;
  for (const auto& r : measure(model, configs, data, {5, true})) {
    ms.push_back(r.encoder->median_ms);
    times += (times.empty() ? "" : " > ") + r.config + " " + fmt("%.1f", ms.back()) + " ms";
  }
  for (std::size_t i = 1; i < ms.size(); ++i) tally.require(ms[i] < ms[i - 1], "wall-time ordering broken: " + times);
  return tally.finish(std::to_string(exact) + "/8 configs exact at T=50; analytic small T=1000 " + std::to_string(macs[0]) +
                      " -> " + std::to_string(macs[3]) + " MACs; wall, 4 utterances x median of 5: " + times);
}

// 6 ----------------------------------------------------------------------

Outcome mac_ratio() {
  const auto b = preset("B");
  const double ratio = static_cast<double>(analytic_cost(fixed_config(2, 1, 1, b.depth), b, 1000).macs.total()) /
                       static_cast<double>(analytic_cost(fixed_config(1, 1, 1, b.depth), b, 1000).macs.total());
  return {ratio > 0.4 && ratio < 0.6 ? Verdict::Pass : Verdict::Fail,
          "B preset T=1000 total MACs (2-1-1)/(1-1-1) = " + fmt("%.4f", ratio) + " (want 0.4..0.6)"};
}

// 7 and 8 share the per-seed pre-trained checkpoints and stochastic fine-tunes.

TrainPlan plan_from_recipe(const std::string& file) {
  const auto rc = RunConfig::load(std::string(STOCHPOOL_RECIPES) + "/" + file);
  TrainPlan p;
  p.sets = FactorSets{rc.get_int_list("squeeze_set"), rc.get_int_list("kv_set"), rc.get_int_list("q_set")};
  p.steps = static_cast<int>(rc.get_int("steps"));
  p.batch = static_cast<int>(rc.get_int("batch"));
  p.lr = rc.get_double("lr");
  p.warmup_fraction = rc.get_double("warmup");
  p.max_grad_norm = rc.get_double("max_grad_norm");
  return p;
}

struct SeedRun {
  std::uint64_t seed = 0;
  double pre_initial = 0.0, pre_final = 0.0;
  std::map<std::string, EvalResult> stochastic;  // by config
  std::map<std::string, EvalResult> deterministic;
  EncoderModel<double> pretrained;
};

class ToyTask {
 public:
  ToyTask() : pre_(plan_from_recipe("tiny_pretrain.conf")), ft_(plan_from_recipe("tiny_finetune.conf")) {
    const auto rc = RunConfig::load(std::string(STOCHPOOL_RECIPES) + "/tiny_finetune.conf");
    train_n_ = static_cast<std::size_t>(rc.get_int("train_utterances"));
    val_n_ = static_cast<std::size_t>(rc.get_int("validation_utterances"));
    pre_n_ = static_cast<std::size_t>(RunConfig::load(std::string(STOCHPOOL_RECIPES) + "/tiny_pretrain.conf").get_int("train_utterances"));
    task_.dim = cfg_.model_dim;
    test_ = task_.features(100, 999);
  }

  // Pre-training and stochastic fine-tuning for one seed.
  SeedRun stochastic(std::uint64_t seed) const {
    SeedRun run{seed, 0, 0, {}, {}, EncoderModel<double>(cfg_, seed)};
    TrainPlan pre = pre_;
    pre.seed = seed;
    auto p = pretrain_toy(run.pretrained, pre, multi_sine_features(pre_n_, cfg_.model_dim, seed));
    run.pre_initial = p.initial_loss;
    run.pre_final = p.final_loss;
    run.pretrained = std::move(p.model);
    TrainPlan ft = ft_;
    ft.seed = seed;
    const auto f = finetune(run.pretrained, ft, task_.vocab, train(seed), validation(seed));
    for (const auto& c : standard_configs(cfg_.depth)) run.stochastic[c.to_string()] = evaluate(f.model, c, test_, worker_threads());
    return run;
  }

  void deterministic(SeedRun& run) const {
    for (const auto& c : standard_configs(cfg_.depth)) {
      TrainPlan ft = ft_;
      ft.seed = run.seed;
      ft.mode = TrainMode::Deterministic;
      ft.fixed = c;
      const auto f = finetune(run.pretrained, ft, task_.vocab, train(run.seed), validation(run.seed));
      run.deterministic[c.to_string()] = evaluate(f.model, c, test_, worker_threads());
    }
  }

  int depth() const { return cfg_.depth; }

 private:
  std::vector<Utterance> train(std::uint64_t seed) const { return task_.features(train_n_, seed * 10 + 1); }
  std::vector<Utterance> validation(std::uint64_t seed) const { return task_.features(val_n_, seed * 10 + 2); }

  EncoderConfig cfg_ = preset("tiny");
  SymbolTask task_;
  TrainPlan pre_, ft_;
  std::size_t pre_n_ = 0, train_n_ = 0, val_n_ = 0;
  std::vector<Utterance> test_;
};

struct Shared {
  ToyTask task;
  std::vector<SeedRun> runs;
  double stochastic_seconds = 0.0;
  bool ready = false;

  void ensure() {
    if (ready) return;
    const auto t0 = std::chrono::steady_clock::now();
    for (std::uint64_t seed : {1, 2, 3}) runs.push_back(task.stochastic(seed));
    stochastic_seconds = seconds_since(t0);
    ready = true;
  }
};

Outcome stochastic_viability(Shared& shared) {
  shared.ensure();
  Tally tally;
  std::string detail;
  for (const auto& run : shared.runs) {
    const double ratio = run.pre_final / run.pre_initial;
    tally.require(ratio <= 0.5, "seed " + std::to_string(run.seed) + " pre-train loss ratio " + fmt("%.3f", ratio));
    detail += "seed " + std::to_string(run.seed) + ": pretrain " + fmt("%.3f", run.pre_initial) + "->" +
              fmt("%.3f", run.pre_final) + " (x" + fmt("%.2f", ratio) + "), SER";
    for (const auto& [config, e] : run.stochastic) {
      tally.require(std::isfinite(e.loss), "seed " + std::to_string(run.seed) + " " + config + " non-finite CTC loss");
      tally.require(e.symbol_error < 1.0, "seed " + std::to_string(run.seed) + " " + config + " has zero accuracy");
      detail += " " + config + "=" + fmt("%.3f", e.symbol_error);
    }
    detail += "; ";
  }
  return tally.finish(detail + "stochastic part " + fmt("%.0f", shared.stochastic_seconds) + " s");
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

Outcome deterministic_advantage(Shared& shared, double& shared_seconds) {
  const bool fresh = !shared.ready;
  shared.ensure();
  shared_seconds = fresh ? 0.0 : shared.stochastic_seconds;
  for (auto& run : shared.runs) shared.task.deterministic(run);
  int holds = 0;
  std::string detail;
  for (const auto& c : standard_configs(shared.task.depth())) {
    const auto name = c.to_string();
    std::vector<double> det, sto;
    for (const auto& run : shared.runs) {
      det.push_back(run.deterministic.at(name).symbol_error);
      sto.push_back(run.stochastic.at(name).symbol_error);
    }
    const double d = median3(det), s = median3(sto);
    holds += d <= s ? 1 : 0;
    detail += name + " det " + fmt("%.3f", d) + (d <= s ? " <= " : " > ") + "sto " + fmt("%.3f", s) + "; ";
  }
  detail += "holds in " + std::to_string(holds) + "/4 (median SER over 3 seeds)";
  return {holds >= 3 ? Verdict::Pass : holds >= 2 ? Verdict::SoftFail : Verdict::Fail, detail};
}

// 9 ----------------------------------------------------------------------

Outcome sampler_statistics() {
  static const double critical[] = {0.0, 10.828, 13.816, 16.266};
  Tally tally;
  double worst_margin = 0.0;
  for (std::size_t size = 2; size <= 4; ++size) {
    std::vector<int> set;
    for (std::size_t i = 1; i <= size; ++i) set.push_back(static_cast<int>(i));
    const FactorSets sets{set, set, set};
    Rng rng(9000 + size);
    std::array<std::map<int, long>, 3> counts;
    const long draws = 100000;
    for (long i = 0; i < draws; ++i) {
      const auto c = sample_config(sets, 1, rng);
      ++counts[0][c.s_f];
      ++counts[1][c.per_layer[0].s_k];
      ++counts[2][c.per_layer[0].s_q];
    }
    const double expected = static_cast<double>(draws) / static_cast<double>(size);
    for (const auto& factor : counts) {
      double chi = 0.0;
      for (const auto& [v, n] : factor) chi += (n - expected) * (n - expected) / expected;
      worst_margin = std::max(worst_margin, chi / critical[size - 1]);
      tally.require(chi < critical[size - 1], "chi-square " + fmt("%.2f", chi) + " for set size " + std::to_string(size));
    }
  }
  const auto draw = [] {
    Rng root(77);
    Rng stream = root.fork("config");
    std::vector<CompressionConfig> out;
    for (std::uint64_t i = 0; i < 10000; ++i) {
      Rng step = stream.fork(i);
      out.push_back(sample_config(FactorSets::up_to(4, 4, 4), 12, step));
    }
    return out;
  };
  tally.require(draw() == draw(), "seeded runs differ");
  return tally.finish("largest chi-square / critical(0.001) = " + fmt("%.3f", worst_margin) +
                      " over sets of size 2..4, 1e5 draws each; two seeded runs of 1e4 configs identical");
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoi(argv[i]));

  Shared shared;
  double shared_seconds = 0.0;
  const std::vector<Criterion> criteria = {
      {1, "degenerate equivalence", 10, degenerate_equivalence},
      {2, "operator laws", 30, operator_laws},
      {3, "gradient suite", 180, gradient_suite},
      {4, "CTC oracle", 30, ctc_oracle},
      {5, "cost model exactness and trade-off", 120, cost_structure},
      {6, "MAC ratio consistency", 1, mac_ratio},
      {7, "stochastic training viability", 300, [&] { return stochastic_viability(shared); }},
      {8, "deterministic fine-tune advantage", 600, [&] { return deterministic_advantage(shared, shared_seconds); }},
      {9, "sampler statistics", 10, sampler_statistics},
  };

  int hard_failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {Verdict::Fail, std::string("exception: ") + e.what()};
    }
    double elapsed = seconds_since(t0);
    if (c.id == 8) elapsed += shared_seconds;  // includes the checkpoints it compares against
    std::string timing = fmt("%.2f", elapsed) + " s / " + fmt("%.0f", c.budget_s) + " s";
    if (elapsed >= c.budget_s) {
      out.verdict = Verdict::Fail;
      timing += " OVER BUDGET";
    }
    const char* tag = out.verdict == Verdict::Pass ? "[PASS]" : out.verdict == Verdict::SoftFail ? "[SOFT-FAIL]" : "[FAIL]";
    hard_failures += out.verdict == Verdict::Fail ? 1 : 0;
    std::cout << tag << " " << c.id << " " << c.name << " (" << timing << "): " << out.detail << std::endl;
  }
  return hard_failures == 0 ? 0 : 1;
}
