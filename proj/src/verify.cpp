#include "stochpool/verify.hpp"

#include "stochpool/cost_model.hpp"
#include "stochpool/ctc.hpp"
#include "stochpool/encoder.hpp"
#include "stochpool/stochastic.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

namespace stochpool {

namespace {

using Mat = Matrix<double>;
using T = Tensor<double>;
using Loss = std::function<T(const std::vector<T>&)>;

Mat random(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(3) << std::scientific << v;
  return s.str();
}

// Worst relative error between tape gradients and central differences.
double gradient_error(const Loss& loss, std::vector<Mat> inputs, std::size_t max_entries = 24) {
  Tape<double> tape;
  std::vector<T> leaves;
  for (const auto& m : inputs) leaves.push_back(tape.variable(m));
  auto l = loss(leaves);
  const double floor = 1e-6 * std::max(1.0, std::abs(l.item()));
  tape.backward(l);
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Mat g = leaves[i].grad();
    const auto n = static_cast<std::size_t>(inputs[i].size());
    const std::size_t stride = std::max<std::size_t>(1, n / max_entries);
    double d2 = 0, a2 = 0, n2 = 0;
    for (std::size_t c = 0; c < n; c += stride) {
      double& x = inputs[i].data()[c];
      const double saved = x;
      const auto eval = [&] {
        std::vector<T> consts(inputs.begin(), inputs.end());
        return loss(consts).item();
      };
      x = saved + h;
      const double up = eval();
      x = saved - h;
      const double down = eval();
      x = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = g.data()[c];
      d2 += (analytic - numeric) * (analytic - numeric);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
    }
    worst = std::max(worst, std::sqrt(d2) / std::max(std::sqrt(std::max(a2, n2)), floor));
  }
  return worst;
}

struct Runner {
  const VerifyOptions& options;
  std::vector<CheckResult> results;

  bool wanted(const std::string& suite) const {
    return options.filter.empty() || suite.find(options.filter) != std::string::npos;
  }

  // fn returns an empty string on success, else a failure detail.
  void check(const std::string& suite, const std::string& name, const std::function<std::string()>& fn) {
    const auto start = std::chrono::steady_clock::now();
    CheckResult r{suite, name, false, "", 0.0};
    try {
      r.detail = fn();
      r.passed = r.detail.empty() || r.detail.rfind("ok", 0) == 0;
    } catch (const std::exception& e) {
      r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    results.push_back(std::move(r));
  }
};

std::string bound(double value, double limit) {
  return value < limit ? "ok " + fmt(value) : fmt(value) + " >= " + fmt(limit);
}

void tensor_suite(Runner& run) {
  const auto grad = [&](const std::string& name, Loss loss, std::vector<Mat> inputs) {
    run.check("tensor", "gradient " + name, [=] { return bound(gradient_error(loss, inputs), 1e-4); });
  };
  Rng rng(1);
  const Mat w = random(rng, 5, 4);
  grad("matmul", [](const std::vector<T>& v) { return sum(matmul(v[0], v[1])); }, {random(rng, 3, 4), random(rng, 4, 5)});
  grad("linear", [w](const std::vector<T>& v) { return sum(mul(linear(v[0], v[1], v[2]), T(Mat(w.topRows(3))))); },
       {random(rng, 3, 4), random(rng, 4, 4), random(rng, 1, 4)});
  grad("gelu", [w](const std::vector<T>& v) { return sum(mul(gelu(v[0]), T(w))); }, {random(rng, 5, 4)});
  grad("softmax_rows", [w](const std::vector<T>& v) { return sum(mul(softmax_rows(v[0]), T(w))); }, {random(rng, 5, 4)});
  grad("log_softmax_rows", [w](const std::vector<T>& v) { return sum(mul(log_softmax_rows(v[0]), T(w))); },
       {random(rng, 5, 4)});
  grad("layer_norm", [w](const std::vector<T>& v) { return sum(mul(layer_norm(v[0], v[1], v[2]), T(w))); },
       {random(rng, 5, 4), random(rng, 1, 4), random(rng, 1, 4)});
  const Conv1dSpec spec{4, 4, 3, 1, 2, 1};
  grad("conv1d", [w, spec](const std::vector<T>& v) { return sum(mul(conv1d(v[0], v[1], v[2], spec), T(w))); },
       {random(rng, 5, 4), random(rng, spec.weight_rows(), 4), random(rng, 1, 4)});
  grad("concat/slice/transpose",
       [](const std::vector<T>& v) {
         return sum(mul(transpose(concat_cols(std::vector<T>{slice_cols(v[0], 0, 2), v[0]})), transpose(concat_cols(std::vector<T>{v[0], slice_cols(v[0], 2, 2)}))));
       },
       {random(rng, 4, 4)});
}

void pooling_suite(Runner& run) {
  run.check("pooling", "length, identity, round trip, linearity (T 1..64, s 1..4)", [] {
    Rng rng(2);
    for (Eigen::Index n = 1; n <= 64; ++n) {
      for (int s = 1; s <= 4; ++s) {
        const Mat x = random(rng, n, 3), y = random(rng, n, 3);
        const T tx(x);
        if (downsample(tx, s).rows() != pooled_length(n, s)) return "length law fails at T=" + std::to_string(n);
        if (!(downsample(T(upsample(tx, s).value()), s).value() == x)) return "round trip not exact at T=" + std::to_string(n);
        const double a = rng.normal(), b = rng.normal();
        const Mat lin = downsample(T(Mat(a * x + b * y)), s).value() - a * downsample(tx, s).value() -
                        b * downsample(T(y), s).value();
        if (lin.cwiseAbs().maxCoeff() >= 1e-12) return "linearity " + fmt(lin.cwiseAbs().maxCoeff());
        if (upsample(downsample(tx, s), s, n).rows() != n) return "truncated upsample length wrong at T=" + std::to_string(n);
      }
      if (!(downsample(T(Mat(random(rng, n, 2))), 1).value().rows() == n)) return std::string("identity fails");
    }
    return std::string();
  });
  run.check("pooling", "adjoint gradients", [] {
    Rng rng(3);
    double worst = 0;
    for (int s = 2; s <= 3; ++s) {
      const Mat w = random(rng, pooled_length(7, s), 2);
      worst = std::max(worst, gradient_error([&](const std::vector<T>& v) { return sum(mul(downsample(v[0], s), T(w))); },
                                             {random(rng, 7, 2)}));
    }
    return bound(worst, 1e-6);
  });
}

Mat plain_attention(const Mat& q, const Mat& k, const Mat& v) {
  Mat s = q * k.transpose() / std::sqrt(static_cast<double>(q.cols()));
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double m = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - m).exp().matrix();
    s.row(i) /= s.row(i).sum();
  }
  return s * v;
}

void attention_suite(Runner& run) {
  run.check("attention", "pooled (1,1) equals plain attention", [] {
    Rng rng(4);
    double worst = 0;
    for (int n : {1, 5, 17}) {
      const Mat q = random(rng, n, 4), k = random(rng, n, 4), v = random(rng, n, 4);
      worst = std::max(worst, (pooled_attend(T(q), T(k), T(v), {1, 1}).value() - plain_attention(q, k, v)).cwiseAbs().maxCoeff());
    }
    return bound(worst, 1e-14);
  });
  run.check("attention", "pooled output length equals query length", [] {
    Rng rng(5);
    for (int n = 1; n <= 20; ++n) {
      for (int sq = 1; sq <= 3; ++sq) {
        const Mat x = random(rng, n, 4);
        const auto y = pooled_attend(T(x), T(x), T(x), {sq, 2});
        if (y.rows() != n) return "length " + std::to_string(y.rows()) + " for T=" + std::to_string(n) + " s_q=" + std::to_string(sq);
      }
    }
    return std::string();
  });
  run.check("attention", "pooled attention equals attention over pooled inputs", [] {
    Rng rng(6);
    const Mat q = random(rng, 11, 4), k = random(rng, 11, 4), v = random(rng, 11, 4);
    const auto mean_pool = [](const Mat& x, int s) {
      Mat out = Mat::Zero(pooled_length(x.rows(), s), x.cols());
      for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const auto len = std::min<Eigen::Index>(s, x.rows() - i * s);
        out.row(i) = x.middleRows(i * s, len).colwise().mean();
      }
      return out;
    };
    const Mat small = plain_attention(mean_pool(q, 2), mean_pool(k, 3), mean_pool(v, 3));
    const Mat got = pooled_attend(T(q), T(k), T(v), {2, 3}).value();
    double worst = 0;
    for (Eigen::Index i = 0; i < got.rows(); ++i) worst = std::max(worst, (got.row(i) - small.row(i / 2)).cwiseAbs().maxCoeff());
    return bound(worst, 1e-12);
  });
}

void encoder_suite(Runner& run) {
  auto cfg = preset("tiny");
  run.check("encoder", "length preservation over {1,2,3}^3, T 1..32", [cfg] {
    auto small = cfg;
    small.model_dim = 8;
    small.heads = 2;
    small.ffn_dim = 16;
    small.pos_conv_kernel = 3;
    small.pos_conv_groups = 2;
    EncoderModel<double> model(small, 1);
    Rng rng(7);
    const auto p = model.constants();
    for (int n = 1; n <= 32; ++n) {
      const T x(random(rng, n, 8));
      for (int a = 1; a <= 3; ++a)
        for (int b = 1; b <= 3; ++b)
          for (int c = 1; c <= 3; ++c) {
            const auto y = model.forward(p, x, fixed_config(a, b, c, small.depth));
            if (y.rows() != n || !y.value().allFinite()) {
              return "bad output at T=" + std::to_string(n) + " config " + fixed_config(a, b, c, small.depth).to_string();
            }
          }
    }
    return std::string();
  });
  for (const auto& triplet : {std::array<int, 3>{1, 1, 1}, std::array<int, 3>{2, 2, 2}}) {
    const auto c = fixed_config(triplet[0], triplet[1], triplet[2], cfg.depth);
    run.check("encoder", "full-model gradient at " + c.to_string(), [cfg, c] {
      EncoderModel<double> model(cfg, 2);
      Rng rng(8);
      std::vector<Mat> inputs;
      for (std::size_t i = 0; i < model.parameter_tensors(); ++i) inputs.push_back(model.parameter(i));
      inputs.push_back(random(rng, 9, cfg.model_dim));
      const Mat target = random(rng, 9, cfg.model_dim);
      const auto loss = [&](const std::vector<T>& v) {
        ParamSet<double> p(v.begin(), v.end() - 1);
        const auto d = sub(model.forward(p, v.back(), c), T(target));
        return mean(mul(d, d));
      };
      return bound(gradient_error(loss, inputs, 4), 1e-4);
    });
  }
}

double brute_force_ctc(const Mat& logits, const LabelSeq& labels) {
  const Eigen::Index frames = logits.rows(), classes = logits.cols();
  std::vector<int> path(static_cast<std::size_t>(frames), 0);
  double total = 0.0;
  while (true) {
    LabelSeq out;
    int prev = -1;
    for (int k : path) {
      if (k != 0 && k != prev) out.push_back(k);
      prev = k;
    }
    if (out == labels) {
      double lp = 0.0;
      for (Eigen::Index t = 0; t < frames; ++t) {
        lp += logits(t, path[static_cast<std::size_t>(t)]) - std::log(logits.row(t).array().exp().sum());
      }
      total += std::exp(lp);
    }
    std::size_t i = 0;
    while (i < path.size() && ++path[i] == classes) path[i++] = 0;
    if (i == path.size()) break;
  }
  return -std::log(total);
}

void ctc_suite(Runner& run) {
  run.check("ctc", "loss equals brute-force enumeration (200 instances)", [] {
    Rng rng(9);
    double worst = 0;
    for (int trial = 0; trial < 200; ++trial) {
      const int frames = 1 + static_cast<int>(rng.uniform_index(6));
      const int vocab = 1 + static_cast<int>(rng.uniform_index(3));
      LabelSeq labels;
      const auto len = rng.uniform_index(static_cast<std::uint64_t>(frames) + 1);
      for (std::uint64_t i = 0; i < len; ++i) labels.push_back(1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(vocab))));
      if (ctc_min_frames(labels) > static_cast<std::size_t>(frames)) continue;
      const Mat logits = random(rng, frames, vocab + 1, 2.0);
      worst = std::max(worst, std::abs(ctc_loss(T(logits), labels).item() - brute_force_ctc(logits, labels)));
    }
    return bound(worst, 1e-9);
  });
  run.check("ctc", "gradient", [] {
    Rng rng(10);
    return bound(gradient_error([](const std::vector<T>& v) { return ctc_loss(v[0], {2, 1, 2}); }, {random(rng, 6, 3)}), 1e-4);
  });
  run.check("ctc", "greedy decode collapse rules", [] {
    const auto frames = [](const std::vector<int>& ids) {
      Mat m = Mat::Zero(static_cast<Eigen::Index>(ids.size()), 3);
      for (std::size_t t = 0; t < ids.size(); ++t) m(static_cast<Eigen::Index>(t), ids[t]) = 1.0;
      return m;
    };
    if (greedy_decode(frames({1, 1, 0, 2})) != LabelSeq{1, 2}) return "repeat collapse";
    if (!greedy_decode(frames({0, 0, 0})).empty()) return "all blank";
    if (greedy_decode(frames({1, 0, 1})) != LabelSeq{1, 1}) return "blank separation";
    return "";
  });
}

void cost_suite(Runner& run) {
  run.check("cost", "analytic MACs equal instrumented counts on {1,2}^3", [] {
    const auto cfg = preset("tiny");
    EncoderModel<double> model(cfg, 3);
    for (int a = 1; a <= 2; ++a)
      for (int b = 1; b <= 2; ++b)
        for (int c = 1; c <= 2; ++c) {
          const auto conf = fixed_config(a, b, c, cfg.depth);
          const auto expect = analytic_cost(conf, cfg, 50).macs;
          const auto got = instrumented_cost(model, conf, 50);
          if (!(expect == got)) {
            return conf.to_string() + ": analytic " + std::to_string(expect.total()) + " vs counted " + std::to_string(got.total());
          }
        }
    return std::string();
  });
  run.check("cost", "B-preset MAC ratio 2-1-1 / 1-1-1 in (0.4, 0.6)", [] {
    const auto b = preset("B");
    const double r = static_cast<double>(analytic_cost(fixed_config(2, 1, 1, b.depth), b, 1000).macs.total()) /
                     static_cast<double>(analytic_cost(fixed_config(1, 1, 1, b.depth), b, 1000).macs.total());
    return r > 0.4 && r < 0.6 ? "ok " + fmt(r) : "ratio " + fmt(r);
  });
}

void sampler_suite(Runner& run) {
  run.check("sampler", "chi-square uniformity, 1e5 draws", [] {
    const double critical[] = {0, 10.828, 13.816, 16.266};
    for (int size = 2; size <= 4; ++size) {
      std::vector<int> set;
      for (int i = 1; i <= size; ++i) set.push_back(i);
      Rng rng(static_cast<std::uint64_t>(100 + size));
      std::map<int, long> counts;
      const long draws = 100000;
      for (long i = 0; i < draws; ++i) ++counts[sample_config({set, {1}, {1}}, 1, rng).s_f];
      double chi = 0;
      const double e = static_cast<double>(draws) / size;
      for (const auto& [k, n] : counts) chi += (n - e) * (n - e) / e;
      if (chi >= critical[size - 1]) return "size " + std::to_string(size) + ": chi2 " + fmt(chi);
    }
    return std::string();
  });
  run.check("sampler", "seeded reproducibility", [] {
    Rng a(42), b(42);
    const auto sets = FactorSets::up_to(2, 2, 2);
    for (int i = 0; i < 100; ++i) {
      if (!(sample_config(sets, 4, a) == sample_config(sets, 4, b))) return "draw " + std::to_string(i) + " differs";
    }
    return std::string();
  });
}

struct FaultGuard {
  explicit FaultGuard(bool on) : previous(fault_skip_truncation().exchange(on)) {}
  ~FaultGuard() { fault_skip_truncation() = previous; }
  bool previous;
};

}  // namespace

std::vector<std::string> verify_suites() { return {"tensor", "pooling", "attention", "encoder", "ctc", "cost", "sampler"}; }

std::vector<CheckResult> run_verify(const VerifyOptions& options) {
  FaultGuard fault(options.inject_fault);
  Runner run{options, {}};
  const std::vector<std::pair<std::string, void (*)(Runner&)>> suites{
      {"tensor", tensor_suite}, {"pooling", pooling_suite}, {"attention", attention_suite}, {"encoder", encoder_suite},
      {"ctc", ctc_suite},       {"cost", cost_suite},       {"sampler", sampler_suite}};
  for (const auto& [name, fn] : suites) {
    if (run.wanted(name)) fn(run);
  }
  return run.results;
}

void print_verify_table(std::ostream& out, const std::vector<CheckResult>& results) {
  std::size_t width = 0;
  for (const auto& r : results) width = std::max(width, r.suite.size() + r.name.size() + 2);
  int failed = 0;
  for (const auto& r : results) {
    out << (r.passed ? "PASS  " : "FAIL  ") << std::left << std::setw(static_cast<int>(width)) << (r.suite + ": " + r.name)
        << "  " << std::fixed << std::setprecision(2) << std::setw(7) << std::right << r.seconds << "s  " << r.detail << '\n';
    failed += r.passed ? 0 : 1;
  }
  out << results.size() - static_cast<std::size_t>(failed) << "/" << results.size() << " checks passed\n";
}

}  // namespace stochpool
