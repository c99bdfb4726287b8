#include "stochpool/training.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <sstream>
#include <thread>

namespace stochpool {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

constexpr int kDivergenceFactor = 10;
constexpr int kDivergencePatience = 50;
constexpr std::size_t kLossWindow = 10;

bool is_feature_extractor(const std::string& name) { return name.rfind("fe.", 0) == 0; }

// Loss over one batch on the tape, or nullopt when every item was skipped.
using BatchLoss = std::function<std::optional<Tensor<double>>(const EncoderModel<double>&, const ParamSet<double>&,
                                                              const CompressionConfig&,
                                                              const std::vector<std::size_t>&, int step)>;
using AfterStep = std::function<void(const EncoderModel<double>&, int completed, TrainState&)>;

TrainState fresh_state(const EncoderModel<double>& model, const TrainPlan& plan) {
  TrainState s;
  s.config = model.config();
  s.seed = plan.seed;
  s.params = model.named_values();
  for (const auto& [name, m] : s.params) {
    s.adam_m.push_back(Matrix<double>::Zero(m.rows(), m.cols()));
    s.adam_v.push_back(Matrix<double>::Zero(m.rows(), m.cols()));
  }
  s.best_loss = std::numeric_limits<double>::infinity();
  return s;
}

EncoderModel<double> restore(const TrainState& s, const TrainPlan& plan) {
  if (s.seed != plan.seed) {
    throw ConfigError("resume state was written with seed " + std::to_string(s.seed) + ", plan has seed " +
                      std::to_string(plan.seed));
  }
  return EncoderModel<double>(s.config, s.params);
}

std::vector<std::size_t> draw_batch(const TrainPlan& plan, std::size_t n, int step) {
  Rng rng = Rng(plan.seed).fork("batch").fork(static_cast<std::uint64_t>(step));
  std::vector<std::size_t> out(static_cast<std::size_t>(plan.batch));
  for (auto& i : out) i = static_cast<std::size_t>(rng.uniform_index(n));
  return out;
}

double window_mean(const std::vector<TrainLogRecord>& log, bool head) {
  if (log.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t w = std::min(kLossWindow, log.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < w; ++i) sum += log[head ? i : log.size() - w + i].loss;
  return sum / static_cast<double>(w);
}

TrainResult run_loop(EncoderModel<double> model, const TrainPlan& plan, std::size_t data_size, const BatchLoss& batch_loss,
                     const LogSink& sink, const TrainState* resume, const AfterStep& after_step) {
  plan.validate(model.config().depth);
  if (data_size == 0) throw std::invalid_argument("training dataset is empty");
  TrainState state = resume ? *resume : fresh_state(model, plan);
  if (resume) model = restore(*resume, plan);

  const auto& names = model.parameter_names();
  TrainResult result{model, {}, 0.0, 0.0, 0, std::nullopt, 0.0, {}};
  int over_limit = 0;
  const int end = plan.stop_after > 0 ? std::min(plan.steps, plan.stop_after) : plan.steps;

  for (int step = static_cast<int>(state.step); step < end; ++step) {
    const auto start = Clock::now();
    const auto config = plan.config_for_step(step, model.config().depth);
    Tape<double> tape;
    const auto p = model.watch(tape);
    const auto loss = batch_loss(model, p, config, draw_batch(plan, data_size, step), step);
    if (!loss) {
      state.step = static_cast<std::uint64_t>(step + 1);
      continue;
    }
    const double value = loss->item();
    if (!std::isfinite(value)) {
      throw TrainingAborted("non-finite loss " + std::to_string(value) + " at step " + std::to_string(step) +
                            " (config " + config.to_string() + ")");
    }
    if (step == 0) state.initial_loss = value;
    tape.backward(*loss);

    std::vector<Matrix<double>> grads;
    double norm2 = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      grads.push_back(p[i].grad());
      if (plan.freeze_feature_extractor && is_feature_extractor(names[i])) grads.back().setZero();
      norm2 += grads.back().squaredNorm();
    }
    const double grad_norm = std::sqrt(norm2);
    const double clip = plan.max_grad_norm > 0.0 && grad_norm > plan.max_grad_norm ? plan.max_grad_norm / grad_norm : 1.0;

    const int t = step + 1;
    const double lr = plan.learning_rate(t);
    const double c1 = 1.0 - std::pow(plan.beta1, t);
    const double c2 = 1.0 - std::pow(plan.beta2, t);
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (plan.freeze_feature_extractor && is_feature_extractor(names[i])) continue;
      const Matrix<double> g = grads[i] * clip;
      auto& m = state.adam_m[i];
      auto& v = state.adam_v[i];
      m = plan.beta1 * m + (1.0 - plan.beta1) * g;
      v = plan.beta2 * v + (1.0 - plan.beta2) * g.cwiseProduct(g);
      const Matrix<double> update =
          ((m.array() / c1) / ((v.array() / c2).sqrt() + plan.adam_eps)).matrix() * lr;
      Matrix<double> next = model.parameter(i) - update;
      model.set_parameter(i, std::move(next));
    }
    state.step = static_cast<std::uint64_t>(t);

    if (value > kDivergenceFactor * state.initial_loss) {
      if (++over_limit >= kDivergencePatience) {
        throw TrainingAborted("diverged: loss above " + std::to_string(kDivergenceFactor) + "x initial (" +
                              std::to_string(state.initial_loss) + ") for " + std::to_string(kDivergencePatience) +
                              " consecutive steps; last loss " + std::to_string(value) + " at step " +
                              std::to_string(step));
      }
    } else {
      over_limit = 0;
    }

    TrainLogRecord rec{step, config.to_string(), value, grad_norm, 0.0};
    if (after_step) after_step(model, t, state);
    rec.wall_ms = elapsed_ms(start);
    result.log.push_back(rec);
    if (sink) sink(rec);
  }
  state.params = model.named_values();
  result.model = model;
  result.state = state;
  result.initial_loss = window_mean(result.log, true);
  result.final_loss = window_mean(result.log, false);
  return result;
}

}  // namespace

void TrainPlan::validate(int depth) const {
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (warmup_fraction < 0.0 || warmup_fraction > 1.0) throw ConfigError("warmup fraction must be in [0, 1]");
  if (mask_fraction <= 0.0 || mask_fraction >= 1.0) throw ConfigError("mask fraction must be in (0, 1)");
  if (mask_span < 1) throw ConfigError("mask span must be >= 1");
  if (mode == TrainMode::Deterministic) {
    if (!fixed) throw ConfigError("deterministic mode needs a fixed config");
    if (fixed->depth() != depth) throw ConfigError("fixed config depth does not match the model");
  } else {
    sets.validate();
  }
}

double TrainPlan::learning_rate(int step) const {
  const int warmup = static_cast<int>(std::lround(warmup_fraction * steps));
  if (warmup <= 0 || step >= warmup) return lr;
  return lr * static_cast<double>(step) / static_cast<double>(warmup);
}

CompressionConfig TrainPlan::config_for_step(int step, int depth) const {
  if (mode == TrainMode::Deterministic) return *fixed;
  Rng rng = Rng(seed).fork("config").fork(static_cast<std::uint64_t>(step));
  return sample_config(sets, depth, rng);
}

std::string TrainLogRecord::to_json() const {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["config"] = config;
  j["loss"] = loss;
  j["grad_norm"] = grad_norm;
  j["wall_ms"] = wall_ms;
  return j.dump();
}

Tensor<double> utterance_features(const EncoderModel<double>& model, const ParamSet<double>& p, const Utterance& u) {
  if (u.has_audio()) return model.extract_features(p, std::span<const double>(u.audio));
  return Tensor<double>(u.features);
}

Eigen::Index utterance_frames(const EncoderModel<double>& model, const Utterance& u) {
  if (u.has_audio()) {
    return static_cast<Eigen::Index>(
        model.config().feature_extractor.frames_for_samples(static_cast<std::int64_t>(u.audio.size())));
  }
  return u.features.rows();
}

std::vector<bool> draw_frame_mask(Eigen::Index frames, double fraction, int span, Rng& rng) {
  std::vector<bool> masked(static_cast<std::size_t>(frames), false);
  const auto target = static_cast<Eigen::Index>(std::ceil(fraction * static_cast<double>(frames)));
  Eigen::Index count = 0;
  while (count < target) {
    const auto start = static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(frames)));
    for (Eigen::Index t = start; t < std::min<Eigen::Index>(start + span, frames); ++t) {
      if (!masked[static_cast<std::size_t>(t)]) {
        masked[static_cast<std::size_t>(t)] = true;
        ++count;
      }
    }
  }
  return masked;
}

TrainResult pretrain_toy(EncoderModel<double> model, const TrainPlan& plan, const std::vector<Utterance>& data,
                         const LogSink& sink, const TrainState* resume) {
  const BatchLoss loss = [&](const EncoderModel<double>& m, const ParamSet<double>& p, const CompressionConfig& c,
                             const std::vector<std::size_t>& batch, int step) -> std::optional<Tensor<double>> {
    Rng mask_rng = Rng(plan.seed).fork("mask").fork(static_cast<std::uint64_t>(step));
    Tensor<double> total;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& u = data[batch[b]];
      const auto x = utterance_features(m, p, u);
      const auto masked = draw_frame_mask(x.rows(), plan.mask_fraction, plan.mask_span, mask_rng);
      const auto y = m.forward(p, m.apply_frame_mask(p, x, masked), c);
      Matrix<double> sel = Matrix<double>::Zero(x.rows(), x.cols());
      Eigen::Index n = 0;
      for (Eigen::Index t = 0; t < x.rows(); ++t) {
        if (masked[static_cast<std::size_t>(t)]) {
          sel.row(t).setOnes();
          ++n;
        }
      }
      const Tensor<double> target(x.value());
      const auto diff = mul(sub(y, target), Tensor<double>(std::move(sel)));
      const auto item = scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(n * x.cols()));
      total = b == 0 ? item : add(total, item);
    }
    return scale(total, 1.0 / static_cast<double>(batch.size()));
  };
  return run_loop(std::move(model), plan, data.size(), loss, sink, resume, {});
}

namespace {

double validation_loss(const EncoderModel<double>& model, const CompressionConfig& c, const std::vector<Utterance>& data) {
  const auto p = model.constants();
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& u : data) {
    try {
      total += ctc_loss(model.head_logits(p, model.forward(p, utterance_features(model, p, u), c)), u.labels).item();
      ++n;
    } catch (const CtcInfeasible&) {
    }
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : total / static_cast<double>(n);
}

}  // namespace

TrainResult finetune(EncoderModel<double> model, const TrainPlan& plan, int vocab, const std::vector<Utterance>& train,
                     const std::vector<Utterance>& validation, const LogSink& sink, const TrainState* resume) {
  if (!resume) model.reset_head(vocab, Rng(plan.seed).fork("head").next_u64());
  std::size_t skipped = 0;
  const BatchLoss loss = [&](const EncoderModel<double>& m, const ParamSet<double>& p, const CompressionConfig& c,
                             const std::vector<std::size_t>& batch, int) -> std::optional<Tensor<double>> {
    std::optional<Tensor<double>> total;
    std::size_t used = 0;
    for (auto i : batch) {
      const auto& u = train[i];
      if (ctc_min_frames(u.labels) > static_cast<std::size_t>(utterance_frames(m, u))) {
        ++skipped;
        continue;
      }
      const auto item = ctc_loss(m.head_logits(p, m.forward(p, utterance_features(m, p, u), c)), u.labels);
      total = total ? add(*total, item) : item;
      ++used;
    }
    if (!total) return std::nullopt;
    return scale(*total, 1.0 / static_cast<double>(used));
  };

  const int every = plan.eval_every > 0 ? plan.eval_every : std::max(1, plan.steps / 10);
  const int depth = model.config().depth;
  const AfterStep select = [&](const EncoderModel<double>& m, int completed, TrainState& state) {
    if (validation.empty() || (completed % every != 0 && completed != plan.steps)) return;
    CompressionConfig c = fixed_config(1, 1, 1, depth);
    if (plan.validation_config) {
      c = *plan.validation_config;
    } else if (plan.random_validation) {
      Rng rng = Rng(plan.seed).fork("validation").fork(static_cast<std::uint64_t>(completed));
      c = sample_config(plan.sets, depth, rng);
    } else if (plan.mode == TrainMode::Deterministic) {
      c = *plan.fixed;
    }
    const double v = validation_loss(m, c, validation);
    if (std::isfinite(v) && (state.best_params.empty() || v < state.best_loss)) {
      state.best_loss = v;
      state.best_step = static_cast<std::uint64_t>(completed);
      state.best_params.clear();
      for (std::size_t i = 0; i < m.parameter_tensors(); ++i) state.best_params.push_back(m.parameter(i));
    }
  };

  auto result = run_loop(std::move(model), plan, train.size(), loss, sink, resume, select);
  result.skipped_infeasible = skipped;
  const bool finished = plan.stop_after <= 0 || plan.stop_after >= plan.steps;
  if (!result.state.best_params.empty()) {
    result.best_step = static_cast<int>(result.state.best_step);
    result.best_validation_loss = result.state.best_loss;
    if (finished) {
      for (std::size_t i = 0; i < result.state.best_params.size(); ++i) {
        result.model.set_parameter(i, result.state.best_params[i]);
      }
    }
  }
  return result;
}

EvalResult evaluate(const EncoderModel<double>& model, const CompressionConfig& config, const std::vector<Utterance>& data,
                    int threads) {
  if (data.empty()) throw std::invalid_argument("evaluate: dataset is empty");
  model.check_config(config);
  struct Item {
    bool feasible = false;
    double loss = 0.0;
    std::size_t edits = 0;
  };
  std::vector<Item> items(data.size());
  const auto p = model.constants();
  const auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < data.size(); i += stride) {
      const auto& u = data[i];
      const auto logits = model.head_logits(p, model.forward(p, utterance_features(model, p, u), config));
      items[i].edits = edit_distance(u.labels, greedy_decode(logits.value()));
      try {
        items[i].loss = ctc_loss(logits, u.labels).item();
        items[i].feasible = true;
      } catch (const CtcInfeasible&) {
      }
    }
  };
  const auto start = Clock::now();
  const auto workers = static_cast<std::size_t>(std::clamp<int>(threads, 1, static_cast<int>(data.size())));
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
  }
  EvalResult r;
  r.wall_ms = elapsed_ms(start);
  r.utterances = data.size();
  double loss = 0.0;
  std::size_t feasible = 0, edits = 0, ref = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    edits += items[i].edits;
    ref += data[i].labels.size();
    if (items[i].feasible) {
      loss += items[i].loss;
      ++feasible;
    } else {
      ++r.skipped_infeasible;
    }
  }
  r.loss = feasible ? loss / static_cast<double>(feasible) : std::numeric_limits<double>::quiet_NaN();
  r.symbol_error = ref ? static_cast<double>(edits) / static_cast<double>(ref) : 0.0;
  return r;
}

int worker_threads() {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("STOCHPOOL_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) {
      throw ConfigError(std::string("STOCHPOOL_THREADS must be a positive integer, got '") + env + "'");
    }
    n = std::min(n, static_cast<int>(v));
  }
  return n;
}

}  // namespace stochpool
