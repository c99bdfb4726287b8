#include "stochpool/cost_model.hpp"

#include "json.hpp"
#include "stochpool/training.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <iomanip>
#include <sstream>

namespace stochpool {

namespace {

using Clock = std::chrono::steady_clock;

std::uint64_t u64(std::int64_t v) { return static_cast<std::uint64_t>(v); }
std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct ItemTimes {
  double median = 0.0, min = 0.0, max = 0.0;
  bool low_resolution = false;
};

ItemTimes summarize(const std::vector<Clock::duration>& raw) {
  std::vector<double> ms;
  for (const auto& d : raw) ms.push_back(std::chrono::duration<double, std::milli>(d).count());
  ItemTimes t;
  t.median = median(ms);
  t.min = *std::min_element(ms.begin(), ms.end());
  t.max = *std::max_element(ms.begin(), ms.end());
  auto sorted = raw;
  std::sort(sorted.begin(), sorted.end());
  t.low_resolution = sorted[sorted.size() / 2].count() < 100;
  return t;
}

// Warm-up for every job, then repeats interleaved across jobs.
std::vector<ItemTimes> time_interleaved(int repeats, const std::vector<std::function<void()>>& jobs) {
  for (const auto& job : jobs) job();
  std::vector<std::vector<Clock::duration>> raw(jobs.size());
  for (int r = 0; r < repeats; ++r) {
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      const auto start = Clock::now();
      jobs[j]();
      raw[j].push_back(Clock::now() - start);
    }
  }
  std::vector<ItemTimes> out;
  for (const auto& r : raw) out.push_back(summarize(r));
  return out;
}

void accumulate(Timing& total, const ItemTimes& t) {
  total.median_ms += t.median;
  total.min_ms += t.min;
  total.max_ms += t.max;
  total.low_resolution_items += t.low_resolution ? 1 : 0;
}

}  // namespace

MacBreakdown& MacBreakdown::operator+=(const MacBreakdown& o) {
  feature_extractor += o.feature_extractor;
  attn_projection += o.attn_projection;
  attn_scores += o.attn_scores;
  ffn += o.ffn;
  upsample += o.upsample;
  return *this;
}

MacBreakdown from_counter(const MacCounter& c) {
  return {c[MacCategory::FeatureExtractor], c[MacCategory::AttnProjection], c[MacCategory::AttnScores],
          c[MacCategory::Ffn], c[MacCategory::Upsample]};
}

CostReport analytic_cost(const CompressionConfig& config, const EncoderConfig& enc, std::int64_t frames,
                         std::optional<std::int64_t> samples) {
  if (frames < 1) throw std::invalid_argument("analytic_cost: frames must be >= 1");
  enc.validate();
  EncoderModel<double>::validate_config(enc, config);
  const auto& fe = enc.feature_extractor;
  const std::int64_t e = enc.model_dim;

  CostReport r;
  r.config = config.to_string();
  r.preset = enc.name;
  r.frames = frames;

  std::int64_t length = samples.value_or(fe.samples_for_frames(frames));
  if (fe.frames_for_samples(length) != frames) {
    throw std::invalid_argument("analytic_cost: " + std::to_string(length) + " samples give " +
                                std::to_string(fe.frames_for_samples(length)) + " frames, not " + std::to_string(frames));
  }
  for (std::size_t l = 0; l < fe.layers.size(); ++l) {
    const std::int64_t cin = l == 0 ? 1 : fe.channels(l - 1);
    const auto& layer = fe.layers[l];
    length = (length - layer.kernel) / layer.stride + 1;
    r.macs.feature_extractor += u64(length * fe.channels(l) * layer.kernel * cin);
  }
  r.macs.feature_extractor += u64(frames * fe.output_channels() * e);

  const std::int64_t t = ceil_div(frames, config.s_f);
  r.macs.feature_extractor += u64(t * e * enc.pos_conv_kernel * (e / enc.pos_conv_groups));
  for (const auto& f : config.per_layer) {
    r.macs.attn_projection += u64(4 * t * e * e);
    r.macs.attn_scores += u64(2 * ceil_div(t, f.s_q) * ceil_div(t, f.s_k) * e);
    r.macs.ffn += u64(2 * t * e * enc.ffn_dim);
  }
  if (config.s_f > 1) r.macs.upsample = u64(frames * e * e);
  return r;
}

MacBreakdown instrumented_cost(const EncoderModel<double>& model, const CompressionConfig& config, std::int64_t frames) {
  const auto samples = model.config().feature_extractor.samples_for_frames(frames);
  Rng rng = Rng(static_cast<std::uint64_t>(frames)).fork("instrumented-audio");
  std::vector<double> audio(static_cast<std::size_t>(samples));
  for (auto& s : audio) s = 0.1 * rng.normal();
  const auto p = model.constants();
  MacCounter counter;
  {
    MacRecording rec(counter);
    const auto x = model.extract_features(p, std::span<const double>(audio));
    model.forward(p, x, config);
  }
  if (counter[MacCategory::Other] != 0) {
    throw std::logic_error("instrumented forward charged " + std::to_string(counter[MacCategory::Other]) +
                           " MACs to no bucket");
  }
  return from_counter(counter);
}

std::vector<CostReport> measure(const EncoderModel<float>& model, const std::vector<CompressionConfig>& configs,
                               const std::vector<Utterance>& data, const MeasureOptions& options) {
  if (options.repeats < 3) throw ConfigError("measure needs at least 3 repeats, got " + std::to_string(options.repeats));
  if (data.empty()) throw std::invalid_argument("measure: dataset is empty");
  if (configs.empty()) throw ConfigError("measure: config list is empty");
  const bool head = model.config().has_head();
  std::vector<CostReport> rows(configs.size());
  std::vector<Timing> enc(configs.size(), Timing{0, 0, 0, options.repeats, 0}), dec = enc;
  for (std::size_t c = 0; c < configs.size(); ++c) {
    model.check_config(configs[c]);
    rows[c].config = configs[c].to_string();
    rows[c].preset = model.config().name;
  }
  const auto p = model.constants();
  for (const auto& u : data) {
    const std::vector<float> audio(u.audio.begin(), u.audio.end());
    const bool run_fe = u.has_audio() && options.include_feature_extractor;
    Tensor<float> input;
    if (!u.has_audio()) {
      input = Tensor<float>(Matrix<float>(u.features.cast<float>()));
    } else if (!run_fe) {
      input = model.extract_features(p, std::span<const float>(audio));
    }
    std::vector<Tensor<float>> encoded(configs.size());
    std::vector<std::function<void()>> jobs;
    for (std::size_t c = 0; c < configs.size(); ++c) {
      jobs.push_back([&, c] {
        encoded[c] = model.forward(p, run_fe ? model.extract_features(p, std::span<const float>(audio)) : input, configs[c]);
      });
    }
    const auto enc_times = time_interleaved(options.repeats, jobs);
    for (std::size_t c = 0; c < configs.size(); ++c) {
      accumulate(enc[c], enc_times[c]);
      rows[c].frames += encoded[c].rows();
    }
    if (!head) continue;
    std::vector<LabelSeq> sink(configs.size());
    jobs.clear();
    for (std::size_t c = 0; c < configs.size(); ++c) {
      jobs.push_back([&, c] { sink[c] = greedy_decode(model.head_logits(p, encoded[c]).value()); });
    }
    const auto dec_times = time_interleaved(options.repeats, jobs);
    for (std::size_t c = 0; c < configs.size(); ++c) accumulate(dec[c], dec_times[c]);
  }
  for (std::size_t c = 0; c < configs.size(); ++c) {
    rows[c].encoder = enc[c];
    if (head) rows[c].decode = dec[c];
  }
  return rows;
}

CostReport measure(const EncoderModel<float>& model, const CompressionConfig& config, const std::vector<Utterance>& data,
                   const MeasureOptions& options) {
  return measure(model, std::vector<CompressionConfig>{config}, data, options).front();
}

std::vector<CostReport> sweep(const EncoderModel<double>& model, const std::vector<CompressionConfig>& configs,
                              const std::vector<Utterance>& data, const SweepOptions& options) {
  if (configs.empty()) throw ConfigError("sweep: config list is empty");
  for (const auto& c : configs) model.check_config(c);
  std::vector<Utterance> inputs = data;
  if (inputs.empty()) {
    Rng rng = Rng(options.seed).fork("sweep-input");
    Utterance u;
    u.id = "random";
    u.features.resize(options.frames, model.config().model_dim);
    for (Eigen::Index i = 0; i < u.features.size(); ++i) u.features.data()[i] = rng.normal();
    inputs.push_back(std::move(u));
  }
  const bool labelled = !data.empty() && model.config().has_head() &&
                        std::all_of(data.begin(), data.end(), [](const Utterance& u) { return !u.labels.empty(); });
  std::vector<CostReport> timed;
  if (options.measure) timed = measure(model.cast<float>(), configs, inputs, options.timing);
  std::vector<CostReport> rows;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const auto& c = configs[i];
    CostReport row;
    row.config = c.to_string();
    row.preset = model.config().name;
    for (const auto& u : inputs) {
      const auto frames = utterance_frames(model, u);
      const auto one = analytic_cost(c, model.config(), frames,
                                     u.has_audio() ? std::optional<std::int64_t>(static_cast<std::int64_t>(u.audio.size()))
                                                   : std::nullopt);
      row.macs += one.macs;
      row.frames += frames;
    }
    if (options.measure) {
      row.encoder = timed[i].encoder;
      row.decode = timed[i].decode;
    }
    if (labelled) row.symbol_error = evaluate(model, c, data, options.threads).symbol_error;
    rows.push_back(std::move(row));
  }
  return rows;
}

const char* const kCsvHeader =
    "config,preset,frames,macs_total,macs_attn_scores,macs_attn_proj,macs_ffn,macs_fe,macs_upsample,"
    "wall_ms_median,wall_ms_min,wall_ms_max,symbol_error";

void write_csv(std::ostream& out, const std::vector<CostReport>& rows) {
  out << kCsvHeader << '\n';
  for (const auto& r : rows) {
    out << r.config << ',' << r.preset << ',' << r.frames << ',' << r.macs.total() << ',' << r.macs.attn_scores << ','
        << r.macs.attn_projection << ',' << r.macs.ffn << ',' << r.macs.feature_extractor << ',' << r.macs.upsample;
    out << std::setprecision(6) << std::fixed;
    if (r.encoder) {
      out << ',' << r.encoder->median_ms << ',' << r.encoder->min_ms << ',' << r.encoder->max_ms;
    } else {
      out << ",,,";
    }
    out << ',';
    if (r.symbol_error) out << *r.symbol_error;
    out << std::defaultfloat << '\n';
  }
}

std::string to_json(const std::vector<CostReport>& rows) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["config"] = r.config;
    j["preset"] = r.preset;
    j["frames"] = r.frames;
    j["macs_total"] = r.macs.total();
    j["macs_attn_scores"] = r.macs.attn_scores;
    j["macs_attn_proj"] = r.macs.attn_projection;
    j["macs_ffn"] = r.macs.ffn;
    j["macs_fe"] = r.macs.feature_extractor;
    j["macs_upsample"] = r.macs.upsample;
    j["wall_ms_median"] = r.encoder ? nlohmann::ordered_json(r.encoder->median_ms) : nlohmann::ordered_json();
    j["wall_ms_min"] = r.encoder ? nlohmann::ordered_json(r.encoder->min_ms) : nlohmann::ordered_json();
    j["wall_ms_max"] = r.encoder ? nlohmann::ordered_json(r.encoder->max_ms) : nlohmann::ordered_json();
    j["symbol_error"] = r.symbol_error ? nlohmann::ordered_json(*r.symbol_error) : nlohmann::ordered_json();
    arr.push_back(std::move(j));
  }
  return arr.dump(2);
}

std::string timing_json(const std::vector<CostReport>& rows) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  const auto put = [](const std::optional<Timing>& t) {
    if (!t) return nlohmann::ordered_json();
    nlohmann::ordered_json j;
    j["median_ms"] = t->median_ms;
    j["min_ms"] = t->min_ms;
    j["max_ms"] = t->max_ms;
    j["repeats"] = t->repeats;
    j["low_resolution_items"] = t->low_resolution_items;
    return j;
  };
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["config"] = r.config;
    j["encoder"] = put(r.encoder);
    j["decode"] = put(r.decode);
    arr.push_back(std::move(j));
  }
  return arr.dump(2);
}

std::vector<CompressionConfig> standard_configs(int depth) {
  std::vector<CompressionConfig> out;
  for (const auto& t : standard_triplets()) out.push_back(fixed_config(t[0], t[1], t[2], depth));
  return out;
}

}  // namespace stochpool
