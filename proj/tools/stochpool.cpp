// stochpool: verify | pretrain | finetune | sweep | decode | cost
//
// Exit codes: 0 success, 1 verification or training failure, 2 usage or
// configuration error.

#include "CLI11.hpp"
#include "json.hpp"

#include "stochpool/audio.hpp"
#include "stochpool/checkpoint.hpp"
#include "stochpool/cost_model.hpp"
#include "stochpool/run_config.hpp"
#include "stochpool/training.hpp"
#include "stochpool/verify.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

namespace fs = std::filesystem;
using namespace stochpool;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

// Symbol prototypes are shared by every synthetic split.
constexpr std::uint64_t kSymbolTaskSeed = 1;

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;
};

void add_flag(CLI::App* cmd, Common& c, const std::string& key, const std::string& help, std::string name = "") {
  if (name.empty()) name = "--" + key;
  cmd->add_option_function<std::string>(
      name, [&c, key](const std::string& v) { c.flags[key] = v; }, help);
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config-file", c.config_file, "Plain-text run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.sets, "Override a config key (key=value), repeatable");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config_file.empty() ? RunConfig() : RunConfig::load(c.config_file);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
  for (const auto& [k, v] : c.flags) cfg.set(k, v);
  return cfg;
}

void echo_config(const RunConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream(dir / "effective_config.txt") << cfg.serialize();
}

void require_file(const std::string& key, const std::string& path) {
  if (path.empty()) throw InputError("missing required '" + key + "'");
  if (!fs::exists(path)) throw InputError(key + " path does not exist: '" + path + "'");
}

EncoderModel<double> model_for(const RunConfig& cfg) {
  if (cfg.is_set("checkpoint")) {
    require_file("checkpoint", cfg.get("checkpoint"));
    return load_checkpoint(cfg.get("checkpoint"));
  }
  return EncoderModel<double>(preset(cfg.get("preset")), static_cast<std::uint64_t>(cfg.get_int("seed")));
}

CompressionConfig parse_config(const std::string& text, int depth) { return CompressionConfig::parse(text, depth); }

SymbolTask symbol_task(const RunConfig& cfg, int dim) {
  SymbolTask task;
  task.vocab = static_cast<int>(cfg.get_int("vocab"));
  task.dim = dim;
  task.task_seed = kSymbolTaskSeed;
  return task;
}

// Labelled corpus for fine-tuning / evaluation; `split` keeps synthetic splits disjoint.
std::vector<Utterance> labelled_data(const RunConfig& cfg, const std::string& source, std::size_t count, int dim,
                                     std::uint64_t split) {
  const auto seed = Rng(static_cast<std::uint64_t>(cfg.get_int("seed"))).fork(split).next_u64();
  if (source == "synthetic") return symbol_task(cfg, dim).features(count, seed);
  if (source == "synthetic-audio") return symbol_task(cfg, dim).audio(count, seed);
  require_file("dataset", source);
  return load_manifest(source, static_cast<int>(cfg.get_int("vocab")));
}

TrainPlan plan_for(const RunConfig& cfg, int depth) {
  TrainPlan plan;
  plan.mode = cfg.get("mode") == "deterministic" ? TrainMode::Deterministic : TrainMode::Stochastic;
  if (plan.mode == TrainMode::Deterministic) plan.fixed = parse_config(cfg.get("config"), depth);
  plan.sets = {cfg.get_int_list("squeeze_set"), cfg.get_int_list("kv_set"), cfg.get_int_list("q_set")};
  plan.steps = static_cast<int>(cfg.get_int("steps"));
  plan.batch = static_cast<int>(cfg.get_int("batch"));
  plan.lr = cfg.get_double("lr");
  plan.warmup_fraction = cfg.get_double("warmup");
  plan.max_grad_norm = cfg.get_double("max_grad_norm");
  plan.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  plan.freeze_feature_extractor = cfg.get_bool("freeze_feature_extractor");
  plan.random_validation = cfg.get_bool("random_validation");
  if (cfg.is_set("validation_config")) plan.validation_config = parse_config(cfg.get("validation_config"), depth);
  return plan;
}

std::optional<TrainState> resume_state(const RunConfig& cfg) {
  if (!cfg.is_set("resume")) return std::nullopt;
  require_file("resume", cfg.get("resume"));
  return load_train_state(cfg.get("resume"));
}

LogSink jsonl_sink(std::ofstream& log) {
  return [&log](const TrainLogRecord& r) { log << r.to_json() << '\n' << std::flush; };
}

int cmd_verify(const std::string& filter, bool inject_fault) {
  if (!filter.empty()) {
    bool any = false;
    for (const auto& s : verify_suites()) any = any || s.find(filter) != std::string::npos;
    if (!any) throw InputError("--filter '" + filter + "' matches no suite");
  }
  std::cout << "# verify filter=" << (filter.empty() ? "*" : filter) << " inject_fault=" << (inject_fault ? "true" : "false")
            << '\n';
  const auto results = run_verify({filter, inject_fault});
  print_verify_table(std::cout, results);
  const bool ok = std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
  return ok ? kOk : kFailure;
}

int cmd_pretrain(const RunConfig& cfg) {
  const fs::path out = cfg.get("output_dir");
  echo_config(cfg, out);
  auto model = model_for(cfg);
  const auto plan = plan_for(cfg, model.config().depth);
  const auto count = static_cast<std::size_t>(cfg.get_int("train_utterances"));
  const auto source = cfg.get("dataset");
  std::vector<Utterance> data;
  if (source == "synthetic") {
    data = multi_sine_features(count, model.config().model_dim, plan.seed);
  } else {
    data = labelled_data(cfg, source, count, model.config().model_dim, 0);
  }
  const auto resume = resume_state(cfg);
  std::ofstream log(out / "train_log.jsonl", resume ? std::ios::app : std::ios::trunc);
  const auto result = pretrain_toy(std::move(model), plan, data, jsonl_sink(log), resume ? &*resume : nullptr);
  save_checkpoint(result.model, out / "model.stpl");
  save_train_state(result.state, out / "train_state.bin");
  std::cout << "pretrain: " << result.log.size() << " steps, loss " << result.initial_loss << " -> " << result.final_loss
            << "\nwrote " << (out / "model.stpl").string() << '\n';
  return kOk;
}

int cmd_finetune(const RunConfig& cfg) {
  require_file("checkpoint", cfg.get("checkpoint"));
  const fs::path out = cfg.get("output_dir");
  echo_config(cfg, out);
  auto model = load_checkpoint(cfg.get("checkpoint"));
  const int dim = model.config().model_dim;
  const int depth = model.config().depth;
  const auto plan = plan_for(cfg, depth);
  const auto train = labelled_data(cfg, cfg.get("dataset"), static_cast<std::size_t>(cfg.get_int("train_utterances")), dim, 1);
  const auto val_source = cfg.is_set("validation_dataset") ? cfg.get("validation_dataset") : cfg.get("dataset");
  const auto validation =
      labelled_data(cfg, val_source, static_cast<std::size_t>(cfg.get_int("validation_utterances")), dim, 2);
  const auto resume = resume_state(cfg);
  std::ofstream log(out / "train_log.jsonl", resume ? std::ios::app : std::ios::trunc);
  const auto result = finetune(std::move(model), plan, static_cast<int>(cfg.get_int("vocab")), train, validation,
                               jsonl_sink(log), resume ? &*resume : nullptr);
  save_checkpoint(result.model, out / "model.stpl");
  save_train_state(result.state, out / "train_state.bin");
  if (result.skipped_infeasible > 0) {
    std::cerr << "warning: skipped " << result.skipped_infeasible << " CTC-infeasible utterances\n";
  }
  std::cout << "finetune: " << result.log.size() << " steps, loss " << result.initial_loss << " -> " << result.final_loss;
  if (result.best_step) std::cout << ", best validation " << result.best_validation_loss << " at step " << *result.best_step;
  std::cout << '\n';
  nlohmann::ordered_json eval = nlohmann::ordered_json::array();
  for (const auto& c : standard_configs(depth)) {
    const auto e = evaluate(result.model, c, validation, worker_threads());
    std::cout << "  " << c.to_string() << "  loss " << e.loss << "  symbol_error " << e.symbol_error << '\n';
    eval.push_back({{"config", c.to_string()}, {"loss", e.loss}, {"symbol_error", e.symbol_error}, {"utterances", e.utterances}});
  }
  std::ofstream(out / "eval.json") << eval.dump(2) << '\n';
  return kOk;
}

std::vector<CompressionConfig> sweep_configs(const RunConfig& cfg, int depth) {
  auto configs = standard_configs(depth);
  auto words = cfg.get_words("configs");
  words.insert(words.begin(), cfg.get("config"));
  for (const auto& w : words) {
    auto c = parse_config(w, depth);
    if (std::find(configs.begin(), configs.end(), c) == configs.end()) configs.push_back(std::move(c));
  }
  return configs;
}

int cmd_sweep(const RunConfig& cfg) {
  const fs::path out = cfg.get("output_dir");
  const auto model = model_for(cfg);
  const auto configs = sweep_configs(cfg, model.config().depth);
  echo_config(cfg, out);
  std::vector<Utterance> data;
  if (model.config().has_head()) {
    data = labelled_data(cfg, cfg.get("dataset"), static_cast<std::size_t>(cfg.get_int("validation_utterances")),
                         model.config().model_dim, 3);
  }
  SweepOptions opts;
  opts.frames = cfg.get_int("frames");
  opts.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  opts.timing.repeats = static_cast<int>(cfg.get_int("repeats"));
  opts.threads = worker_threads();
  const auto rows = sweep(model, configs, data, opts);
  std::ofstream csv(out / "sweep.csv");
  write_csv(csv, rows);
  std::ofstream(out / "sweep.json") << to_json(rows) << '\n';
  std::ofstream(out / "sweep_timing.json") << timing_json(rows) << '\n';
  write_csv(std::cout, rows);
  for (const auto& r : rows) {
    if (r.decode) std::cout << "# " << r.config << " decode_ms_median " << r.decode->median_ms << '\n';
  }
  return kOk;
}

int cmd_decode(const RunConfig& cfg, const std::vector<std::string>& files) {
  std::cerr << cfg.serialize();
  require_file("checkpoint", cfg.get("checkpoint"));
  const auto model = load_checkpoint(cfg.get("checkpoint"));
  if (!model.config().has_head()) throw InputError("checkpoint has no CTC head; fine-tune it first");
  const auto config = parse_config(cfg.get("config"), model.config().depth);
  model.check_config(config);
  const auto p = model.constants();
  for (const auto& f : files) {
    require_file("audio", f);
    const auto audio = read_wav(f);
    std::string transcript;
    if (model.config().feature_extractor.frames_for_samples(static_cast<std::int64_t>(audio.size())) > 0) {
      const auto x = model.extract_features(p, std::span<const double>(audio));
      transcript = format_transcript(greedy_decode(model.head_logits(p, model.forward(p, x, config)).value()));
    }
    std::cout << f << '\t' << transcript << '\n';
  }
  return kOk;
}

int cmd_cost(const RunConfig& cfg) {
  std::cerr << cfg.serialize();
  const EncoderConfig enc =
      cfg.is_set("checkpoint") ? (require_file("checkpoint", cfg.get("checkpoint")), load_checkpoint(cfg.get("checkpoint")).config())
                               : preset(cfg.get("preset"));
  std::vector<CostReport> rows;
  for (const auto& c : sweep_configs(cfg, enc.depth)) rows.push_back(analytic_cost(c, enc, cfg.get_int("frames")));
  write_csv(std::cout, rows);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic squeeze and attention pooling for speech encoders"};
  app.require_subcommand(1);

  std::string filter;
  bool inject_fault = false;
  auto* verify = app.add_subcommand("verify", "Run gradient, operator, attention, CTC and cost self-checks");
  verify->add_option("--filter", filter, "Only suites whose name contains this text");
  verify->add_flag("--inject-fault", inject_fault, "Disable upsample truncation to prove the checks can fail");

  Common pre, fine, swp, dec, cst;
  auto* pretrain = app.add_subcommand("pretrain", "Masked-frame regression pre-training");
  auto* finetune_cmd = app.add_subcommand("finetune", "CTC fine-tuning with a fresh output layer");
  auto* sweep_cmd = app.add_subcommand("sweep", "Analytic MACs, wall time and symbol error per config");
  auto* decode = app.add_subcommand("decode", "Greedy CTC transcripts for WAV files");
  auto* cost = app.add_subcommand("cost", "Analytic MAC breakdown only");

  const std::vector<std::pair<CLI::App*, Common*>> commands{
      {pretrain, &pre}, {finetune_cmd, &fine}, {sweep_cmd, &swp}, {decode, &dec}, {cost, &cst}};
  for (const auto& [cmd, c] : commands) {
    add_common(cmd, *c);
    add_flag(cmd, *c, "seed", "Random seed");
    add_flag(cmd, *c, "preset", "Model preset: tiny, small, B, L");
    add_flag(cmd, *c, "checkpoint", "Input checkpoint");
    add_flag(cmd, *c, "config", "Compression config S_f-S_k-S_q");
  }
  for (auto [cmd, c] : {std::pair{pretrain, &pre}, std::pair{finetune_cmd, &fine}, std::pair{sweep_cmd, &swp}}) {
    add_flag(cmd, *c, "output_dir", "Output directory", "--output,--output-dir");
  }
  for (auto [cmd, c] : {std::pair{pretrain, &pre}, std::pair{finetune_cmd, &fine}}) {
    add_flag(cmd, *c, "mode", "stochastic or deterministic");
    add_flag(cmd, *c, "steps", "Training steps");
    add_flag(cmd, *c, "dataset", "synthetic, synthetic-audio or a manifest path");
    add_flag(cmd, *c, "resume", "Continue from a training-state file");
  }
  for (auto [cmd, c] : {std::pair{sweep_cmd, &swp}, std::pair{cost, &cst}}) {
    add_flag(cmd, *c, "frames", "Input length in frames");
    add_flag(cmd, *c, "configs", "Extra configs beyond the four standard ones");
  }
  add_flag(sweep_cmd, swp, "repeats", "Timed repeats per utterance (>= 3)");
  add_flag(sweep_cmd, swp, "dataset", "Labelled data for symbol error");
  std::vector<std::string> audio_files;
  decode->add_option("audio", audio_files, "WAV files (16 kHz mono PCM16)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    worker_threads();
    if (verify->parsed()) return cmd_verify(filter, inject_fault);
    if (pretrain->parsed()) return cmd_pretrain(resolve(pre));
    if (finetune_cmd->parsed()) return cmd_finetune(resolve(fine));
    if (sweep_cmd->parsed()) return cmd_sweep(resolve(swp));
    if (decode->parsed()) return cmd_decode(resolve(dec), audio_files);
    if (cost->parsed()) return cmd_cost(resolve(cst));
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const AudioFormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const TrainingAborted& e) {
    std::cerr << "training aborted: " << e.what() << '\n';
    return kFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
