#include "speed/cli.hpp"

#include "speed/decode.hpp"
#include "speed/errors.hpp"
#include "speed/metrics.hpp"
#include "speed/model_io.hpp"
#include "speed/scripted.hpp"
#include "speed/trace_io.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <memory>
#include <optional>
#include <sstream>

namespace speed::cli {

namespace {

struct ModelOptions {
  std::string model_dir;
  std::optional<std::uint64_t> seed;
  std::string script;
  int n_unique = 2;
  int groups = 3;
  int d_model = 32;
  int n_heads = 4;
  int d_ffn = 0;  // 0: 4 * d_model
  int max_decode_length = 0;  // 0: model default
};

struct RunOptions {
  ModelOptions model;
  std::string prompt;
  std::vector<int> prompt_ids;
  std::string decoder = "both";
  std::string trace_path;
  std::string greedy_trace_path;
  std::string profile_path;
  double layer_bytes = 1.0;
  double emb_bytes = 0.0;
};

struct ProfileOptions {
  ModelOptions model;
  std::vector<std::string> prompts;
  std::string prompts_file;
  std::vector<int> prompt_ids;
  std::string engine = "speed";
  std::string out_path;
};

struct GenModelOptions {
  std::uint64_t seed = 1;
  std::string out_dir;
  ModelOptions shape;
  int vocab = kByteVocabSize;
};

struct GenScriptOptions {
  std::uint64_t seed = 1;
  int length = 64;
  int groups = 3;
  std::vector<double> probs;
  int alphabet = 256;
  std::string out_path;
};

struct CostOptions {
  CostSweepSpec spec;
  std::string out_path;
};

struct LoadedModel {
  std::unique_ptr<DecoderModel> model;
  ShareConfig config;  // run config, max_decode_length applied
  bool scripted = false;
};

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

void add_shape_options(CLI::App* app, ModelOptions& o) {
  app->add_option("--n-unique", o.n_unique, "Unique decoder layers (N_d)")->capture_default_str();
  app->add_option("--groups", o.groups, "Times the layer group is applied (G)")
      ->capture_default_str();
  app->add_option("--d-model", o.d_model, "Hidden size")->capture_default_str();
  app->add_option("--n-heads", o.n_heads, "Attention heads")->capture_default_str();
  app->add_option("--d-ffn", o.d_ffn, "FFN width (0 = 4 * d-model)")->capture_default_str();
}

void add_model_options(CLI::App* app, ModelOptions& o) {
  // Exactly one source is checked in load(), after any --config file is applied.
  app->add_option("--model", o.model_dir, "Model directory written by gen-model");
  app->add_option("--seed", o.seed, "Generate a random model in memory with this seed");
  app->add_option("--script", o.script, "Flip script file (scripted oracle model)");
  add_shape_options(app, o);
  app->add_option("--max-decode-length", o.max_decode_length,
                  "Generated-token cap (0 = model default)")
      ->capture_default_str();
}

ShareConfig shape_config(const ModelOptions& o, int vocab) {
  ShareConfig c;
  c.n_unique = o.n_unique;
  c.groups = o.groups;
  c.d_model = o.d_model;
  c.n_heads = o.n_heads;
  if (o.n_heads < 1 || o.d_model % o.n_heads != 0) {
    throw UsageError("--d-model must be a multiple of --n-heads");
  }
  c.d_head = o.d_model / o.n_heads;
  c.d_ffn = o.d_ffn > 0 ? o.d_ffn : 4 * o.d_model;
  c.vocab_size = vocab;
  if (o.max_decode_length > 0) c.max_decode_length = o.max_decode_length;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return c;
}

LoadedModel load(const ModelOptions& o) {
  const int sources = !o.model_dir.empty() + o.seed.has_value() + !o.script.empty();
  if (sources != 1) throw UsageError("give exactly one of --model, --seed, --script");
  LoadedModel out;
  if (!o.script.empty()) {
    auto model = std::make_unique<ScriptedModel>(load_script(o.script), 1, o.max_decode_length);
    out.config = model->config();
    out.model = std::move(model);
    out.scripted = true;
  } else if (!o.model_dir.empty()) {
    if (!std::filesystem::exists(std::filesystem::path(o.model_dir) / kManifestName)) {
      throw IoError("no model at " + o.model_dir);
    }
    auto file = load_model(o.model_dir);
    out.model = std::make_unique<NeuralModel>(std::move(file.model));
    out.config = out.model->config();
  } else {
    auto config = shape_config(o, kByteVocabSize);
    out.model = std::make_unique<NeuralModel>(generate_model(*o.seed, config));
    out.config = config;
  }
  if (o.max_decode_length > 0) out.config.max_decode_length = o.max_decode_length;
  return out;
}

void ensure_writable(const std::string& path) {
  if (path.empty()) return;
  std::ofstream probe(path, std::ios::app);
  if (!probe) throw IoError("cannot write " + path);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

std::string join_tokens(const std::vector<TokenId>& tokens) {
  std::ostringstream os;
  for (std::size_t i = 0; i < tokens.size(); ++i) os << (i ? "," : "") << tokens[i];
  return os.str();
}

std::vector<TokenId> prompt_tokens(const std::string& text, const std::vector<int>& ids) {
  if (!text.empty() && !ids.empty()) throw UsageError("give either --prompt or --prompt-ids");
  if (!ids.empty()) return {ids.begin(), ids.end()};
  return byte_tokens(text);
}

void report_run(std::ostream& out, const DecodeResult& r) {
  out << "engine=" << to_string(r.trace.engine) << " tokens=" << r.sequence.size()
      << " stages=" << r.trace.stages_executed() << " invalidations=" << r.trace.invalidations()
      << " sequence=" << join_tokens(r.sequence) << '\n';
}

int cmd_decode(const RunOptions& o, std::ostream& out) {
  if (o.decoder != "greedy" && o.decoder != "speed" && o.decoder != "both") {
    throw UsageError("--decoder must be greedy, speed or both");
  }
  for (const auto& p : {o.trace_path, o.greedy_trace_path, o.profile_path}) ensure_writable(p);
  const LoadedModel loaded = load(o.model);
  const auto prompt = prompt_tokens(o.prompt, o.prompt_ids);
  const bool run_greedy = o.decoder != "speed";
  const bool run_speed = o.decoder != "greedy";

  out << "config " << to_string(loaded.config) << '\n';
  std::optional<DecodeResult> greedy, speed;
  if (run_greedy) {
    greedy = decode_greedy(*loaded.model, loaded.config, prompt);
    report_run(out, *greedy);
  }
  if (run_speed) {
    speed = decode_speed(*loaded.model, loaded.config, prompt);
    report_run(out, *speed);
    const auto summary = stage_accounting(speed->trace);
    out << "accounting injections=" << summary.injections
        << " invalidated_tokens=" << summary.invalidated_tokens
        << " wasted_token_stages=" << summary.wasted_token_stages(loaded.config.groups) << '\n';
    const auto length = static_cast<std::int64_t>(speed->sequence.size());
    const auto report = cost_model({o.layer_bytes, o.emb_bytes, loaded.config.n_unique,
                                    loaded.config.groups, speed->trace.stages_executed(), length,
                                    length});
    out << "cost baseline_traffic=" << format_number(report.baseline_traffic)
        << " speed_traffic=" << format_number(report.speed_traffic)
        << " speedup=" << format_number(report.speedup)
        << " asymptotic_bound=" << format_number(report.asymptotic_bound) << '\n';
  }

  const DecodeResult& primary = speed ? *speed : *greedy;
  if (!o.trace_path.empty()) save_trace(primary.trace, o.trace_path);
  if (!o.greedy_trace_path.empty()) {
    if (!greedy) throw UsageError("--greedy-trace needs --decoder greedy or both");
    save_trace(greedy->trace, o.greedy_trace_path);
  }
  if (!o.profile_path.empty()) {
    write_text(o.profile_path, format_profile_csv(flip_profile(primary.trace)));
  }

  if (greedy && speed) {
    const auto& a = greedy->sequence;
    const auto& b = speed->sequence;
    if (a == b) {
      out << "equivalence=PASS\n";
      return kOk;
    }
    std::size_t i = 0;
    while (i < a.size() && i < b.size() && a[i] == b[i]) ++i;
    auto at = [&](const std::vector<TokenId>& v) {
      return i < v.size() ? std::to_string(v[i]) : std::string("end");
    };
    out << "equivalence=FAIL first_divergence=" << i << " greedy=" << at(a) << " speed=" << at(b)
        << '\n';
    return kEquivalenceFail;
  }
  return kOk;
}

std::vector<std::vector<TokenId>> profile_corpus(const ProfileOptions& o, bool scripted) {
  std::vector<std::vector<TokenId>> corpus;
  for (const auto& p : o.prompts) corpus.push_back(byte_tokens(p));
  if (!o.prompts_file.empty()) {
    std::ifstream in(o.prompts_file);
    if (!in) throw IoError("cannot open " + o.prompts_file);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) corpus.push_back(byte_tokens(line));
    }
  }
  if (!o.prompt_ids.empty()) corpus.emplace_back(o.prompt_ids.begin(), o.prompt_ids.end());
  if (corpus.empty() && scripted) corpus.emplace_back();
  if (corpus.empty()) throw UsageError("profile: empty prompt corpus");
  return corpus;
}

int cmd_profile(const ProfileOptions& o, std::ostream& out) {
  const Engine engine = engine_from_string(o.engine);
  ensure_writable(o.out_path);
  const LoadedModel loaded = load(o.model);
  FlipProfile total;
  for (const auto& prompt : profile_corpus(o, loaded.scripted)) {
    const auto result = engine == Engine::speed ? decode_speed(*loaded.model, loaded.config, prompt)
                                                : decode_greedy(*loaded.model, loaded.config, prompt);
    total.merge(flip_profile(result.trace));
  }
  const std::string csv = format_profile_csv(total);
  if (o.out_path.empty()) {
    out << csv;
  } else {
    write_text(o.out_path, csv);
  }
  return kOk;
}

int cmd_cost(const CostOptions& o, std::ostream& out) {
  ensure_writable(o.out_path);
  const std::string csv = format_cost_csv(cost_sweep(o.spec));
  if (o.out_path.empty()) {
    out << csv;
  } else {
    write_text(o.out_path, csv);
  }
  return kOk;
}

int cmd_gen_model(const GenModelOptions& o, std::ostream& out) {
  const ShareConfig config = shape_config(o.shape, o.vocab);
  const NeuralModel model = generate_model(o.seed, config);
  const auto table = save_model(model, o.seed, o.out_dir);
  out << "model " << o.out_dir << ' ' << to_string(config) << '\n';
  for (const auto& t : table) {
    out << "tensor " << t.name << ' ' << t.rows << 'x' << t.cols << " offset=" << t.offset
        << " seed=" << t.seed << '\n';
  }
  return kOk;
}

int cmd_gen_script(const GenScriptOptions& o, std::ostream& out) {
  std::vector<double> probs = o.probs;
  if (probs.size() == 1 && o.groups > 2) probs.assign(static_cast<std::size_t>(o.groups - 1), probs[0]);
  if (probs.empty()) probs.assign(static_cast<std::size_t>(std::max(o.groups - 1, 0)), 0.0);
  const FlipScript script = random_flip_script(o.seed, o.length, o.groups, probs, o.alphabet);
  if (o.out_path.empty()) {
    out << format_script(script);
  } else {
    save_script(script, o.out_path);
    out << "script " << o.out_path << " rows=" << script.length() << " groups=" << script.groups
        << '\n';
  }
  return kOk;
}

void error_line(std::ostream& err, int code, const std::string& kind, std::string message) {
  for (char& c : message) {
    if (c == '\n') c = ' ';
  }
  err << "error code=" << code << " kind=" << kind << " message=" << message << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Speculative pipelined decoding for cyclically shared decoders", "speed"};
  app.set_config("--config", "", "TOML/INI file supplying any option below");
  app.require_subcommand(1);
  app.fallthrough();  // lets `decode --config f` reach the top-level option

  RunOptions decode_opts;
  auto add_run_options = [](CLI::App* sub, RunOptions& o) {
    add_model_options(sub, o.model);
    sub->add_option("--prompt", o.prompt, "Byte-string prompt");
    sub->add_option("--prompt-ids", o.prompt_ids, "Comma-separated token-id prompt")
        ->delimiter(',');
    sub->add_option("--decoder", o.decoder, "greedy, speed or both")->capture_default_str();
    sub->add_option("--trace", o.trace_path, "JSON-lines trace of the speed (else greedy) run");
    sub->add_option("--greedy-trace", o.greedy_trace_path, "JSON-lines trace of the greedy run");
    sub->add_option("--profile-csv", o.profile_path, "Flip profile CSV of the traced run");
    sub->add_option("--layer-bytes", o.layer_bytes, "Bytes per unique decoder layer")
        ->capture_default_str();
    sub->add_option("--emb-bytes", o.emb_bytes, "Embedding/classifier bytes")
        ->capture_default_str();
  };
  auto* decode = app.add_subcommand("decode", "Decode with the greedy and/or pipelined engine");
  add_run_options(decode, decode_opts);

  RunOptions script_opts;
  script_opts.model.script = "";
  auto* script_run = app.add_subcommand("script-run", "Decode a flip script (scripted oracle)");
  script_run->add_option("--script", script_opts.model.script, "Flip script file")->required();
  script_run->add_option("--prompt-ids", script_opts.prompt_ids, "Comma-separated token ids")
      ->delimiter(',');
  script_run->add_option("--max-decode-length", script_opts.model.max_decode_length,
                         "Generated-token cap (0 = script length)");
  script_run->add_option("--decoder", script_opts.decoder, "greedy, speed or both")
      ->capture_default_str();
  script_run->add_option("--trace", script_opts.trace_path, "JSON-lines trace");
  script_run->add_option("--greedy-trace", script_opts.greedy_trace_path, "Greedy trace");
  script_run->add_option("--profile-csv", script_opts.profile_path, "Flip profile CSV");
  script_run->add_option("--layer-bytes", script_opts.layer_bytes, "Bytes per unique layer");
  script_run->add_option("--emb-bytes", script_opts.emb_bytes, "Embedding bytes");

  ProfileOptions profile_opts;
  auto* profile = app.add_subcommand("profile", "Flip proportions per group boundary (CSV)");
  add_model_options(profile, profile_opts.model);
  profile->add_option("--prompt", profile_opts.prompts, "Byte-string prompt (repeatable)");
  profile->add_option("--prompts-file", profile_opts.prompts_file, "One byte-string prompt per line");
  profile->add_option("--prompt-ids", profile_opts.prompt_ids, "Comma-separated token-id prompt")
      ->delimiter(',');
  profile->add_option("--engine", profile_opts.engine, "speed or greedy")->capture_default_str();
  profile->add_option("--out", profile_opts.out_path, "CSV path (default stdout)");

  CostOptions cost_opts;
  auto* cost = app.add_subcommand("cost", "Weight-traffic speedup sweep (CSV)");
  cost->add_option("--n-unique", cost_opts.spec.n_unique, "N_d values")->delimiter(',')
      ->capture_default_str();
  cost->add_option("--groups", cost_opts.spec.groups, "G values")->delimiter(',')
      ->capture_default_str();
  cost->add_option("--lengths", cost_opts.spec.lengths, "Generated lengths")->delimiter(',')
      ->capture_default_str();
  cost->add_option("--emb-ratios", cost_opts.spec.embedding_ratios, "B_emb / B_layer values")
      ->delimiter(',')
      ->capture_default_str();
  cost->add_option("--scenarios", cost_opts.spec.scenarios, "steady, perfect or flip:<p>")
      ->delimiter(',')
      ->capture_default_str();
  cost->add_option("--layer-bytes", cost_opts.spec.layer_bytes, "Bytes per unique layer")
      ->capture_default_str();
  cost->add_option("--seed", cost_opts.spec.seed, "Seed for flip scenarios")->capture_default_str();
  cost->add_option("--out", cost_opts.out_path, "CSV path (default stdout)");

  GenModelOptions gen_opts;
  auto* gen_model = app.add_subcommand("gen-model", "Write a deterministic random model");
  gen_model->add_option("--seed", gen_opts.seed, "Initialisation seed")->capture_default_str();
  gen_model->add_option("--out", gen_opts.out_dir, "Model directory")->required();
  add_shape_options(gen_model, gen_opts.shape);
  gen_model->add_option("--vocab", gen_opts.vocab, "Vocabulary size")->capture_default_str();
  gen_model->add_option("--max-decode-length", gen_opts.shape.max_decode_length,
                        "Default generated-token cap (0 = 64)");

  GenScriptOptions script_gen_opts;
  auto* gen_script = app.add_subcommand("gen-script", "Write a random flip script");
  gen_script->add_option("--seed", script_gen_opts.seed, "Seed")->capture_default_str();
  gen_script->add_option("--length", script_gen_opts.length, "Rows")->capture_default_str();
  gen_script->add_option("--groups", script_gen_opts.groups, "G")->capture_default_str();
  gen_script->add_option("--probs", script_gen_opts.probs,
                         "Flip probability per boundary (one value applies to all)")
      ->delimiter(',');
  gen_script->add_option("--alphabet", script_gen_opts.alphabet, "Token ids drawn from [0, n)")
      ->capture_default_str();
  gen_script->add_option("--out", script_gen_opts.out_path, "Script path (default stdout)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    error_line(err, kUsageError, "usage", e.what());
    return kUsageError;
  }

  try {
    if (*decode) return cmd_decode(decode_opts, out);
    if (*script_run) return cmd_decode(script_opts, out);
    if (*profile) return cmd_profile(profile_opts, out);
    if (*cost) return cmd_cost(cost_opts, out);
    if (*gen_model) return cmd_gen_model(gen_opts, out);
    if (*gen_script) return cmd_gen_script(script_gen_opts, out);
  } catch (const IoError& e) {
    error_line(err, kIoError, "io", e.what());
    return kIoError;
  } catch (const PipelineInvariantError& e) {
    error_line(err, kInternalError, "internal", e.what());
    return kInternalError;
  } catch (const std::invalid_argument& e) {
    error_line(err, kUsageError, "usage", e.what());
    return kUsageError;
  } catch (const std::out_of_range& e) {
    error_line(err, kUsageError, "usage", e.what());
    return kUsageError;
  } catch (const std::exception& e) {
    error_line(err, kInternalError, "internal", e.what());
    return kInternalError;
  }
  return kUsageError;
}

}  // namespace speed::cli
