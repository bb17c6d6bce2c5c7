#include "safesteer/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "safesteer/error.hpp"
#include "safesteer/eval.hpp"
#include "safesteer/fixtures.hpp"
#include "safesteer/plots.hpp"
#include "safesteer/replay_backend.hpp"
#include "safesteer/steer_decode.hpp"
#include "safesteer/toy_transformer.hpp"

namespace safesteer {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void usage(const std::string& msg) { throw Error(ErrorKind::Usage, msg); }

std::string default_out_dir() {
  const char* env = std::getenv(kOutDirEnv);
  return env != nullptr && *env != '\0' ? env : ".";
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Collects what a command read and wrote; written last as manifest.json.
class Run {
 public:
  Run(std::string command, std::span<const std::string> args, std::string out_dir)
      : command_(std::move(command)), out_dir_(std::move(out_dir)),
        start_(std::chrono::steady_clock::now()), started_at_(utc_timestamp()) {
    args_ = Json::array();
    for (const auto& a : args) args_.push_back(a);
    config_ = Json::object();
  }

  fs::path output(const std::string& name) {
    fs::create_directories(out_dir_);
    const fs::path p = fs::path(out_dir_) / name;
    outputs_.push_back(p.string());
    return p;
  }
  void input(const std::string& path) { inputs_.push_back(path); }
  Json& config() { return config_; }
  void set_seed(std::uint64_t seed) { seed_ = seed; }
  void set_tokens(std::size_t tokens) { tokens_ = tokens; }

  void finish() {
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    Json m;
    m["command"] = command_;
    m["args"] = args_;
    m["config"] = config_;
    m["inputs"] = inputs_;
    m["outputs"] = outputs_;
    m["seed"] = seed_ ? Json(*seed_) : Json(nullptr);
    m["tool_version"] = kToolVersion;
    m["started_at"] = started_at_;
    m["wall_clock_seconds"] = seconds;
    m["tokens_per_second"] =
        tokens_ && seconds > 0.0 ? Json(static_cast<double>(*tokens_) / seconds) : Json(nullptr);
    fs::create_directories(out_dir_);
    write_json_file(m, fs::path(out_dir_) / "manifest.json");
  }

 private:
  std::string command_;
  Json args_;
  std::string out_dir_;
  std::chrono::steady_clock::time_point start_;
  std::string started_at_;
  Json config_;
  std::vector<std::string> inputs_;
  std::vector<std::string> outputs_;
  std::optional<std::uint64_t> seed_;
  std::optional<std::size_t> tokens_;
};

std::vector<TokenId> parse_tokens(const std::string& text) {
  std::string normalized = text;
  for (char& c : normalized) {
    if (c == ',') c = ' ';
  }
  std::istringstream is(normalized);
  std::vector<TokenId> out;
  std::string word;
  while (is >> word) {
    try {
      std::size_t used = 0;
      const long v = std::stol(word, &used);
      if (used != word.size()) throw std::invalid_argument(word);
      out.push_back(static_cast<TokenId>(v));
    } catch (const std::exception&) {
      throw Error(ErrorKind::Validation, "not a token id: '" + word + "'");
    }
  }
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open for reading: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> read_lines(const std::string& path) {
  std::istringstream is(read_text_file(path));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

// "a:b:c" (inclusive, step c), "a:b" (step 1) or "a,b,c".
std::vector<int> parse_range(const std::string& spec) {
  std::vector<int> out;
  try {
    if (spec.find(':') != std::string::npos) {
      std::vector<int> parts;
      std::stringstream ss(spec);
      std::string item;
      while (std::getline(ss, item, ':')) parts.push_back(std::stoi(item));
      if (parts.size() < 2 || parts.size() > 3) usage("bad range '" + spec + "'");
      const int step = parts.size() == 3 ? parts[2] : 1;
      if (step <= 0 || parts[1] < parts[0]) usage("bad range '" + spec + "'");
      for (int v = parts[0]; v <= parts[1]; v += step) out.push_back(v);
    } else {
      std::stringstream ss(spec);
      std::string item;
      while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
    }
  } catch (const std::logic_error&) {
    usage("bad range '" + spec + "'");
  }
  if (out.empty()) usage("empty range '" + spec + "'");
  return out;
}

Json steer_config_json(const SteerConfig& c) {
  return {{"k", c.k},
          {"step_budget", c.step_budget},
          {"tau", c.tau},
          {"base_temperature", c.base_temperature},
          {"max_tokens", c.max_tokens},
          {"seed", c.seed},
          {"enable_probe", c.enable_probe},
          {"enable_msav", c.enable_msav},
          {"eos_id", c.eos_id ? Json(*c.eos_id) : Json(nullptr)},
          {"blend_lambda", c.blend_lambda},
          {"negate_mu", c.steering.negate_mu}};
}

// Decoding knobs shared by decode, eval and sweep.
struct SteerFlags {
  SteerConfig config;
  int eos = -1;

  void add(CLI::App* cmd, bool with_switches) {
    cmd->add_option("--k", config.k, "candidate-set size")->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--step", config.step_budget, "decoding steps resampled by the probe")
        ->capture_default_str()
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--tau", config.tau, "resampling temperature on probe scores")->capture_default_str();
    cmd->add_option("--temperature", config.base_temperature, "base sampling temperature")
        ->capture_default_str();
    cmd->add_option("--max-tokens", config.max_tokens)->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--blend", config.blend_lambda,
                    "ablation: resample on lambda*logit + (1-lambda)*score")
        ->capture_default_str();
    cmd->add_option("--eos", eos, "end-of-sequence token id (-1: none)")->capture_default_str();
    cmd->add_flag("--negate-mu", config.steering.negate_mu, "experiment: steer along -mu");
    if (with_switches) {
      cmd->add_flag("--no-probe", [this](std::int64_t) { config.enable_probe = false; }, "disable probe resampling");
      cmd->add_flag("--no-msav", [this](std::int64_t) { config.enable_msav = false; }, "disable MSAV steering");
    }
  }

  SteerConfig resolve() const {
    SteerConfig c = config;
    if (eos >= 0) c.eos_id = eos;
    validate(c);
    return c;
  }
};

std::vector<std::vector<TokenId>> fixture_prompts(const ToyTransformer& model, const std::string& category,
                                                  std::size_t count, std::uint64_t seed) {
  return attack_prompts(model, parse_category(category), count, seed);
}

// ---- commands ----

struct ToyConfigCmd {
  std::string out_dir = default_out_dir();
  ToyConfig config = standard_planted_config();
  bool no_plant = false;
  double magnitude = 4.0;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("toy-config", "write a toy transformer config (planted by default)");
    cmd->add_option("--out-dir", out_dir)->capture_default_str();
    cmd->add_option("--seed", config.seed)->capture_default_str();
    cmd->add_option("--dim", config.dim)->capture_default_str();
    cmd->add_option("--layers", config.layers)->capture_default_str();
    cmd->add_option("--heads", config.heads)->capture_default_str();
    cmd->add_option("--vocab-size", config.vocab_size)->capture_default_str();
    cmd->add_option("--magnitude", magnitude, "planted offset magnitude")->capture_default_str();
    cmd->add_flag("--no-plant", no_plant, "no planted safe/harmful tokens");
  }

  void run(Run& r) {
    ToyConfig c = config;
    if (no_plant) {
      c.planted.reset();
    } else {
      c.planted->magnitude = magnitude;
    }
    validate(c);
    r.config() = to_json(c);
    r.set_seed(c.seed);
    write_json_file(to_json(c), r.output("toy.json"));
  }
};

struct MakeCorpusCmd {
  std::string out_dir = default_out_dir();
  std::string kind = "planted";
  std::string toy_config;
  std::size_t dim = 32;
  double separation = 4.0;
  CorpusComposition composition;
  std::uint64_t seed = 0;
  bool sidecar = false;
  std::string name = "corpus.jsonl";

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("make-corpus", "generate a synthetic labeled prefill corpus");
    cmd->add_option("--out-dir", out_dir)->capture_default_str();
    cmd->add_option("--kind", kind)->check(CLI::IsMember({"planted", "gaussian"}))->capture_default_str();
    cmd->add_option("--toy-config", toy_config, "toy config (planted kind)");
    cmd->add_option("--dim", dim, "dimension (gaussian kind)")->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--separation", separation, "cluster separation in sigmas (gaussian kind)")
        ->capture_default_str();
    cmd->add_option("--benign", composition.benign)->capture_default_str();
    cmd->add_option("--per-attack", composition.per_attack)->capture_default_str();
    cmd->add_option("--seed", seed)->capture_default_str();
    cmd->add_option("--name", name, "output file name")->capture_default_str();
    cmd->add_flag("--sidecar", sidecar, "store vectors in a raw f32 sidecar (values rounded to f32)");
  }

  void run(Run& r) {
    std::vector<QuerySample> samples;
    if (kind == "gaussian") {
      samples = gaussian_corpus(dim, separation, composition, seed);
      r.config() = {{"kind", kind}, {"dim", dim}, {"separation", separation}};
    } else {
      if (toy_config.empty()) usage("make-corpus --kind planted needs --toy-config");
      r.input(toy_config);
      auto model = std::make_shared<const ToyTransformer>(read_toy_config(toy_config));
      samples = planted_corpus(model, composition, seed);
      r.config() = {{"kind", kind}, {"toy_config", toy_config}};
    }
    r.config()["benign"] = composition.benign;
    r.config()["per_attack"] = composition.per_attack;
    r.config()["sidecar"] = sidecar;
    r.set_seed(seed);
    // The sidecar is lossless only for f32 values, so round first.
    if (sidecar) {
      for (auto& s : samples) {
        for (auto& x : s.h0) x = static_cast<float>(x);
      }
    }
    write_corpus(samples, r.output(name), {sidecar});
  }
};

struct FitProbeCmd {
  std::string out_dir = default_out_dir();
  std::string corpus;
  std::size_t components = 4;
  TrainConfig train;
  double threshold = 0.0;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("fit-probe", "fit the PCA + logistic decoding probe");
    cmd->add_option("--out-dir", out_dir)->capture_default_str();
    cmd->add_option("--corpus", corpus)->required()->check(CLI::ExistingFile);
    cmd->add_option("--components", components, "principal components")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    cmd->add_option("--lr", train.learning_rate)->capture_default_str();
    cmd->add_option("--epochs", train.epochs)->capture_default_str();
    cmd->add_option("--l2", train.l2)->capture_default_str();
    cmd->add_option("--seed", train.seed)->capture_default_str();
    cmd->add_option("--weight-harmful", train.weight_harmful, "class weight")->capture_default_str();
    cmd->add_option("--weight-harmless", train.weight_harmless, "class weight")->capture_default_str();
    cmd->add_option("--threshold", threshold, "decision cutoff on the pre-sigmoid score")
        ->capture_default_str();
  }

  void run(Run& r) {
    r.input(corpus);
    const auto samples = read_corpus(corpus);
    auto result = train_probe(samples, components, train);
    result.probe.threshold = threshold;
    r.config() = {{"components", components},   {"lr", train.learning_rate},
                  {"epochs", train.epochs},     {"l2", train.l2},
                  {"threshold", threshold},     {"weight_harmful", train.weight_harmful},
                  {"weight_harmless", train.weight_harmless}};
    r.set_seed(train.seed);
    write_probe(result.probe, r.output("probe.json"));
    write_loss_csv(result.loss_history, r.output("loss.csv"));
    write_line_svg(result.loss_history, "probe training loss", "loss", r.output("loss.svg"));
  }
};

struct ExtractMsavCmd {
  std::string out_dir = default_out_dir();
  std::string corpus;
  std::optional<double> alpha_max;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("extract-msav", "compute the modal semantic alignment vector");
    cmd->add_option("--out-dir", out_dir)->capture_default_str();
    cmd->add_option("--corpus", corpus)->required()->check(CLI::ExistingFile);
    cmd->add_option("--alpha-max", alpha_max, "cap on the adaptive steering strength");
  }

  void run(Run& r) {
    r.input(corpus);
    auto bundle = extract_msav(read_corpus(corpus));
    bundle.alpha_max = alpha_max;
    r.config() = {{"alpha_max", alpha_max ? Json(*alpha_max) : Json(nullptr)}};
    write_steering(bundle, r.output("steering.json"));
  }
};

struct DecodeCmd {
  std::string out_dir = default_out_dir();
  std::string toy_config;
  std::string replay;
  std::size_t trace_index = 0;
  std::size_t vocab_size = 0;
  std::string probe_path;
  std::string steer_path;
  std::string prompt;
  std::string prompt_file;
  std::string category = "BENIGN";
  std::string id = "decode";
  std::uint64_t seed = 0;
  SteerFlags flags;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("decode", "generate with decoding-probe resampling and MSAV steering");
    cmd->add_option("--out-dir", out_dir)->capture_default_str();
    auto* toy = cmd->add_option("--toy-config", toy_config, "toy transformer backend")->check(CLI::ExistingFile);
    auto* rep = cmd->add_option("--replay", replay, "trace-replay backend")->check(CLI::ExistingFile);
    toy->excludes(rep);
    cmd->add_option("--trace-index", trace_index, "trace line to replay")->capture_default_str();
    cmd->add_option("--vocab-size", vocab_size, "replay vocabulary size (0: infer)")->capture_default_str();
    cmd->add_option("--probe", probe_path)->check(CLI::ExistingFile);
    cmd->add_option("--steer", steer_path)->check(CLI::ExistingFile);
    auto* p = cmd->add_option("--prompt", prompt, "token ids, space or comma separated");
    auto* pf = cmd->add_option("--prompt-file", prompt_file)->check(CLI::ExistingFile);
    p->excludes(pf);
    cmd->add_option("--category", category, "category recorded in the trace query")->capture_default_str();
    cmd->add_option("--id", id, "query id recorded in the trace")->capture_default_str();
    cmd->add_option("--seed", seed)->capture_default_str();
    flags.add(cmd, true);
  }

  void run(Run& r) {
    if (toy_config.empty() == replay.empty()) usage("decode needs exactly one of --toy-config or --replay");
    SteerConfig cfg = flags.resolve();
    cfg.seed = seed;

    std::unique_ptr<DecoderSession> session;
    std::string model_id;
    std::optional<std::vector<TokenId>> recorded_prompt;
    if (!toy_config.empty()) {
      r.input(toy_config);
      const auto tc = read_toy_config(toy_config);
      model_id = "toy-seed-" + std::to_string(tc.seed);
      session = std::make_unique<ToySession>(std::make_shared<const ToyTransformer>(tc));
    } else {
      r.input(replay);
      auto traces = read_traces(replay);
      if (trace_index >= traces.size()) usage("--trace-index beyond the traces in " + replay);
      recorded_prompt = traces[trace_index].prompt_tokens;
      model_id = traces[trace_index].query.model.value_or("");
      session = std::make_unique<ReplaySession>(std::move(traces[trace_index]),
                                                vocab_size ? std::optional(vocab_size) : std::nullopt);
    }

    std::vector<TokenId> tokens;
    if (!prompt.empty()) {
      tokens = parse_tokens(prompt);
    } else if (!prompt_file.empty()) {
      r.input(prompt_file);
      tokens = parse_tokens(read_text_file(prompt_file));
    } else if (recorded_prompt) {
      tokens = *recorded_prompt;
    } else {
      usage("decode needs --prompt or --prompt-file");
    }

    std::optional<ProbeModel> probe;
    std::optional<SteeringBundle> bundle;
    if (cfg.enable_probe || cfg.enable_msav) {
      if (probe_path.empty()) usage("--probe is required unless both --no-probe and --no-msav are given");
      r.input(probe_path);
      probe = read_probe(probe_path);
    }
    if (cfg.enable_msav) {
      if (steer_path.empty()) usage("--steer is required unless --no-msav is given");
      r.input(steer_path);
      bundle = read_steering(steer_path);
    }
    const Defenses defenses{probe ? &*probe : nullptr, bundle ? &*bundle : nullptr};
    const auto result = generate(*session, defenses, cfg, tokens);

    DecodeTrace trace;
    trace.query.id = id;
    trace.query.category = parse_category(category);
    trace.query.label = implied_label(trace.query.category);
    trace.query.h0 = result.h0;
    trace.query.layer_index = session->layer_index();
    trace.query.extraction_point = session->extraction_point();
    if (!model_id.empty()) trace.query.model = model_id;
    trace.prompt_tokens = tokens;
    trace.steps = result.steps;
    trace.final_text = tokens_to_text(result.tokens);

    r.config() = steer_config_json(cfg);
    r.config()["backend"] = toy_config.empty() ? "replay" : "toy";
    r.config()["prompt"] = tokens;
    r.config()["steering_applied"] = result.steering_applied;
    r.config()["alpha"] = result.alpha;
    r.set_seed(seed);
    r.set_tokens(result.tokens.size());
    write_traces(std::span(&trace, 1), r.output("trace.jsonl"));
    {
      std::ofstream audit(r.output("audit.jsonl"), std::ios::binary | std::ios::trunc);
      if (!audit) throw Error(ErrorKind::Io, "cannot write audit.jsonl");
      for (const auto& a : result.audit) audit << to_json(a).dump() << '\n';
    }
    {
      std::ofstream text(r.output("output.txt"), std::ios::binary | std::ios::trunc);
      text << *trace.final_text << '\n';
    }
  }
};

struct EvalCmd {
  std::string out_dir = default_out_dir();
  std::string probe_path;
  std::string corpus;
  std::string texts;
  std::string patterns;
  std::string toy_config;
  std::string steer_path;
  std::string category = "SD";
  std::size_t num_prompts = 50;
  std::uint64_t prompt_seed = 1;
  PairedConfig paired;
  bool negated_arm = false;
  SteerFlags flags;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("eval", "probe separability, refusal rate and paired ablation arms");
    cmd->add_option("--out-dir", out_dir)->capture_default_str();
    cmd->add_option("--probe", probe_path)->required()->check(CLI::ExistingFile);
    cmd->add_option("--corpus", corpus, "held-out corpus for accuracy/AUC")->check(CLI::ExistingFile);
    cmd->add_option("--texts", texts, "one generated text per line for refusal rate")->check(CLI::ExistingFile);
    cmd->add_option("--patterns", patterns, "refusal patterns, one per line")->check(CLI::ExistingFile);
    auto* toy = cmd->add_option("--toy-config", toy_config, "planted toy backend for paired arms")
                    ->check(CLI::ExistingFile);
    cmd->add_option("--steer", steer_path)->check(CLI::ExistingFile)->needs(toy);
    cmd->add_option("--category", category, "attack category of generated prompts")->capture_default_str();
    cmd->add_option("--num-prompts", num_prompts)->capture_default_str();
    cmd->add_option("--prompt-seed", prompt_seed)->capture_default_str();
    cmd->add_option("--runs", paired.runs)->capture_default_str();
    cmd->add_option("--base-seed", paired.base_seed)->capture_default_str();
    cmd->add_option("--window", paired.window, "tokens per run scored for emission")->capture_default_str();
    cmd->add_flag("--negated-arm", negated_arm, "add a full arm steering along -mu");
    flags.add(cmd, false);
  }

  void run(Run& r) {
    r.input(probe_path);
    const auto probe = read_probe(probe_path);
    EvalReport report;
    if (!toy_config.empty()) {
      if (steer_path.empty()) usage("paired arms need --steer");
      r.input(toy_config);
      r.input(steer_path);
      const auto tc = read_toy_config(toy_config);
      const auto bundle = read_steering(steer_path);
      const ToyTransformer model(tc);
      const auto prompts = fixture_prompts(model, category, num_prompts, prompt_seed);
      paired.include_negated_mu = negated_arm;
      report = paired_comparison(prompts, tc, probe, bundle, flags.resolve(), paired);
      report.config_echo["category"] = category;
      report.config_echo["prompt_seed"] = prompt_seed;
    } else {
      report.judge_note =
          "No paired arms were run; LlamaGuard and GPT-4 judging are out of scope.";
    }
    if (!corpus.empty()) {
      r.input(corpus);
      const auto held_out = read_corpus(corpus);
      const auto sep = separability(probe, held_out);
      report.probe_accuracy = sep.accuracy;
      report.probe_auc = sep.auc;
      report.category_score_means = category_score_means(probe, held_out);
    }
    report.refusal_patterns = default_refusal_patterns();
    if (!patterns.empty()) {
      r.input(patterns);
      report.refusal_patterns = read_lines(patterns);
    }
    if (!texts.empty()) {
      r.input(texts);
      report.refusal_rate = refusal_rate(read_lines(texts), report.refusal_patterns);
    }
    std::size_t tokens = 0;
    for (const auto& a : report.arms) tokens += a.total_tokens;
    r.config() = report.config_echo;
    r.set_seed(paired.base_seed);
    r.set_tokens(tokens);
    write_json_file(to_json(report), r.output("report.json"));
    write_arms_csv(report.arms, r.output("rates.csv"));
  }
};

struct ProjectCmd {
  std::string out_dir = default_out_dir();
  std::string probe_path;
  std::string corpus;
  std::string traces;
  std::size_t components = 2;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("project", "2-D PCA projection of prefill and decoding states");
    cmd->add_option("--out-dir", out_dir)->capture_default_str();
    cmd->add_option("--probe", probe_path, "reuse this probe's PCA")->check(CLI::ExistingFile);
    cmd->add_option("--corpus", corpus)->check(CLI::ExistingFile);
    cmd->add_option("--traces", traces)->check(CLI::ExistingFile);
    cmd->add_option("--components", components, "components when fitting PCA on --corpus")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
  }

  void run(Run& r) {
    if (corpus.empty() && traces.empty()) usage("project needs --corpus and/or --traces");
    std::vector<QuerySample> samples;
    std::vector<DecodeTrace> decoded;
    if (!corpus.empty()) {
      r.input(corpus);
      samples = read_corpus(corpus);
    }
    if (!traces.empty()) {
      r.input(traces);
      decoded = read_traces(traces);
    }
    PcaModel pca;
    if (!probe_path.empty()) {
      r.input(probe_path);
      pca = read_probe(probe_path).pca;
    } else {
      if (samples.empty()) usage("project without --probe needs --corpus to fit PCA");
      std::vector<HiddenVec> hs;
      for (const auto& s : samples) hs.push_back(s.h0);
      pca = fit_pca(hs, components);
    }
    auto points = project_2d(samples, pca);
    const auto trace_points = project_2d(decoded, pca);
    points.insert(points.end(), trace_points.begin(), trace_points.end());
    r.config() = {{"components", pca.num_components()}, {"pca_source", probe_path.empty() ? "corpus" : "probe"}};
    write_points_csv(points, r.output("points.csv"));
    write_scatter_svg(points, "PCA projection (PC1 vs PC2)", r.output("points.svg"));
  }
};

struct SweepCmd {
  std::string out_dir = default_out_dir();
  std::string toy_config;
  std::string probe_path;
  std::string steer_path;
  std::string k_range = "5:20:5";
  std::string step_range = "0:20:5";
  std::string category = "SD";
  std::size_t num_prompts = 50;
  std::uint64_t prompt_seed = 1;
  bool msav = false;
  PairedConfig paired{200, 0, 20, false};
  SteerFlags flags;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("sweep", "grid of harmful-token emission over (k, step)");
    cmd->add_option("--out-dir", out_dir)->capture_default_str();
    cmd->add_option("--toy-config", toy_config)->required()->check(CLI::ExistingFile);
    cmd->add_option("--probe", probe_path)->required()->check(CLI::ExistingFile);
    cmd->add_option("--steer", steer_path, "needed with --msav")->check(CLI::ExistingFile);
    cmd->add_option("--k-range", k_range, "a:b:step or comma list")->capture_default_str();
    cmd->add_option("--step-range", step_range, "a:b:step or comma list")->capture_default_str();
    cmd->add_option("--category", category)->capture_default_str();
    cmd->add_option("--num-prompts", num_prompts)->capture_default_str();
    cmd->add_option("--prompt-seed", prompt_seed)->capture_default_str();
    cmd->add_option("--runs", paired.runs)->capture_default_str();
    cmd->add_option("--base-seed", paired.base_seed)->capture_default_str();
    cmd->add_option("--window", paired.window)->capture_default_str();
    cmd->add_flag("--msav", msav, "also apply MSAV steering in every cell");
    flags.add(cmd, false);
  }

  void run(Run& r) {
    const auto ks = parse_range(k_range);
    const auto steps = parse_range(step_range);
    r.input(toy_config);
    r.input(probe_path);
    const auto tc = read_toy_config(toy_config);
    const auto probe = read_probe(probe_path);
    std::optional<SteeringBundle> bundle;
    if (msav) {
      if (steer_path.empty()) usage("sweep --msav needs --steer");
      r.input(steer_path);
      bundle = read_steering(steer_path);
    }
    SteerConfig cfg = flags.resolve();
    cfg.enable_probe = true;
    cfg.enable_msav = msav;
    const ToyTransformer model(tc);
    const auto prompts = fixture_prompts(model, category, num_prompts, prompt_seed);
    const auto result = sweep(prompts, tc, probe, bundle ? &*bundle : nullptr, cfg, ks, steps, paired);

    std::size_t tokens = result.vanilla.total_tokens;
    for (const auto& c : result.cells) tokens += c.result ? c.result->total_tokens : 0;
    r.config() = steer_config_json(cfg);
    r.config()["k_range"] = ks;
    r.config()["step_range"] = steps;
    r.config()["runs"] = paired.runs;
    r.config()["window"] = paired.window;
    r.config()["category"] = category;
    r.config()["vanilla"] = to_json(result.vanilla);
    r.set_seed(paired.base_seed);
    r.set_tokens(tokens);
    write_sweep_csv(result, r.output("sweep.csv"));
  }
};

struct ValidateCmd {
  std::vector<std::string> corpora, traces, probes, steers, toys;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("validate", "check files against the corpus/trace/probe/steering schemas");
    cmd->add_option("--corpus", corpora)->check(CLI::ExistingFile);
    cmd->add_option("--trace", traces)->check(CLI::ExistingFile);
    cmd->add_option("--probe", probes)->check(CLI::ExistingFile);
    cmd->add_option("--steer", steers)->check(CLI::ExistingFile);
    cmd->add_option("--toy-config", toys)->check(CLI::ExistingFile);
  }

  void run(std::ostream& out) {
    if (corpora.empty() && traces.empty() && probes.empty() && steers.empty() && toys.empty()) {
      usage("validate needs at least one file");
    }
    for (const auto& p : corpora) {
      const auto s = read_corpus(p);
      out << "ok corpus " << p << " (" << s.size() << " samples, dim " << (s.empty() ? 0 : s[0].dim()) << ")\n";
    }
    for (const auto& p : traces) {
      const auto t = read_traces(p);
      out << "ok trace " << p << " (" << t.size() << " traces)\n";
    }
    for (const auto& p : probes) {
      const auto pr = read_probe(p);
      out << "ok probe " << p << " (dim " << pr.dim() << ", " << pr.pca.num_components() << " components)\n";
    }
    for (const auto& p : steers) {
      const auto b = read_steering(p);
      out << "ok steering " << p << " (dim " << b.dim() << ")\n";
    }
    for (const auto& p : toys) {
      const auto c = read_toy_config(p);
      out << "ok toy-config " << p << " (dim " << c.dim << ", vocab " << c.vocab_size << ")\n";
    }
  }
};

}  // namespace

int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"safesteer: decoding-time safety steering with a hidden-state probe"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  ToyConfigCmd toy_cmd;
  MakeCorpusCmd corpus_cmd;
  FitProbeCmd fit_cmd;
  ExtractMsavCmd msav_cmd;
  DecodeCmd decode_cmd;
  EvalCmd eval_cmd;
  ProjectCmd project_cmd;
  SweepCmd sweep_cmd;
  ValidateCmd validate_cmd;
  toy_cmd.add(app);
  corpus_cmd.add(app);
  fit_cmd.add(app);
  msav_cmd.add(app);
  decode_cmd.add(app);
  eval_cmd.add(app);
  project_cmd.add(app);
  sweep_cmd.add(app);
  validate_cmd.add(app);

  std::vector<std::string> argv_storage{"safesteer"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_storage) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::CallForVersion& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return exit_code(ErrorKind::Usage);
  }

  try {
    auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "validate") {
      validate_cmd.run(out);
      return 0;
    }
    auto dispatch = [&](auto& cmd) {
      Run r(name, args, cmd.out_dir);
      cmd.run(r);
      r.finish();
    };
    if (name == "toy-config") dispatch(toy_cmd);
    else if (name == "make-corpus") dispatch(corpus_cmd);
    else if (name == "fit-probe") dispatch(fit_cmd);
    else if (name == "extract-msav") dispatch(msav_cmd);
    else if (name == "decode") dispatch(decode_cmd);
    else if (name == "eval") dispatch(eval_cmd);
    else if (name == "project") dispatch(project_cmd);
    else if (name == "sweep") dispatch(sweep_cmd);
    out << name << ": done\n";
    return 0;
  } catch (const Error& e) {
    err << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error (io): " << e.what() << '\n';
    return exit_code(ErrorKind::Io);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace safesteer
