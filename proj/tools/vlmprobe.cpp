// vlmprobe: dataset generation, trial running, analysis and a mock backend.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "vlmprobe/client.hpp"
#include "vlmprobe/corpus.hpp"
#include "vlmprobe/dataset.hpp"
#include "vlmprobe/errors.hpp"
#include "vlmprobe/metrics.hpp"
#include "vlmprobe/mock.hpp"
#include "vlmprobe/prompts.hpp"
#include "vlmprobe/runner.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vlmprobe;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitPartial = 1;
constexpr int kExitFatal = 2;
constexpr int kConfigSchemaVersion = 1;
constexpr const char* kEndpointEnv = "VLMPROBE_ENDPOINT";
constexpr std::string_view kMockPrefix = "mock:";

json read_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read config {}", path.string()));
  auto j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ConfigError(fmt::format("{} is not a JSON object", path.string()));
  if (!j.contains("schema_version") || j["schema_version"] != kConfigSchemaVersion) {
    throw ConfigError(fmt::format("{}: schema_version must be {}", path.string(), kConfigSchemaVersion));
  }
  return j;
}

DatasetConfig dataset_config_from(const json& j) {
  DatasetConfig config;
  auto body = j.contains("dataset") ? j["dataset"] : j;
  body.erase("schema_version");
  from_json(body, config);
  return config;
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string config;
  std::string out = "dataset";
  std::optional<std::uint64_t> seed;
  std::optional<int> radius;
};

int cmd_gen_dataset(const GenArgs& a) {
  auto config = a.config.empty() ? DatasetConfig{} : dataset_config_from(read_config(a.config));
  if (a.seed) config.seed = *a.seed;
  if (a.radius) config.object_radius = *a.radius;
  const auto manifest = generate_dataset(config, a.out);
  fmt::print("{}\n", (fs::path(a.out) / "manifest.json").string());
  fmt::print(stderr, "generated {} images\n", manifest.entries.size());
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct RunArgs {
  std::string config;
  std::vector<std::string> manifests;
  std::string catalog;
  std::vector<std::string> task_classes;
  std::string endpoint;
  std::string mock;
  std::string model_id;
  std::string out = "run";
  std::string attention_mode;
  std::vector<int> levels;
  std::optional<int> parallelism;
  std::optional<int> max_new_tokens;
  std::optional<std::uint64_t> seed;
  std::optional<int> max_attempts;
  std::string dump_root;
  std::optional<std::size_t> max_trials;
};

template <typename T>
void fill(std::optional<T>& target, const json& j, const char* key) {
  if (!target && j.contains(key)) target = j[key].get<T>();
}

void fill(std::string& target, const json& j, const char* key) {
  if (target.empty() && j.contains(key)) target = j[key].get<std::string>();
}

int cmd_run(RunArgs a, bool out_given) {
  json cfg = json::object();
  if (!a.config.empty()) cfg = read_config(a.config);
  try {
    if (a.manifests.empty() && cfg.contains("manifests")) a.manifests = cfg["manifests"].get<std::vector<std::string>>();
    if (a.task_classes.empty() && cfg.contains("task_classes")) {
      a.task_classes = cfg["task_classes"].get<std::vector<std::string>>();
    }
    if (a.levels.empty() && cfg.contains("levels")) a.levels = cfg["levels"].get<std::vector<int>>();
    fill(a.catalog, cfg, "catalog");
    fill(a.endpoint, cfg, "endpoint");
    fill(a.mock, cfg, "mock");
    fill(a.model_id, cfg, "model_id");
    fill(a.attention_mode, cfg, "attention_mode");
    fill(a.dump_root, cfg, "dump_root");
    fill(a.parallelism, cfg, "parallelism");
    fill(a.max_attempts, cfg, "max_attempts");
    if (cfg.contains("generation")) {
      fill(a.max_new_tokens, cfg["generation"], "max_new_tokens");
      fill(a.seed, cfg["generation"], "seed");
    }
    if (!out_given && cfg.contains("out_dir")) a.out = cfg["out_dir"].get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("run config: {}", e.what()));
  }

  const bool has_dataset = cfg.contains("dataset");
  if (has_dataset == !a.manifests.empty()) {
    throw ConfigError("give exactly one stimulus source: --manifest paths or a config 'dataset' section");
  }
  if (!a.endpoint.empty() && !a.mock.empty()) throw ConfigError("give an endpoint or a mock preset, not both");
  if (!a.mock.empty()) a.endpoint = std::string(kMockPrefix) + a.mock;
  if (a.endpoint.empty()) {
    if (const char* env = std::getenv(kEndpointEnv)) a.endpoint = env;
  }
  if (a.endpoint.empty()) throw ConfigError(fmt::format("no endpoint: pass --endpoint or set {}", kEndpointEnv));

  const fs::path out_dir = a.out;
  if (has_dataset) {
    const auto dataset_dir = out_dir / "dataset";
    generate_dataset(dataset_config_from(cfg), dataset_dir);
    a.manifests.push_back((dataset_dir / "manifest.json").string());
  }

  std::vector<CorpusManifest> manifests;
  for (const auto& path : a.manifests) {
    auto m = load_corpus(path);
    if (!a.task_classes.empty() &&
        std::find(a.task_classes.begin(), a.task_classes.end(), to_string(m.task_class)) == a.task_classes.end()) {
      continue;
    }
    manifests.push_back(std::move(m));
  }
  for (const auto& t : a.task_classes) {
    if (!parse_task_class(t)) throw UnknownTaskClass(fmt::format("unknown task class '{}'", t));
  }
  const auto catalog = a.catalog.empty() ? PromptCatalog::builtin() : PromptCatalog::load(a.catalog);

  RunOptions options;
  options.parallelism = a.parallelism.value_or(1);
  if (options.parallelism < 1) throw ConfigError("parallelism must be at least 1");
  if (a.max_new_tokens) options.generation.max_new_tokens = *a.max_new_tokens;
  if (a.seed) options.generation.seed = *a.seed;
  if (!a.attention_mode.empty()) {
    const auto mode = parse_attention_mode(a.attention_mode);
    if (!mode) throw ConfigError(fmt::format("unknown attention mode '{}'", a.attention_mode));
    options.attention_mode = *mode;
  }
  if (!a.levels.empty()) options.levels = a.levels;
  if (a.max_attempts) options.submit.max_attempts = *a.max_attempts;
  if (!a.dump_root.empty()) options.submit.dump_root = a.dump_root;
  options.max_new_trials = a.max_trials;
  options.model_id = a.model_id.empty() ? a.endpoint : a.model_id;

  std::unique_ptr<MockBackend> backend;
  std::unique_ptr<Transport> transport;
  if (a.endpoint.starts_with(kMockPrefix)) {
    GroundTruthIndex index;
    for (const auto& m : manifests) index.add(m);
    backend = std::make_unique<MockBackend>(mock_preset(a.endpoint.substr(kMockPrefix.size())), std::move(index));
    transport = std::make_unique<MockTransport>(*backend);
  } else {
    transport = std::make_unique<HttpTransport>(a.endpoint);
  }

  const auto summary = run_trials(manifests, catalog, *transport, options, out_dir);
  fmt::print(stderr, "planned {} trials: {} already complete, {} ok, {} failed\n", summary.planned, summary.skipped,
             summary.ok, summary.failed);
  fmt::print("{}\n", (out_dir / kTrialsFile).string());
  return summary.failed > 0 ? kExitPartial : kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_analyze(const std::string& trials, std::string out) {
  const fs::path trials_path = trials;
  const auto run_dir = trials_path.has_parent_path() ? trials_path.parent_path() : fs::path(".");
  if (out.empty()) out = run_dir.string();

  const auto records = load_trial_records(trials_path);
  const auto results = results_from_records(records, run_dir);

  const auto provenance = provenance_of(records);
  if (results.empty()) throw EmptyInput(fmt::format("{} holds no successful trials", trials_path.string()));

  const auto bundle = build_report(results, provenance);
  for (const auto& path : emit_report(bundle, out)) fmt::print("{}\n", path.string());
  for (const auto& row : bundle.accuracy) {
    if (row.group.grouping != Grouping::prompt) continue;
    fmt::print(stderr, "{:<24} n={:<5} accuracy={:.3f} unparseable={}\n", row.group.label(), row.n, row.accuracy,
               row.unparseable);
  }
  if (bundle.provenance.attention_errors > 0) {
    fmt::print(stderr, "warning: {} trials had unreadable attention payloads\n", bundle.provenance.attention_errors);
  }
  return provenance.trials_failed > 0 ? kExitPartial : kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_mock_serve(const std::string& preset, const std::string& host, int port,
                   const std::vector<std::string>& manifest_paths, const std::string& dump_dir) {
  auto config = mock_preset(preset);
  if (!dump_dir.empty()) config.dump_dir = dump_dir;
  GroundTruthIndex index;
  for (const auto& path : manifest_paths) index.add(load_corpus(path));
  if (index.size() == 0) fmt::print(stderr, "warning: no manifests given; every image will be unknown\n");

  // Stop on SIGINT/SIGTERM via a dedicated thread, outside signal context.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  const MockBackend backend(config, std::move(index));
  MockServer server(backend);
  const int bound = server.bind(host, port);
  if (bound < 0) throw ConfigError(fmt::format("cannot bind {}:{}", host, port));
  std::jthread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  fmt::print("listening on http://{}:{} (preset {})\n", host, bound, preset);
  std::fflush(stdout);
  server.listen();
  waiter.detach();
  return kExitOk;
}

int cmd_corpus_skeleton(const std::string& images, const std::string& task_class, const std::string& out) {
  const auto task = parse_task_class(task_class);
  if (!task) throw UnknownTaskClass(fmt::format("unknown task class '{}'", task_class));
  const auto text = corpus_skeleton(images, *task);
  if (out.empty()) {
    std::cout << text;
  } else {
    write_file_atomic(out, text);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probe vision-language models on counting tasks and analyze where they attend."};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-dataset", "Render the synthetic shape-counting dataset");
  gen_cmd->add_option("--config", gen.config, "JSON dataset config (with schema_version)")->check(CLI::ExistingFile);
  gen_cmd->add_option("-o,--out", gen.out, "Output directory")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Override the dataset seed");
  gen_cmd->add_option("--radius", gen.radius, "Override the object radius in pixels");

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Run every (image, prompt) trial against a backend");
  run_cmd->add_option("--config", run.config, "JSON run config (with schema_version)")->check(CLI::ExistingFile);
  run_cmd->add_option("-m,--manifest", run.manifests, "Corpus manifest (repeatable)");
  run_cmd->add_option("--catalog", run.catalog, "Prompt catalog JSON (default: built-in v1)");
  run_cmd->add_option("--task-class", run.task_classes, "Only run manifests of these task classes");
  auto* endpoint_opt = run_cmd->add_option(
      "-e,--endpoint", run.endpoint, fmt::format("Backend URL or mock:<preset> (default: ${})", kEndpointEnv));
  run_cmd->add_option("--mock", run.mock, "Use the in-process mock backend with this preset")->excludes(endpoint_opt);
  run_cmd->add_option("--model-id", run.model_id, "Model identity used in trial ids (default: the endpoint)");
  auto* out_opt = run_cmd->add_option("-o,--out", run.out, "Run directory")->capture_default_str();
  run_cmd->add_option("--attention-mode", run.attention_mode, "none | head_averaged | full");
  run_cmd->add_option("--levels", run.levels, "Prompt levels to run (default 1 2 3)");
  run_cmd->add_option("-j,--parallelism", run.parallelism, "Concurrent requests");
  run_cmd->add_option("--max-new-tokens", run.max_new_tokens);
  run_cmd->add_option("--seed", run.seed, "Generation seed");
  run_cmd->add_option("--max-attempts", run.max_attempts, "Attempts per trial for retryable failures");
  run_cmd->add_option("--dump-root", run.dump_root, "Directory that backend sidecar paths are relative to");
  run_cmd->add_option("--max-trials", run.max_trials, "Stop after dispatching this many new trials");

  std::string trials_path, analyze_out;
  auto* analyze_cmd = app.add_subcommand("analyze", "Compute metrics and write report/ CSV and SVG files");
  analyze_cmd->add_option("trials", trials_path, "Path to trials.jsonl")->required();
  analyze_cmd->add_option("-o,--out", analyze_out, "Output directory (default: next to trials.jsonl)");

  std::string preset = "zero-bias", host = "127.0.0.1", dump_dir;
  int port = 8080;
  std::vector<std::string> serve_manifests;
  auto* serve_cmd = app.add_subcommand("mock-serve", "Serve the mock backend over HTTP");
  serve_cmd->add_option("preset", preset, fmt::format("One of: {}", fmt::join(mock_preset_names(), ", ")))
      ->capture_default_str();
  serve_cmd->add_option("-p,--port", port, "Port (0 picks a free one)")->capture_default_str();
  serve_cmd->add_option("--host", host)->capture_default_str();
  serve_cmd->add_option("-m,--manifest", serve_manifests, "Manifests providing ground truth (repeatable)");
  serve_cmd->add_option("--dump-dir", dump_dir, "Write large payloads here as sidecar files");

  std::string images, task_class = "synthetic", skeleton_out;
  auto* skeleton_cmd = app.add_subcommand("corpus-skeleton", "Write a manifest skeleton for a folder of images");
  skeleton_cmd->add_option("images", images, "Image directory")->required()->check(CLI::ExistingDirectory);
  skeleton_cmd->add_option("--task-class", task_class)->capture_default_str();
  skeleton_cmd->add_option("-o,--out", skeleton_out, "Output file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitFatal;
  }

  try {
    if (*gen_cmd) return cmd_gen_dataset(gen);
    if (*run_cmd) return cmd_run(run, out_opt->count() > 0);
    if (*analyze_cmd) return cmd_analyze(trials_path, analyze_out);
    if (*serve_cmd) return cmd_mock_serve(preset, host, port, serve_manifests, dump_dir);
    if (*skeleton_cmd) return cmd_corpus_skeleton(images, task_class, skeleton_out);
  } catch (const MissingImageError& e) {
    fmt::print(stderr, "error: {}: {}\n", e.kind(), e.what());
    for (const auto& m : e.missing()) fmt::print(stderr, "  missing: {}\n", m);
    return kExitFatal;
  } catch (const Error& e) {
    fmt::print(stderr, "error: {}: {}\n", e.kind(), e.what());
    return kExitFatal;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitFatal;
  }
  return kExitFatal;
}
