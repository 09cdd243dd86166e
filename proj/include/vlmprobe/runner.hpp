#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "vlmprobe/client.hpp"
#include "vlmprobe/corpus.hpp"
#include "vlmprobe/prompts.hpp"
#include "vlmprobe/protocol.hpp"

namespace vlmprobe {

inline constexpr std::string_view kTrialsFile = "trials.jsonl";
inline constexpr std::string_view kDumpsDir = "dumps";

/// One (image, prompt, model) trial as persisted in trials.jsonl.
struct TrialRecord {
  std::string trial_id;
  bool ok = false;
  std::string error_kind;
  std::string error_message;

  // stimulus
  std::string manifest_path;
  std::string image_path;
  std::string image_sha256;
  TaskClass task_class = TaskClass::synthetic;
  std::optional<ShapeKind> shape;
  int ground_truth_count = 0;
  std::optional<int> bucket_index;
  std::optional<CountBucket> bucket;

  // prompt and generation
  std::string template_id;
  int prompt_level = 1;
  AnswerFormat answer_format = AnswerFormat::curly_count;
  std::string prompt_text;
  GenerationParams generation;
  AttentionMode attention_mode = AttentionMode::head_averaged;

  // response
  std::string model_id;
  int num_layers = 0;
  int num_heads = 0;
  std::string generated_text;
  std::vector<std::string> generated_tokens;
  std::optional<RegionBoundaries> boundaries;
  std::string payload_transport = "absent";
  std::string dump_path;  // relative to the run directory

  int retry_count = 0;
  std::int64_t started_unix_ms = 0;
  double elapsed_ms = 0.0;
};

/// `with_timing = false` drops the wall-clock fields, leaving only content
/// that is reproducible across runs.
nlohmann::json record_to_json(const TrialRecord& record, bool with_timing = true);
TrialRecord record_from_json(const nlohmann::json& j);

struct TrialPlanItem {
  std::size_t manifest_index = 0;
  std::size_t entry_index = 0;
  PromptInstance prompt;
};

/// Cross product of every manifest entry with the requested prompt levels of
/// its task class. Synthetic templates with a shape slot take the entry's
/// shape.
std::vector<TrialPlanItem> plan_trials(const std::vector<CorpusManifest>& manifests, const PromptCatalog& catalog,
                                       const std::vector<int>& levels = {1, 2, 3});

/// hash(image bytes, prompt text, generation params, attention mode, model id)
std::string trial_id(const std::string& image_sha256, const std::string& prompt_text,
                     const GenerationParams& generation, AttentionMode mode, const std::string& model_id);

struct RunOptions {
  int parallelism = 1;
  GenerationParams generation;
  AttentionMode attention_mode = AttentionMode::head_averaged;
  std::string model_id;
  std::vector<int> levels{1, 2, 3};
  SubmitOptions submit;
  /// Stop with EndpointUnreachable when the first trial cannot reach the
  /// backend, instead of burning retries on every remaining trial.
  bool abort_if_unreachable = true;
  /// Dispatch at most this many new trials (simulates an interrupted run).
  std::optional<std::size_t> max_new_trials;
};

struct RunSummary {
  std::size_t planned = 0;
  std::size_t skipped = 0;  // already completed in an earlier run
  std::size_t ok = 0;
  std::size_t failed = 0;
};

/// Runs every planned trial not yet completed in out_dir/trials.jsonl.
/// Payloads are stored as out_dir/dumps/{trial_id}.attn before the record
/// line is appended, so an interrupted run resumes cleanly. Failed trials are
/// recorded, never dropped, and retried on the next run.
RunSummary run_trials(const std::vector<CorpusManifest>& manifests, const PromptCatalog& catalog,
                      Transport& transport, const RunOptions& options, const std::filesystem::path& out_dir);

/// Reads trials.jsonl, keeping the last record per trial id (in order of first
/// appearance). A torn final line is ignored.
std::vector<TrialRecord> load_trial_records(const std::filesystem::path& trials_path);

}  // namespace vlmprobe
