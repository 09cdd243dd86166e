#pragma once

#include <compare>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vlmprobe/attention.hpp"
#include "vlmprobe/dataset.hpp"
#include "vlmprobe/parsing.hpp"
#include "vlmprobe/runner.hpp"

namespace vlmprobe {

/// A trial after parsing and attention analysis.
struct TrialResult {
  std::string trial_id;
  TaskClass task_class = TaskClass::synthetic;
  std::optional<ShapeKind> shape;
  int prompt_level = 1;
  int ground_truth_count = 0;
  std::optional<CountBucket> bucket;
  ParseOutcome parse;
  std::optional<int> prediction_error;  // gt - predicted; absent iff unparseable
  std::optional<AttentionProportions> attention;
  std::string attention_error;  // why a recorded payload could not be analyzed
  std::string model_id;

  bool correct() const noexcept { return prediction_error && *prediction_error == 0; }
};

/// Builds a result from an explicit outcome, enforcing the error invariant.
TrialResult make_result(std::string trial_id, TaskClass task_class, std::optional<ShapeKind> shape, int level,
                        int ground_truth_count, ParseOutcome parse);

/// Parses every successful record and analyzes its dump (paths relative to
/// run_dir). Failed trials have no answer and are left out.
std::vector<TrialResult> results_from_records(std::span<const TrialRecord> records,
                                              const std::filesystem::path& run_dir);

enum class Grouping { prompt, shape, prompt_shape };

std::string_view to_string(Grouping grouping) noexcept;

struct GroupKey {
  Grouping grouping = Grouping::prompt;
  TaskClass task_class = TaskClass::synthetic;
  std::optional<int> level;
  std::optional<ShapeKind> shape;

  /// "synthetic/L2", "synthetic/circle", "synthetic/L2/circle", "flag_stars/L1"
  std::string label() const;
  auto operator<=>(const GroupKey&) const = default;
};

GroupKey group_of(const TrialResult& result, Grouping grouping);

struct AccuracyRow {
  GroupKey group;
  std::size_t n = 0;
  std::size_t correct = 0;
  std::size_t incorrect_parsed = 0;
  std::size_t unparseable = 0;
  double accuracy = 0.0;
  double unparseable_rate = 0.0;
};

/// Exact-match fraction per group; unparseable answers count as incorrect.
/// Groups without trials do not appear. Throws EmptyInput.
std::vector<AccuracyRow> accuracy(std::span<const TrialResult> results, Grouping grouping);

struct ErrorRow {
  GroupKey group;
  std::optional<CountBucket> bucket;  // nullopt: every bucket together
  SummaryStats stats;
};

/// Summary of gt - predicted per group, overall and per count bucket. Only
/// parseable results contribute. Throws EmptyInput when none are.
std::vector<ErrorRow> error_distribution(std::span<const TrialResult> results, Grouping grouping,
                                         std::span<const CountBucket> buckets);

/// Buckets for the error breakdown: the dataset buckets recorded on the
/// results when every result has one, quantile buckets otherwise.
std::vector<CountBucket> error_buckets(std::span<const TrialResult> results, int quantiles = 4);

/// Contiguous integer buckets splitting the values into roughly equal-mass
/// quantile ranges. Ties can merge buckets, so fewer than `k` may come back.
std::vector<CountBucket> quantile_buckets(std::vector<int> values, int k);

enum class Region { image, prompt, generated };

struct AttentionRow {
  GroupKey group;
  SummaryStats stats;
};

/// Distribution of one region's proportion per group over results that carry
/// attention. Empty when none do.
std::vector<AttentionRow> attention_table(std::span<const TrialResult> results, Grouping grouping, Region region);

struct Provenance {
  std::string config_hash;
  std::vector<std::string> model_ids;
  std::size_t trials_total = 0;
  std::size_t trials_failed = 0;
  std::size_t attention_errors = 0;
};

/// Hash over the settings shared by a run: generation params, attention
/// mode, model ids, manifests and prompt texts.
std::string config_hash(std::span<const TrialRecord> records);

/// Config hash, sorted model ids and failure count of a set of records.
Provenance provenance_of(std::span<const TrialRecord> records);

struct ReportBundle {
  Provenance provenance;
  std::vector<AccuracyRow> accuracy;
  std::vector<ErrorRow> errors;
  std::vector<AttentionRow> attn_image;
  std::vector<AttentionRow> attn_prompt;
  std::vector<AttentionRow> attn_generated;

  bool empty() const noexcept { return accuracy.empty(); }
};

ReportBundle build_report(std::span<const TrialResult> results, Provenance provenance,
                          std::span<const Grouping> groupings);

/// Default groupings: by prompt, and by prompt and shape.
ReportBundle build_report(std::span<const TrialResult> results, Provenance provenance);

struct ReportFormats {
  bool csv = true;
  bool svg = true;
};

/// Writes report/{accuracy,error_dist,attn_img,attn_prompt,attn_gen}.{csv,svg}
/// under out_dir. Output bytes depend only on the bundle. Throws EmptyInput
/// for an empty bundle before touching the filesystem.
std::vector<std::filesystem::path> emit_report(const ReportBundle& bundle, const std::filesystem::path& out_dir,
                                               ReportFormats formats = {});

/// CSV and SVG text, exposed for tests.
std::string accuracy_csv(const ReportBundle& bundle);
std::string error_csv(const ReportBundle& bundle);
std::string attention_csv(const ReportBundle& bundle, Region region);
std::string accuracy_svg(const ReportBundle& bundle);
std::string error_svg(const ReportBundle& bundle);
std::string attention_svg(const ReportBundle& bundle, Region region);

}  // namespace vlmprobe
