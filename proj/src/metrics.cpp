#include "vlmprobe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "vlmprobe/errors.hpp"

namespace vlmprobe {

TrialResult make_result(std::string trial_id, TaskClass task_class, std::optional<ShapeKind> shape, int level,
                        int ground_truth_count, ParseOutcome parse) {
  TrialResult r;
  r.trial_id = std::move(trial_id);
  r.task_class = task_class;
  r.shape = shape;
  r.prompt_level = level;
  r.ground_truth_count = ground_truth_count;
  if (parse.status != ParseStatus::unparseable && parse.predicted_count) {
    r.prediction_error = ground_truth_count - *parse.predicted_count;
  } else {
    parse.status = ParseStatus::unparseable;
    parse.predicted_count.reset();
  }
  r.parse = std::move(parse);
  return r;
}

std::vector<TrialResult> results_from_records(std::span<const TrialRecord> records,
                                              const std::filesystem::path& run_dir) {
  std::vector<TrialResult> out;
  for (const auto& rec : records) {
    if (!rec.ok) continue;
    auto r = make_result(rec.trial_id, rec.task_class, rec.shape, rec.prompt_level, rec.ground_truth_count,
                         parse_answer(rec.generated_text, rec.answer_format));
    r.bucket = rec.bucket;
    r.model_id = rec.model_id;
    if (!rec.dump_path.empty()) {
      try {
        if (!rec.boundaries) throw SchemaError("record has a dump but no boundaries");
        r.attention = aggregate_trial(read_dump(run_dir / rec.dump_path), *rec.boundaries);
      } catch (const Error& e) {
        r.attention_error = fmt::format("{}: {}", e.kind(), e.what());
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Grouping

std::string_view to_string(Grouping grouping) noexcept {
  switch (grouping) {
    case Grouping::prompt: return "prompt";
    case Grouping::shape: return "shape";
    case Grouping::prompt_shape: return "prompt_shape";
  }
  return "?";
}

std::string GroupKey::label() const {
  std::string out(to_string(task_class));
  if (level) out += fmt::format("/L{}", *level);
  if (shape) out += fmt::format("/{}", to_string(*shape));
  return out;
}

GroupKey group_of(const TrialResult& r, Grouping grouping) {
  GroupKey key{grouping, r.task_class, std::nullopt, std::nullopt};
  if (grouping != Grouping::shape) key.level = r.prompt_level;
  if (grouping != Grouping::prompt) key.shape = r.shape;
  return key;
}

std::vector<AccuracyRow> accuracy(std::span<const TrialResult> results, Grouping grouping) {
  if (results.empty()) throw EmptyInput("accuracy needs at least one trial result");
  std::map<GroupKey, AccuracyRow> rows;
  for (const auto& r : results) {
    const auto key = group_of(r, grouping);
    auto& row = rows[key];
    row.group = key;
    ++row.n;
    if (!r.prediction_error) {
      ++row.unparseable;
    } else if (*r.prediction_error == 0) {
      ++row.correct;
    } else {
      ++row.incorrect_parsed;
    }
  }
  std::vector<AccuracyRow> out;
  for (auto& [key, row] : rows) {
    row.accuracy = static_cast<double>(row.correct) / static_cast<double>(row.n);
    row.unparseable_rate = static_cast<double>(row.unparseable) / static_cast<double>(row.n);
    out.push_back(row);
  }
  return out;
}

std::vector<ErrorRow> error_distribution(std::span<const TrialResult> results, Grouping grouping,
                                         std::span<const CountBucket> buckets) {
  std::map<GroupKey, std::vector<double>> all;
  std::map<std::pair<GroupKey, std::size_t>, std::vector<double>> by_bucket;
  for (const auto& r : results) {
    if (!r.prediction_error) continue;
    const auto key = group_of(r, grouping);
    all[key].push_back(*r.prediction_error);
    for (std::size_t b = 0; b < buckets.size(); ++b) {
      if (buckets[b].contains(r.ground_truth_count)) {
        by_bucket[{key, b}].push_back(*r.prediction_error);
        break;
      }
    }
  }
  if (all.empty()) throw EmptyInput("error distribution needs at least one parseable result");
  std::vector<ErrorRow> out;
  for (const auto& [key, values] : all) {
    out.push_back({key, std::nullopt, summarize(values)});
    for (std::size_t b = 0; b < buckets.size(); ++b) {
      const auto it = by_bucket.find({key, b});
      if (it != by_bucket.end()) out.push_back({key, buckets[b], summarize(it->second)});
    }
  }
  return out;
}

std::vector<CountBucket> quantile_buckets(std::vector<int> values, int k) {
  if (values.empty() || k < 1) return {};
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  std::vector<CountBucket> out;
  int lo = values.front();
  for (int i = 1; i <= k; ++i) {
    const auto rank = (static_cast<std::size_t>(i) * n + static_cast<std::size_t>(k) - 1) / static_cast<std::size_t>(k);
    const int hi = values[std::max<std::size_t>(rank, 1) - 1];
    if (hi < lo) continue;
    out.push_back({lo, hi});
    lo = hi + 1;
  }
  return out;
}

std::vector<CountBucket> error_buckets(std::span<const TrialResult> results, int quantiles) {
  std::vector<CountBucket> recorded;
  bool all_recorded = !results.empty();
  std::vector<int> gts;
  for (const auto& r : results) {
    gts.push_back(r.ground_truth_count);
    if (!r.bucket) {
      all_recorded = false;
    } else if (std::find(recorded.begin(), recorded.end(), *r.bucket) == recorded.end()) {
      recorded.push_back(*r.bucket);
    }
  }
  if (all_recorded) {
    std::sort(recorded.begin(), recorded.end(), [](const auto& a, const auto& b) { return a.lo < b.lo; });
    return recorded;
  }
  return quantile_buckets(std::move(gts), quantiles);
}

std::vector<AttentionRow> attention_table(std::span<const TrialResult> results, Grouping grouping, Region region) {
  std::map<GroupKey, std::vector<double>> groups;
  for (const auto& r : results) {
    if (!r.attention) continue;
    const double v = region == Region::image    ? r.attention->image
                     : region == Region::prompt ? r.attention->prompt
                                                : r.attention->generated;
    groups[group_of(r, grouping)].push_back(v);
  }
  std::vector<AttentionRow> out;
  for (const auto& [key, values] : groups) out.push_back({key, summarize(values)});
  return out;
}

std::string config_hash(std::span<const TrialRecord> records) {
  std::set<std::string> generation, models, manifests, prompts;
  for (const auto& r : records) {
    generation.insert(fmt::format("{}|{:.17g}|{}|{}", r.generation.max_new_tokens, r.generation.temperature,
                                  r.generation.seed, to_string(r.attention_mode)));
    if (!r.model_id.empty()) models.insert(r.model_id);
    manifests.insert(r.manifest_path);
    prompts.insert(r.prompt_text);
  }
  const nlohmann::json j{{"generation", generation}, {"models", models}, {"manifests", manifests}, {"prompts", prompts}};
  return sha256_hex(j.dump());
}

Provenance provenance_of(std::span<const TrialRecord> records) {
  Provenance p;
  p.config_hash = config_hash(records);
  p.trials_total = records.size();
  for (const auto& r : records) {
    if (!r.ok) ++p.trials_failed;
    if (!r.model_id.empty()) p.model_ids.push_back(r.model_id);
  }
  std::sort(p.model_ids.begin(), p.model_ids.end());
  p.model_ids.erase(std::unique(p.model_ids.begin(), p.model_ids.end()), p.model_ids.end());
  return p;
}

ReportBundle build_report(std::span<const TrialResult> results, Provenance provenance,
                          std::span<const Grouping> groupings) {
  ReportBundle bundle;
  if (results.empty()) throw EmptyInput("no trial results to report");
  for (const auto& r : results) {
    if (!r.attention_error.empty()) ++provenance.attention_errors;
  }
  bundle.provenance = std::move(provenance);
  const auto buckets = error_buckets(results);
  const bool any_parsed = std::any_of(results.begin(), results.end(), [](const auto& r) { return r.prediction_error; });
  for (const auto grouping : groupings) {
    std::ranges::move(accuracy(results, grouping), std::back_inserter(bundle.accuracy));
    if (any_parsed) std::ranges::move(error_distribution(results, grouping, buckets), std::back_inserter(bundle.errors));
    std::ranges::move(attention_table(results, grouping, Region::image), std::back_inserter(bundle.attn_image));
    std::ranges::move(attention_table(results, grouping, Region::prompt), std::back_inserter(bundle.attn_prompt));
    std::ranges::move(attention_table(results, grouping, Region::generated), std::back_inserter(bundle.attn_generated));
  }
  return bundle;
}

ReportBundle build_report(std::span<const TrialResult> results, Provenance provenance) {
  constexpr Grouping defaults[] = {Grouping::prompt, Grouping::prompt_shape};
  return build_report(results, std::move(provenance), defaults);
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string header(const ReportBundle& b, std::string_view table) {
  const auto& p = b.provenance;
  std::string models;
  for (const auto& m : p.model_ids) models += (models.empty() ? "" : ";") + m;
  return fmt::format("# vlmprobe report: {}\n# config_hash: {}\n# models: {}\n# trials: {} (failed {}, attention errors {})\n",
                     table, p.config_hash, models.empty() ? "-" : models, p.trials_total, p.trials_failed,
                     p.attention_errors);
}

std::string stats_fields(const SummaryStats& s) {
  return fmt::format("{},{},{},{},{},{},{}", s.n, s.mean, s.median, s.q1, s.q3, s.min, s.max);
}

const std::vector<AttentionRow>& region_rows(const ReportBundle& b, Region region) {
  return region == Region::image ? b.attn_image : region == Region::prompt ? b.attn_prompt : b.attn_generated;
}

std::string_view region_name(Region region) {
  return region == Region::image ? "img" : region == Region::prompt ? "prompt" : "gen";
}

std::string_view region_title(Region region) {
  return region == Region::image ? "A_img" : region == Region::prompt ? "A_prompt" : "A_gen_token";
}

}  // namespace

std::string accuracy_csv(const ReportBundle& b) {
  auto out = header(b, "accuracy");
  out += "grouping,group,n,correct,incorrect_parsed,unparseable,accuracy,unparseable_rate\n";
  for (const auto& r : b.accuracy) {
    out += fmt::format("{},{},{},{},{},{},{},{}\n", to_string(r.group.grouping), csv_field(r.group.label()), r.n,
                       r.correct, r.incorrect_parsed, r.unparseable, r.accuracy, r.unparseable_rate);
  }
  return out;
}

std::string error_csv(const ReportBundle& b) {
  auto out = header(b, "prediction error (ground truth - predicted)");
  out += "grouping,group,bucket,n,mean,median,q1,q3,min,max\n";
  for (const auto& r : b.errors) {
    const auto bucket = r.bucket ? fmt::format("{}-{}", r.bucket->lo, r.bucket->hi) : std::string("all");
    out += fmt::format("{},{},{},{}\n", to_string(r.group.grouping), csv_field(r.group.label()), bucket,
                       stats_fields(r.stats));
  }
  return out;
}

std::string attention_csv(const ReportBundle& b, Region region) {
  auto out = header(b, region_title(region));
  out += "grouping,group,n,mean,median,q1,q3,min,max\n";
  for (const auto& r : region_rows(b, region)) {
    out += fmt::format("{},{},{}\n", to_string(r.group.grouping), csv_field(r.group.label()), stats_fields(r.stats));
  }
  return out;
}

// ---------------------------------------------------------------------------
// SVG

namespace {

constexpr double kPlotHeight = 260.0;
constexpr double kTop = 40.0;
constexpr double kLeft = 60.0;
constexpr double kSlot = 26.0;
constexpr double kLabelSpace = 150.0;

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Canvas {
  double lo = 0.0, hi = 1.0;
  std::size_t slots = 0;
  std::string body;

  double width() const { return kLeft + kSlot * static_cast<double>(std::max<std::size_t>(slots, 1)) + 20.0; }
  double y(double v) const { return kTop + kPlotHeight * (1.0 - (v - lo) / (hi - lo)); }
  double x(std::size_t slot) const { return kLeft + kSlot * (static_cast<double>(slot) + 0.5); }

  void axes(std::string_view title, std::string_view unit) {
    body += fmt::format(R"svg(<text x="{:.1f}" y="20" font-size="14" text-anchor="middle">{}</text>)svg", width() / 2,
                        xml_escape(title));
    body += '\n';
    body += fmt::format(R"svg(<line x1="{0:.1f}" y1="{1:.1f}" x2="{0:.1f}" y2="{2:.1f}" stroke="black"/>)svg", kLeft, kTop,
                        kTop + kPlotHeight);
    body += '\n';
    for (int t = 0; t <= 4; ++t) {
      const double v = lo + (hi - lo) * t / 4.0;
      body += fmt::format(
          R"svg(<line x1="{0:.1f}" y1="{1:.1f}" x2="{2:.1f}" y2="{1:.1f}" stroke="#ddd"/><text x="{3:.1f}" y="{4:.1f}" font-size="10" text-anchor="end">{5:.3g}</text>)svg",
          kLeft, y(v), width() - 20.0, kLeft - 4.0, y(v) + 3.0, v);
      body += '\n';
    }
    body += fmt::format(R"svg(<text x="14" y="{:.1f}" font-size="11" transform="rotate(-90 14 {:.1f})" text-anchor="middle">{}</text>)svg",
                        kTop + kPlotHeight / 2, kTop + kPlotHeight / 2, xml_escape(unit));
    body += '\n';
  }

  void label(std::size_t slot, std::string_view text) {
    const double lx = x(slot), ly = kTop + kPlotHeight + 8.0;
    body += fmt::format(R"svg(<text x="{0:.1f}" y="{1:.1f}" font-size="10" transform="rotate(60 {0:.1f} {1:.1f})">{2}</text>)svg",
                        lx, ly, xml_escape(text));
    body += '\n';
  }

  std::string finish() const {
    return fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0:.0f}\" height=\"{1:.0f}\" viewBox=\"0 0 {0:.0f} {1:.0f}\" "
        "font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{2}</svg>\n",
        width(), kTop + kPlotHeight + kLabelSpace, body);
  }
};

struct Box {
  std::string label;
  SummaryStats stats;
};

std::string box_plot(std::string_view title, std::string_view unit, const std::vector<Box>& boxes) {
  Canvas c;
  c.slots = boxes.size();
  if (!boxes.empty()) {
    c.lo = boxes.front().stats.min;
    c.hi = boxes.front().stats.max;
    for (const auto& b : boxes) {
      c.lo = std::min(c.lo, b.stats.min);
      c.hi = std::max(c.hi, b.stats.max);
    }
  }
  const double pad = c.hi > c.lo ? 0.05 * (c.hi - c.lo) : 0.5;
  c.lo -= pad;
  c.hi += pad;
  c.axes(title, unit);
  const double half = kSlot * 0.3;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& s = boxes[i].stats;
    const double x = c.x(i);
    c.body += fmt::format(R"svg(<line x1="{0:.1f}" y1="{1:.1f}" x2="{0:.1f}" y2="{2:.1f}" stroke="black"/>)svg", x,
                          c.y(s.max), c.y(s.min));
    c.body += fmt::format(
        R"svg(<rect x="{:.1f}" y="{:.1f}" width="{:.1f}" height="{:.1f}" fill="#9ecae1" stroke="black"/>)svg", x - half,
        c.y(s.q3), 2 * half, std::max(c.y(s.q1) - c.y(s.q3), 0.5));
    c.body += fmt::format(R"svg(<line x1="{0:.1f}" y1="{2:.1f}" x2="{1:.1f}" y2="{2:.1f}" stroke="#08306b" stroke-width="2"/>)svg",
                          x - half, x + half, c.y(s.median));
    c.body += fmt::format(R"svg(<circle cx="{:.1f}" cy="{:.1f}" r="2.5" fill="#d62728"/>)svg", x, c.y(s.mean));
    c.body += '\n';
    c.label(i, boxes[i].label);
  }
  return c.finish();
}

}  // namespace

std::string accuracy_svg(const ReportBundle& b) {
  Canvas c;
  c.slots = b.accuracy.size();
  c.axes("Counting accuracy", "exact-match accuracy");
  const double half = kSlot * 0.35;
  for (std::size_t i = 0; i < b.accuracy.size(); ++i) {
    const auto& r = b.accuracy[i];
    c.body += fmt::format(R"svg(<rect x="{:.1f}" y="{:.1f}" width="{:.1f}" height="{:.1f}" fill="#3182bd"/>)svg",
                          c.x(i) - half, c.y(r.accuracy), 2 * half, c.y(0.0) - c.y(r.accuracy));
    c.body += '\n';
    c.label(i, fmt::format("{} {}", to_string(r.group.grouping), r.group.label()));
  }
  return c.finish();
}

std::string error_svg(const ReportBundle& b) {
  std::vector<Box> boxes;
  for (const auto& r : b.errors) {
    if (!r.bucket) boxes.push_back({fmt::format("{} {}", to_string(r.group.grouping), r.group.label()), r.stats});
  }
  return box_plot("Prediction error (ground truth - predicted)", "error", boxes);
}

std::string attention_svg(const ReportBundle& b, Region region) {
  std::vector<Box> boxes;
  for (const auto& r : region_rows(b, region)) {
    boxes.push_back({fmt::format("{} {}", to_string(r.group.grouping), r.group.label()), r.stats});
  }
  return box_plot(region_title(region), "attention proportion", boxes);
}

std::vector<std::filesystem::path> emit_report(const ReportBundle& bundle, const std::filesystem::path& out_dir,
                                               ReportFormats formats) {
  if (bundle.empty()) throw EmptyInput("report bundle has no rows");
  const auto dir = out_dir / "report";
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));

  std::vector<std::filesystem::path> written;
  auto emit = [&](std::string_view stem, const std::string& csv, const std::string& svg) {
    if (formats.csv) {
      written.push_back(dir / fmt::format("{}.csv", stem));
      write_file_atomic(written.back(), csv);
    }
    if (formats.svg) {
      written.push_back(dir / fmt::format("{}.svg", stem));
      write_file_atomic(written.back(), svg);
    }
  };
  emit("accuracy", accuracy_csv(bundle), accuracy_svg(bundle));
  emit("error_dist", error_csv(bundle), error_svg(bundle));
  for (const auto region : {Region::image, Region::prompt, Region::generated}) {
    emit(fmt::format("attn_{}", region_name(region)), attention_csv(bundle, region), attention_svg(bundle, region));
  }
  return written;
}

}  // namespace vlmprobe
