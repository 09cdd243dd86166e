#include "vlmprobe/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "vlmprobe/errors.hpp"

namespace vlmprobe {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Records

json record_to_json(const TrialRecord& r, bool with_timing) {
  json stimulus{{"manifest", r.manifest_path},
                {"image_path", r.image_path},
                {"image_sha256", r.image_sha256},
                {"task_class", to_string(r.task_class)},
                {"ground_truth_count", r.ground_truth_count}};
  if (r.shape) stimulus["shape"] = to_string(*r.shape);
  if (r.bucket_index) stimulus["bucket_index"] = *r.bucket_index;
  if (r.bucket) stimulus["bucket"] = {r.bucket->lo, r.bucket->hi};

  json j{{"trial_id", r.trial_id},
         {"status", r.ok ? "ok" : "failed"},
         {"stimulus", stimulus},
         {"prompt",
          {{"template_id", r.template_id},
           {"level", r.prompt_level},
           {"answer_format", to_string(r.answer_format)},
           {"text", r.prompt_text}}},
         {"generation",
          {{"max_new_tokens", r.generation.max_new_tokens},
           {"temperature", r.generation.temperature},
           {"seed", r.generation.seed},
           {"attention_mode", to_string(r.attention_mode)}}},
         {"retry_count", r.retry_count}};
  if (!r.ok) j["error"] = {{"kind", r.error_kind}, {"message", r.error_message}};
  if (r.ok) {
    json response{{"model_id", r.model_id},
                  {"num_layers", r.num_layers},
                  {"num_heads", r.num_heads},
                  {"generated_text", r.generated_text},
                  {"generated_tokens", r.generated_tokens},
                  {"payload_transport", r.payload_transport}};
    if (r.boundaries) {
      response["boundaries"] = {{"n_vision", r.boundaries->n_vision},
                                {"n_prompt", r.boundaries->n_prompt},
                                {"S", r.boundaries->input_len},
                                {"G", r.boundaries->generated}};
    }
    if (!r.dump_path.empty()) response["dump"] = r.dump_path;
    j["response"] = response;
  }
  if (with_timing) j["timing"] = {{"started_unix_ms", r.started_unix_ms}, {"elapsed_ms", r.elapsed_ms}};
  return j;
}

TrialRecord record_from_json(const json& j) {
  TrialRecord r;
  try {
    r.trial_id = j.at("trial_id").get<std::string>();
    r.ok = j.at("status").get<std::string>() == "ok";
    if (j.contains("error")) {
      r.error_kind = j["error"].value("kind", "");
      r.error_message = j["error"].value("message", "");
    }
    const auto& s = j.at("stimulus");
    r.manifest_path = s.value("manifest", "");
    r.image_path = s.at("image_path").get<std::string>();
    r.image_sha256 = s.value("image_sha256", "");
    const auto task = parse_task_class(s.at("task_class").get<std::string>());
    if (!task) throw SchemaError("trial record: unknown task_class");
    r.task_class = *task;
    r.ground_truth_count = s.at("ground_truth_count").get<int>();
    if (s.contains("shape")) r.shape = parse_shape(s["shape"].get<std::string>());
    if (s.contains("bucket_index")) r.bucket_index = s["bucket_index"].get<int>();
    if (s.contains("bucket")) r.bucket = CountBucket{s["bucket"][0].get<int>(), s["bucket"][1].get<int>()};

    const auto& p = j.at("prompt");
    r.template_id = p.value("template_id", "");
    r.prompt_level = p.at("level").get<int>();
    const auto format = parse_answer_format(p.at("answer_format").get<std::string>());
    if (!format) throw SchemaError("trial record: unknown answer_format");
    r.answer_format = *format;
    r.prompt_text = p.value("text", "");

    const auto& g = j.at("generation");
    r.generation.max_new_tokens = g.value("max_new_tokens", r.generation.max_new_tokens);
    r.generation.temperature = g.value("temperature", 0.0);
    r.generation.seed = g.value("seed", std::uint64_t{0});
    r.attention_mode = parse_attention_mode(g.value("attention_mode", "head_averaged")).value_or(AttentionMode::none);
    r.retry_count = j.value("retry_count", 0);

    if (j.contains("response")) {
      const auto& resp = j["response"];
      r.model_id = resp.value("model_id", "");
      r.num_layers = resp.value("num_layers", 0);
      r.num_heads = resp.value("num_heads", 0);
      r.generated_text = resp.value("generated_text", "");
      r.generated_tokens = resp.value("generated_tokens", std::vector<std::string>{});
      r.payload_transport = resp.value("payload_transport", "absent");
      r.dump_path = resp.value("dump", "");
      if (resp.contains("boundaries")) {
        const auto& b = resp["boundaries"];
        r.boundaries = RegionBoundaries{b.at("n_vision").get<int>(), b.at("n_prompt").get<int>(),
                                        b.at("S").get<int>(), b.at("G").get<int>()};
      }
    }
    if (j.contains("timing")) {
      r.started_unix_ms = j["timing"].value("started_unix_ms", std::int64_t{0});
      r.elapsed_ms = j["timing"].value("elapsed_ms", 0.0);
    }
  } catch (const json::exception& e) {
    throw SchemaError(fmt::format("trial record: {}", e.what()));
  }
  return r;
}

namespace {

/// Valid records plus the byte offset just past the last complete line.
struct TrialsFileScan {
  std::vector<TrialRecord> records;
  std::size_t good_bytes = 0;
};

TrialsFileScan scan_trials_file(const std::filesystem::path& path) {
  TrialsFileScan scan;
  std::ifstream in(path, std::ios::binary);
  if (!in) return scan;
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  while (pos < content.size()) {
    const auto nl = content.find('\n', pos);
    if (nl == std::string::npos) break;  // torn tail from an interrupted write
    const auto line = std::string_view(content).substr(pos, nl - pos);
    if (!line.empty()) {
      const auto j = json::parse(line, nullptr, false);
      if (j.is_discarded()) break;
      scan.records.push_back(record_from_json(j));
    }
    pos = nl + 1;
    scan.good_bytes = pos;
  }
  return scan;
}

std::vector<TrialRecord> latest_per_id(std::vector<TrialRecord> records) {
  std::map<std::string, std::size_t> slot;
  std::vector<TrialRecord> out;
  for (auto& r : records) {
    const auto [it, inserted] = slot.emplace(r.trial_id, out.size());
    if (inserted) {
      out.push_back(std::move(r));
    } else {
      out[it->second] = std::move(r);
    }
  }
  return out;
}

std::int64_t unix_ms_now() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace

std::vector<TrialRecord> load_trial_records(const std::filesystem::path& trials_path) {
  if (!std::filesystem::exists(trials_path)) throw IoError(fmt::format("{} does not exist", trials_path.string()));
  return latest_per_id(scan_trials_file(trials_path).records);
}

// ---------------------------------------------------------------------------
// Planning

std::vector<TrialPlanItem> plan_trials(const std::vector<CorpusManifest>& manifests, const PromptCatalog& catalog,
                                       const std::vector<int>& levels) {
  std::vector<TrialPlanItem> plan;
  for (std::size_t m = 0; m < manifests.size(); ++m) {
    const auto& templates = catalog.list_templates(manifests[m].task_class);
    for (std::size_t e = 0; e < manifests[m].entries.size(); ++e) {
      const auto& entry = manifests[m].entries[e];
      for (const auto& tmpl : templates) {
        if (std::find(levels.begin(), levels.end(), tmpl.level) == levels.end()) continue;
        const auto shape = tmpl.has_slot() ? entry.shape : std::nullopt;
        plan.push_back({m, e, catalog.instantiate(tmpl, shape)});
      }
    }
  }
  return plan;
}

std::string trial_id(const std::string& image_sha256, const std::string& prompt_text, const GenerationParams& g,
                     AttentionMode mode, const std::string& model_id) {
  const auto material = fmt::format("{}\x1f{}\x1f{}\x1f{:.17g}\x1f{}\x1f{}\x1f{}", image_sha256, prompt_text,
                                    g.max_new_tokens, g.temperature, g.seed, to_string(mode), model_id);
  return sha256_hex(material).substr(0, 32);
}

// ---------------------------------------------------------------------------
// Running

namespace {

class RecordWriter {
 public:
  RecordWriter(const std::filesystem::path& path, std::size_t keep_bytes) : path_(path) {
    if (std::filesystem::exists(path)) std::filesystem::resize_file(path, keep_bytes);
    out_.open(path, std::ios::binary | std::ios::app);
    if (!out_) throw IoError(fmt::format("cannot open {} for appending", path.string()));
  }

  void append(const TrialRecord& record) {
    const auto line = record_to_json(record).dump() + "\n";
    std::lock_guard lock(mutex_);
    out_.write(line.data(), static_cast<std::streamsize>(line.size()));
    out_.flush();
    if (!out_) throw IoError(fmt::format("write to {} failed", path_.string()));
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::mutex mutex_;
};

struct PreparedTrial {
  const TrialPlanItem* item;
  const CorpusManifest* manifest;
  const CorpusEntry* entry;
  std::string image_sha256;
  std::string id;
};

TrialRecord base_record(const PreparedTrial& t, const RunOptions& options) {
  TrialRecord r;
  r.trial_id = t.id;
  r.manifest_path = t.manifest->manifest_path.string();
  r.image_path = t.entry->image_path;
  r.image_sha256 = t.image_sha256;
  r.task_class = t.manifest->task_class;
  r.shape = t.entry->shape;
  r.ground_truth_count = t.entry->ground_truth_count;
  r.bucket_index = t.entry->bucket_index;
  r.bucket = t.manifest->bucket_of(*t.entry);
  r.template_id = t.item->prompt.template_id;
  r.prompt_level = t.item->prompt.level;
  r.answer_format = t.item->prompt.answer_format;
  r.prompt_text = t.item->prompt.text;
  r.generation = options.generation;
  r.attention_mode = options.attention_mode;
  return r;
}

TrialRecord execute(const PreparedTrial& t, Transport& transport, const RunOptions& options,
                    const std::filesystem::path& out_dir) {
  auto record = base_record(t, options);
  record.started_unix_ms = unix_ms_now();
  const auto start = std::chrono::steady_clock::now();
  try {
    ExamineRequest request;
    request.image = read_file(t.entry->resolved_path);
    const auto format = sniff_image_format(request.image);
    request.image_format = format.empty() ? "unknown" : format;
    request.prompt = t.item->prompt.text;
    request.generation = options.generation;
    request.attention_mode = options.attention_mode;
    request.answer_format = t.item->prompt.answer_format;
    request.trial_id = t.id;

    auto result = submit(request, transport, options.submit);
    auto& response = result.response;
    if (options.attention_mode != AttentionMode::none && !response.attention) {
      throw SchemaError("attention was requested but the response carries no payload");
    }
    record.retry_count = result.retry_count;
    record.model_id = response.backend.model_id;
    record.num_layers = response.backend.num_layers;
    record.num_heads = response.backend.num_heads;
    record.generated_text = response.generated_text;
    record.generated_tokens = response.generated_tokens;
    record.boundaries = response.boundaries;
    record.payload_transport = std::string(to_string(response.transport));
    if (response.attention) {
      record.dump_path = fmt::format("{}/{}.attn", kDumpsDir, t.id);
      write_dump(out_dir / record.dump_path, *response.attention);
    }
    record.ok = true;
  } catch (const IoError&) {
    throw;  // out_dir trouble aborts the run
  } catch (const Error& e) {
    record.ok = false;
    record.error_kind = e.kind();
    record.error_message = e.what();
  }
  record.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return record;
}

}  // namespace

RunSummary run_trials(const std::vector<CorpusManifest>& manifests, const PromptCatalog& catalog,
                      Transport& transport, const RunOptions& options, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir / kDumpsDir, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", (out_dir / kDumpsDir).string(), ec.message()));

  const auto trials_path = out_dir / kTrialsFile;
  const auto existing = scan_trials_file(trials_path);
  std::set<std::string> done;
  for (const auto& r : latest_per_id(existing.records)) {
    if (r.ok) done.insert(r.trial_id);
  }

  const auto plan = plan_trials(manifests, catalog, options.levels);
  std::map<std::string, std::string> sha_cache;
  std::vector<PreparedTrial> pending;
  std::set<std::string> seen;
  RunSummary summary;
  for (const auto& item : plan) {
    const auto& manifest = manifests[item.manifest_index];
    const auto& entry = manifest.entries[item.entry_index];
    auto [it, inserted] = sha_cache.try_emplace(entry.resolved_path.string());
    if (inserted) it->second = sha256_hex(read_file(entry.resolved_path));
    auto id = trial_id(it->second, item.prompt.text, options.generation, options.attention_mode, options.model_id);
    if (!seen.insert(id).second) continue;  // identical trial planned twice
    ++summary.planned;
    if (done.contains(id)) {
      ++summary.skipped;
      continue;
    }
    pending.push_back({&item, &manifest, &entry, it->second, std::move(id)});
  }
  if (options.max_new_trials && pending.size() > *options.max_new_trials) pending.resize(*options.max_new_trials);

  RecordWriter writer(trials_path, existing.good_bytes);
  std::mutex count_mutex;
  auto tally = [&](const TrialRecord& r) {
    writer.append(r);
    std::lock_guard lock(count_mutex);
    ++(r.ok ? summary.ok : summary.failed);
  };

  std::size_t first = 0;
  if (options.abort_if_unreachable && !pending.empty()) {
    const auto record = execute(pending.front(), transport, options, out_dir);
    tally(record);
    if (!record.ok && record.error_kind == "TransportError") {
      throw EndpointUnreachable(fmt::format("{}: {}", transport.describe(), record.error_message));
    }
    first = 1;
  }

  std::atomic<std::size_t> next{first};
  std::atomic<bool> abort{false};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    while (!abort) {
      const auto i = next++;
      if (i >= pending.size()) return;
      try {
        tally(execute(pending[i], transport, options, out_dir));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        abort = true;
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const int threads = std::max(1, options.parallelism);
    for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
  }
  if (failure) std::rethrow_exception(failure);
  return summary;
}

}  // namespace vlmprobe
