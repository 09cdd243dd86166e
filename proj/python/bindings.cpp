// Python bindings. Structured values cross the boundary as plain dicts and
// lists; harness errors become vlmprobe.VlmprobeError with a `kind` attribute.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "vlmprobe/attention.hpp"
#include "vlmprobe/corpus.hpp"
#include "vlmprobe/dataset.hpp"
#include "vlmprobe/errors.hpp"
#include "vlmprobe/metrics.hpp"
#include "vlmprobe/mock.hpp"
#include "vlmprobe/parsing.hpp"
#include "vlmprobe/prompts.hpp"
#include "vlmprobe/runner.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace vlmprobe;

namespace {

py::object to_python(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_python(const py::handle& obj) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

template <typename T>
T required(std::optional<T> value, std::string_view what, std::string_view name) {
  if (!value) throw ConfigError(std::string("unknown ") + std::string(what) + " '" + std::string(name) + "'");
  return *value;
}

py::dict parse_outcome(const ParseOutcome& p) {
  py::dict d;
  d["status"] = std::string(to_string(p.status));
  d["predicted_count"] = p.predicted_count;
  d["declared_count"] = p.declared_count;
  d["detection_boxes"] = p.detection_boxes;
  d["notes"] = p.notes;
  return d;
}

py::dict proportions(const AttentionProportions& a) {
  py::dict d;
  d["image"] = a.image;
  d["prompt"] = a.prompt;
  d["generated"] = a.generated;
  d["tokens_used"] = a.tokens_used;
  return d;
}

AttentionDump make_dump(int num_layers, int num_heads, int input_len, std::vector<std::vector<float>> tokens,
                        const std::string& mode) {
  AttentionDump d;
  d.mode = required(parse_attention_mode(mode), "attention mode", mode);
  d.num_layers = num_layers;
  d.num_heads = num_heads;
  d.input_len = input_len;
  d.generated = static_cast<int>(tokens.size());
  d.tokens = std::move(tokens);
  // round-trip through the codec so malformed shapes fail like a bad payload would
  return decode_dump(encode_dump(d));
}

RegionBoundaries boundaries(const AttentionDump& d, int n_vision) {
  RegionBoundaries b;
  b.n_vision = n_vision;
  b.n_prompt = d.input_len - n_vision;
  b.input_len = d.input_len;
  b.generated = d.generated;
  return b;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Counting probes for vision-language models: datasets, prompts, parsing, attention and reports.";

  static py::exception<Error> error_type(m, "VlmprobeError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error_type.ptr())(e.what());
      exc.attr("kind") = e.kind();
      PyErr_SetObject(error_type.ptr(), exc.ptr());
    }
  });

  // dataset_synth
  m.def(
      "default_dataset_config", [] { return to_python(DatasetConfig{}); },
      "The default synthetic dataset configuration as a dict.");
  m.def(
      "generate_dataset",
      [](const fs::path& out_dir, const py::object& config) {
        DatasetConfig c;
        if (!config.is_none()) c = from_python(config).get<DatasetConfig>();
        DatasetManifest manifest;
        {
          py::gil_scoped_release release;
          manifest = generate_dataset(c, out_dir);
        }
        return to_python(manifest);
      },
      py::arg("out_dir"), py::arg("config") = py::none(),
      "Renders the dataset into out_dir and returns the manifest written to out_dir/manifest.json.");

  // corpus_ingest
  m.def(
      "load_corpus",
      [](const fs::path& manifest_path) {
        const auto corpus = load_corpus(manifest_path);
        py::list entries;
        for (const auto& e : corpus.entries) {
          py::dict d;
          d["image_path"] = e.image_path;
          d["resolved_path"] = e.resolved_path;
          d["ground_truth_count"] = e.ground_truth_count;
          d["shape"] = e.shape ? py::object(py::str(std::string(to_string(*e.shape)))) : py::object(py::none());
          d["bucket_index"] = e.bucket_index;
          d["label"] = to_python(nlohmann::json::parse(e.label_json));
          entries.append(d);
        }
        py::dict out;
        out["task_class"] = std::string(to_string(corpus.task_class));
        out["source_note"] = corpus.source_note;
        out["entries"] = entries;
        return out;
      },
      py::arg("manifest_path"), "Loads and validates a corpus manifest.");

  // prompt_matrix
  m.def(
      "prompt_templates",
      [](const std::string& task) {
        py::list out;
        for (const auto& t : PromptCatalog::builtin().list_templates(task)) {
          py::dict d;
          d["id"] = t.id();
          d["level"] = t.level;
          d["text"] = t.text;
          d["answer_format"] = std::string(to_string(t.answer_format));
          out.append(d);
        }
        return out;
      },
      py::arg("task_class"), "The three built-in templates for a task class, least specific first.");
  m.def(
      "instantiate_prompt",
      [](const std::string& task, int level, const std::optional<std::string>& shape) {
        const auto& catalog = PromptCatalog::builtin();
        const auto& templates = catalog.list_templates(task);
        if (level < 1 || level > static_cast<int>(templates.size())) {
          throw ConfigError("prompt level must be 1, 2 or 3");
        }
        std::optional<ShapeKind> kind;
        if (shape) kind = required(parse_shape(*shape), "shape", *shape);
        return catalog.instantiate(templates[static_cast<std::size_t>(level - 1)], kind).text;
      },
      py::arg("task_class"), py::arg("level"), py::arg("shape") = py::none(), "Prompt text with the shape slot filled.");

  // answer_parsing
  m.def(
      "parse_curly_count", [](std::string_view text) { return parse_outcome(parse_curly_count(text)); },
      py::arg("text"));
  m.def(
      "parse_json_detections", [](std::string_view text) { return parse_outcome(parse_json_detections(text)); },
      py::arg("text"));
  m.def("render_curly_answer", &render_curly_answer, py::arg("count"));
  m.def("render_detection_answer", &render_detection_answer, py::arg("count"), py::arg("with_declared_count") = false,
        py::arg("key") = 0);

  // attention_analysis
  m.def(
      "attention_proportions",
      [](int num_layers, int num_heads, int input_len, std::vector<std::vector<float>> tokens, int n_vision,
         const std::string& mode) {
        const auto d = make_dump(num_layers, num_heads, input_len, std::move(tokens), mode);
        return proportions(aggregate_trial(d, boundaries(d, n_vision)));
      },
      py::arg("num_layers"), py::arg("num_heads"), py::arg("input_len"), py::arg("tokens"), py::arg("n_vision"),
      py::arg("mode") = "full",
      "Trial-level (A_img, A_prompt, A_gen) from per-token weight blocks laid out [layer][head][position].");
  m.def(
      "dump_proportions",
      [](const fs::path& path, int n_vision) {
        const auto d = read_dump(path);
        return proportions(aggregate_trial(d, boundaries(d, n_vision)));
      },
      py::arg("path"), py::arg("n_vision"), "Trial-level proportions of a .attn dump file.");

  // run + report
  m.def("mock_presets", &mock_preset_names);
  m.def(
      "run_mock",
      [](const std::vector<fs::path>& manifests, const fs::path& out_dir, const std::string& preset, int parallelism,
         std::vector<int> levels, std::optional<std::size_t> max_trials) {
        std::vector<CorpusManifest> corpora;
        GroundTruthIndex index;
        for (const auto& path : manifests) {
          corpora.push_back(load_corpus(path));
          index.add(corpora.back());
        }
        MockBackend backend(mock_preset(preset), std::move(index));
        MockTransport transport(backend);
        RunOptions options;
        options.model_id = "mock:" + preset;
        options.parallelism = parallelism;
        options.levels = std::move(levels);
        options.max_new_trials = max_trials;
        RunSummary s;
        {
          py::gil_scoped_release release;
          s = run_trials(corpora, PromptCatalog::builtin(), transport, options, out_dir);
        }
        py::dict d;
        d["planned"] = s.planned;
        d["skipped"] = s.skipped;
        d["ok"] = s.ok;
        d["failed"] = s.failed;
        d["trials_path"] = out_dir / kTrialsFile;
        return d;
      },
      py::arg("manifests"), py::arg("out_dir"), py::arg("preset") = "zero-bias", py::arg("parallelism") = 1,
      py::arg("levels") = std::vector<int>{1, 2, 3}, py::arg("max_trials") = py::none(),
      "Runs every pending trial against the in-process mock backend; resumes an existing out_dir.");
  m.def(
      "load_trials",
      [](const fs::path& trials_path) {
        py::list out;
        for (const auto& r : load_trial_records(trials_path)) out.append(to_python(record_to_json(r)));
        return out;
      },
      py::arg("trials_path"), "Latest record per trial id.");
  m.def(
      "analyze",
      [](const fs::path& trials_path, const std::optional<fs::path>& out_dir) {
        const auto run_dir = trials_path.has_parent_path() ? trials_path.parent_path() : fs::path(".");
        const auto records = load_trial_records(trials_path);
        const auto results = results_from_records(records, run_dir);
        if (results.empty()) throw EmptyInput(trials_path.string() + " holds no successful trials");
        const auto bundle = build_report(results, provenance_of(records));
        const auto files = emit_report(bundle, out_dir.value_or(run_dir));
        py::dict accuracy;
        for (const auto& row : bundle.accuracy) accuracy[py::str(row.group.label())] = row.accuracy;
        py::dict d;
        d["files"] = files;
        d["accuracy"] = accuracy;
        d["config_hash"] = bundle.provenance.config_hash;
        return d;
      },
      py::arg("trials_path"), py::arg("out_dir") = py::none(),
      "Parses answers, analyzes dumps and writes report/ CSV and SVG files.");
}
