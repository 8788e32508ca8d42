#include "detpo/cli/commands.hpp"

#include <chrono>
#include <fstream>

#include "detpo/detections_io.hpp"
#include "detpo/error.hpp"
#include "detpo/trace.hpp"

namespace detpo::cli {

namespace {

namespace fs = std::filesystem;

using Clock = std::chrono::steady_clock;

std::int64_t elapsed_ms(Clock::time_point start) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start).count();
}

void ensure_dir(const fs::path& dir) {
  if (dir.empty()) throw ConfigError("an output directory is required");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create " + dir.string() + ": " + ec.message());
}

void write_json(const fs::path& file, const nlohmann::ordered_json& doc) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error("cannot write " + file.string());
  out << doc.dump(2) << '\n';
}

std::vector<nlohmann::ordered_json> request_entries(const std::vector<RequestRecord>& records) {
  std::vector<nlohmann::ordered_json> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(to_json(r));
  return out;
}

std::map<ClassId, std::string> definitions_from(const std::optional<fs::path>& prompt_file,
                                                std::span<const ClassSpec> classes) {
  if (!prompt_file) return {};
  return definitions_for(read_prompt_file(*prompt_file), classes);
}

}  // namespace

fs::path resolve_annotation_file(const DatasetRef& ref) {
  if (ref.path.empty()) throw ConfigError("no dataset given");
  if (fs::is_regular_file(ref.path)) return ref.path;
  if (!fs::is_directory(ref.path)) {
    throw DatasetError("dataset path " + ref.path.string() + " does not exist");
  }
  std::vector<std::string> names{ref.split};
  if (ref.split == "val") names = {"val", "valid", "validation"};
  if (ref.split == "valid") names = {"valid", "val", "validation"};
  for (const auto& name : names) {
    for (const fs::path& candidate : {ref.path / name / "_annotations.coco.json",
                                     ref.path / (name + ".json")}) {
      if (fs::is_regular_file(candidate)) return candidate;
    }
  }
  throw DatasetError("no annotations for split '" + ref.split + "' under " + ref.path.string());
}

LoadedDataset load_dataset(const DatasetRef& ref) {
  const fs::path annotations = resolve_annotation_file(ref);
  std::optional<fs::path> metadata = ref.metadata;
  if (!metadata) {
    for (const fs::path& dir : {annotations.parent_path(), annotations.parent_path().parent_path()}) {
      if (!dir.empty() && fs::is_regular_file(dir / "class_metadata.json")) {
        metadata = dir / "class_metadata.json";
        break;
      }
    }
  }
  return load_coco_file(annotations, annotations.parent_path(), split_role_from_string(ref.split),
                        metadata);
}

TemplateRegistry load_templates(const fs::path& dir) {
  return dir.empty() ? TemplateRegistry::load_default() : TemplateRegistry::load(dir);
}

DetectOutput run_detect(const DetectArgs& args, Backend& backend) {
  const auto start = Clock::now();
  const LoadedDataset dataset = load_dataset(args.dataset);
  const TemplateRegistry templates = load_templates(args.templates);
  ensure_dir(args.out_dir);

  DetectOptions options;
  options.mode = args.mode;
  options.decoding = args.decoding;
  options.jobs = args.jobs;
  DetectOutput out;
  out.run = detect_split(dataset.split, dataset.classes,
                         definitions_from(args.prompt_file, dataset.classes), backend, templates,
                         options);

  out.detections_file = args.out_dir / "detections.jsonl";
  out.trace_file = args.out_dir / "detect_trace.jsonl";
  out.usage_file = args.out_dir / "usage.json";
  write_detections_file(out.detections_file, out.run.detections, dataset.classes);

  Usage usage;
  std::int64_t latency = 0;
  for (const auto& r : out.run.requests) {
    usage += r.usage;
    latency += r.latency_ms;
  }
  const std::int64_t wall = elapsed_ms(start);
  write_trace(out.trace_file, args.config_hash, wall, request_entries(out.run.requests));
  nlohmann::ordered_json report;
  report["mode"] = to_string(args.mode);
  report["images"] = dataset.split.images().size();
  report["detections"] = out.run.detections.size();
  report["prompt_tokens"] = usage.prompt_tokens;
  report["completion_tokens"] = usage.completion_tokens;
  report["model_latency_ms"] = latency;
  report["wall_clock_ms"] = wall;
  report["parsing"] = to_json(out.run.stats);
  write_json(out.usage_file, report);
  return out;
}

EvaluateOutput run_evaluate(const EvaluateArgs& args) {
  const LoadedDataset dataset = load_dataset(args.dataset);
  const auto detections = read_detections_file(args.detections, dataset);
  ensure_dir(args.out_dir);

  EvaluateOutput out;
  out.eval = coco_map(detections, dataset.split);
  out.tide = tide_decompose(detections, dataset.split);
  out.confusion = confusion_matrix(detections, dataset.split, 0.5, args.score_threshold);
  out.eval_file = args.out_dir / "eval.json";
  write_json(out.eval_file, to_json(out.eval, dataset.classes));
  write_json(args.out_dir / "tide.json", to_json(out.tide));
  write_json(args.out_dir / "confusion.json", to_json(out.confusion, dataset.classes));
  std::ofstream csv(args.out_dir / "confusion.csv", std::ios::binary);
  if (!csv) throw Error("cannot write confusion.csv");
  csv << to_csv(out.confusion, dataset.classes);
  return out;
}

OptimizeOutput run_optimize(const OptimizeArgs& args, Backend& backend) {
  const auto start = Clock::now();
  LoadedDataset train = load_dataset(args.dataset);
  OptimizerInputs inputs;
  inputs.classes = train.classes;
  inputs.train = std::move(train.split);
  if (args.val) {
    LoadedDataset val = load_dataset(*args.val);
    if (val.classes.size() != inputs.classes.size()) {
      throw DatasetError("validation split has a different category list");
    }
    inputs.val = std::move(val.split);
  }
  const TemplateRegistry templates = load_templates(args.templates);
  ensure_dir(args.out_dir);

  OptimizeOutput out;
  out.result = optimize_dataset(std::move(inputs), backend, templates, args.config);
  out.prompt_file = args.out_dir / "prompts.json";
  out.trace_file = args.out_dir / "optimize_trace.jsonl";
  write_prompt_file(out.prompt_file, out.result);
  write_trace(out.trace_file, args.config_hash, elapsed_ms(start), out.result.trace_entries());
  return out;
}

RerankOutput run_rerank(const RerankArgs& args, Backend& scorer) {
  const auto start = Clock::now();
  const LoadedDataset dataset = load_dataset(args.dataset);
  const auto detections = read_detections_file(args.detections, dataset);
  const TemplateRegistry templates = load_templates(args.templates);
  ensure_dir(args.out_dir);

  RerankOutput out;
  out.result = vqa_rescore(detections, dataset.split, dataset.classes,
                           definitions_from(args.prompt_file, dataset.classes), scorer, templates,
                           args.jobs);
  out.detections_file = args.out_dir / "detections_rescored.jsonl";
  out.audit_file = args.out_dir / "rerank_audit.jsonl";
  out.trace_file = args.out_dir / "rerank_trace.jsonl";
  write_detections_file(out.detections_file, out.result.detections, dataset.classes);

  std::ofstream audit(out.audit_file, std::ios::binary);
  if (!audit) throw Error("cannot write " + out.audit_file.string());
  std::vector<nlohmann::ordered_json> entries;
  for (const auto& a : out.result.audit) {
    audit << to_json(a).dump() << '\n';
    if (a.request) entries.push_back(to_json(*a.request));
  }
  write_trace(out.trace_file, args.config_hash, elapsed_ms(start), entries);
  return out;
}

ReportSummary run_report(const ReportInputs& inputs, const fs::path& out) {
  ReportSummary summary = summarize_report(inputs);
  if (!out.empty()) {
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream file(out, std::ios::binary);
    if (!file) throw Error("cannot write " + out.string());
    file << render_report(summary);
  }
  return summary;
}

}  // namespace detpo::cli
