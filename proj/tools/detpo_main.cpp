// detpo: detection prompt optimization from the command line.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "detpo/cli/commands.hpp"
#include "detpo/config.hpp"
#include "detpo/error.hpp"

namespace {

namespace fs = std::filesystem;
using namespace detpo;

struct Flags {
  std::string config;
  std::string dataset;
  std::string split;
  std::string val_split;
  std::string metadata;
  std::string backend;
  std::string scorer;
  std::string templates;
  std::string mode;
  std::string prompt_file;
  std::string detections;
  std::string out_dir;
  std::string out;
  std::optional<int> t_max;
  std::optional<int> k_shot;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<double> score_threshold;
  std::vector<std::string> traces;
  std::vector<std::string> evals;
};

BackendDescriptor load_descriptor(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read backend config " + file);
  const auto doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("backend config " + file + " is not valid JSON");
  return BackendDescriptor::from_json(interpolate_env(doc), fs::path(file).parent_path());
}

// Config file first, then flags on top.
RunConfig effective_config(const Flags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : RunConfig::load(f.config);
  if (!f.dataset.empty()) c.dataset = f.dataset;
  if (!f.split.empty()) c.split = f.split;
  if (!f.val_split.empty()) c.val_split = f.val_split;
  if (!f.metadata.empty()) c.metadata = fs::path(f.metadata);
  if (!f.templates.empty()) c.templates = f.templates;
  if (!f.mode.empty()) c.mode = detect_mode_from_string(f.mode);
  if (!f.backend.empty()) c.backend = load_descriptor(f.backend);
  if (!f.scorer.empty()) c.scorer = load_descriptor(f.scorer);
  if (f.t_max) c.optimizer.t_max = *f.t_max;
  if (f.k_shot) c.optimizer.k_shot = *f.k_shot;
  if (f.seed) c.optimizer.seed = *f.seed;
  if (f.jobs) c.optimizer.jobs = *f.jobs;
  if (f.score_threshold) c.score_threshold = *f.score_threshold;
  c.optimizer.validate();
  return c;
}

cli::DatasetRef dataset_ref(const RunConfig& c, const std::string& split) {
  cli::DatasetRef ref;
  ref.path = c.dataset;
  ref.split = split;
  ref.metadata = c.metadata;
  return ref;
}

fs::path required_dir(const std::string& dir) {
  if (dir.empty()) throw ConfigError("--out-dir is required");
  return dir;
}

int detect(const Flags& f) {
  const RunConfig c = effective_config(f);
  auto backend = make_backend(c.backend);
  cli::DetectArgs args;
  args.dataset = dataset_ref(c, c.split);
  if (!f.prompt_file.empty()) args.prompt_file = fs::path(f.prompt_file);
  args.mode = c.mode;
  args.decoding = c.optimizer.detection_decoding;
  args.jobs = c.optimizer.jobs;
  args.out_dir = required_dir(f.out_dir);
  args.templates = c.templates;
  args.config_hash = c.hash();
  const auto out = cli::run_detect(args, *backend);
  std::cout << "detect: " << out.run.stats.requests << " requests, " << out.run.detections.size()
            << " detections -> " << out.detections_file.string() << "\n";
  return 0;
}

int evaluate(const Flags& f) {
  const RunConfig c = effective_config(f);
  if (f.detections.empty()) throw ConfigError("--detections is required");
  cli::EvaluateArgs args;
  args.dataset = dataset_ref(c, c.split);
  args.detections = f.detections;
  args.out_dir = required_dir(f.out_dir);
  args.score_threshold = c.score_threshold;
  const auto out = cli::run_evaluate(args);
  std::printf("evaluate: mAP %.4f, mAP50 %.4f -> %s\n", out.eval.map, out.eval.map50,
              out.eval_file.string().c_str());
  return 0;
}

int optimize(const Flags& f) {
  const RunConfig c = effective_config(f);
  auto backend = make_backend(c.backend);
  cli::OptimizeArgs args;
  args.dataset = dataset_ref(c, c.split);
  if (c.val_split) args.val = dataset_ref(c, *c.val_split);
  args.config = c.optimizer;
  args.out_dir = required_dir(f.out_dir);
  args.templates = c.templates;
  args.config_hash = c.hash();
  const auto out = cli::run_optimize(args, *backend);
  for (const auto& cls : out.result.classes) {
    std::cout << "optimize: " << cls.class_name << " -> " << to_string(cls.final.provenance);
    if (cls.fell_back) std::cout << " (" << cls.message << ")";
    std::cout << "\n";
  }
  std::cout << "prompts -> " << out.prompt_file.string() << "\n";
  return out.result.any_failed() ? 1 : 0;
}

int rerank(const Flags& f) {
  const RunConfig c = effective_config(f);
  if (f.detections.empty()) throw ConfigError("--detections is required");
  auto scorer = make_backend(c.scorer ? *c.scorer : c.backend);
  cli::RerankArgs args;
  args.dataset = dataset_ref(c, c.split);
  args.detections = f.detections;
  if (!f.prompt_file.empty()) args.prompt_file = fs::path(f.prompt_file);
  args.jobs = c.optimizer.jobs;
  args.out_dir = required_dir(f.out_dir);
  args.templates = c.templates;
  args.config_hash = c.hash();
  const auto out = cli::run_rerank(args, *scorer);
  std::cout << "rerank: " << out.result.detections.size() << " detections, "
            << out.result.flagged << " flagged -> " << out.detections_file.string() << "\n";
  return 0;
}

int report(const Flags& f) {
  ReportInputs inputs;
  for (const auto& t : f.traces) inputs.traces.emplace_back(t);
  for (const auto& e : f.evals) inputs.evals.emplace_back(e);
  if (!f.prompt_file.empty()) inputs.prompt_file = fs::path(f.prompt_file);
  if (f.out.empty()) {
    std::cout << render_report(summarize_report(inputs));
  } else {
    cli::run_report(inputs, f.out);
    std::cout << "report -> " << f.out << "\n";
  }
  return 0;
}

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "Experiment config (JSON)");
  cmd->add_option("--dataset", f.dataset, "COCO annotation file or dataset directory");
  cmd->add_option("--split", f.split, "Split name (train, valid, test)");
  cmd->add_option("--metadata", f.metadata, "Class metadata JSON");
  cmd->add_option("--templates", f.templates, "Prompt template directory");
  cmd->add_option("--jobs", f.jobs, "Parallel classes / requests")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot detection prompt optimization for multimodal LLMs"};
  app.require_subcommand(1);
  Flags f;

  auto* det = app.add_subcommand("detect", "Run detection prompts over a split");
  add_common(det, f);
  det->add_option("--backend", f.backend, "Backend config (JSON)");
  det->add_option("--prompt-file", f.prompt_file, "Optimized prompts from `optimize`");
  det->add_option("--mode", f.mode, "detpo, single-class, multi-class or with-instructions");
  det->add_option("--out-dir", f.out_dir, "Output directory");

  auto* eval = app.add_subcommand("evaluate", "Score a detections file");
  add_common(eval, f);
  eval->add_option("--detections", f.detections, "Detections JSON lines");
  eval->add_option("--score-threshold", f.score_threshold, "Confusion-matrix score cutoff");
  eval->add_option("--out-dir", f.out_dir, "Output directory");

  auto* opt = app.add_subcommand("optimize", "Optimize per-class prompts");
  add_common(opt, f);
  opt->add_option("--backend", f.backend, "Backend config (JSON)");
  opt->add_option("--val-split", f.val_split, "Held-out split for candidate selection");
  opt->add_option("--t-max", f.t_max, "Refinement iterations")->check(CLI::PositiveNumber);
  opt->add_option("--k-shot", f.k_shot, "Training images per class")->check(CLI::PositiveNumber);
  opt->add_option("--seed", f.seed, "Sampling seed");
  opt->add_option("--out-dir", f.out_dir, "Output directory");

  auto* rr = app.add_subcommand("rerank", "Rescore detections with VQA yes/no probabilities");
  add_common(rr, f);
  rr->add_option("--backend", f.backend, "Backend config used when no scorer is given");
  rr->add_option("--scorer", f.scorer, "Scoring backend config (JSON)");
  rr->add_option("--detections", f.detections, "Detections JSON lines");
  rr->add_option("--prompt-file", f.prompt_file, "Optimized prompts used as definitions");
  rr->add_option("--out-dir", f.out_dir, "Output directory");

  auto* rep = app.add_subcommand("report", "Summarize traces and evaluations as markdown");
  rep->add_option("--trace", f.traces, "Trace files")->take_all();
  rep->add_option("--eval", f.evals, "eval.json files")->take_all();
  rep->add_option("--prompt-file", f.prompt_file, "Prompt file");
  rep->add_option("--out", f.out, "Markdown output (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (det->parsed()) return detect(f);
    if (eval->parsed()) return evaluate(f);
    if (opt->parsed()) return optimize(f);
    if (rr->parsed()) return rerank(f);
    if (rep->parsed()) return report(f);
  } catch (const detpo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
