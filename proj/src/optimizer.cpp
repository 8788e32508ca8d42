#include "detpo/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "detpo/detector.hpp"
#include "detpo/hash.hpp"
#include "detpo/parallel.hpp"

namespace detpo {

namespace {

constexpr double kMapTolerance = 1e-12;

std::string trimmed(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

nlohmann::ordered_json optional_number(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

double class_ap(const EvalResult& eval, ClassId c) { return eval.for_class(c).ap; }

// Appends an image part, merging boxes into the previous part when both
// refer to the same image.
void add_image(ChatRequest& request, const ImageRecord& image, AnnotatedBox box) {
  if (!request.parts.empty()) {
    if (auto* last = std::get_if<ImagePart>(&request.parts.back());
        last != nullptr && last->image.id == image.id) {
      last->boxes.push_back(box);
      return;
    }
  }
  request.parts.push_back(ImagePart{image, {box}});
}

// Picks a random instance of `c` on a random training image holding it.
std::pair<ImageId, BoundingBox> random_instance(const DatasetSplit& split, ClassId c, Rng& rng) {
  const auto images = split.images_with_class(c);
  const ImageId image = images[rng.index(images.size())];
  std::vector<BoundingBox> boxes;
  for (std::size_t g : split.ground_truth_for_image(image)) {
    if (split.ground_truth()[g].class_id == c) boxes.push_back(split.ground_truth()[g].box);
  }
  return {image, boxes[rng.index(boxes.size())]};
}

ChatResponse send(ClassContext& ctx, const ClassSpec& cls, const std::string& step,
                  const ChatRequest& request) {
  const ChatResponse response = ctx.backend.complete(request);
  ctx.trace.add_request(make_request_record(cls.name, kPhaseOptimization, step, request, response));
  return response;
}

// Sends a refinement request and extracts the definition, retrying up to
// `max_retries` times on unusable output.
std::optional<ExtractedDefinition> refine(ClassContext& ctx, const ClassSpec& cls,
                                          const std::string& step, const ChatRequest& request,
                                          int max_retries, Usage* usage = nullptr) {
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    const ChatResponse response = send(ctx, cls, step, request);
    if (usage != nullptr) *usage += response.usage;
    try {
      ExtractedDefinition def = extract_definition(response.text, cls.name);
      if (!trimmed(def.text).empty()) return def;
    } catch (const TemplateError&) {
    }
    nlohmann::ordered_json note;
    note["type"] = "extraction_failure";
    note["class"] = cls.name;
    note["step"] = step;
    note["attempt"] = attempt;
    ctx.trace.add(std::move(note));
  }
  return std::nullopt;
}

nlohmann::ordered_json selection_json(const ErrorSelection& sel) {
  nlohmann::ordered_json out;
  out["false_positive"] = sel.false_positive ? to_json(*sel.false_positive) : nlohmann::ordered_json(nullptr);
  out["false_negative"] = sel.false_negative ? to_json(*sel.false_negative) : nlohmann::ordered_json(nullptr);
  out["best_match"] = sel.best_match ? to_json(*sel.best_match) : nlohmann::ordered_json(nullptr);
  return out;
}

void record_iteration(ClassContext& ctx, const ClassSpec& cls, const IterationRecord& rec,
                      const OptimizationState& state, const std::string& reason = {}) {
  nlohmann::ordered_json entry;
  entry["type"] = "iteration";
  entry["class"] = cls.name;
  entry["iteration"] = rec.iteration;
  entry["action"] = rec.action;
  if (!reason.empty()) entry["reason"] = reason;
  entry["map"] = rec.map;
  entry["accepted_map"] = rec.accepted_map;
  entry["best_map"] = rec.best_map;
  entry["prompt_hash"] = fnv1a_hex(state.current);
  entry["excluded"] = std::vector<ImageId>(state.excluded.begin(), state.excluded.end());
  entry["errors"] = selection_json(rec.selection);
  entry["prompt_tokens"] = rec.usage.prompt_tokens;
  entry["completion_tokens"] = rec.usage.completion_tokens;
  ctx.trace.add(std::move(entry));
}

}  // namespace

const char* to_string(Provenance provenance) {
  switch (provenance) {
    case Provenance::kSeed:
      return "seed";
    case Provenance::kStage1:
      return "stage1";
    case Provenance::kIteration:
      return "iteration";
    case Provenance::kBest:
      return "best";
    case Provenance::kFinal:
      return "final";
    case Provenance::kAlternative:
      return "alternative";
  }
  return "?";
}

Provenance provenance_from_string(const std::string& name) {
  for (auto p : {Provenance::kSeed, Provenance::kStage1, Provenance::kIteration, Provenance::kBest,
                 Provenance::kFinal, Provenance::kAlternative}) {
    if (name == to_string(p)) return p;
  }
  throw ConfigError("unknown provenance '" + name + "'");
}

int selection_priority(Provenance provenance) {
  switch (provenance) {
    case Provenance::kBest:
      return 0;
    case Provenance::kFinal:
      return 1;
    case Provenance::kAlternative:
      return 2;
    case Provenance::kStage1:
      return 3;
    case Provenance::kSeed:
      return 4;
    case Provenance::kIteration:
      return 5;
  }
  return 6;
}

void OptimizerConfig::validate() const {
  if (t_max < 1) throw ConfigError("t_max must be >= 1");
  if (k_shot && *k_shot < 1) throw ConfigError("k_shot must be >= 1");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  if (max_refinement_retries < 0) throw ConfigError("max_refinement_retries must be >= 0");
  if (detection_decoding.temperature < 0 || refinement_decoding.temperature < 0) {
    throw ConfigError("temperatures must be >= 0");
  }
}

nlohmann::ordered_json OptimizerConfig::to_json() const {
  nlohmann::ordered_json out;
  out["t_max"] = t_max;
  out["k_shot"] = k_shot ? nlohmann::ordered_json(*k_shot) : nlohmann::ordered_json(nullptr);
  out["seed"] = seed;
  out["jobs"] = jobs;
  out["detection_temperature"] = detection_decoding.temperature;
  out["detection_max_tokens"] = detection_decoding.max_output_tokens;
  out["refinement_temperature"] = refinement_decoding.temperature;
  out["refinement_max_tokens"] = refinement_decoding.max_output_tokens;
  out["max_refinement_retries"] = max_refinement_retries;
  return out;
}

OptimizerConfig OptimizerConfig::from_json(const nlohmann::json& doc) {
  OptimizerConfig c;
  if (!doc.is_object()) throw ConfigError("optimizer config must be an object");
  try {
    c.t_max = doc.value("t_max", c.t_max);
    if (doc.contains("k_shot") && !doc.at("k_shot").is_null()) c.k_shot = doc.at("k_shot").get<int>();
    c.seed = doc.value("seed", c.seed);
    c.jobs = doc.value("jobs", c.jobs);
    c.detection_decoding.temperature =
        doc.value("detection_temperature", c.detection_decoding.temperature);
    c.detection_decoding.max_output_tokens =
        doc.value("detection_max_tokens", c.detection_decoding.max_output_tokens);
    c.refinement_decoding.temperature =
        doc.value("refinement_temperature", c.refinement_decoding.temperature);
    c.refinement_decoding.max_output_tokens =
        doc.value("refinement_max_tokens", c.refinement_decoding.max_output_tokens);
    c.max_refinement_retries = doc.value("max_refinement_retries", c.max_refinement_retries);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed optimizer config: ") + e.what());
  }
  c.validate();
  return c;
}

EvalResult evaluate_prompt(const ClassSpec& cls, const std::string& definition,
                           const DatasetSplit& split, ClassContext& ctx, const std::string& step) {
  DetectOptions options;
  options.mode = DetectMode::kDetpo;
  options.decoding = ctx.config.detection_decoding;
  options.phase = kPhaseOptimization;
  options.step = step;
  DetectionRun run = detect_class(split, cls, definition, ctx.backend, ctx.templates, options);
  for (const auto& record : run.requests) ctx.trace.add_request(record);
  return coco_map(run.detections, split);
}

PromptCandidate stage1_bootstrap(const ClassSpec& cls, ClassContext& ctx) {
  const DatasetSplit& train = ctx.inputs.train;
  const auto positives = train.images_with_class(cls.id);
  if (positives.empty()) {
    throw DatasetError("class '" + cls.name + "' has no training instances");
  }

  ChatRequest summarize;
  summarize.decoding = ctx.config.refinement_decoding;
  for (ImageId id : positives) {
    ImagePart part{train.image(id), {}};
    for (std::size_t g : train.ground_truth_for_image(id)) {
      const auto& gt = train.ground_truth()[g];
      if (gt.class_id == cls.id) part.boxes.push_back({gt.box, BoxColor::kGreen});
    }
    summarize.parts.push_back(std::move(part));
  }
  summarize.parts.push_back(TextPart{ctx.templates.render(TemplateId::kInitSummarize, {})});
  std::string prior = "Class name: " + cls.name;
  const std::string seed_text = trimmed(cls.description + "\n" + cls.instructions);
  if (!seed_text.empty()) prior += "\nExisting description: " + seed_text;
  summarize.parts.push_back(TextPart{prior});

  std::string definition = cls.seed_definition();
  const ChatResponse response = send(ctx, cls, "summarize", summarize);
  try {
    const ExtractedDefinition extracted = extract_definition(response.text, cls.name);
    // A plain summary has no fence; keep the whole answer in that case.
    definition = extracted.quality == ExtractionQuality::kParagraph ? trimmed(response.text)
                                                                    : extracted.text;
  } catch (const TemplateError&) {
    nlohmann::ordered_json note;
    note["type"] = "extraction_failure";
    note["class"] = cls.name;
    note["step"] = "summarize";
    note["attempt"] = 0;
    ctx.trace.add(std::move(note));
  }

  for (const auto& other : ctx.inputs.classes) {
    if (other.id == cls.id) continue;
    if (train.images_with_class(other.id).empty()) continue;
    const auto [pos_image, pos_box] = random_instance(train, cls.id, ctx.rng);
    const auto [neg_image, neg_box] = random_instance(train, other.id, ctx.rng);
    ChatRequest contrast;
    contrast.decoding = ctx.config.refinement_decoding;
    add_image(contrast, train.image(pos_image), {pos_box, BoxColor::kGreen});
    add_image(contrast, train.image(neg_image), {neg_box, BoxColor::kRed});
    contrast.parts.push_back(TextPart{ctx.templates.render(
        TemplateId::kRefineContrastive,
        {{"class_name", cls.name}, {"current_instructions", definition}})});
    if (auto refined = refine(ctx, cls, "contrastive", contrast, 0)) definition = refined->text;
  }

  PromptCandidate out;
  out.class_id = cls.id;
  out.text = definition;
  out.provenance = Provenance::kStage1;
  return out;
}

OptimizationState initial_state(const ClassSpec& cls, const std::string& stage1_prompt,
                                int t_max) {
  OptimizationState state;
  state.class_id = cls.id;
  state.current = stage1_prompt;
  state.previous = stage1_prompt;
  state.best = stage1_prompt;
  state.t_max = t_max;
  return state;
}

OptimizationState stage2_iterate(const ClassSpec& cls, OptimizationState state,
                                 ClassContext& ctx) {
  const DatasetSplit& train = ctx.inputs.train;
  if (!state.accepted_eval) {
    state.accepted_eval = evaluate_prompt(cls, state.current, train, ctx, "evaluate-train");
    state.accepted_map = class_ap(*state.accepted_eval, cls.id);
    state.best = state.current;
    state.best_map = state.accepted_map;
    state.best_iteration = 0;
    state.initial_map = state.accepted_map;
    nlohmann::ordered_json entry;
    entry["type"] = "evaluation";
    entry["class"] = cls.name;
    entry["split"] = "train";
    entry["iteration"] = 0;
    entry["prompt_hash"] = fnv1a_hex(state.current);
    entry["map"] = state.accepted_map;
    entry["map50"] = state.accepted_eval->for_class(cls.id).ap50;
    ctx.trace.add(std::move(entry));
  }
  if (is_perfect(*state.accepted_eval, train, cls.id)) {
    IterationRecord rec{0, "early_stop", state.accepted_map, state.accepted_map, state.best_map,
                        {}, {}};
    state.history.push_back(rec);
    state.stopped_early = true;
    record_iteration(ctx, cls, rec, state, "perfect");
    return state;
  }

  while (state.t < state.t_max) {
    const int t = state.t + 1;
    IterationRecord rec;
    rec.iteration = t;
    rec.selection = select_worst_errors(*state.accepted_eval, train, cls.id, state.excluded);
    if (rec.selection.empty()) {
      rec.action = "early_stop";
      rec.map = rec.accepted_map = state.accepted_map;
      rec.best_map = state.best_map;
      state.history.push_back(rec);
      state.stopped_early = true;
      record_iteration(ctx, cls, rec, state, "no_errors");
      break;
    }

    MatchExemplar exemplar;
    if (rec.selection.best_match) {
      exemplar = *rec.selection.best_match;
    } else {
      const auto [image, box] = random_instance(train, cls.id, ctx.rng);
      exemplar = MatchExemplar{image, box, 0.0};
    }

    std::string candidate = state.current;
    if (const auto& fn = rec.selection.false_negative) {
      ChatRequest request;
      request.decoding = ctx.config.refinement_decoding;
      add_image(request, train.image(exemplar.image_id), {exemplar.box, BoxColor::kGreen});
      add_image(request, train.image(fn->image_id), {fn->box, BoxColor::kBlue});
      request.parts.push_back(TextPart{ctx.templates.render(
          TemplateId::kRefineIncludeFn,
          {{"class_name", cls.name}, {"current_instructions", candidate}})});
      if (auto refined = refine(ctx, cls, "refine-include", request,
                                ctx.config.max_refinement_retries, &rec.usage)) {
        candidate = refined->text;
      }
      ++state.refinement_calls;
      state.excluded.insert(fn->image_id);
    }
    if (const auto& fp = rec.selection.false_positive) {
      ChatRequest request;
      request.decoding = ctx.config.refinement_decoding;
      add_image(request, train.image(exemplar.image_id), {exemplar.box, BoxColor::kGreen});
      add_image(request, train.image(fp->image_id), {fp->box, BoxColor::kRed});
      request.parts.push_back(TextPart{ctx.templates.render(
          TemplateId::kRefineExcludeFp,
          {{"class_name", cls.name}, {"current_instructions", candidate}})});
      if (auto refined = refine(ctx, cls, "refine-exclude", request,
                                ctx.config.max_refinement_retries, &rec.usage)) {
        candidate = refined->text;
      }
      ++state.refinement_calls;
      state.excluded.insert(fp->image_id);
    }

    EvalResult eval = evaluate_prompt(cls, candidate, train, ctx, "evaluate-train");
    rec.map = class_ap(eval, cls.id);
    state.t = t;
    bool perfect = false;
    if (rec.map < state.accepted_map) {
      rec.action = "revert";
    } else {
      rec.action = "accept";
      state.previous = state.current;
      state.current = candidate;
      state.accepted_map = rec.map;
      perfect = is_perfect(eval, train, cls.id);
      state.accepted_eval = std::move(eval);
      if (rec.map > state.best_map) {
        state.best = candidate;
        state.best_map = rec.map;
        state.best_iteration = t;
      }
    }
    rec.accepted_map = state.accepted_map;
    rec.best_map = state.best_map;
    state.history.push_back(rec);
    record_iteration(ctx, cls, rec, state);
    if (perfect) {
      IterationRecord stop{t, "early_stop", rec.map, state.accepted_map, state.best_map, {}, {}};
      state.history.push_back(stop);
      state.stopped_early = true;
      record_iteration(ctx, cls, stop, state, "perfect");
      break;
    }
  }
  return state;
}

PromptCandidate stage3_select(const ClassSpec& cls, std::vector<PromptCandidate>& candidates,
                              ClassContext& ctx) {
  if (candidates.empty()) throw ContractViolation("stage 3 needs at least one candidate");
  auto best_it = std::find_if(candidates.begin(), candidates.end(), [](const PromptCandidate& c) {
    return c.provenance == Provenance::kBest;
  });
  const PromptCandidate anchor = best_it != candidates.end() ? *best_it : candidates.front();

  ChatRequest request;
  request.decoding = ctx.config.refinement_decoding;
  request.parts.push_back(TextPart{ctx.templates.render(
      TemplateId::kGenerateAlternative,
      {{"class_name", cls.name}, {"best_instructions", anchor.text}})});
  if (auto alt = refine(ctx, cls, "generate-alternative", request,
                        ctx.config.max_refinement_retries)) {
    PromptCandidate c;
    c.class_id = cls.id;
    c.text = alt->text;
    c.provenance = Provenance::kAlternative;
    candidates.push_back(std::move(c));
  }

  // Deduplicate by text, keeping the preferred provenance.
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const PromptCandidate& a, const PromptCandidate& b) {
                     return selection_priority(a.provenance) < selection_priority(b.provenance);
                   });
  std::vector<PromptCandidate> unique;
  for (auto& c : candidates) {
    if (trimmed(c.text).empty()) continue;
    const bool seen = std::any_of(unique.begin(), unique.end(),
                                  [&](const PromptCandidate& u) { return u.text == c.text; });
    if (!seen) unique.push_back(std::move(c));
  }
  candidates = std::move(unique);
  if (candidates.empty()) throw ContractViolation("stage 3 candidates are all empty");

  const DatasetSplit& val = ctx.inputs.validation();
  nlohmann::ordered_json selection;
  selection["type"] = "selection";
  selection["class"] = cls.name;
  if (val.images().empty()) {
    selection["warning"] = "empty validation split; keeping the best training prompt";
    selection["selected"] = to_string(candidates.front().provenance);
    ctx.trace.add(std::move(selection));
    return candidates.front();
  }

  std::size_t chosen = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const EvalResult eval = evaluate_prompt(cls, candidates[i].text, val, ctx, "evaluate-val");
    candidates[i].val_map = class_ap(eval, cls.id);
    // Candidates are in priority order, so only a strict gain replaces.
    if (*candidates[i].val_map > *candidates[chosen].val_map + kMapTolerance) chosen = i;
  }
  nlohmann::ordered_json listed = nlohmann::ordered_json::array();
  for (const auto& c : candidates) listed.push_back(to_json(c));
  selection["candidates"] = listed;
  selection["selected"] = to_string(candidates[chosen].provenance);
  selection["val_map"] = *candidates[chosen].val_map;
  ctx.trace.add(std::move(selection));
  return candidates[chosen];
}

ClassOptimizationResult optimize_class(const ClassSpec& cls, const OptimizerInputs& inputs,
                                       Backend& backend, const TemplateRegistry& templates,
                                       const OptimizerConfig& config) {
  ClassOptimizationResult result;
  result.class_id = cls.id;
  result.class_name = cls.name;
  Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(cls.id)));
  ClassContext ctx{inputs, backend, templates, config, rng, result.trace};

  PromptCandidate seed;
  seed.class_id = cls.id;
  seed.text = cls.seed_definition();
  seed.provenance = Provenance::kSeed;

  auto fall_back = [&](const std::string& message, bool failed) {
    result.final = seed;
    result.fell_back = true;
    result.failed = failed;
    result.message = message;
    nlohmann::ordered_json entry;
    entry["type"] = failed ? "failure" : "skipped";
    entry["class"] = cls.name;
    entry["message"] = message;
    result.trace.add(std::move(entry));
  };

  if (inputs.train.images_with_class(cls.id).empty()) {
    fall_back("no training instances; using the seed definition", false);
    return result;
  }
  try {
    PromptCandidate stage1 = stage1_bootstrap(cls, ctx);
    OptimizationState state = stage2_iterate(cls, initial_state(cls, stage1.text, config.t_max), ctx);
    stage1.train_map = state.initial_map;

    PromptCandidate best{cls.id, state.best, Provenance::kBest, state.best_iteration,
                         state.best_map, std::nullopt};
    PromptCandidate final_prompt{cls.id, state.current, Provenance::kFinal, state.t,
                                 state.accepted_map, std::nullopt};
    std::vector<PromptCandidate> candidates{seed, stage1, best, final_prompt};
    result.final = stage3_select(cls, candidates, ctx);
    result.candidates = std::move(candidates);
    result.state = std::move(state);
  } catch (const Error& e) {
    fall_back(e.what(), true);
  }
  return result;
}

DatasetOptimization optimize_dataset(OptimizerInputs inputs, Backend& backend,
                                     const TemplateRegistry& templates,
                                     const OptimizerConfig& config) {
  config.validate();
  if (config.k_shot) {
    inputs.train = subsample_k_shot(inputs.train, *config.k_shot, config.seed);
  }
  DatasetOptimization out;
  out.classes.resize(inputs.classes.size());
  parallel_for(inputs.classes.size(), config.jobs, [&](std::size_t i) {
    out.classes[i] = optimize_class(inputs.classes[i], inputs, backend, templates, config);
  });
  return out;
}

std::vector<nlohmann::ordered_json> DatasetOptimization::trace_entries() const {
  std::vector<nlohmann::ordered_json> out;
  for (const auto& c : classes) {
    auto entries = c.trace.entries();
    out.insert(out.end(), std::make_move_iterator(entries.begin()),
               std::make_move_iterator(entries.end()));
  }
  return out;
}

bool DatasetOptimization::any_failed() const {
  return std::any_of(classes.begin(), classes.end(),
                     [](const ClassOptimizationResult& c) { return c.failed; });
}

nlohmann::ordered_json to_json(const PromptCandidate& candidate) {
  nlohmann::ordered_json out;
  out["provenance"] = to_string(candidate.provenance);
  out["iteration"] = candidate.iteration;
  out["prompt_hash"] = fnv1a_hex(candidate.text);
  out["train_map"] = optional_number(candidate.train_map);
  out["val_map"] = optional_number(candidate.val_map);
  return out;
}

nlohmann::ordered_json prompt_file_json(const DatasetOptimization& result) {
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  for (const auto& c : result.classes) {
    nlohmann::ordered_json entry;
    entry["definition"] = c.final.text;
    entry["provenance"] = to_string(c.final.provenance);
    entry["train_map"] = optional_number(c.final.train_map);
    entry["val_map"] = optional_number(c.final.val_map);
    out[c.class_name] = std::move(entry);
  }
  return out;
}

void write_prompt_file(const std::filesystem::path& file, const DatasetOptimization& result) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error("cannot write prompt file " + file.string());
  out << prompt_file_json(result).dump(2) << '\n';
}

std::map<std::string, PromptEntry> read_prompt_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read prompt file " + file.string());
  const auto doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw ConfigError("prompt file " + file.string() + " is not a JSON object");
  }
  std::map<std::string, PromptEntry> out;
  for (const auto& [name, value] : doc.items()) {
    PromptEntry entry;
    if (value.is_string()) {
      entry.definition = value.get<std::string>();
    } else if (value.is_object() && value.contains("definition") &&
               value.at("definition").is_string()) {
      entry.definition = value.at("definition").get<std::string>();
      entry.provenance = value.value("provenance", "");
      if (value.contains("train_map") && value.at("train_map").is_number()) {
        entry.train_map = value.at("train_map").get<double>();
      }
      if (value.contains("val_map") && value.at("val_map").is_number()) {
        entry.val_map = value.at("val_map").get<double>();
      }
    } else {
      throw ConfigError("prompt file entry '" + name + "' needs a string definition");
    }
    out.emplace(name, std::move(entry));
  }
  return out;
}

std::map<ClassId, std::string> definitions_for(const std::map<std::string, PromptEntry>& prompts,
                                               std::span<const ClassSpec> classes) {
  std::map<ClassId, std::string> out;
  for (const auto& cls : classes) {
    if (const auto it = prompts.find(cls.name); it != prompts.end()) {
      out.emplace(cls.id, it->second.definition);
    }
  }
  return out;
}

}  // namespace detpo
