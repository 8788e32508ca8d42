#include "detpo/detector.hpp"

#include <optional>

#include "detpo/parallel.hpp"

namespace detpo {

namespace {

struct ImageOutcome {
  ParsedDetections parsed;
  RequestRecord record;
};

ImageOutcome query_image(const ImageRecord& image, const std::string& system,
                         const std::string& prompt, std::span<const ClassSpec> classes,
                         const std::string& class_name, Backend& backend,
                         const DetectOptions& options) {
  ChatRequest request;
  request.system = system;
  request.decoding = options.decoding;
  request.parts.push_back(ImagePart{image, {}});
  request.parts.push_back(TextPart{prompt});
  const ChatResponse response = backend.complete(request);
  ImageOutcome out;
  out.parsed =
      parse_detections(response.text, backend.descriptor().space_for(image), image, classes);
  out.record = make_request_record(class_name, options.phase, options.step, request, response);
  return out;
}

DetectionRun collect(std::vector<std::optional<ImageOutcome>>& outcomes) {
  DetectionRun run;
  for (auto& outcome : outcomes) {
    if (!outcome) continue;
    run.stats += outcome->parsed;
    run.detections.insert(run.detections.end(), outcome->parsed.detections.begin(),
                          outcome->parsed.detections.end());
    run.requests.push_back(std::move(outcome->record));
  }
  return run;
}

}  // namespace

const char* to_string(DetectMode mode) {
  switch (mode) {
    case DetectMode::kDetpo:
      return "detpo";
    case DetectMode::kSingleClass:
      return "single-class";
    case DetectMode::kMultiClass:
      return "multi-class";
    case DetectMode::kWithInstructions:
      return "with-instructions";
  }
  return "?";
}

DetectMode detect_mode_from_string(const std::string& name) {
  for (auto mode : {DetectMode::kDetpo, DetectMode::kSingleClass, DetectMode::kMultiClass,
                    DetectMode::kWithInstructions}) {
    if (name == to_string(mode)) return mode;
  }
  throw ConfigError("unknown detection mode '" + name + "'");
}

DetectStats& DetectStats::operator+=(const ParsedDetections& parsed) {
  ++requests;
  if (parsed.parse_failed) ++parse_failures;
  unknown_labels += parsed.unknown_labels;
  malformed += parsed.malformed;
  duplicates += parsed.duplicates;
  truncated += parsed.truncated;
  return *this;
}

DetectStats& DetectStats::operator+=(const DetectStats& other) {
  requests += other.requests;
  parse_failures += other.parse_failures;
  unknown_labels += other.unknown_labels;
  malformed += other.malformed;
  duplicates += other.duplicates;
  truncated += other.truncated;
  return *this;
}

DetectionRun detect_class(const DatasetSplit& split, const ClassSpec& cls,
                          const std::string& definition, Backend& backend,
                          const TemplateRegistry& templates, const DetectOptions& options) {
  std::string prompt;
  if (options.mode == DetectMode::kSingleClass) {
    prompt = templates.render(TemplateId::kSingleClassDetect, {{"class name", cls.name}});
  } else if (options.mode == DetectMode::kDetpo) {
    prompt = templates.render(TemplateId::kDetpoDetect,
                              {{"class_name", cls.name}, {"dataset_instructions", definition}});
  } else {
    throw ContractViolation(std::string("detect_class does not support mode ") +
                            to_string(options.mode));
  }
  const std::string system = templates.render(TemplateId::kSystem, {});
  const auto& images = split.images();
  std::vector<std::optional<ImageOutcome>> outcomes(images.size());
  parallel_for(images.size(), options.jobs, [&](std::size_t i) {
    outcomes[i] = query_image(images[i], system, prompt, std::span<const ClassSpec>(&cls, 1),
                              cls.name, backend, options);
  });
  return collect(outcomes);
}

DetectionRun detect_split(const DatasetSplit& split, std::span<const ClassSpec> classes,
                          const std::map<ClassId, std::string>& definitions, Backend& backend,
                          const TemplateRegistry& templates, const DetectOptions& options) {
  auto definition_of = [&](const ClassSpec& cls) {
    const auto it = definitions.find(cls.id);
    return it != definitions.end() ? it->second : cls.seed_definition();
  };

  if (options.mode == DetectMode::kDetpo || options.mode == DetectMode::kSingleClass) {
    DetectionRun run;
    for (const auto& cls : classes) {
      DetectionRun part = detect_class(split, cls, definition_of(cls), backend, templates, options);
      run.detections.insert(run.detections.end(), part.detections.begin(), part.detections.end());
      run.requests.insert(run.requests.end(), part.requests.begin(), part.requests.end());
      run.stats += part.stats;
    }
    return run;
  }

  std::string prompt;
  const std::string categories = category_prompt(classes);
  if (options.mode == DetectMode::kMultiClass) {
    prompt = templates.render(TemplateId::kMultiClassDetect, {{"category_prompt", categories}});
  } else {
    std::map<ClassId, std::string> texts;
    for (const auto& cls : classes) {
      if (const auto it = definitions.find(cls.id); it != definitions.end()) {
        texts.emplace(cls.id, it->second);
      }
    }
    prompt = templates.render(
        TemplateId::kDetectWithInstructions,
        {{"category_prompt", categories},
         {"instructions", multi_class_instructions(classes, texts)}});
  }
  const std::string system = templates.render(TemplateId::kSystem, {});
  const auto& images = split.images();
  std::vector<std::optional<ImageOutcome>> outcomes(images.size());
  parallel_for(images.size(), options.jobs, [&](std::size_t i) {
    outcomes[i] = query_image(images[i], system, prompt, classes, "", backend, options);
  });
  return collect(outcomes);
}

nlohmann::ordered_json to_json(const DetectStats& stats) {
  nlohmann::ordered_json out;
  out["requests"] = stats.requests;
  out["parse_failures"] = stats.parse_failures;
  out["unknown_labels"] = stats.unknown_labels;
  out["malformed"] = stats.malformed;
  out["duplicates"] = stats.duplicates;
  out["truncated"] = stats.truncated;
  return out;
}

}  // namespace detpo
