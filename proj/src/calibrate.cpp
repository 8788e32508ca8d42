#include "detpo/calibrate.hpp"

#include <algorithm>
#include <cmath>

#include "detpo/parallel.hpp"

namespace detpo {

namespace {

constexpr double kProbabilityFloor = 1e-12;

}  // namespace

double default_score(std::optional<double> score) {
  if (!score || std::isnan(*score)) return 1.0;
  return std::clamp(*score, 0.0, 1.0);
}

std::vector<Detection> apply_score_defaults(std::span<const RawDetection> detections) {
  std::vector<Detection> out;
  out.reserve(detections.size());
  for (const auto& d : detections) {
    out.push_back({d.image_id, d.class_id, d.box, default_score(d.score)});
  }
  return out;
}

std::optional<double> vqa_score(const YesNoProbability& p) {
  const double total = p.yes + p.no;
  if (!(total > kProbabilityFloor)) return std::nullopt;
  return std::clamp(p.yes / total, 0.0, 1.0);
}

RescoreResult vqa_rescore(std::span<const Detection> detections, const DatasetSplit& split,
                          std::span<const ClassSpec> classes,
                          const std::map<ClassId, std::string>& definitions, Backend& scorer,
                          const TemplateRegistry& templates, int jobs) {
  if (!scorer.descriptor().supports_logprobs) {
    throw CapabilityError("scoring backend '" + scorer.descriptor().model +
                          "' does not expose token log-probabilities");
  }
  const std::string system = templates.render(TemplateId::kSystem, {});

  RescoreResult result;
  result.detections.assign(detections.begin(), detections.end());
  result.audit.resize(detections.size());

  parallel_for(detections.size(), jobs, [&](std::size_t i) {
    const Detection& det = detections[i];
    const ClassSpec& cls = classes[static_cast<std::size_t>(det.class_id)];
    RescoreAudit& audit = result.audit[i];
    audit.detection = i;
    audit.original_score = det.score;
    audit.score = det.score;

    const auto def = definitions.find(det.class_id);
    ChatRequest request;
    request.system = system;
    request.decoding.temperature = 0.0;
    request.decoding.max_output_tokens = 1;
    request.request_logprobs = true;
    request.parts.push_back(ImagePart{split.image(det.image_id), {{det.box, BoxColor::kRed}}});
    request.parts.push_back(TextPart{templates.render(
        TemplateId::kVqaScore,
        {{"prompt", cls.name},
         {"dataset_instructions", def != definitions.end() ? def->second : cls.seed_definition()}})});

    try {
      const ChatResponse response = scorer.complete(request);
      audit.request = make_request_record(cls.name, kPhaseRerank, "vqa-score", request, response);
      if (!response.first_token_logprobs || response.first_token_logprobs->empty()) {
        throw CapabilityError("response carries no log-probabilities");
      }
      const YesNoProbability p = read_yes_no(*response.first_token_logprobs);
      audit.p_yes = p.yes;
      audit.p_no = p.no;
      if (const auto score = vqa_score(p)) {
        audit.score = *score;
        result.detections[i].score = *score;
      } else {
        audit.flagged = true;
        audit.reason = "yes and no probabilities are both zero";
      }
    } catch (const AuthenticationError&) {
      throw;
    } catch (const BackendError& e) {
      audit.flagged = true;
      audit.reason = e.what();
    }
  });
  result.flagged = static_cast<std::size_t>(
      std::count_if(result.audit.begin(), result.audit.end(),
                    [](const RescoreAudit& a) { return a.flagged; }));
  return result;
}

nlohmann::ordered_json to_json(const RescoreAudit& audit) {
  nlohmann::ordered_json out;
  out["detection"] = audit.detection;
  out["p_yes"] = audit.p_yes;
  out["p_no"] = audit.p_no;
  out["original_score"] = audit.original_score;
  out["score"] = audit.score;
  out["flagged"] = audit.flagged;
  if (!audit.reason.empty()) out["reason"] = audit.reason;
  return out;
}

}  // namespace detpo
