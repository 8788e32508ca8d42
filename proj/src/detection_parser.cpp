#include "detpo/detection_parser.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <tuple>

#include "detpo/calibrate.hpp"

namespace detpo {

namespace {

constexpr std::size_t kMaxArrayStarts = 64;

std::string normalize_label(std::string_view label) {
  std::string out;
  bool pending_space = false;
  for (unsigned char ch : label) {
    if (std::isspace(ch)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(ch));
  }
  return out;
}

std::vector<std::string_view> fenced_bodies(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto open = text.find("```", pos);
    if (open == std::string_view::npos) break;
    auto body = text.find('\n', open + 3);
    const auto close = text.find("```", open + 3);
    if (close == std::string_view::npos) {
      // Unterminated fence, common with truncated output.
      if (body != std::string_view::npos) out.push_back(text.substr(body + 1));
      break;
    }
    if (body == std::string_view::npos || body > close) body = open + 2;
    out.push_back(text.substr(body + 1, close - body - 1));
    pos = close + 3;
  }
  return out;
}

// Scans from the '[' at `start`. Returns the parsed array, salvaging
// complete top-level elements when the closing bracket is missing.
std::optional<nlohmann::json> parse_array_at(std::string_view text, std::size_t start) {
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  std::size_t last_element_end = std::string_view::npos;
  for (std::size_t i = start; i < text.size(); ++i) {
    const char ch = text[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (ch == '\\') {
        escaped = true;
      } else if (ch == '"') {
        in_string = false;
      }
      continue;
    }
    if (ch == '"') {
      in_string = true;
    } else if (ch == '[' || ch == '{') {
      ++depth;
    } else if (ch == ']' || ch == '}') {
      --depth;
      if (depth == 1 && ch == '}') last_element_end = i;
      if (depth == 0) {
        auto parsed = nlohmann::json::parse(text.substr(start, i - start + 1), nullptr, false);
        if (!parsed.is_discarded() && parsed.is_array()) return parsed;
        return std::nullopt;
      }
      if (depth < 0) return std::nullopt;
    }
  }
  if (last_element_end != std::string_view::npos) {
    std::string repaired(text.substr(start, last_element_end - start + 1));
    repaired += "]";
    auto parsed = nlohmann::json::parse(repaired, nullptr, false);
    if (!parsed.is_discarded() && parsed.is_array()) return parsed;
  }
  return std::nullopt;
}

std::optional<nlohmann::json> first_array(std::string_view text) {
  std::size_t tried = 0;
  for (std::size_t pos = text.find('['); pos != std::string_view::npos && tried < kMaxArrayStarts;
       pos = text.find('[', pos + 1), ++tried) {
    if (auto parsed = parse_array_at(text, pos)) return parsed;
  }
  return std::nullopt;
}

std::optional<std::array<double, 4>> read_box(const nlohmann::json& element) {
  const nlohmann::json* value = nullptr;
  if (element.contains("bbox_2d")) {
    value = &element.at("bbox_2d");
  } else if (element.contains("bbox")) {
    value = &element.at("bbox");
  }
  if (value == nullptr || !value->is_array() || value->size() != 4) return std::nullopt;
  std::array<double, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    if (!(*value)[i].is_number()) return std::nullopt;
    out[i] = (*value)[i].get<double>();
    if (!std::isfinite(out[i])) return std::nullopt;
  }
  return out;
}

}  // namespace

std::optional<nlohmann::json> extract_json_array(std::string_view text) {
  for (auto body : fenced_bodies(text)) {
    if (auto parsed = first_array(body)) return parsed;
  }
  return first_array(text);
}

ParsedDetections parse_detections(std::string_view text, const CoordinateSpace& expected_space,
                                  const ImageRecord& image, std::span<const ClassSpec> classes) {
  ParsedDetections out;
  const auto array = extract_json_array(text);
  if (!array) {
    out.parse_failed = true;
    return out;
  }
  const CoordinateSpace pixel = image.pixel_space();

  std::vector<RawDetection> raw;
  std::set<std::tuple<ClassId, double, double, double, double>> seen;
  for (const auto& element : *array) {
    if (!element.is_object()) {
      ++out.malformed;
      continue;
    }
    const auto coords = read_box(element);
    if (!coords || !element.contains("label") || !element.at("label").is_string()) {
      ++out.malformed;
      continue;
    }
    const std::string label = normalize_label(element.at("label").get<std::string>());
    const auto cls = std::find_if(classes.begin(), classes.end(), [&](const ClassSpec& c) {
      return normalize_label(c.name) == label;
    });
    if (cls == classes.end()) {
      ++out.unknown_labels;
      continue;
    }

    BoundingBox box = BoundingBox::from_array(*coords, expected_space.order);
    if (!expected_space.is_pixel()) {
      box = convert(box, CoordinateSpace::per_mille(), pixel);
    }
    box = box.normalized().clamped(image.width, image.height);

    if (!seen.emplace(cls->id, box.x1, box.y1, box.x2, box.y2).second) {
      ++out.duplicates;
      continue;
    }
    std::optional<double> score;
    if (element.contains("score") && element.at("score").is_number()) {
      score = element.at("score").get<double>();
      if (!std::isfinite(*score)) score.reset();
    }
    raw.push_back({image.id, cls->id, box, score});
  }
  if (raw.size() > kMaxDetectionsPerResponse) {
    out.truncated = raw.size() - kMaxDetectionsPerResponse;
    raw.resize(kMaxDetectionsPerResponse);
  }
  out.detections = apply_score_defaults(raw);
  return out;
}

std::string serialize_detections(std::span<const Detection> detections,
                                 const CoordinateSpace& space, const ImageRecord& image,
                                 std::span<const ClassSpec> classes) {
  const CoordinateSpace pixel = image.pixel_space();
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const auto& det : detections) {
    const BoundingBox box = space.is_pixel() ? det.box : convert(det.box, pixel, space);
    nlohmann::ordered_json entry;
    entry["bbox_2d"] = box_to_json(box, space);
    entry["label"] = classes[static_cast<std::size_t>(det.class_id)].name;
    entry["score"] = det.score;
    out.push_back(entry);
  }
  return out.dump();
}

}  // namespace detpo
