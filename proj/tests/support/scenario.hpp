#pragma once

// Scripted stand-in for a detector model. Routes each request by its
// template wording and answers from per-class tables.

#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <regex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "detpo/backend.hpp"
#include "detpo/dataset.hpp"
#include "detpo/eval.hpp"
#include "detpo/mock_backend.hpp"

namespace scenario {

using detpo::BoundingBox;
using detpo::ClassId;
using detpo::ImageId;

inline detpo::ImageRecord image(ImageId id, int width = 100, int height = 100) {
  detpo::ImageRecord rec;
  rec.id = id;
  rec.path = "img" + std::to_string(id) + ".png";
  rec.width = width;
  rec.height = height;
  return rec;
}

inline detpo::GroundTruthBox gt(ImageId image_id, ClassId c, BoundingBox box,
                                std::int64_t annotation_id = 0) {
  detpo::GroundTruthBox g;
  g.annotation_id = annotation_id;
  g.image_id = image_id;
  g.class_id = c;
  g.box = box;
  return g;
}

inline detpo::Detection det(ImageId image_id, ClassId c, BoundingBox box, double score = 1.0) {
  detpo::Detection d;
  d.image_id = image_id;
  d.class_id = c;
  d.box = box;
  d.score = score;
  return d;
}

inline std::vector<detpo::ClassSpec> classes(const std::vector<std::string>& names) {
  std::vector<detpo::ClassSpec> out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    detpo::ClassSpec spec;
    spec.id = static_cast<ClassId>(i);
    spec.coco_id = static_cast<std::int64_t>(i) + 1;
    spec.name = names[i];
    out.push_back(spec);
  }
  return out;
}

struct Box {
  BoundingBox box;
  double score = 1.0;
};

enum class Step { kSummarize, kRefine, kAlternative, kDetect, kVqa, kOther };

inline Step classify(const std::string& text) {
  if (text.find("consistently observed") != std::string::npos) return Step::kSummarize;
  if (text.find("Step-1.") != std::string::npos) return Step::kRefine;
  if (text.find("Refine the class definition") != std::string::npos) return Step::kAlternative;
  if (text.find("Identify and localize all instances of") != std::string::npos) return Step::kDetect;
  if (text.find("Please answer Yes or No") != std::string::npos) return Step::kVqa;
  return Step::kOther;
}

inline std::string capture(const std::string& text, const std::regex& re) {
  std::smatch m;
  return std::regex_search(text, m, re) ? m[1].str() : std::string();
}

/// Model behaviour keyed on class and current definition. Refinement answers
/// come from `refinements[class]` in call order; once exhausted they are
/// "<class> refined <n>".
struct Model {
  std::map<std::string, std::string> summaries;
  std::map<std::string, std::vector<std::string>> refinements;
  std::map<std::string, std::string> alternatives;
  // Boxes the model reports for (class, definition, image).
  std::function<std::vector<Box>(const std::string&, const std::string&, ImageId)> detect;
  // p_yes for a (class, red box, image) query.
  std::function<double(const std::string&, const BoundingBox&, ImageId)> vqa;

  std::map<std::string, int> refine_calls;

  std::optional<detpo::MockReply> reply(const detpo::ChatRequest& request) {
    const std::string text = request.joined_text();
    detpo::MockReply out;
    switch (classify(text)) {
      case Step::kSummarize: {
        const std::string cls = capture(text, std::regex("Class name: ([^\\n]+)"));
        auto it = summaries.find(cls);
        out.text = it != summaries.end() ? it->second : cls + " summary";
        return out;
      }
      case Step::kRefine: {
        const std::string cls = capture(text, std::regex("of the '([^']+)' class"));
        const int n = refine_calls[cls]++;
        const auto& seq = refinements[cls];
        const std::string def = static_cast<std::size_t>(n) < seq.size()
                                    ? seq[static_cast<std::size_t>(n)]
                                    : cls + " refined " + std::to_string(n);
        out.text = "Step-1 notes.\n```python {'" + cls + "': '" + def + "'}```";
        return out;
      }
      case Step::kAlternative: {
        const std::string cls = capture(text, std::regex("for the '([^']+)' category"));
        auto it = alternatives.find(cls);
        const std::string def = it != alternatives.end() ? it->second : cls + " alternative";
        out.text = "```python {'" + cls + "': '" + def + "'}```";
        return out;
      }
      case Step::kDetect: {
        const std::string cls = capture(text, std::regex("all instances of '([^']+)'"));
        const std::string def = capture(
            text, std::regex("detection accuracy:\\n\\n([\\s\\S]*?)\\n\\nReturn a JSON list"));
        nlohmann::json arr = nlohmann::json::array();
        for (ImageId id : request.image_ids()) {
          for (const auto& b : detect ? detect(cls, def, id) : std::vector<Box>{}) {
            arr.push_back({{"bbox_2d", {b.box.x1, b.box.y1, b.box.x2, b.box.y2}},
                           {"label", cls},
                           {"score", b.score}});
          }
        }
        out.text = "```json\n" + arr.dump() + "\n```";
        return out;
      }
      case Step::kVqa: {
        const std::string cls = capture(text, std::regex("Given the '([^']+)' class"));
        BoundingBox box;
        ImageId id = 0;
        for (const auto& part : request.parts) {
          if (const auto* img = std::get_if<detpo::ImagePart>(&part)) {
            id = img->image.id;
            if (!img->boxes.empty()) box = img->boxes.front().box;
          }
        }
        const double p = vqa ? vqa(cls, box, id) : 0.5;
        out.text = p >= 0.5 ? "Yes" : "No";
        out.logprobs = std::vector<detpo::TokenLogprob>{{"Yes", std::log(p)},
                                                         {"No", std::log(1.0 - p)}};
        return out;
      }
      case Step::kOther:
        break;
    }
    return std::nullopt;
  }
};

struct MockRig {
  std::shared_ptr<Model> model = std::make_shared<Model>();
  std::shared_ptr<detpo::MockTransport> transport;
  std::unique_ptr<detpo::Backend> backend;

  explicit MockRig(detpo::BackendDescriptor descriptor = {}) {
    detpo::MockScript script;
    auto m = model;
    script.handler = [m](const detpo::ChatRequest& r) { return m->reply(r); };
    transport = std::make_shared<detpo::MockTransport>(std::move(script));
    descriptor.retry.initial_backoff = std::chrono::milliseconds{0};
    backend = std::make_unique<detpo::Backend>(descriptor, transport,
                                               [](std::chrono::milliseconds) {});
  }

  std::size_t count(Step step) const {
    std::size_t n = 0;
    for (const auto& c : transport->calls()) n += classify(c.text) == step;
    return n;
  }

  std::size_t count_containing(const std::string& needle) const {
    std::size_t n = 0;
    for (const auto& c : transport->calls()) n += c.text.find(needle) != std::string::npos;
    return n;
  }
};

// Unique scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;

  TempDir() {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() /
           ("detpo-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace scenario
