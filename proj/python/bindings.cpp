#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <pybind11/pybind11.h>
#include <pybind11/operators.h>
#include <pybind11/stl.h>

#include "detpo/annotate.hpp"
#include "detpo/calibrate.hpp"
#include "detpo/dataset.hpp"
#include "detpo/detection_parser.hpp"
#include "detpo/error.hpp"
#include "detpo/error_mining.hpp"
#include "detpo/eval.hpp"
#include "detpo/geometry.hpp"
#include "detpo/prompts.hpp"

namespace py = pybind11;
using namespace detpo;

namespace {

// Split holding every image id that appears in either list, sized to cover
// its boxes.
DatasetSplit make_split(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
                        int num_classes) {
  std::map<ImageId, ImageRecord> by_id;
  auto cover = [&](ImageId id, const BoundingBox& box) {
    ImageRecord& rec = by_id[id];
    rec.id = id;
    rec.width = std::max({rec.width, 1, static_cast<int>(std::ceil(box.x2))});
    rec.height = std::max({rec.height, 1, static_cast<int>(std::ceil(box.y2))});
  };
  for (const auto& d : dets) cover(d.image_id, d.box);
  for (const auto& g : gts) cover(g.image_id, g.box);
  std::vector<ImageRecord> images;
  for (auto& [id, rec] : by_id) images.push_back(rec);
  return DatasetSplit(SplitRole::kTest, std::move(images), gts, num_classes);
}

std::vector<ClassSpec> class_table(const std::vector<std::string>& names) {
  std::vector<ClassSpec> out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    ClassSpec c;
    c.id = static_cast<ClassId>(i);
    c.coco_id = static_cast<std::int64_t>(i) + 1;
    c.name = names[i];
    out.push_back(c);
  }
  return out;
}

const TemplateRegistry& templates() {
  static const TemplateRegistry registry = TemplateRegistry::load_default();
  return registry;
}

}  // namespace

PYBIND11_MODULE(_detpo, m) {
  m.doc() = "Detection prompt optimization core";

  py::register_exception<Error>(m, "Error");
  py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_ValueError);
  py::register_exception<TemplateError>(m, "TemplateError");
  py::register_exception<ImageError>(m, "ImageError");

  py::enum_<CornerOrder>(m, "CornerOrder")
      .value("XYXY", CornerOrder::kXyxy)
      .value("YXYX", CornerOrder::kYxyx);

  py::class_<CoordinateSpace>(m, "CoordinateSpace")
      .def_static("pixel", &CoordinateSpace::pixel, py::arg("width"), py::arg("height"),
                  py::arg("order") = CornerOrder::kXyxy)
      .def_static("per_mille", &CoordinateSpace::per_mille, py::arg("order") = CornerOrder::kXyxy)
      .def_property_readonly("is_pixel", &CoordinateSpace::is_pixel)
      .def_readonly("width", &CoordinateSpace::width)
      .def_readonly("height", &CoordinateSpace::height)
      .def_readonly("order", &CoordinateSpace::order);

  py::class_<BoundingBox>(m, "BoundingBox")
      .def(py::init([](double x1, double y1, double x2, double y2) {
             return BoundingBox{x1, y1, x2, y2};
           }),
           py::arg("x1"), py::arg("y1"), py::arg("x2"), py::arg("y2"))
      .def_static("from_xywh", &BoundingBox::from_xywh)
      .def_readwrite("x1", &BoundingBox::x1)
      .def_readwrite("y1", &BoundingBox::y1)
      .def_readwrite("x2", &BoundingBox::x2)
      .def_readwrite("y2", &BoundingBox::y2)
      .def_property_readonly("area", &BoundingBox::area)
      .def("to_tuple", [](const BoundingBox& b) { return py::make_tuple(b.x1, b.y1, b.x2, b.y2); })
      .def(py::self == py::self)
      .def("__repr__", [](const BoundingBox& b) { return "BoundingBox" + to_string(b); });

  m.def("iou", py::overload_cast<const BoundingBox&, const BoundingBox&>(&iou));
  m.def("convert", &convert, py::arg("box"), py::arg("source"), py::arg("target"));

  py::class_<Detection>(m, "Detection")
      .def(py::init([](ImageId image_id, ClassId class_id, BoundingBox box, double score) {
             return Detection{image_id, class_id, box, score};
           }),
           py::arg("image_id"), py::arg("class_id"), py::arg("box"), py::arg("score") = 1.0)
      .def_readwrite("image_id", &Detection::image_id)
      .def_readwrite("class_id", &Detection::class_id)
      .def_readwrite("box", &Detection::box)
      .def_readwrite("score", &Detection::score);

  py::class_<GroundTruthBox>(m, "GroundTruthBox")
      .def(py::init([](ImageId image_id, ClassId class_id, BoundingBox box) {
             GroundTruthBox g;
             g.image_id = image_id;
             g.class_id = class_id;
             g.box = box;
             return g;
           }),
           py::arg("image_id"), py::arg("class_id"), py::arg("box"))
      .def_readwrite("image_id", &GroundTruthBox::image_id)
      .def_readwrite("class_id", &GroundTruthBox::class_id)
      .def_readwrite("box", &GroundTruthBox::box);

  m.def(
      "greedy_match",
      [](const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts, double thr) {
        const MatchResult r = greedy_match(dets, gts, thr);
        std::vector<std::tuple<std::size_t, std::size_t, double>> pairs;
        for (const auto& p : r.pairs) pairs.emplace_back(p.detection, p.ground_truth, p.iou);
        return py::make_tuple(pairs, r.unmatched_detections, r.unmatched_ground_truths);
      },
      py::arg("detections"), py::arg("ground_truth"), py::arg("iou_threshold") = 0.5,
      "Returns (pairs, unmatched detections, unmatched ground truth).");

  m.def(
      "average_precision",
      [](const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts, ClassId c,
         double thr) { return average_precision(dets, gts, c, thr); },
      py::arg("detections"), py::arg("ground_truth"), py::arg("class_id"),
      py::arg("iou_threshold"));

  m.def(
      "coco_map",
      [](const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
         int num_classes) {
        const EvalResult r = coco_map(dets, make_split(dets, gts, num_classes));
        py::dict out;
        out["map"] = r.map;
        out["map50"] = r.map50;
        py::list per_class;
        for (const auto& c : r.per_class) per_class.append(c.ap);
        out["per_class_ap"] = per_class;
        return out;
      },
      py::arg("detections"), py::arg("ground_truth"), py::arg("num_classes"));

  m.def(
      "per_image_f1",
      [](const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts, double thr) {
        const PrecisionRecall pr = per_image_f1(dets, gts, thr);
        return py::make_tuple(pr.precision, pr.recall, pr.f1);
      },
      py::arg("detections"), py::arg("ground_truth"), py::arg("iou_threshold") = 0.5);

  m.def(
      "fp_severity",
      [](double score, const BoundingBox& box, const std::vector<BoundingBox>& others) {
        return fp_severity(score, box, others);
      },
      py::arg("score"), py::arg("box"), py::arg("other_class_ground_truth"));
  m.def(
      "fn_severity",
      [](const BoundingBox& gt, const std::vector<Detection>& dets) {
        const FnSeverity s = fn_severity(gt, dets);
        return py::make_tuple(s.epsilon, s.sigma);
      },
      py::arg("ground_truth"), py::arg("detections"), "Returns (epsilon, sigma).");

  m.def(
      "parse_detections",
      [](const std::string& text, const CoordinateSpace& space, ImageId image_id, int width,
         int height, const std::vector<std::string>& class_names) {
        ImageRecord image;
        image.id = image_id;
        image.width = width;
        image.height = height;
        const ParsedDetections p = parse_detections(text, space, image, class_table(class_names));
        return py::make_tuple(p.detections, p.parse_failed);
      },
      py::arg("text"), py::arg("space"), py::arg("image_id"), py::arg("width"), py::arg("height"),
      py::arg("class_names"), "Returns (detections, parse_failed).");

  m.def(
      "draw_boxes",
      [](const py::bytes& encoded, const std::vector<std::pair<BoundingBox, std::string>>& boxes,
         const std::string& format) {
        const std::string data = encoded;
        std::vector<AnnotatedBox> annotated;
        for (const auto& [box, color] : boxes) {
          BoxColor c = BoxColor::kGreen;
          if (color == "red") c = BoxColor::kRed;
          else if (color == "blue") c = BoxColor::kBlue;
          else if (color != "green") throw ContractViolation("unknown colour " + color);
          annotated.push_back({box, c});
        }
        EncodeOptions options;
        options.format = format == "png" ? ImageFormat::kPng : ImageFormat::kJpeg;
        const std::vector<std::uint8_t> bytes(data.begin(), data.end());
        const auto out = draw_boxes(bytes, annotated, options);
        return py::bytes(reinterpret_cast<const char*>(out.data()), out.size());
      },
      py::arg("encoded"), py::arg("boxes"), py::arg("format") = "png");
  m.def("stroke_width", &stroke_width, py::arg("width"), py::arg("height"));

  m.def(
      "extract_definition",
      [](const std::string& text, const std::string& class_name) {
        const ExtractedDefinition d = extract_definition(text, class_name);
        return py::make_tuple(d.text, std::string(to_string(d.quality)));
      },
      py::arg("text"), py::arg("class_name"), "Returns (definition, quality).");
  m.def(
      "render_template",
      [](const std::string& name, const std::map<std::string, std::string>& slots) {
        return templates().render(template_id_from_string(name), slots);
      },
      py::arg("name"), py::arg("slots") = std::map<std::string, std::string>{});

  m.def(
      "vqa_score",
      [](double p_yes, double p_no) { return vqa_score(YesNoProbability{p_yes, p_no}); },
      py::arg("p_yes"), py::arg("p_no"));
}
