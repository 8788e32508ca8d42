#include "detpo/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "detpo/error.hpp"

namespace detpo {

CoordinateSpace CoordinateSpace::pixel(double width, double height, CornerOrder order) {
  CoordinateSpace space{Kind::kPixel, width, height, order};
  space.validate();
  return space;
}

CoordinateSpace CoordinateSpace::per_mille(CornerOrder order) {
  return CoordinateSpace{Kind::kPerMille, 1000.0, 1000.0, order};
}

void CoordinateSpace::validate() const {
  if (kind == Kind::kPixel && (!(width > 0.0) || !(height > 0.0))) {
    std::ostringstream msg;
    msg << "pixel space needs positive dimensions, got " << width << "x" << height;
    throw ContractViolation(msg.str());
  }
}

double BoundingBox::area() const {
  return std::max(0.0, x2 - x1) * std::max(0.0, y2 - y1);
}

BoundingBox BoundingBox::from_xywh(double x, double y, double w, double h) {
  return BoundingBox{x, y, x + w, y + h};
}

BoundingBox BoundingBox::from_array(const std::array<double, 4>& v, CornerOrder order) {
  if (order == CornerOrder::kYxyx) {
    return BoundingBox{v[1], v[0], v[3], v[2]};
  }
  return BoundingBox{v[0], v[1], v[2], v[3]};
}

std::array<double, 4> BoundingBox::to_array(CornerOrder order) const {
  if (order == CornerOrder::kYxyx) {
    return {y1, x1, y2, x2};
  }
  return {x1, y1, x2, y2};
}

BoundingBox BoundingBox::normalized() const {
  return BoundingBox{std::min(x1, x2), std::min(y1, y2), std::max(x1, x2), std::max(y1, y2)};
}

BoundingBox BoundingBox::clamped(double width, double height) const {
  auto clamp = [](double v, double hi) { return std::clamp(v, 0.0, hi); };
  return BoundingBox{clamp(x1, width), clamp(y1, height), clamp(x2, width), clamp(y2, height)};
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  if (!(uni > 0.0)) {
    return 0.0;
  }
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou(const BoundingBox& a, const CoordinateSpace& space_a, const BoundingBox& b,
           const CoordinateSpace& space_b) {
  if (space_a.kind != space_b.kind || space_a.width != space_b.width ||
      space_a.height != space_b.height) {
    throw ContractViolation("iou: boxes are in different coordinate spaces");
  }
  return iou(a, b);
}

BoundingBox convert(const BoundingBox& box, const CoordinateSpace& from,
                    const CoordinateSpace& to) {
  from.validate();
  to.validate();
  const double sx = to.width / from.width;
  const double sy = to.height / from.height;
  return BoundingBox{box.x1 * sx, box.y1 * sy, box.x2 * sx, box.y2 * sy};
}

nlohmann::json box_to_json(const BoundingBox& box, const CoordinateSpace& space) {
  auto values = box.to_array(space.order);
  nlohmann::json out = nlohmann::json::array();
  for (double v : values) {
    if (space.is_pixel()) {
      out.push_back(std::round(v * 10.0) / 10.0);
    } else {
      out.push_back(static_cast<long long>(std::llround(v)));
    }
  }
  return out;
}

BoundingBox box_from_json(const nlohmann::json& value, CornerOrder order) {
  if (!value.is_array() || value.size() != 4) {
    throw ContractViolation("box must be a 4-element array");
  }
  std::array<double, 4> v{};
  for (std::size_t i = 0; i < 4; ++i) {
    if (!value[i].is_number()) {
      throw ContractViolation("box coordinates must be numbers");
    }
    v[i] = value[i].get<double>();
  }
  return BoundingBox::from_array(v, order);
}

std::string to_string(const BoundingBox& box) {
  std::ostringstream out;
  out << "[" << box.x1 << ", " << box.y1 << ", " << box.x2 << ", " << box.y2 << "]";
  return out.str();
}

}  // namespace detpo
