#pragma once

#include <array>
#include <string>

#include <nlohmann/json.hpp>

namespace detpo {

enum class CornerOrder { kXyxy, kYxyx };

/// The coordinate frame a box is expressed in.
///
/// Pixel spaces carry the image size they refer to. Per-mille spaces are
/// normalized to [0, 1000] on both axes regardless of image size. The corner
/// order only affects how a box is laid out as a 4-element array.
struct CoordinateSpace {
  enum class Kind { kPixel, kPerMille };

  Kind kind = Kind::kPixel;
  double width = 0.0;
  double height = 0.0;
  CornerOrder order = CornerOrder::kXyxy;

  static CoordinateSpace pixel(double width, double height,
                               CornerOrder order = CornerOrder::kXyxy);
  static CoordinateSpace per_mille(CornerOrder order = CornerOrder::kXyxy);

  bool is_pixel() const { return kind == Kind::kPixel; }

  // Throws ContractViolation for non-positive pixel dimensions.
  void validate() const;

  friend bool operator==(const CoordinateSpace&, const CoordinateSpace&) = default;
};

/// Axis-aligned box; (x1, y1) is the top-left corner and (x2, y2) the
/// bottom-right one, independent of the serialized corner order.
struct BoundingBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const;

  static BoundingBox from_xywh(double x, double y, double w, double h);

  // Reads a 4-element array laid out in `order`.
  static BoundingBox from_array(const std::array<double, 4>& values, CornerOrder order);
  std::array<double, 4> to_array(CornerOrder order) const;

  // Swaps corners so that x2 >= x1 and y2 >= y1.
  BoundingBox normalized() const;
  BoundingBox clamped(double width, double height) const;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
  friend auto operator<=>(const BoundingBox&, const BoundingBox&) = default;
};

// Intersection over union. Returns 0 when the union is empty.
double iou(const BoundingBox& a, const BoundingBox& b);

// Same as above but checks that both boxes live in the same space.
double iou(const BoundingBox& a, const CoordinateSpace& space_a, const BoundingBox& b,
           const CoordinateSpace& space_b);

// Linear rescale between spaces. Corner order is a layout concern and is
// handled by from_array/to_array.
BoundingBox convert(const BoundingBox& box, const CoordinateSpace& from,
                    const CoordinateSpace& to);

// 4-element JSON array in the space's corner order. Per-mille values are
// written as integers, pixel values with one decimal.
nlohmann::json box_to_json(const BoundingBox& box, const CoordinateSpace& space);
BoundingBox box_from_json(const nlohmann::json& value, CornerOrder order);

std::string to_string(const BoundingBox& box);

}  // namespace detpo
