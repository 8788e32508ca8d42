#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "detpo/geometry.hpp"

namespace detpo {

enum class BoxColor { kGreen, kRed, kBlue };

const char* to_string(BoxColor color);

struct AnnotatedBox {
  BoundingBox box;  // pixel space
  BoxColor color = BoxColor::kGreen;
};

enum class ImageFormat { kJpeg, kPng };

struct EncodeOptions {
  ImageFormat format = ImageFormat::kJpeg;
  int jpeg_quality = 90;
  int max_side = 1536;  // 0 disables downscaling
};

// max(2, round(0.004 * longest side)).
int stroke_width(int width, int height);

/// Decodes `encoded`, draws rectangle outlines in pure RGB colors and
/// re-encodes. Each stroke lies inside the box; everything outside the
/// stroke bands keeps its pixels. Throws ImageError on undecodable input.
std::vector<std::uint8_t> draw_boxes(std::span<const std::uint8_t> encoded,
                                     std::span<const AnnotatedBox> boxes,
                                     const EncodeOptions& options);

// MIME type matching the encoder output.
const char* mime_type(ImageFormat format);

}  // namespace detpo
