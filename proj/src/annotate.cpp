#include "detpo/annotate.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "detpo/error.hpp"

namespace detpo {

namespace {

cv::Vec3b bgr(BoxColor color) {
  switch (color) {
    case BoxColor::kGreen:
      return {0, 255, 0};
    case BoxColor::kRed:
      return {0, 0, 255};
    case BoxColor::kBlue:
      return {255, 0, 0};
  }
  return {0, 255, 0};
}

void draw_outline(cv::Mat& image, const BoundingBox& box, BoxColor color, int stroke) {
  const BoundingBox b = box.normalized();
  const int left = std::max(0, static_cast<int>(std::floor(b.x1)));
  const int top = std::max(0, static_cast<int>(std::floor(b.y1)));
  const int right = std::min(image.cols, static_cast<int>(std::ceil(b.x2)));
  const int bottom = std::min(image.rows, static_cast<int>(std::ceil(b.y2)));
  if (left >= right || top >= bottom) {
    return;
  }
  const cv::Vec3b value = bgr(color);
  for (int y = top; y < bottom; ++y) {
    auto* row = image.ptr<cv::Vec3b>(y);
    const bool band_row = (y - top) < stroke || (bottom - 1 - y) < stroke;
    for (int x = left; x < right; ++x) {
      if (band_row || (x - left) < stroke || (right - 1 - x) < stroke) {
        row[x] = value;
      }
    }
  }
}

}  // namespace

const char* to_string(BoxColor color) {
  switch (color) {
    case BoxColor::kGreen:
      return "green";
    case BoxColor::kRed:
      return "red";
    case BoxColor::kBlue:
      return "blue";
  }
  return "green";
}

int stroke_width(int width, int height) {
  const int longest = std::max(width, height);
  return std::max(2, static_cast<int>(std::lround(0.004 * longest)));
}

const char* mime_type(ImageFormat format) {
  return format == ImageFormat::kPng ? "image/png" : "image/jpeg";
}

std::vector<std::uint8_t> draw_boxes(std::span<const std::uint8_t> encoded,
                                     std::span<const AnnotatedBox> boxes,
                                     const EncodeOptions& options) {
  if (encoded.empty()) {
    throw ImageError("empty image payload");
  }
  const cv::Mat raw(1, static_cast<int>(encoded.size()), CV_8UC1,
                    const_cast<std::uint8_t*>(encoded.data()));
  cv::Mat image = cv::imdecode(raw, cv::IMREAD_COLOR);
  if (image.empty()) {
    throw ImageError("cannot decode image payload");
  }

  const int stroke = stroke_width(image.cols, image.rows);
  for (const auto& annotated : boxes) {
    draw_outline(image, annotated.box, annotated.color, stroke);
  }

  if (options.max_side > 0 && std::max(image.cols, image.rows) > options.max_side) {
    const double scale =
        static_cast<double>(options.max_side) / std::max(image.cols, image.rows);
    cv::Mat resized;
    cv::resize(image, resized,
               cv::Size(std::max(1, static_cast<int>(std::lround(image.cols * scale))),
                        std::max(1, static_cast<int>(std::lround(image.rows * scale)))),
               0, 0, cv::INTER_AREA);
    image = resized;
  }

  std::vector<std::uint8_t> out;
  std::vector<int> params;
  const char* ext = ".png";
  if (options.format == ImageFormat::kJpeg) {
    ext = ".jpg";
    params = {cv::IMWRITE_JPEG_QUALITY, options.jpeg_quality};
  }
  if (!cv::imencode(ext, image, out, params)) {
    throw ImageError("cannot encode annotated image");
  }
  return out;
}

}  // namespace detpo
