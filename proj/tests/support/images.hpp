#pragma once

// In-memory PNG fixtures.

#include <cstdint>
#include <memory>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "detpo/dataset.hpp"

namespace images {

// Gray gradient that never contains pure red, green or blue.
inline cv::Mat gradient(int width, int height) {
  cv::Mat img(height, width, CV_8UC3);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const auto v = static_cast<std::uint8_t>(40 + (x * 3 + y * 5) % 160);
      img.at<cv::Vec3b>(y, x) = {v, static_cast<std::uint8_t>(v + 10), static_cast<std::uint8_t>(v + 20)};
    }
  }
  return img;
}

inline std::vector<std::uint8_t> png(const cv::Mat& img) {
  std::vector<std::uint8_t> out;
  cv::imencode(".png", img, out);
  return out;
}

inline cv::Mat decode(const std::vector<std::uint8_t>& bytes) {
  return cv::imdecode(cv::Mat(1, static_cast<int>(bytes.size()), CV_8UC1,
                              const_cast<std::uint8_t*>(bytes.data())),
                      cv::IMREAD_COLOR);
}

inline detpo::ImageRecord record(detpo::ImageId id, int width, int height) {
  detpo::ImageRecord rec;
  rec.id = id;
  rec.width = width;
  rec.height = height;
  rec.bytes = std::make_shared<const std::vector<std::uint8_t>>(png(gradient(width, height)));
  return rec;
}

}  // namespace images
