#include <sstream>

#include <gtest/gtest.h>

#include "detpo/detection_parser.hpp"
#include "detpo/detections_io.hpp"
#include "detpo/error.hpp"
#include "scenario.hpp"

using namespace detpo;

namespace {

const auto kClasses = scenario::classes({"dog", "cat"});
const auto kImage = scenario::image(5, 200, 100);
const auto kPixel = CoordinateSpace::pixel(200, 100);

ParsedDetections parse(const std::string& text, const CoordinateSpace& space = kPixel) {
  return parse_detections(text, space, kImage, kClasses);
}

}  // namespace

TEST(Parser, SingleDetection) {
  const auto p = parse(R"([{"bbox_2d":[1,2,3,4],"label":"dog","score":0.9}])");
  ASSERT_EQ(p.detections.size(), 1u);
  EXPECT_FALSE(p.parse_failed);
  const auto& d = p.detections[0];
  EXPECT_EQ(d.image_id, 5);
  EXPECT_EQ(d.class_id, 0);
  EXPECT_EQ(d.score, 0.9);
  EXPECT_EQ(d.box.x1, 1);
  EXPECT_EQ(d.box.y2, 4);
}

TEST(Parser, FenceAndProseTolerated) {
  const std::string bare = R"([{"bbox_2d":[10,20,30,40],"label":"cat"}])";
  const auto a = parse(bare);
  const auto b = parse("Here you go:\n```json\n" + bare + "\n```\nThese are all the cats.");
  ASSERT_EQ(a.detections.size(), 1u);
  ASSERT_EQ(b.detections.size(), 1u);
  EXPECT_EQ(a.detections[0].box.x1, b.detections[0].box.x1);
  EXPECT_EQ(a.detections[0].box.y2, b.detections[0].box.y2);
  EXPECT_EQ(b.detections[0].score, 1.0);
}

TEST(Parser, PerMilleAndSwappedCorners) {
  const auto p = parse(R"([{"bbox_2d":[100,500,600,900],"label":"dog"}])",
                       CoordinateSpace::per_mille(CornerOrder::kYxyx));
  ASSERT_EQ(p.detections.size(), 1u);
  const auto& b = p.detections[0].box;
  EXPECT_DOUBLE_EQ(b.x1, 100.0);
  EXPECT_DOUBLE_EQ(b.y1, 10.0);
  EXPECT_DOUBLE_EQ(b.x2, 180.0);
  EXPECT_DOUBLE_EQ(b.y2, 60.0);
}

TEST(Parser, CornersNormalizedAndClamped) {
  const auto p = parse(R"([{"bbox_2d":[250,80,-10,20],"label":"dog"}])");
  ASSERT_EQ(p.detections.size(), 1u);
  const auto& b = p.detections[0].box;
  EXPECT_EQ(b.x1, 0);
  EXPECT_EQ(b.y1, 20);
  EXPECT_EQ(b.x2, 200);
  EXPECT_EQ(b.y2, 80);
}

TEST(Parser, TruncatedArrayKeepsCompleteElements) {
  const auto p = parse(
      R"([{"bbox_2d":[1,1,5,5],"label":"dog"},{"bbox_2d":[2,2,6,6],"label":"cat"},{"bbox_2d":[3,3,)");
  EXPECT_EQ(p.detections.size(), 2u);
  EXPECT_FALSE(p.parse_failed);
}

TEST(Parser, UnknownLabelsAndMalformedAreCounted) {
  const auto p = parse(R"([
    {"bbox_2d":[1,1,5,5],"label":" DOG "},
    {"bbox_2d":[1,1,5,5],"label":"wolf"},
    {"bbox_2d":[1,1,5],"label":"dog"},
    {"label":"cat"},
    "junk"
  ])");
  ASSERT_EQ(p.detections.size(), 1u);
  EXPECT_EQ(p.detections[0].class_id, 0);
  EXPECT_EQ(p.unknown_labels, 1u);
  EXPECT_EQ(p.malformed, 3u);
}

TEST(Parser, DuplicatesDropped) {
  const auto p = parse(R"([{"bbox_2d":[1,1,5,5],"label":"dog"},{"bbox_2d":[1,1,5,5],"label":"dog"},
                           {"bbox_2d":[1,1,5,5],"label":"cat"}])");
  EXPECT_EQ(p.detections.size(), 2u);
  EXPECT_EQ(p.duplicates, 1u);
}

TEST(Parser, CappedAtTwenty) {
  nlohmann::json arr = nlohmann::json::array();
  for (int i = 0; i < 30; ++i) arr.push_back({{"bbox_2d", {i, 0, i + 10, 10}}, {"label", "dog"}});
  const auto p = parse(arr.dump());
  ASSERT_EQ(p.detections.size(), kMaxDetectionsPerResponse);
  EXPECT_EQ(p.detections.front().box.x1, 0);
  EXPECT_EQ(p.detections.back().box.x1, 19);
  EXPECT_EQ(p.truncated, 10u);
}

TEST(Parser, NoArrayIsAFlaggedFailure) {
  for (const char* text : {"", "I see no dogs.", "{\"bbox_2d\": [1,2,3,4]}", "[{\"bbox_2d\":"}) {
    const auto p = parse(text);
    EXPECT_TRUE(p.detections.empty()) << text;
  }
  EXPECT_TRUE(parse("I see no dogs.").parse_failed);
  const auto empty = parse("[]");
  EXPECT_FALSE(empty.parse_failed);
  EXPECT_TRUE(empty.detections.empty());
}

TEST(Parser, SerializeRoundTrip) {
  const std::vector<Detection> dets{scenario::det(5, 0, {10, 20, 60, 70}, 0.25),
                                    scenario::det(5, 1, {0, 0, 200, 100}, 1.0)};
  for (const auto& space : {kPixel, CoordinateSpace::per_mille(CornerOrder::kYxyx)}) {
    const auto p = parse(serialize_detections(dets, space, kImage, kClasses), space);
    ASSERT_EQ(p.detections.size(), dets.size());
    for (std::size_t i = 0; i < dets.size(); ++i) {
      EXPECT_EQ(p.detections[i].class_id, dets[i].class_id);
      EXPECT_EQ(p.detections[i].score, dets[i].score);
      EXPECT_NEAR(p.detections[i].box.x1, dets[i].box.x1, 1e-9);
      EXPECT_NEAR(p.detections[i].box.y1, dets[i].box.y1, 1e-9);
      EXPECT_NEAR(p.detections[i].box.x2, dets[i].box.x2, 1e-9);
      EXPECT_NEAR(p.detections[i].box.y2, dets[i].box.y2, 1e-9);
    }
  }
}

TEST(DetectionsIo, RoundTripAndErrors) {
  LoadedDataset ds;
  ds.classes = kClasses;
  ds.split = DatasetSplit(SplitRole::kTest, {kImage}, {}, 2);
  const std::vector<Detection> dets{scenario::det(5, 1, {1.5, 2, 3, 4}, 0.125)};
  std::stringstream buf;
  write_detections(buf, dets, kClasses);
  EXPECT_NE(buf.str().find("\"category_id\":2"), std::string::npos);
  std::stringstream in(buf.str() + "\n");
  const auto back = read_detections(in, ds);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].class_id, 1);
  EXPECT_EQ(back[0].box.x1, 1.5);
  EXPECT_EQ(back[0].score, 0.125);

  std::stringstream bad_cat(R"({"image_id":5,"category_id":9,"bbox":[1,2,3,4],"score":1})");
  EXPECT_THROW(read_detections(bad_cat, ds), DatasetError);
  std::stringstream bad_line("not json\n");
  EXPECT_THROW(read_detections(bad_line, ds), DatasetError);
}
