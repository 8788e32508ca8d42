#include <fstream>

#include <gtest/gtest.h>

#include "detpo/dataset.hpp"
#include "detpo/error.hpp"
#include "scenario.hpp"

using namespace detpo;

namespace {

nlohmann::json one_image_coco() {
  return nlohmann::json::parse(R"({
    "categories": [{"id": 3, "name": "dog"}],
    "images": [{"id": 1, "file_name": "a.jpg", "width": 100, "height": 80}],
    "annotations": [{"id": 9, "image_id": 1, "category_id": 3, "bbox": [10, 10, 20, 20]}]
  })");
}

DatasetSplit many_images(int n, int classes) {
  std::vector<ImageRecord> images;
  std::vector<GroundTruthBox> gts;
  for (int i = 1; i <= n; ++i) {
    images.push_back(scenario::image(i));
    gts.push_back(scenario::gt(i, (i - 1) % classes, {0, 0, 10, 10}, i));
  }
  return DatasetSplit(SplitRole::kTrain, images, gts, classes);
}

}  // namespace

TEST(LoadCoco, ConvertsXywhToCorners) {
  const auto ds = load_coco(one_image_coco(), "/data", SplitRole::kTrain);
  ASSERT_EQ(ds.classes.size(), 1u);
  EXPECT_EQ(ds.classes[0].name, "dog");
  EXPECT_EQ(ds.classes[0].coco_id, 3);
  ASSERT_EQ(ds.split.ground_truth().size(), 1u);
  EXPECT_EQ(ds.split.ground_truth()[0].box, (BoundingBox{10, 10, 30, 30}));
  EXPECT_EQ(ds.split.image(1).path, std::filesystem::path("/data/a.jpg"));
}

TEST(LoadCoco, UnknownCategoryNamesTheId) {
  auto coco = one_image_coco();
  coco["annotations"][0]["category_id"] = 42;
  try {
    load_coco(coco, "", SplitRole::kTrain);
    FAIL() << "expected DatasetError";
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("42"), std::string::npos);
  }
}

TEST(LoadCoco, RejectsMalformedInput) {
  auto coco = one_image_coco();
  coco["annotations"][0]["bbox"] = {1, 2, 3};
  EXPECT_THROW(load_coco(coco, "", SplitRole::kTrain), DatasetError);
  coco = one_image_coco();
  coco["annotations"][0]["image_id"] = 5;
  EXPECT_THROW(load_coco(coco, "", SplitRole::kTrain), DatasetError);
  EXPECT_THROW(load_coco(nlohmann::json::array(), "", SplitRole::kTrain), DatasetError);
}

TEST(LoadCoco, ClampsBoxesAndAppliesMetadata) {
  auto coco = one_image_coco();
  coco["annotations"][0]["bbox"] = {90, 70, 50, 50};
  ClassMetadata meta{"a domestic dog", "include puppies"};
  const auto ds = load_coco(coco, "", SplitRole::kTrain, {{"dog", meta}});
  EXPECT_EQ(ds.split.ground_truth()[0].box, (BoundingBox{90, 70, 100, 80}));
  EXPECT_EQ(ds.classes[0].seed_definition(), "a domestic dog\ninclude puppies");
}

TEST(LoadCoco, FixtureFiles) {
  const std::filesystem::path root = DETPO_TEST_DATA_DIR;
  const auto ds = load_coco_file(root / "tiny/train/_annotations.coco.json", root / "tiny/train",
                                 SplitRole::kTrain, root / "tiny/class_metadata.json");
  EXPECT_EQ(ds.classes.size(), 2u);
  EXPECT_EQ(ds.split.images().size(), 4u);
  EXPECT_EQ(ds.split.instance_count(0), 3u);
  EXPECT_EQ(ds.split.images_with_class(1), (std::vector<ImageId>{2, 3}));
  EXPECT_EQ(ds.find_class("dog"), std::optional<ClassId>(1));
  EXPECT_EQ(ds.classes[1].seed_definition(), "domestic dog");
  EXPECT_THROW(load_coco_file(root / "missing.json", root, SplitRole::kTrain), DatasetError);
}

TEST(ClassSpec, SeedFallsBackToName) {
  ClassSpec spec;
  spec.name = "forklift";
  EXPECT_EQ(spec.seed_definition(), "forklift");
}

TEST(Split, IndexesByImageAndClass) {
  const auto split = many_images(6, 2);
  EXPECT_EQ(split.ground_truth_for_class(0).size(), 3u);
  EXPECT_EQ(split.ground_truth_for_image(4).size(), 1u);
  EXPECT_TRUE(split.contains_image(6));
  EXPECT_FALSE(split.contains_image(7));
  const auto sub = split.restricted_to({2, 5});
  EXPECT_EQ(sub.images().size(), 2u);
  EXPECT_EQ(sub.ground_truth().size(), 2u);
}

TEST(KShot, FullSizeIsIdentity) {
  const auto split = many_images(10, 1);
  const auto sub = subsample_k_shot(split, 10, 0);
  EXPECT_EQ(sub.images().size(), 10u);
  EXPECT_EQ(sub.ground_truth().size(), 10u);
}

TEST(KShot, DeterministicForSeed) {
  const auto split = many_images(12, 2);
  auto ids = [](const DatasetSplit& s) {
    std::vector<ImageId> out;
    for (const auto& img : s.images()) out.push_back(img.id);
    return out;
  };
  EXPECT_EQ(ids(subsample_k_shot(split, 3, 0)), ids(subsample_k_shot(split, 3, 0)));
}

TEST(KShot, CapsEachClass) {
  const auto sub = subsample_k_shot(many_images(10, 1), 5, 1);
  EXPECT_EQ(sub.images_with_class(0).size(), 5u);
  EXPECT_THROW(subsample_k_shot(many_images(3, 1), 0, 1), ContractViolation);
}

TEST(KShot, DropsUnannotatedImages) {
  std::vector<ImageRecord> images{scenario::image(1), scenario::image(2)};
  std::vector<GroundTruthBox> gts{scenario::gt(1, 0, {0, 0, 5, 5})};
  const DatasetSplit split(SplitRole::kTrain, images, gts, 1);
  EXPECT_EQ(subsample_k_shot(split, 5, 0).images().size(), 1u);
}

TEST(ImageRecord, LoadBytesPrefersMemory) {
  ImageRecord rec = scenario::image(1);
  rec.bytes = std::make_shared<const std::vector<std::uint8_t>>(std::vector<std::uint8_t>{1, 2});
  EXPECT_EQ(rec.load_bytes().size(), 2u);
  rec.bytes.reset();
  rec.path = "/nonexistent/x.png";
  EXPECT_THROW(rec.load_bytes(), ImageError);
}
