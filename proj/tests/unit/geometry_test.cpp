#include <random>

#include <gtest/gtest.h>

#include "detpo/error.hpp"
#include "detpo/geometry.hpp"
#include "oracles.hpp"

using namespace detpo;

TEST(Iou, IdenticalBoxes) { EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {0, 0, 10, 10}), 1.0); }

TEST(Iou, DisjointBoxes) { EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {20, 20, 30, 30}), 0.0); }

TEST(Iou, HalfShiftedIsOneThird) {
  EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {5, 0, 15, 10}), 50.0 / 150.0);
}

TEST(Iou, EmptyUnionIsZero) { EXPECT_EQ(iou({3, 3, 3, 3}, {3, 3, 3, 3}), 0.0); }

TEST(Iou, RejectsMismatchedSpaces) {
  const auto pixel = CoordinateSpace::pixel(100, 100);
  const auto mille = CoordinateSpace::per_mille();
  EXPECT_THROW(iou({0, 0, 1, 1}, pixel, {0, 0, 1, 1}, mille), ContractViolation);
  EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, pixel, {0, 0, 10, 10}, pixel), 1.0);
}

TEST(Iou, SymmetricAndBoundedAgainstOracle) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 100);
  for (int i = 0; i < 10000; ++i) {
    BoundingBox a = BoundingBox{u(rng), u(rng), u(rng), u(rng)}.normalized();
    BoundingBox b = BoundingBox{u(rng), u(rng), u(rng), u(rng)}.normalized();
    const double v = iou(a, b);
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
    ASSERT_DOUBLE_EQ(v, iou(b, a));
    ASSERT_NEAR(v, oracle::box_iou(a, b), 1e-12);
  }
}

TEST(Convert, FullFramePerMilleToPixel) {
  const auto out = convert({0, 0, 1000, 1000}, CoordinateSpace::per_mille(),
                           CoordinateSpace::pixel(640, 480));
  EXPECT_EQ(out, (BoundingBox{0, 0, 640, 480}));
}

TEST(Convert, YxyxPerMilleToXyxyPixel) {
  const auto box = BoundingBox::from_array({100, 200, 300, 400}, CornerOrder::kYxyx);
  const auto out = convert(box, CoordinateSpace::per_mille(CornerOrder::kYxyx),
                           CoordinateSpace::pixel(1000, 1000));
  EXPECT_EQ(out, (BoundingBox{200, 100, 400, 300}));
}

TEST(Convert, ScalesToSmallImage) {
  const auto out = convert({0, 0, 500, 500}, CoordinateSpace::per_mille(),
                           CoordinateSpace::pixel(200, 100));
  EXPECT_EQ(out, (BoundingBox{0, 0, 100, 50}));
}

TEST(Convert, RoundTripIsIdentityWithinTolerance) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0, 1000);
  const auto mille = CoordinateSpace::per_mille();
  const auto pixel = CoordinateSpace::pixel(637, 411);
  for (int i = 0; i < 10000; ++i) {
    const BoundingBox b = BoundingBox{u(rng), u(rng), u(rng), u(rng)}.normalized();
    const BoundingBox back = convert(convert(b, mille, pixel), pixel, mille);
    ASSERT_NEAR(back.x1, b.x1, 1e-9);
    ASSERT_NEAR(back.y2, b.y2, 1e-9);
  }
}

TEST(Convert, RejectsDegenerateSpace) {
  EXPECT_THROW(convert({0, 0, 1, 1}, CoordinateSpace::pixel(0, 10), CoordinateSpace::per_mille()),
               ContractViolation);
}

TEST(Box, ArrayLayouts) {
  const BoundingBox b{1, 2, 3, 4};
  EXPECT_EQ(b.to_array(CornerOrder::kXyxy), (std::array<double, 4>{1, 2, 3, 4}));
  EXPECT_EQ(b.to_array(CornerOrder::kYxyx), (std::array<double, 4>{2, 1, 4, 3}));
  EXPECT_EQ(BoundingBox::from_array({2, 1, 4, 3}, CornerOrder::kYxyx), b);
}

TEST(Box, NormalizeAndClamp) {
  EXPECT_EQ((BoundingBox{30, 40, 10, 20}.normalized()), (BoundingBox{10, 20, 30, 40}));
  EXPECT_EQ((BoundingBox{-5, -5, 120, 90}.clamped(100, 80)), (BoundingBox{0, 0, 100, 80}));
  EXPECT_EQ(BoundingBox::from_xywh(10, 10, 20, 20), (BoundingBox{10, 10, 30, 30}));
  EXPECT_DOUBLE_EQ((BoundingBox{0, 0, 4, 5}.area()), 20.0);
}

TEST(Box, JsonFormatting) {
  EXPECT_EQ(box_to_json({1.26, 2, 3, 4}, CoordinateSpace::pixel(10, 10)).dump(),
            "[1.3,2.0,3.0,4.0]");
  EXPECT_EQ(box_to_json({1.6, 2, 3, 4}, CoordinateSpace::per_mille(CornerOrder::kYxyx)).dump(),
            "[2,2,4,3]");
  EXPECT_EQ(box_from_json(nlohmann::json::array({2, 1, 4, 3}), CornerOrder::kYxyx),
            (BoundingBox{1, 2, 3, 4}));
}
