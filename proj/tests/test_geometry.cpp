#include <cmath>

#include "doctest.h"
#include "facedet/geometry.hpp"
#include "facedet/rng.hpp"
#include "oracles.hpp"

using namespace facedet;

namespace {

Box random_box(Rng& rng, double span = 100.0) {
  const double x1 = rng.uniform(0, span);
  const double y1 = rng.uniform(0, span);
  return {x1, y1, x1 + rng.uniform(1.0, span / 2), y1 + rng.uniform(1.0, span / 2)};
}

}  // namespace

TEST_CASE("iou closed forms") {
  const Box a{0, 0, 10, 10};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, {20, 20, 30, 30}) == 0.0);
  // 25 / (100 + 100 - 25) = 1/7
  CHECK(iou(a, {5, 5, 15, 15}) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
}

TEST_CASE("iou symmetry and range") {
  Rng rng(99);
  for (int i = 0; i < 500; ++i) {
    const Box a = random_box(rng), b = random_box(rng);
    const double v = iou(a, b);
    CHECK(v == iou(b, a));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(iou(a, a) == 1.0);
  }
}

TEST_CASE("anchor generation") {
  SUBCASE("level 2 on a 16x16 map gives 512 anchors of scale 16") {
    const auto anchors = generate_anchors(2, 16, 16);
    REQUIRE(anchors.size() == 512);
    for (const Anchor& a : anchors) {
      CHECK(a.level == 2);
      CHECK(std::sqrt(a.box.area()) == doctest::Approx(16.0).epsilon(1e-9));
    }
  }
  SUBCASE("level 7 anchor side is 512") {
    const auto anchors = generate_anchors(7, 1, 1);
    REQUIRE(anchors.size() == 2);
    CHECK(anchors[0].box.width() == doctest::Approx(512.0));
    CHECK(anchors[0].box.height() == doctest::Approx(512.0));
  }
  SUBCASE("anchor at (0,0) level 2 aspect 1 is centered at (2,2)") {
    const auto anchors = generate_anchors(2, 1, 1);
    const Box& b = anchors[0].box;
    CHECK(b.x1 == doctest::Approx(-6.0));
    CHECK(b.y1 == doctest::Approx(-6.0));
    CHECK(b.x2 == doctest::Approx(10.0));
    CHECK(b.y2 == doctest::Approx(10.0));
  }
  SUBCASE("both aspects have equal area; 1.5 aspect is taller than wide") {
    for (int level = kMinLevel; level <= kMaxLevel; ++level) {
      const auto anchors = generate_anchors(level, 2, 2);
      CHECK(anchors.size() == 8);
      const double square = anchors[0].box.area();
      const Box& tall = anchors[1].box;
      CHECK(tall.area() == doctest::Approx(square).epsilon(1e-6));
      CHECK(tall.height() / tall.width() == doctest::Approx(1.5).epsilon(1e-9));
    }
  }
  SUBCASE("count follows fmap dimensions") {
    const auto anchors = generate_anchors(3, 5, 9);
    CHECK(anchors.size() == 5 * 9 * 2);
  }
  SUBCASE("enumeration is row-major with aspect innermost") {
    const auto anchors = generate_anchors(2, 3, 4);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c)
        for (int a = 0; a < 2; ++a) {
          const Anchor& an = anchors[static_cast<std::size_t>((r * 4 + c) * 2 + a)];
          CHECK(an.row == r);
          CHECK(an.col == c);
          CHECK(an.aspect == a);
        }
  }
  SUBCASE("level outside [2,7] is rejected") {
    CHECK_THROWS_AS(generate_anchors(1, 4, 4), std::invalid_argument);
    CHECK_THROWS_AS(generate_anchors(8, 4, 4), std::invalid_argument);
  }
}

TEST_CASE("box delta encode/decode") {
  SUBCASE("gt equal to anchor encodes to zeros") {
    const Box a{3, 4, 19, 28};
    const auto d = encode_box(a, a);
    for (double v : d) CHECK(v == doctest::Approx(0.0));
  }
  SUBCASE("hand-computed deltas") {
    const Box anchor{0, 0, 16, 16}, gt{4, 4, 20, 20};
    const auto d = encode_box(anchor, gt);
    CHECK(d[0] == doctest::Approx(0.25));
    CHECK(d[1] == doctest::Approx(0.25));
    CHECK(d[2] == doctest::Approx(0.0));
    CHECK(d[3] == doctest::Approx(0.0));
  }
  SUBCASE("decode inverts encode within 1e-9 over 10k random pairs") {
    Rng rng(123);
    for (int i = 0; i < 10000; ++i) {
      const Box anchor = random_box(rng);
      const Box gt = random_box(rng);
      const Box back = decode_box(anchor, encode_box(anchor, gt));
      CHECK(std::abs(back.x1 - gt.x1) < 1e-9);
      CHECK(std::abs(back.y1 - gt.y1) < 1e-9);
      CHECK(std::abs(back.x2 - gt.x2) < 1e-9);
      CHECK(std::abs(back.y2 - gt.y2) < 1e-9);
    }
  }
  SUBCASE("degenerate gt is rejected") {
    const Box anchor{0, 0, 16, 16};
    CHECK_THROWS_AS(encode_box(anchor, {5, 5, 5, 10}), std::invalid_argument);
  }
}

TEST_CASE("nms hand cases") {
  SUBCASE("single detection is kept") {
    const std::vector<Detection> dets{{{0, 0, 10, 10}, 0.9}};
    CHECK(nms(dets, 0.5) == std::vector<int>{0});
  }
  SUBCASE("overlapping lower score is suppressed") {
    // IoU(A,B) = 80/120 ~ 0.67 > 0.5
    const std::vector<Detection> dets{{{0, 0, 10, 10}, 0.9}, {{0, 2, 10, 12}, 0.8}};
    CHECK(iou(dets[0].box, dets[1].box) > 0.5);
    CHECK(nms(dets, 0.5) == std::vector<int>{0});
  }
  SUBCASE("disjoint detection survives") {
    const std::vector<Detection> dets{
        {{0, 0, 10, 10}, 0.9}, {{0, 2, 10, 12}, 0.8}, {{50, 50, 60, 60}, 0.7}};
    CHECK(nms(dets, 0.5) == std::vector<int>{0, 2});
  }
}

TEST_CASE("nms matches the exhaustive reference on random instances") {
  Rng rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + rng.uniform_int(20);
    std::vector<Detection> dets;
    for (int i = 0; i < n; ++i) {
      Box b = random_box(rng, 40.0);
      dets.push_back({b, rng.uniform()});
    }
    const double thresh = rng.uniform(0.1, 0.9);
    CHECK(nms(dets, thresh) == oracles::nms_reference(dets, thresh));
  }
}
