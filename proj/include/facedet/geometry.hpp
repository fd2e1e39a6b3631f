#ifndef FACEDET_GEOMETRY_HPP
#define FACEDET_GEOMETRY_HPP

#include <array>
#include <vector>

namespace facedet {

// Axis-aligned rectangle in pixel coordinates, origin top-left.
// Valid boxes have x2 > x1 and y2 > y1.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  // sqrt(area), the size measure used for level routing and eval buckets.
  double size() const;
};

// Pyramid levels run 2..7 with stride 2^level and anchor side 4*stride.
constexpr int kMinLevel = 2;
constexpr int kMaxLevel = 7;
constexpr int kNumLevels = kMaxLevel - kMinLevel + 1;

inline int level_stride(int level) { return 1 << level; }
inline double anchor_scale(int level) { return 4.0 * level_stride(level); }

struct Anchor {
  Box box;
  int level = 0;
  int row = 0;
  int col = 0;
  int aspect = 0;  // 0 -> 1:1, 1 -> 1:1.5 (taller than wide)
};

struct Detection {
  Box box;
  double score = 0;
};

double iou(const Box& a, const Box& b);

// Anchors for one pyramid level, centered at ((col+0.5)*stride,
// (row+0.5)*stride), two aspects per location, enumerated row-major with
// aspect innermost: index = (row*fmap_w + col)*2 + aspect. Anchors are not
// clipped to the image.
std::vector<Anchor> generate_anchors(int level, int fmap_h, int fmap_w);

// (dx, dy, dw, dh) = ((cxg-cxa)/wa, (cyg-cya)/ha, ln(wg/wa), ln(hg/ha))
std::array<double, 4> encode_box(const Box& anchor, const Box& gt);
Box decode_box(const Box& anchor, const std::array<double, 4>& delta);

// Greedy by descending score (ties by input index); suppresses boxes whose
// IoU with a kept box exceeds iou_thresh. Returns kept input indices in
// the order they were kept.
std::vector<int> nms(const std::vector<Detection>& dets, double iou_thresh);

}  // namespace facedet

#endif  // FACEDET_GEOMETRY_HPP
