#include "facedet/supervision.hpp"

#include <cmath>
#include <stdexcept>

namespace facedet {

int AnchorLabels::count(int8_t value) const {
  int n = 0;
  for (int8_t l : label)
    if (l == value) ++n;
  return n;
}

AnchorLabels assign_anchors(const std::vector<Anchor>& anchors, const std::vector<Box>& gts,
                            double pos_thresh, double neg_thresh) {
  AnchorLabels out;
  out.label.assign(anchors.size(), kNegative);
  out.matched_gt.assign(anchors.size(), -1);
  out.target.assign(anchors.size(), {0, 0, 0, 0});
  if (gts.empty()) return out;

  for (std::size_t i = 0; i < anchors.size(); ++i) {
    double best = 0;
    int best_gt = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(anchors[i].box, gts[g]);
      if (v > best) {  // strict: ties keep the lowest gt index
        best = v;
        best_gt = static_cast<int>(g);
      }
    }
    if (best >= pos_thresh) {
      out.label[i] = kPositive;
      out.matched_gt[i] = best_gt;
      out.target[i] = encode_box(anchors[i].box, gts[static_cast<std::size_t>(best_gt)]);
    } else if (best >= neg_thresh) {
      out.label[i] = kIgnore;
    }
  }
  return out;
}

int level_for_face(const Box& face) {
  const double f = face.size();
  if (f <= 0) throw std::invalid_argument("level_for_face: degenerate face box");
  int best_level = kMinLevel;
  double best_dist = std::abs(std::log2(f / anchor_scale(kMinLevel)));
  for (int level = kMinLevel + 1; level <= kMaxLevel; ++level) {
    const double d = std::abs(std::log2(f / anchor_scale(level)));
    if (d < best_dist) {  // strict: ties stay at the lower level
      best_dist = d;
      best_level = level;
    }
  }
  return best_level;
}

std::array<std::vector<Box>, kNumLevels> assign_faces_to_levels(const std::vector<Box>& gts) {
  std::array<std::vector<Box>, kNumLevels> out;
  for (const Box& gt : gts) out[static_cast<std::size_t>(level_for_face(gt) - kMinLevel)].push_back(gt);
  return out;
}

std::vector<uint8_t> rasterize_seg_target(const std::vector<Box>& faces, int level, int fmap_h,
                                          int fmap_w) {
  if (level < kMinLevel || level > kMaxLevel)
    throw std::invalid_argument("rasterize_seg_target: level outside [2,7]");
  std::vector<uint8_t> map(static_cast<std::size_t>(fmap_h) * fmap_w, 0);
  const double stride = level_stride(level);
  for (const Box& face : faces) {
    // Cell index ranges whose centers can fall strictly inside the face.
    const int r0 = std::max(0, static_cast<int>(std::floor(face.y1 / stride - 0.5)));
    const int r1 = std::min(fmap_h - 1, static_cast<int>(std::ceil(face.y2 / stride)));
    const int c0 = std::max(0, static_cast<int>(std::floor(face.x1 / stride - 0.5)));
    const int c1 = std::min(fmap_w - 1, static_cast<int>(std::ceil(face.x2 / stride)));
    for (int r = r0; r <= r1; ++r) {
      const double cy = (r + 0.5) * stride;
      if (cy <= face.y1 || cy >= face.y2) continue;
      for (int c = c0; c <= c1; ++c) {
        const double cx = (c + 0.5) * stride;
        if (cx > face.x1 && cx < face.x2)
          map[static_cast<std::size_t>(r) * fmap_w + c] = 1;
      }
    }
  }
  return map;
}

}  // namespace facedet
