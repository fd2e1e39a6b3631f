#include "facedet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace facedet {

double Box::size() const { return std::sqrt(area()); }

namespace {

bool box_less(const Box& a, const Box& b) {
  if (a.x1 != b.x1) return a.x1 < b.x1;
  if (a.y1 != b.y1) return a.y1 < b.y1;
  if (a.x2 != b.x2) return a.x2 < b.x2;
  return a.y2 < b.y2;
}

}  // namespace

double iou(const Box& a, const Box& b) {
  // Canonical operand order keeps the arithmetic identical for (a,b) and
  // (b,a); otherwise FMA contraction can perturb the union by one ulp.
  const Box& p = box_less(b, a) ? b : a;
  const Box& q = box_less(b, a) ? a : b;
  const double ix = std::min(p.x2, q.x2) - std::max(p.x1, q.x1);
  const double iy = std::min(p.y2, q.y2) - std::max(p.y1, q.y1);
  if (ix <= 0 || iy <= 0) return 0.0;
  const double inter = ix * iy;
  return inter / (p.area() + q.area() - inter);
}

std::vector<Anchor> generate_anchors(int level, int fmap_h, int fmap_w) {
  if (level < kMinLevel || level > kMaxLevel)
    throw std::invalid_argument("generate_anchors: level " + std::to_string(level) +
                                " outside [2,7]");
  const double stride = level_stride(level);
  const double scale = anchor_scale(level);
  // Equal-area 1:1.5 variant, taller than wide.
  const double root = std::sqrt(1.5);
  const double w_tall = scale / root;
  const double h_tall = scale * root;

  std::vector<Anchor> anchors;
  anchors.reserve(static_cast<std::size_t>(fmap_h) * fmap_w * 2);
  for (int r = 0; r < fmap_h; ++r) {
    for (int c = 0; c < fmap_w; ++c) {
      const double cx = (c + 0.5) * stride;
      const double cy = (r + 0.5) * stride;
      anchors.push_back({{cx - scale / 2, cy - scale / 2, cx + scale / 2, cy + scale / 2},
                         level, r, c, 0});
      anchors.push_back({{cx - w_tall / 2, cy - h_tall / 2, cx + w_tall / 2, cy + h_tall / 2},
                         level, r, c, 1});
    }
  }
  return anchors;
}

std::array<double, 4> encode_box(const Box& anchor, const Box& gt) {
  if (gt.width() <= 0 || gt.height() <= 0)
    throw std::invalid_argument("encode_box: ground-truth box has non-positive size");
  const double wa = anchor.width(), ha = anchor.height();
  return {(gt.cx() - anchor.cx()) / wa, (gt.cy() - anchor.cy()) / ha,
          std::log(gt.width() / wa), std::log(gt.height() / ha)};
}

Box decode_box(const Box& anchor, const std::array<double, 4>& delta) {
  const double wa = anchor.width(), ha = anchor.height();
  const double cx = anchor.cx() + delta[0] * wa;
  const double cy = anchor.cy() + delta[1] * ha;
  const double w = std::exp(delta[2]) * wa;
  const double h = std::exp(delta[3]) * ha;
  return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

std::vector<int> nms(const std::vector<Detection>& dets, double iou_thresh) {
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return dets[static_cast<std::size_t>(a)].score > dets[static_cast<std::size_t>(b)].score;
  });
  std::vector<int> kept;
  std::vector<char> suppressed(dets.size(), 0);
  for (int idx : order) {
    if (suppressed[static_cast<std::size_t>(idx)]) continue;
    kept.push_back(idx);
    for (int other : order) {
      if (suppressed[static_cast<std::size_t>(other)] || other == idx) continue;
      if (iou(dets[static_cast<std::size_t>(idx)].box, dets[static_cast<std::size_t>(other)].box) >
          iou_thresh)
        suppressed[static_cast<std::size_t>(other)] = 1;
    }
  }
  return kept;
}

}  // namespace facedet
