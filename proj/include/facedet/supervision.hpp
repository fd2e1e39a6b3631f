#ifndef FACEDET_SUPERVISION_HPP
#define FACEDET_SUPERVISION_HPP

#include <array>
#include <cstdint>
#include <vector>

#include "facedet/geometry.hpp"

namespace facedet {

constexpr int8_t kPositive = 1;
constexpr int8_t kNegative = 0;
constexpr int8_t kIgnore = -1;

// One entry per anchor, same order as the anchor list. Regression targets
// are defined only for positive anchors.
struct AnchorLabels {
  std::vector<int8_t> label;
  std::vector<int> matched_gt;                  // -1 unless positive
  std::vector<std::array<double, 4>> target;

  int count(int8_t value) const;
};

// Max IoU over gts decides: >= pos_thresh positive (argmax gt, ties to the
// lowest gt index), < neg_thresh negative, otherwise ignored. No gts means
// all negative.
AnchorLabels assign_anchors(const std::vector<Anchor>& anchors, const std::vector<Box>& gts,
                            double pos_thresh = 0.5, double neg_thresh = 0.4);

// Routes a face of size f = sqrt(area) to the level minimizing
// |log2(f / (4*2^level))|, ties to the lower level.
int level_for_face(const Box& face);

// Partition of gts across levels 2..7 (index 0 is level 2).
std::array<std::vector<Box>, kNumLevels> assign_faces_to_levels(const std::vector<Box>& gts);

// Binary map, row-major (fmap_h x fmap_w): 1 where the cell center
// ((col+0.5)*stride, (row+0.5)*stride) lies strictly inside a face.
std::vector<uint8_t> rasterize_seg_target(const std::vector<Box>& faces, int level, int fmap_h,
                                          int fmap_w);

}  // namespace facedet

#endif  // FACEDET_SUPERVISION_HPP
