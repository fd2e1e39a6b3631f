#ifndef FACEDET_HEADS_HPP
#define FACEDET_HEADS_HPP

#include <vector>

#include "facedet/pyramid.hpp"
#include "facedet/tensor.hpp"

namespace facedet {

struct HeadConfig {
  int trunk_width = 32;
  int anchors_per_location = 2;
  static constexpr int kNumClasses = 1;  // sigmoid activation, face vs background
};

// The trunk (four 3x3 convs) and the three prediction layers are shared
// across all pyramid levels and, for the trunk, across the cls/reg/seg
// branches. Only the 1x1 projections are per-level: they reconcile the
// differing FFP channel counts with the shared trunk width.
struct HeadParams {
  std::vector<ConvParam> proj;   // one per level
  std::vector<ConvParam> trunk;  // four shared 3x3 convs
  ConvParam cls;                 // K*A filters
  ConvParam reg;                 // 4*A filters
  ConvParam seg;                 // K filters
};

struct HeadOutputs {
  std::vector<Tensor> cls_logits;  // per level: (K*A, H, W)
  std::vector<Tensor> reg_deltas;  // per level: (4*A, H, W)
  std::vector<Tensor> seg_logits;  // per level: (K, H, W); empty in inference mode
};

enum class HeadMode { kTrain, kInfer };

// level_channels: input channel count of each pyramid map the head will see.
// cls bias starts at -ln((1-pi)/pi), pi = 0.01, so dense background anchors
// begin near-certain negative.
HeadParams init_heads(const HeadConfig& cfg, const std::vector<int>& level_channels, Rng& rng);

HeadOutputs head_forward(Tape& tape, const std::vector<Tensor>& pyramid, const HeadConfig& cfg,
                         const HeadParams& params, HeadMode mode);

std::size_t head_param_count(const HeadParams& params, bool trunk_and_predictions_only = false);

}  // namespace facedet

#endif  // FACEDET_HEADS_HPP
