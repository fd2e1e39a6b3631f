#ifndef FACEDET_LOSSES_HPP
#define FACEDET_LOSSES_HPP

#include <array>
#include <cstdint>
#include <vector>

#include "facedet/heads.hpp"
#include "facedet/supervision.hpp"
#include "facedet/tensor.hpp"

namespace facedet {

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
};

struct LossWeights {
  double lambda1 = 1.0;
  double lambda2 = 0.05;
};

struct LossBreakdown {
  double cls = 0, reg = 0, seg = 0, total = 0;
  struct Level {
    double cls = 0, reg = 0, seg = 0;
    int n_cls = 0;  // non-ignored anchors
    int n_reg = 0;  // positive anchors
  };
  std::vector<Level> levels;
};

// Probability-space focal loss for one prediction; reference form used by
// tests. y=1: -alpha*(1-p)^gamma*ln(p); y=0: -(1-alpha)*p^gamma*ln(1-p).
double focal_loss(double p, int y, const FocalParams& params);

// Logit-space evaluation, stable for |z| large.
double focal_loss_logit(double z, int y, const FocalParams& params);
double focal_loss_logit_grad(double z, int y, const FocalParams& params);

// Sum over four coordinates of 0.5*d^2 (|d|<1) or |d|-0.5.
double smooth_l1(const std::array<double, 4>& t, const std::array<double, 4>& t_star);

// --- tape kernels (gradient flows into the logits only) ---

// labels aligned with the tensor layout, one entry per element:
// 1 positive, 0 negative, -1 excluded from the sum.
Tensor focal_loss_sum(Tape& tape, const Tensor& logits, const std::vector<int8_t>& labels,
                      const FocalParams& params);

// reg: (4*A, H, W) with coordinate d of anchor slot a at channel a*4+d.
// positive: one flag per anchor slot (A*H*W, layout a*H*W + r*W + c).
// targets aligned with the full tensor.
Tensor smooth_l1_sum(Tape& tape, const Tensor& reg, const std::vector<double>& targets,
                     const std::vector<uint8_t>& positive);

// Mean over pixels of sigmoid cross entropy against a binary mask.
Tensor sigmoid_ce_mean(Tape& tape, const Tensor& logits, const std::vector<uint8_t>& target);

// Eq-2 combination over all levels:
//   sum_k (1/N_k^c) sum_i Lc  +  lambda1 * sum_k (1/N_k^r) sum_i I(p*) Lr
//   + lambda2 * sum_k Ls
// N_k^c counts non-ignored anchors; levels with zero positives contribute no
// regression term. labels use the anchor enumeration of generate_anchors.
struct TotalLoss {
  Tensor value;  // scalar on the tape
  LossBreakdown breakdown;
};

TotalLoss total_loss(Tape& tape, const HeadOutputs& outputs,
                     const std::vector<AnchorLabels>& labels,
                     const std::vector<std::vector<uint8_t>>& seg_targets,
                     const LossWeights& weights, const FocalParams& focal,
                     int anchors_per_location);

}  // namespace facedet

#endif  // FACEDET_LOSSES_HPP
