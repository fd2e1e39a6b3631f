#ifndef FACEDET_PYRAMID_HPP
#define FACEDET_PYRAMID_HPP

#include <string>
#include <vector>

#include "facedet/tensor.hpp"

namespace facedet {

struct ConvParam {
  Tensor w, b;
};

// Stages emit strides {4, 8, 16, 32}: a stride-2 stem followed by four
// stages whose first conv has stride 2.
struct BackboneConfig {
  std::vector<int> widths{16, 32, 64, 128};
  int blocks_per_stage = 2;
  int in_channels = 1;
};

struct BackboneParams {
  ConvParam stem;
  std::vector<std::vector<ConvParam>> stages;  // [4][blocks_per_stage]
};

BackboneParams init_backbone(const BackboneConfig& cfg, Rng& rng);

// image: [C,H,W] with H, W divisible by 32. Returns C2..C5 feature maps.
std::vector<Tensor> backbone_forward(Tape& tape, const Tensor& image, const BackboneConfig& cfg,
                                     const BackboneParams& params);

enum class FusionMode {
  kMultiplicative,  // phi_lo * psi(phi_hi) + phi_lo
  kAdditive,        // phi_lo + psi(phi_hi)           (FPN-style baseline)
  kSigmoidGate,     // phi_lo * sigmoid(psi(phi_hi)) + phi_lo
};

FusionMode fusion_mode_from_string(const std::string& s);
std::string to_string(FusionMode mode);

// Transposed convolution mapping the deeper map (C_hi, H/2, W/2) to the
// shallower map's shape (C_lo, H, W): kernel 4, stride 2, padding 1.
struct FusionBlock {
  Tensor w;  // [C_hi, C_lo, 4, 4]
  Tensor b;  // [C_lo]
  static constexpr int kKernel = 4;
  static constexpr int kStride = 2;
  static constexpr int kPad = 1;
};

FusionBlock init_fusion_block(int ch_hi, int ch_lo, Rng& rng);

// One application of the upsampling transform.
Tensor fusion_transform(Tape& tape, const Tensor& phi_hi, const FusionBlock& block);

Tensor fuse(Tape& tape, const Tensor& phi_lo, const Tensor& phi_hi, const FusionBlock& block,
            FusionMode mode = FusionMode::kMultiplicative);
Tensor fuse_additive(Tape& tape, const Tensor& phi_lo, const Tensor& phi_hi,
                     const FusionBlock& block);

// backbone_maps: C2..C5. fusion_blocks: [0] fuses into C4, [1] into C3,
// [2] into C2. Returns FFP2..FFP7 (strides 4..128); FFP6/FFP7 are
// successive 2x2 stride-2 max-pools of FFP5.
std::vector<Tensor> build_pyramid(Tape& tape, const std::vector<Tensor>& backbone_maps,
                                  const std::vector<FusionBlock>& fusion_blocks,
                                  FusionMode mode = FusionMode::kMultiplicative);

}  // namespace facedet

#endif  // FACEDET_PYRAMID_HPP
