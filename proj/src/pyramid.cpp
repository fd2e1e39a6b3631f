#include "facedet/pyramid.hpp"

#include <cmath>
#include <stdexcept>

namespace facedet {

namespace {

Tensor xavier_conv(Shape shape, Rng& rng) {
  // fan_in = C_in*k*k, fan_out = C_out*k*k for [C_out,C_in,k,k]; the
  // transposed-conv layout [C_in,C_out,k,k] gives the same sum.
  const double k2 = static_cast<double>(shape[2]) * shape[3];
  const double bound = std::sqrt(6.0 / ((shape[0] + shape[1]) * k2));
  return Tensor::uniform(std::move(shape), -bound, bound, rng, /*requires_grad=*/true);
}

}  // namespace

BackboneParams init_backbone(const BackboneConfig& cfg, Rng& rng) {
  if (cfg.widths.size() != 4)
    throw std::invalid_argument("backbone config needs exactly 4 stage widths");
  if (cfg.blocks_per_stage < 1)
    throw std::invalid_argument("backbone needs at least one conv per stage");
  BackboneParams p;
  p.stem.w = xavier_conv({cfg.widths[0], cfg.in_channels, 3, 3}, rng);
  p.stem.b = Tensor::zeros({cfg.widths[0]}, true);
  int prev = cfg.widths[0];
  for (int s = 0; s < 4; ++s) {
    std::vector<ConvParam> stage;
    for (int blk = 0; blk < cfg.blocks_per_stage; ++blk) {
      const int in_ch = blk == 0 ? prev : cfg.widths[static_cast<std::size_t>(s)];
      ConvParam conv;
      conv.w = xavier_conv({cfg.widths[static_cast<std::size_t>(s)], in_ch, 3, 3}, rng);
      conv.b = Tensor::zeros({cfg.widths[static_cast<std::size_t>(s)]}, true);
      stage.push_back(std::move(conv));
    }
    p.stages.push_back(std::move(stage));
    prev = cfg.widths[static_cast<std::size_t>(s)];
  }
  return p;
}

std::vector<Tensor> backbone_forward(Tape& tape, const Tensor& image, const BackboneConfig& cfg,
                                     const BackboneParams& params) {
  if (image.ndim() != 3)
    throw std::invalid_argument("backbone_forward: expected [C,H,W] image, got " +
                                shape_str(image.shape()));
  const int h = image.dim(1), w = image.dim(2);
  if (h % 32 != 0 || w % 32 != 0)
    throw std::invalid_argument("backbone_forward: input " + std::to_string(h) + "x" +
                                std::to_string(w) + " must be divisible by 32; pad to " +
                                std::to_string((h + 31) / 32 * 32) + "x" +
                                std::to_string((w + 31) / 32 * 32));
  if (image.dim(0) != cfg.in_channels)
    throw std::invalid_argument("backbone_forward: image channels " +
                                std::to_string(image.dim(0)) + " do not match config " +
                                std::to_string(cfg.in_channels));

  Tensor x = tape.relu(tape.conv2d(image, params.stem.w, params.stem.b, 2, 1));
  std::vector<Tensor> maps;
  for (const auto& stage : params.stages) {
    for (std::size_t blk = 0; blk < stage.size(); ++blk) {
      const int stride = blk == 0 ? 2 : 1;
      x = tape.relu(tape.conv2d(x, stage[blk].w, stage[blk].b, stride, 1));
    }
    maps.push_back(x);
  }
  return maps;
}

FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "multiplicative") return FusionMode::kMultiplicative;
  if (s == "additive") return FusionMode::kAdditive;
  if (s == "sigmoid_gate") return FusionMode::kSigmoidGate;
  throw std::invalid_argument("unknown fusion mode '" + s +
                              "' (expected multiplicative|additive|sigmoid_gate)");
}

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::kMultiplicative: return "multiplicative";
    case FusionMode::kAdditive: return "additive";
    case FusionMode::kSigmoidGate: return "sigmoid_gate";
  }
  return "?";
}

FusionBlock init_fusion_block(int ch_hi, int ch_lo, Rng& rng) {
  FusionBlock blk;
  blk.w = xavier_conv({ch_hi, ch_lo, FusionBlock::kKernel, FusionBlock::kKernel}, rng);
  blk.b = Tensor::zeros({ch_lo}, true);
  return blk;
}

Tensor fusion_transform(Tape& tape, const Tensor& phi_hi, const FusionBlock& block) {
  return tape.conv_transpose2d(phi_hi, block.w, block.b, FusionBlock::kStride, FusionBlock::kPad);
}

namespace {

void check_fused_shape(const Tensor& psi, const Tensor& phi_lo) {
  if (psi.shape() != phi_lo.shape())
    throw std::invalid_argument("fuse: transformed map " + shape_str(psi.shape()) +
                                " does not match lower-level map " + shape_str(phi_lo.shape()));
}

}  // namespace

Tensor fuse(Tape& tape, const Tensor& phi_lo, const Tensor& phi_hi, const FusionBlock& block,
            FusionMode mode) {
  Tensor psi = fusion_transform(tape, phi_hi, block);
  check_fused_shape(psi, phi_lo);
  switch (mode) {
    case FusionMode::kMultiplicative:
      return tape.add(tape.mul(phi_lo, psi), phi_lo);
    case FusionMode::kAdditive:
      return tape.add(phi_lo, psi);
    case FusionMode::kSigmoidGate:
      return tape.add(tape.mul(phi_lo, tape.sigmoid(psi)), phi_lo);
  }
  throw std::logic_error("fuse: unhandled mode");
}

Tensor fuse_additive(Tape& tape, const Tensor& phi_lo, const Tensor& phi_hi,
                     const FusionBlock& block) {
  return fuse(tape, phi_lo, phi_hi, block, FusionMode::kAdditive);
}

std::vector<Tensor> build_pyramid(Tape& tape, const std::vector<Tensor>& backbone_maps,
                                  const std::vector<FusionBlock>& fusion_blocks,
                                  FusionMode mode) {
  if (backbone_maps.size() != 4)
    throw std::invalid_argument("build_pyramid: expected 4 backbone maps");
  if (fusion_blocks.size() != 3)
    throw std::invalid_argument("build_pyramid: expected 3 fusion blocks");

  std::vector<Tensor> ffp(6);
  ffp[3] = backbone_maps[3];  // FFP5: no fusion above it
  ffp[2] = fuse(tape, backbone_maps[2], ffp[3], fusion_blocks[0], mode);
  ffp[1] = fuse(tape, backbone_maps[1], ffp[2], fusion_blocks[1], mode);
  ffp[0] = fuse(tape, backbone_maps[0], ffp[1], fusion_blocks[2], mode);
  ffp[4] = tape.maxpool2d(ffp[3], 2, 2);  // FFP6
  ffp[5] = tape.maxpool2d(ffp[4], 2, 2);  // FFP7
  return ffp;
}

}  // namespace facedet
