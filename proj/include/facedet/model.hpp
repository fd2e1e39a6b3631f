#ifndef FACEDET_MODEL_HPP
#define FACEDET_MODEL_HPP

#include <string>
#include <utility>
#include <vector>

#include "facedet/heads.hpp"
#include "facedet/pyramid.hpp"

namespace facedet {

// Full detector: backbone -> fusion pyramid -> shared heads. Parameters are
// exposed as a stable, ordered name->tensor list for the optimizer and
// checkpoints.
struct DetectorModel {
  BackboneConfig backbone_cfg;
  HeadConfig head_cfg;
  FusionMode fusion_mode = FusionMode::kMultiplicative;

  BackboneParams backbone;
  std::vector<FusionBlock> fusion;  // 3 blocks, top-down
  HeadParams heads;

  static DetectorModel init(const BackboneConfig& bcfg, const HeadConfig& hcfg,
                            FusionMode fusion_mode, uint64_t seed);

  // Channel count of each pyramid map the heads consume (levels 2..7).
  std::vector<int> pyramid_channels() const;

  HeadOutputs forward(Tape& tape, const Tensor& image, HeadMode mode) const;

  // Stable ordering; names are unique.
  std::vector<std::pair<std::string, Tensor>> named_params() const;
  std::vector<Tensor> params() const;
  void zero_grads() const;
  std::size_t param_count() const;
};

}  // namespace facedet

#endif  // FACEDET_MODEL_HPP
