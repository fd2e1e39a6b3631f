#include "facedet/model.hpp"

#include <stdexcept>

#include "facedet/geometry.hpp"

namespace facedet {

DetectorModel DetectorModel::init(const BackboneConfig& bcfg, const HeadConfig& hcfg,
                                  FusionMode fusion_mode, uint64_t seed) {
  DetectorModel m;
  m.backbone_cfg = bcfg;
  m.head_cfg = hcfg;
  m.fusion_mode = fusion_mode;
  Rng rng(seed);
  m.backbone = init_backbone(bcfg, rng);
  // blocks fuse FFP5->C4, FFP4->C3, FFP3->C2
  m.fusion.push_back(init_fusion_block(bcfg.widths[3], bcfg.widths[2], rng));
  m.fusion.push_back(init_fusion_block(bcfg.widths[2], bcfg.widths[1], rng));
  m.fusion.push_back(init_fusion_block(bcfg.widths[1], bcfg.widths[0], rng));
  m.heads = init_heads(hcfg, m.pyramid_channels(), rng);
  return m;
}

std::vector<int> DetectorModel::pyramid_channels() const {
  // FFP2..FFP5 keep backbone widths; FFP6/FFP7 are pooled FFP5.
  return {backbone_cfg.widths[0], backbone_cfg.widths[1], backbone_cfg.widths[2],
          backbone_cfg.widths[3], backbone_cfg.widths[3], backbone_cfg.widths[3]};
}

HeadOutputs DetectorModel::forward(Tape& tape, const Tensor& image, HeadMode mode) const {
  const std::vector<Tensor> maps = backbone_forward(tape, image, backbone_cfg, backbone);
  const std::vector<Tensor> pyramid = build_pyramid(tape, maps, fusion, fusion_mode);
  return head_forward(tape, pyramid, head_cfg, heads, mode);
}

std::vector<std::pair<std::string, Tensor>> DetectorModel::named_params() const {
  std::vector<std::pair<std::string, Tensor>> out;
  auto push = [&out](const std::string& name, const ConvParam& c) {
    out.emplace_back(name + ".w", c.w);
    out.emplace_back(name + ".b", c.b);
  };
  push("backbone.stem", backbone.stem);
  for (std::size_t s = 0; s < backbone.stages.size(); ++s)
    for (std::size_t blk = 0; blk < backbone.stages[s].size(); ++blk)
      push("backbone.stage" + std::to_string(s) + ".conv" + std::to_string(blk),
           backbone.stages[s][blk]);
  for (std::size_t f = 0; f < fusion.size(); ++f) {
    out.emplace_back("fusion.block" + std::to_string(f) + ".w", fusion[f].w);
    out.emplace_back("fusion.block" + std::to_string(f) + ".b", fusion[f].b);
  }
  for (std::size_t lvl = 0; lvl < heads.proj.size(); ++lvl)
    push("head.proj" + std::to_string(lvl + kMinLevel), heads.proj[lvl]);
  for (std::size_t t = 0; t < heads.trunk.size(); ++t)
    push("head.trunk" + std::to_string(t), heads.trunk[t]);
  push("head.cls", heads.cls);
  push("head.reg", heads.reg);
  push("head.seg", heads.seg);
  return out;
}

std::vector<Tensor> DetectorModel::params() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_params()) out.push_back(t);
  return out;
}

void DetectorModel::zero_grads() const {
  for (auto& t : params()) {
    Tensor tt = t;
    tt.zero_grad();
  }
}

std::size_t DetectorModel::param_count() const {
  std::size_t n = 0;
  for (const auto& t : params()) n += t.numel();
  return n;
}

}  // namespace facedet
