#include "facedet/heads.hpp"

#include <cmath>
#include <stdexcept>

namespace facedet {

namespace {

Tensor xavier_conv(Shape shape, Rng& rng) {
  const double k2 = static_cast<double>(shape[2]) * shape[3];
  const double bound = std::sqrt(6.0 / ((shape[0] + shape[1]) * k2));
  return Tensor::uniform(std::move(shape), -bound, bound, rng, /*requires_grad=*/true);
}

}  // namespace

HeadParams init_heads(const HeadConfig& cfg, const std::vector<int>& level_channels, Rng& rng) {
  if (cfg.trunk_width < 1 || cfg.anchors_per_location < 1)
    throw std::invalid_argument("head config: trunk width and anchors per location must be >= 1");
  HeadParams p;
  for (int ch : level_channels) {
    ConvParam proj;
    proj.w = xavier_conv({cfg.trunk_width, ch, 1, 1}, rng);
    proj.b = Tensor::zeros({cfg.trunk_width}, true);
    p.proj.push_back(std::move(proj));
  }
  for (int i = 0; i < 4; ++i) {
    ConvParam conv;
    conv.w = xavier_conv({cfg.trunk_width, cfg.trunk_width, 3, 3}, rng);
    conv.b = Tensor::zeros({cfg.trunk_width}, true);
    p.trunk.push_back(std::move(conv));
  }
  const int ka = HeadConfig::kNumClasses * cfg.anchors_per_location;
  p.cls.w = xavier_conv({ka, cfg.trunk_width, 3, 3}, rng);
  constexpr double pi = 0.01;
  p.cls.b = Tensor::full({ka}, -std::log((1.0 - pi) / pi), true);
  p.reg.w = xavier_conv({4 * cfg.anchors_per_location, cfg.trunk_width, 3, 3}, rng);
  p.reg.b = Tensor::zeros({4 * cfg.anchors_per_location}, true);
  p.seg.w = xavier_conv({HeadConfig::kNumClasses, cfg.trunk_width, 3, 3}, rng);
  p.seg.b = Tensor::zeros({HeadConfig::kNumClasses}, true);
  return p;
}

HeadOutputs head_forward(Tape& tape, const std::vector<Tensor>& pyramid, const HeadConfig& cfg,
                         const HeadParams& params, HeadMode mode) {
  if (pyramid.size() != params.proj.size())
    throw std::invalid_argument("head_forward: " + std::to_string(pyramid.size()) +
                                " pyramid maps but " + std::to_string(params.proj.size()) +
                                " per-level projections");
  const int ka = HeadConfig::kNumClasses * cfg.anchors_per_location;
  if (params.cls.w.dim(0) != ka || params.reg.w.dim(0) != 4 * cfg.anchors_per_location)
    throw std::invalid_argument("head_forward: prediction filters do not match " +
                                std::to_string(cfg.anchors_per_location) +
                                " anchors per location");
  HeadOutputs out;
  for (std::size_t lvl = 0; lvl < pyramid.size(); ++lvl) {
    Tensor x = tape.conv2d(pyramid[lvl], params.proj[lvl].w, params.proj[lvl].b, 1, 0);
    for (const auto& conv : params.trunk) x = tape.relu(tape.conv2d(x, conv.w, conv.b, 1, 1));
    out.cls_logits.push_back(tape.conv2d(x, params.cls.w, params.cls.b, 1, 1));
    out.reg_deltas.push_back(tape.conv2d(x, params.reg.w, params.reg.b, 1, 1));
    if (mode == HeadMode::kTrain)
      out.seg_logits.push_back(tape.conv2d(x, params.seg.w, params.seg.b, 1, 1));
  }
  return out;
}

std::size_t head_param_count(const HeadParams& params, bool trunk_and_predictions_only) {
  std::size_t n = 0;
  auto count = [&n](const ConvParam& c) { n += c.w.numel() + c.b.numel(); };
  if (!trunk_and_predictions_only)
    for (const auto& c : params.proj) count(c);
  for (const auto& c : params.trunk) count(c);
  count(params.cls);
  count(params.reg);
  count(params.seg);
  return n;
}

}  // namespace facedet
