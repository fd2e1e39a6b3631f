#include "facedet/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace facedet {

namespace {

void validate(const FocalParams& p) {
  if (!(p.alpha > 0 && p.alpha < 1)) throw std::invalid_argument("focal alpha must be in (0,1)");
  if (!(p.gamma >= 0)) throw std::invalid_argument("focal gamma must be >= 0");
}

}  // namespace

double focal_loss(double p, int y, const FocalParams& params) {
  validate(params);
  if (y == 1) return -params.alpha * std::pow(1.0 - p, params.gamma) * std::log(p);
  return -(1.0 - params.alpha) * std::pow(p, params.gamma) * std::log(1.0 - p);
}

double focal_loss_logit(double z, int y, const FocalParams& params) {
  // ln p = -softplus(-z), 1-p = sigmoid(-z); everything stays finite.
  if (y == 1) return params.alpha * std::pow(stable_sigmoid(-z), params.gamma) * softplus(-z);
  return (1.0 - params.alpha) * std::pow(stable_sigmoid(z), params.gamma) * softplus(z);
}

double focal_loss_logit_grad(double z, int y, const FocalParams& params) {
  const double p = stable_sigmoid(z);
  const double q = stable_sigmoid(-z);  // 1-p
  const double g = params.gamma;
  if (y == 1) {
    const double log_p = -softplus(-z);
    return params.alpha * std::pow(q, g) * (g * p * log_p + p - 1.0);
  }
  const double log_q = -softplus(z);
  return (1.0 - params.alpha) * std::pow(p, g) * (p - g * q * log_q);
}

double smooth_l1(const std::array<double, 4>& t, const std::array<double, 4>& t_star) {
  double s = 0;
  for (int i = 0; i < 4; ++i) {
    const double d = std::abs(t[i] - t_star[i]);
    s += d < 1.0 ? 0.5 * d * d : d - 0.5;
  }
  return s;
}

Tensor focal_loss_sum(Tape& tape, const Tensor& logits, const std::vector<int8_t>& labels,
                      const FocalParams& params) {
  validate(params);
  if (labels.size() != logits.numel())
    throw std::invalid_argument("focal_loss_sum: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(logits.numel()) + " logits");
  const bool needs_grad = logits.requires_grad();
  Tensor out = tape.make_output({1}, needs_grad);
  double s = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] != kIgnore) s += focal_loss_logit(logits.data()[i], labels[i], params);
  out.data()[0] = s;
  if (tape.recording() && needs_grad) {
    auto lbl = std::make_shared<std::vector<int8_t>>(labels);
    tape.push_node([logits, out, lbl, params]() {
      Tensor lg = logits;
      const double g = out.grad()[0];
      for (std::size_t i = 0; i < lbl->size(); ++i)
        if ((*lbl)[i] != kIgnore)
          lg.grad()[i] += g * focal_loss_logit_grad(logits.data()[i], (*lbl)[i], params);
    });
  }
  return out;
}

Tensor smooth_l1_sum(Tape& tape, const Tensor& reg, const std::vector<double>& targets,
                     const std::vector<uint8_t>& positive) {
  if (reg.ndim() != 3 || reg.dim(0) % 4 != 0)
    throw std::invalid_argument("smooth_l1_sum: expected (4*A,H,W) deltas, got " +
                                shape_str(reg.shape()));
  const int A = reg.dim(0) / 4;
  const std::size_t hw = static_cast<std::size_t>(reg.dim(1)) * reg.dim(2);
  if (targets.size() != reg.numel() || positive.size() != static_cast<std::size_t>(A) * hw)
    throw std::invalid_argument("smooth_l1_sum: target/mask sizes do not match deltas");

  const bool needs_grad = reg.requires_grad();
  Tensor out = tape.make_output({1}, needs_grad);
  double s = 0;
  for (int a = 0; a < A; ++a) {
    for (std::size_t p = 0; p < hw; ++p) {
      if (!positive[static_cast<std::size_t>(a) * hw + p]) continue;
      for (int d = 0; d < 4; ++d) {
        const std::size_t idx = (static_cast<std::size_t>(a) * 4 + d) * hw + p;
        const double diff = std::abs(reg.data()[idx] - targets[idx]);
        s += diff < 1.0 ? 0.5 * diff * diff : diff - 0.5;
      }
    }
  }
  out.data()[0] = s;
  if (tape.recording() && needs_grad) {
    auto tgt = std::make_shared<std::vector<double>>(targets);
    auto pos = std::make_shared<std::vector<uint8_t>>(positive);
    tape.push_node([reg, out, tgt, pos, A, hw]() {
      Tensor rg = reg;
      const double g = out.grad()[0];
      for (int a = 0; a < A; ++a) {
        for (std::size_t p = 0; p < hw; ++p) {
          if (!(*pos)[static_cast<std::size_t>(a) * hw + p]) continue;
          for (int d = 0; d < 4; ++d) {
            const std::size_t idx = (static_cast<std::size_t>(a) * 4 + d) * hw + p;
            const double diff = reg.data()[idx] - (*tgt)[idx];
            const double slope = std::abs(diff) < 1.0 ? diff : (diff > 0 ? 1.0 : -1.0);
            rg.grad()[idx] += g * slope;
          }
        }
      }
    });
  }
  return out;
}

Tensor sigmoid_ce_mean(Tape& tape, const Tensor& logits, const std::vector<uint8_t>& target) {
  if (target.size() != logits.numel())
    throw std::invalid_argument("sigmoid_ce_mean: " + std::to_string(target.size()) +
                                " targets for " + std::to_string(logits.numel()) + " logits");
  const bool needs_grad = logits.requires_grad();
  Tensor out = tape.make_output({1}, needs_grad);
  const std::size_t n = logits.numel();
  double s = 0;
  for (std::size_t i = 0; i < n; ++i)
    s += softplus(logits.data()[i]) - static_cast<double>(target[i]) * logits.data()[i];
  out.data()[0] = s / static_cast<double>(n);
  if (tape.recording() && needs_grad) {
    auto tgt = std::make_shared<std::vector<uint8_t>>(target);
    tape.push_node([logits, out, tgt, n]() {
      Tensor lg = logits;
      const double g = out.grad()[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i)
        lg.grad()[i] += g * (stable_sigmoid(logits.data()[i]) - static_cast<double>((*tgt)[i]));
    });
  }
  return out;
}

TotalLoss total_loss(Tape& tape, const HeadOutputs& outputs,
                     const std::vector<AnchorLabels>& labels,
                     const std::vector<std::vector<uint8_t>>& seg_targets,
                     const LossWeights& weights, const FocalParams& focal,
                     int anchors_per_location) {
  validate(focal);
  if (weights.lambda1 < 0 || weights.lambda2 < 0)
    throw std::invalid_argument("loss weights must be non-negative");
  const std::size_t n_levels = outputs.cls_logits.size();
  if (labels.size() != n_levels || outputs.reg_deltas.size() != n_levels)
    throw std::invalid_argument("total_loss: per-level inputs do not align");
  const bool with_seg = !outputs.seg_logits.empty();
  if (with_seg && seg_targets.size() != n_levels)
    throw std::invalid_argument("total_loss: segmentation targets do not align with levels");

  const int A = anchors_per_location;
  TotalLoss result;
  result.breakdown.levels.resize(n_levels);
  Tensor total;

  auto accumulate = [&](const Tensor& term) {
    total = total.defined() ? tape.add(total, term) : term;
  };

  for (std::size_t lvl = 0; lvl < n_levels; ++lvl) {
    const Tensor& cls = outputs.cls_logits[lvl];
    const Tensor& reg = outputs.reg_deltas[lvl];
    const int h = cls.dim(1), w = cls.dim(2);
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    const AnchorLabels& lab = labels[lvl];
    if (lab.label.size() != static_cast<std::size_t>(A) * hw)
      throw std::invalid_argument("total_loss: level " + std::to_string(lvl) + " has " +
                                  std::to_string(lab.label.size()) + " anchor labels for a " +
                                  std::to_string(h) + "x" + std::to_string(w) + " map");

    // Anchor list order is (row, col, aspect); tensor slots are (aspect, row, col).
    std::vector<int8_t> slot_label(static_cast<std::size_t>(A) * hw);
    std::vector<uint8_t> slot_pos(static_cast<std::size_t>(A) * hw, 0);
    std::vector<double> slot_target(static_cast<std::size_t>(4 * A) * hw, 0.0);
    int n_cls = 0, n_reg = 0;
    for (std::size_t p = 0; p < hw; ++p) {
      for (int a = 0; a < A; ++a) {
        const std::size_t anchor_idx = p * static_cast<std::size_t>(A) + a;
        const std::size_t slot = static_cast<std::size_t>(a) * hw + p;
        const int8_t l = lab.label[anchor_idx];
        slot_label[slot] = l;
        if (l != kIgnore) ++n_cls;
        if (l == kPositive) {
          ++n_reg;
          slot_pos[slot] = 1;
          for (int d = 0; d < 4; ++d)
            slot_target[(static_cast<std::size_t>(a) * 4 + d) * hw + p] = lab.target[anchor_idx][d];
        }
      }
    }

    auto& lvl_bd = result.breakdown.levels[lvl];
    lvl_bd.n_cls = n_cls;
    lvl_bd.n_reg = n_reg;

    if (n_cls > 0) {
      Tensor lc = tape.scale(focal_loss_sum(tape, cls, slot_label, focal), 1.0 / n_cls);
      lvl_bd.cls = lc.item();
      result.breakdown.cls += lvl_bd.cls;
      accumulate(lc);
    }
    if (n_reg > 0) {
      Tensor lr = tape.scale(smooth_l1_sum(tape, reg, slot_target, slot_pos), 1.0 / n_reg);
      lvl_bd.reg = lr.item();
      result.breakdown.reg += lvl_bd.reg;
      accumulate(tape.scale(lr, weights.lambda1));
    }
    if (with_seg) {
      Tensor ls = sigmoid_ce_mean(tape, outputs.seg_logits[lvl], seg_targets[lvl]);
      lvl_bd.seg = ls.item();
      result.breakdown.seg += lvl_bd.seg;
      accumulate(tape.scale(ls, weights.lambda2));
    }
  }

  if (!total.defined()) total = tape.make_output({1}, false);
  result.value = total;
  result.breakdown.total = total.item();
  return result;
}

}  // namespace facedet
