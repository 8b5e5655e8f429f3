// losses.hpp - classification, regression, and total training objectives.
//
// Focal classification loss, bin-based box regression (cross entropy over
// bins plus smooth-L1 over residuals), and the weighted total objective.
// Everything is recorded on a Tape so gradients can be verified by finite
// differences.
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fusedet/errors.hpp"
#include "fusedet/geometry.hpp"
#include "fusedet/numerics.hpp"

namespace fusedet::losses {

// Probabilities are clamped to this interval before any log.
inline constexpr double kProbEps = 1e-7;

struct LossConfig {
  double alpha = 0.25;
  double gamma = 2.0;
  double lambda_sd = 1.0;
  geom::BinConfig bins;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0))
      throw ContractError("LossConfig: alpha must be in (0,1), got " + std::to_string(alpha));
    if (!(gamma >= 0.0))
      throw ContractError("LossConfig: gamma must be >= 0, got " + std::to_string(gamma));
    if (!(lambda_sd >= 0.0))
      throw ContractError("LossConfig: lambda_sd must be >= 0, got " + std::to_string(lambda_sd));
  }
};

// Two-branch focal loss, mean-reduced:
//   positives: -alpha   * (1 - p)^gamma * log(p)
//   negatives: -(1-alpha) *    p^gamma  * log(1 - p)
inline DiffArray focal_loss(Tape& tape, const DiffArray& probabilities,
                            const std::vector<std::uint8_t>& positive, double alpha, double gamma) {
  if (probabilities.size() != positive.size())
    throw DimensionError("focal_loss: " + std::to_string(probabilities.size()) +
                         " probabilities vs " + std::to_string(positive.size()) + " labels");
  DiffArray pos_mask = DiffArray::zeros(probabilities.shape);
  DiffArray neg_mask = DiffArray::zeros(probabilities.shape);
  for (std::size_t i = 0; i < positive.size(); ++i) {
    pos_mask.data[i] = positive[i] ? 1.0 : 0.0;
    neg_mask.data[i] = positive[i] ? 0.0 : 1.0;
  }
  DiffArray p = tape.clamp(probabilities, kProbEps, 1.0 - kProbEps);
  DiffArray q = tape.add_const(tape.neg(p), 1.0);  // 1 - p
  DiffArray pos_term = tape.scale(tape.mul(tape.pow_const(q, gamma), tape.log(p)), -alpha);
  DiffArray neg_term = tape.scale(tape.mul(tape.pow_const(p, gamma), tape.log(q)), -(1.0 - alpha));
  DiffArray per_element =
      tape.add(tape.mul(tape.leaf(pos_mask), pos_term), tape.mul(tape.leaf(neg_mask), neg_term));
  return tape.mean(per_element);
}

inline DiffArray focal_cls_loss(Tape& tape, const DiffArray& probabilities,
                                const std::vector<std::uint8_t>& targets, const LossConfig& config) {
  config.validate();
  return focal_loss(tape, probabilities, targets, config.alpha, config.gamma);
}

// Elementwise smooth-L1: 0.5 x^2 inside |x| < 1, |x| - 0.5 outside. The
// derivative at the joint comes from the quadratic side.
inline DiffArray smooth_l1(Tape& tape, const DiffArray& x) {
  const int ix = tape.id_of(x);
  DiffArray out = DiffArray::zeros(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.data[i];
    out.data[i] = std::abs(v) < 1.0 ? 0.5 * v * v : std::abs(v) - 0.5;
  }
  return tape.record(std::move(out), {ix}, [ix](Tape& t, int self) {
    const auto& g = t.grad_buffer(self);
    const auto& xv = t.node_array(ix).data;
    auto& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xv[i];
      gx[i] += g[i] * (std::abs(v) <= 1.0 ? v : (v > 0.0 ? 1.0 : -1.0));
    }
  });
}

// Cross entropy of a logit vector against one target class, with the
// log-sum-exp stabilized by the max logit.
inline DiffArray cross_entropy_logits(Tape& tape, const DiffArray& logits, std::size_t target) {
  const int il = tape.id_of(logits);
  if (logits.rank() != 1 || logits.size() == 0)
    throw DimensionError("cross_entropy_logits: logits must be a non-empty vector, got " +
                         shape_str(logits.shape));
  if (target >= logits.size())
    throw DimensionError("cross_entropy_logits: target " + std::to_string(target) +
                         " out of range for " + std::to_string(logits.size()) + " bins");
  double hi = logits.data[0];
  for (double v : logits.data) hi = std::max(hi, v);
  double acc = 0.0;
  for (double v : logits.data) acc += std::exp(v - hi);
  const double lse = hi + std::log(acc);
  return tape.record(DiffArray::scalar(lse - logits.data[target]), {il},
                     [il, target, lse](Tape& t, int self) {
                       const double g = t.grad_buffer(self)[0];
                       const auto& lv = t.node_array(il).data;
                       auto& gl = t.grad_buffer(il);
                       for (std::size_t k = 0; k < lv.size(); ++k) {
                         const double soft = std::exp(lv[k] - lse);
                         gl[k] += g * (soft - (k == target ? 1.0 : 0.0));
                       }
                     });
}

// Predicted bin logits for the binned dimensions and residuals for all
// seven, matching the BinEncoding layout (x, y, z, h, w, l, theta).
struct BinPrediction {
  DiffArray logits_x;
  DiffArray logits_z;
  DiffArray logits_theta;
  DiffArray residuals;  // shape [7]
};

inline DiffArray bin_reg_loss(Tape& tape, const BinPrediction& pred,
                              const geom::BinEncoding& target) {
  const std::size_t xz_bins = target.config.xz_bins();
  if (pred.logits_x.size() != xz_bins || pred.logits_z.size() != xz_bins)
    throw DimensionError("bin_reg_loss: x/z logits want " + std::to_string(xz_bins) +
                         " bins, got " + shape_str(pred.logits_x.shape) + " and " +
                         shape_str(pred.logits_z.shape));
  if (pred.logits_theta.size() != target.config.theta_bins)
    throw DimensionError("bin_reg_loss: theta logits want " +
                         std::to_string(target.config.theta_bins) + " bins, got " +
                         shape_str(pred.logits_theta.shape));
  if (pred.residuals.size() != 7)
    throw DimensionError("bin_reg_loss: residuals must have 7 entries, got " +
                         shape_str(pred.residuals.shape));

  DiffArray ce = tape.add(
      tape.add(cross_entropy_logits(tape, pred.logits_x, static_cast<std::size_t>(target.bin_x)),
               cross_entropy_logits(tape, pred.logits_z, static_cast<std::size_t>(target.bin_z))),
      cross_entropy_logits(tape, pred.logits_theta, static_cast<std::size_t>(target.bin_theta)));

  DiffArray target_res({7}, {target.residuals[0], target.residuals[1], target.residuals[2],
                             target.residuals[3], target.residuals[4], target.residuals[5],
                             target.residuals[6]});
  DiffArray diff = tape.sub(pred.residuals, tape.leaf(target_res));
  return tape.add(ce, tape.sum(smooth_l1(tape, diff)));
}

struct LossParts {
  DiffArray cls;
  DiffArray reg;
};

// L_total = (L_cls + L_reg)_rpn + (L_cls + L_reg)_rcnn + lambda * L_SD.
inline DiffArray total_loss(Tape& tape, const LossParts& rpn, const LossParts& rcnn,
                            const DiffArray& l_sd, const LossConfig& config) {
  config.validate();
  for (const DiffArray* part : {&rpn.cls, &rpn.reg, &rcnn.cls, &rcnn.reg, &l_sd})
    if (!part->is_scalar())
      throw ContractError("total_loss: all parts must be scalar, got " + shape_str(part->shape));
  DiffArray l_rpn = tape.add(rpn.cls, rpn.reg);
  DiffArray l_rcnn = tape.add(rcnn.cls, rcnn.reg);
  return tape.add(tape.add(l_rpn, l_rcnn), tape.scale(l_sd, config.lambda_sd));
}

}  // namespace fusedet::losses
