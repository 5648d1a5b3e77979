#pragma once

// Training losses: binary cross-entropy, soft Dice loss and the two-decoder
// weighted combination. Each loss is available as a plain function returning
// value + gradient wrt the probabilities, and as a graph op.

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dualswin/autograd.hpp"
#include "dualswin/errors.hpp"
#include "dualswin/model.hpp"
#include "dualswin/nn.hpp"
#include "dualswin/tensor.hpp"

namespace dualswin {

inline constexpr double kBceClamp = 1e-7;
inline constexpr double kDiceSmooth = 1e-6;

struct LossWeights {
  double alpha = 0.5;  // BCE share of the thyroid term
  double beta = 0.5;   // BCE share of the PTMC term

  void validate() const {
    if (!(alpha >= 0 && alpha <= 1) || !(beta >= 0 && beta <= 1)) {
      throw std::invalid_argument("loss weights alpha and beta must lie in [0, 1]");
    }
  }
};

template <class Real>
struct LossResult {
  double value = 0;
  Tensor<Real> grad;  // d value / d probability
};

/// −(1/N) Σ [y log p + (1−y) log(1−p)] with p clamped to [ε, 1−ε].
template <class Real>
LossResult<Real> bce(const Tensor<Real>& target, const Tensor<Real>& prob) {
  target.require_same_shape(prob, "bce");
  LossResult<Real> out{0.0, Tensor<Real>(prob.shape())};
  const double n = static_cast<double>(prob.size());
  double total = 0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const double p = std::clamp(static_cast<double>(prob[i]), kBceClamp, 1.0 - kBceClamp);
    const double y = target[i];
    total += y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    out.grad[i] = static_cast<Real>((p - y) / (n * p * (1.0 - p)));
  }
  out.value = -total / n;
  return out;
}

/// 1 − (2Σyp + s)/(Σy + Σp + s), s = kDiceSmooth by default.
template <class Real>
LossResult<Real> dice_loss(const Tensor<Real>& target, const Tensor<Real>& prob, double smooth = kDiceSmooth) {
  target.require_same_shape(prob, "dice_loss");
  double inter = 0, total = 0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    inter += static_cast<double>(target[i]) * prob[i];
    total += static_cast<double>(target[i]) + prob[i];
  }
  const double num = 2 * inter + smooth;
  const double den = total + smooth;
  LossResult<Real> out{1.0 - num / den, Tensor<Real>(prob.shape())};
  for (std::size_t i = 0; i < prob.size(); ++i) {
    out.grad[i] = static_cast<Real>(-(2.0 * target[i] * den - num) / (den * den));
  }
  return out;
}

/// ½[α·BCE(p₁,y₁) + (1−α)·DL(p₁,y₁) + β·BCE(p₂,y₂) + (1−β)·DL(p₂,y₂)] on
/// probability maps.
template <class Real>
double combined_loss_value(const Tensor<Real>& prob_thyroid, const Tensor<Real>& y_thyroid,
                           const Tensor<Real>& prob_ptmc, const Tensor<Real>& y_ptmc, LossWeights w) {
  w.validate();
  return 0.5 * (w.alpha * bce(y_thyroid, prob_thyroid).value +
                (1 - w.alpha) * dice_loss(y_thyroid, prob_thyroid).value +
                w.beta * bce(y_ptmc, prob_ptmc).value + (1 - w.beta) * dice_loss(y_ptmc, prob_ptmc).value);
}

// ---------------------------------------------------------------------------
// graph ops

/// scale·[w_bce·BCE(p, y_bce) + w_dice·DL(p, y)] as a scalar Var over probabilities.
template <class Real>
Var<Real> segmentation_loss(const Var<Real>& prob, const Tensor<Real>& target, double bce_weight,
                            double dice_weight, const Tensor<Real>* bce_target = nullptr) {
  if (prob.shape() != target.shape()) {
    throw ShapeError("segmentation loss: prediction " + to_string(prob.shape()) + " vs target " +
                     to_string(target.shape()));
  }
  const auto b = bce(bce_target ? *bce_target : target, prob.value());
  const auto d = dice_loss(target, prob.value());
  Tensor<Real> grad(prob.shape());
  for (std::size_t i = 0; i < grad.size(); ++i) {
    grad[i] = static_cast<Real>(bce_weight * b.grad[i] + dice_weight * d.grad[i]);
  }
  const double value = bce_weight * b.value + dice_weight * d.value;
  return make_result<Real>(Tensor<Real>({1}, static_cast<Real>(value)), {prob},
                           [grad = std::move(grad)](Node<Real>& self) {
                             auto* g = grad_sink(self, 0);
                             if (!g) return;
                             const Real up = self.grad[0];
                             for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += up * grad[i];
                           });
}

template <class Real>
Tensor<Real> smooth_labels(const Tensor<Real>& y, double amount) {
  Tensor<Real> out = y;
  for (auto& v : out.data()) v = static_cast<Real>(v * (1.0 - amount) + 0.5 * amount);
  return out;
}

/// Combined two-decoder loss on logits. Targets are [B, img, img, 1] in {0,1}.
/// For a single-decoder model only the PTMC term β·BCE + (1−β)·DL is used.
/// `label_smoothing` > 0 softens the BCE targets only.
template <class Real>
Var<Real> combined_loss(const DualPrediction<Real>& pred, const Tensor<Real>& y_thyroid,
                        const Tensor<Real>& y_ptmc, LossWeights w, double label_smoothing = 0.0) {
  w.validate();
  const auto term = [&](const Var<Real>& logits, const Tensor<Real>& y, double bce_share, double scale) {
    if (label_smoothing > 0) {
      const Tensor<Real> soft = smooth_labels(y, label_smoothing);
      return segmentation_loss(nn::sigmoid(logits), y, scale * bce_share, scale * (1 - bce_share), &soft);
    }
    return segmentation_loss(nn::sigmoid(logits), y, scale * bce_share, scale * (1 - bce_share));
  };
  if (!pred.thyroid_logits.defined()) return term(pred.ptmc_logits, y_ptmc, w.beta, 1.0);
  return nn::add(term(pred.thyroid_logits, y_thyroid, w.alpha, 0.5), term(pred.ptmc_logits, y_ptmc, w.beta, 0.5));
}

}  // namespace dualswin
