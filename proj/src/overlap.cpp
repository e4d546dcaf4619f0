#include "voxelseg/overlap.hpp"

#include <cmath>

#include "voxelseg/error.hpp"

namespace voxelseg::overlap {
namespace {

// Coefficient = num_tp * tp / (den_tp * tp + den_fp * fp + den_fn * fn).
struct Weights {
  double num_tp, den_tp, den_fp, den_fn;
};

Weights weights_for(LossKind kind, const TverskyParams& p) {
  switch (kind) {
    case LossKind::Jaccard: return {1.0, 1.0, 1.0, 1.0};
    case LossKind::Dice: return {2.0, 2.0, 1.0, 1.0};
    case LossKind::Tversky: return {1.0, 1.0, p.alpha, p.beta};
  }
  return {1.0, 1.0, 1.0, 1.0};
}

void check_same_size(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorCode::ShapeMismatch, "prediction and truth differ in size");
}

void check_binary(std::span<const double> values, const char* what) {
  for (double x : values) {
    if (x != 0.0 && x != 1.0) fail(ErrorCode::NonBinaryInput, std::string(what) + " is not a binary mask");
  }
}

}  // namespace

void TverskyParams::validate() const {
  if (!(alpha >= 0.0 && beta >= 0.0) || std::abs(alpha + beta - 1.0) > 1e-12) {
    fail(ErrorCode::InvalidParams, "Tversky weights need alpha, beta >= 0 and alpha + beta = 1");
  }
  if (!(epsilon > 0.0)) fail(ErrorCode::InvalidParams, "epsilon must be positive");
}

OverlapCounts counts(std::span<const double> pred, std::span<const double> truth) {
  check_same_size(pred, truth);
  check_binary(pred, "prediction");
  check_binary(truth, "truth");
  OverlapCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0.0;
    const bool g = truth[i] != 0.0;
    c.tp += (p && g) ? 1.0 : 0.0;
    c.fp += (p && !g) ? 1.0 : 0.0;
    c.fn += (!p && g) ? 1.0 : 0.0;
  }
  return c;
}

double coefficient(const OverlapCounts& c, LossKind kind, const TverskyParams& p) {
  if (kind == LossKind::Tversky) p.validate();
  if (c.tp == 0.0 && c.fp == 0.0 && c.fn == 0.0) return 1.0;
  if (c.tp == 0.0) return 0.0;
  const Weights w = weights_for(kind, p);
  return w.num_tp * c.tp / (w.den_tp * c.tp + w.den_fp * c.fp + w.den_fn * c.fn);
}

double jaccard(const OverlapCounts& c) { return coefficient(c, LossKind::Jaccard); }
double dice(const OverlapCounts& c) { return coefficient(c, LossKind::Dice); }
double tversky(const OverlapCounts& c, const TverskyParams& p) { return coefficient(c, LossKind::Tversky, p); }

OverlapCounts soft_counts(std::span<const double> pred, std::span<const double> truth) {
  check_same_size(pred, truth);
  check_binary(truth, "truth");
  OverlapCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = pred[i];
    if (!(p >= 0.0 && p <= 1.0)) fail(ErrorCode::OutOfRange, "prediction outside [0, 1]");
    const double g = truth[i];
    c.tp += p * g;
    c.fp += p * (1.0 - g);
    c.fn += (1.0 - p) * g;
  }
  return c;
}

double soft_loss(std::span<const double> pred, std::span<const double> truth, LossKind kind,
                 const TverskyParams& p) {
  p.validate();
  const OverlapCounts c = soft_counts(pred, truth);
  const Weights w = weights_for(kind, p);
  const double num = w.num_tp * c.tp + p.epsilon;
  const double den = w.den_tp * c.tp + w.den_fp * c.fp + w.den_fn * c.fn + p.epsilon;
  return 1.0 - num / den;
}

LossAndGrad soft_loss_grad(std::span<const double> pred, std::span<const double> truth, LossKind kind,
                           const TverskyParams& p) {
  p.validate();
  const OverlapCounts c = soft_counts(pred, truth);
  const Weights w = weights_for(kind, p);
  const double num = w.num_tp * c.tp + p.epsilon;
  const double den = w.den_tp * c.tp + w.den_fp * c.fp + w.den_fn * c.fn + p.epsilon;

  LossAndGrad out;
  out.loss = 1.0 - num / den;
  out.grad.resize(pred.size());
  // d tp/dp = g, d fp/dp = 1 - g, d fn/dp = -g.
  const double inv_den = 1.0 / den;
  const double ratio = num * inv_den * inv_den;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double g = truth[i];
    const double dnum = w.num_tp * g;
    const double dden = w.den_tp * g + w.den_fp * (1.0 - g) - w.den_fn * g;
    out.grad[i] = -(dnum * inv_den - ratio * dden);
  }
  return out;
}

}  // namespace voxelseg::overlap
