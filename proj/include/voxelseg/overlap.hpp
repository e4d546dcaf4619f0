#pragma once

#include <span>
#include <vector>

namespace voxelseg::overlap {

// |P ∩ G|, |P \ G|, |G \ P|. Real-valued so the soft relaxation fits the same type.
struct OverlapCounts {
  double tp = 0.0;
  double fp = 0.0;
  double fn = 0.0;
};

struct TverskyParams {
  double alpha = 0.5;  // weight on false positives
  double beta = 0.5;   // weight on false negatives
  double epsilon = 1e-6;

  // Throws InvalidParams unless alpha, beta >= 0, alpha + beta == 1 and epsilon > 0.
  void validate() const;
  static TverskyParams from_alpha(double alpha, double epsilon = 1e-6) {
    return {alpha, 1.0 - alpha, epsilon};
  }
};

enum class LossKind { Jaccard, Dice, Tversky };

OverlapCounts counts(std::span<const double> pred, std::span<const double> truth);

// Hard coefficients. All-zero counts (both masks empty) score 1.
double jaccard(const OverlapCounts& c);
double dice(const OverlapCounts& c);
double tversky(const OverlapCounts& c, const TverskyParams& p);
double coefficient(const OverlapCounts& c, LossKind kind, const TverskyParams& p = {});

OverlapCounts soft_counts(std::span<const double> pred, std::span<const double> truth);

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

// loss = 1 - (num + eps) / (den + eps) with num/den the kind's coefficient
// terms over soft counts; grad is d loss / d pred.
LossAndGrad soft_loss_grad(std::span<const double> pred, std::span<const double> truth, LossKind kind,
                           const TverskyParams& p = {});

double soft_loss(std::span<const double> pred, std::span<const double> truth, LossKind kind,
                 const TverskyParams& p = {});

}  // namespace voxelseg::overlap
