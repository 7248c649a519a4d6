#pragma once

#include <span>
#include <string>
#include <vector>

#include "fusseg/types.hpp"

namespace fusseg::losses {

struct LossWeights {
  double alpha = 0.5, beta = 0.5, gamma = 0.0;
};

enum class CfVariant { cf_b, cf_v, cf };

// Every loss takes the predicted probability map S and the ternary ground
// truth T and optionally accumulates dL/dS into *grad (class-major [3*H*W],
// resized and zeroed by the callee when provided). All terms are expressed in
// differentiable primitives; gradients are exact except at the measure-zero
// kinks of |.| and per-box max, where a subgradient is returned.

// Mean over pixels of -log S_{i, true class}; probabilities clamped to
// [1e-7, 1] before the log.
double ce_loss(const SoftSegmentation& s, const TernaryLabelMap& t, std::vector<double>* grad = nullptr);

// Mean over the three classes of 1 - 2*sum(S_c T_c) / (sum S_c + sum T_c + 1e-6).
double dice_loss(const SoftSegmentation& s, const TernaryLabelMap& t, std::vector<double>* grad = nullptr);

// alpha * CE + beta * Dice.
double dice_ce_loss(const SoftSegmentation& s, const TernaryLabelMap& t, const LossWeights& w,
                    std::vector<double>* grad = nullptr);

// |sum S_d - sum T_d| / P + |sum S_u - sum T_u| / P (background excluded).
double vessel_density_loss(const SoftSegmentation& s, const TernaryLabelMap& t,
                           std::vector<double>* grad = nullptr);

// All powers of two in [2, min(h, w)], ascending.
std::vector<int> box_scales(int h, int w);

// Differentiable box count: sum over the eps-grid boxes of the per-box max.
// Recovers the classical box count on binary inputs.
double soft_box_count(std::span<const double> channel, int h, int w, int eps);

// sum over classes of (1/sqrt(sum eps_i^2)) * sum_i sqrt(eps_i) *
// |N_T(eps_i) - N_S(eps_i)| / max(N_T(eps_i), 1e-6); scale terms with
// N_T = 0 contribute 0.
double box_counting_loss(const SoftSegmentation& s, const TernaryLabelMap& t,
                         std::vector<double>* grad = nullptr, bool include_background = true);

// CF composites: cf_b = alpha*CE + gamma*L_B; cf_v = alpha*CE + beta*L_V;
// cf = alpha*CE + gamma*L_B + beta*L_V.
double cf_loss(const SoftSegmentation& s, const TernaryLabelMap& t, const LossWeights& w,
               CfVariant variant, std::vector<double>* grad = nullptr);

// Dispatch by the RunConfig loss id: dice_ce | cf_b | cf_v | cf.
double loss_by_id(const std::string& id, const SoftSegmentation& s, const TernaryLabelMap& t,
                  const LossWeights& w, std::vector<double>* grad = nullptr);

// Minkowski-Bouligand dimension estimate: negated least-squares slope of
// log N(eps) vs log eps over box_scales. Diagnostic only; errors on an empty mask.
double estimate_fractal_dimension(const BinaryMask& mask);

} // namespace fusseg::losses
