#include "fusseg/losses.hpp"

#include <algorithm>
#include <cmath>

namespace fusseg::losses {

namespace {

constexpr double kProbClamp = 1e-7;
constexpr double kDiceEps = 1e-6;
constexpr double kBoxDelta = 1e-6;

void check_shapes(const SoftSegmentation& s, const TernaryLabelMap& t) {
  require(s.h == t.h && s.w == t.w, "loss: S and T shape mismatch");
  require(s.h >= 1 && s.w >= 1, "loss: empty inputs");
}

void init_grad(std::vector<double>* grad, size_t n) {
  if (grad) grad->assign(n, 0.0);
}

} // namespace

double ce_loss(const SoftSegmentation& s, const TernaryLabelMap& t, std::vector<double>* grad) {
  check_shapes(s, t);
  const size_t n = static_cast<size_t>(s.h) * s.w;
  init_grad(grad, 3 * n);
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const size_t c = t.labels[i];
    const double p = s.probs[c * n + i];
    const double pc = std::clamp(p, kProbClamp, 1.0);
    sum -= std::log(pc);
    // Zero gradient below the clamp floor (subgradient of the clamp).
    if (grad && p > kProbClamp) (*grad)[c * n + i] -= 1.0 / (pc * static_cast<double>(n));
  }
  return sum / static_cast<double>(n);
}

double dice_loss(const SoftSegmentation& s, const TernaryLabelMap& t, std::vector<double>* grad) {
  check_shapes(s, t);
  const size_t n = static_cast<size_t>(s.h) * s.w;
  init_grad(grad, 3 * n);
  double total = 0.0;
  for (int c = 0; c < kNumClasses; ++c) {
    const double* sc = s.probs.data() + static_cast<size_t>(c) * n;
    double inter = 0.0, sum_s = 0.0, sum_t = 0.0;
    for (size_t i = 0; i < n; ++i) {
      const double tc = (t.labels[i] == c) ? 1.0 : 0.0;
      inter += sc[i] * tc;
      sum_s += sc[i];
      sum_t += tc;
    }
    const double denom = sum_s + sum_t + kDiceEps;
    total += 1.0 - 2.0 * inter / denom;
    if (grad) {
      // d/dS_ic [ -2 I / D ] = -2 (T_ic * D - I) / D^2, averaged over classes.
      const double inv3 = 1.0 / kNumClasses;
      for (size_t i = 0; i < n; ++i) {
        const double tc = (t.labels[i] == c) ? 1.0 : 0.0;
        (*grad)[static_cast<size_t>(c) * n + i] += inv3 * (-2.0 * (tc * denom - inter) / (denom * denom));
      }
    }
  }
  return total / kNumClasses;
}

double dice_ce_loss(const SoftSegmentation& s, const TernaryLabelMap& t, const LossWeights& w,
                    std::vector<double>* grad) {
  std::vector<double> g1, g2;
  const double ce = ce_loss(s, t, grad ? &g1 : nullptr);
  const double dice = dice_loss(s, t, grad ? &g2 : nullptr);
  if (grad) {
    grad->assign(g1.size(), 0.0);
    for (size_t i = 0; i < g1.size(); ++i) (*grad)[i] = w.alpha * g1[i] + w.beta * g2[i];
  }
  return w.alpha * ce + w.beta * dice;
}

double vessel_density_loss(const SoftSegmentation& s, const TernaryLabelMap& t,
                           std::vector<double>* grad) {
  check_shapes(s, t);
  const size_t n = static_cast<size_t>(s.h) * s.w;
  init_grad(grad, 3 * n);
  const double p = static_cast<double>(n);
  double total = 0.0;
  for (int c : {kDownward, kUpward}) {
    const double* sc = s.probs.data() + static_cast<size_t>(c) * n;
    double sum_s = 0.0;
    int64_t sum_t = 0;
    for (size_t i = 0; i < n; ++i) {
      sum_s += sc[i];
      sum_t += (t.labels[i] == c) ? 1 : 0;
    }
    const double diff = (sum_s - static_cast<double>(sum_t)) / p;
    total += std::abs(diff);
    if (grad) {
      const double sg = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      for (size_t i = 0; i < n; ++i) (*grad)[static_cast<size_t>(c) * n + i] += sg / p;
    }
  }
  return total;
}

std::vector<int> box_scales(int h, int w) {
  require(std::min(h, w) >= 2, "box_scales: min(H,W) >= 2 required");
  std::vector<int> scales;
  for (int e = 2; e <= std::min(h, w); e *= 2) scales.push_back(e);
  return scales;
}

double soft_box_count(std::span<const double> channel, int h, int w, int eps) {
  require(eps >= 1, "soft_box_count: eps >= 1");
  require(channel.size() == static_cast<size_t>(h) * w, "soft_box_count: size mismatch");
  double count = 0.0;
  for (int bi = 0; bi < h; bi += eps) {
    for (int bj = 0; bj < w; bj += eps) {
      double m = 0.0;
      const int r1 = std::min(h, bi + eps);
      const int c1 = std::min(w, bj + eps);
      for (int r = bi; r < r1; ++r)
        for (int c = bj; c < c1; ++c) m = std::max(m, channel[static_cast<size_t>(r) * w + c]);
      count += m;
    }
  }
  return count;
}

namespace {

// Box count plus the flat index of each box's (first) argmax, for the backward pass.
double soft_box_count_argmax(const double* channel, int h, int w, int eps,
                             std::vector<size_t>& argmax) {
  argmax.clear();
  double count = 0.0;
  for (int bi = 0; bi < h; bi += eps) {
    for (int bj = 0; bj < w; bj += eps) {
      double m = -1.0;
      size_t arg = 0;
      const int r1 = std::min(h, bi + eps);
      const int c1 = std::min(w, bj + eps);
      for (int r = bi; r < r1; ++r)
        for (int c = bj; c < c1; ++c) {
          const size_t idx = static_cast<size_t>(r) * w + c;
          if (channel[idx] > m) {
            m = channel[idx];
            arg = idx;
          }
        }
      count += m;
      argmax.push_back(arg);
    }
  }
  return count;
}

} // namespace

double box_counting_loss(const SoftSegmentation& s, const TernaryLabelMap& t,
                         std::vector<double>* grad, bool include_background) {
  check_shapes(s, t);
  const size_t n = static_cast<size_t>(s.h) * s.w;
  init_grad(grad, 3 * n);

  const auto scales = box_scales(s.h, s.w);
  double norm = 0.0;
  for (int e : scales) norm += static_cast<double>(e) * e;
  norm = 1.0 / std::sqrt(norm);

  std::vector<double> t_chan(n);
  std::vector<size_t> argmax;
  double total = 0.0;
  for (int c = 0; c < kNumClasses; ++c) {
    if (!include_background && c == kBackground) continue;
    const double* sc = s.probs.data() + static_cast<size_t>(c) * n;
    for (size_t i = 0; i < n; ++i) t_chan[i] = (t.labels[i] == c) ? 1.0 : 0.0;
    for (int e : scales) {
      const double n_t = soft_box_count(t_chan, s.h, s.w, e);
      if (n_t <= 0.0) continue; // empty ground truth at this scale contributes 0
      const double n_s = soft_box_count_argmax(sc, s.h, s.w, e, argmax);
      const double diff = n_t - n_s;
      // sqrt(eps * x^2) evaluated as sqrt(eps)*|x| to keep a usable subgradient at 0.
      total += norm * std::sqrt(static_cast<double>(e)) * std::abs(diff) / std::max(n_t, kBoxDelta);
      if (grad) {
        const double sg = diff > 0.0 ? -1.0 : (diff < 0.0 ? 1.0 : 0.0); // d|n_t - n_s|/d n_s
        const double coef = norm * std::sqrt(static_cast<double>(e)) * sg / std::max(n_t, kBoxDelta);
        for (size_t a : argmax) (*grad)[static_cast<size_t>(c) * n + a] += coef;
      }
    }
  }
  return total;
}

double cf_loss(const SoftSegmentation& s, const TernaryLabelMap& t, const LossWeights& w,
               CfVariant variant, std::vector<double>* grad) {
  std::vector<double> gce, gb, gv;
  const double ce = ce_loss(s, t, grad ? &gce : nullptr);
  double total = w.alpha * ce;
  double lb = 0.0, lv = 0.0;
  const bool use_b = variant == CfVariant::cf_b || variant == CfVariant::cf;
  const bool use_v = variant == CfVariant::cf_v || variant == CfVariant::cf;
  if (use_b) {
    lb = box_counting_loss(s, t, grad ? &gb : nullptr);
    total += w.gamma * lb;
  }
  if (use_v) {
    lv = vessel_density_loss(s, t, grad ? &gv : nullptr);
    total += w.beta * lv;
  }
  if (grad) {
    grad->assign(gce.size(), 0.0);
    for (size_t i = 0; i < gce.size(); ++i) {
      double g = w.alpha * gce[i];
      if (use_b) g += w.gamma * gb[i];
      if (use_v) g += w.beta * gv[i];
      (*grad)[i] = g;
    }
  }
  return total;
}

double loss_by_id(const std::string& id, const SoftSegmentation& s, const TernaryLabelMap& t,
                  const LossWeights& w, std::vector<double>* grad) {
  if (id == "dice_ce") return dice_ce_loss(s, t, w, grad);
  if (id == "cf_b") return cf_loss(s, t, w, CfVariant::cf_b, grad);
  if (id == "cf_v") return cf_loss(s, t, w, CfVariant::cf_v, grad);
  if (id == "cf") return cf_loss(s, t, w, CfVariant::cf, grad);
  throw ValidationError("loss_by_id: unknown loss '" + id + "'");
}

double estimate_fractal_dimension(const BinaryMask& mask) {
  require(mask.h >= 2 && mask.w >= 2, "estimate_fractal_dimension: mask too small");
  require(mask.count() > 0, "estimate_fractal_dimension: empty mask");
  const size_t n = static_cast<size_t>(mask.h) * mask.w;
  std::vector<double> chan(n);
  for (size_t i = 0; i < n; ++i) chan[i] = mask.v[i];

  const auto scales = box_scales(mask.h, mask.w);
  // Least-squares slope of log N vs log eps; d_f is the negated slope.
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (int e : scales) {
    const double x = std::log(static_cast<double>(e));
    const double y = std::log(soft_box_count(chan, mask.h, mask.w, e));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double m = static_cast<double>(scales.size());
  const double denom = m * sxx - sx * sx;
  if (denom == 0.0) return 0.0; // single scale: flat fit
  return -(m * sxy - sx * sy) / denom;
}

} // namespace fusseg::losses
