#include "fusseg/annotation.hpp"

#include <algorithm>
#include <cmath>

namespace fusseg::annotation {

HiResChannels split_by_direction(const UlmVelocityMap& map, double v_eps) {
  map.validate();
  require(v_eps >= 0.0, "split_by_direction: v_eps >= 0");
  HiResChannels out;
  out.h = map.h;
  out.w = map.w;
  const size_t n = map.values.size();
  out.down.assign(n, 0);
  out.up.assign(n, 0);
  for (size_t i = 0; i < n; ++i) {
    const double v = map.values[i];
    if (v > v_eps)
      out.down[i] = 1;
    else if (v < -v_eps)
      out.up[i] = 1;
  }
  return out;
}

Coverage downsample_coverage(std::span<const uint8_t> channel, int h_hi, int w_hi,
                             int target_h, int target_w) {
  require(h_hi >= 1 && w_hi >= 1, "downsample_coverage: empty source");
  require(channel.size() == static_cast<size_t>(h_hi) * w_hi, "downsample_coverage: size mismatch");
  require(target_h <= h_hi && target_w <= w_hi, "downsample_coverage: target larger than source");

  const int bh = (h_hi + target_h - 1) / target_h; // block height after zero padding
  const int bw = (w_hi + target_w - 1) / target_w;
  const double block_area = static_cast<double>(bh) * bw;

  Coverage cov;
  cov.h = target_h;
  cov.w = target_w;
  cov.v.assign(static_cast<size_t>(target_h) * target_w, 0.0);
  for (int bi = 0; bi < target_h; ++bi) {
    for (int bj = 0; bj < target_w; ++bj) {
      int64_t count = 0;
      const int r1 = std::min(h_hi, (bi + 1) * bh);
      const int c1 = std::min(w_hi, (bj + 1) * bw);
      for (int r = bi * bh; r < r1; ++r)
        for (int c = bj * bw; c < c1; ++c) count += channel[static_cast<size_t>(r) * w_hi + c];
      cov.v[static_cast<size_t>(bi) * target_w + bj] = static_cast<double>(count) / block_area;
    }
  }
  return cov;
}

Coverage downsample_bilinear(std::span<const uint8_t> channel, int h_hi, int w_hi,
                             int target_h, int target_w) {
  require(channel.size() == static_cast<size_t>(h_hi) * w_hi, "downsample_bilinear: size mismatch");
  require(target_h <= h_hi && target_w <= w_hi, "downsample_bilinear: target larger than source");
  Coverage cov;
  cov.h = target_h;
  cov.w = target_w;
  cov.v.assign(static_cast<size_t>(target_h) * target_w, 0.0);
  const double sy = static_cast<double>(h_hi) / target_h;
  const double sx = static_cast<double>(w_hi) / target_w;
  auto px = [&](int r, int c) -> double {
    r = std::clamp(r, 0, h_hi - 1);
    c = std::clamp(c, 0, w_hi - 1);
    return channel[static_cast<size_t>(r) * w_hi + c];
  };
  for (int i = 0; i < target_h; ++i) {
    for (int j = 0; j < target_w; ++j) {
      const double y = (i + 0.5) * sy - 0.5;
      const double x = (j + 0.5) * sx - 0.5;
      const int y0 = static_cast<int>(std::floor(y));
      const int x0 = static_cast<int>(std::floor(x));
      const double fy = y - y0, fx = x - x0;
      cov.v[static_cast<size_t>(i) * target_w + j] =
          px(y0, x0) * (1 - fy) * (1 - fx) + px(y0, x0 + 1) * (1 - fy) * fx +
          px(y0 + 1, x0) * fy * (1 - fx) + px(y0 + 1, x0 + 1) * fy * fx;
    }
  }
  return cov;
}

BinaryMask binarize(const Coverage& coverage, double tau) {
  BinaryMask m(coverage.h, coverage.w);
  for (size_t i = 0; i < coverage.v.size(); ++i) m.v[i] = (coverage.v[i] >= tau) ? 1 : 0;
  return m;
}

TernaryLabelMap build_ternary(const DirectionMasks& masks, const Coverage& cov_down,
                              const Coverage& cov_up, TieBreak tie_break) {
  const int h = masks.downward.h, w = masks.downward.w;
  require(masks.upward.h == h && masks.upward.w == w, "build_ternary: mask shape mismatch");
  require(cov_down.h == h && cov_down.w == w && cov_up.h == h && cov_up.w == w,
          "build_ternary: coverage shape mismatch");
  TernaryLabelMap out(h, w);
  const size_t n = static_cast<size_t>(h) * w;
  for (size_t i = 0; i < n; ++i) {
    const bool d = masks.downward.v[i] != 0;
    const bool u = masks.upward.v[i] != 0;
    if (d && u) {
      if (tie_break == TieBreak::prefer_downward)
        out.labels[i] = kDownward;
      else
        out.labels[i] = (cov_up.v[i] > cov_down.v[i]) ? kUpward : kDownward;
    } else if (d) {
      out.labels[i] = kDownward;
    } else if (u) {
      out.labels[i] = kUpward;
    } else {
      out.labels[i] = kBackground;
    }
  }
  return out;
}

AnnotationResult annotate(const UlmVelocityMap& map, const AnnotationParams& params) {
  params.validate();

  double split_eps = params.v_eps;
  double cov_tau = params.tau;
  if (params.threshold_on == ThresholdTarget::velocity) {
    // tau applies to |velocity|; any surviving coverage counts.
    split_eps = std::max(params.v_eps, params.tau);
    cov_tau = 1e-12;
  }

  HiResChannels hires = split_by_direction(map, split_eps);

  auto down = params.resize == ResizeMode::block_mean
                  ? downsample_coverage(hires.down, hires.h, hires.w, params.target_h, params.target_w)
                  : downsample_bilinear(hires.down, hires.h, hires.w, params.target_h, params.target_w);
  auto up = params.resize == ResizeMode::block_mean
                ? downsample_coverage(hires.up, hires.h, hires.w, params.target_h, params.target_w)
                : downsample_bilinear(hires.up, hires.h, hires.w, params.target_h, params.target_w);

  AnnotationResult res;
  res.masks.downward = binarize(down, cov_tau);
  res.masks.upward = binarize(up, cov_tau);
  res.masks.tau = params.tau;

  int64_t mixed = 0;
  const size_t n = res.masks.downward.v.size();
  for (size_t i = 0; i < n; ++i)
    if (res.masks.downward.v[i] && res.masks.upward.v[i]) ++mixed;
  res.mixed_fraction = static_cast<double>(mixed) / static_cast<double>(n);

  res.labels = build_ternary(res.masks, down, up, params.tie_break);
  res.cov_down = std::move(down);
  res.cov_up = std::move(up);
  return res;
}

} // namespace fusseg::annotation
