#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fusseg/types.hpp"

namespace fusseg::annotation {

enum class TieBreak { larger_coverage, prefer_downward };

// The resize from ULM to fUS resolution is realized as block-mean (area)
// downsampling by default; sparse bilinear point sampling is kept as an
// alternative for sensitivity studies.
enum class ResizeMode { block_mean, bilinear };

// Where the tau threshold applies: to resized coverage (default) or to the
// raw |velocity| before the direction split.
enum class ThresholdTarget { coverage, velocity };

struct AnnotationParams {
  double tau = 0.05;
  double v_eps = 0.0; // velocity dead-zone for the sign split
  int target_h = 112;
  int target_w = 128;
  TieBreak tie_break = TieBreak::larger_coverage;
  ResizeMode resize = ResizeMode::block_mean;
  ThresholdTarget threshold_on = ThresholdTarget::coverage;

  void validate() const {
    require(tau > 0.0 && tau < 1.0, "AnnotationParams: tau in (0,1)");
    require(v_eps >= 0.0, "AnnotationParams: v_eps >= 0");
    require(target_h >= 1 && target_w >= 1, "AnnotationParams: target shape >= 1");
  }
};

struct HiResChannels {
  int h = 0, w = 0;
  std::vector<uint8_t> down, up; // disjoint by construction
};

struct Coverage {
  int h = 0, w = 0;
  std::vector<double> v; // values in [0,1]
  double at(int i, int j) const { return v[static_cast<size_t>(i) * w + j]; }
};

// D_hi = 1 where V > v_eps, U_hi = 1 where V < -v_eps.
HiResChannels split_by_direction(const UlmVelocityMap& map, double v_eps);

// Block-mean downsampling. The high-res channel is zero-padded on the
// bottom/right to the next multiple of the target shape when needed.
// Errors if the target is larger than the source.
Coverage downsample_coverage(std::span<const uint8_t> channel, int h_hi, int w_hi,
                             int target_h, int target_w);

// Sparse bilinear sampling at target pixel centers (sensitivity-study path).
Coverage downsample_bilinear(std::span<const uint8_t> channel, int h_hi, int w_hi,
                             int target_h, int target_w);

// mask = 1 where coverage >= tau (inclusive boundary).
BinaryMask binarize(const Coverage& coverage, double tau);

// Mixed pixels (both masks set) are resolved per tie_break; default keeps the
// class with larger coverage, exact ties go to downward.
TernaryLabelMap build_ternary(const DirectionMasks& masks, const Coverage& cov_down,
                              const Coverage& cov_up, TieBreak tie_break);

struct AnnotationResult {
  DirectionMasks masks;
  TernaryLabelMap labels;
  Coverage cov_down, cov_up;
  double mixed_fraction = 0.0; // fraction of pixels set in both masks before resolution
};

AnnotationResult annotate(const UlmVelocityMap& map, const AnnotationParams& params);

} // namespace fusseg::annotation
