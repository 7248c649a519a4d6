#pragma once

#include <string>
#include <vector>

#include "fusseg/types.hpp"

namespace fusseg::signal {

// Rectangular region of interest: rows [r0, r1), columns [c0, c1).
struct Roi {
  int r0 = 0, r1 = 0, c0 = 0, c1 = 0;

  void validate(int h, int w) const {
    require(r0 >= 0 && c0 >= 0 && r1 <= h && c1 <= w, "Roi: out of image bounds");
    require(r0 < r1 && c0 < c1, "Roi: empty region");
  }
  static Roi full(int h, int w) { return {0, h, 0, w}; }
};

struct TimeSeries {
  std::vector<double> values;
  double frame_period_s = 0.4;
  std::string label;
};

// Per-frame mean of the stack over mask-and-roi pixels.
TimeSeries extract_signal(const FusStack& stack, const BinaryMask& mask, const Roi& roi);

// 100 * (s[k] - m) / m with m the mean of the first baseline_frames values.
TimeSeries percent_change(const TimeSeries& series, int baseline_frames);

// Pearson correlation between the two series.
double compare_signals(const TimeSeries& a, const TimeSeries& b);

} // namespace fusseg::signal
