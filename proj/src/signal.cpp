#include "fusseg/signal.hpp"

#include <cmath>

#include "fusseg/metrics.hpp"

namespace fusseg::signal {

TimeSeries extract_signal(const FusStack& stack, const BinaryMask& mask, const Roi& roi) {
  require(mask.h == stack.h && mask.w == stack.w, "extract_signal: mask shape mismatch");
  roi.validate(stack.h, stack.w);

  std::vector<size_t> selected;
  for (int i = roi.r0; i < roi.r1; ++i)
    for (int j = roi.c0; j < roi.c1; ++j)
      if (mask.at(i, j)) selected.push_back(static_cast<size_t>(i) * stack.w + j);
  require(!selected.empty(), "extract_signal: mask and ROI select no pixels");

  TimeSeries out;
  out.frame_period_s = stack.frame_period_s;
  out.values.resize(stack.t);
  const size_t npx = static_cast<size_t>(stack.h) * stack.w;
  for (int k = 0; k < stack.t; ++k) {
    const float* frame = stack.frames.data() + static_cast<size_t>(k) * npx;
    double sum = 0.0;
    for (size_t idx : selected) sum += frame[idx];
    out.values[k] = sum / static_cast<double>(selected.size());
  }
  return out;
}

TimeSeries percent_change(const TimeSeries& series, int baseline_frames) {
  require(baseline_frames >= 1, "percent_change: baseline_frames >= 1");
  require(baseline_frames <= static_cast<int>(series.values.size()),
          "percent_change: baseline longer than series");
  double m = 0.0;
  for (int k = 0; k < baseline_frames; ++k) m += series.values[k];
  m /= baseline_frames;
  require(m != 0.0, "percent_change: zero baseline mean");

  TimeSeries out;
  out.frame_period_s = series.frame_period_s;
  out.label = series.label;
  out.values.resize(series.values.size());
  for (size_t k = 0; k < series.values.size(); ++k)
    out.values[k] = 100.0 * (series.values[k] - m) / m;
  return out;
}

double compare_signals(const TimeSeries& a, const TimeSeries& b) {
  return metrics::pearson(a.values, b.values);
}

} // namespace fusseg::signal
