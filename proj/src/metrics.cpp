#include "fusseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fusseg::metrics {

ConfusionCounts confusion(const TernaryLabelMap& pred, const TernaryLabelMap& truth) {
  require(pred.h == truth.h && pred.w == truth.w, "confusion: shape mismatch");
  pred.validate();
  truth.validate();
  ConfusionCounts out;
  out.pixels = static_cast<int64_t>(pred.h) * pred.w;
  for (size_t i = 0; i < pred.labels.size(); ++i) {
    const int p = pred.labels[i];
    const int t = truth.labels[i];
    for (int c = 0; c < kNumClasses; ++c) {
      ClassCounts& cc = out.per_class[c];
      if (t == c && p == c)
        ++cc.tp;
      else if (t != c && p == c)
        ++cc.fp;
      else if (t == c && p != c)
        ++cc.fn;
      else
        ++cc.tn;
    }
  }
  return out;
}

namespace {

// Degenerate-denominator convention: a ratio whose denominator is zero scores
// 1 when the class is absent from both prediction and truth, 0 otherwise.
double safe_ratio(int64_t num, int64_t denom, bool both_absent, bool* flagged) {
  if (denom > 0) return static_cast<double>(num) / static_cast<double>(denom);
  *flagged = true;
  return both_absent ? 1.0 : 0.0;
}

} // namespace

MetricsReport compute_metrics(const ConfusionCounts& counts) {
  MetricsReport rep;
  rep.pixels = counts.pixels;
  int64_t correct = 0;
  for (const auto& cc : counts.per_class) correct += cc.tp;
  rep.accuracy = counts.pixels > 0 ? static_cast<double>(correct) / counts.pixels : 0.0;

  for (int c = 0; c < kNumClasses; ++c) {
    const ClassCounts& cc = counts.per_class[c];
    require(cc.total() == counts.pixels, "compute_metrics: inconsistent counts");
    ClassMetrics& m = rep.per_class[c];
    const bool in_truth = cc.tp + cc.fn > 0;
    const bool in_pred = cc.tp + cc.fp > 0;
    const bool both_absent = !in_truth && !in_pred;
    bool flagged = false;
    m.precision = safe_ratio(cc.tp, cc.tp + cc.fp, both_absent, &flagged);
    m.recall = safe_ratio(cc.tp, cc.tp + cc.fn, both_absent, &flagged);
    // TN+FP == 0 means truth is entirely class c; score 1 only when the
    // prediction is entirely class c as well (FN == 0).
    m.specificity = safe_ratio(cc.tn, cc.tn + cc.fp, cc.fn == 0, &flagged);
    m.jaccard = safe_ratio(cc.tp, cc.tp + cc.fp + cc.fn, both_absent, &flagged);
    if (m.precision + m.recall > 0.0)
      m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    else {
      m.f1 = both_absent ? 1.0 : 0.0;
      flagged = flagged || !both_absent;
    }
    m.flagged = flagged;
    rep.precision_macro += m.precision / kNumClasses;
    rep.recall_macro += m.recall / kNumClasses;
    rep.f1_macro += m.f1 / kNumClasses;
    rep.specificity_macro += m.specificity / kNumClasses;
    rep.jaccard_mean += m.jaccard / kNumClasses;
  }
  return rep;
}

MetricsReport average_reports(std::span<const MetricsReport> reports) {
  require(!reports.empty(), "average_reports: empty");
  MetricsReport out;
  const double k = static_cast<double>(reports.size());
  for (const auto& r : reports) {
    out.accuracy += r.accuracy / k;
    out.precision_macro += r.precision_macro / k;
    out.recall_macro += r.recall_macro / k;
    out.f1_macro += r.f1_macro / k;
    out.specificity_macro += r.specificity_macro / k;
    out.jaccard_mean += r.jaccard_mean / k;
    out.mixed_pixel_rate += r.mixed_pixel_rate / k;
    out.pixels += r.pixels;
    for (int c = 0; c < kNumClasses; ++c) {
      out.per_class[c].precision += r.per_class[c].precision / k;
      out.per_class[c].recall += r.per_class[c].recall / k;
      out.per_class[c].f1 += r.per_class[c].f1 / k;
      out.per_class[c].specificity += r.per_class[c].specificity / k;
      out.per_class[c].jaccard += r.per_class[c].jaccard / k;
      out.per_class[c].flagged = out.per_class[c].flagged || r.per_class[c].flagged;
    }
  }
  out.samples = static_cast<int64_t>(reports.size());
  return out;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["accuracy"] = accuracy;
  j["precision_macro"] = precision_macro;
  j["recall_macro"] = recall_macro;
  j["f1_macro"] = f1_macro;
  j["specificity_macro"] = specificity_macro;
  j["jaccard_mean"] = jaccard_mean;
  j["mixed_pixel_rate"] = mixed_pixel_rate;
  j["pixels"] = pixels;
  j["samples"] = samples;
  static const char* names[3] = {"background", "downward", "upward"};
  for (int c = 0; c < kNumClasses; ++c) {
    j["per_class"][names[c]] = {{"precision", per_class[c].precision},
                                {"recall", per_class[c].recall},
                                {"f1", per_class[c].f1},
                                {"specificity", per_class[c].specificity},
                                {"jaccard", per_class[c].jaccard},
                                {"flagged", per_class[c].flagged}};
  }
  return j;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), "pearson: length mismatch");
  require(x.size() >= 2, "pearson: need at least 2 points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  require(sxx > 0.0 && syy > 0.0, "pearson: correlation undefined for constant series");
  return sxy / std::sqrt(sxx * syy);
}

namespace detail {

WilcoxonResult wilcoxon_from_diffs(std::span<const double> diffs, WilcoxonMode mode) {
  std::vector<double> d;
  for (double v : diffs)
    if (v != 0.0) d.push_back(v);
  require(!d.empty(), "wilcoxon: all differences are zero");

  const int m = static_cast<int>(d.size());

  // Ranks of |d| with average ranks for ties.
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return std::abs(d[a]) < std::abs(d[b]); });
  std::vector<double> ranks(m, 0.0);
  std::vector<int> tie_sizes;
  for (int i = 0; i < m;) {
    int j = i;
    while (j < m && std::abs(d[order[j]]) == std::abs(d[order[i]])) ++j;
    const double avg = 0.5 * (i + 1 + j); // average of ranks i+1 .. j
    for (int k = i; k < j; ++k) ranks[order[k]] = avg;
    if (j - i > 1) tie_sizes.push_back(j - i);
    i = j;
  }

  double w_plus = 0.0, w_minus = 0.0;
  for (int i = 0; i < m; ++i) {
    if (d[i] > 0.0)
      w_plus += ranks[i];
    else
      w_minus += ranks[i];
  }

  WilcoxonResult res;
  res.statistic = std::min(w_plus, w_minus);
  res.n_effective = m;

  const bool use_exact = mode == WilcoxonMode::exact || (mode == WilcoxonMode::automatic && m <= 12);
  if (use_exact) {
    // Enumerate all 2^m sign patterns; the null distribution of W+ is
    // symmetric about m(m+1)/4, so the two-sided p is
    // P(W+ <= w) + P(W+ >= Wtot - w) with w = min(W+, W-).
    const double w = res.statistic;
    double total_rank = 0.0;
    for (double r : ranks) total_rank += r;
    const uint64_t patterns = 1ULL << m;
    uint64_t low = 0, high = 0;
    for (uint64_t bits = 0; bits < patterns; ++bits) {
      double t_plus = 0.0;
      for (int i = 0; i < m; ++i)
        if (bits & (1ULL << i)) t_plus += ranks[i];
      if (t_plus <= w + 1e-9) ++low;
      if (t_plus >= total_rank - w - 1e-9) ++high;
    }
    res.p_value = std::min(1.0, static_cast<double>(low + high) / static_cast<double>(patterns));
    res.exact = true;
  } else {
    const double mu = m * (m + 1) / 4.0;
    double var = m * (m + 1) * (2.0 * m + 1) / 24.0;
    for (int t : tie_sizes) var -= (static_cast<double>(t) * t * t - t) / 48.0;
    require(var > 0.0, "wilcoxon: zero variance (all values tied)");
    // Continuity correction of 0.5 toward the mean.
    const double z = (res.statistic - mu + 0.5) / std::sqrt(var);
    res.p_value = std::min(1.0, 2.0 * 0.5 * std::erfc(-z / std::sqrt(2.0)));
    res.exact = false;
  }
  return res;
}

} // namespace detail

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "wilcoxon: length mismatch");
  std::vector<double> diffs(a.size());
  for (size_t i = 0; i < a.size(); ++i) diffs[i] = a[i] - b[i];
  return detail::wilcoxon_from_diffs(diffs, detail::WilcoxonMode::automatic);
}

} // namespace fusseg::metrics
