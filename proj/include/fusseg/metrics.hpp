#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "fusseg/types.hpp"

namespace fusseg::metrics {

struct ClassCounts {
  int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  int64_t total() const { return tp + fp + fn + tn; }
};

struct ConfusionCounts {
  std::array<ClassCounts, kNumClasses> per_class;
  int64_t pixels = 0;
};

ConfusionCounts confusion(const TernaryLabelMap& pred, const TernaryLabelMap& truth);

struct ClassMetrics {
  double precision = 0, recall = 0, f1 = 0, specificity = 0, jaccard = 0;
  // Set when a degenerate convention was applied (class absent from truth
  // and/or prediction); both-absent scores 1, otherwise 0.
  bool flagged = false;
};

struct MetricsReport {
  double accuracy = 0;
  std::array<ClassMetrics, kNumClasses> per_class;
  double precision_macro = 0, recall_macro = 0, f1_macro = 0, specificity_macro = 0;
  double jaccard_mean = 0;
  double mixed_pixel_rate = 0;
  int64_t pixels = 0;
  int64_t samples = 1;

  nlohmann::json to_json() const;
};

MetricsReport compute_metrics(const ConfusionCounts& counts);

// Unweighted mean of per-image reports (macro metrics averaged per image).
MetricsReport average_reports(std::span<const MetricsReport> reports);

// Sample Pearson correlation. Errors on constant series or length < 2.
double pearson(std::span<const double> x, std::span<const double> y);

struct WilcoxonResult {
  double statistic = 0; // W = min(W+, W-)
  double p_value = 1.0; // two-sided
  int n_effective = 0;  // pairs left after dropping zero differences
  bool exact = false;
};

// Paired Wilcoxon signed-rank test with average ranks for ties. Exact p by
// enumeration of all 2^m sign patterns for m <= 12, normal approximation with
// tie correction (and 0.5 continuity correction) otherwise. Errors when all
// differences are zero.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

namespace detail {
enum class WilcoxonMode { automatic, exact, normal };
WilcoxonResult wilcoxon_from_diffs(std::span<const double> diffs, WilcoxonMode mode);
} // namespace detail

} // namespace fusseg::metrics
