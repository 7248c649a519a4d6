#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fusseg/metrics.hpp"
#include "fusseg/models.hpp"
#include "fusseg/png.hpp"
#include "fusseg/types.hpp"

namespace fusseg::harness {

inline constexpr const char* kVersion = "1.0.0";

struct Sample {
  FusStack stack;
  TernaryLabelMap labels;
  DirectionMasks masks;
  int64_t subject_id = 0;
  std::string name;
};

using Dataset = std::vector<Sample>;

// Phantom directories: one subdirectory per sample with manifest.json,
// stack.f32, ulm.f32, labels.pgm, down.pgm, up.pgm.
Dataset load_dataset(const std::filesystem::path& dir);

struct FoldAssignment {
  std::vector<std::vector<int>> test_idx;
  std::vector<std::vector<int>> train_idx;
};

// Shuffle once with the fold seed, then deal disjoint round-robin test slices.
FoldAssignment make_folds(int dataset_size, const FoldSpec& spec);

// Train on train_idx samples, evaluate per test sample (per-image macro
// metrics), return the fold-mean report and optionally per-image reports.
struct EvalOutcome {
  metrics::MetricsReport mean;
  std::vector<metrics::MetricsReport> per_image;
};

EvalOutcome train_and_eval(const Dataset& data, std::span<const int> train_idx,
                           std::span<const int> test_idx, const RunConfig& cfg,
                           std::unique_ptr<models::Model>* model_out = nullptr);

// Model/loss grid with K-fold cross-validation; emits mean +/- std per metric
// and pairwise Wilcoxon tests over per-fold macro F1.
nlohmann::json run_xval(const Dataset& data, std::span<const RunConfig> grid, const FoldSpec& folds,
                        bool verbose = false);

// One cross-validation per stack depth (frame count); also fills CSV rows
// (depth, fold, f1_macro, jaccard_mean) for box plots.
nlohmann::json depth_sweep(const Dataset& data, std::span<const int> depths, const RunConfig& base,
                           const FoldSpec& folds, std::vector<std::vector<double>>* csv_rows = nullptr,
                           bool verbose = false);

// Train on rest-condition samples, test on stimulation samples from disjoint
// subjects. Errors on subject overlap or condition mismatch.
nlohmann::json cross_condition(const Dataset& train_set, const Dataset& test_set, const RunConfig& cfg,
                               metrics::MetricsReport* report_out = nullptr, bool verbose = false);

// Log-scale grayscale background with downward pixels in red and upward in
// blue, channel intensity following the normalized log value.
png::RgbImage render_overlay(const FusStack& stack, const TernaryLabelMap& labels, int frame);

// FP = pred==c && truth!=c; FN = pred!=c && truth==c.
std::pair<BinaryMask, BinaryMask> render_error_maps(const TernaryLabelMap& pred,
                                                    const TernaryLabelMap& truth, int cls);

} // namespace fusseg::harness
