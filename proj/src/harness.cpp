#include "fusseg/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "fusseg/core_io.hpp"
#include "fusseg/rng.hpp"

namespace fusseg::harness {

Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("load_dataset: not a directory: " + dir.string());
  std::vector<std::filesystem::path> subdirs;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_directory() && std::filesystem::exists(e.path() / "manifest.json"))
      subdirs.push_back(e.path());
  std::sort(subdirs.begin(), subdirs.end());
  require(!subdirs.empty(), "load_dataset: no phantom subdirectories under " + dir.string());

  Dataset data;
  for (const auto& sd : subdirs) {
    const auto manifest = io::read_json(sd / "manifest.json");
    Sample s;
    s.name = sd.filename().string();
    s.subject_id = manifest.value("subject_id", static_cast<int64_t>(data.size()));
    s.stack = io::read_stack(sd / "stack.f32");
    s.labels = io::read_label_map(sd / "labels.pgm");
    s.masks.downward = io::read_binary_mask(sd / "down.pgm");
    s.masks.upward = io::read_binary_mask(sd / "up.pgm");
    s.masks.tau = manifest.value("tau", 0.05);
    data.push_back(std::move(s));
  }
  return data;
}

FoldAssignment make_folds(int dataset_size, const FoldSpec& spec) {
  spec.validate();
  require(dataset_size >= spec.k, "make_folds: dataset smaller than fold count");
  const int test_count =
      spec.test_count > 0 ? spec.test_count : std::max(1, dataset_size / spec.k);
  require(test_count * spec.k <= dataset_size || spec.k == 1,
          "make_folds: k * test_count exceeds dataset size");

  std::vector<int> order(dataset_size);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(Rng::mix(spec.seed, 0x666f6c64ULL)); // "fold" stream
  for (int i = dataset_size - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);

  FoldAssignment out;
  out.test_idx.resize(spec.k);
  out.train_idx.resize(spec.k);
  for (int f = 0; f < spec.k; ++f) {
    std::set<int> test_set;
    for (int t = 0; t < test_count; ++t) test_set.insert(order[(f * test_count + t) % dataset_size]);
    out.test_idx[f].assign(test_set.begin(), test_set.end());
    std::vector<int> train;
    for (int i : order)
      if (!test_set.count(i)) train.push_back(i);
    if (spec.train_count > 0 && static_cast<int>(train.size()) > spec.train_count)
      train.resize(spec.train_count);
    std::sort(train.begin(), train.end());
    out.train_idx[f] = std::move(train);
  }
  return out;
}

EvalOutcome train_and_eval(const Dataset& data, std::span<const int> train_idx,
                           std::span<const int> test_idx, const RunConfig& cfg,
                           std::unique_ptr<models::Model>* model_out) {
  require(!train_idx.empty() && !test_idx.empty(), "train_and_eval: empty split");

  // Averaged-stack mode collapses every stack to its temporal mean and trains
  // the n = 1 path; storage for the collapsed stacks lives here.
  RunConfig run = cfg;
  std::vector<FusStack> collapsed;
  if (cfg.averaged_stack) {
    run.frames = 1;
    collapsed.reserve(data.size());
    for (const auto& s : data) collapsed.push_back(models::temporal_mean_stack(s.stack));
  }
  auto stack_of = [&](int i) -> const FusStack& {
    return cfg.averaged_stack ? collapsed[i] : data[i].stack;
  };

  std::vector<models::TrainSample> train;
  for (int i : train_idx) train.push_back({&stack_of(i), &data[i].labels});

  models::ArchConfig arch;
  arch.variant = models::variant_from_string(run.architecture);
  arch.in_channels = run.frames;
  arch.base_width = run.base_width;
  arch.depth = run.depth;
  auto model = models::build_model(arch, run.seed);
  models::train_model(*model, train, run);

  EvalOutcome out;
  for (int i : test_idx) {
    auto pred = models::predict(*model, stack_of(i), run.frames);
    out.per_image.push_back(metrics::compute_metrics(metrics::confusion(pred.labels, data[i].labels)));
  }
  out.mean = metrics::average_reports(out.per_image);
  if (model_out) *model_out = std::move(model);
  return out;
}

namespace {

nlohmann::json mean_std_summary(const std::vector<metrics::MetricsReport>& per_fold) {
  auto stat = [&](auto getter) {
    double mean = 0.0;
    for (const auto& r : per_fold) mean += getter(r);
    mean /= static_cast<double>(per_fold.size());
    double var = 0.0;
    for (const auto& r : per_fold) {
      const double d = getter(r) - mean;
      var += d * d;
    }
    var = per_fold.size() > 1 ? var / static_cast<double>(per_fold.size() - 1) : 0.0;
    return nlohmann::json{{"mean", mean}, {"std", std::sqrt(var)}};
  };
  nlohmann::json j;
  j["accuracy"] = stat([](const auto& r) { return r.accuracy; });
  j["f1_macro"] = stat([](const auto& r) { return r.f1_macro; });
  j["precision_macro"] = stat([](const auto& r) { return r.precision_macro; });
  j["recall_macro"] = stat([](const auto& r) { return r.recall_macro; });
  j["jaccard_mean"] = stat([](const auto& r) { return r.jaccard_mean; });
  j["specificity_macro"] = stat([](const auto& r) { return r.specificity_macro; });
  return j;
}

std::string config_label(const RunConfig& cfg) { return cfg.architecture + "+" + cfg.loss; }

nlohmann::json pairwise_wilcoxon(const std::vector<std::string>& labels,
                                 const std::vector<std::vector<double>>& per_fold_f1) {
  nlohmann::json tests = nlohmann::json::array();
  for (size_t a = 0; a < labels.size(); ++a) {
    for (size_t b = a + 1; b < labels.size(); ++b) {
      nlohmann::json t;
      t["a"] = labels[a];
      t["b"] = labels[b];
      t["metric"] = "f1_macro";
      bool all_zero = true;
      for (size_t f = 0; f < per_fold_f1[a].size(); ++f)
        if (per_fold_f1[a][f] != per_fold_f1[b][f]) all_zero = false;
      if (all_zero) {
        // Identical per-fold scores: the test is undefined; flag instead.
        t["all_differences_zero"] = true;
      } else {
        auto res = metrics::wilcoxon_signed_rank(per_fold_f1[a], per_fold_f1[b]);
        t["statistic"] = res.statistic;
        t["p_value"] = res.p_value;
        t["exact"] = res.exact;
      }
      tests.push_back(std::move(t));
    }
  }
  return tests;
}

nlohmann::json provenance(uint64_t seed) {
  return {{"seed", seed}, {"fusseg_version", kVersion}};
}

} // namespace

nlohmann::json run_xval(const Dataset& data, std::span<const RunConfig> grid, const FoldSpec& folds,
                        bool verbose) {
  require(!grid.empty(), "run_xval: empty config grid");
  require(static_cast<int>(data.size()) >= folds.k, "run_xval: dataset too small for fold count");
  for (const auto& cfg : grid) cfg.validate();

  const FoldAssignment fa = make_folds(static_cast<int>(data.size()), folds);

  nlohmann::json report;
  report["kind"] = "xval";
  report["provenance"] = provenance(folds.seed);
  report["folds"] = {{"k", folds.k}};
  {
    nlohmann::json assignments = nlohmann::json::array();
    for (int f = 0; f < folds.k; ++f)
      assignments.push_back({{"test", fa.test_idx[f]}, {"train", fa.train_idx[f]}});
    report["folds"]["assignments"] = assignments;
  }

  std::vector<std::string> labels;
  std::vector<std::vector<double>> per_fold_f1;
  nlohmann::json results = nlohmann::json::array();
  for (size_t ci = 0; ci < grid.size(); ++ci) {
    RunConfig cfg = grid[ci];
    std::vector<metrics::MetricsReport> fold_reports;
    nlohmann::json per_fold = nlohmann::json::array();
    std::vector<double> f1s;
    for (int f = 0; f < folds.k; ++f) {
      RunConfig run = cfg;
      // Seed depends on (config seed, fold) only: identical configs in the
      // grid reproduce identical per-fold scores, and fold seeds stay paired
      // across configs for the Wilcoxon comparisons.
      run.seed = Rng::mix(cfg.seed, 0x72756eULL, static_cast<uint64_t>(f));
      if (verbose)
        std::fprintf(stderr, "[xval] config %s fold %d/%d\n", config_label(cfg).c_str(), f + 1, folds.k);
      auto outcome = train_and_eval(data, fa.train_idx[f], fa.test_idx[f], run);
      fold_reports.push_back(outcome.mean);
      per_fold.push_back(outcome.mean.to_json());
      f1s.push_back(outcome.mean.f1_macro);
    }
    nlohmann::json entry;
    entry["config"] = io::run_config_to_json(cfg);
    entry["label"] = config_label(cfg);
    entry["per_fold"] = per_fold;
    entry["summary"] = mean_std_summary(fold_reports);
    results.push_back(std::move(entry));
    labels.push_back(config_label(cfg));
    per_fold_f1.push_back(std::move(f1s));
  }
  report["results"] = results;
  report["wilcoxon"] = pairwise_wilcoxon(labels, per_fold_f1);
  return report;
}

nlohmann::json depth_sweep(const Dataset& data, std::span<const int> depths, const RunConfig& base,
                           const FoldSpec& folds, std::vector<std::vector<double>>* csv_rows,
                           bool verbose) {
  require(!depths.empty(), "depth_sweep: no depths");
  int shortest = data.empty() ? 0 : data[0].stack.t;
  for (const auto& s : data) shortest = std::min(shortest, s.stack.t);
  for (int d : depths)
    require(d >= 1 && d <= shortest, "depth_sweep: invalid depth " + std::to_string(d));

  const FoldAssignment fa = make_folds(static_cast<int>(data.size()), folds);

  nlohmann::json report;
  report["kind"] = "depth_sweep";
  report["provenance"] = provenance(folds.seed);
  report["depths"] = std::vector<int>(depths.begin(), depths.end());

  std::vector<std::string> labels;
  std::vector<std::vector<double>> per_fold_f1;
  nlohmann::json results = nlohmann::json::array();
  if (csv_rows) csv_rows->clear();
  for (size_t di = 0; di < depths.size(); ++di) {
    RunConfig cfg = base;
    cfg.frames = depths[di];
    cfg.apply_weight_defaults();
    std::vector<metrics::MetricsReport> fold_reports;
    nlohmann::json per_fold = nlohmann::json::array();
    std::vector<double> f1s;
    for (int f = 0; f < folds.k; ++f) {
      RunConfig run = cfg;
      run.seed = Rng::mix(cfg.seed, 0x72756eULL, static_cast<uint64_t>(f));
      if (verbose) std::fprintf(stderr, "[depth-sweep] n=%d fold %d/%d\n", cfg.frames, f + 1, folds.k);
      auto outcome = train_and_eval(data, fa.train_idx[f], fa.test_idx[f], run);
      fold_reports.push_back(outcome.mean);
      per_fold.push_back(outcome.mean.to_json());
      f1s.push_back(outcome.mean.f1_macro);
      if (csv_rows)
        csv_rows->push_back({static_cast<double>(depths[di]), static_cast<double>(f),
                             outcome.mean.f1_macro, outcome.mean.jaccard_mean});
    }
    nlohmann::json entry;
    entry["frames"] = depths[di];
    entry["per_fold"] = per_fold;
    entry["summary"] = mean_std_summary(fold_reports);
    results.push_back(std::move(entry));
    labels.push_back("n=" + std::to_string(depths[di]));
    per_fold_f1.push_back(std::move(f1s));
  }
  report["results"] = results;
  report["wilcoxon"] = pairwise_wilcoxon(labels, per_fold_f1);
  return report;
}

nlohmann::json cross_condition(const Dataset& train_set, const Dataset& test_set, const RunConfig& cfg,
                               metrics::MetricsReport* report_out, bool verbose) {
  require(!train_set.empty() && !test_set.empty(), "cross_condition: empty dataset");
  std::set<int64_t> train_subjects;
  for (const auto& s : train_set) {
    require(s.stack.condition == Condition::rest, "cross_condition: training set must be rest condition");
    train_subjects.insert(s.subject_id);
  }
  for (const auto& s : test_set) {
    require(s.stack.condition == Condition::stimulation,
            "cross_condition: test set must be stimulation condition");
    require(!train_subjects.count(s.subject_id),
            "cross_condition: subject " + std::to_string(s.subject_id) + " appears in both sets");
  }

  // Single train/eval pass over the concatenated dataset view.
  Dataset all;
  all.reserve(train_set.size() + test_set.size());
  for (const auto& s : train_set) all.push_back(s);
  for (const auto& s : test_set) all.push_back(s);
  std::vector<int> train_idx(train_set.size()), test_idx(test_set.size());
  std::iota(train_idx.begin(), train_idx.end(), 0);
  std::iota(test_idx.begin(), test_idx.end(), static_cast<int>(train_set.size()));
  if (verbose) std::fprintf(stderr, "[cross-condition] training on %zu rest stacks\n", train_set.size());
  auto outcome = train_and_eval(all, train_idx, test_idx, cfg);
  if (report_out) *report_out = outcome.mean;

  nlohmann::json report;
  report["kind"] = "cross_condition";
  report["provenance"] = provenance(cfg.seed);
  report["config"] = io::run_config_to_json(cfg);
  report["train_subjects"] = std::vector<int64_t>(train_subjects.begin(), train_subjects.end());
  nlohmann::json per_image = nlohmann::json::array();
  for (const auto& r : outcome.per_image) per_image.push_back(r.to_json());
  report["per_image"] = per_image;
  report["summary"] = outcome.mean.to_json();
  return report;
}

png::RgbImage render_overlay(const FusStack& stack, const TernaryLabelMap& labels, int frame) {
  require(frame >= 0 && frame < stack.t, "render_overlay: bad frame index");
  require(labels.h == stack.h && labels.w == stack.w, "render_overlay: labels shape mismatch");

  const size_t npx = static_cast<size_t>(stack.h) * stack.w;
  const float* f = stack.frames.data() + static_cast<size_t>(frame) * npx;
  std::vector<double> logv(npx);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (size_t i = 0; i < npx; ++i) {
    logv[i] = std::log10(static_cast<double>(f[i]) + 1e-6);
    lo = std::min(lo, logv[i]);
    hi = std::max(hi, logv[i]);
  }
  const double span = hi - lo;

  png::RgbImage img(stack.h, stack.w);
  for (size_t i = 0; i < npx; ++i) {
    const double v = span > 0.0 ? (logv[i] - lo) / span : 0.0;
    uint8_t* px = img.rgb.data() + i * 3;
    const uint8_t cls = labels.labels[i];
    if (cls == kDownward) {
      px[0] = static_cast<uint8_t>(1 + std::lround(v * 254.0)); // never zero on mask pixels
    } else if (cls == kUpward) {
      px[2] = static_cast<uint8_t>(1 + std::lround(v * 254.0));
    } else {
      const auto g = static_cast<uint8_t>(std::lround(v * 255.0));
      px[0] = px[1] = px[2] = g;
    }
  }
  return img;
}

std::pair<BinaryMask, BinaryMask> render_error_maps(const TernaryLabelMap& pred,
                                                    const TernaryLabelMap& truth, int cls) {
  require(pred.h == truth.h && pred.w == truth.w, "render_error_maps: shape mismatch");
  require(cls >= 0 && cls < kNumClasses, "render_error_maps: bad class");
  BinaryMask fp(pred.h, pred.w), fn(pred.h, pred.w);
  for (size_t i = 0; i < pred.labels.size(); ++i) {
    fp.v[i] = (pred.labels[i] == cls && truth.labels[i] != cls) ? 1 : 0;
    fn.v[i] = (pred.labels[i] != cls && truth.labels[i] == cls) ? 1 : 0;
  }
  return {std::move(fp), std::move(fn)};
}

} // namespace fusseg::harness
