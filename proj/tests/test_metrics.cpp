#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fusseg/metrics.hpp"
#include "fusseg/rng.hpp"

using namespace fusseg;
using namespace fusseg::metrics;

namespace {

TernaryLabelMap labels_of(int h, int w, std::initializer_list<int> vals) {
  TernaryLabelMap t(h, w);
  size_t i = 0;
  for (int v : vals) t.labels[i++] = static_cast<uint8_t>(v);
  return t;
}

// Independent confusion oracle with a different loop structure: per class,
// full scan.
ClassCounts brute_counts(const TernaryLabelMap& pred, const TernaryLabelMap& truth, int cls) {
  ClassCounts c;
  for (size_t i = 0; i < pred.labels.size(); ++i) {
    const bool p = pred.labels[i] == cls;
    const bool t = truth.labels[i] == cls;
    if (p && t)
      ++c.tp;
    else if (p && !t)
      ++c.fp;
    else if (!p && t)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

} // namespace

TEST_CASE("confusion worked example") {
  // truth [b,b,d,u], pred [b,d,d,u]
  auto truth = labels_of(2, 2, {0, 0, 1, 2});
  auto pred = labels_of(2, 2, {0, 1, 1, 2});
  auto counts = confusion(pred, truth);
  CHECK(counts.per_class[kDownward].tp == 1);
  CHECK(counts.per_class[kDownward].fp == 1);
  CHECK(counts.per_class[kDownward].fn == 0);
  CHECK(counts.per_class[kDownward].tn == 2);

  // Sum of per-class TP equals correctly labeled pixels.
  int64_t tp_sum = 0;
  for (const auto& cc : counts.per_class) tp_sum += cc.tp;
  CHECK(tp_sum == 3);

  TernaryLabelMap other(3, 3);
  CHECK_THROWS_AS(confusion(pred, other), ValidationError);
}

TEST_CASE("perfect prediction scores ones") {
  Rng rng(4);
  TernaryLabelMap t(5, 5);
  for (auto& v : t.labels) v = static_cast<uint8_t>(rng.uniform_int(3));
  auto counts = confusion(t, t);
  for (const auto& cc : counts.per_class) {
    CHECK(cc.fp == 0);
    CHECK(cc.fn == 0);
  }
  auto rep = compute_metrics(counts);
  CHECK(rep.accuracy == doctest::Approx(1.0));
  CHECK(rep.f1_macro == doctest::Approx(1.0));
  CHECK(rep.jaccard_mean == doctest::Approx(1.0));
  CHECK(rep.specificity_macro == doctest::Approx(1.0));
}

TEST_CASE("metrics worked example values") {
  auto truth = labels_of(2, 2, {0, 0, 1, 2});
  auto pred = labels_of(2, 2, {0, 1, 1, 2});
  auto rep = compute_metrics(confusion(pred, truth));
  // Hand evaluation: b: P=1, R=0.5, F1=2/3, J=0.5; d: P=0.5, R=1, F1=2/3,
  // J=0.5; u: all 1. accuracy 3/4; macro F1 = 7/9; mean Jaccard = 2/3.
  CHECK(rep.accuracy == doctest::Approx(0.75));
  CHECK(rep.f1_macro == doctest::Approx(7.0 / 9.0).epsilon(1e-4));
  CHECK(rep.jaccard_mean == doctest::Approx(2.0 / 3.0).epsilon(1e-4));
  CHECK(rep.per_class[kBackground].precision == doctest::Approx(1.0));
  CHECK(rep.per_class[kDownward].precision == doctest::Approx(0.5));
  CHECK(rep.per_class[kDownward].recall == doctest::Approx(1.0));
}

TEST_CASE("metrics match brute-force oracle on random pairs") {
  Rng rng(555);
  for (int trial = 0; trial < 500; ++trial) {
    const int h = 2 + static_cast<int>(rng.uniform_int(15));
    const int w = 2 + static_cast<int>(rng.uniform_int(15));
    TernaryLabelMap pred(h, w), truth(h, w);
    for (auto& v : pred.labels) v = static_cast<uint8_t>(rng.uniform_int(3));
    for (auto& v : truth.labels) v = static_cast<uint8_t>(rng.uniform_int(3));
    auto counts = confusion(pred, truth);
    int64_t tp_sum = 0;
    int64_t correct = 0;
    for (size_t i = 0; i < pred.labels.size(); ++i)
      if (pred.labels[i] == truth.labels[i]) ++correct;
    for (int c = 0; c < kNumClasses; ++c) {
      auto brute = brute_counts(pred, truth, c);
      CHECK(counts.per_class[c].tp == brute.tp);
      CHECK(counts.per_class[c].fp == brute.fp);
      CHECK(counts.per_class[c].fn == brute.fn);
      CHECK(counts.per_class[c].tn == brute.tn);
      CHECK(counts.per_class[c].total() == counts.pixels);
      tp_sum += counts.per_class[c].tp;
    }
    CHECK(tp_sum == correct);
    auto rep = compute_metrics(counts);
    CHECK(rep.accuracy >= 0.0);
    CHECK(rep.accuracy <= 1.0);
    for (int c = 0; c < kNumClasses; ++c) {
      CHECK(rep.per_class[c].f1 >= 0.0);
      CHECK(rep.per_class[c].f1 <= 1.0);
      CHECK(rep.per_class[c].jaccard <= 1.0);
    }
  }
}

TEST_CASE("absent-class conventions") {
  // No upward pixels anywhere: class scores 1, not flagged as failure.
  auto truth = labels_of(2, 2, {0, 0, 1, 1});
  auto pred = labels_of(2, 2, {0, 0, 1, 1});
  auto rep = compute_metrics(confusion(pred, truth));
  CHECK(rep.per_class[kUpward].f1 == doctest::Approx(1.0));
  CHECK(rep.per_class[kUpward].flagged);

  // Upward absent from truth but predicted: scores 0, flagged.
  auto pred2 = labels_of(2, 2, {0, 2, 1, 1});
  auto rep2 = compute_metrics(confusion(pred2, truth));
  CHECK(rep2.per_class[kUpward].recall == doctest::Approx(0.0));
  CHECK(rep2.per_class[kUpward].f1 == doctest::Approx(0.0));
  CHECK(rep2.per_class[kUpward].flagged);
}

TEST_CASE("pearson basics") {
  std::vector<double> x{1, 2, 3, 4};
  std::vector<double> y{2, 4, 6, 8};
  CHECK(pearson(x, y) == doctest::Approx(1.0));
  std::vector<double> ny{-1, -2, -3, -4};
  CHECK(pearson(x, ny) == doctest::Approx(-1.0));

  // Closed-form oracle for x=[1,2,3], y=[2,4,6.1]:
  // r = (n*Sxy - Sx*Sy) / sqrt((n*Sxx - Sx^2)(n*Syy - Sy^2))
  //   = 12.3 / sqrt(6 * 25.22) = 0.9999008...
  std::vector<double> a{1, 2, 3}, b{2, 4, 6.1};
  const double expected = 12.3 / std::sqrt(6.0 * 25.22);
  CHECK(pearson(a, b) == doctest::Approx(expected).epsilon(1e-10));
  CHECK(expected == doctest::Approx(0.99990).epsilon(1e-4));

  std::vector<double> c{5, 5, 5};
  CHECK_THROWS_AS(pearson(a, c), ValidationError);
  std::vector<double> one{1};
  CHECK_THROWS_AS(pearson(one, one), ValidationError);
}

TEST_CASE("pearson is invariant under positive affine transforms") {
  Rng rng(99);
  std::vector<double> x(30), y(30);
  for (size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.normal();
    y[i] = 0.4 * x[i] + rng.normal();
  }
  const double base = pearson(x, y);
  std::vector<double> xs(x), ys(y);
  for (auto& v : xs) v = 3.7 * v + 11.0;
  for (auto& v : ys) v = 0.02 * v - 5.0;
  CHECK(std::abs(pearson(xs, ys) - base) <= 1e-12);
}

TEST_CASE("wilcoxon exact worked example") {
  // Differences [1..5]: W- = 0, all-positive pattern is one of 32;
  // two-sided exact p = 2/32 = 0.0625.
  std::vector<double> a{2, 3, 4, 5, 6};
  std::vector<double> b{1, 1, 1, 1, 1};
  auto res = wilcoxon_signed_rank(a, b);
  CHECK(res.exact);
  CHECK(res.statistic == doctest::Approx(0.0));
  CHECK(res.p_value == doctest::Approx(0.0625).epsilon(1e-12));

  // Swapping the series yields the identical p.
  auto swapped = wilcoxon_signed_rank(b, a);
  CHECK(swapped.p_value == doctest::Approx(res.p_value).epsilon(1e-12));

  // All-zero differences error out.
  CHECK_THROWS_AS(wilcoxon_signed_rank(a, a), ValidationError);
}

TEST_CASE("wilcoxon exact vs normal approximation at m = 12") {
  Rng rng(7);
  for (int trial = 0; trial < 12; ++trial) {
    std::vector<double> d(12);
    for (auto& v : d) v = rng.normal() + 0.3;
    auto exact = detail::wilcoxon_from_diffs(d, detail::WilcoxonMode::exact);
    auto approx = detail::wilcoxon_from_diffs(d, detail::WilcoxonMode::normal);
    CHECK(std::abs(exact.p_value - approx.p_value) <= 0.02);
  }
}

TEST_CASE("wilcoxon drops zero differences") {
  std::vector<double> a{1, 2, 3, 4};
  std::vector<double> b{1, 1, 1, 1};
  auto res = wilcoxon_signed_rank(a, b); // diffs {0,1,2,3} -> m = 3
  CHECK(res.n_effective == 3);
  CHECK(res.exact);
}
