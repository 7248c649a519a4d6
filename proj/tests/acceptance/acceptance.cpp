// Acceptance suite: runs every gate criterion at its stated tolerance and
// prints one PASS/FAIL line per criterion. Exit code 0 only if all pass.
//
// Criterion 10 exercises the installed CLI binary; pass its path as argv[1]
// (the ctest registration does this automatically).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "fusseg/annotation.hpp"
#include "fusseg/core_io.hpp"
#include "fusseg/harness.hpp"
#include "fusseg/losses.hpp"
#include "fusseg/metrics.hpp"
#include "fusseg/models.hpp"
#include "fusseg/phantom.hpp"
#include "fusseg/rng.hpp"
#include "fusseg/signal.hpp"

using namespace fusseg;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %d: %s\n", pass ? "PASS" : "FAIL", criterion, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

SoftSegmentation random_soft(int h, int w, Rng& rng) {
  SoftSegmentation s(h, w);
  const size_t n = static_cast<size_t>(h) * w;
  for (size_t i = 0; i < n; ++i) {
    const double a = rng.uniform01(), b = rng.uniform01(), c = rng.uniform01();
    const double z = a + b + c;
    s.probs[0 * n + i] = a / z;
    s.probs[1 * n + i] = b / z;
    s.probs[2 * n + i] = c / z;
  }
  return s;
}

TernaryLabelMap random_labels(int h, int w, Rng& rng) {
  TernaryLabelMap t(h, w);
  for (auto& v : t.labels) v = static_cast<uint8_t>(rng.uniform_int(3));
  return t;
}

// ---------------------------------------------------------------------------
// Criterion 1: loss correctness (non-negativity, zero at perfect prediction,
// gradient check against central finite differences).
// ---------------------------------------------------------------------------

using LossFn =
    std::function<double(const SoftSegmentation&, const TernaryLabelMap&, std::vector<double>*)>;

struct NamedLoss {
  std::string name;
  bool has_box_term;
  bool has_density_term;
  LossFn fn;
};

std::vector<NamedLoss> the_four_losses() {
  using namespace losses;
  return {
      {"dice_ce", false, false,
       [](const SoftSegmentation& s, const TernaryLabelMap& t, std::vector<double>* g) {
         return dice_ce_loss(s, t, {0.5, 0.5, 0.0}, g);
       }},
      {"cf_b", true, false,
       [](const SoftSegmentation& s, const TernaryLabelMap& t, std::vector<double>* g) {
         return cf_loss(s, t, {1.0, 0.0, 1.0}, CfVariant::cf_b, g);
       }},
      {"cf_v", false, true,
       [](const SoftSegmentation& s, const TernaryLabelMap& t, std::vector<double>* g) {
         return cf_loss(s, t, {1.0, 1.0, 0.0}, CfVariant::cf_v, g);
       }},
      {"cf", true, true,
       [](const SoftSegmentation& s, const TernaryLabelMap& t, std::vector<double>* g) {
         return cf_loss(s, t, {1.0, 1.0, 0.5}, CfVariant::cf, g);
       }},
  };
}

// True when any per-box max for this pixel's channel is not unique at the FD
// step resolution, or any box-count difference sits at the |.| kink; the
// gradient is only claimed where the max is unique.
bool near_box_kink(const SoftSegmentation& s, const TernaryLabelMap& t, int c, int pi, int pj,
                   double h_step) {
  const size_t n = static_cast<size_t>(s.h) * s.w;
  for (int eps : losses::box_scales(s.h, s.w)) {
    const int bi = (pi / eps) * eps, bj = (pj / eps) * eps;
    double m1 = -1.0, m2 = -1.0;
    for (int i = bi; i < std::min(s.h, bi + eps); ++i)
      for (int j = bj; j < std::min(s.w, bj + eps); ++j) {
        const double v = s.probs[c * n + static_cast<size_t>(i) * s.w + j];
        if (v > m1) {
          m2 = m1;
          m1 = v;
        } else if (v > m2) {
          m2 = v;
        }
      }
    if (m1 - m2 < 10 * h_step) return true;
    // |N_T - N_S| near zero flips sign under perturbation.
    std::vector<double> chan(n);
    for (size_t i = 0; i < n; ++i) chan[i] = (t.labels[i] == c) ? 1.0 : 0.0;
    const double n_t = losses::soft_box_count(chan, s.h, s.w, eps);
    if (n_t > 0.0) {
      const double n_s = losses::soft_box_count(
          std::span<const double>(s.probs.data() + c * n, n), s.h, s.w, eps);
      if (std::abs(n_t - n_s) < 10 * h_step) return true;
    }
  }
  return false;
}

void criterion_1() {
  Rng rng(0xC1);
  const double h_step = 1e-4;
  const int trials = 200;
  bool nonneg_ok = true, zero_ok = true, grad_ok = true;
  double worst_rel = 0.0, worst_perfect = 0.0;
  int64_t checked = 0;
  auto the_losses = the_four_losses();

  for (int trial = 0; trial < trials; ++trial) {
    auto s = random_soft(8, 8, rng);
    auto t = random_labels(8, 8, rng);
    auto perfect = SoftSegmentation::one_hot(t);
    for (auto& loss : the_losses) {
      const double value = loss.fn(s, t, nullptr);
      if (!(value >= 0.0)) nonneg_ok = false;
      const double at_perfect = loss.fn(perfect, t, nullptr);
      worst_perfect = std::max(worst_perfect, at_perfect);
      if (!(at_perfect <= 1e-4)) zero_ok = false;
    }
    // Gradient check on a subsample of trials (full FD over all coordinates).
    if (trial % 10 != 0) continue;
    for (auto& loss : the_losses) {
      std::vector<double> grad;
      loss.fn(s, t, &grad);
      const size_t n = 64;
      // Class-sum gaps for the vessel-density |.| kink.
      double density_gap[3];
      for (int c = 0; c < 3; ++c) {
        double sum_s = 0.0;
        int64_t sum_t = 0;
        for (size_t i = 0; i < n; ++i) {
          sum_s += s.probs[c * n + i];
          sum_t += (t.labels[i] == c) ? 1 : 0;
        }
        density_gap[c] = std::abs(sum_s - static_cast<double>(sum_t));
      }
      for (size_t idx = 0; idx < 3 * n; ++idx) {
        const int c = static_cast<int>(idx / n);
        const int pix = static_cast<int>(idx % n);
        // -log(p) has curvature ~1/p^2: the central difference at step h is
        // only a 1e-3-accurate estimator when h^2/(3 p^2) << 1e-3, i.e.
        // p >> ~2e-3 (this also keeps p - h clear of the clamp floor).
        if (s.probs[idx] < 50.0 * h_step) continue;
        if (loss.has_density_term && c != kBackground && density_gap[c] < 10 * h_step) continue;
        if (loss.has_box_term && near_box_kink(s, t, c, pix / 8, pix % 8, h_step)) continue;
        const double orig = s.probs[idx];
        s.probs[idx] = orig + h_step;
        const double lp = loss.fn(s, t, nullptr);
        s.probs[idx] = orig - h_step;
        const double lm = loss.fn(s, t, nullptr);
        s.probs[idx] = orig;
        const double fd = (lp - lm) / (2 * h_step);
        const double rel =
            std::abs(fd - grad[idx]) / std::max({std::abs(fd), std::abs(grad[idx]), 1e-6});
        worst_rel = std::max(worst_rel, rel);
        if (rel > 1e-3) grad_ok = false;
        ++checked;
      }
    }
  }
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "loss suite over %d random 8x8 pairs: non-negative %s, perfect<=1e-4 (max %.2e), "
                "grad rel err %.2e <= 1e-3 over %lld coords",
                trials, nonneg_ok ? "yes" : "NO", worst_perfect, worst_rel,
                static_cast<long long>(checked));
  report(1, nonneg_ok && zero_ok && grad_ok && checked > 10000, buf);
}

// ---------------------------------------------------------------------------
// Criterion 2: box-count oracle.
// ---------------------------------------------------------------------------

int brute_box_count(const std::vector<uint8_t>& mask, int h, int w, int eps) {
  int count = 0;
  for (int by = 0; by < h; by += eps)
    for (int bx = 0; bx < w; bx += eps) {
      bool occ = false;
      for (int i = by; i < std::min(h, by + eps); ++i)
        for (int j = bx; j < std::min(w, bx + eps); ++j)
          if (mask[static_cast<size_t>(i) * w + j]) occ = true;
      count += occ ? 1 : 0;
    }
  return count;
}

void criterion_2() {
  Rng rng(0xC2);
  bool oracle_ok = true;
  for (int trial = 0; trial < 200; ++trial) {
    const int h = 2 + static_cast<int>(rng.uniform_int(15));
    const int w = 2 + static_cast<int>(rng.uniform_int(15));
    std::vector<uint8_t> mask(static_cast<size_t>(h) * w);
    std::vector<double> chan(mask.size());
    for (size_t i = 0; i < mask.size(); ++i) {
      mask[i] = rng.bernoulli(0.35) ? 1 : 0;
      chan[i] = mask[i];
    }
    for (int eps : losses::box_scales(h, w))
      if (losses::soft_box_count(chan, h, w, eps) !=
          static_cast<double>(brute_box_count(mask, h, w, eps)))
        oracle_ok = false;
  }

  // Worked example: 4x4, class d all ones in truth, prediction all background.
  SoftSegmentation s(4, 4);
  TernaryLabelMap t(4, 4);
  for (auto& v : t.labels) v = kDownward;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) s.at(kBackground, i, j) = 1.0;
  const double lb = losses::box_counting_loss(s, t);
  const bool example_ok = std::abs(lb - 0.7635) <= 1e-4;

  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "soft box count == brute force on 200 maps up to 16x16: %s; 4x4 example %.6f "
                "within 1e-4 of 0.7635: %s",
                oracle_ok ? "exact" : "MISMATCH", lb, example_ok ? "yes" : "NO");
  report(2, oracle_ok && example_ok, buf);
}

// ---------------------------------------------------------------------------
// Criterion 3: metrics oracle.
// ---------------------------------------------------------------------------

void criterion_3() {
  Rng rng(0xC3);
  bool oracle_ok = true;
  for (int trial = 0; trial < 500; ++trial) {
    const int h = 2 + static_cast<int>(rng.uniform_int(15));
    const int w = 2 + static_cast<int>(rng.uniform_int(15));
    auto pred = random_labels(h, w, rng);
    auto truth = random_labels(h, w, rng);
    const auto counts = metrics::confusion(pred, truth);
    const auto rep = metrics::compute_metrics(counts);

    // Independent recomputation straight from the label arrays.
    int64_t correct = 0;
    for (size_t i = 0; i < pred.labels.size(); ++i)
      if (pred.labels[i] == truth.labels[i]) ++correct;
    if (rep.accuracy != static_cast<double>(correct) / (h * w)) oracle_ok = false;
    for (int c = 0; c < kNumClasses; ++c) {
      int64_t tp = 0, fp = 0, fn = 0, tn = 0;
      for (size_t i = 0; i < pred.labels.size(); ++i) {
        const bool p = pred.labels[i] == c, g = truth.labels[i] == c;
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
        tn += !p && !g;
      }
      if (counts.per_class[c].tp != tp || counts.per_class[c].fp != fp ||
          counts.per_class[c].fn != fn || counts.per_class[c].tn != tn)
        oracle_ok = false;
      if (tp + fp > 0 &&
          rep.per_class[c].precision != static_cast<double>(tp) / static_cast<double>(tp + fp))
        oracle_ok = false;
      if (tp + fn > 0 &&
          rep.per_class[c].recall != static_cast<double>(tp) / static_cast<double>(tp + fn))
        oracle_ok = false;
      if (tp + fp + fn > 0 &&
          rep.per_class[c].jaccard != static_cast<double>(tp) / static_cast<double>(tp + fp + fn))
        oracle_ok = false;
    }
  }

  // Worked example: truth [b,b,d,u], pred [b,d,d,u].
  TernaryLabelMap truth(2, 2), pred(2, 2);
  truth.labels = {0, 0, 1, 2};
  pred.labels = {0, 1, 1, 2};
  const auto rep = metrics::compute_metrics(metrics::confusion(pred, truth));
  const bool example_ok =
      rep.accuracy == 0.75 && std::abs(rep.f1_macro - 0.7778) <= 1e-4;

  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "metrics == brute force on 500 random pairs: %s; 2x2 example accuracy %.2f, "
                "macro F1 %.4f (0.7778 +- 1e-4): %s",
                oracle_ok ? "exact" : "MISMATCH", rep.accuracy, rep.f1_macro,
                example_ok ? "yes" : "NO");
  report(3, oracle_ok && example_ok, buf);
}

// ---------------------------------------------------------------------------
// Criterion 4: annotation pipeline vs direct rasterization oracle + tau
// monotonicity.
// ---------------------------------------------------------------------------

int oracle_direction(const std::vector<phantom::Vessel>& vessels, int pr, int pc) {
  int dir = 0;
  for (const auto& v : vessels) {
    if (v.in_plane) continue;
    const double r2 = (v.width / 2.0) * (v.width / 2.0);
    bool inside = false;
    for (size_t s = 0; s + 1 < v.centerline.size() && !inside; ++s) {
      const auto [ar, ac] = v.centerline[s];
      const auto [br, bc] = v.centerline[s + 1];
      const double dr = br - ar, dc = bc - ac;
      const double len2 = dr * dr + dc * dc;
      double tt = 0.0;
      if (len2 > 0.0) tt = std::clamp(((pr - ar) * dr + (pc - ac) * dc) / len2, 0.0, 1.0);
      const double qr = ar + tt * dr - pr;
      const double qc = ac + tt * dc - pc;
      inside = qr * qr + qc * qc <= r2;
    }
    if (inside) dir = v.velocity > 0 ? 1 : -1;
  }
  return dir;
}

void criterion_4() {
  Rng trial_rng(0xC4);
  bool oracle_ok = true, mono_ok = true;
  for (int trial = 0; trial < 50; ++trial) {
    const int low = 8 * (1 + static_cast<int>(trial_rng.uniform_int(8)));
    const int ratio = 2 << trial_rng.uniform_int(3);
    phantom::PhantomSpec spec;
    spec.h = spec.w = low;
    spec.h_hi = spec.w_hi = low * ratio;
    spec.vessel_count = 1 + static_cast<int>(trial_rng.uniform_int(8));
    spec.width_lo = 1.5;
    spec.width_hi = std::max(3.0, low * ratio / 8.0);
    spec.seed = 40000 + trial;
    const double tau = 0.05;
    auto vessels = phantom::generate_vessel_tree(spec);
    auto out = phantom::render_fus_stack(vessels, spec, std::nullopt, 1, tau);

    const int bh = spec.h_hi / spec.h, bw = spec.w_hi / spec.w;
    for (int bi = 0; bi < spec.h && oracle_ok; ++bi) {
      for (int bj = 0; bj < spec.w; ++bj) {
        int64_t nd = 0, nu = 0;
        for (int r = bi * bh; r < (bi + 1) * bh; ++r)
          for (int c = bj * bw; c < (bj + 1) * bw; ++c) {
            const int dir = oracle_direction(vessels, r, c);
            nd += dir > 0;
            nu += dir < 0;
          }
        const double cd = static_cast<double>(nd) / (bh * bw);
        const double cu = static_cast<double>(nu) / (bh * bw);
        if (out.masks.downward.at(bi, bj) != (cd >= tau ? 1 : 0) ||
            out.masks.upward.at(bi, bj) != (cu >= tau ? 1 : 0)) {
          oracle_ok = false;
          break;
        }
      }
    }

    // Monotonicity in tau on the same velocity map.
    annotation::AnnotationParams params;
    params.target_h = spec.h;
    params.target_w = spec.w;
    const double taus[4] = {0.02, 0.05, 0.1, 0.3};
    annotation::AnnotationResult prev;
    for (int k = 0; k < 4; ++k) {
      params.tau = taus[k];
      auto res = annotation::annotate(out.ulm, params);
      if (k > 0) {
        for (size_t i = 0; i < res.masks.downward.v.size(); ++i) {
          if (res.masks.downward.v[i] > prev.masks.downward.v[i]) mono_ok = false;
          if (res.masks.upward.v[i] > prev.masks.upward.v[i]) mono_ok = false;
        }
      }
      prev = std::move(res);
    }
  }
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "annotation == rasterization oracle on 50 phantoms (<=64x64): %s; tau "
                "monotonicity over {0.02,0.05,0.1,0.3}: %s",
                oracle_ok ? "exact" : "MISMATCH", mono_ok ? "holds" : "VIOLATED");
  report(4, oracle_ok && mono_ok, buf);
}

// ---------------------------------------------------------------------------
// Criterion 5: statistics.
// ---------------------------------------------------------------------------

void criterion_5() {
  std::vector<double> a{2, 3, 4, 5, 6}, b{1, 1, 1, 1, 1};
  const auto res = metrics::wilcoxon_signed_rank(a, b);
  const bool wilcoxon_ok = res.exact && res.p_value == 0.0625;

  Rng rng(0xC5);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(40), y(40);
    for (size_t i = 0; i < x.size(); ++i) {
      x[i] = rng.normal();
      y[i] = 0.7 * x[i] + 0.5 * rng.normal();
    }
    const double base = metrics::pearson(x, y);
    std::vector<double> xs(x), ys(y);
    const double sa = rng.uniform(0.1, 10.0), sb = rng.uniform(-5.0, 5.0);
    const double sc = rng.uniform(0.1, 10.0), sd = rng.uniform(-5.0, 5.0);
    for (auto& v : xs) v = sa * v + sb;
    for (auto& v : ys) v = sc * v + sd;
    worst = std::max(worst, std::abs(metrics::pearson(xs, ys) - base));
  }
  const bool pearson_ok = worst <= 1e-12;

  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "wilcoxon([1..5]) exact two-sided p = %.6g (0.0625): %s; pearson affine "
                "invariance |dr| = %.2e <= 1e-12: %s",
                res.p_value, wilcoxon_ok ? "yes" : "NO", worst, pearson_ok ? "yes" : "NO");
  report(5, wilcoxon_ok && pearson_ok, buf);
}

// ---------------------------------------------------------------------------
// Shared phantom protocol for the training criteria.
// ---------------------------------------------------------------------------

phantom::PhantomSpec study_spec(uint64_t base_seed, int i) {
  phantom::PhantomSpec spec;
  spec.h = spec.w = 64;
  spec.h_hi = spec.w_hi = 512;
  spec.vessel_count = 10;
  spec.width_lo = 1.6;
  spec.width_hi = 14.0;
  spec.noise_sigma = 0.1;
  spec.background_floor = 0.1;
  spec.distractor_count = 14;
  spec.seed = Rng::mix(base_seed, 0x7068616eULL, static_cast<uint64_t>(i));
  return spec;
}

harness::Sample to_sample(phantom::PhantomOutput&& out, int64_t subject) {
  harness::Sample s;
  s.stack = std::move(out.stack);
  s.labels = std::move(out.labels);
  s.masks = std::move(out.masks);
  s.subject_id = subject;
  return s;
}

RunConfig study_config(const std::string& arch, const std::string& loss) {
  RunConfig cfg;
  cfg.architecture = arch;
  cfg.loss = loss;
  cfg.alpha = cfg.beta = cfg.gamma = -1.0;
  cfg.apply_weight_defaults();
  cfg.frames = 100;
  cfg.epochs = 60;
  cfg.batch_size = 4;
  cfg.base_width = 16;
  cfg.depth = 3;
  cfg.seed = 64;
  return cfg;
}

// ---------------------------------------------------------------------------
// Criterion 6: overfit check for every architecture variant.
// ---------------------------------------------------------------------------

void criterion_6() {
  auto spec = study_spec(6, 0);
  auto ph = phantom::generate_phantom(spec, std::nullopt, 100);
  std::vector<models::TrainSample> data{{&ph.stack, &ph.labels}};

  bool all_ok = true;
  std::string detail = "overfit (dice_ce, 100 frames, 64x64, width 16):";
  for (const std::string arch :
       {"unet", "attention_unet", "unetpp", "resunet", "multires_unet"}) {
    RunConfig cfg = study_config(arch, "dice_ce");
    cfg.epochs = 200;
    cfg.batch_size = 1;
    cfg.augment.enabled = false;
    cfg.seed = 17;
    models::ArchConfig mc;
    mc.variant = models::variant_from_string(arch);
    mc.in_channels = cfg.frames;
    mc.base_width = cfg.base_width;
    mc.depth = cfg.depth;
    auto model = models::build_model(mc, cfg.seed);
    auto result = models::train_model(*model, data, cfg);
    const double first = result.epoch_loss.front();
    const double last = result.epoch_loss.back();
    auto pred = models::predict(*model, ph.stack, cfg.frames);
    const auto rep = metrics::compute_metrics(metrics::confusion(pred.labels, ph.labels));
    const bool ok = last <= first / 10.0 && rep.jaccard_mean >= 0.9;
    char buf[128];
    std::snprintf(buf, sizeof(buf), " %s %.0fx/IoU %.3f", arch.c_str(),
                  last > 0 ? first / last : 1e9, rep.jaccard_mean);
    detail += buf;
    all_ok = all_ok && ok;
  }
  report(6, all_ok, detail + " (need >=10x and IoU >= 0.9 each)");
}

// ---------------------------------------------------------------------------
// Criteria 7-9: end-to-end phantom study, cross-condition, signal fidelity.
// ---------------------------------------------------------------------------

void criteria_7_8_9() {
  harness::Dataset rest;
  for (int i = 0; i < 16; ++i) {
    auto spec = study_spec(1, i);
    rest.push_back(
        to_sample(phantom::generate_phantom(spec, std::nullopt, 100), static_cast<int64_t>(spec.seed)));
  }
  std::vector<int> train_idx, test_idx;
  for (int i = 0; i < 12; ++i) train_idx.push_back(i);
  for (int i = 12; i < 16; ++i) test_idx.push_back(i);

  std::unique_ptr<models::Model> att_model;
  const RunConfig att_cfg = study_config("attention_unet", "cf");
  const auto att = harness::train_and_eval(rest, train_idx, test_idx, att_cfg, &att_model);
  const auto mr = harness::train_and_eval(rest, train_idx, test_idx, study_config("multires_unet", "cf"));

  {
    const bool thresholds = att.mean.jaccard_mean >= 0.5 && att.mean.f1_macro >= 0.6;
    const bool ordering = mr.mean.f1_macro <= att.mean.f1_macro;
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "12-train/4-test study: attention IoU %.4f >= 0.5, F1 %.4f >= 0.6: %s; "
                  "multires F1 %.4f <= attention F1: %s",
                  att.mean.jaccard_mean, att.mean.f1_macro, thresholds ? "yes" : "NO",
                  mr.mean.f1_macro, ordering ? "yes" : "NO");
    report(7, thresholds && ordering, buf);
  }

  {
    // Criterion 8: same rest-trained model on stimulation phantoms from
    // disjoint seeds.
    std::vector<metrics::MetricsReport> stim_reports;
    for (int i = 0; i < 4; ++i) {
      auto spec = study_spec(2, i);
      phantom::StimulusParadigm par;
      auto out = phantom::generate_phantom(spec, par, 825);
      auto pred = models::predict(*att_model, out.stack, att_cfg.frames);
      stim_reports.push_back(metrics::compute_metrics(metrics::confusion(pred.labels, out.labels)));
    }
    const auto stim_mean = metrics::average_reports(stim_reports);
    const double diff = std::abs(stim_mean.jaccard_mean - att.mean.jaccard_mean);
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "cross-condition IoU %.4f vs in-condition %.4f: |diff| %.4f <= 0.05",
                  stim_mean.jaccard_mean, att.mean.jaccard_mean, diff);
    report(8, diff <= 0.05, buf);
  }

  {
    // Criterion 9: downward-compartment signal fidelity on the test phantoms.
    const signal::Roi cortex{0, 28, 0, 64};
    bool ok = true;
    double worst = 1.0;
    for (int i : test_idx) {
      auto pred = models::predict(*att_model, rest[i].stack, att_cfg.frames);
      auto s_pred = signal::extract_signal(rest[i].stack, pred.labels.class_mask(kDownward), cortex);
      auto s_true = signal::extract_signal(rest[i].stack, rest[i].labels.class_mask(kDownward), cortex);
      const double r = signal::compare_signals(s_pred, s_true);
      worst = std::min(worst, r);
      ok = ok && r >= 0.9;
    }
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "downward-compartment signal correlation on 4 test phantoms: min r %.4f >= 0.9",
                  worst);
    report(9, ok, buf);
  }
}

// ---------------------------------------------------------------------------
// Criterion 10: CLI reproducibility.
// ---------------------------------------------------------------------------

std::vector<uint8_t> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

bool same_file(const fs::path& a, const fs::path& b) {
  auto ba = slurp(a), bb = slurp(b);
  return !ba.empty() && ba == bb;
}

int run_cmd(const std::string& cmd) { return std::system((cmd + " > /dev/null 2>&1").c_str()); }

void criterion_10(const std::string& cli) {
  if (cli.empty()) {
    report(10, false, "CLI path not provided (pass the fusseg binary as argv[1])");
    return;
  }
  const fs::path work = fs::temp_directory_path() / "fusseg_acceptance_cli";
  fs::remove_all(work);
  fs::create_directories(work);
  const std::string w = work.string();

  bool ok = true;
  // Phantom generation repeated with one seed.
  ok &= run_cmd(cli + " --seed 77 phantom --count 2 --mode stim --frames 40 --height 32 --width 32"
                      " --ratio 8 --vessels 5 --out " + w + "/a") == 0;
  ok &= run_cmd(cli + " --seed 77 phantom --count 2 --mode stim --frames 40 --height 32 --width 32"
                      " --ratio 8 --vessels 5 --out " + w + "/b") == 0;
  for (const char* f : {"stack.f32", "ulm.f32", "labels.pgm", "down.pgm", "up.pgm", "manifest.json"}) {
    ok &= same_file(work / "a/phantom_0000" / f, work / "b/phantom_0000" / f);
    ok &= same_file(work / "a/phantom_0001" / f, work / "b/phantom_0001" / f);
  }

  // Train + predict repeated with one seed: identical reports, weights, masks.
  const std::string train_flags = " train --data " + w + "/a --arch unet --loss dice_ce"
                                  " --frames 8 --epochs 3 --batch 2 --base-width 8 --depth 2 --out ";
  ok &= run_cmd(cli + " --seed 5" + train_flags + w + "/m1") == 0;
  ok &= run_cmd(cli + " --seed 5" + train_flags + w + "/m2") == 0;
  ok &= same_file(work / "m1/weights.f32", work / "m2/weights.f32");
  ok &= same_file(work / "m1/model.json", work / "m2/model.json");
  ok &= same_file(work / "m1/loss_curve.csv", work / "m2/loss_curve.csv");

  ok &= run_cmd(cli + " predict --model " + w + "/m1 --stack " + w + "/a/phantom_0000/stack.f32" +
                " --out " + w + "/p1") == 0;
  ok &= run_cmd(cli + " predict --model " + w + "/m2 --stack " + w + "/b/phantom_0000/stack.f32" +
                " --out " + w + "/p2") == 0;
  ok &= same_file(work / "p1.labels.pgm", work / "p2.labels.pgm");
  ok &= same_file(work / "p1.probs.f32", work / "p2.probs.f32");

  // Evaluation reports byte-identical.
  ok &= run_cmd(cli + " eval --pred " + w + "/p1.labels.pgm --truth " + w +
                "/a/phantom_0000/labels.pgm --report " + w + "/r1.json") == 0;
  ok &= run_cmd(cli + " eval --pred " + w + "/p2.labels.pgm --truth " + w +
                "/b/phantom_0000/labels.pgm --report " + w + "/r2.json") == 0;
  ok &= same_file(work / "r1.json", work / "r2.json");

  report(10, ok, "repeated CLI runs (phantom/train/predict/eval) with one seed produce "
                 "byte-identical files");
}

} // namespace

int main(int argc, char** argv) {
  const std::string cli = argc > 1 ? argv[1] : "";
  std::printf("fusseg acceptance suite\n");
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criteria_7_8_9();
  criterion_10(cli);
  if (g_failures == 0)
    std::printf("all criteria passed\n");
  else
    std::printf("%d criterion(s) FAILED\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
