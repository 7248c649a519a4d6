#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "fusseg/models.hpp"
#include "fusseg/phantom.hpp"
#include "fusseg/rng.hpp"

using namespace fusseg;
using namespace fusseg::models;

namespace {

FusStack tiny_stack(int t, int h, int w, uint64_t seed) {
  FusStack s;
  s.t = t;
  s.h = h;
  s.w = w;
  s.frames.resize(static_cast<size_t>(t) * h * w);
  Rng rng(seed);
  for (auto& v : s.frames) v = static_cast<float>(rng.uniform(0.0, 1.0));
  return s;
}

} // namespace

TEST_CASE("forward contract: shape and simplex") {
  // The headline input convention: 100 frames as channels on a 112x128 frame.
  ArchConfig cfg;
  cfg.variant = Variant::unet;
  cfg.in_channels = 100;
  cfg.base_width = 8;
  cfg.depth = 4;
  auto model = build_model(cfg, 1);

  nn::Tensor input(100, 112, 128);
  Rng rng(2);
  for (auto& v : input.v) v = static_cast<float>(rng.uniform(0.0, 1.0));
  auto out = model->run(input);
  CHECK(out->val.c == 3);
  CHECK(out->val.h == 112);
  CHECK(out->val.w == 128);
  const size_t n = 112 * 128;
  for (size_t i = 0; i < n; i += 97) {
    const double sum = out->val.v[i] + out->val.v[n + i] + out->val.v[2 * n + i];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("all variants run forward on a small input") {
  for (auto variant : {Variant::unet, Variant::attention_unet, Variant::unetpp, Variant::resunet,
                       Variant::multires_unet}) {
    ArchConfig cfg;
    cfg.variant = variant;
    cfg.in_channels = 4;
    cfg.base_width = 8;
    cfg.depth = 2;
    auto model = build_model(cfg, 3);
    nn::Tensor input(4, 16, 16);
    Rng rng(4);
    for (auto& v : input.v) v = static_cast<float>(rng.uniform(0.0, 1.0));
    auto out = model->run(input);
    CHECK(out->val.c == 3);
    CHECK(out->val.h == 16);
    CHECK(out->val.w == 16);
  }
}

TEST_CASE("padding arithmetic: depth 5 on 24x24") {
  ArchConfig cfg;
  cfg.variant = Variant::unet;
  cfg.in_channels = 2;
  cfg.base_width = 4;
  cfg.depth = 5;
  auto model = build_model(cfg, 5);
  nn::Tensor input(2, 24, 24);
  for (size_t i = 0; i < input.v.size(); ++i) input.v[i] = static_cast<float>(i % 7) / 7.0f;
  auto out = model->run(input); // internally 32x32
  CHECK(out->val.h == 24);
  CHECK(out->val.w == 24);
}

TEST_CASE("attention gates add parameters over plain unet") {
  ArchConfig a, b;
  a.variant = Variant::unet;
  b.variant = Variant::attention_unet;
  a.in_channels = b.in_channels = 8;
  a.base_width = b.base_width = 16;
  a.depth = b.depth = 3;
  auto ua = build_model(a, 1);
  auto ub = build_model(b, 1);
  CHECK(ub->params.total_size() > ua->params.total_size());
}

TEST_CASE("unknown variant rejected") {
  CHECK_THROWS_AS(variant_from_string("transunet"), ValidationError);
}

TEST_CASE("frame window sampling") {
  Rng rng(11);
  auto full = sample_frame_window(3000, 3000, rng);
  CHECK(full.start == 0);

  CHECK_THROWS_AS(sample_frame_window(10, 0, rng), ValidationError);
  CHECK_THROWS_AS(sample_frame_window(10, 11, rng), ValidationError);

  // N=825, n=100: start uniform over [0, 725]. Chi-squared uniformity over 11
  // equal bins of 66 values, 10^4 draws; critical value for p = 0.01 with 10
  // degrees of freedom is 23.209.
  const int draws = 10000;
  std::vector<int> bins(11, 0);
  for (int d = 0; d < draws; ++d) {
    auto w = sample_frame_window(825, 100, rng);
    CHECK(w.start >= 0);
    CHECK(w.start <= 725);
    ++bins[w.start / 66];
  }
  const double expected = draws / 11.0;
  double chi2 = 0.0;
  for (int b : bins) chi2 += (b - expected) * (b - expected) / expected;
  CHECK(chi2 < 23.209);
}

TEST_CASE("augmentation involution and count preservation") {
  FusStack stack = tiny_stack(3, 12, 10, 6);
  TernaryLabelMap labels(12, 10);
  Rng rng(7);
  for (auto& v : labels.labels) v = static_cast<uint8_t>(rng.uniform_int(3));
  nn::Tensor frames = window_tensor(stack, 0, 3);

  SUBCASE("horizontal flip applied twice is the identity") {
    nn::Tensor f = frames;
    TernaryLabelMap l = labels;
    GeomTransform t;
    t.hflip = true;
    apply_geometric(f, l, t);
    apply_geometric(f, l, t);
    CHECK(f.v == frames.v);
    CHECK(l.labels == labels.labels);
  }

  SUBCASE("flips and 180-degree rotation preserve per-class pixel counts") {
    for (auto transform : {GeomTransform{true, false, 0.0}, GeomTransform{false, true, 0.0},
                           GeomTransform{false, false, 180.0}}) {
      nn::Tensor f = frames;
      TernaryLabelMap l = labels;
      apply_geometric(f, l, transform);
      int64_t before[3] = {0, 0, 0}, after[3] = {0, 0, 0};
      for (auto v : labels.labels) ++before[v];
      for (auto v : l.labels) ++after[v];
      for (int c = 0; c < 3; ++c) CHECK(before[c] == after[c]);
    }
  }

  SUBCASE("90-degree rotation on a square grid preserves counts") {
    FusStack sq = tiny_stack(2, 10, 10, 8);
    TernaryLabelMap sl(10, 10);
    Rng r2(13);
    for (auto& v : sl.labels) v = static_cast<uint8_t>(r2.uniform_int(3));
    nn::Tensor f = window_tensor(sq, 0, 2);
    TernaryLabelMap l = sl;
    apply_geometric(f, l, GeomTransform{false, false, 90.0});
    int64_t before[3] = {0, 0, 0}, after[3] = {0, 0, 0};
    for (auto v : sl.labels) ++before[v];
    for (auto v : l.labels) ++after[v];
    for (int c = 0; c < 3; ++c) CHECK(before[c] == after[c]);
  }

  SUBCASE("zero transform is bitwise identity") {
    nn::Tensor f = frames;
    TernaryLabelMap l = labels;
    apply_geometric(f, l, GeomTransform{});
    CHECK(f.v == frames.v);
    CHECK(l.labels == labels.labels);
  }

  SUBCASE("disabled augmentation draws the identity transform") {
    AugmentSpec spec;
    spec.enabled = false;
    Rng r(1);
    auto t = draw_transform(spec, r);
    CHECK_FALSE(t.hflip);
    CHECK_FALSE(t.vflip);
    CHECK(t.angle_deg == 0.0);
  }
}

TEST_CASE("training determinism and the lr = 0 degenerate case") {
  // One tiny phantom; full-stack windows and no augmentation so each epoch
  // sees identical data.
  phantom::PhantomSpec pspec;
  pspec.h = pspec.w = 16;
  pspec.h_hi = pspec.w_hi = 64;
  pspec.vessel_count = 3;
  pspec.width_lo = 2;
  pspec.width_hi = 8;
  pspec.seed = 3;
  auto ph = phantom::generate_phantom(pspec, std::nullopt, 4);

  RunConfig cfg;
  cfg.architecture = "unet";
  cfg.loss = "dice_ce";
  cfg.apply_weight_defaults();
  cfg.frames = 4;
  cfg.epochs = 3;
  cfg.batch_size = 1;
  cfg.base_width = 8;
  cfg.depth = 2;
  cfg.augment.enabled = false;
  cfg.seed = 9;

  std::vector<TrainSample> data{{&ph.stack, &ph.labels}};

  SUBCASE("lr = 0 keeps the loss curve flat") {
    RunConfig zero = cfg;
    zero.lr = 0.0;
    ArchConfig arch{Variant::unet, 4, 8, 2};
    auto model = build_model(arch, zero.seed);
    auto result = train_model(*model, data, zero);
    for (double l : result.epoch_loss)
      CHECK(l == doctest::Approx(result.epoch_loss[0]).epsilon(1e-6));
  }

  SUBCASE("same seed twice gives identical loss curves") {
    ArchConfig arch{Variant::unet, 4, 8, 2};
    auto m1 = build_model(arch, cfg.seed);
    auto m2 = build_model(arch, cfg.seed);
    auto r1 = train_model(*m1, data, cfg);
    auto r2 = train_model(*m2, data, cfg);
    CHECK(r1.epoch_loss == r2.epoch_loss);
  }
}

TEST_CASE("overfit smoke test and prediction contract") {
  phantom::PhantomSpec pspec;
  pspec.h = pspec.w = 16;
  pspec.h_hi = pspec.w_hi = 64;
  pspec.vessel_count = 3;
  pspec.width_lo = 3;
  pspec.width_hi = 12;
  pspec.noise_sigma = 0.02;
  pspec.seed = 12;
  auto ph = phantom::generate_phantom(pspec, std::nullopt, 4);

  RunConfig cfg;
  cfg.architecture = "unet";
  cfg.loss = "dice_ce";
  cfg.apply_weight_defaults();
  cfg.frames = 4;
  cfg.epochs = 40;
  cfg.batch_size = 1;
  cfg.base_width = 8;
  cfg.depth = 2;
  cfg.augment.enabled = false;
  cfg.seed = 1;

  ArchConfig arch{Variant::unet, 4, 8, 2};
  auto model = build_model(arch, cfg.seed);
  std::vector<TrainSample> data{{&ph.stack, &ph.labels}};
  auto result = train_model(*model, data, cfg);
  CHECK(result.epoch_loss.back() < 0.5 * result.epoch_loss.front());

  auto pred = predict(*model, ph.stack, 4);
  pred.probs.validate();
  auto again = predict(*model, ph.stack, 4);
  CHECK(pred.probs.probs == again.probs.probs);
  CHECK(pred.labels.labels == again.labels.labels);

  CHECK_THROWS_AS(predict(*model, ph.stack, 400), ValidationError);

  SUBCASE("save/load round trip preserves predictions") {
    const auto dir = std::filesystem::temp_directory_path() / "fusseg_model_test";
    save_model(*model, cfg, dir);
    RunConfig loaded_cfg;
    auto loaded = load_model(dir, &loaded_cfg);
    CHECK(loaded_cfg.architecture == "unet");
    auto pl = predict(*loaded, ph.stack, 4);
    CHECK(pl.probs.probs == pred.probs.probs);
  }
}

TEST_CASE("temporal mean stack collapses to per-pixel means") {
  FusStack s = tiny_stack(5, 8, 8, 21);
  auto m = temporal_mean_stack(s);
  CHECK(m.t == 1);
  CHECK(m.h == 8);
  CHECK(m.w == 8);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double sum = 0.0;
      for (int k = 0; k < 5; ++k) sum += s.at(k, i, j);
      CHECK(m.at(0, i, j) == doctest::Approx(sum / 5.0).epsilon(1e-6));
    }
}
