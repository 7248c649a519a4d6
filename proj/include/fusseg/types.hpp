#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fusseg/common.hpp"

namespace fusseg {

// Class indices used everywhere: 0 = background, 1 = downward flow, 2 = upward flow.
inline constexpr int kBackground = 0;
inline constexpr int kDownward = 1;
inline constexpr int kUpward = 2;
inline constexpr int kNumClasses = 3;

enum class Condition { rest, stimulation };

inline std::string to_string(Condition c) {
  return c == Condition::rest ? "rest" : "stimulation";
}
inline Condition condition_from_string(const std::string& s) {
  if (s == "rest") return Condition::rest;
  if (s == "stimulation" || s == "stim") return Condition::stimulation;
  throw ValidationError("unknown condition: " + s);
}

// T x H x W Power-Doppler stack, one frame per frame_period_s.
struct FusStack {
  int t = 0, h = 0, w = 0;
  std::vector<float> frames; // row-major [t][h][w]
  double frame_period_s = 0.4;
  double pixel_size_um = 100.0;
  Condition condition = Condition::rest;

  float& at(int k, int i, int j) { return frames[(static_cast<size_t>(k) * h + i) * w + j]; }
  float at(int k, int i, int j) const { return frames[(static_cast<size_t>(k) * h + i) * w + j]; }
  const float* frame(int k) const { return frames.data() + static_cast<size_t>(k) * h * w; }

  void validate() const {
    require(t >= 1, "FusStack: T >= 1 required");
    require(h >= 8 && w >= 8, "FusStack: H, W >= 8 required");
    require(frames.size() == static_cast<size_t>(t) * h * w, "FusStack: frame buffer size mismatch");
    for (float v : frames)
      require(std::isfinite(v) && v >= 0.0f, "FusStack: values must be finite and >= 0");
  }
};

// High-resolution signed Z-velocity image from ULM. Positive = downward flow.
struct UlmVelocityMap {
  int h = 0, w = 0;
  std::vector<float> values;
  double pixel_size_um = 10.0;

  float at(int i, int j) const { return values[static_cast<size_t>(i) * w + j]; }
  float& at(int i, int j) { return values[static_cast<size_t>(i) * w + j]; }

  void validate() const {
    require(h >= 1 && w >= 1, "UlmVelocityMap: empty");
    require(values.size() == static_cast<size_t>(h) * w, "UlmVelocityMap: buffer size mismatch");
    for (float v : values) require(std::isfinite(v), "UlmVelocityMap: values must be finite");
  }
};

struct BinaryMask {
  int h = 0, w = 0;
  std::vector<uint8_t> v; // values in {0, 1}

  BinaryMask() = default;
  BinaryMask(int h_, int w_) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, 0) {}
  uint8_t at(int i, int j) const { return v[static_cast<size_t>(i) * w + j]; }
  uint8_t& at(int i, int j) { return v[static_cast<size_t>(i) * w + j]; }
  int64_t count() const {
    int64_t n = 0;
    for (uint8_t x : v) n += x;
    return n;
  }
};

// Pair of binary direction masks at fUS resolution, before ternary resolution.
struct DirectionMasks {
  BinaryMask downward;
  BinaryMask upward;
  double tau = 0.05; // threshold that produced the masks
};

// Per-pixel class map: 0 = background, 1 = downward, 2 = upward.
struct TernaryLabelMap {
  int h = 0, w = 0;
  std::vector<uint8_t> labels;

  TernaryLabelMap() = default;
  TernaryLabelMap(int h_, int w_) : h(h_), w(w_), labels(static_cast<size_t>(h_) * w_, 0) {}
  uint8_t at(int i, int j) const { return labels[static_cast<size_t>(i) * w + j]; }
  uint8_t& at(int i, int j) { return labels[static_cast<size_t>(i) * w + j]; }

  void validate() const {
    require(h >= 1 && w >= 1, "TernaryLabelMap: empty");
    require(labels.size() == static_cast<size_t>(h) * w, "TernaryLabelMap: buffer size mismatch");
    for (uint8_t v : labels) require(v <= 2, "TernaryLabelMap: labels must be in {0,1,2}");
  }

  BinaryMask class_mask(int cls) const {
    BinaryMask m(h, w);
    for (size_t i = 0; i < labels.size(); ++i) m.v[i] = (labels[i] == cls) ? 1 : 0;
    return m;
  }
};

// Per-pixel probability simplex over the three classes, class-major [3][H][W].
// Stored in double: the loss gradients are finite-difference-checked at 1e-3
// relative tolerance, which float storage would not leave margin for.
struct SoftSegmentation {
  int h = 0, w = 0;
  std::vector<double> probs;

  SoftSegmentation() = default;
  SoftSegmentation(int h_, int w_) : h(h_), w(w_), probs(static_cast<size_t>(kNumClasses) * h_ * w_, 0.0) {}
  double at(int c, int i, int j) const { return probs[(static_cast<size_t>(c) * h + i) * w + j]; }
  double& at(int c, int i, int j) { return probs[(static_cast<size_t>(c) * h + i) * w + j]; }
  const double* channel(int c) const { return probs.data() + static_cast<size_t>(c) * h * w; }

  void validate(double tol = 1e-5) const {
    require(h >= 1 && w >= 1, "SoftSegmentation: empty");
    require(probs.size() == static_cast<size_t>(kNumClasses) * h * w, "SoftSegmentation: buffer size mismatch");
    const size_t n = static_cast<size_t>(h) * w;
    for (size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (int c = 0; c < kNumClasses; ++c) {
        const double p = probs[c * n + i];
        require(p >= -tol && p <= 1.0 + tol, "SoftSegmentation: probability out of [0,1]");
        s += p;
      }
      require(std::abs(s - 1.0) <= tol, "SoftSegmentation: per-pixel probabilities must sum to 1");
    }
  }

  // Hard map, ties resolved toward the lower class index (b < d < u).
  TernaryLabelMap argmax() const {
    TernaryLabelMap out(h, w);
    const size_t n = static_cast<size_t>(h) * w;
    for (size_t i = 0; i < n; ++i) {
      int best = 0;
      double bestp = probs[i];
      for (int c = 1; c < kNumClasses; ++c) {
        if (probs[c * n + i] > bestp) {
          bestp = probs[c * n + i];
          best = c;
        }
      }
      out.labels[i] = static_cast<uint8_t>(best);
    }
    return out;
  }

  static SoftSegmentation one_hot(const TernaryLabelMap& t) {
    SoftSegmentation s(t.h, t.w);
    const size_t n = static_cast<size_t>(t.h) * t.w;
    for (size_t i = 0; i < n; ++i) s.probs[static_cast<size_t>(t.labels[i]) * n + i] = 1.0;
    return s;
  }
};

struct AugmentSpec {
  bool enabled = true;
  double p_hflip = 0.5;
  double p_vflip = 0.5;
  double rotation_deg = 15.0; // angle drawn uniformly in [-rotation_deg, rotation_deg]

  void validate() const {
    require(p_hflip >= 0.0 && p_hflip <= 1.0, "AugmentSpec: p_hflip in [0,1]");
    require(p_vflip >= 0.0 && p_vflip <= 1.0, "AugmentSpec: p_vflip in [0,1]");
    require(rotation_deg >= 0.0, "AugmentSpec: rotation_deg >= 0");
  }
};

struct FoldSpec {
  int k = 7;
  int train_count = -1; // -1: use everything outside the test slice
  int test_count = -1;  // -1: dataset_size / k
  uint64_t seed = 0;

  void validate() const { require(k >= 1, "FoldSpec: k >= 1"); }
};

// One training/evaluation configuration. Weight defaults follow the loss id.
struct RunConfig {
  std::string architecture = "unet"; // unet | attention_unet | unetpp | resunet | multires_unet
  std::string loss = "dice_ce";      // dice_ce | cf_b | cf_v | cf
  double alpha = -1.0, beta = -1.0, gamma = -1.0; // negative: take the per-loss default
  int frames = 100;
  int epochs = 200;
  double lr = 1e-3;
  int batch_size = 4;
  uint64_t seed = 0;
  int base_width = 32;
  int depth = 4;
  // Collapse each stack to its temporal mean before training (n = 1 path).
  bool averaged_stack = false;
  AugmentSpec augment;
  FoldSpec folds;

  void apply_weight_defaults();
  void validate() const;
};

} // namespace fusseg
