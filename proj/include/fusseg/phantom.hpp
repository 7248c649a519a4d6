#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "fusseg/annotation.hpp"
#include "fusseg/types.hpp"

namespace fusseg::phantom {

// Synthetic paired (ULM velocity map, fUS stack) generator with known ground
// truth. Vessels are near-vertical in the cortex band; upward (venous) vessels
// are drawn systematically wider than downward ones so that flow direction is
// inferable from resting-state image content alone.
struct PhantomSpec {
  int h_hi = 1120, w_hi = 1280; // high-res grid (velocity map)
  int h = 112, w = 128;         // low-res grid (fUS)
  int vessel_count = 10;
  int cortex_row_begin = 0;  // high-res rows where centerlines stay near-vertical
  int cortex_row_end = -1;   // -1: first 45% of rows
  double direction_ratio = 0.5; // fraction of vessels with downward flow
  double width_lo = 6.0, width_hi = 40.0; // vessel diameter, high-res pixels
  double v_lo = 0.05, v_hi = 1.0;         // |velocity| on vessel cores, normalized
  double noise_sigma = 0.05;              // multiplicative Gaussian noise
  double g_d = 0.10, g_u = 0.06;          // stimulus response gains per compartment
  double background_floor = 0.01;
  // Horizontal in-plane vessels: bright in Power Doppler but invisible to the
  // Z-velocity map (no vertical flow component), so they belong to the
  // background class. Zero keeps the minimal all-vertical phantom.
  int distractor_count = 0;
  uint64_t seed = 0;

  int cortex_end() const { return cortex_row_end >= 0 ? cortex_row_end : static_cast<int>(0.45 * h_hi); }
  void validate() const;
};

struct Vessel {
  std::vector<std::pair<double, double>> centerline; // (row, col) in high-res pixels
  double width = 1.0;                                // diameter, high-res pixels
  double velocity = 0.0;                             // signed; positive = downward
  bool in_plane = false; // horizontal flow: contributes to the stack, not to the velocity map
};

// 30 s initial rest, then 4 cycles of 30 s ON / 45 s OFF: 330 s = 825 frames at 0.4 s.
struct StimulusParadigm {
  double initial_rest_s = 30.0;
  int cycles = 4;
  double on_s = 30.0;
  double off_s = 45.0;
  double frame_period_s = 0.4;

  double total_duration_s() const { return initial_rest_s + cycles * (on_s + off_s); }
  int total_frames() const { return static_cast<int>(total_duration_s() / frame_period_s + 0.5); }
};

std::vector<Vessel> generate_vessel_tree(const PhantomSpec& spec);

// Vessel-core pixels carry the signed velocity; background is 0. Vessels are
// rasterized in list order, later ones overwriting earlier ones on overlap.
UlmVelocityMap render_ulm_velocity(const std::vector<Vessel>& vessels, const PhantomSpec& spec);

// s[k] = 1 iff frame time k * frame_period lies in an ON interval.
std::vector<uint8_t> stimulus_waveform(const StimulusParadigm& paradigm, int t_frames);

// First-order exponential smoothing of the stimulus waveform (time constant tau_s).
std::vector<double> hemodynamic_response(std::span<const uint8_t> waveform, double frame_period_s,
                                         double tau_s = 1.5);

struct PhantomOutput {
  FusStack stack;
  UlmVelocityMap ulm;
  DirectionMasks masks;
  TernaryLabelMap labels;
  annotation::Coverage coverage_total; // any-vessel coverage per low-res pixel
  double mixed_fraction = 0.0;
};

// Renders the stack from vessel geometry. Baseline per low-res pixel is the
// any-vessel area coverage plus the background floor; the frame value is
// B_i * (1 + g_c * r(k)) * (1 + eta) with r the smoothed stimulus response
// (zero when no paradigm is given) and eta ~ N(0, noise_sigma). Ground-truth
// masks come from the annotation module applied to the paired velocity map.
PhantomOutput render_fus_stack(const std::vector<Vessel>& vessels, const PhantomSpec& spec,
                               const std::optional<StimulusParadigm>& paradigm, int t_frames,
                               double annotation_tau = 0.05);

PhantomOutput generate_phantom(const PhantomSpec& spec, const std::optional<StimulusParadigm>& paradigm,
                               int t_frames, double annotation_tau = 0.05);

} // namespace fusseg::phantom
