#include "fusseg/phantom.hpp"

#include <algorithm>
#include <cmath>

#include "fusseg/rng.hpp"

namespace fusseg::phantom {

namespace {
constexpr double kPi = 3.14159265358979323846;
} // namespace

void PhantomSpec::validate() const {
  require(h >= 8 && w >= 8, "PhantomSpec: low-res grid >= 8x8");
  require(h_hi >= h && w_hi >= w, "PhantomSpec: high-res grid smaller than low-res");
  require(h_hi % h == 0 && w_hi % w == 0, "PhantomSpec: grid ratios must be integer");
  require(vessel_count >= 1, "PhantomSpec: vessel_count >= 1");
  require(width_lo > 0 && width_lo <= width_hi, "PhantomSpec: width range inverted or non-positive");
  require(width_hi < std::min(h_hi, w_hi), "PhantomSpec: vessel width exceeds grid");
  require(v_lo >= 0.05 && v_lo <= v_hi && v_hi <= 1.0, "PhantomSpec: velocity range within [0.05, 1]");
  require(direction_ratio >= 0.0 && direction_ratio <= 1.0, "PhantomSpec: direction_ratio in [0,1]");
  require(noise_sigma >= 0.0, "PhantomSpec: noise_sigma >= 0");
  require(cortex_row_begin >= 0 && cortex_row_begin < h_hi, "PhantomSpec: cortex rows out of range");
  require(cortex_end() > cortex_row_begin && cortex_end() <= h_hi, "PhantomSpec: cortex rows out of range");
}

std::vector<Vessel> generate_vessel_tree(const PhantomSpec& spec) {
  spec.validate();
  Rng rng(Rng::mix(spec.seed, 0x7665737365ULL)); // "vessel" stream

  const int n = spec.vessel_count;
  const int n_down = static_cast<int>(std::lround(spec.direction_ratio * n));

  // Stratified entry columns with jitter, then a deterministic shuffle so the
  // direction assignment is not correlated with horizontal position.
  std::vector<double> slots(n);
  const double margin = spec.width_hi * 0.75;
  const double usable = spec.w_hi - 2.0 * margin;
  for (int i = 0; i < n; ++i)
    slots[i] = margin + usable * (i + 0.5) / n + rng.uniform(-0.25, 0.25) * usable / n;
  for (int i = n - 1; i > 0; --i) std::swap(slots[i], slots[rng.uniform_int(i + 1)]);

  const double wspan = spec.width_hi - spec.width_lo;
  std::vector<Vessel> vessels(n);
  for (int i = 0; i < n; ++i) {
    Vessel& v = vessels[i];
    const bool down = i < n_down;

    // Venules are drawn wider than arterioles: the calibre difference is the
    // condition-invariant cue that makes direction learnable from Power
    // Doppler content, mirroring the simpler/denser structure split the real
    // compartments show.
    const double w0 = down ? spec.width_lo + wspan * 0.35 * rng.uniform01()
                           : spec.width_lo + wspan * (0.65 + 0.35 * rng.uniform01());
    v.width = std::min(w0, spec.width_hi);
    const double speed = rng.uniform(spec.v_lo, spec.v_hi);
    v.velocity = down ? speed : -speed;

    // Walk from top to bottom in fixed row steps; the lateral drift angle is
    // tightly bounded inside the cortex band and looser below it.
    const double step = std::max(4.0, spec.h_hi / 16.0);
    double row = 0.0;
    double col = slots[i];
    v.centerline.push_back({row, col});
    while (row < spec.h_hi - 1) {
      const double next_row = std::min(static_cast<double>(spec.h_hi - 1), row + step);
      const bool in_cortex = row >= spec.cortex_row_begin && row < spec.cortex_end();
      const double max_deg = in_cortex ? 12.0 : 25.0;
      const double angle = rng.uniform(-max_deg, max_deg) * kPi / 180.0;
      col += std::tan(angle) * (next_row - row);
      col = std::clamp(col, margin * 0.25, spec.w_hi - 1 - margin * 0.25);
      row = next_row;
      v.centerline.push_back({row, col});
    }
  }

  // In-plane distractors with no Z-velocity component: mostly out-of-plane
  // vessel cross-sections (short bright blobs that locally mimic thin vertical
  // vessels), plus the occasional horizontal run.
  for (int i = 0; i < spec.distractor_count; ++i) {
    Vessel v;
    v.in_plane = true;
    v.velocity = rng.bernoulli(0.5) ? spec.v_lo : -spec.v_lo; // in-plane speed, unused for annotation
    if (rng.bernoulli(0.75)) {
      // Cross-section blob: a short near-vertical capsule of arteriole calibre.
      v.width = spec.width_lo + wspan * 0.35 * rng.uniform01();
      const double row = rng.uniform(0.05, 0.9) * spec.h_hi;
      const double col = rng.uniform(0.05, 0.95) * spec.w_hi;
      const double len = v.width * rng.uniform(0.5, 2.5);
      v.centerline.push_back({row, col});
      v.centerline.push_back({std::min(row + len, spec.h_hi - 1.0), col});
    } else {
      // Horizontal in-plane run.
      v.width = spec.width_lo + wspan * 0.5 * rng.uniform01();
      const double step = std::max(4.0, spec.w_hi / 16.0);
      double row = rng.uniform(0.1, 0.9) * spec.h_hi;
      double col = 0.0;
      v.centerline.push_back({row, col});
      while (col < spec.w_hi - 1) {
        const double next_col = std::min(static_cast<double>(spec.w_hi - 1), col + step);
        const double angle = rng.uniform(-12.0, 12.0) * kPi / 180.0;
        row += std::tan(angle) * (next_col - col);
        row = std::clamp(row, 1.0, spec.h_hi - 2.0);
        col = next_col;
        v.centerline.push_back({row, col});
      }
    }
    vessels.push_back(std::move(v));
  }
  return vessels;
}

namespace {

// Squared distance from point p to segment [a, b].
double dist2_point_segment(double pr, double pc, double ar, double ac, double br, double bc) {
  const double dr = br - ar, dc = bc - ac;
  const double len2 = dr * dr + dc * dc;
  double t = 0.0;
  if (len2 > 0.0) t = std::clamp(((pr - ar) * dr + (pc - ac) * dc) / len2, 0.0, 1.0);
  const double qr = ar + t * dr - pr;
  const double qc = ac + t * dc - pc;
  return qr * qr + qc * qc;
}

} // namespace

namespace {

// Paints `value` over the vessel capsule; used for both the signed velocity
// map and the any-vessel occupancy raster.
template <typename Paint>
void rasterize_vessel(const Vessel& v, int h, int w, const Paint& paint) {
  const double r = v.width / 2.0;
  const double r2 = r * r;
  for (size_t s = 0; s + 1 < v.centerline.size(); ++s) {
    const auto [ar, ac] = v.centerline[s];
    const auto [br, bc] = v.centerline[s + 1];
    const int r0 = std::max(0, static_cast<int>(std::floor(std::min(ar, br) - r)));
    const int r1 = std::min(h - 1, static_cast<int>(std::ceil(std::max(ar, br) + r)));
    const int c0 = std::max(0, static_cast<int>(std::floor(std::min(ac, bc) - r)));
    const int c1 = std::min(w - 1, static_cast<int>(std::ceil(std::max(ac, bc) + r)));
    for (int pr = r0; pr <= r1; ++pr)
      for (int pc = c0; pc <= c1; ++pc)
        if (dist2_point_segment(pr, pc, ar, ac, br, bc) <= r2) paint(pr, pc);
  }
}

} // namespace

UlmVelocityMap render_ulm_velocity(const std::vector<Vessel>& vessels, const PhantomSpec& spec) {
  spec.validate();
  UlmVelocityMap map;
  map.h = spec.h_hi;
  map.w = spec.w_hi;
  map.values.assign(static_cast<size_t>(map.h) * map.w, 0.0f);

  for (const Vessel& v : vessels) {
    require(!v.centerline.empty(), "render_ulm_velocity: vessel without centerline");
    if (v.in_plane) continue; // no vertical flow component to report
    require(std::abs(v.velocity) >= 0.05, "render_ulm_velocity: |velocity| >= 0.05 on vessel cores");
    rasterize_vessel(v, map.h, map.w,
                     [&](int pr, int pc) { map.at(pr, pc) = static_cast<float>(v.velocity); });
  }
  return map;
}

std::vector<uint8_t> stimulus_waveform(const StimulusParadigm& paradigm, int t_frames) {
  require(t_frames >= 1, "stimulus_waveform: T >= 1");
  std::vector<uint8_t> s(t_frames, 0);
  for (int k = 0; k < t_frames; ++k) {
    const double t = k * paradigm.frame_period_s;
    for (int j = 0; j < paradigm.cycles; ++j) {
      const double on0 = paradigm.initial_rest_s + j * (paradigm.on_s + paradigm.off_s);
      if (t >= on0 && t < on0 + paradigm.on_s) {
        s[k] = 1;
        break;
      }
    }
  }
  return s;
}

std::vector<double> hemodynamic_response(std::span<const uint8_t> waveform, double frame_period_s,
                                         double tau_s) {
  require(tau_s > 0.0, "hemodynamic_response: tau > 0");
  const double a = std::exp(-frame_period_s / tau_s);
  std::vector<double> r(waveform.size(), 0.0);
  double prev = 0.0;
  for (size_t k = 0; k < waveform.size(); ++k) {
    prev = a * prev + (1.0 - a) * waveform[k];
    r[k] = prev;
  }
  return r;
}

PhantomOutput render_fus_stack(const std::vector<Vessel>& vessels, const PhantomSpec& spec,
                               const std::optional<StimulusParadigm>& paradigm, int t_frames,
                               double annotation_tau) {
  spec.validate();
  require(t_frames >= 1, "render_fus_stack: T >= 1");

  PhantomOutput out;
  out.ulm = render_ulm_velocity(vessels, spec);

  annotation::AnnotationParams params;
  params.tau = annotation_tau;
  params.target_h = spec.h;
  params.target_w = spec.w;
  auto ann = annotation::annotate(out.ulm, params);
  out.masks = std::move(ann.masks);
  out.labels = std::move(ann.labels);
  out.mixed_fraction = ann.mixed_fraction;

  // Any-vessel occupancy (including in-plane distractors) for the baseline.
  std::vector<uint8_t> occupied(out.ulm.values.size(), 0);
  for (const Vessel& v : vessels)
    rasterize_vessel(v, spec.h_hi, spec.w_hi,
                     [&](int pr, int pc) { occupied[static_cast<size_t>(pr) * spec.w_hi + pc] = 1; });
  out.coverage_total = annotation::downsample_coverage(occupied, spec.h_hi, spec.w_hi, spec.h, spec.w);

  std::vector<double> response(t_frames, 0.0);
  if (paradigm) {
    auto s = stimulus_waveform(*paradigm, t_frames);
    response = hemodynamic_response(s, paradigm->frame_period_s);
  }

  FusStack& stack = out.stack;
  stack.t = t_frames;
  stack.h = spec.h;
  stack.w = spec.w;
  stack.condition = paradigm ? Condition::stimulation : Condition::rest;
  stack.frame_period_s = paradigm ? paradigm->frame_period_s : 0.4;
  stack.pixel_size_um = 100.0;
  stack.frames.resize(static_cast<size_t>(t_frames) * spec.h * spec.w);

  const size_t npx = static_cast<size_t>(spec.h) * spec.w;
  std::vector<double> baseline(npx), gain(npx);
  for (size_t i = 0; i < npx; ++i) {
    baseline[i] = out.coverage_total.v[i] + spec.background_floor;
    const uint8_t cls = out.labels.labels[i];
    gain[i] = cls == kDownward ? spec.g_d : (cls == kUpward ? spec.g_u : 0.0);
  }

  Rng noise(Rng::mix(spec.seed, 0x6e6f697365ULL)); // "noise" stream
  for (int k = 0; k < t_frames; ++k) {
    float* frame = stack.frames.data() + static_cast<size_t>(k) * npx;
    const double r = response[k];
    for (size_t i = 0; i < npx; ++i) {
      const double eta = spec.noise_sigma > 0.0 ? noise.normal(0.0, spec.noise_sigma) : 0.0;
      // Clamp at zero: Power Doppler is non-negative by definition.
      frame[i] = static_cast<float>(std::max(0.0, baseline[i] * (1.0 + gain[i] * r) * (1.0 + eta)));
    }
  }
  return out;
}

PhantomOutput generate_phantom(const PhantomSpec& spec, const std::optional<StimulusParadigm>& paradigm,
                               int t_frames, double annotation_tau) {
  return render_fus_stack(generate_vessel_tree(spec), spec, paradigm, t_frames, annotation_tau);
}

} // namespace fusseg::phantom
