#pragma once

// Synthetic renal DCE phantom: elliptical compartments whose voxel signals
// follow a tracer-kinetic concentration passed through the spoiled-GRE
// steady-state signal equation.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dcedip/tk_model.hpp"
#include "dcedip/types.hpp"

namespace dcedip {

struct ScanParams {
  double tr = 3.56e-3;      // s
  double flip_deg = 12.0;   // degrees
  double relaxivity = 4.5;  // 1/(mM s)
};

/// Bolus + recirculation + washout arterial input function (all amplitudes in mM).
struct AifShape {
  double bolus_amp = 5.4;
  double bolus_alpha = 4.0;
  double bolus_beta = 3.5;  // bolus peak at alpha*beta seconds after injection
  double recirc_amp = 1.0;
  double recirc_delay = 28.0;
  double recirc_alpha = 4.0;
  double recirc_beta = 3.0;
  double washout_amp = 0.9;
  double washout_rise = 10.0;
  double washout_decay = 300.0;
};

/// Ellipse in voxel units, center relative to the image center.
struct Ellipse {
  double cx = 0.0, cy = 0.0, ax = 1.0, ay = 1.0;

  double radius(double x, double y) const {
    const double u = (x - cx) / ax, v = (y - cy) / ay;
    return std::sqrt(u * u + v * v);
  }
  bool contains(double x, double y) const { return radius(x, y) <= 1.0; }
};

enum class RegionRole { artery, tissue };

struct Region {
  std::string name;
  RegionRole role = RegionRole::tissue;
  Ellipse shape;
  double t1 = 1.2;  // pre-contrast T1, s
  double m0 = 1.0;
  TKParams tk;         // ignored for arteries
  std::string kidney;  // group label for ROI analysis; empty when not kidney parenchyma
};

struct PhantomSpec {
  int n = 64;
  int frames = 55;
  double dt = 3.3;
  double injection_delay = 20.0;
  std::vector<Region> regions;
  Ellipse body{0.0, 0.0, 26.0, 20.0};
  double body_edge = 1.5;    // tanh taper width of the body outline, voxels
  double region_edge = 1.5;  // Gaussian fall-off of each compartment into surrounding background, voxels
  double background_t1 = 0.8;
  double background_m0 = 1.0;
  double phase_scale = 0.5;  // rad, spread of the polynomial phase coefficients
  ScanParams scan;
  AifShape aif;
  std::uint64_t noise_seed = 1234;
};

struct GroundTruthSeq {
  ImageSeq images;
  LabelImage labels;  // 0 = background, i+1 = spec.regions[i]
  ConcentrationCurve aif;
  std::vector<ConcentrationCurve> region_curves;  // aligned with spec.regions
  PhantomSpec spec;
};

/// Baseline renal phantom at grid size n (geometry scales with n/64).
inline PhantomSpec default_phantom_spec(int n = 64) {
  PhantomSpec s;
  s.n = n;
  const double g = n / 64.0;
  s.body = {0.0, 0.0, 26.0 * g, 20.0 * g};
  s.body_edge = 1.5 * g;
  s.region_edge = 1.5 * g;
  s.regions = {
      {"aorta", RegionRole::artery, {0.0, 3.0 * g, 3.5 * g, 3.5 * g}, 1.6, 1.0, {}, ""},
      {"cortex", RegionRole::tissue, {-14.0 * g, 0.0, 4.0 * g, 7.0 * g}, 1.2, 1.0,
       {0.040, 4.0, 0.006, 80.0}, "left"},
      {"medulla", RegionRole::tissue, {-7.0 * g, 0.0, 2.5 * g, 5.0 * g}, 1.2, 1.0,
       {0.015, 6.0, 0.008, 120.0}, "left"},
      {"pelvis", RegionRole::tissue, {-13.0 * g, 10.5 * g, 3.0 * g, 2.5 * g}, 1.2, 1.0,
       {0.004, 8.0, 0.010, 150.0}, "left"},
  };
  return s;
}

inline void validate(const PhantomSpec& s) {
  require(s.n >= 8, "PhantomSpec: grid size must be at least 8");
  require(s.frames >= 2, "PhantomSpec: need at least 2 frames");
  require(s.dt > 0.0, "PhantomSpec: frame duration must be positive");
  require(s.injection_delay >= 0.0, "PhantomSpec: injection delay must be nonnegative");
  require(s.background_t1 > 0.0, "PhantomSpec: background T1 must be positive");
  require(s.body_edge > 0.0 && s.region_edge >= 0.0, "PhantomSpec: edge widths must be positive");
  for (const auto& r : s.regions) {
    require(r.t1 > 0.0, "PhantomSpec: region " + r.name + " has nonpositive T1");
    require(r.shape.ax > 0.0 && r.shape.ay > 0.0, "PhantomSpec: region " + r.name + " has empty axes");
    if (r.role == RegionRole::tissue) validate(r.tk);
  }
}

inline double aif_value(const AifShape& a, double since_injection) {
  auto gamma = [](double t, double alpha, double beta) {
    if (t <= 0.0) return 0.0;
    const double x = t / (alpha * beta);
    return std::pow(x, alpha) * std::exp(alpha * (1.0 - x));
  };
  const double t = since_injection;
  if (t <= 0.0) return 0.0;
  return a.bolus_amp * gamma(t, a.bolus_alpha, a.bolus_beta) +
         a.recirc_amp * gamma(t - a.recirc_delay, a.recirc_alpha, a.recirc_beta) +
         a.washout_amp * (1.0 - std::exp(-t / a.washout_rise)) * std::exp(-t / a.washout_decay);
}

inline ConcentrationCurve make_aif(const PhantomSpec& spec) {
  require(spec.frames * spec.dt > spec.injection_delay,
          "make_aif: no frames after injection (T*dt <= injection_delay)");
  ConcentrationCurve c{std::vector<double>(spec.frames), spec.dt};
  for (int k = 0; k < spec.frames; ++k) c.values[k] = aif_value(spec.aif, k * spec.dt - spec.injection_delay);
  return c;
}

/// Spoiled gradient-echo steady-state signal for concentration c (mM).
inline double gre_signal(double c, double t1_baseline, double tr, double flip_deg, double relaxivity,
                         double m0 = 1.0) {
  require(t1_baseline > 0.0 && tr > 0.0 && relaxivity > 0.0, "gre_signal: invalid timing parameters");
  require(flip_deg > 0.0 && flip_deg < 90.0, "gre_signal: flip angle must be in (0, 90)");
  const double fa = flip_deg * kPi / 180.0;
  const double r1 = 1.0 / t1_baseline + relaxivity * c;
  const double e1 = std::exp(-tr * r1);
  return m0 * std::sin(fa) * (1.0 - e1) / (1.0 - std::cos(fa) * e1);
}

inline double gre_signal(double c, double t1_baseline, const ScanParams& scan, double m0 = 1.0) {
  return gre_signal(c, t1_baseline, scan.tr, scan.flip_deg, scan.relaxivity, m0);
}

struct ConversionResult {
  double concentration = 0.0;
  bool clamped = false;  // signal was below baseline
};

/// Exact inverse of gre_signal; M0 is recovered from the pre-contrast baseline signal.
inline ConversionResult signal_to_concentration(double signal, double baseline_signal, double t1_baseline,
                                                double tr, double flip_deg, double relaxivity) {
  require(baseline_signal > 0.0, "signal_to_concentration: baseline signal must be positive");
  const double unit = gre_signal(0.0, t1_baseline, tr, flip_deg, relaxivity, 1.0);
  const double m0 = baseline_signal / unit;
  if (signal <= baseline_signal) return {0.0, signal < baseline_signal};
  const double fa = flip_deg * kPi / 180.0;
  const double s = signal / m0;
  const double sup = std::sin(fa);
  if (s >= sup) throw std::domain_error("signal_to_concentration: signal exceeds the steady-state supremum");
  const double e1 = (sup - s) / (sup - s * std::cos(fa));
  const double r1 = -std::log(e1) / tr;
  return {std::max(0.0, (r1 - 1.0 / t1_baseline) / relaxivity), false};
}

inline ConversionResult signal_to_concentration(double signal, double baseline_signal, double t1_baseline,
                                                const ScanParams& scan) {
  return signal_to_concentration(signal, baseline_signal, t1_baseline, scan.tr, scan.flip_deg, scan.relaxivity);
}

/// Voxel center coordinates relative to the image center for index i of n.
inline double centered(int i, int n) { return static_cast<double>(i) - n / 2; }

inline LabelImage region_labels(const PhantomSpec& spec) {
  LabelImage labels = LabelImage::Zero(spec.n, spec.n);
  for (int y = 0; y < spec.n; ++y)
    for (int x = 0; x < spec.n; ++x) {
      const double px = centered(x, spec.n), py = centered(y, spec.n);
      for (std::size_t r = 0; r < spec.regions.size(); ++r) {
        if (!spec.regions[r].shape.contains(px, py)) continue;
        if (labels(y, x) != 0)
          throw std::invalid_argument("render_phantom: regions " + spec.regions[labels(y, x) - 1].name + " and " +
                                      spec.regions[r].name + " overlap");
        labels(y, x) = static_cast<int>(r) + 1;
      }
    }
  return labels;
}

/// Smooth static phase: low-order polynomial with seeded coefficients.
inline RealImage phase_map(const PhantomSpec& spec) {
  std::mt19937_64 rng(spec.noise_seed);
  std::normal_distribution<double> nd(0.0, spec.phase_scale);
  double c[6];
  for (double& v : c) v = nd(rng);
  RealImage ph(spec.n, spec.n);
  for (int y = 0; y < spec.n; ++y)
    for (int x = 0; x < spec.n; ++x) {
      const double u = centered(x, spec.n) / spec.n, v = centered(y, spec.n) / spec.n;
      ph(y, x) = c[0] + c[1] * u + c[2] * v + c[3] * u * v + c[4] * u * u + c[5] * v * v;
    }
  return ph;
}

/// Per-region concentration curves; arteries carry the AIF itself.
inline std::vector<ConcentrationCurve> region_concentrations(const PhantomSpec& spec, const ConcentrationCurve& aif) {
  std::vector<ConcentrationCurve> out;
  out.reserve(spec.regions.size());
  for (const auto& r : spec.regions)
    out.push_back(r.role == RegionRole::artery ? aif : tissue_concentration(aif, r.tk));
  return out;
}

inline GroundTruthSeq render_phantom(const PhantomSpec& spec) {
  validate(spec);
  GroundTruthSeq gt;
  gt.spec = spec;
  gt.labels = region_labels(spec);
  gt.aif = make_aif(spec);
  gt.region_curves = region_concentrations(spec, gt.aif);

  const RealImage phase = phase_map(spec);
  const std::size_t nr = spec.regions.size();
  Image carrier(spec.n, spec.n);
  RealImage body(spec.n, spec.n);
  // Background voxels take a share of each nearby compartment's signal; voxels inside a mask are pure.
  std::vector<RealImage> share(nr, RealImage::Zero(spec.n, spec.n));
  for (int y = 0; y < spec.n; ++y)
    for (int x = 0; x < spec.n; ++x) {
      carrier(y, x) = std::polar(1.0, phase(y, x));
      const double px = centered(x, spec.n), py = centered(y, spec.n);
      const double d = spec.body.radius(px, py);
      const double inside = (1.0 - d) * std::min(spec.body.ax, spec.body.ay);
      body(y, x) = 0.5 * (1.0 + std::tanh(inside / spec.body_edge));
      if (gt.labels(y, x) != 0) {
        share[gt.labels(y, x) - 1](y, x) = 1.0;
        continue;
      }
      if (spec.region_edge <= 0.0) continue;
      double total = 0.0;
      for (std::size_t r = 0; r < nr; ++r) {
        const auto& e = spec.regions[r].shape;
        const double out = (e.radius(px, py) - 1.0) * std::min(e.ax, e.ay);
        share[r](y, x) = std::exp(-0.5 * out * out / (spec.region_edge * spec.region_edge));
        total += share[r](y, x);
      }
      if (total > 1.0)
        for (std::size_t r = 0; r < nr; ++r) share[r](y, x) /= total;
    }
  const double bg = gre_signal(0.0, spec.background_t1, spec.scan, spec.background_m0);

  gt.images.assign(spec.frames, Image(spec.n, spec.n));
  for (int t = 0; t < spec.frames; ++t) {
    std::vector<double> level(spec.regions.size());
    for (std::size_t r = 0; r < spec.regions.size(); ++r) {
      const auto& reg = spec.regions[r];
      level[r] = gre_signal(gt.region_curves[r].values[t], reg.t1, spec.scan, reg.m0);
    }
    Image& img = gt.images[t];
    for (int y = 0; y < spec.n; ++y)
      for (int x = 0; x < spec.n; ++x) {
        double mag = 0.0, rest = 1.0;
        for (std::size_t r = 0; r < nr; ++r) {
          mag += share[r](y, x) * level[r];
          rest -= share[r](y, x);
        }
        if (gt.labels(y, x) == 0) mag += std::max(rest, 0.0) * bg * body(y, x);
        img(y, x) = mag * carrier(y, x);
      }
  }
  return gt;
}

/// Frame indices with t*dt < injection_delay (at least the first frame).
inline int pre_injection_frames(int frames, double dt, double injection_delay) {
  int k = 0;
  while (k < frames && k * dt < injection_delay) ++k;
  return std::max(k, 1);
}

}  // namespace dcedip
