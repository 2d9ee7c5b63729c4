#pragma once

// Separable two-compartment renal model. The same discretization is used to
// synthesize phantom tissue curves and to fit them, so phantom and fitter agree
// exactly in the noiseless limit.

#include <cmath>
#include <vector>

#include "dcedip/types.hpp"

namespace dcedip {

/// Plasma flow F_P and tubular flow F_T in 1/s, transit times T_P and T_T in s.
struct TKParams {
  double fp = 0.0;
  double tp = 1.0;
  double ft = 0.0;
  double tt = 1.0;

  bool operator==(const TKParams&) const = default;
};

/// Contrast-agent concentration in mM sampled every dt seconds.
struct ConcentrationCurve {
  std::vector<double> values;
  double dt = 1.0;

  std::size_t size() const { return values.size(); }
};

inline void validate(const TKParams& tk) {
  require(tk.fp >= 0.0 && tk.ft >= 0.0, "TKParams: flows must be nonnegative");
  require(tk.tp > 0.0 && tk.tt > 0.0, "TKParams: transit times must be positive");
}

/// out[k] = dt * sum_{j=0..k} a[j] * b[k-j]; each sample stands for the interval to its right.
inline std::vector<double> causal_convolve(const std::vector<double>& a, const std::vector<double>& b,
                                           double dt) {
  const std::size_t n = std::min(a.size(), b.size());
  std::vector<double> out(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j <= k; ++j) s += a[j] * b[k - j];
    out[k] = dt * s;
  }
  return out;
}

/// h(t) = F_P exp(-t/T_P) + F_T/T_P * (exp(-t/T_P) conv exp(-t/T_T)).
inline std::vector<double> impulse_response(const TKParams& tk, std::size_t frames, double dt) {
  validate(tk);
  std::vector<double> ep(frames), et(frames);
  for (std::size_t k = 0; k < frames; ++k) {
    const double t = static_cast<double>(k) * dt;
    ep[k] = std::exp(-t / tk.tp);
    et[k] = std::exp(-t / tk.tt);
  }
  const auto tub = causal_convolve(ep, et, dt);
  std::vector<double> h(frames);
  for (std::size_t k = 0; k < frames; ++k) h[k] = tk.fp * ep[k] + tk.ft / tk.tp * tub[k];
  return h;
}

/// C_tissue = C_AIF conv h, same step as the AIF.
inline ConcentrationCurve tissue_concentration(const ConcentrationCurve& aif, const TKParams& tk) {
  require(aif.dt > 0.0, "tissue_concentration: dt must be positive");
  const auto h = impulse_response(tk, aif.size(), aif.dt);
  return {causal_convolve(aif.values, h, aif.dt), aif.dt};
}

}  // namespace dcedip
