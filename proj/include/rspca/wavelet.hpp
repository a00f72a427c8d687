#pragma once

// Morlet continuous wavelet transform.
//
// Mother wavelet (plane-wave factor omega0 = 2*pi*f0, admissible for
// omega0 > 5):
//
//   Psi(t) = pi^(-1/4) (e^{i omega0 t} - e^{-omega0^2 / 2}) e^{-t^2 / 2}
//
// The tiny second term makes the kernel exactly zero-mean, which is what
// renders the transform blind to additive constants and, to leading order,
// to linear trends.  Its Fourier transform is a Gaussian centered on f0:
//
//   Psi_hat(f) ~= pi^(1/4) sqrt(2) e^{-(2 pi f - 2 pi f0)^2 / 2}
//
// The transform at scale nu is the correlation of the series with the
// time-reversed conjugate daughter wavelet,
//
//   W(nu, t) = (1/sqrt(nu)) Int x(u) Psi*((u - t)/nu) du ,
//
// evaluated by frequency-domain multiplication on a padded copy of the
// series; scale nu maps to frequency f = f0/nu.  Reconstruction sums
// Re W over a dyadic scale grid,
//
//   x(t) ~= C * Sum_k Re W(nu_k, t) dlog(nu) / sqrt(nu_k) ,
//
// with C calibrated once per (f0, voices) by round-tripping a unit delta
// and reading off the flat part of its transfer function.

#include "rspca/types.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cstdint>
#include <map>
#include <mutex>
#include <numbers>
#include <vector>

namespace rspca {

template <typename Scalar = double>
struct MorletParams {
  Scalar f0 = Scalar(0.849);  // sqrt(1 / (2 ln 2)): octave-band energy split

  Scalar omega0() const { return Scalar(2) * std::numbers::pi_v<Scalar> * f0; }
};

template <typename Scalar>
void check_morlet_params(const MorletParams<Scalar>& p) {
  if (!(p.omega0() > Scalar(5)))
    throw InvalidInput("morlet f0 too small: 2*pi*f0 must exceed 5, got f0=" +
                       std::to_string(static_cast<double>(p.f0)));
}

// Mother wavelet sample Psi(t) including the zero-mean correction term.
template <typename Scalar>
std::complex<Scalar> morlet_mother(Scalar t, const MorletParams<Scalar>& p = {}) {
  constexpr Scalar pi = std::numbers::pi_v<Scalar>;
  const Scalar w0 = p.omega0();
  const Scalar envelope = std::pow(pi, Scalar(-0.25)) * std::exp(-t * t / Scalar(2));
  const Scalar correction = std::exp(-w0 * w0 / Scalar(2));
  return envelope * (std::complex<Scalar>(std::cos(w0 * t), std::sin(w0 * t)) - correction);
}

// Fourier magnitude of the scale-nu daughter, sqrt(nu) * Psi_hat(nu f).
template <typename Scalar>
Scalar morlet_fourier(Scalar f, Scalar scale, const MorletParams<Scalar>& p = {}) {
  constexpr Scalar pi = std::numbers::pi_v<Scalar>;
  const Scalar arg = Scalar(2) * pi * scale * f - p.omega0();
  return std::sqrt(scale) * std::pow(pi, Scalar(0.25)) * std::sqrt(Scalar(2)) *
         std::exp(-arg * arg / Scalar(2));
}

// Dyadic scale grid: consecutive scales differ by a factor 2^(1/voices).
template <typename Scalar = double>
struct ScaleSet {
  Vector<Scalar> scales;       // ascending
  Vector<Scalar> frequencies;  // f0 / scale, descending
  int voices_per_octave = 8;

  Index n_scales() const { return scales.size(); }

  Scalar dlog_scale() const {
    return std::numbers::ln2_v<Scalar> / static_cast<Scalar>(voices_per_octave);
  }

  // Index of the scale whose frequency lies nearest the target.
  Index nearest_band(Scalar freq) const {
    Index best = 0;
    for (Index k = 1; k < n_scales(); ++k)
      if (std::abs(frequencies[k] - freq) < std::abs(frequencies[best] - freq)) best = k;
    return best;
  }
};

// Builds the dyadic scale grid covering [fmin, fmax]; the finest scale sits
// exactly at fmax and scales grow by 2^(1/voices) until fmin is reached.
template <typename Scalar>
ScaleSet<Scalar> make_scales(const MorletParams<Scalar>& p, Scalar fmin, Scalar fmax,
                             int voices_per_octave) {
  check_morlet_params(p);
  if (!(fmin > Scalar(0)) || !(fmax > fmin))
    throw InvalidInput("scale grid requires 0 < fmin < fmax");
  if (voices_per_octave < 1) throw InvalidInput("voices_per_octave must be >= 1");

  const Scalar nu_min = p.f0 / fmax;
  const Scalar nu_max = (p.f0 / fmin) * (Scalar(1) + Scalar(1e-12));
  std::vector<Scalar> scales;
  for (int k = 0;; ++k) {
    const Scalar nu =
        nu_min * std::pow(Scalar(2), static_cast<Scalar>(k) / static_cast<Scalar>(voices_per_octave));
    if (nu > nu_max) break;
    scales.push_back(nu);
  }
  ScaleSet<Scalar> s;
  s.voices_per_octave = voices_per_octave;
  s.scales = Eigen::Map<const Vector<Scalar>>(scales.data(), static_cast<Index>(scales.size()));
  s.frequencies = p.f0 / s.scales.array();
  return s;
}

// True where a coefficient at this scale is clear of edge effects: the
// first and last ceil(sqrt(2) * nu / dt) samples are inside the cone of
// influence (e-folding horizon of the Gaussian envelope).
template <typename Scalar>
std::vector<std::uint8_t> cone_of_influence(Scalar scale, Scalar dt, Index l) {
  const Index h = static_cast<Index>(std::ceil(std::numbers::sqrt2_v<Scalar> * scale / dt));
  std::vector<std::uint8_t> coi(static_cast<std::size_t>(l), 0);
  for (Index t = h; t < l - h; ++t) coi[static_cast<std::size_t>(t)] = 1;
  return coi;
}

enum class Padding { edge, mirror };

template <typename Scalar = double>
struct WaveletCoeffs {
  MorletParams<Scalar> params;
  ScaleSet<Scalar> scales;
  Scalar dt{1};
  std::vector<CMatrix<Scalar>> coeffs;         // per scale: n_series x L
  std::vector<std::vector<std::uint8_t>> coi;  // per scale: length L

  Index n_scales() const { return static_cast<Index>(coeffs.size()); }
  Index n_series() const { return coeffs.empty() ? 0 : coeffs.front().rows(); }
  Index length() const { return coeffs.empty() ? 0 : coeffs.front().cols(); }
};

namespace detail {

// Smallest 5-smooth integer >= n (sizes the FFT runs fast at).
inline Index next_fast_size(Index n) {
  for (Index m = n;; ++m) {
    Index r = m;
    for (Index p : {2, 3, 5})
      while (r % p == 0) r /= p;
    if (r == 1) return m;
  }
}

inline Index reflect_index(Index i, Index l) {
  while (i < 0 || i >= l) {
    if (i < 0) i = -i;
    if (i >= l) i = 2 * l - 2 - i;
  }
  return i;
}

// Padded copy of one series: left pad p, total length m.
template <typename Scalar>
Vector<Scalar> pad_series(const Eigen::Ref<const Vector<Scalar>>& x, Index m, Index p,
                          Padding mode) {
  const Index l = x.size();
  Vector<Scalar> out(m);
  for (Index i = 0; i < m; ++i) {
    const Index src = i - p;
    if (src >= 0 && src < l) {
      out[i] = x[src];
    } else if (mode == Padding::edge) {
      out[i] = src < 0 ? x[0] : x[l - 1];
    } else {
      out[i] = x[reflect_index(src, l)];
    }
  }
  return out;
}

// Discrete correlation kernel for one scale, wrap-around layout, and its
// conjugate-flipped DFT ready for multiplication with the series spectrum:
// W = IDFT[ x_hat(j) * g_hat((M - j) mod M) ],  g(m) = dt/sqrt(nu) Psi*(m dt/nu).
template <typename Scalar>
CVector<Scalar> kernel_spectrum(Eigen::FFT<Scalar>& fft, Scalar scale, Scalar dt, Index m,
                                const MorletParams<Scalar>& p) {
  CVector<Scalar> g(m);
  const Scalar norm = dt / std::sqrt(scale);
  for (Index i = 0; i < m; ++i) {
    const Index off = i <= m / 2 ? i : i - m;
    const Scalar tau = static_cast<Scalar>(off) * dt / scale;
    g[i] = norm * std::conj(morlet_mother(tau, p));
  }
  CVector<Scalar> ghat(m);
  fft.fwd(ghat, g);
  CVector<Scalar> flipped(m);
  flipped[0] = ghat[0];
  for (Index j = 1; j < m; ++j) flipped[j] = ghat[m - j];
  return flipped;
}

template <typename Scalar>
void check_cwt_scales(const ScaleSet<Scalar>& scales, Scalar dt, Index l,
                      const MorletParams<Scalar>& p) {
  for (Index k = 0; k < scales.n_scales(); ++k) {
    const Scalar nu = scales.scales[k];
    if (nu < Scalar(2) * dt)
      throw InvalidInput("scale nu=" + std::to_string(static_cast<double>(nu)) +
                         " below the resolvable 2*dt=" + std::to_string(static_cast<double>(2 * dt)));
    if (static_cast<Scalar>(l) * dt < Scalar(2) * nu / p.f0)
      throw InvalidInput("series too short for scale nu=" +
                         std::to_string(static_cast<double>(nu)) +
                         ": need L*dt >= 2*nu/f0");
  }
}

}  // namespace detail

// Precomputed spectra of the padded series; lets callers evaluate one
// scale at a time without re-running the forward FFTs.
template <typename Scalar = double>
struct CwtPlan {
  MorletParams<Scalar> params;
  Scalar dt{1};
  Index length{0};   // original L
  Index padded{0};   // FFT length M
  Index left_pad{0};
  CMatrix<Scalar> spectra;  // n_series x M
};

template <typename Scalar>
CwtPlan<Scalar> cwt_plan(const Matrix<Scalar>& x, Scalar dt, Scalar max_scale,
                         const MorletParams<Scalar>& params = {}, Padding padding = Padding::edge) {
  check_morlet_params(params);
  if (x.rows() < 1 || x.cols() < 2) throw InvalidInput("cwt needs at least one series of length 2");
  if (!(dt > Scalar(0))) throw InvalidInput("cwt requires dt > 0");

  const Index l = x.cols();
  const Index pad = static_cast<Index>(std::ceil(Scalar(6) * max_scale / dt));
  const Index m = detail::next_fast_size(l + 2 * pad);

  CwtPlan<Scalar> plan;
  plan.params = params;
  plan.dt = dt;
  plan.length = l;
  plan.padded = m;
  plan.left_pad = pad;
  plan.spectra.resize(x.rows(), m);

  Eigen::FFT<Scalar> fft;
  CVector<Scalar> xhat(m);
  for (Index i = 0; i < x.rows(); ++i) {
    Vector<Scalar> padded = detail::pad_series<Scalar>(x.row(i).transpose(), m, pad, padding);
    fft.fwd(xhat, padded);
    plan.spectra.row(i) = xhat.transpose();
  }
  return plan;
}

// Coefficients for a single scale from a prepared plan.
template <typename Scalar>
CMatrix<Scalar> cwt_band(const CwtPlan<Scalar>& plan, Scalar scale) {
  Eigen::FFT<Scalar> fft;
  const Index m = plan.padded;
  const CVector<Scalar> ghat = detail::kernel_spectrum(fft, scale, plan.dt, m, plan.params);
  CMatrix<Scalar> out(plan.spectra.rows(), plan.length);
  CVector<Scalar> prod(m), w(m);
  for (Index i = 0; i < plan.spectra.rows(); ++i) {
    prod = plan.spectra.row(i).transpose().cwiseProduct(ghat);
    fft.inv(w, prod);
    out.row(i) = w.segment(plan.left_pad, plan.length).transpose();
  }
  return out;
}

// Full transform of row-wise series x (n_series x L) over a scale grid.
template <typename Scalar>
WaveletCoeffs<Scalar> cwt(const Matrix<Scalar>& x, Scalar dt, const ScaleSet<Scalar>& scales,
                          const MorletParams<Scalar>& params = {}, Padding padding = Padding::edge) {
  if (scales.n_scales() < 1) throw InvalidInput("cwt requires at least one scale");
  detail::check_cwt_scales(scales, dt, x.cols(), params);
  const Scalar max_scale = scales.scales[scales.n_scales() - 1];
  CwtPlan<Scalar> plan = cwt_plan(x, dt, max_scale, params, padding);

  WaveletCoeffs<Scalar> w;
  w.params = params;
  w.scales = scales;
  w.dt = dt;
  w.coeffs.reserve(static_cast<std::size_t>(scales.n_scales()));
  w.coi.reserve(static_cast<std::size_t>(scales.n_scales()));
  for (Index k = 0; k < scales.n_scales(); ++k) {
    w.coeffs.push_back(cwt_band(plan, scales.scales[k]));
    w.coi.push_back(cone_of_influence(scales.scales[k], dt, x.cols()));
  }
  return w;
}

namespace detail {

// Empirical reconstruction constant for (f0, voices): transform a unit
// delta over a wide scale grid, sum the uncalibrated reconstruction and
// read the flat in-band part of its transfer function.
template <typename Scalar>
Scalar measure_reconstruction_constant(const MorletParams<Scalar>& params, int voices) {
  const Index l = 2048;
  const Scalar dt = 1;
  Matrix<Scalar> x = Matrix<Scalar>::Zero(1, l);
  x(0, l / 2) = 1;

  // Scales from 2 dt up to 128 dt: responses cover f in ~[0.007, 0.42].
  std::vector<Scalar> nus;
  for (int k = 0;; ++k) {
    const Scalar nu = Scalar(2) * std::pow(Scalar(2), Scalar(k) / Scalar(voices));
    if (nu > Scalar(128)) break;
    nus.push_back(nu);
  }
  ScaleSet<Scalar> scales;
  scales.voices_per_octave = voices;
  scales.scales = Eigen::Map<const Vector<Scalar>>(nus.data(), static_cast<Index>(nus.size()));
  scales.frequencies = params.f0 / scales.scales.array();

  const WaveletCoeffs<Scalar> w = cwt(x, dt, scales, params);
  Vector<Scalar> recon = Vector<Scalar>::Zero(l);
  const Scalar dlog = scales.dlog_scale();
  for (Index k = 0; k < scales.n_scales(); ++k)
    recon += (w.coeffs[static_cast<std::size_t>(k)].row(0).real().transpose() * dlog /
              std::sqrt(scales.scales[k]))
                 .eval();

  // Transfer function relative to the delta; median over the flat band.
  Eigen::FFT<Scalar> fft;
  CVector<Scalar> rhat(l);
  fft.fwd(rhat, recon);
  std::vector<Scalar> gains;
  for (Index j = 1; j < l / 2; ++j) {
    const Scalar f = static_cast<Scalar>(j) / static_cast<Scalar>(l);
    if (f < Scalar(0.02) || f > Scalar(0.2)) continue;
    // delta at l/2: its DFT is e^{-i pi j}; divide it out.
    const std::complex<Scalar> delta_hat(std::cos(std::numbers::pi_v<Scalar> * Scalar(j)), 0);
    gains.push_back((rhat[j] / delta_hat).real());
  }
  std::nth_element(gains.begin(), gains.begin() + static_cast<std::ptrdiff_t>(gains.size() / 2),
                   gains.end());
  const Scalar gain = gains[gains.size() / 2];
  if (!(gain > Scalar(0))) throw NumericalFailure("wavelet reconstruction calibration failed");
  return Scalar(1) / gain;
}

template <typename Scalar>
Scalar reconstruction_constant(const MorletParams<Scalar>& params, int voices) {
  static std::map<std::pair<Scalar, int>, Scalar> cache;
  static std::mutex mutex;
  std::lock_guard<std::mutex> lock(mutex);
  const auto key = std::make_pair(params.f0, voices);
  auto it = cache.find(key);
  if (it == cache.end())
    it = cache.emplace(key, measure_reconstruction_constant(params, voices)).first;
  return it->second;
}

}  // namespace detail

// Inverse transform: per series, C * Sum_k Re W(nu_k, t) dlog(nu)/sqrt(nu_k).
// Works on any subset of a dyadic grid (band-limited reconstruction).
template <typename Scalar>
Matrix<Scalar> icwt(const WaveletCoeffs<Scalar>& w) {
  if (w.n_scales() < 1) throw InvalidInput("icwt requires at least one scale");
  const Scalar c = detail::reconstruction_constant(w.params, w.scales.voices_per_octave);
  const Scalar dlog = w.scales.dlog_scale();
  Matrix<Scalar> out = Matrix<Scalar>::Zero(w.n_series(), w.length());
  for (Index k = 0; k < w.n_scales(); ++k)
    out += w.coeffs[static_cast<std::size_t>(k)].real() * (c * dlog / std::sqrt(w.scales.scales[k]));
  return out;
}

}  // namespace rspca
