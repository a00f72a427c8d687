#pragma once
// Mode reconstruction and phase-map kinematics.
//
// A band's principal component carries an arbitrary global phase.  Alignment
// references it to the highest-modulus site of the spatial pattern,
//   kappa_aligned = kappa * exp(-i arg(u[j*])),  j* = argmax_i |u[i]|,
// after which per-band components can be assembled as a multi-scale
// coefficient set and inverted with icwt into a real series.
//
// For a travelling wave the pattern phase is a plane, arg u(y) ~ g . y + b;
// a least-squares fit of g on modulus-significant sites gives the phase
// speed  c = 2 pi f_k / |g|  (grid increments per time unit) and the
// propagation direction -g/|g|.

#include <rspca/grid.hpp>
#include <rspca/spectra.hpp>
#include <rspca/types.hpp>
#include <rspca/wavelet.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <numeric>
#include <vector>

namespace rspca {

// Index of the largest-modulus entry; the phase reference for alignment.
template <typename Scalar>
Index dominant_site(const CVector<Scalar>& u) {
  if (u.size() == 0) throw InvalidInput("empty mode vector");
  Index j = 0;
  u.cwiseAbs().maxCoeff(&j);
  if (!(std::abs(u[j]) > Scalar(0))) throw InvalidInput("zero mode vector");
  return j;
}

// Rotate the component series so its phase is referenced to the dominant
// site of the spatial pattern.  Moduli are unchanged; a common phase factor
// applied to (u, kappa) cancels.
template <typename Scalar>
CVector<Scalar> align_pc_phase(const CVector<Scalar>& kappa, const CVector<Scalar>& u) {
  const Index j = dominant_site(u);
  const std::complex<Scalar> shift = std::polar(Scalar(1), -std::arg(u[j]));
  return kappa * shift;
}

template <typename Scalar>
PCSeries<Scalar> align_pc_phase(const PCSeries<Scalar>& kappa, const CVector<Scalar>& u) {
  PCSeries<Scalar> out = kappa;
  out.values = align_pc_phase(kappa.values, u);
  return out;
}

// One band's contribution to a reconstruction: the spatial pattern fixes the
// phase reference, the series is the matching component over the full time
// axis.
template <typename Scalar>
struct BandComponent {
  Scalar scale{0};
  CVector<Scalar> pattern;
  CVector<Scalar> series;
};

// Align each component to its pattern, stack the series as a coefficient set
// on the components' scales, and invert.  The scales must form a contiguous
// run of a dyadic grid with the given voice count so the inverse-transform
// weights are valid.
template <typename Scalar>
Vector<Scalar> reconstruct_components(std::vector<BandComponent<Scalar>> parts,
                                      const MorletParams<Scalar>& params, int voices, Scalar dt) {
  if (parts.empty()) throw InvalidInput("reconstruction requires at least one band");
  if (voices < 1) throw InvalidInput("voices_per_octave must be >= 1");
  std::sort(parts.begin(), parts.end(),
            [](const BandComponent<Scalar>& a, const BandComponent<Scalar>& b) {
              return a.scale < b.scale;
            });
  const Index l = parts.front().series.size();
  const Scalar step = std::exp2(Scalar(1) / static_cast<Scalar>(voices));
  for (std::size_t k = 0; k < parts.size(); ++k) {
    if (!(parts[k].scale > Scalar(0))) throw InvalidInput("band scale must be positive");
    if (parts[k].series.size() != l)
      throw InvalidInput("reconstruction bands have mismatched series lengths");
    if (k > 0) {
      const Scalar ratio = parts[k].scale / parts[k - 1].scale;
      if (std::abs(ratio / step - Scalar(1)) > Scalar(1e-9))
        throw InvalidInput("reconstruction bands must be adjacent scales of one dyadic grid");
    }
  }

  WaveletCoeffs<Scalar> w;
  w.params = params;
  w.dt = dt;
  w.scales.voices_per_octave = voices;
  w.scales.scales.resize(static_cast<Index>(parts.size()));
  w.scales.frequencies.resize(static_cast<Index>(parts.size()));
  w.coeffs.reserve(parts.size());
  for (std::size_t k = 0; k < parts.size(); ++k) {
    w.scales.scales[static_cast<Index>(k)] = parts[k].scale;
    w.scales.frequencies[static_cast<Index>(k)] = params.f0 / parts[k].scale;
    CMatrix<Scalar> row(1, l);
    row.row(0) = align_pc_phase(parts[k].series, parts[k].pattern).transpose();
    w.coeffs.push_back(std::move(row));
  }
  Matrix<Scalar> out = icwt(w);
  return out.row(0).transpose();
}

// Reconstruction of one mode from every band whose centre frequency falls in
// [fmin, fmax].
template <typename Scalar>
Vector<Scalar> reconstruct_band(const SpectralDecomposition<Scalar>& dec, Index mode, Scalar fmin,
                                Scalar fmax) {
  if (!(fmin > Scalar(0)) || !(fmax >= fmin))
    throw InvalidInput("reconstruction interval requires 0 < fmin <= fmax");
  if (mode < 0) throw InvalidInput("mode index must be non-negative");
  std::vector<BandComponent<Scalar>> parts;
  for (const BandModes<Scalar>& band : dec.bands) {
    // Relative slack so a ladder endpoint sitting exactly on the interval
    // edge is not lost to the f0/scale round trip.
    if (band.frequency < fmin * (Scalar(1) - Scalar(1e-9)) ||
        band.frequency > fmax * (Scalar(1) + Scalar(1e-9)))
      continue;
    if (mode >= band.modes.n_modes())
      throw InvalidInput("mode index exceeds the modes kept in a selected band");
    BandComponent<Scalar> part;
    part.scale = band.scale;
    part.pattern = band.modes.eigenvectors.col(mode);
    part.series = band.pc_series.row(mode).transpose();
    parts.push_back(std::move(part));
  }
  if (parts.empty()) throw InvalidInput("no bands inside the reconstruction interval");
  return reconstruct_components(std::move(parts), dec.params, dec.scales.voices_per_octave, dec.dt);
}

struct SpeedOptions {
  double modulus_floor = 0.10;    // site kept if |u| >= floor * max |u|
  double stripe_halfwidth = 3.5;  // magnitude refit: max distance from the ray through the peak
  double stripe_min_along = 2.5;  // and at least this far along the ray
  double stripe_max_gap = 2.5;    // a wider radial void ends the stripe at the peak's own lobe
  int plane_iterations = 3;       // unwrap-and-refit passes on the significant set
  bool refine_stripe = true;      // refit |g| along the fitted ray
};

template <typename Scalar>
struct SpeedEstimate {
  Scalar speed{0};            // grid increments per time unit
  Vector<Scalar> direction;   // unit vector, propagation direction (-g/|g|)
  Vector<Scalar> gradient;    // fitted phase gradient, rad per grid increment
  Scalar fit_rms{0};          // wrapped residual RMS of the final fit, rad
  Index n_sites{0};           // sites entering the final fit
  bool stationary{false};     // |g| ~ 0: constant phase, infinite-speed sentinel
};

namespace detail {

// Least-squares plane g . x + b through (coords, value) on the given sites.
template <typename Scalar>
void fit_plane(const Matrix<double>& coords, const std::vector<Index>& sites,
               const std::vector<Scalar>& value, Vector<Scalar>& g, Scalar& b) {
  const Index nd = coords.cols();
  const Index n = static_cast<Index>(sites.size());
  Matrix<Scalar> a(n, nd + 1);
  Vector<Scalar> rhs(n);
  for (Index r = 0; r < n; ++r) {
    for (Index d = 0; d < nd; ++d) a(r, d) = static_cast<Scalar>(coords(sites[static_cast<std::size_t>(r)], d));
    a(r, nd) = Scalar(1);
    rhs[r] = value[static_cast<std::size_t>(sites[static_cast<std::size_t>(r)])];
  }
  Vector<Scalar> sol = a.colPivHouseholderQr().solve(rhs);
  g = sol.head(nd);
  b = sol[nd];
}

// Unwrap each site's phase against the current plane, refit, and return the
// wrapped residual RMS of the new fit.
template <typename Scalar>
Scalar refit_plane(const Matrix<double>& coords, const std::vector<Index>& sites,
                   const std::vector<Scalar>& phase, int iterations, Vector<Scalar>& g, Scalar& b) {
  const Index nd = coords.cols();
  std::vector<Scalar> unwrapped(phase.size());
  for (int it = 0; it < iterations; ++it) {
    for (Index s : sites) {
      Scalar plane = b;
      for (Index d = 0; d < nd; ++d) plane += g[d] * static_cast<Scalar>(coords(s, d));
      unwrapped[static_cast<std::size_t>(s)] =
          plane + wrap_phase(phase[static_cast<std::size_t>(s)] - plane);
    }
    fit_plane(coords, sites, unwrapped, g, b);
  }
  Scalar ss = 0;
  for (Index s : sites) {
    Scalar plane = b;
    for (Index d = 0; d < nd; ++d) plane += g[d] * static_cast<Scalar>(coords(s, d));
    const Scalar r = wrap_phase(phase[static_cast<std::size_t>(s)] - plane);
    ss += r * r;
  }
  return std::sqrt(ss / static_cast<Scalar>(sites.size()));
}

}  // namespace detail

// Phase-plane fit on modulus-significant sites.  The gradient is initialised
// from wrapped nearest-neighbour phase differences, refined by alternating
// unwrap-against-plane and least squares, then sharpened on a narrow stripe
// along the fitted ray through the peak site, where a curved wavefront is
// closest to linear.  speed = 2 pi f_k / |g|; direction = -g/|g|; a constant
// phase returns an infinite-speed sentinel instead of a fit failure.
template <typename Scalar>
SpeedEstimate<Scalar> estimate_propagation_speed(const CVector<Scalar>& u, const SpatialGrid& grid,
                                                 Scalar band_freq, const SpeedOptions& options = {}) {
  const Index n = grid.n_sites();
  if (u.size() != n)
    throw InvalidInput("mode vector length " + std::to_string(u.size()) +
                       " does not match grid with " + std::to_string(n) + " sites");
  if (!(band_freq > Scalar(0))) throw InvalidInput("band frequency must be positive");
  if (!(options.modulus_floor >= 0 && options.modulus_floor < 1))
    throw InvalidInput("modulus_floor must lie in [0, 1)");
  const Index nd = grid.ndim();
  const Index peak = dominant_site(u);
  const Scalar umax = std::abs(u[peak]);

  std::vector<Index> active;
  std::vector<std::uint8_t> is_active(static_cast<std::size_t>(n), 0);
  std::vector<Scalar> phase(static_cast<std::size_t>(n), Scalar(0));
  for (Index s = 0; s < n; ++s) {
    if (std::abs(u[s]) < static_cast<Scalar>(options.modulus_floor) * umax) continue;
    active.push_back(s);
    is_active[static_cast<std::size_t>(s)] = 1;
    phase[static_cast<std::size_t>(s)] = std::arg(u[s]);
  }
  if (static_cast<Index>(active.size()) < nd + 2)
    throw InvalidInput("too few modulus-significant sites for a phase-plane fit");

  // Initial gradient: mean wrapped phase step to the +1 neighbour per axis.
  Vector<Scalar> g = Vector<Scalar>::Zero(nd);
  for (Index d = 0; d < nd; ++d) {
    Scalar sum = 0;
    Index count = 0;
    for (Index s : active) {
      const Index c = grid.cell_of_site[static_cast<std::size_t>(s)];
      Index cc = -1;
      if (nd == 1) {
        if (c + 1 < grid.dims[0]) cc = c + 1;
      } else if (d == 0) {
        if (c / grid.dims[1] + 1 < grid.dims[0]) cc = c + grid.dims[1];
      } else {
        if (c % grid.dims[1] + 1 < grid.dims[1]) cc = c + 1;
      }
      if (cc < 0) continue;
      const Index j = grid.site_of_cell[static_cast<std::size_t>(cc)];
      if (j < 0 || !is_active[static_cast<std::size_t>(j)]) continue;
      sum += wrap_phase(phase[static_cast<std::size_t>(j)] - phase[static_cast<std::size_t>(s)]);
      ++count;
    }
    if (count > 0) g[d] = sum / static_cast<Scalar>(count);
  }
  // Circular mean of (phase - g . x) seeds the intercept.
  std::complex<Scalar> mean(0, 0);
  for (Index s : active) {
    Scalar plane = 0;
    for (Index d = 0; d < nd; ++d) plane += g[d] * static_cast<Scalar>(grid.coords(s, d));
    mean += std::polar(Scalar(1), phase[static_cast<std::size_t>(s)] - plane);
  }
  Scalar b = std::arg(mean);

  Scalar rms = detail::refit_plane(grid.coords, active, phase, options.plane_iterations, g, b);
  // The planarity gate applies to the full significant-set fit; the stripe
  // below only sharpens |g| once the field has passed it.
  if (rms > std::numbers::pi_v<Scalar> / Scalar(2))
    throw NumericalFailure("phase field is not planar (wrapped residual RMS " +
                           std::to_string(static_cast<double>(rms)) + " rad)");
  std::vector<Index> fitted = active;

  // Longest grid extent sets the scale below which the gradient is treated
  // as zero (total phase change across the domain under 1e-8 rad).
  Scalar extent = 1;
  for (Index d : grid.dims) extent = std::max(extent, static_cast<Scalar>(d - 1));
  const bool stationary = g.norm() * extent <= Scalar(1e-8);

  // Magnitude refinement: a curved wavefront is linear along the ray from
  // the peak site in the gradient direction, so |g| is refit one-dimensional
  // there while the direction stays with the full fit.
  if (!stationary && options.refine_stripe) {
    Vector<Scalar> ray = g.normalized();
    // Orient the axis by its largest component so the arm labels below do not
    // depend on the sign of the fitted gradient; g = m * ray is unchanged.
    Index widest = 0;
    ray.cwiseAbs().maxCoeff(&widest);
    if (ray[widest] < Scalar(0)) ray = -ray;
    // Both arms of the ray line through the peak; the arm with more sites is
    // the bulk side of the wave, where the plane model and the field agree.
    std::vector<Index> arm_sites[2];
    std::vector<Scalar> arm_along[2], arm_radial[2];
    for (Index s : active) {
      Vector<Scalar> r(nd);
      for (Index d = 0; d < nd; ++d)
        r[d] = static_cast<Scalar>(grid.coords(s, d) - grid.coords(peak, d));
      const Scalar proj = r.dot(ray);
      const Scalar perp = (r - proj * ray).norm();
      if (std::abs(proj) < static_cast<Scalar>(options.stripe_min_along) ||
          perp > static_cast<Scalar>(options.stripe_halfwidth))
        continue;
      const int side = proj > 0 ? 0 : 1;
      arm_sites[side].push_back(s);
      arm_along[side].push_back(proj);
      arm_radial[side].push_back(r.norm());
    }
    const int side = arm_sites[1].size() > arm_sites[0].size() ? 1 : 0;
    // Keep only the run of sites radially connected to the peak: a distant
    // high-modulus region (another wave's lobe on the same ray) is separated
    // by a void where the modulus drops below the floor, and folding the
    // fit across that void would alias the slope.
    {
      const std::vector<Scalar>& rad = arm_radial[side];
      std::vector<std::size_t> ord(rad.size());
      std::iota(ord.begin(), ord.end(), std::size_t{0});
      std::sort(ord.begin(), ord.end(),
                [&](std::size_t a, std::size_t b) { return rad[a] < rad[b]; });
      std::size_t keep = ord.size();
      for (std::size_t i = 0; i + 1 < ord.size(); ++i)
        if (rad[ord[i + 1]] - rad[ord[i]] > static_cast<Scalar>(options.stripe_max_gap)) {
          keep = i + 1;
          break;
        }
      if (keep < ord.size()) {
        std::vector<char> kept(rad.size(), 0);
        for (std::size_t i = 0; i < keep; ++i) kept[ord[i]] = 1;
        std::size_t w = 0;
        for (std::size_t i = 0; i < rad.size(); ++i) {
          if (!kept[i]) continue;
          arm_sites[side][w] = arm_sites[side][i];
          arm_along[side][w] = arm_along[side][i];
          arm_radial[side][w] = arm_radial[side][i];
          ++w;
        }
        arm_sites[side].resize(w);
        arm_along[side].resize(w);
        arm_radial[side].resize(w);
      }
    }
    std::vector<Index>& stripe = arm_sites[side];
    Scalar smin = std::numeric_limits<Scalar>::infinity(), smax = -smin;
    for (Scalar proj : arm_along[side]) {
      smin = std::min(smin, proj);
      smax = std::max(smax, proj);
    }
    if (static_cast<Index>(stripe.size()) >= nd + 2 && smax - smin >= Scalar(2)) {
      // Two one-dimensional models of the arm: phase linear in the along-ray
      // coordinate (a plane wave) and linear in the distance from the peak
      // (a curved front spreading from it).  Each is seeded robustly - the
      // slope from the median wrapped step between successive positions, the
      // intercept from a circular mean - then refined by modulus-weighted
      // unwrap-and-refit.  The model with the smaller residual wins.
      const auto fit_line = [&](const std::vector<Scalar>& coord, Scalar& slope_out,
                                Scalar& icpt_out) {
        std::vector<std::size_t> order(stripe.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t c) { return coord[a] < coord[c]; });
        std::vector<Scalar> steps;
        for (std::size_t i = 1; i < order.size(); ++i) {
          const Scalar dc = coord[order[i]] - coord[order[i - 1]];
          if (dc < Scalar(0.5)) continue;
          const Scalar dp = wrap_phase(phase[static_cast<std::size_t>(stripe[order[i]])] -
                                       phase[static_cast<std::size_t>(stripe[order[i - 1]])]);
          steps.push_back(dp / dc);
        }
        Scalar m = g.norm();
        if (!steps.empty()) {
          std::nth_element(steps.begin(),
                           steps.begin() + static_cast<std::ptrdiff_t>(steps.size() / 2),
                           steps.end());
          m = steps[steps.size() / 2];
        }
        std::complex<Scalar> around(0, 0);
        for (std::size_t i = 0; i < stripe.size(); ++i)
          around += std::polar(Scalar(1), phase[static_cast<std::size_t>(stripe[i])] - m * coord[i]);
        Scalar c0 = std::arg(around);
        std::vector<Scalar> value(stripe.size());
        for (int it = 0; it < 3; ++it) {
          Scalar wsum = 0, sw = 0, pw = 0, spw = 0, ssw = 0;
          for (std::size_t i = 0; i < stripe.size(); ++i) {
            const Scalar model = m * coord[i] + c0;
            value[i] = model + wrap_phase(phase[static_cast<std::size_t>(stripe[i])] - model);
            const Scalar wgt = std::abs(u[stripe[i]]);
            wsum += wgt;
            sw += wgt * coord[i];
            pw += wgt * value[i];
            spw += wgt * coord[i] * value[i];
            ssw += wgt * coord[i] * coord[i];
          }
          const Scalar var = ssw - sw * sw / wsum;
          if (!(var > Scalar(0))) break;
          m = (spw - sw * pw / wsum) / var;
          c0 = (pw - m * sw) / wsum;
        }
        Scalar ss = 0;
        for (std::size_t i = 0; i < stripe.size(); ++i) {
          const Scalar r = wrap_phase(phase[static_cast<std::size_t>(stripe[i])] - m * coord[i] - c0);
          ss += r * r;
        }
        slope_out = m;
        icpt_out = c0;
        return std::sqrt(ss / static_cast<Scalar>(stripe.size()));
      };

      Scalar m_along = 0, c_along = 0, m_radial = 0, c_radial = 0;
      const Scalar rms_along = fit_line(arm_along[side], m_along, c_along);
      const Scalar rms_radial = fit_line(arm_radial[side], m_radial, c_radial);
      // Along the arm the radial coordinate changes as sign(proj) per unit of
      // the along coordinate, so both slopes live on the same axis.
      const Scalar sgn = side == 0 ? Scalar(1) : Scalar(-1);
      const Scalar stripe_rms = std::min(rms_along, rms_radial);
      const Scalar m_eff = rms_along <= rms_radial ? m_along : sgn * m_radial;
      const Scalar c_eff = rms_along <= rms_radial ? c_along : c_radial;
      if (stripe_rms <= std::numbers::pi_v<Scalar> / Scalar(2)) {
        const Scalar s_ref = ray.dot(grid.coords.row(peak).transpose().template cast<Scalar>());
        g = m_eff * ray;
        b = c_eff - m_eff * s_ref;
        rms = stripe_rms;
        fitted = std::move(stripe);
      }
    }
  }

  SpeedEstimate<Scalar> est;
  est.gradient = g;
  est.fit_rms = rms;
  est.n_sites = static_cast<Index>(fitted.size());
  est.stationary = stationary;
  if (stationary) {
    est.speed = std::numeric_limits<Scalar>::infinity();
    est.direction = Vector<Scalar>::Zero(nd);
  } else {
    est.speed = Scalar(2) * std::numbers::pi_v<Scalar> * band_freq / g.norm();
    est.direction = -g.normalized();
  }
  return est;
}

}  // namespace rspca
