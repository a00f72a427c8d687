#pragma once

// Phase-smoothness rotation of a degenerate eigenvector pair.
//
// A unit-modulus rotation of an orthonormal pair (u1, u2),
//
//   u_r1 = cos(theta) u1 + sin(theta) e^{i phi} u2
//   u_r2 = -sin(theta) e^{-i phi} u1 + cos(theta) u2,
//
// stays orthonormal and spans the same subspace for every
// theta in [0, pi/2], phi in [0, 2 pi).  The rotation is chosen to
// minimize the wrapped-phase roughness of the first vector,
//
//   J(theta, phi) = sum over sites |sum over grid neighbors
//                   wrap(arg u_i - arg u_j)|,
//
// the discrete Laplacian of the phase field with every difference
// wrapped to (-pi, pi].  J is invariant under global phases of the
// input (wrapped differences see none of it) and under conjugation
// (each difference flips sign inside |.|).
//
// As a landscape over (theta, phi), rays theta=0 and theta=pi/2 are
// gauge lines: along them phi changes u_r1 only by a global phase.
// Minima are therefore deduplicated with a metric on the quotient
// sphere (polar angle 2 theta), under which both rays collapse to
// points.

#include "rspca/grid.hpp"
#include "rspca/types.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

namespace rspca {

enum class CostWeighting { none, modulus_mask };

template <typename Scalar = double>
struct CostOptions {
  CostWeighting weighting = CostWeighting::none;
  bool presmooth = false;                 // 3x3 smoothing of the difference field
  Scalar mask_fraction = Scalar(0.05);    // sites below this fraction of max |u| are skipped
};

template <typename Scalar = double>
struct RotationParams {
  Scalar theta{0};
  Scalar phi{0};
};

template <typename Scalar = double>
struct RotationMinimum {
  RotationParams<Scalar> params;
  Scalar cost{0};
};

template <typename Scalar = double>
struct RotatedPair {
  RotationParams<Scalar> params;
  CVector<Scalar> u1;
  CVector<Scalar> u2;
  Scalar cost1{0};
  Scalar cost2{0};
  std::vector<RotationMinimum<Scalar>> minima;  // deduplicated, cost ascending
};

// The unitary pair rotation itself; works on any equal-length complex
// vectors (mode series rotate with the same coefficients as the modes).
template <typename Scalar>
std::pair<CVector<Scalar>, CVector<Scalar>> rotate_pair(const CVector<Scalar>& u1,
                                                        const CVector<Scalar>& u2,
                                                        const RotationParams<Scalar>& p) {
  if (u1.size() != u2.size()) throw InvalidInput("pair rotation requires equal-length vectors");
  const Scalar c = std::cos(p.theta);
  const Scalar s = std::sin(p.theta);
  const std::complex<Scalar> twist(std::cos(p.phi), std::sin(p.phi));
  return {c * u1 + s * twist * u2, -s * std::conj(twist) * u1 + c * u2};
}

namespace detail {

// Precomputed neighbor structure for repeated cost evaluations.
template <typename Scalar>
struct PhaseCostCache {
  LaplacianStencil stencil;
  std::vector<std::vector<Index>> box;  // 3x3 cell neighborhood per site (self included)
  CostOptions<Scalar> options;
  // scratch
  mutable std::vector<Scalar> phase;
  mutable std::vector<Scalar> lap;
  mutable std::vector<std::uint8_t> keep;
};

template <typename Scalar>
PhaseCostCache<Scalar> make_phase_cost_cache(const SpatialGrid& grid,
                                             const CostOptions<Scalar>& options) {
  PhaseCostCache<Scalar> cache;
  cache.stencil = build_laplacian(grid);
  cache.options = options;
  const std::size_t n = static_cast<std::size_t>(grid.n_sites());
  cache.phase.resize(n);
  cache.lap.resize(n);
  cache.keep.resize(n);
  if (options.presmooth) {
    cache.box.resize(n);
    for (Index s = 0; s < grid.n_sites(); ++s) {
      auto& around = cache.box[static_cast<std::size_t>(s)];
      const Index c = grid.cell_of_site[static_cast<std::size_t>(s)];
      if (grid.ndim() == 1) {
        for (Index dc = -1; dc <= 1; ++dc) {
          const Index cc = c + dc;
          if (cc < 0 || cc >= grid.dims[0]) continue;
          const Index j = grid.site_of_cell[static_cast<std::size_t>(cc)];
          if (j >= 0) around.push_back(j);
        }
      } else {
        const Index nx = grid.dims[1];
        const Index y = c / nx;
        const Index x = c % nx;
        for (Index dy = -1; dy <= 1; ++dy)
          for (Index dx = -1; dx <= 1; ++dx) {
            const Index yy = y + dy;
            const Index xx = x + dx;
            if (yy < 0 || yy >= grid.dims[0] || xx < 0 || xx >= nx) continue;
            const Index j = grid.site_of_cell[static_cast<std::size_t>(yy * nx + xx)];
            if (j >= 0) around.push_back(j);
          }
      }
    }
  }
  return cache;
}

template <typename Scalar>
Scalar evaluate_phase_cost(const PhaseCostCache<Scalar>& cache, const CVector<Scalar>& u) {
  const Index n = cache.stencil.n_sites();
  if (u.size() != n) throw InvalidInput("eigenvector length does not match the grid");

  Scalar threshold = Scalar(-1);
  if (cache.options.weighting == CostWeighting::modulus_mask) {
    Scalar max_mod = 0;
    for (Index s = 0; s < n; ++s) max_mod = std::max(max_mod, std::abs(u[s]));
    threshold = cache.options.mask_fraction * max_mod;
  }
  for (Index s = 0; s < n; ++s) {
    const std::size_t is = static_cast<std::size_t>(s);
    cache.keep[is] = std::abs(u[s]) >= threshold ? 1 : 0;
    cache.phase[is] = std::arg(u[s]);
  }

  for (Index s = 0; s < n; ++s) {
    const std::size_t is = static_cast<std::size_t>(s);
    if (!cache.keep[is]) {
      cache.lap[is] = Scalar(0);
      continue;
    }
    Scalar acc = 0;
    for (Index k = cache.stencil.offsets[is]; k < cache.stencil.offsets[is + 1]; ++k) {
      const std::size_t j = static_cast<std::size_t>(
          cache.stencil.neighbor_site[static_cast<std::size_t>(k)]);
      if (!cache.keep[j]) continue;
      acc += wrap_phase(cache.phase[is] - cache.phase[j]);
    }
    cache.lap[is] = acc;
  }

  Scalar total = 0;
  if (!cache.options.presmooth) {
    for (Index s = 0; s < n; ++s)
      if (cache.keep[static_cast<std::size_t>(s)])
        total += std::abs(cache.lap[static_cast<std::size_t>(s)]);
  } else {
    for (Index s = 0; s < n; ++s) {
      const std::size_t is = static_cast<std::size_t>(s);
      if (!cache.keep[is]) continue;
      Scalar acc = 0;
      Index count = 0;
      for (Index j : cache.box[is]) {
        if (!cache.keep[static_cast<std::size_t>(j)]) continue;
        acc += cache.lap[static_cast<std::size_t>(j)];
        ++count;
      }
      total += std::abs(acc / static_cast<Scalar>(count));
    }
  }
  return total;
}

// Distance between rotation parameters on the quotient sphere with polar
// angle 2*theta; both gauge rays (theta = 0 and pi/2) collapse to points.
template <typename Scalar>
Scalar rotation_distance(const RotationParams<Scalar>& a, const RotationParams<Scalar>& b) {
  const Scalar dpolar = Scalar(2) * (a.theta - b.theta);
  const Scalar ring = std::sin(a.theta + b.theta) * wrap_phase(a.phi - b.phi);
  return std::hypot(dpolar, ring);
}

template <typename F, typename Scalar>
Scalar golden_section_min(F&& f, Scalar lo, Scalar hi, Scalar tol) {
  const Scalar inv_phi = (std::sqrt(Scalar(5)) - Scalar(1)) / Scalar(2);
  Scalar a = lo, b = hi;
  Scalar c = b - inv_phi * (b - a);
  Scalar d = a + inv_phi * (b - a);
  Scalar fc = f(c);
  Scalar fd = f(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return (a + b) / Scalar(2);
}

}  // namespace detail

// Wrapped-phase Laplacian roughness of one complex pattern (one-shot;
// the optimizer reuses an internal cache instead).
template <typename Scalar>
Scalar phase_laplacian_cost(const SpatialGrid& grid, const CVector<Scalar>& u,
                            const CostOptions<Scalar>& options = {}) {
  const auto cache = detail::make_phase_cost_cache(grid, options);
  return detail::evaluate_phase_cost(cache, u);
}

template <typename Scalar = double>
struct OptimizeOptions {
  Index n_theta = 64;        // coarse grid resolution over [0, pi/2]
  Index n_phi = 128;         // coarse grid resolution over [0, 2 pi)
  Index max_starts = 16;     // refined coarse minima, best first
  Scalar dedup_radius = Scalar(0.05);
  // Basins must rise at least this fraction of the coarse cost range
  // before reaching lower terrain to count as separate minima; flat
  // ridges collapse to one representative even at zero.
  Scalar min_prominence = Scalar(0.01);
};

// Scans the (theta, phi) landscape of the first rotated vector's phase
// roughness, refines every coarse local minimum by windowed coordinate
// descent, and reports the deduplicated minima with the best applied.
template <typename Scalar>
RotatedPair<Scalar> optimize_rotation(const SpatialGrid& grid, const CVector<Scalar>& u1,
                                      const CVector<Scalar>& u2,
                                      const CostOptions<Scalar>& cost_options = {},
                                      const OptimizeOptions<Scalar>& opt = {}) {
  const Index n = grid.n_sites();
  if (u1.size() != n || u2.size() != n)
    throw InvalidInput("eigenvector length does not match the grid");
  if (std::abs(u1.norm() - Scalar(1)) > Scalar(1e-6) ||
      std::abs(u2.norm() - Scalar(1)) > Scalar(1e-6))
    throw InvalidInput("rotation requires unit-norm eigenvectors");
  if (std::abs((u1.adjoint() * u2)(0, 0)) > Scalar(1e-6))
    throw InvalidInput("rotation requires an orthogonal pair; the span is degenerate");
  if (opt.n_theta < 2 || opt.n_phi < 2 || opt.max_starts < 1)
    throw InvalidInput("optimizer grid must have at least 2 points per axis");

  constexpr Scalar pi = std::numbers::pi_v<Scalar>;
  const auto cache = detail::make_phase_cost_cache(grid, cost_options);
  CVector<Scalar> scratch(n);
  auto objective = [&](Scalar theta, Scalar phi) -> Scalar {
    const Scalar c = std::cos(theta);
    const Scalar s = std::sin(theta);
    const std::complex<Scalar> twist(std::cos(phi), std::sin(phi));
    scratch = c * u1 + (s * twist) * u2;
    return detail::evaluate_phase_cost(cache, scratch);
  };

  // coarse scan (theta includes both gauge rays)
  const Index nt = opt.n_theta;
  const Index np = opt.n_phi;
  Matrix<Scalar> coarse(nt, np);
  const Scalar dtheta = (pi / Scalar(2)) / static_cast<Scalar>(nt - 1);
  const Scalar dphi = (Scalar(2) * pi) / static_cast<Scalar>(np);
  for (Index a = 0; a < nt; ++a)
    for (Index b = 0; b < np; ++b)
      coarse(a, b) = objective(static_cast<Scalar>(a) * dtheta, static_cast<Scalar>(b) * dphi);

  // Persistence-filtered coarse minima: sweep cells in ascending cost,
  // grow basins with union-find, and record a basin as a separate minimum
  // only when it persists at least min_prominence * range before merging
  // into lower terrain.  Flat ridges join an existing basin instead of
  // seeding their own, so ties never multiply minima.
  const Index cells = nt * np;
  std::vector<Index> order(static_cast<std::size_t>(cells));
  for (Index c = 0; c < cells; ++c) order[static_cast<std::size_t>(c)] = c;
  std::stable_sort(order.begin(), order.end(), [&](Index x, Index y) {
    return coarse(x / np, x % np) < coarse(y / np, y % np);
  });
  const Scalar vmin = coarse(order.front() / np, order.front() % np);
  const Scalar vmax = coarse(order.back() / np, order.back() % np);
  const Scalar prominence = opt.min_prominence * (vmax - vmin);

  std::vector<Index> parent(static_cast<std::size_t>(cells), Index(-1));
  std::vector<Index> seed(static_cast<std::size_t>(cells), Index(-1));
  std::vector<Scalar> birth(static_cast<std::size_t>(cells), Scalar(0));
  auto find_root = [&](Index c) {
    Index r = c;
    while (parent[static_cast<std::size_t>(r)] != r) r = parent[static_cast<std::size_t>(r)];
    while (parent[static_cast<std::size_t>(c)] != r) {
      const Index next = parent[static_cast<std::size_t>(c)];
      parent[static_cast<std::size_t>(c)] = r;
      c = next;
    }
    return r;
  };

  std::vector<Index> significant;
  for (Index c : order) {
    const Index a = c / np;
    const Index b = c % np;
    const Scalar value = coarse(a, b);
    Index best_root = -1;
    Index roots[8];
    int n_roots = 0;
    for (Index da = -1; da <= 1; ++da) {
      const Index aa = a + da;
      if (aa < 0 || aa >= nt) continue;
      for (Index db = -1; db <= 1; ++db) {
        if (da == 0 && db == 0) continue;
        const Index bb = (b + db + np) % np;
        const Index nc = aa * np + bb;
        if (parent[static_cast<std::size_t>(nc)] < 0) continue;
        const Index r = find_root(nc);
        bool known = false;
        for (int i = 0; i < n_roots; ++i) known = known || roots[i] == r;
        if (known) continue;
        roots[n_roots++] = r;
        if (best_root < 0 || birth[static_cast<std::size_t>(r)] <
                                 birth[static_cast<std::size_t>(best_root)])
          best_root = r;
      }
    }
    if (best_root < 0) {
      parent[static_cast<std::size_t>(c)] = c;
      seed[static_cast<std::size_t>(c)] = c;
      birth[static_cast<std::size_t>(c)] = value;
      continue;
    }
    parent[static_cast<std::size_t>(c)] = best_root;
    for (int i = 0; i < n_roots; ++i) {
      if (roots[i] == best_root) continue;
      if (value - birth[static_cast<std::size_t>(roots[i])] >= prominence)
        significant.push_back(seed[static_cast<std::size_t>(roots[i])]);
      parent[static_cast<std::size_t>(roots[i])] = best_root;
    }
  }
  significant.push_back(seed[static_cast<std::size_t>(find_root(order.front()))]);

  std::vector<std::pair<Scalar, RotationParams<Scalar>>> starts;
  for (Index c : significant)
    starts.push_back({coarse(c / np, c % np),
                      {static_cast<Scalar>(c / np) * dtheta, static_cast<Scalar>(c % np) * dphi}});
  std::stable_sort(starts.begin(), starts.end(),
                   [](const auto& x, const auto& y) { return x.first < y.first; });
  if (static_cast<Index>(starts.size()) > opt.max_starts)
    starts.resize(static_cast<std::size_t>(opt.max_starts));

  // windowed coordinate descent from each start
  std::vector<RotationMinimum<Scalar>> candidates;
  for (const auto& start : starts) {
    Scalar theta = start.second.theta;
    Scalar phi = start.second.phi;
    Scalar w_theta = Scalar(1.5) * dtheta;
    Scalar w_phi = Scalar(1.5) * dphi;
    for (int round = 0; round < 12; ++round) {
      theta = detail::golden_section_min(
          [&](Scalar t) { return objective(t, phi); }, std::max(Scalar(0), theta - w_theta),
          std::min(pi / Scalar(2), theta + w_theta), Scalar(1e-11));
      phi = detail::golden_section_min([&](Scalar p) { return objective(theta, p); },
                                       phi - w_phi, phi + w_phi, Scalar(1e-11));
      w_theta *= Scalar(0.35);
      w_phi *= Scalar(0.35);
    }
    phi -= Scalar(2) * pi * std::floor(phi / (Scalar(2) * pi));
    theta = std::clamp(theta, Scalar(0), pi / Scalar(2));
    candidates.push_back({{theta, phi}, objective(theta, phi)});
  }

  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const auto& x, const auto& y) { return x.cost < y.cost; });
  std::vector<RotationMinimum<Scalar>> minima;
  for (const auto& cand : candidates) {
    bool fresh = true;
    for (const auto& kept : minima)
      if (detail::rotation_distance(cand.params, kept.params) <= opt.dedup_radius) {
        fresh = false;
        break;
      }
    if (fresh) minima.push_back(cand);
  }
  if (minima.empty()) throw NumericalFailure("rotation scan produced no minima");

  RotatedPair<Scalar> out;
  out.params = minima.front().params;
  auto pair = rotate_pair(u1, u2, out.params);
  out.u1 = std::move(pair.first);
  out.u2 = std::move(pair.second);
  out.cost1 = minima.front().cost;
  out.cost2 = detail::evaluate_phase_cost(cache, out.u2);
  out.minima = std::move(minima);
  return out;
}

}  // namespace rspca
