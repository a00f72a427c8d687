#pragma once

// Spatial grid bookkeeping for gridded multivariate time series.
//
// A SpatialGrid describes a 1-D or 2-D array of cells with an optional
// activity mask; active cells become "sites" numbered row-major.  A
// FieldSeries couples a grid with an N x L matrix of per-site series.
// The discrete Laplacian stencil built here is mask-aware: masked sites
// contribute nothing, and the center weight of each site equals the sum
// of the absolute weights of its present neighbors, so the stencil
// annihilates constant fields on any active subset.

#include "rspca/types.hpp"

#include <algorithm>
#include <cstdint>
#include <utility>
#include <vector>

namespace rspca {

struct SpatialGrid {
  std::vector<Index> dims;         // {n} or {ny, nx}
  std::vector<std::uint8_t> mask;  // row-major over cells, 1 = active
  std::vector<Index> cell_of_site; // active cells in row-major order
  std::vector<Index> site_of_cell; // -1 for masked cells
  Matrix<double> coords;           // n_sites x ndim, grid units

  Index ndim() const { return static_cast<Index>(dims.size()); }

  Index n_cells() const {
    Index n = 1;
    for (Index d : dims) n *= d;
    return n;
  }

  Index n_sites() const { return static_cast<Index>(cell_of_site.size()); }

  // Grid with every cell active.
  static SpatialGrid full(std::vector<Index> dims) {
    SpatialGrid g;
    g.dims = std::move(dims);
    check_dims(g.dims);
    g.mask.assign(static_cast<std::size_t>(g.n_cells()), 1);
    g.index_sites();
    return g;
  }

  // Grid restricted to cells with a true mask entry (row-major).
  static SpatialGrid masked(std::vector<Index> dims, std::vector<std::uint8_t> mask) {
    SpatialGrid g;
    g.dims = std::move(dims);
    check_dims(g.dims);
    if (static_cast<Index>(mask.size()) != g.n_cells())
      throw InvalidInput("grid mask has " + std::to_string(mask.size()) +
                         " entries, expected " + std::to_string(g.n_cells()));
    g.mask = std::move(mask);
    g.index_sites();
    return g;
  }

 private:
  static void check_dims(const std::vector<Index>& dims) {
    if (dims.empty() || dims.size() > 2)
      throw InvalidInput("grid dims must have 1 or 2 entries");
    for (Index d : dims)
      if (d < 1) throw InvalidInput("grid dims must be positive");
  }

  void index_sites() {
    const Index nc = n_cells();
    site_of_cell.assign(static_cast<std::size_t>(nc), -1);
    cell_of_site.clear();
    for (Index c = 0; c < nc; ++c) {
      if (mask[static_cast<std::size_t>(c)]) {
        site_of_cell[static_cast<std::size_t>(c)] = static_cast<Index>(cell_of_site.size());
        cell_of_site.push_back(c);
      }
    }
    if (cell_of_site.empty()) throw InvalidInput("grid mask leaves no active site");
    const Index n = n_sites();
    coords.resize(n, ndim());
    for (Index s = 0; s < n; ++s) {
      Index c = cell_of_site[static_cast<std::size_t>(s)];
      if (ndim() == 1) {
        coords(s, 0) = static_cast<double>(c);
      } else {
        coords(s, 0) = static_cast<double>(c / dims[1]);  // row
        coords(s, 1) = static_cast<double>(c % dims[1]);  // column
      }
    }
  }
};

// Gridded multivariate series: one length-L series per active site.
template <typename Scalar = double>
struct FieldSeries {
  SpatialGrid grid;
  Matrix<Scalar> values;  // n_sites x L
  Scalar dt{1};
  std::string t0{"0"};
  std::string units;

  Index n_sites() const { return values.rows(); }
  Index length() const { return values.cols(); }
};

template <typename Scalar>
void check_field_series(const FieldSeries<Scalar>& fs) {
  if (fs.values.rows() != fs.grid.n_sites())
    throw InvalidInput("field series has " + std::to_string(fs.values.rows()) +
                       " rows for " + std::to_string(fs.grid.n_sites()) + " active sites");
  if (!(fs.dt > Scalar{0})) throw InvalidInput("field series requires dt > 0");
  if (fs.values.cols() < 2) throw InvalidInput("field series requires at least 2 time steps");
}

// Sites whose per-phase variance vanished and were therefore left unscaled.
struct DeseasonalizeReport {
  std::vector<std::pair<Index, Index>> zero_variance;  // (site, phase)
};

// Removes, per site, the mean over every calendar phase t mod period; with
// normalize also divides by the per-phase standard deviation.  Phases whose
// variance vanishes are left unscaled and reported.
template <typename Scalar>
FieldSeries<Scalar> deseasonalize(const FieldSeries<Scalar>& fs, Index period, bool normalize,
                                  DeseasonalizeReport* report = nullptr) {
  check_field_series(fs);
  if (period < 1) throw InvalidInput("deseasonalize requires period >= 1");
  const Index l = fs.length();
  if (l < 2 * period)
    throw InvalidInput("deseasonalize requires L >= 2*period, got L=" + std::to_string(l) +
                       " for period " + std::to_string(period));

  FieldSeries<Scalar> out = fs;
  if (report) report->zero_variance.clear();

  std::vector<std::vector<Index>> cols_of_phase(static_cast<std::size_t>(period));
  for (Index t = 0; t < l; ++t) cols_of_phase[static_cast<std::size_t>(t % period)].push_back(t);

  for (Index i = 0; i < fs.n_sites(); ++i) {
    for (Index p = 0; p < period; ++p) {
      const auto& cols = cols_of_phase[static_cast<std::size_t>(p)];
      const Scalar cnt = static_cast<Scalar>(cols.size());
      Scalar mean = 0;
      for (Index t : cols) mean += fs.values(i, t);
      mean /= cnt;
      Scalar var = 0;
      for (Index t : cols) {
        const Scalar d = fs.values(i, t) - mean;
        out.values(i, t) = d;
        var += d * d;
      }
      var /= cnt;
      if (normalize) {
        const Scalar tiny = Scalar{1e-14} * (Scalar{1} + std::abs(mean));
        if (var <= tiny * tiny) {
          if (report) report->zero_variance.emplace_back(i, p);
        } else {
          const Scalar inv = Scalar{1} / std::sqrt(var);
          for (Index t : cols) out.values(i, t) *= inv;
        }
      }
    }
  }
  return out;
}

// Mask-aware discrete Laplacian over active sites, stored in CSR-like form.
// Neighbor weights are -1; the center weight is the count of present
// neighbors, so rows sum to zero and constants are annihilated.
struct LaplacianStencil {
  std::vector<double> center_weight;   // per site
  std::vector<Index> offsets;          // size n_sites + 1
  std::vector<Index> neighbor_site;    // flattened neighbor site ids
  std::vector<double> neighbor_weight; // matching weights

  Index n_sites() const { return static_cast<Index>(center_weight.size()); }
};

namespace detail {

// Longest run of active cells along each axis; used to detect grids with
// no interior site in any direction.
inline Index max_active_run(const SpatialGrid& g, int axis) {
  Index best = 0;
  if (g.ndim() == 1) {
    Index run = 0;
    for (Index c = 0; c < g.dims[0]; ++c) {
      run = g.mask[static_cast<std::size_t>(c)] ? run + 1 : 0;
      best = std::max(best, run);
    }
    return best;
  }
  const Index ny = g.dims[0], nx = g.dims[1];
  if (axis == 0) {
    for (Index x = 0; x < nx; ++x) {
      Index run = 0;
      for (Index y = 0; y < ny; ++y) {
        run = g.mask[static_cast<std::size_t>(y * nx + x)] ? run + 1 : 0;
        best = std::max(best, run);
      }
    }
  } else {
    for (Index y = 0; y < ny; ++y) {
      Index run = 0;
      for (Index x = 0; x < nx; ++x) {
        run = g.mask[static_cast<std::size_t>(y * nx + x)] ? run + 1 : 0;
        best = std::max(best, run);
      }
    }
  }
  return best;
}

}  // namespace detail

// Builds the nearest-neighbor Laplacian stencil ({-1, 2, -1} in 1-D, the
// 4-neighborhood cross in 2-D) over active sites.
inline LaplacianStencil build_laplacian(const SpatialGrid& g) {
  bool has_interior = false;
  for (int axis = 0; axis < g.ndim(); ++axis)
    has_interior = has_interior || detail::max_active_run(g, axis) >= 3;
  if (!has_interior)
    throw InvalidInput("laplacian requires at least 3 consecutive active sites along some axis");

  const Index n = g.n_sites();
  LaplacianStencil st;
  st.center_weight.resize(static_cast<std::size_t>(n));
  st.offsets.assign(1, 0);

  auto push_neighbor = [&](Index cell) {
    const Index s = g.site_of_cell[static_cast<std::size_t>(cell)];
    if (s >= 0) {
      st.neighbor_site.push_back(s);
      st.neighbor_weight.push_back(-1.0);
    }
  };

  for (Index s = 0; s < n; ++s) {
    const Index c = g.cell_of_site[static_cast<std::size_t>(s)];
    const std::size_t before = st.neighbor_site.size();
    if (g.ndim() == 1) {
      if (c > 0) push_neighbor(c - 1);
      if (c + 1 < g.dims[0]) push_neighbor(c + 1);
    } else {
      const Index nx = g.dims[1];
      const Index y = c / nx, x = c % nx;
      if (y > 0) push_neighbor(c - nx);
      if (y + 1 < g.dims[0]) push_neighbor(c + nx);
      if (x > 0) push_neighbor(c - 1);
      if (x + 1 < nx) push_neighbor(c + 1);
    }
    st.center_weight[static_cast<std::size_t>(s)] =
        static_cast<double>(st.neighbor_site.size() - before);
    st.offsets.push_back(static_cast<Index>(st.neighbor_site.size()));
  }
  return st;
}

// Applies the stencil: out_i = c_i f_i + sum_j w_ij f_j = sum_j (f_i - f_j).
template <typename Scalar>
Vector<Scalar> apply_stencil(const LaplacianStencil& st, const Vector<Scalar>& field) {
  if (field.size() != st.n_sites())
    throw InvalidInput("stencil/field size mismatch");
  Vector<Scalar> out(field.size());
  for (Index s = 0; s < st.n_sites(); ++s) {
    Scalar acc = static_cast<Scalar>(st.center_weight[static_cast<std::size_t>(s)]) * field[s];
    for (Index k = st.offsets[static_cast<std::size_t>(s)];
         k < st.offsets[static_cast<std::size_t>(s) + 1]; ++k) {
      acc += static_cast<Scalar>(st.neighbor_weight[static_cast<std::size_t>(k)]) *
             field[st.neighbor_site[static_cast<std::size_t>(k)]];
    }
    out[s] = acc;
  }
  return out;
}

}  // namespace rspca
