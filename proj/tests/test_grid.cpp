#include "rspca/grid.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

using namespace rspca;

namespace {

FieldSeries<double> random_series(Index n, Index l, unsigned seed) {
  FieldSeries<double> fs;
  fs.grid = SpatialGrid::full({n});
  fs.values.resize(n, l);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Index i = 0; i < n; ++i)
    for (Index t = 0; t < l; ++t) fs.values(i, t) = gauss(rng) + 0.3 * std::sin(0.7 * double(t));
  return fs;
}

}  // namespace

TEST_CASE("full grid enumerates sites row-major with coordinates") {
  auto g = SpatialGrid::full({3, 4});
  CHECK(g.n_cells() == 12);
  CHECK(g.n_sites() == 12);
  CHECK(g.ndim() == 2);
  // site 5 = cell 5 = (row 1, col 1)
  CHECK(g.coords(5, 0) == doctest::Approx(1.0));
  CHECK(g.coords(5, 1) == doctest::Approx(1.0));
  CHECK(g.site_of_cell[11] == 11);
}

TEST_CASE("mask filters cells and renumbers sites") {
  std::vector<std::uint8_t> mask(12, 1);
  mask[5] = 0;
  auto g = SpatialGrid::masked({3, 4}, mask);
  CHECK(g.n_sites() == 11);
  CHECK(g.site_of_cell[5] == -1);
  CHECK(g.site_of_cell[6] == 5);  // renumbered after the hole
  CHECK(g.cell_of_site[5] == 6);
}

TEST_CASE("grid validation rejects bad shapes") {
  CHECK_THROWS_AS(SpatialGrid::full({}), InvalidInput);
  CHECK_THROWS_AS(SpatialGrid::full({3, 4, 5}), InvalidInput);
  CHECK_THROWS_AS(SpatialGrid::masked({2, 2}, std::vector<std::uint8_t>(3, 1)), InvalidInput);
  CHECK_THROWS_AS(SpatialGrid::masked({2, 2}, std::vector<std::uint8_t>(4, 0)), InvalidInput);
}

TEST_CASE("deseasonalize removes per-phase means (independent recomputation)") {
  const Index period = 12;
  auto fs = random_series(4, 10 * period + 5, 123u);
  auto out = deseasonalize(fs, period, false);

  // Oracle: recompute the per-phase means of the output with a plain loop.
  for (Index i = 0; i < out.n_sites(); ++i) {
    for (Index p = 0; p < period; ++p) {
      double sum = 0.0;
      Index cnt = 0;
      for (Index t = p; t < out.length(); t += period) {
        sum += out.values(i, t);
        ++cnt;
      }
      CHECK(std::abs(sum / double(cnt)) < 1e-10);
    }
  }
}

TEST_CASE("deseasonalize with normalize yields unit per-phase std") {
  const Index period = 7;
  auto fs = random_series(3, 40 * period, 77u);
  auto out = deseasonalize(fs, period, true);

  for (Index i = 0; i < out.n_sites(); ++i) {
    for (Index p = 0; p < period; ++p) {
      double sum = 0.0, sq = 0.0;
      Index cnt = 0;
      for (Index t = p; t < out.length(); t += period) {
        sum += out.values(i, t);
        sq += out.values(i, t) * out.values(i, t);
        ++cnt;
      }
      const double mean = sum / double(cnt);
      const double var = sq / double(cnt) - mean * mean;
      CHECK(std::abs(mean) < 1e-10);
      CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-10);
    }
  }
}

TEST_CASE("deseasonalize is idempotent") {
  const Index period = 5;
  auto fs = random_series(3, 20 * period + 3, 9u);
  for (bool normalize : {false, true}) {
    auto once = deseasonalize(fs, period, normalize);
    auto twice = deseasonalize(once, period, normalize);
    CHECK((twice.values - once.values).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("constant series with normalize stays zero and is reported") {
  FieldSeries<double> fs;
  fs.grid = SpatialGrid::full({2});
  fs.values = Matrix<double>::Constant(2, 24, 3.7);
  DeseasonalizeReport report;
  auto out = deseasonalize(fs, 12, true, &report);
  CHECK(out.values.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  CHECK(report.zero_variance.size() == 2 * 12);
}

TEST_CASE("deseasonalize rejects short records") {
  auto fs = random_series(2, 20, 5u);
  CHECK_THROWS_AS(deseasonalize(fs, 11, false), InvalidInput);
  CHECK_THROWS_AS(deseasonalize(fs, 0, false), InvalidInput);
}

TEST_CASE("interior stencil is the 4-neighborhood cross") {
  auto g = SpatialGrid::full({5, 5});
  auto st = build_laplacian(g);
  const Index s = g.site_of_cell[2 * 5 + 2];  // center site
  CHECK(st.center_weight[s] == doctest::Approx(4.0));
  CHECK(st.offsets[s + 1] - st.offsets[s] == 4);
  for (Index k = st.offsets[s]; k < st.offsets[s + 1]; ++k)
    CHECK(st.neighbor_weight[k] == doctest::Approx(-1.0));
}

TEST_CASE("boundary and mask-adjacent sites renormalize the center weight") {
  auto g = SpatialGrid::full({5, 5});
  auto st = build_laplacian(g);
  CHECK(st.center_weight[0] == doctest::Approx(2.0));  // corner

  std::vector<std::uint8_t> mask(25, 1);
  mask[2 * 5 + 1] = 0;  // knock out the left neighbor of the center
  auto gm = SpatialGrid::masked({5, 5}, mask);
  auto stm = build_laplacian(gm);
  const Index s = gm.site_of_cell[2 * 5 + 2];
  CHECK(stm.center_weight[s] == doctest::Approx(3.0));
  CHECK(stm.offsets[s + 1] - stm.offsets[s] == 3);
}

TEST_CASE("stencil annihilates constants on any active subset") {
  std::vector<std::uint8_t> mask(36, 1);
  mask[7] = mask[8] = mask[21] = 0;
  auto g = SpatialGrid::masked({6, 6}, mask);
  auto st = build_laplacian(g);
  Vector<double> constant = Vector<double>::Constant(g.n_sites(), 4.2);
  CHECK(apply_stencil(st, constant).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("interior stencil annihilates linear ramps") {
  auto g = SpatialGrid::full({7, 7});
  auto st = build_laplacian(g);
  Vector<double> ramp(g.n_sites());
  for (Index s = 0; s < g.n_sites(); ++s) ramp[s] = 2.0 * g.coords(s, 0) - 0.5 * g.coords(s, 1);
  auto lap = apply_stencil(st, ramp);
  for (Index s = 0; s < g.n_sites(); ++s) {
    const double y = g.coords(s, 0), x = g.coords(s, 1);
    if (y > 0 && y < 6 && x > 0 && x < 6) CHECK(std::abs(lap[s]) < 1e-12);
  }
}

TEST_CASE("laplacian needs an interior along some axis") {
  CHECK_THROWS_AS(build_laplacian(SpatialGrid::full({2, 2})), InvalidInput);
  CHECK_NOTHROW(build_laplacian(SpatialGrid::full({2, 5})));
  CHECK_THROWS_AS(build_laplacian(SpatialGrid::full({2})), InvalidInput);
  CHECK_NOTHROW(build_laplacian(SpatialGrid::full({3})));
}

TEST_CASE("1-D stencil matches {-1, 2, -1}") {
  auto g = SpatialGrid::full({5});
  auto st = build_laplacian(g);
  CHECK(st.center_weight[2] == doctest::Approx(2.0));
  CHECK(st.center_weight[0] == doctest::Approx(1.0));
  CHECK(st.center_weight[4] == doctest::Approx(1.0));
}
