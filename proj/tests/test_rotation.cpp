#include "rspca/rotation.hpp"

#include <doctest.h>

#include <Eigen/QR>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <vector>

using rspca::CMatrix;
using rspca::CVector;
using rspca::Index;
using rspca::SpatialGrid;
using rspca::Vector;
using Complex = std::complex<double>;

namespace {

constexpr double kPi = std::numbers::pi;

CVector<double> unit_phases(const std::vector<double>& phases) {
  CVector<double> u(static_cast<Index>(phases.size()));
  for (Index i = 0; i < u.size(); ++i)
    u[i] = Complex(std::cos(phases[static_cast<std::size_t>(i)]),
                   std::sin(phases[static_cast<std::size_t>(i)]));
  return u;
}

// Orthonormal pair from a seeded complex Gaussian draw.
std::pair<CVector<double>, CVector<double>> random_pair(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  CMatrix<double> m(n, 2);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < 2; ++j) m(i, j) = Complex(normal(rng), normal(rng));
  Eigen::HouseholderQR<CMatrix<double>> qr(m);
  CMatrix<double> q = qr.householderQ() * CMatrix<double>::Identity(n, 2);
  return {q.col(0), q.col(1)};
}

// Independent roughness enumeration on a full 2-D grid: nested loops over
// cells, wrapped 4-neighbor differences, optional modulus mask.
double enumerate_cost(Index ny, Index nx, const CVector<double>& u, double mask_fraction = -1.0) {
  double max_mod = 0.0;
  for (Index s = 0; s < u.size(); ++s) max_mod = std::max(max_mod, std::abs(u[s]));
  const double threshold = mask_fraction < 0.0 ? -1.0 : mask_fraction * max_mod;
  double total = 0.0;
  for (Index y = 0; y < ny; ++y) {
    for (Index x = 0; x < nx; ++x) {
      const Index s = y * nx + x;
      if (std::abs(u[s]) < threshold) continue;
      double acc = 0.0;
      const Index dy[4] = {-1, 1, 0, 0};
      const Index dx[4] = {0, 0, -1, 1};
      for (int k = 0; k < 4; ++k) {
        const Index yy = y + dy[k];
        const Index xx = x + dx[k];
        if (yy < 0 || yy >= ny || xx < 0 || xx >= nx) continue;
        const Index j = yy * nx + xx;
        if (std::abs(u[j]) < threshold) continue;
        acc += rspca::wrap_phase(std::arg(u[s]) - std::arg(u[j]));
      }
      total += std::abs(acc);
    }
  }
  return total;
}

}  // namespace

TEST_CASE("pair rotation preserves orthonormality and the span") {
  auto [u1, u2] = random_pair(40, 7u);
  rspca::RotationParams<double> p{0.7, 2.1};
  auto [r1, r2] = rspca::rotate_pair(u1, u2, p);

  CHECK(std::abs(r1.norm() - 1.0) < 1e-12);
  CHECK(std::abs(r2.norm() - 1.0) < 1e-12);
  CHECK(std::abs((r1.adjoint() * r2)(0, 0)) < 1e-12);

  // both outputs stay inside span{u1, u2}
  for (const auto& r : {r1, r2}) {
    const Complex a = (u1.adjoint() * r)(0, 0);
    const Complex b = (u2.adjoint() * r)(0, 0);
    CHECK((r - a * u1 - b * u2).norm() < 1e-12);
  }

  // theta = 0 is the identity; theta = pi/2, phi = 0 swaps with a sign
  auto [i1, i2] = rspca::rotate_pair(u1, u2, {0.0, 0.0});
  CHECK((i1 - u1).norm() == 0.0);
  CHECK((i2 - u2).norm() == 0.0);
  auto [s1, s2] = rspca::rotate_pair(u1, u2, {kPi / 2.0, 0.0});
  CHECK((s1 - u2).norm() < 1e-15);
  CHECK((s2 + u1).norm() < 1e-15);

  CVector<double> short_vec = u1.head(10);
  CHECK_THROWS_AS(rspca::rotate_pair(u1, short_vec, p), rspca::InvalidInput);
}

TEST_CASE("checkerboard phase cost matches the hand count") {
  const auto grid = SpatialGrid::full({4, 4});
  std::vector<double> phases(16);
  for (Index y = 0; y < 4; ++y)
    for (Index x = 0; x < 4; ++x) phases[static_cast<std::size_t>(y * 4 + x)] =
        ((y + x) % 2 == 0) ? 0.0 : kPi - 0.1;
  const auto u = unit_phases(phases);

  // every edge difference has magnitude pi - 0.1; degree sum = 2 * 24 edges
  const double expected = 48.0 * (kPi - 0.1);
  CHECK(rspca::phase_laplacian_cost(grid, u) == doctest::Approx(expected).epsilon(1e-12));

  // phases pi + 0.1 wrap back to the same difference magnitude
  for (auto& ph : phases)
    if (ph != 0.0) ph = kPi + 0.1;
  const auto wrapped = unit_phases(phases);
  CHECK(rspca::phase_laplacian_cost(grid, wrapped) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("plane and constant phase fields cost almost nothing") {
  const Index nx = 8;
  const auto grid = SpatialGrid::full({nx, nx});
  std::vector<double> phases(static_cast<std::size_t>(nx * nx));

  for (auto& ph : phases) ph = 1.234;
  CHECK(rspca::phase_laplacian_cost(grid, unit_phases(phases)) == 0.0);

  // gentle plane 0.2 * x: interior rows cancel, only the two x-edges count
  for (Index y = 0; y < nx; ++y)
    for (Index x = 0; x < nx; ++x)
      phases[static_cast<std::size_t>(y * nx + x)] = 0.2 * static_cast<double>(x);
  const auto u = unit_phases(phases);
  CHECK(rspca::phase_laplacian_cost(grid, u) == doctest::Approx(16.0 * 0.2).epsilon(1e-12));
  CHECK(rspca::phase_laplacian_cost(grid, u) ==
        doctest::Approx(enumerate_cost(nx, nx, u)).epsilon(1e-13));
}

TEST_CASE("modulus mask skips weak sites") {
  const auto grid = SpatialGrid::full({4, 4});
  CVector<double> u(16);
  std::mt19937_64 rng(13u);
  std::uniform_real_distribution<double> unif(-kPi, kPi);
  for (Index s = 0; s < 16; ++s) {
    const double ph = unif(rng);
    u[s] = Complex(std::cos(ph), std::sin(ph));
  }
  u[0] *= 1e-4;  // corner site drops below the mask
  u[5] *= 1e-4;  // interior site too

  rspca::CostOptions<double> masked;
  masked.weighting = rspca::CostWeighting::modulus_mask;
  CHECK(rspca::phase_laplacian_cost(grid, u, masked) ==
        doctest::Approx(enumerate_cost(4, 4, u, 0.05)).epsilon(1e-12));
  CHECK(rspca::phase_laplacian_cost(grid, u) ==
        doctest::Approx(enumerate_cost(4, 4, u)).epsilon(1e-12));
}

TEST_CASE("presmoothing averages the difference field") {
  const Index nx = 8;
  const auto grid = SpatialGrid::full({nx, nx});

  // independent smoothed enumeration for the plane-phase field
  std::vector<double> phases(static_cast<std::size_t>(nx * nx));
  for (Index y = 0; y < nx; ++y)
    for (Index x = 0; x < nx; ++x)
      phases[static_cast<std::size_t>(y * nx + x)] = 0.2 * static_cast<double>(x);
  const auto u = unit_phases(phases);

  std::vector<double> lap(static_cast<std::size_t>(nx * nx), 0.0);
  for (Index y = 0; y < nx; ++y)
    for (Index x = 0; x < nx; ++x) {
      double acc = 0.0;
      if (y > 0) acc += rspca::wrap_phase(phases[static_cast<std::size_t>(y * nx + x)] -
                                          phases[static_cast<std::size_t>((y - 1) * nx + x)]);
      if (y + 1 < nx) acc += rspca::wrap_phase(phases[static_cast<std::size_t>(y * nx + x)] -
                                               phases[static_cast<std::size_t>((y + 1) * nx + x)]);
      if (x > 0) acc += rspca::wrap_phase(phases[static_cast<std::size_t>(y * nx + x)] -
                                          phases[static_cast<std::size_t>(y * nx + x - 1)]);
      if (x + 1 < nx) acc += rspca::wrap_phase(phases[static_cast<std::size_t>(y * nx + x)] -
                                               phases[static_cast<std::size_t>(y * nx + x + 1)]);
      lap[static_cast<std::size_t>(y * nx + x)] = acc;
    }
  double expected = 0.0;
  for (Index y = 0; y < nx; ++y)
    for (Index x = 0; x < nx; ++x) {
      double acc = 0.0;
      int count = 0;
      for (Index dy = -1; dy <= 1; ++dy)
        for (Index dx = -1; dx <= 1; ++dx) {
          const Index yy = y + dy;
          const Index xx = x + dx;
          if (yy < 0 || yy >= nx || xx < 0 || xx >= nx) continue;
          acc += lap[static_cast<std::size_t>(yy * nx + xx)];
          ++count;
        }
      expected += std::abs(acc / count);
    }

  rspca::CostOptions<double> smooth;
  smooth.presmooth = true;
  CHECK(rspca::phase_laplacian_cost(grid, u, smooth) == doctest::Approx(expected).epsilon(1e-12));

  // alternating-sign differences largely cancel under the box average
  std::vector<double> checker(static_cast<std::size_t>(nx * nx));
  for (Index y = 0; y < nx; ++y)
    for (Index x = 0; x < nx; ++x)
      checker[static_cast<std::size_t>(y * nx + x)] = ((y + x) % 2 == 0) ? 0.0 : kPi - 0.1;
  const auto board = unit_phases(checker);
  CHECK(rspca::phase_laplacian_cost(grid, board, smooth) <
        0.5 * rspca::phase_laplacian_cost(grid, board));
}

TEST_CASE("phase cost ignores global phase and conjugation") {
  std::vector<std::uint8_t> mask(81, 1);
  mask[12] = 0;
  mask[40] = 0;
  mask[41] = 0;
  const auto grid = SpatialGrid::masked({9, 9}, mask);
  auto [u1, u2] = random_pair(grid.n_sites(), 19u);
  const CVector<double>& u = u1;

  for (const auto& options :
       {rspca::CostOptions<double>{},
        rspca::CostOptions<double>{rspca::CostWeighting::modulus_mask, false, 0.05},
        rspca::CostOptions<double>{rspca::CostWeighting::none, true, 0.05}}) {
    const double base = rspca::phase_laplacian_cost(grid, u, options);
    const Complex twist(std::cos(0.77), std::sin(0.77));
    CHECK(rspca::phase_laplacian_cost(grid, (twist * u).eval(), options) ==
          doctest::Approx(base).epsilon(1e-10));
    CHECK(rspca::phase_laplacian_cost(grid, u.conjugate().eval(), options) ==
          doctest::Approx(base).epsilon(1e-10));
  }
}

TEST_CASE("rotation recovers plane waves from a mixture") {
  const Index nx = 12;
  const auto grid = SpatialGrid::full({nx, nx});
  CVector<double> v1(nx * nx);
  CVector<double> v2(nx * nx);
  for (Index y = 0; y < nx; ++y)
    for (Index x = 0; x < nx; ++x) {
      const double phx = 0.4 * static_cast<double>(x);
      const double phy = 0.4 * static_cast<double>(y);
      v1[y * nx + x] = Complex(std::cos(phx), std::sin(phx));
      v2[y * nx + x] = Complex(std::cos(phy), std::sin(phy));
    }

  CVector<double> u1 = v1 + v2;
  u1 /= u1.norm();
  CVector<double> u2 = v1 - v2;
  u2 -= (u1.adjoint() * u2)(0, 0) * u1;
  u2 /= u2.norm();

  const auto rotated = rspca::optimize_rotation(grid, u1, u2);

  const double mixed1 = rspca::phase_laplacian_cost(grid, u1);
  const double mixed2 = rspca::phase_laplacian_cost(grid, u2);
  CHECK(rotated.cost1 < std::min(mixed1, mixed2) - 1.0);

  // a pure plane costs only its two open edges: 2 * nx * slope
  CHECK(rotated.cost1 == doctest::Approx(2.0 * nx * 0.4).epsilon(1e-6));
  const double align1 = std::abs((rotated.u1.adjoint() * v1)(0, 0)) / v1.norm();
  const double align2 = std::abs((rotated.u1.adjoint() * v2)(0, 0)) / v2.norm();
  CHECK(std::max(align1, align2) > 0.999);

  // the two deepest minima are the two recoverable planes; any further
  // structure (symmetric balanced mixtures) sits clearly above them
  REQUIRE(rotated.minima.size() >= 2);
  CHECK(rotated.minima.size() <= 4);
  CHECK(rotated.minima[1].cost == doctest::Approx(rotated.minima[0].cost).epsilon(1e-6));
  for (std::size_t i = 2; i < rotated.minima.size(); ++i)
    CHECK(rotated.minima[i].cost > rotated.minima[0].cost + 3.0);

  // the second minimum recovers the other plane
  auto other = rspca::rotate_pair(u1, u2, rotated.minima[1].params).first;
  const double oalign1 = std::abs((other.adjoint() * v1)(0, 0)) / v1.norm();
  const double oalign2 = std::abs((other.adjoint() * v2)(0, 0)) / v2.norm();
  CHECK(std::max(oalign1, oalign2) > 0.999);
  CHECK(std::min(align1, align2) < 0.9);  // distinct targets
  CHECK((align1 > align2) != (oalign1 > oalign2));

  // input gauges shift the landscape without moving its deep basins
  const Complex g1(std::cos(0.7), std::sin(0.7));
  const Complex g2(std::cos(-1.1), std::sin(-1.1));
  const auto gauged = rspca::optimize_rotation(grid, (g1 * u1).eval(), (g2 * u2).eval());
  CHECK(gauged.cost1 == doctest::Approx(rotated.cost1).epsilon(1e-8));
  CHECK(gauged.params.theta == doctest::Approx(rotated.params.theta).epsilon(1e-5));
  REQUIRE(gauged.minima.size() >= 2);
  CHECK(gauged.minima[1].cost == doctest::Approx(rotated.minima[1].cost).epsilon(1e-6));
}

TEST_CASE("optimizer output satisfies the invariants") {
  const auto grid = SpatialGrid::full({9, 9});
  auto [u1, u2] = random_pair(grid.n_sites(), 29u);
  const auto rotated = rspca::optimize_rotation(grid, u1, u2);

  CHECK(std::abs(rotated.u1.norm() - 1.0) < 1e-10);
  CHECK(std::abs(rotated.u2.norm() - 1.0) < 1e-10);
  CHECK(std::abs((rotated.u1.adjoint() * rotated.u2)(0, 0)) < 1e-10);
  for (const auto& r : {rotated.u1, rotated.u2}) {
    const Complex a = (u1.adjoint() * r)(0, 0);
    const Complex b = (u2.adjoint() * r)(0, 0);
    CHECK((r - a * u1 - b * u2).norm() < 1e-10);
  }

  // the optimum can be no worse than either unrotated pattern
  CHECK(rotated.cost1 <= rspca::phase_laplacian_cost(grid, u1) + 1e-12);
  CHECK(rotated.cost1 <= rspca::phase_laplacian_cost(grid, u2) + 1e-12);

  CHECK(rotated.params.theta >= 0.0);
  CHECK(rotated.params.theta <= kPi / 2.0);
  CHECK(rotated.params.phi >= 0.0);
  CHECK(rotated.params.phi < 2.0 * kPi);

  // minima are sorted and pairwise separated
  REQUIRE(!rotated.minima.empty());
  CHECK(rotated.minima[0].cost == doctest::Approx(rotated.cost1));
  for (std::size_t i = 1; i < rotated.minima.size(); ++i) {
    CHECK(rotated.minima[i].cost >= rotated.minima[i - 1].cost);
    for (std::size_t j = 0; j < i; ++j)
      CHECK(rspca::detail::rotation_distance(rotated.minima[i].params,
                                             rotated.minima[j].params) > 0.05);
  }

  // gauging the inputs translates the landscape in phi exactly:
  // J'(theta, phi) = J(theta, phi + arg g2 - arg g1), pointwise
  const Complex g1(std::cos(0.7), std::sin(0.7));
  const Complex g2(std::cos(-1.1), std::sin(-1.1));
  const double shift = -1.1 - 0.7;
  const CVector<double> w1 = g1 * u1;
  const CVector<double> w2 = g2 * u2;
  for (const auto& p : {rspca::RotationParams<double>{0.4, 1.3},
                        rspca::RotationParams<double>{1.2, 5.0}}) {
    const auto gauged_vec = rspca::rotate_pair(w1, w2, p).first;
    const auto shifted_vec = rspca::rotate_pair(u1, u2, {p.theta, p.phi + shift}).first;
    CHECK(rspca::phase_laplacian_cost(grid, gauged_vec) ==
          doctest::Approx(rspca::phase_laplacian_cost(grid, shifted_vec)).epsilon(1e-10));
  }

  // conjugating both inputs mirrors the landscape in phi, same cost
  const auto conj = rspca::optimize_rotation(grid, u1.conjugate().eval(), u2.conjugate().eval());
  CHECK(conj.cost1 == doctest::Approx(rotated.cost1).epsilon(1e-8));
}

TEST_CASE("swapping the pair mirrors the rotation family") {
  const auto grid = SpatialGrid::full({7, 7});
  auto [u1, u2] = random_pair(grid.n_sites(), 37u);
  for (const auto& p : {rspca::RotationParams<double>{0.3, 1.0},
                        rspca::RotationParams<double>{1.1, 4.4},
                        rspca::RotationParams<double>{0.75, 2.2}}) {
    const auto a = rspca::rotate_pair(u1, u2, {kPi / 2.0 - p.theta, p.phi}).first;
    const auto b = rspca::rotate_pair(u1, u2, {p.theta, p.phi + kPi}).second;
    CHECK(rspca::phase_laplacian_cost(grid, a) ==
          doctest::Approx(rspca::phase_laplacian_cost(grid, b)).epsilon(1e-10));
  }

  // phi periodicity
  const auto c = rspca::rotate_pair(u1, u2, {0.6, 0.9}).first;
  const auto d = rspca::rotate_pair(u1, u2, {0.6, 0.9 + 2.0 * kPi}).first;
  CHECK(rspca::phase_laplacian_cost(grid, c) ==
        doctest::Approx(rspca::phase_laplacian_cost(grid, d)).epsilon(1e-10));
}

TEST_CASE("degenerate or malformed pairs are rejected") {
  const auto grid = SpatialGrid::full({6, 6});
  auto [u1, u2] = random_pair(grid.n_sites(), 41u);

  const Complex twist(std::cos(0.3), std::sin(0.3));
  CHECK_THROWS_AS(rspca::optimize_rotation(grid, u1, (twist * u1).eval()), rspca::InvalidInput);
  CHECK_THROWS_AS(rspca::optimize_rotation(grid, (2.0 * u1).eval(), u2), rspca::InvalidInput);
  CVector<double> short_vec = u1.head(10);
  CHECK_THROWS_AS(rspca::optimize_rotation(grid, u1, short_vec), rspca::InvalidInput);
}

TEST_CASE("gauge rays collapse to single minima") {
  // first pattern already smooth: the optimum sits on the theta = 0 ray,
  // where phi is pure gauge; the ray must appear as one minimum only
  const Index nx = 10;
  const auto grid = SpatialGrid::full({nx, nx});
  CVector<double> plane(nx * nx);
  for (Index y = 0; y < nx; ++y)
    for (Index x = 0; x < nx; ++x) {
      const double ph = 0.3 * static_cast<double>(x);
      plane[y * nx + x] = Complex(std::cos(ph), std::sin(ph));
    }
  plane /= plane.norm();
  auto [r1, r2] = random_pair(nx * nx, 53u);
  CVector<double> rough = r1 - (plane.adjoint() * r1)(0, 0) * plane;
  rough /= rough.norm();

  const auto rotated = rspca::optimize_rotation(grid, plane, rough);
  CHECK(rotated.params.theta < 0.05);
  int near_zero = 0;
  for (const auto& m : rotated.minima)
    if (m.params.theta < 0.05) ++near_zero;
  CHECK(near_zero == 1);
}
