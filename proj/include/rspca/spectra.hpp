#pragma once

// Cross-spectral and covariance estimation with eigendecomposition.
//
// Site-space second-moment matrices share one recorded normalization,
// 1/N with N the number of sites (unusual — 1/L is conventional — but
// every reported quantity is a ratio, so the constant cancels):
//
//   C    = (1/N) X X^T                       (time domain)
//   S_k  = (1/N) W_k W_k^H                   (wavelet band k)
//   S_p  = (1/N) mean over segments/bins of x_hat x_hat^H   (periodogram)
//
// Eigendecompositions return descending non-negative eigenvalues with
// explained-variance fractions lambda_i / trace.  Per-mode series are
//
//   kappa_i(t) = sum_j conj(W[j,t]) u_i[j]   (= (W^H u_i)(t)),
//
// which makes norm_constant * ||kappa restricted to the estimation
// samples||^2 = lambda_i an exact identity.
//
// Large problems avoid forming the N x N matrix: blocked subspace
// iteration applies v -> norm_constant * W (W^H v) directly, and when
// sites far outnumber retained samples the dual Gram problem
// (norm_constant * W^H W, same nonzero spectrum) is solved instead.

#include "rspca/grid.hpp"
#include "rspca/types.hpp"
#include "rspca/wavelet.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace rspca {

enum class SpectralEstimator { morlet, bartlett, welch };

inline const char* estimator_name(SpectralEstimator e) {
  switch (e) {
    case SpectralEstimator::morlet: return "morlet";
    case SpectralEstimator::bartlett: return "bartlett";
    default: return "welch";
  }
}

template <typename Scalar = double>
struct CovarianceMatrix {
  Matrix<Scalar> mat;       // N x N, symmetric
  Scalar norm_constant{0};  // the recorded 1/N
};

template <typename Scalar = double>
struct CrossSpectralMatrix {
  Scalar band_freq{0};
  Scalar scale{0};  // 0 for periodogram estimates (no wavelet scale)
  CMatrix<Scalar> mat;
  SpectralEstimator estimator{SpectralEstimator::morlet};
  Index effective_samples{0};
  Scalar norm_constant{0};
};

template <typename Scalar = double>
struct EigenModes {
  Vector<Scalar> eigenvalues;    // descending, clamped at zero
  CMatrix<Scalar> eigenvectors;  // one unit-norm column per mode
  Vector<Scalar> fractions;      // eigenvalue / trace
  Scalar trace{0};
  Scalar band_freq = std::numeric_limits<Scalar>::quiet_NaN();

  Index n_modes() const { return eigenvalues.size(); }
};

template <typename Scalar = double>
struct PCSeries {
  CVector<Scalar> values;
  Index source_mode{0};
  Scalar band_freq = std::numeric_limits<Scalar>::quiet_NaN();
  Scalar norm_constant{0};
};

// Count of eigenvalues above the numerical-rank floor 1e-10 * largest.
template <typename Scalar>
Index numerical_rank(const Vector<Scalar>& eigenvalues_desc, Scalar rel_floor = Scalar(1e-10)) {
  if (eigenvalues_desc.size() == 0 || !(eigenvalues_desc[0] > Scalar(0))) return 0;
  const Scalar floor_value = rel_floor * eigenvalues_desc[0];
  Index r = 0;
  for (Index i = 0; i < eigenvalues_desc.size(); ++i)
    if (eigenvalues_desc[i] > floor_value) ++r;
  return r;
}

template <typename Scalar>
CovarianceMatrix<Scalar> covariance_matrix(const FieldSeries<Scalar>& fs) {
  check_field_series(fs);
  const Index n = fs.values.rows();
  CovarianceMatrix<Scalar> c;
  c.norm_constant = Scalar(1) / static_cast<Scalar>(n);
  c.mat.noalias() = fs.values * fs.values.transpose() * c.norm_constant;
  c.mat = ((c.mat + c.mat.transpose()) / Scalar(2)).eval();
  return c;
}

namespace detail {

// Descending-order reindex of a self-adjoint solve.  Negative values at
// roundoff scale are clamped to zero; genuinely negative eigenvalues of an
// indefinite input are kept.
template <typename Scalar, typename EigMat>
void take_descending(const Eigen::SelfAdjointEigenSolver<EigMat>& es, Index k,
                     Vector<Scalar>& values, EigMat& vectors) {
  const Index n = es.eigenvalues().size();
  const Scalar magnitude = es.eigenvalues().cwiseAbs().maxCoeff();
  values.resize(k);
  vectors.resize(es.eigenvectors().rows(), k);
  for (Index i = 0; i < k; ++i) {
    Scalar v = es.eigenvalues()[n - 1 - i];
    if (v < Scalar(0) && -v <= Scalar(1e-12) * magnitude) v = Scalar(0);
    values[i] = v;
    vectors.col(i) = es.eigenvectors().col(n - 1 - i);
  }
}

template <typename Scalar>
Vector<Scalar> fractions_of(const Vector<Scalar>& values, Scalar trace) {
  if (!(trace > Scalar(0))) return Vector<Scalar>::Zero(values.size());
  return values / trace;
}

// Deterministic dense start block for subspace iteration.
template <typename Mat>
Mat deterministic_start(Index n, Index b) {
  using Entry = typename Mat::Scalar;
  using Real = typename Eigen::NumTraits<Entry>::Real;
  Mat v(n, b);
  for (Index j = 0; j < b; ++j)
    for (Index i = 0; i < n; ++i) {
      const std::uint64_t h =
          split_seed(0x5bd1e995u + static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(i));
      const Real re = Real(2) * (static_cast<Real>(h >> 11) * Real(0x1.0p-53)) - Real(1);
      if constexpr (Eigen::NumTraits<Entry>::IsComplex) {
        const std::uint64_t h2 = split_seed(h, 0x9e3779b9u);
        const Real im = Real(2) * (static_cast<Real>(h2 >> 11) * Real(0x1.0p-53)) - Real(1);
        v(i, j) = Entry(re, im);
      } else {
        v(i, j) = re;
      }
    }
  return v;
}

template <typename Mat>
Mat thin_q(const Mat& z) {
  Eigen::HouseholderQR<Mat> qr(z);
  Mat q = Mat::Identity(z.rows(), z.cols());
  q = qr.householderQ() * q;
  return q;
}

// Top-k eigenpairs of op(v) = alpha * W (W^H v) without forming the matrix.
// Blocked subspace iteration with Rayleigh-Ritz extraction; deterministic
// start.  `enforce_residual` demands ||op u - lambda u|| <= resid_tol *
// lambda_1 and throws NumericalFailure when iteration cannot deliver it.
template <typename Mat>
struct ImplicitTopk {
  using Entry = typename Mat::Scalar;
  using Real = typename Eigen::NumTraits<Entry>::Real;
  Vector<Real> eigenvalues;
  Mat vectors;
  Real max_residual{0};
  int iterations{0};
};

template <typename Mat>
ImplicitTopk<Mat> subspace_topk(const Mat& w, typename ImplicitTopk<Mat>::Real alpha, Index k,
                                Index block, int max_iters,
                                typename ImplicitTopk<Mat>::Real resid_tol,
                                bool enforce_residual) {
  using Real = typename ImplicitTopk<Mat>::Real;
  using Small = Eigen::Matrix<typename Mat::Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Index n = w.rows();
  const Index b = std::min<Index>(n, std::max<Index>(block, k));
  if (k < 1 || k > n) throw InvalidInput("mode count out of range");

  auto apply = [&](const Mat& v) -> Mat {
    Mat y = w.adjoint() * v;
    Mat z = w * y;
    return z * alpha;
  };

  // Rayleigh quotients and residuals of the current leading block.
  auto extract = [&](const Mat& v, int iter) -> ImplicitTopk<Mat> {
    Mat u = v.leftCols(k);
    Mat zu = apply(u);
    Vector<Real> lam(k);
    Vector<Real> resid(k);
    for (Index i = 0; i < k; ++i) {
      lam[i] = std::real((u.col(i).adjoint() * zu.col(i))(0, 0));
      resid[i] = (zu.col(i) - u.col(i) * lam[i]).norm();
    }
    // near-degenerate Ritz values can land out of order; sort descending
    std::vector<Index> order(static_cast<std::size_t>(k));
    for (Index i = 0; i < k; ++i) order[static_cast<std::size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index c) { return lam[a] > lam[c]; });
    ImplicitTopk<Mat> out;
    out.eigenvalues.resize(k);
    out.vectors.resize(n, k);
    for (Index i = 0; i < k; ++i) {
      out.eigenvalues[i] = std::max(Real(0), lam[order[static_cast<std::size_t>(i)]]);
      out.vectors.col(i) = u.col(order[static_cast<std::size_t>(i)]);
      out.max_residual = std::max(out.max_residual, resid[order[static_cast<std::size_t>(i)]]);
    }
    out.iterations = iter;
    return out;
  };

  Mat v = thin_q<Mat>(deterministic_start<Mat>(n, b));
  Real prev_sum = std::numeric_limits<Real>::quiet_NaN();
  int stable = 0;
  for (int iter = 1; iter <= max_iters; ++iter) {
    Mat z = apply(v);
    Small h = v.adjoint() * z;
    h = ((h + h.adjoint()) / Real(2)).eval();
    Eigen::SelfAdjointEigenSolver<Small> es(h);
    if (es.info() != Eigen::Success) throw NumericalFailure("subspace Rayleigh-Ritz solve failed");

    // reorder descending and rotate the block to Ritz vectors
    Small rot(b, b);
    Real sum = 0;
    for (Index i = 0; i < b; ++i) {
      rot.col(i) = es.eigenvectors().col(b - 1 - i);
      if (i < k) sum += es.eigenvalues()[b - 1 - i];
    }
    v = thin_q<Mat>((z * rot).eval());

    const Real denom = std::max(std::abs(sum), std::numeric_limits<Real>::min());
    stable = (std::isfinite(prev_sum) && std::abs(sum - prev_sum) <= Real(1e-11) * denom)
                 ? stable + 1
                 : 0;
    prev_sum = sum;
    if (stable >= 2) {
      ImplicitTopk<Mat> out = extract(v, iter);
      const Real lead = std::max(out.eigenvalues[0], std::numeric_limits<Real>::min());
      if (!enforce_residual || out.max_residual <= resid_tol * lead) return out;
      stable = 0;  // keep iterating toward the residual target
    }
  }
  ImplicitTopk<Mat> out = extract(v, max_iters);
  const Real lead = std::max(out.eigenvalues[0], std::numeric_limits<Real>::min());
  if (enforce_residual && out.max_residual > resid_tol * lead)
    throw NumericalFailure("subspace iteration residual " + std::to_string(out.max_residual) +
                           " above tolerance after " + std::to_string(max_iters) + " iterations");
  return out;
}

enum class TopkMethod { automatic, dense, gram, subspace };

}  // namespace detail

// Top-k eigenmodes of norm_constant * W W^H given the coefficient block W
// (one row per site, one column per retained sample).  Method selection:
// dense for small site counts, dual Gram solve when sites far outnumber
// samples, implicit subspace iteration otherwise.
template <typename Scalar>
EigenModes<Scalar> top_spectral_modes(const CMatrix<Scalar>& w, Scalar norm_constant, Index k,
                                      detail::TopkMethod method = detail::TopkMethod::automatic) {
  const Index n = w.rows();
  const Index t = w.cols();
  if (n < 1 || t < 1) throw InvalidInput("coefficient block is empty");
  if (k < 1 || k > std::min(n, t))
    throw InvalidInput("mode count must lie in [1, min(sites, samples)]");
  if (!(norm_constant > Scalar(0))) throw InvalidInput("norm constant must be positive");

  EigenModes<Scalar> out;
  out.trace = norm_constant * w.squaredNorm();

  auto method_used = method;
  if (method == detail::TopkMethod::automatic) {
    if (n <= 256)
      method_used = detail::TopkMethod::dense;
    else if (n > 2 * t)
      method_used = detail::TopkMethod::gram;
    else
      method_used = detail::TopkMethod::subspace;
  }

  if (method_used == detail::TopkMethod::dense) {
    CMatrix<Scalar> s = (w * w.adjoint()) * norm_constant;
    s = ((s + s.adjoint()) / Scalar(2)).eval();
    Eigen::SelfAdjointEigenSolver<CMatrix<Scalar>> es(s);
    if (es.info() != Eigen::Success) throw NumericalFailure("dense Hermitian eigensolve failed");
    detail::take_descending<Scalar>(es, k, out.eigenvalues, out.eigenvectors);
  } else if (method_used == detail::TopkMethod::gram) {
    CMatrix<Scalar> g = (w.adjoint() * w) * norm_constant;
    g = ((g + g.adjoint()) / Scalar(2)).eval();
    Eigen::SelfAdjointEigenSolver<CMatrix<Scalar>> es(g);
    if (es.info() != Eigen::Success) throw NumericalFailure("Gram eigensolve failed");
    Vector<Scalar> values;
    CMatrix<Scalar> gvecs;
    detail::take_descending<Scalar>(es, k, values, gvecs);
    out.eigenvalues = values;
    out.eigenvectors.resize(n, k);
    for (Index i = 0; i < k; ++i) {
      CVector<Scalar> u = w * gvecs.col(i);
      const Scalar norm = u.norm();
      if (norm > Scalar(0)) u /= norm;
      out.eigenvectors.col(i) = u;
    }
  } else {
    const auto r = detail::subspace_topk<CMatrix<Scalar>>(w, norm_constant, k,
                                                          /*block=*/k + 8, /*max_iters=*/200,
                                                          /*resid_tol=*/Scalar(1e-9),
                                                          /*enforce_residual=*/true);
    out.eigenvalues = r.eigenvalues;
    out.eigenvectors = r.vectors;
  }
  out.fractions = detail::fractions_of(out.eigenvalues, out.trace);
  return out;
}

// Top-k eigenpairs of an explicit Hermitian matrix (rejects matrices that
// are not Hermitian within 1e-12 relative).
template <typename Scalar>
EigenModes<Scalar> hermitian_eigen(const CMatrix<Scalar>& mat, Index k) {
  if (mat.rows() != mat.cols()) throw InvalidInput("matrix must be square");
  const Index n = mat.rows();
  if (k < 1 || k > n) throw InvalidInput("mode count must lie in [1, N]");
  const Scalar magnitude = mat.cwiseAbs().maxCoeff();
  const Scalar asymmetry = (mat - mat.adjoint()).cwiseAbs().maxCoeff();
  if (asymmetry > Scalar(1e-12) * std::max(magnitude, std::numeric_limits<Scalar>::min()))
    throw InvalidInput("matrix is not Hermitian within 1e-12 relative tolerance");

  CMatrix<Scalar> sym = ((mat + mat.adjoint()) / Scalar(2)).eval();
  Eigen::SelfAdjointEigenSolver<CMatrix<Scalar>> es(sym);
  if (es.info() != Eigen::Success) throw NumericalFailure("Hermitian eigensolve failed");

  EigenModes<Scalar> out;
  out.trace = sym.trace().real();
  detail::take_descending<Scalar>(es, k, out.eigenvalues, out.eigenvectors);
  out.fractions = detail::fractions_of(out.eigenvalues, out.trace);
  return out;
}

template <typename Scalar>
EigenModes<Scalar> hermitian_eigen(const CrossSpectralMatrix<Scalar>& s, Index k) {
  EigenModes<Scalar> out = hermitian_eigen(s.mat, k);
  out.band_freq = s.band_freq;
  return out;
}

// Whether cone-of-influence filtering defaults on for this scale: edges
// matter most when few oscillations fit the record.
template <typename Scalar>
bool coi_filter_default(Index l, Scalar scale) {
  return static_cast<Scalar>(l) / scale < Scalar(50);
}

// Band cross-spectral matrix S_k = norm_constant * sum over retained time
// samples of w(t) w(t)^H, built explicitly (small site counts).
template <typename Scalar>
CrossSpectralMatrix<Scalar> wavelet_cross_spectral_matrix(
    const WaveletCoeffs<Scalar>& w, Index band,
    std::optional<bool> use_coi_only = std::nullopt) {
  if (band < 0 || band >= w.n_scales()) throw InvalidInput("band index out of range");
  const CMatrix<Scalar>& wk = w.coeffs[static_cast<std::size_t>(band)];
  const auto& coi = w.coi[static_cast<std::size_t>(band)];
  const bool filter = use_coi_only.value_or(coi_filter_default(w.length(), w.scales.scales[band]));

  std::vector<Index> cols;
  cols.reserve(static_cast<std::size_t>(w.length()));
  for (Index t = 0; t < w.length(); ++t)
    if (!filter || coi[static_cast<std::size_t>(t)]) cols.push_back(t);
  if (static_cast<Index>(cols.size()) < 8)
    throw InvalidInput("fewer than 8 time samples retained for the band estimate");

  CMatrix<Scalar> used(wk.rows(), static_cast<Index>(cols.size()));
  for (Index j = 0; j < used.cols(); ++j) used.col(j) = wk.col(cols[static_cast<std::size_t>(j)]);

  CrossSpectralMatrix<Scalar> s;
  s.band_freq = w.scales.frequencies[band];
  s.scale = w.scales.scales[band];
  s.estimator = SpectralEstimator::morlet;
  s.effective_samples = used.cols();
  s.norm_constant = Scalar(1) / static_cast<Scalar>(wk.rows());
  s.mat.noalias() = (used * used.adjoint()) * s.norm_constant;
  s.mat = ((s.mat + s.mat.adjoint()) / Scalar(2)).eval();
  return s;
}

// Per-mode series kappa(t) = (W^H u)(t) over the full time axis.
template <typename Scalar>
PCSeries<Scalar> spectral_pc_series(const WaveletCoeffs<Scalar>& w, const EigenModes<Scalar>& modes,
                                    Index mode) {
  if (mode < 0 || mode >= modes.n_modes()) throw InvalidInput("mode index out of range");
  Index band = 0;
  if (std::isfinite(modes.band_freq)) {
    band = w.scales.nearest_band(modes.band_freq);
  } else if (w.n_scales() != 1) {
    throw InvalidInput("modes carry no band frequency and coefficients hold several scales");
  }
  const CMatrix<Scalar>& wk = w.coeffs[static_cast<std::size_t>(band)];
  if (wk.rows() != modes.eigenvectors.rows())
    throw InvalidInput("eigenvector length does not match the site count");

  PCSeries<Scalar> out;
  out.values = wk.adjoint() * modes.eigenvectors.col(mode);
  out.source_mode = mode;
  out.band_freq = w.scales.frequencies[band];
  out.norm_constant = Scalar(1) / static_cast<Scalar>(wk.rows());
  return out;
}

// One band of the spectral decomposition: eigenmodes plus their series.
template <typename Scalar = double>
struct BandModes {
  Scalar frequency{0};
  Scalar scale{0};
  Index effective_samples{0};
  bool used_coi_only{false};
  EigenModes<Scalar> modes;
  CMatrix<Scalar> pc_series;  // one row per mode, full time axis
  std::vector<std::uint8_t> coi;
};

template <typename Scalar = double>
struct SpectralDecomposition {
  MorletParams<Scalar> params;
  ScaleSet<Scalar> scales;
  Scalar dt{1};
  std::vector<BandModes<Scalar>> bands;
};

// Full per-band pipeline: transform, filter, eigensolve, mode series.
// One band is processed at a time so site counts in the thousands stay
// within memory; the N x N matrix is never formed for large N.
template <typename Scalar>
SpectralDecomposition<Scalar> spectral_decomposition(
    const FieldSeries<Scalar>& fs, const ScaleSet<Scalar>& scales, Index k,
    const MorletParams<Scalar>& params = {}, std::optional<bool> use_coi_only = std::nullopt,
    Padding padding = Padding::edge) {
  check_field_series(fs);
  if (scales.n_scales() < 1) throw InvalidInput("scale set is empty");
  detail::check_cwt_scales(scales, fs.dt, fs.length(), params);

  const Index n = fs.n_sites();
  const Index l = fs.length();
  const CwtPlan<Scalar> plan =
      cwt_plan(fs.values, fs.dt, scales.scales[scales.n_scales() - 1], params, padding);

  SpectralDecomposition<Scalar> out;
  out.params = params;
  out.scales = scales;
  out.dt = fs.dt;
  out.bands.reserve(static_cast<std::size_t>(scales.n_scales()));

  for (Index b = 0; b < scales.n_scales(); ++b) {
    const Scalar nu = scales.scales[b];
    const CMatrix<Scalar> wk = cwt_band(plan, nu);
    BandModes<Scalar> band;
    band.frequency = scales.frequencies[b];
    band.scale = nu;
    band.coi = cone_of_influence(nu, fs.dt, l);
    band.used_coi_only = use_coi_only.value_or(coi_filter_default(l, nu));

    std::vector<Index> cols;
    cols.reserve(static_cast<std::size_t>(l));
    for (Index t = 0; t < l; ++t)
      if (!band.used_coi_only || band.coi[static_cast<std::size_t>(t)]) cols.push_back(t);
    if (static_cast<Index>(cols.size()) < 8)
      throw InvalidInput("fewer than 8 samples retained at scale nu=" +
                         std::to_string(static_cast<double>(nu)));

    const bool all_cols = static_cast<Index>(cols.size()) == l;
    CMatrix<Scalar> subset;
    if (!all_cols) {
      subset.resize(n, static_cast<Index>(cols.size()));
      for (Index j = 0; j < subset.cols(); ++j)
        subset.col(j) = wk.col(cols[static_cast<std::size_t>(j)]);
    }
    const CMatrix<Scalar>& used = all_cols ? wk : subset;
    band.effective_samples = used.cols();

    const Scalar norm_constant = Scalar(1) / static_cast<Scalar>(n);
    const Index k_band = std::min<Index>(k, std::min(n, used.cols()));
    band.modes = top_spectral_modes(used, norm_constant, k_band);
    band.modes.band_freq = band.frequency;

    band.pc_series.resize(k_band, l);
    for (Index i = 0; i < k_band; ++i)
      band.pc_series.row(i) = (wk.adjoint() * band.modes.eigenvectors.col(i)).transpose();

    out.bands.push_back(std::move(band));
  }
  return out;
}

// Explained-variance table: one row per band, fractions for modes 1..k.
template <typename Scalar = double>
struct VarianceSpectrum {
  Vector<Scalar> frequencies;
  Matrix<Scalar> fractions;  // n_bands x k
};

template <typename Scalar>
VarianceSpectrum<Scalar> explained_variance_spectrum(const FieldSeries<Scalar>& fs,
                                                     const ScaleSet<Scalar>& scales, Index k,
                                                     const MorletParams<Scalar>& params = {}) {
  const auto dec = spectral_decomposition(fs, scales, k, params);
  VarianceSpectrum<Scalar> out;
  out.frequencies.resize(static_cast<Index>(dec.bands.size()));
  out.fractions = Matrix<Scalar>::Zero(static_cast<Index>(dec.bands.size()), k);
  for (Index b = 0; b < out.frequencies.size(); ++b) {
    const auto& band = dec.bands[static_cast<std::size_t>(b)];
    out.frequencies[b] = band.frequency;
    for (Index i = 0; i < band.modes.n_modes() && i < k; ++i)
      out.fractions(b, i) = band.modes.fractions[i];
  }
  return out;
}

// Classical PCA of the raw series (no centering is applied here; feed
// anomalies if that is what the analysis calls for).
template <typename Scalar = double>
struct ClassicalPca {
  EigenModes<Scalar> modes;  // real vectors stored with zero imaginary part
  Matrix<Scalar> pc_series;  // one row per mode: kappa_i = X^T u_i
};

template <typename Scalar>
ClassicalPca<Scalar> classical_pca(const FieldSeries<Scalar>& fs, Index k,
                                   detail::TopkMethod method = detail::TopkMethod::automatic) {
  check_field_series(fs);
  const Index n = fs.n_sites();
  const Index l = fs.length();
  if (k < 1 || k > std::min(n, l)) throw InvalidInput("mode count must lie in [1, min(N, L)]");

  const Scalar norm_constant = Scalar(1) / static_cast<Scalar>(n);
  ClassicalPca<Scalar> out;
  out.modes.trace = norm_constant * fs.values.squaredNorm();

  auto method_used = method;
  if (method == detail::TopkMethod::automatic)
    method_used = n <= 1024 ? detail::TopkMethod::dense : detail::TopkMethod::subspace;

  Matrix<Scalar> vectors;
  if (method_used == detail::TopkMethod::dense) {
    const CovarianceMatrix<Scalar> c = covariance_matrix(fs);
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(c.mat);
    if (es.info() != Eigen::Success) throw NumericalFailure("covariance eigensolve failed");
    detail::take_descending<Scalar>(es, k, out.modes.eigenvalues, vectors);
  } else {
    // Closely spaced bulk eigenvalues stabilize in Ritz-sum terms long
    // before per-vector residuals tighten, so residuals are reported,
    // not enforced, on this path.
    const auto r = detail::subspace_topk<Matrix<Scalar>>(
        fs.values, norm_constant, k, /*block=*/std::max<Index>(2 * k + 8, k + 16),
        /*max_iters=*/64, /*resid_tol=*/Scalar(1e-9), /*enforce_residual=*/false);
    out.modes.eigenvalues = r.eigenvalues;
    vectors = r.vectors;
  }
  out.modes.eigenvectors = vectors.template cast<std::complex<Scalar>>();
  out.modes.fractions = detail::fractions_of(out.modes.eigenvalues, out.modes.trace);
  out.pc_series.noalias() = vectors.transpose() * fs.values;
  return out;
}

enum class TaperWindow { boxcar, daniell, hann };

template <typename Scalar = double>
struct PeriodogramConfig {
  Index segments{1};
  Scalar overlap{0};
  TaperWindow window{TaperWindow::boxcar};
  Index freqs_per_band{1};
};

// Segment-averaged cross-spectral matrix over the DFT bins inside
// [f_lo, f_hi] nearest the band center (at most freqs_per_band of them).
// The Daniell choice is the boxcar taper — the in-band bin average that
// is applied anyway is exactly the Daniell smoother.
template <typename Scalar>
CrossSpectralMatrix<Scalar> periodogram_cross_spectral_matrix(const FieldSeries<Scalar>& fs,
                                                              const PeriodogramConfig<Scalar>& cfg,
                                                              Scalar f_lo, Scalar f_hi) {
  check_field_series(fs);
  if (cfg.segments < 1) throw InvalidInput("segment count must be >= 1");
  if (cfg.freqs_per_band < 1) throw InvalidInput("freqs_per_band must be >= 1");
  if (!(cfg.overlap >= Scalar(0)) || !(cfg.overlap < Scalar(1)))
    throw InvalidInput("overlap must lie in [0, 1)");
  const Scalar nyquist = Scalar(0.5) / fs.dt;
  if (!(f_lo >= Scalar(0)) || !(f_hi > f_lo) || f_hi > nyquist * (Scalar(1) + Scalar(1e-12)))
    throw InvalidInput("band must satisfy 0 <= f_lo < f_hi <= Nyquist");

  const Index l = fs.length();
  const Scalar denom = Scalar(1) + static_cast<Scalar>(cfg.segments - 1) * (Scalar(1) - cfg.overlap);
  const Index seg_len = static_cast<Index>(std::floor(static_cast<Scalar>(l) / denom));
  if (seg_len < 2 || seg_len < 2 * cfg.freqs_per_band)
    throw InvalidInput("segment length must be >= 2*freqs_per_band; record too short");
  const Scalar step_real = static_cast<Scalar>(seg_len) * (Scalar(1) - cfg.overlap);
  const Index step = static_cast<Index>(std::llround(static_cast<double>(step_real)));
  if (std::abs(step_real - static_cast<Scalar>(step)) > Scalar(1e-9) * static_cast<Scalar>(seg_len))
    throw InvalidInput("overlap times segment length must be integral");

  // taper
  Vector<Scalar> taper(seg_len);
  if (cfg.window == TaperWindow::hann) {
    for (Index i = 0; i < seg_len; ++i)
      taper[i] = Scalar(0.5) * (Scalar(1) - std::cos(Scalar(2) * std::numbers::pi_v<Scalar> *
                                                     static_cast<Scalar>(i) /
                                                     static_cast<Scalar>(seg_len - 1)));
  } else {
    taper.setOnes();
  }
  const Scalar taper_power = taper.squaredNorm();

  // candidate bins inside the band, nearest the center first
  const Scalar center = (f_lo + f_hi) / Scalar(2);
  std::vector<Index> bins;
  for (Index j = 0; j <= seg_len / 2; ++j) {
    const Scalar f = static_cast<Scalar>(j) / (static_cast<Scalar>(seg_len) * fs.dt);
    if (f >= f_lo && f <= f_hi) bins.push_back(j);
  }
  if (bins.empty()) throw InvalidInput("band interval contains no DFT frequencies");
  std::stable_sort(bins.begin(), bins.end(), [&](Index a, Index b2) {
    const Scalar fa = static_cast<Scalar>(a) / (static_cast<Scalar>(seg_len) * fs.dt);
    const Scalar fb = static_cast<Scalar>(b2) / (static_cast<Scalar>(seg_len) * fs.dt);
    return std::abs(fa - center) < std::abs(fb - center);
  });
  if (static_cast<Index>(bins.size()) > cfg.freqs_per_band)
    bins.resize(static_cast<std::size_t>(cfg.freqs_per_band));

  const Index n = fs.n_sites();
  CrossSpectralMatrix<Scalar> s;
  s.band_freq = center;
  s.scale = 0;
  s.estimator = cfg.overlap > Scalar(0) ? SpectralEstimator::welch : SpectralEstimator::bartlett;
  s.effective_samples = cfg.segments * static_cast<Index>(bins.size());
  s.norm_constant = Scalar(1) / static_cast<Scalar>(n);
  s.mat = CMatrix<Scalar>::Zero(n, n);

  Eigen::FFT<Scalar> fft;
  CMatrix<Scalar> spectra(n, seg_len);
  Vector<Scalar> seg(seg_len);
  CVector<Scalar> shat(seg_len);
  for (Index segment = 0; segment < cfg.segments; ++segment) {
    const Index start = segment * step;
    for (Index i = 0; i < n; ++i) {
      seg = fs.values.row(i).segment(start, seg_len).transpose().cwiseProduct(taper);
      fft.fwd(shat, seg);
      spectra.row(i) = shat.transpose();
    }
    for (Index bin : bins) {
      const CVector<Scalar> xhat = spectra.col(bin);
      s.mat.noalias() += xhat * xhat.adjoint();
    }
  }
  s.mat *= s.norm_constant /
           (static_cast<Scalar>(s.effective_samples) * std::max(taper_power, Scalar(1e-300)));
  s.mat = ((s.mat + s.mat.adjoint()) / Scalar(2)).eval();
  return s;
}

// Phase-randomized surrogates: per site, the DFT magnitudes are kept and
// the phases redrawn independently (DC and Nyquist stay untouched), so
// each row's periodogram is preserved while cross-site phase relations
// are destroyed.
template <typename Scalar>
std::vector<FieldSeries<Scalar>> surrogate_baseline(const FieldSeries<Scalar>& fs,
                                                    std::uint64_t seed, Index reps) {
  check_field_series(fs);
  if (reps < 1) throw InvalidInput("surrogate count must be >= 1");
  const Index n = fs.n_sites();
  const Index l = fs.length();

  Eigen::FFT<Scalar> fft;
  CMatrix<Scalar> spectra(n, l);
  CVector<Scalar> hat(l);
  Vector<Scalar> row(l);
  for (Index i = 0; i < n; ++i) {
    row = fs.values.row(i).transpose();
    fft.fwd(hat, row);
    spectra.row(i) = hat.transpose();
  }

  std::vector<FieldSeries<Scalar>> out;
  out.reserve(static_cast<std::size_t>(reps));
  const Index half = l / 2;
  for (Index r = 0; r < reps; ++r) {
    FieldSeries<Scalar> surr;
    surr.grid = fs.grid;
    surr.dt = fs.dt;
    surr.t0 = fs.t0;
    surr.units = fs.units;
    surr.values.resize(n, l);
    for (Index i = 0; i < n; ++i) {
      std::mt19937_64 rng(split_seed(split_seed(seed, static_cast<std::uint64_t>(r)),
                                     static_cast<std::uint64_t>(i)));
      std::uniform_real_distribution<Scalar> unif(Scalar(0), Scalar(2) * std::numbers::pi_v<Scalar>);
      CVector<Scalar> randomized(l);
      randomized[0] = spectra(i, 0);
      for (Index j = 1; j < (l + 1) / 2; ++j) {
        const Scalar mag = std::abs(spectra(i, j));
        const Scalar phi = unif(rng);
        randomized[j] = std::complex<Scalar>(mag * std::cos(phi), mag * std::sin(phi));
        randomized[l - j] = std::conj(randomized[j]);
      }
      if (l % 2 == 0) randomized[half] = spectra(i, half);
      fft.inv(row, randomized);
      surr.values.row(i) = row.transpose();
    }
    out.push_back(std::move(surr));
  }
  return out;
}

}  // namespace rspca
