#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gingr/errors.hpp"
#include "gingr/geometry.hpp"
#include "gingr/kernels.hpp"

namespace gingr {

/// n x d field -> point-major vector (i * d + c).
inline Vector flatten(const Matrix& field) {
  Vector out(field.size());
  for (Eigen::Index i = 0; i < field.rows(); ++i)
    for (Eigen::Index c = 0; c < field.cols(); ++c) out(i * field.cols() + c) = field(i, c);
  return out;
}

inline Matrix unflatten(const Vector& v, int d) {
  const Eigen::Index n = v.size() / d;
  Matrix out(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c) out(i, c) = v(i * d + c);
  return out;
}

/// Discretized Gaussian process morphable model
///   u[alpha](x) = mu(x) + sum_i alpha_i sqrt(lambda_i) phi_i(x).
/// The basis is stored as an (n d) x r matrix in point-major order.
struct LowRankGp {
  TriangleMesh reference;
  Matrix mean;
  Vector eigenvalues;
  Matrix basis;
  bool orthonormal = true;   // false for row-restricted models
  bool rank_reduced = false; // fewer positive eigenvalues than requested

  int size() const { return reference.size(); }
  int dim() const { return reference.dim(); }
  int rank() const { return static_cast<int>(eigenvalues.size()); }

  /// Basis columns scaled by sqrt(lambda).
  Matrix scaled_basis() const { return basis * eigenvalues.cwiseMax(0.0).cwiseSqrt().asDiagonal(); }

  /// d x r block of the scaled basis at reference vertex i.
  Matrix scaled_rows(int i) const {
    return basis.middleRows(static_cast<Eigen::Index>(i) * dim(), dim()) *
           eigenvalues.cwiseMax(0.0).cwiseSqrt().asDiagonal();
  }
};

enum class LowRankMethod { DenseEig, Nystrom };

struct LowRankOptions {
  LowRankMethod method = LowRankMethod::DenseEig;
  int landmarks = 0; // Nystrom only
  double psd_tolerance = 1e-8;
};

namespace detail {

constexpr double kEigenFloor = 1e-12;

struct Spectrum {
  Vector values;  // descending
  Matrix vectors; // columns
};

inline Spectrum descending_eigen(const Matrix& symmetric, double psd_tolerance, const char* who) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (symmetric + symmetric.transpose()));
  require(es.info() == Eigen::Success, ErrorKind::Numerical, std::string(who) + ": eigendecomposition failed");
  const Eigen::Index n = es.eigenvalues().size();
  Spectrum s{es.eigenvalues().reverse(), es.eigenvectors().rowwise().reverse()};
  const double top = std::max(s.values(0), 0.0);
  require(s.values(n - 1) >= -psd_tolerance * top, ErrorKind::Numerical,
          std::string(who) + ": kernel matrix is not positive semi-definite (min eigenvalue " +
              std::to_string(s.values(n - 1)) + ", max " + std::to_string(top) + ")");
  return s;
}

/// Scalar spectrum (n) -> block spectrum (n d): each eigenpair repeats d times.
inline Spectrum expand_scalar_spectrum(const Spectrum& s, int d) {
  const Eigen::Index n = s.vectors.rows();
  const Eigen::Index k = s.values.size();
  Spectrum out{Vector(k * d), Matrix::Zero(n * d, k * d)};
  for (Eigen::Index j = 0; j < k; ++j) {
    for (int c = 0; c < d; ++c) {
      out.values(j * d + c) = s.values(j);
      for (Eigen::Index i = 0; i < n; ++i) out.vectors(i * d + c, j * d + c) = s.vectors(i, j);
    }
  }
  return out;
}

inline Spectrum nystrom_spectrum(const Matrix& k_nm, const Matrix& k_mm, double psd_tolerance) {
  const Spectrum mm = descending_eigen(k_mm, psd_tolerance, "nystrom landmark kernel");
  const double top = std::max(mm.values(0), 0.0);
  Eigen::Index keep = 0;
  while (keep < mm.values.size() && mm.values(keep) > kEigenFloor * top) ++keep;
  require(keep > 0, ErrorKind::Numerical, "nystrom: landmark kernel matrix is zero");
  const Matrix b = k_nm * mm.vectors.leftCols(keep) * mm.values.head(keep).cwiseSqrt().cwiseInverse().asDiagonal();
  // K ~ B B^T; its eigenpairs follow from the small matrix B^T B
  const Spectrum small = descending_eigen(b.transpose() * b, psd_tolerance, "nystrom");
  Eigen::Index pos = 0;
  while (pos < small.values.size() && small.values(pos) > kEigenFloor * std::max(small.values(0), 0.0)) ++pos;
  Spectrum out{small.values.head(pos), b * small.vectors.leftCols(pos) *
                                           small.values.head(pos).cwiseSqrt().cwiseInverse().asDiagonal()};
  return out;
}

}  // namespace detail

/// Eigen-expansion of the kernel on the reference vertices, truncated to
/// `rank` modes. Eigenvalues are clipped at zero; if fewer than `rank` are
/// positive the model is returned with the smaller rank and `rank_reduced`.
inline LowRankGp build_low_rank(const Kernel& kernel, const Matrix& mean, const TriangleMesh& reference, int rank,
                                const LowRankOptions& options = {}) {
  const int n = reference.size();
  const int d = reference.dim();
  require(kernel.valid(), ErrorKind::Validation, "build_low_rank: invalid kernel");
  require(kernel.dim() == d, ErrorKind::Validation, "build_low_rank: kernel dimension does not match reference");
  require(rank >= 1, ErrorKind::Parameter, "build_low_rank: rank must be at least 1");
  require(rank <= n * d, ErrorKind::Parameter, "build_low_rank: rank exceeds n d");
  require(mean.rows() == n && mean.cols() == d, ErrorKind::Validation, "build_low_rank: mean field has wrong shape");
  require(mean.allFinite(), ErrorKind::Validation, "build_low_rank: mean field is not finite");

  const Sites sites = Sites::reference(reference.points());
  detail::Spectrum spec;
  if (options.method == LowRankMethod::DenseEig) {
    if (kernel.is_scalar()) {
      spec = detail::expand_scalar_spectrum(
          detail::descending_eigen(gram(kernel, sites).values, options.psd_tolerance, "build_low_rank"), d);
    } else {
      spec = detail::descending_eigen(gram(kernel, sites).values, options.psd_tolerance, "build_low_rank");
    }
  } else {
    const int m = options.landmarks;
    require(m >= 1 && m <= n, ErrorKind::Parameter, "nystrom: landmark count must be in [1, n]");
    std::vector<int> picked = farthest_point_sampling(reference.points(), m);
    std::sort(picked.begin(), picked.end());
    const Sites land = Sites::reference_subset(reference.points(), picked);
    if (kernel.is_scalar()) {
      require(rank <= m * d, ErrorKind::Parameter, "nystrom: rank exceeds landmark capacity");
      spec = detail::expand_scalar_spectrum(
          detail::nystrom_spectrum(kernel.scalar_gram(sites, land), gram(kernel, land).values, options.psd_tolerance),
          d);
    } else {
      require(rank <= m * d, ErrorKind::Parameter, "nystrom: rank exceeds landmark capacity");
      spec = detail::nystrom_spectrum(kernel.block_gram(sites, land), gram(kernel, land).values,
                                      options.psd_tolerance);
    }
  }

  const double top = std::max(spec.values(0), 0.0);
  int positive = 0;
  while (positive < spec.values.size() && spec.values(positive) > detail::kEigenFloor * top) ++positive;
  require(positive > 0, ErrorKind::Numerical, "build_low_rank: kernel has no positive eigenvalue");

  LowRankGp gp{reference, mean, Vector(), Matrix(), true, false};
  const int r = std::min(rank, positive);
  gp.rank_reduced = r < rank;
  gp.eigenvalues = spec.values.head(r).cwiseMax(0.0);
  gp.basis = spec.vectors.leftCols(r);
  return gp;
}

/// Deformation field mu + Phi diag(sqrt(lambda)) alpha.
inline DeformationField instance(const LowRankGp& gp, const Vector& alpha) {
  require(alpha.size() == gp.rank(), ErrorKind::Validation,
          "instance: coefficient vector has length " + std::to_string(alpha.size()) + ", model rank is " +
              std::to_string(gp.rank()));
  return gp.mean + unflatten(gp.basis * (gp.eigenvalues.cwiseMax(0.0).cwiseSqrt().cwiseProduct(alpha)), gp.dim());
}

/// Least-squares coefficients of a field. Modes with negligible eigenvalue
/// get zero.
inline Vector project(const LowRankGp& gp, const DeformationField& field) {
  require(field.rows() == gp.size() && field.cols() == gp.dim(), ErrorKind::Validation,
          "project: field does not match the model reference");
  const Vector residual = flatten(field - gp.mean);
  const double top = gp.rank() > 0 ? gp.eigenvalues(0) : 0.0;
  std::vector<int> active;
  for (int i = 0; i < gp.rank(); ++i)
    if (gp.eigenvalues(i) >= detail::kEigenFloor * top && gp.eigenvalues(i) > 0.0) active.push_back(i);
  Vector alpha = Vector::Zero(gp.rank());
  if (active.empty()) return alpha;
  if (gp.orthonormal) {
    for (int i : active) alpha(i) = gp.basis.col(i).dot(residual) / std::sqrt(gp.eigenvalues(i));
    return alpha;
  }
  Matrix a(gp.basis.rows(), static_cast<Eigen::Index>(active.size()));
  for (std::size_t k = 0; k < active.size(); ++k)
    a.col(static_cast<Eigen::Index>(k)) = gp.basis.col(active[k]) * std::sqrt(gp.eigenvalues(active[k]));
  const Vector sol = a.completeOrthogonalDecomposition().solve(residual);
  for (std::size_t k = 0; k < active.size(); ++k) alpha(active[k]) = sol(static_cast<Eigen::Index>(k));
  return alpha;
}

/// The same process read only at `indices` (shares coefficients with `gp`).
inline LowRankGp restrict_to(const LowRankGp& gp, const std::vector<int>& indices,
                             const std::vector<Triangle>& triangles = {}) {
  const int d = gp.dim();
  Matrix basis(static_cast<Eigen::Index>(indices.size()) * d, gp.rank());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    require(indices[k] >= 0 && indices[k] < gp.size(), ErrorKind::Validation,
            "restrict: index " + std::to_string(indices[k]) + " out of range");
    basis.middleRows(static_cast<Eigen::Index>(k) * d, d) = gp.basis.middleRows(static_cast<Eigen::Index>(indices[k]) * d, d);
  }
  return LowRankGp{TriangleMesh(PointSet(select_rows(gp.reference.points(), indices)), triangles),
                   select_rows(gp.mean, indices), gp.eigenvalues, std::move(basis), false, gp.rank_reduced};
}

/// log N(alpha; 0, I).
inline double log_prior(const Vector& alpha) {
  return -0.5 * alpha.squaredNorm() - 0.5 * static_cast<double>(alpha.size()) * std::log(2.0 * std::numbers::pi);
}

/// Per-vertex prior marginal variance sum_i lambda_i |phi_i(x)|^2.
inline Vector marginal_variance(const LowRankGp& gp) {
  const Matrix sb = gp.scaled_basis();
  Vector out = Vector::Zero(gp.size());
  for (int i = 0; i < gp.size(); ++i) out(i) = sb.middleRows(static_cast<Eigen::Index>(i) * gp.dim(), gp.dim()).squaredNorm();
  return out;
}

// ---------------------------------------------------------------------------
// Regression

struct Observation {
  int index = 0;
  Vector displacement;
  double variance = 1.0;
};

/// Global part fitted alongside the low-rank process by generalized least
/// squares. It covers directions the kernel cannot express (the constant
/// null space of the inverse Laplacian, the global affine part of the
/// affine Laplacian kernel).
enum class TrendBasis { None, Translation, Affine };

inline int trend_size(TrendBasis t, int d) {
  switch (t) {
    case TrendBasis::None: return 0;
    case TrendBasis::Translation: return d;
    case TrendBasis::Affine: return d * (d + 1);
  }
  return 0;
}

/// d x p trend design block at a reference position.
inline Matrix trend_rows(TrendBasis t, const Vector& x) {
  const int d = static_cast<int>(x.size());
  Matrix h = Matrix::Zero(d, trend_size(t, d));
  if (t == TrendBasis::Translation) {
    h.setIdentity();
  } else if (t == TrendBasis::Affine) {
    for (int c = 0; c < d; ++c) {
      h.block(c, c * (d + 1), 1, d) = x.transpose();
      h(c, c * (d + 1) + d) = 1.0;
    }
  }
  return h;
}

/// Trend displacement at every reference vertex.
inline DeformationField trend_field(TrendBasis t, const Vector& beta, const Matrix& reference) {
  const int d = static_cast<int>(reference.cols());
  Matrix out = Matrix::Zero(reference.rows(), d);
  if (t == TrendBasis::None || beta.size() == 0) return out;
  for (Eigen::Index i = 0; i < reference.rows(); ++i)
    out.row(i) = (trend_rows(t, reference.row(i).transpose()) * beta).transpose();
  return out;
}

/// Gaussian posterior over the coefficients, plus the fitted trend.
struct PosteriorGp {
  Vector mean;       // alpha~
  Matrix covariance; // Sigma~
  Matrix precision;  // Sigma~^{-1} = Phi^T D^{-1} Phi + I
  TrendBasis trend = TrendBasis::None;
  Vector trend_coefficients;
};

inline PosteriorGp prior_posterior(const LowRankGp& gp) {
  const int r = gp.rank();
  return {Vector::Zero(r), Matrix::Identity(r, r), Matrix::Identity(r, r), TrendBasis::None, Vector()};
}

/// Closed-form regression in coefficient space:
///   Sigma~ = (Phi^T D^{-1} Phi + I)^{-1},  alpha~ = Sigma~ Phi^T D^{-1} (U^ - mu - H beta),
/// with beta the generalized least-squares trend estimate.
inline PosteriorGp regress(const LowRankGp& gp, const std::vector<Observation>& observations,
                           TrendBasis trend = TrendBasis::None) {
  require(!observations.empty(), ErrorKind::Validation, "regress: no observations");
  const int d = gp.dim();
  const int r = gp.rank();
  const auto k = static_cast<Eigen::Index>(observations.size());
  const Vector sqrt_lambda = gp.eigenvalues.cwiseMax(0.0).cwiseSqrt();

  Matrix phi(k * d, r);
  Vector y(k * d);
  Vector w(k * d);  // D^{-1}
  for (Eigen::Index o = 0; o < k; ++o) {
    const Observation& ob = observations[static_cast<std::size_t>(o)];
    require(ob.index >= 0 && ob.index < gp.size(), ErrorKind::Validation,
            "regress: observation index " + std::to_string(ob.index) + " out of range");
    require(ob.displacement.size() == d && ob.displacement.allFinite(), ErrorKind::Validation,
            "regress: observation displacement must be a finite " + std::to_string(d) + "-vector");
    require(ob.variance > 0.0 && std::isfinite(ob.variance), ErrorKind::Parameter,
            "regress: observation variance must be positive, got " + std::to_string(ob.variance));
    phi.middleRows(o * d, d) = gp.basis.middleRows(static_cast<Eigen::Index>(ob.index) * d, d) * sqrt_lambda.asDiagonal();
    y.segment(o * d, d) = ob.displacement - gp.mean.row(ob.index).transpose();
    w.segment(o * d, d).setConstant(1.0 / ob.variance);
  }

  const Matrix wphi = w.asDiagonal() * phi;
  PosteriorGp post;
  post.precision = phi.transpose() * wphi + Matrix::Identity(r, r);
  post.precision = 0.5 * (post.precision + post.precision.transpose()).eval();
  Eigen::LLT<Matrix> llt(post.precision);
  require(llt.info() == Eigen::Success, ErrorKind::Numerical, "regress: posterior precision is not positive definite");
  post.covariance = llt.solve(Matrix::Identity(r, r));
  post.covariance = 0.5 * (post.covariance + post.covariance.transpose()).eval();

  post.trend = trend;
  const int p = trend_size(trend, d);
  if (p > 0) {
    Matrix h(k * d, p);
    for (Eigen::Index o = 0; o < k; ++o)
      h.middleRows(o * d, d) =
          trend_rows(trend, gp.reference.points().row(observations[static_cast<std::size_t>(o)].index).transpose());
    // A^{-1} = D^{-1} - D^{-1} Phi Sigma~ Phi^T D^{-1}
    auto apply_ainv = [&](const Matrix& m) -> Matrix {
      const Matrix wm = w.asDiagonal() * m;
      return wm - wphi * llt.solve(wphi.transpose() * m);
    };
    const Matrix ainv_h = apply_ainv(h);
    const Matrix normal = h.transpose() * ainv_h;
    Eigen::ColPivHouseholderQR<Matrix> qr(normal);
    qr.setThreshold(1e-12);
    require(qr.rank() == p, ErrorKind::Alignment,
            "regress: observations do not determine the global trend (degenerate configuration)");
    post.trend_coefficients = qr.solve(ainv_h.transpose() * y);
    y -= h * post.trend_coefficients;
  }
  post.mean = llt.solve(wphi.transpose() * y);
  return post;
}

/// Posterior mean deformation at every reference vertex.
inline DeformationField posterior_mean_field(const LowRankGp& gp, const PosteriorGp& post) {
  return instance(gp, post.mean) + trend_field(post.trend, post.trend_coefficients, gp.reference.points());
}

/// Symmetric square root factor S with S S^T = Sigma~ (negative eigenvalues
/// clipped).
inline Matrix covariance_factor(const Matrix& covariance) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (covariance + covariance.transpose()));
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

/// alpha ~ N(alpha~, Sigma~).
template <class Rng>
Vector sample(const PosteriorGp& post, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector z(post.mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
  return post.mean + covariance_factor(post.covariance) * z;
}

inline Vector sample(const PosteriorGp& post, unsigned long long seed) {
  std::mt19937_64 rng(seed);
  return sample(post, rng);
}

/// log N(alpha; alpha~, Sigma~), evaluated through the stored precision.
inline double log_density(const PosteriorGp& post, const Vector& alpha) {
  Eigen::LLT<Matrix> llt(post.precision);
  require(llt.info() == Eigen::Success, ErrorKind::Numerical, "log_density: precision not positive definite");
  const Vector diff = alpha - post.mean;
  const double logdet_precision = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * diff.dot(post.precision * diff) + 0.5 * logdet_precision -
         0.5 * static_cast<double>(alpha.size()) * std::log(2.0 * std::numbers::pi);
}

/// Per-vertex posterior variance (trace of the d x d marginal covariance).
inline Vector posterior_variance(const LowRankGp& gp, const PosteriorGp& post) {
  const Matrix factor = covariance_factor(post.covariance);
  Vector out(gp.size());
  for (int i = 0; i < gp.size(); ++i) out(i) = (gp.scaled_rows(i) * factor).squaredNorm();
  return out;
}

/// Regresses a field known at `coarse_indices` into the full model and
/// returns the posterior mean everywhere. An empty index set gives the prior
/// mean.
inline DeformationField interpolate_to(const LowRankGp& gp_full, const std::vector<int>& coarse_indices,
                                       const DeformationField& coarse_field, double noise = 1e-12,
                                       TrendBasis trend = TrendBasis::None) {
  if (coarse_indices.empty()) return gp_full.mean;
  require(coarse_field.rows() == static_cast<Eigen::Index>(coarse_indices.size()) && coarse_field.cols() == gp_full.dim(),
          ErrorKind::Validation, "interpolate_to: coarse field does not match the index map");
  std::vector<Observation> obs;
  obs.reserve(coarse_indices.size());
  for (std::size_t k = 0; k < coarse_indices.size(); ++k) {
    const int idx = coarse_indices[k];
    require(idx >= 0 && idx < gp_full.size(), ErrorKind::Validation,
            "interpolate_to: index " + std::to_string(idx) + " out of range");
    obs.push_back({idx, coarse_field.row(static_cast<Eigen::Index>(k)).transpose(), noise});
  }
  return posterior_mean_field(gp_full, regress(gp_full, obs, trend));
}

}  // namespace gingr
