#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>

#include "gingr/gp_io.hpp"
#include "gingr/gpmm.hpp"
#include "gingr/kernels.hpp"
#include "gingr/synthetic.hpp"

using namespace gingr;

namespace {

Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = g(rng);
  return m;
}

Kernel white_noise(int n, int d) { return matrix_kernel(Matrix::Identity(n, n), d, MatrixLayout::Scalar, "identity"); }

LowRankGp sphere_model(int rank, double beta = 0.5, int level = 1) {
  const TriangleMesh m = icosphere(level);
  return build_low_rank(gaussian_kernel(beta), Matrix::Zero(m.size(), 3), m, rank);
}

}  // namespace

TEST(BuildLowRank, WhiteNoiseHasUnitSpectrum) {
  const TriangleMesh m = icosphere(0);
  const int n = m.size();
  const LowRankGp gp = build_low_rank(white_noise(n, 3), Matrix::Zero(n, 3), m, 3 * n);
  EXPECT_EQ(gp.rank(), 3 * n);
  EXPECT_NEAR((gp.eigenvalues.array() - 1.0).abs().maxCoeff(), 0.0, 1e-12);
  EXPECT_NEAR((gp.basis.transpose() * gp.basis - Matrix::Identity(3 * n, 3 * n)).cwiseAbs().maxCoeff(), 0.0, 1e-12);
}

TEST(BuildLowRank, SpectrumInvariants) {
  const LowRankGp gp = sphere_model(60);
  for (int i = 1; i < gp.rank(); ++i) EXPECT_LE(gp.eigenvalues(i), gp.eigenvalues(i - 1));
  EXPECT_GE(gp.eigenvalues.minCoeff(), 0.0);
  EXPECT_NEAR((gp.basis.transpose() * gp.basis - Matrix::Identity(gp.rank(), gp.rank())).cwiseAbs().maxCoeff(), 0.0,
              1e-6);
  EXPECT_LE(gp.eigenvalues.sum(), static_cast<double>(gp.size() * 3));
}

TEST(BuildLowRank, TruncationErrorMatchesTraceDeficit) {
  const TriangleMesh m = icosphere(1);
  const int n = m.size();
  const Kernel k = gaussian_kernel(0.4);
  const LowRankGp full = build_low_rank(k, Matrix::Zero(n, 3), m, 3 * n);
  // full rank carries the whole trace
  EXPECT_NEAR(full.eigenvalues.sum(), 3.0 * n, 1e-6);
  const int r = 30;
  const LowRankGp part = build_low_rank(k, Matrix::Zero(n, 3), m, r);
  Matrix dense = Matrix::Zero(3 * n, 3 * n);
  const Matrix s = gram(k, Sites::reference(m.points())).values;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) dense.block(3 * i, 3 * j, 3, 3) = s(i, j) * Matrix::Identity(3, 3);
  const Matrix approx = part.scaled_basis() * part.scaled_basis().transpose();
  EXPECT_NEAR((dense - approx).trace(), full.eigenvalues.tail(3 * n - r).sum(), 1e-8);
}

TEST(BuildLowRank, NystromAtFullLandmarksIsExact) {
  const TriangleMesh m = icosphere(1);
  const int n = m.size();
  const Kernel k = gaussian_kernel(0.6);
  const LowRankGp dense = build_low_rank(k, Matrix::Zero(n, 3), m, 40);
  const LowRankGp nys = build_low_rank(k, Matrix::Zero(n, 3), m, 40, {LowRankMethod::Nystrom, n});
  EXPECT_NEAR((dense.eigenvalues - nys.eigenvalues).cwiseAbs().maxCoeff(), 0.0, 1e-6);
}

TEST(BuildLowRank, ReducedRankIsFlagged) {
  const TriangleMesh m = icosphere(0);
  std::mt19937_64 rng(1);
  std::vector<DeformationField> fields;
  for (int l = 0; l < 3; ++l) fields.push_back(random_matrix(rng, m.size(), 3));
  const LowRankGp gp = build_low_rank(statistical_kernel(fields), Matrix::Zero(m.size(), 3), m, 10);
  EXPECT_TRUE(gp.rank_reduced);
  EXPECT_EQ(gp.rank(), 2);
}

TEST(BuildLowRank, RejectsBadRank) {
  const TriangleMesh m = icosphere(0);
  EXPECT_THROW(build_low_rank(gaussian_kernel(1.0), Matrix::Zero(m.size(), 3), m, 0), Error);
  EXPECT_THROW(build_low_rank(gaussian_kernel(1.0), Matrix::Zero(m.size(), 3), m, 3 * m.size() + 1), Error);
}

TEST(BuildLowRank, NonPsdKernelIsRejected) {
  const TriangleMesh m = icosphere(0);
  Matrix bad = Matrix::Identity(m.size(), m.size());
  bad(0, 0) = -1.0;
  try {
    build_low_rank(matrix_kernel(bad, 3, MatrixLayout::Scalar), Matrix::Zero(m.size(), 3), m, 5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Numerical);
  }
}

TEST(Instance, ZeroUnitAndLinearity) {
  std::mt19937_64 rng(2);
  LowRankGp gp = sphere_model(20);
  gp.mean = random_matrix(rng, gp.size(), 3, 0.1);
  EXPECT_EQ(instance(gp, Vector::Zero(20)), gp.mean);
  const Vector e3 = Vector::Unit(20, 3);
  EXPECT_NEAR((instance(gp, e3) - gp.mean - std::sqrt(gp.eigenvalues(3)) * unflatten(gp.basis.col(3), 3))
                  .cwiseAbs()
                  .maxCoeff(),
              0.0, 1e-14);
  const Vector a = random_matrix(rng, 20, 1), b = random_matrix(rng, 20, 1);
  EXPECT_NEAR((instance(gp, a + b) - (instance(gp, a) + instance(gp, b) - gp.mean)).cwiseAbs().maxCoeff(), 0.0,
              1e-13);
  EXPECT_THROW(instance(gp, Vector::Zero(19)), Error);
}

TEST(Project, RoundTrips) {
  std::mt19937_64 rng(3);
  LowRankGp gp = sphere_model(25);
  gp.mean = random_matrix(rng, gp.size(), 3, 0.1);
  for (int t = 0; t < 10; ++t) {
    const Vector a = random_matrix(rng, 25, 1);
    EXPECT_NEAR((project(gp, instance(gp, a)) - a).cwiseAbs().maxCoeff(), 0.0, 1e-8);
  }
  EXPECT_NEAR(project(gp, gp.mean).norm(), 0.0, 1e-14);
  // instance o project is the identity on the span
  const Vector a = random_matrix(rng, 25, 1);
  const Matrix f = instance(gp, a);
  EXPECT_NEAR((instance(gp, project(gp, f)) - f).cwiseAbs().maxCoeff(), 0.0, 1e-10);
}

TEST(Project, OrthogonalFieldGivesZero) {
  std::mt19937_64 rng(4);
  const LowRankGp gp = sphere_model(25);
  Vector v = random_matrix(rng, gp.size() * 3, 1);
  v -= gp.basis * (gp.basis.transpose() * v);  // Gram-Schmidt residual
  EXPECT_NEAR(project(gp, unflatten(v, 3)).cwiseAbs().maxCoeff(), 0.0, 1e-10);
}

TEST(Regress, NoiselessInterpolationRecoversCoefficients) {
  std::mt19937_64 rng(5);
  const LowRankGp gp = sphere_model(12);
  const Vector truth = random_matrix(rng, 12, 1);
  const Matrix field = instance(gp, truth);
  std::vector<Observation> obs;
  for (int i = 0; i < gp.size(); i += 3) obs.push_back({i, field.row(i).transpose(), 1e-12});
  ASSERT_GE(static_cast<int>(obs.size()) * 3, gp.rank());
  EXPECT_NEAR((regress(gp, obs).mean - truth).cwiseAbs().maxCoeff(), 0.0, 1e-5);
}

TEST(Regress, HugeNoiseReturnsPrior) {
  const LowRankGp gp = sphere_model(10);
  const PosteriorGp post = regress(gp, {{0, Eigen::Vector3d(1, 2, 3), 1e14}});
  EXPECT_NEAR(post.mean.norm(), 0.0, 1e-12);
  EXPECT_NEAR((post.covariance - Matrix::Identity(10, 10)).cwiseAbs().maxCoeff(), 0.0, 1e-12);
}

TEST(Regress, OneDimensionalToyMatchesDenseFormula) {
  // five points on a line, r = n d
  Matrix x = Matrix::Zero(5, 3);
  for (int i = 0; i < 5; ++i) x(i, 0) = 0.3 * i;
  const TriangleMesh m{PointSet(x)};
  const double beta = 0.4, s2 = 0.05;
  const LowRankGp gp = build_low_rank(gaussian_kernel(beta), Matrix::Zero(5, 3), m, 15);
  std::mt19937_64 rng(6);
  const Matrix u = random_matrix(rng, 5, 3);
  std::vector<Observation> obs;
  for (int i = 0; i < 5; ++i) obs.push_back({i, u.row(i).transpose(), s2});
  Matrix k(5, 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) k(i, j) = std::exp(-std::pow(x(i, 0) - x(j, 0), 2) / (2 * beta * beta));
  const Matrix expect = k * (k + s2 * Matrix::Identity(5, 5)).ldlt().solve(u);
  EXPECT_NEAR((posterior_mean_field(gp, regress(gp, obs)) - expect).cwiseAbs().maxCoeff(), 0.0, 1e-8);
}

TEST(Regress, PosteriorContraction) {
  std::mt19937_64 rng(7);
  const LowRankGp gp = sphere_model(30);
  std::vector<Observation> obs;
  Vector last = Vector::Ones(30);
  for (int k = 0; k < 15; ++k) {
    obs.push_back({(k * 7) % gp.size(), random_matrix(rng, 3, 1), 0.01 + 0.01 * k});
    const PosteriorGp post = regress(gp, obs);
    EXPECT_TRUE((post.covariance.diagonal().array() <= last.array() + 1e-10).all());
    last = post.covariance.diagonal();
    EXPECT_NEAR((post.covariance - post.covariance.transpose()).cwiseAbs().maxCoeff(), 0.0, 1e-10);
  }
}

TEST(Regress, Errors) {
  const LowRankGp gp = sphere_model(5);
  EXPECT_THROW(regress(gp, {}), Error);
  try {
    regress(gp, {{0, Eigen::Vector3d::Zero(), 0.0}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Parameter);
  }
  EXPECT_THROW(regress(gp, {{gp.size(), Eigen::Vector3d::Zero(), 1.0}}), Error);
}

TEST(Regress, TranslationTrendAbsorbsConstantOffset) {
  const TriangleMesh m = icosphere(1);
  const LowRankGp gp = build_low_rank(inverse_laplacian_kernel(m), Matrix::Zero(m.size(), 3), m, 60);
  std::vector<Observation> obs;
  for (int i = 0; i < m.size(); ++i) obs.push_back({i, Eigen::Vector3d(0.5, -1.0, 2.0), 0.1});
  const PosteriorGp post = regress(gp, obs, TrendBasis::Translation);
  EXPECT_NEAR((post.trend_coefficients - Vector(Eigen::Vector3d(0.5, -1.0, 2.0))).norm(), 0.0, 1e-10);
  EXPECT_NEAR(post.mean.norm(), 0.0, 1e-10);
}

TEST(Sample, DegenerateCovarianceAndDeterminism) {
  PosteriorGp post;
  post.mean = Eigen::Vector3d(1.0, -2.0, 0.5);
  post.covariance = Matrix::Zero(3, 3);
  post.precision = 1e30 * Matrix::Identity(3, 3);
  EXPECT_EQ(sample(post, 11), post.mean);
  const LowRankGp gp = sphere_model(8);
  const PosteriorGp p2 = regress(gp, {{0, Eigen::Vector3d(0.1, 0.0, 0.0), 0.1}});
  EXPECT_EQ(sample(p2, 42), sample(p2, 42));
  EXPECT_NE(sample(p2, 42), sample(p2, 43));
}

TEST(Sample, MonteCarloMean) {
  const LowRankGp gp = sphere_model(8);
  const PosteriorGp post = regress(gp, {{0, Eigen::Vector3d(0.3, 0.1, 0.0), 0.05}, {5, Eigen::Vector3d(0, 0, 0.2), 0.05}});
  std::mt19937_64 rng(12);
  const int draws = 100000;
  Vector sum = Vector::Zero(8);
  for (int k = 0; k < draws; ++k) sum += sample(post, rng);
  const double tol = 4.0 * std::sqrt(post.covariance.diagonal().maxCoeff() / draws);
  EXPECT_LT((sum / draws - post.mean).cwiseAbs().maxCoeff(), tol);
}

TEST(LogPrior, Examples) {
  EXPECT_NEAR(log_prior(Vector::Zero(1)), -0.5 * std::log(2 * std::numbers::pi), 1e-15);
  const Vector a = Eigen::Vector3d(0.3, -1.2, 0.7);
  EXPECT_NEAR(log_prior(2 * a) - log_prior(a), -1.5 * a.squaredNorm(), 1e-13);
  EXPECT_EQ(log_prior(a), log_prior(Vector(Eigen::Vector3d(0.7, 0.3, -1.2))));
}

TEST(LogDensity, MatchesDenseGaussian) {
  const LowRankGp gp = sphere_model(6);
  const PosteriorGp post = regress(gp, {{2, Eigen::Vector3d(0.3, 0.1, 0.0), 0.02}});
  const Vector a = Vector::LinSpaced(6, -1.0, 1.0);
  const Vector diff = a - post.mean;
  const double expect = -0.5 * diff.dot(post.covariance.inverse() * diff) -
                        0.5 * std::log(post.covariance.determinant()) - 3.0 * std::log(2 * std::numbers::pi);
  EXPECT_NEAR(log_density(post, a), expect, 1e-10);
}

TEST(InterpolateTo, Examples) {
  std::mt19937_64 rng(13);
  const LowRankGp gp = sphere_model(40, 0.6, 2);
  const Matrix field = instance(gp, random_matrix(rng, 40, 1));
  std::vector<int> all(gp.size());
  for (int i = 0; i < gp.size(); ++i) all[i] = i;
  EXPECT_NEAR((interpolate_to(gp, all, field) - field).cwiseAbs().maxCoeff(), 0.0, 1e-6);

  std::vector<int> half;
  for (int i = 0; i < gp.size(); i += 2) half.push_back(i);
  const Matrix got = interpolate_to(gp, half, select_rows(field, half));
  const double rms = std::sqrt((got - field).squaredNorm() / gp.size());
  const double zero_rms = std::sqrt(field.squaredNorm() / gp.size());
  EXPECT_LT(rms, zero_rms);

  EXPECT_EQ(interpolate_to(gp, {}, Matrix(0, 3)), gp.mean);
  EXPECT_THROW(interpolate_to(gp, {gp.size()}, Matrix::Zero(1, 3)), Error);
}

TEST(PriorMarginal, MatchesSampleVariance) {
  const LowRankGp gp = sphere_model(20);
  const Vector analytic = marginal_variance(gp);
  std::mt19937_64 rng(14);
  std::normal_distribution<double> g;
  const int draws = 20000;
  Vector acc = Vector::Zero(gp.size());
  for (int k = 0; k < draws; ++k) {
    Vector a(20);
    for (int i = 0; i < 20; ++i) a(i) = g(rng);
    acc += instance(gp, a).rowwise().squaredNorm();
  }
  EXPECT_LT(((acc / draws - analytic).array() / analytic.array()).abs().maxCoeff(), 0.1);
}

TEST(ModelFile, RoundTripIsExact) {
  std::mt19937_64 rng(15);
  LowRankGp gp = sphere_model(17);
  gp.mean = random_matrix(rng, gp.size(), 3, 0.1);
  const auto path = (std::filesystem::temp_directory_path() / "gingr_model_roundtrip.bin").string();
  save_model(gp, path);
  const LowRankGp back = load_model(path);
  EXPECT_EQ(back.reference.points(), gp.reference.points());
  EXPECT_EQ(back.reference.triangles(), gp.reference.triangles());
  EXPECT_EQ(back.mean, gp.mean);
  EXPECT_EQ(back.eigenvalues, gp.eigenvalues);
  EXPECT_EQ(back.basis, gp.basis);
  std::filesystem::remove(path);
}

TEST(ModelFile, RejectsForeignAndTruncatedFiles) {
  const auto dir = std::filesystem::temp_directory_path();
  const auto foreign = (dir / "gingr_model_foreign.bin").string();
  {
    std::FILE* f = std::fopen(foreign.c_str(), "wb");
    std::fputs("ply\nformat ascii 1.0\n", f);
    std::fclose(f);
  }
  try {
    load_model(foreign);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Format);
  }
  const auto path = (dir / "gingr_model_truncated.bin").string();
  save_model(sphere_model(5), path);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 9);
  EXPECT_THROW(load_model(path), Error);
  std::filesystem::remove(foreign);
  std::filesystem::remove(path);
}
