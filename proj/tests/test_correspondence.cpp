#include <gtest/gtest.h>

#include <random>

#include "gingr/correspondence.hpp"
#include "gingr/gpmm.hpp"
#include "gingr/kernels.hpp"
#include "gingr/synthetic.hpp"

using namespace gingr;

namespace {

Matrix random_points(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(n, 3);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) m(i, c) = g(rng);
  return m;
}

// k x k vertex grid on z = 0 spanning [lo, hi]^2, counter-clockwise seen from +z
TriangleMesh plane_grid(int k, double lo, double hi, bool flip = false) {
  Matrix p(k * k, 3);
  for (int r = 0; r < k; ++r)
    for (int c = 0; c < k; ++c)
      p.row(r * k + c) << lo + (hi - lo) * c / (k - 1), lo + (hi - lo) * r / (k - 1), 0.0;
  std::vector<Triangle> tris;
  for (int r = 0; r + 1 < k; ++r)
    for (int c = 0; c + 1 < k; ++c) {
      const int a = r * k + c, b = a + 1, d = a + k, e = d + 1;
      if (flip) {
        tris.push_back({a, d, b});
        tris.push_back({b, d, e});
      } else {
        tris.push_back({a, b, d});
        tris.push_back({b, e, d});
      }
    }
  return TriangleMesh(p, tris);
}

SoftAssignment hard_assignment(Eigen::Index n) { return {Matrix::Identity(n, n), Vector::Ones(n), 0.0}; }

SimilarityTransform known_transform() {
  SimilarityTransform t;
  t.scale = 1.7;
  t.rotation = Eigen::AngleAxisd(0.6, Eigen::Vector3d(1, 2, -1).normalized()).toRotationMatrix();
  t.translation = Eigen::Vector3d(0.4, -1.0, 2.5);
  return t;
}

}  // namespace

TEST(ClosestPoint, SelfCorrespondenceIsZero) {
  const TriangleMesh m = icosphere(2);
  const CorrespondenceSet set = closest_point(m, m, FilterConfig{}, 0.5);
  EXPECT_EQ(set.size(), static_cast<std::size_t>(m.size()));
  EXPECT_TRUE(set.excluded.empty());
  for (const auto& p : set.pairs) {
    EXPECT_LT(p.displacement.norm(), 1e-12);
    EXPECT_EQ(p.variance, 0.5);
  }
}

TEST(ClosestPoint, PointSetTranslation) {
  Matrix seg = Matrix::Zero(5, 3);
  for (int i = 0; i < 5; ++i) seg(i, 0) = 0.25 * i;
  Matrix shifted = seg;
  shifted.col(0).array() += 0.1;
  const CorrespondenceSet set = closest_point(TriangleMesh(seg), TriangleMesh(shifted), FilterConfig{}, 1.0);
  ASSERT_EQ(set.size(), 5u);
  for (const auto& p : set.pairs) EXPECT_LT((p.displacement - Vector(Eigen::Vector3d(0.1, 0, 0))).norm(), 1e-15);
}

TEST(ClosestPoint, OpposingNormalsAreAllExcluded) {
  const TriangleMesh ref = plane_grid(5, 0.0, 1.0);
  const TriangleMesh flipped = plane_grid(5, 0.0, 1.0, true);
  FilterConfig f;
  f.max_normal_angle_deg = 90.0;
  const CorrespondenceSet set = closest_point(ref, flipped, f, 1.0);
  EXPECT_TRUE(set.empty());
  ASSERT_EQ(set.excluded.size(), 25u);
  for (const auto& e : set.excluded) EXPECT_EQ(e.second, ExclusionReason::Normal);
  try {
    require_nonempty(set, "test");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyCorrespondence);
    EXPECT_NE(e.message().find("normal=25"), std::string::npos) << e.message();
  }
  f.normal = false;
  f.boundary = false;
  EXPECT_EQ(closest_point(ref, flipped, f, 1.0).size(), 25u);
}

TEST(ClosestPoint, BoundaryHitsAreExcluded) {
  const TriangleMesh ref = plane_grid(5, 0.0, 1.0);
  const TriangleMesh small = plane_grid(3, 0.25, 0.75);
  const CorrespondenceSet set = closest_point(ref, small, FilterConfig{}, 1.0);
  // only the 3 x 3 interior block projects inside the small patch or onto its
  // corners; the interior vertex (0.5, 0.5) is the only one off the boundary
  ASSERT_EQ(set.size(), 1u);
  EXPECT_EQ(set.pairs[0].index, 12);
  EXPECT_EQ(set.excluded.size(), 24u);
  for (const auto& e : set.excluded) EXPECT_EQ(e.second, ExclusionReason::Boundary);
  FilterConfig off;
  off.boundary = false;
  EXPECT_EQ(closest_point(ref, small, off, 1.0).size(), 25u);
}

TEST(ClosestPoint, SurfaceProjectionBeatsVertexSnap) {
  const TriangleMesh target = plane_grid(3, 0.0, 1.0);
  Matrix q(1, 3);
  q << 0.3, 0.2, 0.4;
  const CorrespondenceSet set = closest_point(TriangleMesh(q), target, FilterConfig{}, 1.0);
  ASSERT_EQ(set.size(), 1u);
  EXPECT_LT((set.pairs[0].target - Vector(Eigen::Vector3d(0.3, 0.2, 0.0))).norm(), 1e-14);
}

TEST(ClosestPoint, TwoWayCheckDropsDistantMatches) {
  // reference is a small patch hovering over a large plane; its far corner
  // vertex lands on a target point whose nearest reference point is itself
  const TriangleMesh ref = plane_grid(5, 0.0, 1.0);
  Matrix far = ref.points();
  far.row(24) << 6.0, 6.0, 0.0;
  const TriangleMesh deformed(far, ref.triangles());
  const TriangleMesh target = plane_grid(3, 0.0, 1.0);
  FilterConfig f;
  f.boundary = false;
  f.normal = false;
  f.two_way = true;
  const CorrespondenceSet set = closest_point(deformed, target, f, 1.0);
  ASSERT_EQ(set.excluded.size(), 1u);
  EXPECT_EQ(set.excluded[0].first, 24);
  EXPECT_EQ(set.excluded[0].second, ExclusionReason::TwoWay);
}

TEST(ClosestPoint, RejectsBadVariance) {
  const TriangleMesh m = icosphere(0);
  EXPECT_THROW(closest_point(m, m, FilterConfig{}, 0.0), Error);
}

TEST(CpdProbabilities, SinglePair) {
  const SoftAssignment a = cpd_probabilities(Matrix::Ones(1, 3), Matrix::Zero(1, 3), 0.3, 0.0);
  EXPECT_EQ(a.p(0, 0), 1.0);
  EXPECT_EQ(a.p1(0), 1.0);
}

TEST(CpdProbabilities, Equidistant) {
  Matrix x(2, 3);
  x << -1, 0, 0, 1, 0, 0;
  const SoftAssignment a = cpd_probabilities(x, Matrix::Zero(1, 3), 0.7, 0.0);
  EXPECT_NEAR(a.p(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(a.p(1, 0), 0.5, 1e-15);
}

TEST(CpdProbabilities, ColumnsSumToOneWithoutOutliers) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> size(1, 25);
  std::uniform_real_distribution<double> s2(1e-3, 5.0);
  for (int t = 0; t < 100; ++t) {
    const Matrix x = random_points(rng, size(rng)), y = random_points(rng, size(rng));
    const SoftAssignment a = cpd_probabilities(x, y, s2(rng), 0.0);
    EXPECT_LT((a.p.colwise().sum().array() - 1.0).abs().maxCoeff(), 1e-9);
    EXPECT_GE(a.p.minCoeff(), 0.0);
    EXPECT_LT((a.p1 - a.p.rowwise().sum()).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(CpdProbabilities, OutlierTermMatchesFormula) {
  std::mt19937_64 rng(22);
  const Matrix x = random_points(rng, 6), y = random_points(rng, 4);
  const double s2 = 0.4, w = 0.3;
  const SoftAssignment a = cpd_probabilities(x, y, s2, w);
  const Eigen::Vector3d extent = y.colwise().maxCoeff() - y.colwise().minCoeff();
  const double c = std::pow(2 * std::numbers::pi * s2, 1.5) * w / (1 - w) * 6.0 / extent.prod();
  for (int j = 0; j < 4; ++j) {
    double denom = c;
    for (int i = 0; i < 6; ++i) denom += std::exp(-(x.row(i) - y.row(j)).squaredNorm() / (2 * s2));
    for (int i = 0; i < 6; ++i)
      EXPECT_NEAR(a.p(i, j), std::exp(-(x.row(i) - y.row(j)).squaredNorm() / (2 * s2)) / denom, 1e-14);
  }
  EXPECT_LE(a.p.colwise().sum().maxCoeff(), 1.0);
}

TEST(CpdProbabilities, Errors) {
  const Matrix x = Matrix::Zero(2, 3);
  EXPECT_THROW(cpd_probabilities(x, x, 1.0, 1.0), Error);
  EXPECT_THROW(cpd_probabilities(x, x, 0.0, 0.0), Error);
  EXPECT_THROW(cpd_probabilities(x, Matrix::Zero(2, 2), 1.0, 0.0), Error);
}

TEST(CpdObservation, HardAssignment) {
  std::mt19937_64 rng(23);
  const Matrix x = random_points(rng, 5), y = random_points(rng, 5);
  const CorrespondenceSet set = cpd_observation(hard_assignment(5), y, x, 2.0, 0.25);
  ASSERT_EQ(set.size(), 5u);
  for (const auto& p : set.pairs) {
    EXPECT_LT((p.displacement - (y.row(p.index) - x.row(p.index)).transpose()).norm(), 1e-15);
    EXPECT_EQ(p.variance, 0.5);
  }
}

TEST(CpdObservation, DoubledMassHalvesNoise) {
  SoftAssignment a = hard_assignment(2);
  a.p(0, 1) = 1.0;
  a.p1(0) = 2.0;
  const CorrespondenceSet set = cpd_observation(a, Matrix::Identity(2, 3), Matrix::Zero(2, 3), 1.0, 0.3);
  EXPECT_DOUBLE_EQ(set.pairs[0].variance * 2.0, set.pairs[1].variance);
}

TEST(CpdObservation, LowMassRowsAreExcluded) {
  SoftAssignment a = hard_assignment(3);
  a.p.row(1).setZero();
  a.p1(1) = 0.0;
  const CorrespondenceSet set = cpd_observation(a, Matrix::Ones(3, 3), Matrix::Zero(3, 3), 1.0, 1.0);
  EXPECT_EQ(set.size(), 2u);
  ASSERT_EQ(set.excluded.size(), 1u);
  EXPECT_EQ(set.excluded[0], (std::pair{1, ExclusionReason::LowMass}));
}

TEST(CpdObservation, RegressionReproducesDenseMStep) {
  std::mt19937_64 rng(24);
  std::uniform_int_distribution<int> size(3, 25);
  const double beta = 1.2, lambda = 2.0, s2 = 2.0;
  for (int t = 0; t < 8; ++t) {
    const int n = t == 0 ? 3 : size(rng), m = t == 0 ? 3 : size(rng);
    const Matrix x = random_points(rng, n), y = random_points(rng, m);
    const SoftAssignment a = cpd_probabilities(x, y, s2, 0.0);
    const CorrespondenceSet set = cpd_observation(a, y, x, lambda, s2);
    ASSERT_EQ(set.size(), static_cast<std::size_t>(n));
    const LowRankGp gp = build_low_rank(gaussian_kernel(beta), Matrix::Zero(n, 3), TriangleMesh(x), 3 * n);
    const Matrix got = posterior_mean_field(gp, regress(gp, set.observations()));

    Matrix k(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) k(i, j) = std::exp(-(x.row(i) - x.row(j)).squaredNorm() / (2 * beta * beta));
    const Vector q = a.p.rowwise().sum().cwiseInverse();
    const Matrix qpy = q.asDiagonal() * (a.p * y);
    const Matrix expect = k * (k + Matrix(lambda * s2 * q.asDiagonal())).lu().solve(qpy - x);
    EXPECT_LT((got - expect).cwiseAbs().maxCoeff(), 1e-8) << "n=" << n << " m=" << m;
  }
}

TEST(BcpdObservation, IdentityReducesToCpd) {
  std::mt19937_64 rng(25);
  const Matrix x = random_points(rng, 7), y = random_points(rng, 9);
  const SoftAssignment a = cpd_probabilities(x, y, 0.8, 0.1);
  const CorrespondenceSet cpd = cpd_observation(a, y, x, 1.5, 0.8);
  const BcpdObservation bcpd = bcpd_observation(a, y, x, SimilarityTransform::identity(3), 1.5, 0.8, x);
  ASSERT_EQ(cpd.size(), bcpd.set.size());
  for (std::size_t k = 0; k < cpd.size(); ++k) {
    EXPECT_EQ(cpd.pairs[k].index, bcpd.set.pairs[k].index);
    EXPECT_EQ(cpd.pairs[k].displacement, bcpd.set.pairs[k].displacement);
    EXPECT_EQ(cpd.pairs[k].variance, bcpd.set.pairs[k].variance);
  }
}

TEST(BcpdObservation, ScaleEntersNoiseSquared) {
  std::mt19937_64 rng(26);
  const Matrix x = random_points(rng, 4), y = random_points(rng, 4);
  const SoftAssignment a = cpd_probabilities(x, y, 0.5, 0.0);
  SimilarityTransform t2 = SimilarityTransform::identity(3);
  t2.scale = 2.0;
  const BcpdObservation one = bcpd_observation(a, y, x, SimilarityTransform::identity(3), 1.0, 0.5, x);
  const BcpdObservation two = bcpd_observation(a, y, x, t2, 1.0, 0.5, x);
  for (std::size_t k = 0; k < one.set.size(); ++k)
    EXPECT_DOUBLE_EQ(two.set.pairs[k].variance, 0.25 * one.set.pairs[k].variance);
}

TEST(BcpdObservation, SimilarityIsAbsorbedByTransformUpdate) {
  std::mt19937_64 rng(27);
  const Matrix x = random_points(rng, 10);
  const SimilarityTransform truth = known_transform();
  const Matrix y = truth.apply(x);
  const SoftAssignment a = hard_assignment(10);
  const BcpdObservation first = bcpd_observation(a, y, x, SimilarityTransform::identity(3), 1.0, 0.1, x);
  ASSERT_TRUE(first.transform_updated);
  EXPECT_NEAR(first.transform.scale, truth.scale, 1e-10);
  EXPECT_LT((first.transform.rotation - truth.rotation).cwiseAbs().maxCoeff(), 1e-10);
  const BcpdObservation second = bcpd_observation(a, y, x, first.transform, 1.0, 0.1, x);
  EXPECT_LT(second.set.observed_field().cwiseAbs().maxCoeff(), 1e-8);
}

TEST(BcpdObservation, DegenerateUpdateKeepsTransform) {
  const Matrix x = Matrix::Zero(3, 3);
  const SimilarityTransform t = known_transform();
  const BcpdObservation out = bcpd_observation(hard_assignment(3), x, x, t, 1.0, 0.1, x);
  EXPECT_FALSE(out.transform_updated);
  EXPECT_EQ(out.transform.translation, t.translation);
}

TEST(IcpAObservation, IdentityAndLargeKernel) {
  std::mt19937_64 rng(28);
  const Matrix xr = random_points(rng, 6), xc = random_points(rng, 6);
  const CorrespondenceSet closest = indexed_pairs(xr, xc, 0.2);
  const CorrespondenceSet unit = icp_a_observation(closest, xr, Matrix::Identity(6, 6));
  EXPECT_LT((unit.observed_field() - (xc - 2.0 * xr)).cwiseAbs().maxCoeff(), 1e-14);
  const CorrespondenceSet big = icp_a_observation(closest, xr, 1e12 * Matrix::Identity(6, 6));
  EXPECT_LT((big.observed_field() - (xc - xr)).cwiseAbs().maxCoeff(), 1e-10);
  for (const auto& p : unit.pairs) EXPECT_EQ(p.variance, 0.2);
}

TEST(IcpAObservation, MissingPairOrSingularKernel) {
  const Matrix xr = Matrix::Identity(3, 3);
  const CorrespondenceSet partial = indexed_pairs(xr, xr, 1.0, {true, false, true});
  EXPECT_THROW(icp_a_observation(partial, xr, Matrix::Identity(3, 3)), Error);
  Matrix neg = -Matrix::Identity(3, 3);
  try {
    icp_a_observation(indexed_pairs(xr, xr, 1.0), xr, neg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Numerical);
  }
}

TEST(Landmarks, EmptyListIsNoOp) {
  const Matrix xr = icosphere(0).points();
  const CorrespondenceSet set = indexed_pairs(xr, xr, 1.0);
  const CorrespondenceSet out = add_landmarks(set, {}, {}, xr, xr);
  ASSERT_EQ(out.size(), set.size());
  for (std::size_t k = 0; k < set.size(); ++k) EXPECT_EQ(out.pairs[k].displacement, set.pairs[k].displacement);
}

TEST(Landmarks, TightLandmarkPinsPosterior) {
  const TriangleMesh m = icosphere(2);
  const LowRankGp gp = build_low_rank(gaussian_kernel(0.5), Matrix::Zero(m.size(), 3), m, 50);
  const Vector goal = m.points().row(5).transpose() + Vector(Eigen::Vector3d(0.1, 0.0, 0.05));
  // reference landmark sits slightly off vertex 5 and snaps to it
  const Vector near5 = m.points().row(5).transpose() * 1.001;
  const CorrespondenceSet out =
      add_landmarks(CorrespondenceSet{}, {{"tip", near5, 5e-7}}, {{"tip", goal, 5e-7}}, m.points(), m.points());
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out.pairs[0].index, 5);
  EXPECT_NEAR(out.pairs[0].variance, 1e-6, 1e-18);
  const Matrix u = posterior_mean_field(gp, regress(gp, out.observations()));
  EXPECT_LT((m.points().row(5) + u.row(5) - goal.transpose()).norm(), 1e-2);
}

TEST(Landmarks, OverridesEstimatorPair) {
  const Matrix xr = icosphere(0).points();
  const CorrespondenceSet set = indexed_pairs(xr, xr, 1.0);
  const CorrespondenceSet out =
      add_landmarks(set, {{"a", xr.row(3).transpose(), 0.0}}, {{"a", Vector::Zero(3), 0.01}}, xr, xr);
  EXPECT_EQ(out.size(), set.size());
  EXPECT_EQ(out.pairs[3].variance, 0.01);
  EXPECT_EQ(out.pairs[3].displacement, Vector(-xr.row(3).transpose()));
}

TEST(Landmarks, DuplicateOrUnmatchedIds) {
  const Matrix xr = icosphere(0).points();
  const Vector p = Vector::Zero(3);
  EXPECT_THROW(add_landmarks({}, {{"a", p, 0.1}, {"a", p, 0.1}}, {{"a", p, 0.1}}, xr, xr), Error);
  EXPECT_THROW(add_landmarks({}, {{"a", p, 0.1}}, {{"a", p, 0.1}, {"a", p, 0.1}}, xr, xr), Error);
  EXPECT_THROW(add_landmarks({}, {{"a", p, 0.1}}, {{"b", p, 0.1}}, xr, xr), Error);
}

TEST(NextSigma, Geometric) {
  SigmaSchedule s = SigmaSchedule::geometric(1.0, 0.9, 1e-3);
  next_sigma(s);
  EXPECT_DOUBLE_EQ(next_sigma(s), 0.81);
  double last = s.current;
  for (int k = 0; k < 200; ++k) {
    const double v = next_sigma(s);
    EXPECT_LE(v, last);
    EXPECT_GE(v, 1e-3);
    last = v;
  }
  EXPECT_EQ(last, 1e-3);
  EXPECT_THROW(SigmaSchedule::geometric(1.0, 1.0, 1e-3), Error);
  EXPECT_THROW(SigmaSchedule::geometric(1.0, 0.5, 0.0), Error);
}

TEST(NextSigma, FixedListRepeatsLast) {
  SigmaSchedule s = SigmaSchedule::fixed_list({3.0, 2.0});
  EXPECT_EQ(s.current, 3.0);
  EXPECT_EQ(next_sigma(s), 2.0);
  EXPECT_EQ(next_sigma(s), 2.0);
  EXPECT_THROW(SigmaSchedule::fixed_list({}), Error);
}

TEST(NextSigma, CpdResidual) {
  SigmaSchedule s = SigmaSchedule::cpd_residual(1.0, 1e-6);
  EXPECT_THROW(next_sigma(s), Error);

  const Matrix x = icosphere(0).points();
  const Matrix p = Matrix::Identity(12, 12);
  EXPECT_EQ(next_sigma(s, ResidualStats{&p, &x, &x}), 1e-6);

  Matrix one = Matrix::Zero(1, 3), two(2, 3);
  two << 1, 0, 0, 0, 3, 0;
  const Matrix half = Matrix::Constant(1, 2, 0.5);
  EXPECT_DOUBLE_EQ(next_sigma(s, ResidualStats{&half, &two, &one}), (1.0 + 9.0) / (2.0 * 3.0));
}

TEST(NextSigma, InitialEstimates) {
  Matrix x = Matrix::Zero(1, 3), y(2, 3);
  y << 1, 0, 0, 0, 2, 0;
  EXPECT_DOUBLE_EQ(initial_cpd_sigma2(x, y), 5.0 / 6.0);
  EXPECT_DOUBLE_EQ(nearest_neighbour_sigma2(x, y), 1.0 / 3.0);
}
