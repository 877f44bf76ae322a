#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gingr/correspondence.hpp"
#include "gingr/errors.hpp"
#include "gingr/geometry.hpp"
#include "gingr/gpmm.hpp"
#include "gingr/kernels.hpp"
#include "gingr/spatial.hpp"

namespace gingr {

// ---------------------------------------------------------------------------
// Configuration

enum class KernelKind { Gaussian, SymmetricGaussian, InverseLaplacian, AffineLaplacian, Custom };
enum class EstimatorKind { ClosestPoint, Cpd, Bcpd, IcpACorrected, Indexed };
enum class RegistrationMode { Deterministic, Probabilistic };
enum class StoppingRule { MeanDisplacement, TargetDistance };
enum class TransformSource { LocalShape, Reference };
enum class InitialAlignment { None, Moments };
enum class RandomWalk { Isotropic, Preconditioned };

struct PriorSpec {
  KernelKind kernel = KernelKind::Gaussian;
  double beta = 0.5;   // Gaussian length scale
  double gamma = 1.0;  // homogeneous term of the affine Laplacian kernel
  double scale = 1.0;  // kernel amplitude
  Axis mirror_axis = Axis::X;
  int rank = 60;
  LowRankMethod method = LowRankMethod::DenseEig;
  int nystrom_landmarks = 0;
  TrendBasis trend = TrendBasis::None;
  Kernel custom;                 // KernelKind::Custom
  std::optional<Matrix> mean;    // defaults to the kernel's mean field or zero
};

struct CorrespondenceSpec {
  EstimatorKind estimator = EstimatorKind::ClosestPoint;
  FilterConfig filters;
  double outlier_weight = 0.0; // CPD w
  double lambda = 2.0;         // CPD / BCPD regularization weight
  TransformSource transform_source = TransformSource::LocalShape;
  bool explicit_estimator = false; // set when the estimator was chosen by the user
};

struct ProbabilisticSpec {
  int n_samples = 1000;
  double informed_weight = 0.5;
  double random_walk_weight = 0.5;
  double likelihood_variance = 1.0; // infinity disables the likelihood
  std::vector<double> step_scales{0.05}; // one value or one per coefficient
  // Preconditioned: steps are shaped by the posterior covariance at the start
  RandomWalk random_walk = RandomWalk::Isotropic;
  int burn_in = -1;                 // -1: 20% of n_samples
  int thinning = 1;
  double proposal_sigma2 = 0.0;     // <= 0: value reached by the warm start
  bool warm_start = true;
  int warm_start_iterations = -1;   // -1: max_iterations
};

struct RegistrationConfig {
  std::string preset = "custom";
  PriorSpec prior;
  CorrespondenceSpec correspondence;
  SigmaSchedule schedule = SigmaSchedule::geometric(1.0, 0.9, 1e-4);
  RegistrationMode mode = RegistrationMode::Deterministic;
  ProbabilisticSpec probabilistic;
  int max_iterations = 50;
  double tolerance = 1e-6;
  StoppingRule stopping = StoppingRule::MeanDisplacement;
  double damping = 1.0;
  bool rigid_correction = false;
  bool rigid_with_scale = false;
  InitialAlignment initial_alignment = InitialAlignment::None;
  std::vector<Landmark> reference_landmarks;
  std::vector<Landmark> target_landmarks;
  std::uint64_t seed = 0;
  bool explicit_kernel = false; // set when the kernel was chosen by the user

  void validate() const {
    require(max_iterations >= 1, ErrorKind::Config, "max_iterations must be at least 1");
    require(tolerance > 0.0, ErrorKind::Config, "tolerance must be positive");
    require(damping > 0.0 && damping <= 1.0, ErrorKind::Config, "damping must lie in (0, 1]");
    require(prior.rank >= 1, ErrorKind::Config, "prior.rank must be at least 1");
    require(prior.scale > 0.0, ErrorKind::Config, "prior.scale must be positive");
    if (prior.kernel == KernelKind::Gaussian || prior.kernel == KernelKind::SymmetricGaussian)
      require(prior.beta > 0.0, ErrorKind::Config, "prior.beta must be positive");
    if (prior.kernel == KernelKind::AffineLaplacian)
      require(prior.gamma > 0.0, ErrorKind::Config, "prior.gamma must be positive");
    if (prior.kernel == KernelKind::Custom)
      require(prior.custom.valid(), ErrorKind::Config, "custom prior needs an explicit kernel");
    if (prior.method == LowRankMethod::Nystrom)
      require(prior.nystrom_landmarks >= prior.rank, ErrorKind::Config, "nystrom landmarks must be >= rank");
    require(correspondence.lambda > 0.0, ErrorKind::Config, "correspondence.lambda must be positive");
    require(correspondence.outlier_weight >= 0.0 && correspondence.outlier_weight < 1.0, ErrorKind::Config,
            "correspondence.outlier_weight must lie in [0, 1)");
    require(correspondence.filters.max_normal_angle_deg > 0.0 && correspondence.filters.max_normal_angle_deg <= 180.0,
            ErrorKind::Config, "filters.max_normal_angle_deg must lie in (0, 180]");
    require(correspondence.filters.two_way_factor > 0.0, ErrorKind::Config, "filters.two_way_factor must be positive");
    if (preset == "custom")
      require(explicit_kernel && correspondence.explicit_estimator, ErrorKind::Config,
              "preset 'custom' needs an explicit kernel and estimator");
    if (mode == RegistrationMode::Probabilistic) {
      const auto& p = probabilistic;
      require(p.n_samples >= 1, ErrorKind::Config, "probabilistic.n_samples must be at least 1");
      require(p.informed_weight >= 0.0 && p.random_walk_weight >= 0.0, ErrorKind::Config,
              "proposal mixture weights must be non-negative");
      require(std::abs(p.informed_weight + p.random_walk_weight - 1.0) < 1e-9, ErrorKind::Config,
              "proposal mixture weights must sum to 1");
      require(p.likelihood_variance > 0.0, ErrorKind::Config, "probabilistic.likelihood_variance must be positive");
      require(!p.step_scales.empty(), ErrorKind::Config, "probabilistic.step_scales must not be empty");
      for (double s : p.step_scales) require(s > 0.0, ErrorKind::Config, "probabilistic.step_scales must be positive");
      require(p.burn_in >= -1 && p.burn_in <= p.n_samples, ErrorKind::Config,
              "probabilistic.burn_in must lie in [0, n_samples]");
      require(p.thinning >= 1, ErrorKind::Config, "probabilistic.thinning must be at least 1");
    }
  }

  int burn_in() const {
    return probabilistic.burn_in >= 0 ? probabilistic.burn_in : probabilistic.n_samples / 5;
  }
};

/// Expands an algorithm name into a fully populated configuration.
inline RegistrationConfig preset(const std::string& name) {
  RegistrationConfig c;
  c.preset = name;
  if (name == "cpd") {
    c.prior.kernel = KernelKind::Gaussian;
    c.correspondence.estimator = EstimatorKind::Cpd;
    c.schedule = SigmaSchedule::cpd_residual(0.0, 1e-8);
    c.rigid_correction = false;
  } else if (name == "bcpd") {
    c.prior.kernel = KernelKind::Gaussian;
    c.correspondence.estimator = EstimatorKind::Bcpd;
    c.correspondence.lambda = 50.0;
    c.correspondence.transform_source = TransformSource::Reference;
    c.initial_alignment = InitialAlignment::Moments;
    c.schedule = SigmaSchedule::cpd_residual(0.0, 1e-8, InitialVariance::NearestNeighbour);
    c.rigid_correction = false;
  } else if (name == "icp_t") {
    c.prior.kernel = KernelKind::InverseLaplacian;
    c.prior.trend = TrendBasis::Translation;
    c.prior.rank = 150;
    c.correspondence.estimator = EstimatorKind::ClosestPoint;
    c.schedule = SigmaSchedule::geometric(1.0, 0.85, 0.02);
    c.rigid_correction = true;
    c.rigid_with_scale = false;
  } else if (name == "icp_a") {
    c.prior.kernel = KernelKind::AffineLaplacian;
    c.prior.trend = TrendBasis::Affine;
    c.prior.rank = 150;
    c.correspondence.estimator = EstimatorKind::ClosestPoint;
    c.schedule = SigmaSchedule::geometric(1.0, 0.85, 0.02);
    c.rigid_correction = false;
  } else if (name == "custom") {
    c.explicit_kernel = false;
    c.correspondence.explicit_estimator = false;
  } else {
    fail(ErrorKind::Config, "unknown preset '" + name + "' (expected cpd, bcpd, icp_t, icp_a or custom)");
  }
  return c;
}

/// Kernel described by a prior spec on a given reference.
inline Kernel make_kernel(const PriorSpec& spec, const TriangleMesh& reference) {
  const int d = reference.dim();
  Kernel k;
  switch (spec.kernel) {
    case KernelKind::Gaussian: k = gaussian_kernel(spec.beta, d); break;
    case KernelKind::SymmetricGaussian: k = symmetric_kernel(gaussian_kernel(spec.beta, d), spec.mirror_axis); break;
    case KernelKind::InverseLaplacian: k = inverse_laplacian_kernel(reference); break;
    case KernelKind::AffineLaplacian: k = affine_laplacian_kernel(reference, spec.gamma); break;
    case KernelKind::Custom: k = spec.custom; break;
  }
  require(k.valid(), ErrorKind::Config, "prior kernel is not set");
  if (spec.scale != 1.0) k = combine({{k, spec.scale}}, CombineMode::Sum);
  return k;
}

inline LowRankGp build_prior(const PriorSpec& spec, const TriangleMesh& reference) {
  const Kernel k = make_kernel(spec, reference);
  Matrix mean = Matrix::Zero(reference.size(), reference.dim());
  if (spec.mean)
    mean = *spec.mean;
  else if (k.mean_field())
    mean = *k.mean_field();
  const int rank = std::min(spec.rank, reference.size() * reference.dim());
  return build_low_rank(k, mean, reference, rank, {spec.method, spec.nystrom_landmarks});
}

// ---------------------------------------------------------------------------
// State and results

struct RegistrationState {
  Vector alpha;
  SimilarityTransform transform;
  Vector trend; // trend coefficients
  SigmaSchedule schedule;
  int iteration = 0;
  double last_mean_displacement = std::numeric_limits<double>::infinity();

  double sigma2() const { return schedule.current; }
};

struct TraceEntry {
  int iteration = 0;
  double sigma2 = 0.0;
  double mean_dist = 0.0;
  double max_dist = 0.0;
  double log_posterior = std::numeric_limits<double>::quiet_NaN();
  int accepted = -1; // -1: not applicable
};

struct RegistrationResult {
  TriangleMesh deformed;
  DeformationField field; // local deformation in the reference frame
  RegistrationState state;
  std::vector<TraceEntry> trace;
  bool converged = false;
  std::vector<std::string> warnings;
};

struct ChainSample {
  Vector alpha;
  SimilarityTransform transform;
  double log_posterior = 0.0;
};

struct PosteriorChain {
  std::vector<ChainSample> samples; // retained states
  int burn_in = 0;
  int thinning = 1;
  int steps = 0;
  int accepted = 0;
  Matrix trend_field; // fixed trend displacement, n x d
  ChainSample map;

  double acceptance_rate() const { return steps > 0 ? static_cast<double>(accepted) / steps : 0.0; }
};

inline RegistrationState initial_state(const LowRankGp& gp, const RegistrationConfig& config) {
  RegistrationState s;
  s.alpha = Vector::Zero(gp.rank());
  s.transform = SimilarityTransform::identity(gp.dim());
  s.trend = Vector::Zero(trend_size(config.prior.trend, gp.dim()));
  s.schedule = config.schedule;
  return s;
}

/// Local deformation u = mu + Phi alpha + trend in the reference frame.
inline DeformationField local_field(const LowRankGp& gp, TrendBasis trend, const Vector& alpha, const Vector& beta) {
  return instance(gp, alpha) + trend_field(trend, beta, gp.reference.points());
}

inline Matrix deformed_positions(const LowRankGp& gp, TrendBasis trend, const RegistrationState& s) {
  return s.transform.apply(Matrix(gp.reference.points() + local_field(gp, trend, s.alpha, s.trend)));
}

// ---------------------------------------------------------------------------
// One iteration

/// Everything about the target that stays fixed during a run.
struct TargetData {
  TriangleMesh mesh;
  TargetIndex index;
  explicit TargetData(const TriangleMesh& target) : mesh(target), index(target) {}
  const Matrix& points() const { return mesh.points(); }
};

struct StepOutput {
  RegistrationState state;
  CorrespondenceSet correspondences; // displacements in the reference frame
  PosteriorGp posterior;
  double mean_dist = 0.0;
  double max_dist = 0.0;
  std::vector<std::string> warnings;
};

/// Umeyama fit between current positions of the paired vertices and their
/// targets. Returns the input transform when the pairs are degenerate.
inline std::optional<SimilarityTransform> rigid_correction(const CorrespondenceSet& pairs, const Matrix& positions,
                                                           bool with_scale) {
  if (pairs.pairs.empty()) return std::nullopt;
  Matrix src(static_cast<Eigen::Index>(pairs.size()), positions.cols());
  Matrix dst(src.rows(), src.cols());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    src.row(static_cast<Eigen::Index>(k)) = positions.row(pairs.pairs[k].index);
    dst.row(static_cast<Eigen::Index>(k)) = pairs.pairs[k].target.transpose();
  }
  try {
    return umeyama_align(src, dst, with_scale);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::Alignment) throw;
    return std::nullopt;
  }
}

namespace detail {

/// Correspondences at the current state, expressed as reference-frame
/// observations. May update the transform (rigid correction, BCPD).
struct Correspondences {
  CorrespondenceSet set;
  SimilarityTransform transform;
  std::optional<SoftAssignment> soft;
  double mean_dist = 0.0;
  double max_dist = 0.0;
  std::vector<std::string> warnings;
};

inline void pair_distances(Correspondences& c, const Matrix& positions) {
  double sum = 0.0, mx = 0.0;
  for (const auto& p : c.set.pairs) {
    const double dist = (p.target - positions.row(p.index).transpose()).norm();
    sum += dist;
    mx = std::max(mx, dist);
  }
  c.mean_dist = c.set.pairs.empty() ? 0.0 : sum / static_cast<double>(c.set.pairs.size());
  c.max_dist = mx;
}

/// Target-frame pairs -> reference-frame observations under `t`.
inline void to_reference_frame(CorrespondenceSet& set, const Matrix& x_ref, const SimilarityTransform& t) {
  const SimilarityTransform inv = t.inverse();
  const double s2 = t.scale * t.scale;
  for (auto& p : set.pairs) {
    p.displacement = inv.apply(Vector(p.target)) - x_ref.row(p.index).transpose();
    p.variance /= s2;
  }
}

inline Correspondences estimate(const RegistrationState& s, const LowRankGp& gp, const RegistrationConfig& config,
                                const TargetData& target, const Matrix& local) {
  const Matrix& x_ref = gp.reference.points();
  const Matrix positions = s.transform.apply(local);
  const TriangleMesh deformed = gp.reference.with_points(positions);
  const double sigma2 = s.sigma2();
  const auto& spec = config.correspondence;
  Correspondences c;
  c.transform = s.transform;

  switch (spec.estimator) {
    case EstimatorKind::ClosestPoint:
    case EstimatorKind::IcpACorrected:
    case EstimatorKind::Indexed: {
      if (spec.estimator == EstimatorKind::Indexed) {
        require(target.mesh.size() == gp.size(), ErrorKind::Config,
                "indexed correspondences need a target with as many vertices as the reference");
        c.set = indexed_pairs(positions, target.points(), sigma2);
      } else {
        c.set = closest_point(deformed, target.index, spec.filters, sigma2);
      }
      pair_distances(c, positions);
      if (config.rigid_correction) {
        if (auto t = rigid_correction(c.set, local, config.rigid_with_scale))
          c.transform = *t;
        else
          c.warnings.push_back("rigid correction skipped: degenerate pairs");
      }
      to_reference_frame(c.set, x_ref, c.transform);
      break;
    }
    case EstimatorKind::Cpd:
    case EstimatorKind::Bcpd: {
      c.soft = cpd_probabilities(positions, target.points(), sigma2, spec.outlier_weight);
      SimilarityTransform t = s.transform;
      if (spec.estimator == EstimatorKind::Bcpd) {
        const Matrix source = spec.transform_source == TransformSource::LocalShape ? local : x_ref;
        if (auto updated = bcpd_transform_update(*c.soft, target.points(), source))
          t = *updated;
        else
          c.warnings.push_back("similarity update skipped: degenerate soft targets");
      }
      auto obs = bcpd_observation(*c.soft, target.points(), x_ref, t, spec.lambda, sigma2, local);
      c.set = std::move(obs.set);
      c.transform = t;
      pair_distances(c, positions);
      break;
    }
  }

  const SimilarityTransform inv = c.transform.inverse();
  c.set = add_landmarks(c.set, config.reference_landmarks, config.target_landmarks, x_ref, x_ref, &inv);
  require_nonempty(c.set, "correspondence estimation");
  return c;
}

}  // namespace detail

/// One deterministic GiNGR iteration: correspondences at the current state,
/// regression, and the posterior-mean update.
inline StepOutput gingr_step(const RegistrationState& state, const LowRankGp& gp, const RegistrationConfig& config,
                             const TargetData& target) {
  const Matrix& x_ref = gp.reference.points();
  const TrendBasis trend = config.prior.trend;
  const Matrix local = x_ref + local_field(gp, trend, state.alpha, state.trend);
  const Matrix positions = state.transform.apply(local);

  detail::Correspondences c = detail::estimate(state, gp, config, target, local);
  StepOutput out;
  out.warnings = c.warnings;
  out.mean_dist = c.mean_dist;
  out.max_dist = c.max_dist;

  if (config.correspondence.estimator == EstimatorKind::IcpACorrected) {
    const Kernel k = make_kernel(config.prior, gp.reference);
    require(k.is_scalar(), ErrorKind::Config, "corrected ICP-A observation needs a scalar kernel");
    const Sites sites = Sites::reference(x_ref);
    c.set = icp_a_observation(c.set, x_ref, gram(k, sites).values, state.sigma2());
  }

  out.posterior = regress(gp, c.set.observations(), trend);
  out.correspondences = c.set;

  RegistrationState next = state;
  next.transform = c.transform;
  next.alpha = state.alpha + config.damping * (out.posterior.mean - state.alpha);
  if (trend != TrendBasis::None)
    next.trend = state.trend + config.damping * (out.posterior.trend_coefficients - state.trend);
  ++next.iteration;

  const Matrix new_positions = deformed_positions(gp, trend, next);
  next.last_mean_displacement = (new_positions - positions).rowwise().norm().mean();

  if (next.schedule.kind == ScheduleKind::CpdResidual) {
    if (c.soft) {
      // residual variance of the soft assignment against the updated shape
      next_sigma(next.schedule, ResidualStats{&c.soft->p, &target.points(), &new_positions});
    } else {
      double sum = 0.0;
      for (const auto& pr : c.set.pairs) sum += (pr.target - new_positions.row(pr.index).transpose()).squaredNorm();
      next.schedule.current =
          std::max(sum / (static_cast<double>(gp.dim()) * static_cast<double>(std::max<std::size_t>(c.set.size(), 1))),
                   next.schedule.floor);
      ++next.schedule.step;
    }
  } else {
    next_sigma(next.schedule);
  }
  out.state = std::move(next);
  return out;
}

/// Similarity matching centroids and RMS radii, no rotation.
inline SimilarityTransform moment_alignment(const Matrix& source, const Matrix& target) {
  const Vector ms = source.colwise().mean().transpose();
  const Vector mt = target.colwise().mean().transpose();
  const double vs = (source.rowwise() - ms.transpose()).squaredNorm() / static_cast<double>(source.rows());
  const double vt = (target.rowwise() - mt.transpose()).squaredNorm() / static_cast<double>(target.rows());
  SimilarityTransform t = SimilarityTransform::identity(static_cast<int>(source.cols()));
  if (vs > 0.0 && vt > 0.0) t.scale = std::sqrt(vt / vs);
  t.translation = mt - t.scale * ms;
  return t;
}

/// First-iteration setup: optional moment alignment and the starting sigma2
/// of a data-driven schedule.
inline void initialize_schedule(RegistrationState& s, const LowRankGp& gp, const RegistrationConfig& config,
                                const TargetData& target) {
  if (s.iteration == 0 && config.initial_alignment == InitialAlignment::Moments)
    s.transform = moment_alignment(gp.reference.points() + local_field(gp, config.prior.trend, s.alpha, s.trend),
                                   target.mesh.points());
  if (s.schedule.kind == ScheduleKind::CpdResidual && !(s.schedule.current > 0.0)) {
    const Matrix positions = deformed_positions(gp, config.prior.trend, s);
    const double v = s.schedule.start == InitialVariance::NearestNeighbour
                         ? nearest_neighbour_sigma2(positions, target.mesh.points())
                         : initial_cpd_sigma2(positions, target.mesh.points());
    s.schedule.current = std::max(v, s.schedule.floor);
    s.schedule.initial = s.schedule.current;
  }
}

inline RegistrationResult finish(const LowRankGp& gp, const RegistrationConfig& config, RegistrationResult r) {
  r.field = local_field(gp, config.prior.trend, r.state.alpha, r.state.trend);
  r.deformed = gp.reference.with_points(r.state.transform.apply(Matrix(gp.reference.points() + r.field)));
  return r;
}

/// Deterministic registration with a prebuilt model, starting from `start`.
inline RegistrationResult register_deterministic(const LowRankGp& gp, const TargetData& target,
                                                 const RegistrationConfig& config, RegistrationState start) {
  config.validate();
  RegistrationResult result;
  result.state = std::move(start);
  initialize_schedule(result.state, gp, config, target);
  for (int it = 0; it < config.max_iterations; ++it) {
    const double sigma2 = result.state.sigma2();
    StepOutput step = gingr_step(result.state, gp, config, target);
    result.warnings.insert(result.warnings.end(), step.warnings.begin(), step.warnings.end());
    result.state = std::move(step.state);
    result.trace.push_back({result.state.iteration, sigma2, step.mean_dist, step.max_dist,
                            std::numeric_limits<double>::quiet_NaN(), -1});
    const double metric =
        config.stopping == StoppingRule::MeanDisplacement ? result.state.last_mean_displacement : step.mean_dist;
    if (metric < config.tolerance) {
      result.converged = true;
      break;
    }
  }
  return finish(gp, config, std::move(result));
}

inline RegistrationResult register_deterministic(const LowRankGp& gp, const TriangleMesh& target,
                                                 const RegistrationConfig& config) {
  return register_deterministic(gp, TargetData(target), config, initial_state(gp, config));
}

inline RegistrationResult register_deterministic(const TriangleMesh& reference, const TriangleMesh& target,
                                                 const RegistrationConfig& config) {
  config.validate();
  const LowRankGp gp = build_prior(config.prior, reference);
  return register_deterministic(gp, target, config);
}

// ---------------------------------------------------------------------------
// Probabilistic mode

/// Independent point likelihood: every target point is scored by its
/// distance to the deformed reference surface.
struct PointLikelihood {
  double variance = 1.0;

  bool enabled() const { return std::isfinite(variance); }

  struct Value {
    double log_likelihood = 0.0;
    double mean_dist = 0.0;
    double max_dist = 0.0;
  };

  Value operator()(const TriangleMesh& deformed, const Matrix& target_points) const {
    Value v;
    if (!enabled()) {
      v.mean_dist = v.max_dist = std::numeric_limits<double>::quiet_NaN();
      return v;
    }
    const SurfaceLocator locator(deformed);
    double sum = 0.0, sq = 0.0;
    for (Eigen::Index j = 0; j < target_points.rows(); ++j) {
      const double dist = locator.closest(target_points.row(j).transpose()).distance;
      sum += dist;
      sq += dist * dist;
      v.max_dist = std::max(v.max_dist, dist);
    }
    const double m = static_cast<double>(target_points.rows());
    v.mean_dist = m > 0 ? sum / m : 0.0;
    v.log_likelihood = -0.5 * sq / variance - 0.5 * m * std::log(2.0 * std::numbers::pi * variance);
    return v;
  }
};

/// Cached evaluation of a chain state.
struct ChainPoint {
  Vector alpha;
  double log_likelihood = 0.0;
  double log_posterior = 0.0;
  double mean_dist = 0.0;
  double max_dist = 0.0;
  std::optional<PosteriorGp> informed; // coefficient posterior conditioned at alpha
};

/// Fixed pieces of a probabilistic run: transform, trend and proposal noise.
struct ChainContext {
  const LowRankGp* gp = nullptr;
  const TargetData* target = nullptr;
  const RegistrationConfig* config = nullptr;
  SimilarityTransform transform;
  Vector trend;
  double sigma2 = 1.0;
  PointLikelihood likelihood;
  Vector step_scales;
  Matrix rw_factor;   // empty for the isotropic walk
  Matrix rw_inverse;
  double rw_log_det = 0.0;

  Matrix positions(const Vector& alpha) const {
    return transform.apply(
        Matrix(gp->reference.points() + local_field(*gp, config->prior.trend, alpha, trend)));
  }

  /// Regression posterior at alpha with the trend held fixed.
  std::optional<PosteriorGp> informed_posterior(const Vector& alpha) const {
    RegistrationState s;
    s.alpha = alpha;
    s.transform = transform;
    s.trend = trend;
    s.schedule = config->schedule;
    s.schedule.current = sigma2;
    const Matrix& x_ref = gp->reference.points();
    const Matrix local = x_ref + local_field(*gp, config->prior.trend, alpha, trend);
    RegistrationConfig cfg = *config;
    cfg.rigid_correction = false;
    if (cfg.correspondence.estimator == EstimatorKind::Bcpd) cfg.correspondence.estimator = EstimatorKind::Cpd;
    try {
      detail::Correspondences c = detail::estimate(s, *gp, cfg, *target, local);
      const Matrix tf = trend_field(config->prior.trend, trend, x_ref);
      auto obs = c.set.observations();
      for (auto& o : obs) o.displacement -= tf.row(o.index).transpose();
      return regress(*gp, obs, TrendBasis::None);
    } catch (const Error& e) {
      if (!e.is_numerical()) throw;
      return std::nullopt;
    }
  }

  ChainPoint evaluate(const Vector& alpha, bool need_informed) const {
    ChainPoint p;
    p.alpha = alpha;
    const auto lik = likelihood(gp->reference.with_points(positions(alpha)), target->points());
    p.log_likelihood = lik.log_likelihood;
    p.mean_dist = lik.mean_dist;
    p.max_dist = lik.max_dist;
    p.log_posterior = p.log_likelihood + log_prior(alpha);
    if (need_informed) p.informed = informed_posterior(alpha);
    return p;
  }

  double log_random_walk(const Vector& to, const Vector& from) const {
    Vector z = to - from;
    if (rw_factor.size() > 0) z = rw_inverse * z;
    z = z.cwiseQuotient(step_scales);
    return -0.5 * z.squaredNorm() - step_scales.array().log().sum() - rw_log_det -
           0.5 * static_cast<double>(z.size()) * std::log(2.0 * std::numbers::pi);
  }

  /// Random-walk step for standard normal z.
  Vector random_walk_step(const Vector& z) const {
    const Vector scaled = step_scales.cwiseProduct(z);
    return rw_factor.size() > 0 ? Vector(rw_factor * scaled) : scaled;
  }

  /// Shapes the random walk by the posterior covariance at alpha.
  void precondition(const Vector& alpha) {
    const auto post = informed_posterior(alpha);
    require(post.has_value(), ErrorKind::Numerical, "preconditioned random walk: no correspondences at the start state");
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (post->covariance + post->covariance.transpose()));
    const Vector e = es.eigenvalues().cwiseMax(1e-12);
    rw_factor = es.eigenvectors() * e.cwiseSqrt().asDiagonal();
    rw_inverse = e.cwiseSqrt().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
    rw_log_det = 0.5 * e.array().log().sum();
  }

  /// log q(to | from) for the proposal mixture. A state without an informed
  /// posterior (no usable correspondences) proposes by random walk only.
  double log_proposal(const Vector& to, const ChainPoint& from) const {
    const auto& p = config->probabilistic;
    if (!from.informed || p.informed_weight <= 0.0) return log_random_walk(to, from.alpha);
    constexpr double minus_inf = -std::numeric_limits<double>::infinity();
    double terms[2] = {std::log(p.informed_weight) + log_density(*from.informed, to), minus_inf};
    if (p.random_walk_weight > 0.0) terms[1] = std::log(p.random_walk_weight) + log_random_walk(to, from.alpha);
    const double top = std::max(terms[0], terms[1]);
    if (!std::isfinite(top)) return top;
    return top + std::log(std::exp(terms[0] - top) + std::exp(terms[1] - top));
  }

  /// log of the Metropolis-Hastings ratio for moving from `a` to `b`.
  double log_acceptance_ratio(const ChainPoint& a, const ChainPoint& b) const {
    return (b.log_posterior - a.log_posterior) + (log_proposal(a.alpha, b) - log_proposal(b.alpha, a));
  }
};

struct MhOutcome {
  bool accepted = false;
  double log_ratio = 0.0;
  bool used_informed = false;
  std::string diagnostic;
};

/// One Metropolis-Hastings step from `current` (updated in place).
template <class Rng>
MhOutcome mh_step(ChainPoint& current, const ChainContext& ctx, Rng& rng) {
  const auto& p = ctx.config->probabilistic;
  const bool informed = p.informed_weight > 0.0;
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  MhOutcome out;

  Vector proposal;
  const double pick = uniform(rng);
  if (informed && pick < p.informed_weight && current.informed) {
    out.used_informed = true;
    proposal = sample(*current.informed, rng);
  } else {
    Vector z(current.alpha.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
    proposal = current.alpha + ctx.random_walk_step(z);
  }

  ChainPoint candidate = ctx.evaluate(proposal, informed);
  if (informed && !candidate.informed) out.diagnostic = "no correspondences at the proposed state; random walk only there";
  out.log_ratio = ctx.log_acceptance_ratio(current, candidate);
  if (std::isnan(out.log_ratio) || out.log_ratio == -std::numeric_limits<double>::infinity()) {
    out.diagnostic = "non-finite log acceptance ratio; proposal rejected";
    return out;
  }
  const double u = uniform(rng);
  if (out.log_ratio >= 0.0 || std::log(u) < out.log_ratio) {
    out.accepted = true;
    current = std::move(candidate);
  }
  return out;
}

inline Vector expand_step_scales(const std::vector<double>& scales, int r) {
  require(scales.size() == 1 || static_cast<int>(scales.size()) == r, ErrorKind::Config,
          "probabilistic.step_scales needs one value or one per coefficient (" + std::to_string(r) + ")");
  Vector v(r);
  for (int i = 0; i < r; ++i) v(i) = scales.size() == 1 ? scales[0] : scales[static_cast<std::size_t>(i)];
  return v;
}

struct ProbabilisticResult {
  RegistrationResult result;
  PosteriorChain chain;
  RegistrationResult warm_start;
};

/// Metropolis-Hastings exploration of the coefficient posterior. The
/// transform and trend come from a deterministic warm start and stay fixed.
template <class Rng>
ProbabilisticResult register_probabilistic(const LowRankGp& gp, const TargetData& target,
                                           const RegistrationConfig& config, Rng& rng) {
  config.validate();
  require(config.mode == RegistrationMode::Probabilistic, ErrorKind::Config,
          "register_probabilistic needs mode probabilistic");
  const auto& ps = config.probabilistic;
  ProbabilisticResult out;

  RegistrationState start = initial_state(gp, config);
  if (ps.warm_start) {
    RegistrationConfig warm = config;
    warm.mode = RegistrationMode::Deterministic;
    if (ps.warm_start_iterations >= 0) warm.max_iterations = std::max(1, ps.warm_start_iterations);
    out.warm_start = register_deterministic(gp, target, warm, start);
    start = out.warm_start.state;
  } else {
    initialize_schedule(start, gp, config, target);
  }

  ChainContext ctx;
  ctx.gp = &gp;
  ctx.target = &target;
  ctx.config = &config;
  ctx.transform = start.transform;
  ctx.trend = start.trend;
  ctx.sigma2 = ps.proposal_sigma2 > 0.0 ? ps.proposal_sigma2 : start.sigma2();
  ctx.likelihood.variance = ps.likelihood_variance;
  ctx.step_scales = expand_step_scales(ps.step_scales, gp.rank());
  if (ps.random_walk == RandomWalk::Preconditioned) ctx.precondition(start.alpha);

  const bool informed = ps.informed_weight > 0.0;
  ChainPoint current = ctx.evaluate(start.alpha, informed);
  require(std::isfinite(current.log_posterior), ErrorKind::Numerical, "initial chain state has non-finite density");

  PosteriorChain& chain = out.chain;
  chain.burn_in = config.burn_in();
  chain.thinning = ps.thinning;
  chain.trend_field = trend_field(config.prior.trend, ctx.trend, gp.reference.points());
  chain.map = {current.alpha, ctx.transform, current.log_posterior};

  RegistrationResult& res = out.result;
  for (int it = 0; it < ps.n_samples; ++it) {
    const MhOutcome step = mh_step(current, ctx, rng);
    ++chain.steps;
    if (step.accepted) ++chain.accepted;
    if (!step.diagnostic.empty() && res.warnings.size() < 20) res.warnings.push_back(step.diagnostic);
    if (current.log_posterior > chain.map.log_posterior) chain.map = {current.alpha, ctx.transform, current.log_posterior};
    if (it >= chain.burn_in && (it - chain.burn_in) % chain.thinning == 0)
      chain.samples.push_back({current.alpha, ctx.transform, current.log_posterior});
    res.trace.push_back({it + 1, ctx.sigma2, current.mean_dist, current.max_dist, current.log_posterior,
                         step.accepted ? 1 : 0});
  }

  res.state = start;
  res.state.alpha = chain.map.alpha;
  res.state.iteration = ps.n_samples;
  res.converged = true;
  out.result = finish(gp, config, std::move(res));
  return out;
}

/// Per-vertex trace of the covariance of deformed positions over the
/// retained samples.
inline Vector posterior_uncertainty(const PosteriorChain& chain, const LowRankGp& gp) {
  require(!chain.samples.empty(), ErrorKind::Validation, "posterior uncertainty needs a non-empty chain");
  const int n = gp.size();
  const int d = gp.dim();
  Matrix sum = Matrix::Zero(n, d);
  Vector sq = Vector::Zero(n);
  for (const auto& s : chain.samples) {
    Matrix field = instance(gp, s.alpha);
    if (chain.trend_field.size() > 0) field += chain.trend_field;
    const Matrix pos = s.transform.apply(Matrix(gp.reference.points() + field));
    sum += pos;
    sq += pos.rowwise().squaredNorm();
  }
  const double k = static_cast<double>(chain.samples.size());
  const Matrix mean = sum / k;
  Vector var = (sq / k - mean.rowwise().squaredNorm()).cwiseMax(0.0);
  return var;
}

// ---------------------------------------------------------------------------
// Multi-resolution

/// Registers on decimated copies of the reference (coarse to fine), sharing
/// coefficients through row restrictions of the full model, then
/// interpolates the final coarse field with the full model.
inline RegistrationResult register_multires(const LowRankGp& gp_full, const TriangleMesh& target,
                                            const RegistrationConfig& config, const std::vector<int>& levels) {
  config.validate();
  require(!levels.empty(), ErrorKind::Config, "multi-resolution needs at least one level");
  for (std::size_t k = 0; k < levels.size(); ++k) {
    require(levels[k] >= 1 && levels[k] <= gp_full.size(), ErrorKind::Config,
            "multi-resolution level " + std::to_string(levels[k]) + " outside [1, n]");
    require(k == 0 || levels[k] > levels[k - 1], ErrorKind::Config, "multi-resolution levels must be ascending");
  }
  const TargetData data(target);
  RegistrationState state = initial_state(gp_full, config);
  RegistrationResult last;
  std::vector<TraceEntry> trace;
  std::vector<std::string> warnings;
  Decimation level_map;
  for (int count : levels) {
    level_map = decimate(gp_full.reference, count, config.seed);
    const LowRankGp gp = count == gp_full.size()
                             ? gp_full
                             : restrict_to(gp_full, level_map.coarse_to_fine, level_map.mesh.triangles());
    RegistrationState s = state;
    s.schedule = state.iteration == 0 ? config.schedule : state.schedule;
    last = register_deterministic(gp, data, config, s);
    for (auto t : last.trace) {
      t.iteration = static_cast<int>(trace.size()) + 1;
      trace.push_back(t);
    }
    warnings.insert(warnings.end(), last.warnings.begin(), last.warnings.end());
    state = last.state;
    state.iteration = static_cast<int>(trace.size());
  }

  RegistrationResult out;
  out.trace = std::move(trace);
  out.warnings = std::move(warnings);
  out.converged = last.converged;
  out.state = state;
  if (levels.back() == gp_full.size()) {
    out.field = last.field;
    out.deformed = last.deformed;
    return out;
  }
  const Matrix coarse_field = last.field;
  out.field = interpolate_to(gp_full, level_map.coarse_to_fine, coarse_field, 1e-8, config.prior.trend);
  out.deformed = gp_full.reference.with_points(state.transform.apply(Matrix(gp_full.reference.points() + out.field)));
  return out;
}

}  // namespace gingr
