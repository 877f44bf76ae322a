#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gingr/errors.hpp"
#include "gingr/geometry.hpp"
#include "gingr/gpmm.hpp"
#include "gingr/spatial.hpp"

namespace gingr {

enum class ExclusionReason { Normal, Boundary, SelfIntersection, TwoWay, LowMass, Landmark };

inline const char* to_string(ExclusionReason r) {
  switch (r) {
    case ExclusionReason::Normal: return "normal";
    case ExclusionReason::Boundary: return "boundary";
    case ExclusionReason::SelfIntersection: return "self_intersection";
    case ExclusionReason::TwoWay: return "two_way";
    case ExclusionReason::LowMass: return "low_mass";
    case ExclusionReason::Landmark: return "landmark";
  }
  return "unknown";
}

struct CorrespondencePair {
  int index = 0;       // reference vertex
  Vector target;       // matched target point (target frame)
  Vector displacement; // observed deformation at the vertex
  double variance = 1.0;
};

struct CorrespondenceSet {
  std::vector<CorrespondencePair> pairs;
  std::vector<std::pair<int, ExclusionReason>> excluded;

  bool empty() const { return pairs.empty(); }
  std::size_t size() const { return pairs.size(); }

  /// Observed field restricted to the included vertices (one row per pair).
  Matrix observed_field() const {
    if (pairs.empty()) return {};
    Matrix out(static_cast<Eigen::Index>(pairs.size()), pairs.front().displacement.size());
    for (std::size_t k = 0; k < pairs.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = pairs[k].displacement.transpose();
    return out;
  }

  std::vector<Observation> observations() const {
    std::vector<Observation> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.push_back({p.index, p.displacement, p.variance});
    return out;
  }

  std::map<std::string, int> exclusion_counts() const {
    std::map<std::string, int> out;
    for (const auto& e : excluded) ++out[to_string(e.second)];
    return out;
  }

  std::string exclusion_summary() const {
    std::string s;
    for (const auto& [reason, count] : exclusion_counts()) s += (s.empty() ? "" : ", ") + reason + "=" + std::to_string(count);
    return s.empty() ? "none" : s;
  }
};

inline void require_nonempty(const CorrespondenceSet& set, const std::string& who) {
  if (set.empty())
    fail(ErrorKind::EmptyCorrespondence, who + ": every reference point was filtered (" + set.exclusion_summary() + ")");
}

// ---------------------------------------------------------------------------
// Closest point

struct FilterConfig {
  bool normal = true;
  double max_normal_angle_deg = 60.0;
  bool boundary = true;
  bool self_intersection = false;
  bool two_way = false;
  double two_way_factor = 2.0; // multiples of the median edge length
};

/// Per-target data that stays fixed across iterations.
class TargetIndex {
 public:
  explicit TargetIndex(TriangleMesh target) : target_(std::move(target)), locator_(target_) {
    if (target_.has_triangles()) {
      for (const auto& [edge, count] : edge_use_counts(target_))
        if (count == 1) boundary_edges_.insert(edge);
      boundary_vertex_.assign(static_cast<std::size_t>(target_.size()), false);
      for (int v : boundary_vertices(target_)) boundary_vertex_[static_cast<std::size_t>(v)] = true;
      if (target_.dim() == 3) face_normals_ = face_normals(target_);
    }
  }

  const TriangleMesh& mesh() const { return target_; }
  const SurfaceLocator& locator() const { return locator_; }
  bool has_face_normals() const { return face_normals_.rows() > 0; }
  Vec3 face_normal(int t) const { return face_normals_.row(t).transpose(); }

  /// Whether a closest-point hit lies on a boundary edge or vertex.
  bool on_boundary(const SurfaceLocator::Hit& hit, double tol = 1e-9) const {
    if (hit.triangle < 0 || boundary_edges_.empty()) return false;
    const Triangle& tri = target_.triangles()[static_cast<std::size_t>(hit.triangle)];
    for (int k = 0; k < 3; ++k) {
      // barycentric weight k vanishing puts the point on the edge opposite corner k
      if (hit.barycentric(k) <= tol) {
        const int a = tri[(k + 1) % 3], b = tri[(k + 2) % 3];
        if (boundary_edges_.count({std::min(a, b), std::max(a, b)})) return true;
      }
      if (hit.barycentric(k) >= 1.0 - tol && boundary_vertex_[static_cast<std::size_t>(tri[k])]) return true;
    }
    return false;
  }

 private:
  TriangleMesh target_;
  SurfaceLocator locator_;
  std::set<Edge> boundary_edges_;
  std::vector<bool> boundary_vertex_;
  Matrix face_normals_;
};

namespace detail {

inline double spacing_scale(const TriangleMesh& mesh) {
  if (mesh.has_triangles()) return median_edge_length(mesh);
  const Matrix& p = mesh.points();
  std::vector<double> nn(static_cast<std::size_t>(p.rows()), std::numeric_limits<double>::infinity());
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = 0; j < p.rows(); ++j)
      if (i != j) nn[static_cast<std::size_t>(i)] = std::min(nn[static_cast<std::size_t>(i)], (p.row(i) - p.row(j)).norm());
  auto mid = nn.begin() + static_cast<std::ptrdiff_t>(nn.size() / 2);
  std::nth_element(nn.begin(), mid, nn.end());
  return std::isfinite(*mid) ? *mid : 0.0;
}

}  // namespace detail

/// Nearest target point for every vertex of the deformed reference, with the
/// configured filters applied. Displacements are target - deformed position.
inline CorrespondenceSet closest_point(const TriangleMesh& deformed_ref, const TargetIndex& target,
                                       const FilterConfig& filters, double variance) {
  require(variance > 0.0, ErrorKind::Parameter, "closest_point: variance must be positive");
  require(deformed_ref.dim() == target.mesh().dim(), ErrorKind::Validation,
          "closest_point: reference and target dimensions differ");
  const int n = deformed_ref.size();
  const Matrix& x = deformed_ref.points();

  const bool use_normals = filters.normal && deformed_ref.has_triangles() && target.has_face_normals() &&
                           deformed_ref.dim() == 3;
  VertexNormals ref_normals;
  if (use_normals) ref_normals = vertex_normals(deformed_ref);
  const double cos_limit = std::cos(filters.max_normal_angle_deg * std::numbers::pi / 180.0);

  std::optional<TriangleBvh> self_bvh;
  if (filters.self_intersection && deformed_ref.has_triangles()) self_bvh.emplace(deformed_ref);

  std::optional<SurfaceLocator> back;
  double back_limit = 0.0;
  if (filters.two_way) {
    back.emplace(deformed_ref);
    back_limit = filters.two_way_factor * detail::spacing_scale(deformed_ref);
  }

  CorrespondenceSet out;
  out.pairs.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Vector q = x.row(i).transpose();
    const auto hit = target.locator().closest(q);
    if (use_normals && hit.triangle >= 0 && ref_normals.defined[static_cast<std::size_t>(i)]) {
      const Vec3 nr = ref_normals.normals.row(i).transpose();
      if (nr.dot(target.face_normal(hit.triangle)) < cos_limit) {
        out.excluded.emplace_back(i, ExclusionReason::Normal);
        continue;
      }
    }
    if (filters.boundary && target.on_boundary(hit)) {
      out.excluded.emplace_back(i, ExclusionReason::Boundary);
      continue;
    }
    if (self_bvh && hit.distance > 0.0 && self_bvh->segment_hits(lift3(q), lift3(hit.point), i)) {
      out.excluded.emplace_back(i, ExclusionReason::SelfIntersection);
      continue;
    }
    if (back) {
      const auto b = back->closest(hit.point);
      if ((b.point - q).norm() > back_limit) {
        out.excluded.emplace_back(i, ExclusionReason::TwoWay);
        continue;
      }
    }
    out.pairs.push_back({i, hit.point, hit.point - q, variance});
  }
  return out;
}

inline CorrespondenceSet closest_point(const TriangleMesh& deformed_ref, const TriangleMesh& target,
                                       const FilterConfig& filters, double variance) {
  return closest_point(deformed_ref, TargetIndex(target), filters, variance);
}

/// Known index correspondences: vertex i of the reference matches row i of
/// `targets`. Vertices with mask false are left out.
inline CorrespondenceSet indexed_pairs(const Matrix& positions, const Matrix& targets, double variance,
                                       const std::vector<bool>& mask = {}) {
  require(positions.rows() == targets.rows() && positions.cols() == targets.cols(), ErrorKind::Validation,
          "indexed correspondences need equally shaped reference and target");
  require(variance > 0.0, ErrorKind::Parameter, "indexed correspondences: variance must be positive");
  require(mask.empty() || mask.size() == static_cast<std::size_t>(positions.rows()), ErrorKind::Validation,
          "indexed correspondences: mask length mismatch");
  CorrespondenceSet out;
  for (Eigen::Index i = 0; i < positions.rows(); ++i) {
    if (!mask.empty() && !mask[static_cast<std::size_t>(i)]) continue;
    const Vector y = targets.row(i).transpose();
    out.pairs.push_back({static_cast<int>(i), y, y - positions.row(i).transpose(), variance});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Soft correspondences

struct SoftAssignment {
  Matrix p;  // n x m
  Vector p1; // row sums
  double w = 0.0;
};

/// Volume of the axis-aligned bounding box of the target; degenerate extents
/// are floored so flat targets keep a positive volume.
inline double bounding_volume(const Matrix& points) {
  const Vector extent = points.colwise().maxCoeff() - points.colwise().minCoeff();
  const double diag = extent.norm();
  const double floor = diag > 0.0 ? 1e-6 * diag : 1.0;
  double v = 1.0;
  for (Eigen::Index c = 0; c < extent.size(); ++c) v *= std::max(extent(c), floor);
  return v;
}

/// Mixture responsibilities p_ij of reference point i for target point j,
/// with a uniform outlier component of weight w.
inline SoftAssignment cpd_probabilities(const Matrix& x, const Matrix& y, double sigma2, double w) {
  require(sigma2 > 0.0 && std::isfinite(sigma2), ErrorKind::Parameter, "cpd: sigma2 must be positive");
  require(w >= 0.0 && w < 1.0, ErrorKind::Parameter, "cpd: outlier weight must lie in [0, 1)");
  require(x.cols() == y.cols(), ErrorKind::Validation, "cpd: dimension mismatch");
  const auto n = x.rows();
  const auto m = y.rows();
  const double d = static_cast<double>(x.cols());
  double log_c = -std::numeric_limits<double>::infinity();
  if (w > 0.0) {
    log_c = 0.5 * d * std::log(2.0 * std::numbers::pi * sigma2) + std::log(w / (1.0 - w)) +
            std::log(static_cast<double>(n) / bounding_volume(y));
  }
  SoftAssignment out{Matrix(n, m), Vector::Zero(n), w};
  Vector a(n);
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) a(i) = -(x.row(i) - y.row(j)).squaredNorm() / (2.0 * sigma2);
    const double top = std::max(a.maxCoeff(), log_c);
    double denom = (a.array() - top).exp().sum();
    if (w > 0.0) denom += std::exp(log_c - top);
    out.p.col(j) = ((a.array() - top).exp() / denom).matrix();
  }
  out.p1 = out.p.rowwise().sum();
  return out;
}

constexpr double kMassFloor = 1e-8;

/// Soft-matched targets (P X_T)_i / P1_i.
inline Matrix soft_targets(const SoftAssignment& assign, const Matrix& y) {
  Matrix t = assign.p * y;
  for (Eigen::Index i = 0; i < t.rows(); ++i)
    if (assign.p1(i) > kMassFloor) t.row(i) /= assign.p1(i);
  return t;
}

/// Observation U^_i = (P X_T)_i / P1_i - x^_i with noise lambda sigma2 / P1_i.
inline CorrespondenceSet cpd_observation(const SoftAssignment& assign, const Matrix& y, const Matrix& x,
                                         double lambda, double sigma2) {
  require(lambda > 0.0, ErrorKind::Parameter, "cpd: lambda must be positive");
  require(sigma2 > 0.0, ErrorKind::Parameter, "cpd: sigma2 must be positive");
  const Matrix t = soft_targets(assign, y);
  CorrespondenceSet out;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (!(assign.p1(i) > kMassFloor)) {
      out.excluded.emplace_back(static_cast<int>(i), ExclusionReason::LowMass);
      continue;
    }
    const Vector ti = t.row(i).transpose();
    out.pairs.push_back({static_cast<int>(i), ti, ti - x.row(i).transpose(), lambda * sigma2 / assign.p1(i)});
  }
  return out;
}

/// Similarity transform from the current local shape (reference plus local
/// deformation) to the soft-matched targets. nullopt when degenerate.
inline std::optional<SimilarityTransform> bcpd_transform_update(const SoftAssignment& assign, const Matrix& y,
                                                                const Matrix& local_positions) {
  const Matrix t = soft_targets(assign, y);
  std::vector<int> rows;
  for (Eigen::Index i = 0; i < t.rows(); ++i)
    if (assign.p1(i) > kMassFloor) rows.push_back(static_cast<int>(i));
  try {
    return umeyama_align(select_rows(local_positions, rows), select_rows(t, rows), true);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::Alignment) throw;
    return std::nullopt;
  }
}

struct BcpdObservation {
  CorrespondenceSet set;
  SimilarityTransform transform; // updated transform
  bool transform_updated = true; // false when Umeyama was degenerate
};

/// Residual observation in the reference frame, U^_i = T^{-1}((P X_T)_i / P1_i) - x_{R,i},
/// with noise lambda sigma2 / (s^2 P1_i). Also returns the transform refit from
/// `local_positions` (X_R plus the previous local deformation).
inline BcpdObservation bcpd_observation(const SoftAssignment& assign, const Matrix& y, const Matrix& x_ref,
                                        const SimilarityTransform& transform, double lambda, double sigma2,
                                        const Matrix& local_positions) {
  require(lambda > 0.0, ErrorKind::Parameter, "bcpd: lambda must be positive");
  require(sigma2 > 0.0, ErrorKind::Parameter, "bcpd: sigma2 must be positive");
  require(transform.is_valid(1e-8), ErrorKind::Validation, "bcpd: invalid similarity transform");
  const Matrix t = soft_targets(assign, y);
  const SimilarityTransform inv = transform.inverse();
  const double s2 = transform.scale * transform.scale;
  BcpdObservation out{{}, transform, false};
  for (Eigen::Index i = 0; i < x_ref.rows(); ++i) {
    if (!(assign.p1(i) > kMassFloor)) {
      out.set.excluded.emplace_back(static_cast<int>(i), ExclusionReason::LowMass);
      continue;
    }
    const Vector ti = t.row(i).transpose();
    out.set.pairs.push_back(
        {static_cast<int>(i), ti, inv.apply(ti) - x_ref.row(i).transpose(), lambda * sigma2 / (s2 * assign.p1(i))});
  }
  if (const auto updated = bcpd_transform_update(assign, y, local_positions)) {
    out.transform = *updated;
    out.transform_updated = true;
  }
  return out;
}

/// ICP-A observation correction U^ = X_c - (X_R + sigma2 K^{-1} X_R) for the
/// scalar n x n kernel matrix K = D (L^+ (x) I) D^T. sigma2 = 1 gives the
/// textbook form.
inline CorrespondenceSet icp_a_observation(const CorrespondenceSet& closest, const Matrix& x_ref,
                                           const Matrix& kernel_matrix, double sigma2 = 1.0) {
  const auto n = x_ref.rows();
  require(kernel_matrix.rows() == n && kernel_matrix.cols() == n, ErrorKind::Validation,
          "icp_a: kernel matrix must be n x n");
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  for (const auto& p : closest.pairs) seen[static_cast<std::size_t>(p.index)] = true;
  require(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }), ErrorKind::Validation,
          "icp_a: the correction needs a pair for every reference vertex");

  Eigen::LDLT<Matrix> ldlt(kernel_matrix);
  bool ok = ldlt.info() == Eigen::Success && ldlt.isPositive() &&
            ldlt.vectorD().minCoeff() > 1e-14 * ldlt.vectorD().maxCoeff();
  if (!ok) {
    const double ridge = 1e-10 * std::max(kernel_matrix.trace() / static_cast<double>(n), 1.0);
    ldlt.compute(kernel_matrix + ridge * Matrix::Identity(n, n));
    ok = ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.vectorD().minCoeff() > 0.0;
  }
  require(ok, ErrorKind::Numerical, "icp_a: kernel matrix is singular");
  const Matrix correction = sigma2 * ldlt.solve(x_ref);

  CorrespondenceSet out = closest;
  for (auto& p : out.pairs)
    p.displacement = p.target - (x_ref.row(p.index) + correction.row(p.index)).transpose();
  return out;
}

// ---------------------------------------------------------------------------
// Landmarks

/// Appends landmark pairs. Reference landmarks snap to the nearest reference
/// vertex; the pair replaces any estimator pair at that vertex. Displacements
/// are measured from `base_positions` in the frame reached by `target_to_frame`.
inline CorrespondenceSet add_landmarks(const CorrespondenceSet& set, const std::vector<Landmark>& reference_landmarks,
                                       const std::vector<Landmark>& target_landmarks, const Matrix& reference_points,
                                       const Matrix& base_positions,
                                       const SimilarityTransform* target_to_frame = nullptr) {
  if (reference_landmarks.empty() && target_landmarks.empty()) return set;
  std::map<std::string, const Landmark*> targets;
  for (const auto& lm : target_landmarks) {
    lm.validate();
    require(targets.emplace(lm.id, &lm).second, ErrorKind::Validation, "duplicate target landmark id '" + lm.id + "'");
  }
  std::set<std::string> used;
  std::map<int, CorrespondencePair> added;
  const KdTree tree(reference_points);
  const double frame_scale = target_to_frame ? target_to_frame->scale : 1.0;
  for (const auto& lm : reference_landmarks) {
    lm.validate();
    require(used.insert(lm.id).second, ErrorKind::Validation, "duplicate reference landmark id '" + lm.id + "'");
    const auto it = targets.find(lm.id);
    require(it != targets.end(), ErrorKind::Validation, "landmark '" + lm.id + "' has no target counterpart");
    const int idx = tree.nearest(lm.point).index;
    const Vector y = it->second->point;
    const Vector y_frame = target_to_frame ? target_to_frame->apply(y) : y;
    const double var = std::max(lm.variance + it->second->variance, 1e-12) * frame_scale * frame_scale;
    added[idx] = {idx, y, y_frame - base_positions.row(idx).transpose(), var};
  }
  for (const auto& [id, lm] : targets)
    require(used.count(id) != 0, ErrorKind::Validation, "landmark '" + id + "' has no reference counterpart");

  CorrespondenceSet out;
  out.excluded = set.excluded;
  for (const auto& p : set.pairs)
    if (!added.count(p.index)) out.pairs.push_back(p);
  for (const auto& [idx, p] : added) out.pairs.push_back(p);
  std::sort(out.pairs.begin(), out.pairs.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
  out.excluded.erase(std::remove_if(out.excluded.begin(), out.excluded.end(),
                                    [&](const auto& e) { return added.count(e.first) != 0; }),
                     out.excluded.end());
  return out;
}

// ---------------------------------------------------------------------------
// Sigma schedules

enum class ScheduleKind { FixedList, Geometric, CpdResidual };

/// How a data-driven schedule picks its first value.
enum class InitialVariance { Given, AllPairs, NearestNeighbour };

struct SigmaSchedule {
  ScheduleKind kind = ScheduleKind::Geometric;
  std::vector<double> values; // fixed list
  double initial = 1.0;       // geometric / cpd_residual starting value
  double rate = 0.9;
  double floor = 1e-8;
  InitialVariance start = InitialVariance::Given;
  // state
  double current = 1.0;
  std::size_t step = 0;

  static SigmaSchedule fixed_list(std::vector<double> list) {
    require(!list.empty(), ErrorKind::Parameter, "fixed sigma schedule needs at least one value");
    for (double v : list) require(v > 0.0 && std::isfinite(v), ErrorKind::Parameter, "sigma2 values must be positive");
    SigmaSchedule s;
    s.kind = ScheduleKind::FixedList;
    s.values = std::move(list);
    s.initial = s.current = s.values.front();
    s.floor = *std::min_element(s.values.begin(), s.values.end());
    return s;
  }

  static SigmaSchedule geometric(double sigma0, double rate, double floor) {
    require(sigma0 > 0.0, ErrorKind::Parameter, "geometric schedule: initial sigma2 must be positive");
    require(rate > 0.0 && rate < 1.0, ErrorKind::Parameter, "geometric schedule: rate must lie in (0, 1)");
    require(floor > 0.0, ErrorKind::Parameter, "geometric schedule: floor must be positive");
    SigmaSchedule s;
    s.kind = ScheduleKind::Geometric;
    s.initial = s.current = std::max(sigma0, floor);
    s.rate = rate;
    s.floor = floor;
    return s;
  }

  /// initial <= 0 means "estimate from the data on the first iteration"
  /// using `start`.
  static SigmaSchedule cpd_residual(double initial, double floor, InitialVariance start = InitialVariance::AllPairs) {
    require(floor > 0.0, ErrorKind::Parameter, "cpd_residual schedule: floor must be positive");
    SigmaSchedule s;
    s.kind = ScheduleKind::CpdResidual;
    s.initial = s.current = initial;
    s.floor = floor;
    s.start = initial > 0.0 ? InitialVariance::Given : start;
    return s;
  }
};

struct ResidualStats {
  const Matrix* p = nullptr; // n x m
  const Matrix* y = nullptr; // m x d
  const Matrix* x = nullptr; // n x d
};

/// sum_ij |x_i - y_j|^2 / (d n m), the usual CPD starting variance.
inline double initial_cpd_sigma2(const Matrix& x, const Matrix& y) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < y.rows(); ++j) s += (x.row(i) - y.row(j)).squaredNorm();
  return s / (static_cast<double>(x.cols()) * static_cast<double>(x.rows()) * static_cast<double>(y.rows()));
}

/// sum_i min_j |x_i - y_j|^2 / (d n).
inline double nearest_neighbour_sigma2(const Matrix& x, const Matrix& y) {
  const KdTree tree(y);
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) s += tree.nearest(x.row(i).transpose()).squared_distance;
  return s / (static_cast<double>(x.cols()) * static_cast<double>(x.rows()));
}

/// Advances the schedule and returns the new sigma2.
inline double next_sigma(SigmaSchedule& schedule, const std::optional<ResidualStats>& stats = std::nullopt) {
  switch (schedule.kind) {
    case ScheduleKind::FixedList: {
      schedule.step = std::min(schedule.step + 1, schedule.values.size() - 1);
      schedule.current = schedule.values[schedule.step];
      break;
    }
    case ScheduleKind::Geometric: {
      ++schedule.step;
      schedule.current = std::max(schedule.rate * schedule.current, schedule.floor);
      break;
    }
    case ScheduleKind::CpdResidual: {
      require(stats && stats->p && stats->y && stats->x, ErrorKind::Validation,
              "cpd_residual schedule needs the soft assignment and both point sets");
      const Matrix& p = *stats->p;
      const Matrix& y = *stats->y;
      const Matrix& x = *stats->x;
      double num = 0.0;
      for (Eigen::Index j = 0; j < y.rows(); ++j)
        for (Eigen::Index i = 0; i < x.rows(); ++i)
          if (p(i, j) != 0.0) num += p(i, j) * (y.row(j) - x.row(i)).squaredNorm();
      const double mass = p.sum();
      const double v = mass > 0.0 ? num / (static_cast<double>(x.cols()) * mass) : schedule.floor;
      ++schedule.step;
      schedule.current = std::max(v, schedule.floor);
      break;
    }
  }
  return schedule.current;
}

}  // namespace gingr
