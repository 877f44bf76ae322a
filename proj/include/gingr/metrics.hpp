#pragma once

#include <algorithm>
#include <vector>

#include <Eigen/Dense>

#include "gingr/errors.hpp"
#include "gingr/geometry.hpp"
#include "gingr/spatial.hpp"

namespace gingr {

/// Mean distance between index-corresponded positions, optionally over a mask.
inline double mean_euclidean(const Matrix& a, const Matrix& b, const std::vector<bool>& mask = {}) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::Validation, "mean_euclidean: shape mismatch");
  double sum = 0.0;
  int count = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    if (!mask.empty() && !mask[static_cast<std::size_t>(i)]) continue;
    sum += (a.row(i) - b.row(i)).norm();
    ++count;
  }
  return count > 0 ? sum / count : 0.0;
}

/// Distance from every vertex of `from` to the surface (or points) of `to`.
inline Vector surface_distances(const TriangleMesh& from, const TriangleMesh& to) {
  const SurfaceLocator locator(to);
  Vector out(from.size());
  for (int i = 0; i < from.size(); ++i) out(i) = locator.closest(from.points().row(i).transpose()).distance;
  return out;
}

inline double mean_surface_distance(const TriangleMesh& from, const TriangleMesh& to) {
  return surface_distances(from, to).mean();
}

/// Symmetric Hausdorff distance between the two vertex sets measured against
/// the other geometry's surface.
inline double hausdorff(const TriangleMesh& a, const TriangleMesh& b) {
  return std::max(surface_distances(a, b).maxCoeff(), surface_distances(b, a).maxCoeff());
}

}  // namespace gingr
