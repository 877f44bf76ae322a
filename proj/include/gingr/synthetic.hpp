#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gingr/errors.hpp"
#include "gingr/geometry.hpp"
#include "gingr/gpmm.hpp"
#include "gingr/kernels.hpp"

namespace gingr {

/// Subdivided icosahedron on a sphere: 10 * 4^level + 2 vertices.
inline TriangleMesh icosphere(int level, double radius = 1.0) {
  require(level >= 0 && level <= 6, ErrorKind::Parameter, "icosphere level must lie in [0, 6]");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Eigen::Vector3d> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                                    {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<Triangle> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                             {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                             {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int l = 0; l < level; ++l) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      const auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back((v[static_cast<std::size_t>(a)] + v[static_cast<std::size_t>(b)]).normalized());
      const int idx = static_cast<int>(v.size()) - 1;
      mid.emplace(key, idx);
      return idx;
    };
    std::vector<Triangle> next;
    next.reserve(f.size() * 4);
    for (const auto& tri : f) {
      const int a = midpoint(tri[0], tri[1]), b = midpoint(tri[1], tri[2]), c = midpoint(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  Matrix pts(static_cast<Eigen::Index>(v.size()), 3);
  for (std::size_t i = 0; i < v.size(); ++i) pts.row(static_cast<Eigen::Index>(i)) = radius * v[i].transpose();
  return TriangleMesh(std::move(pts), std::move(f));
}

/// Elongated bone-like surface: a stretched sphere with a narrow shaft and
/// two rounded ends, one of them offset like a femoral head.
inline TriangleMesh femur_proxy(int level = 3) {
  TriangleMesh s = icosphere(level);
  Matrix p = s.points();
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double z = p(i, 2);
    const double radial = 0.35 + 0.45 * std::pow(std::abs(z), 4.0);
    p(i, 0) *= radial;
    p(i, 1) *= radial;
    p(i, 2) = 2.0 * z;
    if (z > 0.6) p(i, 0) += 0.5 * (z - 0.6);
  }
  return s.with_points(std::move(p));
}

/// Hairpin strip: a long strip folded back on itself so the two legs are
/// close in space but far apart along the surface. Returns the mesh and the
/// leg gap.
struct HairpinStrip {
  TriangleMesh mesh;
  double gap = 0.0;
};

inline HairpinStrip hairpin_strip(int along = 40, int across = 4, double length = 4.0, double width = 0.6,
                                  double gap = 0.3) {
  require(along >= 4 && across >= 2, ErrorKind::Parameter, "hairpin strip needs at least 4 x 2 samples");
  const double radius = gap / 2.0;
  const double bend = std::numbers::pi * radius;
  const double total = 2.0 * length + bend;
  const int n = along * across;
  Matrix pts(n, 3);
  for (int a = 0; a < along; ++a) {
    const double s = total * a / (along - 1);
    double x, z;
    if (s <= length) {
      x = s;
      z = 0.0;
    } else if (s <= length + bend) {
      const double phi = (s - length) / radius;
      x = length + radius * std::sin(phi);
      z = radius - radius * std::cos(phi);
    } else {
      x = length - (s - length - bend);
      z = gap;
    }
    for (int c = 0; c < across; ++c) pts.row(a * across + c) << x, width * c / (across - 1), z;
  }
  std::vector<Triangle> tris;
  for (int a = 0; a + 1 < along; ++a) {
    for (int c = 0; c + 1 < across; ++c) {
      const int i = a * across + c;
      tris.push_back({i, i + across, i + 1});
      tris.push_back({i + 1, i + across, i + across + 1});
    }
  }
  return {TriangleMesh(std::move(pts), std::move(tris)), gap};
}

struct SyntheticSpec {
  std::string base = "sphere"; // sphere | femur_proxy
  int level = 3;
  double deformation = 0.1;    // std of the sampled smooth deformation
  double beta = 0.6;           // its length scale
  int rank = 30;
  double noise = 0.0;          // per-coordinate std of target noise
  double partiality = 0.0;     // fraction of target vertices cropped
  double scale = 1.0;
  double rotation_deg = 0.0;   // about rotation_axis
  Eigen::Vector3d rotation_axis{0.0, 0.0, 1.0};
  Eigen::Vector3d translation{0.0, 0.0, 0.0};
  std::uint64_t seed = 0;

  void validate() const {
    require(base == "sphere" || base == "femur_proxy", ErrorKind::Config,
            "synthetic base must be 'sphere' or 'femur_proxy'");
    require(level >= 0 && level <= 5, ErrorKind::Config, "synthetic level must lie in [0, 5]");
    require(deformation >= 0.0, ErrorKind::Config, "synthetic deformation must be non-negative");
    require(beta > 0.0, ErrorKind::Config, "synthetic beta must be positive");
    require(rank >= 1, ErrorKind::Config, "synthetic rank must be at least 1");
    require(noise >= 0.0, ErrorKind::Config, "synthetic noise must be non-negative");
    require(partiality >= 0.0 && partiality < 1.0, ErrorKind::Config, "synthetic partiality must lie in [0, 1)");
    require(scale > 0.0, ErrorKind::Config, "synthetic scale must be positive");
    require(rotation_axis.norm() > 0.0, ErrorKind::Config, "synthetic rotation axis must be non-zero");
  }
};

struct SyntheticPair {
  TriangleMesh reference;
  TriangleMesh target;
  Matrix ground_truth;            // true position of every reference vertex (n x d)
  std::vector<int> target_index;  // reference vertex -> target vertex, -1 if cropped
  SimilarityTransform transform;
  DeformationField deformation;   // before the similarity transform
};

inline SimilarityTransform spec_transform(const SyntheticSpec& spec) {
  SimilarityTransform t = SimilarityTransform::identity(3);
  t.scale = spec.scale;
  t.rotation = Eigen::AngleAxisd(spec.rotation_deg * std::numbers::pi / 180.0, spec.rotation_axis.normalized())
                   .toRotationMatrix();
  t.translation = spec.translation;
  return t;
}

/// Reference shape, smooth GP-sampled deformation, similarity transform,
/// noise and a planar crop of the target.
inline SyntheticPair make_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticPair out;
  out.reference = spec.base == "sphere" ? icosphere(spec.level) : femur_proxy(spec.level);
  const int n = out.reference.size();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  out.deformation = Matrix::Zero(n, 3);
  if (spec.deformation > 0.0) {
    const Kernel k = gaussian_kernel(spec.beta, 3);
    const LowRankGp gp = build_low_rank(k, Matrix::Zero(n, 3), out.reference, std::min(spec.rank, 3 * n));
    Vector alpha(gp.rank());
    for (Eigen::Index i = 0; i < alpha.size(); ++i) alpha(i) = normal(rng);
    out.deformation = spec.deformation * instance(gp, alpha);
  }
  out.transform = spec_transform(spec);
  out.ground_truth = out.transform.apply(Matrix(out.reference.points() + out.deformation));

  Matrix target = out.ground_truth;
  if (spec.noise > 0.0)
    for (Eigen::Index i = 0; i < target.rows(); ++i)
      for (Eigen::Index c = 0; c < 3; ++c) target(i, c) += spec.noise * normal(rng);

  // crop: drop the vertices with the largest coordinate along a random direction
  std::vector<int> keep(static_cast<std::size_t>(n));
  std::iota(keep.begin(), keep.end(), 0);
  if (spec.partiality > 0.0) {
    Eigen::Vector3d dir(normal(rng), normal(rng), normal(rng));
    dir.normalize();
    std::vector<std::pair<double, int>> order;
    for (int i = 0; i < n; ++i) order.emplace_back(out.reference.points().row(i).dot(dir), i);
    std::sort(order.begin(), order.end());
    const int kept = std::max(3, static_cast<int>(std::lround((1.0 - spec.partiality) * n)));
    keep.clear();
    for (int k = 0; k < kept; ++k) keep.push_back(order[static_cast<std::size_t>(k)].second);
    std::sort(keep.begin(), keep.end());
  }
  out.target_index.assign(static_cast<std::size_t>(n), -1);
  for (std::size_t k = 0; k < keep.size(); ++k) out.target_index[static_cast<std::size_t>(keep[k])] = static_cast<int>(k);
  std::vector<Triangle> tris;
  for (const auto& t : out.reference.triangles()) {
    const int a = out.target_index[static_cast<std::size_t>(t[0])], b = out.target_index[static_cast<std::size_t>(t[1])],
              c = out.target_index[static_cast<std::size_t>(t[2])];
    if (a >= 0 && b >= 0 && c >= 0) tris.push_back({a, b, c});
  }
  out.target = TriangleMesh(select_rows(target, keep), std::move(tris));
  return out;
}

}  // namespace gingr
