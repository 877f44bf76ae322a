#pragma once

#include <algorithm>
#include <array>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "gingr/geometry.hpp"

namespace gingr {

using Vec3 = Eigen::Vector3d;

/// Lifts a 2D or 3D row to 3D (z = 0 for planar data).
inline Vec3 lift3(const Matrix& points, Eigen::Index row) {
  Vec3 v = Vec3::Zero();
  for (Eigen::Index c = 0; c < std::min<Eigen::Index>(3, points.cols()); ++c) v(c) = points(row, c);
  return v;
}

inline Vec3 lift3(const Vector& x) {
  Vec3 v = Vec3::Zero();
  for (Eigen::Index c = 0; c < std::min<Eigen::Index>(3, x.size()); ++c) v(c) = x(c);
  return v;
}

/// Nearest-neighbour queries over a fixed set of points.
class KdTree {
 public:
  KdTree() = default;

  explicit KdTree(const Matrix& points) : points_(points), order_(static_cast<std::size_t>(points.rows())) {
    std::iota(order_.begin(), order_.end(), 0);
    if (!order_.empty()) build(0, static_cast<int>(order_.size()));
  }

  struct Hit {
    int index = -1;
    double squared_distance = std::numeric_limits<double>::infinity();
  };

  Hit nearest(const Vector& query) const {
    Hit best;
    if (!nodes_.empty()) search(0, query, best);
    return best;
  }

  int size() const { return static_cast<int>(points_.rows()); }

 private:
  struct Node {
    int begin, end;
    int axis = -1;  // -1 for leaves
    double split = 0.0;
    int left = -1, right = -1;
  };

  int build(int begin, int end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({begin, end});
    if (end - begin <= 8) return id;
    Vector lo = Vector::Constant(points_.cols(), std::numeric_limits<double>::infinity());
    Vector hi = -lo;
    for (int k = begin; k < end; ++k) {
      lo = lo.cwiseMin(points_.row(order_[k]).transpose());
      hi = hi.cwiseMax(points_.row(order_[k]).transpose());
    }
    Eigen::Index axis = 0;
    (hi - lo).maxCoeff(&axis);
    const int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) { return points_(a, axis) < points_(b, axis); });
    nodes_[id].axis = static_cast<int>(axis);
    nodes_[id].split = points_(order_[mid], axis);
    const int left = build(begin, mid);
    const int right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  void search(int id, const Vector& q, Hit& best) const {
    const Node& node = nodes_[id];
    if (node.axis < 0) {
      for (int k = node.begin; k < node.end; ++k) {
        const double d2 = (points_.row(order_[k]).transpose() - q).squaredNorm();
        if (d2 < best.squared_distance || (d2 == best.squared_distance && order_[k] < best.index)) {
          best = {order_[k], d2};
        }
      }
      return;
    }
    const double delta = q(node.axis) - node.split;
    const int first = delta < 0 ? node.left : node.right;
    const int second = delta < 0 ? node.right : node.left;
    search(first, q, best);
    if (delta * delta <= best.squared_distance) search(second, q, best);
  }

  Matrix points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

/// Closest point on triangle abc to p (Ericson, Real-Time Collision Detection 5.1.5).
/// Returns barycentric weights for (a, b, c).
inline Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c, Vec3& bary) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) { bary = {1, 0, 0}; return a; }
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) { bary = {0, 1, 0}; return b; }
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    const double v = d1 / (d1 - d3);
    bary = {1 - v, v, 0};
    return a + v * ab;
  }
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) { bary = {0, 0, 1}; return c; }
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    const double w = d2 / (d2 - d6);
    bary = {1 - w, 0, w};
    return a + w * ac;
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    bary = {0, 1 - w, w};
    return b + w * (c - b);
  }
  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom, w = vc * denom;
  bary = {1 - v - w, v, w};
  return a + ab * v + ac * w;
}

/// Bounding-volume hierarchy over the triangles of a mesh (2D meshes are
/// lifted to z = 0).
class TriangleBvh {
 public:
  TriangleBvh() = default;

  explicit TriangleBvh(const TriangleMesh& mesh) : tris_(mesh.triangles()) {
    verts_.resize(mesh.size());
    for (int i = 0; i < mesh.size(); ++i) verts_[i] = lift3(mesh.points(), i);
    order_.resize(tris_.size());
    std::iota(order_.begin(), order_.end(), 0);
    boxes_.resize(tris_.size());
    centers_.resize(tris_.size());
    for (std::size_t t = 0; t < tris_.size(); ++t) {
      Box b;
      for (int v : tris_[t]) b.grow(verts_[v]);
      boxes_[t] = b;
      centers_[t] = (verts_[tris_[t][0]] + verts_[tris_[t][1]] + verts_[tris_[t][2]]) / 3.0;
    }
    if (!tris_.empty()) build(0, static_cast<int>(tris_.size()));
  }

  struct Hit {
    int triangle = -1;
    Vec3 point = Vec3::Zero();
    Vec3 barycentric = Vec3::Zero();
    double squared_distance = std::numeric_limits<double>::infinity();
  };

  bool empty() const { return tris_.empty(); }

  Hit closest(const Vec3& q) const {
    Hit best;
    if (!nodes_.empty()) search(0, q, best);
    return best;
  }

  /// True if the open segment (a, b) crosses a triangle that does not contain
  /// the vertex `skip_vertex`.
  bool segment_hits(const Vec3& a, const Vec3& b, int skip_vertex) const {
    if (nodes_.empty()) return false;
    return segment_search(0, a, b, skip_vertex);
  }

  const std::vector<Triangle>& triangles() const { return tris_; }

 private:
  struct Box {
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());
    void grow(const Vec3& p) { lo = lo.cwiseMin(p); hi = hi.cwiseMax(p); }
    void grow(const Box& b) { lo = lo.cwiseMin(b.lo); hi = hi.cwiseMax(b.hi); }
    double squared_distance(const Vec3& p) const {
      const Vec3 d = (lo - p).cwiseMax(Vec3::Zero()).cwiseMax(p - hi);
      return d.squaredNorm();
    }
    bool overlaps_segment(const Vec3& a, const Vec3& b) const {
      double t0 = 0.0, t1 = 1.0;
      const Vec3 dir = b - a;
      for (int k = 0; k < 3; ++k) {
        if (std::abs(dir(k)) < 1e-300) {
          if (a(k) < lo(k) || a(k) > hi(k)) return false;
          continue;
        }
        double ta = (lo(k) - a(k)) / dir(k), tb = (hi(k) - a(k)) / dir(k);
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return false;
      }
      return true;
    }
  };

  struct Node {
    Box box;
    int begin, end;
    int left = -1, right = -1;
  };

  int build(int begin, int end) {
    const int id = static_cast<int>(nodes_.size());
    Box box, centroid_box;
    for (int k = begin; k < end; ++k) {
      box.grow(boxes_[order_[k]]);
      centroid_box.grow(centers_[order_[k]]);
    }
    nodes_.push_back({box, begin, end});
    if (end - begin <= 4) return id;
    Eigen::Index axis = 0;
    (centroid_box.hi - centroid_box.lo).maxCoeff(&axis);
    const int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) { return centers_[a](axis) < centers_[b](axis); });
    const int left = build(begin, mid);
    const int right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  void search(int id, const Vec3& q, Hit& best) const {
    const Node& node = nodes_[id];
    if (node.left < 0) {
      for (int k = node.begin; k < node.end; ++k) {
        const int t = order_[k];
        const auto& tri = tris_[t];
        Vec3 bary;
        const Vec3 p = closest_point_on_triangle(q, verts_[tri[0]], verts_[tri[1]], verts_[tri[2]], bary);
        const double d2 = (p - q).squaredNorm();
        if (d2 < best.squared_distance || (d2 == best.squared_distance && t < best.triangle)) {
          best = {t, p, bary, d2};
        }
      }
      return;
    }
    const double dl = nodes_[node.left].box.squared_distance(q);
    const double dr = nodes_[node.right].box.squared_distance(q);
    const int first = dl <= dr ? node.left : node.right;
    const int second = dl <= dr ? node.right : node.left;
    if (std::min(dl, dr) <= best.squared_distance) search(first, q, best);
    if (std::max(dl, dr) <= best.squared_distance) search(second, q, best);
  }

  // Moller-Trumbore restricted to the open segment.
  bool segment_triangle(const Vec3& a, const Vec3& b, const Triangle& tri) const {
    const Vec3& v0 = verts_[tri[0]];
    const Vec3 e1 = verts_[tri[1]] - v0, e2 = verts_[tri[2]] - v0;
    const Vec3 dir = b - a;
    const Vec3 h = dir.cross(e2);
    const double det = e1.dot(h);
    if (std::abs(det) < 1e-14) return false;
    const double inv = 1.0 / det;
    const Vec3 s = a - v0;
    const double u = inv * s.dot(h);
    if (u < 0.0 || u > 1.0) return false;
    const Vec3 qv = s.cross(e1);
    const double v = inv * dir.dot(qv);
    if (v < 0.0 || u + v > 1.0) return false;
    const double t = inv * e2.dot(qv);
    return t > 1e-9 && t < 1.0 - 1e-9;
  }

  bool segment_search(int id, const Vec3& a, const Vec3& b, int skip) const {
    const Node& node = nodes_[id];
    if (!node.box.overlaps_segment(a, b)) return false;
    if (node.left < 0) {
      for (int k = node.begin; k < node.end; ++k) {
        const auto& tri = tris_[order_[k]];
        if (tri[0] == skip || tri[1] == skip || tri[2] == skip) continue;
        if (segment_triangle(a, b, tri)) return true;
      }
      return false;
    }
    return segment_search(node.left, a, b, skip) || segment_search(node.right, a, b, skip);
  }

  std::vector<Vec3> verts_;
  std::vector<Triangle> tris_;
  std::vector<int> order_;
  std::vector<Box> boxes_;
  std::vector<Vec3> centers_;
  std::vector<Node> nodes_;
};

/// Closest point on a geometry: surface projection when it has triangles,
/// nearest vertex otherwise.
class SurfaceLocator {
 public:
  SurfaceLocator() = default;

  explicit SurfaceLocator(const TriangleMesh& mesh) : dim_(mesh.dim()) {
    if (mesh.has_triangles())
      bvh_ = TriangleBvh(mesh);
    else
      kd_ = KdTree(mesh.points());
    points_ = mesh.points();
  }

  struct Hit {
    Vector point;
    double distance = 0.0;
    int triangle = -1;  // -1 for point sets
    int vertex = -1;    // nearest vertex for point sets
    Vec3 barycentric = Vec3::Zero();
  };

  Hit closest(const Vector& query) const {
    Hit hit;
    if (!bvh_.empty()) {
      const auto h = bvh_.closest(lift3(query));
      hit.point = h.point.head(dim_);
      hit.distance = std::sqrt(h.squared_distance);
      hit.triangle = h.triangle;
      hit.barycentric = h.barycentric;
    } else {
      const auto h = kd_.nearest(query);
      hit.vertex = h.index;
      hit.distance = std::sqrt(h.squared_distance);
      hit.point = points_.row(h.index).transpose();
    }
    return hit;
  }

  bool has_triangles() const { return !bvh_.empty(); }
  const TriangleBvh& bvh() const { return bvh_; }

 private:
  int dim_ = 3;
  Matrix points_;
  TriangleBvh bvh_;
  KdTree kd_;
};

}  // namespace gingr
