#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "gingr/errors.hpp"

namespace gingr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

/// n x d displacement matrix aligned row-wise with a point set.
using DeformationField = Matrix;

using Triangle = std::array<int, 3>;
using Edge = std::pair<int, int>;

/// Ordered d-dimensional points, d in {2, 3}. Immutable after construction.
class PointSet {
 public:
  PointSet() = default;

  explicit PointSet(Matrix points) : points_(std::move(points)) {
    require(points_.rows() >= 1, ErrorKind::Validation, "point set must contain at least one point");
    require(points_.cols() == 2 || points_.cols() == 3, ErrorKind::Validation,
            "point dimension must be 2 or 3, got " + std::to_string(points_.cols()));
    for (Eigen::Index i = 0; i < points_.rows(); ++i) {
      require(points_.row(i).allFinite(), ErrorKind::Validation,
              "non-finite coordinate at point " + std::to_string(i));
    }
  }

  int size() const { return static_cast<int>(points_.rows()); }
  int dim() const { return static_cast<int>(points_.cols()); }
  const Matrix& points() const { return points_; }
  Vector point(int i) const { return points_.row(i).transpose(); }

 private:
  Matrix points_;
};

/// Vertices plus optional triangle connectivity. A mesh without triangles is a
/// plain point set; operations that need connectivity reject it.
class TriangleMesh {
 public:
  TriangleMesh() = default;

  explicit TriangleMesh(PointSet vertices, std::vector<Triangle> triangles = {})
      : vertices_(std::move(vertices)), triangles_(std::move(triangles)) {
    const int n = vertices_.size();
    for (std::size_t t = 0; t < triangles_.size(); ++t) {
      const auto& tri = triangles_[t];
      for (int v : tri) {
        require(v >= 0 && v < n, ErrorKind::Validation,
                "triangle " + std::to_string(t) + " references vertex " + std::to_string(v) +
                    " but the mesh has " + std::to_string(n) + " vertices");
      }
      require(tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2], ErrorKind::Validation,
              "triangle " + std::to_string(t) + " is degenerate (repeated vertex index)");
    }
  }

  explicit TriangleMesh(Matrix points, std::vector<Triangle> triangles = {})
      : TriangleMesh(PointSet(std::move(points)), std::move(triangles)) {}

  const PointSet& vertices() const { return vertices_; }
  const Matrix& points() const { return vertices_.points(); }
  const std::vector<Triangle>& triangles() const { return triangles_; }
  int size() const { return vertices_.size(); }
  int dim() const { return vertices_.dim(); }
  bool has_triangles() const { return !triangles_.empty(); }

  /// Same connectivity, new vertex positions.
  TriangleMesh with_points(Matrix points) const {
    require(points.rows() == size() && points.cols() == dim(), ErrorKind::Validation,
            "replacement points must keep the mesh shape");
    return TriangleMesh(PointSet(std::move(points)), triangles_);
  }

 private:
  PointSet vertices_;
  std::vector<Triangle> triangles_;
};

struct Landmark {
  std::string id;
  Vector point;
  double variance = 0.0;

  void validate() const {
    require(!id.empty(), ErrorKind::Validation, "landmark id must be non-empty");
    require(point.size() > 0 && point.allFinite(), ErrorKind::Validation,
            "landmark '" + id + "' has a non-finite point");
    require(variance >= 0.0, ErrorKind::Validation, "landmark '" + id + "' has negative variance");
  }
};

/// x -> s * R * x + t with R a proper rotation.
struct SimilarityTransform {
  double scale = 1.0;
  Matrix rotation;
  Vector translation;

  static SimilarityTransform identity(int d) {
    return {1.0, Matrix::Identity(d, d), Vector::Zero(d)};
  }

  int dim() const { return static_cast<int>(rotation.rows()); }

  bool is_valid(double tol = 1e-10) const {
    if (!(scale > 0.0) || rotation.rows() != rotation.cols() || translation.size() != rotation.rows())
      return false;
    const Matrix gram = rotation.transpose() * rotation;
    return (gram - Matrix::Identity(dim(), dim())).norm() <= tol && rotation.determinant() > 0.0;
  }

  Vector apply(const Vector& x) const { return scale * rotation * x + translation; }

  /// Applies the transform to every row.
  Matrix apply(const Matrix& points) const {
    Matrix out = scale * points * rotation.transpose();
    out.rowwise() += translation.transpose();
    return out;
  }

  /// Applies only the linear part, for displacement vectors.
  Matrix apply_linear(const Matrix& vectors) const { return scale * vectors * rotation.transpose(); }

  SimilarityTransform inverse() const {
    SimilarityTransform inv;
    inv.scale = 1.0 / scale;
    inv.rotation = rotation.transpose();
    inv.translation = -inv.scale * (inv.rotation * translation);
    return inv;
  }

  /// (this o other)(x) = this(other(x)).
  SimilarityTransform compose(const SimilarityTransform& other) const {
    SimilarityTransform out;
    out.scale = scale * other.scale;
    out.rotation = rotation * other.rotation;
    out.translation = scale * rotation * other.translation + translation;
    return out;
  }
};

// ---------------------------------------------------------------------------
// Connectivity

/// Undirected edges of the triangle set, deduplicated and sorted by (min, max).
inline std::vector<Edge> mesh_edges(const TriangleMesh& mesh) {
  std::vector<Edge> edges;
  edges.reserve(mesh.triangles().size() * 3);
  for (const auto& tri : mesh.triangles()) {
    for (int k = 0; k < 3; ++k) {
      const int a = tri[k], b = tri[(k + 1) % 3];
      edges.emplace_back(std::min(a, b), std::max(a, b));
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

/// Edges with the number of triangles using each, in the same order as mesh_edges.
inline std::vector<std::pair<Edge, int>> edge_use_counts(const TriangleMesh& mesh) {
  std::vector<Edge> all;
  all.reserve(mesh.triangles().size() * 3);
  for (const auto& tri : mesh.triangles()) {
    for (int k = 0; k < 3; ++k) {
      const int a = tri[k], b = tri[(k + 1) % 3];
      all.emplace_back(std::min(a, b), std::max(a, b));
    }
  }
  std::sort(all.begin(), all.end());
  std::vector<std::pair<Edge, int>> counts;
  for (const auto& e : all) {
    if (!counts.empty() && counts.back().first == e)
      ++counts.back().second;
    else
      counts.emplace_back(e, 1);
  }
  return counts;
}

struct VertexNormals {
  Matrix normals;             // n x 3, zero rows where undefined
  std::vector<bool> defined;  // false for vertices with no incident area
};

/// Area-weighted vertex normals of a 3D triangle mesh.
inline VertexNormals vertex_normals(const TriangleMesh& mesh) {
  require(mesh.has_triangles(), ErrorKind::Unsupported, "vertex normals need triangle connectivity");
  require(mesh.dim() == 3, ErrorKind::Unsupported, "vertex normals are defined for 3D meshes only");
  const Matrix& p = mesh.points();
  Matrix acc = Matrix::Zero(mesh.size(), 3);
  for (const auto& tri : mesh.triangles()) {
    const Eigen::Vector3d a = p.row(tri[0]).transpose();
    const Eigen::Vector3d b = p.row(tri[1]).transpose();
    const Eigen::Vector3d c = p.row(tri[2]).transpose();
    // cross product length is twice the area, so the sum is area weighted
    const Eigen::Vector3d n = (b - a).cross(c - a);
    for (int v : tri) acc.row(v) += n.transpose();
  }
  VertexNormals out{Matrix::Zero(mesh.size(), 3), std::vector<bool>(mesh.size(), false)};
  for (int i = 0; i < mesh.size(); ++i) {
    const double len = acc.row(i).norm();
    if (len > 1e-300) {
      out.normals.row(i) = acc.row(i) / len;
      out.defined[i] = true;
    }
  }
  return out;
}

/// Unit normal per triangle; zero for zero-area triangles.
inline Matrix face_normals(const TriangleMesh& mesh) {
  require(mesh.dim() == 3, ErrorKind::Unsupported, "face normals are defined for 3D meshes only");
  const Matrix& p = mesh.points();
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(mesh.triangles().size()), 3);
  for (std::size_t t = 0; t < mesh.triangles().size(); ++t) {
    const auto& tri = mesh.triangles()[t];
    const Eigen::Vector3d a = p.row(tri[0]).transpose();
    const Eigen::Vector3d n = (Eigen::Vector3d(p.row(tri[1]).transpose()) - a)
                                  .cross(Eigen::Vector3d(p.row(tri[2]).transpose()) - a);
    const double len = n.norm();
    if (len > 1e-300) out.row(static_cast<Eigen::Index>(t)) = n.transpose() / len;
  }
  return out;
}

/// Vertices on an edge used by exactly one triangle, sorted ascending.
inline std::vector<int> boundary_vertices(const TriangleMesh& mesh) {
  std::set<int> boundary;
  for (const auto& [edge, count] : edge_use_counts(mesh)) {
    if (count == 1) {
      boundary.insert(edge.first);
      boundary.insert(edge.second);
    }
  }
  return {boundary.begin(), boundary.end()};
}

/// Signed r x n incidence matrix; row k is edge k of mesh_edges with +1 at the
/// smaller index and -1 at the larger.
inline SparseMatrix incidence_matrix(const TriangleMesh& mesh) {
  const auto edges = mesh_edges(mesh);
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(edges.size() * 2);
  for (std::size_t k = 0; k < edges.size(); ++k) {
    entries.emplace_back(static_cast<int>(k), edges[k].first, 1.0);
    entries.emplace_back(static_cast<int>(k), edges[k].second, -1.0);
  }
  SparseMatrix b(static_cast<Eigen::Index>(edges.size()), mesh.size());
  b.setFromTriplets(entries.begin(), entries.end());
  return b;
}

/// Unweighted combinatorial Laplacian L = B^T B.
inline SparseMatrix graph_laplacian(const TriangleMesh& mesh) {
  const SparseMatrix b = incidence_matrix(mesh);
  SparseMatrix l = SparseMatrix(b.transpose()) * b;
  l.makeCompressed();
  return l;
}

/// Component label per vertex; isolated vertices form their own component.
inline std::vector<int> connected_components(const TriangleMesh& mesh, int* count = nullptr) {
  std::vector<int> parent(mesh.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int v) {
    while (parent[v] != v) {
      parent[v] = parent[parent[v]];
      v = parent[v];
    }
    return v;
  };
  for (const auto& [a, b] : mesh_edges(mesh)) {
    const int ra = find(a), rb = find(b);
    if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
  }
  std::vector<int> label(mesh.size(), -1), root_label(mesh.size(), -1);
  int next = 0;
  for (int v = 0; v < mesh.size(); ++v) {
    const int r = find(v);
    if (root_label[r] < 0) root_label[r] = next++;
    label[v] = root_label[r];
  }
  if (count) *count = next;
  return label;
}

/// Median Euclidean edge length, 0 for meshes without triangles.
inline double median_edge_length(const TriangleMesh& mesh) {
  const auto edges = mesh_edges(mesh);
  if (edges.empty()) return 0.0;
  std::vector<double> lengths;
  lengths.reserve(edges.size());
  for (const auto& [a, b] : edges) lengths.push_back((mesh.points().row(a) - mesh.points().row(b)).norm());
  auto mid = lengths.begin() + static_cast<std::ptrdiff_t>(lengths.size() / 2);
  std::nth_element(lengths.begin(), mid, lengths.end());
  return *mid;
}

// ---------------------------------------------------------------------------
// Alignment

/// Least-squares similarity (or rigid) transform mapping source rows onto
/// target rows, reflections excluded (Umeyama 1991).
inline SimilarityTransform umeyama_align(const Matrix& source, const Matrix& target, bool with_scale) {
  require(source.rows() == target.rows() && source.cols() == target.cols(), ErrorKind::Alignment,
          "source and target must have the same shape");
  const auto n = source.rows();
  const auto d = source.cols();
  require(n >= d, ErrorKind::Alignment,
          "need at least " + std::to_string(d) + " point pairs, got " + std::to_string(n));

  const Vector mu_s = source.colwise().mean().transpose();
  const Vector mu_t = target.colwise().mean().transpose();
  const Matrix sc = source.rowwise() - mu_s.transpose();
  const Matrix tc = target.rowwise() - mu_t.transpose();
  const double var_s = sc.squaredNorm() / static_cast<double>(n);
  require(var_s > 1e-300, ErrorKind::Alignment, "source points are coincident");

  const Matrix cov = tc.transpose() * sc / static_cast<double>(n);
  Eigen::JacobiSVD<Matrix> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vector sv = svd.singularValues();
  const double tol = 1e-12 * std::max(1.0, sv(0));
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) rank += sv(i) > tol ? 1 : 0;
  require(rank >= d - 1, ErrorKind::Alignment,
          "degenerate configuration: cross-covariance rank " + std::to_string(rank));

  Matrix s = Matrix::Identity(d, d);
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s(d - 1, d - 1) = -1.0;

  SimilarityTransform out;
  out.rotation = svd.matrixU() * s * svd.matrixV().transpose();
  out.scale = with_scale ? (sv.asDiagonal() * s).trace() / var_s : 1.0;
  require(out.scale > 0.0, ErrorKind::Alignment, "non-positive scale estimate");
  out.translation = mu_t - out.scale * out.rotation * mu_s;
  return out;
}

// ---------------------------------------------------------------------------
// Decimation

struct Decimation {
  TriangleMesh mesh;
  std::vector<int> coarse_to_fine;
};

/// Farthest-point sampling in Euclidean space starting at vertex `first`.
inline std::vector<int> farthest_point_sampling(const Matrix& points, int count, int first = 0) {
  const int n = static_cast<int>(points.rows());
  count = std::min(count, n);
  std::vector<int> picked;
  picked.reserve(count);
  Vector dist = Vector::Constant(n, std::numeric_limits<double>::infinity());
  int next = first;
  for (int k = 0; k < count; ++k) {
    picked.push_back(next);
    dist = dist.cwiseMin((points.rowwise() - points.row(next)).rowwise().squaredNorm());
    Eigen::Index arg = 0;
    dist.maxCoeff(&arg);
    next = static_cast<int>(arg);
  }
  return picked;
}

/// Vertex-subset decimation. Meshes: farthest-point seeds, every fine vertex
/// assigned to its graph-nearest seed, and a coarse triangle for each fine
/// triangle touching three distinct clusters. Point sets: uniform random
/// subset drawn with `seed`.
inline Decimation decimate(const TriangleMesh& mesh, int target_vertex_count, unsigned long long seed = 0) {
  const int n = mesh.size();
  require(target_vertex_count >= 1, ErrorKind::Parameter, "target vertex count must be positive");
  require(target_vertex_count <= n, ErrorKind::Parameter,
          "target vertex count " + std::to_string(target_vertex_count) + " exceeds mesh size " +
              std::to_string(n));

  if (target_vertex_count == n) {
    std::vector<int> identity(n);
    std::iota(identity.begin(), identity.end(), 0);
    return {mesh, identity};
  }

  if (!mesh.has_triangles()) {
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(target_vertex_count);
    std::sort(all.begin(), all.end());
    Matrix pts(target_vertex_count, mesh.dim());
    for (int k = 0; k < target_vertex_count; ++k) pts.row(k) = mesh.points().row(all[k]);
    return {TriangleMesh(std::move(pts)), all};
  }

  const bool closed = boundary_vertices(mesh).empty();
  require(!closed || target_vertex_count >= 4, ErrorKind::Validation,
          "a closed mesh cannot be decimated below 4 vertices");

  std::vector<int> seeds = farthest_point_sampling(mesh.points(), target_vertex_count);
  std::sort(seeds.begin(), seeds.end());

  // multi-source Dijkstra over mesh edges
  std::vector<std::vector<std::pair<int, double>>> adj(n);
  for (const auto& [a, b] : mesh_edges(mesh)) {
    const double w = (mesh.points().row(a) - mesh.points().row(b)).norm();
    adj[a].emplace_back(b, w);
    adj[b].emplace_back(a, w);
  }
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::vector<int> owner(n, -1);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
  for (int k = 0; k < static_cast<int>(seeds.size()); ++k) {
    dist[seeds[k]] = 0.0;
    owner[seeds[k]] = k;
    queue.emplace(0.0, seeds[k]);
  }
  while (!queue.empty()) {
    const auto [d, v] = queue.top();
    queue.pop();
    if (d > dist[v]) continue;
    for (const auto& [u, w] : adj[v]) {
      if (d + w < dist[u]) {
        dist[u] = d + w;
        owner[u] = owner[v];
        queue.emplace(dist[u], u);
      }
    }
  }
  // vertices unreachable from any seed fall back to the Euclidean-nearest seed
  for (int v = 0; v < n; ++v) {
    if (owner[v] >= 0) continue;
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < static_cast<int>(seeds.size()); ++k) {
      const double dd = (mesh.points().row(v) - mesh.points().row(seeds[k])).squaredNorm();
      if (dd < best) {
        best = dd;
        owner[v] = k;
      }
    }
  }

  std::set<std::array<int, 3>> seen;
  std::vector<Triangle> coarse;
  for (const auto& tri : mesh.triangles()) {
    const Triangle c{owner[tri[0]], owner[tri[1]], owner[tri[2]]};
    if (c[0] == c[1] || c[1] == c[2] || c[0] == c[2]) continue;
    std::array<int, 3> key = c;
    std::sort(key.begin(), key.end());
    if (seen.insert(key).second) coarse.push_back(c);
  }

  Matrix pts(static_cast<Eigen::Index>(seeds.size()), mesh.dim());
  for (std::size_t k = 0; k < seeds.size(); ++k) pts.row(static_cast<Eigen::Index>(k)) = mesh.points().row(seeds[k]);
  return {TriangleMesh(PointSet(std::move(pts)), std::move(coarse)), seeds};
}

/// Rows of `points` selected by `indices`.
inline Matrix select_rows(const Matrix& points, const std::vector<int>& indices) {
  Matrix out(static_cast<Eigen::Index>(indices.size()), points.cols());
  for (std::size_t k = 0; k < indices.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = points.row(indices[k]);
  return out;
}

}  // namespace gingr
