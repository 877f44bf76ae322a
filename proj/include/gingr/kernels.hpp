#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gingr/geometry.hpp"

namespace gingr {

/// Points a kernel is evaluated at. Reference vertices carry their index so
/// mesh-derived kernels can look them up; free coordinates leave it empty.
struct Sites {
  Matrix coords;
  std::vector<int> indices;

  static Sites at(Matrix coords) { return {std::move(coords), {}}; }

  static Sites reference(const Matrix& coords) {
    Sites s{coords, std::vector<int>(static_cast<std::size_t>(coords.rows()))};
    for (std::size_t i = 0; i < s.indices.size(); ++i) s.indices[i] = static_cast<int>(i);
    return s;
  }

  static Sites reference_subset(const Matrix& coords, const std::vector<int>& indices) {
    return {select_rows(coords, indices), indices};
  }

  int size() const { return static_cast<int>(coords.rows()); }
  bool has_indices() const { return !indices.empty(); }
};

enum class MatrixLayout { Scalar, Block };

/// Gram matrix. Scalar layout means values (x) I_d; block layout stores the
/// full (n d) x (m d) matrix with point-major ordering (row = i * d + c).
struct KernelMatrix {
  Matrix values;
  MatrixLayout layout = MatrixLayout::Scalar;
  int dim = 3;

  Matrix expanded() const {
    if (layout == MatrixLayout::Block) return values;
    Matrix out = Matrix::Zero(values.rows() * dim, values.cols() * dim);
    for (Eigen::Index i = 0; i < values.rows(); ++i)
      for (Eigen::Index j = 0; j < values.cols(); ++j)
        for (int c = 0; c < dim; ++c) out(i * dim + c, j * dim + c) = values(i, j);
    return out;
  }
};

namespace detail {

class KernelImpl {
 public:
  virtual ~KernelImpl() = default;
  virtual int dim() const = 0;
  virtual bool scalar() const = 0;
  virtual bool coordinate_based() const = 0;
  /// Only called on scalar kernels.
  virtual Matrix scalar_gram(const Sites& a, const Sites& b) const = 0;
  /// Point-major (|a| d) x (|b| d).
  virtual Matrix block_gram(const Sites& a, const Sites& b) const {
    const Matrix s = scalar_gram(a, b);
    return KernelMatrix{s, MatrixLayout::Scalar, dim()}.expanded();
  }
};

inline void check_index_sites(const Sites& s, int n, const char* who) {
  require(s.has_indices(), ErrorKind::Domain,
          std::string(who) + " is defined on reference vertices and cannot be queried with free coordinates");
  for (int i : s.indices) {
    require(i >= 0 && i < n, ErrorKind::Domain,
            std::string(who) + ": reference index " + std::to_string(i) + " out of range");
  }
}

class GaussianImpl final : public KernelImpl {
 public:
  GaussianImpl(double beta, int d) : beta_(beta), d_(d) {}
  int dim() const override { return d_; }
  bool scalar() const override { return true; }
  bool coordinate_based() const override { return true; }
  Matrix scalar_gram(const Sites& a, const Sites& b) const override {
    const double scale = -0.5 / (beta_ * beta_);
    Matrix out(a.size(), b.size());
    for (int j = 0; j < b.size(); ++j)
      for (int i = 0; i < a.size(); ++i) out(i, j) = std::exp(scale * (a.coords.row(i) - b.coords.row(j)).squaredNorm());
    return out;
  }

 private:
  double beta_;
  int d_;
};

class DotProductImpl final : public KernelImpl {
 public:
  DotProductImpl(double gamma, int d) : gamma_(gamma), d_(d) {}
  int dim() const override { return d_; }
  bool scalar() const override { return true; }
  bool coordinate_based() const override { return true; }
  Matrix scalar_gram(const Sites& a, const Sites& b) const override {
    return (a.coords * b.coords.transpose()).array() + gamma_ * gamma_;
  }

 private:
  double gamma_;
  int d_;
};

/// Kernel values fixed on the n reference vertices.
class IndexMatrixImpl final : public KernelImpl {
 public:
  IndexMatrixImpl(Matrix values, int d, bool scalar, std::string name)
      : values_(std::move(values)), d_(d), scalar_(scalar), name_(std::move(name)) {}
  int dim() const override { return d_; }
  bool scalar() const override { return scalar_; }
  bool coordinate_based() const override { return false; }
  int count() const { return static_cast<int>(scalar_ ? values_.rows() : values_.rows() / d_); }

  Matrix scalar_gram(const Sites& a, const Sites& b) const override {
    check_index_sites(a, count(), name_.c_str());
    check_index_sites(b, count(), name_.c_str());
    Matrix out(a.size(), b.size());
    for (int i = 0; i < a.size(); ++i)
      for (int j = 0; j < b.size(); ++j) out(i, j) = values_(a.indices[i], b.indices[j]);
    return out;
  }

  Matrix block_gram(const Sites& a, const Sites& b) const override {
    if (scalar_) return KernelImpl::block_gram(a, b);
    check_index_sites(a, count(), name_.c_str());
    check_index_sites(b, count(), name_.c_str());
    Matrix out(a.size() * d_, b.size() * d_);
    for (int i = 0; i < a.size(); ++i)
      for (int j = 0; j < b.size(); ++j)
        out.block(i * d_, j * d_, d_, d_) = values_.block(a.indices[i] * d_, b.indices[j] * d_, d_, d_);
    return out;
  }

 private:
  Matrix values_;
  int d_;
  bool scalar_;
  std::string name_;
};

}  // namespace detail

/// Matrix-valued covariance function k(x, x') -> R^{d x d}. Immutable and
/// cheap to copy.
class Kernel {
 public:
  Kernel() = default;
  explicit Kernel(std::shared_ptr<const detail::KernelImpl> impl, std::optional<Matrix> mean = std::nullopt)
      : impl_(std::move(impl)), mean_(std::move(mean)) {}

  bool valid() const { return impl_ != nullptr; }
  int dim() const { return impl_->dim(); }
  /// Scalar kernels are s(x, x') I_d.
  bool is_scalar() const { return impl_->scalar(); }
  bool is_coordinate_based() const { return impl_->coordinate_based(); }
  /// Empirical mean field carried by statistical kernels.
  const std::optional<Matrix>& mean_field() const { return mean_; }

  Matrix scalar_gram(const Sites& a, const Sites& b) const {
    require(is_scalar(), ErrorKind::Unsupported, "scalar gram requested from a block kernel");
    return impl_->scalar_gram(a, b);
  }
  Matrix block_gram(const Sites& a, const Sites& b) const { return impl_->block_gram(a, b); }

  /// d x d block for a single pair.
  Matrix operator()(const Sites& a, int i, const Sites& b, int j) const {
    Sites sa{a.coords.row(i), a.has_indices() ? std::vector<int>{a.indices[i]} : std::vector<int>{}};
    Sites sb{b.coords.row(j), b.has_indices() ? std::vector<int>{b.indices[j]} : std::vector<int>{}};
    return impl_->block_gram(sa, sb);
  }

  /// Block for two free coordinates (coordinate kernels only).
  Matrix operator()(const Vector& x, const Vector& y) const {
    return impl_->block_gram(Sites::at(x.transpose()), Sites::at(y.transpose()));
  }

  const detail::KernelImpl& impl() const { return *impl_; }

 private:
  std::shared_ptr<const detail::KernelImpl> impl_;
  std::optional<Matrix> mean_;
};

/// exp(-|x - x'|^2 / (2 beta^2)) I_d.
inline Kernel gaussian_kernel(double beta, int d = 3) {
  require(beta > 0.0 && std::isfinite(beta), ErrorKind::Parameter, "gaussian kernel: beta must be positive");
  return Kernel(std::make_shared<detail::GaussianImpl>(beta, d));
}

/// (<x, x'> + gamma^2) I_d, the Gram of homogeneous rows [x, gamma].
inline Kernel dot_product_kernel(double gamma, int d = 3) {
  require(gamma > 0.0 && std::isfinite(gamma), ErrorKind::Parameter, "dot product kernel: gamma must be positive");
  return Kernel(std::make_shared<detail::DotProductImpl>(gamma, d));
}

enum class Axis { X = 0, Y = 1, Z = 2 };

namespace detail {

class SymmetricImpl final : public KernelImpl {
 public:
  SymmetricImpl(Kernel base, Axis axis) : base_(std::move(base)), axis_(static_cast<int>(axis)) {}
  int dim() const override { return base_.dim(); }
  bool scalar() const override { return false; }
  bool coordinate_based() const override { return true; }
  Matrix scalar_gram(const Sites&, const Sites&) const override {
    fail(ErrorKind::Unsupported, "symmetric kernel is not scalar");
  }
  Matrix block_gram(const Sites& a, const Sites& b) const override {
    const int d = dim();
    Sites mirrored = a;
    mirrored.coords.col(axis_) *= -1.0;
    const Matrix direct = base_.block_gram(a, b);
    const Matrix reflected = base_.block_gram(mirrored, b);
    Matrix m = Matrix::Identity(d, d);
    m(axis_, axis_) = -1.0;
    Matrix out = direct;
    for (int i = 0; i < a.size(); ++i)
      for (int j = 0; j < b.size(); ++j)
        out.block(i * d, j * d, d, d) += m * reflected.block(i * d, j * d, d, d);
    return out;
  }

 private:
  Kernel base_;
  int axis_;
};

class CombinedImpl final : public KernelImpl {
 public:
  CombinedImpl(std::vector<std::pair<Kernel, double>> parts, bool product)
      : parts_(std::move(parts)), product_(product) {}
  int dim() const override { return parts_.front().first.dim(); }
  bool scalar() const override {
    for (const auto& p : parts_)
      if (!p.first.is_scalar()) return false;
    return true;
  }
  bool coordinate_based() const override {
    for (const auto& p : parts_)
      if (!p.first.is_coordinate_based()) return false;
    return true;
  }
  Matrix scalar_gram(const Sites& a, const Sites& b) const override {
    Matrix out;
    for (const auto& [k, w] : parts_) {
      const Matrix g = k.scalar_gram(a, b);
      if (out.size() == 0)
        out = w * g;
      else
        out = product_ ? Matrix(out.cwiseProduct(w * g)) : Matrix(out + w * g);
    }
    return out;
  }
  Matrix block_gram(const Sites& a, const Sites& b) const override {
    if (scalar()) return KernelImpl::block_gram(a, b);
    Matrix out = Matrix::Zero(a.size() * dim(), b.size() * dim());
    for (const auto& [k, w] : parts_) out += w * k.block_gram(a, b);
    return out;
  }

 private:
  std::vector<std::pair<Kernel, double>> parts_;
  bool product_;
};

}  // namespace detail

/// k(x, x') + M k(Mx, x') with M the reflection flipping `mirror_axis`.
inline Kernel symmetric_kernel(const Kernel& base, Axis mirror_axis) {
  require(base.is_coordinate_based(), ErrorKind::Unsupported,
          "symmetric kernel needs a coordinate-based base kernel");
  require(static_cast<int>(mirror_axis) < base.dim(), ErrorKind::Parameter, "mirror axis exceeds kernel dimension");
  return Kernel(std::make_shared<detail::SymmetricImpl>(base, mirror_axis));
}

/// Kernel from a fixed matrix over reference vertices (n x n scalar or
/// nd x nd block).
inline Kernel matrix_kernel(Matrix values, int d, MatrixLayout layout, std::string name = "matrix kernel",
                            std::optional<Matrix> mean = std::nullopt) {
  require(values.rows() == values.cols(), ErrorKind::Validation, name + ": matrix must be square");
  return Kernel(std::make_shared<detail::IndexMatrixImpl>(std::move(values), d, layout == MatrixLayout::Scalar,
                                                          std::move(name)),
                std::move(mean));
}

/// Evaluates a coordinate kernel on the reference vertices, turning it into a
/// reference-index kernel that can be multiplied with mesh kernels.
inline Kernel bind_to_reference(const Kernel& kernel, const Matrix& reference) {
  if (!kernel.is_coordinate_based()) return kernel;
  const Sites s = Sites::reference(reference);
  if (kernel.is_scalar())
    return matrix_kernel(kernel.scalar_gram(s, s), kernel.dim(), MatrixLayout::Scalar, "bound kernel");
  return matrix_kernel(kernel.block_gram(s, s), kernel.dim(), MatrixLayout::Block, "bound kernel");
}

/// Moore-Penrose pseudo-inverse of the combinatorial Laplacian of a connected
/// mesh, as a scalar reference-index kernel.
inline Kernel inverse_laplacian_kernel(const TriangleMesh& mesh) {
  require(mesh.has_triangles(), ErrorKind::Unsupported, "inverse Laplacian kernel needs triangle connectivity");
  int components = 0;
  connected_components(mesh, &components);
  require(components == 1, ErrorKind::Validation,
          "inverse Laplacian kernel needs a connected mesh, found " + std::to_string(components) + " components");
  const int n = mesh.size();
  const Matrix l = Matrix(graph_laplacian(mesh));
  // for a connected graph L^+ = (L + J/n)^{-1} - J/n with J the all-ones matrix
  const Matrix j = Matrix::Constant(n, n, 1.0 / n);
  Eigen::LLT<Matrix> llt(l + j);
  require(llt.info() == Eigen::Success, ErrorKind::Numerical, "Laplacian factorization failed");
  Matrix k = llt.solve(Matrix::Identity(n, n)) - j;
  k = 0.5 * (k + k.transpose()).eval();
  return matrix_kernel(std::move(k), mesh.dim(), MatrixLayout::Scalar, "inverse Laplacian kernel");
}

/// Empirical covariance of example deformation fields (each n x d), with the
/// empirical mean recorded as the prior mean.
inline Kernel statistical_kernel(const std::vector<DeformationField>& fields) {
  require(fields.size() >= 2, ErrorKind::Validation, "statistical kernel needs at least two training fields");
  const auto n = fields.front().rows();
  const auto d = fields.front().cols();
  for (std::size_t l = 0; l < fields.size(); ++l) {
    require(fields[l].rows() == n && fields[l].cols() == d, ErrorKind::Validation,
            "training field " + std::to_string(l) + " does not match the reference shape");
  }
  const auto s = static_cast<Eigen::Index>(fields.size());
  Matrix data(n * d, s);  // point-major flattening
  for (Eigen::Index l = 0; l < s; ++l) {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index c = 0; c < d; ++c) data(i * d + c, l) = fields[static_cast<std::size_t>(l)](i, c);
  }
  const Vector mean = data.rowwise().mean();
  data.colwise() -= mean;
  Matrix cov = data * data.transpose() / static_cast<double>(s - 1);
  Matrix mean_field(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index c = 0; c < d; ++c) mean_field(i, c) = mean(i * d + c);
  return matrix_kernel(std::move(cov), static_cast<int>(d), MatrixLayout::Block, "statistical kernel",
                       std::move(mean_field));
}

enum class CombineMode { Sum, Product };

/// Weighted sum or elementwise product of kernels.
inline Kernel combine(const std::vector<std::pair<Kernel, double>>& kernels, CombineMode mode) {
  require(!kernels.empty(), ErrorKind::Validation, "combine needs at least one kernel");
  const int d = kernels.front().first.dim();
  bool any_coord = false, any_index = false;
  for (const auto& [k, w] : kernels) {
    require(k.valid(), ErrorKind::Validation, "combine: invalid kernel");
    require(w >= 0.0 && std::isfinite(w), ErrorKind::Parameter, "combine: weights must be non-negative");
    require(k.dim() == d, ErrorKind::Validation, "combine: kernels disagree on dimension");
    (k.is_coordinate_based() ? any_coord : any_index) = true;
    if (mode == CombineMode::Product)
      require(k.is_scalar(), ErrorKind::Unsupported, "product mode is restricted to scalar kernels");
  }
  require(mode == CombineMode::Sum || !(any_coord && any_index), ErrorKind::Unsupported,
          "product of coordinate and reference-index kernels; bind the coordinate kernel to the reference first");
  std::optional<Matrix> mean;
  for (const auto& [k, w] : kernels)
    if (k.mean_field() && !mean) mean = k.mean_field();
  return Kernel(std::make_shared<detail::CombinedImpl>(kernels, mode == CombineMode::Product), std::move(mean));
}

/// Inverse-Laplacian kernel multiplied elementwise with the homogeneous
/// dot-product kernel on the reference vertices: D (L^+ (x) I) D^T for D with
/// rows [x_i, gamma].
inline Kernel affine_laplacian_kernel(const TriangleMesh& mesh, double gamma) {
  return combine({{inverse_laplacian_kernel(mesh), 1.0},
                  {bind_to_reference(dot_product_kernel(gamma, mesh.dim()), mesh.points()), 1.0}},
                 CombineMode::Product);
}

/// Gram matrix k(A_i, B_j). Scalar kernels return the compact layout.
inline KernelMatrix gram(const Kernel& kernel, const Sites& a, const Sites& b) {
  if (kernel.is_scalar()) return {kernel.scalar_gram(a, b), MatrixLayout::Scalar, kernel.dim()};
  return {kernel.block_gram(a, b), MatrixLayout::Block, kernel.dim()};
}

/// Symmetric Gram on one site set, averaged with its transpose.
inline KernelMatrix gram(const Kernel& kernel, const Sites& a) {
  KernelMatrix g = gram(kernel, a, a);
  g.values = 0.5 * (g.values + g.values.transpose()).eval();
  return g;
}

/// Smallest and largest eigenvalue of a symmetric matrix.
inline std::pair<double, double> eigen_range(const Matrix& symmetric) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetric, Eigen::EigenvaluesOnly);
  return {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
}

/// PSD within the tolerance min eig >= -tol * max eig.
inline bool is_psd(const Matrix& symmetric, double tol = 1e-8) {
  const auto [lo, hi] = eigen_range(symmetric);
  return lo >= -tol * std::max(hi, 0.0);
}

}  // namespace gingr
