// Copyright 2026 The gradleak Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Dense real linear algebra shared by every attack stage: subspace projectors
// extracted from gradient slices, ridge least squares, and named tensor maps
// that flatten into a single parameter vector.

#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace gradleak {

// Row-major so that entries() matches the on-disk and flattened layout.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline constexpr double kDefaultRankTol = 1e-6;

bool AllFinite(const Matrix& m);
bool AllFinite(const Vector& v);

// Orthonormal basis for a subspace of R^ambient_dim plus the singular-value
// cutoff that produced it. The projector P = basis * basis^T is never formed
// on the hot path.
class SubspaceProjector {
 public:
  SubspaceProjector() = default;
  SubspaceProjector(Eigen::MatrixXd basis, double sv_threshold);

  static SubspaceProjector Zero(std::size_t ambient_dim);

  std::size_t ambient_dim() const { return static_cast<std::size_t>(basis_.rows()); }
  std::size_t rank() const { return static_cast<std::size_t>(basis_.cols()); }
  double sv_threshold() const { return sv_threshold_; }
  const Eigen::MatrixXd& basis() const { return basis_; }

  // P x
  Vector Project(const Vector& x) const;
  // (I - P) x; exactly zero when the span is the whole space.
  Vector Residual(const Vector& x) const;
  // (I - P) applied to each row of `rows`.
  Matrix ResidualRows(const Matrix& rows) const;
  bool full() const { return rank() > 0 && rank() == ambient_dim(); }
  // Dense P; tests and diagnostics only.
  Eigen::MatrixXd Dense() const;

 private:
  Eigen::MatrixXd basis_{Eigen::MatrixXd::Zero(0, 0)};
  double sv_threshold_ = 0.0;
};

// Span of the rows of `slice` (d x d_h), i.e. a subspace of R^{d_h}. Rank is
// the number of singular values >= rel_tol * sigma_max; an all-zero slice
// yields the rank-0 projector.
SubspaceProjector ColumnSpanProjector(const Matrix& slice, double rel_tol);

// Span of the columns of `gradient` (d x m), a subspace of R^d. For a linear
// layer Y = X W this is the span of the layer inputs that reached the loss.
SubspaceProjector InputSpanProjector(const Matrix& gradient, double rel_tol);

// ||(I - P) x||_2 computed from the basis.
double ResidualNorm(const SubspaceProjector& proj, const Vector& x);

// argmin_a ||target - sum_j a_j atoms_j||^2 + lambda ||a||^2 through the normal
// equations. lambda == 0 with a rank-deficient Gram matrix raises
// ErrorKind::kSingularSystem.
Vector RidgeSolve(std::span<const Vector> atoms, const Vector& target, double lambda);
Vector RidgeSolve(std::span<const Vector* const> atoms, const Vector& target, double lambda);

// Ordered, path-addressed collection of tensors. Used for model parameters and
// for gradient bundles, which share one shape.
class TensorMap {
 public:
  void Add(std::string path, Matrix value);
  bool Contains(const std::string& path) const;
  const Matrix& at(const std::string& path) const;
  Matrix& at(const std::string& path);

  const std::vector<std::string>& paths() const { return paths_; }
  std::size_t size() const { return paths_.size(); }
  std::size_t TotalSize() const;
  std::size_t TotalSize(std::span<const std::string> order) const;

  const Matrix& value(std::size_t i) const { return values_[i]; }
  Matrix& value(std::size_t i) { return values_[i]; }

  // Same paths and shapes, every entry zero.
  TensorMap ZerosLike() const;
  bool SameShape(const TensorMap& other) const;

  TensorMap& operator+=(const TensorMap& other);
  TensorMap& operator*=(double scale);
  // this += scale * other
  void AddScaled(const TensorMap& other, double scale);

 private:
  std::vector<std::string> paths_;
  std::vector<Matrix> values_;
  std::map<std::string, std::size_t> index_;
};

// Concatenates the tensors named in `order` (each row-major) into one vector.
Vector Flatten(const TensorMap& tensors, std::span<const std::string> order);
// Inverse of Flatten: shapes come from `like`, entries outside `order` are zero.
TensorMap Unflatten(const Vector& flat, const TensorMap& like,
                    std::span<const std::string> order);

}  // namespace gradleak
