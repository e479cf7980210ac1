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

#include "gradleak/linalg.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <utility>

#include "gradleak/error.hpp"

namespace gradleak {

bool AllFinite(const Matrix& m) { return m.allFinite(); }
bool AllFinite(const Vector& v) { return v.allFinite(); }

SubspaceProjector::SubspaceProjector(Eigen::MatrixXd basis, double sv_threshold)
    : basis_(std::move(basis)), sv_threshold_(sv_threshold) {}

SubspaceProjector SubspaceProjector::Zero(std::size_t ambient_dim) {
  return SubspaceProjector(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ambient_dim), 0), 0.0);
}

Vector SubspaceProjector::Project(const Vector& x) const {
  Require(static_cast<std::size_t>(x.size()) == ambient_dim(), ErrorKind::kInvalidInput,
          "projector: vector length does not match ambient dimension");
  if (rank() == 0) return Vector::Zero(x.size());
  if (full()) return x;
  return basis_ * (basis_.transpose() * x);
}

Vector SubspaceProjector::Residual(const Vector& x) const { return x - Project(x); }

Matrix SubspaceProjector::ResidualRows(const Matrix& rows) const {
  Require(static_cast<std::size_t>(rows.cols()) == ambient_dim(), ErrorKind::kInvalidInput,
          "projector: row length does not match ambient dimension");
  if (rank() == 0) return rows;
  if (full()) return Matrix::Zero(rows.rows(), rows.cols());
  return rows - (rows * basis_) * basis_.transpose();
}

Eigen::MatrixXd SubspaceProjector::Dense() const { return basis_ * basis_.transpose(); }

namespace {

// Left singular vectors of `m` whose singular values clear rel_tol * sigma_max.
SubspaceProjector LeftSpan(const Eigen::MatrixXd& m, double rel_tol) {
  Require(rel_tol > 0.0 && rel_tol < 1.0, ErrorKind::kInvalidInput,
          "projector: rel_tol must lie in (0, 1)");
  Require(m.allFinite(), ErrorKind::kNumeric, "projector: non-finite entries in slice");
  const auto ambient = static_cast<std::size_t>(m.rows());
  if (m.size() == 0 || m.cwiseAbs().maxCoeff() == 0.0) return SubspaceProjector::Zero(ambient);

  Eigen::BDCSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double threshold = rel_tol * sv(0);
  Eigen::Index r = 0;
  while (r < sv.size() && sv(r) >= threshold) ++r;
  return SubspaceProjector(svd.matrixU().leftCols(r), threshold);
}

}  // namespace

SubspaceProjector ColumnSpanProjector(const Matrix& slice, double rel_tol) {
  return LeftSpan(slice.transpose(), rel_tol);
}

SubspaceProjector InputSpanProjector(const Matrix& gradient, double rel_tol) {
  return LeftSpan(gradient, rel_tol);
}

double ResidualNorm(const SubspaceProjector& proj, const Vector& x) {
  Require(static_cast<std::size_t>(x.size()) == proj.ambient_dim(), ErrorKind::kInvalidInput,
          "residual_norm: vector length does not match ambient dimension");
  if (proj.rank() == 0) return x.norm();
  if (proj.full()) return 0.0;
  const Vector coeffs = proj.basis().transpose() * x;
  return (x - proj.basis() * coeffs).norm();
}

Vector RidgeSolve(std::span<const Vector* const> atoms, const Vector& target, double lambda) {
  Require(lambda >= 0.0 && std::isfinite(lambda), ErrorKind::kInvalidInput,
          "ridge_solve: lambda must be finite and >= 0");
  const auto k = static_cast<Eigen::Index>(atoms.size());
  if (k == 0) return Vector(0);
  for (const Vector* a : atoms) {
    Require(a->size() == target.size(), ErrorKind::kInvalidInput,
            "ridge_solve: atom length differs from target length");
  }
  Eigen::MatrixXd gram(k, k);
  Vector rhs(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    rhs(i) = atoms[i]->dot(target);
    for (Eigen::Index j = 0; j <= i; ++j) {
      gram(i, j) = gram(j, i) = atoms[i]->dot(*atoms[j]);
    }
  }
  gram.diagonal().array() += lambda;

  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success || llt.rcond() < 1e-14) {
    Fail(ErrorKind::kSingularSystem, "ridge_solve: normal equations are singular; use lambda > 0");
  }
  Vector alpha = llt.solve(rhs);
  Require(alpha.allFinite(), ErrorKind::kNumeric, "ridge_solve: non-finite coefficients");
  return alpha;
}

Vector RidgeSolve(std::span<const Vector> atoms, const Vector& target, double lambda) {
  std::vector<const Vector*> ptrs;
  ptrs.reserve(atoms.size());
  for (const Vector& a : atoms) ptrs.push_back(&a);
  return RidgeSolve(std::span<const Vector* const>(ptrs), target, lambda);
}

// ---------------------------------------------------------------------------
// TensorMap

void TensorMap::Add(std::string path, Matrix value) {
  Require(!index_.contains(path), ErrorKind::kInvalidInput, "tensor map: duplicate path " + path);
  index_.emplace(path, paths_.size());
  paths_.push_back(std::move(path));
  values_.push_back(std::move(value));
}

bool TensorMap::Contains(const std::string& path) const { return index_.contains(path); }

const Matrix& TensorMap::at(const std::string& path) const {
  auto it = index_.find(path);
  Require(it != index_.end(), ErrorKind::kInvalidInput, "tensor map: missing path " + path);
  return values_[it->second];
}

Matrix& TensorMap::at(const std::string& path) {
  auto it = index_.find(path);
  Require(it != index_.end(), ErrorKind::kInvalidInput, "tensor map: missing path " + path);
  return values_[it->second];
}

std::size_t TensorMap::TotalSize() const {
  std::size_t n = 0;
  for (const Matrix& m : values_) n += static_cast<std::size_t>(m.size());
  return n;
}

std::size_t TensorMap::TotalSize(std::span<const std::string> order) const {
  std::size_t n = 0;
  for (const std::string& p : order) n += static_cast<std::size_t>(at(p).size());
  return n;
}

TensorMap TensorMap::ZerosLike() const {
  TensorMap out;
  for (std::size_t i = 0; i < paths_.size(); ++i) {
    out.Add(paths_[i], Matrix::Zero(values_[i].rows(), values_[i].cols()));
  }
  return out;
}

bool TensorMap::SameShape(const TensorMap& other) const {
  if (paths_ != other.paths_) return false;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (values_[i].rows() != other.values_[i].rows() ||
        values_[i].cols() != other.values_[i].cols()) {
      return false;
    }
  }
  return true;
}

TensorMap& TensorMap::operator+=(const TensorMap& other) {
  AddScaled(other, 1.0);
  return *this;
}

TensorMap& TensorMap::operator*=(double scale) {
  for (Matrix& m : values_) m *= scale;
  return *this;
}

void TensorMap::AddScaled(const TensorMap& other, double scale) {
  Require(SameShape(other), ErrorKind::kInvalidInput, "tensor map: shape mismatch");
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (scale == 1.0) {
      values_[i] += other.values_[i];
    } else {
      values_[i] += scale * other.values_[i];
    }
  }
}

Vector Flatten(const TensorMap& tensors, std::span<const std::string> order) {
  Vector out(static_cast<Eigen::Index>(tensors.TotalSize(order)));
  Eigen::Index offset = 0;
  for (const std::string& path : order) {
    const Matrix& m = tensors.at(path);
    out.segment(offset, m.size()) = Eigen::Map<const Vector>(m.data(), m.size());
    offset += m.size();
  }
  return out;
}

TensorMap Unflatten(const Vector& flat, const TensorMap& like,
                    std::span<const std::string> order) {
  Require(static_cast<std::size_t>(flat.size()) == like.TotalSize(order),
          ErrorKind::kInvalidInput, "unflatten: vector length does not match parameter order");
  TensorMap out = like.ZerosLike();
  Eigen::Index offset = 0;
  for (const std::string& path : order) {
    Matrix& m = out.at(path);
    Eigen::Map<Vector>(m.data(), m.size()) = flat.segment(offset, m.size());
    offset += m.size();
  }
  return out;
}

}  // namespace gradleak
