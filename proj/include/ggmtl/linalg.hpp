#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "ggmtl/error.hpp"

namespace ggmtl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

namespace detail {

// Scoped cap (in coefficients) on dense temporaries created by the solver
// layer. 0 means unrestricted. The bench runs the hypergradient pipeline
// under a cap far below (nd)^2 to prove no dense system matrix is formed.
inline std::size_t& dense_alloc_cap() {
  thread_local std::size_t cap = 0;
  return cap;
}

inline void check_dense_alloc(std::size_t coeffs) {
  const std::size_t cap = dense_alloc_cap();
  if (cap != 0 && coeffs > cap) {
    throw NumericalError("dense temporary of " + std::to_string(coeffs) +
                         " coefficients exceeds the active allocation cap of " +
                         std::to_string(cap));
  }
}

class DenseAllocCapGuard {
 public:
  explicit DenseAllocCapGuard(std::size_t cap) : previous_(dense_alloc_cap()) {
    dense_alloc_cap() = cap;
  }
  ~DenseAllocCapGuard() { dense_alloc_cap() = previous_; }
  DenseAllocCapGuard(const DenseAllocCapGuard&) = delete;
  DenseAllocCapGuard& operator=(const DenseAllocCapGuard&) = delete;

 private:
  std::size_t previous_;
};

inline double max_abs_coeff(const SparseMatrix& a) {
  double m = 0.0;
  for (int k = 0; k < a.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(a, k); it; ++it) {
      m = std::max(m, std::abs(it.value()));
    }
  }
  return m;
}

inline void require_symmetric(const SparseMatrix& a, const char* where) {
  if (a.rows() != a.cols()) {
    throw ValidationError(std::string(where) + ": matrix is not square");
  }
  SparseMatrix diff = a - SparseMatrix(a.transpose());
  const double scale = std::max(max_abs_coeff(a), 1.0);
  if (max_abs_coeff(diff) > 1e-12 * scale) {
    throw ValidationError(std::string(where) + ": matrix is not symmetric");
  }
}

}  // namespace detail

struct SpdSolveReport {
  int iterations = 0;
  double residual_norm = 0.0;  // relative: |Ax - b| / |b|
  bool converged = false;
};

struct SpdSolveOptions {
  double tol = 1e-10;
  int max_iter = 0;           // 0: 10 * dimension
  int dense_threshold = 200;  // direct factorization at or below this size
  bool jacobi = true;
};

// X = diag(X_1, ..., X_n), held as the list of per-task design blocks.
// The full (sum N_i) x (n d) matrix is never materialized.
class BlockDiagOperator {
 public:
  explicit BlockDiagOperator(std::vector<Matrix> blocks) : blocks_(std::move(blocks)) {
    if (blocks_.empty()) throw ValidationError("BlockDiagOperator: no blocks");
    d_ = static_cast<int>(blocks_.front().cols());
    for (const Matrix& b : blocks_) {
      if (b.cols() != d_) {
        throw ValidationError("BlockDiagOperator: inconsistent column counts across blocks");
      }
      if (b.rows() < 1) throw ValidationError("BlockDiagOperator: empty block");
      if (!b.allFinite()) throw ValidationError("BlockDiagOperator: non-finite block entry");
      total_rows_ += b.rows();
    }
  }

  int n_blocks() const { return static_cast<int>(blocks_.size()); }
  int block_cols() const { return d_; }
  Eigen::Index total_rows() const { return total_rows_; }
  Eigen::Index total_cols() const { return static_cast<Eigen::Index>(blocks_.size()) * d_; }
  const Matrix& block(int i) const { return blocks_.at(static_cast<std::size_t>(i)); }

  // X_i^T X_i, d x d.
  Matrix gram(int i) const {
    const Matrix& b = block(i);
    detail::check_dense_alloc(static_cast<std::size_t>(d_) * d_);
    return b.transpose() * b;
  }

  // y = X v with v stacked per task (length n d).
  Vector apply(const Vector& v) const {
    if (v.size() != total_cols()) throw ValidationError("BlockDiagOperator::apply: size mismatch");
    Vector y(total_rows_);
    Eigen::Index row = 0;
    for (int i = 0; i < n_blocks(); ++i) {
      const Matrix& b = blocks_[static_cast<std::size_t>(i)];
      y.segment(row, b.rows()).noalias() = b * v.segment(static_cast<Eigen::Index>(i) * d_, d_);
      row += b.rows();
    }
    return y;
  }

  // w = X^T u with u stacked per task (length sum N_i).
  Vector apply_transpose(const Vector& u) const {
    if (u.size() != total_rows_) {
      throw ValidationError("BlockDiagOperator::apply_transpose: size mismatch");
    }
    Vector w(total_cols());
    Eigen::Index row = 0;
    for (int i = 0; i < n_blocks(); ++i) {
      const Matrix& b = blocks_[static_cast<std::size_t>(i)];
      w.segment(static_cast<Eigen::Index>(i) * d_, d_).noalias() =
          b.transpose() * u.segment(row, b.rows());
      row += b.rows();
    }
    return w;
  }

 private:
  std::vector<Matrix> blocks_;
  int d_ = 0;
  Eigen::Index total_rows_ = 0;
};

// L = E diag(e) E^T. Each incidence column must hold exactly one +1 and
// one -1. Row sums of the result are zero; off-diagonal (i,j) is -e_ij.
inline SparseMatrix laplacian_from_edges(const SparseMatrix& incidence, const Vector& edge_weights) {
  const int n = static_cast<int>(incidence.rows());
  const int m = static_cast<int>(incidence.cols());
  if (edge_weights.size() != m) {
    throw ValidationError("laplacian_from_edges: edge weight count does not match incidence columns");
  }
  if (!edge_weights.allFinite()) {
    throw ValidationError("laplacian_from_edges: non-finite edge weight");
  }

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(4 * m));
  for (int k = 0; k < m; ++k) {
    int pos = -1, neg = -1, count = 0;
    for (SparseMatrix::InnerIterator it(incidence, k); it; ++it) {
      if (it.value() == 1.0 && pos < 0) {
        pos = static_cast<int>(it.row());
      } else if (it.value() == -1.0 && neg < 0) {
        neg = static_cast<int>(it.row());
      } else if (it.value() != 0.0) {
        throw ValidationError("laplacian_from_edges: incidence column " + std::to_string(k) +
                              " is not a signed indicator pair");
      }
      if (it.value() != 0.0) ++count;
    }
    if (pos < 0 || neg < 0 || count != 2) {
      throw ValidationError("laplacian_from_edges: incidence column " + std::to_string(k) +
                            " must contain exactly one +1 and one -1");
    }
    const double w = edge_weights[k];
    trips.emplace_back(pos, pos, w);
    trips.emplace_back(neg, neg, w);
    trips.emplace_back(pos, neg, -w);
    trips.emplace_back(neg, pos, -w);
  }

  SparseMatrix lap(n, n);
  lap.setFromTriplets(trips.begin(), trips.end());
  lap.makeCompressed();
  return lap;
}

// A = lambda * (L (x) I_d) + diag(X_1^T X_1, ..., X_n^T X_n), sparse (nd x nd).
// Block (i,j) is lambda*L_ij*I_d off the diagonal and lambda*L_ii*I_d + X_i^T X_i
// on it. Only d x d dense blocks are ever formed.
inline SparseMatrix assemble_A(const SparseMatrix& laplacian, const BlockDiagOperator& designs,
                               double lambda) {
  const int n = designs.n_blocks();
  const int d = designs.block_cols();
  if (laplacian.rows() != n || laplacian.cols() != n) {
    throw ValidationError("assemble_A: Laplacian dimension does not match block count");
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ValidationError("assemble_A: lambda must be finite and nonnegative");
  }

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(laplacian.nonZeros()) * d +
                static_cast<std::size_t>(n) * d * d);

  if (lambda > 0.0) {
    for (int k = 0; k < laplacian.outerSize(); ++k) {
      for (SparseMatrix::InnerIterator it(laplacian, k); it; ++it) {
        if (!std::isfinite(it.value())) {
          throw ValidationError("assemble_A: non-finite Laplacian entry");
        }
        const double v = lambda * it.value();
        if (v == 0.0) continue;
        const int bi = static_cast<int>(it.row()) * d;
        const int bj = static_cast<int>(it.col()) * d;
        for (int r = 0; r < d; ++r) trips.emplace_back(bi + r, bj + r, v);
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    const Matrix g = designs.gram(i);
    const int base = i * d;
    for (int c = 0; c < d; ++c) {
      for (int r = 0; r < d; ++r) {
        const double v = g(r, c);
        if (v != 0.0) trips.emplace_back(base + r, base + c, v);
      }
    }
  }

  SparseMatrix a(static_cast<Eigen::Index>(n) * d, static_cast<Eigen::Index>(n) * d);
  a.setFromTriplets(trips.begin(), trips.end());
  a.makeCompressed();
  return a;
}

// Symmetric positive (semi)definite solve: Jacobi-preconditioned conjugate
// gradients, with a direct LDLT path at small sizes so oracles see exact
// solutions. converged implies residual_norm <= tol.
inline std::pair<Vector, SpdSolveReport> spd_solve(const SparseMatrix& a, const Vector& rhs,
                                                   const SpdSolveOptions& opt = {},
                                                   const Vector* warm_start = nullptr) {
  detail::require_symmetric(a, "spd_solve");
  const Eigen::Index n = a.rows();
  if (rhs.size() != n) throw ValidationError("spd_solve: rhs length does not match matrix");

  SpdSolveReport report;
  const double bnorm = rhs.norm();
  if (bnorm == 0.0) {
    report.converged = true;
    return {Vector::Zero(n), report};
  }

  if (n <= opt.dense_threshold) {
    detail::check_dense_alloc(static_cast<std::size_t>(n) * static_cast<std::size_t>(n));
    Matrix dense(a);
    Eigen::LDLT<Matrix> ldlt(dense);
    Vector x = ldlt.solve(rhs);
    report.residual_norm = (a * x - rhs).norm() / bnorm;
    // iterative refinement recovers the tight tolerance on ill-conditioned
    // systems (e.g. consensus-scale lambda)
    for (int pass = 0; pass < 3 && report.residual_norm > opt.tol; ++pass) {
      x += ldlt.solve(rhs - a * x);
      report.residual_norm = (a * x - rhs).norm() / bnorm;
    }
    report.converged = report.residual_norm <= opt.tol;
    return {x, report};
  }

  const int max_iter = opt.max_iter > 0 ? opt.max_iter : static_cast<int>(10 * n);
  Vector inv_diag = Vector::Ones(n);
  if (opt.jacobi) {
    Vector diag = a.diagonal();
    for (Eigen::Index i = 0; i < n; ++i) inv_diag[i] = diag[i] > 0.0 ? 1.0 / diag[i] : 1.0;
  }

  Vector x = warm_start && warm_start->size() == n ? *warm_start : Vector::Zero(n);
  Vector r = rhs - a * x;
  Vector z = inv_diag.cwiseProduct(r);
  Vector p = z;
  double rz = r.dot(z);

  int it = 0;
  while (it < max_iter && r.norm() > opt.tol * bnorm) {
    Vector ap = a * p;
    const double pap = p.dot(ap);
    if (!(pap > 0.0)) break;  // loss of positive definiteness
    const double alpha = rz / pap;
    x += alpha * p;
    r -= alpha * ap;
    ++it;
    // periodic true-residual refresh against recurrence drift
    if (it % 64 == 0) r = rhs - a * x;
    z = inv_diag.cwiseProduct(r);
    const double rz_next = r.dot(z);
    p = z + (rz_next / rz) * p;
    rz = rz_next;
  }

  report.iterations = it;
  report.residual_norm = (a * x - rhs).norm() / bnorm;
  report.converged = report.residual_norm <= opt.tol;
  return {x, report};
}

}  // namespace ggmtl
