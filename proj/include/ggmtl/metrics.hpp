#pragma once

#include <cmath>
#include <span>
#include <utility>

#include "ggmtl/linalg.hpp"
#include "ggmtl/model.hpp"

namespace ggmtl {

namespace detail {
inline void require_unit_interval(double a, const char* name) {
  if (!(a >= 0.0 && a <= 1.0)) {
    throw ValidationError(std::string(name) + ": arguments must lie in [0,1]");
  }
}
}  // namespace detail

// Lukasiewicz T-norm: max(a + b - 1, 0).
inline double tnorm(double a, double b) {
  detail::require_unit_interval(a, "tnorm");
  detail::require_unit_interval(b, "tnorm");
  return std::max(a + b - 1.0, 0.0);
}

// Lukasiewicz T-conorm: min(a + b, 1).
inline double tconorm(double a, double b) {
  detail::require_unit_interval(a, "tconorm");
  detail::require_unit_interval(b, "tconorm");
  return std::min(a + b, 1.0);
}

// Fuzzy XOR: T(S(a,b), 1 - T(a,b)).
inline double fuzzy_xor(double a, double b) {
  return tnorm(tconorm(a, b), 1.0 - tnorm(a, b));
}

// Symmetric [0,1] adjacency with zero diagonal.
struct FuzzyAdjacency {
  Matrix a;

  explicit FuzzyAdjacency(Matrix m) : a(std::move(m)) {
    if (a.rows() != a.cols()) throw ValidationError("FuzzyAdjacency: matrix must be square");
    for (int i = 0; i < a.rows(); ++i) {
      if (a(i, i) != 0.0) throw ValidationError("FuzzyAdjacency: nonzero diagonal");
      for (int j = 0; j < a.cols(); ++j) {
        if (!(a(i, j) >= 0.0 && a(i, j) <= 1.0)) {
          throw ValidationError("FuzzyAdjacency: entry outside [0,1]");
        }
        if (a(i, j) != a(j, i)) throw ValidationError("FuzzyAdjacency: matrix must be symmetric");
      }
    }
  }

  int n() const { return static_cast<int>(a.rows()); }
};

// Zero the diagonal, drop negative entries, divide by the largest entry
// (identity when everything is zero), then symmetrize by element-wise max.
inline FuzzyAdjacency normalize_adjacency(const Matrix& raw) {
  if (raw.rows() != raw.cols()) throw ValidationError("normalize_adjacency: matrix must be square");
  Matrix a = raw;
  a.diagonal().setZero();
  a = a.cwiseMax(0.0);
  const double mx = a.maxCoeff();
  if (mx > 0.0) a /= mx;
  a = a.cwiseMax(Matrix(a.transpose()));
  return FuzzyAdjacency(std::move(a));
}

struct VeracityReport {
  double accuracy = 0.0;
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
};

struct VeracityOptions {
  // The source text lists min(a,b) as the T-conorm; that breaks the crisp XOR
  // truth table, so the Lukasiewicz form min(a+b,1) is the default.
  bool literal_min_tconorm = false;
};

// Fuzzy overlap between a ground-truth and a predicted adjacency, summed over
// all ordered pairs. Zero-denominator recall/precision are 1 when the
// numerator is also 0.
inline VeracityReport veracity(const FuzzyAdjacency& truth, const FuzzyAdjacency& predicted,
                               const VeracityOptions& opt = {}) {
  if (truth.n() != predicted.n()) throw ValidationError("veracity: adjacency shapes differ");
  const int n = truth.n();

  double overlap = 0.0, sum_truth = 0.0, sum_pred = 0.0, xor_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double t = truth.a(i, j);
      const double p = predicted.a(i, j);
      overlap += tnorm(t, p);
      sum_truth += t;
      sum_pred += p;
      const double disj = opt.literal_min_tconorm ? std::min(t, p) : tconorm(t, p);
      xor_sum += tnorm(disj, 1.0 - tnorm(t, p));
    }
  }

  VeracityReport r;
  r.accuracy = 1.0 - xor_sum / (static_cast<double>(n) * n);
  r.recall = sum_truth > 0.0 ? overlap / sum_truth : (overlap == 0.0 ? 1.0 : 0.0);
  r.precision = sum_pred > 0.0 ? overlap / sum_pred : (overlap == 0.0 ? 1.0 : 0.0);
  r.f1 = (r.precision + r.recall) > 0.0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  return r;
}

// RMSE averaged over tasks: mean_i sqrt(mean_s (x_s^T w_i - y_s)^2).
inline double rmse(const StackedModel& models, std::span<const TaskData> test_data) {
  if (static_cast<int>(test_data.size()) != models.n_tasks()) {
    throw ValidationError("rmse: task count mismatch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < test_data.size(); ++i) {
    if (test_data[i].X.rows() < 1) throw ValidationError("rmse: empty task");
    const Vector r = test_data[i].X * models.W.row(i).transpose() - test_data[i].y;
    total += std::sqrt(r.squaredNorm() / static_cast<double>(r.size()));
  }
  return total / static_cast<double>(test_data.size());
}

}  // namespace ggmtl
