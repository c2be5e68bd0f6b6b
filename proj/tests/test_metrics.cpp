#include "ggmtl/metrics.hpp"

#include <gtest/gtest.h>

#include <array>
#include <random>
#include <vector>

namespace ggmtl {
namespace {

// Classical edge-level confusion-matrix metrics on crisp symmetric
// adjacencies; the diagonal counts as agreement.
struct ClassicalReport {
  double accuracy, recall, precision;
};

ClassicalReport classical_metrics(const Matrix& truth, const Matrix& pred) {
  const int n = static_cast<int>(truth.rows());
  double tp = 0, tn = 0, fp = 0, fn = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) {
        ++tn;
        continue;
      }
      const bool t = truth(i, j) != 0.0;
      const bool p = pred(i, j) != 0.0;
      if (t && p) ++tp;
      else if (!t && !p) ++tn;
      else if (!t && p) ++fp;
      else ++fn;
    }
  }
  ClassicalReport r;
  r.accuracy = (tp + tn) / static_cast<double>(n * n);
  r.recall = (tp + fn) > 0 ? tp / (tp + fn) : 1.0;
  r.precision = (tp + fp) > 0 ? tp / (tp + fp) : 1.0;
  return r;
}

Matrix crisp_from_mask(int bits) {
  // 4 nodes, 6 off-diagonal slots: (0,1),(0,2),(0,3),(1,2),(1,3),(2,3)
  Matrix a = Matrix::Zero(4, 4);
  int slot = 0;
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) {
      if (bits & (1 << slot)) a(i, j) = a(j, i) = 1.0;
      ++slot;
    }
  }
  return a;
}

TEST(Fuzzy, LukasiewiczTables) {
  EXPECT_DOUBLE_EQ(tnorm(0.7, 0.6), 0.3);
  EXPECT_DOUBLE_EQ(tnorm(0.2, 0.3), 0.0);
  EXPECT_DOUBLE_EQ(tconorm(0.7, 0.6), 1.0);
  EXPECT_DOUBLE_EQ(tconorm(0.2, 0.3), 0.5);

  // crisp XOR truth table
  EXPECT_DOUBLE_EQ(fuzzy_xor(1.0, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(fuzzy_xor(0.0, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(fuzzy_xor(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(fuzzy_xor(0.0, 0.0), 0.0);

  // half-half: S = 1, T = 0, XOR = T(1, 1) = 1
  EXPECT_DOUBLE_EQ(fuzzy_xor(0.5, 0.5), 1.0);
}

TEST(Fuzzy, RejectsOutOfRange) {
  EXPECT_THROW(tnorm(1.2, 0.0), ValidationError);
  EXPECT_THROW(tconorm(0.0, -0.1), ValidationError);
}

TEST(Fuzzy, OrderingOnGrid) {
  for (int a = 0; a <= 20; ++a) {
    for (int b = 0; b <= 20; ++b) {
      const double x = a * 0.05, y = b * 0.05;
      EXPECT_LE(tnorm(x, y), std::min(x, y) + 1e-15);
      EXPECT_GE(tconorm(x, y), std::min(x, y) - 1e-15);
    }
  }
}

TEST(Normalize, ScalesByLargestEntry) {
  Matrix raw(2, 2);
  raw << 0, 2, 2, 0;
  const FuzzyAdjacency a = normalize_adjacency(raw);
  EXPECT_DOUBLE_EQ(a.a(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(a.a(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(a.a(0, 0), 0.0);
}

TEST(Normalize, AllNegativeBecomesZero) {
  Matrix raw = -Matrix::Ones(3, 3);
  const FuzzyAdjacency a = normalize_adjacency(raw);
  EXPECT_EQ(a.a.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Normalize, DiagonalIgnored) {
  Matrix raw(3, 3);
  raw << 100, 1, 0, 1, 100, 2, 0, 2, 100;
  const FuzzyAdjacency a = normalize_adjacency(raw);
  EXPECT_DOUBLE_EQ(a.a(1, 2), 1.0);  // largest off-diagonal becomes 1
  EXPECT_DOUBLE_EQ(a.a(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(a.a(0, 0), 0.0);
}

TEST(Normalize, SymmetrizesByMax) {
  Matrix raw = Matrix::Zero(2, 2);
  raw(0, 1) = 4.0;  // asymmetric input
  const FuzzyAdjacency a = normalize_adjacency(raw);
  EXPECT_DOUBLE_EQ(a.a(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(a.a(1, 0), 1.0);
}

TEST(Veracity, PerfectOverlap) {
  const Matrix truth = crisp_from_mask(0b101101);
  const VeracityReport r =
      veracity(FuzzyAdjacency(truth), FuzzyAdjacency(truth));
  EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(r.recall, 1.0);
  EXPECT_DOUBLE_EQ(r.precision, 1.0);
  EXPECT_DOUBLE_EQ(r.f1, 1.0);
}

TEST(Veracity, ComplementHasZeroRecall) {
  const Matrix truth = crisp_from_mask(0b000111);
  Matrix comp = Matrix::Ones(4, 4) - truth;
  comp.diagonal().setZero();
  const VeracityReport r = veracity(FuzzyAdjacency(truth), FuzzyAdjacency(comp));
  EXPECT_DOUBLE_EQ(r.recall, 0.0);
  EXPECT_DOUBLE_EQ(r.precision, 0.0);
  EXPECT_DOUBLE_EQ(r.f1, 0.0);
}

// Oracle: classical binary confusion-matrix metrics on random crisp pairs.
TEST(Veracity, CrispMatchesClassical) {
  std::mt19937 rng(5);
  std::uniform_int_distribution<int> mask(0, 63);
  for (int trial = 0; trial < 60; ++trial) {
    const Matrix t = crisp_from_mask(mask(rng));
    const Matrix p = crisp_from_mask(mask(rng));
    const VeracityReport fuzzy = veracity(FuzzyAdjacency(t), FuzzyAdjacency(p));
    const ClassicalReport classical = classical_metrics(t, p);
    EXPECT_DOUBLE_EQ(fuzzy.accuracy, classical.accuracy);
    EXPECT_DOUBLE_EQ(fuzzy.recall, classical.recall);
    EXPECT_DOUBLE_EQ(fuzzy.precision, classical.precision);
  }
}

// Self-comparison is all-ones on crisp matrices. (The Lukasiewicz T-norm has
// T(a,a) < a for 0 < a < 1, so the same does not hold for fractional
// weights: that is a property of the logic, not a bug.)
TEST(Veracity, CrispSelfComparisonIsAllOnes) {
  for (int mask = 1; mask < 64; ++mask) {
    const FuzzyAdjacency a(crisp_from_mask(mask));
    const VeracityReport r = veracity(a, a);
    EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
    EXPECT_DOUBLE_EQ(r.recall, 1.0);
    EXPECT_DOUBLE_EQ(r.precision, 1.0);
    EXPECT_DOUBLE_EQ(r.f1, 1.0);
  }
}

TEST(Veracity, FuzzySelfComparisonPenalizedByTnorm) {
  Matrix raw(3, 3);
  raw << 0, 0.4, 0.9, 0.4, 0, 0.2, 0.9, 0.2, 0;
  const FuzzyAdjacency a(raw);
  const VeracityReport r = veracity(a, a);
  // sum T(a,a) = 2 * max(2*0.9 - 1, 0) = 1.6 over sum a = 3.0
  EXPECT_NEAR(r.recall, 1.6 / 3.0, 1e-14);
  EXPECT_NEAR(r.precision, 1.6 / 3.0, 1e-14);
}

TEST(Veracity, EmptyGraphsAgree) {
  const FuzzyAdjacency zero{Matrix::Zero(3, 3)};
  const VeracityReport r = veracity(zero, zero);
  EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(r.recall, 1.0);
  EXPECT_DOUBLE_EQ(r.precision, 1.0);
  EXPECT_DOUBLE_EQ(r.f1, 1.0);
}

TEST(Veracity, InvariantUnderJointPermutation) {
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const int n = 5;
  Matrix t = Matrix::Zero(n, n), p = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      t(i, j) = t(j, i) = unif(rng);
      p(i, j) = p(j, i) = unif(rng);
    }
  }
  const std::vector<int> perm{3, 0, 4, 1, 2};
  Matrix pt = Matrix::Zero(n, n), pp = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      pt(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]) = t(i, j);
      pp(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]) = p(i, j);
    }
  }
  const VeracityReport a = veracity(FuzzyAdjacency(t), FuzzyAdjacency(p));
  const VeracityReport b = veracity(FuzzyAdjacency(pt), FuzzyAdjacency(pp));
  EXPECT_NEAR(a.accuracy, b.accuracy, 1e-14);
  EXPECT_NEAR(a.recall, b.recall, 1e-14);
  EXPECT_NEAR(a.precision, b.precision, 1e-14);
}

// The literal min(a,b) reading of the source breaks the crisp XOR; the flag
// exposes that behavior.
TEST(Veracity, LiteralTconormFlagChangesAccuracy) {
  const Matrix t = crisp_from_mask(0b111000);
  const Matrix p = crisp_from_mask(0b000111);
  VeracityOptions literal;
  literal.literal_min_tconorm = true;
  const VeracityReport strict = veracity(FuzzyAdjacency(t), FuzzyAdjacency(p), literal);
  const VeracityReport fixed = veracity(FuzzyAdjacency(t), FuzzyAdjacency(p));
  // with min(a,b) the XOR of disagreeing crisp pairs is 0, so accuracy is 1
  EXPECT_DOUBLE_EQ(strict.accuracy, 1.0);
  EXPECT_LT(fixed.accuracy, 1.0);
}

TEST(Rmse, HandValues) {
  Matrix x(4, 2);
  x << 1, 0, 0, 1, 1, 1, 2, 0;
  const Vector w = (Vector(2) << 0.5, -1.0).finished();
  StackedModel m{w.transpose()};

  std::vector<TaskData> exact{{x, x * w}};
  EXPECT_DOUBLE_EQ(rmse(m, exact), 0.0);

  std::vector<TaskData> offset{{x, (x * w).array() + 2.5}};
  EXPECT_NEAR(rmse(m, offset), 2.5, 1e-12);
}

// Oracle: direct per-task recomputation.
TEST(Rmse, MatchesDirectComputation) {
  std::mt19937 rng(13);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int n = 3, d = 4;
  Matrix w(n, d);
  std::vector<TaskData> data;
  double expected = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < d; ++c) w(i, c) = normal(rng);
    TaskData t;
    t.X = Matrix(6, d);
    t.y = Vector(6);
    for (int r = 0; r < 6; ++r) {
      for (int c = 0; c < d; ++c) t.X(r, c) = normal(rng);
      t.y[r] = normal(rng);
    }
    double sse = 0.0;
    for (int r = 0; r < 6; ++r) {
      const double pred = t.X.row(r).dot(w.row(i));
      sse += (pred - t.y[r]) * (pred - t.y[r]);
    }
    expected += std::sqrt(sse / 6.0);
    data.push_back(std::move(t));
  }
  expected /= n;
  EXPECT_NEAR(rmse({w}, data), expected, 1e-12);
}

TEST(Rmse, EmptyTaskRejected) {
  StackedModel m{Matrix::Zero(1, 2)};
  std::vector<TaskData> data;
  data.push_back({Matrix(0, 2), Vector(0)});
  EXPECT_THROW(rmse(m, data), ValidationError);
}

TEST(FuzzyAdjacency, ValidatesShape) {
  Matrix bad(2, 2);
  bad << 0, 0.5, 0.4, 0;  // asymmetric
  EXPECT_THROW(FuzzyAdjacency{bad}, ValidationError);
  Matrix diag(2, 2);
  diag << 0.1, 0, 0, 0;  // nonzero diagonal
  EXPECT_THROW(FuzzyAdjacency{diag}, ValidationError);
}

}  // namespace
}  // namespace ggmtl
