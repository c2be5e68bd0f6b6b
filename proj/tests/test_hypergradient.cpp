#include "ggmtl/hypergradient.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "ggmtl/mtl_solver.hpp"
#include "ggmtl/task_graph.hpp"

namespace ggmtl {
namespace {

std::mt19937& rng() {
  static std::mt19937 gen(211);
  return gen;
}

Matrix random_matrix(int rows, int cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = normal(rng());
  }
  return m;
}

Vector random_vector(int n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = normal(rng());
  return v;
}

struct Instance {
  std::vector<TaskData> train;
  std::vector<TaskData> val;
  TaskGraph graph = TaskGraph::empty(1);
};

// Random instance on a ring+chord support with edge weights in [lo, hi].
Instance random_instance(int n, int d, int rows, double lo = 0.2, double hi = 0.9) {
  std::uniform_real_distribution<double> unif(lo, hi);
  Instance inst;
  for (int i = 0; i < n; ++i) {
    const Vector w = random_vector(d);
    TaskData tr, va;
    tr.X = random_matrix(rows, d);
    tr.y = tr.X * w + 0.3 * random_vector(rows);
    va.X = random_matrix(rows / 2 + 2, d);
    va.y = va.X * w + 0.3 * random_vector(rows / 2 + 2);
    inst.train.push_back(std::move(tr));
    inst.val.push_back(std::move(va));
  }
  std::vector<GraphEdge> edges;
  if (n == 2) {
    edges.push_back({0, 1, unif(rng())});
  } else {
    for (int i = 0; i < n; ++i) edges.push_back({i, (i + 1) % n, unif(rng())});
    if (n > 3) edges.push_back({0, 2, unif(rng())});
  }
  inst.graph = TaskGraph(n, edges);
  return inst;
}

double max_relative_error(const Vector& got, const Vector& want) {
  double err = 0.0;
  for (Eigen::Index k = 0; k < got.size(); ++k) {
    if (std::abs(want[k]) > 1e-8) {
      err = std::max(err, std::abs(got[k] - want[k]) / std::abs(want[k]));
    }
  }
  return err;
}

TEST(OuterObjective, EntropyExamples) {
  // a model that fits the validation data exactly: zero SSE
  Matrix x = random_matrix(6, 2);
  const Vector w = random_vector(2);
  const std::vector<TaskData> val{{x, x * w}};
  StackedModel m{w.transpose()};

  HyperParams hp;
  hp.gamma = 1.0;
  Vector e1(1);
  e1 << 1.0;
  EXPECT_NEAR(outer_objective(m, e1, val, hp), 1.0, 1e-12);  // H(1) = 1

  Vector eh(1);
  eh << 0.5;
  EXPECT_NEAR(outer_objective(m, eh, val, hp), 0.5 * (1.0 + std::log(2.0)), 1e-12);

  // all regularizers vanish at e = 0: objective is the validation SSE
  HyperParams all;
  all.xi = 2.0;
  all.eta = 3.0;
  all.gamma = 4.0;
  StackedModel off{(w.array() + 0.5).matrix().transpose()};
  const double sse = (x * off.W.row(0).transpose() - val[0].y).squaredNorm();
  EXPECT_NEAR(outer_objective(off, Vector::Zero(1), val, all), sse, 1e-10);
}

TEST(OuterObjective, RejectsOutOfRangeEdges) {
  const std::vector<TaskData> val{{Matrix::Identity(2, 2), Vector::Zero(2)}};
  StackedModel m{Matrix::Zero(1, 2)};
  Vector e(1);
  e << 1.5;
  HyperParams hp;
  EXPECT_THROW(outer_objective(m, e, val, hp), ValidationError);
}

// X^val V = Y^val exactly and no regularizers: C = 0, gradient vanishes.
TEST(Hypergradient, ZeroAtPerfectValidationFit) {
  const Vector w = random_vector(3);
  std::vector<TaskData> train, val;
  for (int i = 0; i < 2; ++i) {
    TaskData tr, va;
    tr.X = random_matrix(12, 3);
    tr.y = tr.X * w;  // same noiseless model for both tasks
    va.X = random_matrix(8, 3);
    va.y = va.X * w;
    train.push_back(std::move(tr));
    val.push_back(std::move(va));
  }
  const TaskGraph g(2, {{0, 1, 0.7}});
  HyperParams hp;
  hp.lambda = 2.0;
  const Vector grad = hypergradient(g, train, val, hp);
  EXPECT_LT(grad.cwiseAbs().maxCoeff(), 1e-8);
}

// Same instance with xi only: the gradient is the exact derivative of
// xi |e|^2, i.e. 2 xi e.
TEST(Hypergradient, RegularizerOnlyPath) {
  const Vector w = random_vector(3);
  std::vector<TaskData> train, val;
  for (int i = 0; i < 2; ++i) {
    TaskData tr, va;
    tr.X = random_matrix(12, 3);
    tr.y = tr.X * w;
    va.X = random_matrix(8, 3);
    va.y = va.X * w;
    train.push_back(std::move(tr));
    val.push_back(std::move(va));
  }
  const TaskGraph g(2, {{0, 1, 0.3}});
  HyperParams hp;
  hp.xi = 1.0;
  hp.lambda = 2.0;
  const Vector grad = hypergradient(g, train, val, hp);
  ASSERT_EQ(grad.size(), 1);
  EXPECT_NEAR(grad[0], 2.0 * 1.0 * 0.3, 1e-9);

  // and the finite-difference oracle agrees on the same instance
  const Vector fd = fd_hypergradient(g, train, val, hp, 1e-6);
  EXPECT_NEAR(fd[0], grad[0], 1e-6);
}

// The central oracle: closed form vs finite differences with every
// regularizer active.
TEST(Hypergradient, MatchesFiniteDifferences) {
  for (int inst_id = 0; inst_id < 6; ++inst_id) {
    const int n = inst_id % 2 == 0 ? 3 : 5;
    const int d = inst_id % 3 == 0 ? 2 : 3;
    Instance inst = random_instance(n, d, 20);
    HyperParams hp;
    hp.xi = 0.4;
    hp.eta = 0.2;
    hp.gamma = 0.3;
    hp.lambda = 1.5;
    const Vector grad = hypergradient(inst.graph, inst.train, inst.val, hp);
    const Vector fd = fd_hypergradient(inst.graph, inst.train, inst.val, hp, 1e-6);
    EXPECT_LT(max_relative_error(grad, fd), 1e-5) << "instance " << inst_id;
  }
}

// lambda = 0 decouples the inner solution from e: the data term vanishes and
// only regularizer derivatives remain.
TEST(Hypergradient, LambdaZeroLeavesRegularizersOnly) {
  Instance inst = random_instance(4, 2, 15);
  HyperParams hp;
  hp.xi = 0.5;
  hp.eta = 0.1;
  hp.gamma = 0.2;
  hp.lambda = 0.0;
  const Vector grad = hypergradient(inst.graph, inst.train, inst.val, hp);
  const Vector e = inst.graph.weights();
  for (Eigen::Index k = 0; k < e.size(); ++k) {
    const double expected = 2.0 * hp.xi * e[k] + hp.eta - hp.gamma * std::log(e[k]);
    EXPECT_NEAR(grad[k], expected, 1e-12);
  }
  const Vector fd = fd_hypergradient(inst.graph, inst.train, inst.val, hp, 1e-6);
  EXPECT_LT(max_relative_error(grad, fd), 1e-5);
}

TEST(FdHypergradient, SingleEdgeScalarQuotient) {
  Instance inst = random_instance(2, 2, 10);
  HyperParams hp;
  hp.gamma = 0.25;
  hp.lambda = 1.0;
  const double h = 1e-5;
  const Vector fd = fd_hypergradient(inst.graph, inst.train, inst.val, hp, h);

  const Vector e = inst.graph.weights();
  auto value_at = [&](double ek) {
    Vector shifted = e;
    shifted[0] = ek;
    const TaskGraph g = inst.graph.with_weights(shifted);
    const StackedModel v = solve_inner_sq(inst.train, g, hp.lambda, hp.solver_options());
    return outer_objective(v, shifted, inst.val, hp);
  };
  const double hi = e[0] + h, lo = e[0] - h;
  const double manual = (value_at(hi) - value_at(lo)) / (hi - lo);
  EXPECT_NEAR(fd[0], manual, 1e-12);
}

// The data term is invariant under task reordering up to the edge relabeling.
TEST(Hypergradient, PermutationEquivariance) {
  const int n = 4, d = 3;
  Instance inst = random_instance(n, d, 14);
  HyperParams hp;
  hp.xi = 0.3;
  hp.eta = 0.1;
  hp.gamma = 0.2;
  hp.lambda = 2.0;
  const Vector grad = hypergradient(inst.graph, inst.train, inst.val, hp);

  const std::vector<int> perm{2, 0, 3, 1};
  std::vector<TaskData> ptrain(static_cast<std::size_t>(n)), pval(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    ptrain[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = inst.train[static_cast<std::size_t>(i)];
    pval[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = inst.val[static_cast<std::size_t>(i)];
  }
  std::vector<GraphEdge> pedges;
  for (const GraphEdge& e : inst.graph.edges()) {
    pedges.push_back({perm[static_cast<std::size_t>(e.i)], perm[static_cast<std::size_t>(e.j)], e.w});
  }
  const TaskGraph pgraph(n, pedges);
  const Vector pgrad = hypergradient(pgraph, ptrain, pval, hp);

  // map each original edge to its position in the permuted graph
  const auto& orig = inst.graph.edges();
  for (int k = 0; k < inst.graph.n_edges(); ++k) {
    const int pi = perm[static_cast<std::size_t>(orig[static_cast<std::size_t>(k)].i)];
    const int pj = perm[static_cast<std::size_t>(orig[static_cast<std::size_t>(k)].j)];
    const auto key = std::pair(std::min(pi, pj), std::max(pi, pj));
    int pk = -1;
    const auto& pe = pgraph.edges();
    for (int q = 0; q < pgraph.n_edges(); ++q) {
      if (std::pair(pe[static_cast<std::size_t>(q)].i, pe[static_cast<std::size_t>(q)].j) == key) pk = q;
    }
    ASSERT_GE(pk, 0);
    EXPECT_NEAR(grad[k], pgrad[pk], 1e-9);
  }
}

TEST(UpdateEdges, ClampsToBox) {
  Vector e(3), g(3);
  e << 0.5, 0.5, 0.2;
  g << 0.0, 10.0, -10.0;
  const Vector out = update_edges(e, g, 0.1);
  EXPECT_DOUBLE_EQ(out[0], 0.5);  // zero gradient leaves the weight alone
  EXPECT_DOUBLE_EQ(out[1], 0.0);  // clamped below
  EXPECT_DOUBLE_EQ(out[2], 1.0);  // clamped above
  EXPECT_THROW(update_edges(e, g, 0.0), ValidationError);
}

TEST(ClosedForm, RequiresThmPreconditions) {
  Instance inst = random_instance(3, 2, 10);
  HyperParams hp;
  hp.eta = 0.0;
  EXPECT_THROW(closed_form_edges(inst.graph, inst.train, inst.val, hp), ValidationError);
  hp.eta = 0.5;
  hp.gamma = 0.1;
  EXPECT_THROW(closed_form_edges(inst.graph, inst.train, inst.val, hp), ValidationError);
}

TEST(ClosedForm, DegenerateModelsRejected) {
  // identical constant tasks make every w_i equal, so M = 0
  Matrix x = Matrix::Identity(4, 2);
  Vector y(4);
  y << 1, 2, 1, 2;
  std::vector<TaskData> train{{x, y}, {x, y}};
  std::vector<TaskData> val{{x, y}, {x, y}};
  const TaskGraph g(2, {{0, 1, 0.5}});
  HyperParams hp;
  hp.eta = 0.5;
  EXPECT_THROW(closed_form_edges(g, train, val, hp), ValidationError);
}

// Oracle: dense construction at m = 1 via the workspace quantities, plus a
// grid scan for the box optimum.
TEST(ClosedForm, TinySystemMinimizesResidual) {
  Instance inst = random_instance(2, 2, 12);
  HyperParams hp;
  hp.eta = 0.3;
  hp.lambda = 1.0;
  const EdgeSystem sys = closed_form_system(inst.graph, inst.train, inst.val, hp);
  const Vector e = closed_form_edges(inst.graph, inst.train, inst.val, hp);
  ASSERT_EQ(e.size(), 1);
  EXPECT_GE(e[0], 0.0);
  EXPECT_LE(e[0], 1.0);

  const double got = (sys.u_matrix * e - sys.v).norm();
  double best = 1e300;
  for (int i = 0; i <= 1000; ++i) {
    Vector probe(1);
    probe << i / 1000.0;
    best = std::min(best, (sys.u_matrix * probe - sys.v).norm());
  }
  EXPECT_LE(got, best + 1e-9);
}

TEST(ClosedForm, ClampsComponentsAboveOne) {
  // craft a system whose unconstrained optimum is far above the box
  Matrix u(4, 1);
  u << 1, 0, 1, 0;
  const Vector v = 3.0 * u.col(0);
  const Vector e = detail::box_least_squares(u, v);
  EXPECT_DOUBLE_EQ(e[0], 1.0);

  const Vector v2 = -2.0 * u.col(0);
  EXPECT_DOUBLE_EQ(detail::box_least_squares(u, v2)[0], 0.0);
}

// Empirical stationarity: the closed-form edges give a smaller gradient norm
// than the all-ones initialization on most random small instances.
TEST(ClosedForm, ReducesGradientNormVsAllOnes) {
  int wins = 0;
  const int total = 10;
  for (int i = 0; i < total; ++i) {
    Instance inst = random_instance(3, 2, 16, 1.0, 1.0);  // e = 1 initialization
    HyperParams hp;
    hp.eta = 0.05;
    hp.lambda = 1.0;
    const Vector e_cf =
        closed_form_edges(inst.graph, inst.train, inst.val, hp, EdgeSolveScaling::gradient);
    const Vector g_ones = hypergradient(inst.graph, inst.train, inst.val, hp);
    const Vector g_cf =
        hypergradient(inst.graph.with_weights(e_cf), inst.train, inst.val, hp);
    if (g_cf.norm() < g_ones.norm()) ++wins;
  }
  EXPECT_GE(wins, 8) << "closed-form edges reduced the gradient norm on only " << wins << "/"
                     << total << " instances";
}

}  // namespace
}  // namespace ggmtl
