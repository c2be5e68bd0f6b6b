#pragma once

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ggmtl/linalg.hpp"
#include "ggmtl/model.hpp"
#include "ggmtl/task_graph.hpp"

namespace ggmtl {

// Multiplicative edge weights of the non-squared-l2 alternation,
// l_ij = 0.5 / max(|w_i - w_j|, eps_guard).
struct EdgeReweights {
  Vector l;
};

namespace detail {

inline BlockDiagOperator design_operator(std::span<const TaskData> data) {
  std::vector<Matrix> blocks;
  blocks.reserve(data.size());
  for (const TaskData& t : data) blocks.push_back(t.X);
  return BlockDiagOperator(std::move(blocks));
}

// X^T Y stacked per task.
inline Vector stacked_xty(std::span<const TaskData> data) {
  const int d = static_cast<int>(data.front().X.cols());
  Vector b(static_cast<Eigen::Index>(data.size()) * d);
  for (std::size_t i = 0; i < data.size(); ++i) {
    b.segment(static_cast<Eigen::Index>(i) * d, d).noalias() = data[i].X.transpose() * data[i].y;
  }
  return b;
}

}  // namespace detail

// Sum over tasks of |X_i w_i - y_i|^2.
inline double data_sse(std::span<const TaskData> data, const StackedModel& models) {
  if (static_cast<int>(data.size()) != models.n_tasks()) {
    throw ValidationError("data_sse: task count mismatch");
  }
  double sse = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    sse += (data[i].X * models.W.row(i).transpose() - data[i].y).squaredNorm();
  }
  return sse;
}

// w_i = argmin |X_i w - y_i|^2 + ridge |w|^2, per task.
inline StackedModel ols_per_task(std::span<const TaskData> data, double ridge = 0.0) {
  validate_tasks(data);
  if (ridge < 0.0) throw ValidationError("ols_per_task: ridge must be nonnegative");
  const int d = static_cast<int>(data.front().X.cols());
  Matrix w(static_cast<int>(data.size()), d);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (ridge == 0.0) {
      Eigen::ColPivHouseholderQR<Matrix> qr(data[i].X);
      if (qr.rank() < d) {
        throw ValidationError("ols_per_task: task " + std::to_string(i) +
                              " is rank deficient; use ridge > 0");
      }
      w.row(i) = qr.solve(data[i].y).transpose();
    } else {
      Matrix g = data[i].X.transpose() * data[i].X;
      g.diagonal().array() += ridge;
      w.row(i) = Eigen::LDLT<Matrix>(g).solve(data[i].X.transpose() * data[i].y).transpose();
    }
  }
  return {std::move(w)};
}

// Dirichlet energy: tr(V^T L_e V) = sum_ij e_ij |w_i - w_j|^2. Both routes are
// evaluated and must agree to 1e-10 relative; the pairwise value is returned.
inline double dirichlet_energy(const StackedModel& models, const TaskGraph& graph) {
  if (models.n_tasks() != graph.n_tasks()) {
    throw ValidationError("dirichlet_energy: task count mismatch");
  }
  double pairwise = 0.0;
  for (const GraphEdge& e : graph.edges()) {
    pairwise += e.w * (models.W.row(e.i) - models.W.row(e.j)).squaredNorm();
  }

  double trace = 0.0;
  const SparseMatrix lap = graph.laplacian();
  for (int k = 0; k < lap.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(lap, k); it; ++it) {
      trace += it.value() * models.W.row(it.row()).dot(models.W.row(it.col()));
    }
  }

  const double scale = std::max({std::abs(pairwise), std::abs(trace), 1e-12});
  if (std::abs(pairwise - trace) > 1e-10 * scale) {
    throw NumericalError("dirichlet_energy: trace and pairwise forms disagree (" +
                         std::to_string(trace) + " vs " + std::to_string(pairwise) + ")");
  }
  return pairwise;
}

// Exact minimizer of the graph-smoothed least squares problem: solves
// (lambda L_e (x) I_d + X^T X) V = X^T Y. lambda = 0 decouples into per-task OLS.
inline StackedModel solve_inner_sq(std::span<const TaskData> data, const TaskGraph& graph,
                                   double lambda, const SpdSolveOptions& opt = {},
                                   const StackedModel* warm_start = nullptr) {
  validate_tasks(data);
  if (static_cast<int>(data.size()) != graph.n_tasks()) {
    throw ValidationError("solve_inner_sq: graph is over a different task count");
  }
  if (lambda < 0.0) throw ValidationError("solve_inner_sq: lambda must be nonnegative");

  const int n = static_cast<int>(data.size());
  const int d = static_cast<int>(data.front().X.cols());
  const BlockDiagOperator designs = detail::design_operator(data);
  const SparseMatrix a = assemble_A(graph.laplacian(), designs, lambda);
  const Vector rhs = detail::stacked_xty(data);

  Vector guess;
  const Vector* guess_ptr = nullptr;
  if (warm_start && warm_start->n_tasks() == n && warm_start->dim() == d) {
    guess = warm_start->stacked();
    guess_ptr = &guess;
  }
  auto [x, report] = spd_solve(a, rhs, opt, guess_ptr);
  if (!report.converged) {
    throw NumericalError("solve_inner_sq: linear solve did not converge (iterations=" +
                         std::to_string(report.iterations) +
                         ", residual=" + std::to_string(report.residual_norm) + ")");
  }
  return StackedModel::from_stacked(x, n, d);
}

// l_ij = 0.5 / max(|w_i - w_j|, eps_guard).
inline EdgeReweights reweights(const StackedModel& models, const TaskGraph& graph,
                               double eps_guard = 1e-8) {
  if (!(eps_guard > 0.0)) throw ValidationError("reweights: eps_guard must be positive");
  Vector l(graph.n_edges());
  const auto& edges = graph.edges();
  for (int k = 0; k < graph.n_edges(); ++k) {
    const GraphEdge& e = edges[static_cast<std::size_t>(k)];
    const double dist = (models.W.row(e.i) - models.W.row(e.j)).norm();
    l[k] = 0.5 / std::max(dist, eps_guard);
  }
  return {std::move(l)};
}

// Inner objective in the squared variant, at the scale whose minimizer is the
// solve_inner_sq solution: |XV - Y|^2 + lambda * sum_ij e_ij |w_i - w_j|^2.
inline double inner_objective_sq(std::span<const TaskData> data, const StackedModel& models,
                                 const TaskGraph& graph, double lambda) {
  return data_sse(data, models) + lambda * dirichlet_energy(models, graph);
}

// Non-squared variant objective: |XV - Y|^2 + lambda * sum_ij e_ij |w_i - w_j|.
inline double inner_objective_l2(std::span<const TaskData> data, const StackedModel& models,
                                 const TaskGraph& graph, double lambda) {
  double penalty = 0.0;
  for (const GraphEdge& e : graph.edges()) {
    penalty += e.w * (models.W.row(e.i) - models.W.row(e.j)).norm();
  }
  return data_sse(data, models) + lambda * penalty;
}

struct InnerL2Result {
  StackedModel models;
  EdgeReweights l;
  int rounds = 0;
  std::vector<double> objective_trace;  // objective after each round
};

// Alternating solver for the non-squared-l2 inner problem: reweight, then
// solve the quadratic sub-problem with edge weights e o l. Majorization makes
// the objective non-increasing across rounds.
inline InnerL2Result solve_inner_l2(std::span<const TaskData> data, const TaskGraph& graph,
                                    double lambda, double eps_guard = 1e-8, double tol = 1e-5,
                                    int max_rounds = 50, const SpdSolveOptions& opt = {}) {
  if (max_rounds < 1) throw ValidationError("solve_inner_l2: max_rounds must be at least 1");

  StackedModel models = solve_inner_sq(data, graph, lambda, opt);
  EdgeReweights l = reweights(models, graph, eps_guard);
  std::vector<double> trace{inner_objective_l2(data, models, graph, lambda)};

  const Vector e = graph.weights();
  const SparseMatrix incidence = graph.incidence();
  const BlockDiagOperator designs = detail::design_operator(data);
  const Vector rhs = detail::stacked_xty(data);

  int rounds = 0;
  for (int round = 1; round <= max_rounds; ++round) {
    // The quadratic step uses weights e o l; the products may exceed 1, so the
    // Laplacian is assembled directly rather than through TaskGraph.
    const SparseMatrix lap = laplacian_from_edges(incidence, e.cwiseProduct(l.l));
    const SparseMatrix a = assemble_A(lap, designs, lambda);
    Vector guess = models.stacked();
    auto [x, report] = spd_solve(a, rhs, opt, &guess);
    if (!report.converged) {
      throw NumericalError("solve_inner_l2: quadratic sub-problem did not converge");
    }
    StackedModel next = StackedModel::from_stacked(x, models.n_tasks(), models.dim());

    const double rel_change = (next.W - models.W).norm() / std::max(models.W.norm(), 1e-12);
    models = std::move(next);
    l = reweights(models, graph, eps_guard);
    trace.push_back(inner_objective_l2(data, models, graph, lambda));
    rounds = round;
    if (rel_change < tol) break;
  }
  return {std::move(models), std::move(l), rounds, std::move(trace)};
}

}  // namespace ggmtl
