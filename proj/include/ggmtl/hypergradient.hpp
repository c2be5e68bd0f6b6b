#pragma once

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ggmtl/linalg.hpp"
#include "ggmtl/model.hpp"
#include "ggmtl/mtl_solver.hpp"
#include "ggmtl/task_graph.hpp"

namespace ggmtl {

enum class InnerVariant { sq_l2, l2 };

inline InnerVariant parse_variant(const std::string& tag) {
  if (tag == "sq_l2") return InnerVariant::sq_l2;
  if (tag == "l2") return InnerVariant::l2;
  throw ValidationError("unknown variant '" + tag + "' (expected sq_l2 or l2)");
}

inline std::string variant_name(InnerVariant v) {
  return v == InnerVariant::sq_l2 ? "sq_l2" : "l2";
}

struct HyperParams {
  double xi = 0.0;     // edge energy weight
  double eta = 0.0;    // edge l1 weight
  double gamma = 0.0;  // edge entropy weight
  double lambda = 1.0; // graph smoothing weight
  double nu = 1e-3;    // outer step size
  int k = 5;           // k-NN initialization
  InnerVariant variant = InnerVariant::sq_l2;

  double solver_tol = 1e-10;
  int solver_max_iter = 0;  // 0: 10 * dimension
  int dense_threshold = 200;
  double eps_guard = 1e-8;  // reweight denominator floor
  double eps_log = 1e-8;    // entropy-gradient log floor
  double l2_tol = 1e-5;
  int l2_max_rounds = 50;
  double outer_tol_rel = 1e-4;
  int max_outer = 500;
  bool backtracking = true;
  int max_backtracks = 20;
  double init_ridge = 1e-8;
  double prune_threshold = 1e-3;  // applied at export/report time only

  SpdSolveOptions solver_options() const {
    return {solver_tol, solver_max_iter, dense_threshold, true};
  }

  void validate() const {
    if (xi < 0 || eta < 0 || gamma < 0) {
      throw ValidationError("HyperParams: regularizer weights must be nonnegative");
    }
    // lambda = 0 decouples the tasks (per-task OLS) and nu = 0 freezes the
    // graph (fixed-graph baseline); both are legal degenerate settings.
    if (!(lambda >= 0)) throw ValidationError("HyperParams: lambda must be nonnegative");
    if (!(nu >= 0)) throw ValidationError("HyperParams: nu must be nonnegative");
    if (k < 1) throw ValidationError("HyperParams: k must be at least 1");
    if (!(eps_guard > 0) || !(eps_log > 0)) {
      throw ValidationError("HyperParams: epsilon guards must be positive");
    }
    if (max_outer < 0) throw ValidationError("HyperParams: max_outer must be nonnegative");
  }
};

// Un-normalized edge entropy H(e) = -sum(|e| ln|e| - |e|), with 0 ln 0 = 0.
inline double edge_entropy(const Vector& e) {
  double h = 0.0;
  for (Eigen::Index k = 0; k < e.size(); ++k) {
    const double a = std::abs(e[k]);
    h -= (a > 0.0 ? a * std::log(a) : 0.0) - a;
  }
  return h;
}

// f(V, e) = validation SSE + xi |e|^2 + eta |e|_1 + gamma H(e).
inline double outer_objective(const StackedModel& models, const Vector& edges,
                              std::span<const TaskData> val_data, const HyperParams& hp) {
  for (Eigen::Index k = 0; k < edges.size(); ++k) {
    if (!(edges[k] >= 0.0 && edges[k] <= 1.0)) {
      throw ValidationError("outer_objective: edge weight outside [0,1]");
    }
  }
  return data_sse(val_data, models) + hp.xi * edges.squaredNorm() +
         hp.eta * edges.lpNorm<1>() + hp.gamma * edge_entropy(edges);
}

namespace detail {

// C = X^{val,T} (X^val V - Y^val), stacked per task.
inline Vector validation_gradient(std::span<const TaskData> val, const StackedModel& models) {
  const int d = models.dim();
  Vector c(static_cast<Eigen::Index>(val.size()) * d);
  for (std::size_t i = 0; i < val.size(); ++i) {
    const Vector r = val[i].X * models.W.row(i).transpose() - val[i].y;
    c.segment(static_cast<Eigen::Index>(i) * d, d).noalias() = val[i].X.transpose() * r;
  }
  return c;
}

// Shared state of one hypergradient evaluation: the inner solution, the system
// matrix at the training data, and the adjoint s = A^{-1} C (A is symmetric).
struct HypergradWorkspace {
  StackedModel models;
  SparseMatrix a;
  Vector c;
  Vector adjoint;
};

inline HypergradWorkspace hypergrad_workspace(const TaskGraph& graph,
                                              std::span<const TaskData> train,
                                              std::span<const TaskData> val,
                                              const HyperParams& hp,
                                              const StackedModel* warm = nullptr) {
  validate_tasks(train);
  validate_tasks(val);
  if (static_cast<int>(train.size()) != graph.n_tasks() ||
      static_cast<int>(val.size()) != graph.n_tasks()) {
    throw ValidationError("hypergradient: data does not match the task graph");
  }

  HypergradWorkspace ws;
  ws.models = solve_inner_sq(train, graph, hp.lambda, hp.solver_options(), warm);
  ws.a = assemble_A(graph.laplacian(), design_operator(train), hp.lambda);
  ws.c = validation_gradient(val, ws.models);
  auto [s, report] = spd_solve(ws.a, ws.c, hp.solver_options());
  if (!report.converged) {
    throw NumericalError("hypergradient: adjoint solve did not converge (residual=" +
                         std::to_string(report.residual_norm) + ")");
  }
  ws.adjoint = std::move(s);
  return ws;
}

// Per-edge regularizer derivative. sign(e) = 1 for e >= 0; edges at exactly 0
// contribute no entropy gradient so dropped edges are not resurrected by the
// log singularity.
inline double regularizer_gradient(double e, const HyperParams& hp) {
  double g = 2.0 * hp.xi * e + hp.eta;
  if (e > 0.0) g -= hp.gamma * std::log(std::max(e, hp.eps_log));
  return g;
}

}  // namespace detail

// Closed-form hypergradient of the outer objective through the inner optimum.
// One adjoint solve s = A^{-1} C is shared across edges; entry k for edge
// (i,j) is 2 xi e_k + eta - gamma ln(e_k) - 2 lambda (w_i - w_j)^T (s_i - s_j).
// No Kronecker product is ever materialized.
inline Vector hypergradient(const TaskGraph& graph, std::span<const TaskData> train,
                            std::span<const TaskData> val, const HyperParams& hp) {
  const Vector e = graph.weights();
  for (Eigen::Index k = 0; k < e.size(); ++k) {
    if (e[k] < 0.0) throw ValidationError("hypergradient: negative edge weight");
  }
  detail::HypergradWorkspace ws = detail::hypergrad_workspace(graph, train, val, hp);

  const int d = ws.models.dim();
  Vector grad(graph.n_edges());
  const auto& edges = graph.edges();
  for (int k = 0; k < graph.n_edges(); ++k) {
    const GraphEdge& edge = edges[static_cast<std::size_t>(k)];
    const Vector dw = (ws.models.W.row(edge.i) - ws.models.W.row(edge.j)).transpose();
    const Vector ds = ws.adjoint.segment(static_cast<Eigen::Index>(edge.i) * d, d) -
                      ws.adjoint.segment(static_cast<Eigen::Index>(edge.j) * d, d);
    grad[k] = detail::regularizer_gradient(e[k], hp) - 2.0 * hp.lambda * dw.dot(ds);
  }
  return grad;
}

// Hypergradient for the non-squared-l2 loop: the quadratic sub-problem runs at
// effective weights e o l with l frozen, so the data term picks up the factor
// l_k by the chain rule while the regularizers act on e itself.
inline Vector hypergradient_l2(const TaskGraph& graph, const EdgeReweights& l,
                               std::span<const TaskData> train, std::span<const TaskData> val,
                               const HyperParams& hp) {
  const Vector e = graph.weights();
  if (l.l.size() != e.size()) throw ValidationError("hypergradient_l2: reweight length mismatch");

  const Vector effective = e.cwiseProduct(l.l);
  const SparseMatrix lap = laplacian_from_edges(graph.incidence(), effective);
  const BlockDiagOperator designs = detail::design_operator(train);
  const SparseMatrix a = assemble_A(lap, designs, hp.lambda);
  auto [x, rep_v] = spd_solve(a, detail::stacked_xty(train), hp.solver_options());
  if (!rep_v.converged) throw NumericalError("hypergradient_l2: inner solve did not converge");
  const StackedModel models =
      StackedModel::from_stacked(x, graph.n_tasks(), static_cast<int>(train.front().X.cols()));

  const Vector c = detail::validation_gradient(val, models);
  auto [s, rep_s] = spd_solve(a, c, hp.solver_options());
  if (!rep_s.converged) throw NumericalError("hypergradient_l2: adjoint solve did not converge");

  const int d = models.dim();
  Vector grad(graph.n_edges());
  const auto& edges = graph.edges();
  for (int k = 0; k < graph.n_edges(); ++k) {
    const GraphEdge& edge = edges[static_cast<std::size_t>(k)];
    const Vector dw = (models.W.row(edge.i) - models.W.row(edge.j)).transpose();
    const Vector ds = s.segment(static_cast<Eigen::Index>(edge.i) * d, d) -
                      s.segment(static_cast<Eigen::Index>(edge.j) * d, d);
    grad[k] = detail::regularizer_gradient(e[k], hp) - 2.0 * hp.lambda * l.l[k] * dw.dot(ds);
  }
  return grad;
}

// Central finite differences of outer_objective composed with the inner solve,
// re-solving at e +- h per coordinate. The independent oracle for the closed
// form above.
inline Vector fd_hypergradient(const TaskGraph& graph, std::span<const TaskData> train,
                               std::span<const TaskData> val, const HyperParams& hp,
                               double h = 1e-6) {
  if (!(h > 0.0)) throw ValidationError("fd_hypergradient: h must be positive");
  const Vector e = graph.weights();
  Vector grad(e.size());
  for (Eigen::Index k = 0; k < e.size(); ++k) {
    double lo = e[k] - h, hi = e[k] + h;
    if (lo < 0.0) {  // shift the stencil so both points stay feasible
      lo = 0.0;
      hi = 2.0 * h;
    } else if (hi > 1.0) {
      hi = 1.0;
      lo = 1.0 - 2.0 * h;
    }
    Vector ep = e, em = e;
    ep[k] = hi;
    em[k] = lo;
    const TaskGraph gp = graph.with_weights(ep);
    const TaskGraph gm = graph.with_weights(em);
    const StackedModel vp = solve_inner_sq(train, gp, hp.lambda, hp.solver_options());
    const StackedModel vm = solve_inner_sq(train, gm, hp.lambda, hp.solver_options());
    grad[k] = (outer_objective(vp, gp.weights(), val, hp) -
               outer_objective(vm, gm.weights(), val, hp)) /
              (hi - lo);
  }
  return grad;
}

// Projected descent step: clamp(e - nu * grad, 0, 1).
inline Vector update_edges(const Vector& edges, const Vector& grad, double nu) {
  if (!(nu > 0.0)) throw ValidationError("update_edges: nu must be positive");
  if (grad.size() != edges.size()) throw ValidationError("update_edges: gradient length mismatch");
  return (edges - nu * grad).cwiseMax(0.0).cwiseMin(1.0);
}

// Scaling of the v vector in the closed-form edge system. The theorem states
// v = (1/eta) C - (1/lambda) X^T X u; the gradient-consistent variant doubles
// the C term to match the stationarity of the implemented outer objective.
enum class EdgeSolveScaling { theorem, gradient };

struct EdgeSystem {
  Matrix u_matrix;  // U, nd x m; column k is (d_i - d_j) (x) z_k
  Vector v;         // nd
};

// Builds U e = v of the closed-form hyper-edge system. Requires eta > 0 and
// xi = gamma = 0. M is m x nd with row k = ((d_i - d_j) (x) (w_i - w_j))^T;
// u is the minimum-norm least-squares solution of M u = 1_m.
inline EdgeSystem closed_form_system(const TaskGraph& graph, std::span<const TaskData> train,
                                     std::span<const TaskData> val, const HyperParams& hp,
                                     EdgeSolveScaling scaling = EdgeSolveScaling::theorem) {
  if (!(hp.eta > 0.0)) throw ValidationError("closed_form_edges: requires eta > 0");
  if (hp.xi != 0.0 || hp.gamma != 0.0) {
    throw ValidationError("closed_form_edges: requires xi = 0 and gamma = 0");
  }
  detail::HypergradWorkspace ws = detail::hypergrad_workspace(graph, train, val, hp);

  const int n = graph.n_tasks();
  const int d = ws.models.dim();
  const int m = graph.n_edges();
  const Eigen::Index nd = static_cast<Eigen::Index>(n) * d;
  const auto& edges = graph.edges();

  Matrix mmat = Matrix::Zero(m, nd);
  for (int k = 0; k < m; ++k) {
    const GraphEdge& edge = edges[static_cast<std::size_t>(k)];
    const Eigen::RowVectorXd dw = ws.models.W.row(edge.i) - ws.models.W.row(edge.j);
    mmat.block(k, static_cast<Eigen::Index>(edge.i) * d, 1, d) = dw;
    mmat.block(k, static_cast<Eigen::Index>(edge.j) * d, 1, d) = -dw;
  }
  if (mmat.norm() == 0.0) {
    throw ValidationError("closed_form_edges: degenerate M (all task models coincide)");
  }

  const Vector u = mmat.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(Vector::Ones(m));

  // X^T X u per task block.
  const BlockDiagOperator designs = detail::design_operator(train);
  Vector xtxu(nd);
  for (int i = 0; i < n; ++i) {
    xtxu.segment(static_cast<Eigen::Index>(i) * d, d).noalias() =
        designs.gram(i) * u.segment(static_cast<Eigen::Index>(i) * d, d);
  }

  const double c_scale = scaling == EdgeSolveScaling::theorem ? 1.0 / hp.eta : 2.0 / hp.eta;
  EdgeSystem sys;
  sys.v = c_scale * ws.c - xtxu / hp.lambda;

  // z = (E^T (x) I_d) u, i.e. block k is u_i - u_j; column k of U is
  // (d_i - d_j) (x) z_k.
  sys.u_matrix = Matrix::Zero(nd, m);
  for (int k = 0; k < m; ++k) {
    const GraphEdge& edge = edges[static_cast<std::size_t>(k)];
    const Vector z = u.segment(static_cast<Eigen::Index>(edge.i) * d, d) -
                     u.segment(static_cast<Eigen::Index>(edge.j) * d, d);
    sys.u_matrix.col(k).segment(static_cast<Eigen::Index>(edge.i) * d, d) = z;
    sys.u_matrix.col(k).segment(static_cast<Eigen::Index>(edge.j) * d, d) = -z;
  }
  return sys;
}

namespace detail {

// Least squares over the box [0,1]^m by projected gradient on the normal
// equations; the system is tiny (m columns) so a fixed Lipschitz step with a
// long iteration budget is enough for 1e-6-level accuracy.
inline Vector box_least_squares(const Matrix& u_matrix, const Vector& v) {
  const Eigen::Index m = u_matrix.cols();
  const Matrix g = u_matrix.transpose() * u_matrix;
  const Vector b = u_matrix.transpose() * v;
  double lip = g.operatorNorm();
  if (!(lip > 0.0)) lip = 1.0;
  const double step = 1.0 / lip;

  Vector e = Vector::Constant(m, 0.5);
  for (int it = 0; it < 200000; ++it) {
    Vector next = (e - step * (g * e - b)).cwiseMax(0.0).cwiseMin(1.0);
    const double change = (next - e).lpNorm<Eigen::Infinity>();
    e = std::move(next);
    if (change < 1e-14) break;
  }
  return e;
}

}  // namespace detail

// Closed-form hyper-edges: solves U e = v in least squares over [0,1]^m.
inline Vector closed_form_edges(const TaskGraph& graph, std::span<const TaskData> train,
                                std::span<const TaskData> val, const HyperParams& hp,
                                EdgeSolveScaling scaling = EdgeSolveScaling::theorem) {
  const EdgeSystem sys = closed_form_system(graph, train, val, hp, scaling);
  return detail::box_least_squares(sys.u_matrix, sys.v);
}

}  // namespace ggmtl
