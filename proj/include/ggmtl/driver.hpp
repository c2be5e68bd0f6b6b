#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "ggmtl/hypergradient.hpp"
#include "ggmtl/model.hpp"
#include "ggmtl/mtl_solver.hpp"
#include "ggmtl/task_graph.hpp"

namespace ggmtl {

// Per-task train/validation split for the outer loop.
struct SplitSpec {
  double val_fraction = 0.25;
  std::uint64_t seed = 0;
};

struct TraceRecord {
  double outer_objective = 0.0;
  double train_sse = 0.0;
  double val_sse = 0.0;
  double grad_norm = 0.0;
  bool accepted = false;
};

struct FitResult {
  StackedModel models;   // retrained on the full data at the learned edges
  TaskGraph graph;       // learned edge weights on the initial k-NN support
  std::vector<TraceRecord> trace;
  bool converged = false;
  InnerVariant variant = InnerVariant::sq_l2;
};

struct TrainValSplit {
  std::vector<TaskData> train;
  std::vector<TaskData> val;
};

// Seeded per-task split. Each task keeps at least max(2, ceil(d/2)) training
// rows when the sample budget allows it; an impossible validation row is an
// error.
inline TrainValSplit split_train_val(std::span<const TaskData> data, const SplitSpec& spec) {
  validate_tasks(data);
  if (!(spec.val_fraction > 0.0 && spec.val_fraction < 1.0)) {
    throw ValidationError("split_train_val: val_fraction must lie in (0,1)");
  }
  const int d = static_cast<int>(data.front().X.cols());
  const Eigen::Index min_train = std::max<Eigen::Index>(2, (d + 1) / 2);

  TrainValSplit out;
  for (std::size_t t = 0; t < data.size(); ++t) {
    const Eigen::Index rows = data[t].X.rows();
    Eigen::Index n_val = static_cast<Eigen::Index>(std::floor(spec.val_fraction * static_cast<double>(rows)));
    n_val = std::max<Eigen::Index>(n_val, 1);
    if (rows - n_val < min_train) n_val = rows - min_train;
    if (n_val < 1) {
      throw ValidationError("split_train_val: task " + std::to_string(t) +
                            " has too few rows for a validation split");
    }

    std::vector<Eigen::Index> perm(static_cast<std::size_t>(rows));
    std::iota(perm.begin(), perm.end(), 0);
    std::seed_seq seq{spec.seed, static_cast<std::uint64_t>(t)};
    std::mt19937_64 rng(seq);
    std::shuffle(perm.begin(), perm.end(), rng);

    TaskData train, val;
    train.X.resize(rows - n_val, d);
    train.y.resize(rows - n_val);
    val.X.resize(n_val, d);
    val.y.resize(n_val);
    for (Eigen::Index r = 0; r < rows - n_val; ++r) {
      train.X.row(r) = data[t].X.row(perm[static_cast<std::size_t>(r)]);
      train.y[r] = data[t].y[perm[static_cast<std::size_t>(r)]];
    }
    for (Eigen::Index r = 0; r < n_val; ++r) {
      val.X.row(r) = data[t].X.row(perm[static_cast<std::size_t>(rows - n_val + r)]);
      val.y[r] = data[t].y[perm[static_cast<std::size_t>(rows - n_val + r)]];
    }
    out.train.push_back(std::move(train));
    out.val.push_back(std::move(val));
  }
  return out;
}

namespace detail {

struct InnerEval {
  StackedModel models;
  EdgeReweights l;  // identity (empty) for the squared variant
};

inline InnerEval eval_inner(std::span<const TaskData> train, const TaskGraph& graph,
                            const HyperParams& hp) {
  if (hp.variant == InnerVariant::sq_l2) {
    return {solve_inner_sq(train, graph, hp.lambda, hp.solver_options()), {}};
  }
  InnerL2Result r = solve_inner_l2(train, graph, hp.lambda, hp.eps_guard, hp.l2_tol,
                                   hp.l2_max_rounds, hp.solver_options());
  return {std::move(r.models), std::move(r.l)};
}

}  // namespace detail

// The full pipeline: per-task OLS, k-NN graph on the models, train/validation
// split, projected hypergradient descent on the edge weights, then a final
// retrain on all data at the learned edges.
inline FitResult fit(std::span<const TaskData> data, const HyperParams& hp,
                     const SplitSpec& split = {}) {
  hp.validate();
  validate_tasks(data);
  if (data.size() < 2) throw ValidationError("fit: need at least two tasks");

  const StackedModel init = ols_per_task(data, hp.init_ridge);
  TaskGraph graph = knn_graph(init, std::min(hp.k, static_cast<int>(data.size()) - 1));
  const TrainValSplit tv = split_train_val(data, split);

  std::vector<TraceRecord> trace;
  bool converged = false;
  int consecutive_small = 0;

  detail::InnerEval cur = detail::eval_inner(tv.train, graph, hp);
  double objective = outer_objective(cur.models, graph.weights(), tv.val, hp);

  for (int it = 0; it < hp.max_outer; ++it) {
    const Vector e = graph.weights();
    const Vector grad = hp.variant == InnerVariant::sq_l2
                            ? hypergradient(graph, tv.train, tv.val, hp)
                            : hypergradient_l2(graph, cur.l, tv.train, tv.val, hp);

    TraceRecord rec;
    rec.grad_norm = grad.norm();
    rec.train_sse = data_sse(tv.train, cur.models);
    rec.val_sse = data_sse(tv.val, cur.models);

    double step = hp.nu;
    bool accepted = false;
    TaskGraph candidate = graph;
    detail::InnerEval cand_eval;
    double cand_objective = objective;
    const int tries = hp.backtracking ? hp.max_backtracks + 1 : 1;
    for (int bt = 0; bt < tries && step > 0.0; ++bt) {
      const Vector e_try = update_edges(e, grad, step);
      if ((e_try - e).lpNorm<Eigen::Infinity>() == 0.0) break;  // nothing moves
      candidate = graph.with_weights(e_try);
      cand_eval = detail::eval_inner(tv.train, candidate, hp);
      cand_objective = outer_objective(cand_eval.models, e_try, tv.val, hp);
      if (!hp.backtracking || cand_objective <= objective + 1e-12 * std::max(1.0, std::abs(objective))) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }

    if (!accepted) {
      rec.outer_objective = objective;
      rec.accepted = false;
      trace.push_back(rec);
      converged = true;  // no descent step exists at this scale
      break;
    }

    const double rel_change =
        std::abs(objective - cand_objective) / std::max(std::abs(objective), 1e-12);
    graph = std::move(candidate);
    cur = std::move(cand_eval);
    objective = cand_objective;
    rec.outer_objective = objective;
    rec.accepted = true;
    trace.push_back(rec);

    consecutive_small = rel_change < hp.outer_tol_rel ? consecutive_small + 1 : 0;
    if (consecutive_small >= 3) {
      converged = true;
      break;
    }
  }
  if (hp.max_outer == 0) converged = true;

  // Final retrain on the full data at the learned edges.
  StackedModel final_models = hp.variant == InnerVariant::sq_l2
                                  ? solve_inner_sq(data, graph, hp.lambda, hp.solver_options())
                                  : solve_inner_l2(data, graph, hp.lambda, hp.eps_guard, hp.l2_tol,
                                                   hp.l2_max_rounds, hp.solver_options())
                                        .models;

  return {std::move(final_models), std::move(graph), std::move(trace), converged, hp.variant};
}

// CCMTL-style comparator: the fixed k-NN graph is never updated.
inline FitResult baseline_fixed_graph(std::span<const TaskData> data, const HyperParams& hp,
                                      const SplitSpec& split = {}) {
  HyperParams fixed = hp;
  fixed.max_outer = 0;
  return fit(data, fixed, split);
}

// X * w_task.
inline Vector predict(const StackedModel& models, const Matrix& x, int task) {
  if (task < 0 || task >= models.n_tasks()) throw ValidationError("predict: task index out of range");
  if (x.cols() != models.dim()) throw ValidationError("predict: feature count mismatch");
  return x * models.W.row(task).transpose();
}

}  // namespace ggmtl
