#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ggmtl/model.hpp"
#include "ggmtl/task_graph.hpp"

namespace ggmtl {

enum class SynthStructure { line, tree, star };

inline SynthStructure parse_structure(const std::string& tag) {
  if (tag == "line") return SynthStructure::line;
  if (tag == "tree") return SynthStructure::tree;
  if (tag == "star") return SynthStructure::star;
  throw ValidationError("unknown structure '" + tag + "' (expected line, tree or star)");
}

// Zero fields pick the per-structure defaults: line 20 tasks x 30 dims,
// tree 31 tasks (5 levels) x 30 dims, star 11 tasks (10 leaves) x 20 dims.
struct SynthSpec {
  SynthStructure structure = SynthStructure::line;
  int n_tasks = 0;
  int d = 0;
  int samples_per_task = 100;
  double noise_std = 1.0;
  std::uint64_t seed = 0;
};

struct GroundTruth {
  Matrix weights;              // n x d true coefficients
  Eigen::MatrixXi adjacency;   // binary, symmetric, zero diagonal
};

struct SynthDataset {
  std::vector<TaskData> tasks;
  GroundTruth truth;
};

namespace detail {

inline SynthSpec resolve_spec(SynthSpec spec) {
  switch (spec.structure) {
    case SynthStructure::line:
      if (spec.n_tasks == 0) spec.n_tasks = 20;
      if (spec.d == 0) spec.d = 30;
      break;
    case SynthStructure::tree:
      if (spec.n_tasks == 0) spec.n_tasks = 31;
      if (spec.d == 0) spec.d = 30;
      break;
    case SynthStructure::star:
      if (spec.n_tasks == 0) spec.n_tasks = 11;
      if (spec.d == 0) spec.d = 2 * (spec.n_tasks - 1);
      break;
  }
  if (spec.n_tasks < 2) throw ValidationError("synth: need at least two tasks");
  if (spec.d < 1) throw ValidationError("synth: dimension must be positive");
  if (spec.samples_per_task < 1) throw ValidationError("synth: need at least one sample per task");
  if (spec.noise_std < 0) throw ValidationError("synth: noise_std must be nonnegative");

  if (spec.structure == SynthStructure::tree) {
    int n = spec.n_tasks + 1;  // must be 2^levels
    while (n > 1 && n % 2 == 0) n /= 2;
    if (n != 1) {
      throw ValidationError("synth: tree requires 2^levels - 1 tasks, got " +
                            std::to_string(spec.n_tasks));
    }
  }
  if (spec.structure == SynthStructure::star && spec.d != 2 * (spec.n_tasks - 1)) {
    throw ValidationError("synth: star requires d = 2 * (n_tasks - 1)");
  }
  return spec;
}

// 0.1 * u (.) b with u ~ U[0,1]^d and b ~ Bernoulli(0.7)^d, redrawn per call.
inline Vector sparse_increment(int d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::bernoulli_distribution coin(0.7);
  Vector step(d);
  for (int c = 0; c < d; ++c) {
    const double u = uniform(rng);
    const bool keep = coin(rng);
    step[c] = keep ? 0.1 * u : 0.0;
  }
  return step;
}

inline Vector gaussian_around_one(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector w(d);
  for (int c = 0; c < d; ++c) w[c] = 1.0 + normal(rng);
  return w;
}

}  // namespace detail

// Seeded generator for the line / tree / star structures: x ~ N(0, I_d),
// y = w_t^T x + noise. Identical seeds give identical datasets.
inline SynthDataset generate(const SynthSpec& raw_spec) {
  const SynthSpec spec = detail::resolve_spec(raw_spec);
  const int n = spec.n_tasks;
  const int d = spec.d;
  std::mt19937_64 rng(spec.seed);

  Matrix w(n, d);
  Eigen::MatrixXi adj = Eigen::MatrixXi::Zero(n, n);
  switch (spec.structure) {
    case SynthStructure::line: {
      w.row(0) = detail::gaussian_around_one(d, rng).transpose();
      for (int t = 1; t < n; ++t) {
        w.row(t) = w.row(t - 1) + detail::sparse_increment(d, rng).transpose();
        adj(t - 1, t) = adj(t, t - 1) = 1;
      }
      break;
    }
    case SynthStructure::tree: {
      w.row(0) = detail::gaussian_around_one(d, rng).transpose();
      for (int t = 1; t < n; ++t) {
        const int parent = (t - 1) / 2;
        w.row(t) = w.row(parent) + detail::sparse_increment(d, rng).transpose();
        adj(parent, t) = adj(t, parent) = 1;
      }
      break;
    }
    case SynthStructure::star: {
      // Task 0 is the center; leaf t contributes its coordinate pair
      // (2t-1, 2t) (1-based) to the center's weights.
      for (int t = 1; t < n; ++t) {
        w.row(t) = detail::gaussian_around_one(d, rng).transpose();
        adj(0, t) = adj(t, 0) = 1;
      }
      w.row(0).setZero();
      for (int t = 1; t < n; ++t) {
        w(0, 2 * (t - 1)) = w(t, 2 * (t - 1));
        w(0, 2 * (t - 1) + 1) = w(t, 2 * (t - 1) + 1);
      }
      break;
    }
  }

  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<TaskData> tasks;
  tasks.reserve(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) {
    Matrix x(spec.samples_per_task, d);
    for (int r = 0; r < spec.samples_per_task; ++r) {
      for (int c = 0; c < d; ++c) x(r, c) = normal(rng);
    }
    Vector y = x * w.row(t).transpose();
    if (spec.noise_std > 0) {
      for (int r = 0; r < spec.samples_per_task; ++r) y[r] += spec.noise_std * normal(rng);
    }
    tasks.push_back({std::move(x), std::move(y)});
  }
  return {std::move(tasks), {std::move(w), std::move(adj)}};
}

// Binary adjacency as a unit-weight TaskGraph.
inline TaskGraph ground_truth_graph(const GroundTruth& gt) {
  const int n = static_cast<int>(gt.adjacency.rows());
  std::vector<GraphEdge> edges;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (gt.adjacency(i, j) != 0) edges.push_back({i, j, 1.0});
    }
  }
  return TaskGraph(n, std::move(edges));
}

}  // namespace ggmtl
