#pragma once

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <queue>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ggmtl/linalg.hpp"
#include "ggmtl/model.hpp"

namespace ggmtl {

struct GraphEdge {
  int i = 0;
  int j = 0;
  double w = 1.0;
};

// Weighted undirected graph over tasks. Edges are stored once with i < j,
// sorted, weights in [0, 1].
class TaskGraph {
 public:
  TaskGraph(int n_tasks, std::vector<GraphEdge> edges) : n_(n_tasks), edges_(std::move(edges)) {
    if (n_ < 1) throw ValidationError("TaskGraph: need at least one task");
    for (GraphEdge& e : edges_) {
      if (e.i == e.j) throw ValidationError("TaskGraph: self-loop");
      if (e.i > e.j) std::swap(e.i, e.j);
      if (e.i < 0 || e.j >= n_) throw ValidationError("TaskGraph: edge endpoint out of range");
      if (!(e.w >= 0.0 && e.w <= 1.0)) {
        throw ValidationError("TaskGraph: edge weight outside [0,1]");
      }
    }
    std::sort(edges_.begin(), edges_.end(), [](const GraphEdge& a, const GraphEdge& b) {
      return std::pair(a.i, a.j) < std::pair(b.i, b.j);
    });
    for (std::size_t k = 1; k < edges_.size(); ++k) {
      if (edges_[k].i == edges_[k - 1].i && edges_[k].j == edges_[k - 1].j) {
        throw ValidationError("TaskGraph: duplicate edge");
      }
    }
  }

  static TaskGraph empty(int n_tasks) { return TaskGraph(n_tasks, {}); }

  int n_tasks() const { return n_; }
  int n_edges() const { return static_cast<int>(edges_.size()); }
  const std::vector<GraphEdge>& edges() const { return edges_; }

  Vector weights() const {
    Vector w(n_edges());
    for (int k = 0; k < n_edges(); ++k) w[k] = edges_[static_cast<std::size_t>(k)].w;
    return w;
  }

  // Same support, new weights (aligned with edge order).
  TaskGraph with_weights(const Vector& w) const {
    if (w.size() != n_edges()) throw ValidationError("TaskGraph::with_weights: length mismatch");
    std::vector<GraphEdge> es = edges_;
    for (int k = 0; k < n_edges(); ++k) es[static_cast<std::size_t>(k)].w = w[k];
    return TaskGraph(n_, std::move(es));
  }

  // Column k holds +1 at row i and -1 at row j of edge k.
  SparseMatrix incidence() const {
    SparseMatrix e(n_, n_edges());
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(edges_.size() * 2);
    for (int k = 0; k < n_edges(); ++k) {
      trips.emplace_back(edges_[static_cast<std::size_t>(k)].i, k, 1.0);
      trips.emplace_back(edges_[static_cast<std::size_t>(k)].j, k, -1.0);
    }
    e.setFromTriplets(trips.begin(), trips.end());
    e.makeCompressed();
    return e;
  }

  std::vector<std::pair<int, int>> edge_order() const {
    std::vector<std::pair<int, int>> order;
    order.reserve(edges_.size());
    for (const GraphEdge& e : edges_) order.emplace_back(e.i, e.j);
    return order;
  }

  SparseMatrix laplacian() const { return laplacian_from_edges(incidence(), weights()); }

  Matrix adjacency() const {
    Matrix a = Matrix::Zero(n_, n_);
    for (const GraphEdge& e : edges_) {
      a(e.i, e.j) = e.w;
      a(e.j, e.i) = e.w;
    }
    return a;
  }

 private:
  int n_;
  std::vector<GraphEdge> edges_;
};

// Incidence matrix plus the edge order fixing its columns.
struct IncidenceView {
  SparseMatrix matrix;
  std::vector<std::pair<int, int>> edge_order;
};

inline IncidenceView incidence_view(const TaskGraph& g) {
  return {g.incidence(), g.edge_order()};
}

struct ClusterAssignment {
  std::vector<int> labels;
  int n_clusters = 0;
};

// Union-symmetrized k-nearest-neighbour graph under Euclidean distance
// between task weight vectors. Initial edge weights are all 1.
inline TaskGraph knn_graph(const StackedModel& models, int k) {
  const int n = models.n_tasks();
  if (n < 2) throw ValidationError("knn_graph: need at least two tasks");
  if (k <= 0) throw ValidationError("knn_graph: k must be positive");
  if (k >= n) throw ValidationError("knn_graph: k must be smaller than the task count");
  models.validate();

  std::set<std::pair<int, int>> picked;
  std::vector<std::pair<double, int>> dist(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    dist.clear();
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      dist.emplace_back((models.W.row(i) - models.W.row(j)).squaredNorm(), j);
    }
    std::sort(dist.begin(), dist.end());
    for (int t = 0; t < k; ++t) {
      const int j = dist[static_cast<std::size_t>(t)].second;
      picked.emplace(std::min(i, j), std::max(i, j));
    }
  }

  std::vector<GraphEdge> edges;
  edges.reserve(picked.size());
  for (const auto& [i, j] : picked) edges.push_back({i, j, 1.0});
  return TaskGraph(n, std::move(edges));
}

// Drops edges with weight < threshold; the node set is unchanged.
inline TaskGraph prune(const TaskGraph& graph, double threshold) {
  if (threshold < 0.0) throw ValidationError("prune: threshold must be nonnegative");
  std::vector<GraphEdge> kept;
  for (const GraphEdge& e : graph.edges()) {
    if (e.w >= threshold) kept.push_back(e);
  }
  return TaskGraph(graph.n_tasks(), std::move(kept));
}

// Markov clustering: self-loops, column normalization, then alternating
// expansion (squaring) and inflation until the matrix change drops below
// 1e-8 or 200 rounds pass. Clusters are the connected components of the
// converged matrix's support.
inline ClusterAssignment markov_cluster(const TaskGraph& graph, double inflation = 2.0) {
  if (!(inflation > 1.0)) throw ValidationError("markov_cluster: inflation must exceed 1");
  const int n = graph.n_tasks();

  Matrix m = graph.adjacency();
  m += Matrix::Identity(n, n);  // self-loop weight 1
  auto normalize_columns = [n](Matrix& mat) {
    for (int c = 0; c < n; ++c) {
      const double s = mat.col(c).sum();
      if (s > 0.0) mat.col(c) /= s;
    }
  };
  normalize_columns(m);

  for (int round = 0; round < 200; ++round) {
    Matrix next = m * m;
    next = next.array().pow(inflation);
    normalize_columns(next);
    const double delta = (next - m).cwiseAbs().maxCoeff();
    m = std::move(next);
    if (delta < 1e-8) break;
  }

  constexpr double kSupportEps = 1e-8;
  std::vector<int> labels(static_cast<std::size_t>(n), -1);
  int next_label = 0;
  for (int start = 0; start < n; ++start) {
    if (labels[static_cast<std::size_t>(start)] >= 0) continue;
    std::queue<int> frontier;
    frontier.push(start);
    labels[static_cast<std::size_t>(start)] = next_label;
    while (!frontier.empty()) {
      const int u = frontier.front();
      frontier.pop();
      for (int v = 0; v < n; ++v) {
        if (labels[static_cast<std::size_t>(v)] >= 0) continue;
        if (m(u, v) > kSupportEps || m(v, u) > kSupportEps) {
          labels[static_cast<std::size_t>(v)] = next_label;
          frontier.push(v);
        }
      }
    }
    ++next_label;
  }
  return {std::move(labels), next_label};
}

enum class GraphFormat { dot, json };

inline GraphFormat parse_graph_format(const std::string& tag) {
  if (tag == "dot") return GraphFormat::dot;
  if (tag == "json") return GraphFormat::json;
  throw ValidationError("unknown graph format '" + tag + "' (expected dot or json)");
}

inline nlohmann::json graph_to_json(const TaskGraph& graph, const ClusterAssignment* clusters = nullptr) {
  nlohmann::json j;
  j["n_tasks"] = graph.n_tasks();
  j["edges"] = nlohmann::json::array();
  for (const GraphEdge& e : graph.edges()) {
    j["edges"].push_back({{"i", e.i}, {"j", e.j}, {"w", e.w}});
  }
  if (clusters) j["labels"] = clusters->labels;
  return j;
}

inline TaskGraph graph_from_json(const nlohmann::json& j) {
  if (!j.contains("n_tasks") || !j.contains("edges")) {
    throw ValidationError("graph JSON: missing n_tasks or edges");
  }
  std::vector<GraphEdge> edges;
  for (const auto& e : j.at("edges")) {
    edges.push_back({e.at("i").get<int>(), e.at("j").get<int>(), e.at("w").get<double>()});
  }
  return TaskGraph(j.at("n_tasks").get<int>(), std::move(edges));
}

// Deterministic text export: edges sorted by (i,j); DOT carries weight labels
// and cluster-colored nodes, JSON the {n_tasks, edges, labels} schema.
inline std::string export_graph(const TaskGraph& graph, const ClusterAssignment* clusters,
                                GraphFormat format) {
  if (format == GraphFormat::json) {
    return graph_to_json(graph, clusters).dump(2);
  }
  std::string out = "graph tasks {\n";
  static const char* kPalette[] = {"#a6cee3", "#1f78b4", "#b2df8a", "#33a02c",
                                   "#fb9a99", "#e31a1c", "#fdbf6f", "#ff7f00",
                                   "#cab2d6", "#6a3d9a", "#ffff99", "#b15928"};
  for (int i = 0; i < graph.n_tasks(); ++i) {
    out += "  " + std::to_string(i);
    if (clusters) {
      const int c = clusters->labels.at(static_cast<std::size_t>(i));
      out += " [style=filled, fillcolor=\"" + std::string(kPalette[c % 12]) +
             "\", cluster=" + std::to_string(c) + "]";
    }
    out += ";\n";
  }
  char buf[64];
  for (const GraphEdge& e : graph.edges()) {
    std::snprintf(buf, sizeof(buf), "%.6g", e.w);
    out += "  " + std::to_string(e.i) + " -- " + std::to_string(e.j) + " [label=\"" + buf +
           "\", weight=" + buf + "];\n";
  }
  out += "}\n";
  return out;
}

}  // namespace ggmtl
