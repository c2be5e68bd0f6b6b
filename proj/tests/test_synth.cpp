#include "ggmtl/synth.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "ggmtl/mtl_solver.hpp"

namespace ggmtl {
namespace {

TEST(Synth, TreeAdjacencySevenTasks) {
  SynthSpec spec;
  spec.structure = SynthStructure::tree;
  spec.n_tasks = 7;
  spec.samples_per_task = 2;
  spec.seed = 1;
  const SynthDataset ds = generate(spec);

  std::set<std::pair<int, int>> expected{{0, 1}, {0, 2}, {1, 3}, {1, 4}, {2, 5}, {2, 6}};
  std::set<std::pair<int, int>> got;
  const TaskGraph g = ground_truth_graph(ds.truth);
  for (const GraphEdge& e : g.edges()) got.emplace(e.i, e.j);
  EXPECT_EQ(got, expected);
}

TEST(Synth, StarCenterMixesLeafCoordinatePairs) {
  SynthSpec spec;
  spec.structure = SynthStructure::star;
  spec.samples_per_task = 2;
  spec.seed = 3;
  const SynthDataset ds = generate(spec);
  const Matrix& w = ds.truth.weights;
  ASSERT_EQ(w.rows(), 11);
  ASSERT_EQ(w.cols(), 20);
  for (int t = 1; t <= 10; ++t) {
    EXPECT_DOUBLE_EQ(w(0, 2 * (t - 1)), w(t, 2 * (t - 1)));
    EXPECT_DOUBLE_EQ(w(0, 2 * (t - 1) + 1), w(t, 2 * (t - 1) + 1));
  }
}

// Oracle: noiseless per-task OLS recovers the generating coefficients.
TEST(Synth, NoiselessOlsRecoversWeights) {
  SynthSpec spec;
  spec.structure = SynthStructure::line;
  spec.n_tasks = 5;
  spec.d = 8;
  spec.samples_per_task = 60;
  spec.noise_std = 0.0;
  spec.seed = 11;
  const SynthDataset ds = generate(spec);
  const StackedModel m = ols_per_task(ds.tasks);
  EXPECT_LT((m.W - ds.truth.weights).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Synth, GroundTruthGraphSizes) {
  SynthSpec line;
  line.structure = SynthStructure::line;
  line.samples_per_task = 2;
  EXPECT_EQ(ground_truth_graph(generate(line).truth).n_edges(), 19);

  SynthSpec tree;
  tree.structure = SynthStructure::tree;
  tree.samples_per_task = 2;
  EXPECT_EQ(ground_truth_graph(generate(tree).truth).n_edges(), 30);

  SynthSpec star;
  star.structure = SynthStructure::star;
  star.samples_per_task = 2;
  const TaskGraph g = ground_truth_graph(generate(star).truth);
  EXPECT_EQ(g.n_edges(), 10);
  for (const GraphEdge& e : g.edges()) EXPECT_EQ(e.i, 0);  // all incident to the center
}

TEST(Synth, SeedDeterminism) {
  SynthSpec spec;
  spec.structure = SynthStructure::tree;
  spec.n_tasks = 15;
  spec.samples_per_task = 9;
  spec.seed = 42;
  const SynthDataset a = generate(spec);
  const SynthDataset b = generate(spec);
  EXPECT_TRUE(a.truth.weights == b.truth.weights);
  for (std::size_t t = 0; t < a.tasks.size(); ++t) {
    EXPECT_TRUE(a.tasks[t].X == b.tasks[t].X);
    EXPECT_TRUE(a.tasks[t].y == b.tasks[t].y);
  }

  spec.seed = 43;
  const SynthDataset c = generate(spec);
  EXPECT_FALSE(a.truth.weights == c.truth.weights);
}

// Consecutive line tasks are closer in weight space than tasks >= 3 hops
// apart, in the mean over seeds.
TEST(Synth, LineAdjacentTasksCloserThanDistant) {
  double adjacent = 0.0, distant = 0.0;
  int n_adj = 0, n_far = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SynthSpec spec;
    spec.structure = SynthStructure::line;
    spec.samples_per_task = 2;
    spec.seed = seed;
    const Matrix w = generate(spec).truth.weights;
    for (int a = 0; a < w.rows(); ++a) {
      for (int b = a + 1; b < w.rows(); ++b) {
        const double dist = (w.row(a) - w.row(b)).norm();
        if (b - a == 1) {
          adjacent += dist;
          ++n_adj;
        } else if (b - a >= 3) {
          distant += dist;
          ++n_far;
        }
      }
    }
  }
  EXPECT_LT(adjacent / n_adj, distant / n_far);
}

// Star leaves are near-orthogonal after centering: mean pairwise Pearson
// correlation stays below 0.5.
TEST(Synth, StarLeavesWeaklyCorrelated) {
  double total = 0.0;
  int count = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SynthSpec spec;
    spec.structure = SynthStructure::star;
    spec.samples_per_task = 2;
    spec.seed = seed;
    const Matrix w = generate(spec).truth.weights;
    for (int a = 1; a <= 10; ++a) {
      for (int b = a + 1; b <= 10; ++b) {
        const Vector u = w.row(a).transpose().array() - w.row(a).mean();
        const Vector v = w.row(b).transpose().array() - w.row(b).mean();
        total += std::abs(u.dot(v) / (u.norm() * v.norm()));
        ++count;
      }
    }
  }
  EXPECT_LT(total / count, 0.5);
}

TEST(Synth, ValidatesShapes) {
  SynthSpec tree;
  tree.structure = SynthStructure::tree;
  tree.n_tasks = 6;  // not 2^L - 1
  EXPECT_THROW(generate(tree), ValidationError);

  SynthSpec star;
  star.structure = SynthStructure::star;
  star.d = 7;  // must be 2 * 10
  EXPECT_THROW(generate(star), ValidationError);

  SynthSpec bad;
  bad.samples_per_task = 0;
  EXPECT_THROW(generate(bad), ValidationError);
  EXPECT_THROW(parse_structure("ring"), ValidationError);
}

TEST(Synth, NoiseMagnitudeMatchesSpec) {
  SynthSpec spec;
  spec.structure = SynthStructure::line;
  spec.n_tasks = 4;
  spec.d = 6;
  spec.samples_per_task = 4000;
  spec.noise_std = 1.0;
  spec.seed = 5;
  const SynthDataset ds = generate(spec);
  // residual variance against the true weights estimates noise_std^2
  double sse = 0.0;
  double count = 0.0;
  for (std::size_t t = 0; t < ds.tasks.size(); ++t) {
    const Vector r =
        ds.tasks[t].y - ds.tasks[t].X * ds.truth.weights.row(static_cast<int>(t)).transpose();
    sse += r.squaredNorm();
    count += static_cast<double>(r.size());
  }
  EXPECT_NEAR(std::sqrt(sse / count), 1.0, 0.05);
}

}  // namespace
}  // namespace ggmtl
