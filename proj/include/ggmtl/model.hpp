#pragma once

#include <span>
#include <string>
#include <utility>

#include "ggmtl/linalg.hpp"

namespace ggmtl {

// One regression task: design matrix X (N_i x d) and targets y (N_i).
struct TaskData {
  Matrix X;
  Vector y;

  void validate() const {
    if (X.rows() < 1) throw ValidationError("TaskData: task has no samples");
    if (y.size() != X.rows()) throw ValidationError("TaskData: target length does not match rows");
    if (!X.allFinite() || !y.allFinite()) throw ValidationError("TaskData: non-finite entry");
  }
};

inline void validate_tasks(std::span<const TaskData> data) {
  if (data.empty()) throw ValidationError("no tasks supplied");
  const Eigen::Index d = data.front().X.cols();
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i].validate();
    if (data[i].X.cols() != d) {
      throw ValidationError("task " + std::to_string(i) + " has a different feature count");
    }
  }
}

// All task weight vectors stacked as rows: row i of W is w_i^T.
struct StackedModel {
  Matrix W;  // n x d

  int n_tasks() const { return static_cast<int>(W.rows()); }
  int dim() const { return static_cast<int>(W.cols()); }
  Vector task(int i) const { return W.row(i).transpose(); }

  // The dn-vector [w_1; ...; w_n].
  Vector stacked() const {
    Matrix t = W.transpose();
    return Eigen::Map<const Vector>(t.data(), t.size());
  }

  static StackedModel from_stacked(const Vector& v, int n, int d) {
    if (v.size() != static_cast<Eigen::Index>(n) * d) {
      throw ValidationError("StackedModel: stacked vector has wrong length");
    }
    Matrix w(n, d);
    for (int i = 0; i < n; ++i) w.row(i) = v.segment(static_cast<Eigen::Index>(i) * d, d).transpose();
    return {std::move(w)};
  }

  void validate() const {
    if (!W.allFinite()) throw ValidationError("StackedModel: non-finite weight");
  }
};

}  // namespace ggmtl
