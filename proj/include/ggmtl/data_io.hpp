#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ggmtl/driver.hpp"
#include "ggmtl/model.hpp"
#include "ggmtl/task_graph.hpp"

namespace ggmtl {

enum class CsvLayout { per_task_files, single_file_with_task_column };

inline CsvLayout parse_csv_layout(const std::string& tag) {
  if (tag == "per_task_files") return CsvLayout::per_task_files;
  if (tag == "single_file_with_task_column") return CsvLayout::single_file_with_task_column;
  throw ValidationError("unknown CSV layout '" + tag + "'");
}

struct MultiTaskCsv {
  std::string path;
  CsvLayout layout = CsvLayout::per_task_files;
  std::string target_column = "y";
  std::vector<std::string> feature_columns;  // empty: all remaining columns
  std::string task_column;                   // required for the single-file layout
  bool standardize = false;
  std::string truth_graph;  // optional path to a graph JSON
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t p = 0; p < line.size(); ++p) {
    const char ch = line[p];
    if (quoted) {
      if (ch == '"') {
        if (p + 1 < line.size() && line[p + 1] == '"') {
          cur += '"';
          ++p;
        } else {
          quoted = false;
        }
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_numeric_cell(const std::string& cell, std::size_t row,
                                 const std::string& column, const std::string& file) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || end != begin + cell.size() || !std::isfinite(v)) {
    throw ValidationError("non-numeric cell in " + file + " at data row " + std::to_string(row + 1) +
                          ", column '" + column + "'");
  }
  return v;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open CSV file: " + path);
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty CSV file: " + path);
  table.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != table.header.size()) {
      throw ValidationError(path + ": row " + std::to_string(table.rows.size() + 1) +
                            " has " + std::to_string(cells.size()) + " cells, header has " +
                            std::to_string(table.header.size()));
    }
    table.rows.push_back(std::move(cells));
  }
  return table;
}

inline int column_index(const CsvTable& t, const std::string& name, const std::string& file) {
  const auto it = std::find(t.header.begin(), t.header.end(), name);
  if (it == t.header.end()) {
    throw ValidationError(file + ": missing column '" + name + "'");
  }
  return static_cast<int>(it - t.header.begin());
}

inline TaskData table_to_task(const CsvTable& t, const std::vector<std::string>& features,
                              const std::string& target, const std::string& file,
                              const std::vector<std::size_t>* row_subset = nullptr) {
  std::vector<int> fidx;
  fidx.reserve(features.size());
  for (const std::string& f : features) fidx.push_back(column_index(t, f, file));
  const int tidx = column_index(t, target, file);

  std::vector<std::size_t> all;
  if (!row_subset) {
    all.resize(t.rows.size());
    std::iota(all.begin(), all.end(), 0);
    row_subset = &all;
  }
  if (row_subset->empty()) throw ValidationError(file + ": task has no rows");

  TaskData task;
  task.X.resize(static_cast<Eigen::Index>(row_subset->size()), static_cast<Eigen::Index>(features.size()));
  task.y.resize(static_cast<Eigen::Index>(row_subset->size()));
  for (std::size_t r = 0; r < row_subset->size(); ++r) {
    const auto& cells = t.rows[(*row_subset)[r]];
    for (std::size_t c = 0; c < fidx.size(); ++c) {
      task.X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          parse_numeric_cell(cells[static_cast<std::size_t>(fidx[c])], (*row_subset)[r], features[c], file);
    }
    task.y[static_cast<Eigen::Index>(r)] =
        parse_numeric_cell(cells[static_cast<std::size_t>(tidx)], (*row_subset)[r], target, file);
  }
  return task;
}

inline std::vector<std::string> resolve_features(const CsvTable& t, const MultiTaskCsv& spec,
                                                 const std::string& file) {
  column_index(t, spec.target_column, file);  // must exist
  if (!spec.feature_columns.empty()) return spec.feature_columns;
  std::vector<std::string> features;
  for (const std::string& h : t.header) {
    if (h == spec.target_column || (!spec.task_column.empty() && h == spec.task_column)) continue;
    features.push_back(h);
  }
  if (features.empty()) throw ValidationError(file + ": no feature columns remain");
  return features;
}

}  // namespace detail

// Loads all tasks of a multi-task CSV dataset. Task order is deterministic:
// lexicographic file order for the per-task layout, sorted task keys for the
// single-file layout. All tasks must share the feature schema.
inline std::vector<TaskData> load_dataset(const MultiTaskCsv& spec) {
  std::vector<TaskData> out;
  if (spec.layout == CsvLayout::per_task_files) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(spec.path)) {
      throw ValidationError("dataset path is not a directory: " + spec.path);
    }
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(spec.path)) {
      if (entry.is_regular_file() && entry.path().extension() == ".csv") {
        files.push_back(entry.path().string());
      }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ValidationError("no .csv files under " + spec.path);

    std::vector<std::string> features;
    for (const std::string& f : files) {
      const detail::CsvTable t = detail::read_csv(f);
      if (features.empty()) {
        features = detail::resolve_features(t, spec, f);
      } else {
        // schema must match the first file exactly
        const auto here = detail::resolve_features(t, spec, f);
        if (here != features) throw ValidationError("schema mismatch across tasks at " + f);
      }
      out.push_back(detail::table_to_task(t, features, spec.target_column, f));
    }
  } else {
    if (spec.task_column.empty()) {
      throw ValidationError("single-file layout requires an explicit task_column");
    }
    const detail::CsvTable t = detail::read_csv(spec.path);
    const int task_idx = detail::column_index(t, spec.task_column, spec.path);
    const std::vector<std::string> features = detail::resolve_features(t, spec, spec.path);

    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      groups[t.rows[r][static_cast<std::size_t>(task_idx)]].push_back(r);
    }
    std::vector<std::string> keys;
    for (const auto& [k, _] : groups) keys.push_back(k);
    const bool all_numeric = std::all_of(keys.begin(), keys.end(), [](const std::string& k) {
      char* end = nullptr;
      std::strtod(k.c_str(), &end);
      return end == k.c_str() + k.size() && !k.empty();
    });
    if (all_numeric) {
      std::sort(keys.begin(), keys.end(), [](const std::string& a, const std::string& b) {
        return std::strtod(a.c_str(), nullptr) < std::strtod(b.c_str(), nullptr);
      });
    } else {
      std::sort(keys.begin(), keys.end());
    }
    for (const std::string& k : keys) {
      out.push_back(detail::table_to_task(t, features, spec.target_column, spec.path, &groups[k]));
    }
  }
  validate_tasks(out);
  return out;
}

// Writes one CSV per task (task_000.csv, ...) with columns f0..f{d-1}, y.
// Values use %.17g so a save/load round trip is bit exact.
inline void save_dataset(std::span<const TaskData> data, const std::string& dir) {
  validate_tasks(data);
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  char cell[64];
  for (std::size_t t = 0; t < data.size(); ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "task_%03zu.csv", t);
    std::ofstream out(fs::path(dir) / name);
    if (!out) throw ValidationError("cannot write " + (fs::path(dir) / name).string());
    const int d = static_cast<int>(data[t].X.cols());
    for (int c = 0; c < d; ++c) out << "f" << c << ",";
    out << "y\n";
    for (Eigen::Index r = 0; r < data[t].X.rows(); ++r) {
      for (int c = 0; c < d; ++c) {
        std::snprintf(cell, sizeof(cell), "%.17g", data[t].X(r, c));
        out << cell << ",";
      }
      std::snprintf(cell, sizeof(cell), "%.17g", data[t].y[r]);
      out << cell << "\n";
    }
  }
}

struct SplitPair {
  std::vector<TaskData> train;
  std::vector<TaskData> test;
};

// Per-task train/test split at ratio r: ceil(r N) training rows, taken
// chronologically (first rows) or by a seeded permutation.
inline SplitPair ratio_split(std::span<const TaskData> data, double r, std::uint64_t seed,
                             bool chronological = false) {
  validate_tasks(data);
  if (!(r > 0.0 && r < 1.0)) throw ValidationError("ratio_split: r must lie in (0,1)");

  SplitPair out;
  for (std::size_t t = 0; t < data.size(); ++t) {
    const Eigen::Index rows = data[t].X.rows();
    if (rows < 2) {
      throw ValidationError("ratio_split: task " + std::to_string(t) + " has fewer than 2 rows");
    }
    Eigen::Index n_train = static_cast<Eigen::Index>(std::ceil(r * static_cast<double>(rows)));
    n_train = std::clamp<Eigen::Index>(n_train, 1, rows - 1);

    std::vector<Eigen::Index> order(static_cast<std::size_t>(rows));
    std::iota(order.begin(), order.end(), 0);
    if (!chronological) {
      std::seed_seq seq{seed, static_cast<std::uint64_t>(t)};
      std::mt19937_64 rng(seq);
      std::shuffle(order.begin(), order.end(), rng);
    }

    const int d = static_cast<int>(data[t].X.cols());
    TaskData train, test;
    train.X.resize(n_train, d);
    train.y.resize(n_train);
    test.X.resize(rows - n_train, d);
    test.y.resize(rows - n_train);
    for (Eigen::Index i = 0; i < n_train; ++i) {
      train.X.row(i) = data[t].X.row(order[static_cast<std::size_t>(i)]);
      train.y[i] = data[t].y[order[static_cast<std::size_t>(i)]];
    }
    for (Eigen::Index i = n_train; i < rows; ++i) {
      test.X.row(i - n_train) = data[t].X.row(order[static_cast<std::size_t>(i)]);
      test.y[i - n_train] = data[t].y[order[static_cast<std::size_t>(i)]];
    }
    out.train.push_back(std::move(train));
    out.test.push_back(std::move(test));
  }
  return out;
}

// Per-feature mean/std estimated on training rows only (pooled across tasks).
struct Standardizer {
  Vector mean;
  Vector stddev;

  static Standardizer fit(std::span<const TaskData> train) {
    validate_tasks(train);
    const int d = static_cast<int>(train.front().X.cols());
    Vector sum = Vector::Zero(d), sumsq = Vector::Zero(d);
    double count = 0;
    for (const TaskData& t : train) {
      sum += t.X.colwise().sum().transpose();
      sumsq += t.X.array().square().colwise().sum().matrix().transpose();
      count += static_cast<double>(t.X.rows());
    }
    Standardizer s;
    s.mean = sum / count;
    s.stddev = ((sumsq / count).array() - s.mean.array().square()).max(0.0).sqrt();
    for (int c = 0; c < d; ++c) {
      if (s.stddev[c] < 1e-12) s.stddev[c] = 1.0;  // constant feature passes through
    }
    return s;
  }

  std::vector<TaskData> apply(std::span<const TaskData> data) const {
    std::vector<TaskData> out;
    out.reserve(data.size());
    for (const TaskData& t : data) {
      TaskData s;
      s.X = (t.X.rowwise() - mean.transpose()).array().rowwise() /
            stddev.transpose().array();
      s.y = t.y;
      out.push_back(std::move(s));
    }
    return out;
  }
};

inline nlohmann::json hyper_params_to_json(const HyperParams& hp) {
  return {{"xi", hp.xi},
          {"eta", hp.eta},
          {"gamma", hp.gamma},
          {"lambda", hp.lambda},
          {"nu", hp.nu},
          {"k", hp.k},
          {"variant", variant_name(hp.variant)},
          {"solver_tol", hp.solver_tol},
          {"solver_max_iter", hp.solver_max_iter},
          {"dense_threshold", hp.dense_threshold},
          {"eps_guard", hp.eps_guard},
          {"eps_log", hp.eps_log},
          {"l2_tol", hp.l2_tol},
          {"l2_max_rounds", hp.l2_max_rounds},
          {"outer_tol_rel", hp.outer_tol_rel},
          {"max_outer", hp.max_outer},
          {"backtracking", hp.backtracking},
          {"max_backtracks", hp.max_backtracks},
          {"init_ridge", hp.init_ridge},
          {"prune_threshold", hp.prune_threshold}};
}

inline HyperParams hyper_params_from_json(const nlohmann::json& j) {
  HyperParams hp;
  for (const auto& [key, value] : j.items()) {
    if (key == "xi") hp.xi = value.get<double>();
    else if (key == "eta") hp.eta = value.get<double>();
    else if (key == "gamma") hp.gamma = value.get<double>();
    else if (key == "lambda") hp.lambda = value.get<double>();
    else if (key == "nu") hp.nu = value.get<double>();
    else if (key == "k") hp.k = value.get<int>();
    else if (key == "variant") hp.variant = parse_variant(value.get<std::string>());
    else if (key == "solver_tol") hp.solver_tol = value.get<double>();
    else if (key == "solver_max_iter") hp.solver_max_iter = value.get<int>();
    else if (key == "dense_threshold") hp.dense_threshold = value.get<int>();
    else if (key == "eps_guard") hp.eps_guard = value.get<double>();
    else if (key == "eps_log") hp.eps_log = value.get<double>();
    else if (key == "l2_tol") hp.l2_tol = value.get<double>();
    else if (key == "l2_max_rounds") hp.l2_max_rounds = value.get<int>();
    else if (key == "outer_tol_rel") hp.outer_tol_rel = value.get<double>();
    else if (key == "max_outer") hp.max_outer = value.get<int>();
    else if (key == "backtracking") hp.backtracking = value.get<bool>();
    else if (key == "max_backtracks") hp.max_backtracks = value.get<int>();
    else if (key == "init_ridge") hp.init_ridge = value.get<double>();
    else if (key == "prune_threshold") hp.prune_threshold = value.get<double>();
    else throw ValidationError("hyper_params: unknown key '" + key + "'");
  }
  hp.validate();
  return hp;
}

inline constexpr int kFitSchemaVersion = 1;

// Fit persistence: models, learned graph, hyperparameters and the iteration
// trace, round-trip exact.
inline void save_fit(const FitResult& result, const HyperParams& hp, const std::string& path) {
  nlohmann::json j;
  j["version"] = kFitSchemaVersion;
  j["variant"] = variant_name(result.variant);
  j["converged"] = result.converged;
  j["hyper_params"] = hyper_params_to_json(hp);
  j["graph"] = graph_to_json(result.graph);
  nlohmann::json models = nlohmann::json::array();
  for (int i = 0; i < result.models.n_tasks(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < result.models.dim(); ++c) row.push_back(result.models.W(i, c));
    models.push_back(std::move(row));
  }
  j["models"] = std::move(models);
  nlohmann::json trace = nlohmann::json::array();
  for (const TraceRecord& r : result.trace) {
    trace.push_back({{"outer_objective", r.outer_objective},
                     {"train_sse", r.train_sse},
                     {"val_sse", r.val_sse},
                     {"grad_norm", r.grad_norm},
                     {"accepted", r.accepted}});
  }
  j["trace"] = std::move(trace);

  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write fit file: " + path);
  out << j.dump(2) << "\n";
}

struct LoadedFit {
  FitResult result;
  HyperParams hp;
};

inline LoadedFit load_fit(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open fit file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("fit file is not valid JSON: " + std::string(e.what()));
  }
  if (!j.contains("version") || j.at("version").get<int>() != kFitSchemaVersion) {
    throw ValidationError("fit file schema-version mismatch (expected " +
                          std::to_string(kFitSchemaVersion) + ")");
  }
  for (const char* key : {"variant", "models", "graph", "hyper_params", "trace", "converged"}) {
    if (!j.contains(key)) {
      throw ValidationError("fit file (schema version " + std::to_string(kFitSchemaVersion) +
                            "): missing field '" + std::string(key) + "'");
    }
  }

  const auto& models = j.at("models");
  const int n = static_cast<int>(models.size());
  if (n == 0) throw ValidationError("fit file: empty model list");
  const int d = static_cast<int>(models.at(0).size());
  Matrix w(n, d);
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(models.at(i).size()) != d) {
      throw ValidationError("fit file: ragged model matrix");
    }
    for (int c = 0; c < d; ++c) w(i, c) = models.at(i).at(c).get<double>();
  }

  std::vector<TraceRecord> trace;
  for (const auto& r : j.at("trace")) {
    trace.push_back({r.at("outer_objective").get<double>(), r.at("train_sse").get<double>(),
                     r.at("val_sse").get<double>(), r.at("grad_norm").get<double>(),
                     r.at("accepted").get<bool>()});
  }

  LoadedFit loaded{{StackedModel{std::move(w)}, graph_from_json(j.at("graph")), std::move(trace),
                    j.at("converged").get<bool>(), parse_variant(j.at("variant").get<std::string>())},
                   hyper_params_from_json(j.at("hyper_params"))};
  return loaded;
}

struct ExperimentConfig {
  MultiTaskCsv dataset;
  HyperParams hyper_params;
  SplitSpec split;
  double train_ratio = 0.3;
  int repeats = 1;
  std::uint64_t seed = 0;
  std::string mode = "ggmtl";  // or baseline_fixed_graph
  bool chronological = false;
};

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "dataset") {
      for (const auto& [dk, dv] : value.items()) {
        if (dk == "path") cfg.dataset.path = dv.get<std::string>();
        else if (dk == "layout") cfg.dataset.layout = parse_csv_layout(dv.get<std::string>());
        else if (dk == "target_column") cfg.dataset.target_column = dv.get<std::string>();
        else if (dk == "feature_columns") cfg.dataset.feature_columns = dv.get<std::vector<std::string>>();
        else if (dk == "task_column") cfg.dataset.task_column = dv.get<std::string>();
        else if (dk == "standardize") cfg.dataset.standardize = dv.get<bool>();
        else if (dk == "truth_graph") cfg.dataset.truth_graph = dv.get<std::string>();
        else throw ValidationError("dataset: unknown key '" + dk + "'");
      }
    } else if (key == "hyper_params") {
      cfg.hyper_params = hyper_params_from_json(value);
    } else if (key == "split") {
      for (const auto& [sk, sv] : value.items()) {
        if (sk == "val_fraction") cfg.split.val_fraction = sv.get<double>();
        else if (sk == "seed") cfg.split.seed = sv.get<std::uint64_t>();
        else throw ValidationError("split: unknown key '" + sk + "'");
      }
    } else if (key == "train_ratio") {
      cfg.train_ratio = value.get<double>();
    } else if (key == "repeats") {
      cfg.repeats = value.get<int>();
    } else if (key == "seed") {
      cfg.seed = value.get<std::uint64_t>();
    } else if (key == "mode") {
      cfg.mode = value.get<std::string>();
    } else if (key == "chronological") {
      cfg.chronological = value.get<bool>();
    } else {
      throw ValidationError("config: unknown key '" + key + "'");
    }
  }
  if (cfg.dataset.path.empty()) throw ValidationError("config: dataset.path is required");
  if (!(cfg.train_ratio > 0.0 && cfg.train_ratio < 1.0)) {
    throw ValidationError("config: train_ratio must lie in (0,1)");
  }
  if (cfg.repeats < 1) throw ValidationError("config: repeats must be at least 1");
  if (cfg.mode != "ggmtl" && cfg.mode != "baseline_fixed_graph") {
    throw ValidationError("config: mode must be ggmtl or baseline_fixed_graph");
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config is not valid JSON: " + std::string(e.what()));
  }
  return config_from_json(j);
}

}  // namespace ggmtl
