// Command-line front end: generate synthetic datasets, run experiments,
// check the hypergradient against finite differences, export learned graphs
// and benchmark the pipeline stages.
//
// Exit codes: 0 success, 1 validation/usage error, 2 numerical failure.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ggmtl/ggmtl.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const std::string& path, const std::string& text) {
  if (!path.empty()) {
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
  }
  std::ofstream out(path);
  if (!out) throw ggmtl::ValidationError("cannot write " + path);
  out << text;
}

json default_synth_config(const std::string& data_dir, const std::string& structure) {
  const ggmtl::SynthProtocol proto = ggmtl::synth_protocol(ggmtl::parse_structure(structure));
  return json{{"dataset",
               {{"path", data_dir},
                {"layout", "per_task_files"},
                {"target_column", "y"},
                {"standardize", false},
                {"truth_graph", (fs::path(data_dir) / "truth_graph.json").string()}}},
              {"hyper_params", ggmtl::hyper_params_to_json(proto.hp)},
              {"split", {{"val_fraction", proto.val_fraction}, {"seed", 0}}},
              {"train_ratio", proto.train_ratio},
              {"repeats", 10},
              {"seed", 1},
              {"mode", "ggmtl"}};
}

int run_synth(const std::string& structure, std::uint64_t seed, const std::string& out_dir,
              int n_tasks, int dim, int samples, double noise) {
  ggmtl::SynthSpec spec;
  spec.structure = ggmtl::parse_structure(structure);
  spec.n_tasks = n_tasks;
  spec.d = dim;
  spec.samples_per_task = samples;
  spec.noise_std = noise;
  spec.seed = seed;

  const ggmtl::SynthDataset ds = ggmtl::generate(spec);
  ggmtl::save_dataset(ds.tasks, out_dir);
  const ggmtl::TaskGraph truth = ggmtl::ground_truth_graph(ds.truth);
  write_text((fs::path(out_dir) / "truth_graph.json").string(),
             ggmtl::export_graph(truth, nullptr, ggmtl::GraphFormat::json));

  // a ready-to-edit experiment config next to the data
  json cfg = default_synth_config(out_dir);
  write_text((fs::path(out_dir) / "config.json").string(), cfg.dump(2) + "\n");

  std::cout << "wrote " << ds.tasks.size() << " task files, truth graph ("
            << truth.n_edges() << " edges) and config.json under " << out_dir << "\n";
  return 0;
}

void print_metric_table(const json& report) {
  std::cout << "mode: " << report.at("mode").get<std::string>() << "  variant: "
            << report.at("variant").get<std::string>() << "  repeats: "
            << report.at("repeats").get<int>() << "\n";
  const json& metrics = report.at("metrics");
  for (const auto& [name, value] : metrics.items()) {
    std::printf("  %-10s %.4f +- %.4f\n", name.c_str(), value.at("mean").get<double>(),
                value.at("std").get<double>());
  }
}

int run_train(const std::string& config_path, const std::string& out_dir, int repeats_override,
              double ratio_override, const std::string& variant_override,
              std::uint64_t seed_override, bool have_seed) {
  ggmtl::ExperimentConfig cfg = ggmtl::load_config(config_path);
  if (repeats_override > 0) cfg.repeats = repeats_override;
  if (ratio_override > 0.0) cfg.train_ratio = ratio_override;
  if (!variant_override.empty()) cfg.hyper_params.variant = ggmtl::parse_variant(variant_override);
  if (have_seed) cfg.seed = seed_override;

  const ggmtl::ExperimentResult result = ggmtl::run_experiment(cfg);

  fs::create_directories(out_dir.empty() ? "." : out_dir);
  const fs::path base = out_dir.empty() ? fs::path(".") : fs::path(out_dir);
  ggmtl::save_fit(result.first_fit, cfg.hyper_params, (base / "fit.json").string());
  write_text((base / "report.json").string(), result.report.dump(2) + "\n");

  print_metric_table(result.report);
  std::cout << "fit.json and report.json written under " << base.string() << "\n";
  return 0;
}

int run_eval(const std::string& fit_path, const std::string& data_dir,
             const std::string& truth_path, double prune_threshold) {
  const ggmtl::LoadedFit loaded = ggmtl::load_fit(fit_path);

  json out;
  if (!data_dir.empty()) {
    ggmtl::MultiTaskCsv csv;
    csv.path = data_dir;
    const std::vector<ggmtl::TaskData> data = ggmtl::load_dataset(csv);
    out["rmse"] = ggmtl::rmse(loaded.result.models, data);
  }
  if (!truth_path.empty()) {
    std::ifstream in(truth_path);
    if (!in) throw ggmtl::ValidationError("cannot open truth graph: " + truth_path);
    json j;
    in >> j;
    const ggmtl::TaskGraph truth = ggmtl::graph_from_json(j);
    const ggmtl::VeracityReport v =
        ggmtl::graph_veracity(loaded.result, truth, prune_threshold);
    out["accuracy"] = v.accuracy;
    out["recall"] = v.recall;
    out["precision"] = v.precision;
    out["f1"] = v.f1;
  }
  out["converged"] = loaded.result.converged;
  out["edges"] = loaded.result.graph.n_edges();
  std::cout << out.dump(2) << "\n";
  return 0;
}

int run_export(const std::string& fit_path, const std::string& format, double prune_threshold,
               bool cluster, const std::string& out_path) {
  const ggmtl::LoadedFit loaded = ggmtl::load_fit(fit_path);
  const ggmtl::GraphFormat fmt = ggmtl::parse_graph_format(format);
  const ggmtl::TaskGraph pruned = ggmtl::prune(loaded.result.graph, prune_threshold);

  std::string text;
  if (cluster) {
    const ggmtl::ClusterAssignment clusters = ggmtl::markov_cluster(pruned);
    text = ggmtl::export_graph(pruned, &clusters, fmt);
  } else {
    text = ggmtl::export_graph(pruned, nullptr, fmt);
  }
  if (out_path.empty()) {
    std::cout << text;
  } else {
    write_text(out_path, text);
    std::cout << "graph written to " << out_path << "\n";
  }
  return 0;
}

int run_grad_check(int n, int d, std::uint64_t seed, bool corrupt) {
  ggmtl::SynthSpec spec;
  spec.structure = ggmtl::SynthStructure::line;
  spec.n_tasks = n;
  spec.d = d;
  spec.samples_per_task = std::max(3 * d, 20);
  spec.seed = seed;
  const ggmtl::SynthDataset ds = ggmtl::generate(spec);

  ggmtl::HyperParams hp;
  hp.xi = 0.3;
  hp.eta = 0.2;
  hp.gamma = 0.25;
  hp.lambda = 1.5;
  hp.k = std::min(3, n - 1);

  const ggmtl::StackedModel init = ggmtl::ols_per_task(ds.tasks, hp.init_ridge);
  ggmtl::TaskGraph graph = ggmtl::knn_graph(init, hp.k);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.2, 0.9);
  ggmtl::Vector e(graph.n_edges());
  for (Eigen::Index k = 0; k < e.size(); ++k) e[k] = unif(rng);
  graph = graph.with_weights(e);

  const ggmtl::TrainValSplit tv = ggmtl::split_train_val(ds.tasks, {0.25, seed});
  ggmtl::Vector grad = ggmtl::hypergradient(graph, tv.train, tv.val, hp);
  if (corrupt) grad[0] += 0.5;  // negative-control hook
  const ggmtl::Vector fd = ggmtl::fd_hypergradient(graph, tv.train, tv.val, hp, 1e-6);

  double max_rel = 0.0;
  for (Eigen::Index k = 0; k < grad.size(); ++k) {
    if (std::abs(fd[k]) > 1e-8) {
      max_rel = std::max(max_rel, std::abs(grad[k] - fd[k]) / std::abs(fd[k]));
    }
  }
  std::cout << "edges: " << grad.size() << "  max relative deviation: " << max_rel << "\n";
  if (max_rel > 1e-4) {
    std::cout << "FAIL (tolerance 1e-4)\n";
    return 2;
  }
  std::cout << "PASS (tolerance 1e-4)\n";
  return 0;
}

int run_bench(const std::vector<int>& sizes, int d, int k) {
  using clock = std::chrono::steady_clock;
  auto ms = [](clock::time_point a, clock::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
  };

  json rows = json::array();
  std::printf("%8s %10s %12s %14s %16s\n", "n", "ols[ms]", "knn[ms]", "inner[ms]", "hypergrad[ms]");
  for (int n : sizes) {
    ggmtl::SynthSpec spec;
    spec.structure = ggmtl::SynthStructure::line;
    spec.n_tasks = n;
    spec.d = d;
    spec.samples_per_task = 50;
    spec.seed = 7;
    const ggmtl::SynthDataset ds = ggmtl::generate(spec);

    ggmtl::HyperParams hp;
    hp.lambda = 2.0;
    hp.gamma = 0.02;
    hp.eta = 0.01;
    hp.xi = 0.01;
    hp.k = k;

    const auto t0 = clock::now();
    const ggmtl::StackedModel init = ggmtl::ols_per_task(ds.tasks, hp.init_ridge);
    const auto t1 = clock::now();
    const ggmtl::TaskGraph graph = ggmtl::knn_graph(init, k);
    const auto t2 = clock::now();
    const ggmtl::TrainValSplit tv = ggmtl::split_train_val(ds.tasks, {0.25, 7});
    const ggmtl::StackedModel inner =
        ggmtl::solve_inner_sq(tv.train, graph, hp.lambda, hp.solver_options());
    const auto t3 = clock::now();

    // the hypergradient path must never form a dense (nd)^2 matrix; cap dense
    // temporaries far below that
    const std::size_t nd = static_cast<std::size_t>(n) * static_cast<std::size_t>(d);
    double hg_ms = 0.0;
    {
      ggmtl::detail::DenseAllocCapGuard guard(64 * nd);
      const auto t4 = clock::now();
      const ggmtl::Vector grad = ggmtl::hypergradient(graph, tv.train, tv.val, hp);
      const auto t5 = clock::now();
      hg_ms = ms(t4, t5);
      if (grad.size() != graph.n_edges()) return 2;
    }

    std::printf("%8d %10.1f %12.1f %14.1f %16.1f\n", n, ms(t0, t1), ms(t1, t2), ms(t2, t3), hg_ms);
    rows.push_back({{"n", n},
                    {"d", d},
                    {"k", k},
                    {"ols_ms", ms(t0, t1)},
                    {"knn_ms", ms(t1, t2)},
                    {"inner_ms", ms(t2, t3)},
                    {"hypergradient_ms", hg_ms}});
  }
  std::cout << rows.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"graph-guided multi-task regression"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic line/tree/star dataset");
  std::string structure = "line", out_dir = "synth_data";
  std::uint64_t seed = 0;
  int n_tasks = 0, dim = 0, samples = 100;
  double noise = 1.0;
  synth->add_option("--structure", structure, "line, tree or star")->required();
  synth->add_option("--seed", seed, "generator seed");
  synth->add_option("--out", out_dir, "output directory");
  synth->add_option("--n-tasks", n_tasks, "task count (0 = structure default)");
  synth->add_option("--dim", dim, "feature dimension (0 = structure default)");
  synth->add_option("--samples", samples, "samples per task");
  synth->add_option("--noise", noise, "noise standard deviation");

  // train
  auto* train = app.add_subcommand("train", "run an experiment from a JSON config");
  std::string config_path, train_out = "";
  int repeats_override = 0;
  double ratio_override = 0.0;
  std::string variant_override;
  std::uint64_t seed_override = 0;
  train->add_option("--config", config_path, "experiment config JSON")->required();
  train->add_option("--out", train_out, "output directory for fit.json/report.json");
  train->add_option("--repeats", repeats_override, "override the config repeat count");
  train->add_option("--train-ratio", ratio_override, "override the train/test ratio");
  train->add_option("--variant", variant_override, "override the inner variant (sq_l2, l2)");
  auto* seed_opt = train->add_option("--seed", seed_override, "override the base seed");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a saved fit against data and/or a truth graph");
  std::string fit_path, eval_data, eval_truth;
  double eval_prune = 1e-3;
  eval->add_option("--fit", fit_path, "fit JSON path")->required();
  eval->add_option("--data", eval_data, "dataset directory (per-task CSVs)");
  eval->add_option("--truth", eval_truth, "ground-truth graph JSON");
  eval->add_option("--prune", eval_prune, "prune threshold before veracity");

  // export-graph
  auto* exportg = app.add_subcommand("export-graph", "export a fit's learned graph");
  std::string export_fit, format = "dot", export_out;
  double prune_threshold = 1e-3;
  bool cluster = false;
  exportg->add_option("--fit", export_fit, "fit JSON path")->required();
  exportg->add_option("--format", format, "dot or json");
  exportg->add_option("--prune", prune_threshold, "drop edges below this weight");
  exportg->add_flag("--cluster", cluster, "attach Markov-cluster labels");
  exportg->add_option("--out", export_out, "output file (stdout if omitted)");

  // grad-check
  auto* gradcheck = app.add_subcommand("grad-check", "closed-form hypergradient vs finite differences");
  int gc_n = 5, gc_d = 3;
  std::uint64_t gc_seed = 1;
  bool gc_corrupt = false;
  gradcheck->add_option("--n", gc_n, "task count");
  gradcheck->add_option("--d", gc_d, "feature dimension");
  gradcheck->add_option("--seed", gc_seed, "instance seed");
  gradcheck->add_flag("--corrupt", gc_corrupt, "perturb the gradient (negative control)");

  // bench
  auto* bench = app.add_subcommand("bench", "wall-clock per pipeline stage over growing n");
  std::vector<int> sizes{25, 50, 100, 200};
  int bench_d = 10, bench_k = 5;
  bench->add_option("--sizes", sizes, "task counts to benchmark");
  bench->add_option("--d", bench_d, "feature dimension");
  bench->add_option("--k", bench_k, "k-NN parameter");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return run_synth(structure, seed, out_dir, n_tasks, dim, samples, noise);
    if (train->parsed()) {
      return run_train(config_path, train_out, repeats_override, ratio_override, variant_override,
                       seed_override, seed_opt->count() > 0);
    }
    if (eval->parsed()) return run_eval(fit_path, eval_data, eval_truth, eval_prune);
    if (exportg->parsed()) return run_export(export_fit, format, prune_threshold, cluster, export_out);
    if (gradcheck->parsed()) return run_grad_check(gc_n, gc_d, gc_seed, gc_corrupt);
    if (bench->parsed()) return run_bench(sizes, bench_d, bench_k);
  } catch (const ggmtl::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ggmtl::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
