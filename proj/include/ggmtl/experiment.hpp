#pragma once

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ggmtl/data_io.hpp"
#include "ggmtl/driver.hpp"
#include "ggmtl/metrics.hpp"
#include "ggmtl/synth.hpp"
#include "ggmtl/task_graph.hpp"

namespace ggmtl {

// Grid-searched desk-scale protocol for the synthetic structures: fit
// hyperparameters, validation fraction, train/test ratio for held-out RMSE
// and the per-task sample budget.
struct SynthProtocol {
  HyperParams hp;
  double val_fraction = 0.25;
  double train_ratio = 0.7;
  int samples_per_task = 100;
};

inline SynthProtocol synth_protocol(SynthStructure structure) {
  SynthProtocol p;
  switch (structure) {
    case SynthStructure::line:
      p.hp.lambda = 50.0;
      p.hp.gamma = 0.1;
      p.hp.eta = 0.02;
      p.hp.xi = 0.01;
      p.hp.nu = 0.1;
      p.hp.k = 10;
      p.hp.max_outer = 400;
      p.hp.outer_tol_rel = 1e-7;
      p.val_fraction = 0.4;
      break;
    case SynthStructure::tree:
      p.hp.lambda = 100.0;
      p.hp.gamma = 0.1;
      p.hp.eta = 0.005;
      p.hp.xi = 0.0;
      p.hp.nu = 0.02;
      p.hp.k = 13;
      p.hp.max_outer = 600;
      p.hp.outer_tol_rel = 1e-8;
      p.val_fraction = 0.4;
      p.samples_per_task = 400;  // the tree needs more data to be identifiable
      break;
    case SynthStructure::star:
      p.hp.lambda = 0.5;
      p.hp.gamma = 0.05;
      p.hp.eta = 0.01;
      p.hp.xi = 0.01;
      p.hp.nu = 0.05;
      p.hp.k = 3;
      p.hp.max_outer = 200;
      p.hp.outer_tol_rel = 1e-6;
      p.hp.dense_threshold = 400;  // thin splits condition the system badly for CG
      p.val_fraction = 0.25;
      p.train_ratio = 0.35;
      break;
  }
  return p;
}

// Worker cap for repeated runs; GGMTL_THREADS overrides.
inline unsigned experiment_threads(int repeats) {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("GGMTL_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) n = static_cast<unsigned>(v);
  }
  return std::min<unsigned>(n, static_cast<unsigned>(std::max(repeats, 1)));
}

// Veracity of a fit's graph against a ground-truth graph: prune at the
// report threshold, then compare normalized adjacencies.
inline VeracityReport graph_veracity(const FitResult& fitted, const TaskGraph& truth,
                                     double prune_threshold) {
  const TaskGraph pruned = prune(fitted.graph, prune_threshold);
  return veracity(normalize_adjacency(truth.adjacency()),
                  normalize_adjacency(pruned.adjacency()));
}

struct RepeatOutcome {
  double rmse = 0.0;
  std::optional<VeracityReport> veracity;
  bool converged = false;
  int accepted_steps = 0;
};

namespace detail {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd ms;
  if (xs.empty()) return ms;
  for (double x : xs) ms.mean += x;
  ms.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - ms.mean) * (x - ms.mean);
    ms.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return ms;
}

inline nlohmann::json metric_json(const std::vector<double>& xs) {
  const MeanStd ms = mean_std(xs);
  return {{"mean", ms.mean}, {"std", ms.std}};
}

}  // namespace detail

struct ExperimentResult {
  nlohmann::json report;
  FitResult first_fit;  // fit of the first repeat, for persistence/export
};

// Runs `repeats` seeded train/test splits of one experiment config and
// aggregates metrics as mean +- std. Repeats may run in parallel workers;
// outcomes merge deterministically by repeat index.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.hyper_params.validate();
  const std::vector<TaskData> data = load_dataset(cfg.dataset);

  std::optional<TaskGraph> truth;
  if (!cfg.dataset.truth_graph.empty()) {
    std::ifstream in(cfg.dataset.truth_graph);
    if (!in) throw ValidationError("cannot open truth graph: " + cfg.dataset.truth_graph);
    nlohmann::json j;
    in >> j;
    truth = graph_from_json(j);
  }

  std::vector<RepeatOutcome> outcomes(static_cast<std::size_t>(cfg.repeats));
  std::vector<std::optional<FitResult>> fits(static_cast<std::size_t>(cfg.repeats));
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&]() {
    for (;;) {
      const int rep = next.fetch_add(1);
      if (rep >= cfg.repeats) return;
      try {
        const std::uint64_t rep_seed = cfg.seed + static_cast<std::uint64_t>(rep);
        SplitPair tt = ratio_split(data, cfg.train_ratio, rep_seed, cfg.chronological);
        if (cfg.dataset.standardize) {
          const Standardizer s = Standardizer::fit(tt.train);
          tt.train = s.apply(tt.train);
          tt.test = s.apply(tt.test);
        }
        const SplitSpec split{cfg.split.val_fraction, rep_seed};
        FitResult fr = cfg.mode == "baseline_fixed_graph"
                           ? baseline_fixed_graph(tt.train, cfg.hyper_params, split)
                           : fit(tt.train, cfg.hyper_params, split);

        RepeatOutcome oc;
        oc.rmse = rmse(fr.models, tt.test);
        oc.converged = fr.converged;
        for (const TraceRecord& r : fr.trace) oc.accepted_steps += r.accepted ? 1 : 0;
        if (truth) {
          oc.veracity = graph_veracity(fr, *truth, cfg.hyper_params.prune_threshold);
        }
        outcomes[static_cast<std::size_t>(rep)] = oc;
        fits[static_cast<std::size_t>(rep)] = std::move(fr);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };

  const unsigned n_threads = experiment_threads(cfg.repeats);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<double> rmses, f1s, accs, recs, precs;
  nlohmann::json per_repeat = nlohmann::json::array();
  for (int rep = 0; rep < cfg.repeats; ++rep) {
    const RepeatOutcome& oc = outcomes[static_cast<std::size_t>(rep)];
    nlohmann::json r{{"seed", cfg.seed + static_cast<std::uint64_t>(rep)},
                     {"rmse", oc.rmse},
                     {"converged", oc.converged},
                     {"accepted_steps", oc.accepted_steps}};
    rmses.push_back(oc.rmse);
    if (oc.veracity) {
      r["accuracy"] = oc.veracity->accuracy;
      r["recall"] = oc.veracity->recall;
      r["precision"] = oc.veracity->precision;
      r["f1"] = oc.veracity->f1;
      accs.push_back(oc.veracity->accuracy);
      recs.push_back(oc.veracity->recall);
      precs.push_back(oc.veracity->precision);
      f1s.push_back(oc.veracity->f1);
    }
    per_repeat.push_back(std::move(r));
  }

  nlohmann::json metrics{{"rmse", detail::metric_json(rmses)}};
  if (!f1s.empty()) {
    metrics["accuracy"] = detail::metric_json(accs);
    metrics["recall"] = detail::metric_json(recs);
    metrics["precision"] = detail::metric_json(precs);
    metrics["f1"] = detail::metric_json(f1s);
  }

  nlohmann::json report{{"mode", cfg.mode},
                        {"variant", variant_name(cfg.hyper_params.variant)},
                        {"repeats", cfg.repeats},
                        {"train_ratio", cfg.train_ratio},
                        {"metrics", std::move(metrics)},
                        {"per_repeat", std::move(per_repeat)}};

  ExperimentResult result{std::move(report), std::move(*fits.front())};
  return result;
}

}  // namespace ggmtl
