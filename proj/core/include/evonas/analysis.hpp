#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "evonas/microtask.hpp"
#include "evonas/pipeline.hpp"
#include "evonas/supernet.hpp"

namespace evonas {

// Kendall rank correlation with tau-b tie correction.
double kendall_tau(const std::vector<double>& a, const std::vector<double>& b);

// Normalized information density: task performance per million parameters.
double nid(double performance, double params_millions);

// --- ranking-consistency experiment ---

struct ConsistencyOptions {
    int n_arch = 16;
    int n_seeds = 5;
    int standalone_steps = 2000;
    int standalone_batch = 4;
    double standalone_lr = 0.002;
    // Standalone score: mean validation error over this many checkpoints
    // spread across the trailing steps, which damps SGD noise.
    int score_window = 5;
    int score_stride = 25;
    std::uint64_t seed = 0;
};

struct ConsistencyScatterPoint {
    double proxy = 0.0;      // supernet validation error
    double standalone = 0.0; // independently trained validation error
};

struct StrategyConsistency {
    std::string strategy;
    std::vector<double> taus; // one per seed
    double mean = 0.0;
    double stddev = 0.0;
    int excluded = 0; // architectures dropped for standalone divergence
    std::vector<std::vector<ConsistencyScatterPoint>> scatter; // per seed
};

// Proxy scores come from the trained supernet; standalone scores from fresh
// fixed-budget training of each sampled architecture. Sampled architectures
// and standalone batches vary per seed, identically across strategies.
StrategyConsistency consistency_experiment(const SupernetParams& trained,
                                           const std::string& label,
                                           const SearchSpace& space,
                                           const MicroTask& task,
                                           const ConsistencyOptions& opts);

std::string consistency_csv(const std::vector<StrategyConsistency>& results);
std::string consistency_scatter_csv(const std::vector<StrategyConsistency>& results);

// --- throughput ablation ---

struct AblationRow {
    std::string strategy; // "sequential", "persistent_workers", "dmmpe"
    int n_p = 1;
    int b_m = 1;
    double time_g_ms = 0.0;
    double speedup = 1.0; // versus the sequential baseline row
};

struct AblationOptions {
    int n_tasks = 96;
    double task_cost_ms = 2.0; // homogeneous synthetic workload
    int devices = 8;
    CostModelSpec cost;
    std::vector<std::pair<int, int>> process_grid = {
        {1, 1}, {2, 2}, {2, 3}, {3, 4}, {4, 3}, {4, 4}};
};

// Baseline, persistent-worker analog, and DMMPE rows over an identical
// synthetic workload; sorted slowest first.
std::vector<AblationRow> throughput_ablation(const AblationOptions& opts);

std::string ablation_csv(const std::vector<AblationRow>& rows);

} // namespace evonas
