#pragma once

#include <vector>

#include "evonas/evalengine.hpp"

namespace evonas {

// Deterministic discrete-event simulation of the master-worker dispatch
// schedule over a device pool. Used for time/G accounting and the
// throughput ablation; virtual timestamps, no threads.
struct SimEvalResult {
    double makespan_ms = 0.0;
    std::vector<TelemetryRecord> telemetry; // kind == "sim", one per pool
    std::map<int, double> device_busy_ms;
};

SimEvalResult simulate_eval(const DevicePoolSpec& spec,
                            const std::vector<double>& model_costs_ms);

// Sequential data-parallel analog: one process, per-candidate loader
// construction (the overhead persistent workers remove).
double simulate_sequential_baseline(const CostModelSpec& cost,
                                    const std::vector<double>& model_costs_ms);

// Persistent-worker analog: one process, loader built once.
double simulate_persistent_workers(const CostModelSpec& cost,
                                   const std::vector<double>& model_costs_ms);

} // namespace evonas
