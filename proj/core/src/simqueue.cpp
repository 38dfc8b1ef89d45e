#include "evonas/simqueue.hpp"

#include <queue>

namespace evonas {

SimEvalResult simulate_eval(const DevicePoolSpec& spec,
                            const std::vector<double>& model_costs_ms) {
    spec.check();
    SimEvalResult result;
    if (model_costs_ms.empty()) return result;

    // Pools in dispatch order, mirroring partition_pools.
    struct Pool {
        int id;
        double service_ms;
    };
    std::vector<Pool> pools;
    for (std::size_t i = 0; i < model_costs_ms.size();
         i += spec.models_per_proc) {
        double service = spec.cost.pool_overhead_ms;
        for (std::size_t j = i;
             j < std::min(model_costs_ms.size(), i + spec.models_per_proc); ++j)
            service += model_costs_ms[j];
        pools.push_back({static_cast<int>(pools.size()), service});
    }

    // Earliest-free worker takes the next pool (producer-consumer order).
    struct Worker {
        double free_at;
        int id;
        bool started;
        bool operator>(const Worker& other) const {
            if (free_at != other.free_at) return free_at > other.free_at;
            return id > other.id;
        }
    };
    std::priority_queue<Worker, std::vector<Worker>, std::greater<>> heap;
    for (int w = 0; w < spec.workers(); ++w) heap.push({0.0, w, false});

    for (const Pool& pool : pools) {
        Worker w = heap.top();
        heap.pop();
        double start = w.free_at;
        if (!w.started) {
            start += spec.cost.proc_overhead_ms;
            w.started = true;
        }
        const double end = start + pool.service_ms;
        const int device = w.id / spec.procs_per_device;

        TelemetryRecord rec;
        rec.task_id = pool.id;
        rec.kind = "sim";
        rec.pool_id = pool.id;
        rec.device = device;
        rec.worker = w.id;
        rec.start_ms = start;
        rec.end_ms = end;
        result.telemetry.push_back(rec);
        result.device_busy_ms[device] += end - start;
        result.makespan_ms = std::max(result.makespan_ms, end);

        w.free_at = end;
        heap.push(w);
    }
    return result;
}

double simulate_sequential_baseline(const CostModelSpec& cost,
                                    const std::vector<double>& model_costs_ms) {
    double total = cost.proc_overhead_ms;
    for (double c : model_costs_ms) total += cost.pool_overhead_ms + c;
    return total;
}

double simulate_persistent_workers(const CostModelSpec& cost,
                                   const std::vector<double>& model_costs_ms) {
    double total = cost.proc_overhead_ms + cost.pool_overhead_ms;
    for (double c : model_costs_ms) total += c;
    return total;
}

} // namespace evonas
