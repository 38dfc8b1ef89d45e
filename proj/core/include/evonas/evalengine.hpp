#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "evonas/microtask.hpp"
#include "evonas/moea.hpp"
#include "evonas/rng.hpp"
#include "evonas/search_space.hpp"
#include "evonas/supernet.hpp"

namespace evonas {

// Deterministic device cost model: service time affine in MACs, optional
// relative jitter, optional inflation per concurrent task (which exclusive
// leases remove), and fixed overheads for the queueing simulator.
struct CostModelSpec {
    double alpha_ms_per_mmac = 0.002; // ms per million MACs
    double base_ms = 0.05;
    double jitter = 0.0;           // uniform relative jitter in [-j, +j]
    double interference = 0.0;     // relative inflation per extra concurrent task
    double pool_overhead_ms = 0.0; // per-pool dataloader analog
    double proc_overhead_ms = 0.0; // one-time per worker process

    double service_ms(double macs) const {
        return base_ms + alpha_ms_per_mmac * macs / 1e6;
    }
    bool operator==(const CostModelSpec&) const = default;
};

struct DevicePoolSpec {
    int devices = 1;
    int procs_per_device = 1; // N_p
    int models_per_proc = 1;  // B_m
    CostModelSpec cost;

    int workers() const { return devices * procs_per_device; }
    void check() const;
    bool operator==(const DevicePoolSpec&) const = default;
};

struct LatencyProtocol {
    int warmup_runs = 5;
    int timed_runs = 21;
    // Batch size fixed at 1; aggregation is the median over timed runs;
    // warmups are discarded; every run executes under an exclusive lease.

    void check() const;
    bool operator==(const LatencyProtocol&) const = default;
};

// --- simulated device ---

class SimulatedDevice;

// Exclusive, non-reentrant, FIFO-granted occupancy of one device.
class DeviceLease {
public:
    DeviceLease() = default;
    DeviceLease(DeviceLease&& other) noexcept;
    DeviceLease& operator=(DeviceLease&& other) noexcept;
    DeviceLease(const DeviceLease&) = delete;
    DeviceLease& operator=(const DeviceLease&) = delete;
    ~DeviceLease();

    bool owns(const SimulatedDevice& device) const;
    void release();

private:
    friend class SimulatedDevice;
    explicit DeviceLease(SimulatedDevice* device) : device_(device) {}
    SimulatedDevice* device_ = nullptr;
};

class SimulatedDevice {
public:
    SimulatedDevice(int id, const CostModelSpec& cost);

    int id() const { return id_; }

    // Blocks until the caller is granted the device, FIFO order.
    DeviceLease acquire_lease();

    // One batch-1 inference run. Reflects cross-task interference when more
    // than one task occupies the device (leases prevent that for latency).
    double timed_run_ms(double macs, Rng& rng);

    // Scoped occupancy marker; accuracy tasks may share the device.
    class Occupancy {
    public:
        explicit Occupancy(SimulatedDevice& d);
        ~Occupancy();

    private:
        SimulatedDevice& device_;
    };

    struct LeaseInterval {
        double start_ms;
        double end_ms;
    };
    std::vector<LeaseInterval> lease_log() const;

private:
    friend class DeviceLease;
    void release_lease();

    int id_;
    CostModelSpec cost_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::uint64_t next_ticket_ = 0;
    std::uint64_t serving_ = 0;
    bool held_ = false;
    int occupancy_ = 0;
    std::vector<LeaseInterval> lease_log_;
    double lease_start_ms_ = 0.0;
    std::chrono::steady_clock::time_point epoch_;
};

// Runtime device pool. Owns one SimulatedDevice per configured device.
class DevicePool {
public:
    explicit DevicePool(const DevicePoolSpec& spec);

    const DevicePoolSpec& spec() const { return spec_; }
    int device_count() const { return static_cast<int>(devices_.size()); }
    int workers() const { return spec_.workers(); }
    SimulatedDevice& device(int i) { return *devices_.at(i); }

private:
    DevicePoolSpec spec_;
    std::vector<std::unique_ptr<SimulatedDevice>> devices_;
};

// --- task plumbing ---

struct ModelPool {
    int id = 0;
    std::vector<int> indices; // population indices
    std::vector<ArchConfig> configs;
};

// ceil(N / b_m) pools, order-stable, every config exactly once.
std::vector<ModelPool> partition_pools(const std::vector<ArchConfig>& configs,
                                       int b_m);

struct TelemetryRecord {
    int task_id = 0;
    std::string kind; // "accuracy" | "latency" | "sim"
    int pool_id = -1;
    int device = -1;
    int worker = -1;
    double start_ms = 0.0;
    double end_ms = 0.0;
    int retries = 0;
    bool failed = false;
};

// Analytic multiply-accumulate count of one forward pass (matches the
// instrumented multiplication counter of the toy network exactly).
std::int64_t count_macs(const ArchConfig& cfg, const SupernetDims& dims);

// --- evaluation drivers ---

struct EvalOptions {
    int max_retries = 2;
    std::uint64_t seed = 0;
    // Test hook: pool task id -> number of injected transient failures.
    std::map<int, int> inject_failures;
};

struct AccuracyEvalResult {
    std::map<int, double> errors; // population index -> validation error
    std::set<int> failed_indices;
    std::vector<TelemetryRecord> telemetry;
    int retries_total = 0;
};

// Work-sharing evaluation of model pools over the device pool: one bounded
// task queue, |devices| x N_p workers, results independent of scheduling.
AccuracyEvalResult run_accuracy_eval(const std::vector<ModelPool>& pools,
                                     const SupernetParams& snapshot,
                                     const MicroTask& task, DevicePool& devices,
                                     const EvalOptions& opts = {});

// Sequential reference loop (degenerate parallelism).
std::map<int, double> run_accuracy_eval_sequential(
    const std::vector<ModelPool>& pools, const SupernetParams& snapshot,
    const MicroTask& task);

// Median-of-timed-runs latency for one config. The caller must hold an
// exclusive lease on the device; throws IsolationViolation otherwise.
double measure_latency(const ArchConfig& cfg, const SupernetDims& dims,
                       const LatencyProtocol& protocol, SimulatedDevice& device,
                       const DeviceLease& lease, Rng& rng);

struct LatencyEvalResult {
    std::map<int, double> latency_ms;
    std::map<int, double> macs;
    std::set<int> failed_indices;
    std::vector<TelemetryRecord> telemetry;
};

// Round-robin config-to-device assignment; each device's measurements run
// serially behind its lease while devices proceed in parallel.
LatencyEvalResult run_latency_eval(const std::vector<ArchConfig>& configs,
                                   const SupernetDims& dims,
                                   const LatencyProtocol& protocol,
                                   DevicePool& devices,
                                   const EvalOptions& opts = {});

// --- fitness assembly ---

constexpr double kPenaltyObjective = 1e15;

struct AssembledFitness {
    FitnessMatrix fitness;
    std::vector<int> penalized; // indices carrying the worst-case sentinel
};

AssembledFitness assemble_fitness(const std::map<int, double>& err,
                                  const std::map<int, double>& latency_ms,
                                  const std::map<int, double>& macs, int n,
                                  const std::set<int>& failures);

// --- throughput reporting ---

struct ThroughputReport {
    double time_per_generation_ms = 0.0; // makespan over the records
    double sequential_time_ms = 0.0;     // sum of service times
    double speedup = 1.0;
    std::map<int, double> device_busy_ms;
    std::map<int, double> device_utilization;
};

ThroughputReport throughput_report(const std::vector<TelemetryRecord>& telemetry);

std::string telemetry_jsonl(const std::vector<TelemetryRecord>& telemetry);

} // namespace evonas
