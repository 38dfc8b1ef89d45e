#include "evonas/evalengine.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <thread>

namespace evonas {

void DevicePoolSpec::check() const {
    if (devices < 1 || procs_per_device < 1 || models_per_proc < 1)
        throw InvalidConfig("device pool: devices, N_p and B_m must be >= 1");
}

void LatencyProtocol::check() const {
    if (warmup_runs < 0 || timed_runs < 1)
        throw InvalidConfig("latency protocol: warmup >= 0 and timed >= 1 required");
}

// --- simulated device ---

namespace {

double ms_since(std::chrono::steady_clock::time_point epoch) {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now() - epoch)
        .count();
}

} // namespace

SimulatedDevice::SimulatedDevice(int id, const CostModelSpec& cost)
    : id_(id), cost_(cost), epoch_(std::chrono::steady_clock::now()) {}

DeviceLease SimulatedDevice::acquire_lease() {
    std::unique_lock lock(mu_);
    const std::uint64_t ticket = next_ticket_++;
    cv_.wait(lock, [&] { return serving_ == ticket && !held_; });
    held_ = true;
    lease_start_ms_ = ms_since(epoch_);
    return DeviceLease(this);
}

void SimulatedDevice::release_lease() {
    {
        std::lock_guard lock(mu_);
        held_ = false;
        ++serving_;
        lease_log_.push_back({lease_start_ms_, ms_since(epoch_)});
    }
    cv_.notify_all();
}

double SimulatedDevice::timed_run_ms(double macs, Rng& rng) {
    int occupancy;
    {
        std::lock_guard lock(mu_);
        occupancy = occupancy_;
    }
    const double base = cost_.service_ms(macs);
    const double jitter =
        cost_.jitter > 0.0 ? rng.uniform(-cost_.jitter, cost_.jitter) : 0.0;
    const double contention =
        occupancy > 1 ? cost_.interference * (occupancy - 1) : 0.0;
    return base * (1.0 + jitter) * (1.0 + contention);
}

SimulatedDevice::Occupancy::Occupancy(SimulatedDevice& d) : device_(d) {
    std::lock_guard lock(d.mu_);
    ++d.occupancy_;
}

SimulatedDevice::Occupancy::~Occupancy() {
    std::lock_guard lock(device_.mu_);
    --device_.occupancy_;
}

std::vector<SimulatedDevice::LeaseInterval> SimulatedDevice::lease_log() const {
    std::lock_guard lock(mu_);
    return lease_log_;
}

DeviceLease::DeviceLease(DeviceLease&& other) noexcept : device_(other.device_) {
    other.device_ = nullptr;
}

DeviceLease& DeviceLease::operator=(DeviceLease&& other) noexcept {
    if (this != &other) {
        release();
        device_ = other.device_;
        other.device_ = nullptr;
    }
    return *this;
}

DeviceLease::~DeviceLease() { release(); }

bool DeviceLease::owns(const SimulatedDevice& device) const {
    return device_ == &device;
}

void DeviceLease::release() {
    if (device_ != nullptr) {
        device_->release_lease();
        device_ = nullptr;
    }
}

DevicePool::DevicePool(const DevicePoolSpec& spec) : spec_(spec) {
    spec.check();
    devices_.reserve(spec.devices);
    for (int i = 0; i < spec.devices; ++i)
        devices_.push_back(std::make_unique<SimulatedDevice>(i, spec.cost));
}

// --- task plumbing ---

std::vector<ModelPool> partition_pools(const std::vector<ArchConfig>& configs,
                                       int b_m) {
    if (b_m < 1) throw InvalidConfig("partition_pools: B_m must be >= 1");
    if (configs.empty()) throw InvalidConfig("partition_pools: no configs");
    std::vector<ModelPool> pools;
    pools.reserve((configs.size() + b_m - 1) / b_m);
    for (std::size_t i = 0; i < configs.size(); i += b_m) {
        ModelPool pool;
        pool.id = static_cast<int>(pools.size());
        for (std::size_t j = i; j < std::min(configs.size(), i + b_m); ++j) {
            pool.indices.push_back(static_cast<int>(j));
            pool.configs.push_back(configs[j]);
        }
        pools.push_back(std::move(pool));
    }
    return pools;
}

std::int64_t count_macs(const ArchConfig& cfg, const SupernetDims& dims) {
    const auto ext = active_extents(dims, cfg);
    const std::int64_t P = dims.tokens();
    std::int64_t total = P * dims.d_model[0] * dims.patch_dim(); // embedding
    for (int s = 0; s < dims.num_stages(); ++s) {
        const StageExtents& e = ext[s];
        const std::int64_t d = dims.d_model[s];
        const std::int64_t per_block =
            P * (std::int64_t(e.e) * d    // content projection
                 + std::int64_t(e.n) * e.n // state transition
                 + std::int64_t(e.n) * e.e // write projection
                 + d * e.n                 // read projection
                 + std::int64_t(e.h) * d   // mlp in
                 + d * e.h);               // mlp out
        total += per_block * e.depth;
        if (s + 1 < dims.num_stages()) total += P * d * dims.d_model[s + 1];
    }
    const std::int64_t dl = dims.d_last();
    total += 4 * P * dl * dl + 2 * P * P * dl; // attention qkv/out + scores/ctx
    total += P * dl;                           // task head
    total += dl;                               // cls head on pooled tokens
    return total;
}

// --- accuracy evaluation ---

namespace {

struct AccuracyTask {
    int pool_index = 0;
    int attempt = 0;
};

// Bounded for the producer; retries bypass the bound so a full queue can
// never deadlock workers that need to requeue.
class TaskQueue {
public:
    explicit TaskQueue(std::size_t capacity) : capacity_(capacity) {}

    void push_bounded(AccuracyTask t) {
        std::unique_lock lock(mu_);
        cv_space_.wait(lock, [&] { return queue_.size() < capacity_ || closed_; });
        if (closed_) return;
        queue_.push_back(t);
        cv_items_.notify_one();
    }

    void push_retry(AccuracyTask t) {
        {
            std::lock_guard lock(mu_);
            if (closed_) return;
            queue_.push_back(t);
        }
        cv_items_.notify_one();
    }

    std::optional<AccuracyTask> pop() {
        std::unique_lock lock(mu_);
        cv_items_.wait(lock, [&] { return !queue_.empty() || closed_; });
        if (queue_.empty()) return std::nullopt;
        AccuracyTask t = queue_.front();
        queue_.pop_front();
        cv_space_.notify_one();
        return t;
    }

    void close() {
        {
            std::lock_guard lock(mu_);
            closed_ = true;
        }
        cv_items_.notify_all();
        cv_space_.notify_all();
    }

private:
    std::mutex mu_;
    std::condition_variable cv_items_, cv_space_;
    std::deque<AccuracyTask> queue_;
    std::size_t capacity_;
    bool closed_ = false;
};

} // namespace

AccuracyEvalResult run_accuracy_eval(const std::vector<ModelPool>& pools,
                                     const SupernetParams& snapshot,
                                     const MicroTask& task, DevicePool& devices,
                                     const EvalOptions& opts) {
    AccuracyEvalResult result;
    if (pools.empty()) return result;

    const int n_workers = devices.workers();
    TaskQueue queue(std::max<std::size_t>(1, 2 * n_workers));
    std::atomic<int> outstanding{static_cast<int>(pools.size())};
    std::atomic<int> retries_total{0};

    std::mutex result_mu;
    std::map<int, int> faults = opts.inject_failures; // guarded by result_mu
    const auto epoch = std::chrono::steady_clock::now();

    auto worker_fn = [&](int worker_id) {
        const int device_id = worker_id / devices.spec().procs_per_device;
        SimulatedDevice& device = devices.device(device_id);
        while (auto maybe_task = queue.pop()) {
            const AccuracyTask t = *maybe_task;
            const ModelPool& pool = pools[t.pool_index];
            TelemetryRecord rec;
            rec.task_id = pool.id;
            rec.kind = "accuracy";
            rec.pool_id = pool.id;
            rec.device = device_id;
            rec.worker = worker_id;
            rec.retries = t.attempt;
            rec.start_ms = ms_since(epoch);
            try {
                {
                    std::lock_guard lock(result_mu);
                    auto it = faults.find(pool.id);
                    if (it != faults.end() && it->second > 0) {
                        --it->second;
                        throw MeasurementError("injected transient fault");
                    }
                }
                SimulatedDevice::Occupancy occ(device);
                std::map<int, double> local;
                for (std::size_t i = 0; i < pool.configs.size(); ++i)
                    local[pool.indices[i]] =
                        validation_error(snapshot, pool.configs[i], task);
                rec.end_ms = ms_since(epoch);
                std::lock_guard lock(result_mu);
                for (const auto& [idx, eps] : local) result.errors[idx] = eps;
                result.telemetry.push_back(rec);
                if (outstanding.fetch_sub(1) == 1) queue.close();
            } catch (const std::exception&) {
                rec.end_ms = ms_since(epoch);
                rec.failed = true;
                {
                    std::lock_guard lock(result_mu);
                    result.telemetry.push_back(rec);
                }
                if (t.attempt < opts.max_retries) {
                    retries_total.fetch_add(1);
                    std::this_thread::sleep_for(
                        std::chrono::microseconds(100 << t.attempt));
                    queue.push_retry({t.pool_index, t.attempt + 1});
                } else {
                    {
                        std::lock_guard lock(result_mu);
                        for (int idx : pool.indices) result.failed_indices.insert(idx);
                    }
                    if (outstanding.fetch_sub(1) == 1) queue.close();
                }
            }
        }
    };

    std::vector<std::thread> workers;
    workers.reserve(n_workers);
    for (int w = 0; w < n_workers; ++w) workers.emplace_back(worker_fn, w);
    for (std::size_t i = 0; i < pools.size(); ++i)
        queue.push_bounded({static_cast<int>(i), 0});
    for (auto& th : workers) th.join();

    result.retries_total = retries_total.load();
    return result;
}

std::map<int, double> run_accuracy_eval_sequential(
    const std::vector<ModelPool>& pools, const SupernetParams& snapshot,
    const MicroTask& task) {
    std::map<int, double> out;
    for (const ModelPool& pool : pools)
        for (std::size_t i = 0; i < pool.configs.size(); ++i)
            out[pool.indices[i]] = validation_error(snapshot, pool.configs[i], task);
    return out;
}

// --- latency ---

double measure_latency(const ArchConfig& cfg, const SupernetDims& dims,
                       const LatencyProtocol& protocol, SimulatedDevice& device,
                       const DeviceLease& lease, Rng& rng) {
    protocol.check();
    if (!lease.owns(device))
        throw IsolationViolation("measure_latency requires an exclusive lease");
    const double macs = static_cast<double>(count_macs(cfg, dims));
    std::vector<double> samples;
    samples.reserve(protocol.timed_runs);
    SimulatedDevice::Occupancy occ(device);
    for (int r = 0; r < protocol.warmup_runs + protocol.timed_runs; ++r) {
        const double t = device.timed_run_ms(macs, rng);
        if (!std::isfinite(t)) throw MeasurementError("non-finite timing sample");
        if (r >= protocol.warmup_runs) samples.push_back(t);
    }
    std::sort(samples.begin(), samples.end());
    const std::size_t n = samples.size();
    return n % 2 == 1 ? samples[n / 2]
                      : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
}

LatencyEvalResult run_latency_eval(const std::vector<ArchConfig>& configs,
                                   const SupernetDims& dims,
                                   const LatencyProtocol& protocol,
                                   DevicePool& devices, const EvalOptions& opts) {
    LatencyEvalResult result;
    if (configs.empty()) return result;
    protocol.check();

    const int n_devices = devices.device_count();
    // Round-robin assignment; per-device cursors drive that device's queue.
    std::vector<std::vector<int>> per_device(n_devices);
    for (std::size_t i = 0; i < configs.size(); ++i)
        per_device[i % n_devices].push_back(static_cast<int>(i));

    std::mutex result_mu;
    const auto epoch = std::chrono::steady_clock::now();

    auto device_fn = [&](int device_id) {
        SimulatedDevice& device = devices.device(device_id);
        for (int idx : per_device[device_id]) {
            TelemetryRecord rec;
            rec.task_id = idx;
            rec.kind = "latency";
            rec.device = device_id;
            rec.worker = device_id;
            rec.start_ms = ms_since(epoch);
            try {
                Rng rng(Rng::derive(opts.seed, 0x1A7E, static_cast<std::uint64_t>(idx)));
                DeviceLease lease = device.acquire_lease();
                const double tau =
                    measure_latency(configs[idx], dims, protocol, device, lease, rng);
                lease.release();
                rec.end_ms = ms_since(epoch);
                std::lock_guard lock(result_mu);
                result.latency_ms[idx] = tau;
                result.macs[idx] = static_cast<double>(count_macs(configs[idx], dims));
                result.telemetry.push_back(rec);
            } catch (const std::exception&) {
                rec.end_ms = ms_since(epoch);
                rec.failed = true;
                std::lock_guard lock(result_mu);
                result.failed_indices.insert(idx);
                result.telemetry.push_back(rec);
            }
        }
    };

    std::vector<std::thread> threads;
    threads.reserve(n_devices);
    for (int d = 0; d < n_devices; ++d) threads.emplace_back(device_fn, d);
    for (auto& th : threads) th.join();
    return result;
}

// --- fitness assembly ---

AssembledFitness assemble_fitness(const std::map<int, double>& err,
                                  const std::map<int, double>& latency_ms,
                                  const std::map<int, double>& macs, int n,
                                  const std::set<int>& failures) {
    AssembledFitness out;
    out.fitness.rows.resize(n);
    for (int i = 0; i < n; ++i) {
        const bool failed = failures.count(i) > 0;
        const auto e = err.find(i);
        const auto l = latency_ms.find(i);
        const auto m = macs.find(i);
        if (failed) {
            out.fitness.rows[i] = {kPenaltyObjective, kPenaltyObjective,
                                   kPenaltyObjective};
            out.penalized.push_back(i);
            continue;
        }
        if (e == err.end() || l == latency_ms.end() || m == macs.end())
            throw IncompleteEvaluation(
                "assemble_fitness: index " + std::to_string(i) +
                " missing without a recorded failure");
        out.fitness.rows[i] = {e->second, l->second, m->second};
    }
    out.fitness.check();
    return out;
}

// --- throughput reporting ---

ThroughputReport throughput_report(const std::vector<TelemetryRecord>& telemetry) {
    ThroughputReport rep;
    if (telemetry.empty()) return rep;
    double t0 = telemetry.front().start_ms, t1 = telemetry.front().end_ms;
    for (const TelemetryRecord& r : telemetry) {
        t0 = std::min(t0, r.start_ms);
        t1 = std::max(t1, r.end_ms);
        const double busy = r.end_ms - r.start_ms;
        rep.sequential_time_ms += busy;
        if (r.device >= 0) rep.device_busy_ms[r.device] += busy;
    }
    rep.time_per_generation_ms = t1 - t0;
    rep.speedup = rep.time_per_generation_ms > 0.0
                      ? rep.sequential_time_ms / rep.time_per_generation_ms
                      : 1.0;
    for (const auto& [dev, busy] : rep.device_busy_ms)
        rep.device_utilization[dev] =
            rep.time_per_generation_ms > 0.0 ? busy / rep.time_per_generation_ms : 0.0;
    return rep;
}

std::string telemetry_jsonl(const std::vector<TelemetryRecord>& telemetry) {
    std::string out;
    char line[512];
    for (const TelemetryRecord& r : telemetry) {
        std::snprintf(line, sizeof(line),
                      "{\"task_id\":%d,\"kind\":\"%s\",\"pool_id\":%d,"
                      "\"device\":%d,\"worker\":%d,\"start_ms\":%.6f,"
                      "\"end_ms\":%.6f,\"retries\":%d,\"failed\":%s}\n",
                      r.task_id, r.kind.c_str(), r.pool_id, r.device, r.worker,
                      r.start_ms, r.end_ms, r.retries, r.failed ? "true" : "false");
        out += line;
    }
    return out;
}

} // namespace evonas
