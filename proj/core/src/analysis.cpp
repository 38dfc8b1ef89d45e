#include "evonas/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_set>

#include "evonas/simqueue.hpp"

namespace evonas {

double kendall_tau(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ShapeError("kendall_tau: length mismatch");
    const int n = static_cast<int>(a.size());
    if (n < 2) throw InvalidInput("kendall_tau: need at least two observations");
    for (double v : a)
        if (std::isnan(v)) throw InvalidObjective("kendall_tau: NaN input");
    for (double v : b)
        if (std::isnan(v)) throw InvalidObjective("kendall_tau: NaN input");

    std::int64_t concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const double dx = a[i] - a[j];
            const double dy = b[i] - b[j];
            if (dx == 0.0 && dy == 0.0) {
                ++ties_a;
                ++ties_b;
            } else if (dx == 0.0) {
                ++ties_a;
            } else if (dy == 0.0) {
                ++ties_b;
            } else if ((dx > 0.0) == (dy > 0.0)) {
                ++concordant;
            } else {
                ++discordant;
            }
        }
    }
    const double n0 = 0.5 * n * (n - 1);
    const double denom = std::sqrt((n0 - ties_a) * (n0 - ties_b));
    if (denom == 0.0) return 0.0; // all pairs tied in one variable
    return (concordant - discordant) / denom;
}

double nid(double performance, double params_millions) {
    if (!(params_millions > 0.0))
        throw InvalidInput("nid: parameter count must be positive");
    return performance / params_millions;
}

// --- ranking-consistency experiment ---

namespace {

TrainableMask unrestricted_mask(const SearchSpace& space) {
    TrainableMask mask;
    mask.d_state_cap = space.max_d_state();
    mask.ssd_cap = space.max_ssd_expand();
    mask.mlp_cap = space.max_mlp_ratio();
    mask.depth_cap = space.max_depth_per_stage;
    return mask;
}

// Fresh-init fixed-budget training of one architecture on the task loss.
// Returns the trained validation error, or NaN on divergence.
double standalone_score(const ArchConfig& cfg, const SupernetDims& dims,
                        const SearchSpace& space, const MicroTask& task,
                        const ConsistencyOptions& opts, std::uint64_t init_seed,
                        Rng& batch_rng) {
    Rng init_rng(init_seed);
    SupernetParams net = init_from_dims(dims, init_rng);
    LossSpec loss;
    loss.kind = StageKind::Finetune;
    loss.teacher = nullptr;
    loss.weights = LossWeights{0.0, 0.0, 0.0};
    const TrainableMask mask = unrestricted_mask(space);
    const int n_train = static_cast<int>(task.train_inputs.size());
    std::vector<int> batch(opts.standalone_batch);
    const int window = std::max(1, opts.score_window);
    const int stride = std::max(1, opts.score_stride);
    const int first_scored =
        std::max(0, opts.standalone_steps - (window - 1) * stride);
    double score_sum = 0.0;
    int scored = 0;
    try {
        for (int step = 1; step <= opts.standalone_steps; ++step) {
            for (int& b : batch) b = static_cast<int>(batch_rng.uniform_index(n_train));
            train_step(net, cfg, task, batch, loss, opts.standalone_lr, mask);
            if (step >= first_scored && (step - first_scored) % stride == 0) {
                score_sum += validation_error(net, cfg, task);
                ++scored;
            }
        }
    } catch (const DivergenceError&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    if (scored == 0) {
        score_sum = validation_error(net, cfg, task);
        scored = 1;
    }
    return score_sum / scored;
}

} // namespace

StrategyConsistency consistency_experiment(const SupernetParams& trained,
                                           const std::string& label,
                                           const SearchSpace& space,
                                           const MicroTask& task,
                                           const ConsistencyOptions& opts) {
    if (opts.n_arch < 2) throw InvalidInput("consistency: need at least 2 architectures");
    if (opts.n_seeds < 1) throw InvalidInput("consistency: need at least 1 seed");

    StrategyConsistency out;
    out.strategy = label;

    for (int s = 0; s < opts.n_seeds; ++s) {
        // Architecture sample and standalone batches are functions of the
        // seed alone, so every strategy sees the same experiment.
        Rng arch_rng(Rng::derive(opts.seed, 0xA2C4, static_cast<std::uint64_t>(s)));
        std::vector<ArchConfig> archs;
        std::unordered_set<std::string> seen;
        int attempts = 0;
        while (static_cast<int>(archs.size()) < opts.n_arch &&
               attempts < opts.n_arch * 64) {
            ++attempts;
            const Genotype g = random_genotype(space, arch_rng);
            if (seen.insert(g.key()).second) archs.push_back(decode(g, space));
        }

        std::vector<double> proxy, standalone;
        int excluded = 0;
        std::vector<ConsistencyScatterPoint> scatter;
        for (std::size_t a = 0; a < archs.size(); ++a) {
            const double p = validation_error(trained, archs[a], task);
            Rng batch_rng(
                Rng::derive(opts.seed, 0xBA7C, static_cast<std::uint64_t>(s)));
            const double t = standalone_score(
                archs[a], trained.dims, space, task, opts,
                Rng::derive(opts.seed, 0x51D + a, static_cast<std::uint64_t>(s)),
                batch_rng);
            if (std::isnan(t)) {
                ++excluded;
                continue;
            }
            proxy.push_back(p);
            standalone.push_back(t);
            scatter.push_back({p, t});
        }
        out.excluded += excluded;
        out.scatter.push_back(std::move(scatter));
        out.taus.push_back(kendall_tau(proxy, standalone));
    }

    double sum = 0.0;
    for (double t : out.taus) sum += t;
    out.mean = sum / out.taus.size();
    double var = 0.0;
    for (double t : out.taus) var += (t - out.mean) * (t - out.mean);
    out.stddev = out.taus.size() > 1 ? std::sqrt(var / (out.taus.size() - 1)) : 0.0;
    return out;
}

std::string consistency_csv(const std::vector<StrategyConsistency>& results) {
    std::string out = "strategy,seeds,mean_tau,stddev_tau,excluded\n";
    char line[256];
    for (const StrategyConsistency& r : results) {
        std::snprintf(line, sizeof(line), "%s,%zu,%.17g,%.17g,%d\n",
                      r.strategy.c_str(), r.taus.size(), r.mean, r.stddev,
                      r.excluded);
        out += line;
    }
    return out;
}

std::string consistency_scatter_csv(const std::vector<StrategyConsistency>& results) {
    std::string out = "strategy,seed,proxy_error,standalone_error\n";
    char line[256];
    for (const StrategyConsistency& r : results)
        for (std::size_t s = 0; s < r.scatter.size(); ++s)
            for (const ConsistencyScatterPoint& p : r.scatter[s]) {
                std::snprintf(line, sizeof(line), "%s,%zu,%.17g,%.17g\n",
                              r.strategy.c_str(), s, p.proxy, p.standalone);
                out += line;
            }
    return out;
}

// --- throughput ablation ---

std::vector<AblationRow> throughput_ablation(const AblationOptions& opts) {
    if (opts.n_tasks < 1) throw InvalidInput("ablation: need at least one task");
    const std::vector<double> costs(opts.n_tasks, opts.task_cost_ms);

    std::vector<AblationRow> rows;
    const double baseline = simulate_sequential_baseline(opts.cost, costs);
    rows.push_back({"sequential", 1, 1, baseline, 1.0});
    rows.push_back({"persistent_workers", 1, 1,
                    simulate_persistent_workers(opts.cost, costs), 0.0});

    for (const auto& [n_p, b_m] : opts.process_grid) {
        DevicePoolSpec spec;
        spec.devices = opts.devices;
        spec.procs_per_device = n_p;
        spec.models_per_proc = b_m;
        spec.cost = opts.cost;
        rows.push_back(
            {"dmmpe", n_p, b_m, simulate_eval(spec, costs).makespan_ms, 0.0});
    }
    for (AblationRow& r : rows) r.speedup = baseline / r.time_g_ms;
    std::sort(rows.begin(), rows.end(), [](const AblationRow& a, const AblationRow& b) {
        if (a.time_g_ms != b.time_g_ms) return a.time_g_ms > b.time_g_ms;
        return a.strategy < b.strategy;
    });
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = "strategy,n_p,b_m,time_per_gen_ms,speedup\n";
    char line[256];
    for (const AblationRow& r : rows) {
        std::snprintf(line, sizeof(line), "%s,%d,%d,%.17g,%.17g\n",
                      r.strategy.c_str(), r.n_p, r.b_m, r.time_g_ms, r.speedup);
        out += line;
    }
    return out;
}

} // namespace evonas
