#include "evonas/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include <json.hpp>

#include "evonas/simqueue.hpp"

namespace evonas {

const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::PstCaDdkd: return "pst_ca_ddkd";
        case Strategy::RandomSampling: return "random_sampling";
        case Strategy::ArchPool: return "arch_pool";
    }
    return "?";
}

Strategy strategy_from_string(const std::string& name) {
    if (name == "pst_ca_ddkd") return Strategy::PstCaDdkd;
    if (name == "random_sampling") return Strategy::RandomSampling;
    if (name == "arch_pool") return Strategy::ArchPool;
    throw InvalidConfig("unknown training strategy: " + name);
}

void EvolutionParams::check() const {
    if (n_pop < 2 || n_pop % 2 != 0)
        throw InvalidConfig("evolution.n_pop must be even and >= 2");
    if (generations < 1) throw InvalidConfig("evolution.generations must be >= 1");
    if (p_c < 0.0 || p_c > 1.0) throw InvalidConfig("evolution.p_c must lie in [0, 1]");
    if (p_m < 0.0 || p_m > 1.0) throw InvalidConfig("evolution.p_m must lie in [0, 1]");
    if (eta_m <= 0.0) throw InvalidConfig("evolution.eta_m must be positive");
    if (p_gene < 0.0 || p_gene > 1.0 || p_stage < 0.0 || p_stage > 1.0)
        throw InvalidConfig("evolution per-gene probabilities must lie in [0, 1]");
}

void TrainParams::check() const {
    if (lr_pretrain < 0.0 || lr_finetune < 0.0)
        throw InvalidConfig("train: learning rates must be nonnegative");
    if (batch_size < 1) throw InvalidConfig("train.batch_size must be >= 1");
    if (arch_pool_size < 1) throw InvalidConfig("train.arch_pool_size must be >= 1");
}

void RunConfig::check() const {
    space.check();
    schedule.check(space);
    loss_weights.check();
    evolution.check();
    devices.check();
    protocol.check();
    train.check();
    const SupernetDims dims = supernet_dims();
    if (task.target_size * task.target_size != dims.tokens())
        throw InvalidConfig("task.target_size^2 must equal the token count");
    if (task.grid_size != dims.grid_size)
        throw InvalidConfig("task.grid_size must match the supernet input grid");
}

MicroTaskSpec RunConfig::task_spec() const {
    MicroTaskSpec spec = task;
    if (spec.seed == 0) spec.seed = seed_for(kSeedTask); // 0: derive from master
    return spec;
}

TeacherSpec RunConfig::teacher_spec() const {
    TeacherSpec spec = teacher;
    const SupernetDims dims = supernet_dims();
    spec.seed = seed_for(kSeedTeacher);
    spec.grid_size = task.grid_size;
    spec.prediction_values = dims.tokens();
    spec.token_dim = dims.teacher_dim;
    spec.token_rows = dims.token_side();
    spec.token_cols = dims.token_side();
    return spec;
}

SupernetDims RunConfig::supernet_dims() const {
    SupernetDims dims = SupernetDims::from_space(space, d_model, seed_for(kSeedInit));
    dims.grid_size = task.grid_size;
    if (task.target_size > 0 && task.grid_size % task.target_size == 0)
        dims.patch_size = task.grid_size / task.target_size;
    dims.teacher_tokens = dims.tokens(); // track the adjusted geometry
    return dims;
}

// --- stage training ---

void run_stage(SupernetParams& params, const SearchSpace& space,
               const ProgressiveSchedule& schedule, const MicroTask& task,
               const StageOptions& opts, Rng& rng) {
    if (opts.strategy == Strategy::PstCaDdkd && opts.kind == StageKind::Finetune &&
        opts.teacher == nullptr)
        throw InvalidConfig("finetune stage requires a teacher model");

    const int total_iters = schedule.total_iters();
    const int n_train = static_cast<int>(task.train_inputs.size());

    // Baseline strategies ignore the curriculum: all candidates active.
    ActiveSets full;
    if (opts.strategy != Strategy::PstCaDdkd) {
        full.d_state = space.d_state_candidates;
        full.ssd_expand = space.ssd_expand_candidates;
        full.mlp_ratio = space.mlp_ratio_candidates;
        full.depth_unlocked = true;
        full.mode = TrainMode::Joint;
        full.mask.d_state_cap = space.max_d_state();
        full.mask.ssd_cap = space.max_ssd_expand();
        full.mask.mlp_cap = space.max_mlp_ratio();
        full.mask.depth_cap = space.max_depth_per_stage;
    }

    std::vector<ArchConfig> pool;
    if (opts.strategy == Strategy::ArchPool) {
        pool.reserve(opts.arch_pool_size);
        for (int i = 0; i < opts.arch_pool_size; ++i)
            pool.push_back(decode(random_genotype(space, rng), space));
    }

    LossSpec loss;
    loss.kind = opts.kind;
    loss.weights = opts.weights;
    // Distillation guidance only applies to the full method's finetune.
    loss.teacher = (opts.kind == StageKind::Finetune &&
                    opts.strategy == Strategy::PstCaDdkd)
                       ? opts.teacher
                       : nullptr;
    if (opts.kind == StageKind::Finetune && loss.teacher == nullptr) {
        // Baselines train with ground-truth supervision alone.
        loss.weights.theta = 0.0;
        loss.weights.alpha1 = 0.0;
        loss.weights.alpha2 = 0.0;
    }

    for (int iter = 0; iter < total_iters; ++iter) {
        ActiveSets active = (opts.strategy == Strategy::PstCaDdkd)
                                ? active_sets(schedule, space, iter)
                                : full;

        std::vector<int> batch(opts.batch_size);
        for (int& b : batch) b = static_cast<int>(rng.uniform_index(n_train));

        ArchConfig cfg;
        if (opts.strategy == Strategy::ArchPool)
            cfg = pool[rng.uniform_index(pool.size())];
        else
            cfg = sample_uniform(active, space, rng);

        const StepResult step =
            train_step(params, cfg, task, batch, loss, opts.lr, active.mask);
        if (opts.log)
            opts.log(LossLogEntry{iter, opts.kind, active.phase_id, active.mode, step});
    }
}

void train_supernet(SupernetParams& params, const MicroTask& task,
                    const TeacherModel& teacher, const RunConfig& run,
                    const LossLogSink& log, Rng* finetune_rng_out) {
    Rng pre_rng(run.seed_for(RunConfig::kSeedPretrain));
    StageOptions pre;
    pre.kind = StageKind::Pretrain;
    pre.strategy = run.train.strategy;
    pre.lr = run.train.lr_pretrain;
    pre.batch_size = run.train.batch_size;
    pre.weights = run.loss_weights;
    pre.arch_pool_size = run.train.arch_pool_size;
    pre.log = log;
    run_stage(params, run.space, run.schedule, task, pre, pre_rng);

    Rng fin_rng(run.seed_for(RunConfig::kSeedFinetune));
    StageOptions fin = pre;
    fin.kind = StageKind::Finetune;
    fin.lr = run.train.lr_finetune;
    fin.teacher = &teacher;
    run_stage(params, run.space, run.schedule, task, fin, fin_rng);
    if (finetune_rng_out) *finetune_rng_out = fin_rng;
}

// --- population evaluation ---

EvalOutcome evaluate_population(const std::vector<Genotype>& members,
                                const SupernetParams& snapshot,
                                const MicroTask& task, const RunConfig& run,
                                DevicePool& devices, std::uint64_t eval_seed) {
    EvalOutcome out;
    const int n = static_cast<int>(members.size());
    if (n == 0) return out;

    // Duplicate genotypes within a generation share one evaluation.
    std::vector<ArchConfig> unique_configs;
    std::vector<int> unique_of_member(n);
    std::unordered_map<std::string, int> seen;
    for (int i = 0; i < n; ++i) {
        const std::string key = members[i].key();
        auto it = seen.find(key);
        if (it == seen.end()) {
            seen.emplace(key, static_cast<int>(unique_configs.size()));
            unique_of_member[i] = static_cast<int>(unique_configs.size());
            unique_configs.push_back(decode(members[i], run.space));
        } else {
            unique_of_member[i] = it->second;
            ++out.cache_hits;
        }
    }

    const auto pools = partition_pools(unique_configs, run.devices.models_per_proc);

    EvalOptions opts;
    opts.seed = eval_seed;
    const AccuracyEvalResult acc =
        run_accuracy_eval(pools, snapshot, task, devices, opts);
    const LatencyEvalResult lat = run_latency_eval(
        unique_configs, snapshot.dims, run.protocol, devices, opts);

    std::set<int> failures = acc.failed_indices;
    failures.insert(lat.failed_indices.begin(), lat.failed_indices.end());
    const AssembledFitness unique_fit = assemble_fitness(
        acc.errors, lat.latency_ms, lat.macs,
        static_cast<int>(unique_configs.size()), failures);

    out.fitness.rows.resize(n);
    for (int i = 0; i < n; ++i)
        out.fitness.rows[i] = unique_fit.fitness.rows[unique_of_member[i]];
    for (int u : unique_fit.penalized)
        for (int i = 0; i < n; ++i)
            if (unique_of_member[i] == u) out.penalized.push_back(i);
    out.evaluations = n;

    // Simulated dispatch time over the accuracy workload (one validation
    // pass per unique model).
    std::vector<double> costs;
    costs.reserve(unique_configs.size());
    for (const ArchConfig& cfg : unique_configs)
        costs.push_back(static_cast<double>(task.val_inputs.size()) *
                        run.devices.cost.service_ms(
                            static_cast<double>(count_macs(cfg, snapshot.dims))));
    out.time_per_gen_ms = simulate_eval(run.devices, costs).makespan_ms;

    out.telemetry = acc.telemetry;
    out.telemetry.insert(out.telemetry.end(), lat.telemetry.begin(),
                         lat.telemetry.end());
    return out;
}

// --- search loop ---

namespace {

struct RankedParents {
    std::vector<int> rank;
    std::vector<double> crowd;
};

RankedParents rank_population(const FitnessMatrix& fitness) {
    RankedParents rp;
    rp.rank.assign(fitness.size(), 0);
    rp.crowd.assign(fitness.size(), 0.0);
    const auto fronts = fast_nondominated_sort(fitness);
    for (std::size_t r = 0; r < fronts.size(); ++r) {
        std::vector<ObjectiveVector> objs;
        objs.reserve(fronts[r].size());
        for (int idx : fronts[r]) objs.push_back(fitness.rows[idx]);
        const auto cd = crowding_distance(objs);
        for (std::size_t i = 0; i < fronts[r].size(); ++i) {
            rp.rank[fronts[r][i]] = static_cast<int>(r);
            rp.crowd[fronts[r][i]] = cd[i];
        }
    }
    return rp;
}

ObjectiveVector componentwise(const FitnessMatrix& fitness, bool maximum,
                              const std::vector<int>& skip) {
    ObjectiveVector out{maximum ? -kInfinity : kInfinity,
                        maximum ? -kInfinity : kInfinity,
                        maximum ? -kInfinity : kInfinity};
    std::set<int> skipped(skip.begin(), skip.end());
    for (std::size_t i = 0; i < fitness.size(); ++i) {
        if (skipped.count(static_cast<int>(i))) continue;
        const ObjectiveVector& v = fitness.rows[i];
        if (maximum) {
            out.err = std::max(out.err, v.err);
            out.latency_ms = std::max(out.latency_ms, v.latency_ms);
            out.macs = std::max(out.macs, v.macs);
        } else {
            out.err = std::min(out.err, v.err);
            out.latency_ms = std::min(out.latency_ms, v.latency_ms);
            out.macs = std::min(out.macs, v.macs);
        }
    }
    return out;
}

double normalization_box(const ObjectiveVector& ideal, const ObjectiveVector& ref) {
    const double v = (ref.err - ideal.err) * (ref.latency_ms - ideal.latency_ms) *
                     (ref.macs - ideal.macs);
    return v > 0.0 ? v : 1.0;
}

} // namespace

Population offspring_generation(const Population& parents,
                                const EvolutionParams& evo,
                                const SearchSpace& space, Rng& rng) {
    if (!parents.has_fitness())
        throw IncompleteEvaluation("offspring_generation: parents lack fitness");
    evo.check();
    const int n = static_cast<int>(parents.members.size());
    const RankedParents rp = rank_population(parents.fitness);

    auto tournament = [&]() -> int {
        const int a = static_cast<int>(rng.uniform_index(n));
        const int b = static_cast<int>(rng.uniform_index(n));
        if (rp.rank[a] != rp.rank[b]) return rp.rank[a] < rp.rank[b] ? a : b;
        if (rp.crowd[a] != rp.crowd[b]) return rp.crowd[a] > rp.crowd[b] ? a : b;
        return std::min(a, b);
    };

    const double p_gene =
        evo.p_gene > 0.0 ? evo.p_gene : 1.0 / space.integer_genes();
    const double p_stage =
        evo.p_stage > 0.0 ? evo.p_stage : 1.0 / space.num_stages;

    Population offspring;
    offspring.members.reserve(n);
    while (static_cast<int>(offspring.members.size()) < n) {
        const Genotype& pa = parents.members[tournament()];
        const Genotype& pb = parents.members[tournament()];
        Genotype c1 = pa, c2 = pb;
        if (rng.bernoulli(evo.p_c)) {
            std::tie(c1, c2) = two_point_crossover_int(c1, c2, space, rng);
            std::tie(c1, c2) = uniform_crossover_depth(c1, c2, space, rng);
        }
        for (Genotype* child : {&c1, &c2}) {
            if (rng.bernoulli(evo.p_m)) {
                *child = polynomial_mutation_int(*child, space, evo.eta_m, p_gene, rng);
                *child = bitflip_mutation_depth(*child, space, p_stage, rng);
            }
        }
        offspring.members.push_back(std::move(c1));
        if (static_cast<int>(offspring.members.size()) < n)
            offspring.members.push_back(std::move(c2));
    }
    return offspring;
}

SearchResult run_search(
    const SupernetParams& snapshot, const MicroTask& task, const RunConfig& run,
    SearchState& state,
    const std::function<void(const SearchState&)>& after_generation,
    int stop_after_generation) {
    run.check();
    const int last_generation = stop_after_generation >= 0
                                    ? std::min(stop_after_generation,
                                               run.evolution.generations)
                                    : run.evolution.generations;
    const int n_pop = run.evolution.n_pop;
    DevicePool devices(run.devices);

    auto record_generation = [&](int gen, const std::vector<Genotype>& evaluated,
                                 const EvalOutcome& eval) {
        GenerationRecord rec;
        rec.generation = gen;
        rec.population = state.population.members;
        rec.fitness = state.population.fitness;
        rec.evaluated = evaluated;
        rec.evaluated_fitness = eval.fitness;
        const auto fronts = fast_nondominated_sort(state.population.fitness);
        if (!fronts.empty()) rec.front0 = fronts.front();
        std::vector<ObjectiveVector> pts;
        pts.reserve(state.archive.size());
        for (const auto& e : state.archive.entries()) pts.push_back(e.objectives);
        rec.archive_hv = hypervolume(pts, state.hv_ref).volume;
        rec.archive_hv_norm =
            rec.archive_hv / normalization_box(state.hv_ideal, state.hv_ref);
        rec.archive_size = static_cast<int>(state.archive.size());
        rec.time_per_gen_ms = eval.time_per_gen_ms;
        rec.evaluations = eval.evaluations;
        rec.cache_hits = eval.cache_hits;
        state.trajectory.records.push_back(std::move(rec));
    };

    if (!state.initialized) {
        state.evo_rng = Rng(run.seed_for(RunConfig::kSeedEvolution));
        state.population.members.clear();
        state.population.members.reserve(n_pop);
        for (int i = 0; i < n_pop; ++i)
            state.population.members.push_back(random_genotype(run.space, state.evo_rng));

        const EvalOutcome eval = evaluate_population(
            state.population.members, snapshot, task, run, devices,
            Rng::derive(run.seed_for(RunConfig::kSeedJitter), 0));
        state.population.fitness = eval.fitness;

        // Fixed hypervolume reference: 1.1 x componentwise generation-0 max.
        const ObjectiveVector mx =
            componentwise(eval.fitness, true, eval.penalized);
        state.hv_ref = {mx.err * 1.1, mx.latency_ms * 1.1, mx.macs * 1.1};
        state.hv_ideal = componentwise(eval.fitness, false, eval.penalized);

        for (int i = 0; i < n_pop; ++i) {
            const bool penalized =
                std::find(eval.penalized.begin(), eval.penalized.end(), i) !=
                eval.penalized.end();
            if (!penalized)
                state.archive.insert(state.population.members[i],
                                     eval.fitness.rows[i]);
        }
        record_generation(0, state.population.members, eval);
        state.initialized = true;
        state.next_generation = 1;
        if (after_generation) after_generation(state);
    }

    for (int gen = state.next_generation; gen <= last_generation; ++gen) {
        Population offspring =
            offspring_generation(state.population, run.evolution, run.space,
                                 state.evo_rng);
        const EvalOutcome eval = evaluate_population(
            offspring.members, snapshot, task, run, devices,
            Rng::derive(run.seed_for(RunConfig::kSeedJitter),
                        static_cast<std::uint64_t>(gen)));
        offspring.fitness = eval.fitness;

        for (int i = 0; i < n_pop; ++i) {
            const bool penalized =
                std::find(eval.penalized.begin(), eval.penalized.end(), i) !=
                eval.penalized.end();
            if (!penalized)
                state.archive.insert(offspring.members[i], eval.fitness.rows[i]);
        }

        Population unions;
        unions.members = state.population.members;
        unions.members.insert(unions.members.end(), offspring.members.begin(),
                              offspring.members.end());
        unions.fitness.rows = state.population.fitness.rows;
        unions.fitness.rows.insert(unions.fitness.rows.end(),
                                   offspring.fitness.rows.begin(),
                                   offspring.fitness.rows.end());
        state.population = survival(unions, n_pop);

        record_generation(gen, offspring.members, eval);
        state.next_generation = gen + 1;
        if (after_generation) after_generation(state);
    }

    SearchResult result;
    result.archive = state.archive;
    result.trajectory = state.trajectory;
    result.hv_ref = state.hv_ref;
    result.hv_ideal = state.hv_ideal;
    return result;
}

// --- exports ---

namespace {

nlohmann::ordered_json genotype_json(const Genotype& g) {
    nlohmann::ordered_json j;
    j["integer_segment"] = g.integer_segment;
    j["depth_bits"] = depth_bits_string(g);
    return j;
}

nlohmann::ordered_json objectives_json(const ObjectiveVector& v) {
    nlohmann::ordered_json j;
    j["err"] = v.err;
    j["latency_ms"] = v.latency_ms;
    j["macs"] = v.macs;
    return j;
}

} // namespace

std::string trajectory_jsonl(const Trajectory& trajectory) {
    std::string out;
    for (const GenerationRecord& rec : trajectory.records) {
        nlohmann::ordered_json j;
        j["generation"] = rec.generation;
        j["evaluations"] = rec.evaluations;
        j["cache_hits"] = rec.cache_hits;
        j["time_per_gen_ms"] = rec.time_per_gen_ms;
        j["archive_hv"] = rec.archive_hv;
        j["archive_hv_norm"] = rec.archive_hv_norm;
        j["archive_size"] = rec.archive_size;
        j["front0"] = rec.front0;
        nlohmann::ordered_json pop = nlohmann::ordered_json::array();
        for (std::size_t i = 0; i < rec.population.size(); ++i) {
            nlohmann::ordered_json m = genotype_json(rec.population[i]);
            m["objectives"] = objectives_json(rec.fitness.rows[i]);
            pop.push_back(std::move(m));
        }
        j["population"] = std::move(pop);
        nlohmann::ordered_json ev = nlohmann::ordered_json::array();
        for (std::size_t i = 0; i < rec.evaluated.size(); ++i) {
            nlohmann::ordered_json m = genotype_json(rec.evaluated[i]);
            m["objectives"] = objectives_json(rec.evaluated_fitness.rows[i]);
            ev.push_back(std::move(m));
        }
        j["evaluated"] = std::move(ev);
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::string archive_json(const ParetoArchive& archive, const SearchSpace& space,
                         const SupernetDims& dims) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& entry : archive.entries()) {
        nlohmann::ordered_json e;
        e["genotype"] = genotype_json(entry.genotype);
        e["objectives"] = objectives_json(entry.objectives);
        const ArchConfig cfg = decode(entry.genotype, space);
        nlohmann::ordered_json stages = nlohmann::ordered_json::array();
        for (const StageConfig& st : cfg.stages) {
            stages.push_back({{"d_state", st.d_state},
                              {"ssd_expand", st.ssd_expand},
                              {"mlp_ratio", st.mlp_ratio},
                              {"depth", st.depth}});
        }
        e["config"] = std::move(stages);
        e["params"] = count_params(dims, cfg);
        j.push_back(std::move(e));
    }
    return j.dump(2) + "\n";
}

std::string loss_log_jsonl_line(const LossLogEntry& entry) {
    nlohmann::ordered_json j;
    j["iter"] = entry.iter;
    j["stage"] = entry.stage == StageKind::Pretrain ? "pretrain" : "finetune";
    j["phase"] = entry.phase;
    j["mode"] = to_string(entry.mode);
    j["l_gt"] = entry.step.l_gt;
    j["l_pseudo"] = entry.step.l_pseudo;
    j["l_spat"] = entry.step.l_spat;
    j["l_freq"] = entry.step.l_freq;
    j["total"] = entry.step.loss;
    return j.dump() + "\n";
}

} // namespace evonas
