#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "evonas/distill.hpp"
#include "evonas/evalengine.hpp"
#include "evonas/microtask.hpp"
#include "evonas/moea.hpp"
#include "evonas/search_space.hpp"
#include "evonas/supernet.hpp"

namespace evonas {

// Supernet training strategies compared by the consistency experiment.
// PstCaDdkd is the full method: progressive unlocking plus dual-domain
// distillation. The baselines sample uniformly (or from a frozen pool) with
// task supervision only.
enum class Strategy { PstCaDdkd, RandomSampling, ArchPool };

const char* to_string(Strategy s);
Strategy strategy_from_string(const std::string& name);

struct EvolutionParams {
    int n_pop = 96;
    int generations = 30;
    double p_c = 0.95;
    double p_m = 0.1;
    double eta_m = 20.0;
    double p_gene = 0.0;  // 0 selects 1 / (number of integer genes)
    double p_stage = 0.0; // 0 selects 1 / num_stages

    void check() const;
    bool operator==(const EvolutionParams&) const = default;
};

struct TrainParams {
    double lr_pretrain = 0.0005;
    double lr_finetune = 0.0005;
    int batch_size = 4;
    Strategy strategy = Strategy::PstCaDdkd;
    int arch_pool_size = 32;

    void check() const;
    bool operator==(const TrainParams&) const = default;
};

struct RunConfig {
    SearchSpace space;
    std::vector<int> d_model;
    ProgressiveSchedule schedule;
    LossWeights loss_weights;
    EvolutionParams evolution;
    DevicePoolSpec devices;
    LatencyProtocol protocol;
    MicroTaskSpec task;
    TeacherSpec teacher;
    TrainParams train;
    std::uint64_t seed = 7;
    std::string out_dir = "out";

    void check() const;

    // Independent derived streams per purpose.
    enum SeedTag : std::uint64_t {
        kSeedInit = 1,
        kSeedTask = 2,
        kSeedTeacher = 3,
        kSeedPretrain = 4,
        kSeedFinetune = 5,
        kSeedEvolution = 6,
        kSeedJitter = 7,
        kSeedConsistency = 8,
    };
    std::uint64_t seed_for(SeedTag tag) const { return Rng::derive(seed, tag); }

    MicroTaskSpec task_spec() const;       // task with derived seed
    TeacherSpec teacher_spec() const;      // teacher with derived seed + dims
    SupernetDims supernet_dims() const;
};

// --- stage training (Algorithm-style two-stage optimization) ---

struct LossLogEntry {
    int iter = 0;
    StageKind stage = StageKind::Pretrain;
    int phase = 0;
    TrainMode mode = TrainMode::Joint;
    StepResult step;
};

using LossLogSink = std::function<void(const LossLogEntry&)>;

struct StageOptions {
    StageKind kind = StageKind::Pretrain;
    Strategy strategy = Strategy::PstCaDdkd;
    double lr = 0.002;
    int batch_size = 4;
    LossWeights weights;
    const TeacherModel* teacher = nullptr; // required for PstCaDdkd finetune
    int arch_pool_size = 32;
    LossLogSink log;
};

// Runs one optimization stage over the progressive schedule's full budget.
// Baseline strategies reuse the budget but sample without the curriculum.
void run_stage(SupernetParams& params, const SearchSpace& space,
               const ProgressiveSchedule& schedule, const MicroTask& task,
               const StageOptions& opts, Rng& rng);

// Convenience driver: Pretrain then Finetune per the run config. The
// finetune stream's final state lands in `finetune_rng_out` when given.
void train_supernet(SupernetParams& params, const MicroTask& task,
                    const TeacherModel& teacher, const RunConfig& run,
                    const LossLogSink& log = {}, Rng* finetune_rng_out = nullptr);

// --- population evaluation (decode -> pools -> engine -> fitness) ---

struct EvalOutcome {
    FitnessMatrix fitness;
    std::vector<int> penalized;
    double time_per_gen_ms = 0.0; // simulated dispatch makespan
    int cache_hits = 0;           // duplicate genotypes served from cache
    int evaluations = 0;          // fitness rows assembled
    std::vector<TelemetryRecord> telemetry;
};

EvalOutcome evaluate_population(const std::vector<Genotype>& members,
                                const SupernetParams& snapshot,
                                const MicroTask& task, const RunConfig& run,
                                DevicePool& devices, std::uint64_t eval_seed);

// --- search loop ---

struct GenerationRecord {
    int generation = 0;
    std::vector<Genotype> population; // survivors P_t
    FitnessMatrix fitness;
    std::vector<Genotype> evaluated; // batch evaluated this generation
    FitnessMatrix evaluated_fitness;
    std::vector<int> front0;
    double archive_hv = 0.0;      // raw hypervolume at the fixed reference
    double archive_hv_norm = 0.0; // divided by the gen-0 ref-to-ideal box
    int archive_size = 0;
    double time_per_gen_ms = 0.0;
    int evaluations = 0;
    int cache_hits = 0;
};

struct Trajectory {
    std::vector<GenerationRecord> records;
};

struct SearchState {
    bool initialized = false; // generation 0 evaluated
    int next_generation = 1;
    Population population; // current parents, with fitness
    ParetoArchive archive;
    Trajectory trajectory;
    ObjectiveVector hv_ref;   // fixed per run at generation 0
    ObjectiveVector hv_ideal; // gen-0 ideal point (normalization record)
    Rng evo_rng;
};

struct SearchResult {
    ParetoArchive archive;
    Trajectory trajectory;
    ObjectiveVector hv_ref;
    ObjectiveVector hv_ideal;
};

// Binary-tournament selection on (rank, crowding), then the segment-paired
// crossover/mutation operators; |offspring| == |parents|.
Population offspring_generation(const Population& parents,
                                const EvolutionParams& evo,
                                const SearchSpace& space, Rng& rng);

// NSGA-II loop with DMMPE evaluation. `state` carries resume information;
// `after_generation` fires after every completed generation record.
// `stop_after_generation` >= 0 halts early with a resumable state.
SearchResult run_search(
    const SupernetParams& snapshot, const MicroTask& task, const RunConfig& run,
    SearchState& state,
    const std::function<void(const SearchState&)>& after_generation = {},
    int stop_after_generation = -1);

// --- exports ---

std::string trajectory_jsonl(const Trajectory& trajectory);
std::string archive_json(const ParetoArchive& archive, const SearchSpace& space,
                         const SupernetDims& dims);
std::string loss_log_jsonl_line(const LossLogEntry& entry);

} // namespace evonas
