#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "evonas/checkpoint.hpp"
#include "evonas/pipeline.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace evonas;
using evonas::testing::ToyWorld;
using evonas::testing::small_world;

namespace {

bool params_equal(const SupernetParams& a, const SupernetParams& b) {
    bool equal = true;
    std::vector<const MatrixXd*> ta, tb;
    for_each_tensor(const_cast<SupernetParams&>(a),
                    [&](const std::string&, MatrixXd& m) { ta.push_back(&m); });
    for_each_tensor(const_cast<SupernetParams&>(b),
                    [&](const std::string&, MatrixXd& m) { tb.push_back(&m); });
    for (std::size_t i = 0; i < ta.size(); ++i)
        if (*ta[i] != *tb[i]) equal = false;
    return equal;
}

RunConfig toy_run(const ToyWorld& w, std::uint64_t seed = 7) {
    RunConfig run;
    run.space = w.space;
    run.d_model = w.dims.d_model;
    run.schedule = ProgressiveSchedule::paper_layout(w.space, 20, 5, 10, 20);
    run.loss_weights = {0.5, 1.0, 1.0};
    run.evolution.n_pop = 8;
    run.evolution.generations = 3;
    run.evolution.p_c = 0.9;
    run.evolution.p_m = 0.3;
    run.devices.devices = 2;
    run.devices.procs_per_device = 2;
    run.devices.models_per_proc = 2;
    run.devices.cost.alpha_ms_per_mmac = 1.0;
    run.devices.cost.base_ms = 0.01;
    run.protocol.warmup_runs = 2;
    run.protocol.timed_runs = 5;
    run.task.grid_size = 8;
    run.task.target_size = 2;
    run.task.n_train = 12;
    run.task.n_val = 6;
    run.task.generator_hidden = 16;
    run.train.batch_size = 3;
    run.train.lr_pretrain = 0.002;
    run.train.lr_finetune = 0.002;
    run.seed = seed;
    run.check();
    return run;
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("run_stage with an all-zero schedule leaves parameters unchanged") {
    ToyWorld w = small_world(11);
    const SupernetParams before = w.params;
    const ProgressiveSchedule empty =
        ProgressiveSchedule::paper_layout(w.space, 0, 0, 0, 0);
    StageOptions opts;
    opts.kind = StageKind::Finetune;
    opts.teacher = &w.teacher;
    Rng rng(1);
    run_stage(w.params, w.space, empty, w.task, opts, rng);
    CHECK(params_equal(w.params, before));
}

TEST_CASE("finetune stage drives the training loss down") {
    ToyWorld w = small_world(13);
    const ProgressiveSchedule sched =
        ProgressiveSchedule::paper_layout(w.space, 100, 20, 40, 100);
    StageOptions opts;
    opts.kind = StageKind::Finetune;
    opts.teacher = &w.teacher;
    opts.lr = 0.002;
    opts.batch_size = 4;
    std::vector<double> losses;
    opts.log = [&](const LossLogEntry& e) { losses.push_back(e.step.loss); };
    Rng rng(2);
    run_stage(w.params, w.space, sched, w.task, opts, rng);
    REQUIRE(static_cast<int>(losses.size()) == sched.total_iters());
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 100; ++i) head += losses[i] / 100.0;
    for (int i = 0; i < 100; ++i) tail += losses[losses.size() - 1 - i] / 100.0;
    CHECK(tail < head);
}

TEST_CASE("two identical stage runs give bitwise-identical parameters") {
    ToyWorld w1 = small_world(17);
    ToyWorld w2 = small_world(17);
    const ProgressiveSchedule sched =
        ProgressiveSchedule::paper_layout(w1.space, 10, 4, 6, 10);
    for (ToyWorld* w : {&w1, &w2}) {
        StageOptions opts;
        opts.kind = StageKind::Finetune;
        opts.teacher = &w->teacher;
        Rng rng(3);
        run_stage(w->params, w->space, sched, w->task, opts, rng);
    }
    CHECK(params_equal(w1.params, w2.params));
}

TEST_CASE("offspring generation: no operators means parent copies") {
    ToyWorld w = small_world(19);
    const RunConfig run = toy_run(w);
    Rng rng(4);
    Population parents;
    for (int i = 0; i < 8; ++i)
        parents.members.push_back(random_genotype(w.space, rng));
    for (int i = 0; i < 8; ++i)
        parents.fitness.rows.push_back({double(i), double(i), double(i)});

    EvolutionParams evo = run.evolution;
    evo.p_c = 0.0;
    evo.p_m = 0.0;
    const Population q = offspring_generation(parents, evo, w.space, rng);
    REQUIRE(q.members.size() == 8);
    for (const Genotype& child : q.members) {
        const bool is_copy =
            std::find(parents.members.begin(), parents.members.end(), child) !=
            parents.members.end();
        CHECK(is_copy);
    }
}

TEST_CASE("offspring generation keeps genotypes valid at paper probabilities") {
    ToyWorld w = small_world(23);
    Rng rng(5);
    Population parents;
    for (int i = 0; i < 16; ++i)
        parents.members.push_back(random_genotype(w.space, rng));
    for (int i = 0; i < 16; ++i)
        parents.fitness.rows.push_back(
            {rng.uniform(), rng.uniform(), rng.uniform()});

    EvolutionParams evo;
    evo.n_pop = 16;
    evo.p_c = 0.95;
    evo.p_m = 0.1;
    for (int round = 0; round < 50; ++round) {
        const Population q = offspring_generation(parents, evo, w.space, rng);
        CHECK(q.members.size() == parents.members.size());
        for (const Genotype& g : q.members) CHECK(validate(g, w.space));
    }
}

TEST_CASE("tournament always prefers a dominating parent") {
    ToyWorld w = small_world(29);
    Rng rng(6);
    Population parents;
    parents.members.push_back(random_genotype(w.space, rng)); // dominator
    parents.members.push_back(random_genotype(w.space, rng)); // dominated
    parents.fitness.rows = {{1, 1, 1}, {2, 2, 2}};

    EvolutionParams evo;
    evo.n_pop = 2;
    evo.p_c = 0.0;
    evo.p_m = 0.0;
    // With two parents, any tournament draw containing both must pick the
    // dominator; over many rounds the dominated one can appear only through
    // (b, b) draws, never through mixed draws. Verify via stronger check:
    // selection frequency of the dominator strictly exceeds 1/2.
    int dominator_children = 0, total = 0;
    for (int round = 0; round < 200; ++round) {
        const Population q = offspring_generation(parents, evo, w.space, rng);
        for (const Genotype& g : q.members) {
            ++total;
            if (g == parents.members[0]) ++dominator_children;
        }
    }
    CHECK(dominator_children > total * 0.6);
}

TEST_CASE("evaluate_population shares fitness across duplicate genotypes") {
    ToyWorld w = small_world(31);
    const RunConfig run = toy_run(w);
    DevicePool devices(run.devices);
    Rng rng(7);
    const Genotype a = random_genotype(w.space, rng);
    const Genotype b = random_genotype(w.space, rng);
    const std::vector<Genotype> members = {a, b, a, a};

    const EvalOutcome out =
        evaluate_population(members, w.params, w.task, run, devices, 123);
    CHECK(out.cache_hits == 2);
    CHECK(out.evaluations == 4);
    REQUIRE(out.fitness.size() == 4);
    CHECK(out.fitness.rows[0] == out.fitness.rows[2]);
    CHECK(out.fitness.rows[0] == out.fitness.rows[3]);
    CHECK(out.time_per_gen_ms > 0.0);
}

TEST_CASE("search: archive equals the brute-force filter of all evaluated points") {
    ToyWorld w = small_world(37);
    RunConfig run = toy_run(w, 11);
    run.evolution.generations = 1;

    SearchState state;
    const SearchResult res = run_search(w.params, w.task, run, state);

    FitnessMatrix all;
    std::vector<Genotype> genos;
    for (const GenerationRecord& rec : res.trajectory.records) {
        for (std::size_t i = 0; i < rec.evaluated.size(); ++i) {
            genos.push_back(rec.evaluated[i]);
            all.rows.push_back(rec.evaluated_fitness.rows[i]);
        }
    }
    CHECK(all.rows.size() == 16); // N_pop * (G + 1)

    const auto expected = oracle::brute_force_pareto(all);
    // Compare as objective multisets (duplicate genotypes share rows).
    std::vector<ObjectiveVector> want;
    for (int i : expected) want.push_back(all.rows[i]);
    std::vector<ObjectiveVector> got;
    for (const auto& e : res.archive.entries()) got.push_back(e.objectives);
    auto key = [](const ObjectiveVector& v) {
        return std::make_tuple(v.err, v.latency_ms, v.macs);
    };
    std::sort(want.begin(), want.end(),
              [&](auto& x, auto& y) { return key(x) < key(y); });
    want.erase(std::unique(want.begin(), want.end()), want.end());
    std::sort(got.begin(), got.end(),
              [&](auto& x, auto& y) { return key(x) < key(y); });
    got.erase(std::unique(got.begin(), got.end()), got.end());
    CHECK(got == want);
}

TEST_CASE("search bookkeeping: population size, eval counts, monotone archive hv") {
    ToyWorld w = small_world(41);
    const RunConfig run = toy_run(w, 13);

    SearchState state;
    const SearchResult res = run_search(w.params, w.task, run, state);
    REQUIRE(static_cast<int>(res.trajectory.records.size()) ==
            run.evolution.generations + 1);

    int total_evals = 0;
    double last_hv = -1.0;
    for (const GenerationRecord& rec : res.trajectory.records) {
        CHECK(static_cast<int>(rec.population.size()) == run.evolution.n_pop);
        total_evals += rec.evaluations;
        CHECK(rec.archive_hv >= last_hv - 1e-15);
        last_hv = rec.archive_hv;
        CHECK(rec.time_per_gen_ms > 0.0);
    }
    CHECK(total_evals == run.evolution.n_pop * (run.evolution.generations + 1));

    // Reproducibility: same config and seed, same trajectory.
    SearchState state2;
    const SearchResult res2 = run_search(w.params, w.task, run, state2);
    REQUIRE(res2.trajectory.records.size() == res.trajectory.records.size());
    for (std::size_t i = 0; i < res.trajectory.records.size(); ++i) {
        CHECK(res2.trajectory.records[i].population ==
              res.trajectory.records[i].population);
        CHECK(res2.trajectory.records[i].fitness.rows ==
              res.trajectory.records[i].fitness.rows);
        CHECK(res2.trajectory.records[i].archive_hv ==
              res.trajectory.records[i].archive_hv);
    }
}

TEST_CASE("train checkpoint round trips bit-exactly") {
    ToyWorld w = small_world(43);
    TrainCheckpoint ckpt;
    ckpt.space = w.space;
    ckpt.params = w.params;
    ckpt.schedule_cursor = 123;
    Rng rng(9);
    rng.next_u64();
    ckpt.rng_state = rng.serialize();
    ckpt.config_hash = 0xDEADBEEF;

    const std::string path = temp_path("evonas_train_ckpt.bin");
    save_train_checkpoint(path, ckpt);
    const TrainCheckpoint loaded = load_train_checkpoint(path);
    CHECK(loaded.space == ckpt.space);
    CHECK(params_equal(loaded.params, ckpt.params));
    CHECK(loaded.schedule_cursor == 123);
    CHECK(loaded.rng_state == ckpt.rng_state);
    CHECK(loaded.config_hash == 0xDEADBEEF);
    std::filesystem::remove(path);
}

TEST_CASE("corrupted or truncated checkpoints are rejected") {
    ToyWorld w = small_world(47);
    TrainCheckpoint ckpt;
    ckpt.space = w.space;
    ckpt.params = w.params;
    const std::string path = temp_path("evonas_corrupt_ckpt.bin");
    save_train_checkpoint(path, ckpt);

    std::string data;
    {
        std::ifstream f(path, std::ios::binary);
        data.assign((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
    }
    // Truncation: checksum/length fails, no partial state.
    {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        f.write(data.data(), static_cast<std::streamsize>(data.size() / 2));
    }
    CHECK_THROWS_AS(load_train_checkpoint(path), ChecksumError);

    // Flip one payload byte: checksum failure.
    std::string flipped = data;
    flipped[flipped.size() / 2] ^= 0x5A;
    {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        f.write(flipped.data(), static_cast<std::streamsize>(flipped.size()));
    }
    CHECK_THROWS_AS(load_train_checkpoint(path), ChecksumError);

    // Wrong magic: unsupported.
    std::string bad_magic = data;
    bad_magic[0] = 'X';
    {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        f.write(bad_magic.data(), static_cast<std::streamsize>(bad_magic.size()));
    }
    CHECK_THROWS_AS(load_train_checkpoint(path), UnsupportedCheckpoint);
    std::filesystem::remove(path);
}

TEST_CASE("interrupted search resumes to the identical trajectory") {
    ToyWorld w = small_world(53);
    const RunConfig run = toy_run(w, 17);
    const std::string path = temp_path("evonas_search_ckpt.bin");

    // Uninterrupted reference.
    SearchState full_state;
    const SearchResult full = run_search(w.params, w.task, run, full_state);

    // Interrupt after generation 1 by checkpointing and rebuilding state.
    SearchState partial;
    int seen = 0;
    struct Interrupt {};
    try {
        run_search(w.params, w.task, run, partial,
                   [&](const SearchState& st) {
                       if (++seen == 2) { // records for generation 0 and 1
                           SearchCheckpoint ckpt;
                           ckpt.space = run.space;
                           ckpt.params = w.params;
                           ckpt.state = st;
                           ckpt.config_hash = 1;
                           save_search_checkpoint(path, ckpt);
                           throw Interrupt{};
                       }
                   });
        FAIL("search was expected to be interrupted");
    } catch (const Interrupt&) {
    }
    CHECK(seen == 2);

    SearchCheckpoint loaded = load_search_checkpoint(path);
    SearchResult resumed = run_search(loaded.params, w.task, run, loaded.state);

    REQUIRE(resumed.trajectory.records.size() == full.trajectory.records.size());
    for (std::size_t i = 0; i < full.trajectory.records.size(); ++i) {
        CHECK(resumed.trajectory.records[i].population ==
              full.trajectory.records[i].population);
        CHECK(resumed.trajectory.records[i].fitness.rows ==
              full.trajectory.records[i].fitness.rows);
        CHECK(resumed.trajectory.records[i].archive_hv ==
              full.trajectory.records[i].archive_hv);
        CHECK(resumed.trajectory.records[i].evaluated ==
              full.trajectory.records[i].evaluated);
    }
    REQUIRE(resumed.archive.size() == full.archive.size());
    for (std::size_t i = 0; i < full.archive.size(); ++i) {
        CHECK(resumed.archive.entries()[i].genotype ==
              full.archive.entries()[i].genotype);
        CHECK(resumed.archive.entries()[i].objectives ==
              full.archive.entries()[i].objectives);
    }
    std::filesystem::remove(path);
}

TEST_CASE("exports are non-empty and well formed") {
    ToyWorld w = small_world(59);
    RunConfig run = toy_run(w, 19);
    run.evolution.generations = 1;
    SearchState state;
    const SearchResult res = run_search(w.params, w.task, run, state);

    const std::string jsonl = trajectory_jsonl(res.trajectory);
    CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 2);
    CHECK(jsonl.find("\"archive_hv\"") != std::string::npos);
    CHECK(jsonl.find("\"evaluated\"") != std::string::npos);

    const std::string arch = archive_json(res.archive, run.space, w.dims);
    CHECK(arch.find("\"objectives\"") != std::string::npos);
    CHECK(arch.find("\"d_state\"") != std::string::npos);
    CHECK(arch.find("\"params\"") != std::string::npos);
}
