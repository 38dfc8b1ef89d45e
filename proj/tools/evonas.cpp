// evonas: architecture-search engine CLI.
//
// Subcommands: init, train, search, bench, consistency, report.
// Exit codes: 0 success, 1 configuration error, 2 runtime error,
// 3 incomplete evaluation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "evonas/analysis.hpp"
#include "evonas/checkpoint.hpp"
#include "evonas/config.hpp"
#include "evonas/pipeline.hpp"
#include "evonas/simqueue.hpp"

namespace fs = std::filesystem;
using namespace evonas;

namespace {

constexpr const char* kVersion = "0.1.0";

void write_file(const std::string& path, const std::string& content) {
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(path, std::ios::trunc | std::ios::binary);
    if (!f) throw EvonasError("cannot write " + path);
    f << content;
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw EvonasError("cannot read " + path);
    return std::string((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
}

std::string out_path(const RunConfig& run, const std::string& name) {
    return (fs::path(run.out_dir) / name).string();
}

std::string manifest_json(const RunConfig& run,
                          const std::map<std::string, std::string>& extra) {
    nlohmann::ordered_json j;
    j["engine_version"] = kVersion;
    j["config_hash"] = run_config_hash(run);
    j["seed"] = run.seed;
    for (const auto& [k, v] : extra) j[k] = v;
    return j.dump(2) + "\n";
}

int cmd_init(const std::string& out, bool force) {
    if (!force && fs::exists(out)) {
        std::cerr << "evonas init: " << out
                  << " already exists (use --force to overwrite)\n";
        return 1;
    }
    write_file(out, config_template_json());
    std::cout << "wrote " << out << "\n";
    return 0;
}

int cmd_train(const std::string& config_path,
              const std::vector<std::string>& overrides,
              std::string checkpoint_path) {
    const RunConfig run = load_run_config(config_path, overrides);
    if (checkpoint_path.empty()) checkpoint_path = out_path(run, "checkpoint.train.bin");

    const MicroTask task = make_micro_task(run.task_spec());
    const TeacherModel teacher(run.teacher_spec());
    Rng init_rng(run.seed_for(RunConfig::kSeedInit));
    SupernetParams params = init_from_dims(run.supernet_dims(), init_rng);

    std::string losses;
    const std::string stage_ckpt = out_path(run, "checkpoint.pretrain.bin");
    Rng finetune_rng;
    try {
        // Stage-boundary checkpoint gives divergence reports a recovery point.
        Rng pre_rng(run.seed_for(RunConfig::kSeedPretrain));
        StageOptions pre;
        pre.kind = StageKind::Pretrain;
        pre.strategy = run.train.strategy;
        pre.lr = run.train.lr_pretrain;
        pre.batch_size = run.train.batch_size;
        pre.weights = run.loss_weights;
        pre.arch_pool_size = run.train.arch_pool_size;
        pre.log = [&](const LossLogEntry& e) { losses += loss_log_jsonl_line(e); };
        run_stage(params, run.space, run.schedule, task, pre, pre_rng);

        TrainCheckpoint stage;
        stage.space = run.space;
        stage.params = params;
        stage.schedule_cursor = run.schedule.total_iters();
        stage.rng_state = pre_rng.serialize();
        stage.config_hash = train_config_hash(run);
        save_train_checkpoint(stage_ckpt, stage);

        finetune_rng = Rng(run.seed_for(RunConfig::kSeedFinetune));
        StageOptions fin = pre;
        fin.kind = StageKind::Finetune;
        fin.lr = run.train.lr_finetune;
        fin.teacher = &teacher;
        run_stage(params, run.space, run.schedule, task, fin, finetune_rng);
    } catch (const DivergenceError& e) {
        write_file(out_path(run, "train_losses.jsonl"), losses);
        std::cerr << "evonas train: " << e.what() << "\n"
                  << "last good checkpoint: " << stage_ckpt << "\n";
        return 2;
    }

    TrainCheckpoint ckpt;
    ckpt.space = run.space;
    ckpt.params = params;
    ckpt.schedule_cursor = 2 * run.schedule.total_iters();
    ckpt.rng_state = finetune_rng.serialize();
    ckpt.config_hash = train_config_hash(run);
    save_train_checkpoint(checkpoint_path, ckpt);

    write_file(out_path(run, "train_losses.jsonl"), losses);
    write_file(out_path(run, "manifest.train.json"),
               manifest_json(run, {{"checkpoint", checkpoint_path}}));
    std::cout << "wrote " << checkpoint_path << "\n";
    return 0;
}

int cmd_search(const std::string& config_path,
               const std::vector<std::string>& overrides,
               std::string checkpoint_path, bool resume, int max_generations) {
    const RunConfig run = load_run_config(config_path, overrides);
    if (checkpoint_path.empty()) checkpoint_path = out_path(run, "checkpoint.train.bin");
    const std::string search_ckpt = out_path(run, "checkpoint.search.bin");

    const TrainCheckpoint trained = load_train_checkpoint(checkpoint_path);
    if (trained.config_hash != train_config_hash(run))
        throw InvalidConfig("search: checkpoint was produced by a different training config");

    const MicroTask task = make_micro_task(run.task_spec());

    SearchState state;
    if (resume) {
        if (!fs::exists(search_ckpt))
            throw EvonasError("search --resume: no checkpoint at " + search_ckpt);
        SearchCheckpoint ckpt = load_search_checkpoint(search_ckpt);
        if (ckpt.config_hash != run_config_hash(run))
            throw InvalidConfig("search --resume: config changed since checkpoint");
        state = std::move(ckpt.state);
    }

    auto saver = [&](const SearchState& st) {
        SearchCheckpoint ckpt;
        ckpt.space = run.space;
        ckpt.params = trained.params;
        ckpt.state = st;
        ckpt.config_hash = run_config_hash(run);
        save_search_checkpoint(search_ckpt, ckpt);
    };

    const SearchResult result =
        run_search(trained.params, task, run, state, saver, max_generations);

    write_file(out_path(run, "trajectory.jsonl"), trajectory_jsonl(result.trajectory));
    write_file(out_path(run, "archive.json"),
               archive_json(result.archive, run.space, trained.params.dims));
    for (const GenerationRecord& rec : result.trajectory.records) {
        char name[64];
        std::snprintf(name, sizeof(name), "fitness_gen_%03d.csv", rec.generation);
        write_file(out_path(run, name), fitness_csv(rec.fitness));
    }
    nlohmann::ordered_json hv;
    hv["ref"] = {result.hv_ref.err, result.hv_ref.latency_ms, result.hv_ref.macs};
    hv["ideal"] = {result.hv_ideal.err, result.hv_ideal.latency_ms,
                   result.hv_ideal.macs};
    write_file(out_path(run, "manifest.search.json"),
               manifest_json(run, {{"hypervolume", hv.dump()},
                                   {"checkpoint", checkpoint_path}}));
    std::cout << "archive entries: " << result.archive.size() << "\n"
              << "wrote " << out_path(run, "archive.json") << "\n";
    return 0;
}

int cmd_bench(const std::string& config_path,
              const std::vector<std::string>& overrides) {
    const RunConfig run = load_run_config(config_path, overrides);
    AblationOptions opts;
    opts.n_tasks = run.evolution.n_pop;
    opts.devices = run.devices.devices;
    opts.cost = run.devices.cost;
    const auto rows = throughput_ablation(opts);
    const std::string csv = ablation_csv(rows);
    write_file(out_path(run, "ablation.csv"), csv);
    std::cout << csv;
    return 0;
}

int cmd_consistency(const std::string& config_path,
                    const std::vector<std::string>& overrides,
                    const std::vector<std::string>& checkpoints, int n_arch,
                    int n_seeds, int standalone_steps) {
    const RunConfig run = load_run_config(config_path, overrides);
    if (checkpoints.empty())
        throw InvalidConfig("consistency: need at least one strategy=checkpoint");

    const MicroTask task = make_micro_task(run.task_spec());
    ConsistencyOptions opts;
    opts.n_arch = n_arch;
    opts.n_seeds = n_seeds;
    opts.standalone_steps = standalone_steps;
    opts.standalone_batch = run.train.batch_size;
    opts.standalone_lr = run.train.lr_finetune;
    opts.seed = run.seed_for(RunConfig::kSeedConsistency);

    std::vector<StrategyConsistency> results;
    for (const std::string& spec : checkpoints) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos)
            throw InvalidConfig("consistency: expected strategy=checkpoint, got " +
                                spec);
        const std::string label = spec.substr(0, eq);
        const std::string path = spec.substr(eq + 1);
        const TrainCheckpoint ckpt = load_train_checkpoint(path);
        results.push_back(
            consistency_experiment(ckpt.params, label, run.space, task, opts));
    }

    const std::string csv = consistency_csv(results);
    write_file(out_path(run, "consistency.csv"), csv);
    write_file(out_path(run, "consistency_scatter.csv"),
               consistency_scatter_csv(results));
    std::cout << csv;
    return 0;
}

int cmd_report(const std::string& trajectory_path, const std::string& out) {
    const std::string text = read_file(trajectory_path);
    std::string csv = "generation,metric,value\n";
    std::istringstream lines(text);
    std::string line;
    char buf[160];
    while (std::getline(lines, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        const int gen = j.at("generation").get<int>();
        const std::map<std::string, double> metrics = {
            {"archive_hv", j.at("archive_hv").get<double>()},
            {"archive_hv_norm", j.at("archive_hv_norm").get<double>()},
            {"archive_size", double(j.at("archive_size").get<int>())},
            {"time_per_gen_ms", j.at("time_per_gen_ms").get<double>()},
            {"evaluations", double(j.at("evaluations").get<int>())},
            {"cache_hits", double(j.at("cache_hits").get<int>())},
            {"front0_size", double(j.at("front0").size())},
        };
        for (const auto& [name, value] : metrics) {
            std::snprintf(buf, sizeof(buf), "%d,%s,%.17g\n", gen, name.c_str(),
                          value);
            csv += buf;
        }
    }
    if (out.empty())
        std::cout << csv;
    else
        write_file(out, csv);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"evonas: multi-objective architecture search engine"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    std::string config_path, checkpoint_path, out_file;
    std::vector<std::string> overrides, strategy_checkpoints;
    bool force = false, resume = false;
    int n_arch = 16, n_seeds = 5, standalone_steps = 2000;
    std::string init_out = "evonas.json";
    std::string trajectory_path;
    int max_generations = -1;

    CLI::App* init = app.add_subcommand("init", "write a template config file");
    init->add_option("--out", init_out, "destination path")->capture_default_str();
    init->add_flag("--force", force, "overwrite an existing file");

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "engine config file")->required();
        cmd->add_option("--set", overrides,
                        "override config fields, dotted paths (a.b.c=value)");
    };

    CLI::App* train =
        app.add_subcommand("train", "run the two-stage supernet optimization");
    add_common(train);
    train->add_option("--checkpoint", checkpoint_path, "checkpoint output path");

    CLI::App* search = app.add_subcommand("search", "run the evolutionary search");
    add_common(search);
    search->add_option("--checkpoint", checkpoint_path, "trained supernet checkpoint");
    search->add_flag("--resume", resume, "continue from the search checkpoint");
    search->add_option("--max-generations", max_generations,
                       "stop after this generation (resumable)");

    CLI::App* bench = app.add_subcommand("bench", "throughput ablation table");
    add_common(bench);

    CLI::App* consistency =
        app.add_subcommand("consistency", "ranking-consistency experiment");
    add_common(consistency);
    consistency
        ->add_option("--checkpoint", strategy_checkpoints,
                     "strategy=checkpoint pairs, repeatable")
        ->required();
    consistency->add_option("--n-arch", n_arch, "architectures per seed")
        ->capture_default_str();
    consistency->add_option("--seeds", n_seeds, "number of seeds")
        ->capture_default_str();
    consistency
        ->add_option("--standalone-steps", standalone_steps,
                     "fixed training budget per architecture")
        ->capture_default_str();

    CLI::App* report = app.add_subcommand("report", "plot-ready long-format CSV");
    report->add_option("--trajectory", trajectory_path, "trajectory.jsonl path")
        ->required();
    report->add_option("--out", out_file, "output CSV (stdout when omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (init->parsed()) return cmd_init(init_out, force);
        if (train->parsed()) return cmd_train(config_path, overrides, checkpoint_path);
        if (search->parsed())
            return cmd_search(config_path, overrides, checkpoint_path, resume,
                              max_generations);
        if (bench->parsed()) return cmd_bench(config_path, overrides);
        if (consistency->parsed())
            return cmd_consistency(config_path, overrides, strategy_checkpoints,
                                   n_arch, n_seeds, standalone_steps);
        if (report->parsed()) return cmd_report(trajectory_path, out_file);
    } catch (const InvalidConfig& e) {
        std::cerr << "evonas: " << e.what() << "\n";
        return 1;
    } catch (const InvalidWeights& e) {
        std::cerr << "evonas: " << e.what() << "\n";
        return 1;
    } catch (const IncompleteEvaluation& e) {
        std::cerr << "evonas: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "evonas: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
