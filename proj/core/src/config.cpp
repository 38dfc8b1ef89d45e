#include "evonas/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "evonas/checkpoint.hpp"

namespace evonas {

namespace {

using json = nlohmann::ordered_json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw InvalidConfig("config: " + path + ": " + what);
}

const json& member(const json& obj, const std::string& path, const char* key) {
    if (!obj.is_object()) fail(path, "expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) fail(path + "." + key, "missing required field");
    return *it;
}

void reject_unknown(const json& obj, const std::string& path,
                    const std::set<std::string>& allowed) {
    if (!obj.is_object()) fail(path, "expected an object");
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key())) fail(path + "." + it.key(), "unknown key");
}

double num(const json& obj, const std::string& path, const char* key) {
    const json& v = member(obj, path, key);
    if (!v.is_number()) fail(path + "." + key, "expected a number");
    return v.get<double>();
}

int integer(const json& obj, const std::string& path, const char* key) {
    const json& v = member(obj, path, key);
    if (!v.is_number_integer()) fail(path + "." + key, "expected an integer");
    return v.get<int>();
}

std::uint64_t u64_field(const json& obj, const std::string& path, const char* key) {
    const json& v = member(obj, path, key);
    if (!v.is_number_unsigned() && !v.is_number_integer())
        fail(path + "." + key, "expected a nonnegative integer");
    const auto val = v.get<std::int64_t>();
    if (val < 0) fail(path + "." + key, "expected a nonnegative integer");
    return static_cast<std::uint64_t>(val);
}

std::string text(const json& obj, const std::string& path, const char* key) {
    const json& v = member(obj, path, key);
    if (!v.is_string()) fail(path + "." + key, "expected a string");
    return v.get<std::string>();
}

std::vector<int> int_list(const json& obj, const std::string& path, const char* key) {
    const json& v = member(obj, path, key);
    if (!v.is_array()) fail(path + "." + key, "expected an array");
    std::vector<int> out;
    for (const auto& e : v) {
        if (!e.is_number_integer()) fail(path + "." + key, "expected integers");
        out.push_back(e.get<int>());
    }
    return out;
}

std::vector<double> num_list(const json& obj, const std::string& path,
                             const char* key) {
    const json& v = member(obj, path, key);
    if (!v.is_array()) fail(path + "." + key, "expected an array");
    std::vector<double> out;
    for (const auto& e : v) {
        if (!e.is_number()) fail(path + "." + key, "expected numbers");
        out.push_back(e.get<double>());
    }
    return out;
}

json to_document(const RunConfig& run) {
    json j;
    j["space"] = {{"d_state", run.space.d_state_candidates},
                  {"ssd_expand", run.space.ssd_expand_candidates},
                  {"mlp_ratio", run.space.mlp_ratio_candidates},
                  {"max_depth_per_stage", run.space.max_depth_per_stage},
                  {"num_stages", run.space.num_stages}};
    // token side equals target_size, so patch = grid / target.
    j["supernet"] = {{"d_model", run.d_model},
                     {"patch_size", run.task.grid_size / run.task.target_size}};
    j["schedule"] = json::object();
    j["loss_weights"] = {{"theta", run.loss_weights.theta},
                         {"alpha1", run.loss_weights.alpha1},
                         {"alpha2", run.loss_weights.alpha2}};
    j["evolution"] = {{"n_pop", run.evolution.n_pop},
                      {"generations", run.evolution.generations},
                      {"p_c", run.evolution.p_c},
                      {"p_m", run.evolution.p_m},
                      {"eta_m", run.evolution.eta_m},
                      {"p_gene", run.evolution.p_gene},
                      {"p_stage", run.evolution.p_stage}};
    j["devices"] = {{"count", run.devices.devices},
                    {"n_p", run.devices.procs_per_device},
                    {"b_m", run.devices.models_per_proc},
                    {"cost",
                     {{"alpha_ms_per_mmac", run.devices.cost.alpha_ms_per_mmac},
                      {"base_ms", run.devices.cost.base_ms},
                      {"jitter", run.devices.cost.jitter},
                      {"interference", run.devices.cost.interference},
                      {"pool_overhead_ms", run.devices.cost.pool_overhead_ms},
                      {"proc_overhead_ms", run.devices.cost.proc_overhead_ms}}}};
    j["protocol"] = {{"warmup_runs", run.protocol.warmup_runs},
                     {"timed_runs", run.protocol.timed_runs}};
    j["task"] = {{"grid_size", run.task.grid_size},
                 {"target_size", run.task.target_size},
                 {"n_train", run.task.n_train},
                 {"n_val", run.task.n_val},
                 {"generator_hidden", run.task.generator_hidden},
                 {"seed", run.task.seed}};
    j["teacher"] = {{"hidden", run.teacher.hidden}};
    j["train"] = {{"lr_pretrain", run.train.lr_pretrain},
                  {"lr_finetune", run.train.lr_finetune},
                  {"batch_size", run.train.batch_size},
                  {"strategy", to_string(run.train.strategy)},
                  {"arch_pool_size", run.train.arch_pool_size}};
    j["seed"] = run.seed;
    j["output_dir"] = run.out_dir;
    return j;
}

} // namespace

RunConfig default_run_config() {
    RunConfig run;
    run.space = SearchSpace::paper_default();
    run.d_model = std::vector<int>(run.space.num_stages, 16);
    run.schedule = ProgressiveSchedule::paper_layout(run.space, 200, 50, 200, 400);
    run.loss_weights = {0.5, 1.0, 1.0};
    run.evolution = {};         // N_pop 96, G 30, p_c 0.95, p_m 0.1
    run.devices.devices = 8;    // eight-device pool, four procs, three models
    run.devices.procs_per_device = 4;
    run.devices.models_per_proc = 3;
    run.devices.cost.alpha_ms_per_mmac = 0.5;
    run.devices.cost.base_ms = 0.05;
    run.devices.cost.pool_overhead_ms = 2.0;
    run.devices.cost.proc_overhead_ms = 5.0;
    run.protocol = {};
    run.task = {};
    run.teacher = {};
    run.train = {};
    run.seed = 7;
    run.out_dir = "out";
    return run;
}

namespace {

struct ScheduleBudgets {
    int t_initial = 200, t_adapt = 50, t_joint = 200, t_final = 400;
};

json schedule_json(const ScheduleBudgets& b) {
    return {{"t_initial", b.t_initial},
            {"t_adapt", b.t_adapt},
            {"t_joint", b.t_joint},
            {"t_final", b.t_final}};
}

// The schedule section holds the four phase budgets; the phase layout
// itself follows the canonical unlock order derived from the space.
ScheduleBudgets schedule_budgets_from(const ProgressiveSchedule& sched) {
    ScheduleBudgets b;
    b.t_initial = sched.phases.front().t_joint;
    if (sched.phases.size() > 1) {
        b.t_adapt = sched.phases[1].t_adapt;
        b.t_joint = sched.phases[1].t_joint;
    }
    b.t_final = sched.t_final;
    return b;
}

json normalized_document(const RunConfig& run) {
    json j = to_document(run);
    j["schedule"] = schedule_json(schedule_budgets_from(run.schedule));
    return j;
}

RunConfig parse_document(const json& j) {
    reject_unknown(j, "config",
                   {"space", "supernet", "schedule", "loss_weights", "evolution",
                    "devices", "protocol", "task", "teacher", "train", "seed",
                    "output_dir"});
    RunConfig run;

    const json& space = member(j, "config", "space");
    reject_unknown(space, "space",
                   {"d_state", "ssd_expand", "mlp_ratio", "max_depth_per_stage",
                    "num_stages"});
    run.space.d_state_candidates = int_list(space, "space", "d_state");
    run.space.ssd_expand_candidates = num_list(space, "space", "ssd_expand");
    run.space.mlp_ratio_candidates = num_list(space, "space", "mlp_ratio");
    run.space.max_depth_per_stage = int_list(space, "space", "max_depth_per_stage");
    run.space.num_stages = integer(space, "space", "num_stages");
    try {
        run.space.check();
    } catch (const InvalidConfig& e) {
        fail("space", e.what());
    }

    const json& supernet = member(j, "config", "supernet");
    reject_unknown(supernet, "supernet", {"d_model", "patch_size"});
    run.d_model = int_list(supernet, "supernet", "d_model");
    const int patch_size = integer(supernet, "supernet", "patch_size");
    if (patch_size < 1) fail("supernet.patch_size", "must be >= 1");

    const json& sched = member(j, "config", "schedule");
    reject_unknown(sched, "schedule", {"t_initial", "t_adapt", "t_joint", "t_final"});
    ScheduleBudgets budgets;
    budgets.t_initial = integer(sched, "schedule", "t_initial");
    budgets.t_adapt = integer(sched, "schedule", "t_adapt");
    budgets.t_joint = integer(sched, "schedule", "t_joint");
    budgets.t_final = integer(sched, "schedule", "t_final");
    if (budgets.t_initial < 0 || budgets.t_adapt < 0 || budgets.t_joint < 0 ||
        budgets.t_final < 0)
        fail("schedule", "budgets must be nonnegative");
    run.schedule = ProgressiveSchedule::paper_layout(
        run.space, budgets.t_initial, budgets.t_adapt, budgets.t_joint,
        budgets.t_final);

    const json& lw = member(j, "config", "loss_weights");
    reject_unknown(lw, "loss_weights", {"theta", "alpha1", "alpha2"});
    run.loss_weights.theta = num(lw, "loss_weights", "theta");
    run.loss_weights.alpha1 = num(lw, "loss_weights", "alpha1");
    run.loss_weights.alpha2 = num(lw, "loss_weights", "alpha2");
    try {
        run.loss_weights.check();
    } catch (const InvalidWeights& e) {
        fail("loss_weights.theta", e.what());
    }

    const json& evo = member(j, "config", "evolution");
    reject_unknown(evo, "evolution",
                   {"n_pop", "generations", "p_c", "p_m", "eta_m", "p_gene",
                    "p_stage"});
    run.evolution.n_pop = integer(evo, "evolution", "n_pop");
    run.evolution.generations = integer(evo, "evolution", "generations");
    run.evolution.p_c = num(evo, "evolution", "p_c");
    run.evolution.p_m = num(evo, "evolution", "p_m");
    run.evolution.eta_m = num(evo, "evolution", "eta_m");
    run.evolution.p_gene = num(evo, "evolution", "p_gene");
    run.evolution.p_stage = num(evo, "evolution", "p_stage");
    try {
        run.evolution.check();
    } catch (const InvalidConfig& e) {
        fail("evolution", e.what());
    }

    const json& dev = member(j, "config", "devices");
    reject_unknown(dev, "devices", {"count", "n_p", "b_m", "cost"});
    run.devices.devices = integer(dev, "devices", "count");
    run.devices.procs_per_device = integer(dev, "devices", "n_p");
    run.devices.models_per_proc = integer(dev, "devices", "b_m");
    const json& cost = member(dev, "devices", "cost");
    reject_unknown(cost, "devices.cost",
                   {"alpha_ms_per_mmac", "base_ms", "jitter", "interference",
                    "pool_overhead_ms", "proc_overhead_ms"});
    run.devices.cost.alpha_ms_per_mmac = num(cost, "devices.cost", "alpha_ms_per_mmac");
    run.devices.cost.base_ms = num(cost, "devices.cost", "base_ms");
    run.devices.cost.jitter = num(cost, "devices.cost", "jitter");
    run.devices.cost.interference = num(cost, "devices.cost", "interference");
    run.devices.cost.pool_overhead_ms = num(cost, "devices.cost", "pool_overhead_ms");
    run.devices.cost.proc_overhead_ms = num(cost, "devices.cost", "proc_overhead_ms");
    try {
        run.devices.check();
    } catch (const InvalidConfig& e) {
        fail("devices", e.what());
    }
    if (run.devices.cost.jitter < 0.0 || run.devices.cost.jitter >= 1.0)
        fail("devices.cost.jitter", "must lie in [0, 1)");

    const json& proto = member(j, "config", "protocol");
    reject_unknown(proto, "protocol", {"warmup_runs", "timed_runs"});
    run.protocol.warmup_runs = integer(proto, "protocol", "warmup_runs");
    run.protocol.timed_runs = integer(proto, "protocol", "timed_runs");
    try {
        run.protocol.check();
    } catch (const InvalidConfig& e) {
        fail("protocol", e.what());
    }

    const json& task = member(j, "config", "task");
    reject_unknown(task, "task",
                   {"grid_size", "target_size", "n_train", "n_val",
                    "generator_hidden", "seed"});
    run.task.grid_size = integer(task, "task", "grid_size");
    run.task.target_size = integer(task, "task", "target_size");
    run.task.n_train = integer(task, "task", "n_train");
    run.task.n_val = integer(task, "task", "n_val");
    run.task.generator_hidden = integer(task, "task", "generator_hidden");
    run.task.seed = u64_field(task, "task", "seed");

    const json& teacher = member(j, "config", "teacher");
    reject_unknown(teacher, "teacher", {"hidden"});
    run.teacher.hidden = integer(teacher, "teacher", "hidden");
    if (run.teacher.hidden < 1) fail("teacher.hidden", "must be >= 1");

    const json& train = member(j, "config", "train");
    reject_unknown(train, "train",
                   {"lr_pretrain", "lr_finetune", "batch_size", "strategy",
                    "arch_pool_size"});
    run.train.lr_pretrain = num(train, "train", "lr_pretrain");
    run.train.lr_finetune = num(train, "train", "lr_finetune");
    run.train.batch_size = integer(train, "train", "batch_size");
    try {
        run.train.strategy = strategy_from_string(text(train, "train", "strategy"));
    } catch (const InvalidConfig& e) {
        fail("train.strategy", e.what());
    }
    run.train.arch_pool_size = integer(train, "train", "arch_pool_size");
    try {
        run.train.check();
    } catch (const InvalidConfig& e) {
        fail("train", e.what());
    }

    run.seed = u64_field(j, "config", "seed");
    run.out_dir = text(j, "config", "output_dir");

    // Cross-field consistency, with dotted diagnostics.
    if (static_cast<int>(run.d_model.size()) != run.space.num_stages)
        fail("supernet.d_model", "must list one width per stage");
    if (run.task.grid_size % patch_size != 0)
        fail("supernet.patch_size", "must divide task.grid_size");
    const int side = run.task.grid_size / patch_size;
    if (run.task.target_size != side)
        fail("task.target_size", "must equal grid_size / patch_size");
    try {
        run.check();
    } catch (const EvonasError& e) {
        fail("config", e.what());
    }
    return run;
}

} // namespace

std::string config_template_json() {
    return normalized_document(default_run_config()).dump(2) + "\n";
}

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw InvalidConfig(std::string("config: JSON parse error: ") + e.what());
    }
    return parse_document(j);
}

RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides) {
    std::ifstream f(path);
    if (!f) throw InvalidConfig("config: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    json j;
    try {
        j = json::parse(ss.str());
    } catch (const nlohmann::json::parse_error& e) {
        throw InvalidConfig(std::string("config: JSON parse error: ") + e.what());
    }
    for (const std::string& ov : overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos)
            throw InvalidConfig("override must look like a.b.c=value: " + ov);
        const std::string dotted = ov.substr(0, eq);
        const std::string value = ov.substr(eq + 1);
        json parsed;
        try {
            parsed = json::parse(value);
        } catch (const nlohmann::json::parse_error&) {
            parsed = value; // bare word: treat as string
        }
        json* node = &j;
        std::size_t start = 0;
        while (true) {
            const auto dot = dotted.find('.', start);
            const std::string key = dotted.substr(
                start, dot == std::string::npos ? std::string::npos : dot - start);
            if (key.empty()) throw InvalidConfig("override has an empty path segment");
            if (dot == std::string::npos) {
                (*node)[key] = parsed;
                break;
            }
            node = &(*node)[key];
            start = dot + 1;
        }
    }
    return parse_document(j);
}

std::string run_config_json(const RunConfig& run) {
    return normalized_document(run).dump(2) + "\n";
}

std::uint64_t run_config_hash(const RunConfig& run) {
    // Where results land does not identify the experiment.
    json j = normalized_document(run);
    j.erase("output_dir");
    return fnv1a64(j.dump(2));
}

std::uint64_t train_config_hash(const RunConfig& run) {
    json j = normalized_document(run);
    j.erase("evolution");
    j.erase("devices");
    j.erase("protocol");
    j.erase("output_dir");
    return fnv1a64(j.dump(2));
}

} // namespace evonas
