#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "evonas/config.hpp"
#include "evonas/search_space.hpp"

using namespace evonas;
namespace fs = std::filesystem;

namespace {

// Scaled-down overrides shared by every CLI run in this suite.
const char* kSmall =
    " --set space.d_state='[2,4]'"
    " --set space.ssd_expand='[0.5,1.0]'"
    " --set space.mlp_ratio='[0.5,1.0]'"
    " --set space.max_depth_per_stage='[2,2]'"
    " --set space.num_stages=2"
    " --set supernet.d_model='[8,8]'"
    " --set supernet.patch_size=4"
    " --set task.grid_size=8 --set task.target_size=2"
    " --set task.n_train=12 --set task.n_val=6"
    " --set schedule.t_initial=10 --set schedule.t_adapt=4"
    " --set schedule.t_joint=6 --set schedule.t_final=10"
    " --set train.lr_pretrain=0.002 --set train.lr_finetune=0.002"
    " --set evolution.n_pop=8 --set evolution.generations=3"
    " --set devices.count=2 --set devices.n_p=2 --set devices.b_m=2";

struct Workdir {
    fs::path dir;
    explicit Workdir(const std::string& name) {
        dir = fs::temp_directory_path() / name;
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Workdir() { fs::remove_all(dir); }
    std::string path(const std::string& f) const { return (dir / f).string(); }
};

int run_cli(const std::string& args) {
    const std::string cmd = std::string(EVONAS_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return std::string((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
}

} // namespace

TEST_CASE("init writes a parseable template that round-trips") {
    Workdir wd("evonas_cli_init");
    const std::string cfg = wd.path("cfg.json");
    CHECK(run_cli("init --out " + cfg) == 0);
    CHECK(run_cli("init --out " + cfg) == 1); // refuses to overwrite
    CHECK(run_cli("init --out " + cfg + " --force") == 0);
    const RunConfig run = load_run_config(cfg);
    CHECK(run_config_json(run) == slurp(cfg));
}

TEST_CASE("train smoke: checkpoint exists, loss log non-empty, deterministic") {
    Workdir wd("evonas_cli_train");
    const std::string cfg = wd.path("cfg.json");
    REQUIRE(run_cli("init --out " + cfg) == 0);

    const std::string base = "train --config " + cfg + kSmall;
    REQUIRE(run_cli(base + " --set output_dir=" + wd.path("a")) == 0);
    CHECK(fs::exists(wd.path("a/checkpoint.train.bin")));
    CHECK(fs::file_size(wd.path("a/train_losses.jsonl")) > 0);

    // Identical config and seed: identical checkpoint bytes.
    REQUIRE(run_cli(base + " --set output_dir=" + wd.path("b")) == 0);
    CHECK(slurp(wd.path("a/checkpoint.train.bin")) ==
          slurp(wd.path("b/checkpoint.train.bin")));

    // Different seed: different checkpoint.
    REQUIRE(run_cli(base + " --set output_dir=" + wd.path("c") + " --set seed=8") == 0);
    CHECK(slurp(wd.path("a/checkpoint.train.bin")) !=
          slurp(wd.path("c/checkpoint.train.bin")));
}

TEST_CASE("config errors name the offending field and exit with code 1") {
    Workdir wd("evonas_cli_badcfg");
    const std::string cfg = wd.path("cfg.json");
    REQUIRE(run_cli("init --out " + cfg) == 0);

    const std::string cmd = std::string(EVONAS_CLI_PATH) + " train --config " + cfg +
                            " --set loss_weights.theta=1.3 2> " + wd.path("err.txt") +
                            " > /dev/null";
    const int status = std::system(cmd.c_str());
    CHECK(WEXITSTATUS(status) == 1);
    CHECK(slurp(wd.path("err.txt")).find("loss_weights.theta") != std::string::npos);
}

TEST_CASE("search smoke: trajectory, archive, fitness CSVs; archive decodes") {
    Workdir wd("evonas_cli_search");
    const std::string cfg = wd.path("cfg.json");
    REQUIRE(run_cli("init --out " + cfg) == 0);
    const std::string out = " --set output_dir=" + wd.path("run");
    REQUIRE(run_cli("train --config " + cfg + kSmall + out) == 0);
    REQUIRE(run_cli("search --config " + cfg + kSmall + out) == 0);

    const std::string traj = slurp(wd.path("run/trajectory.jsonl"));
    CHECK(std::count(traj.begin(), traj.end(), '\n') == 4); // G=3 plus gen 0
    CHECK(fs::exists(wd.path("run/fitness_gen_000.csv")));
    CHECK(fs::exists(wd.path("run/fitness_gen_003.csv")));

    // Every archive entry decodes to a valid configuration of the space.
    const RunConfig run = load_run_config(
        cfg, {"space.d_state=[2,4]", "space.ssd_expand=[0.5,1.0]",
              "space.mlp_ratio=[0.5,1.0]", "space.max_depth_per_stage=[2,2]",
              "space.num_stages=2", "supernet.d_model=[8,8]",
              "supernet.patch_size=4", "task.grid_size=8", "task.target_size=2"});
    const auto archive = nlohmann::json::parse(slurp(wd.path("run/archive.json")));
    CHECK(archive.is_array());
    CHECK(!archive.empty());
    for (const auto& entry : archive) {
        const auto g = genotype_from_parts(
            entry.at("genotype").at("integer_segment").get<std::vector<int>>(),
            entry.at("genotype").at("depth_bits").get<std::string>());
        CHECK(validate(g, run.space));
        CHECK(entry.at("objectives").at("err").get<double>() >= 0.0);
    }
}

TEST_CASE("search without a checkpoint fails; resume without state fails") {
    Workdir wd("evonas_cli_missing");
    const std::string cfg = wd.path("cfg.json");
    REQUIRE(run_cli("init --out " + cfg) == 0);
    const std::string out = " --set output_dir=" + wd.path("run");
    CHECK(run_cli("search --config " + cfg + kSmall + out) == 2);
    REQUIRE(run_cli("train --config " + cfg + kSmall + out) == 0);
    CHECK(run_cli("search --config " + cfg + kSmall + out + " --resume") == 2);
}

TEST_CASE("interrupted search resumed from checkpoint equals the straight run") {
    Workdir wd("evonas_cli_resume");
    const std::string cfg = wd.path("cfg.json");
    REQUIRE(run_cli("init --out " + cfg) == 0);

    const std::string out_a = " --set output_dir=" + wd.path("a");
    const std::string out_b = " --set output_dir=" + wd.path("b");
    REQUIRE(run_cli("train --config " + cfg + kSmall + out_a) == 0);
    REQUIRE(run_cli("train --config " + cfg + kSmall + out_b) == 0);

    // Straight run to G=3.
    REQUIRE(run_cli("search --config " + cfg + kSmall + out_a) == 0);
    // Interrupted at generation 1, then resumed.
    REQUIRE(run_cli("search --config " + cfg + kSmall + out_b +
                    " --max-generations 1") == 0);
    REQUIRE(run_cli("search --config " + cfg + kSmall + out_b + " --resume") == 0);

    CHECK(slurp(wd.path("a/trajectory.jsonl")) == slurp(wd.path("b/trajectory.jsonl")));
    CHECK(slurp(wd.path("a/archive.json")) == slurp(wd.path("b/archive.json")));
    CHECK(slurp(wd.path("a/checkpoint.search.bin")) ==
          slurp(wd.path("b/checkpoint.search.bin")));
}

TEST_CASE("bench emits the ablation table with the baseline row") {
    Workdir wd("evonas_cli_bench");
    const std::string cfg = wd.path("cfg.json");
    REQUIRE(run_cli("init --out " + cfg) == 0);
    REQUIRE(run_cli("bench --config " + cfg + " --set output_dir=" + wd.path("run")) == 0);
    const std::string csv = slurp(wd.path("run/ablation.csv"));
    CHECK(csv.rfind("strategy,n_p,b_m,time_per_gen_ms,speedup", 0) == 0);
    CHECK(csv.find("sequential") != std::string::npos);
    CHECK(std::count(csv.begin(), csv.end(), '\n') >= 4); // header + >= 3 rows
}

TEST_CASE("consistency reports per-strategy tau with seed statistics") {
    Workdir wd("evonas_cli_consistency");
    const std::string cfg = wd.path("cfg.json");
    REQUIRE(run_cli("init --out " + cfg) == 0);
    const std::string out = " --set output_dir=" + wd.path("run");
    REQUIRE(run_cli("train --config " + cfg + kSmall + out) == 0);

    const std::string ckpt = wd.path("run/checkpoint.train.bin");
    REQUIRE(run_cli("consistency --config " + cfg + kSmall + out +
                    " --checkpoint first=" + ckpt + " --checkpoint second=" + ckpt +
                    " --n-arch 4 --seeds 2 --standalone-steps 40") == 0);
    const std::string csv = slurp(wd.path("run/consistency.csv"));
    CHECK(csv.rfind("strategy,seeds,mean_tau,stddev_tau,excluded", 0) == 0);

    // The same checkpoint under two labels must produce identical rows.
    std::istringstream lines(csv);
    std::string header, first, second;
    std::getline(lines, header);
    std::getline(lines, first);
    std::getline(lines, second);
    CHECK(first.substr(first.find(',')) == second.substr(second.find(',')));
    CHECK(fs::exists(wd.path("run/consistency_scatter.csv")));

    CHECK(run_cli("consistency --config " + cfg + kSmall + out +
                  " --checkpoint first=" + wd.path("run/nope.bin")) == 2);
}

TEST_CASE("report turns a trajectory into long-format CSV") {
    Workdir wd("evonas_cli_report");
    const std::string cfg = wd.path("cfg.json");
    REQUIRE(run_cli("init --out " + cfg) == 0);
    const std::string out = " --set output_dir=" + wd.path("run");
    REQUIRE(run_cli("train --config " + cfg + kSmall + out) == 0);
    REQUIRE(run_cli("search --config " + cfg + kSmall + out) == 0);
    REQUIRE(run_cli("report --trajectory " + wd.path("run/trajectory.jsonl") +
                    " --out " + wd.path("run/report.csv")) == 0);
    const std::string csv = slurp(wd.path("run/report.csv"));
    CHECK(csv.rfind("generation,metric,value", 0) == 0);
    CHECK(csv.find("archive_hv") != std::string::npos);
    CHECK(csv.find("time_per_gen_ms") != std::string::npos);
    // 4 generations x 7 metrics + header
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 4 * 7);
}
