#include "madrl/cli.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using namespace madrl;

namespace {

/// Small, fast training setup shared by the end-to-end tests.
const std::string kQuick =
    " --set env.horizon=20 --set train.warmup=20 --set train.batch_size=8"
    " --set train.n_validation=2 --set train.validate_every=2 --set train.buffer_capacity=500";

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("madrl_cli_test_" + name);
    fs::remove_all(p);
    return p;
}

/// Runs the CLI binary, capturing stdout and stderr into `log`.
int run(const std::string& args, std::string* log = nullptr) {
    const fs::path out = fs::temp_directory_path() / "madrl_cli_test_stdout.txt";
    const std::string cmd = std::string(MADRL_CLI_PATH) + " " + args + " > " + out.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    if (log) {
        std::ifstream in(out);
        std::stringstream ss;
        ss << in.rdbuf();
        *log = ss.str();
    }
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(CliTrain, ZeroEpisodesWritesInitialCheckpoint) {
    const fs::path dir = scratch_dir("zero");
    ASSERT_EQ(run("train --episodes 0 --out-dir " + dir.string()), 0);
    for (const char* f : {"config.json", "metrics.csv", "checkpoint_best.json", "checkpoint_last.json"})
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    EXPECT_EQ(count_lines(slurp(dir / "metrics.csv")), 1u);

    const LoadedCheckpoint ck = load_checkpoint((dir / "checkpoint_last.json").string());
    RunConfig cfg;
    const MadPolicy fresh = make_policy(cfg);
    EXPECT_EQ(ck.policy.mode(), PolicyMode::MAD);
    EXPECT_EQ(params_json(ck.policy), params_json(fresh));
}

TEST(CliTrain, ModelFreeConfigRejectsModelBasedModes) {
    for (const char* mode : {"MAD", "MA", "DF"}) {
        const fs::path dir = scratch_dir(std::string("nomodel_") + mode);
        std::string log;
        EXPECT_NE(run(std::string("train --episodes 0 --mode ") + mode + " --set model.kind=none --out-dir " +
                          dir.string(),
                      &log),
                  0);
        EXPECT_NE(log.find("needs a nominal model"), std::string::npos) << log;
        // Validation happens before any output is written.
        EXPECT_FALSE(fs::exists(dir));
    }
    const fs::path ok = scratch_dir("nomodel_AD");
    EXPECT_EQ(run("train --episodes 0 --mode AD --set model.kind=none --out-dir " + ok.string()), 0);
}

TEST(CliTrain, InvalidInputsLeaveNoOutput) {
    for (const std::string bad : {"--mode XYZ", "--set train.alpha=1.5", "--set no.such.key=1",
                                  "--config /nonexistent/config.json"}) {
        const fs::path dir = scratch_dir("invalid");
        EXPECT_NE(run("train --episodes 0 " + bad + " --out-dir " + dir.string()), 0) << bad;
        EXPECT_FALSE(fs::exists(dir)) << bad;
    }
}

TEST(CliTrain, MetricsAreByteIdenticalAcrossRuns) {
    const fs::path a = scratch_dir("repro_a"), b = scratch_dir("repro_b");
    const std::string args = "train --episodes 6 --seed 5" + kQuick + " --out-dir ";
    ASSERT_EQ(run(args + a.string()), 0);
    ASSERT_EQ(run(args + b.string()), 0);
    const std::string ma = slurp(a / "metrics.csv");
    EXPECT_EQ(count_lines(ma), 7u);
    EXPECT_EQ(ma, slurp(b / "metrics.csv"));
    EXPECT_EQ(slurp(a / "checkpoint_best.json"), slurp(b / "checkpoint_best.json"));
}

TEST(CliTrain, FileConfigAndOverrides) {
    const fs::path dir = scratch_dir("file_cfg");
    fs::create_directories(dir);
    std::ofstream(dir / "cfg.json") << R"({"mode": "MLP", "seed": 3, "env": {"horizon": 15}})";
    ASSERT_EQ(run("train --episodes 0 --config " + (dir / "cfg.json").string() + " --set seed=4 --out-dir " +
                  (dir / "out").string()),
              0);
    const json resolved = read_json_file((dir / "out" / "config.json").string());
    EXPECT_EQ(resolved["mode"], "MLP");
    EXPECT_EQ(resolved["seed"], 4);
    EXPECT_EQ(resolved["env"]["horizon"], 15);
}

TEST(CliEval, BaseCheckpointHasZeroImprovement) {
    const fs::path dir = scratch_dir("eval_base");
    ASSERT_EQ(run("train --episodes 0 --mode BASE --out-dir " + dir.string()), 0);
    ASSERT_EQ(run("eval --checkpoint " + (dir / "checkpoint_last.json").string() + " --n 3 --seed 8 --out-dir " +
                  dir.string()),
              0);
    const json s = read_json_file((dir / "eval_validation_seed8.json").string());
    EXPECT_EQ(s["improvement_pct"].get<double>(), 0.0);
    EXPECT_EQ(count_lines(slurp(dir / "eval_validation_seed8.csv")), 4u);
}

TEST(CliEval, SingleRolloutIsReproducible) {
    const fs::path dir = scratch_dir("eval_repro");
    ASSERT_EQ(run("train --episodes 0 --out-dir " + dir.string()), 0);
    const std::string ck = (dir / "checkpoint_last.json").string();
    std::string first, second;
    ASSERT_EQ(run("eval --checkpoint " + ck + " --n 1 --seed 4 --out-dir " + (dir / "e1").string(), &first), 0);
    ASSERT_EQ(run("eval --checkpoint " + ck + " --n 1 --seed 4 --out-dir " + (dir / "e2").string(), &second), 0);
    EXPECT_EQ(first, second);
    EXPECT_NE(first.find("rollout 0 loss"), std::string::npos);
}

TEST(CliEval, BothModesWriteSeparateFiles) {
    const fs::path dir = scratch_dir("eval_modes");
    ASSERT_EQ(run("train --episodes 0 --out-dir " + dir.string()), 0);
    const std::string ck = (dir / "checkpoint_last.json").string();
    ASSERT_EQ(run("eval --checkpoint " + ck + " --mode validation --n 2 --seed 1 --out-dir " + dir.string()), 0);
    ASSERT_EQ(run("eval --checkpoint " + ck + " --mode generalization --n 2 --seed 1 --out-dir " + dir.string()), 0);
    EXPECT_TRUE(fs::exists(dir / "eval_validation_seed1.csv"));
    EXPECT_TRUE(fs::exists(dir / "eval_generalization_seed1.csv"));
    EXPECT_NE(run("eval --checkpoint " + ck + " --mode test --out-dir " + dir.string()), 0);
}

TEST(CliExport, ParameterCounts) {
    struct Case {
        const char* mode;
        std::size_t lo, hi;
    };
    for (const Case& c : {Case{"MAD", 1500, 2300}, Case{"MA", 1500, 2300}, Case{"MLP", 300, 600}}) {
        const fs::path dir = scratch_dir(std::string("params_") + c.mode);
        ASSERT_EQ(run(std::string("export --what params --mode ") + c.mode + " --out-dir " + dir.string()), 0);
        const json j = read_json_file((dir / "params.json").string());
        const auto count = j["parameter_count"].get<std::size_t>();
        EXPECT_GE(count, c.lo) << c.mode;
        EXPECT_LE(count, c.hi) << c.mode;
        std::size_t total = 0;
        for (const auto& [k, v] : j["params"].items()) total += v.size();
        EXPECT_GE(total, count) << c.mode;
    }
}

TEST(CliExport, TrajectoryRowsAreHorizonPlusOne) {
    const fs::path dir = scratch_dir("traj");
    ASSERT_EQ(run("export --what trajectories --n 2 --seed 3 --set env.horizon=37 --out-dir " + dir.string()), 0);
    for (int r = 0; r < 2; ++r) {
        const std::string csv = slurp(dir / ("traj_validation_seed3_r" + std::to_string(r) + ".csv"));
        EXPECT_EQ(count_lines(csv), 38u + 1u);  // header + T + 1 rows
        EXPECT_EQ(csv.rfind("mode,seed,rollout,t,x_0", 0), 0u);
    }
}

TEST(CliExport, GainsReport) {
    const fs::path dir = scratch_dir("gains");
    ASSERT_EQ(run("export --what gains --set verify.gain_probes=3 --set verify.gain_horizon=50 --out-dir " +
                  dir.string()),
              0);
    const json j = read_json_file((dir / "gains.json").string());
    EXPECT_LT(j["magnitude_stability_margin"].get<double>(), 1.0);
    EXPECT_EQ(j["gamma_delta"], 0.0);
    EXPECT_TRUE(j["robustness_condition"].get<bool>());
    EXPECT_NE(run("export --what weights --out-dir " + dir.string()), 0);
}

TEST(CliVerify, EmptyCheckListPasses) {
    const fs::path dir = scratch_dir("verify_empty");
    ASSERT_EQ(run("verify --set verify.checks=[] --out-dir " + dir.string()), 0);
    EXPECT_EQ(read_json_file((dir / "verify_report.json").string()), json::array());
}

TEST(CliVerify, InjectedUnstablePolicyFails) {
    const fs::path dir = scratch_dir("verify_unstable");
    EXPECT_EQ(run("verify --set 'verify.checks=[\"unstable_policy\"]' --out-dir " + dir.string()), 1);
    const json r = read_json_file((dir / "verify_unstable_policy.json").string());
    EXPECT_FALSE(r["pass"].get<bool>());
}

TEST(CliVerify, QuickChecksPass) {
    const fs::path dir = scratch_dir("verify_quick");
    const std::string checks = "'verify.checks=[\"stability_base\",\"robustness_table\",\"inclusion\",\"detects_instability\"]'";
    std::string log;
    EXPECT_EQ(run("verify --set " + checks + " --set verify.inclusion_thetas=2 --set verify.stability.n_probes=4 --out-dir " +
                      dir.string(),
                  &log),
              0)
        << log;
    EXPECT_EQ(read_json_file((dir / "verify_report.json").string()).size(), 4u);
}
