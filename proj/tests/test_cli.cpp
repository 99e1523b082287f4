// SPDX-License-Identifier: Apache-2.0
// Drives the cmh binary end to end on the committed mini fixtures.
#include <gtest/gtest.h>

#include <cstdlib>
#include <sys/wait.h>

#include "test_support.hpp"

namespace fs = std::filesystem;
using cmh::test::TempDir;
using cmh::test::slurp;
using cmh::test::spit;

namespace {

struct Result {
    int code;
    std::string output;
};

Result cli(const TempDir& dir, const std::string& args) {
    const fs::path log = dir / "cli.log";
    const std::string cmd = std::string("'") + CMH_CLI + "' " + args + " > '" + log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

std::string data(const char* name) { return "'" + (cmh::test::data_dir() / name).string() + "'"; }

std::string mini_run(const std::string& pipeline, const std::string& out, const std::string& extra = "") {
    return "run --dataset " + data("mini.jsonl") + " --pipeline " + pipeline + " --fixtures " + data("mini_completions.jsonl") +
           " --exec-fixtures " + data("mini_outcomes.jsonl") + " --out '" + out + "' " + extra;
}

std::map<std::string, std::string> dir_contents(const fs::path& d) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(d)) {
        if (e.is_regular_file()) out[fs::relative(e.path(), d).string()] = slurp(e.path());
    }
    return out;
}

} // namespace

TEST(Cli, TroveKNotMultipleOfThreeIsConfigError) {
    TempDir dir;
    auto r = cli(dir, mini_run("trove", (dir / "runs").string(), "--k 4"));
    EXPECT_EQ(r.code, 1) << r.output;
    EXPECT_NE(r.output.find("multiple of 3"), std::string::npos) << r.output;
}

TEST(Cli, ExistingRunDirNeedsForce) {
    TempDir dir;
    const auto out = (dir / "runs").string();
    ASSERT_EQ(cli(dir, mini_run("primitive", out, "--k 6 --seeds 1")).code, 0);
    const std::string before = slurp(dir / "runs/primitive-k6-seed1/candidates.jsonl");
    auto again = cli(dir, mini_run("primitive", out, "--k 6 --seeds 1"));
    EXPECT_EQ(again.code, 1) << again.output;
    EXPECT_NE(again.output.find("--force"), std::string::npos) << again.output;
    EXPECT_EQ(slurp(dir / "runs/primitive-k6-seed1/candidates.jsonl"), before);
    EXPECT_EQ(cli(dir, mini_run("primitive", out, "--k 6 --seeds 1 --force")).code, 0);
    EXPECT_EQ(slurp(dir / "runs/primitive-k6-seed1/candidates.jsonl"), before);
    EXPECT_EQ(cli(dir, mini_run("primitive", out, "--k 6 --seeds 1 --resume")).code, 0);
}

TEST(Cli, MissingRunnerChoiceIsConfigError) {
    TempDir dir;
    auto r = cli(dir, "run --dataset " + data("mini.jsonl") + " --pipeline primitive --default-completion x --out '" +
                          (dir / "r").string() + "'");
    EXPECT_EQ(r.code, 1) << r.output;
}

TEST(Cli, OracleWithoutGroundTruthIsConfigError) {
    TempDir dir;
    spit(dir / "nt.jsonl", "{\"id\":\"q1\",\"category\":\"c\",\"difficulty\":1,\"query\":\"?\",\"answer\":null}\n"
                           "{\"id\":\"q2\",\"category\":\"c\",\"difficulty\":null,\"query\":\"?\",\"answer\":null}\n");
    const std::string ds = "'" + (dir / "nt.jsonl").string() + "'";
    auto run = cli(dir, "run --dataset " + ds + " --pipeline primitive --k 2 --default-completion 'answer = 5' --runner '" +
                            std::string(CMH_FAKE_RUNNER) + "' --out '" + (dir / "runs").string() + "'");
    ASSERT_EQ(run.code, 0) << run.output;
    const std::string rd = "'" + (dir / "runs/primitive-k2-seed0").string() + "'";
    auto sel = cli(dir, "select " + rd + " --dataset " + ds + " --selection oracle");
    EXPECT_EQ(sel.code, 1) << sel.output;
    EXPECT_EQ(cli(dir, "select " + rd + " --dataset " + ds + " --selection one-stage").code, 0);
    EXPECT_TRUE(fs::exists(dir / "runs/primitive-k2-seed0/selections-one-stage.jsonl"));
}

TEST(Cli, TwoStageOnPrimitiveIsConfigError) {
    TempDir dir;
    ASSERT_EQ(cli(dir, mini_run("primitive", (dir / "runs").string(), "--k 3 --seeds 1")).code, 0);
    auto r = cli(dir, "select '" + (dir / "runs/primitive-k3-seed1").string() + "' --dataset " + data("mini.jsonl") +
                          " --selection two-stage");
    EXPECT_EQ(r.code, 1) << r.output;
    auto missing = cli(dir, "select '" + (dir / "nope").string() + "' --dataset " + data("mini.jsonl"));
    EXPECT_EQ(missing.code, 2) << missing.output;
    EXPECT_FALSE(fs::exists(dir / "nope"));
}

TEST(Cli, MixedKAcrossSeedsIsValidationError) {
    TempDir dir;
    const auto out = (dir / "runs").string();
    ASSERT_EQ(cli(dir, mini_run("primitive", out, "--k 3 --seeds 1")).code, 0);
    ASSERT_EQ(cli(dir, mini_run("primitive", out, "--k 6 --seeds 2")).code, 0);
    auto r = cli(dir, "analyze '" + out + "/primitive-k3-seed1' '" + out + "/primitive-k6-seed2' --dataset " + data("mini.jsonl") +
                          " --out '" + (dir / "rep").string() + "'");
    EXPECT_EQ(r.code, 2) << r.output;
    EXPECT_NE(r.output.find("K"), std::string::npos) << r.output;
}

TEST(Cli, CrossPipelineMetricNeedsBothSides) {
    TempDir dir;
    const auto out = (dir / "runs").string();
    ASSERT_EQ(cli(dir, mini_run("trove", out, "--k 6 --seeds 1")).code, 0);
    auto r = cli(dir, "analyze '" + out + "/trove-k6-seed1' --dataset " + data("mini.jsonl") + " --metric jaccard --out '" +
                          (dir / "rep").string() + "'");
    EXPECT_EQ(r.code, 2) << r.output;
    EXPECT_NE(r.output.find("primitive"), std::string::npos) << r.output;
    // With the default metric set the missing side just leaves tables empty.
    EXPECT_EQ(cli(dir, "analyze '" + out + "/trove-k6-seed1' --dataset " + data("mini.jsonl") + " --out '" +
                           (dir / "rep").string() + "'")
                  .code,
              0);
}

TEST(Cli, SingleSeedHasZeroStd) {
    TempDir dir;
    const auto out = (dir / "runs").string();
    ASSERT_EQ(cli(dir, mini_run("primitive", out, "--k 6 --seeds 2")).code, 0);
    ASSERT_EQ(cli(dir, "analyze '" + out + "/primitive-k6-seed2' --dataset " + data("mini.jsonl") +
                           " --metric accuracy --out '" + (dir / "rep").string() + "'")
                  .code,
              0);
    const std::string csv = slurp(dir / "rep/table1_accuracy.csv");
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    int rows = 0;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
        ASSERT_GE(cells.size(), 4u) << line;
        EXPECT_EQ(cells[3], "0.0000") << line;
        ++rows;
    }
    EXPECT_EQ(rows, 4);  // three categories and the aggregate
}

TEST(Cli, RepeatedRunsAndReportsAreByteIdentical) {
    TempDir dir;
    for (const char* tag : {"a", "b"}) {
        const auto out = (dir / tag).string();
        ASSERT_EQ(cli(dir, mini_run("trove", out, "--k 6 --seeds 1,2 --trim-steps 4")).code, 0);
        ASSERT_EQ(cli(dir, mini_run("primitive", out, "--k 6 --seeds 1,2 --workers 3")).code, 0);
        ASSERT_EQ(cli(dir, "analyze '" + out + "/trove-k6-seed1' '" + out + "/trove-k6-seed2' '" + out + "/primitive-k6-seed1' '" +
                               out + "/primitive-k6-seed2' --dataset " + data("mini.jsonl") + " --out '" + out + "/report'")
                      .code,
                  0);
    }
    auto strip = [](std::map<std::string, std::string> m) {
        std::erase_if(m, [](const auto& kv) { return kv.first.ends_with(".lock"); });
        return m;
    };
    const auto a = strip(dir_contents(dir / "a"));
    const auto b = strip(dir_contents(dir / "b"));
    EXPECT_EQ(a.size(), b.size());
    for (const auto& [name, content] : a) {
        ASSERT_TRUE(b.count(name)) << name;
        EXPECT_EQ(content, b.at(name)) << name;
    }
}
