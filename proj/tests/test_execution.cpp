// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <chrono>

#include "cmh/execution.hpp"
#include "test_support.hpp"

using namespace cmh;

namespace {

Candidate with_source(std::string src) { return Candidate{"t", Mode::Skip, 0, std::move(src), {}, std::nullopt}; }

SubprocessExecutor runner(int grace_s = 1) { return SubprocessExecutor({CMH_FAKE_RUNNER}, grace_s); }

} // namespace

TEST(RunnerProtocol, RequestShape) {
    auto j = nlohmann::json::parse(runner_request("answer = 2+3", 5));
    EXPECT_EQ(j.at("source"), "answer = 2+3");
    EXPECT_EQ(j.at("timeout_s"), 5);
    EXPECT_EQ(j.size(), 2u);
}

TEST(RunnerProtocol, ClassifyReply) {
    auto ok = classify_reply(R"({"status":"success","answer":"5","stderr":"","duration_ms":4})");
    EXPECT_EQ(ok.status, ExecStatus::Success);
    EXPECT_EQ(ok.answer->canonical, "5");
    EXPECT_EQ(ok.duration_ms, 4);
    auto num = classify_reply(R"({"status":"success","answer":2.5})");
    EXPECT_EQ(num.answer->canonical, "2.5");
    auto err = classify_reply("noise\n" R"({"status":"error","answer":null,"stderr":"Traceback"})" "\n\n");
    EXPECT_EQ(err.status, ExecStatus::Error);
    EXPECT_EQ(err.stderr_excerpt, "Traceback");
    EXPECT_EQ(classify_reply(R"({"status":"timeout"})").status, ExecStatus::Timeout);
    auto missing = classify_reply(R"({"status":"success","answer":null})");
    EXPECT_EQ(missing.status, ExecStatus::Error);
    EXPECT_FALSE(missing.answer);
    EXPECT_THROW(classify_reply("not json"), InfrastructureError);
    EXPECT_THROW(classify_reply(""), InfrastructureError);
    EXPECT_THROW(classify_reply(R"({"answer":"5"})"), InfrastructureError);
    EXPECT_THROW(classify_reply(R"({"status":"weird"})"), InfrastructureError);
}

TEST(SubprocessExecutor, Success) {
    auto exec = runner();
    auto o = exec.execute(with_source("answer = 42"), 5);
    EXPECT_EQ(o.status, ExecStatus::Success);
    EXPECT_EQ(o.answer->canonical, "42");
    EXPECT_GE(o.duration_ms, 0);
}

TEST(SubprocessExecutor, ErrorAndMissingAnswer) {
    auto exec = runner();
    auto e = exec.execute(with_source("RAISE"), 5);
    EXPECT_EQ(e.status, ExecStatus::Error);
    EXPECT_NE(e.stderr_excerpt.find("ZeroDivisionError"), std::string::npos);
    auto n = exec.execute(with_source("NOANSWER"), 5);
    EXPECT_EQ(n.status, ExecStatus::Error);
    EXPECT_EQ(exec.execute(with_source("SELFTIMEOUT"), 1).status, ExecStatus::Timeout);
}

TEST(SubprocessExecutor, StderrExcerptKeepsTail) {
    auto exec = runner();
    auto e = exec.execute(with_source("BIGERR"), 5);
    EXPECT_EQ(e.stderr_excerpt.size(), kStderrExcerptBytes);
    EXPECT_EQ(e.stderr_excerpt.substr(e.stderr_excerpt.size() - 4), "TAIL");
}

TEST(SubprocessExecutor, LeakedOutputBeforeReplyIgnored) {
    auto exec = runner();
    auto o = exec.execute(with_source("NOISE answer = 7"), 5);
    EXPECT_EQ(o.status, ExecStatus::Success);
    EXPECT_EQ(o.answer->canonical, "7");
}

TEST(SubprocessExecutor, HangPastTimeoutPlusGraceIsKilled) {
    auto exec = runner(1);
    const auto start = std::chrono::steady_clock::now();
    auto o = exec.execute(with_source("HANG"), 1);
    const auto elapsed = std::chrono::steady_clock::now() - start;
    EXPECT_EQ(o.status, ExecStatus::Timeout);
    EXPECT_GE(elapsed, std::chrono::milliseconds(1900));
    EXPECT_LT(elapsed, std::chrono::milliseconds(4000));
    // The executor stays usable afterwards.
    EXPECT_EQ(exec.execute(with_source("answer = 1"), 5).status, ExecStatus::Success);
}

TEST(SubprocessExecutor, GarbageReplyIsInfrastructureError) {
    auto exec = runner();
    EXPECT_THROW(exec.execute(with_source("GARBAGE"), 5), InfrastructureError);
}

TEST(SubprocessExecutor, CrashIsInfrastructureError) {
    auto exec = runner();
    EXPECT_THROW(exec.execute(with_source("CRASH"), 5), InfrastructureError);
}

TEST(SubprocessExecutor, MissingBinaryIsInfrastructureError) {
    SubprocessExecutor exec({"/nonexistent/cmh-runner"});
    EXPECT_THROW(exec.execute(with_source("answer = 1"), 5), InfrastructureError);
    EXPECT_THROW(SubprocessExecutor({}), ConfigError);
}

TEST(SubprocessExecutor, BadTimeoutIsContractError) {
    auto exec = runner();
    EXPECT_THROW(exec.execute(with_source("answer = 1"), 0), ContractError);
}

TEST(SubprocessExecutor, SplitCommand) {
    EXPECT_EQ(SubprocessExecutor::split_command("python3  -m runner "),
              (std::vector<std::string>{"python3", "-m", "runner"}));
}

TEST(FixtureExecutor, LookupAndMissing) {
    test::TempDir dir;
    test::spit(dir / "f.jsonl",
               R"({"task_id":"t","mode":"SKIP","sample_index":0,"status":"success","answer":"3","stderr":"","duration_ms":1})"
               "\n"
               R"({"task_id":"t","mode":"SKIP","sample_index":0,"seed":9,"status":"timeout","answer":null,"stderr":"","duration_ms":30000})"
               "\n");
    auto plain = FixtureExecutor::from_file(dir / "f.jsonl", 1);
    EXPECT_EQ(execute_from_fixture(with_source("x"), plain).answer->canonical, "3");
    auto seeded = FixtureExecutor::from_file(dir / "f.jsonl", 9);
    EXPECT_EQ(seeded.execute(with_source("x"), 30).status, ExecStatus::Timeout);
    Candidate other = with_source("x");
    other.sample_index = 1;
    EXPECT_THROW(plain.execute(other, 30), FixtureError);
}
