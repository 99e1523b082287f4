// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <sys/file.h>
#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "cmh/candidate.hpp"
#include "cmh/error.hpp"
#include "cmh/generation.hpp"
#include "cmh/selection.hpp"
#include "cmh/toolbox.hpp"
#include "cmh/types.hpp"

namespace cmh {

// Run directory layout.
namespace run_files {
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kCandidates = "candidates.jsonl";
inline constexpr const char* kOutcomes = "outcomes.jsonl";
inline constexpr const char* kPrompts = "prompts.jsonl";
inline constexpr const char* kLedger = "ledger.json";
inline constexpr const char* kTools = "tools.jsonl";
inline constexpr const char* kToolboxDir = "toolbox";
inline constexpr const char* kLock = ".lock";

inline std::string selections(Mechanism m) {
    return fmt::format("selections-{}.jsonl", to_string(m));
}
} // namespace run_files

struct RunManifest {
    Pipeline pipeline = Pipeline::Primitive;
    std::string dataset_name;
    std::string dataset_hash;
    std::size_t task_count = 0;
    int k = 0;
    std::int64_t seed = 0;
    SamplingConfig sampling;
    std::string backend;
    std::map<std::string, std::string> template_hashes;
    int trim_steps = 500;
    int exec_timeout_s = 30;
    bool complete = false;
};

inline nlohmann::json to_json(const RunManifest& m) {
    return {{"pipeline", std::string(to_string(m.pipeline))},
            {"dataset", {{"name", m.dataset_name}, {"hash", m.dataset_hash}, {"tasks", m.task_count}}},
            {"k", m.k},
            {"seed", m.seed},
            {"sampling", to_json(m.sampling)},
            {"backend", m.backend},
            {"templates", m.template_hashes},
            {"trim_steps", m.trim_steps},
            {"exec_timeout_s", m.exec_timeout_s},
            {"status", m.complete ? "complete" : "incomplete"}};
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
    RunManifest m;
    m.pipeline = pipeline_from_string(j.at("pipeline").get<std::string>());
    m.dataset_name = j.at("dataset").at("name").get<std::string>();
    m.dataset_hash = j.at("dataset").at("hash").get<std::string>();
    m.task_count = j.at("dataset").at("tasks").get<std::size_t>();
    m.k = j.at("k").get<int>();
    m.seed = j.at("seed").get<std::int64_t>();
    const auto& s = j.at("sampling");
    m.sampling = {s.at("temperature").get<double>(), s.at("top_p").get<double>(), s.at("max_new_tokens").get<int>(),
                  s.at("seed").get<std::int64_t>()};
    m.backend = j.value("backend", std::string());
    m.template_hashes = j.value("templates", std::map<std::string, std::string>{});
    m.trim_steps = j.value("trim_steps", 500);
    m.exec_timeout_s = j.value("exec_timeout_s", 30);
    m.complete = j.value("status", std::string()) == "complete";
    return m;
}

struct PromptRecord {
    std::string task_id;
    Mode mode;
    std::string prompt;
};

// Everything one (pipeline, dataset, seed, K) run produced.
struct RunRecord {
    RunManifest manifest;
    std::vector<Candidate> candidates;   // generation order
    std::vector<PromptRecord> prompts;   // one per (task, mode)
    std::vector<Tool> learned_tools;     // every tool at creation time (TroVE)
    std::vector<nlohmann::json> snapshots;  // toolbox after each trim boundary
    std::optional<LedgerReport> ledger;

    // Candidates of one task, in sample_index order.
    std::map<std::string, std::vector<Candidate>> by_task() const {
        std::map<std::string, std::vector<Candidate>> out;
        for (const auto& c : candidates) out[c.task_id].push_back(c);
        for (auto& [id, list] : out) {
            std::stable_sort(list.begin(), list.end(),
                             [](const Candidate& a, const Candidate& b) { return a.sample_index < b.sample_index; });
        }
        return out;
    }
};

inline nlohmann::json candidate_to_json(const Candidate& c) {
    return {{"task_id", c.task_id},
            {"mode", std::string(to_string(c.mode))},
            {"sample_index", c.sample_index},
            {"source", c.source},
            {"raw_completion", c.raw_completion}};
}

inline nlohmann::json outcome_record(const Candidate& c) {
    nlohmann::json j = {{"task_id", c.task_id}, {"mode", std::string(to_string(c.mode))}, {"sample_index", c.sample_index}};
    j.update(outcome_to_json(*c.outcome));
    return j;
}

inline nlohmann::json selection_to_json(const SelectionResult& r) {
    nlohmann::json j = {{"task_id", r.task_id}, {"mechanism", std::string(to_string(r.mechanism))}};
    if (r.chosen) {
        j["chosen"] = {{"mode", std::string(to_string(r.chosen->mode))}, {"sample_index", r.chosen->sample_index}};
    } else {
        j["chosen"] = nullptr;
    }
    j["answer"] = r.answer ? nlohmann::json(r.answer->canonical) : nlohmann::json(nullptr);
    j["votes"] = r.vote_detail;
    return j;
}

// ---------------------------------------------------------------------------
// Reading

namespace detail {

// Reads JSON lines, dropping a torn final line left by an interrupted write.
inline std::vector<nlohmann::json> read_json_lines(const std::filesystem::path& path, bool required) {
    std::vector<nlohmann::json> out;
    std::ifstream in(path);
    if (!in) {
        if (required) throw ValidationError("missing run file '" + path.string() + "'");
        return out;
    }
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty()) lines.push_back(std::move(line));
    }
    for (std::size_t i = 0; i < lines.size(); ++i) {
        try {
            out.push_back(nlohmann::json::parse(lines[i]));
        } catch (const nlohmann::json::parse_error&) {
            if (i + 1 == lines.size()) break;
            throw ParseError("malformed record in '" + path.string() + "'", i + 1);
        }
    }
    return out;
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("missing run file '" + path.string() + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("malformed '" + path.string() + "': " + e.what());
    }
}

} // namespace detail

inline RunRecord load_run(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw ValidationError("'" + dir.string() + "' is not a run directory");
    RunRecord r;
    r.manifest = manifest_from_json(detail::read_json(dir / run_files::kManifest));

    std::map<CandidateKey, std::size_t> index;
    for (const auto& j : detail::read_json_lines(dir / run_files::kCandidates, false)) {
        Candidate c;
        c.task_id = j.at("task_id").get<std::string>();
        c.mode = mode_from_string(j.at("mode").get<std::string>());
        c.sample_index = j.at("sample_index").get<int>();
        c.source = j.at("source").get<std::string>();
        c.raw_completion = j.value("raw_completion", std::string());
        if (!index.emplace(key_of(c), r.candidates.size()).second) {
            throw ValidationError("duplicate candidate (" + c.task_id + ", " + std::string(to_string(c.mode)) + ", " +
                                  std::to_string(c.sample_index) + ") in " + dir.string());
        }
        r.candidates.push_back(std::move(c));
    }
    for (const auto& j : detail::read_json_lines(dir / run_files::kOutcomes, false)) {
        CandidateKey k{j.at("task_id").get<std::string>(), mode_from_string(j.at("mode").get<std::string>()),
                       j.at("sample_index").get<int>()};
        auto it = index.find(k);
        if (it == index.end()) continue;  // outcome for a candidate that was never flushed
        r.candidates[it->second].outcome = outcome_from_json(j);
    }
    for (const auto& j : detail::read_json_lines(dir / run_files::kPrompts, false)) {
        r.prompts.push_back({j.at("task_id").get<std::string>(), mode_from_string(j.at("mode").get<std::string>()),
                             j.at("prompt").get<std::string>()});
    }
    for (const auto& j : detail::read_json_lines(dir / run_files::kTools, false)) r.learned_tools.push_back(tool_from_json(j));

    const fs::path snaps = dir / run_files::kToolboxDir;
    if (fs::is_directory(snaps)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(snaps)) {
            if (e.path().filename().string().starts_with("step_")) files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) r.snapshots.push_back(detail::read_json(f));
    }
    return r;
}

inline std::vector<SelectionResult> load_selections(const std::filesystem::path& dir, Mechanism m, const RunRecord& run) {
    const auto path = dir / run_files::selections(m);
    if (!std::filesystem::exists(path)) {
        throw ValidationError("no " + std::string(to_string(m)) + " selections in '" + dir.string() +
                              "' (run the select command first)");
    }
    std::map<CandidateKey, const Candidate*> index;
    for (const auto& c : run.candidates) index.emplace(key_of(c), &c);
    std::vector<SelectionResult> out;
    for (const auto& j : detail::read_json_lines(path, true)) {
        SelectionResult r;
        r.task_id = j.at("task_id").get<std::string>();
        r.mechanism = mechanism_from_string(j.at("mechanism").get<std::string>());
        if (!j.at("chosen").is_null()) {
            CandidateKey k{r.task_id, mode_from_string(j.at("chosen").at("mode").get<std::string>()),
                           j.at("chosen").at("sample_index").get<int>()};
            auto it = index.find(k);
            if (it == index.end()) throw ValidationError("selection refers to an unknown candidate in " + dir.string());
            r.chosen = *it->second;
        }
        if (!j.at("answer").is_null()) r.answer = normalize_answer(j.at("answer").get<std::string>());
        r.vote_detail = j.value("votes", std::map<std::string, int>{});
        out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Writing

// Exclusive owner of a run directory for the lifetime of the object. The
// advisory lock is released by the kernel if the process dies.
class RunDirLock {
public:
    explicit RunDirLock(const std::filesystem::path& dir) {
        std::filesystem::create_directories(dir);
        const auto path = dir / run_files::kLock;
        fd_ = ::open(path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
        if (fd_ < 0) throw InfrastructureError("cannot open lock file '" + path.string() + "': " + std::strerror(errno));
        if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
            ::close(fd_);
            fd_ = -1;
            throw InfrastructureError("run directory '" + dir.string() + "' is in use by another process");
        }
    }
    RunDirLock(const RunDirLock&) = delete;
    RunDirLock& operator=(const RunDirLock&) = delete;
    ~RunDirLock() {
        if (fd_ >= 0) ::close(fd_);
    }

private:
    int fd_ = -1;
};

// Appends run records as they are produced. Thread-safe.
class RunWriter {
public:
    explicit RunWriter(std::filesystem::path dir) : dir_(std::move(dir)) {
        namespace fs = std::filesystem;
        fs::create_directories(dir_);
        for (const char* f : {run_files::kCandidates, run_files::kOutcomes, run_files::kPrompts, run_files::kTools,
                              run_files::kLedger}) {
            fs::remove(dir_ / f);
        }
        fs::remove_all(dir_ / run_files::kToolboxDir);
        for (auto m : {Mechanism::OneStage, Mechanism::TwoStage, Mechanism::Oracle}) fs::remove(dir_ / run_files::selections(m));
        candidates_.open(dir_ / run_files::kCandidates, std::ios::app);
        outcomes_.open(dir_ / run_files::kOutcomes, std::ios::app);
        prompts_.open(dir_ / run_files::kPrompts, std::ios::app);
        tools_.open(dir_ / run_files::kTools, std::ios::app);
        if (!candidates_ || !outcomes_ || !prompts_ || !tools_) {
            throw InfrastructureError("cannot write into run directory '" + dir_.string() + "'");
        }
    }

    const std::filesystem::path& dir() const noexcept { return dir_; }

    void manifest(const RunManifest& m) {
        std::lock_guard lock(mu_);
        write_file(dir_ / run_files::kManifest, to_json(m).dump(2) + "\n");
    }

    void candidates(const std::vector<Candidate>& cs) {
        std::lock_guard lock(mu_);
        for (const auto& c : cs) candidates_ << candidate_to_json(c).dump() << '\n';
        candidates_.flush();
    }

    void outcomes(const std::vector<Candidate>& cs) {
        std::lock_guard lock(mu_);
        for (const auto& c : cs) {
            if (c.outcome) outcomes_ << outcome_record(c).dump() << '\n';
        }
        outcomes_.flush();
    }

    void prompt(const PromptRecord& p) {
        std::lock_guard lock(mu_);
        prompts_ << nlohmann::json{{"task_id", p.task_id}, {"mode", std::string(to_string(p.mode))}, {"prompt", p.prompt}}.dump()
                 << '\n';
        prompts_.flush();
    }

    void tool(const Tool& t) {
        std::lock_guard lock(mu_);
        tools_ << tool_to_json(t).dump() << '\n';
        tools_.flush();
    }

    void snapshot(const Toolbox& box, bool final) {
        std::lock_guard lock(mu_);
        const auto d = dir_ / run_files::kToolboxDir;
        std::filesystem::create_directories(d);
        const std::string name = final ? "final.json" : fmt::format("step_{:06d}.json", box.step());
        write_file(d / name, snapshot_to_json(box).dump(2) + "\n");
    }

    void ledger(const LedgerReport& r) {
        std::lock_guard lock(mu_);
        write_file(dir_ / run_files::kLedger, to_json(r).dump(2) + "\n");
    }

private:
    static void write_file(const std::filesystem::path& p, const std::string& content) {
        const auto tmp = p.string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::trunc);
            if (!out) throw InfrastructureError("cannot write '" + tmp + "'");
            out << content;
        }
        std::filesystem::rename(tmp, p);
    }

    std::filesystem::path dir_;
    std::mutex mu_;
    std::ofstream candidates_, outcomes_, prompts_, tools_;
};

inline void write_selections(const std::filesystem::path& dir, Mechanism m, const std::vector<SelectionResult>& results) {
    const auto path = dir / run_files::selections(m);
    std::ofstream out(path.string() + ".tmp", std::ios::trunc);
    if (!out) throw InfrastructureError("cannot write selections into '" + dir.string() + "'");
    for (const auto& r : results) out << selection_to_json(r).dump() << '\n';
    out.close();
    std::filesystem::rename(path.string() + ".tmp", path);
}

} // namespace cmh
