// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdlib>
#include <filesystem>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "cmh/analysis.hpp"
#include "cmh/dataset.hpp"
#include "cmh/error.hpp"
#include "cmh/execution.hpp"
#include "cmh/generation.hpp"
#include "cmh/http_backend.hpp"
#include "cmh/parallel.hpp"
#include "cmh/pipelines.hpp"
#include "cmh/report.hpp"
#include "cmh/run_record.hpp"
#include "cmh/selection.hpp"

namespace cmh {

struct RunConfig {
    std::filesystem::path dataset;
    Pipeline pipeline = Pipeline::Trove;
    int k = 15;
    std::vector<std::int64_t> seeds{0};
    std::string backend = "mock";  // mock | http
    std::string endpoint;
    std::string model;
    std::filesystem::path fixtures;  // mock completions
    std::string default_completion;
    SamplingConfig sampling;
    std::filesystem::path templates;
    int trim_steps = 500;
    int exec_timeout_s = kDefaultExecTimeoutS;
    std::filesystem::path out = "runs";
    unsigned workers = 1;
    bool force = false;
    bool resume = false;
    std::string runner;                   // subprocess runner command line
    std::filesystem::path exec_fixtures;  // or canned outcomes
    std::size_t toolbox_limit = std::numeric_limits<std::size_t>::max();
};

inline void validate(const RunConfig& c) {
    if (c.dataset.empty()) throw ConfigError("--dataset is required");
    if (c.k < 1) throw ConfigError("--k must be >= 1");
    if (c.pipeline == Pipeline::Trove && c.k % 3 != 0) {
        throw ConfigError("--k must be a multiple of 3 for the trove pipeline (got " + std::to_string(c.k) + ")");
    }
    if (c.seeds.empty()) throw ConfigError("--seeds needs at least one seed");
    if (std::set<std::int64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size()) {
        throw ConfigError("--seeds lists a seed twice");
    }
    if (c.backend != "mock" && c.backend != "http") throw ConfigError("--backend must be mock or http");
    if (c.backend == "mock" && c.fixtures.empty() && c.default_completion.empty()) {
        throw ConfigError("--fixtures (or --default-completion) is required for the mock backend");
    }
    if (c.backend == "http" && c.endpoint.empty()) throw ConfigError("--endpoint is required for the http backend");
    if (c.backend == "http" && c.model.empty()) throw ConfigError("--model is required for the http backend");
    if (c.templates.empty()) throw ConfigError("--templates is required");
    if (c.trim_steps < 1) throw ConfigError("--trim-steps must be >= 1");
    if (c.exec_timeout_s < 1) throw ConfigError("--exec-timeout must be >= 1");
    if (c.workers < 1) throw ConfigError("--workers must be >= 1");
    if (c.force && c.resume) throw ConfigError("--force and --resume are mutually exclusive");
    if (c.runner.empty() == c.exec_fixtures.empty()) {
        throw ConfigError("exactly one of --runner or --exec-fixtures is required");
    }
    c.sampling.validate();
}

inline std::filesystem::path run_dir_for(const std::filesystem::path& out, Pipeline p, int k, std::int64_t seed) {
    return out / fmt::format("{}-k{}-seed{}", to_string(p), k, seed);
}

namespace detail {

inline void check_dataset_matches(const Dataset& ds, const RunRecord& run, const std::filesystem::path& dir) {
    if (run.manifest.dataset_hash != dataset_hash(ds)) {
        throw ValidationError("run '" + dir.string() + "' was produced on a different dataset than '" + ds.name() + "'");
    }
}

inline void require_complete(const RunRecord& run, const Dataset& ds, const std::filesystem::path& dir) {
    auto missing = missing_tasks(run, ds);
    if (missing.empty() && run.manifest.complete) return;
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) list += (i ? ", " : "") + missing[i];
    if (missing.size() > 20) list += fmt::format(", ... ({} total)", missing.size());
    throw ValidationError("run '" + dir.string() + "' is incomplete" +
                          (missing.empty() ? std::string(" (not marked complete)") : "; missing tasks: " + list));
}

} // namespace detail

// One run directory per seed, in seed order. Returns the directories.
inline std::vector<std::filesystem::path> cmd_run(const RunConfig& cfg, std::ostream& log) {
    namespace fs = std::filesystem;
    validate(cfg);
    const Dataset ds = load_dataset(cfg.dataset);
    const Templates templates = Templates::load(cfg.templates);

    std::vector<fs::path> dirs;
    for (std::int64_t seed : cfg.seeds) {
        const fs::path dir = run_dir_for(cfg.out, cfg.pipeline, cfg.k, seed);
        const bool exists = fs::exists(dir / run_files::kManifest);
        if (exists && !cfg.force && !cfg.resume) {
            throw ConfigError("run directory '" + dir.string() + "' already exists (use --resume or --force)");
        }
        RunDirLock lock(dir);

        std::optional<RunRecord> prior;
        if (exists && cfg.resume) prior = load_run(dir);

        std::unique_ptr<Backend> backend;
        if (cfg.backend == "mock") {
            backend = std::make_unique<MockBackend>(
                cfg.fixtures.empty() ? MockBackend(std::map<MockBackend::Key, std::string>{}, seed, cfg.default_completion)
                                     : MockBackend::from_file(cfg.fixtures, seed, cfg.default_completion));
        } else {
            HttpBackendOptions o;
            o.endpoint = cfg.endpoint;
            o.model = cfg.model;
            if (const char* key = std::getenv(kApiKeyEnv)) o.api_key = key;
            backend = std::make_unique<HttpBackend>(std::move(o));
        }
        std::unique_ptr<Executor> executor;
        if (!cfg.exec_fixtures.empty()) {
            executor = std::make_unique<FixtureExecutor>(FixtureExecutor::from_file(cfg.exec_fixtures, seed));
        } else {
            executor = std::make_unique<SubprocessExecutor>(SubprocessExecutor::split_command(cfg.runner));
        }

        RunOptions opts;
        opts.k = cfg.k;
        opts.seed = seed;
        opts.sampling = cfg.sampling;
        opts.trim_steps = cfg.trim_steps;
        opts.exec_timeout_s = cfg.exec_timeout_s;
        opts.workers = cfg.workers;
        opts.toolbox_limit = cfg.toolbox_limit;
        opts.backend_name = cfg.backend == "mock" ? "mock" : "http:" + cfg.model;

        RunWriter writer(dir);
        RunContext ctx{*backend, *executor, templates, &writer, prior ? &*prior : nullptr};
        const RunRecord rec = cfg.pipeline == Pipeline::Trove ? run_trove(ds, opts, ctx) : run_primitive(ds, opts, ctx);
        log << fmt::format("{}: {} tasks, {} candidates{}\n", dir.string(), ds.size(), rec.candidates.size(),
                           prior ? " (resumed)" : "");
        dirs.push_back(dir);
    }
    return dirs;
}

// Selects one candidate per task from persisted candidates and writes
// selections-<mechanism>.jsonl into the run directory.
inline std::vector<SelectionResult> cmd_select(const std::filesystem::path& run_dir, const std::filesystem::path& dataset,
                                               Mechanism m) {
    const Dataset ds = load_dataset(dataset);
    if (!std::filesystem::is_directory(run_dir)) throw ValidationError("'" + run_dir.string() + "' is not a run directory");
    RunDirLock lock(run_dir);
    const RunRecord run = load_run(run_dir);
    detail::check_dataset_matches(ds, run, run_dir);
    detail::require_complete(run, ds, run_dir);
    auto results = select_run(run, ds, m);
    write_selections(run_dir, m, results);
    return results;
}

struct AnalyzeConfig {
    std::vector<std::filesystem::path> run_dirs;
    std::filesystem::path dataset;
    std::string metrics = "all";
    std::filesystem::path out = "report";
    std::optional<int> per_mode_budget;
};

inline std::vector<std::filesystem::path> cmd_analyze(const AnalyzeConfig& cfg) {
    namespace fs = std::filesystem;
    if (cfg.run_dirs.empty()) throw ConfigError("no run directories given");
    if (cfg.dataset.empty()) throw ConfigError("--dataset is required");
    const std::set<std::string> metrics = metric::parse(cfg.metrics);
    if (cfg.per_mode_budget && *cfg.per_mode_budget < 1) throw ConfigError("--per-mode-budget must be >= 1");

    AnalysisInput in{load_dataset(cfg.dataset), {}, {}, cfg.per_mode_budget};
    std::vector<std::pair<RunRecord, fs::path>> loaded;
    for (const auto& dir : cfg.run_dirs) {
        RunRecord run = load_run(dir);
        detail::check_dataset_matches(in.dataset, run, dir);
        detail::require_complete(run, in.dataset, dir);
        loaded.emplace_back(std::move(run), dir);
    }
    std::stable_sort(loaded.begin(), loaded.end(),
                     [](const auto& a, const auto& b) { return a.first.manifest.seed < b.first.manifest.seed; });

    for (auto& [run, dir] : loaded) {
        ExperimentGroup& g = run.manifest.pipeline == Pipeline::Trove ? in.trove : in.primitive;
        std::vector<Mechanism> mechs{Mechanism::OneStage};
        if (run.manifest.pipeline == Pipeline::Trove) mechs.push_back(Mechanism::TwoStage);
        for (Mechanism m : mechs) {
            // Persisted selections are authoritative; otherwise select in memory.
            const bool persisted = fs::exists(dir / run_files::selections(m));
            g.selections[m].push_back(persisted ? load_selections(dir, m, run) : select_run(run, in.dataset, m));
        }
        g.runs.push_back(std::move(run));
    }
    if (!in.trove.empty()) validate_group(in.trove.ptrs(), in.dataset);
    if (!in.primitive.empty()) validate_group(in.primitive.ptrs(), in.dataset);

    // Comparative metrics asked for by name need both sides.
    if (cfg.metrics.find("all") == std::string::npos) {
        for (const char* m : {metric::kJaccard, metric::kCoverage}) {
            if (!metrics.count(m)) continue;
            detail::require_side(in.trove, "trove", m);
            detail::require_side(in.primitive, "primitive", m);
        }
    }
    return emit_report(in, metrics, cfg.out);
}

} // namespace cmh
