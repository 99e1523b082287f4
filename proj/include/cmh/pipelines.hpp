// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <functional>
#include <filesystem>
#include <fstream>
#include <future>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cmh/candidate.hpp"
#include "cmh/dataset.hpp"
#include "cmh/error.hpp"
#include "cmh/execution.hpp"
#include "cmh/generation.hpp"
#include "cmh/hash.hpp"
#include "cmh/parallel.hpp"
#include "cmh/run_record.hpp"
#include "cmh/selection.hpp"
#include "cmh/toolbox.hpp"

namespace cmh {

// ---------------------------------------------------------------------------
// Prompt templates: skip.txt (also used by PRIMITIVE), create.txt, import.txt.
// Placeholders: {query} everywhere, {toolbox} in create/import.

struct Templates {
    std::string skip;
    std::string create;
    std::string import;

    static Templates load(const std::filesystem::path& dir) {
        auto read = [&](const char* name) {
            std::ifstream in(dir / name);
            if (!in) throw ConfigError("missing prompt template '" + (dir / name).string() + "'");
            std::stringstream ss;
            ss << in.rdbuf();
            return ss.str();
        };
        Templates t{read("skip.txt"), read("create.txt"), read("import.txt")};
        t.validate();
        return t;
    }

    void validate() const {
        auto count = [](std::string_view text, std::string_view needle) {
            std::size_t n = 0;
            for (auto p = text.find(needle); p != std::string_view::npos; p = text.find(needle, p + needle.size())) ++n;
            return n;
        };
        for (auto [name, text] : {std::pair{"skip", &skip}, {"create", &create}, {"import", &import}}) {
            if (count(*text, "{query}") != 1) throw ConfigError(std::string(name) + " template needs exactly one {query}");
        }
        if (count(skip, "{toolbox}") != 0) throw ConfigError("skip template must not contain {toolbox}");
        if (count(import, "{toolbox}") != 1) throw ConfigError("import template needs exactly one {toolbox}");
        if (count(create, "{toolbox}") > 1) throw ConfigError("create template has more than one {toolbox}");
    }

    std::map<std::string, std::string> hashes() const {
        return {{"create", content_hash(create)}, {"import", content_hash(import)}, {"skip", content_hash(skip)}};
    }
};

namespace detail {

// Single pass so placeholder-like text inside the query is left alone.
inline std::string substitute(std::string_view tmpl, std::string_view query, std::string_view toolbox) {
    std::string out;
    out.reserve(tmpl.size() + query.size() + toolbox.size());
    for (std::size_t i = 0; i < tmpl.size();) {
        if (tmpl.substr(i, 7) == "{query}") {
            out += query;
            i += 7;
        } else if (tmpl.substr(i, 9) == "{toolbox}") {
            out += toolbox;
            i += 9;
        } else {
            out += tmpl[i++];
        }
    }
    return out;
}

} // namespace detail

inline std::string build_prompt(Mode mode, const Task& task, std::string_view toolbox_fragment, const Templates& t) {
    switch (mode) {
    case Mode::Skip:
    case Mode::Primitive:
        if (!toolbox_fragment.empty()) throw ContractError("SKIP/PRIMITIVE prompts take no toolbox fragment");
        return detail::substitute(t.skip, task.query, {});
    case Mode::Create: return detail::substitute(t.create, task.query, toolbox_fragment);
    case Mode::Import: return detail::substitute(t.import, task.query, toolbox_fragment);
    }
    throw ContractError("unknown mode");
}

// ---------------------------------------------------------------------------

struct RunOptions {
    int k = 15;
    std::int64_t seed = 0;
    SamplingConfig sampling;
    int trim_steps = 500;
    int exec_timeout_s = kDefaultExecTimeoutS;
    unsigned workers = 1;
    std::size_t toolbox_limit = std::numeric_limits<std::size_t>::max();
    std::string backend_name = "mock";
};

// Inputs a pipeline needs beyond the dataset. `prior`, when set, is a
// previously persisted (possibly partial) record of the same run: its
// candidates and outcomes are reused instead of being regenerated.
struct RunContext {
    Backend& backend;
    Executor& executor;
    const Templates& templates;
    RunWriter* writer = nullptr;
    const RunRecord* prior = nullptr;
};

// Identifies the dataset in run manifests: hash of its canonical JSONL form.
inline std::string dataset_hash(const Dataset& ds) {
    std::ostringstream ser;
    write_dataset(ds, ser);
    return content_hash(ser.str());
}

namespace detail {

inline RunManifest make_manifest(Pipeline p, const Dataset& ds, const RunOptions& o, const Templates& t) {
    RunManifest m;
    m.pipeline = p;
    m.dataset_name = ds.name();
    m.dataset_hash = dataset_hash(ds);
    m.task_count = ds.size();
    m.k = o.k;
    m.seed = o.seed;
    m.sampling = o.sampling;
    m.sampling.seed = o.seed;
    m.backend = o.backend_name;
    m.template_hashes = t.hashes();
    m.trim_steps = o.trim_steps;
    m.exec_timeout_s = o.exec_timeout_s;
    return m;
}

// Prior candidates of one task, if the task was fully generated for `mode`.
struct PriorIndex {
    std::map<std::pair<std::string, Mode>, std::vector<Candidate>> by_task_mode;

    explicit PriorIndex(const RunRecord* prior) {
        if (!prior) return;
        for (const auto& c : prior->candidates) by_task_mode[{c.task_id, c.mode}].push_back(c);
        for (auto& [key, list] : by_task_mode) {
            std::sort(list.begin(), list.end(),
                      [](const Candidate& a, const Candidate& b) { return a.sample_index < b.sample_index; });
        }
    }

    std::optional<std::vector<Candidate>> find(const std::string& task, Mode mode, int first_index, int n) const {
        auto it = by_task_mode.find({task, mode});
        if (it == by_task_mode.end() || static_cast<int>(it->second.size()) != n) return std::nullopt;
        for (int i = 0; i < n; ++i) {
            if (it->second[static_cast<std::size_t>(i)].sample_index != first_index + i) return std::nullopt;
        }
        return it->second;
    }
};

inline void check_manifest_compatible(const RunRecord* prior, const RunManifest& m) {
    if (!prior) return;
    const RunManifest& p = prior->manifest;
    if (p.pipeline != m.pipeline || p.k != m.k || p.seed != m.seed || p.dataset_hash != m.dataset_hash ||
        p.template_hashes != m.template_hashes) {
        throw ValidationError("cannot resume: existing run directory was produced with a different configuration");
    }
}

inline std::vector<Candidate> generate_block(Generator& gen, const PriorIndex& prior, const Task& task, Mode mode,
                                             const std::string& prompt, int first_index, int n,
                                             const SamplingConfig& sampling) {
    if (auto reused = prior.find(task.id, mode, first_index, n)) {
        gen.ledger().reserve(task.id, mode, n);
        for (auto& c : *reused) c.outcome.reset();
        return *reused;
    }
    GenerationRequest req{task.id, mode, prompt, n, sampling, first_index};
    auto completions = gen.generate(req);
    std::vector<Candidate> out;
    out.reserve(completions.size());
    for (int i = 0; i < n; ++i) {
        auto& comp = completions[static_cast<std::size_t>(i)];
        out.push_back(Candidate{task.id, mode, first_index + i, std::move(comp.source), std::move(comp.raw), std::nullopt});
    }
    return out;
}

// Executes every candidate that has no reusable prior outcome. `on_done(i)`
// fires once per finished candidate, from the worker thread.
inline void execute_all(std::vector<Candidate>& cs, Executor& exec, const RunRecord* prior, int timeout_s, unsigned workers,
                        const std::function<void(std::size_t)>& on_done = {}) {
    std::map<CandidateKey, const Candidate*> done;
    if (prior) {
        for (const auto& c : prior->candidates) {
            if (c.outcome) done.emplace(key_of(c), &c);
        }
    }
    parallel_for(cs.size(), workers, [&](std::size_t i) {
        Candidate& c = cs[i];
        if (auto it = done.find(key_of(c)); it != done.end() && it->second->source == c.source) {
            c.outcome = it->second->outcome;
        } else {
            c.outcome = exec.execute(c, timeout_s);
        }
        if (on_done) on_done(i);
    });
}

inline void verify_budget(const BudgetLedger& ledger, const Dataset& ds) {
    for (const auto& t : ds.tasks()) {
        const ModeCounts c = ledger.counts(t.id);
        if (ledger.pipeline() == Pipeline::Primitive) {
            if (c.total() != ledger.k_limit()) throw ValidationError("budget mismatch on task '" + t.id + "'");
        } else {
            for (Mode m : kTroveModes) {
                if (c[m] != ledger.k_limit() / 3) throw ValidationError("budget mismatch on task '" + t.id + "'");
            }
        }
    }
}

// Hands finished per-task batches to `sink` in task order, whatever order
// the workers finish them in.
class OrderedFlush {
public:
    using Sink = std::function<void(std::size_t)>;
    OrderedFlush(std::size_t n, Sink sink) : ready_(n, false), sink_(std::move(sink)) {}

    void done(std::size_t i) {
        std::lock_guard lock(mu_);
        ready_[i] = true;
        while (next_ < ready_.size() && ready_[next_]) sink_(next_++);
    }

private:
    std::mutex mu_;
    std::vector<bool> ready_;
    std::size_t next_ = 0;
    Sink sink_;
};

} // namespace detail

// K samples per task from the SKIP template. Tasks are independent:
// generation, then execution, each parallel across tasks.
inline RunRecord run_primitive(const Dataset& ds, const RunOptions& opts, RunContext ctx) {
    if (opts.k < 1) throw ConfigError("k must be >= 1 (got " + std::to_string(opts.k) + ")");
    opts.sampling.validate();
    RunRecord rec;
    rec.manifest = detail::make_manifest(Pipeline::Primitive, ds, opts, ctx.templates);
    detail::check_manifest_compatible(ctx.prior, rec.manifest);
    if (ctx.writer) ctx.writer->manifest(rec.manifest);

    BudgetLedger ledger(Pipeline::Primitive, opts.k);
    Generator gen(ctx.backend, ledger);
    const detail::PriorIndex prior(ctx.prior);
    SamplingConfig sampling = opts.sampling;
    sampling.seed = opts.seed;

    const auto& tasks = ds.tasks();
    std::vector<std::vector<Candidate>> per_task(tasks.size());
    std::vector<std::string> prompts(tasks.size());
    detail::OrderedFlush flush_generated(tasks.size(), [&](std::size_t i) {
        if (!ctx.writer) return;
        ctx.writer->prompt({tasks[i].id, Mode::Primitive, prompts[i]});
        ctx.writer->candidates(per_task[i]);
    });
    parallel_for(tasks.size(), opts.workers, [&](std::size_t i) {
        prompts[i] = build_prompt(Mode::Primitive, tasks[i], {}, ctx.templates);
        per_task[i] = detail::generate_block(gen, prior, tasks[i], Mode::Primitive, prompts[i], 0, opts.k, sampling);
        flush_generated.done(i);
    });

    std::vector<Candidate> all;
    std::vector<std::size_t> task_of;
    std::vector<std::size_t> task_begin;
    for (std::size_t t = 0; t < per_task.size(); ++t) {
        task_begin.push_back(all.size());
        all.insert(all.end(), per_task[t].begin(), per_task[t].end());
        task_of.insert(task_of.end(), per_task[t].size(), t);
    }
    task_begin.push_back(all.size());
    std::vector<std::atomic<int>> remaining(tasks.size());
    for (std::size_t t = 0; t < tasks.size(); ++t) remaining[t] = static_cast<int>(per_task[t].size());
    detail::OrderedFlush flush_executed(tasks.size(), [&](std::size_t t) {
        if (!ctx.writer) return;
        ctx.writer->outcomes({all.begin() + static_cast<std::ptrdiff_t>(task_begin[t]),
                              all.begin() + static_cast<std::ptrdiff_t>(task_begin[t + 1])});
    });
    detail::execute_all(all, ctx.executor, ctx.prior, opts.exec_timeout_s, opts.workers, [&](std::size_t i) {
        if (remaining[task_of[i]].fetch_sub(1) == 1) flush_executed.done(task_of[i]);
    });

    detail::verify_budget(ledger, ds);
    for (std::size_t i = 0; i < tasks.size(); ++i) rec.prompts.push_back({tasks[i].id, Mode::Primitive, prompts[i]});
    rec.candidates = std::move(all);
    rec.ledger = ledger.report();
    rec.manifest.complete = true;
    if (ctx.writer) {
        ctx.writer->ledger(*rec.ledger);
        ctx.writer->manifest(rec.manifest);
    }
    return rec;
}

// K/3 samples per mode per task, tasks strictly in dataset order. The
// toolbox is frozen while a task is being sampled and updated afterwards:
// the one-stage winner's tool calls are counted, CREATE definitions are
// added, then the trim rule runs.
inline RunRecord run_trove(const Dataset& ds, const RunOptions& opts, RunContext ctx) {
    if (opts.k < 3 || opts.k % 3 != 0) {
        throw ConfigError("k must be a positive multiple of 3 for the trove pipeline (got " + std::to_string(opts.k) + ")");
    }
    opts.sampling.validate();
    RunRecord rec;
    rec.manifest = detail::make_manifest(Pipeline::Trove, ds, opts, ctx.templates);
    detail::check_manifest_compatible(ctx.prior, rec.manifest);
    if (ctx.writer) ctx.writer->manifest(rec.manifest);

    BudgetLedger ledger(Pipeline::Trove, opts.k);
    Generator gen(ctx.backend, ledger);
    const detail::PriorIndex prior(ctx.prior);
    Toolbox box(opts.trim_steps);
    SamplingConfig sampling = opts.sampling;
    sampling.seed = opts.seed;
    const int per_mode = opts.k / 3;

    for (const Task& task : ds.tasks()) {
        const std::string fragment = render_toolbox(box, opts.toolbox_limit);
        std::array<std::string, 3> prompts;
        for (std::size_t m = 0; m < 3; ++m) {
            const Mode mode = kTroveModes[m];
            prompts[m] = build_prompt(mode, task, mode == Mode::Skip ? std::string_view{} : fragment, ctx.templates);
            rec.prompts.push_back({task.id, mode, prompts[m]});
            if (ctx.writer) ctx.writer->prompt(rec.prompts.back());
        }
        box.mark_imported(opts.toolbox_limit);

        std::array<std::vector<Candidate>, 3> blocks;
        auto gen_mode = [&](std::size_t m) {
            blocks[m] = detail::generate_block(gen, prior, task, kTroveModes[m], prompts[m], static_cast<int>(m) * per_mode,
                                               per_mode, sampling);
        };
        if (opts.workers > 1) {
            parallel_for(3, 3, gen_mode);
        } else {
            for (std::size_t m = 0; m < 3; ++m) gen_mode(m);
        }
        std::vector<Candidate> task_cands;
        for (auto& b : blocks) task_cands.insert(task_cands.end(), b.begin(), b.end());
        if (ctx.writer) ctx.writer->candidates(task_cands);

        detail::execute_all(task_cands, ctx.executor, ctx.prior, opts.exec_timeout_s, opts.workers);
        if (ctx.writer) ctx.writer->outcomes(task_cands);

        if (auto chosen = select_best(task_cands)) box.record_use(chosen->source);
        for (const auto& c : task_cands) {
            if (c.mode != Mode::Create) continue;
            auto tools = box.extract_tools(c.source, task.id, box.step());
            for (const auto& t : tools) {
                rec.learned_tools.push_back(t);
                if (ctx.writer) ctx.writer->tool(t);
            }
            box.add(std::move(tools));
        }
        box.advance();
        const bool boundary = box.step() % box.trim_steps() == 0;
        box.maybe_trim();
        if (boundary) {
            rec.snapshots.push_back(snapshot_to_json(box));
            if (ctx.writer) ctx.writer->snapshot(box, false);
        }
        rec.candidates.insert(rec.candidates.end(), task_cands.begin(), task_cands.end());
    }

    detail::verify_budget(ledger, ds);
    rec.ledger = ledger.report();
    rec.manifest.complete = true;
    if (ctx.writer) {
        ctx.writer->snapshot(box, true);
        ctx.writer->ledger(*rec.ledger);
        ctx.writer->manifest(rec.manifest);
    }
    return rec;
}

} // namespace cmh
