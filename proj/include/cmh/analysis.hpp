// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cmh/candidate.hpp"
#include "cmh/dataset.hpp"
#include "cmh/error.hpp"
#include "cmh/run_record.hpp"
#include "cmh/selection.hpp"
#include "cmh/toolbox.hpp"

namespace cmh {

// Mean and population standard deviation over the seeds of one experiment.
struct SeedStat {
    double mean = 0.0;
    double stddev = 0.0;
    std::vector<double> per_seed;
};

inline SeedStat seed_stat(std::vector<double> values) {
    SeedStat s;
    s.per_seed = std::move(values);
    if (s.per_seed.empty()) return s;
    const double n = static_cast<double>(s.per_seed.size());
    s.mean = std::accumulate(s.per_seed.begin(), s.per_seed.end(), 0.0) / n;
    double var = 0.0;
    for (double v : s.per_seed) var += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(var / n);
    return s;
}

struct MetricRow {
    std::string category;  // dataset name for the aggregate row
    std::size_t tasks = 0;
    SeedStat stat;
};

// Category rows in sorted order, then one aggregate row.
struct MetricReport {
    std::string pipeline;
    int k = 0;
    std::string mechanism;
    std::vector<std::int64_t> seeds;
    std::vector<MetricRow> rows;

    const MetricRow& row(const std::string& category) const {
        for (const auto& r : rows) {
            if (r.category == category) return r;
        }
        throw ValidationError("no row for category '" + category + "'");
    }
    const MetricRow& aggregate() const { return rows.back(); }
};

using TaskSet = std::set<std::string>;

// ---------------------------------------------------------------------------
// Run-group checks

inline std::vector<std::string> missing_tasks(const RunRecord& run, const Dataset& ds) {
    std::map<std::string, int> executed;
    for (const auto& c : run.candidates) {
        if (c.outcome) ++executed[c.task_id];
    }
    std::vector<std::string> missing;
    for (const auto& t : ds.tasks()) {
        if (executed[t.id] != run.manifest.k) missing.push_back(t.id);
    }
    return missing;
}

// Seeds of one experiment must agree on pipeline, K and dataset.
inline void validate_group(const std::vector<const RunRecord*>& runs, const Dataset& ds) {
    if (runs.empty()) throw ValidationError("no runs given (missing seeds)");
    std::set<std::int64_t> seeds;
    for (const RunRecord* r : runs) {
        const RunManifest& m = r->manifest;
        const RunManifest& f = runs.front()->manifest;
        if (m.pipeline != f.pipeline) throw ValidationError("runs mix pipelines");
        if (m.k != f.k) {
            throw ValidationError("runs mix K across seeds (" + std::to_string(f.k) + " vs " + std::to_string(m.k) + ")");
        }
        if (m.dataset_hash != f.dataset_hash) throw ValidationError("runs were produced on different datasets");
        if (!seeds.insert(m.seed).second) throw ValidationError("seed " + std::to_string(m.seed) + " given twice");
        auto missing = missing_tasks(*r, ds);
        if (!missing.empty()) {
            throw ValidationError("run with seed " + std::to_string(m.seed) + " is incomplete (" +
                                  std::to_string(missing.size()) + " task(s) missing, first '" + missing.front() + "')");
        }
    }
}

namespace detail {

inline MetricReport report_shell(const std::vector<const RunRecord*>& runs, std::string mechanism) {
    MetricReport rep;
    if (!runs.empty()) {
        rep.pipeline = std::string(to_string(runs.front()->manifest.pipeline));
        rep.k = runs.front()->manifest.k;
    }
    rep.mechanism = std::move(mechanism);
    for (const RunRecord* r : runs) rep.seeds.push_back(r->manifest.seed);
    return rep;
}

// Per seed: value(run_position, task) averaged over tasks of each category
// and over all tasks; then mean/std across seeds.
inline void fill_rows(MetricReport& rep, const Dataset& ds, std::size_t n_runs,
                      const std::function<double(std::size_t, const Task&)>& value) {
    const auto cats = ds.categories();
    std::map<std::string, std::vector<double>> per_cat;
    std::map<std::string, std::size_t> sizes;
    std::vector<double> agg;
    for (std::size_t r = 0; r < n_runs; ++r) {
        std::map<std::string, double> sum;
        double total = 0.0;
        for (const auto& t : ds.tasks()) {
            double v = value(r, t);
            sum[t.category] += v;
            total += v;
            if (r == 0) ++sizes[t.category];
        }
        for (const auto& c : cats) per_cat[c].push_back(sum[c] / static_cast<double>(sizes[c]));
        agg.push_back(ds.size() == 0 ? 0.0 : total / static_cast<double>(ds.size()));
    }
    for (const auto& c : cats) rep.rows.push_back({c, sizes[c], seed_stat(per_cat[c])});
    rep.rows.push_back({ds.name(), ds.size(), seed_stat(agg)});
}

inline const AnswerValue& truth_of(const Task& t) {
    if (!t.truth) throw ValidationError("task '" + t.id + "' has no ground-truth answer");
    return *t.truth;
}

inline bool any_correct(const std::vector<Candidate>& cs, const AnswerValue& truth) {
    return std::any_of(cs.begin(), cs.end(), [&](const Candidate& c) {
        return c.succeeded() && answers_equivalent(*c.outcome->answer, truth);
    });
}

} // namespace detail

// ---------------------------------------------------------------------------
// Candidate prefixes ("the first k samples")

// PRIMITIVE: first k by sample_index. TroVE: first k/3 of every mode, so
// k must be a multiple of 3.
inline std::vector<Candidate> prefix(const std::vector<Candidate>& task_cands, Pipeline p, int k) {
    if (k < 1) throw ValidationError("k must be >= 1");
    std::vector<Candidate> sorted = task_cands;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const Candidate& a, const Candidate& b) { return a.sample_index < b.sample_index; });
    if (static_cast<std::size_t>(k) > sorted.size()) {
        throw ValidationError("k=" + std::to_string(k) + " exceeds the " + std::to_string(sorted.size()) +
                              " candidates recorded per task");
    }
    if (p == Pipeline::Primitive) {
        sorted.resize(static_cast<std::size_t>(k));
        return sorted;
    }
    if (k % 3 != 0) throw ValidationError("trove prefixes need k to be a multiple of 3 (got " + std::to_string(k) + ")");
    std::vector<Candidate> out;
    for (Mode m : kTroveModes) {
        int taken = 0;
        for (const auto& c : sorted) {
            if (c.mode == m && taken < k / 3) {
                out.push_back(c);
                ++taken;
            }
        }
        if (taken < k / 3) throw ValidationError("k=" + std::to_string(k) + " exceeds the per-mode record depth");
    }
    return out;
}

inline std::vector<Candidate> mode_prefix(const std::vector<Candidate>& task_cands, Mode m, int budget) {
    std::vector<Candidate> out;
    for (const auto& c : task_cands) {
        if (c.mode == m) out.push_back(c);
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const Candidate& a, const Candidate& b) { return a.sample_index < b.sample_index; });
    if (static_cast<int>(out.size()) < budget) {
        throw ValidationError("per-mode budget " + std::to_string(budget) + " exceeds the recorded depth");
    }
    out.resize(static_cast<std::size_t>(budget));
    return out;
}

// Concatenates seeds in the given order into one record of depth sum(K);
// sample indices are shifted by position * K so generation order holds.
inline RunRecord combine_seeds(const std::vector<const RunRecord*>& runs) {
    if (runs.empty()) throw ValidationError("no runs given (missing seeds)");
    RunRecord out;
    out.manifest = runs.front()->manifest;
    out.manifest.k = 0;
    std::int64_t pos = 0;
    for (const RunRecord* r : runs) {
        for (Candidate c : r->candidates) {
            c.sample_index += static_cast<int>(pos * r->manifest.k);
            out.candidates.push_back(std::move(c));
        }
        out.manifest.k += r->manifest.k;
        ++pos;
    }
    return out;
}

// Tasks solved under oracle selection with `budget` samples, optionally
// restricted to one mode.
inline TaskSet solved_set(const RunRecord& run, const Dataset& ds, int budget, std::optional<Mode> mode = std::nullopt) {
    TaskSet solved;
    const auto by_task = run.by_task();
    for (const auto& t : ds.tasks()) {
        auto it = by_task.find(t.id);
        if (it == by_task.end()) continue;
        auto cs = mode ? mode_prefix(it->second, *mode, budget) : prefix(it->second, run.manifest.pipeline, budget);
        if (detail::any_correct(cs, detail::truth_of(t))) solved.insert(t.id);
    }
    return solved;
}

// ---------------------------------------------------------------------------
// Selection over a (prefix of a) run

inline std::vector<SelectionResult> select_run(const RunRecord& run, const Dataset& ds, Mechanism m,
                                               std::optional<int> k = std::nullopt) {
    if (m == Mechanism::TwoStage && run.manifest.pipeline != Pipeline::Trove) {
        throw ConfigError("two-stage selection needs per-mode candidates; a primitive run has a single mode");
    }
    if (m == Mechanism::Oracle && !ds.has_ground_truth()) {
        throw ConfigError("oracle selection needs a ground-truth answer for every task");
    }
    const auto by_task = run.by_task();
    std::vector<SelectionResult> out;
    for (const auto& t : ds.tasks()) {
        auto it = by_task.find(t.id);
        std::vector<Candidate> cs = it == by_task.end() ? std::vector<Candidate>{} : it->second;
        if (k) cs = prefix(cs, run.manifest.pipeline, *k);
        SelectionResult r;
        switch (m) {
        case Mechanism::OneStage: r = select_one_stage(cs); break;
        case Mechanism::TwoStage: r = select_two_stage(group_by_mode(cs)); break;
        case Mechanism::Oracle: r = select_oracle(cs, *t.truth); break;
        }
        r.task_id = t.id;
        out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Metrics

// Fraction of tasks whose selected answer agrees with the ground truth.
inline MetricReport accuracy(const std::vector<const RunRecord*>& runs,
                             const std::vector<std::vector<SelectionResult>>& selections, const Dataset& ds) {
    validate_group(runs, ds);
    if (selections.size() != runs.size()) throw ValidationError("one selection list per run is required");
    std::optional<Mechanism> mech;
    std::vector<std::map<std::string, const SelectionResult*>> index(runs.size());
    for (std::size_t r = 0; r < selections.size(); ++r) {
        for (const auto& s : selections[r]) {
            if (mech && *mech != s.mechanism) throw ValidationError("selection mechanisms differ across seeds");
            mech = s.mechanism;
            index[r][s.task_id] = &s;
        }
    }
    MetricReport rep = detail::report_shell(runs, mech ? std::string(to_string(*mech)) : std::string());
    detail::fill_rows(rep, ds, runs.size(), [&](std::size_t r, const Task& t) {
        auto it = index[r].find(t.id);
        return it != index[r].end() && is_correct(*it->second, detail::truth_of(t)) ? 1.0 : 0.0;
    });
    return rep;
}

inline MetricReport pass_at_k(const std::vector<const RunRecord*>& runs, const Dataset& ds, int k) {
    validate_group(runs, ds);
    std::vector<TaskSet> solved;
    for (const RunRecord* r : runs) solved.push_back(solved_set(*r, ds, k));
    MetricReport rep = detail::report_shell(runs, "oracle");
    rep.k = k;
    detail::fill_rows(rep, ds, runs.size(), [&](std::size_t r, const Task& t) { return solved[r].count(t.id) ? 1.0 : 0.0; });
    return rep;
}

struct CurvePoint {
    int k;
    double value;
};

// Oracle pass@k of the seed-concatenated record for k = 1..k_total
// (multiples of 3 only for TroVE). Aggregate over all tasks.
inline std::vector<CurvePoint> seed_combined_pass(const std::vector<const RunRecord*>& runs, const Dataset& ds, int k_total) {
    validate_group(runs, ds);
    const RunRecord combined = combine_seeds(runs);
    if (k_total > combined.manifest.k) {
        throw ValidationError("k_total=" + std::to_string(k_total) + " exceeds the " + std::to_string(combined.manifest.k) +
                              " samples available across seeds");
    }
    const bool trove = combined.manifest.pipeline == Pipeline::Trove;
    std::vector<CurvePoint> curve;
    for (int k = 1; k <= k_total; ++k) {
        if (trove && k % 3 != 0) continue;
        const double solved = static_cast<double>(solved_set(combined, ds, k).size());
        curve.push_back({k, ds.size() == 0 ? 0.0 : solved / static_cast<double>(ds.size())});
    }
    return curve;
}

// Selection accuracy on the first k samples of each run (agreement curves).
inline SeedStat accuracy_at_k(const std::vector<const RunRecord*>& runs, const Dataset& ds, Mechanism m, int k) {
    std::vector<double> vals;
    for (const RunRecord* r : runs) {
        auto sel = select_run(*r, ds, m, k);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < sel.size(); ++i) {
            if (is_correct(sel[i], detail::truth_of(ds.tasks()[i]))) ++correct;
        }
        vals.push_back(ds.size() == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(ds.size()));
    }
    return seed_stat(std::move(vals));
}

inline MetricReport accuracy_report_at_k(const std::vector<const RunRecord*>& runs, const Dataset& ds, Mechanism m, int k) {
    validate_group(runs, ds);
    std::vector<std::vector<SelectionResult>> sels;
    for (const RunRecord* r : runs) sels.push_back(select_run(*r, ds, m, k));
    MetricReport rep = accuracy(runs, sels, ds);
    rep.k = k;
    rep.mechanism = std::string(to_string(m));
    return rep;
}

// Number of answer-equivalence classes among a task's successful candidates.
inline int distinct_answers(const std::vector<Candidate>& cs) {
    return static_cast<int>(answer_classes(cs).size());
}

inline MetricReport distinct_solutions(const std::vector<const RunRecord*>& runs, const Dataset& ds) {
    validate_group(runs, ds);
    std::vector<std::map<std::string, std::vector<Candidate>>> by_task;
    for (const RunRecord* r : runs) by_task.push_back(r->by_task());
    MetricReport rep = detail::report_shell(runs, "");
    detail::fill_rows(rep, ds, runs.size(), [&](std::size_t r, const Task& t) {
        auto it = by_task[r].find(t.id);
        return it == by_task[r].end() ? 0.0 : static_cast<double>(distinct_answers(it->second));
    });
    return rep;
}

// Per mode: fraction of tasks solved (oracle, first `per_mode_budget`
// samples of the mode) by that mode and no other.
inline std::map<Mode, MetricReport> unique_solve_fraction(const std::vector<const RunRecord*>& runs, const Dataset& ds,
                                                          std::optional<int> per_mode_budget = std::nullopt) {
    validate_group(runs, ds);
    if (runs.front()->manifest.pipeline != Pipeline::Trove) throw ValidationError("unique-solve analysis needs trove runs");
    const int budget = per_mode_budget.value_or(runs.front()->manifest.k / 3);
    std::vector<std::map<Mode, TaskSet>> solved(runs.size());
    for (std::size_t r = 0; r < runs.size(); ++r) {
        for (Mode m : kTroveModes) solved[r][m] = solved_set(*runs[r], ds, budget, m);
    }
    std::map<Mode, MetricReport> out;
    for (Mode m : kTroveModes) {
        MetricReport rep = detail::report_shell(runs, "oracle");
        rep.k = budget;
        detail::fill_rows(rep, ds, runs.size(), [&](std::size_t r, const Task& t) {
            if (!solved[r][m].count(t.id)) return 0.0;
            for (Mode other : kTroveModes) {
                if (other != m && solved[r][other].count(t.id)) return 0.0;
            }
            return 1.0;
        });
        out.emplace(m, std::move(rep));
    }
    return out;
}

// |A ∩ B| / |A ∪ B|; two empty sets count as identical.
inline double jaccard(const TaskSet& a, const TaskSet& b) {
    std::size_t inter = 0;
    for (const auto& x : a) inter += b.count(x);
    const std::size_t uni = a.size() + b.size() - inter;
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline TaskSet restrict_to(const TaskSet& s, const TaskSet& universe) {
    TaskSet out;
    for (const auto& x : s) {
        if (universe.count(x)) out.insert(x);
    }
    return out;
}

// Mean Jaccard over all |A| x |B| seed pairs, per category and overall.
// The stat's per_seed holds the pairwise values.
inline MetricReport jaccard_cross_type(const std::vector<TaskSet>& a, const std::vector<TaskSet>& b, const Dataset& ds) {
    if (a.empty() || b.empty()) throw ValidationError("jaccard needs at least one seed on each side");
    std::map<std::string, TaskSet> universe;
    TaskSet all;
    for (const auto& t : ds.tasks()) {
        universe[t.category].insert(t.id);
        all.insert(t.id);
    }
    auto pairwise = [&](const TaskSet& u) {
        std::vector<double> vals;
        for (const auto& x : a) {
            for (const auto& y : b) vals.push_back(jaccard(restrict_to(x, u), restrict_to(y, u)));
        }
        return seed_stat(std::move(vals));
    };
    MetricReport rep;
    rep.mechanism = "oracle";
    for (const auto& [cat, u] : universe) rep.rows.push_back({cat, u.size(), pairwise(u)});
    rep.rows.push_back({ds.name(), ds.size(), pairwise(all)});
    return rep;
}

struct GainCell {
    TaskSet tasks;
    double fraction = 0.0;  // of the category size
};

struct CoverageRow {
    std::string category;
    std::size_t tasks = 0;
    GainCell trove_consistent, trove_potential, primitive_consistent, primitive_potential;
};

struct CoverageReport {
    std::vector<CoverageRow> rows;  // categories, then aggregate
};

// consistent = (∩ own seeds) \ (∪ other seeds)
// potential  = ((∪ own seeds) \ (∪ other seeds)) \ consistent
inline std::pair<TaskSet, TaskSet> exclusive_gain(const std::vector<TaskSet>& own, const std::vector<TaskSet>& other) {
    TaskSet uni_other;
    for (const auto& s : other) uni_other.insert(s.begin(), s.end());
    TaskSet inter_own = own.empty() ? TaskSet{} : own.front();
    TaskSet uni_own;
    for (const auto& s : own) {
        uni_own.insert(s.begin(), s.end());
        TaskSet next;
        for (const auto& x : inter_own) {
            if (s.count(x)) next.insert(x);
        }
        inter_own = std::move(next);
    }
    TaskSet consistent, potential;
    for (const auto& x : inter_own) {
        if (!uni_other.count(x)) consistent.insert(x);
    }
    for (const auto& x : uni_own) {
        if (!uni_other.count(x) && !consistent.count(x)) potential.insert(x);
    }
    return {consistent, potential};
}

inline CoverageReport coverage_gains(const std::vector<TaskSet>& trove, const std::vector<TaskSet>& primitive,
                                     const Dataset& ds) {
    if (trove.empty()) throw ValidationError("coverage gains need trove runs");
    if (primitive.empty()) throw ValidationError("coverage gains need primitive runs");
    std::map<std::string, TaskSet> universe;
    TaskSet all;
    for (const auto& t : ds.tasks()) {
        universe[t.category].insert(t.id);
        all.insert(t.id);
    }
    auto restrict_all = [](const std::vector<TaskSet>& v, const TaskSet& u) {
        std::vector<TaskSet> out;
        for (const auto& s : v) out.push_back(restrict_to(s, u));
        return out;
    };
    auto cell = [](TaskSet s, std::size_t n) {
        double f = n == 0 ? 0.0 : static_cast<double>(s.size()) / static_cast<double>(n);
        return GainCell{std::move(s), f};
    };
    auto row = [&](const std::string& name, const TaskSet& u) {
        auto t = restrict_all(trove, u);
        auto p = restrict_all(primitive, u);
        auto [tc, tp] = exclusive_gain(t, p);
        auto [pc, pp] = exclusive_gain(p, t);
        return CoverageRow{name, u.size(), cell(tc, u.size()), cell(tp, u.size()), cell(pc, u.size()), cell(pp, u.size())};
    };
    CoverageReport rep;
    for (const auto& [cat, u] : universe) rep.rows.push_back(row(cat, u));
    rep.rows.push_back(row(ds.name(), all));
    return rep;
}

struct DifficultyReport {
    std::vector<std::string> categories;  // then the aggregate label
    std::map<std::pair<std::string, int>, SeedStat> cells;  // absent = no tasks at that level
    std::size_t excluded = 0;  // tasks without a difficulty label
};

// pass@k fraction per (category, level).
inline DifficultyReport difficulty_breakdown(const std::vector<const RunRecord*>& runs, const Dataset& ds, int k) {
    validate_group(runs, ds);
    std::vector<TaskSet> solved;
    for (const RunRecord* r : runs) solved.push_back(solved_set(*r, ds, k));
    DifficultyReport rep;
    rep.categories = ds.categories();
    rep.categories.push_back(ds.name());
    std::map<std::pair<std::string, int>, std::vector<std::string>> members;
    for (const auto& t : ds.tasks()) {
        if (!t.difficulty) {
            ++rep.excluded;
            continue;
        }
        members[{t.category, *t.difficulty}].push_back(t.id);
        members[{ds.name(), *t.difficulty}].push_back(t.id);
    }
    for (const auto& [cell, ids] : members) {
        std::vector<double> vals;
        for (const auto& s : solved) {
            std::size_t n = 0;
            for (const auto& id : ids) n += s.count(id);
            vals.push_back(static_cast<double>(n) / static_cast<double>(ids.size()));
        }
        rep.cells.emplace(cell, seed_stat(std::move(vals)));
    }
    return rep;
}

struct ToolReuse {
    std::string name;
    std::string origin_task;
    std::string category;
    int created_at_step = 0;
    int reuse = 0;  // later tasks whose selected, correct candidate calls the tool
};

struct ReuseReport {
    std::map<std::string, int> learned_per_category;
    std::vector<ToolReuse> tools;
};

inline ReuseReport tool_reuse_stats(const RunRecord& run, const std::vector<SelectionResult>& selections, const Dataset& ds) {
    ReuseReport rep;
    for (const auto& c : ds.categories()) rep.learned_per_category[c] = 0;
    std::map<std::string, const SelectionResult*> sel;
    for (const auto& s : selections) sel[s.task_id] = &s;
    for (const Tool& tool : run.learned_tools) {
        const auto origin = ds.position(tool.origin_task);
        if (!origin) throw ValidationError("tool '" + tool.name + "' comes from unknown task '" + tool.origin_task + "'");
        const std::string& cat = ds.tasks()[*origin].category;
        ++rep.learned_per_category[cat];
        ToolReuse r{tool.name, tool.origin_task, cat, tool.created_at_step, 0};
        for (std::size_t i = *origin + 1; i < ds.size(); ++i) {
            const Task& t = ds.tasks()[i];
            auto it = sel.find(t.id);
            if (it == sel.end() || !it->second->chosen || !t.truth || !is_correct(*it->second, *t.truth)) continue;
            if (detail::called_names(it->second->chosen->source).count(tool.name)) ++r.reuse;
        }
        rep.tools.push_back(std::move(r));
    }
    return rep;
}

} // namespace cmh
