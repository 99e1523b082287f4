// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "cmh/analysis.hpp"
#include "cmh/dataset.hpp"
#include "cmh/error.hpp"
#include "cmh/run_record.hpp"
#include "cmh/selection.hpp"

namespace cmh {

// All seeds of one pipeline.
struct ExperimentGroup {
    std::vector<RunRecord> runs;  // ascending seed
    std::map<Mechanism, std::vector<std::vector<SelectionResult>>> selections;  // parallel to runs

    bool empty() const { return runs.empty(); }
    int k() const { return runs.empty() ? 0 : runs.front().manifest.k; }

    std::vector<const RunRecord*> ptrs() const {
        std::vector<const RunRecord*> out;
        for (const auto& r : runs) out.push_back(&r);
        return out;
    }
};

struct AnalysisInput {
    Dataset dataset;
    ExperimentGroup trove;
    ExperimentGroup primitive;
    std::optional<int> per_mode_budget;  // unique-solve and Jaccard; default K/3
};

namespace metric {
inline constexpr const char* kAccuracy = "accuracy";      // table1
inline constexpr const char* kUnique = "unique";          // table2
inline constexpr const char* kDistinct = "distinct";      // table3
inline constexpr const char* kBudget = "budget";          // table5
inline constexpr const char* kPassK = "passk";            // table6
inline constexpr const char* kCoverage = "coverage";      // table7
inline constexpr const char* kDifficulty = "difficulty";  // table8
inline constexpr const char* kCurves = "curves";          // figure2
inline constexpr const char* kJaccard = "jaccard";        // figure3
inline constexpr const char* kCombined = "combined";      // figure4
inline constexpr const char* kReuse = "reuse";

inline const std::vector<std::string>& all() {
    static const std::vector<std::string> names = {kAccuracy, kUnique,  kDistinct, kBudget,   kPassK, kCoverage,
                                                   kDifficulty, kCurves, kJaccard, kCombined, kReuse};
    return names;
}

// "all" or a comma-separated list.
inline std::set<std::string> parse(const std::string& spec) {
    std::set<std::string> out;
    std::stringstream ss(spec);
    for (std::string item; std::getline(ss, item, ',');) {
        item = detail::trim(item);
        if (item.empty()) continue;
        if (item == "all") {
            out.insert(all().begin(), all().end());
        } else if (std::find(all().begin(), all().end(), item) == all().end()) {
            throw ConfigError("--metric: unknown metric '" + item + "'");
        } else {
            out.insert(item);
        }
    }
    if (out.empty()) throw ConfigError("--metric: no metric given");
    return out;
}
} // namespace metric

namespace detail {

inline std::string fixed(double v, int places) {
    const double scale = std::pow(10.0, places);
    double r = std::round(v * scale) / scale;
    if (r == 0.0) r = 0.0;  // no "-0.0000"
    return fmt::format("{:.{}f}", r, places);
}
inline std::string num(double v) { return fixed(v, 4); }
inline std::string pct(double fraction) { return fixed(fraction * 100.0, 2); }

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

struct Table {
    std::string title;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void write_csv(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw InfrastructureError("cannot write '" + path.string() + "'");
        auto line = [&](const std::vector<std::string>& cells) {
            for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << csv_field(cells[i]);
            out << '\n';
        };
        line(header);
        for (const auto& r : rows) line(r);
    }

    void write_text(std::ostream& out) const {
        out << title << '\n';
        std::vector<std::size_t> width(header.size(), 0);
        auto widen = [&](const std::vector<std::string>& cells) {
            for (std::size_t i = 0; i < cells.size() && i < width.size(); ++i) width[i] = std::max(width[i], cells[i].size());
        };
        widen(header);
        for (const auto& r : rows) widen(r);
        auto line = [&](const std::vector<std::string>& cells) {
            std::string s;
            for (std::size_t i = 0; i < cells.size(); ++i) {
                if (i) s += "  ";
                s += i == 0 ? fmt::format("{:<{}}", cells[i], width[i]) : fmt::format("{:>{}}", cells[i], width[i]);
            }
            while (!s.empty() && s.back() == ' ') s.pop_back();
            out << s << '\n';
        };
        line(header);
        if (rows.empty()) out << "(no data)\n";
        for (const auto& r : rows) line(r);
        out << '\n';
    }
};

inline std::string seeds_label(const ExperimentGroup& g) {
    std::string s;
    for (const auto& r : g.runs) s += (s.empty() ? "" : " ") + std::to_string(r.manifest.seed);
    return s;
}

// Persisted selections when the group carries them, otherwise computed.
inline std::vector<std::vector<SelectionResult>> selections_of(const ExperimentGroup& g, const Dataset& ds, Mechanism m) {
    if (auto it = g.selections.find(m); it != g.selections.end()) return it->second;
    std::vector<std::vector<SelectionResult>> out;
    for (const auto& r : g.runs) out.push_back(select_run(r, ds, m));
    return out;
}

inline std::vector<std::string> category_labels(const Dataset& ds) {
    auto cats = ds.categories();
    cats.push_back(ds.name());
    return cats;
}

inline std::vector<int> budget_points(int k_max) {
    std::vector<int> ks;
    if (k_max >= 1) ks.push_back(1);
    for (int k = 3; k <= k_max; k += 3) ks.push_back(k);
    return ks;
}

inline void require_side(const ExperimentGroup& g, const char* side, const std::string& metric_name) {
    if (g.empty()) {
        throw ValidationError("--metric " + metric_name + " compares both pipelines; no " + side +
                              " runs were given");
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Table builders. Each returns a header-only table when its inputs are absent.

inline detail::Table accuracy_table(const AnalysisInput& in) {
    detail::Table t{"Accuracy (selected answer matches ground truth)",
                    {"category", "tasks", "primitive_one_stage_mean", "primitive_one_stage_std", "trove_two_stage_mean",
                     "trove_two_stage_std", "trove_one_stage_mean", "trove_one_stage_std"},
                    {}};
    if (in.trove.empty() && in.primitive.empty()) return t;
    const Dataset& ds = in.dataset;
    std::optional<MetricReport> p1, t2, t1;
    if (!in.primitive.empty()) {
        p1 = accuracy(in.primitive.ptrs(), detail::selections_of(in.primitive, ds, Mechanism::OneStage), ds);
    }
    if (!in.trove.empty()) {
        t2 = accuracy(in.trove.ptrs(), detail::selections_of(in.trove, ds, Mechanism::TwoStage), ds);
        t1 = accuracy(in.trove.ptrs(), detail::selections_of(in.trove, ds, Mechanism::OneStage), ds);
    }
    const MetricReport& any = p1 ? *p1 : *t1;
    for (std::size_t i = 0; i < any.rows.size(); ++i) {
        std::vector<std::string> row{any.rows[i].category, std::to_string(any.rows[i].tasks)};
        for (const auto* rep : {&p1, &t2, &t1}) {
            if (*rep) {
                row.push_back(detail::num((*rep)->rows[i].stat.mean));
                row.push_back(detail::num((*rep)->rows[i].stat.stddev));
            } else {
                row.insert(row.end(), {"", ""});
            }
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline detail::Table unique_solve_table(const AnalysisInput& in) {
    detail::Table t{"Tasks uniquely solved by one mode (oracle, per-mode budget)",
                    {"category", "tasks", "import_mean", "import_std", "create_mean", "create_std", "skip_mean", "skip_std"},
                    {}};
    if (in.trove.empty()) return t;
    auto reps = unique_solve_fraction(in.trove.ptrs(), in.dataset, in.per_mode_budget);
    t.title += fmt::format(" [budget {} per mode]", reps.at(Mode::Skip).k);
    const auto& base = reps.at(Mode::Import);
    for (std::size_t i = 0; i < base.rows.size(); ++i) {
        std::vector<std::string> row{base.rows[i].category, std::to_string(base.rows[i].tasks)};
        for (Mode m : {Mode::Import, Mode::Create, Mode::Skip}) {
            row.push_back(detail::num(reps.at(m).rows[i].stat.mean));
            row.push_back(detail::num(reps.at(m).rows[i].stat.stddev));
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline detail::Table distinct_table(const AnalysisInput& in) {
    detail::Table t{"Distinct answers per task (successful candidates)",
                    {"category", "tasks", "primitive_mean", "primitive_std", "trove_mean", "trove_std", "delta"},
                    {}};
    if (in.trove.empty() && in.primitive.empty()) return t;
    std::optional<MetricReport> p, tr;
    if (!in.primitive.empty()) p = distinct_solutions(in.primitive.ptrs(), in.dataset);
    if (!in.trove.empty()) tr = distinct_solutions(in.trove.ptrs(), in.dataset);
    const MetricReport& any = p ? *p : *tr;
    for (std::size_t i = 0; i < any.rows.size(); ++i) {
        std::vector<std::string> row{any.rows[i].category, std::to_string(any.rows[i].tasks)};
        for (const auto* rep : {&p, &tr}) {
            if (*rep) {
                row.push_back(detail::num((*rep)->rows[i].stat.mean));
                row.push_back(detail::num((*rep)->rows[i].stat.stddev));
            } else {
                row.insert(row.end(), {"", ""});
            }
        }
        row.push_back(p && tr ? detail::num(tr->rows[i].stat.mean - p->rows[i].stat.mean) : "");
        t.rows.push_back(std::move(row));
    }
    return t;
}

namespace detail {

// Wide table of per-category means at budget points: p_at_1, p_at_3,
// t_at_3, ... Primitive columns at 1 and multiples of 3; trove at
// multiples of 3.
template <class Metric>
Table budget_table(const AnalysisInput& in, std::string title, Metric metric_at) {
    Table t{std::move(title), {"category", "tasks"}, {}};
    const int kp = in.primitive.k();
    const int kt = in.trove.k();
    struct Column {
        const ExperimentGroup* group;
        int k;
    };
    std::vector<Column> cols;
    for (int k : budget_points(std::max(kp, kt))) {
        if (!in.primitive.empty() && k <= kp) {
            cols.push_back({&in.primitive, k});
            t.header.push_back(fmt::format("p_at_{}", k));
        }
        if (!in.trove.empty() && k % 3 == 0 && k <= kt) {
            cols.push_back({&in.trove, k});
            t.header.push_back(fmt::format("t_at_{}", k));
        }
    }
    if (cols.empty()) return t;
    std::vector<MetricReport> reps;
    for (const auto& c : cols) reps.push_back(metric_at(*c.group, c.k));
    for (std::size_t i = 0; i < reps.front().rows.size(); ++i) {
        std::vector<std::string> row{reps.front().rows[i].category, std::to_string(reps.front().rows[i].tasks)};
        for (const auto& r : reps) row.push_back(num(r.rows[i].stat.mean));
        t.rows.push_back(std::move(row));
    }
    return t;
}

} // namespace detail

inline detail::Table budget_accuracy_table(const AnalysisInput& in) {
    return detail::budget_table(in, "One-stage accuracy at sampling budget k (mean over seeds)",
                                [&](const ExperimentGroup& g, int k) {
                                    return accuracy_report_at_k(g.ptrs(), in.dataset, Mechanism::OneStage, k);
                                });
}

inline detail::Table pass_at_k_table(const AnalysisInput& in) {
    return detail::budget_table(in, "Oracle pass@k (mean over seeds)", [&](const ExperimentGroup& g, int k) {
        return pass_at_k(g.ptrs(), in.dataset, k);
    });
}

inline detail::Table coverage_table(const AnalysisInput& in) {
    detail::Table t{"Coverage gains under oracle selection at full budget (count, % of category)",
                    {"category", "tasks", "trove_consistent", "trove_consistent_pct", "trove_potential",
                     "trove_potential_pct", "primitive_consistent", "primitive_consistent_pct", "primitive_potential",
                     "primitive_potential_pct"},
                    {}};
    if (in.trove.empty() || in.primitive.empty()) return t;
    std::vector<TaskSet> ts, ps;
    for (const auto& r : in.trove.runs) ts.push_back(solved_set(r, in.dataset, r.manifest.k));
    for (const auto& r : in.primitive.runs) ps.push_back(solved_set(r, in.dataset, r.manifest.k));
    for (const auto& row : coverage_gains(ts, ps, in.dataset).rows) {
        std::vector<std::string> cells{row.category, std::to_string(row.tasks)};
        for (const GainCell* g : {&row.trove_consistent, &row.trove_potential, &row.primitive_consistent,
                                  &row.primitive_potential}) {
            cells.push_back(std::to_string(g->tasks.size()));
            cells.push_back(detail::pct(g->fraction));
        }
        t.rows.push_back(std::move(cells));
    }
    return t;
}

inline detail::Table difficulty_table(const AnalysisInput& in) {
    detail::Table t{"Oracle pass@K by difficulty level (%; NA = no tasks at that level)",
                    {"category", "method", "level_1", "level_2", "level_3", "level_4", "level_5", "unlabelled"},
                    {}};
    std::vector<std::pair<std::string, DifficultyReport>> reps;
    if (!in.primitive.empty()) {
        reps.emplace_back("primitive", difficulty_breakdown(in.primitive.ptrs(), in.dataset, in.primitive.k()));
    }
    if (!in.trove.empty()) reps.emplace_back("trove", difficulty_breakdown(in.trove.ptrs(), in.dataset, in.trove.k()));
    if (reps.empty()) return t;
    for (const auto& cat : detail::category_labels(in.dataset)) {
        for (const auto& [method, rep] : reps) {
            std::vector<std::string> row{cat, method};
            for (int level = 1; level <= 5; ++level) {
                auto it = rep.cells.find({cat, level});
                row.push_back(it == rep.cells.end() ? "NA" : detail::pct(it->second.mean));
            }
            row.push_back(std::to_string(rep.excluded));
            t.rows.push_back(std::move(row));
        }
    }
    return t;
}

// Aggregate curve rows: pipeline, mechanism, k, mean, std.
inline detail::Table curve_table(const AnalysisInput& in) {
    detail::Table t{"Accuracy against sampling budget (aggregate)", {"pipeline", "mechanism", "k", "mean", "std"}, {}};
    auto emit = [&](const ExperimentGroup& g, const char* name, std::vector<Mechanism> mechs, int step) {
        if (g.empty()) return;
        for (Mechanism m : mechs) {
            for (int k = step; k <= g.k(); k += step) {
                SeedStat s = m == Mechanism::Oracle ? pass_at_k(g.ptrs(), in.dataset, k).aggregate().stat
                                                    : accuracy_at_k(g.ptrs(), in.dataset, m, k);
                t.rows.push_back({name, std::string(to_string(m)), std::to_string(k), detail::num(s.mean),
                                  detail::num(s.stddev)});
            }
        }
    };
    emit(in.primitive, "primitive", {Mechanism::Oracle, Mechanism::OneStage}, 1);
    emit(in.trove, "trove", {Mechanism::Oracle, Mechanism::OneStage, Mechanism::TwoStage}, 3);
    return t;
}

// Primitive (full budget) against each trove mode (per-mode budget) and
// against trove as a whole (full budget).
inline detail::Table jaccard_table(const AnalysisInput& in) {
    detail::Table t{"Mean cross-seed Jaccard similarity of oracle-solved task sets, primitive vs trove",
                    {"category", "tasks", "skip", "create", "import", "trove"},
                    {}};
    if (in.trove.empty() || in.primitive.empty()) return t;
    const int budget = in.per_mode_budget.value_or(in.trove.k() / 3);
    std::vector<TaskSet> prim;
    for (const auto& r : in.primitive.runs) prim.push_back(solved_set(r, in.dataset, r.manifest.k));
    std::vector<MetricReport> reps;
    for (Mode m : kTroveModes) {
        std::vector<TaskSet> side;
        for (const auto& r : in.trove.runs) side.push_back(solved_set(r, in.dataset, budget, m));
        reps.push_back(jaccard_cross_type(prim, side, in.dataset));
    }
    std::vector<TaskSet> whole;
    for (const auto& r : in.trove.runs) whole.push_back(solved_set(r, in.dataset, r.manifest.k));
    reps.push_back(jaccard_cross_type(prim, whole, in.dataset));
    for (std::size_t i = 0; i < reps.front().rows.size(); ++i) {
        std::vector<std::string> row{reps.front().rows[i].category, std::to_string(reps.front().rows[i].tasks)};
        for (const auto& r : reps) row.push_back(detail::num(r.rows[i].stat.mean));
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline detail::Table combined_curve_table(const AnalysisInput& in) {
    detail::Table t{"Oracle pass@k with samples pooled across seeds (aggregate)", {"pipeline", "k", "pass"}, {}};
    auto emit = [&](const ExperimentGroup& g, const char* name) {
        if (g.empty()) return;
        const int total = g.k() * static_cast<int>(g.runs.size());
        for (const auto& p : seed_combined_pass(g.ptrs(), in.dataset, total)) {
            t.rows.push_back({name, std::to_string(p.k), detail::num(p.value)});
        }
    };
    emit(in.primitive, "primitive");
    emit(in.trove, "trove");
    return t;
}

// Reuse is judged against the one-stage selections of each trove seed.
inline std::pair<detail::Table, detail::Table> reuse_tables(const AnalysisInput& in) {
    detail::Table tools{"Learned tools and their reuse in later correct selections",
                        {"seed", "tool", "origin_task", "category", "created_at_step", "reuse"},
                        {}};
    detail::Table learned{"Tools learned per category", {"seed", "category", "learned"}, {}};
    if (in.trove.empty()) return {tools, learned};
    const auto sels = detail::selections_of(in.trove, in.dataset, Mechanism::OneStage);
    for (std::size_t r = 0; r < in.trove.runs.size(); ++r) {
        const auto& run = in.trove.runs[r];
        const std::string seed = std::to_string(run.manifest.seed);
        ReuseReport rep = tool_reuse_stats(run, sels[r], in.dataset);
        for (const auto& [cat, n] : rep.learned_per_category) learned.rows.push_back({seed, cat, std::to_string(n)});
        for (const auto& tr : rep.tools) {
            tools.rows.push_back(
                {seed, tr.name, tr.origin_task, tr.category, std::to_string(tr.created_at_step), std::to_string(tr.reuse)});
        }
    }
    return {tools, learned};
}

// Writes the requested tables as CSV plus summary.txt. Returns the files
// written, in write order.
inline std::vector<std::filesystem::path> emit_report(const AnalysisInput& in, const std::set<std::string>& metrics,
                                                      const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw InfrastructureError("cannot create report directory '" + out_dir.string() + "': " + ec.message());

    std::vector<std::pair<std::string, detail::Table>> tables;
    auto want = [&](const char* m) { return metrics.count(m) > 0; };
    if (want(metric::kAccuracy)) tables.emplace_back("table1_accuracy.csv", accuracy_table(in));
    if (want(metric::kUnique)) tables.emplace_back("table2_unique_solves.csv", unique_solve_table(in));
    if (want(metric::kDistinct)) tables.emplace_back("table3_distinct_solutions.csv", distinct_table(in));
    if (want(metric::kBudget)) tables.emplace_back("table5_budget_accuracy.csv", budget_accuracy_table(in));
    if (want(metric::kPassK)) tables.emplace_back("table6_pass_at_k.csv", pass_at_k_table(in));
    if (want(metric::kCoverage)) tables.emplace_back("table7_coverage.csv", coverage_table(in));
    if (want(metric::kDifficulty)) tables.emplace_back("table8_difficulty.csv", difficulty_table(in));
    if (want(metric::kCurves)) tables.emplace_back("figure2_budget_curve.csv", curve_table(in));
    if (want(metric::kJaccard)) tables.emplace_back("figure3_jaccard.csv", jaccard_table(in));
    if (want(metric::kCombined)) tables.emplace_back("figure4_combined_curve.csv", combined_curve_table(in));
    if (want(metric::kReuse)) {
        auto [tools, learned] = reuse_tables(in);
        tables.emplace_back("tool_reuse.csv", std::move(tools));
        tables.emplace_back("tools_learned.csv", std::move(learned));
    }

    std::vector<fs::path> written;
    for (const auto& [file, table] : tables) {
        table.write_csv(out_dir / file);
        written.push_back(out_dir / file);
    }

    const fs::path summary = out_dir / "summary.txt";
    std::ofstream out(summary, std::ios::binary | std::ios::trunc);
    if (!out) throw InfrastructureError("cannot write '" + summary.string() + "'");
    out << "dataset: " << in.dataset.name() << " (" << in.dataset.size() << " tasks)\n";
    if (!in.primitive.empty()) out << "primitive: K=" << in.primitive.k() << ", seeds " << detail::seeds_label(in.primitive) << '\n';
    if (!in.trove.empty()) out << "trove: K=" << in.trove.k() << ", seeds " << detail::seeds_label(in.trove) << '\n';
    out << "values are mean over seeds; std is the population standard deviation\n\n";
    for (const auto& [file, table] : tables) table.write_text(out);
    written.push_back(summary);
    return written;
}

} // namespace cmh
