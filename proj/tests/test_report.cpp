// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "cmh/report.hpp"
#include "run_builder.hpp"

using namespace cmh;
using test::Answers;
using test::make_run;

namespace {

constexpr std::nullopt_t X = std::nullopt;

Dataset two_cats() {
    return Dataset("dd", {test::task("a", "alpha", 1, "1"), test::task("b", "alpha", 2, "2"), test::task("c", "beta", 1, "3")});
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

} // namespace

TEST(ReportFormat, Numbers) {
    EXPECT_EQ(detail::num(2.0 / 3.0), "0.6667");
    EXPECT_EQ(detail::num(-0.00001), "0.0000");
    EXPECT_EQ(detail::num(1.0), "1.0000");
    EXPECT_EQ(detail::pct(0.5), "50.00");
    EXPECT_EQ(detail::pct(1.0 / 3.0), "33.33");
}

TEST(ReportFormat, CsvQuoting) {
    EXPECT_EQ(detail::csv_field("plain"), "plain");
    EXPECT_EQ(detail::csv_field("a,b"), "\"a,b\"");
    EXPECT_EQ(detail::csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
}

TEST(ReportFormat, BudgetPoints) {
    EXPECT_EQ(detail::budget_points(15), (std::vector<int>{1, 3, 6, 9, 12, 15}));
    EXPECT_EQ(detail::budget_points(2), (std::vector<int>{1}));
    EXPECT_TRUE(detail::budget_points(0).empty());
}

TEST(MetricSpec, Parse) {
    EXPECT_EQ(metric::parse("all").size(), metric::all().size());
    EXPECT_EQ(metric::parse("accuracy,jaccard"), (std::set<std::string>{"accuracy", "jaccard"}));
    EXPECT_THROW(metric::parse("accuracy,bogus"), ConfigError);
    EXPECT_THROW(metric::parse(""), ConfigError);
}

TEST(EmitReport, EmptyInputGivesHeaderOnlyFiles) {
    test::TempDir dir;
    AnalysisInput in{two_cats(), {}, {}, std::nullopt};
    auto files = emit_report(in, metric::parse("all"), dir.path());
    EXPECT_EQ(files.size(), 13u);
    for (const auto& f : files) {
        ASSERT_TRUE(std::filesystem::exists(f)) << f;
        if (f.extension() == ".csv") {
            EXPECT_EQ(line_count(test::slurp(f)), 1u) << f;
        }
    }
    const auto summary = test::slurp(dir / "summary.txt");
    EXPECT_NE(summary.find("dataset: dd (3 tasks)"), std::string::npos);
    EXPECT_NE(summary.find("(no data)"), std::string::npos);
}

TEST(EmitReport, SelectedMetricsOnly) {
    test::TempDir dir;
    AnalysisInput in{two_cats(), {}, {}, std::nullopt};
    auto files = emit_report(in, metric::parse("accuracy"), dir.path());
    ASSERT_EQ(files.size(), 2u);
    EXPECT_EQ(files[0].filename(), "table1_accuracy.csv");
    EXPECT_FALSE(std::filesystem::exists(dir / "figure3_jaccard.csv"));
}

TEST(AccuracyTable, OneSideLeavesOtherColumnsEmpty) {
    auto ds = two_cats();
    AnalysisInput in{ds, {}, {}, std::nullopt};
    in.primitive.runs.push_back(make_run(Pipeline::Primitive, 0, ds, {{"a", Answers{"1", "1"}}, {"b", Answers{"0", X}}, {"c", Answers{"3", "4"}}}));
    in.primitive.runs.push_back(make_run(Pipeline::Primitive, 1, ds, {{"a", Answers{"1", "1"}}, {"b", Answers{"2", "2"}}, {"c", Answers{"3", "3"}}}));
    auto t = accuracy_table(in);
    ASSERT_EQ(t.rows.size(), 3u);
    // alpha: seeds 1/2 and 2/2; beta: 1 and 1; overall 2/3 and 3/3.
    EXPECT_EQ(t.rows[0], (std::vector<std::string>{"alpha", "2", "0.7500", "0.2500", "", "", "", ""}));
    EXPECT_EQ(t.rows[1], (std::vector<std::string>{"beta", "1", "1.0000", "0.0000", "", "", "", ""}));
    EXPECT_EQ(t.rows[2], (std::vector<std::string>{"dd", "3", "0.8333", "0.1667", "", "", "", ""}));
}

TEST(BudgetTables, ColumnsFollowBudgetPoints) {
    auto ds = two_cats();
    AnalysisInput in{ds, {}, {}, std::nullopt};
    Answers six{X, X, X, X, X, X};
    in.primitive.runs.push_back(make_run(Pipeline::Primitive, 0, ds, {{"a", six}, {"b", six}, {"c", six}}));
    in.trove.runs.push_back(make_run(Pipeline::Trove, 0, ds, {{"a", six}, {"b", six}, {"c", six}}));
    auto t = pass_at_k_table(in);
    EXPECT_EQ(t.header, (std::vector<std::string>{"category", "tasks", "p_at_1", "p_at_3", "t_at_3", "p_at_6", "t_at_6"}));
    EXPECT_EQ(t.rows.size(), 3u);
}

TEST(TableText, AlignedColumns) {
    detail::Table t{"T", {"name", "v"}, {{"long_name", "1"}, {"x", "22"}}};
    std::ostringstream out;
    t.write_text(out);
    EXPECT_EQ(out.str(), "T\nname        v\nlong_name   1\nx          22\n\n");
}
