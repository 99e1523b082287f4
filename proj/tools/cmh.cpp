// SPDX-License-Identifier: Apache-2.0
// cmh: generate, execute, select and analyze compute-matched runs.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cmh/commands.hpp"

#ifndef CMH_DEFAULT_TEMPLATE_DIR
#define CMH_DEFAULT_TEMPLATE_DIR "templates"
#endif

namespace {

int run_main(int argc, char** argv) {
    CLI::App app{"Compute-matched evaluation harness for tool-making vs primitive program synthesis"};
    app.require_subcommand(1);

    cmh::RunConfig run;
    std::string pipeline = "trove";
    run.templates = CMH_DEFAULT_TEMPLATE_DIR;
    std::size_t toolbox_limit = 0;
    auto* run_cmd = app.add_subcommand("run", "Generate and execute candidates; one run directory per seed");
    run_cmd->add_option("--dataset", run.dataset, "Dataset JSONL")->required();
    run_cmd->add_option("--pipeline", pipeline, "trove or primitive")->check(CLI::IsMember({"trove", "primitive"}));
    run_cmd->add_option("--k", run.k, "Samples per task (trove: split evenly over 3 modes)")->capture_default_str();
    run_cmd->add_option("--seeds", run.seeds, "Comma-separated seeds")->delimiter(',');
    run_cmd->add_option("--backend", run.backend, "mock or http")->check(CLI::IsMember({"mock", "http"}));
    run_cmd->add_option("--endpoint", run.endpoint, "OpenAI-compatible server URL (http backend)");
    run_cmd->add_option("--model", run.model, "Model name (http backend)");
    run_cmd->add_option("--fixtures", run.fixtures, "Scripted completions JSONL (mock backend)");
    run_cmd->add_option("--default-completion", run.default_completion, "Mock completion for unscripted samples");
    run_cmd->add_option("--templates", run.templates, "Directory with skip.txt, create.txt, import.txt")
        ->capture_default_str();
    run_cmd->add_option("--temperature", run.sampling.temperature)->capture_default_str();
    run_cmd->add_option("--top-p", run.sampling.top_p)->capture_default_str();
    run_cmd->add_option("--max-tokens", run.sampling.max_new_tokens)->capture_default_str();
    run_cmd->add_option("--trim-steps", run.trim_steps, "Toolbox trim period in tasks")->capture_default_str();
    run_cmd->add_option("--exec-timeout", run.exec_timeout_s, "Per-candidate timeout, seconds")->capture_default_str();
    run_cmd->add_option("--runner", run.runner, "Runner command (JSON request on stdin, reply on stdout)");
    run_cmd->add_option("--exec-fixtures", run.exec_fixtures, "Canned execution outcomes JSONL instead of a runner");
    run_cmd->add_option("--toolbox-limit", toolbox_limit, "Show at most N tools in prompts (0 = all)");
    run_cmd->add_option("--out", run.out, "Parent directory of run directories")->capture_default_str();
    run_cmd->add_option("--workers", run.workers, "Parallel requests/executions")->capture_default_str();
    run_cmd->add_flag("--force", run.force, "Overwrite existing run directories");
    run_cmd->add_flag("--resume", run.resume, "Reuse what an interrupted run already produced");

    std::vector<std::string> select_dirs;
    std::string select_dataset;
    std::string selection = "one-stage";
    auto* select_cmd = app.add_subcommand("select", "Pick one candidate per task in existing run directories");
    select_cmd->add_option("runs", select_dirs, "Run directories")->required();
    select_cmd->add_option("--dataset", select_dataset, "Dataset JSONL the runs were produced on")->required();
    select_cmd->add_option("--selection", selection, "one-stage, two-stage or oracle")
        ->check(CLI::IsMember({"one-stage", "two-stage", "oracle"}))
        ->capture_default_str();

    cmh::AnalyzeConfig analyze;
    std::vector<std::string> analyze_dirs;
    std::string analyze_dataset;
    std::string analyze_out = "report";
    int per_mode_budget = 0;
    auto* analyze_cmd = app.add_subcommand("analyze", "Compute metrics and write report tables");
    analyze_cmd->add_option("runs", analyze_dirs, "Run directories (any mix of pipelines and seeds)")->required();
    analyze_cmd->add_option("--dataset", analyze_dataset, "Dataset JSONL the runs were produced on")->required();
    analyze_cmd->add_option("--metric", analyze.metrics, "all, or a comma-separated subset of: accuracy, unique, "
                                                        "distinct, budget, passk, coverage, difficulty, curves, "
                                                        "jaccard, combined, reuse")
        ->capture_default_str();
    analyze_cmd->add_option("--per-mode-budget", per_mode_budget, "Samples per mode for unique-solve and Jaccard (default K/3)");
    analyze_cmd->add_option("--out", analyze_out, "Report directory")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (*run_cmd) {
            run.pipeline = cmh::pipeline_from_string(pipeline);
            if (toolbox_limit > 0) run.toolbox_limit = toolbox_limit;
            cmh::cmd_run(run, std::cerr);
        } else if (*select_cmd) {
            const cmh::Mechanism m = cmh::mechanism_from_string(selection);
            for (const auto& dir : select_dirs) {
                auto results = cmh::cmd_select(dir, select_dataset, m);
                std::cerr << dir << ": " << results.size() << " " << selection << " selections\n";
            }
        } else if (*analyze_cmd) {
            analyze.run_dirs.assign(analyze_dirs.begin(), analyze_dirs.end());
            analyze.dataset = analyze_dataset;
            analyze.out = analyze_out;
            if (per_mode_budget != 0) analyze.per_mode_budget = per_mode_budget;
            for (const auto& f : cmh::cmd_analyze(analyze)) std::cout << f.string() << '\n';
        }
    } catch (const cmh::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return cmh::exit_code(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) { return run_main(argc, argv); }
