// SPDX-License-Identifier: Apache-2.0
// Hand-built run records for metric tests.
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cmh/pipelines.hpp"
#include "test_support.hpp"

namespace cmh::test {

// One answer per sample (nullopt = failed execution), in sample_index order.
// TroVE samples are assigned SKIP, CREATE, IMPORT in equal thirds.
using Answers = std::vector<std::optional<std::string>>;

inline RunRecord make_run(Pipeline p, std::int64_t seed, const Dataset& ds, const std::map<std::string, Answers>& answers) {
    RunRecord r;
    r.manifest.pipeline = p;
    r.manifest.dataset_name = ds.name();
    r.manifest.dataset_hash = dataset_hash(ds);
    r.manifest.task_count = ds.size();
    r.manifest.seed = seed;
    r.manifest.complete = true;
    int k = -1;
    for (const auto& t : ds.tasks()) {
        const Answers& a = answers.at(t.id);
        k = static_cast<int>(a.size());
        for (int i = 0; i < k; ++i) {
            const Mode m = p == Pipeline::Primitive ? Mode::Primitive : kTroveModes[static_cast<std::size_t>(i / (k / 3))];
            r.candidates.push_back(
                cand(t.id, m, i, "answer = " + a[static_cast<std::size_t>(i)].value_or("1 / 0"), a[static_cast<std::size_t>(i)]));
        }
    }
    r.manifest.k = k;
    return r;
}

inline std::vector<const RunRecord*> ptrs(const std::vector<RunRecord>& runs) {
    std::vector<const RunRecord*> out;
    for (const auto& r : runs) out.push_back(&r);
    return out;
}

} // namespace cmh::test
