// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "cmh/answer.hpp"
#include "cmh/error.hpp"
#include "cmh/types.hpp"

namespace cmh {

enum class ExecStatus { Success, Error, Timeout };

inline std::string_view to_string(ExecStatus s) {
    switch (s) {
    case ExecStatus::Success: return "success";
    case ExecStatus::Error: return "error";
    case ExecStatus::Timeout: return "timeout";
    }
    return "?";
}

inline ExecStatus exec_status_from_string(std::string_view s) {
    if (s == "success") return ExecStatus::Success;
    if (s == "error") return ExecStatus::Error;
    if (s == "timeout") return ExecStatus::Timeout;
    throw ValidationError("unknown execution status '" + std::string(s) + "'");
}

// Invariant: status == Success iff answer has a value.
struct ExecOutcome {
    ExecStatus status = ExecStatus::Error;
    std::optional<AnswerValue> answer;
    std::string stderr_excerpt;
    std::int64_t duration_ms = 0;

    static ExecOutcome success(std::string_view answer, std::string stderr_text = {}, std::int64_t ms = 0) {
        return {ExecStatus::Success, normalize_answer(answer), std::move(stderr_text), ms};
    }
    static ExecOutcome error(std::string stderr_text, std::int64_t ms = 0) {
        return {ExecStatus::Error, std::nullopt, std::move(stderr_text), ms};
    }
    static ExecOutcome timeout(std::int64_t ms, std::string stderr_text = {}) {
        return {ExecStatus::Timeout, std::nullopt, std::move(stderr_text), ms};
    }

    bool ok() const noexcept { return status == ExecStatus::Success; }

    friend bool operator==(const ExecOutcome&, const ExecOutcome&) = default;
};

struct Candidate {
    std::string task_id;
    Mode mode = Mode::Skip;
    int sample_index = 0;
    std::string source;
    std::string raw_completion;
    std::optional<ExecOutcome> outcome;

    bool succeeded() const noexcept { return outcome && outcome->ok(); }

    friend bool operator==(const Candidate&, const Candidate&) = default;
};

// Identity of a candidate inside a run: (task, mode, sample_index).
struct CandidateKey {
    std::string task_id;
    Mode mode;
    int sample_index;

    auto operator<=>(const CandidateKey&) const = default;
};

inline CandidateKey key_of(const Candidate& c) {
    return {c.task_id, c.mode, c.sample_index};
}

inline nlohmann::json outcome_to_json(const ExecOutcome& o) {
    nlohmann::json j;
    j["status"] = std::string(to_string(o.status));
    j["answer"] = o.answer ? nlohmann::json(o.answer->canonical) : nlohmann::json(nullptr);
    j["stderr"] = o.stderr_excerpt;
    j["duration_ms"] = o.duration_ms;
    return j;
}

// Shared by run records, runner replies and execution fixtures. A success
// without an answer is demoted to an error so the invariant holds on load.
inline ExecOutcome outcome_from_json(const nlohmann::json& j) {
    ExecOutcome o;
    o.status = exec_status_from_string(j.at("status").get<std::string>());
    if (auto it = j.find("stderr"); it != j.end() && it->is_string()) o.stderr_excerpt = it->get<std::string>();
    if (auto it = j.find("duration_ms"); it != j.end() && it->is_number()) o.duration_ms = it->get<std::int64_t>();
    auto ans = j.find("answer");
    bool has_answer = ans != j.end() && !ans->is_null();
    if (o.status == ExecStatus::Success) {
        std::string text = has_answer ? (ans->is_string() ? ans->get<std::string>() : ans->dump()) : std::string();
        AnswerValue v = normalize_answer(text);
        if (v.canonical.empty()) {
            o.status = ExecStatus::Error;
            if (!o.stderr_excerpt.empty()) o.stderr_excerpt += '\n';
            o.stderr_excerpt += "no answer captured";
        } else {
            o.answer = std::move(v);
        }
    }
    return o;
}

} // namespace cmh
