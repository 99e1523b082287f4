// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cmh/answer.hpp"
#include "cmh/candidate.hpp"
#include "cmh/error.hpp"
#include "cmh/lexer.hpp"

namespace cmh {

// Program length "in terms of operations": lexical tokens after dropping
// comments and whitespace. A string literal is one token.
inline int complexity(std::string_view source) {
    return static_cast<int>(tokenize(source).tokens.size());
}

enum class Mechanism { OneStage, TwoStage, Oracle };

inline std::string_view to_string(Mechanism m) {
    switch (m) {
    case Mechanism::OneStage: return "one-stage";
    case Mechanism::TwoStage: return "two-stage";
    case Mechanism::Oracle: return "oracle";
    }
    return "?";
}

inline Mechanism mechanism_from_string(std::string_view s) {
    if (s == "one-stage") return Mechanism::OneStage;
    if (s == "two-stage") return Mechanism::TwoStage;
    if (s == "oracle") return Mechanism::Oracle;
    throw ConfigError("unknown selection mechanism '" + std::string(s) + "' (expected one-stage, two-stage or oracle)");
}

struct SelectionResult {
    std::string task_id;
    std::optional<Candidate> chosen;
    Mechanism mechanism = Mechanism::OneStage;
    std::optional<AnswerValue> answer;
    std::map<std::string, int> vote_detail;  // class representative (canonical) -> votes
};

// A group of successful candidates whose answers are equivalent to the
// group's first member.
struct AnswerClass {
    AnswerValue representative;
    std::vector<std::size_t> members;  // indices into the candidate span
};

namespace detail {

inline bool generation_order_less(const Candidate& a, const Candidate& b) {
    if (a.mode != b.mode) return a.mode < b.mode;
    return a.sample_index < b.sample_index;
}

// Indices of successful candidates, in (mode, sample_index) order so that
// grouping does not depend on how the input happened to be ordered.
inline std::vector<std::size_t> successful_in_order(std::span<const Candidate> cs) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < cs.size(); ++i) {
        if (cs[i].succeeded()) idx.push_back(i);
    }
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return generation_order_less(cs[a], cs[b]); });
    return idx;
}

} // namespace detail

inline std::vector<AnswerClass> answer_classes(std::span<const Candidate> cs) {
    std::vector<AnswerClass> classes;
    for (std::size_t i : detail::successful_in_order(cs)) {
        const AnswerValue& a = *cs[i].outcome->answer;
        auto it = std::find_if(classes.begin(), classes.end(),
                               [&](const AnswerClass& c) { return answers_equivalent(a, c.representative); });
        if (it == classes.end()) {
            classes.push_back({a, {i}});
        } else {
            it->members.push_back(i);
        }
    }
    return classes;
}

struct CandidateRank {
    int complexity;
    Mode mode;
    int sample_index;
    auto operator<=>(const CandidateRank&) const = default;
};

inline CandidateRank rank_of(const Candidate& c) {
    return {complexity(c.source), c.mode, c.sample_index};
}

// Majority answer among successful candidates; ties go to the class whose
// shortest program is shortest, then to generation order. Returns the index
// of the shortest member of the winning class.
inline std::optional<std::size_t> select_best_index(std::span<const Candidate> cs,
                                                    std::map<std::string, int>* votes = nullptr) {
    const auto classes = answer_classes(cs);
    if (votes) {
        votes->clear();
        for (const auto& c : classes) (*votes)[c.representative.canonical] += static_cast<int>(c.members.size());
    }
    if (classes.empty()) return std::nullopt;

    struct Best {
        std::size_t votes;
        CandidateRank rank;
        std::size_t index;
    };
    std::optional<Best> best;
    for (const auto& cls : classes) {
        std::size_t shortest = cls.members.front();
        CandidateRank shortest_rank = rank_of(cs[shortest]);
        for (std::size_t m : cls.members) {
            CandidateRank r = rank_of(cs[m]);
            if (r < shortest_rank) {
                shortest = m;
                shortest_rank = r;
            }
        }
        const std::size_t n = cls.members.size();
        if (!best || n > best->votes || (n == best->votes && shortest_rank < best->rank)) {
            best = Best{n, shortest_rank, shortest};
        }
    }
    return best->index;
}

inline std::optional<Candidate> select_best(std::span<const Candidate> cs) {
    auto i = select_best_index(cs);
    if (!i) return std::nullopt;
    return cs[*i];
}

namespace detail {

inline void require_single_task(std::span<const Candidate> cs) {
    for (const auto& c : cs) {
        if (c.task_id != cs.front().task_id) {
            throw ContractError("candidates mix task ids '" + cs.front().task_id + "' and '" + c.task_id + "'");
        }
    }
}

inline SelectionResult make_result(std::span<const Candidate> cs, Mechanism m, std::optional<std::size_t> chosen,
                                   std::map<std::string, int> votes) {
    SelectionResult r;
    r.task_id = cs.empty() ? std::string() : cs.front().task_id;
    r.mechanism = m;
    r.vote_detail = std::move(votes);
    if (chosen) {
        r.chosen = cs[*chosen];
        r.answer = cs[*chosen].outcome->answer;
    }
    return r;
}

} // namespace detail

// Pools all K candidates and votes once.
inline SelectionResult select_one_stage(std::span<const Candidate> cs) {
    detail::require_single_task(cs);
    std::map<std::string, int> votes;
    auto chosen = select_best_index(cs, &votes);
    return detail::make_result(cs, Mechanism::OneStage, chosen, std::move(votes));
}

// Votes within each mode, then votes again over the per-mode winners.
inline SelectionResult select_two_stage(const std::map<Mode, std::vector<Candidate>>& per_mode) {
    std::vector<Candidate> all;
    for (const auto& [mode, list] : per_mode) all.insert(all.end(), list.begin(), list.end());
    detail::require_single_task(all);

    std::vector<Candidate> winners;
    for (const auto& [mode, list] : per_mode) {
        if (auto w = select_best(list)) winners.push_back(std::move(*w));
    }
    std::map<std::string, int> votes;
    auto chosen = select_best_index(winners, &votes);
    SelectionResult r = detail::make_result(winners, Mechanism::TwoStage, chosen, std::move(votes));
    if (r.task_id.empty() && !all.empty()) r.task_id = all.front().task_id;
    return r;
}

inline std::map<Mode, std::vector<Candidate>> group_by_mode(std::span<const Candidate> cs) {
    std::map<Mode, std::vector<Candidate>> out;
    for (const auto& c : cs) out[c.mode].push_back(c);
    return out;
}

// Perfect selector: the first correct candidate in generation order.
inline SelectionResult select_oracle(std::span<const Candidate> cs, const AnswerValue& truth) {
    detail::require_single_task(cs);
    std::optional<std::size_t> first;
    for (std::size_t i = 0; i < cs.size(); ++i) {
        const Candidate& c = cs[i];
        if (!c.succeeded() || !answers_equivalent(*c.outcome->answer, truth)) continue;
        if (!first || c.sample_index < cs[*first].sample_index) first = i;
    }
    std::map<std::string, int> votes;
    for (const auto& cls : answer_classes(cs)) votes[cls.representative.canonical] += static_cast<int>(cls.members.size());
    return detail::make_result(cs, Mechanism::Oracle, first, std::move(votes));
}

inline bool is_correct(const SelectionResult& r, const AnswerValue& truth) {
    return r.answer && answers_equivalent(*r.answer, truth);
}

} // namespace cmh
