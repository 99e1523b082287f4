// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmh/error.hpp"
#include "cmh/lexer.hpp"

namespace cmh {

struct Tool {
    std::string name;
    std::string source;
    std::string signature;  // "is_prime(num)"
    std::string origin_task;
    int created_at_step = 0;
    int use_count = 0;
    int import_count = 0;

    friend bool operator==(const Tool&, const Tool&) = default;
};

inline constexpr std::string_view kNoToolsFragment = "No tools are available yet.";

namespace detail {

// Top-level function definitions, in source order. Decorator lines directly
// above a definition belong to it.
struct FunctionDef {
    std::string name;
    std::string signature;
    std::string source;
};

// Joins a multi-line header: each line break (with its indentation) becomes
// one space, or nothing next to a bracket.
inline std::string one_line(std::string_view sig) {
    std::string out;
    for (std::size_t i = 0; i < sig.size();) {
        std::size_t j = i;
        bool breaks = false;
        while (j < sig.size() && (sig[j] == ' ' || sig[j] == '\t' || sig[j] == '\r' || sig[j] == '\n' || sig[j] == '\\')) {
            breaks = breaks || sig[j] == '\n';
            ++j;
        }
        if (!breaks) {
            out.push_back(sig[i++]);
            continue;
        }
        while (!out.empty() && (out.back() == ' ' || out.back() == '\t')) out.pop_back();
        const bool after_open = !out.empty() && (out.back() == '(' || out.back() == '[');
        const bool before_close = j < sig.size() && (sig[j] == ')' || sig[j] == ']');
        if (!after_open && !before_close) out.push_back(' ');
        i = j;
    }
    return out;
}

inline std::vector<FunctionDef> top_level_functions(std::string_view src) {
    const TokenStream ts = tokenize(src);
    if (!ts.ok) return {};
    const auto& tok = ts.tokens;
    auto top_level = [&](std::size_t i) { return tok[i].starts_line && tok[i].column == 0 && tok[i].depth == 0; };

    std::vector<FunctionDef> defs;
    for (std::size_t i = 0; i < tok.size(); ++i) {
        if (!top_level(i)) continue;
        std::size_t def = i;
        if (tok[def].text == "async" && def + 1 < tok.size()) ++def;
        if (tok[def].text != "def" || def + 1 >= tok.size() || tok[def + 1].kind != TokenKind::Identifier) continue;
        if (tok[def].line != tok[i].line && def != i) continue;

        // Header runs to the first ':' outside brackets.
        std::size_t colon = def + 2;
        while (colon < tok.size() && !(tok[colon].text == ":" && tok[colon].depth == 0)) ++colon;
        if (colon >= tok.size() || colon + 1 >= tok.size()) continue;  // no body

        std::size_t end = colon + 1;
        while (end < tok.size() && !top_level(end)) ++end;

        // Pull in decorators stacked immediately above.
        std::size_t first = i;
        while (first > 0) {
            std::size_t j = first - 1;
            while (j > 0 && !tok[j].starts_line) --j;
            if (!(top_level(j) && tok[j].text == "@")) break;
            first = j;
        }

        std::size_t begin_off = tok[first].offset;
        const Token& last = tok[end - 1];
        std::size_t end_off = last.offset + last.text.size();
        std::size_t eol = src.find('\n', end_off);
        end_off = eol == std::string_view::npos ? src.size() : eol;

        std::string_view sig = src.substr(tok[def + 1].offset, tok[colon].offset - tok[def + 1].offset);
        while (!sig.empty() && (sig.back() == ' ' || sig.back() == '\t')) sig.remove_suffix(1);
        if (auto arrow = sig.find("->"); arrow != std::string_view::npos) {
            sig = sig.substr(0, arrow);
            while (!sig.empty() && (sig.back() == ' ' || sig.back() == '\t')) sig.remove_suffix(1);
        }

        defs.push_back({std::string(tok[def + 1].text), one_line(sig),
                        std::string(src.substr(begin_off, end_off - begin_off))});
        i = end - 1;
    }
    return defs;
}

// Names used with call syntax: identifier '(' not preceded by '.' or 'def'.
inline std::set<std::string> called_names(std::string_view src) {
    const TokenStream ts = tokenize(src);
    std::set<std::string> names;
    const auto& tok = ts.tokens;
    for (std::size_t i = 0; i + 1 < tok.size(); ++i) {
        if (tok[i].kind != TokenKind::Identifier || tok[i + 1].text != "(") continue;
        if (i > 0 && (tok[i - 1].text == "." || tok[i - 1].text == "def" || tok[i - 1].text == "class")) continue;
        names.emplace(tok[i].text);
    }
    return names;
}

} // namespace detail

// Insertion-ordered library of helper functions learned online.
class Toolbox {
public:
    explicit Toolbox(int trim_steps = 500) : trim_steps_(trim_steps) {
        if (trim_steps < 1) throw ConfigError("trim_steps must be >= 1");
    }

    const std::vector<Tool>& tools() const noexcept { return tools_; }
    int step() const noexcept { return step_; }
    int trim_steps() const noexcept { return trim_steps_; }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    const Tool* find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &tools_[it->second];
    }

    // Tools that `source` would add: top-level definitions whose names are
    // not in the toolbox yet. Within one source, the first definition wins.
    std::vector<Tool> extract_tools(std::string_view source, const std::string& origin_task, int step) const {
        std::vector<Tool> out;
        std::set<std::string> seen;
        for (auto& def : detail::top_level_functions(source)) {
            if (contains(def.name) || !seen.insert(def.name).second) continue;
            out.push_back(Tool{def.name, def.source, def.signature, origin_task, step, 0, 0});
        }
        return out;
    }

    // Returns the names actually added.
    std::vector<std::string> add(std::vector<Tool> tools) {
        std::vector<std::string> added;
        for (auto& t : tools) {
            if (contains(t.name)) continue;
            index_.emplace(t.name, tools_.size());
            added.push_back(t.name);
            tools_.push_back(std::move(t));
        }
        return added;
    }

    // +1 per candidate for every tool it calls, however many call sites.
    std::vector<std::string> record_use(std::string_view candidate_source) {
        std::vector<std::string> used;
        for (const auto& name : detail::called_names(candidate_source)) {
            auto it = index_.find(name);
            if (it == index_.end()) continue;
            ++tools_[it->second].use_count;
            used.push_back(name);
        }
        return used;
    }

    // Bookkeeping for a rendered prompt that listed the first `limit` tools.
    void mark_imported(std::size_t limit) {
        for (std::size_t i = 0; i < tools_.size() && i < limit; ++i) ++tools_[i].import_count;
    }

    void advance() { ++step_; }

    // At every trim boundary, drop the tools nobody has used. Every tool
    // present at a boundary was created within the closing window or before.
    std::vector<std::string> maybe_trim() {
        std::vector<std::string> removed;
        if (step_ == 0 || step_ % trim_steps_ != 0) return removed;
        std::vector<Tool> kept;
        for (auto& t : tools_) {
            if (t.use_count == 0 && t.created_at_step < step_) {
                removed.push_back(t.name);
            } else {
                kept.push_back(std::move(t));
            }
        }
        tools_ = std::move(kept);
        reindex();
        return removed;
    }

private:
    void reindex() {
        index_.clear();
        for (std::size_t i = 0; i < tools_.size(); ++i) index_.emplace(tools_[i].name, i);
    }

    int trim_steps_;
    int step_ = 0;
    std::vector<Tool> tools_;
    std::unordered_map<std::string, std::size_t> index_;
};

inline std::string render_toolbox(const Toolbox& box, std::size_t limit) {
    if (box.tools().empty() || limit == 0) return std::string(kNoToolsFragment);
    std::string out = "The toolbox provides these functions; call them directly by name:\n";
    std::size_t n = 0;
    for (const auto& t : box.tools()) {
        if (n++ == limit) break;
        out += "\n# " + t.signature + "\n```python\n" + t.source + "\n```\n";
    }
    return out;
}

inline nlohmann::json tool_to_json(const Tool& t) {
    return {{"name", t.name},
            {"signature", t.signature},
            {"origin_task", t.origin_task},
            {"created_at_step", t.created_at_step},
            {"use_count", t.use_count},
            {"import_count", t.import_count},
            {"source", t.source}};
}

inline Tool tool_from_json(const nlohmann::json& j) {
    return Tool{j.at("name").get<std::string>(),          j.at("source").get<std::string>(),
                j.value("signature", std::string()),       j.at("origin_task").get<std::string>(),
                j.at("created_at_step").get<int>(),        j.value("use_count", 0),
                j.value("import_count", 0)};
}

inline nlohmann::json snapshot_to_json(const Toolbox& box) {
    nlohmann::json tools = nlohmann::json::array();
    for (const auto& t : box.tools()) tools.push_back(tool_to_json(t));
    return {{"step", box.step()}, {"trim_steps", box.trim_steps()}, {"tools", tools}};
}

} // namespace cmh
