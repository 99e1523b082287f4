// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmh/error.hpp"
#include "cmh/types.hpp"

namespace cmh {

struct SamplingConfig {
    double temperature = 0.6;
    double top_p = 0.95;
    int max_new_tokens = 512;
    std::int64_t seed = 0;

    void validate() const {
        if (!(temperature >= 0.0)) throw ConfigError("temperature must be >= 0");
        if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("top_p must be in (0, 1]");
        if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
    }

    friend bool operator==(const SamplingConfig&, const SamplingConfig&) = default;
};

inline nlohmann::json to_json(const SamplingConfig& c) {
    return {{"temperature", c.temperature}, {"top_p", c.top_p}, {"max_new_tokens", c.max_new_tokens}, {"seed", c.seed}};
}

struct GenerationRequest {
    std::string task_id;
    Mode mode = Mode::Skip;
    std::string prompt;
    int n = 1;
    SamplingConfig config;
    int first_sample_index = 0;  // index of the first returned sequence within the task
};

// ---------------------------------------------------------------------------
// Budget accounting. The unit is one sampled sequence, whether the backend
// returned it in a batch or alone.

struct ModeCounts {
    std::array<int, 4> by_mode{};  // indexed by Mode

    int operator[](Mode m) const { return by_mode[static_cast<std::size_t>(m)]; }
    int& operator[](Mode m) { return by_mode[static_cast<std::size_t>(m)]; }
    int total() const { return by_mode[0] + by_mode[1] + by_mode[2] + by_mode[3]; }

    friend bool operator==(const ModeCounts&, const ModeCounts&) = default;
};

struct LedgerReport {
    Pipeline pipeline = Pipeline::Primitive;
    int k_limit = 0;
    std::map<std::string, ModeCounts> per_task;
    int total = 0;
};

inline nlohmann::json to_json(const LedgerReport& r) {
    nlohmann::json tasks = nlohmann::json::array();
    for (const auto& [id, counts] : r.per_task) {
        nlohmann::json modes = nlohmann::json::object();
        if (r.pipeline == Pipeline::Trove) {
            for (Mode m : kTroveModes) modes[std::string(to_string(m))] = counts[m];
        } else {
            modes["PRIMITIVE"] = counts[Mode::Primitive];
        }
        tasks.push_back({{"task_id", id}, {"calls", modes}, {"total", counts.total()}});
    }
    return {{"pipeline", std::string(to_string(r.pipeline))}, {"k", r.k_limit}, {"tasks", tasks}, {"total", r.total}};
}

// TroVE: k/3 sequences per mode per task. PRIMITIVE: k per task, one mode.
// reserve() is an atomic check-and-increment.
class BudgetLedger {
public:
    BudgetLedger(Pipeline pipeline, int k_limit) : pipeline_(pipeline), k_limit_(k_limit) {
        if (k_limit < 1) throw ConfigError("k must be >= 1");
        if (pipeline == Pipeline::Trove && k_limit % 3 != 0) {
            throw ConfigError("k must be a multiple of 3 for the trove pipeline (got " + std::to_string(k_limit) + ")");
        }
    }

    Pipeline pipeline() const noexcept { return pipeline_; }
    int k_limit() const noexcept { return k_limit_; }

    int mode_limit(Mode m) const {
        if (pipeline_ == Pipeline::Primitive) return m == Mode::Primitive ? k_limit_ : 0;
        return m == Mode::Primitive ? 0 : k_limit_ / 3;
    }

    void reserve(const std::string& task_id, Mode mode, int n) {
        if (n < 1) throw ContractError("generation request needs n >= 1");
        std::lock_guard lock(mu_);
        ModeCounts& c = counts_[task_id];
        const int limit = mode_limit(mode);
        if (c[mode] + n > limit) {
            throw BudgetError("budget exceeded for task '" + task_id + "' mode " + std::string(to_string(mode)) + ": " +
                              std::to_string(c[mode]) + " + " + std::to_string(n) + " > " + std::to_string(limit));
        }
        c[mode] += n;
    }

    // Undo a reservation whose backend call failed.
    void release(const std::string& task_id, Mode mode, int n) {
        std::lock_guard lock(mu_);
        auto it = counts_.find(task_id);
        if (it == counts_.end()) return;
        it->second[mode] = std::max(0, it->second[mode] - n);
    }

    ModeCounts counts(const std::string& task_id) const {
        std::lock_guard lock(mu_);
        auto it = counts_.find(task_id);
        return it == counts_.end() ? ModeCounts{} : it->second;
    }

    LedgerReport report() const {
        std::lock_guard lock(mu_);
        LedgerReport r{pipeline_, k_limit_, counts_, 0};
        for (const auto& [id, c] : counts_) r.total += c.total();
        return r;
    }

private:
    Pipeline pipeline_;
    int k_limit_;
    mutable std::mutex mu_;
    std::map<std::string, ModeCounts> counts_;
};

inline LedgerReport ledger_report(const BudgetLedger& ledger) {
    return ledger.report();
}

// ---------------------------------------------------------------------------
// Backends

class Backend {
public:
    virtual ~Backend() = default;
    // Returns raw completions; may return fewer than request.n.
    virtual std::vector<std::string> complete(const GenerationRequest& request) = 0;
};

// Scripted backend: (task_id, mode, sample_index[, seed]) -> completion.
// Entries without a seed apply to every seed; seeded entries win.
class MockBackend final : public Backend {
public:
    struct Key {
        std::string task_id;
        Mode mode;
        int sample_index;
        std::optional<std::int64_t> seed;
        auto operator<=>(const Key&) const = default;
    };

    MockBackend(std::map<Key, std::string> table, std::int64_t seed, std::string default_completion)
        : table_(std::move(table)), seed_(seed), default_(std::move(default_completion)) {}

    static MockBackend from_file(const std::filesystem::path& path, std::int64_t seed, std::string default_completion) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open mock fixture file '" + path.string() + "'");
        std::map<Key, std::string> table;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            try {
                auto j = nlohmann::json::parse(line);
                Key k{j.at("task_id").get<std::string>(), mode_from_string(j.at("mode").get<std::string>()),
                      j.at("sample_index").get<int>(), std::nullopt};
                if (auto s = j.find("seed"); s != j.end() && !s->is_null()) k.seed = s->get<std::int64_t>();
                table[std::move(k)] = j.at("completion").get<std::string>();
            } catch (const nlohmann::json::exception& e) {
                throw ParseError(std::string("bad mock fixture record: ") + e.what(), lineno);
            } catch (const ValidationError& e) {
                throw ParseError(e.what(), lineno);
            }
        }
        return MockBackend(std::move(table), seed, std::move(default_completion));
    }

    std::vector<std::string> complete(const GenerationRequest& r) override {
        std::vector<std::string> out;
        out.reserve(static_cast<std::size_t>(r.n));
        for (int i = 0; i < r.n; ++i) {
            const int idx = r.first_sample_index + i;
            auto it = table_.find(Key{r.task_id, r.mode, idx, seed_});
            if (it == table_.end()) it = table_.find(Key{r.task_id, r.mode, idx, std::nullopt});
            out.push_back(it == table_.end() ? default_ : it->second);
        }
        return out;
    }

private:
    std::map<Key, std::string> table_;
    std::int64_t seed_;
    std::string default_;
};

// ---------------------------------------------------------------------------

// First fenced block wins; the whole completion when there is none. An
// unterminated fence runs to the end of the completion.
inline std::string extract_code_block(std::string_view completion) {
    const std::size_t open = completion.find("```");
    if (open == std::string_view::npos) return std::string(completion);
    std::size_t body = completion.find('\n', open + 3);
    if (body == std::string_view::npos) return {};
    ++body;
    std::size_t close = completion.find("```", body);
    std::string_view code = completion.substr(body, close == std::string_view::npos ? std::string_view::npos : close - body);
    while (!code.empty() && (code.back() == '\n' || code.back() == '\r')) code.remove_suffix(1);
    return std::string(code);
}

struct Completion {
    std::string source;
    std::string raw;
};

// Ledger-checked front door to a backend.
class Generator {
public:
    Generator(Backend& backend, BudgetLedger& ledger) : backend_(backend), ledger_(ledger) {}

    std::vector<Completion> generate(const GenerationRequest& request) {
        if (request.n < 1) throw ContractError("generation request needs n >= 1");
        ledger_.reserve(request.task_id, request.mode, request.n);
        std::vector<std::string> raw;
        try {
            raw = backend_.complete(request);
        } catch (...) {
            ledger_.release(request.task_id, request.mode, request.n);
            throw;
        }
        raw.resize(static_cast<std::size_t>(request.n));  // degenerate backends pad with empty completions
        std::vector<Completion> out;
        out.reserve(raw.size());
        for (auto& r : raw) {
            std::string src = extract_code_block(r);
            out.push_back({std::move(src), std::move(r)});
        }
        return out;
    }

    BudgetLedger& ledger() noexcept { return ledger_; }

private:
    Backend& backend_;
    BudgetLedger& ledger_;
};

} // namespace cmh
