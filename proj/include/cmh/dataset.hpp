// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmh/answer.hpp"
#include "cmh/error.hpp"

namespace cmh {

struct Task {
    std::string id;
    std::string category;
    std::optional<int> difficulty;  // 1..5
    std::string query;
    std::optional<AnswerValue> truth;

    friend bool operator==(const Task&, const Task&) = default;
};

// Ordered benchmark. Order is significant: the TroVE pipeline grows its
// toolbox in exactly this order.
class Dataset {
public:
    Dataset() = default;
    Dataset(std::string name, std::vector<Task> tasks) : name_(std::move(name)), tasks_(std::move(tasks)) {
        for (std::size_t i = 0; i < tasks_.size(); ++i) {
            const Task& t = tasks_[i];
            if (t.id.empty()) throw ValidationError("task " + std::to_string(i) + " has an empty id");
            if (!index_.emplace(t.id, i).second) throw ValidationError("duplicate task id '" + t.id + "'");
            if (t.difficulty && (*t.difficulty < 1 || *t.difficulty > 5)) {
                throw ValidationError("task '" + t.id + "' has difficulty outside 1..5");
            }
        }
    }

    const std::string& name() const noexcept { return name_; }
    const std::vector<Task>& tasks() const noexcept { return tasks_; }
    std::size_t size() const noexcept { return tasks_.size(); }

    const Task& at(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw ValidationError("unknown task id '" + id + "'");
        return tasks_[it->second];
    }

    std::optional<std::size_t> position(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    bool contains(const std::string& id) const { return index_.count(id) != 0; }

    // Sorted, de-duplicated category names.
    std::vector<std::string> categories() const {
        std::set<std::string> s;
        for (const auto& t : tasks_) s.insert(t.category);
        return {s.begin(), s.end()};
    }

    bool has_ground_truth() const {
        for (const auto& t : tasks_) {
            if (!t.truth) return false;
        }
        return true;
    }

    friend bool operator==(const Dataset& a, const Dataset& b) {
        return a.name_ == b.name_ && a.tasks_ == b.tasks_;
    }

private:
    std::string name_;
    std::vector<Task> tasks_;
    std::unordered_map<std::string, std::size_t> index_;
};

inline nlohmann::json task_to_json(const Task& t) {
    nlohmann::json j;
    j["id"] = t.id;
    j["category"] = t.category;
    j["difficulty"] = t.difficulty ? nlohmann::json(*t.difficulty) : nlohmann::json(nullptr);
    j["query"] = t.query;
    j["answer"] = t.truth ? nlohmann::json(t.truth->raw) : nlohmann::json(nullptr);
    return j;
}

inline Task task_from_json(const nlohmann::json& j, std::size_t line) {
    auto require_string = [&](const char* key) -> std::string {
        auto it = j.find(key);
        if (it == j.end() || !it->is_string()) {
            throw ParseError(std::string("field '") + key + "' missing or not a string", line);
        }
        return it->get<std::string>();
    };
    if (!j.is_object()) throw ParseError("record is not an object", line);
    Task t;
    t.id = require_string("id");
    t.category = require_string("category");
    t.query = require_string("query");
    if (auto it = j.find("difficulty"); it != j.end() && !it->is_null()) {
        if (!it->is_number_integer()) throw ParseError("field 'difficulty' is not an integer", line);
        t.difficulty = it->get<int>();
    }
    if (auto it = j.find("answer"); it != j.end() && !it->is_null()) {
        // Numbers are accepted too and kept in their JSON spelling.
        t.truth = normalize_answer(it->is_string() ? it->get<std::string>() : it->dump());
    }
    return t;
}

inline Dataset parse_dataset(std::istream& in, std::string name) {
    std::vector<Task> tasks;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(std::string("malformed record: ") + e.what(), lineno);
        }
        tasks.push_back(task_from_json(j, lineno));
    }
    return Dataset(std::move(name), std::move(tasks));
}

// The dataset name is the file stem ("math.jsonl" -> "math").
inline Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open dataset '" + path.string() + "'");
    return parse_dataset(in, path.stem().string());
}

inline void write_dataset(const Dataset& ds, std::ostream& out) {
    for (const auto& t : ds.tasks()) out << task_to_json(t).dump() << '\n';
}

} // namespace cmh
