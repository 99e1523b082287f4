// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmh/candidate.hpp"
#include "cmh/error.hpp"

extern char** environ;

namespace cmh {

inline constexpr int kDefaultExecTimeoutS = 30;
// Time the runner gets beyond timeout_s to tear the candidate down and reply.
inline constexpr int kRunnerGraceS = 5;
inline constexpr std::size_t kStderrExcerptBytes = 2000;

class Executor {
public:
    virtual ~Executor() = default;
    virtual ExecOutcome execute(const Candidate& candidate, int timeout_s) = 0;
};

// ---------------------------------------------------------------------------
// Outcome table keyed like the mock backend: (task_id, mode, sample_index[, seed]).

class FixtureExecutor final : public Executor {
public:
    struct Key {
        std::string task_id;
        Mode mode;
        int sample_index;
        std::optional<std::int64_t> seed;
        auto operator<=>(const Key&) const = default;
    };

    FixtureExecutor(std::map<Key, ExecOutcome> table, std::int64_t seed) : table_(std::move(table)), seed_(seed) {}

    static FixtureExecutor from_file(const std::filesystem::path& path, std::int64_t seed) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open execution fixture file '" + path.string() + "'");
        std::map<Key, ExecOutcome> table;
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
                table[std::move(k)] = outcome_from_json(j);
            } catch (const nlohmann::json::exception& e) {
                throw ParseError(std::string("bad execution fixture record: ") + e.what(), lineno);
            } catch (const ValidationError& e) {
                throw ParseError(e.what(), lineno);
            }
        }
        return FixtureExecutor(std::move(table), seed);
    }

    ExecOutcome execute(const Candidate& c, int /*timeout_s*/) override {
        auto it = table_.find(Key{c.task_id, c.mode, c.sample_index, seed_});
        if (it == table_.end()) it = table_.find(Key{c.task_id, c.mode, c.sample_index, std::nullopt});
        if (it == table_.end()) {
            throw FixtureError("no execution fixture for (" + c.task_id + ", " + std::string(to_string(c.mode)) + ", " +
                               std::to_string(c.sample_index) + ")");
        }
        return it->second;
    }

private:
    std::map<Key, ExecOutcome> table_;
    std::int64_t seed_;
};

inline ExecOutcome execute_from_fixture(const Candidate& c, FixtureExecutor& fixture) {
    return fixture.execute(c, kDefaultExecTimeoutS);
}

// ---------------------------------------------------------------------------
// Runner protocol: one JSON request on stdin, one JSON reply on stdout.

inline std::string runner_request(std::string_view source, int timeout_s) {
    return nlohmann::json{{"source", source}, {"timeout_s", timeout_s}}.dump();
}

inline std::string tail_excerpt(std::string s) {
    if (s.size() > kStderrExcerptBytes) s.erase(0, s.size() - kStderrExcerptBytes);
    return s;
}

// Maps a runner reply to an outcome. Throws InfrastructureError when the
// reply is not a well-formed protocol object.
inline ExecOutcome classify_reply(std::string_view reply) {
    nlohmann::json j;
    try {
        // The reply is the last non-empty line; anything the runner leaked
        // before it is ignored.
        std::string_view last = reply;
        while (!last.empty() && (last.back() == '\n' || last.back() == '\r' || last.back() == ' ')) last.remove_suffix(1);
        if (auto nl = last.rfind('\n'); nl != std::string_view::npos) last = last.substr(nl + 1);
        j = nlohmann::json::parse(last);
        if (!j.is_object() || !j.contains("status") || !j.at("status").is_string()) {
            throw InfrastructureError("runner reply lacks a status");
        }
        ExecOutcome o = outcome_from_json(j);
        o.stderr_excerpt = tail_excerpt(std::move(o.stderr_excerpt));
        return o;
    } catch (const nlohmann::json::exception& e) {
        throw InfrastructureError(std::string("malformed runner reply: ") + e.what());
    } catch (const ValidationError& e) {
        throw InfrastructureError(std::string("malformed runner reply: ") + e.what());
    }
}

// Spawns the runner once per candidate. A runner that overruns
// timeout_s + grace is killed (whole process group) and the candidate
// classified TIMEOUT.
class SubprocessExecutor final : public Executor {
public:
    explicit SubprocessExecutor(std::vector<std::string> argv, int grace_s = kRunnerGraceS)
        : argv_(std::move(argv)), grace_s_(grace_s) {
        if (argv_.empty()) throw ConfigError("runner command is empty");
        static std::once_flag sigpipe_once;
        std::call_once(sigpipe_once, [] { ::signal(SIGPIPE, SIG_IGN); });
    }

    static std::vector<std::string> split_command(std::string_view cmd) {
        std::vector<std::string> out;
        std::istringstream in{std::string(cmd)};
        std::string word;
        while (in >> word) out.push_back(word);
        return out;
    }

    ExecOutcome execute(const Candidate& c, int timeout_s) override {
        if (timeout_s < 1) throw ContractError("timeout_s must be >= 1");
        const std::string request = runner_request(c.source, timeout_s);
        const auto start = std::chrono::steady_clock::now();
        const auto deadline = start + std::chrono::seconds(timeout_s + grace_s_);

        Pipe in_pipe, out_pipe, err_pipe;
        posix_spawn_file_actions_t actions;
        posix_spawn_file_actions_init(&actions);
        posix_spawn_file_actions_adddup2(&actions, in_pipe.read, STDIN_FILENO);
        posix_spawn_file_actions_adddup2(&actions, out_pipe.write, STDOUT_FILENO);
        posix_spawn_file_actions_adddup2(&actions, err_pipe.write, STDERR_FILENO);
        posix_spawnattr_t attr;
        posix_spawnattr_init(&attr);
        posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETPGROUP);
        posix_spawnattr_setpgroup(&attr, 0);

        std::vector<char*> args;
        for (auto& a : argv_) args.push_back(a.data());
        args.push_back(nullptr);
        pid_t pid = 0;
        int rc = posix_spawnp(&pid, args[0], &actions, &attr, args.data(), environ);
        posix_spawn_file_actions_destroy(&actions);
        posix_spawnattr_destroy(&attr);
        if (rc != 0) throw InfrastructureError("cannot start runner '" + argv_[0] + "': " + std::strerror(rc));
        in_pipe.close_read();
        out_pipe.close_write();
        err_pipe.close_write();

        std::string out, err;
        std::size_t written = 0;
        bool killed = false;
        set_nonblocking(in_pipe.write);
        while (out_pipe.read >= 0 || err_pipe.read >= 0) {
            auto now = std::chrono::steady_clock::now();
            if (now >= deadline) {
                kill(-pid, SIGKILL);
                killed = true;
                break;
            }
            std::vector<pollfd> fds;
            if (in_pipe.write >= 0) fds.push_back({in_pipe.write, POLLOUT, 0});
            if (out_pipe.read >= 0) fds.push_back({out_pipe.read, POLLIN, 0});
            if (err_pipe.read >= 0) fds.push_back({err_pipe.read, POLLIN, 0});
            auto wait_ms = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count();
            int n = poll(fds.data(), fds.size(), static_cast<int>(std::min<long long>(wait_ms + 1, 1000)));
            if (n < 0 && errno != EINTR) break;
            for (const auto& p : fds) {
                if (p.revents == 0) continue;
                if (p.fd == in_pipe.write) {
                    if (p.revents & (POLLERR | POLLHUP)) {
                        in_pipe.close_write();
                        continue;
                    }
                    ssize_t w = ::write(p.fd, request.data() + written, request.size() - written);
                    if (w > 0) written += static_cast<std::size_t>(w);
                    if (w < 0 && errno != EAGAIN && errno != EINTR) in_pipe.close_write();
                    if (written == request.size()) in_pipe.close_write();
                } else {
                    char buf[4096];
                    ssize_t r = ::read(p.fd, buf, sizeof buf);
                    std::string& sink = p.fd == out_pipe.read ? out : err;
                    if (r > 0) {
                        sink.append(buf, static_cast<std::size_t>(r));
                    } else if (r == 0 || (errno != EAGAIN && errno != EINTR)) {
                        (p.fd == out_pipe.read ? out_pipe : err_pipe).close_read();
                    }
                }
            }
        }
        in_pipe.close_write();
        int status = 0;
        if (!killed) {
            // Output closed; give the process until the deadline to exit.
            while (waitpid(pid, &status, WNOHANG) == 0) {
                if (std::chrono::steady_clock::now() >= deadline) {
                    kill(-pid, SIGKILL);
                    killed = true;
                    break;
                }
                usleep(2000);
            }
        }
        if (killed) waitpid(pid, &status, 0);
        kill(-pid, SIGKILL);  // stray grandchildren
        const auto elapsed =
            std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();

        if (killed) return ExecOutcome::timeout(elapsed, "runner killed after " + std::to_string(timeout_s + grace_s_) + " s");
        if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
            throw InfrastructureError("runner exited abnormally (status " + std::to_string(status) + "): " +
                                      tail_excerpt(err));
        }
        return classify_reply(out);  // the runner's own duration, so records stay reproducible
    }

private:
    struct Pipe {
        int read = -1;
        int write = -1;
        Pipe() {
            int fds[2];
            if (::pipe2(fds, O_CLOEXEC) != 0) throw InfrastructureError(std::string("pipe: ") + std::strerror(errno));
            read = fds[0];
            write = fds[1];
        }
        Pipe(const Pipe&) = delete;
        Pipe& operator=(const Pipe&) = delete;
        ~Pipe() {
            close_read();
            close_write();
        }
        void close_read() {
            if (read >= 0) ::close(read);
            read = -1;
        }
        void close_write() {
            if (write >= 0) ::close(write);
            write = -1;
        }
    };

    static void set_nonblocking(int fd) {
        if (fd >= 0) ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) | O_NONBLOCK);
    }

    std::vector<std::string> argv_;
    int grace_s_;
};

} // namespace cmh
