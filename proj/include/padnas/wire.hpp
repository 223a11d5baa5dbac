#pragma once

// Client side of the external evaluator protocol: newline-delimited JSON
// records over a child-process pipe or a TCP connection.
//
//   request   {"v":1,"id":N,"arch":["op",...]}
//   response  {"v":1,"id":N,"acc":float} | {"v":1,"id":N,"error":"msg"}
//   hello     {"v":1,"id":N,"hello":{"seed":S,"space":{...}}}      -> {"v":1,"id":N,"ok":true}
//   directive {"v":1,"id":N,"directive":"train"|"finetune"|"rebind",
//              "epochs":E, "space":{...}}                           -> {"v":1,"id":N,"ok":true}
//   shutdown  {"v":1,"id":N,"shutdown":true}                         (no response)
//
// Responses may arrive in any order and are matched by id.

#include "padnas/common.hpp"
#include "padnas/search_space.hpp"

#include <nlohmann/json.hpp>

#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

namespace padnas {

inline constexpr int kProtocolVersion = 1;

struct ExternalConfig {
    /// argv of a child evaluator speaking the protocol on stdin/stdout.
    std::vector<std::string> command;
    /// Used when command is empty.
    std::string host = "127.0.0.1";
    int port = 0;
    int timeout_ms = 30000;
    int max_retries = 2;

    bool operator==(const ExternalConfig&) const = default;
};

//----------------------------------------------------------------------------//
// Transports
//----------------------------------------------------------------------------//

/// Line-oriented duplex channel over a pair of file descriptors.
class LineTransport {
public:
    LineTransport(const LineTransport&) = delete;
    LineTransport& operator=(const LineTransport&) = delete;
    virtual ~LineTransport() { close_fds(); }

    void write_line(const std::string& line) {
        std::string data = line + "\n";
        const char* p = data.data();
        std::size_t left = data.size();
        while (left > 0) {
            ssize_t n = write_some(p, left);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw OracleError(std::string("evaluator write failed: ") + std::strerror(errno));
            }
            p += n;
            left -= static_cast<std::size_t>(n);
        }
    }

    /// Next complete line, or nullopt if none arrived within timeout_ms.
    std::optional<std::string> read_line(int timeout_ms) {
        const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
        for (;;) {
            if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
                std::string line = buffer_.substr(0, nl);
                buffer_.erase(0, nl + 1);
                return line;
            }
            const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
                deadline - std::chrono::steady_clock::now());
            if (remaining.count() <= 0) return std::nullopt;
            pollfd pfd{read_fd_, POLLIN, 0};
            int rc = ::poll(&pfd, 1, static_cast<int>(remaining.count()));
            if (rc < 0) {
                if (errno == EINTR) continue;
                throw OracleError(std::string("evaluator poll failed: ") + std::strerror(errno));
            }
            if (rc == 0) return std::nullopt;
            char chunk[4096];
            ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
            if (n < 0) {
                if (errno == EINTR || errno == EAGAIN) continue;
                throw OracleError(std::string("evaluator read failed: ") + std::strerror(errno));
            }
            if (n == 0) throw OracleError("evaluator closed the connection");
            buffer_.append(chunk, static_cast<std::size_t>(n));
        }
    }

protected:
    LineTransport(int read_fd, int write_fd) : read_fd_(read_fd), write_fd_(write_fd) {}

    virtual ssize_t write_some(const char* p, std::size_t n) { return ::write(write_fd_, p, n); }

    void close_fds() {
        if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
        if (read_fd_ >= 0) ::close(read_fd_);
        read_fd_ = write_fd_ = -1;
    }

    int read_fd_;
    int write_fd_;

private:
    std::string buffer_;
};

/// Spawns the evaluator and talks to it over its stdin/stdout.
class PipeTransport final : public LineTransport {
public:
    explicit PipeTransport(const std::vector<std::string>& argv) : LineTransport(-1, -1) {
        if (argv.empty()) throw ConfigError("external evaluator command is empty");
        std::signal(SIGPIPE, SIG_IGN);
        int to_child[2], from_child[2];
        if (::pipe(to_child) != 0 || ::pipe(from_child) != 0)
            throw OracleError(std::string("pipe failed: ") + std::strerror(errno));
        pid_ = ::fork();
        if (pid_ < 0) throw OracleError(std::string("fork failed: ") + std::strerror(errno));
        if (pid_ == 0) {
            ::dup2(to_child[0], STDIN_FILENO);
            ::dup2(from_child[1], STDOUT_FILENO);
            ::close(to_child[0]);
            ::close(to_child[1]);
            ::close(from_child[0]);
            ::close(from_child[1]);
            std::vector<char*> args;
            for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
            args.push_back(nullptr);
            ::execvp(args[0], args.data());
            ::_exit(127);
        }
        ::close(to_child[0]);
        ::close(from_child[1]);
        write_fd_ = to_child[1];
        read_fd_ = from_child[0];
    }

    ~PipeTransport() override {
        close_fds();
        if (pid_ > 0) {
            int status = 0;
            for (int i = 0; i < 50; ++i) {
                if (::waitpid(pid_, &status, WNOHANG) != 0) return;
                ::usleep(20000);
            }
            ::kill(pid_, SIGKILL);
            ::waitpid(pid_, &status, 0);
        }
    }

private:
    pid_t pid_ = -1;
};

class TcpTransport final : public LineTransport {
public:
    TcpTransport(const std::string& host, int port) : LineTransport(-1, -1) {
        addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        const std::string service = std::to_string(port);
        if (int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0)
            throw OracleError("cannot resolve " + host + ": " + ::gai_strerror(rc));
        int fd = -1;
        for (addrinfo* ai = res; ai; ai = ai->ai_next) {
            fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
            if (fd < 0) continue;
            if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
            ::close(fd);
            fd = -1;
        }
        ::freeaddrinfo(res);
        if (fd < 0) throw OracleError("cannot connect to evaluator at " + host + ":" + service);
        read_fd_ = write_fd_ = fd;
    }

protected:
    ssize_t write_some(const char* p, std::size_t n) override {
        return ::send(write_fd_, p, n, MSG_NOSIGNAL);
    }
};

inline std::unique_ptr<LineTransport> open_transport(const ExternalConfig& cfg) {
    if (!cfg.command.empty()) return std::make_unique<PipeTransport>(cfg.command);
    if (cfg.port <= 0) throw ConfigError("external evaluator needs a command or a TCP port");
    return std::make_unique<TcpTransport>(cfg.host, cfg.port);
}

//----------------------------------------------------------------------------//
// Client
//----------------------------------------------------------------------------//

class EvaluatorClient {
public:
    EvaluatorClient(std::unique_ptr<LineTransport> transport, int timeout_ms, int max_retries)
        : transport_(std::move(transport)), timeout_ms_(timeout_ms), max_retries_(max_retries) {}

    explicit EvaluatorClient(const ExternalConfig& cfg)
        : EvaluatorClient(open_transport(cfg), cfg.timeout_ms, cfg.max_retries) {}

    ~EvaluatorClient() {
        try {
            shutdown();
        } catch (...) {
        }
    }

    void hello(std::uint64_t seed, const SearchSpace& space) {
        control({{"hello", {{"seed", seed}, {"space", space_to_json(space)}}}});
    }

    void directive(const std::string& name, int epochs, const SearchSpace& space) {
        control({{"directive", name}, {"epochs", epochs}, {"space", space_to_json(space)}});
    }

    /// Pipelines every request, then gathers responses by id.
    std::vector<double> evaluate(std::span<const Architecture> archs) {
        std::lock_guard lock(mu_);
        std::map<std::uint64_t, std::size_t> pending;
        std::map<std::uint64_t, std::string> wire;
        for (std::size_t i = 0; i < archs.size(); ++i) {
            const std::uint64_t id = next_id_++;
            nlohmann::json req = {{"v", kProtocolVersion}, {"id", id}, {"arch", archs[i].choices}};
            wire[id] = req.dump();
            pending[id] = i;
            transport_->write_line(wire[id]);
        }
        std::vector<double> out(archs.size(), 0.0);
        gather(pending, wire, [&](std::uint64_t id, const nlohmann::json& rsp) {
            const std::size_t i = pending.at(id);
            if (rsp.contains("error"))
                throw OracleError("evaluator error for " + archs[i].to_string() + ": " +
                                  rsp["error"].get<std::string>());
            if (!rsp.contains("acc") || !rsp["acc"].is_number())
                throw ProtocolError("response " + std::to_string(id) + " lacks 'acc'");
            const double acc = rsp["acc"].get<double>();
            if (!(acc >= 0.0 && acc <= 1.0))
                throw OracleError("evaluator accuracy out of [0,1] for " + archs[i].to_string());
            out[i] = acc;
        });
        return out;
    }

    void shutdown() {
        std::lock_guard lock(mu_);
        if (closed_) return;
        closed_ = true;
        nlohmann::json msg = {{"v", kProtocolVersion}, {"id", next_id_++}, {"shutdown", true}};
        transport_->write_line(msg.dump());
    }

private:
    void control(nlohmann::json body) {
        std::lock_guard lock(mu_);
        const std::uint64_t id = next_id_++;
        body["v"] = kProtocolVersion;
        body["id"] = id;
        std::map<std::uint64_t, std::size_t> pending{{id, 0}};
        std::map<std::uint64_t, std::string> wire{{id, body.dump()}};
        transport_->write_line(wire[id]);
        gather(pending, wire, [&](std::uint64_t, const nlohmann::json& rsp) {
            if (rsp.contains("error"))
                throw OracleError("evaluator rejected control message: " +
                                  rsp["error"].get<std::string>());
        });
    }

    template <typename OnResponse>
    void gather(std::map<std::uint64_t, std::size_t> pending, const std::map<std::uint64_t, std::string>& wire,
                OnResponse&& on_response) {
        int retries = 0;
        while (!pending.empty()) {
            auto line = transport_->read_line(timeout_ms_);
            if (!line) {
                if (retries++ >= max_retries_)
                    throw OracleError("evaluator timed out with " + std::to_string(pending.size()) +
                                      " pending requests");
                for (const auto& [id, _] : pending) transport_->write_line(wire.at(id));
                continue;
            }
            nlohmann::json rsp;
            try {
                rsp = nlohmann::json::parse(*line);
            } catch (const nlohmann::json::exception&) {
                throw ProtocolError("malformed evaluator record: " + *line);
            }
            if (!rsp.is_object() || !rsp.contains("v") || !rsp.contains("id"))
                throw ProtocolError("evaluator record lacks v/id: " + *line);
            if (rsp["v"] != kProtocolVersion)
                throw ProtocolError("protocol version mismatch: got " + rsp["v"].dump() + ", want " +
                                    std::to_string(kProtocolVersion));
            const auto id = rsp["id"].get<std::uint64_t>();
            if (!pending.count(id)) {
                if (id < next_id_) continue;  // late duplicate of a retried request
                throw ProtocolError("response for unknown id " + std::to_string(id));
            }
            on_response(id, rsp);
            pending.erase(id);
        }
    }

    std::unique_ptr<LineTransport> transport_;
    int timeout_ms_;
    int max_retries_;
    std::uint64_t next_id_ = 1;
    bool closed_ = false;
    std::mutex mu_;
};

}  // namespace padnas
