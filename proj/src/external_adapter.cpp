#include "shapex/model.hpp"

#include <cerrno>
#include <cmath>
#include <csignal>
#include <cstring>
#include <fcntl.h>
#include <mutex>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

namespace shapex {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

constexpr std::size_t kStderrCap = 64 * 1024;

void ignore_sigpipe() {
    static std::once_flag once;
    std::call_once(once, [] { std::signal(SIGPIPE, SIG_IGN); });
}

void set_nonblocking(int fd) { ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) | O_NONBLOCK); }

void close_fd(int& fd) noexcept {
    if (fd >= 0) ::close(fd);
    fd = -1;
}

} // namespace

ExternalClassifier::ExternalClassifier(std::string command, std::size_t num_classes,
                                       std::chrono::milliseconds timeout)
    : command_(std::move(command)), timeout_(timeout), num_classes_(num_classes) {
    ignore_sigpipe();
    int in_pipe[2], out_pipe[2], err_pipe[2];
    if (::pipe2(in_pipe, O_CLOEXEC) != 0) throw AdapterError("pipe failed");
    if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
        ::close(in_pipe[0]);
        ::close(in_pipe[1]);
        throw AdapterError("pipe failed");
    }
    if (::pipe2(err_pipe, O_CLOEXEC) != 0) {
        for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) ::close(fd);
        throw AdapterError("pipe failed");
    }
    pid_ = ::fork();
    if (pid_ < 0) {
        for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1], err_pipe[0], err_pipe[1]}) ::close(fd);
        throw AdapterError("fork failed");
    }
    if (pid_ == 0) {
        ::dup2(in_pipe[0], STDIN_FILENO);
        ::dup2(out_pipe[1], STDOUT_FILENO);
        ::dup2(err_pipe[1], STDERR_FILENO);
        std::signal(SIGPIPE, SIG_DFL);
        ::execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
        ::_exit(127);
    }
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    ::close(err_pipe[1]);
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    err_child_ = err_pipe[0];
    set_nonblocking(to_child_);
    set_nonblocking(from_child_);
    set_nonblocking(err_child_);
}

ExternalClassifier::~ExternalClassifier() { shutdown(); }

void ExternalClassifier::shutdown() noexcept {
    close_fd(to_child_);
    if (pid_ > 0) {
        // Give the child a moment to exit on EOF before killing it.
        int status = 0;
        for (int i = 0; i < 50; ++i) {
            if (::waitpid(pid_, &status, WNOHANG) == pid_) {
                pid_ = -1;
                break;
            }
            ::usleep(2000);
        }
        if (pid_ > 0) {
            ::kill(pid_, SIGKILL);
            ::waitpid(pid_, &status, 0);
            pid_ = -1;
        }
    }
    close_fd(from_child_);
    close_fd(err_child_);
}

std::size_t ExternalClassifier::num_classes() const {
    std::lock_guard lock(mu_);
    return num_classes_;
}

void ExternalClassifier::drain_stderr() const {
    if (err_child_ < 0) return;
    char buf[4096];
    while (true) {
        const ssize_t n = ::read(err_child_, buf, sizeof buf);
        if (n <= 0) break;
        if (stderr_buf_.size() < kStderrCap) stderr_buf_.append(buf, std::size_t(n));
    }
}

void ExternalClassifier::fail_dead(const std::string& what) const {
    broken_ = true;
    // Collect whatever the child wrote before it went away.
    const auto deadline = Clock::now() + std::chrono::milliseconds(200);
    while (err_child_ >= 0 && Clock::now() < deadline) {
        pollfd p{err_child_, POLLIN, 0};
        if (::poll(&p, 1, 20) <= 0) continue;
        char buf[4096];
        const ssize_t n = ::read(err_child_, buf, sizeof buf);
        if (n <= 0) break;
        if (stderr_buf_.size() < kStderrCap) stderr_buf_.append(buf, std::size_t(n));
    }
    std::string msg = "external model '" + command_ + "' " + what;
    if (!stderr_buf_.empty()) msg += "; stderr: " + stderr_buf_;
    throw AdapterError(msg);
}

std::vector<double> ExternalClassifier::predict_proba(std::span<const double> x) const {
    const std::vector<double> one(x.begin(), x.end());
    return predict_batch(std::span(&one, 1)).front();
}

std::vector<std::vector<double>> ExternalClassifier::predict_batch(std::span<const std::vector<double>> xs) const {
    std::lock_guard lock(mu_);
    if (broken_) throw AdapterError("external model '" + command_ + "' is no longer usable");
    if (xs.empty()) return {};

    const std::uint64_t first_id = next_id_;
    std::string request;
    for (const auto& x : xs) {
        request += json{{"id", next_id_++}, {"series", x}}.dump();
        request += '\n';
    }

    std::vector<std::vector<double>> replies;
    replies.reserve(xs.size());
    std::size_t written = 0;
    const auto deadline = Clock::now() + timeout_;

    while (replies.size() < xs.size()) {
        // Complete lines already buffered.
        std::size_t nl;
        while (replies.size() < xs.size() && (nl = stdout_buf_.find('\n')) != std::string::npos) {
            std::string line = stdout_buf_.substr(0, nl);
            stdout_buf_.erase(0, nl + 1);
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) {
                broken_ = true;
                throw ProtocolError("external model sent an empty reply line");
            }
            json reply;
            try {
                reply = json::parse(line);
            } catch (const json::exception&) {
                broken_ = true;
                throw ProtocolError("external model reply is not JSON: " + line);
            }
            const std::uint64_t want = first_id + replies.size();
            if (!reply.is_object() || !reply.contains("id") || !reply.contains("probs") ||
                !reply["id"].is_number_integer() || reply["id"].get<std::uint64_t>() != want ||
                !reply["probs"].is_array()) {
                broken_ = true;
                throw ProtocolError("external model reply malformed or out of order: " + line);
            }
            std::vector<double> probs;
            try {
                probs = reply["probs"].get<std::vector<double>>();
            } catch (const json::exception&) {
                broken_ = true;
                throw ProtocolError("external model probabilities are not numbers: " + line);
            }
            double sum = 0.0;
            bool ok = !probs.empty();
            for (double p : probs) {
                ok = ok && std::isfinite(p) && p >= 0.0;
                sum += p;
            }
            if (!ok || std::abs(sum - 1.0) > 1e-6) {
                broken_ = true;
                throw ProtocolError("external model returned an invalid distribution: " + line);
            }
            if (num_classes_ == 0) num_classes_ = probs.size();
            if (probs.size() != num_classes_) {
                broken_ = true;
                throw ProtocolError("external model changed its class count");
            }
            replies.push_back(std::move(probs));
        }
        if (replies.size() == xs.size()) break;

        const auto now = Clock::now();
        if (now >= deadline) {
            broken_ = true;
            throw AdapterTimeout("external model '" + command_ + "' timed out");
        }
        const int wait_ms =
            int(std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count()) + 1;

        pollfd fds[3];
        nfds_t nfds = 0;
        fds[nfds++] = {from_child_, POLLIN, 0};
        fds[nfds++] = {err_child_, POLLIN, 0};
        const bool writing = written < request.size();
        if (writing) fds[nfds++] = {to_child_, POLLOUT, 0};
        const int rc = ::poll(fds, nfds, wait_ms);
        if (rc < 0) {
            if (errno == EINTR) continue;
            fail_dead("poll failed");
        }
        if (fds[1].revents & (POLLIN | POLLHUP)) drain_stderr();
        if (writing && (fds[2].revents & (POLLOUT | POLLERR | POLLHUP))) {
            const ssize_t n = ::write(to_child_, request.data() + written, request.size() - written);
            if (n < 0 && errno != EAGAIN && errno != EINTR) fail_dead("closed its input");
            if (n > 0) written += std::size_t(n);
        }
        if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) {
            char buf[65536];
            const ssize_t n = ::read(from_child_, buf, sizeof buf);
            if (n > 0) {
                stdout_buf_.append(buf, std::size_t(n));
            } else if (n == 0) {
                // EOF: keep parsing what is buffered, then report death.
                if (stdout_buf_.find('\n') == std::string::npos) fail_dead("exited before replying");
            } else if (errno != EAGAIN && errno != EINTR) {
                fail_dead("output read failed");
            }
        }
    }
    return replies;
}

} // namespace shapex
