#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

namespace ape {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Errors. Each category maps to a distinct CLI exit code.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid or inconsistent configuration (exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A pipeline stage was invoked before its prerequisites exist (exit code 3).
class StageError : public Error {
public:
    using Error::Error;
};

/// Transport or protocol failure talking to a model backend (exit code 4).
class BackendError : public Error {
public:
    using Error::Error;
};

/// Malformed or contract-violating data (exit code 5).
class DataError : public Error {
public:
    using Error::Error;
};

class TemplateError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

/// A reported score falls outside the rubric's declared scale.
class ScoreRangeError : public DataError {
public:
    using DataError::DataError;
};

inline void log_warn(const std::string& msg) {
    std::cerr << "[ape warn] " << msg << "\n";
}

// ---------------------------------------------------------------------------
// Stable content hashing (128-bit FNV-1a, hex). Used for cache keys and
// stage fingerprints; stable across platforms and runs.
// ---------------------------------------------------------------------------

class ContentHash {
public:
    ContentHash& feed(std::string_view bytes) {
        for (unsigned char c : bytes) {
            lo_ = (lo_ ^ c) * kPrime;
            hi_ = (hi_ ^ c) * kPrime2;
        }
        return feed_sep();
    }

    ContentHash& feed(std::int64_t v) { return feed(std::to_string(v)); }

    ContentHash& feed(double v) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return feed(std::string_view(buf));
    }

    std::string hex() const {
        char buf[33];
        std::snprintf(buf, sizeof(buf), "%016llx%016llx",
                      static_cast<unsigned long long>(hi_),
                      static_cast<unsigned long long>(lo_));
        return std::string(buf);
    }

private:
    // A field separator keeps ("ab","c") distinct from ("a","bc").
    ContentHash& feed_sep() {
        lo_ = (lo_ ^ 0x1f) * kPrime;
        hi_ = (hi_ ^ 0x1f) * kPrime2;
        return *this;
    }

    static constexpr std::uint64_t kPrime = 1099511628211ULL;
    static constexpr std::uint64_t kPrime2 = 1099511628211ULL;
    std::uint64_t lo_ = 14695981039346656037ULL;
    std::uint64_t hi_ = 0x9e3779b97f4a7c15ULL;
};

inline std::string hash_bytes(std::string_view bytes) {
    return ContentHash().feed(bytes).hex();
}

// ---------------------------------------------------------------------------
// File helpers
// ---------------------------------------------------------------------------

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path.string());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

/// Write via temp file + rename so readers never observe partial content.
inline void atomic_write_file(const fs::path& path, std::string_view content) {
    fs::create_directories(path.parent_path().empty() ? fs::path(".")
                                                      : path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write file: " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw DataError("short write: " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline std::string hash_file(const fs::path& path) {
    return hash_bytes(read_file(path));
}

// ---------------------------------------------------------------------------
// JSONL
// ---------------------------------------------------------------------------

/// Parses one JSON object per nonempty line. Errors carry the 1-based line
/// number.
inline std::vector<json> read_jsonl(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path.string());
    std::vector<json> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            throw DataError("malformed record at line " + std::to_string(lineno) + " of " +
                            path.string());
        }
        out.push_back(std::move(j));
    }
    return out;
}

inline std::string to_jsonl(const std::vector<json>& records) {
    std::string out;
    for (const auto& r : records) {
        out += r.dump();
        out += '\n';
    }
    return out;
}

inline void write_jsonl(const fs::path& path, const std::vector<json>& records) {
    atomic_write_file(path, to_jsonl(records));
}

// ---------------------------------------------------------------------------
// Concurrency helpers
// ---------------------------------------------------------------------------

/// Counting semaphore with a runtime-chosen limit.
class Semaphore {
public:
    explicit Semaphore(std::size_t count) : count_(count) {}

    void acquire() {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return count_ > 0; });
        --count_;
    }

    void release() {
        {
            std::lock_guard lock(mu_);
            ++count_;
        }
        cv_.notify_one();
    }

private:
    std::mutex mu_;
    std::condition_variable cv_;
    std::size_t count_;
};

class SemaphoreGuard {
public:
    explicit SemaphoreGuard(Semaphore& s) : s_(s) { s_.acquire(); }
    ~SemaphoreGuard() { s_.release(); }
    SemaphoreGuard(const SemaphoreGuard&) = delete;
    SemaphoreGuard& operator=(const SemaphoreGuard&) = delete;

private:
    Semaphore& s_;
};

/// Runs fn(i) for i in [0, n) on up to `workers` threads. The first exception
/// is rethrown after all workers join.
inline void parallel_for(std::size_t n, std::size_t workers,
                         const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex err_mu;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(err_mu);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace ape
