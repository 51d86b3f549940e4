#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ordex {

// Error taxonomy. Everything user-facing derives from Error so the CLI can
// report a category next to the message.
class Error : public std::runtime_error {
public:
    Error(std::string_view kind, const std::string& msg)
        : std::runtime_error(std::string(kind) + ": " + msg), kind_(kind) {}
    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

struct ParseError : Error {
    explicit ParseError(const std::string& m) : Error("parse error", m) {}
};
struct ValidationError : Error {
    explicit ValidationError(const std::string& m) : Error("validation error", m) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error("configuration error", m) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& m) : Error("numeric error", m) {}
};
struct ContractViolation : Error {
    explicit ContractViolation(const std::string& m) : Error("contract violation", m) {}
};
struct IoError : Error {
    explicit IoError(const std::string& m) : Error("io error", m) {}
};
struct TruncationError : Error {
    explicit TruncationError(const std::string& m) : Error("truncation error", m) {}
};
struct AlignmentError : Error {
    explicit AlignmentError(const std::string& m) : Error("alignment error", m) {}
};

namespace util {

enum class LogLevel : int { Quiet = 0, Warn = 1, Info = 2, Debug = 3 };

// Verbosity comes from ORDEX_LOG (quiet|warn|info|debug), read once.
inline LogLevel log_level() {
    static LogLevel level = [] {
        const char* v = std::getenv("ORDEX_LOG");
        if (!v) return LogLevel::Warn;
        std::string s(v);
        if (s == "quiet") return LogLevel::Quiet;
        if (s == "info") return LogLevel::Info;
        if (s == "debug") return LogLevel::Debug;
        return LogLevel::Warn;
    }();
    return level;
}

inline void log_warn(const std::string& msg) {
    if (log_level() >= LogLevel::Warn) std::fprintf(stderr, "[warn] %s\n", msg.c_str());
}
inline void log_info(const std::string& msg) {
    if (log_level() >= LogLevel::Info) std::fprintf(stderr, "[info] %s\n", msg.c_str());
}
inline void log_debug(const std::string& msg) {
    if (log_level() >= LogLevel::Debug) std::fprintf(stderr, "[debug] %s\n", msg.c_str());
}

// Shortest decimal string that parses back to the same double, for logs and
// reports that must survive a write/read round trip.
inline std::string double_to_string(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) return "nan";
    return std::string(buf, ptr);
}

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 1469598103934665603ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 1469598103934665603ULL) {
    return fnv1a64(s.data(), s.size(), h);
}

inline std::string to_hex(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// Content hash of a file as a 16-hex-digit string, for artifact manifests.
inline std::string hash_file(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open file for hashing: " + path);
    uint64_t h = 1469598103934665603ULL;
    char buf[1 << 16];
    size_t n;
    while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) h = fnv1a64(buf, n, h);
    std::fclose(f);
    return to_hex(h);
}

} // namespace util
} // namespace ordex
