#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>

#include <json.hpp>

#include "ordex/common.hpp"

namespace ordex::cli {

// Fully resolved run configuration as a flat string map (defaults, config
// file, and command-line flags already merged). Typed getters name the flag
// they were reading when they fail.
struct RunConfig {
    std::map<std::string, std::string> values;

    void set(const std::string& key, std::string value) { values[key] = std::move(value); }

    bool has(const std::string& key) const { return values.count(key) > 0; }

    const std::string& get(const std::string& key) const {
        auto it = values.find(key);
        if (it == values.end()) throw ConfigError("--" + key + " is required");
        return it->second;
    }

    std::string get_or(const std::string& key, const std::string& fallback) const {
        auto it = values.find(key);
        return it == values.end() ? fallback : it->second;
    }

    uint64_t get_u64(const std::string& key) const {
        const std::string& s = get(key);
        try {
            size_t used = 0;
            const uint64_t v = std::stoull(s, &used);
            if (used != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("--" + key + " expects an unsigned integer, got '" + s + "'");
        }
    }

    size_t get_size(const std::string& key) const {
        return static_cast<size_t>(get_u64(key));
    }

    double get_double(const std::string& key) const {
        const std::string& s = get(key);
        try {
            size_t used = 0;
            const double v = std::stod(s, &used);
            if (used != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("--" + key + " expects a number, got '" + s + "'");
        }
    }

    bool get_bool(const std::string& key) const {
        const std::string& s = get(key);
        if (s == "true" || s == "1") return true;
        if (s == "false" || s == "0") return false;
        throw ConfigError("--" + key + " expects true or false, got '" + s + "'");
    }

    nlohmann::json to_json() const { return values; }

    static RunConfig from_json(const nlohmann::json& j) {
        RunConfig c;
        for (const auto& [k, v] : j.items()) c.values[k] = v.get<std::string>();
        return c;
    }
};

// Collects a run's outputs under its directory and writes manifest.json last,
// with a content hash per output. A run that dies before finalize leaves no
// manifest, which is the failure signal.
class RunWriter {
public:
    RunWriter(std::string command, RunConfig config)
        : command_(std::move(command)), config_(std::move(config)) {
        dir_ = config_.get("out");
        std::filesystem::create_directories(dir_);
    }

    const std::string& dir() const { return dir_; }
    const RunConfig& config() const { return config_; }

    // Registers (and returns) the path for a named output file. The file must
    // exist by finalize time.
    std::string path(const std::string& name) {
        outputs_.insert(name);
        return (std::filesystem::path(dir_) / name).string();
    }

    nlohmann::json finalize() {
        nlohmann::json outputs = nlohmann::json::object();
        for (const auto& name : outputs_) {
            const auto p = (std::filesystem::path(dir_) / name).string();
            outputs[name] = {{"path", name}, {"hash", util::hash_file(p)}};
        }
        nlohmann::json manifest = {{"format_version", 1},
                                   {"command", command_},
                                   {"config", config_.to_json()},
                                   {"outputs", std::move(outputs)}};
        const auto manifest_path = (std::filesystem::path(dir_) / "manifest.json").string();
        std::ofstream out(manifest_path);
        if (!out) throw IoError("cannot write manifest: " + manifest_path);
        out << manifest.dump(2) << "\n";
        if (!out) throw IoError("failed writing manifest: " + manifest_path);
        return manifest;
    }

private:
    std::string command_;
    RunConfig config_;
    std::string dir_;
    std::set<std::string> outputs_;
};

inline nlohmann::json load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path);
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("bad manifest " + path + ": " + e.what());
    }
    if (manifest.value("format_version", 0) != 1)
        throw ParseError("unsupported manifest format in " + path);
    return manifest;
}

} // namespace ordex::cli
