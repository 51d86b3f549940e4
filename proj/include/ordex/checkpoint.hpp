#pragma once

#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ordex/common.hpp"
#include "ordex/tensor.hpp"

namespace ordex::nn {

inline constexpr int kCheckpointFormatVersion = 1;

inline nlohmann::json params_to_json(const ParameterSet& params) {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [name, tensor] : params.items()) {
        out[name] = {{"shape", tensor.shape()}, {"values", tensor.values()}};
    }
    return out;
}

inline ParameterSet params_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ParseError("checkpoint params must be an object");
    ParameterSet params;
    for (const auto& [name, entry] : j.items()) {
        if (!entry.contains("shape") || !entry.contains("values"))
            throw ParseError("checkpoint parameter " + name + " missing shape or values");
        std::vector<size_t> shape = entry.at("shape").get<std::vector<size_t>>();
        std::vector<double> values = entry.at("values").get<std::vector<double>>();
        if (Tensor::count(shape) != values.size())
            throw ParseError("checkpoint parameter " + name + " shape/values mismatch");
        params.add(name, shape).values() = std::move(values);
    }
    return params;
}

// Writes {"format_version", "meta", "params"}. The meta object carries the
// model's own hyperparameters so a checkpoint loads without external context.
inline void save_checkpoint(const std::string& path, const ParameterSet& params,
                            const nlohmann::json& meta = nlohmann::json::object()) {
    nlohmann::json doc;
    doc["format_version"] = kCheckpointFormatVersion;
    doc["meta"] = meta;
    doc["params"] = params_to_json(params);
    std::ofstream out(path);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out << doc.dump(2) << "\n";
    if (!out) throw IoError("failed writing checkpoint: " + path);
}

inline std::pair<ParameterSet, nlohmann::json> load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("malformed checkpoint " + path + ": " + e.what());
    }
    if (!doc.contains("format_version") ||
        doc.at("format_version").get<int>() != kCheckpointFormatVersion)
        throw ParseError("unsupported checkpoint format in " + path);
    ParameterSet params = params_from_json(doc.value("params", nlohmann::json::object()));
    return {std::move(params), doc.value("meta", nlohmann::json::object())};
}

} // namespace ordex::nn
