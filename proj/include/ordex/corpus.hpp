#pragma once

#include <algorithm>
#include <cctype>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ordex/common.hpp"
#include "ordex/rng.hpp"

namespace ordex::corpus {

// Inclusive token-index range. Character offsets are derived on demand and
// never stored.
struct Span {
    size_t start = 0;
    size_t end = 0;

    auto operator<=>(const Span&) const = default;
};

struct Schema {
    std::string type_name;
    std::vector<std::string> roles;

    bool operator==(const Schema&) const = default;

    void validate() const {
        if (type_name.empty()) throw ValidationError("schema type name empty");
        if (roles.empty()) throw ValidationError("schema " + type_name + " has no roles");
        std::set<std::string> seen(roles.begin(), roles.end());
        if (seen.size() != roles.size())
            throw ValidationError("schema " + type_name + " repeats a role name");
    }

    bool has_role(const std::string& role) const {
        return std::find(roles.begin(), roles.end(), role) != roles.end();
    }

    size_t role_index(const std::string& role) const {
        auto it = std::find(roles.begin(), roles.end(), role);
        if (it == roles.end())
            throw ValidationError("schema " + type_name + " has no role " + role);
        return static_cast<size_t>(it - roles.begin());
    }
};

class SchemaRegistry {
public:
    void add(Schema schema) {
        schema.validate();
        auto [it, inserted] = schemas_.emplace(schema.type_name, std::move(schema));
        if (!inserted) throw ValidationError("duplicate schema type: " + it->first);
    }

    bool contains(const std::string& type_name) const { return schemas_.count(type_name) > 0; }

    const Schema& get(const std::string& type_name) const {
        auto it = schemas_.find(type_name);
        if (it == schemas_.end()) throw ValidationError("unknown schema type: " + type_name);
        return it->second;
    }

    size_t size() const { return schemas_.size(); }

    const std::map<std::string, Schema>& items() const { return schemas_; }

    nlohmann::json to_json() const {
        nlohmann::json list = nlohmann::json::array();
        for (const auto& [type, schema] : schemas_) {
            nlohmann::json entry = {{"type", type}, {"roles", schema.roles}};
            list.push_back(std::move(entry));
        }
        return {{"schemas", list}};
    }

    static SchemaRegistry from_json(const nlohmann::json& j) {
        SchemaRegistry reg;
        if (!j.contains("schemas") || !j.at("schemas").is_array())
            throw ParseError("schema registry needs a \"schemas\" array");
        for (const auto& entry : j.at("schemas")) {
            Schema s;
            s.type_name = entry.at("type").get<std::string>();
            s.roles = entry.at("roles").get<std::vector<std::string>>();
            reg.add(std::move(s));
        }
        return reg;
    }

private:
    std::map<std::string, Schema> schemas_;
};

inline SchemaRegistry load_registry(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open schema registry: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("malformed schema registry " + path + ": " + e.what());
    }
    return SchemaRegistry::from_json(j);
}

inline void save_registry(const std::string& path, const SchemaRegistry& registry) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open schema registry for writing: " + path);
    out << registry.to_json().dump(2) << "\n";
}

// One gold assignment of every schema role to a span or to the explicit
// no-argument marker (nullopt, serialized as JSON null).
struct Tuple {
    std::map<std::string, std::optional<Span>> assignments;

    bool operator==(const Tuple&) const = default;
};

struct Instance {
    std::string id;
    std::string text;
    std::vector<std::string> tokens;
    std::string schema_ref;
    std::vector<Tuple> gold_tuples;

    bool operator==(const Instance&) const = default;
};

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

namespace detail {

// Decodes the UTF-8 code point starting at byte i. Invalid bytes are treated
// as single Latin-1 characters rather than rejected.
inline std::pair<uint32_t, size_t> next_codepoint(const std::string& s, size_t i) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    size_t len = 1;
    uint32_t cp = b0;
    if ((b0 & 0x80u) == 0x00u) {
        len = 1;
    } else if ((b0 & 0xE0u) == 0xC0u) {
        len = 2;
        cp = b0 & 0x1Fu;
    } else if ((b0 & 0xF0u) == 0xE0u) {
        len = 3;
        cp = b0 & 0x0Fu;
    } else if ((b0 & 0xF8u) == 0xF0u) {
        len = 4;
        cp = b0 & 0x07u;
    } else {
        return {b0, 1};
    }
    if (i + len > s.size()) return {b0, 1};
    for (size_t k = 1; k < len; ++k) {
        const auto bk = static_cast<unsigned char>(s[i + k]);
        if ((bk & 0xC0u) != 0x80u) return {b0, 1};
        cp = (cp << 6) | (bk & 0x3Fu);
    }
    return {cp, len};
}

inline bool is_space_cp(uint32_t cp) {
    return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == 0x00A0 || cp == 0x3000;
}

inline bool is_cjk_cp(uint32_t cp) {
    return (cp >= 0x3040 && cp <= 0x30FF) || (cp >= 0x3400 && cp <= 0x4DBF) ||
           (cp >= 0x4E00 && cp <= 0x9FFF) || (cp >= 0xF900 && cp <= 0xFAFF);
}

inline bool is_punct_cp(uint32_t cp) {
    if (cp < 0x80) {
        const char c = static_cast<char>(cp);
        return std::ispunct(static_cast<unsigned char>(c)) != 0;
    }
    return (cp >= 0x3001 && cp <= 0x303F) || (cp >= 0xFF00 && cp <= 0xFFEF);
}

} // namespace detail

// Deterministic tokenizer: whitespace-separated words for Latin text, one
// token per character for CJK, punctuation always split off on its own.
inline std::vector<std::string> default_tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            tokens.push_back(word);
            word.clear();
        }
    };
    for (size_t i = 0; i < text.size();) {
        auto [cp, len] = detail::next_codepoint(text, i);
        const std::string piece = text.substr(i, len);
        if (detail::is_space_cp(cp)) {
            flush();
        } else if (detail::is_cjk_cp(cp) || detail::is_punct_cp(cp)) {
            flush();
            tokens.push_back(piece);
        } else {
            word += piece;
        }
        i += len;
    }
    flush();
    return tokens;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += tokens[i];
    }
    return out;
}

// Byte ranges [begin, end) of each token within the instance text, found by
// greedy left-to-right matching. Throws when tokens cannot be realigned.
inline std::vector<std::pair<size_t, size_t>> token_offsets(const Instance& inst) {
    std::vector<std::pair<size_t, size_t>> offsets;
    offsets.reserve(inst.tokens.size());
    size_t cursor = 0;
    for (const auto& tok : inst.tokens) {
        const size_t pos = inst.text.find(tok, cursor);
        if (pos == std::string::npos)
            throw AlignmentError("instance " + inst.id + ": token \"" + tok +
                                 "\" not found in text");
        offsets.emplace_back(pos, pos + tok.size());
        cursor = pos + tok.size();
    }
    return offsets;
}

// ---------------------------------------------------------------------------
// Validation and JSONL serialization
// ---------------------------------------------------------------------------

inline void validate_instance(const Instance& inst, const SchemaRegistry& registry) {
    if (inst.tokens.empty())
        throw ValidationError("instance " + inst.id + " has no tokens");
    const Schema& schema = registry.get(inst.schema_ref);
    token_offsets(inst); // alignment invariant
    const std::set<std::string> role_set(schema.roles.begin(), schema.roles.end());
    for (const auto& tuple : inst.gold_tuples) {
        std::set<std::string> keys;
        for (const auto& [role, span] : tuple.assignments) {
            keys.insert(role);
            if (!span) continue;
            if (span->start > span->end || span->end >= inst.tokens.size())
                throw ValidationError("instance " + inst.id + ": span out of bounds for role " +
                                      role);
        }
        if (keys != role_set)
            throw ValidationError("instance " + inst.id +
                                  ": tuple roles do not match schema " + schema.type_name);
    }
}

inline nlohmann::json tuple_to_json(const Tuple& tuple) {
    nlohmann::json t = nlohmann::json::object();
    for (const auto& [role, span] : tuple.assignments) {
        if (span)
            t[role] = {span->start, span->end};
        else
            t[role] = nullptr;
    }
    return t;
}

inline Tuple tuple_from_json(const nlohmann::json& j) {
    Tuple tuple;
    for (const auto& [role, value] : j.items()) {
        if (value.is_null()) {
            tuple.assignments[role] = std::nullopt;
        } else {
            if (!value.is_array() || value.size() != 2)
                throw ParseError("span for role " + role + " must be [start, end] or null");
            tuple.assignments[role] =
                Span{value.at(0).get<size_t>(), value.at(1).get<size_t>()};
        }
    }
    return tuple;
}

// Order-insensitive fingerprint of a tuple set, for comparing extraction
// outcomes across runs or extraction orders.
inline std::string tuples_fingerprint(const std::vector<Tuple>& tuples) {
    std::vector<std::string> keys;
    keys.reserve(tuples.size());
    for (const auto& t : tuples) keys.push_back(tuple_to_json(t).dump());
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    std::string out;
    for (const auto& k : keys) {
        out += k;
        out += '\n';
    }
    return out;
}

inline nlohmann::json instance_to_json(const Instance& inst) {
    nlohmann::json tuples = nlohmann::json::array();
    for (const auto& tuple : inst.gold_tuples) tuples.push_back(tuple_to_json(tuple));
    return {{"id", inst.id},
            {"text", inst.text},
            {"tokens", inst.tokens},
            {"schema", inst.schema_ref},
            {"tuples", std::move(tuples)}};
}

inline Instance instance_from_json(const nlohmann::json& j) {
    Instance inst;
    inst.id = j.at("id").get<std::string>();
    inst.text = j.at("text").get<std::string>();
    inst.tokens = j.at("tokens").get<std::vector<std::string>>();
    inst.schema_ref = j.at("schema").get<std::string>();
    for (const auto& t : j.at("tuples")) {
        inst.gold_tuples.push_back(tuple_from_json(t));
    }
    return inst;
}

inline std::vector<Instance> load_dataset(const std::string& path,
                                          const SchemaRegistry& registry) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset: " + path);
    std::vector<Instance> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        Instance inst;
        try {
            inst = instance_from_json(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + " line " + std::to_string(lineno) + ": " + e.what());
        } catch (const ParseError& e) {
            throw ParseError(path + " line " + std::to_string(lineno) + ": " + e.what());
        }
        validate_instance(inst, registry);
        out.push_back(std::move(inst));
    }
    return out;
}

inline void save_dataset(const std::string& path, const std::vector<Instance>& data) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open dataset for writing: " + path);
    for (const auto& inst : data) out << instance_to_json(inst).dump() << "\n";
    if (!out) throw IoError("failed writing dataset: " + path);
}

// Deterministic half/half partition: shuffle indices with the seed, then keep
// each half in original dataset order. First half gets the extra element.
inline std::pair<std::vector<Instance>, std::vector<Instance>>
split_dataset(const std::vector<Instance>& data, uint64_t seed) {
    if (data.size() < 2)
        throw ValidationError("split_dataset needs at least 2 instances");
    std::vector<size_t> idx(data.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    util::Rng rng(seed);
    rng.shuffle(idx);
    const size_t first_size = (data.size() + 1) / 2;
    std::vector<size_t> a(idx.begin(), idx.begin() + static_cast<long>(first_size));
    std::vector<size_t> b(idx.begin() + static_cast<long>(first_size), idx.end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::pair<std::vector<Instance>, std::vector<Instance>> halves;
    for (size_t i : a) halves.first.push_back(data[i]);
    for (size_t i : b) halves.second.push_back(data[i]);
    return halves;
}

} // namespace ordex::corpus
