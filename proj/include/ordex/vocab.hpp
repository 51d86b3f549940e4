#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ordex/common.hpp"
#include "ordex/corpus.hpp"

namespace ordex::nn {

// Token <-> id table. Specials occupy fixed low ids; everything else is
// assigned in sorted order at build time so identical corpora give identical
// tables. Unknown tokens map to [UNK] at lookup.
class Vocab {
public:
    static constexpr const char* kUnk = "[UNK]";
    static constexpr const char* kCls = "[CLS]";
    static constexpr const char* kSep = "[SEP]";
    static constexpr const char* kNone = "[NONE]";
    static constexpr const char* kEq = "=";

    Vocab() {
        for (const char* s : {kUnk, kCls, kSep, kNone, kEq}) add(s);
    }

    static Vocab build(const std::vector<corpus::Instance>& data,
                       const std::vector<std::string>& extra = {}) {
        std::set<std::string> seen;
        for (const auto& inst : data)
            for (const auto& tok : inst.tokens) seen.insert(tok);
        for (const auto& tok : extra) seen.insert(tok);
        Vocab v;
        for (const auto& tok : seen) v.add(tok);
        return v;
    }

    int add(const std::string& token) {
        auto it = ids_.find(token);
        if (it != ids_.end()) return it->second;
        const int id = static_cast<int>(tokens_.size());
        tokens_.push_back(token);
        ids_.emplace(token, id);
        return id;
    }

    int id(const std::string& token) const {
        auto it = ids_.find(token);
        return it == ids_.end() ? unk() : it->second;
    }

    std::vector<int> ids(const std::vector<std::string>& tokens) const {
        std::vector<int> out;
        out.reserve(tokens.size());
        for (const auto& tok : tokens) out.push_back(id(tok));
        return out;
    }

    const std::string& token(int id) const {
        if (id < 0 || static_cast<size_t>(id) >= tokens_.size())
            throw ContractViolation("vocab id out of range");
        return tokens_[static_cast<size_t>(id)];
    }

    size_t size() const { return tokens_.size(); }

    int unk() const { return 0; }
    int cls() const { return 1; }
    int sep() const { return 2; }
    int none() const { return 3; }
    int eq() const { return 4; }

    nlohmann::json to_json() const { return tokens_; }

    static Vocab from_json(const nlohmann::json& j) {
        if (!j.is_array() || j.size() < 5) throw ParseError("vocab must be a token array");
        Vocab v;
        for (size_t i = 0; i < 5; ++i)
            if (j.at(i).get<std::string>() != v.tokens_[i])
                throw ParseError("vocab special tokens out of order");
        for (size_t i = 5; i < j.size(); ++i) v.add(j.at(i).get<std::string>());
        if (v.size() != j.size()) throw ParseError("vocab contains duplicate tokens");
        return v;
    }

private:
    std::vector<std::string> tokens_;
    std::map<std::string, int> ids_;
};

} // namespace ordex::nn
