#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ordex/common.hpp"
#include "ordex/corpus.hpp"
#include "ordex/env.hpp"
#include "ordex/extractor.hpp"
#include "ordex/rng.hpp"

namespace ordex::oracle {

// ---------------------------------------------------------------------------
// Oracle table
// ---------------------------------------------------------------------------

// Lookup key: which instance, what has been extracted (as an order-free set
// of role -> argument pairs), and which role is asked for next.
struct OracleKey {
    std::string instance_id;
    extract::Condition condition; // sorted by role name
    std::string target_role;

    auto operator<=>(const OracleKey&) const = default;
};

inline extract::Condition canonical_condition(extract::Condition condition) {
    std::sort(condition.begin(), condition.end(),
              [](const auto& a, const auto& b) { return a.role < b.role; });
    return condition;
}

// Deterministic simulated extractor: exact results per key, a default policy
// (typically empty) for everything unlisted.
class OracleTable {
public:
    void set(const std::string& instance_id, extract::Condition condition,
             const std::string& target_role, std::vector<extract::ScoredSpan> results) {
        for (const auto& r : results)
            if (!std::isfinite(r.score))
                throw ValidationError("oracle score must be finite for instance " +
                                      instance_id);
        entries_[OracleKey{instance_id, canonical_condition(std::move(condition)),
                           target_role}] = std::move(results);
    }

    const std::vector<extract::ScoredSpan>& lookup(const std::string& instance_id,
                                                   const extract::Condition& condition,
                                                   const std::string& target_role) const {
        auto it = entries_.find(
            OracleKey{instance_id, canonical_condition(condition), target_role});
        return it == entries_.end() ? default_result_ : it->second;
    }

    void set_default_result(std::vector<extract::ScoredSpan> result) {
        default_result_ = std::move(result);
    }
    const std::vector<extract::ScoredSpan>& default_result() const { return default_result_; }

    size_t size() const { return entries_.size(); }

    nlohmann::json to_json() const {
        nlohmann::json entries = nlohmann::json::array();
        for (const auto& [key, results] : entries_) {
            nlohmann::json e = {{"id", key.instance_id},
                                {"condition", condition_to_json(key.condition)},
                                {"target", key.target_role},
                                {"results", results_to_json(results)}};
            entries.push_back(std::move(e));
        }
        return {{"default", results_to_json(default_result_)}, {"entries", entries}};
    }

    static OracleTable from_json(const nlohmann::json& j) {
        OracleTable table;
        table.default_result_ = results_from_json(j.at("default"));
        for (const auto& e : j.at("entries"))
            table.set(e.at("id").get<std::string>(), condition_from_json(e.at("condition")),
                      e.at("target").get<std::string>(), results_from_json(e.at("results")));
        return table;
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("cannot open oracle table for writing: " + path);
        out << to_json().dump(2) << "\n";
    }

    static OracleTable load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open oracle table: " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("malformed oracle table " + path + ": " + e.what());
        }
        return from_json(j);
    }

private:
    static nlohmann::json condition_to_json(const extract::Condition& condition) {
        nlohmann::json out = nlohmann::json::array();
        for (const auto& entry : condition) {
            nlohmann::json e = {{"role", entry.role}};
            if (entry.argument)
                e["argument"] = *entry.argument;
            else
                e["argument"] = nullptr;
            out.push_back(std::move(e));
        }
        return out;
    }

    static extract::Condition condition_from_json(const nlohmann::json& j) {
        extract::Condition out;
        for (const auto& e : j) {
            extract::ConditionEntry entry;
            entry.role = e.at("role").get<std::string>();
            if (!e.at("argument").is_null())
                entry.argument = e.at("argument").get<std::vector<std::string>>();
            out.push_back(std::move(entry));
        }
        return out;
    }

    static nlohmann::json results_to_json(const std::vector<extract::ScoredSpan>& results) {
        nlohmann::json out = nlohmann::json::array();
        for (const auto& r : results) {
            nlohmann::json e = {{"span", {r.span.start, r.span.end}}, {"score", r.score}};
            out.push_back(std::move(e));
        }
        return out;
    }

    static std::vector<extract::ScoredSpan> results_from_json(const nlohmann::json& j) {
        std::vector<extract::ScoredSpan> out;
        for (const auto& e : j) {
            extract::ScoredSpan r;
            r.span = {e.at("span").at(0).get<size_t>(), e.at("span").at(1).get<size_t>()};
            r.score = e.at("score").get<double>();
            out.push_back(r);
        }
        return out;
    }

    std::map<OracleKey, std::vector<extract::ScoredSpan>> entries_;
    std::vector<extract::ScoredSpan> default_result_;
};

inline std::vector<extract::ScoredSpan> oracle_extract(const OracleTable& table,
                                                       const corpus::Instance& instance,
                                                       const extract::Condition& condition,
                                                       const std::string& target_role) {
    return table.lookup(instance.id, condition, target_role);
}

class OracleExtractor : public extract::SpanExtractor {
public:
    explicit OracleExtractor(const OracleTable& table, std::string provenance = "oracle")
        : SpanExtractor(std::move(provenance)), table_(table) {}

    std::vector<extract::ScoredSpan> extract(const corpus::Instance& instance,
                                             const extract::Condition& condition,
                                             const std::string& target_role) override {
        return oracle_extract(table_, instance, condition, target_role);
    }

private:
    const OracleTable& table_;
};

// ---------------------------------------------------------------------------
// Brute-force order search
// ---------------------------------------------------------------------------

inline constexpr size_t kFactorialGuard = 8;

struct BestOrder {
    std::vector<std::string> order;
    double value = 0.0;
};

// Evaluates the discounted branch-averaged return of every role permutation
// and returns the best; ties go to the lexicographically smallest order.
inline BestOrder brute_force_best_order(const OracleTable& table,
                                        const corpus::Instance& instance,
                                        const corpus::Schema& schema, double gamma,
                                        const env::EnvConfig& config = {}) {
    if (schema.roles.size() > kFactorialGuard)
        throw ContractViolation("brute_force_best_order refuses " +
                                std::to_string(schema.roles.size()) + " roles (guard " +
                                std::to_string(kFactorialGuard) + ")");
    OracleExtractor extractor(table);
    std::vector<std::string> perm = schema.roles;
    std::sort(perm.begin(), perm.end());
    BestOrder best;
    bool first = true;
    do {
        env::EpisodeTree tree =
            env::rollout(instance, schema, env::make_order_policy(perm), extractor, config);
        const double value = env::episode_value(tree, gamma);
        if (first || value > best.value) {
            best.order = perm;
            best.value = value;
            first = false;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

// ---------------------------------------------------------------------------
// Synthetic task generator
// ---------------------------------------------------------------------------

struct SyntheticTaskSpec {
    size_t role_count = 3;
    size_t instance_count = 100;
    size_t vocab_size = 50;
    size_t min_len = 0; // 0 = derived minimum
    size_t max_len = 0; // 0 = derived minimum + 6
    double sensitive_fraction = 0.0;
    uint64_t seed = 0;
    double top_score = 4.0;    // score of the rank-0 role
    double score_ratio = 0.5;  // geometric decay of scores across ranks

    size_t min_tokens() const { return 2 * role_count + 1; }

    void validate() const {
        if (role_count < 1) throw ConfigError("role_count must be >= 1");
        if (instance_count < 1) throw ConfigError("instance_count must be >= 1");
        if (vocab_size < 1) throw ConfigError("vocab_size must be >= 1");
        if (sensitive_fraction < 0.0 || sensitive_fraction > 1.0)
            throw ConfigError("sensitive_fraction must lie in [0,1]");
        if (sensitive_fraction > 0.0 && role_count < 2)
            throw ConfigError("single-role instances cannot be order-sensitive");
        const size_t lo = min_len == 0 ? min_tokens() : min_len;
        const size_t hi = max_len == 0 ? lo + 6 : max_len;
        if (lo < min_tokens())
            throw ConfigError("min_len must be at least " + std::to_string(min_tokens()));
        if (hi < lo) throw ConfigError("max_len must be >= min_len");
        if (!(top_score > 0.0)) throw ConfigError("top_score must be > 0");
        if (!(score_ratio > 0.0 && score_ratio < 1.0))
            throw ConfigError("score_ratio must lie in (0,1)");
    }
};

struct Certificate {
    std::string instance_id;
    bool sensitive = false;
    // Present for sensitive instances: two orders whose outcomes differ.
    std::vector<std::string> witness_a, witness_b;

    nlohmann::json to_json() const {
        nlohmann::json j = {{"id", instance_id}, {"sensitive", sensitive}};
        if (sensitive) {
            j["witness_a"] = witness_a;
            j["witness_b"] = witness_b;
        }
        return j;
    }
};

struct SyntheticCorpus {
    corpus::SchemaRegistry registry;
    corpus::Schema schema;
    std::vector<corpus::Instance> instances;
    OracleTable table;
    std::vector<Certificate> certificates;
};

namespace detail {

// Per-instance construction recipe: every role carries a distinct
// condition-independent score (a strictly decreasing geometric series over a
// random rank permutation), so the unique optimal order walks the ranks in
// ascending order for any discount in (0,1). Rank cues in the sentence make
// that order inferable. A sensitive instance additionally designates a pair
// (X, Y): extracting X before Y yields a decoy span, after Y the true one —
// spans differ, scores do not, so sensitivity never moves the optimum.
struct InstanceRecipe {
    bool sensitive = false;
    std::vector<size_t> rank_of_role; // schema role index -> rank
    std::vector<corpus::Span> gold;   // schema role index -> gold span
    corpus::Span decoy;               // sensitive only
    size_t x_role = 0, y_role = 0;    // sensitive only: schema role indices
};

inline corpus::Span result_span(const InstanceRecipe& recipe, const corpus::Schema& schema,
                                size_t target_idx, const std::set<std::string>& known_roles) {
    if (recipe.sensitive && target_idx == recipe.x_role &&
        known_roles.count(schema.roles[recipe.y_role]) == 0)
        return recipe.decoy;
    return recipe.gold[target_idx];
}

} // namespace detail

// Builds the corpus, the oracle table driving it, and per-instance
// sensitivity certificates verified by exhaustive order enumeration.
inline SyntheticCorpus generate_synthetic(const SyntheticTaskSpec& spec) {
    spec.validate();
    const size_t n = spec.role_count;
    const size_t N = spec.instance_count;
    const size_t lo = spec.min_len == 0 ? spec.min_tokens() : spec.min_len;
    const size_t hi = spec.max_len == 0 ? lo + 6 : spec.max_len;

    SyntheticCorpus out;
    out.schema.type_name = "synthetic";
    for (size_t r = 0; r < n; ++r) out.schema.roles.push_back("r" + std::to_string(r));
    out.registry.add(out.schema);
    const corpus::Schema& schema = out.registry.get("synthetic");

    std::vector<double> base(n);
    for (size_t rank = 0; rank < n; ++rank)
        base[rank] = spec.top_score * std::pow(spec.score_ratio, static_cast<double>(rank));

    const size_t sensitive_total =
        static_cast<size_t>(std::llround(spec.sensitive_fraction * static_cast<double>(N)));

    std::vector<detail::InstanceRecipe> recipes(N);
    for (size_t i = 0; i < N; ++i) {
        util::Rng rng(util::Rng::derive(spec.seed, "synth.instance." + std::to_string(i)));
        // Evenly spread exactly sensitive_total sensitive instances over the corpus.
        const bool sensitive =
            (i * sensitive_total) / N < ((i + 1) * sensitive_total) / N;

        detail::InstanceRecipe& recipe = recipes[i];
        recipe.sensitive = sensitive;
        recipe.rank_of_role.resize(n);
        std::iota(recipe.rank_of_role.begin(), recipe.rank_of_role.end(), size_t{0});
        rng.shuffle(recipe.rank_of_role);
        if (sensitive) {
            // A sensitive instance needs a schema-order inversion so that the
            // sequence policy meets X before Y while the optimal order does not.
            auto is_identity = [&recipe, n] {
                for (size_t r = 0; r < n; ++r)
                    if (recipe.rank_of_role[r] != r) return false;
                return true;
            };
            while (is_identity()) rng.shuffle(recipe.rank_of_role);
            bool found = false;
            for (size_t a = 0; a < n && !found; ++a)
                for (size_t b = a + 1; b < n && !found; ++b)
                    if (recipe.rank_of_role[b] < recipe.rank_of_role[a]) {
                        recipe.x_role = a;
                        recipe.y_role = b;
                        found = true;
                    }
            if (!found) throw ContractViolation("sensitive recipe lacks an inversion");
        }

        std::vector<std::string> role_by_rank(n);
        for (size_t r = 0; r < n; ++r) role_by_rank[recipe.rank_of_role[r]] = schema.roles[r];

        corpus::Instance inst;
        inst.id = "synth-" + std::to_string(i);
        inst.schema_ref = schema.type_name;
        for (size_t rank = 0; rank < n; ++rank)
            inst.tokens.push_back("cue" + std::to_string(rank) + "_" + role_by_rank[rank]);
        const size_t want = lo + rng.below(hi - lo + 1);
        const size_t fixed = 2 * n + (sensitive ? 1 : 0);
        const size_t fillers = want > fixed ? want - fixed : 0;
        for (size_t f = 0; f < fillers; ++f)
            inst.tokens.push_back("w" + std::to_string(rng.below(spec.vocab_size)));
        recipe.gold.resize(n);
        for (size_t r = 0; r < n; ++r) {
            recipe.gold[r] = {inst.tokens.size(), inst.tokens.size()};
            inst.tokens.push_back("val_" + schema.roles[r]);
        }
        if (sensitive) {
            recipe.decoy = {inst.tokens.size(), inst.tokens.size()};
            inst.tokens.push_back("dec_" + schema.roles[recipe.x_role]);
        }
        inst.text = corpus::join_tokens(inst.tokens);
        corpus::Tuple gold_tuple;
        for (size_t r = 0; r < n; ++r) gold_tuple.assignments[schema.roles[r]] = recipe.gold[r];
        inst.gold_tuples.push_back(std::move(gold_tuple));
        out.instances.push_back(std::move(inst));
    }

    // Materialize every condition reachable under any extraction order.
    for (size_t i = 0; i < N; ++i) {
        const corpus::Instance& inst = out.instances[i];
        const detail::InstanceRecipe& recipe = recipes[i];
        std::set<extract::Condition> visited;
        std::deque<extract::Condition> queue{extract::Condition{}};
        visited.insert(extract::Condition{});
        while (!queue.empty()) {
            extract::Condition cond = std::move(queue.front());
            queue.pop_front();
            std::set<std::string> known;
            for (const auto& e : cond) known.insert(e.role);
            for (size_t r = 0; r < n; ++r) {
                const std::string& target = schema.roles[r];
                if (known.count(target)) continue;
                const corpus::Span span = detail::result_span(recipe, schema, r, known);
                out.table.set(inst.id, cond, target,
                              {{span, base[recipe.rank_of_role[r]]}});
                extract::Condition next = cond;
                next.push_back({target, extract::span_tokens(inst, span)});
                next = canonical_condition(std::move(next));
                if (visited.insert(next).second) queue.push_back(std::move(next));
            }
        }
    }

    // Certify every label by exhaustive order enumeration through the real
    // environment against the finished table.
    if (n > kFactorialGuard)
        throw ConfigError("certification refuses role_count above " +
                          std::to_string(kFactorialGuard));
    OracleExtractor extractor(out.table);
    size_t certified_sensitive = 0;
    for (const auto& inst : out.instances) {
        std::vector<std::string> perm = schema.roles;
        std::sort(perm.begin(), perm.end());
        Certificate cert;
        cert.instance_id = inst.id;
        std::string first_fp;
        std::vector<std::string> first_order;
        bool have_first = false;
        do {
            auto tree = env::rollout(inst, schema, env::make_order_policy(perm), extractor);
            const std::string fp = corpus::tuples_fingerprint(env::tree_to_tuples(tree));
            if (!have_first) {
                first_fp = fp;
                first_order = perm;
                have_first = true;
            } else if (fp != first_fp && !cert.sensitive) {
                cert.sensitive = true;
                cert.witness_a = first_order;
                cert.witness_b = perm;
            }
        } while (std::next_permutation(perm.begin(), perm.end()));
        certified_sensitive += cert.sensitive ? 1 : 0;
        out.certificates.push_back(std::move(cert));
    }
    if (certified_sensitive != sensitive_total)
        throw ContractViolation("generator produced " + std::to_string(certified_sensitive) +
                                " sensitive instances, wanted " +
                                std::to_string(sensitive_total));
    return out;
}

inline void save_certificates(const std::string& path,
                              const std::vector<Certificate>& certificates) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open certificate file for writing: " + path);
    for (const auto& cert : certificates) out << cert.to_json().dump() << "\n";
}

} // namespace ordex::oracle
