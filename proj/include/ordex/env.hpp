#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ordex/common.hpp"
#include "ordex/corpus.hpp"
#include "ordex/extractor.hpp"
#include "ordex/rng.hpp"

namespace ordex::env {

struct ExtractedEntry {
    std::string role;
    std::optional<corpus::Span> span; // nullopt = role extracted to no argument

    bool operator==(const ExtractedEntry&) const = default;
};

// MDP state: the schema, what has been extracted so far (in extraction
// order), and the instance whose sentence is being processed. t is implicit
// as the number of extracted entries.
struct State {
    const corpus::Schema* schema = nullptr;
    const corpus::Instance* instance = nullptr;
    std::vector<ExtractedEntry> extracted;

    size_t t() const { return extracted.size(); }

    bool operator==(const State&) const = default;
};

// Roles still to extract. Shrinks by exactly the chosen role at every step;
// empty exactly at terminal states.
struct ActionSpace {
    std::set<std::string> remaining;

    bool empty() const { return remaining.empty(); }
    size_t size() const { return remaining.size(); }
    bool contains(const std::string& role) const { return remaining.count(role) > 0; }
};

inline ActionSpace action_space(const State& state) {
    ActionSpace a;
    for (const auto& role : state.schema->roles) a.remaining.insert(role);
    for (const auto& entry : state.extracted) a.remaining.erase(entry.role);
    return a;
}

inline bool is_terminal(const State& state) {
    return state.extracted.size() == state.schema->roles.size();
}

// The extracted history as an extractor condition, in extraction order.
// Extractors canonicalize internally as they see fit.
inline extract::Condition condition_of(const State& state) {
    extract::Condition cond;
    for (const auto& entry : state.extracted) {
        if (entry.span)
            cond.push_back({entry.role, extract::span_tokens(*state.instance, *entry.span)});
        else
            cond.push_back({entry.role, std::nullopt});
    }
    return cond;
}

struct Transition {
    State state;
    std::string action;
    double reward = 0.0;
    std::vector<State> next_states;
    bool terminal = false;
};

struct EnvConfig {
    size_t branch_cap = 8;    // keep the top-scored results when a step over-branches
    bool mean_reward = false; // reward = mean decoded score instead of the maximum
};

inline State reset(const corpus::Instance& instance, const corpus::Schema& schema) {
    if (instance.schema_ref != schema.type_name)
        throw ContractViolation("instance " + instance.id + " uses schema " +
                                instance.schema_ref + ", not " + schema.type_name);
    return State{&schema, &instance, {}};
}

// One environment step: query the extractor for the chosen role; each decoded
// result becomes its own next state. Zero results collapse to a single
// no-argument branch with reward 0.
inline Transition step(const State& state, const std::string& action,
                       extract::SpanExtractor& extractor, const EnvConfig& config = {}) {
    const ActionSpace actions = action_space(state);
    if (!actions.contains(action))
        throw ContractViolation("action " + action + " not in the action space at t=" +
                                std::to_string(state.t()));
    auto results = extractor.extract(*state.instance, condition_of(state), action);
    std::stable_sort(results.begin(), results.end(), [](const auto& a, const auto& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.span < b.span;
    });
    if (results.size() > config.branch_cap) {
        util::log_warn("step on instance " + state.instance->id + " role " + action +
                       " produced " + std::to_string(results.size()) +
                       " branches; keeping top " + std::to_string(config.branch_cap));
        results.resize(config.branch_cap);
    }

    Transition tr;
    tr.state = state;
    tr.action = action;
    if (results.empty()) {
        tr.reward = 0.0;
        State next = state;
        next.extracted.push_back({action, std::nullopt});
        tr.next_states.push_back(std::move(next));
    } else {
        if (config.mean_reward) {
            double sum = 0.0;
            for (const auto& r : results) sum += r.score;
            tr.reward = sum / static_cast<double>(results.size());
        } else {
            tr.reward = results.front().score;
        }
        for (const auto& r : results) {
            State next = state;
            next.extracted.push_back({action, r.span});
            tr.next_states.push_back(std::move(next));
        }
    }
    tr.terminal = actions.size() == 1;
    return tr;
}

// ---------------------------------------------------------------------------
// Episodes
// ---------------------------------------------------------------------------

using Policy = std::function<std::string(const State&)>;

struct EpisodeNode {
    State state;
    std::optional<std::string> action; // empty at leaves
    double reward = 0.0;
    std::vector<EpisodeNode> children;
};

struct EpisodeTree {
    EpisodeNode root;
};

namespace detail {

inline void expand(EpisodeNode& node, const Policy& policy,
                   extract::SpanExtractor& extractor, const EnvConfig& config) {
    if (is_terminal(node.state)) return;
    const std::string action = policy(node.state);
    Transition tr = step(node.state, action, extractor, config);
    node.action = action;
    node.reward = tr.reward;
    for (auto& next : tr.next_states) {
        node.children.push_back({std::move(next), std::nullopt, 0.0, {}});
        expand(node.children.back(), policy, extractor, config);
    }
}

} // namespace detail

// Full branch expansion: the policy picks one role per state; every decoded
// result of that role is followed. Leaf count is the product of the per-step
// branch counts along each path.
inline EpisodeTree rollout(const corpus::Instance& instance, const corpus::Schema& schema,
                           const Policy& policy, extract::SpanExtractor& extractor,
                           const EnvConfig& config = {}) {
    EpisodeTree tree;
    tree.root.state = reset(instance, schema);
    detail::expand(tree.root, policy, extractor, config);
    return tree;
}

// Discounted branch-averaged return of a (sub)tree: reward at this step plus
// gamma times the mean value over the branches it spawned.
inline double episode_value(const EpisodeNode& node, double gamma) {
    if (node.children.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& child : node.children) sum += episode_value(child, gamma);
    return node.reward + gamma * sum / static_cast<double>(node.children.size());
}

inline double episode_value(const EpisodeTree& tree, double gamma) {
    return episode_value(tree.root, gamma);
}

namespace detail {

inline void collect_leaves(const EpisodeNode& node, std::vector<const EpisodeNode*>& out) {
    if (node.children.empty()) {
        out.push_back(&node);
        return;
    }
    for (const auto& child : node.children) collect_leaves(child, out);
}

} // namespace detail

// One tuple per leaf, deduplicated by assignment equality (first occurrence
// in depth-first order wins).
inline std::vector<corpus::Tuple> tree_to_tuples(const EpisodeTree& tree) {
    std::vector<const EpisodeNode*> leaves;
    detail::collect_leaves(tree.root, leaves);
    std::vector<corpus::Tuple> out;
    for (const EpisodeNode* leaf : leaves) {
        if (!is_terminal(leaf->state))
            throw ContractViolation("tree_to_tuples on incomplete tree: leaf at t=" +
                                    std::to_string(leaf->state.t()));
        corpus::Tuple tuple;
        for (const auto& entry : leaf->state.extracted)
            tuple.assignments[entry.role] = entry.span;
        if (std::find(out.begin(), out.end(), tuple) == out.end())
            out.push_back(std::move(tuple));
    }
    return out;
}

inline nlohmann::json tree_to_json(const EpisodeNode& node) {
    nlohmann::json extracted = nlohmann::json::array();
    for (const auto& entry : node.state.extracted) {
        nlohmann::json e = {{"role", entry.role}};
        if (entry.span) {
            e["span"] = {entry.span->start, entry.span->end};
            e["text"] =
                corpus::join_tokens(extract::span_tokens(*node.state.instance, *entry.span));
        } else {
            e["span"] = nullptr;
            e["text"] = nullptr;
        }
        extracted.push_back(std::move(e));
    }
    nlohmann::json j = {{"t", node.state.t()}, {"extracted", std::move(extracted)}};
    if (node.action) {
        j["action"] = *node.action;
        j["reward"] = node.reward;
        nlohmann::json children = nlohmann::json::array();
        for (const auto& child : node.children) children.push_back(tree_to_json(child));
        j["children"] = std::move(children);
    }
    return j;
}

inline nlohmann::json tree_to_json(const EpisodeTree& tree) { return tree_to_json(tree.root); }

// ---------------------------------------------------------------------------
// Stock policies
// ---------------------------------------------------------------------------

// Follows a fixed role order by step index.
inline Policy make_order_policy(std::vector<std::string> order) {
    return [order = std::move(order)](const State& state) {
        if (state.t() >= order.size())
            throw ContractViolation("order policy exhausted at t=" +
                                    std::to_string(state.t()));
        return order[state.t()];
    };
}

// A uniformly random permutation of the schema's roles.
inline std::vector<std::string> random_order(const corpus::Schema& schema, util::Rng& rng) {
    std::vector<std::string> order = schema.roles;
    rng.shuffle(order);
    return order;
}

} // namespace ordex::env
