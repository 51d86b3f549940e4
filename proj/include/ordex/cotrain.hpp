#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ordex/agent.hpp"
#include "ordex/common.hpp"
#include "ordex/corpus.hpp"
#include "ordex/env.hpp"
#include "ordex/extractor.hpp"
#include "ordex/rng.hpp"
#include "ordex/span_scorer.hpp"

namespace ordex::cotrain {

// Provenance tags carried by every extractor query, so the crossing invariant
// below is checkable from the query log rather than taken on faith.
inline constexpr const char* kTagE1 = "E1";
inline constexpr const char* kTagE2 = "E2";
inline constexpr const char* kTagEFull = "E_full";

struct CotrainConfig {
    scorer::ScorerConfig scorer;    // shared by all three scorer trainings
    nn::OptimizerConfig scorer_opt; // total_steps is overwritten per training set
    size_t scorer_epochs = 1;
    size_t permutation_cap = 6;
    agent::AgentConfig agent; // seed is overwritten per agent
    size_t agent_epochs = 1;
    bool vote_combination = false; // combine agents by vote instead of Q-sum
    uint64_t seed = 0;
};

// Everything the co-training run produces. The halves are owned copies so the
// agents' replayed states stay valid for the plan's lifetime.
struct CotrainPlan {
    uint64_t seed = 0;
    uint64_t split_seed = 0;
    std::vector<corpus::Instance> d1, d2;
    scorer::ScorerModel e1;     // trained on d1
    scorer::ScorerModel e2;     // trained on d2
    scorer::ScorerModel e_full; // trained on d1 + d2; the only inference scorer
    agent::QNetwork a1;         // trained on d1 paired with e2
    agent::QNetwork a2;         // trained on d2 paired with e1
    std::map<std::string, size_t> a1_queries, a2_queries; // provenance -> count
    std::vector<agent::LogRow> a1_log, a2_log;
    bool vote_combination = false;
};

// ---------------------------------------------------------------------------
// Combined policy
// ---------------------------------------------------------------------------

// Selection rule over per-action (Q_a1, Q_a2) pairs. Default: argmax of the
// sum, exact ties breaking lexicographically. Vote mode: each agent nominates
// its own argmax; agreement wins, disagreement falls back to the
// lexicographically smaller nominee.
inline std::string combined_argmax(const std::map<std::string, std::pair<double, double>>& q,
                                   bool vote = false) {
    if (q.empty()) throw ContractViolation("combined_argmax over an empty action set");
    auto argmax = [&](auto value) {
        auto best = q.begin();
        for (auto it = std::next(q.begin()); it != q.end(); ++it)
            if (value(it->second) > value(best->second)) best = it;
        return best->first;
    };
    if (!vote) return argmax([](const auto& p) { return p.first + p.second; });
    const std::string v1 = argmax([](const auto& p) { return p.first; });
    const std::string v2 = argmax([](const auto& p) { return p.second; });
    return std::min(v1, v2);
}

inline std::string combined_action(agent::QNetwork& a1, agent::QNetwork& a2,
                                   const env::State& state, bool vote = false) {
    const env::ActionSpace actions = env::action_space(state);
    if (actions.empty()) throw ContractViolation("combined_action on a terminal state");
    std::map<std::string, std::pair<double, double>> q;
    for (const auto& role : actions.remaining)
        q[role] = {agent::q_value(a1, state, role), agent::q_value(a2, state, role)};
    return combined_argmax(q, vote);
}

inline env::Policy combined_policy(agent::QNetwork& a1, agent::QNetwork& a2,
                                   bool vote = false) {
    return [&a1, &a2, vote](const env::State& state) {
        return combined_action(a1, a2, state, vote);
    };
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> registry_tokens(const corpus::SchemaRegistry& registry) {
    std::vector<std::string> extra;
    for (const auto& [name, schema] : registry.items()) {
        extra.push_back(name);
        extra.insert(extra.end(), schema.roles.begin(), schema.roles.end());
    }
    return extra;
}

inline scorer::ScorerModel train_scorer_on(const std::vector<corpus::Instance>& subset,
                                           const corpus::SchemaRegistry& registry,
                                           const nn::Vocab& vocab,
                                           const CotrainConfig& config,
                                           const std::string& name) {
    const auto set = scorer::build_training_set(
        subset, registry, config.permutation_cap,
        util::Rng::derive(config.seed, "cotrain." + name + ".sample"));
    auto model = scorer::ScorerModel::init(
        config.scorer, vocab, util::Rng::derive(config.seed, "cotrain." + name + ".init"));
    auto opt = config.scorer_opt;
    opt.total_steps = std::max<size_t>(1, set.size() * config.scorer_epochs);
    const auto report = scorer::train_scorer(
        model, set, opt, config.scorer_epochs,
        util::Rng::derive(config.seed, "cotrain." + name + ".train"));
    if (report.aborted)
        util::log_warn("scorer " + name + " aborted training; keeping last good parameters");
    return model;
}

// Every query an agent issued during training must have gone to the crossed
// scorer and nothing else.
inline void check_crossing(const extract::QueryCounter& counter,
                           const std::string& expected_tag, const std::string& agent_name) {
    if (counter.total() == 0)
        throw ContractViolation(agent_name + " issued no extractor queries during training");
    for (const auto& [tag, n] : counter.counts())
        if (tag != expected_tag)
            throw ContractViolation(agent_name + " sent " + std::to_string(n) +
                                    " queries to extractor " + tag + "; expected only " +
                                    expected_tag);
}

} // namespace detail

nlohmann::json save_plan(const CotrainPlan& plan, const std::string& dir,
                         const std::string& status,
                         const std::vector<std::string>& artifacts);

// Split the data in half, train a scorer per half plus one on everything,
// then train each agent on one half's instances against the *other* half's
// scorer. A crossing violation aborts; partial artifacts are saved (labeled)
// when a directory is given.
inline CotrainPlan run_cotraining(const std::vector<corpus::Instance>& data,
                                  const corpus::SchemaRegistry& registry,
                                  const CotrainConfig& config,
                                  const std::string& partial_dir = "") {
    CotrainPlan plan;
    plan.seed = config.seed;
    plan.vote_combination = config.vote_combination;
    plan.split_seed = util::Rng::derive(config.seed, "cotrain.split");
    auto halves = corpus::split_dataset(data, plan.split_seed);
    plan.d1 = std::move(halves.first);
    plan.d2 = std::move(halves.second);

    const nn::Vocab vocab = nn::Vocab::build(data, detail::registry_tokens(registry));
    plan.e1 = detail::train_scorer_on(plan.d1, registry, vocab, config, "e1");
    plan.e2 = detail::train_scorer_on(plan.d2, registry, vocab, config, "e2");
    plan.e_full = detail::train_scorer_on(data, registry, vocab, config, "e_full");

    auto train_crossed = [&](const std::vector<corpus::Instance>& half,
                             scorer::ScorerModel& other_scorer, const char* tag,
                             const std::string& name,
                             const std::vector<std::string>& done) {
        scorer::ScorerExtractor extractor(other_scorer, registry, tag);
        extract::QueryCounter counter(extractor);
        auto agent_config = config.agent;
        agent_config.seed = util::Rng::derive(config.seed, "cotrain." + name);
        auto result = agent::train_agent(half, registry, counter, config.agent_epochs,
                                         agent_config);
        if (result.aborted)
            util::log_warn("agent " + name +
                           " aborted training; keeping last good parameters");
        try {
            detail::check_crossing(counter, tag, name);
        } catch (const ContractViolation&) {
            if (!partial_dir.empty()) save_plan(plan, partial_dir, "partial", done);
            throw;
        }
        return std::make_pair(std::move(result), counter.counts());
    };

    auto [r1, c1] = train_crossed(plan.d1, plan.e2, kTagE2, "a1",
                                  {"d1", "d2", "e1", "e2", "e_full"});
    plan.a1 = std::move(r1.network);
    plan.a1_log = std::move(r1.log);
    plan.a1_queries = std::move(c1);

    auto [r2, c2] = train_crossed(plan.d2, plan.e1, kTagE1, "a2",
                                  {"d1", "d2", "e1", "e2", "e_full", "a1"});
    plan.a2 = std::move(r2.network);
    plan.a2_log = std::move(r2.log);
    plan.a2_queries = std::move(c2);
    return plan;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

struct InferenceOutput {
    std::map<std::string, std::vector<corpus::Tuple>> tuples; // instance id -> predictions
    std::map<std::string, env::EpisodeTree> traces;
    std::map<std::string, size_t> query_counts; // provenance -> count; E_full only
};

// Inference touches exactly one scorer — the one trained on all the data —
// under the agents' combined policy. The query counts prove it.
inline InferenceOutput infer(CotrainPlan& plan, const corpus::SchemaRegistry& registry,
                             const std::vector<corpus::Instance>& instances,
                             const env::EnvConfig& env_config = {}) {
    scorer::ScorerExtractor extractor(plan.e_full, registry, kTagEFull);
    extract::QueryCounter counter(extractor);
    const env::Policy policy = combined_policy(plan.a1, plan.a2, plan.vote_combination);
    InferenceOutput out;
    for (const auto& inst : instances) {
        env::EpisodeTree tree =
            env::rollout(inst, registry.get(inst.schema_ref), policy, counter, env_config);
        out.tuples[inst.id] = env::tree_to_tuples(tree);
        out.traces.emplace(inst.id, std::move(tree));
    }
    out.query_counts = counter.counts();
    return out;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

// Writes the named artifacts under dir and a plan.json manifest (last) tying
// them together: seeds, pairings, file hashes, and the per-agent query log.
inline nlohmann::json save_plan(const CotrainPlan& plan, const std::string& dir,
                                const std::string& status = "complete",
                                const std::vector<std::string>& artifacts = {
                                    "d1", "d2", "e1", "e2", "e_full", "a1", "a2"}) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto path_of = [&](const std::string& name, const char* ext) {
        return (fs::path(dir) / (name + ext)).string();
    };
    nlohmann::json files = nlohmann::json::object();
    auto record = [&](const std::string& name, const std::string& path) {
        files[name] = {{"path", fs::path(path).filename().string()},
                       {"hash", util::hash_file(path)}};
    };
    for (const auto& name : artifacts) {
        if (name == "d1" || name == "d2") {
            const auto path = path_of(name, ".jsonl");
            corpus::save_dataset(path, name == "d1" ? plan.d1 : plan.d2);
            record(name, path);
        } else {
            const auto path = path_of(name, ".ckpt.json");
            if (name == "e1")
                plan.e1.save(path);
            else if (name == "e2")
                plan.e2.save(path);
            else if (name == "e_full")
                plan.e_full.save(path);
            else if (name == "a1")
                plan.a1.save(path);
            else if (name == "a2")
                plan.a2.save(path);
            else
                throw ContractViolation("unknown plan artifact " + name);
            record(name, path);
        }
    }
    nlohmann::json counts = {{"a1", plan.a1_queries}, {"a2", plan.a2_queries}};
    nlohmann::json manifest = {
        {"format_version", 1},
        {"status", status},
        {"seed", plan.seed},
        {"split_seed", plan.split_seed},
        {"vote_combination", plan.vote_combination},
        {"pairings",
         {{"a1", {{"data", "d1"}, {"extractor", kTagE2}}},
          {"a2", {{"data", "d2"}, {"extractor", kTagE1}}}}},
        {"inference", {{"extractor", kTagEFull}, {"policy", "combined"}}},
        {"query_counts", std::move(counts)},
        {"files", std::move(files)}};
    std::ofstream out(path_of("plan", ".json"));
    if (!out) throw IoError("cannot write plan manifest in " + dir);
    out << manifest.dump(2) << "\n";
    if (!out) throw IoError("failed writing plan manifest in " + dir);
    return manifest;
}

inline CotrainPlan load_plan(const std::string& dir, const corpus::SchemaRegistry& registry) {
    namespace fs = std::filesystem;
    const auto manifest_path = (fs::path(dir) / "plan.json").string();
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open plan manifest: " + manifest_path);
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("bad plan manifest " + manifest_path + ": " + e.what());
    }
    if (manifest.value("status", "") != "complete")
        throw ValidationError("plan in " + dir + " is " + manifest.value("status", "?") +
                              ", not complete");
    auto file_of = [&](const std::string& name) {
        return (fs::path(dir) /
                manifest.at("files").at(name).at("path").get<std::string>())
            .string();
    };
    CotrainPlan plan;
    plan.seed = manifest.at("seed").get<uint64_t>();
    plan.split_seed = manifest.at("split_seed").get<uint64_t>();
    plan.vote_combination = manifest.at("vote_combination").get<bool>();
    plan.d1 = corpus::load_dataset(file_of("d1"), registry);
    plan.d2 = corpus::load_dataset(file_of("d2"), registry);
    plan.e1 = scorer::ScorerModel::load(file_of("e1"));
    plan.e2 = scorer::ScorerModel::load(file_of("e2"));
    plan.e_full = scorer::ScorerModel::load(file_of("e_full"));
    plan.a1 = agent::QNetwork::load(file_of("a1"));
    plan.a2 = agent::QNetwork::load(file_of("a2"));
    for (const auto& [k, v] : manifest.at("query_counts").at("a1").items())
        plan.a1_queries[k] = v.get<size_t>();
    for (const auto& [k, v] : manifest.at("query_counts").at("a2").items())
        plan.a2_queries[k] = v.get<size_t>();
    return plan;
}

} // namespace ordex::cotrain
