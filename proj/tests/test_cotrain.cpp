// Co-training tests: the combined action rule, the crossed-extractor query
// invariant (each agent may only ever have queried the scorer trained on the
// other half of the data), plan persistence, and E_full-only inference. The
// query logs are the evidence for the crossing checks: every extractor query
// is tallied under its provenance tag, so "100% crossed" is a statement about
// observable counts, not about intent.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ordex/agent.hpp"
#include "ordex/cotrain.hpp"
#include "ordex/corpus.hpp"
#include "ordex/env.hpp"

using namespace ordex;

namespace {

corpus::SchemaRegistry duo_registry() {
    corpus::SchemaRegistry registry;
    registry.add({"duo", {"x", "y"}});
    return registry;
}

// Six tiny instances over a shared sentence shape; distinct ids make the
// split observable and distinct filler tokens keep the vocabulary honest.
std::vector<corpus::Instance> duo_corpus() {
    std::vector<corpus::Instance> out;
    for (int i = 0; i < 6; ++i) {
        corpus::Instance inst;
        inst.id = "i" + std::to_string(i);
        inst.text = "u" + std::to_string(i) + " m";
        inst.tokens = corpus::default_tokenize(inst.text);
        inst.schema_ref = "duo";
        corpus::Tuple t;
        t.assignments["x"] = corpus::Span{0, 0};
        t.assignments["y"] = corpus::Span{1, 1};
        inst.gold_tuples.push_back(t);
        out.push_back(inst);
    }
    return out;
}

cotrain::CotrainConfig small_cotrain_config() {
    cotrain::CotrainConfig config;
    config.scorer.dim = 8;
    config.scorer.max_len = 64;
    config.scorer_epochs = 1;
    config.agent.dim = 8;
    config.agent.max_len = 64;
    config.agent.batch_size = 2;
    config.agent.buffer_capacity = 32;
    config.agent.target_update = 4;
    config.agent_epochs = 1;
    config.seed = 5;
    return config;
}

bool params_equal(const nn::ParameterSet& a, const nn::ParameterSet& b) {
    if (a.items().size() != b.items().size()) return false;
    auto ia = a.items().begin();
    for (auto ib = b.items().begin(); ib != b.items().end(); ++ia, ++ib) {
        if (ia->first != ib->first || ia->second.values() != ib->second.values())
            return false;
    }
    return true;
}

std::string temp_dir(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("the combined action rule sums the agents' q values") {
    std::map<std::string, std::pair<double, double>> q = {{"X", {1.0, 3.0}},
                                                          {"Y", {2.0, 1.0}}};
    CHECK(cotrain::combined_argmax(q) == "X"); // 4 beats 3

    // Adding a common constant to every pair must not change the winner.
    for (double shift : {-10.0, 0.5, 100.0}) {
        std::map<std::string, std::pair<double, double>> shifted;
        for (const auto& [k, v] : q) shifted[k] = {v.first + shift, v.second + shift};
        CHECK(cotrain::combined_argmax(shifted) == "X");
    }

    std::map<std::string, std::pair<double, double>> tied = {{"a", {1.0, 1.0}},
                                                             {"b", {1.0, 1.0}}};
    CHECK(cotrain::combined_argmax(tied) == "a"); // exact tie: lexicographic

    CHECK_THROWS_AS(cotrain::combined_argmax({}), ContractViolation);
}

TEST_CASE("vote combination falls back to the lexicographically smaller nominee") {
    // Agents agree: the common nominee wins in both modes.
    std::map<std::string, std::pair<double, double>> agree = {{"X", {5.0, 6.0}},
                                                              {"Y", {4.0, 5.0}}};
    CHECK(cotrain::combined_argmax(agree, false) == "X");
    CHECK(cotrain::combined_argmax(agree, true) == "X");

    // Agents disagree (b vs c) while the q-sum favors a third action.
    std::map<std::string, std::pair<double, double>> split = {
        {"a", {4.0, 4.0}}, {"b", {5.0, 0.0}}, {"c", {0.0, 6.0}}};
    CHECK(cotrain::combined_argmax(split, false) == "a"); // sum 8 beats 5 and 6
    CHECK(cotrain::combined_argmax(split, true) == "b");  // min("b", "c")
}

TEST_CASE("co-training crosses every agent query to the other half's scorer") {
    const auto registry = duo_registry();
    const auto data = duo_corpus();
    const auto config = small_cotrain_config();

    auto plan = cotrain::run_cotraining(data, registry, config);

    // The halves partition the corpus.
    CHECK(plan.d1.size() == 3);
    CHECK(plan.d2.size() == 3);
    std::set<std::string> ids;
    for (const auto& inst : plan.d1) ids.insert(inst.id);
    for (const auto& inst : plan.d2) ids.insert(inst.id);
    CHECK(ids.size() == 6);

    // One query per environment step, 2 roles per instance, 3 instances,
    // 1 epoch -- and all of them carry the crossed scorer's tag.
    REQUIRE(plan.a1_queries.size() == 1);
    CHECK(plan.a1_queries.at(cotrain::kTagE2) == 6);
    REQUIRE(plan.a2_queries.size() == 1);
    CHECK(plan.a2_queries.at(cotrain::kTagE1) == 6);

    CHECK(plan.a1_log.size() == 1);
    CHECK(plan.a2_log.size() == 1);
    CHECK(plan.seed == config.seed);

    // The whole procedure is a pure function of data and config.
    auto again = cotrain::run_cotraining(data, registry, config);
    CHECK(again.split_seed == plan.split_seed);
    CHECK(params_equal(again.e_full.params(), plan.e_full.params()));
    CHECK(params_equal(again.a1.params(), plan.a1.params()));
    CHECK(params_equal(again.a2.params(), plan.a2.params()));
}

TEST_CASE("plans save, reload, and refuse partial manifests") {
    const auto registry = duo_registry();
    const auto data = duo_corpus();
    auto plan = cotrain::run_cotraining(data, registry, small_cotrain_config());

    const std::string dir = temp_dir("ordex_plan_roundtrip");
    std::filesystem::remove_all(dir);
    const auto manifest = cotrain::save_plan(plan, dir);
    CHECK(manifest.at("status") == "complete");
    CHECK(manifest.at("pairings").at("a1").at("extractor") == cotrain::kTagE2);
    CHECK(manifest.at("pairings").at("a2").at("extractor") == cotrain::kTagE1);
    CHECK(manifest.at("inference").at("extractor") == cotrain::kTagEFull);
    for (const char* name : {"d1", "d2", "e1", "e2", "e_full", "a1", "a2"})
        CHECK(manifest.at("files").contains(name));

    auto loaded = cotrain::load_plan(dir, registry);
    CHECK(loaded.split_seed == plan.split_seed);
    CHECK(params_equal(loaded.e_full.params(), plan.e_full.params()));
    CHECK(params_equal(loaded.a1.params(), plan.a1.params()));
    CHECK(params_equal(loaded.a2.params(), plan.a2.params()));
    CHECK(loaded.a1_queries == plan.a1_queries);
    CHECK(loaded.d1.size() == plan.d1.size());

    // A plan marked partial (a crossing abort mid-save) must not load.
    const std::string partial_dir = temp_dir("ordex_plan_partial");
    std::filesystem::remove_all(partial_dir);
    cotrain::save_plan(plan, partial_dir, "partial", {"d1", "d2"});
    CHECK_THROWS_AS(cotrain::load_plan(partial_dir, registry), ValidationError);

    std::filesystem::remove_all(dir);
    std::filesystem::remove_all(partial_dir);
}

TEST_CASE("inference queries only the full-data scorer") {
    const auto registry = duo_registry();
    const auto data = duo_corpus();
    auto plan = cotrain::run_cotraining(data, registry, small_cotrain_config());

    const std::vector<corpus::Instance> eval = {data[0], data[1]};
    auto out = cotrain::infer(plan, registry, eval);

    REQUIRE(out.query_counts.size() == 1);
    CHECK(out.query_counts.count(cotrain::kTagEFull) == 1);
    // A full rollout queries once per internal tree node: at least the root
    // plus one successor per instance.
    CHECK(out.query_counts.at(cotrain::kTagEFull) >= 4);

    REQUIRE(out.tuples.size() == 2);
    CHECK(out.tuples.count("i0") == 1);
    CHECK(out.tuples.count("i1") == 1);
    for (const auto& [id, tuples] : out.tuples) CHECK_FALSE(tuples.empty());
    CHECK(out.traces.size() == 2);
}

TEST_CASE("the vote flag rides along through plan persistence") {
    const auto registry = duo_registry();
    const auto data = duo_corpus();
    auto config = small_cotrain_config();
    config.vote_combination = true;

    auto plan = cotrain::run_cotraining(data, registry, config);
    CHECK(plan.vote_combination);

    const std::string dir = temp_dir("ordex_plan_vote");
    std::filesystem::remove_all(dir);
    const auto manifest = cotrain::save_plan(plan, dir);
    CHECK(manifest.at("vote_combination") == true);
    auto loaded = cotrain::load_plan(dir, registry);
    CHECK(loaded.vote_combination);
    std::filesystem::remove_all(dir);
}
