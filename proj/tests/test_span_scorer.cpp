// Span scorer tests. The training-set oracle comes first: for one gold tuple
// over n roles, the pairs a correct builder must emit are exactly
// {(S, target) : S subset of roles minus target}, enumerated below by bitmask
// — n * 2^(n-1) of them — and the builder's output is compared against that
// collection, never against itself.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "ordex/extractor.hpp"
#include "ordex/span_scorer.hpp"

using namespace ordex;

namespace {

// Every (condition role set, target) pair for the given roles, by direct
// subset enumeration.
std::set<std::pair<std::string, std::set<std::string>>>
subset_pairs(const std::vector<std::string>& roles) {
    std::set<std::pair<std::string, std::set<std::string>>> out;
    for (size_t t = 0; t < roles.size(); ++t) {
        std::vector<std::string> rest;
        for (size_t i = 0; i < roles.size(); ++i)
            if (i != t) rest.push_back(roles[i]);
        for (size_t mask = 0; mask < (size_t{1} << rest.size()); ++mask) {
            std::set<std::string> cond;
            for (size_t b = 0; b < rest.size(); ++b)
                if (mask & (size_t{1} << b)) cond.insert(rest[b]);
            out.insert({roles[t], std::move(cond)});
        }
    }
    return out;
}

corpus::SchemaRegistry three_role_registry() {
    corpus::SchemaRegistry registry;
    registry.add({"visit", {"who", "where", "when"}});
    return registry;
}

corpus::Instance three_role_instance() {
    corpus::Instance inst;
    inst.id = "v-0";
    inst.text = "carol visited berlin in march";
    inst.tokens = corpus::default_tokenize(inst.text);
    inst.schema_ref = "visit";
    corpus::Tuple t;
    t.assignments["who"] = corpus::Span{0, 0};
    t.assignments["where"] = corpus::Span{2, 2};
    t.assignments["when"] = corpus::Span{4, 4};
    inst.gold_tuples.push_back(t);
    return inst;
}

} // namespace

TEST_CASE("training set covers every condition subset exactly once per target") {
    const auto registry = three_role_registry();
    const std::vector<corpus::Instance> data{three_role_instance()};
    const auto set = scorer::build_training_set(data, registry);

    const auto expected = subset_pairs({"who", "where", "when"});
    REQUIRE(expected.size() == 12); // 3 * 2^2

    std::set<std::pair<std::string, std::set<std::string>>> got;
    for (const auto& ex : set) {
        std::set<std::string> cond;
        for (const auto& entry : ex.query.condition) cond.insert(entry.role);
        const bool fresh = got.insert({ex.query.target_role, std::move(cond)}).second;
        CHECK(fresh); // no duplicate (condition, target) pairs
    }
    CHECK(set.size() == 12);
    CHECK(got == expected);

    // Conditions arrive sorted by schema role order regardless of the walk.
    for (const auto& ex : set)
        for (size_t i = 1; i < ex.query.condition.size(); ++i) {
            const auto& schema = registry.get("visit");
            CHECK(schema.role_index(ex.query.condition[i - 1].role) <
                  schema.role_index(ex.query.condition[i].role));
        }
}

TEST_CASE("above the permutation cap the builder samples instead of enumerating") {
    corpus::SchemaRegistry registry;
    registry.add({"wide", {"r0", "r1", "r2", "r3"}});
    corpus::Instance inst;
    inst.id = "w-0";
    inst.text = "a b c d e f";
    inst.tokens = corpus::default_tokenize(inst.text);
    inst.schema_ref = "wide";
    corpus::Tuple t;
    for (size_t i = 0; i < 4; ++i)
        t.assignments["r" + std::to_string(i)] = corpus::Span{i, i};
    inst.gold_tuples.push_back(t);
    const std::vector<corpus::Instance> data{inst};

    // Cap above the role count: the full 4 * 2^3 = 32 pairs.
    CHECK(scorer::build_training_set(data, registry, 6).size() == 32);

    // Cap below: 3! = 6 sampled walks cover at most 6 * 4 pairs, and sampling
    // is seeded.
    const auto sampled = scorer::build_training_set(data, registry, 3, 99);
    CHECK(sampled.size() > 0);
    CHECK(sampled.size() <= 24);
    const auto again = scorer::build_training_set(data, registry, 3, 99);
    CHECK(again.size() == sampled.size());
}

TEST_CASE("positives include every gold tuple consistent with the condition") {
    corpus::SchemaRegistry registry;
    registry.add({"pair", {"x", "y"}});
    corpus::Instance inst;
    inst.id = "p-0";
    inst.text = "a b c d";
    inst.tokens = corpus::default_tokenize(inst.text);
    inst.schema_ref = "pair";
    corpus::Tuple t1, t2;
    t1.assignments["x"] = corpus::Span{0, 0};
    t1.assignments["y"] = corpus::Span{1, 1};
    t2.assignments["x"] = corpus::Span{2, 2};
    t2.assignments["y"] = corpus::Span{3, 3};
    inst.gold_tuples = {t1, t2};
    const std::vector<corpus::Instance> data{inst};

    const auto set = scorer::build_training_set(data, registry);
    bool saw_unconditioned = false, saw_conditioned = false;
    for (const auto& ex : set) {
        if (ex.query.target_role != "y") continue;
        if (ex.query.condition.empty()) {
            // Both tuples are consistent with the empty condition.
            CHECK(ex.positives == std::set<corpus::Span>{{1, 1}, {3, 3}});
            saw_unconditioned = true;
        } else if (ex.query.condition[0].argument ==
                   std::optional<std::vector<std::string>>{{"a"}}) {
            // Conditioning on x = "a" rules the second tuple out.
            CHECK(ex.positives == std::set<corpus::Span>{{1, 1}});
            saw_conditioned = true;
        }
    }
    CHECK(saw_unconditioned);
    CHECK(saw_conditioned);
}

TEST_CASE("query sequences sandwich condition, target, and sentence") {
    const auto registry = three_role_registry();
    const auto inst = three_role_instance();
    scorer::ExtractionQuery query{
        "visit",
        {{"who", std::vector<std::string>{"carol"}}, {"where", std::nullopt}},
        "when",
        &inst};
    const auto built = scorer::build_query_sequence(query, 64);

    const std::vector<std::string> expected{
        nn::Vocab::kCls, "who",  nn::Vocab::kEq, "carol",   nn::Vocab::kSep,
        "where",         nn::Vocab::kEq, nn::Vocab::kNone, nn::Vocab::kSep,
        "when",          nn::Vocab::kSep,
        "carol",         "visited", "berlin", "in", "march", nn::Vocab::kSep};
    CHECK(built.tokens == expected);

    REQUIRE(built.sentence_pos.size() == inst.tokens.size());
    for (size_t t = 0; t < inst.tokens.size(); ++t)
        CHECK(built.tokens[built.sentence_pos[t]] == inst.tokens[t]);

    try {
        scorer::build_query_sequence(query, 8);
        FAIL("expected TruncationError");
    } catch (const TruncationError& e) {
        CHECK(std::string(e.what()).find("v-0") != std::string::npos);
    }
}

TEST_CASE("query validation rejects foreign and overlapping roles") {
    const auto registry = three_role_registry();
    const auto& schema = registry.get("visit");
    const auto inst = three_role_instance();

    scorer::ExtractionQuery ok{"visit", {}, "who", &inst};
    CHECK_NOTHROW(scorer::validate_query(ok, schema));

    scorer::ExtractionQuery bad_target{"visit", {}, "weather", &inst};
    CHECK_THROWS_AS(scorer::validate_query(bad_target, schema), ValidationError);

    scorer::ExtractionQuery bad_cond{"visit", {{"weather", std::nullopt}}, "who", &inst};
    CHECK_THROWS_AS(scorer::validate_query(bad_cond, schema), ValidationError);

    scorer::ExtractionQuery overlap{"visit", {{"who", std::nullopt}}, "who", &inst};
    CHECK_THROWS_AS(scorer::validate_query(overlap, schema), ValidationError);

    scorer::ExtractionQuery no_inst{"visit", {}, "who", nullptr};
    CHECK_THROWS_AS(scorer::validate_query(no_inst, schema), ContractViolation);
}

TEST_CASE("span loss on zero scores equals the closed-form value") {
    scorer::ScoreMatrix zeros;
    zeros.length = 3;
    zeros.scores.assign(9, 0.0);
    // One positive among six upper-triangle spans: log(1 + e^0) for the
    // positive term, log(1 + 5 e^0) for the negatives.
    CHECK(scorer::gp_loss(zeros, {{0, 1}}) ==
          Catch::Approx(std::log(2.0) + std::log(6.0)).margin(1e-9));

    scorer::ScoreMatrix empty;
    CHECK(scorer::gp_loss(empty, {}) == 0.0);

    CHECK_THROWS_AS(scorer::gp_loss(zeros, {{0, 3}}), ContractViolation);
    CHECK_THROWS_AS(scorer::gp_loss(zeros, {{2, 1}}), ContractViolation);
}

TEST_CASE("decode keeps exactly the positive-score spans, best first") {
    util::Rng rng(7);
    scorer::ScoreMatrix m;
    m.length = 5;
    m.scores.assign(25, 0.0);
    for (size_t i = 0; i < 5; ++i)
        for (size_t j = 0; j < 5; ++j)
            m.at(i, j) = (j < i) ? -std::numeric_limits<double>::infinity()
                                 : rng.uniform(-1.0, 1.0);
    m.at(0, 2) = 0.75;
    m.at(1, 3) = 0.75; // deliberate tie

    // Oracle: brute filter and sort.
    std::vector<extract::ScoredSpan> expected;
    for (size_t i = 0; i < 5; ++i)
        for (size_t j = i; j < 5; ++j)
            if (m.at(i, j) > 0.0) expected.push_back({{i, j}, m.at(i, j)});
    std::sort(expected.begin(), expected.end(), [](const auto& a, const auto& b) {
        return a.score != b.score ? a.score > b.score : a.span < b.span;
    });

    const auto got = scorer::decode_spans(m);
    REQUIRE(got.size() == expected.size());
    for (size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].span == expected[i].span);
        CHECK(got[i].score == expected[i].score);
    }
    // The tie resolved toward the earlier span.
    auto tie = std::find_if(got.begin(), got.end(),
                            [](const auto& s) { return s.score == 0.75; });
    REQUIRE(tie != got.end());
    CHECK(tie->span == corpus::Span{0, 2});
}

TEST_CASE("model scores mask inverted spans and models round-trip through disk") {
    const auto registry = three_role_registry();
    const auto inst = three_role_instance();
    const std::vector<corpus::Instance> data{inst};

    scorer::ScorerConfig config;
    config.dim = 8;
    config.max_len = 64;
    auto model = scorer::ScorerModel::init(
        config, nn::Vocab::build(data, {"visit", "who", "where", "when"}), 5);

    scorer::ExtractionQuery query{"visit", {}, "who", &inst};
    const auto m = scorer::score_spans(model, query);
    REQUIRE(m.length == inst.tokens.size());
    for (size_t i = 0; i < m.length; ++i)
        for (size_t j = 0; j < m.length; ++j) {
            if (j < i)
                CHECK(m.at(i, j) == -std::numeric_limits<double>::infinity());
            else
                CHECK(std::isfinite(m.at(i, j)));
        }
    for (const auto& s : scorer::decode_spans(m)) CHECK(s.span.start <= s.span.end);

    // Same seed, same parameters; different seed, different parameters.
    auto model2 = scorer::ScorerModel::init(
        config, nn::Vocab::build(data, {"visit", "who", "where", "when"}), 5);
    CHECK(model2.params().get("gp.wq").values() == model.params().get("gp.wq").values());
    auto model3 = scorer::ScorerModel::init(
        config, nn::Vocab::build(data, {"visit", "who", "where", "when"}), 6);
    CHECK(model3.params().get("gp.wq").values() != model.params().get("gp.wq").values());

    const std::string path =
        (std::filesystem::temp_directory_path() / "ordex_scorer_rt.ckpt.json").string();
    model.save(path);
    auto restored = scorer::ScorerModel::load(path);
    std::remove(path.c_str());
    const auto m2 = scorer::score_spans(restored, query);
    CHECK(m2.scores == m.scores);

    const std::string other =
        (std::filesystem::temp_directory_path() / "ordex_other.ckpt.json").string();
    nn::save_checkpoint(other, model.params(), {{"kind", "mystery"}});
    CHECK_THROWS_AS(scorer::ScorerModel::load(other), ParseError);
    std::remove(other.c_str());
}

TEST_CASE("extractor canonicalizes condition order and reports its provenance") {
    const auto registry = three_role_registry();
    const auto inst = three_role_instance();
    const std::vector<corpus::Instance> data{inst};
    scorer::ScorerConfig config;
    config.dim = 8;
    config.max_len = 64;
    auto model = scorer::ScorerModel::init(
        config, nn::Vocab::build(data, {"visit", "who", "where", "when"}), 5);
    scorer::ScorerExtractor extractor(model, registry);
    CHECK(extractor.provenance() == "scorer");

    const extract::Condition fwd{{"who", std::vector<std::string>{"carol"}},
                                 {"where", std::vector<std::string>{"berlin"}}};
    const extract::Condition rev{{"where", std::vector<std::string>{"berlin"}},
                                 {"who", std::vector<std::string>{"carol"}}};
    const auto a = extractor.extract(inst, fwd, "when");
    const auto b = extractor.extract(inst, rev, "when");
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].span == b[i].span);
        CHECK(a[i].score == b[i].score);
    }

    scorer::ScorerExtractor tagged(model, registry, "E1");
    CHECK(tagged.provenance() == "E1");

    extract::QueryCounter counter(tagged);
    CHECK(counter.provenance() == "E1");
    counter.extract(inst, {}, "who");
    counter.extract(inst, {}, "where");
    CHECK(counter.total() == 2);
    CHECK(counter.counts().at("E1") == 2);
}

TEST_CASE("sigmoid scoring squashes raw scores without reordering spans") {
    const auto registry = three_role_registry();
    const auto inst = three_role_instance();
    const std::vector<corpus::Instance> data{inst};
    const auto vocab = nn::Vocab::build(data, {"visit", "who", "where", "when"});

    scorer::ScorerConfig raw_cfg;
    raw_cfg.dim = 8;
    raw_cfg.max_len = 64;
    scorer::ScorerConfig sig_cfg = raw_cfg;
    sig_cfg.sigmoid_score = true;
    auto raw_model = scorer::ScorerModel::init(raw_cfg, vocab, 5);
    auto sig_model = scorer::ScorerModel::init(sig_cfg, vocab, 5);

    scorer::ScorerExtractor raw_ex(raw_model, registry);
    scorer::ScorerExtractor sig_ex(sig_model, registry);
    const auto raw_spans = raw_ex.extract(inst, {}, "who");
    const auto sig_spans = sig_ex.extract(inst, {}, "who");
    REQUIRE(raw_spans.size() == sig_spans.size());
    for (size_t i = 0; i < raw_spans.size(); ++i) {
        CHECK(sig_spans[i].span == raw_spans[i].span);
        CHECK(sig_spans[i].score ==
              Catch::Approx(1.0 / (1.0 + std::exp(-raw_spans[i].score))).margin(1e-12));
        CHECK(sig_spans[i].score > 0.5); // decoded spans have raw score > 0
        CHECK(sig_spans[i].score < 1.0);
    }
}

TEST_CASE("training runs are seeded, resumable no-ops at zero epochs") {
    const auto registry = three_role_registry();
    const std::vector<corpus::Instance> data{three_role_instance()};
    const auto set = scorer::build_training_set(data, registry);
    scorer::ScorerConfig config;
    config.dim = 8;
    config.max_len = 64;
    const auto vocab = nn::Vocab::build(data, {"visit", "who", "where", "when"});

    auto model = scorer::ScorerModel::init(config, vocab, 5);
    const auto before = model.params().get("gp.wq").values();
    nn::OptimizerConfig oc;
    oc.total_steps = 1;
    const auto report = scorer::train_scorer(model, set, oc, 0, 5);
    CHECK(report.epoch_mean_losses.empty());
    CHECK_FALSE(report.aborted);
    CHECK(model.params().get("gp.wq").values() == before);

    CHECK_THROWS_AS(scorer::train_scorer(model, {}, oc, 1, 5), ContractViolation);

    // Two identically seeded runs land on identical weights and losses.
    auto m1 = scorer::ScorerModel::init(config, vocab, 5);
    auto m2 = scorer::ScorerModel::init(config, vocab, 5);
    nn::OptimizerConfig oc2;
    oc2.learning_rate = 0.02;
    oc2.total_steps = set.size() * 3;
    const auto r1 = scorer::train_scorer(m1, set, oc2, 3, 11);
    const auto r2 = scorer::train_scorer(m2, set, oc2, 3, 11);
    CHECK(r1.epoch_mean_losses == r2.epoch_mean_losses);
    CHECK(m1.params().get("gp.wq").values() == m2.params().get("gp.wq").values());
    REQUIRE(r1.epoch_mean_losses.size() == 3);
    CHECK(r1.epoch_mean_losses.back() < r1.epoch_mean_losses.front());
}

TEST_CASE("a small model memorizes its training corpus") {
    corpus::SchemaRegistry registry;
    registry.add({"find", {"item"}});
    std::vector<corpus::Instance> data;
    const std::vector<std::string> items{"lamp", "coin", "map"};
    for (size_t i = 0; i < items.size(); ++i) {
        corpus::Instance inst;
        inst.id = "f-" + std::to_string(i);
        inst.text = "we found the " + items[i] + " yesterday";
        inst.tokens = corpus::default_tokenize(inst.text);
        inst.schema_ref = "find";
        corpus::Tuple t;
        t.assignments["item"] = corpus::Span{3, 3};
        inst.gold_tuples.push_back(t);
        data.push_back(inst);
    }
    const auto set = scorer::build_training_set(data, registry);
    REQUIRE(set.size() == 3); // one role: a single (empty condition, item) pair each

    scorer::ScorerConfig config;
    config.dim = 16;
    config.max_len = 64;
    auto model = scorer::ScorerModel::init(config, nn::Vocab::build(data, {"find", "item"}), 1);
    nn::OptimizerConfig oc;
    oc.learning_rate = 0.05;
    oc.total_steps = set.size() * 40;
    scorer::train_scorer(model, set, oc, 40, 1);

    scorer::ScorerExtractor extractor(model, registry);
    for (const auto& inst : data) {
        const auto spans = extractor.extract(inst, {}, "item");
        REQUIRE_FALSE(spans.empty());
        CHECK(spans[0].span == corpus::Span{3, 3});
    }
}
