// Prioritized-replay tests. The statistical oracle comes first: a proportional
// sampler drawing n times with true inclusion probability p lands within three
// binomial standard deviations of p essentially always (a 3-sigma miss is a
// ~0.3% event, and the draws below are seeded), so every frequency assertion
// is |observed - p| < 3*sqrt(p*(1-p)/n). Everything else about the buffer is
// exact: FIFO eviction, running-max priorities for new records, and the
// importance-sampling weight formula.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "ordex/env.hpp"
#include "ordex/replay.hpp"
#include "ordex/rng.hpp"

using namespace ordex;

namespace {

double three_sigma(double p, size_t draws) {
    return 3.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(draws));
}

// The buffer never reads its records' contents, so a transition tagged by its
// action string is all the payload these tests need.
env::Transition tagged(const std::string& tag) {
    env::Transition t;
    t.action = tag;
    return t;
}

// Empirical fraction of draws that landed on `slot`.
double slot_fraction(const agent::ReplayBuffer& buffer, size_t slot, size_t draws,
                     util::Rng& rng) {
    const auto samples = buffer.sample(draws, 0.0, rng);
    size_t hits = 0;
    for (const auto& s : samples)
        if (s.slot == slot) ++hits;
    return static_cast<double>(hits) / static_cast<double>(draws);
}

} // namespace

TEST_CASE("replay buffer rejects degenerate construction parameters") {
    CHECK_THROWS_AS(agent::ReplayBuffer(0), ConfigError);
    CHECK_THROWS_AS(agent::ReplayBuffer(4, -0.1), ConfigError);
    CHECK_THROWS_AS(agent::ReplayBuffer(4, 0.6, 0.0), ConfigError);
    CHECK_THROWS_AS(agent::ReplayBuffer(4, 0.6, -1.0), ConfigError);
}

TEST_CASE("new records enter at the running-max raw priority") {
    agent::ReplayBuffer buffer(8, 1.0);
    buffer.add(tagged("a"));
    CHECK(buffer.priority(0) == 1.0); // nothing seen yet: the initial max

    buffer.set_priority(0, 5.0);
    buffer.add(tagged("b"));
    CHECK(buffer.priority(1) == 5.0);

    // Lowering one record's priority must not lower the running max.
    buffer.set_priority(1, 2.0);
    buffer.add(tagged("c"));
    CHECK(buffer.priority(2) == 5.0);
}

TEST_CASE("full buffer evicts the oldest record first") {
    agent::ReplayBuffer buffer(3, 1.0);
    buffer.add(tagged("a0"));
    buffer.add(tagged("a1"));
    buffer.add(tagged("a2"));
    REQUIRE(buffer.size() == 3);
    REQUIRE(buffer.capacity() == 3);

    buffer.add(tagged("a3"));
    CHECK(buffer.size() == 3);
    CHECK(buffer.at(0).action == "a3"); // slot 0 held the oldest record
    CHECK(buffer.at(1).action == "a1");
    CHECK(buffer.at(2).action == "a2");

    buffer.add(tagged("a4"));
    CHECK(buffer.at(1).action == "a4");
    CHECK(buffer.at(2).action == "a2");
}

TEST_CASE("update_priority stores the TD magnitude plus epsilon") {
    agent::ReplayBuffer buffer(2, 1.0, 1e-3);
    buffer.add(tagged("a"));
    buffer.update_priority(0, 2.0);
    CHECK(buffer.priority(0) == 2.0 + 1e-3);
    buffer.update_priority(0, 0.0); // a zero TD error still keeps positive mass
    CHECK(buffer.priority(0) == 1e-3);
}

TEST_CASE("sampling is proportional to priority at exponent one") {
    agent::ReplayBuffer buffer(2, 1.0);
    buffer.add(tagged("a"));
    buffer.add(tagged("b"));
    buffer.set_priority(0, 8.0);
    buffer.set_priority(1, 2.0);

    const size_t draws = 100000;
    util::Rng rng(7);
    const double fraction = slot_fraction(buffer, 0, draws, rng);
    CHECK(std::abs(fraction - 0.8) < three_sigma(0.8, draws));
}

TEST_CASE("the priority exponent reshapes the sampling distribution") {
    const size_t draws = 100000;

    SECTION("alpha 0.5 turns priorities {4, 1} into probabilities {2/3, 1/3}") {
        agent::ReplayBuffer buffer(2, 0.5);
        buffer.add(tagged("a"));
        buffer.add(tagged("b"));
        buffer.set_priority(0, 4.0);
        buffer.set_priority(1, 1.0);
        util::Rng rng(11);
        const double fraction = slot_fraction(buffer, 0, draws, rng);
        CHECK(std::abs(fraction - 2.0 / 3.0) < three_sigma(2.0 / 3.0, draws));
    }

    SECTION("alpha 0 samples uniformly regardless of priorities") {
        agent::ReplayBuffer buffer(2, 0.0);
        buffer.add(tagged("a"));
        buffer.add(tagged("b"));
        buffer.set_priority(0, 8.0);
        buffer.set_priority(1, 2.0);
        util::Rng rng(13);
        const double fraction = slot_fraction(buffer, 0, draws, rng);
        CHECK(std::abs(fraction - 0.5) < three_sigma(0.5, draws));
    }
}

TEST_CASE("importance-sampling weights follow (N * P)^-beta, normalized by the batch max") {
    agent::ReplayBuffer buffer(2, 1.0);
    buffer.add(tagged("a"));
    buffer.add(tagged("b"));
    buffer.set_priority(0, 8.0);
    buffer.set_priority(1, 2.0);

    // True inclusion probabilities at alpha 1: 0.8 and 0.2 over N = 2 records.
    const double raw[2] = {std::pow(2.0 * 0.8, -1.0), std::pow(2.0 * 0.2, -1.0)};

    util::Rng rng(17);
    const auto samples = buffer.sample(64, 1.0, rng);
    bool seen[2] = {false, false};
    for (const auto& s : samples) seen[s.slot] = true;
    REQUIRE(seen[0]);
    REQUIRE(seen[1]);

    const double batch_max = std::max(raw[0], raw[1]);
    for (const auto& s : samples)
        CHECK(s.weight == Catch::Approx(raw[s.slot] / batch_max).margin(1e-12));

    // The rare record is the batch max, so its normalized weight is exactly 1.
    for (const auto& s : samples)
        if (s.slot == 1) CHECK(s.weight == 1.0);
}

TEST_CASE("beta zero disables the importance-sampling correction") {
    agent::ReplayBuffer buffer(4, 1.0);
    buffer.add(tagged("a"));
    buffer.add(tagged("b"));
    buffer.add(tagged("c"));
    buffer.set_priority(0, 9.0);
    buffer.set_priority(1, 3.0);
    buffer.set_priority(2, 1.0);

    util::Rng rng(19);
    for (const auto& s : buffer.sample(32, 0.0, rng)) CHECK(s.weight == 1.0);
}

TEST_CASE("every batch is normalized to a max weight of one") {
    agent::ReplayBuffer buffer(4, 1.0);
    buffer.add(tagged("a"));
    buffer.add(tagged("b"));
    buffer.add(tagged("c"));
    buffer.set_priority(0, 8.0);
    buffer.set_priority(1, 2.0);
    buffer.set_priority(2, 5.0);

    util::Rng rng(23);
    for (int round = 0; round < 10; ++round) {
        double max_weight = 0.0;
        for (const auto& s : buffer.sample(16, 0.7, rng))
            max_weight = std::max(max_weight, s.weight);
        CHECK(max_weight == 1.0);
    }
}

TEST_CASE("a single-record buffer always yields slot zero at weight one") {
    agent::ReplayBuffer buffer(4, 0.6);
    buffer.add(tagged("only"));
    util::Rng rng(29);
    for (const auto& s : buffer.sample(5, 0.4, rng)) {
        CHECK(s.slot == 0);
        CHECK(s.weight == 1.0);
    }
}

TEST_CASE("out-of-range and degenerate accesses are contract violations") {
    agent::ReplayBuffer buffer(4, 1.0);
    util::Rng rng(31);
    CHECK_THROWS_AS(buffer.sample(1, 0.0, rng), ContractViolation);

    buffer.add(tagged("a"));
    CHECK_THROWS_AS(buffer.at(1), ContractViolation);
    CHECK_THROWS_AS(buffer.priority(1), ContractViolation);
    CHECK_THROWS_AS(buffer.set_priority(1, 1.0), ContractViolation);
    CHECK_THROWS_AS(buffer.set_priority(0, 0.0), ContractViolation);
    CHECK_THROWS_AS(buffer.set_priority(0, -1.0), ContractViolation);
}
