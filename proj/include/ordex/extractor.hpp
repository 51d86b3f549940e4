#pragma once

#include <compare>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ordex/corpus.hpp"

namespace ordex::extract {

// One already-extracted element conditioning the next extraction: a role and
// its argument tokens, or the explicit no-argument marker (nullopt).
struct ConditionEntry {
    std::string role;
    std::optional<std::vector<std::string>> argument;

    auto operator<=>(const ConditionEntry&) const = default;
};

using Condition = std::vector<ConditionEntry>;

struct ScoredSpan {
    corpus::Span span;
    double score = 0.0;

    bool operator==(const ScoredSpan&) const = default;
};

// What the environment needs from an extractor: given the instance, the
// elements extracted so far, and the role to extract next, produce the
// decoded spans with their scores (descending; empty when nothing clears the
// decoding threshold). The provenance tag identifies which artifact answers
// queries, so training protocols can audit who extracted what.
class SpanExtractor {
public:
    explicit SpanExtractor(std::string provenance = "extractor")
        : provenance_(std::move(provenance)) {}
    virtual ~SpanExtractor() = default;

    virtual std::vector<ScoredSpan> extract(const corpus::Instance& instance,
                                            const Condition& condition,
                                            const std::string& target_role) = 0;

    const std::string& provenance() const { return provenance_; }

private:
    std::string provenance_;
};

// Decorator that tallies every query by the inner extractor's provenance tag.
class QueryCounter : public SpanExtractor {
public:
    explicit QueryCounter(SpanExtractor& inner)
        : SpanExtractor(inner.provenance()), inner_(inner) {}

    std::vector<ScoredSpan> extract(const corpus::Instance& instance,
                                    const Condition& condition,
                                    const std::string& target_role) override {
        ++counts_[inner_.provenance()];
        return inner_.extract(instance, condition, target_role);
    }

    const std::map<std::string, size_t>& counts() const { return counts_; }
    size_t total() const {
        size_t n = 0;
        for (const auto& [tag, c] : counts_) n += c;
        return n;
    }

private:
    SpanExtractor& inner_;
    std::map<std::string, size_t> counts_;
};

inline std::vector<std::string> span_tokens(const corpus::Instance& inst,
                                            const corpus::Span& span) {
    if (span.start > span.end || span.end >= inst.tokens.size())
        throw ContractViolation("span out of bounds in instance " + inst.id);
    return {inst.tokens.begin() + static_cast<long>(span.start),
            inst.tokens.begin() + static_cast<long>(span.end) + 1};
}

} // namespace ordex::extract
