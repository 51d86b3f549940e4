#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ordex/common.hpp"
#include "ordex/corpus.hpp"
#include "ordex/env.hpp"
#include "ordex/extractor.hpp"
#include "ordex/rng.hpp"

namespace ordex::metrics {

// Micro counts with the usual zero conventions: an empty denominator gives 0,
// and F1 is 0 whenever precision + recall is.
struct MatchReport {
    size_t tp = 0;
    size_t predicted = 0;
    size_t gold = 0;

    double precision() const {
        return predicted == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(predicted);
    }
    double recall() const {
        return gold == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(gold);
    }
    double f1() const {
        const double p = precision(), r = recall();
        return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
    }
};

using Predictions = std::map<std::string, std::vector<corpus::Tuple>>;

namespace detail {

// Predictions and gold must cover exactly the same instance ids.
inline void check_alignment(const Predictions& predictions,
                            const std::vector<corpus::Instance>& gold) {
    std::set<std::string> gold_ids;
    for (const auto& inst : gold) gold_ids.insert(inst.id);
    std::string missing, extra;
    for (const auto& id : gold_ids)
        if (!predictions.count(id)) missing += (missing.empty() ? "" : ", ") + id;
    for (const auto& [id, tuples] : predictions)
        if (!gold_ids.count(id)) extra += (extra.empty() ? "" : ", ") + id;
    if (!missing.empty() || !extra.empty())
        throw AlignmentError("prediction/gold id mismatch; missing predictions for [" +
                             missing + "], predictions without gold for [" + extra + "]");
}

inline std::vector<corpus::Tuple> dedup(const std::vector<corpus::Tuple>& tuples) {
    std::vector<corpus::Tuple> out;
    for (const auto& t : tuples)
        if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Exact match
// ---------------------------------------------------------------------------

// A predicted tuple is a true positive iff an identical gold tuple exists on
// the same instance. Counts are micro-aggregated over instances; duplicates
// within an instance count once.
inline MatchReport exact_match(const Predictions& predictions,
                               const std::vector<corpus::Instance>& gold) {
    detail::check_alignment(predictions, gold);
    MatchReport report;
    for (const auto& inst : gold) {
        const auto pred = detail::dedup(predictions.at(inst.id));
        const auto ref = detail::dedup(inst.gold_tuples);
        report.predicted += pred.size();
        report.gold += ref.size();
        for (const auto& t : pred)
            if (std::find(ref.begin(), ref.end(), t) != ref.end()) ++report.tp;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Word-level match
// ---------------------------------------------------------------------------

namespace detail {

inline std::string lower_ascii(std::string s) {
    for (char& c : s)
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c + ('a' - 'A'));
    return s;
}

inline std::set<std::string> argument_words(const corpus::Instance& inst,
                                            const std::optional<corpus::Span>& span) {
    std::set<std::string> words;
    if (!span) return words;
    for (const auto& tok : extract::span_tokens(inst, *span)) words.insert(lower_ascii(tok));
    return words;
}

// Word-overlap F1 between one predicted and one gold argument. Two empty
// arguments agree perfectly; an empty side against a non-empty one scores 0.
inline double text_f1(const std::set<std::string>& pred, const std::set<std::string>& gold) {
    if (pred.empty() && gold.empty()) return 1.0;
    if (pred.empty() || gold.empty()) return 0.0;
    size_t overlap = 0;
    for (const auto& w : pred) overlap += gold.count(w);
    const double p = static_cast<double>(overlap) / static_cast<double>(pred.size());
    const double r = static_cast<double>(overlap) / static_cast<double>(gold.size());
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

// Mean argument-level F1 over the schema's roles, for one event pair.
inline double event_score(const corpus::Instance& inst, const corpus::Schema& schema,
                          const corpus::Tuple& pred, const corpus::Tuple& gold) {
    double total = 0.0;
    for (const auto& role : schema.roles)
        total += text_f1(argument_words(inst, pred.assignments.at(role)),
                         argument_words(inst, gold.assignments.at(role)));
    return total / static_cast<double>(schema.roles.size());
}

inline void check_roles(const corpus::Tuple& tuple, const corpus::Schema& schema,
                        const std::string& id) {
    if (tuple.assignments.size() != schema.roles.size())
        throw ValidationError("tuple on instance " + id + " has " +
                              std::to_string(tuple.assignments.size()) + " roles, schema " +
                              schema.type_name + " has " +
                              std::to_string(schema.roles.size()));
    for (const auto& role : schema.roles)
        if (!tuple.assignments.count(role))
            throw ValidationError("tuple on instance " + id + " is missing role " + role);
}

} // namespace detail

struct WordLevelReport {
    double precision = 0.0; // mean over predicted events of their best gold score
    double recall = 0.0;    // mean over gold events of their best predicted score
    double f1 = 0.0;
};

// Soft, word-overlap scoring: each event is judged against its most favorable
// counterpart, and the corpus numbers are plain means over all predicted
// (precision) and all gold (recall) events.
inline WordLevelReport word_level(const Predictions& predictions,
                                  const std::vector<corpus::Instance>& gold,
                                  const corpus::SchemaRegistry& registry) {
    detail::check_alignment(predictions, gold);
    double prec_total = 0.0, rec_total = 0.0;
    size_t prec_events = 0, rec_events = 0;
    for (const auto& inst : gold) {
        const corpus::Schema& schema = registry.get(inst.schema_ref);
        const auto& pred = predictions.at(inst.id);
        for (const auto& t : pred) detail::check_roles(t, schema, inst.id);
        for (const auto& p : pred) {
            double best = 0.0;
            for (const auto& g : inst.gold_tuples)
                best = std::max(best, detail::event_score(inst, schema, p, g));
            prec_total += best;
            ++prec_events;
        }
        for (const auto& g : inst.gold_tuples) {
            double best = 0.0;
            for (const auto& p : pred)
                best = std::max(best, detail::event_score(inst, schema, p, g));
            rec_total += best;
            ++rec_events;
        }
    }
    WordLevelReport report;
    report.precision = prec_events ? prec_total / static_cast<double>(prec_events) : 0.0;
    report.recall = rec_events ? rec_total / static_cast<double>(rec_events) : 0.0;
    report.f1 = report.precision + report.recall == 0.0
                    ? 0.0
                    : 2.0 * report.precision * report.recall /
                          (report.precision + report.recall);
    return report;
}

// ---------------------------------------------------------------------------
// Order sensitivity
// ---------------------------------------------------------------------------

struct SensitivityLabel {
    std::string id;
    bool sensitive = false;
};

struct SensitivityReport {
    double ratio = 0.0; // sensitive / evaluated
    size_t sensitive_count = 0;
    size_t evaluated = 0;
    std::vector<SensitivityLabel> labels;
    std::vector<std::string> skipped; // more roles than the permutation guard allows
};

// An instance is order-sensitive under an extractor when two extraction
// orders disagree on the final tuple set, all branches expanded. Instances
// whose role count makes full permutation enumeration infeasible are skipped
// and reported, not failed.
inline SensitivityReport sensitivity_ratio(const std::vector<corpus::Instance>& data,
                                           const corpus::SchemaRegistry& registry,
                                           extract::SpanExtractor& extractor,
                                           size_t max_roles = 8,
                                           const env::EnvConfig& env_config = {}) {
    SensitivityReport report;
    for (const auto& inst : data) {
        const corpus::Schema& schema = registry.get(inst.schema_ref);
        if (schema.roles.size() > max_roles) {
            util::log_warn("sensitivity: skipping instance " + inst.id + " with " +
                           std::to_string(schema.roles.size()) + " roles (guard is " +
                           std::to_string(max_roles) + ")");
            report.skipped.push_back(inst.id);
            continue;
        }
        std::vector<std::string> order = schema.roles;
        std::sort(order.begin(), order.end());
        std::string first;
        bool have_first = false, sensitive = false;
        do {
            const auto tree =
                env::rollout(inst, schema, env::make_order_policy(order), extractor,
                             env_config);
            const auto fp = corpus::tuples_fingerprint(env::tree_to_tuples(tree));
            if (!have_first) {
                first = fp;
                have_first = true;
            } else if (fp != first) {
                sensitive = true;
                break;
            }
        } while (std::next_permutation(order.begin(), order.end()));
        report.labels.push_back({inst.id, sensitive});
        ++report.evaluated;
        if (sensitive) ++report.sensitive_count;
    }
    report.ratio = report.evaluated == 0 ? 0.0
                                         : static_cast<double>(report.sensitive_count) /
                                               static_cast<double>(report.evaluated);
    return report;
}

// ---------------------------------------------------------------------------
// Order comparison
// ---------------------------------------------------------------------------

struct OrderComparison {
    std::map<std::string, MatchReport> reports; // policy name -> exact match
    std::map<std::string, Predictions> predictions;
};

// Runs the same extractor under a fixed schema-order policy, a per-instance
// random order, and (when given) an adaptive policy, and scores each against
// gold. The random orders derive from the seed and the instance id, so the
// comparison is reproducible and independent of dataset order.
inline OrderComparison order_comparison(const std::vector<corpus::Instance>& data,
                                        const corpus::SchemaRegistry& registry,
                                        extract::SpanExtractor& extractor,
                                        const env::Policy* adaptive, uint64_t seed,
                                        const env::EnvConfig& env_config = {}) {
    OrderComparison out;
    std::vector<std::string> names = {"sequence", "random"};
    if (adaptive)
        names.push_back("adaptive");
    else
        util::log_warn("order comparison without an agent; adaptive policy omitted");
    for (const auto& name : names) {
        Predictions preds;
        for (const auto& inst : data) {
            const corpus::Schema& schema = registry.get(inst.schema_ref);
            env::Policy policy;
            if (name == "sequence") {
                policy = env::make_order_policy(schema.roles);
            } else if (name == "random") {
                util::Rng rng(util::Rng::derive(util::Rng::derive(seed, "order.random"),
                                                inst.id));
                policy = env::make_order_policy(env::random_order(schema, rng));
            } else {
                policy = *adaptive;
            }
            const auto tree = env::rollout(inst, schema, policy, extractor, env_config);
            preds[inst.id] = env::tree_to_tuples(tree);
        }
        out.reports[name] = exact_match(preds, data);
        out.predictions[name] = std::move(preds);
    }
    return out;
}

} // namespace ordex::metrics
