#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ordex/autodiff.hpp"
#include "ordex/checkpoint.hpp"
#include "ordex/common.hpp"
#include "ordex/corpus.hpp"
#include "ordex/encoder.hpp"
#include "ordex/extractor.hpp"
#include "ordex/optimizer.hpp"
#include "ordex/rng.hpp"
#include "ordex/vocab.hpp"

namespace ordex::scorer {

// One conditioned extraction call: which role to extract next, given the
// elements already extracted from this instance.
struct ExtractionQuery {
    std::string schema_ref;
    extract::Condition condition;
    std::string target_role;
    const corpus::Instance* instance = nullptr;
};

inline void validate_query(const ExtractionQuery& query, const corpus::Schema& schema) {
    if (query.instance == nullptr) throw ContractViolation("query has no instance");
    if (!schema.has_role(query.target_role))
        throw ValidationError("target role " + query.target_role + " not in schema " +
                              schema.type_name);
    for (const auto& entry : query.condition) {
        if (!schema.has_role(entry.role))
            throw ValidationError("condition role " + entry.role + " not in schema " +
                                  schema.type_name);
        if (entry.role == query.target_role)
            throw ValidationError("target role " + query.target_role +
                                  " repeated in condition");
    }
}

// ---------------------------------------------------------------------------
// Query sequence
// ---------------------------------------------------------------------------

struct BuiltSequence {
    std::vector<std::string> tokens;
    std::vector<size_t> sentence_pos; // sentence token t sits at tokens[sentence_pos[t]]
};

// [CLS], then each condition pair as "role = argument ... [SEP]", then the
// target role, [SEP], the sentence tokens, [SEP]. The offset map recovers
// sentence positions for span scoring.
inline BuiltSequence build_query_sequence(const ExtractionQuery& query, size_t max_len) {
    BuiltSequence out;
    out.tokens.push_back(nn::Vocab::kCls);
    for (const auto& entry : query.condition) {
        out.tokens.push_back(entry.role);
        out.tokens.push_back(nn::Vocab::kEq);
        if (entry.argument)
            out.tokens.insert(out.tokens.end(), entry.argument->begin(),
                              entry.argument->end());
        else
            out.tokens.push_back(nn::Vocab::kNone);
        out.tokens.push_back(nn::Vocab::kSep);
    }
    out.tokens.push_back(query.target_role);
    out.tokens.push_back(nn::Vocab::kSep);
    const auto& sentence = query.instance->tokens;
    out.sentence_pos.resize(sentence.size());
    for (size_t t = 0; t < sentence.size(); ++t) {
        out.sentence_pos[t] = out.tokens.size();
        out.tokens.push_back(sentence[t]);
    }
    out.tokens.push_back(nn::Vocab::kSep);
    if (out.tokens.size() > max_len)
        throw TruncationError("query sequence for instance " + query.instance->id + " has " +
                              std::to_string(out.tokens.size()) + " tokens, max is " +
                              std::to_string(max_len));
    return out;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct ScorerConfig {
    size_t dim = 64;
    size_t max_len = 512;
    double rope_base = 10000.0;
    bool sigmoid_score = false; // squash extraction scores into (0,1) for bounded rewards

    void validate() const {
        if (dim == 0 || dim % 2 != 0) throw ConfigError("scorer dim must be even and > 0");
        if (max_len < 4) throw ConfigError("scorer max_len too small");
        if (!(rope_base > 0.0)) throw ConfigError("rope_base must be > 0");
    }

    nlohmann::json to_json() const {
        return {{"dim", dim},
                {"max_len", max_len},
                {"rope_base", rope_base},
                {"sigmoid_score", sigmoid_score}};
    }

    static ScorerConfig from_json(const nlohmann::json& j) {
        ScorerConfig c;
        c.dim = j.at("dim").get<size_t>();
        c.max_len = j.at("max_len").get<size_t>();
        c.rope_base = j.at("rope_base").get<double>();
        c.sigmoid_score = j.at("sigmoid_score").get<bool>();
        c.validate();
        return c;
    }
};

class ScorerModel {
public:
    ScorerModel() = default;

    static ScorerModel init(ScorerConfig config, nn::Vocab vocab, uint64_t seed) {
        config.validate();
        ScorerModel m;
        m.config_ = config;
        m.vocab_ = std::move(vocab);
        util::Rng rng(util::Rng::derive(seed, "scorer.init"));
        nn::add_encoder_params(m.params_, m.encoder_config(), rng);
        const size_t d = config.dim;
        m.params_.add_uniform("gp.wq", {d, d}, d, rng);
        m.params_.add_uniform("gp.bq", {d}, d, rng);
        m.params_.add_uniform("gp.wk", {d, d}, d, rng);
        m.params_.add_uniform("gp.bk", {d}, d, rng);
        return m;
    }

    const ScorerConfig& config() const { return config_; }
    const nn::Vocab& vocab() const { return vocab_; }
    nn::ParameterSet& params() { return params_; }
    const nn::ParameterSet& params() const { return params_; }

    nn::EncoderConfig encoder_config() const {
        nn::EncoderConfig c;
        c.dim = config_.dim;
        c.vocab_size = vocab_.size();
        c.max_len = config_.max_len;
        c.rope_base = config_.rope_base;
        return c;
    }

    void save(const std::string& path) const {
        nlohmann::json meta = {{"kind", "scorer"},
                               {"config", config_.to_json()},
                               {"vocab", vocab_.to_json()}};
        nn::save_checkpoint(path, params_, meta);
    }

    static ScorerModel load(const std::string& path) {
        auto [params, meta] = nn::load_checkpoint(path);
        if (meta.value("kind", "") != "scorer")
            throw ParseError("checkpoint " + path + " is not a scorer checkpoint");
        ScorerModel m;
        m.config_ = ScorerConfig::from_json(meta.at("config"));
        m.vocab_ = nn::Vocab::from_json(meta.at("vocab"));
        m.params_ = std::move(params);
        return m;
    }

private:
    ScorerConfig config_;
    nn::Vocab vocab_;
    nn::ParameterSet params_;
};

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

struct ScoreMatrix {
    size_t length = 0;
    std::vector<double> scores; // row-major length x length; start > end masked to -inf

    double at(size_t i, size_t j) const { return scores[i * length + j]; }
    double& at(size_t i, size_t j) { return scores[i * length + j]; }
};

// Builds the differentiable score-matrix head: rotate the projected queries
// and keys by their positions, then take all pairwise dot products, so entry
// (i, j) only depends on the position difference j - i.
inline nn::Graph::Node* score_matrix_node(nn::Graph& g, ScorerModel& model,
                                          const ExtractionQuery& query,
                                          BuiltSequence* built_out = nullptr) {
    BuiltSequence built = build_query_sequence(query, model.config().max_len);
    auto& params = model.params();
    auto* h = nn::encode(g, params, model.encoder_config(), model.vocab().ids(built.tokens));
    auto* hs = g.row_select(h, built.sentence_pos);
    auto* q = g.add_row(g.matmul(hs, g.param(params.get("gp.wq"), "gp.wq")),
                        g.param(params.get("gp.bq"), "gp.bq"));
    auto* k = g.add_row(g.matmul(hs, g.param(params.get("gp.wk"), "gp.wk")),
                        g.param(params.get("gp.bk"), "gp.bk"));
    std::vector<long> positions(built.sentence_pos.begin(), built.sentence_pos.end());
    auto* qr = g.rope_rows(q, positions, model.config().rope_base);
    auto* kr = g.rope_rows(k, std::move(positions), model.config().rope_base);
    auto* s = g.matmul(qr, g.transpose(kr));
    if (built_out) *built_out = std::move(built);
    return s;
}

inline ScoreMatrix score_spans(ScorerModel& model, const ExtractionQuery& query) {
    nn::Graph g;
    auto* node = score_matrix_node(g, model, query);
    ScoreMatrix m;
    m.length = node->value.dim(0);
    m.scores = node->value.values();
    for (size_t i = 0; i < m.length; ++i)
        for (size_t j = 0; j < i; ++j)
            m.at(i, j) = -std::numeric_limits<double>::infinity();
    return m;
}

// log(1 + sum_P e^{-s}) + log(1 + sum_Q e^{s}) with Q = valid spans not in P.
inline double gp_loss(const ScoreMatrix& matrix, const std::set<corpus::Span>& positives) {
    for (const auto& span : positives)
        if (span.start > span.end || span.end >= matrix.length)
            throw ContractViolation("gp_loss positive span out of bounds");
    std::vector<double> pos_terms, neg_terms;
    for (const auto& span : positives) pos_terms.push_back(-matrix.at(span.start, span.end));
    for (size_t i = 0; i < matrix.length; ++i)
        for (size_t j = i; j < matrix.length; ++j)
            if (!positives.count({i, j})) neg_terms.push_back(matrix.at(i, j));
    return nn::log1p_sum_exp(pos_terms, nullptr) + nn::log1p_sum_exp(neg_terms, nullptr);
}

// All spans scoring strictly above 0, best first; ties break on (start, end).
inline std::vector<extract::ScoredSpan> decode_spans(const ScoreMatrix& matrix) {
    std::vector<extract::ScoredSpan> out;
    for (size_t i = 0; i < matrix.length; ++i)
        for (size_t j = i; j < matrix.length; ++j)
            if (matrix.at(i, j) > 0.0) out.push_back({{i, j}, matrix.at(i, j)});
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.span < b.span;
    });
    return out;
}

// ---------------------------------------------------------------------------
// Training-set construction
// ---------------------------------------------------------------------------

struct TrainingExample {
    ExtractionQuery query;
    std::set<corpus::Span> positives;
};

namespace detail {

inline std::optional<std::vector<std::string>> argument_tokens(const corpus::Instance& inst,
                                                               const corpus::Tuple& tuple,
                                                               const std::string& role) {
    const auto& span = tuple.assignments.at(role);
    if (!span) return std::nullopt;
    return extract::span_tokens(inst, *span);
}

inline bool tuple_consistent(const corpus::Instance& inst, const corpus::Tuple& tuple,
                             const extract::Condition& condition) {
    for (const auto& entry : condition)
        if (argument_tokens(inst, tuple, entry.role) != entry.argument) return false;
    return true;
}

inline std::vector<std::vector<size_t>> role_permutations(size_t n, size_t cap,
                                                          util::Rng& rng) {
    std::vector<size_t> perm(n);
    std::iota(perm.begin(), perm.end(), size_t{0});
    std::vector<std::vector<size_t>> out;
    if (n <= cap) {
        do {
            out.push_back(perm);
        } while (std::next_permutation(perm.begin(), perm.end()));
        return out;
    }
    size_t budget = 1;
    for (size_t i = 2; i <= cap; ++i) budget *= i;
    util::log_warn("role count " + std::to_string(n) + " above permutation cap " +
                   std::to_string(cap) + "; sampling " + std::to_string(budget) +
                   " permutations");
    for (size_t s = 0; s < budget; ++s) {
        rng.shuffle(perm);
        out.push_back(perm);
    }
    return out;
}

} // namespace detail

// Enumerates, per instance, every (condition set, next role) pair reachable
// by walking the schema's roles in any order, with gold arguments filling the
// conditions. For a single tuple over n roles this yields n * 2^(n-1)
// distinct pairs. Queries keep pointers into `data`; keep it alive.
inline std::vector<TrainingExample>
build_training_set(const std::vector<corpus::Instance>& data,
                   const corpus::SchemaRegistry& registry, size_t permutation_cap = 6,
                   uint64_t sample_seed = 0) {
    std::vector<TrainingExample> out;
    util::Rng rng(util::Rng::derive(sample_seed, "training_set.permutations"));
    for (const auto& inst : data) {
        const corpus::Schema& schema = registry.get(inst.schema_ref);
        const size_t n = schema.roles.size();
        const auto perms = detail::role_permutations(n, permutation_cap, rng);
        std::set<std::pair<std::string, extract::Condition>> seen;
        for (const auto& perm : perms) {
            for (size_t len = 0; len < n; ++len) {
                const std::string& target = schema.roles[perm[len]];
                for (const auto& tuple : inst.gold_tuples) {
                    extract::Condition condition;
                    for (size_t k = 0; k < len; ++k)
                        condition.push_back({schema.roles[perm[k]],
                                             detail::argument_tokens(inst, tuple,
                                                                     schema.roles[perm[k]])});
                    std::sort(condition.begin(), condition.end(),
                              [&](const auto& a, const auto& b) {
                                  return schema.role_index(a.role) < schema.role_index(b.role);
                              });
                    if (!seen.emplace(target, condition).second) continue;
                    TrainingExample ex;
                    ex.query = {inst.schema_ref, condition, target, &inst};
                    for (const auto& other : inst.gold_tuples) {
                        if (!detail::tuple_consistent(inst, other, condition)) continue;
                        const auto& span = other.assignments.at(target);
                        if (span) ex.positives.insert(*span);
                    }
                    out.push_back(std::move(ex));
                }
            }
        }
    }
    return out;
}

inline void dump_training_set(const std::string& path,
                              const std::vector<TrainingExample>& set) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open training-set dump for writing: " + path);
    for (const auto& ex : set) {
        nlohmann::json cond = nlohmann::json::array();
        for (const auto& entry : ex.query.condition) {
            nlohmann::json e = {{"role", entry.role}};
            if (entry.argument)
                e["argument"] = corpus::join_tokens(*entry.argument);
            else
                e["argument"] = nullptr;
            cond.push_back(std::move(e));
        }
        nlohmann::json pos = nlohmann::json::array();
        for (const auto& span : ex.positives) pos.push_back({span.start, span.end});
        out << nlohmann::json{{"id", ex.query.instance->id},
                              {"schema", ex.query.schema_ref},
                              {"condition", std::move(cond)},
                              {"target", ex.query.target_role},
                              {"positives", std::move(pos)}}
                   .dump()
            << "\n";
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainReport {
    std::vector<double> epoch_mean_losses;
    bool aborted = false;
};

// One optimizer step per query, examples shuffled each epoch. On a non-finite
// loss the model rolls back to the end of the last completed epoch.
inline TrainReport train_scorer(ScorerModel& model,
                                const std::vector<TrainingExample>& training_set,
                                const nn::OptimizerConfig& opt_config, size_t epochs,
                                uint64_t seed) {
    TrainReport report;
    if (epochs == 0) return report;
    if (training_set.empty()) throw ContractViolation("train_scorer needs a training set");
    nn::AdamW optimizer(opt_config);
    util::Rng shuffle_rng(util::Rng::derive(seed, "train_scorer.shuffle"));
    nn::ParameterSet last_good = model.params();
    std::vector<size_t> order(training_set.size());
    std::iota(order.begin(), order.end(), size_t{0});
    size_t step = 0;
    for (size_t epoch = 0; epoch < epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double total = 0.0;
        for (size_t idx : order) {
            const TrainingExample& ex = training_set[idx];
            nn::Graph g;
            auto* s = score_matrix_node(g, model, ex.query);
            std::set<std::pair<size_t, size_t>> pos;
            for (const auto& span : ex.positives) pos.emplace(span.start, span.end);
            auto* loss = g.gp_span_loss(s, pos);
            model.params().zero_grad();
            double value = 0.0;
            try {
                value = g.backward(loss);
            } catch (const NumericError& e) {
                util::log_warn(std::string("train_scorer aborting: ") + e.what());
                model.params() = last_good;
                report.aborted = true;
                return report;
            }
            optimizer.step(model.params(), ++step);
            total += value;
        }
        if (!model.params().all_finite()) {
            util::log_warn("train_scorer aborting: non-finite parameters after epoch " +
                           std::to_string(epoch + 1));
            model.params() = last_good;
            report.aborted = true;
            return report;
        }
        report.epoch_mean_losses.push_back(total / static_cast<double>(training_set.size()));
        util::log_info("scorer epoch " + std::to_string(epoch + 1) + "/" +
                       std::to_string(epochs) + " mean loss " +
                       std::to_string(report.epoch_mean_losses.back()));
        last_good = model.params();
    }
    return report;
}

// ---------------------------------------------------------------------------
// Extractor adapter
// ---------------------------------------------------------------------------

// Conditions arrive in extraction order but training enumerated them in
// schema role order, so the adapter canonicalizes before querying the model.
class ScorerExtractor : public extract::SpanExtractor {
public:
    ScorerExtractor(ScorerModel& model, const corpus::SchemaRegistry& registry,
                    std::string provenance = "scorer")
        : SpanExtractor(std::move(provenance)), model_(model), registry_(registry) {}

    std::vector<extract::ScoredSpan> extract(const corpus::Instance& instance,
                                             const extract::Condition& condition,
                                             const std::string& target_role) override {
        const corpus::Schema& schema = registry_.get(instance.schema_ref);
        extract::Condition canonical = condition;
        std::sort(canonical.begin(), canonical.end(), [&](const auto& a, const auto& b) {
            return schema.role_index(a.role) < schema.role_index(b.role);
        });
        ExtractionQuery query{instance.schema_ref, std::move(canonical), target_role,
                              &instance};
        auto spans = decode_spans(score_spans(model_, query));
        if (model_.config().sigmoid_score)
            for (auto& s : spans) s.score = 1.0 / (1.0 + std::exp(-s.score));
        return spans;
    }

private:
    ScorerModel& model_;
    const corpus::SchemaRegistry& registry_;
};

} // namespace ordex::scorer
