#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ordex/autodiff.hpp"
#include "ordex/checkpoint.hpp"
#include "ordex/common.hpp"
#include "ordex/corpus.hpp"
#include "ordex/encoder.hpp"
#include "ordex/env.hpp"
#include "ordex/extractor.hpp"
#include "ordex/optimizer.hpp"
#include "ordex/replay.hpp"
#include "ordex/rng.hpp"
#include "ordex/vocab.hpp"

namespace ordex::agent {

struct AgentConfig {
    size_t dim = 64;
    size_t max_len = 512;
    double rope_base = 10000.0;

    double gamma = 0.5;
    size_t buffer_capacity = 100000;
    size_t target_update = 200; // environment steps between target-network copies
    size_t batch_size = 32;

    double learning_rate = 1e-3;
    double warmup_fraction = 0.1;
    double weight_decay = 0.0;

    double priority_alpha = 0.6;
    double priority_epsilon = 1e-3;
    double beta_start = 0.4; // importance-sampling correction, annealed to 1

    double eps_initial = 0.9;
    double eps_floor = 0.05;
    double eps_decay = 0.9;

    size_t branch_cap = 8;
    bool mean_reward = false;

    uint64_t seed = 0;

    void validate() const {
        if (dim == 0 || dim % 2 != 0) throw ConfigError("agent dim must be even and > 0");
        if (max_len < 8) throw ConfigError("agent max_len too small");
        if (!(rope_base > 0.0)) throw ConfigError("rope_base must be > 0");
        if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in [0, 1]");
        if (buffer_capacity == 0) throw ConfigError("buffer_capacity must be >= 1");
        if (target_update == 0) throw ConfigError("target_update must be >= 1");
        if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
        if (!(beta_start >= 0.0 && beta_start <= 1.0))
            throw ConfigError("beta_start must be in [0, 1]");
        if (!(eps_initial >= 0.0 && eps_initial <= 1.0) ||
            !(eps_floor >= 0.0 && eps_floor <= eps_initial) ||
            !(eps_decay > 0.0 && eps_decay < 1.0))
            throw ConfigError("bad exploration schedule parameters");
        if (branch_cap == 0) throw ConfigError("branch_cap must be >= 1");
    }

    nlohmann::json to_json() const {
        return {{"dim", dim},
                {"max_len", max_len},
                {"rope_base", rope_base},
                {"gamma", gamma},
                {"buffer_capacity", buffer_capacity},
                {"target_update", target_update},
                {"batch_size", batch_size},
                {"learning_rate", learning_rate},
                {"warmup_fraction", warmup_fraction},
                {"weight_decay", weight_decay},
                {"priority_alpha", priority_alpha},
                {"priority_epsilon", priority_epsilon},
                {"beta_start", beta_start},
                {"eps_initial", eps_initial},
                {"eps_floor", eps_floor},
                {"eps_decay", eps_decay},
                {"branch_cap", branch_cap},
                {"mean_reward", mean_reward},
                {"seed", seed}};
    }

    static AgentConfig from_json(const nlohmann::json& j) {
        AgentConfig c;
        c.dim = j.at("dim").get<size_t>();
        c.max_len = j.at("max_len").get<size_t>();
        c.rope_base = j.at("rope_base").get<double>();
        c.gamma = j.at("gamma").get<double>();
        c.buffer_capacity = j.at("buffer_capacity").get<size_t>();
        c.target_update = j.at("target_update").get<size_t>();
        c.batch_size = j.at("batch_size").get<size_t>();
        c.learning_rate = j.at("learning_rate").get<double>();
        c.warmup_fraction = j.at("warmup_fraction").get<double>();
        c.weight_decay = j.at("weight_decay").get<double>();
        c.priority_alpha = j.at("priority_alpha").get<double>();
        c.priority_epsilon = j.at("priority_epsilon").get<double>();
        c.beta_start = j.at("beta_start").get<double>();
        c.eps_initial = j.at("eps_initial").get<double>();
        c.eps_floor = j.at("eps_floor").get<double>();
        c.eps_decay = j.at("eps_decay").get<double>();
        c.branch_cap = j.at("branch_cap").get<size_t>();
        c.mean_reward = j.at("mean_reward").get<bool>();
        c.seed = j.at("seed").get<uint64_t>();
        c.validate();
        return c;
    }
};

// ---------------------------------------------------------------------------
// Q input sequence
// ---------------------------------------------------------------------------

// [CLS], candidate action, [SEP], schema type, then the extracted history in
// extraction order as "role = argument ... [SEP]" pairs, then the sentence and
// a closing [SEP]. The history is order-sensitive on purpose: the same set of
// extracted elements reached through different orders is a different state.
// Over-long inputs drop sentence tokens from the tail (with a warning) rather
// than failing, so long instances stay trainable.
inline std::vector<std::string> build_q_sequence(const env::State& state,
                                                 const std::string& action, size_t max_len) {
    std::vector<std::string> tokens;
    tokens.push_back(nn::Vocab::kCls);
    tokens.push_back(action);
    tokens.push_back(nn::Vocab::kSep);
    tokens.push_back(state.schema->type_name);
    for (const auto& entry : state.extracted) {
        tokens.push_back(entry.role);
        tokens.push_back(nn::Vocab::kEq);
        if (entry.span) {
            const auto args = extract::span_tokens(*state.instance, *entry.span);
            tokens.insert(tokens.end(), args.begin(), args.end());
        } else {
            tokens.push_back(nn::Vocab::kNone);
        }
        tokens.push_back(nn::Vocab::kSep);
    }
    const size_t head = tokens.size();
    if (head + 1 > max_len)
        throw TruncationError("q-value sequence for instance " + state.instance->id +
                              " needs " + std::to_string(head + 1) +
                              " tokens before the sentence, max is " + std::to_string(max_len));
    const auto& sentence = state.instance->tokens;
    size_t keep = sentence.size();
    if (head + keep + 1 > max_len) {
        keep = max_len - head - 1;
        util::log_warn("q-value sequence for instance " + state.instance->id +
                       " over length; truncating sentence from " +
                       std::to_string(sentence.size()) + " to " + std::to_string(keep) +
                       " tokens");
    }
    tokens.insert(tokens.end(), sentence.begin(), sentence.begin() + static_cast<long>(keep));
    tokens.push_back(nn::Vocab::kSep);
    return tokens;
}

// ---------------------------------------------------------------------------
// Q network
// ---------------------------------------------------------------------------

// Encoder plus a linear value head on the [CLS] hidden state.
class QNetwork {
public:
    QNetwork() = default;

    static QNetwork init(AgentConfig config, nn::Vocab vocab, uint64_t seed) {
        config.validate();
        QNetwork net;
        net.config_ = config;
        net.vocab_ = std::move(vocab);
        util::Rng rng(util::Rng::derive(seed, "agent.init"));
        nn::add_encoder_params(net.params_, net.encoder_config(), rng);
        net.params_.add_uniform("q.w", {config.dim}, config.dim, rng);
        net.params_.add_uniform("q.b", {1}, config.dim, rng);
        return net;
    }

    const AgentConfig& config() const { return config_; }
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
        nlohmann::json meta = {{"kind", "agent"},
                               {"config", config_.to_json()},
                               {"vocab", vocab_.to_json()}};
        nn::save_checkpoint(path, params_, meta);
    }

    static QNetwork load(const std::string& path) {
        auto [params, meta] = nn::load_checkpoint(path);
        if (meta.value("kind", "") != "agent")
            throw ParseError("checkpoint " + path + " is not an agent checkpoint");
        QNetwork net;
        net.config_ = AgentConfig::from_json(meta.at("config"));
        net.vocab_ = nn::Vocab::from_json(meta.at("vocab"));
        net.params_ = std::move(params);
        return net;
    }

private:
    AgentConfig config_;
    nn::Vocab vocab_;
    nn::ParameterSet params_;
};

inline nn::Graph::Node* q_value_node(nn::Graph& g, QNetwork& net, const env::State& state,
                                     const std::string& action) {
    const auto tokens = build_q_sequence(state, action, net.config().max_len);
    auto& params = net.params();
    auto* h = nn::encode(g, params, net.encoder_config(), net.vocab().ids(tokens));
    auto* h0 = g.reshape(g.row_select(h, {0}), {net.config().dim});
    auto* val = g.dot(h0, g.param(params.get("q.w"), "q.w"));
    return g.add(val, g.param(params.get("q.b"), "q.b"));
}

inline double q_value(QNetwork& net, const env::State& state, const std::string& action) {
    nn::Graph g;
    return q_value_node(g, net, state, action)->value[0];
}

// ---------------------------------------------------------------------------
// Exploration schedule
// ---------------------------------------------------------------------------

// Multiplicative epsilon decay applied once per update interval. The interval
// is sized so the floor is reached at 95% of the training budget.
struct EpsilonSchedule {
    double initial = 0.9;
    double floor_value = 0.05;
    double decay = 0.9;
    size_t update_interval = 1;

    static size_t interval_for(size_t total_steps, double initial = 0.9,
                               double floor_value = 0.05) {
        const double interval = static_cast<double>(total_steps) * std::log(0.95) /
                                (std::log(floor_value) - std::log(initial));
        if (interval < 1.0) return 1;
        return static_cast<size_t>(interval);
    }

    static EpsilonSchedule for_total(size_t total_steps, const AgentConfig& config) {
        return {config.eps_initial, config.eps_floor, config.eps_decay,
                interval_for(total_steps, config.eps_initial, config.eps_floor)};
    }

    double at(size_t step) const {
        const auto k = static_cast<double>(step / update_interval);
        return std::max(floor_value, initial * std::pow(decay, k));
    }
};

// ---------------------------------------------------------------------------
// Action selection
// ---------------------------------------------------------------------------

// Highest-Q remaining role; exact ties break lexicographically.
inline std::string greedy_action(QNetwork& net, const env::State& state) {
    const env::ActionSpace actions = env::action_space(state);
    if (actions.empty()) throw ContractViolation("greedy_action on a terminal state");
    std::string best;
    double best_q = 0.0;
    bool first = true;
    for (const auto& role : actions.remaining) { // std::set iterates sorted
        const double q = q_value(net, state, role);
        if (first || q > best_q) {
            best = role;
            best_q = q;
            first = false;
        }
    }
    return best;
}

// Epsilon-greedy: explore uniformly over the remaining roles with probability
// epsilon, otherwise act greedily. A single remaining role is forced.
inline std::string select_action(QNetwork& net, const env::State& state, double epsilon,
                                 util::Rng& rng) {
    const env::ActionSpace actions = env::action_space(state);
    if (actions.empty()) throw ContractViolation("select_action on a terminal state");
    if (actions.size() == 1) return *actions.remaining.begin();
    if (rng.uniform01() < epsilon) {
        const size_t pick = rng.index(actions.size());
        auto it = actions.remaining.begin();
        std::advance(it, static_cast<long>(pick));
        return *it;
    }
    return greedy_action(net, state);
}

// ---------------------------------------------------------------------------
// Targets and updates
// ---------------------------------------------------------------------------

// Branching double-DQN target: terminal transitions are their reward; others
// add gamma times the branch-averaged target-network value of the action the
// online network would pick in each successor state.
inline double td_target(QNetwork& online, QNetwork& target, const env::Transition& transition,
                        double gamma) {
    if (transition.terminal) return transition.reward;
    if (transition.next_states.empty())
        throw ContractViolation("non-terminal transition with no successor states");
    double sum = 0.0;
    for (const auto& next : transition.next_states) {
        const std::string best = greedy_action(online, next);
        sum += q_value(target, next, best);
    }
    return transition.reward +
           gamma * sum / static_cast<double>(transition.next_states.size());
}

struct TrainStepResult {
    double loss = 0.0;
    std::vector<std::pair<size_t, double>> new_priorities; // (slot, raw priority)
};

// One prioritized batch update on the online network. Returns nothing while
// the buffer holds fewer records than a batch — a skip, not an error. The
// loss is the importance-sampling-weighted mean of squared TD errors, and
// each sampled record's priority is rewritten to |TD error| + epsilon.
inline std::optional<TrainStepResult> train_step(QNetwork& online, QNetwork& target,
                                                 ReplayBuffer& buffer, double gamma,
                                                 nn::AdamW& optimizer, size_t step_index,
                                                 double beta, util::Rng& rng) {
    const size_t batch = online.config().batch_size;
    if (buffer.size() < batch) return std::nullopt;
    const auto samples = buffer.sample(batch, beta, rng);

    std::vector<double> targets(batch);
    for (size_t i = 0; i < batch; ++i)
        targets[i] = td_target(online, target, buffer.at(samples[i].slot), gamma);

    nn::Graph g;
    std::vector<nn::Graph::Node*> terms;
    TrainStepResult result;
    for (size_t i = 0; i < batch; ++i) {
        const env::Transition& tr = buffer.at(samples[i].slot);
        auto* q = q_value_node(g, online, tr.state, tr.action);
        auto* diff = g.sub(g.constant(nn::Tensor::scalar(targets[i])), q);
        terms.push_back(g.scale(g.hadamard(diff, diff),
                                samples[i].weight / static_cast<double>(batch)));
        result.new_priorities.emplace_back(samples[i].slot,
                                           std::abs(targets[i] - q->value[0]) +
                                               online.config().priority_epsilon);
    }
    online.params().zero_grad();
    result.loss = g.backward(g.add_n(std::move(terms)));
    optimizer.step(online.params(), step_index);
    for (const auto& [slot, raw] : result.new_priorities) buffer.set_priority(slot, raw);
    return result;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct LogRow {
    size_t step = 0;  // environment steps taken so far
    size_t epoch = 0; // 1-based
    double loss = 0.0;
    double epsilon = 0.0;
    double mean_return = 0.0; // discounted return along the sampled path
};

inline void write_agent_log(const std::string& path, const std::vector<LogRow>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open agent log for writing: " + path);
    out << "step,epoch,loss,epsilon,mean_return\n";
    for (const auto& r : rows)
        out << r.step << "," << r.epoch << "," << util::double_to_string(r.loss) << ","
            << util::double_to_string(r.epsilon) << "," << util::double_to_string(r.mean_return)
            << "\n";
}

struct TrainAgentResult {
    QNetwork network;
    std::vector<LogRow> log; // one row per epoch
    std::map<std::string, size_t> query_counts; // extractor provenance -> env queries
    bool aborted = false;
};

// Deep-Q training over extraction episodes. Each environment step queries the
// extractor once, stores the full branching transition as a single replay
// record, runs one prioritized batch update (once the buffer can fill a
// batch), and continues the episode along a uniformly random branch. The
// target network is copied from the online network every target_update steps.
inline TrainAgentResult train_agent(const std::vector<corpus::Instance>& data,
                                    const corpus::SchemaRegistry& registry,
                                    extract::SpanExtractor& extractor, size_t epochs,
                                    const AgentConfig& config) {
    config.validate();
    if (data.empty()) throw ContractViolation("train_agent needs training instances");

    std::vector<std::string> extra;
    for (const auto& [name, schema] : registry.items()) {
        extra.push_back(name);
        extra.insert(extra.end(), schema.roles.begin(), schema.roles.end());
    }
    TrainAgentResult result;
    result.network = QNetwork::init(config, nn::Vocab::build(data, extra), config.seed);
    if (epochs == 0) return result;

    size_t total_steps = 0;
    for (const auto& inst : data) total_steps += registry.get(inst.schema_ref).roles.size();
    total_steps *= epochs;

    QNetwork target = result.network;
    const EpsilonSchedule schedule = EpsilonSchedule::for_total(total_steps, config);
    nn::OptimizerConfig opt_config;
    opt_config.learning_rate = config.learning_rate;
    opt_config.warmup_fraction = config.warmup_fraction;
    opt_config.total_steps = total_steps;
    opt_config.weight_decay = config.weight_decay;
    nn::AdamW optimizer(opt_config);
    ReplayBuffer buffer(config.buffer_capacity, config.priority_alpha,
                        config.priority_epsilon);
    const env::EnvConfig env_config{config.branch_cap, config.mean_reward};

    util::Rng explore_rng(util::Rng::derive(config.seed, "agent.explore"));
    util::Rng branch_rng(util::Rng::derive(config.seed, "agent.branch"));
    util::Rng sample_rng(util::Rng::derive(config.seed, "agent.sample"));
    util::Rng shuffle_rng(util::Rng::derive(config.seed, "agent.shuffle"));

    nn::ParameterSet last_good = result.network.params();
    std::vector<size_t> order(data.size());
    std::iota(order.begin(), order.end(), size_t{0});
    size_t step = 0;

    for (size_t epoch = 1; epoch <= epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_total = 0.0;
        size_t loss_count = 0;
        double return_total = 0.0;
        for (size_t idx : order) {
            const corpus::Instance& inst = data[idx];
            const corpus::Schema& schema = registry.get(inst.schema_ref);
            env::State state = env::reset(inst, schema);
            double discount = 1.0;
            double episode_return = 0.0;
            while (!env::is_terminal(state)) {
                const std::string action =
                    select_action(result.network, state, schedule.at(step), explore_rng);
                env::Transition tr = env::step(state, action, extractor, env_config);
                ++result.query_counts[extractor.provenance()];
                buffer.add(tr);
                episode_return += discount * tr.reward;
                discount *= config.gamma;
                state = tr.next_states[branch_rng.index(tr.next_states.size())];
                ++step;
                const double beta =
                    config.beta_start +
                    (1.0 - config.beta_start) *
                        std::min(1.0, static_cast<double>(step) /
                                          static_cast<double>(total_steps));
                try {
                    if (auto res = train_step(result.network, target, buffer, config.gamma,
                                              optimizer, step, beta, sample_rng)) {
                        loss_total += res->loss;
                        ++loss_count;
                    }
                } catch (const NumericError& e) {
                    util::log_warn(std::string("train_agent aborting: ") + e.what());
                    result.network.params() = last_good;
                    result.aborted = true;
                    return result;
                }
                if (step % config.target_update == 0)
                    target.params().copy_values_from(result.network.params());
            }
            return_total += episode_return;
        }
        if (!result.network.params().all_finite()) {
            util::log_warn("train_agent aborting: non-finite parameters after epoch " +
                           std::to_string(epoch));
            result.network.params() = last_good;
            result.aborted = true;
            return result;
        }
        LogRow row;
        row.step = step;
        row.epoch = epoch;
        row.loss = loss_count ? loss_total / static_cast<double>(loss_count) : 0.0;
        row.epsilon = schedule.at(step);
        row.mean_return = return_total / static_cast<double>(data.size());
        result.log.push_back(row);
        util::log_info("agent epoch " + std::to_string(epoch) + "/" + std::to_string(epochs) +
                       " mean loss " + std::to_string(row.loss) + " mean return " +
                       std::to_string(row.mean_return) + " epsilon " +
                       std::to_string(row.epsilon));
        last_good = result.network.params();
    }
    return result;
}

// Greedy policy wrapper for rollouts.
inline env::Policy make_greedy_policy(QNetwork& net) {
    return [&net](const env::State& state) { return greedy_action(net, state); };
}

} // namespace ordex::agent
