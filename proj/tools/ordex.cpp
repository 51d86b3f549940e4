// Command-line front end: synthesize corpora, train the span scorer and the
// extraction-order agents, extract, evaluate, and measure order sensitivity.
// Every run resolves its configuration (defaults < config file < flags),
// writes all outputs under --out, and finishes by writing manifest.json with
// a content hash per output; rerunning from a manifest must reproduce the
// hashes exactly.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ordex/ordex.hpp"

namespace {

using ordex::ConfigError;
using ordex::IoError;
using ordex::ParseError;
using ordex::cli::RunConfig;
using ordex::cli::RunWriter;
namespace corpus = ordex::corpus;
namespace scorer = ordex::scorer;
namespace agent = ordex::agent;
namespace cotrain = ordex::cotrain;
namespace env = ordex::env;
namespace metrics = ordex::metrics;
namespace oracle = ordex::oracle;
namespace nn = ordex::nn;
namespace util = ordex::util;

std::string fmt(double v) { return util::double_to_string(v); }
std::string fmt(size_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

std::vector<std::string> registry_tokens(const corpus::SchemaRegistry& registry) {
    std::vector<std::string> extra;
    for (const auto& [name, schema] : registry.items()) {
        extra.push_back(name);
        extra.insert(extra.end(), schema.roles.begin(), schema.roles.end());
    }
    return extra;
}

metrics::Predictions load_predictions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open predictions: " + path);
    metrics::Predictions out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            auto& tuples = out[j.at("id").get<std::string>()];
            for (const auto& t : j.at("tuples")) tuples.push_back(corpus::tuple_from_json(t));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + " line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

scorer::ScorerConfig scorer_config_from(const RunConfig& cfg) {
    scorer::ScorerConfig c;
    c.dim = cfg.get_size("dim");
    c.max_len = cfg.get_size("max-len");
    c.rope_base = cfg.get_double("rope-base");
    c.sigmoid_score = cfg.get_bool("sigmoid-score");
    c.validate();
    return c;
}

agent::AgentConfig agent_config_from(const RunConfig& cfg) {
    agent::AgentConfig c;
    c.dim = cfg.get_size("dim");
    c.max_len = cfg.get_size("max-len");
    c.rope_base = cfg.get_double("rope-base");
    c.gamma = cfg.get_double("gamma");
    c.buffer_capacity = cfg.get_size("buffer");
    c.target_update = cfg.get_size("target-update");
    c.batch_size = cfg.get_size("batch-size");
    c.learning_rate = cfg.get_double("lr");
    c.warmup_fraction = cfg.get_double("warmup");
    c.weight_decay = cfg.get_double("weight-decay");
    c.priority_alpha = cfg.get_double("alpha");
    c.priority_epsilon = cfg.get_double("priority-epsilon");
    c.beta_start = cfg.get_double("beta-start");
    c.eps_initial = cfg.get_double("eps-initial");
    c.eps_floor = cfg.get_double("eps-floor");
    c.eps_decay = cfg.get_double("eps-decay");
    c.branch_cap = cfg.get_size("branch-cap");
    c.mean_reward = cfg.get_bool("mean-reward");
    c.seed = cfg.get_u64("seed");
    c.validate();
    return c;
}

env::EnvConfig env_config_from(const RunConfig& cfg) {
    return {cfg.get_size("branch-cap"), cfg.get_bool("mean-reward")};
}

// Extractor selected by --plan (the co-trained full-data scorer) or --scorer
// (a single checkpoint). Heap storage keeps the references inside the
// adapter stable.
struct ExtractorBundle {
    std::unique_ptr<cotrain::CotrainPlan> plan;
    std::unique_ptr<scorer::ScorerModel> model;
    std::unique_ptr<scorer::ScorerExtractor> extractor;
};

ExtractorBundle make_extractor(const RunConfig& cfg, const corpus::SchemaRegistry& registry) {
    ExtractorBundle b;
    if (cfg.has("plan")) {
        b.plan = std::make_unique<cotrain::CotrainPlan>(
            cotrain::load_plan(cfg.get("plan"), registry));
        b.extractor = std::make_unique<scorer::ScorerExtractor>(b.plan->e_full, registry,
                                                                cotrain::kTagEFull);
    } else if (cfg.has("scorer")) {
        b.model =
            std::make_unique<scorer::ScorerModel>(scorer::ScorerModel::load(cfg.get("scorer")));
        b.extractor = std::make_unique<scorer::ScorerExtractor>(*b.model, registry, "scorer");
    } else {
        throw ConfigError("--scorer or --plan is required");
    }
    return b;
}

void print_match_table(const std::map<std::string, metrics::MatchReport>& reports) {
    std::printf("%-10s %6s %10s %6s %10s %8s %8s\n", "policy", "tp", "predicted", "gold",
                "precision", "recall", "f1");
    for (const auto& [name, r] : reports)
        std::printf("%-10s %6zu %10zu %6zu %10.4f %8.4f %8.4f\n", name.c_str(), r.tp,
                    r.predicted, r.gold, r.precision(), r.recall(), r.f1());
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

nlohmann::json run_synth(const RunConfig& cfg) {
    RunWriter writer("synth", cfg);
    oracle::SyntheticTaskSpec spec;
    spec.role_count = cfg.get_size("roles");
    spec.instance_count = cfg.get_size("instances");
    spec.vocab_size = cfg.get_size("vocab");
    spec.min_len = cfg.get_size("min-len");
    spec.max_len = cfg.get_size("max-len");
    spec.sensitive_fraction = cfg.get_double("sensitive-fraction");
    spec.seed = cfg.get_u64("seed");
    spec.top_score = cfg.get_double("top-score");
    spec.score_ratio = cfg.get_double("score-ratio");
    const auto corpus = oracle::generate_synthetic(spec);
    corpus::save_registry(writer.path("schema.json"), corpus.registry);
    corpus::save_dataset(writer.path("dataset.jsonl"), corpus.instances);
    corpus.table.save(writer.path("table.json"));
    oracle::save_certificates(writer.path("certificates.jsonl"), corpus.certificates);
    size_t sensitive = 0;
    for (const auto& c : corpus.certificates) sensitive += c.sensitive ? 1 : 0;
    std::cout << "synth: " << corpus.instances.size() << " instances, " << sensitive
              << " order-sensitive, in " << writer.dir() << "\n";
    return writer.finalize();
}

nlohmann::json run_train_extractor(const RunConfig& cfg) {
    RunWriter writer("train-extractor", cfg);
    const auto registry = corpus::load_registry(cfg.get("schemas"));
    const auto data = corpus::load_dataset(cfg.get("data"), registry);
    const auto sc = scorer_config_from(cfg);
    const size_t epochs = cfg.get_size("epochs");
    const uint64_t seed = cfg.get_u64("seed");

    const auto set =
        scorer::build_training_set(data, registry, cfg.get_size("permutation-cap"), seed);
    scorer::dump_training_set(writer.path("training_set.jsonl"), set);
    auto model =
        scorer::ScorerModel::init(sc, nn::Vocab::build(data, registry_tokens(registry)), seed);
    nn::OptimizerConfig oc;
    oc.learning_rate = cfg.get_double("lr");
    oc.warmup_fraction = cfg.get_double("warmup");
    oc.weight_decay = cfg.get_double("weight-decay");
    oc.total_steps = std::max<size_t>(1, set.size() * epochs);
    const auto report = scorer::train_scorer(model, set, oc, epochs, seed);
    model.save(writer.path("scorer.ckpt.json"));

    std::ofstream csv(writer.path("loss.csv"));
    if (!csv) throw IoError("cannot write loss.csv");
    csv << "epoch,mean_loss\n";
    for (size_t e = 0; e < report.epoch_mean_losses.size(); ++e)
        csv << (e + 1) << "," << fmt(report.epoch_mean_losses[e]) << "\n";
    csv.close();

    std::ofstream rep(writer.path("report.json"));
    rep << nlohmann::json{{"examples", set.size()},
                          {"epochs_completed", report.epoch_mean_losses.size()},
                          {"aborted", report.aborted}}
               .dump(2)
        << "\n";
    rep.close();

    std::cout << "train-extractor: " << set.size() << " examples, "
              << report.epoch_mean_losses.size() << " epochs"
              << (report.aborted ? " (aborted, kept last good checkpoint)" : "") << "\n";
    return writer.finalize();
}

nlohmann::json run_train_agent(const RunConfig& cfg) {
    RunWriter writer("train-agent", cfg);
    const auto registry = corpus::load_registry(cfg.get("schemas"));
    const auto data = corpus::load_dataset(cfg.get("data"), registry);
    const auto acfg = agent_config_from(cfg);
    std::cout << "train-agent: gamma=" << fmt(acfg.gamma) << " buffer=" << acfg.buffer_capacity
              << " target-update=" << acfg.target_update << " batch-size=" << acfg.batch_size
              << "\n";

    if (cfg.get_bool("cotrain")) {
        if (cfg.has("scorer"))
            throw ConfigError("--scorer conflicts with --cotrain; the plan trains its own");
        cotrain::CotrainConfig cc;
        cc.scorer = scorer_config_from(cfg);
        cc.scorer_opt.learning_rate = cfg.get_double("scorer-lr");
        cc.scorer_opt.warmup_fraction = cfg.get_double("warmup");
        cc.scorer_opt.weight_decay = cfg.get_double("weight-decay");
        cc.scorer_epochs = cfg.get_size("scorer-epochs");
        cc.permutation_cap = cfg.get_size("permutation-cap");
        cc.agent = acfg;
        cc.agent_epochs = cfg.get_size("epochs");
        cc.vote_combination = cfg.get_bool("vote");
        cc.seed = cfg.get_u64("seed");
        auto plan = cotrain::run_cotraining(data, registry, cc, writer.dir());
        cotrain::save_plan(plan, writer.dir());
        agent::write_agent_log(writer.path("a1_log.csv"), plan.a1_log);
        agent::write_agent_log(writer.path("a2_log.csv"), plan.a2_log);
        for (const char* name : {"d1.jsonl", "d2.jsonl", "e1.ckpt.json", "e2.ckpt.json",
                                 "e_full.ckpt.json", "a1.ckpt.json", "a2.ckpt.json",
                                 "plan.json"})
            writer.path(name);
        std::cout << "train-agent: co-trained plan (" << plan.d1.size() << "+"
                  << plan.d2.size() << " instances) in " << writer.dir() << "\n";
    } else {
        auto model = scorer::ScorerModel::load(cfg.get("scorer"));
        scorer::ScorerExtractor extractor(model, registry, "scorer");
        const auto result =
            agent::train_agent(data, registry, extractor, cfg.get_size("epochs"), acfg);
        result.network.save(writer.path("agent.ckpt.json"));
        agent::write_agent_log(writer.path("log.csv"), result.log);
        std::ofstream queries(writer.path("queries.json"));
        queries << nlohmann::json(result.query_counts).dump(2) << "\n";
        queries.close();
        std::cout << "train-agent: " << result.log.size() << " epochs"
                  << (result.aborted ? " (aborted, kept last good checkpoint)" : "") << "\n";
    }
    return writer.finalize();
}

nlohmann::json run_extract(const RunConfig& cfg) {
    RunWriter writer("extract", cfg);
    const auto registry = corpus::load_registry(cfg.get("schemas"));
    const auto data = corpus::load_dataset(cfg.get("data"), registry);
    const std::string policy_name = cfg.get("policy");
    if (policy_name != "sequence" && policy_name != "random" && policy_name != "adaptive")
        throw ConfigError("--policy must be sequence, random, or adaptive, got '" +
                          policy_name + "'");
    auto bundle = make_extractor(cfg, registry);
    if (policy_name == "adaptive" && !bundle.plan)
        throw ConfigError("--policy adaptive requires --plan with trained agents");
    const auto env_config = env_config_from(cfg);
    const uint64_t seed = cfg.get_u64("seed");

    std::ofstream preds(writer.path("predictions.jsonl"));
    if (!preds) throw IoError("cannot write predictions.jsonl");
    std::optional<std::ofstream> traces;
    if (cfg.get_bool("trace")) {
        traces.emplace(writer.path("traces.jsonl"));
        if (!*traces) throw IoError("cannot write traces.jsonl");
    }
    for (const auto& inst : data) {
        const corpus::Schema& schema = registry.get(inst.schema_ref);
        env::Policy policy;
        if (policy_name == "sequence") {
            policy = env::make_order_policy(schema.roles);
        } else if (policy_name == "random") {
            util::Rng rng(util::Rng::derive(util::Rng::derive(seed, "order.random"), inst.id));
            policy = env::make_order_policy(env::random_order(schema, rng));
        } else {
            policy = cotrain::combined_policy(bundle.plan->a1, bundle.plan->a2,
                                              bundle.plan->vote_combination);
        }
        const auto tree = env::rollout(inst, schema, policy, *bundle.extractor, env_config);
        nlohmann::json tuples = nlohmann::json::array();
        for (const auto& t : env::tree_to_tuples(tree))
            tuples.push_back(corpus::tuple_to_json(t));
        preds << nlohmann::json{{"id", inst.id}, {"tuples", std::move(tuples)}}.dump() << "\n";
        if (traces)
            *traces << nlohmann::json{{"id", inst.id}, {"trace", env::tree_to_json(tree)}}.dump()
                    << "\n";
    }
    preds.close();
    if (traces) traces->close();
    std::cout << "extract: " << data.size() << " instances under the " << policy_name
              << " policy\n";
    return writer.finalize();
}

nlohmann::json run_evaluate(const RunConfig& cfg) {
    RunWriter writer("evaluate", cfg);
    const auto registry = corpus::load_registry(cfg.get("schemas"));
    const auto gold = corpus::load_dataset(cfg.get("data"), registry);
    const auto preds = load_predictions(cfg.get("pred"));
    const auto exact = metrics::exact_match(preds, gold);
    const auto word = metrics::word_level(preds, gold, registry);

    std::ofstream rep(writer.path("report.json"));
    rep << nlohmann::json{{"exact_match",
                           {{"tp", exact.tp},
                            {"predicted", exact.predicted},
                            {"gold", exact.gold},
                            {"precision", exact.precision()},
                            {"recall", exact.recall()},
                            {"f1", exact.f1()}}},
                          {"word_level",
                           {{"precision", word.precision},
                            {"recall", word.recall},
                            {"f1", word.f1}}}}
               .dump(2)
        << "\n";
    rep.close();

    print_match_table({{"exact", exact}});
    std::printf("%-10s %24s %10.4f %8.4f %8.4f\n", "word", "", word.precision, word.recall,
                word.f1);
    return writer.finalize();
}

nlohmann::json run_sensitivity(const RunConfig& cfg) {
    RunWriter writer("sensitivity", cfg);
    const auto registry = corpus::load_registry(cfg.get("schemas"));
    const auto data = corpus::load_dataset(cfg.get("data"), registry);
    auto bundle = make_extractor(cfg, registry);
    const auto env_config = env_config_from(cfg);

    const auto report = metrics::sensitivity_ratio(data, registry, *bundle.extractor,
                                                   cfg.get_size("max-roles"), env_config);
    nlohmann::json labels = nlohmann::json::array();
    for (const auto& l : report.labels)
        labels.push_back({{"id", l.id}, {"sensitive", l.sensitive}});
    std::ofstream sens(writer.path("sensitivity.json"));
    sens << nlohmann::json{{"ratio", report.ratio},
                           {"sensitive", report.sensitive_count},
                           {"evaluated", report.evaluated},
                           {"labels", std::move(labels)},
                           {"skipped", report.skipped}}
                .dump(2)
         << "\n";
    sens.close();
    std::ofstream lcsv(writer.path("labels.csv"));
    lcsv << "id,sensitive\n";
    for (const auto& l : report.labels)
        lcsv << l.id << "," << (l.sensitive ? "1" : "0") << "\n";
    lcsv.close();

    std::optional<env::Policy> adaptive;
    if (bundle.plan)
        adaptive = cotrain::combined_policy(bundle.plan->a1, bundle.plan->a2,
                                            bundle.plan->vote_combination);
    const auto cmp =
        metrics::order_comparison(data, registry, *bundle.extractor,
                                  adaptive ? &*adaptive : nullptr, cfg.get_u64("seed"),
                                  env_config);
    std::ofstream ccsv(writer.path("order_comparison.csv"));
    ccsv << "policy,tp,predicted,gold,precision,recall,f1\n";
    for (const auto& [name, r] : cmp.reports)
        ccsv << name << "," << r.tp << "," << r.predicted << "," << r.gold << ","
             << fmt(r.precision()) << "," << fmt(r.recall()) << "," << fmt(r.f1()) << "\n";
    ccsv.close();

    std::cout << "sensitivity ratio: " << fmt(report.ratio) << " (" << report.sensitive_count
              << "/" << report.evaluated << " instances";
    if (!report.skipped.empty()) std::cout << ", " << report.skipped.size() << " skipped";
    std::cout << ")\n";
    print_match_table(cmp.reports);
    return writer.finalize();
}

nlohmann::json dispatch(const std::string& command, const RunConfig& cfg) {
    if (command == "synth") return run_synth(cfg);
    if (command == "train-extractor") return run_train_extractor(cfg);
    if (command == "train-agent") return run_train_agent(cfg);
    if (command == "extract") return run_extract(cfg);
    if (command == "evaluate") return run_evaluate(cfg);
    if (command == "sensitivity") return run_sensitivity(cfg);
    throw ConfigError("unknown command '" + command + "'");
}

int run_rerun(const std::string& manifest_path, const std::string& out_dir) {
    const auto old_manifest = ordex::cli::load_manifest(manifest_path);
    const auto command = old_manifest.at("command").get<std::string>();
    auto cfg = RunConfig::from_json(old_manifest.at("config"));
    cfg.set("out", out_dir);
    const auto fresh = dispatch(command, cfg);

    const auto& old_outputs = old_manifest.at("outputs");
    const auto& new_outputs = fresh.at("outputs");
    bool ok = true;
    std::printf("%-24s %-16s %-16s %s\n", "output", "recorded", "reproduced", "match");
    for (const auto& [name, entry] : old_outputs.items()) {
        const std::string old_hash = entry.at("hash").get<std::string>();
        const std::string new_hash = new_outputs.contains(name)
                                         ? new_outputs.at(name).at("hash").get<std::string>()
                                         : "<missing>";
        const bool match = old_hash == new_hash;
        ok = ok && match;
        std::printf("%-24s %-16s %-16s %s\n", name.c_str(), old_hash.c_str(),
                    new_hash.c_str(), match ? "yes" : "NO");
    }
    for (const auto& [name, entry] : new_outputs.items())
        if (!old_outputs.contains(name)) {
            ok = false;
            std::printf("%-24s %-16s %-16s %s\n", name.c_str(), "<missing>",
                        entry.at("hash").get<std::string>().c_str(), "NO");
        }
    std::cout << (ok ? "rerun: outputs reproduced exactly\n"
                     : "rerun: OUTPUT MISMATCH\n");
    return ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"adaptive extraction-order information extraction"};
    app.require_subcommand(1);

    std::string pending;
    RunConfig config;
    // Shared bindings; each subcommand copies the values it declared into the
    // resolved config, so the manifest records exactly what the run used.
    std::string data, schemas, out, scorer_path, plan_dir, policy, pred, manifest_path;
    size_t dim = 64, max_len = 512, epochs = 10, permutation_cap = 6;
    size_t buffer = 100000, target_update = 200, batch_size = 32, branch_cap = 8;
    size_t roles = 3, instances = 100, vocab = 50, min_len = 0, synth_max_len = 0;
    size_t max_roles = 8, scorer_epochs = 5;
    double rope_base = 10000.0, lr = 1e-3, warmup = 0.1, weight_decay = 0.0;
    double gamma = 0.5, alpha = 0.6, beta_start = 0.4, priority_epsilon = 1e-3;
    double eps_initial = 0.9, eps_floor = 0.05, eps_decay = 0.9;
    double sensitive_fraction = 0.0, top_score = 4.0, score_ratio = 0.5, scorer_lr = 1e-3;
    uint64_t seed = 0;
    bool sigmoid_score = false, mean_reward = false, do_cotrain = false, vote = false,
         trace = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--data", data, "Instance JSONL file");
        sub->add_option("--schemas", schemas, "Schema registry JSON file");
        sub->add_option("--out", out, "Run directory for outputs and manifest.json");
        sub->add_option("--seed", seed, "Run seed");
        sub->set_config("--config", "", "Flat key=value config file; flags override it");
        return sub;
    };
    auto put_common = [&]() {
        config = RunConfig{};
        if (!data.empty()) config.set("data", data);
        if (!schemas.empty()) config.set("schemas", schemas);
        if (!out.empty()) config.set("out", out);
        config.set("seed", std::to_string(seed));
    };
    auto put_encoder = [&]() {
        config.set("dim", fmt(dim));
        config.set("max-len", fmt(max_len));
        config.set("rope-base", fmt(rope_base));
        config.set("sigmoid-score", fmt(sigmoid_score));
    };
    auto put_env = [&]() {
        config.set("branch-cap", fmt(branch_cap));
        config.set("mean-reward", fmt(mean_reward));
    };

    auto* synth = app.add_subcommand("synth", "Generate a synthetic oracle corpus");
    add_common(synth);
    synth->add_option("--roles", roles, "Roles per schema");
    synth->add_option("--instances", instances, "Instance count");
    synth->add_option("--vocab", vocab, "Filler vocabulary size");
    synth->add_option("--min-len", min_len, "Minimum sentence length (0 = derived)");
    synth->add_option("--max-len", synth_max_len, "Maximum sentence length (0 = derived)");
    synth->add_option("--sensitive-fraction", sensitive_fraction,
                      "Fraction of order-sensitive instances");
    synth->add_option("--top-score", top_score, "Score of the first-ranked role");
    synth->add_option("--score-ratio", score_ratio, "Geometric decay between ranks");
    synth->callback([&] {
        pending = "synth";
        put_common();
        config.set("roles", fmt(roles));
        config.set("instances", fmt(instances));
        config.set("vocab", fmt(vocab));
        config.set("min-len", fmt(min_len));
        config.set("max-len", fmt(synth_max_len));
        config.set("sensitive-fraction", fmt(sensitive_fraction));
        config.set("top-score", fmt(top_score));
        config.set("score-ratio", fmt(score_ratio));
    });

    auto* tx = app.add_subcommand("train-extractor", "Train the conditioned span scorer");
    add_common(tx);
    tx->add_option("--dim", dim, "Encoder width");
    tx->add_option("--max-len", max_len, "Maximum query sequence length");
    tx->add_option("--rope-base", rope_base, "Rotary position base");
    tx->add_flag("--sigmoid-score", sigmoid_score, "Squash extraction scores into (0,1)");
    tx->add_option("--epochs", epochs, "Training epochs");
    tx->add_option("--lr", lr, "Peak learning rate");
    tx->add_option("--warmup", warmup, "Warmup fraction of total steps");
    tx->add_option("--weight-decay", weight_decay, "Decoupled weight decay");
    tx->add_option("--permutation-cap", permutation_cap,
                   "Full permutation enumeration up to this many roles");
    tx->callback([&] {
        pending = "train-extractor";
        put_common();
        put_encoder();
        config.set("epochs", fmt(epochs));
        config.set("lr", fmt(lr));
        config.set("warmup", fmt(warmup));
        config.set("weight-decay", fmt(weight_decay));
        config.set("permutation-cap", fmt(permutation_cap));
    });

    auto* ta = app.add_subcommand("train-agent", "Train the extraction-order agent");
    add_common(ta);
    ta->add_option("--scorer", scorer_path, "Span scorer checkpoint to train against");
    ta->add_flag("--cotrain", do_cotrain,
                 "Split the data and cross-train two scorer/agent pairs");
    ta->add_flag("--vote", vote, "Combine the co-trained agents by vote instead of Q-sum");
    ta->add_option("--dim", dim, "Encoder width");
    ta->add_option("--max-len", max_len, "Maximum state sequence length");
    ta->add_option("--rope-base", rope_base, "Rotary position base");
    ta->add_flag("--sigmoid-score", sigmoid_score,
                 "Squash extraction scores into (0,1) for rewards (co-trained scorers)");
    ta->add_option("--epochs", epochs, "Agent training epochs");
    ta->add_option("--gamma", gamma, "Discount factor");
    ta->add_option("--buffer", buffer, "Replay buffer capacity");
    ta->add_option("--target-update", target_update, "Steps between target-network copies");
    ta->add_option("--batch-size", batch_size, "Replay batch size");
    ta->add_option("--lr", lr, "Peak learning rate");
    ta->add_option("--warmup", warmup, "Warmup fraction of total steps");
    ta->add_option("--weight-decay", weight_decay, "Decoupled weight decay");
    ta->add_option("--alpha", alpha, "Priority exponent");
    ta->add_option("--beta-start", beta_start, "Initial importance-sampling correction");
    ta->add_option("--priority-epsilon", priority_epsilon, "Additive priority floor");
    ta->add_option("--eps-initial", eps_initial, "Initial exploration rate");
    ta->add_option("--eps-floor", eps_floor, "Exploration floor");
    ta->add_option("--eps-decay", eps_decay, "Multiplicative exploration decay");
    ta->add_option("--branch-cap", branch_cap, "Maximum branches kept per step");
    ta->add_flag("--mean-reward", mean_reward, "Reward = mean decoded score, not max");
    ta->add_option("--scorer-epochs", scorer_epochs, "Scorer epochs (co-training)");
    ta->add_option("--scorer-lr", scorer_lr, "Scorer learning rate (co-training)");
    ta->add_option("--permutation-cap", permutation_cap,
                   "Scorer training-set permutation cap (co-training)");
    ta->callback([&] {
        pending = "train-agent";
        put_common();
        put_encoder();
        put_env();
        if (!scorer_path.empty()) config.set("scorer", scorer_path);
        config.set("cotrain", fmt(do_cotrain));
        config.set("vote", fmt(vote));
        config.set("epochs", fmt(epochs));
        config.set("gamma", fmt(gamma));
        config.set("buffer", fmt(buffer));
        config.set("target-update", fmt(target_update));
        config.set("batch-size", fmt(batch_size));
        config.set("lr", fmt(lr));
        config.set("warmup", fmt(warmup));
        config.set("weight-decay", fmt(weight_decay));
        config.set("alpha", fmt(alpha));
        config.set("beta-start", fmt(beta_start));
        config.set("priority-epsilon", fmt(priority_epsilon));
        config.set("eps-initial", fmt(eps_initial));
        config.set("eps-floor", fmt(eps_floor));
        config.set("eps-decay", fmt(eps_decay));
        config.set("scorer-epochs", fmt(scorer_epochs));
        config.set("scorer-lr", fmt(scorer_lr));
        config.set("permutation-cap", fmt(permutation_cap));
    });

    auto* ex = app.add_subcommand("extract", "Run extraction episodes over a dataset");
    add_common(ex);
    ex->add_option("--policy", policy, "Extraction order: sequence, random, or adaptive");
    ex->add_option("--scorer", scorer_path, "Span scorer checkpoint");
    ex->add_option("--plan", plan_dir, "Co-training plan directory (required for adaptive)");
    ex->add_flag("--trace", trace, "Also write per-instance episode trees");
    ex->add_option("--branch-cap", branch_cap, "Maximum branches kept per step");
    ex->add_flag("--mean-reward", mean_reward, "Reward = mean decoded score, not max");
    ex->callback([&] {
        pending = "extract";
        put_common();
        put_env();
        if (!policy.empty()) config.set("policy", policy);
        if (!scorer_path.empty()) config.set("scorer", scorer_path);
        if (!plan_dir.empty()) config.set("plan", plan_dir);
        config.set("trace", fmt(trace));
    });

    auto* ev = app.add_subcommand("evaluate", "Score predictions against gold");
    add_common(ev);
    ev->add_option("--pred", pred, "Predictions JSONL from extract");
    ev->callback([&] {
        pending = "evaluate";
        put_common();
        if (!pred.empty()) config.set("pred", pred);
    });

    auto* se = app.add_subcommand("sensitivity",
                                  "Order-sensitivity ratio and order comparison");
    add_common(se);
    se->add_option("--scorer", scorer_path, "Span scorer checkpoint");
    se->add_option("--plan", plan_dir, "Co-training plan directory (enables adaptive)");
    se->add_option("--max-roles", max_roles, "Skip instances with more roles than this");
    se->add_option("--branch-cap", branch_cap, "Maximum branches kept per step");
    se->add_flag("--mean-reward", mean_reward, "Reward = mean decoded score, not max");
    se->callback([&] {
        pending = "sensitivity";
        put_common();
        put_env();
        if (!scorer_path.empty()) config.set("scorer", scorer_path);
        if (!plan_dir.empty()) config.set("plan", plan_dir);
        config.set("max-roles", fmt(max_roles));
    });

    auto* rr = app.add_subcommand("rerun", "Replay a run from its manifest and diff hashes");
    rr->add_option("--manifest", manifest_path, "manifest.json of the recorded run")
        ->required();
    rr->add_option("--out", out, "Directory for the reproduced run")->required();
    rr->callback([&] { pending = "rerun"; });

    CLI11_PARSE(app, argc, argv);

    try {
        if (pending == "rerun") return run_rerun(manifest_path, out);
        dispatch(pending, config);
        return 0;
    } catch (const ordex::Error& e) {
        std::cerr << "ordex: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "ordex: error: " << e.what() << "\n";
        return 1;
    }
}
