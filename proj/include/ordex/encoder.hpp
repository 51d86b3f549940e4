#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "ordex/autodiff.hpp"
#include "ordex/common.hpp"
#include "ordex/rng.hpp"
#include "ordex/tensor.hpp"

namespace ordex::nn {

// Compact trainable encoder shared by the span scorer and the agent: learned
// token + position embeddings, one single-head self-attention mixing layer
// with a residual connection, then a tanh feed-forward readout. Stands in for
// a full pretrained transformer at desk scale.
struct EncoderConfig {
    size_t dim = 64;
    size_t vocab_size = 0;
    size_t max_len = 512;
    double rope_base = 10000.0;

    void validate() const {
        if (dim == 0 || dim % 2 != 0) throw ConfigError("encoder dim must be even and > 0");
        if (vocab_size == 0) throw ConfigError("encoder vocab_size must be > 0");
        if (max_len == 0) throw ConfigError("encoder max_len must be > 0");
        if (!(rope_base > 0.0)) throw ConfigError("rope_base must be > 0");
    }

    nlohmann::json to_json() const {
        return {{"dim", dim},
                {"vocab_size", vocab_size},
                {"max_len", max_len},
                {"rope_base", rope_base}};
    }

    static EncoderConfig from_json(const nlohmann::json& j) {
        EncoderConfig c;
        c.dim = j.at("dim").get<size_t>();
        c.vocab_size = j.at("vocab_size").get<size_t>();
        c.max_len = j.at("max_len").get<size_t>();
        c.rope_base = j.at("rope_base").get<double>();
        c.validate();
        return c;
    }
};

inline void add_encoder_params(ParameterSet& params, const EncoderConfig& config,
                               util::Rng& rng) {
    config.validate();
    const size_t d = config.dim;
    params.add_uniform("enc.emb", {config.vocab_size, d}, d, rng);
    params.add_uniform("enc.pos", {config.max_len, d}, d, rng);
    params.add_uniform("enc.attn_q", {d, d}, d, rng);
    params.add_uniform("enc.attn_k", {d, d}, d, rng);
    params.add_uniform("enc.attn_v", {d, d}, d, rng);
    params.add_uniform("enc.ff_w", {d, d}, d, rng);
    params.add_uniform("enc.ff_b", {d}, d, rng);
}

// Hidden states for a token-id sequence, shape [len(ids), dim].
inline Graph::Node* encode(Graph& g, ParameterSet& params, const EncoderConfig& config,
                           const std::vector<int>& ids) {
    if (ids.empty()) throw ContractViolation("encode needs a non-empty sequence");
    if (ids.size() > config.max_len)
        throw ContractViolation("sequence length " + std::to_string(ids.size()) +
                                " exceeds encoder max_len " + std::to_string(config.max_len));
    std::vector<size_t> positions(ids.size());
    for (size_t i = 0; i < positions.size(); ++i) positions[i] = i;

    auto* emb = g.embedding(g.param(params.get("enc.emb"), "enc.emb"), ids);
    auto* pos = g.row_select(g.param(params.get("enc.pos"), "enc.pos"), positions);
    auto* h0 = g.add(emb, pos);

    auto* q = g.matmul(h0, g.param(params.get("enc.attn_q"), "enc.attn_q"));
    auto* k = g.matmul(h0, g.param(params.get("enc.attn_k"), "enc.attn_k"));
    auto* v = g.matmul(h0, g.param(params.get("enc.attn_v"), "enc.attn_v"));
    auto* logits = g.scale(g.matmul(q, g.transpose(k)),
                           1.0 / std::sqrt(static_cast<double>(config.dim)));
    auto* mixed = g.matmul(g.softmax_rows(logits), v);
    auto* h1 = g.add(h0, mixed);

    auto* ff = g.add_row(g.matmul(h1, g.param(params.get("enc.ff_w"), "enc.ff_w")),
                         g.param(params.get("enc.ff_b"), "enc.ff_b"));
    return g.tanh(ff);
}

} // namespace ordex::nn
