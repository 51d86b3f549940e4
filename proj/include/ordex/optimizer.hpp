#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ordex/common.hpp"
#include "ordex/tensor.hpp"

namespace ordex::nn {

struct OptimizerConfig {
    double learning_rate = 1e-3;
    double warmup_fraction = 0.1;
    size_t total_steps = 1;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
        if (warmup_fraction < 0.0 || warmup_fraction > 1.0)
            throw ConfigError("warmup_fraction must lie in [0,1]");
        if (total_steps == 0) throw ConfigError("total_steps must be >= 1");
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
            throw ConfigError("moment coefficients must lie in [0,1)");
        if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
        if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
    }
};

// AdamW with a linear warmup / linear decay schedule. The effective rate
// climbs to the configured peak over the first warmup_fraction * total_steps
// steps, then falls linearly to 0 at total_steps. Weight decay is decoupled
// from the gradient moments, so a zero gradient still shrinks the weights.
class AdamW {
public:
    explicit AdamW(OptimizerConfig config) : config_(config) { config_.validate(); }

    const OptimizerConfig& config() const { return config_; }

    // Effective learning rate at a 1-based step.
    double rate_at(size_t step) const {
        const double peak = config_.learning_rate;
        const double total = static_cast<double>(config_.total_steps);
        const double warm = config_.warmup_fraction * total;
        if (step > config_.total_steps) {
            util::log_warn("optimizer step " + std::to_string(step) + " past total_steps " +
                           std::to_string(config_.total_steps) + "; rate clamped to 0");
            return 0.0;
        }
        const double s = static_cast<double>(step);
        if (step == config_.total_steps) return 0.0;
        if (warm > 0.0 && s <= warm) return peak * s / warm;
        return peak * (total - s) / (total - warm);
    }

    void step(ParameterSet& params, size_t step_index) {
        if (step_index == 0) throw ContractViolation("optimizer steps are 1-based");
        const double rate = rate_at(step_index);
        const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_index));
        const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_index));
        for (auto& [name, tensor] : params.items()) {
            auto& [m, v] = moments(name, tensor.numel());
            auto& g = tensor.grad();
            for (size_t i = 0; i < tensor.numel(); ++i) {
                m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
                v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
                const double mh = m[i] / bc1;
                const double vh = v[i] / bc2;
                tensor[i] -= rate * (mh / (std::sqrt(vh) + config_.epsilon) +
                                     config_.weight_decay * tensor[i]);
            }
        }
    }

private:
    std::pair<std::vector<double>, std::vector<double>>& moments(const std::string& name,
                                                                 size_t numel) {
        auto it = state_.find(name);
        if (it == state_.end())
            it = state_
                     .emplace(name, std::make_pair(std::vector<double>(numel, 0.0),
                                                   std::vector<double>(numel, 0.0)))
                     .first;
        if (it->second.first.size() != numel)
            throw ContractViolation("optimizer state shape changed for " + name);
        return it->second;
    }

    OptimizerConfig config_;
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> state_;
};

inline void optimizer_step(ParameterSet& params, AdamW& optimizer, size_t step_index) {
    optimizer.step(params, step_index);
}

} // namespace ordex::nn
