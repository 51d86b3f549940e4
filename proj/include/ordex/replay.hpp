#pragma once

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "ordex/common.hpp"
#include "ordex/env.hpp"
#include "ordex/rng.hpp"

namespace ordex::agent {

// Proportional prioritized replay over a fixed-capacity FIFO ring. Priorities
// live in a sum tree (leaf value = raw_priority^alpha), so sampling and
// updates are O(log capacity). New records enter at the largest raw priority
// seen so far, guaranteeing each gets sampled at least once.
class ReplayBuffer {
public:
    explicit ReplayBuffer(size_t capacity, double alpha = 0.6, double priority_epsilon = 1e-3)
        : capacity_(capacity), alpha_(alpha), eps_(priority_epsilon) {
        if (capacity_ == 0) throw ConfigError("replay capacity must be >= 1");
        if (alpha_ < 0.0) throw ConfigError("priority exponent must be >= 0");
        if (!(eps_ > 0.0)) throw ConfigError("priority epsilon must be > 0");
        leaves_ = 1;
        while (leaves_ < capacity_) leaves_ *= 2;
        tree_.assign(2 * leaves_, 0.0);
        records_.resize(capacity_);
        raw_priority_.assign(capacity_, 0.0);
    }

    size_t size() const { return size_; }
    size_t capacity() const { return capacity_; }

    void add(env::Transition transition) {
        const size_t slot = next_;
        records_[slot] = std::move(transition);
        next_ = (next_ + 1) % capacity_;
        if (size_ < capacity_) ++size_;
        set_priority(slot, max_raw_);
    }

    const env::Transition& at(size_t slot) const {
        if (slot >= size_) throw ContractViolation("replay slot out of range");
        return records_[slot];
    }

    // Raw priority, directly. The tree stores raw^alpha.
    void set_priority(size_t slot, double raw) {
        if (slot >= size_) throw ContractViolation("replay slot out of range");
        if (!(raw > 0.0)) throw ContractViolation("priorities must be positive");
        raw_priority_[slot] = raw;
        if (raw > max_raw_) max_raw_ = raw;
        tree_set(slot, std::pow(raw, alpha_));
    }

    // The |TD error| + epsilon write-back path.
    void update_priority(size_t slot, double td_abs) { set_priority(slot, td_abs + eps_); }

    double priority(size_t slot) const {
        if (slot >= size_) throw ContractViolation("replay slot out of range");
        return raw_priority_[slot];
    }

    struct Sample {
        size_t slot = 0;
        double weight = 1.0; // importance-sampling weight, normalized by the batch max
    };

    // n independent proportional draws (with replacement). beta anneals the
    // importance-sampling correction from partial (0) to full (1).
    std::vector<Sample> sample(size_t n, double beta, util::Rng& rng) const {
        if (size_ == 0) throw ContractViolation("sampling from an empty replay buffer");
        const double total = tree_[1];
        if (!(total > 0.0)) throw ContractViolation("replay tree has no mass");
        std::vector<Sample> out(n);
        double max_weight = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const size_t slot = tree_find(rng.uniform(0.0, total));
            const double p = tree_[leaves_ + slot] / total;
            const double w = std::pow(static_cast<double>(size_) * p, -beta);
            out[i] = {slot, w};
            if (w > max_weight) max_weight = w;
        }
        for (auto& s : out) s.weight /= max_weight;
        return out;
    }

private:
    void tree_set(size_t slot, double value) {
        size_t i = leaves_ + slot;
        tree_[i] = value;
        for (i /= 2; i >= 1; i /= 2) tree_[i] = tree_[2 * i] + tree_[2 * i + 1];
    }

    size_t tree_find(double u) const {
        size_t i = 1;
        while (i < leaves_) {
            const size_t left = 2 * i;
            if (u <= tree_[left]) {
                i = left;
            } else {
                u -= tree_[left];
                i = left + 1;
            }
        }
        size_t slot = i - leaves_;
        if (slot >= size_) slot = size_ - 1; // float edge at the total boundary
        return slot;
    }

    size_t capacity_;
    double alpha_;
    double eps_;
    size_t leaves_ = 1;
    std::vector<double> tree_;
    std::vector<env::Transition> records_;
    std::vector<double> raw_priority_;
    size_t next_ = 0;
    size_t size_ = 0;
    double max_raw_ = 1.0;
};

} // namespace ordex::agent
