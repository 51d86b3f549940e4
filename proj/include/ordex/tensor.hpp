#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "ordex/common.hpp"
#include "ordex/rng.hpp"

namespace ordex::nn {

// Dense row-major tensor of doubles with an optional same-shape gradient.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<size_t> shape) : shape_(std::move(shape)) {
        values_.assign(count(shape_), 0.0);
    }

    Tensor(std::vector<size_t> shape, std::vector<double> values)
        : shape_(std::move(shape)), values_(std::move(values)) {
        if (values_.size() != count(shape_))
            throw ValidationError("tensor values length does not match shape");
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    const std::vector<size_t>& shape() const { return shape_; }
    size_t rank() const { return shape_.size(); }
    size_t dim(size_t i) const { return shape_.at(i); }
    size_t numel() const { return values_.size(); }

    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    double& operator[](size_t i) { return values_[i]; }
    double operator[](size_t i) const { return values_[i]; }

    double& at(size_t r, size_t c) { return values_[r * shape_[1] + c]; }
    double at(size_t r, size_t c) const { return values_[r * shape_[1] + c]; }

    bool has_grad() const { return !grad_.empty(); }
    std::vector<double>& grad() {
        if (grad_.empty()) grad_.assign(values_.size(), 0.0);
        return grad_;
    }
    const std::vector<double>& grad() const { return grad_; }

    void zero_grad() { grad_.assign(values_.size(), 0.0); }

    bool all_finite() const {
        for (double v : values_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill_uniform(util::Rng& rng, double lo, double hi) {
        for (double& v : values_) v = rng.uniform(lo, hi);
    }

    static size_t count(const std::vector<size_t>& shape) {
        size_t n = 1;
        for (size_t d : shape) n *= d;
        return n;
    }

private:
    std::vector<size_t> shape_;
    std::vector<double> values_;
    std::vector<double> grad_;
};

// Named collection of trainable tensors. Iteration order is the sorted name
// order (std::map), which keeps checkpoints and optimizer sweeps deterministic.
class ParameterSet {
public:
    Tensor& add(const std::string& name, std::vector<size_t> shape) {
        auto [it, inserted] = params_.emplace(name, Tensor(std::move(shape)));
        if (!inserted) throw ValidationError("duplicate parameter name: " + name);
        return it->second;
    }

    // Fan-in scaled uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    Tensor& add_uniform(const std::string& name, std::vector<size_t> shape, size_t fan_in,
                        util::Rng& rng) {
        Tensor& t = add(name, std::move(shape));
        const double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
        t.fill_uniform(rng, -b, b);
        return t;
    }

    bool contains(const std::string& name) const { return params_.count(name) > 0; }

    Tensor& get(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ValidationError("unknown parameter: " + name);
        return it->second;
    }
    const Tensor& get(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ValidationError("unknown parameter: " + name);
        return it->second;
    }

    void zero_grad() {
        for (auto& [name, t] : params_) t.zero_grad();
    }

    bool all_finite() const {
        for (const auto& [name, t] : params_)
            if (!t.all_finite()) return false;
        return true;
    }

    // Wholesale value copy (target-network sync). Shapes must match.
    void copy_values_from(const ParameterSet& other) {
        if (params_.size() != other.params_.size())
            throw ValidationError("parameter set mismatch in copy_values_from");
        auto it = params_.begin();
        auto jt = other.params_.begin();
        for (; it != params_.end(); ++it, ++jt) {
            if (it->first != jt->first || it->second.shape() != jt->second.shape())
                throw ValidationError("parameter mismatch at " + it->first);
            it->second.values() = jt->second.values();
        }
    }

    std::map<std::string, Tensor>& items() { return params_; }
    const std::map<std::string, Tensor>& items() const { return params_; }

    size_t size() const { return params_.size(); }

private:
    std::map<std::string, Tensor> params_;
};

} // namespace ordex::nn
