#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "ordex/common.hpp"
#include "ordex/tensor.hpp"

namespace ordex::nn {

// Rotary position embedding. R_p rotates consecutive pairs (2t, 2t+1) of a
// d-dimensional vector by the angle p * base^(-2t/d). R_p is orthogonal, and
// R_a^T R_b = R_{b-a}, which is what makes pairwise q/k scores depend only on
// relative position.
struct RopeAngles {
    std::vector<double> freqs; // d/2 per-pair frequencies

    RopeAngles(size_t dim, double base) {
        if (dim % 2 != 0) throw ConfigError("rope dimension must be even");
        freqs.resize(dim / 2);
        for (size_t t = 0; t < dim / 2; ++t)
            freqs[t] = std::pow(base, -2.0 * static_cast<double>(t) / static_cast<double>(dim));
    }
};

// In-place rotation of one row by position p (p may be negative: R_{-p} = R_p^T).
inline void rope_apply(double* row, const RopeAngles& angles, double position) {
    for (size_t t = 0; t < angles.freqs.size(); ++t) {
        const double theta = position * angles.freqs[t];
        const double c = std::cos(theta);
        const double s = std::sin(theta);
        const double v0 = row[2 * t];
        const double v1 = row[2 * t + 1];
        row[2 * t] = v0 * c - v1 * s;
        row[2 * t + 1] = v0 * s + v1 * c;
    }
}

inline Tensor rope_rotate(const Tensor& v, long position, double base = 10000.0) {
    if (v.rank() != 1) throw ConfigError("rope_rotate expects a vector");
    RopeAngles angles(v.numel(), base);
    Tensor out = v;
    rope_apply(out.values().data(), angles, static_cast<double>(position));
    return out;
}

} // namespace ordex::nn
