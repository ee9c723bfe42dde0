#pragma once

#include "madrl/signals.hpp"

#include <random>

namespace madrl::test {

inline Signal random_signal(Eigen::Index dim, Eigen::Index T, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Signal s(dim, T);
    for (Eigen::Index t = 0; t <= T; ++t)
        for (Eigen::Index i = 0; i < dim; ++i) s.matrix()(i, t) = n(rng);
    return s;
}

/// Random values for the first `support` samples, zero afterwards.
inline Signal burst(Eigen::Index dim, Eigen::Index T, Eigen::Index support, std::mt19937_64& rng) {
    Signal s(dim, T);
    std::normal_distribution<double> n(0.0, 1.0);
    for (Eigen::Index t = 0; t <= std::min(T, support - 1); ++t)
        for (Eigen::Index i = 0; i < dim; ++i) s.matrix()(i, t) = n(rng);
    return s;
}

inline double scalar_uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace madrl::test
