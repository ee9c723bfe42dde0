#include "madrl/stable_ops.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

using namespace madrl;

namespace {

/// lambda = 0.5, Gamma = sqrt(0.75), B = C = 1, D = F = 0, identity head.
LruParams scalar_unit() {
    LruParams p(LruShape{1, 1, 1, 1, 0});
    p.block(LruParams::kNu)(0, 0) = std::log(-std::log(0.5));
    p.block(LruParams::kTheta)(0, 0) = 0.0;
    p.block(LruParams::kBRe)(0, 0) = 1.0;
    p.block(LruParams::kCRe)(0, 0) = 1.0;
    return p;
}

LruShape small_shape() { return LruShape{6, 3, 2, 5, 7}; }

}  // namespace

TEST(LruInit, RejectsBadRing) {
    EXPECT_THROW(lru_init(small_shape(), 0.5, 0.5, 1), std::invalid_argument);
    EXPECT_THROW(lru_init(small_shape(), -0.1, 0.5, 1), std::invalid_argument);
    EXPECT_THROW(lru_init(small_shape(), 0.2, 1.0, 1), std::invalid_argument);
}

TEST(LruInit, MarginBelowOneAndMagnitudesInRing) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const LruParams p = lru_init(small_shape(), 0.4, 0.9, seed);
        EXPECT_LT(stability_margin(p), 1.0);
        EXPECT_GE(p.magnitudes().minCoeff(), 0.4 - 1e-12);
        EXPECT_LE(p.magnitudes().maxCoeff(), 0.9 + 1e-12);
        const Vec th = p.block(LruParams::kTheta).col(0);
        EXPECT_GE(th.minCoeff(), 0.0);
        EXPECT_LT(th.maxCoeff(), 2.0 * std::numbers::pi);
    }
}

TEST(LruInit, DegenerateRing) {
    const LruParams p = lru_init(small_shape(), 0.7, 0.7 + 1e-9, 3);
    EXPECT_NEAR(p.magnitudes().minCoeff(), 0.7, 1e-8);
    EXPECT_NEAR(p.magnitudes().maxCoeff(), 0.7, 1e-8);
}

TEST(LruInit, DeterministicPerSeed) {
    EXPECT_TRUE(lru_init(small_shape(), 0.4, 0.9, 9) == lru_init(small_shape(), 0.4, 0.9, 9));
    EXPECT_FALSE(lru_init(small_shape(), 0.4, 0.9, 9) == lru_init(small_shape(), 0.4, 0.9, 10));
}

TEST(LruStep, ZeroParametersGiveZeroOutput) {
    LruParams p(small_shape());
    auto [next, y] = lru_step(p, LruState::zeros(6), Vec::Zero(3));
    EXPECT_EQ(y, Vec::Zero(2));
    EXPECT_EQ(next.re, Vec::Zero(6));
}

TEST(LruStep, PureFeedthrough) {
    LruParams p(LruShape{4, 2, 2, 3, 5});
    p.block(LruParams::kF) = Mat::Identity(2, 2);
    std::mt19937_64 rng(1);
    const Signal v = test::random_signal(2, 10, rng);
    const Signal y = run_lru(p, v);
    EXPECT_LE((y.matrix() - v.matrix()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(LruStep, ScalarHandUnrolledImpulse) {
    const LruParams p = scalar_unit();
    Vec one(1);
    one << 1.0;
    const Signal y = run_lru(p, Signal::impulse(one, 5));
    const double g = std::sqrt(0.75);
    const double expected[] = {0.0, g, 0.5 * g, 0.25 * g, 0.125 * g, 0.0625 * g};
    for (int t = 0; t <= 5; ++t) EXPECT_NEAR(y.matrix()(0, t), expected[t], 1e-15) << "t=" << t;
    const Signal xs = run_lru_states(p, Signal::impulse(one, 5));
    for (int t = 1; t <= 5; ++t) EXPECT_NEAR(xs.matrix()(0, t), expected[t], 1e-15);
}

TEST(RunLru, ZeroInputGivesZeroOutput) {
    // The head is zero-centered, so no input means no output.
    const LruParams p = lru_init(small_shape(), 0.4, 0.9, 4);
    EXPECT_EQ(lp_norm(run_lru(p, Signal(3, 30)), kInfNorm), 0.0);
}

TEST(RunLru, SingleStepMatchesLruStep) {
    const LruParams p = lru_init(small_shape(), 0.4, 0.9, 5);
    Vec v(3);
    v << 0.3, -1.2, 2.0;
    const Signal y = run_lru(p, Signal(Mat(v)));
    EXPECT_EQ(Vec(y.at(0)), lru_step(p, LruState::zeros(6), v).second);
}

TEST(StabilityMargin, ClosedForms) {
    LruParams p(LruShape{1, 1, 1, 1, 0});
    EXPECT_NEAR(stability_margin(p), 0.36787944117144233, 1e-16);
    p.block(LruParams::kNu)(0, 0) = -30.0;
    EXPECT_LT(stability_margin(p), 1.0);
    EXPECT_GT(stability_margin(p), 1.0 - 1e-12);
    p.block(LruParams::kNu)(0, 0) = 5.0;
    EXPECT_LT(stability_margin(p), 1e-60);
}

TEST(StabilityMargin, NormalizerIsPositiveAndConsistent) {
    const LruParams p = lru_init(small_shape(), 0.0, 0.999, 6);
    const Vec g = p.normalizer();
    const Vec r = p.magnitudes();
    for (Eigen::Index i = 0; i < g.size(); ++i) {
        EXPECT_GT(g[i], 0.0);
        EXPECT_NEAR(g[i], std::sqrt(1.0 - r[i] * r[i]), 1e-12);
    }
}

TEST(EstimateGain, IdentityAndScaling) {
    std::mt19937_64 rng(7);
    std::vector<Signal> probes;
    for (int k = 0; k < 5; ++k) probes.push_back(test::random_signal(2, 10, rng));
    EXPECT_NEAR(estimate_gain([](const Signal& s) { return s; }, probes, 2.0), 1.0, 1e-15);
    EXPECT_NEAR(estimate_gain([](const Signal& s) { return 2.0 * s; }, probes, 2.0), 2.0, 1e-15);
}

TEST(EstimateGain, RejectsZeroProbe) {
    std::vector<Signal> probes{Signal(1, 3)};
    EXPECT_THROW(estimate_gain([](const Signal& s) { return s; }, probes, 2.0), std::invalid_argument);
}

TEST(EstimateGain, ScalarUnitBelowFrequencySweepBound) {
    // H(e^{iw}) = Gamma e^{-iw} / (1 - lambda e^{-iw}); dense sweep of |H|.
    double hinf = 0.0;
    const double g = std::sqrt(0.75);
    for (int k = 0; k <= 200000; ++k) {
        const double w = std::numbers::pi * k / 200000.0;
        const std::complex<double> z = std::exp(std::complex<double>(0.0, -w));
        hinf = std::max(hinf, std::abs(g * z / (1.0 - 0.5 * z)));
    }
    EXPECT_NEAR(hinf, 1.7320508075688772, 1e-9);

    const LruParams p = scalar_unit();
    std::mt19937_64 rng(8);
    std::vector<Signal> probes{Signal::impulse(Vec::Ones(1), 200)};
    for (int k = 0; k < 30; ++k) probes.push_back(test::burst(1, 200, 50, rng));
    // An alternating probe excites the w = pi end, a constant one the w = 0 peak.
    Signal dc(1, 400);
    for (Eigen::Index t = 0; t < 200; ++t) dc.matrix()(0, t) = 1.0;
    probes.push_back(dc);
    const double est = estimate_gain([&](const Signal& s) { return run_lru(p, s); }, probes, 2.0);
    EXPECT_LE(est, hinf + 1e-12);
    EXPECT_GT(est, 0.95 * hinf);
}

TEST(RescaleOutput, ScalesEveryProbeExactly) {
    std::mt19937_64 rng(9);
    const LruParams p = lru_init(small_shape(), 0.4, 0.9, 10);
    for (double c : {1.0, 0.0, 0.5, 2.5}) {
        const LruParams q = rescale_output(p, c);
        for (int k = 0; k < 10; ++k) {
            const Signal v = test::random_signal(3, 25, rng);
            const double a = lp_norm(run_lru(p, v), 2.0), b = lp_norm(run_lru(q, v), 2.0);
            EXPECT_NEAR(b, c * a, 1e-12 * std::max(1.0, a));
        }
    }
    EXPECT_TRUE(rescale_output(p, 1.0) == p);
    EXPECT_THROW(rescale_output(p, -1.0), std::invalid_argument);
}

TEST(RescaleOutput, IdentityHeadScalesToo) {
    const LruParams p = scalar_unit();
    const Signal v = Signal::impulse(Vec::Ones(1), 10);
    EXPECT_NEAR(lp_norm(run_lru(rescale_output(p, 0.5), v), 2.0), 0.5 * lp_norm(run_lru(p, v), 2.0), 1e-15);
}

TEST(LruProperty, MarginBelowOneForArbitraryNu) {
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> u(-30.0, 30.0);
    LruParams p(LruShape{16, 1, 1, 1, 0});
    for (int k = 0; k < 200; ++k) {
        for (Eigen::Index i = 0; i < 16; ++i) p.block(LruParams::kNu)(i, 0) = u(rng);
        EXPECT_LT(stability_margin(p), 1.0);
    }
}

TEST(LruProperty, TailRatioShrinksWithZeroPadding) {
    std::mt19937_64 rng(11);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const LruParams p = lru_init(small_shape(), 0.4, 0.9, 100 + seed);
        const Signal probe = test::burst(3, 20, 21, rng);
        double prev = std::numeric_limits<double>::infinity();
        for (Eigen::Index pad : {40, 80, 160}) {
            const Signal v = concat(probe, Signal(3, pad - 1));
            const Eigen::Index T = v.horizon();
            const double r = tail_ratio(run_lru(p, v), 2.0, (3 * T) / 4);
            EXPECT_LT(r, prev) << "seed " << seed << " pad " << pad;
            prev = r;
        }
        EXPECT_LT(prev, 1e-3);
    }
}

TEST(LruProperty, StateSuperposition) {
    std::mt19937_64 rng(12);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const LruParams p = lru_init(small_shape(), 0.4, 0.9, seed);
        const Signal a = test::random_signal(3, 30, rng), b = test::random_signal(3, 30, rng);
        const Mat sa = run_lru_states(p, a).matrix(), sb = run_lru_states(p, b).matrix();
        const Mat sab = run_lru_states(p, a + b).matrix();
        EXPECT_LE((sab - sa - sb).norm(), 1e-10 * sab.norm());
    }
}
