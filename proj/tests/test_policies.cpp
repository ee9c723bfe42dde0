#include "madrl/policies.hpp"
#include "madrl/corridor_env.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace madrl;

namespace {

Plant corridor() { return corridor_plant(EnvConfig::default_corridor()); }

MadPolicy make(PolicyMode m, std::uint64_t seed) {
    return MadPolicy(m, default_shape(m), exact_model(corridor()), seed);
}

/// Rolls the policy over a random corridor episode and calls f(policy, x, u)
/// after each step.
template <class F>
void drive(MadPolicy& p, std::uint64_t seed, Eigen::Index T, F&& f) {
    const Plant plant = corridor();
    std::mt19937_64 rng(seed);
    Signal w = test::random_signal(8, T, rng, 0.05);
    w.at(0) = EnvConfig::default_corridor().equilibrium() + test::random_signal(8, 0, rng).at(0);
    Vec x = w.at(0);
    p.reset(x);
    for (Eigen::Index t = 0; t <= T; ++t) {
        const Vec u = p.act(x, t);
        f(p, x, u);
        if (t < T) x = step(plant, x, u, w.at(t + 1));
    }
}

}  // namespace

TEST(Direction, ZeroNetworkGivesZero) {
    Mlp psi({8, {16}, 4});
    EXPECT_EQ(direction(psi, Vec::Random(8)), Vec::Zero(4));
}

TEST(Direction, SaturatedLimitHasUnitNorm) {
    Mlp psi({3, {5}, 2});
    psi.params().block(3).setConstant(1e3);
    const Vec d = direction(psi, Vec::Random(3));
    EXPECT_NEAR(d[0], 1.0 / std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(d[1], 1.0 / std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(d.norm(), 1.0, 1e-15);
}

TEST(DirectionProperty, NormAtMostOne) {
    std::mt19937_64 rng(1);
    for (int k = 0; k < 200; ++k) {
        Mlp psi({8, {32}, 4});
        psi.init(rng, 5.0);
        EXPECT_LE(direction(psi, 10.0 * Vec::Random(8)).norm(), 1.0 + 1e-15);
    }
}

TEST(Modes, ParseAndPrintRoundTrip) {
    for (auto m : {PolicyMode::MAD, PolicyMode::MA, PolicyMode::AD, PolicyMode::DF, PolicyMode::MLP, PolicyMode::BASE})
        EXPECT_EQ(parse_mode(to_string(m)), m);
    EXPECT_THROW(parse_mode("mad"), std::invalid_argument);
}

TEST(MadPolicy, ModelRequiredForDisturbanceModes) {
    for (auto m : {PolicyMode::MAD, PolicyMode::MA, PolicyMode::DF})
        EXPECT_THROW(MadPolicy(m, default_shape(m), std::nullopt, 0), std::invalid_argument);
    for (auto m : {PolicyMode::AD, PolicyMode::MLP, PolicyMode::BASE})
        EXPECT_NO_THROW(MadPolicy(m, default_shape(m), std::nullopt, 0));
}

TEST(MadPolicy, ParameterCounts) {
    EXPECT_EQ(make(PolicyMode::MAD, 0).parameter_count(), 1892);
    EXPECT_EQ(make(PolicyMode::MA, 0).parameter_count(), 1744);
    EXPECT_EQ(make(PolicyMode::DF, 0).parameter_count(), 1744);
    EXPECT_EQ(make(PolicyMode::AD, 0).parameter_count(), 1156);
    EXPECT_EQ(make(PolicyMode::MLP, 0).parameter_count(), 420);
    EXPECT_EQ(make(PolicyMode::BASE, 0).parameter_count(), 0);
}

TEST(MadPolicy, ZeroLrusGiveZeroAction) {
    MadPolicy p = make(PolicyMode::MAD, 3);
    p.magnitude().params().flat().setZero();
    p.feedforward().params().flat().setZero();
    drive(p, 4, 50, [](const MadPolicy&, const Vec&, const Vec& u) { EXPECT_EQ(u, Vec::Zero(4)); });
}

TEST(MadPolicy, ScalarToyArithmetic) {
    // M_0 = F * w_hat_0 = 2 * x0 = 2, a = 0, d = tanh(atanh(-0.6)) = -0.6.
    PolicyShape s;
    s.state_dim = s.input_dim = 1;
    s.magnitude = s.feedforward = LruShape{1, 1, 1, 1, 0};
    s.direction_hidden = {2};
    MadPolicy p(PolicyMode::MAD, s, exact_model(scalar_linear_plant(0.5, 1.0)), 0);
    p.magnitude().params().flat().setZero();
    p.magnitude().block(LruParams::kF)(0, 0) = 2.0;
    p.feedforward().params().flat().setZero();
    p.direction_net().params().flat().setZero();
    p.direction_net().params().block(3)(0, 0) = std::atanh(-0.6);
    const Vec x0 = Vec::Ones(1);
    p.reset(x0);
    EXPECT_NEAR(p.act(x0, 0)[0], -1.2, 1e-15);
    EXPECT_NEAR(p.last_magnitude_term()[0], 2.0, 0.0);
}

TEST(MadPolicy, FirstStepUsesInitialStateAsDisturbance) {
    MadPolicy p = make(PolicyMode::DF, 5);
    const Vec x0 = Vec::LinSpaced(8, -1.0, 1.0);
    p.reset(x0);
    EXPECT_EQ(p.peek_w_hat(x0), x0);
    const Vec u = p.act(x0, 0);
    EXPECT_EQ(p.last_w_hat(), x0);
    EXPECT_EQ(u, lru_step(p.magnitude(), LruState::zeros(16), x0).second);
}

TEST(MadPolicy, DfMatchesImpulseResponseWithoutDisturbance) {
    MadPolicy p = make(PolicyMode::DF, 6);
    const Plant plant = corridor();
    Vec x = EnvConfig::default_corridor().equilibrium() + 0.5 * Vec::Ones(8);
    const Signal y = run_lru(p.magnitude(), Signal::impulse(x, 30));
    p.reset(x);
    for (Eigen::Index t = 0; t <= 30; ++t) {
        const Vec u = p.act(x, t);
        EXPECT_LE((u - y.at(t)).cwiseAbs().maxCoeff(), 1e-12) << "t=" << t;
        x = plant.f(x, u);
    }
}

TEST(MadPolicy, AdFirstStepAndOpenLoopDecay) {
    MadPolicy p = make(PolicyMode::AD, 7);
    const Vec x0 = EnvConfig::default_corridor().equilibrium() + Vec::Ones(8);
    p.reset(x0);
    const Vec u0 = p.act(x0, 0);
    const Vec a0 = lru_step(p.feedforward(), LruState::zeros(8), x0).second;
    EXPECT_LE((u0 - a0.norm() * direction(p.direction_net(), x0)).cwiseAbs().maxCoeff(), 1e-15);

    Signal mags(1, 200);
    Vec x = x0;
    for (Eigen::Index t = 1; t <= 200; ++t) {
        x += 0.01 * Vec::Random(8);
        p.act(x, t);
        mags.at(t)[0] = p.last_magnitude_term().norm();
    }
    mags.at(0)[0] = a0.norm();
    EXPECT_LT(tail_ratio(mags, 2.0, 150), 1e-6);
}

TEST(MadPolicy, AdIgnoresTheModel) {
    MadPolicy a(PolicyMode::AD, default_shape(PolicyMode::AD), exact_model(corridor()), 8);
    MadPolicy b(PolicyMode::AD, default_shape(PolicyMode::AD), std::nullopt, 8);
    drive(a, 9, 40, [](const MadPolicy&, const Vec&, const Vec&) {});
    std::vector<Vec> ua, ub;
    drive(a, 9, 40, [&](const MadPolicy&, const Vec&, const Vec& u) { ua.push_back(u); });
    drive(b, 9, 40, [&](const MadPolicy&, const Vec&, const Vec& u) { ub.push_back(u); });
    EXPECT_EQ(ua, ub);
}

TEST(MadPolicy, MlpZeroWeightsAndDeterminism) {
    MadPolicy p = make(PolicyMode::MLP, 10);
    MadPolicy q = make(PolicyMode::MLP, 10);
    EXPECT_TRUE(p.mlp().params() == q.mlp().params());
    p.mlp().params().flat().setZero();
    p.reset(Vec::Ones(8));
    EXPECT_EQ(p.act(Vec::Ones(8), 0), Vec::Zero(4));
}

TEST(MadPolicy, ResetSemantics) {
    MadPolicy p = make(PolicyMode::MAD, 11);
    const Vec x0 = Vec::LinSpaced(8, 0.0, 1.0);
    p.reset(x0);
    const Vec u0 = p.act(x0, 0);
    p.act(x0, 1);
    EXPECT_EQ(p.time(), 2);
    EXPECT_THROW(p.act(x0, 5), std::invalid_argument);
    p.reset(x0);
    p.reset(x0);
    EXPECT_EQ(p.time(), 0);
    EXPECT_EQ(p.magnitude_state().re, Vec::Zero(8));
    EXPECT_EQ(p.act(x0, 0), u0);
}

TEST(MadPolicy, AugmentedStateLayout) {
    for (auto m : {PolicyMode::MAD, PolicyMode::MA, PolicyMode::AD, PolicyMode::DF, PolicyMode::MLP}) {
        MadPolicy p = make(m, 12);
        drive(p, 13, 5, [&](const MadPolicy& pol, const Vec& x, const Vec&) {
            const Vec s = pol.augmented_state(x);
            EXPECT_EQ(s.size(), pol.augmented_dim());
            EXPECT_EQ(Vec(s.head(8)), x);
        });
    }
    EXPECT_EQ(make(PolicyMode::MAD, 0).augmented_dim(), 8 + 16 + 16 + 8);
    EXPECT_EQ(make(PolicyMode::AD, 0).augmented_dim(), 8 + 16);
    EXPECT_EQ(make(PolicyMode::MLP, 0).augmented_dim(), 8);
}

TEST(MadPolicy, DimensionMismatchThrows) {
    MadPolicy p = make(PolicyMode::MAD, 14);
    EXPECT_THROW(p.reset(Vec::Zero(3)), std::invalid_argument);
    p.reset(Vec::Zero(8));
    EXPECT_THROW(p.act(Vec::Zero(3), 0), std::invalid_argument);
}

TEST(PolicyProperty, ActionBoundedByMagnitudeTerm) {
    for (auto m : {PolicyMode::MAD, PolicyMode::MA, PolicyMode::AD, PolicyMode::DF}) {
        int steps = 0;
        for (std::uint64_t seed = 0; steps < 1000; ++seed) {
            MadPolicy p = make(m, 100 + seed);
            drive(p, 200 + seed, 99, [&](const MadPolicy& pol, const Vec&, const Vec& u) {
                EXPECT_LE(u.norm(), pol.last_magnitude_term().norm() * (1.0 + 1e-14));
                ++steps;
            });
        }
    }
}

TEST(PolicyProperty, MaEqualsDfOnSharedParameters) {
    for (std::uint64_t k = 0; k < 50; ++k) {
        MadPolicy ma = make(PolicyMode::MA, 300 + k);
        MadPolicy df = make(PolicyMode::DF, 300 + k);
        ASSERT_TRUE(ma.magnitude() == df.magnitude());
        std::vector<Vec> ua, ud;
        drive(ma, 400 + k, 100, [&](const MadPolicy&, const Vec&, const Vec& u) { ua.push_back(u); });
        drive(df, 400 + k, 100, [&](const MadPolicy&, const Vec&, const Vec& u) { ud.push_back(u); });
        double worst = 0.0;
        for (std::size_t t = 0; t < ua.size(); ++t) worst = std::max(worst, (ua[t] - ud[t]).cwiseAbs().maxCoeff());
        EXPECT_LE(worst, 1e-9);
    }
}

TEST(PolicyProperty, Causality) {
    const Plant plant = corridor();
    for (auto m : {PolicyMode::MAD, PolicyMode::MA, PolicyMode::AD, PolicyMode::DF}) {
        std::mt19937_64 rng(15);
        MadPolicy p = make(m, 16);
        Signal w = test::random_signal(8, 60, rng, 0.05);
        const Trajectory a = rollout(plant, p, w, 60);
        for (Eigen::Index s = 31; s <= 60; ++s) w.at(s) *= -3.0;
        const Trajectory b = rollout(plant, p, w, 60);
        EXPECT_EQ(a.u.slice(0, 30).matrix(), b.u.slice(0, 30).matrix());
        EXPECT_NE(a.u.slice(31, 60).matrix(), b.u.slice(31, 60).matrix());
    }
}

TEST(PolicyProperty, ClosedLoopTailRatioDecreasesWithHorizon) {
    const CorridorParams c = EnvConfig::default_corridor();
    const Plant plant = corridor_plant(c);
    const PolicyMode modes[] = {PolicyMode::MAD, PolicyMode::MA, PolicyMode::AD};
    for (int k = 0; k < 100; ++k) {
        const PolicyMode m = modes[k % 3];
        MadPolicy p = make(m, 500 + k);
        std::mt19937_64 rng(600 + k);
        const Signal probe = test::burst(8, 19, 20, rng);
        double prev = std::numeric_limits<double>::infinity();
        for (Eigen::Index T : {200, 400, 800}) {
            Signal w = concat(probe, Signal(8, T - 20));
            w.at(0) += c.equilibrium();
            const Trajectory tr = rollout(plant, p, w, T);
            Mat dx = tr.x.matrix();
            dx.colwise() -= c.equilibrium();
            const double r = tail_ratio(Signal(dx), 2.0, 3 * T / 4);
            EXPECT_LT(r, prev) << to_string(m) << " policy " << k << " T=" << T;
            prev = r;
        }
    }
}
