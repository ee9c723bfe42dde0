#include "madrl/autodiff.hpp"
#include "madrl/mlp.hpp"
#include "madrl/policies.hpp"
#include "madrl/stable_ops.hpp"
#include "madrl/corridor_env.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <random>

using namespace madrl;

namespace {

ParamVector scalar_param(double v) {
    ParamVector p;
    p.add("theta", 1, 1);
    p.flat()[0] = v;
    return p;
}

Mat randn(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double sd = 1.0) {
    std::normal_distribution<double> n(0.0, sd);
    Mat m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = n(rng);
    return m;
}

std::shared_ptr<const std::vector<Mat>> random_window(Eigen::Index dim, Eigen::Index B, int W, std::mt19937_64& rng) {
    auto w = std::make_shared<std::vector<Mat>>();
    for (int j = 0; j < W; ++j) w->push_back(randn(dim, B, rng));
    return w;
}

/// Weighted sum of every output entry, a generic scalarization.
ad::Var weighted_sum(ad::Var y, const Mat& weights) {
    return ad::sum(ad::mul(y, y.tape->constant(weights)));
}

}  // namespace

TEST(Grad, SquareAtThree) {
    const ad::TapeFn f = [](ad::Tape&, std::span<const ad::Var> v) { return ad::sum(ad::mul(v[0], v[0])); };
    EXPECT_EQ(ad::grad(f, scalar_param(3.0)).flat()[0], 6.0);
}

TEST(Grad, ConstantFunctionHasZeroGradient) {
    const ad::TapeFn f = [](ad::Tape& t, std::span<const ad::Var>) { return t.constant(Mat::Constant(1, 1, 4.0)); };
    ParamVector p;
    p.add("a", 3, 2);
    p.flat().setRandom();
    EXPECT_EQ(ad::grad(f, p).flat(), Vec::Zero(6));
}

TEST(Grad, NonScalarOutputRejected) {
    const ad::TapeFn f = [](ad::Tape&, std::span<const ad::Var> v) { return v[0]; };
    ParamVector p;
    p.add("a", 2, 1);
    EXPECT_THROW(ad::grad(f, p), std::invalid_argument);
}

TEST(FdCheck, LinearFunctionMatchesExactly) {
    std::mt19937_64 rng(1);
    const Mat a = randn(4, 3, rng);
    const ad::TapeFn f = [a](ad::Tape& t, std::span<const ad::Var> v) {
        return ad::sum(ad::mul(v[0], t.constant(a)));
    };
    ParamVector p;
    p.add("x", 4, 3);
    p.flat() = randn(12, 1, rng).col(0);
    const auto rep = ad::fd_check(f, p, 1e-3, 1e-10);
    EXPECT_TRUE(rep.passed) << rep.max_rel_error;
    EXPECT_EQ(rep.checked, 12);
}

TEST(FdCheck, ReportsWrongGradient) {
    // A hand-made op with a deliberately wrong backward pass.
    const ad::TapeFn f = [](ad::Tape& t, std::span<const ad::Var> v) {
        const ad::Var x = v[0];
        const ad::Var y = t.push(t.value(x).array().square().matrix(),
                                 [x](ad::Tape& tp, const Mat& g) { tp.accumulate(x, g); }, true);
        return ad::sum(y);
    };
    ParamVector p;
    p.add("x", 2, 1);
    p.flat() << 1.0, 2.0;
    const auto rep = ad::fd_check(f, p, 1e-5, 1e-4);
    EXPECT_FALSE(rep.passed);
    EXPECT_EQ(rep.failing.size(), 2u);
}

TEST(FdCheck, NormAtZeroIsFlaggedAndExcluded) {
    const ad::TapeFn f = [](ad::Tape&, std::span<const ad::Var> v) { return ad::sum(ad::col_norm(v[0])); };
    ParamVector p;
    p.add("x", 3, 1);
    const auto g = ad::value_and_grad(f, p);
    EXPECT_TRUE(g.singular);
    EXPECT_EQ(g.grad, Vec::Zero(3));
    const auto rep = ad::fd_check(f, p, 1e-5, 1e-4);
    EXPECT_TRUE(rep.singular);
    EXPECT_TRUE(rep.passed);
}

TEST(FdCheck, TanhNetworkWithinTolerance) {
    std::mt19937_64 rng(2);
    Mlp net({5, {7, 6}, 3});
    net.init(rng);
    net.params().flat() += 0.1 * randn(net.params().size(), 1, rng).col(0);
    const Mat x = randn(5, 4, rng), wts = randn(3, 4, rng);
    const ad::TapeFn f = [&](ad::Tape& t, std::span<const ad::Var> v) {
        return weighted_sum(net.forward(t.constant(x), v), wts);
    };
    const auto rep = ad::fd_check(f, net.params(), 1e-5, 1e-4);
    EXPECT_TRUE(rep.passed) << rep.max_rel_error;
}

TEST(GradProperty, CriticAtRandomPoints) {
    std::mt19937_64 rng(3);
    for (int k = 0; k < 20; ++k) {
        Mlp critic({8 + 4, {64, 64}, 1});
        critic.init(rng);
        critic.params().flat() += 0.05 * randn(critic.params().size(), 1, rng).col(0);
        const Mat su = randn(12, 8, rng), y = randn(1, 8, rng);
        const ad::TapeFn f = [&](ad::Tape& t, std::span<const ad::Var> v) {
            return ad::mean(ad::square(critic.forward(t.constant(su), v) - t.constant(y)));
        };
        const auto rep = ad::fd_check(f, critic.params(), 1e-5, 1e-4);
        EXPECT_TRUE(rep.passed) << "point " << k << " err " << rep.max_rel_error;
    }
}

TEST(GradProperty, DirectionNetworkAtRandomPoints) {
    std::mt19937_64 rng(4);
    for (int k = 0; k < 20; ++k) {
        Mlp psi({8, {32}, 4});
        psi.init(rng);
        psi.params().flat() += 0.1 * randn(psi.params().size(), 1, rng).col(0);
        const Mat x = randn(8, 6, rng), wts = randn(4, 6, rng);
        const ad::TapeFn f = [&](ad::Tape& t, std::span<const ad::Var> v) {
            return weighted_sum(direction_batch(psi, v, t.constant(x)), wts);
        };
        const auto rep = ad::fd_check(f, psi.params(), 1e-5, 1e-4);
        EXPECT_TRUE(rep.passed) << "point " << k << " err " << rep.max_rel_error;
    }
}

TEST(GradProperty, LruTenStepUnrollAtRandomPoints) {
    std::mt19937_64 rng(5);
    const PolicyShape shape;
    for (int k = 0; k < 20; ++k) {
        const LruShape s = (k % 2 == 0) ? shape.magnitude : LruShape{6, 8, 4, 4, 0};
        LruParams p = lru_init(s, 0.0, 0.99, 50 + k, 0.5);
        const auto window = random_window(8, 3, 10, rng);
        const Mat wts = randn(s.n_out, 3, rng);
        const ad::TapeFn f = [&](ad::Tape&, std::span<const ad::Var> v) {
            return weighted_sum(ad_ops::lru_window_output(p, v, window), wts);
        };
        const auto rep = ad::fd_check(f, p.params(), 1e-5, 1e-4);
        EXPECT_TRUE(rep.passed) << "point " << k << " err " << rep.max_rel_error;
    }
}

TEST(Grad, LruWindowOutputMatchesStepwiseRecursion) {
    std::mt19937_64 rng(6);
    const LruParams p = lru_init(PolicyShape{}.magnitude, 0.4, 0.9, 7);
    const auto window = random_window(8, 2, 10, rng);
    ad::Tape tape;
    const auto vars = ad::bind_constant(tape, p.params());
    const Mat y = tape.value(ad_ops::lru_window_output(p, vars, window));
    for (Eigen::Index b = 0; b < 2; ++b) {
        LruState s = LruState::zeros(8);
        Vec out;
        for (const Mat& v : *window) std::tie(s, out) = lru_step(p, s, Vec(v.col(b)));
        EXPECT_LE((y.col(b) - out).cwiseAbs().maxCoeff(), 1e-13);
    }
}

TEST(GradProperty, FullMadStepLossPerComponent) {
    std::mt19937_64 rng(7);
    const Plant plant = corridor_plant(EnvConfig::default_corridor());
    for (auto mode : {PolicyMode::MAD, PolicyMode::AD, PolicyMode::DF, PolicyMode::MLP}) {
        MadPolicy pol(mode, default_shape(mode), exact_model(plant), 8);
        PolicyBatch batch{randn(8, 4, rng), random_window(8, 4, 10, rng), nullptr};
        auto imp = std::make_shared<std::vector<Mat>>(10, Mat::Zero(8, 4));
        (*imp)[3] = randn(8, 4, rng);
        batch.impulse = imp;
        const Mat wts = randn(4, 4, rng);
        for (std::size_t which = 0; which < pol.trainable().size(); ++which) {
            const ParamVector& at = *pol.trainable()[which];
            const ad::TapeFn f = [&](ad::Tape& t, std::span<const ad::Var> v) {
                PolicyVars pv = bind_policy(t, pol, false);
                std::vector<std::vector<ad::Var>*> slots;
                if (uses_magnitude(mode)) slots.push_back(&pv.magnitude);
                if (uses_feedforward(mode)) slots.push_back(&pv.feedforward);
                if (uses_direction(mode)) slots.push_back(&pv.direction);
                if (mode == PolicyMode::MLP) slots.push_back(&pv.mlp);
                slots[which]->assign(v.begin(), v.end());
                return weighted_sum(policy_forward_batch(t, pol, pv, batch), wts);
            };
            const auto rep = ad::fd_check(f, at, 1e-5, 1e-4);
            EXPECT_TRUE(rep.passed) << to_string(mode) << " block " << which << " err " << rep.max_rel_error;
        }
    }
}

TEST(Grad, ProductRuleOnScalarToy) {
    // u = |c m + a| * tanh(psi x); du/dm = sign(c m + a) c tanh(psi x),
    // du/dpsi = |c m + a| x (1 - tanh^2(psi x)).
    const double c = 1.7, a = -0.4, x = 0.8;
    ParamVector p;
    p.add("m", 1, 1);
    p.add("psi", 1, 1);
    const ad::TapeFn f = [&](ad::Tape& t, std::span<const ad::Var> v) {
        const ad::Var mag = ad::col_norm(ad::scale(v[0], c) + t.constant(Mat::Constant(1, 1, a)));
        return ad::mul(mag, ad::tanh(ad::scale(v[1], x)));
    };
    for (double m : {-1.0, 0.1, 2.0})
        for (double psi : {-0.5, 0.3}) {
            p.flat() << m, psi;
            const Vec g = ad::value_and_grad(f, p).grad;
            const double inner = c * m + a, th = std::tanh(psi * x);
            EXPECT_NEAR(g[0], (inner > 0 ? 1.0 : -1.0) * c * th, 1e-14);
            EXPECT_NEAR(g[1], std::abs(inner) * x * (1.0 - th * th), 1e-14);
        }
}
