#pragma once

// The corridor benchmark: two vehicles swap sides through a narrow passage
// between Gaussian obstacles. Stage loss, discounted return, initial-condition
// samplers and the improvement-over-base metric.

#include "madrl/parallel.hpp"
#include "madrl/plant.hpp"
#include "madrl/signals.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace madrl {

struct Obstacle {
    Eigen::Vector2d mu{0.0, 0.0};
    Eigen::Matrix2d sigma = Eigen::Matrix2d::Identity();
};

/// Axis-aligned box of initial positions; initial velocities are zero.
struct InitBox {
    Eigen::Vector2d center{0.0, 0.0};
    Eigen::Vector2d half_width{0.0, 0.0};
};

enum class InitMode { Train, Validation, Generalization };

inline InitMode parse_init_mode(std::string_view s) {
    if (s == "train") return InitMode::Train;
    if (s == "validation") return InitMode::Validation;
    if (s == "generalization") return InitMode::Generalization;
    throw std::invalid_argument("unknown evaluation mode '" + std::string(s) +
                                "' (expected train|validation|generalization)");
}

inline std::string_view to_string(InitMode m) {
    switch (m) {
        case InitMode::Train: return "train";
        case InitMode::Validation: return "validation";
        case InitMode::Generalization: return "generalization";
    }
    return "?";
}

struct EnvConfig {
    CorridorParams corridor = default_corridor();
    /// Weight on (x - x_bar, u), 12 x 12.
    Mat S = default_weight();
    double S_ca = 1.0;
    double d_min = 0.5;
    double eps = 1e-3;
    double S_obs = 1.0;
    std::vector<Obstacle> obstacles = default_obstacles();
    double alpha = 0.99;
    double sigma_w = 0.02;
    double w_truncation = 4.0;  // in units of sigma_w
    std::array<InitBox, 2> init = default_init();
    Eigen::Index horizon = 100;

    static CorridorParams default_corridor() {
        CorridorParams c;
        c.vehicles[0].target = {-2.0, 2.5};
        c.vehicles[1].target = {2.0, 2.5};
        return c;
    }

    static Mat default_weight() {
        Vec d(12);
        d << 1, 1, 0.1, 0.1, 1, 1, 0.1, 0.1, 0.01, 0.01, 0.01, 0.01;
        return d.asDiagonal();
    }

    /// Two walls of paired Gaussians leave a vertical passage around x = 0.
    static std::vector<Obstacle> default_obstacles() {
        std::vector<Obstacle> obs;
        for (double cx : {-2.5, -1.5, 1.5, 2.5}) obs.push_back({{cx, 0.0}, 0.2 * Eigen::Matrix2d::Identity()});
        return obs;
    }

    /// Agent 1 starts bottom right, agent 2 bottom left; targets are top
    /// left and top right, so the straight paths cross in the passage.
    static std::array<InitBox, 2> default_init() {
        return {InitBox{{2.0, -2.5}, {0.5, 0.5}}, InitBox{{-2.0, -2.5}, {0.5, 0.5}}};
    }

    void validate() const {
        corridor.validate();
        if (S.rows() != 12 || S.cols() != 12) throw std::invalid_argument("EnvConfig: S must be 12x12");
        if ((S - S.transpose()).cwiseAbs().maxCoeff() > 1e-12) throw std::invalid_argument("EnvConfig: S must be symmetric");
        Eigen::SelfAdjointEigenSolver<Mat> es(S);
        if (es.eigenvalues().minCoeff() < -1e-12) throw std::invalid_argument("EnvConfig: S must be PSD");
        if (!(S_ca > 0.0 && S_obs > 0.0 && eps > 0.0 && d_min >= 0.0))
            throw std::invalid_argument("EnvConfig: need S_ca, S_obs, eps > 0 and d_min >= 0");
        if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("EnvConfig: alpha must lie in (0, 1)");
        if (!(sigma_w >= 0.0 && w_truncation > 0.0)) throw std::invalid_argument("EnvConfig: bad disturbance parameters");
        if (horizon < 1) throw std::invalid_argument("EnvConfig: horizon must be >= 1");
        for (const auto& o : obstacles) {
            if ((o.sigma - o.sigma.transpose()).cwiseAbs().maxCoeff() > 1e-12 || o.sigma.determinant() <= 0.0 ||
                o.sigma(0, 0) <= 0.0)
                throw std::invalid_argument("EnvConfig: obstacle covariance must be symmetric positive definite");
        }
        for (const auto& b : init)
            if (b.half_width.minCoeff() < 0.0) throw std::invalid_argument("EnvConfig: negative init box width");
    }

    Plant plant() const { return corridor_plant(corridor); }
    Vec target_state() const { return corridor.equilibrium(); }
};

struct LossTerms {
    double traj = 0.0;
    double collision = 0.0;
    double obstacle = 0.0;
    double total() const { return traj + collision + obstacle; }
};

inline LossTerms stage_loss_terms(const EnvConfig& cfg, const Vec& x, const Vec& u) {
    if (x.size() != kCorridorStateDim || u.size() != kCorridorInputDim)
        throw std::invalid_argument("stage_loss: expected x in R^8 and u in R^4");
    LossTerms l;
    Vec z(12);
    z << x - cfg.target_state(), u;
    l.traj = z.dot(cfg.S * z);

    const Eigen::Vector2d p1 = x.segment<2>(0);
    const Eigen::Vector2d p2 = x.segment<2>(4);
    const double dist2 = (p1 - p2).squaredNorm();
    // Both ordered pairs (1,2) and (2,1).
    if (dist2 < cfg.d_min * cfg.d_min) l.collision = cfg.S_ca * 2.0 / (dist2 + cfg.eps);

    for (const auto& o : cfg.obstacles) {
        const Eigen::Matrix2d inv = o.sigma.inverse();
        for (const Eigen::Vector2d& p : {p1, p2}) {
            const Eigen::Vector2d d = p - o.mu;
            l.obstacle += cfg.S_obs * std::exp(-0.5 * d.dot(inv * d));
        }
    }
    return l;
}

/// l(x, u) = l_traj + l_ca + l_obs.
inline double stage_loss(const EnvConfig& cfg, const Vec& x, const Vec& u) { return stage_loss_terms(cfg, x, u).total(); }

struct DiscountedReturn {
    double value = 0.0;
    /// alpha^(T+1) * l_max / (1 - alpha) with l_max the largest observed stage loss.
    double truncation_bound = 0.0;
};

/// sum_{t=0}^{T_eval} alpha^t l(x_t, u_t).
inline DiscountedReturn discounted_return(const EnvConfig& cfg, const Signal& x, const Signal& u,
                                          Eigen::Index T_eval) {
    if (T_eval > x.horizon() || T_eval > u.horizon() || T_eval < 0)
        throw std::out_of_range("discounted_return: T_eval exceeds trajectory");
    DiscountedReturn r;
    double w = 1.0, l_max = 0.0;
    for (Eigen::Index t = 0; t <= T_eval; ++t) {
        const double l = stage_loss(cfg, Vec(x.at(t)), Vec(u.at(t)));
        r.value += w * l;
        l_max = std::max(l_max, l);
        w *= cfg.alpha;
    }
    r.truncation_bound = w * l_max / (1.0 - cfg.alpha);
    return r;
}

/// Same sum over a precomputed loss sequence.
inline double discounted_sum(std::span<const double> losses, double alpha) {
    double acc = 0.0, w = 1.0;
    for (double l : losses) {
        acc += w * l;
        w *= alpha;
    }
    return acc;
}

template <class Rng>
Vec sample_init(const EnvConfig& cfg, InitMode mode, Rng& rng) {
    Vec x0 = Vec::Zero(kCorridorStateDim);
    for (int agent = 0; agent < 2; ++agent) {
        // Generalization swaps the two agents' starting neighborhoods.
        const InitBox& box = cfg.init[mode == InitMode::Generalization ? 1 - agent : agent];
        for (int k = 0; k < 2; ++k) {
            double v = box.center[k];
            if (box.half_width[k] > 0.0) {
                std::uniform_real_distribution<double> u(box.center[k] - box.half_width[k],
                                                         box.center[k] + box.half_width[k]);
                v = u(rng);
            }
            x0[4 * agent + k] = v;
        }
    }
    return x0;
}

/// w_1..w_T i.i.d. zero-mean Gaussian truncated at w_truncation * sigma_w;
/// w_0 is left zero for the caller to fill with x0.
template <class Rng>
Signal sample_disturbance(const EnvConfig& cfg, Eigen::Index T, Rng& rng) {
    Signal w(kCorridorStateDim, T);
    if (cfg.sigma_w == 0.0) return w;
    std::normal_distribution<double> n(0.0, 1.0);
    for (Eigen::Index t = 1; t <= T; ++t)
        for (Eigen::Index i = 0; i < kCorridorStateDim; ++i) {
            double z;
            do z = n(rng);
            while (std::abs(z) > cfg.w_truncation);
            w.matrix()(i, t) = cfg.sigma_w * z;
        }
    return w;
}

/// Deterministic per-rollout generator so that every policy is evaluated on
/// the same initial conditions and disturbances.
inline std::mt19937_64 rollout_rng(std::uint64_t seed, std::uint64_t index, InitMode mode) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(mode), 0x6d61u};
    return std::mt19937_64(seq);
}

/// Disturbance realization (with x0 in its first sample) for evaluation rollout `index`.
inline Signal evaluation_disturbance(const EnvConfig& cfg, InitMode mode, std::uint64_t seed, std::uint64_t index) {
    auto rng = rollout_rng(seed, index, mode);
    const Vec x0 = sample_init(cfg, mode, rng);
    Signal w = sample_disturbance(cfg, cfg.horizon, rng);
    w.at(0) = x0;
    return w;
}

/// Discounted losses of `policy` (copied per rollout) over n shared-seed rollouts.
template <StepPolicy P>
std::vector<double> evaluate_policy(const EnvConfig& cfg, const P& policy, InitMode mode, std::size_t n,
                                    std::uint64_t seed) {
    const Plant plant = cfg.plant();
    std::vector<double> out(n, 0.0);
    parallel_for(n, [&](std::size_t i) {
        P local = policy;
        const Signal w = evaluation_disturbance(cfg, mode, seed, i);
        const Trajectory tr = rollout(plant, local, w, cfg.horizon);
        out[i] = discounted_return(cfg, tr.x, tr.u, cfg.horizon).value;
    });
    return out;
}

inline double mean(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

/// 100 (L_base - L_policy) / L_base with L the mean discounted loss over the
/// same rollouts; the base is u = 0 on top of the embedded controller.
inline double improvement_pct(double base_loss, double policy_loss) {
    if (!(base_loss > 0.0)) throw std::invalid_argument("improvement_pct: base loss must be positive");
    return 100.0 * (base_loss - policy_loss) / base_loss;
}

template <StepPolicy P>
double improvement_over_base(const EnvConfig& cfg, const P& policy, std::size_t n_rollouts, std::uint64_t seed,
                             InitMode mode = InitMode::Validation) {
    const double base = mean(evaluate_policy(cfg, ZeroPolicy{kCorridorInputDim}, mode, n_rollouts, seed));
    const double pol = mean(evaluate_policy(cfg, policy, mode, n_rollouts, seed));
    return improvement_pct(base, pol);
}

}  // namespace madrl
