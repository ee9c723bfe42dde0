#pragma once

// Executable stability and inclusion checks. Every check returns a Report
// that serializes to {name, pass, metrics, thresholds, seeds}.
//
// Empirical stability is a falsifiable proxy, not a proof: signals are
// finite truncations and gain estimates are lower bounds.

#include "madrl/corridor_env.hpp"
#include "madrl/parallel.hpp"
#include "madrl/plant.hpp"
#include "madrl/policies.hpp"
#include "madrl/signals.hpp"
#include "madrl/stable_ops.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace madrl {

struct Report {
    std::string name;
    bool pass = false;
    std::map<std::string, double> metrics;
    std::map<std::string, double> thresholds;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> notes;
};

inline nlohmann::json to_json(const Report& r) {
    nlohmann::json j;
    j["name"] = r.name;
    j["pass"] = r.pass;
    // JSON has no infinity; non-finite values are written as strings.
    auto num = [](double v) -> nlohmann::json {
        if (std::isfinite(v)) return v;
        if (std::isnan(v)) return "nan";
        return v > 0 ? "inf" : "-inf";
    };
    j["metrics"] = nlohmann::json::object();
    for (const auto& [k, v] : r.metrics) j["metrics"][k] = num(v);
    j["thresholds"] = nlohmann::json::object();
    for (const auto& [k, v] : r.thresholds) j["thresholds"][k] = num(v);
    j["seeds"] = r.seeds;
    if (!r.notes.empty()) j["notes"] = r.notes;
    return j;
}

// ---------------------------------------------------------------------------
// Closed-loop stability

struct ProbeConfig {
    /// Disturbances w_1..w_support are nonzero, later samples are zero.
    Eigen::Index support = 20;
    double amplitude = 0.05;
    /// Initial offset from the plant equilibrium, per coordinate.
    double x0_spread = 0.5;
};

/// A finitely supported disturbance around plant.equilibrium: w_0 = x0 and
/// w_t for 1 <= t <= support, zero afterwards.
template <class Rng>
Signal stability_probe(const Plant& plant, Eigen::Index T, const ProbeConfig& pc, Rng& rng) {
    Signal w(plant.state_dim, T);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Vec x0 = plant.equilibrium.size() == plant.state_dim ? plant.equilibrium : Vec::Zero(plant.state_dim);
    for (Eigen::Index i = 0; i < plant.state_dim; ++i) x0[i] += pc.x0_spread * u(rng);
    w.at(0) = x0;
    for (Eigen::Index t = 1; t <= std::min(T, pc.support); ++t)
        for (Eigen::Index i = 0; i < plant.state_dim; ++i) w.matrix()(i, t) = pc.amplitude * u(rng);
    return w;
}

/// (x - x_eq, u) stacked, the signal whose lp membership defines closed-loop stability.
inline Signal deviation_signal(const Plant& plant, const Trajectory& tr) {
    Mat dx = tr.x.matrix();
    if (plant.equilibrium.size() == plant.state_dim) dx.colwise() -= plant.equilibrium;
    return stack(Signal(dx), tr.u);
}

struct StabilitySpec {
    std::size_t n_probes = 20;
    std::vector<Eigen::Index> T_list{200, 400, 800};
    double p = 2.0;
    double threshold = 0.05;
    std::uint64_t seed = 0;
    ProbeConfig probe;
};

/// Rolls the policy out on n_probes random finitely supported disturbances
/// for every horizon in T_list. Passes if the tail ratio at split 3T/4 is
/// below threshold at the largest T and does not increase from one horizon
/// to the next, on every probe. A non-finite state is a failure.
template <StepPolicy P>
Report check_stability(const Plant& plant, const P& policy, const StabilitySpec& spec) {
    if (spec.T_list.empty()) throw std::invalid_argument("check_stability: empty T_list");
    if (!std::is_sorted(spec.T_list.begin(), spec.T_list.end()) || spec.T_list.front() < 4)
        throw std::invalid_argument("check_stability: T_list must be ascending with T >= 4");
    const std::size_t K = spec.T_list.size();
    const Eigen::Index T_max = spec.T_list.back();
    std::vector<std::vector<double>> ratios(spec.n_probes, std::vector<double>(K, 0.0));
    std::vector<char> finite(spec.n_probes, 1);

    parallel_for(spec.n_probes, [&](std::size_t i) {
        std::mt19937_64 rng(rollout_rng(spec.seed, i, InitMode::Validation));
        const Signal w = stability_probe(plant, T_max, spec.probe, rng);
        for (std::size_t k = 0; k < K; ++k) {
            const Eigen::Index T = spec.T_list[k];
            P local = policy;
            try {
                const Trajectory tr = rollout(plant, local, w, T);
                ratios[i][k] = tail_ratio(deviation_signal(plant, tr), spec.p, (3 * T) / 4);
            } catch (const NonFiniteState&) {
                finite[i] = 0;
                ratios[i][k] = std::numeric_limits<double>::infinity();
            }
        }
    });

    Report r;
    r.name = "stability";
    r.seeds = {spec.seed};
    double worst_final = 0.0, worst_rise = -std::numeric_limits<double>::infinity();
    std::size_t non_finite = 0, increasing = 0;
    for (std::size_t i = 0; i < spec.n_probes; ++i) {
        if (!finite[i]) ++non_finite;
        worst_final = std::max(worst_final, ratios[i][K - 1]);
        bool inc = false;
        for (std::size_t k = 1; k < K; ++k) {
            const double rise = ratios[i][k] - ratios[i][k - 1];
            if (std::isfinite(rise)) worst_rise = std::max(worst_rise, rise);
            if (!(ratios[i][k] <= ratios[i][k - 1])) inc = true;
        }
        if (inc) ++increasing;
    }
    if (K == 1) worst_rise = 0.0;
    r.pass = spec.n_probes == 0 || (non_finite == 0 && increasing == 0 && worst_final < spec.threshold);
    r.metrics["max_tail_ratio_at_T_max"] = worst_final;
    r.metrics["max_tail_ratio_rise"] = worst_rise;
    r.metrics["probes_non_finite"] = static_cast<double>(non_finite);
    r.metrics["probes_increasing"] = static_cast<double>(increasing);
    r.metrics["n_probes"] = static_cast<double>(spec.n_probes);
    r.thresholds["tail_ratio"] = spec.threshold;
    r.thresholds["T_max"] = static_cast<double>(T_max);
    r.thresholds["p"] = spec.p;
    r.notes.push_back("empirical proxy on finite horizons, not a proof");
    return r;
}

// ---------------------------------------------------------------------------
// Behavior inclusion: MA with a = 0 reproduces DF exactly.

struct InclusionSpec {
    std::size_t n_rollouts = 50;
    Eigen::Index horizon = 50;
    double tol = 1e-9;
    std::uint64_t seed = 0;
};

/// Runs MA (magnitude theta1_ma) and DF (magnitude theta1_df) on the same
/// random disturbances with an exact model and compares inputs. Passing
/// the same parameters twice is the inclusion check; different parameters
/// give the negative control.
inline Report check_inclusion(const EnvConfig& cfg, const LruParams& theta1_ma, const LruParams& theta1_df,
                              const InclusionSpec& spec) {
    const Plant plant = cfg.plant();
    PolicyShape shape;
    shape.magnitude = theta1_ma.shape();
    if (!(theta1_df.shape().n_xi == shape.magnitude.n_xi && theta1_df.shape().head_width == shape.magnitude.head_width &&
          theta1_df.shape().head_in == shape.magnitude.head_in))
        throw std::invalid_argument("check_inclusion: MA and DF magnitude shapes differ");
    MadPolicy ma(PolicyMode::MA, shape, exact_model(plant), spec.seed);
    MadPolicy df(PolicyMode::DF, shape, exact_model(plant), spec.seed);
    ma.magnitude() = theta1_ma;
    df.magnitude() = theta1_df;

    std::vector<double> gap(spec.n_rollouts, 0.0);
    parallel_for(spec.n_rollouts, [&](std::size_t i) {
        EnvConfig c = cfg;
        c.horizon = spec.horizon;
        const Signal w = evaluation_disturbance(c, InitMode::Train, spec.seed, i);
        MadPolicy a = ma, b = df;
        const Trajectory ta = rollout(plant, a, w, spec.horizon);
        const Trajectory tb = rollout(plant, b, w, spec.horizon);
        double g = 0.0;
        for (Eigen::Index t = 0; t <= spec.horizon; ++t) g = std::max(g, (ta.u.at(t) - tb.u.at(t)).norm());
        gap[i] = g;
    });
    Report r;
    r.name = "inclusion";
    r.seeds = {spec.seed};
    const double worst = gap.empty() ? 0.0 : *std::max_element(gap.begin(), gap.end());
    std::size_t failed = 0;
    for (double g : gap)
        if (!(g <= spec.tol)) ++failed;
    r.pass = failed == 0;
    r.metrics["max_input_gap"] = worst;
    r.metrics["rollouts_failed"] = static_cast<double>(failed);
    r.metrics["n_rollouts"] = static_cast<double>(spec.n_rollouts);
    r.thresholds["tol"] = spec.tol;
    return r;
}

inline Report check_inclusion(const EnvConfig& cfg, const LruParams& theta1, const InclusionSpec& spec) {
    return check_inclusion(cfg, theta1, theta1, spec);
}

// ---------------------------------------------------------------------------
// Robustness under model mismatch

/// The admissible magnitude gain 1 / (gamma_Delta (gamma_F + 1)); +inf for
/// an exact model, 0 when nothing is known about the plant.
inline double robustness_bound(double gamma_delta, double gamma_f) {
    if (std::isnan(gamma_delta) || std::isnan(gamma_f) || gamma_delta < 0.0 || gamma_f < 0.0)
        throw std::invalid_argument("robustness_bound: gains must be nonnegative");
    if (gamma_delta == 0.0) return std::numeric_limits<double>::infinity();
    return 1.0 / (gamma_delta * (gamma_f + 1.0));
}

/// gamma_M < 1 / (gamma_Delta (gamma_F + 1)). An exact model admits any
/// magnitude operator; a zero magnitude operator is admissible for any model.
inline bool check_robustness_condition(double gamma_m, double gamma_delta, double gamma_f) {
    if (std::isnan(gamma_m) || gamma_m < 0.0) throw std::invalid_argument("check_robustness_condition: bad gamma_M");
    const double bound = robustness_bound(gamma_delta, gamma_f);
    if (gamma_delta == 0.0) return true;
    if (gamma_m == 0.0) return true;
    return gamma_m < bound;
}

struct GainCertificate {
    bool certified = false;  // the operator already met the bound
    double rescale = 1.0;    // c for rescale_output
    double gain_estimate = 0.0;
    double bound = 0.0;
    LruParams rescaled;
};

/// Estimates gamma(M) from probes (a lower bound on the true gain) and, if
/// the robustness bound is violated, returns the factor c that puts the
/// estimate at 90% of the bound.
inline GainCertificate certify_policy_gain(const LruParams& theta1, double gamma_delta, double gamma_f_estimate,
                                           std::span<const Signal> probes, double p = 2.0) {
    GainCertificate g;
    g.bound = robustness_bound(gamma_delta, gamma_f_estimate);
    g.rescaled = theta1;
    if (gamma_delta == 0.0) {
        g.certified = true;
        return g;
    }
    g.gain_estimate = estimate_gain([&](const Signal& v) { return run_lru(theta1, v); }, probes, p);
    if (check_robustness_condition(g.gain_estimate, gamma_delta, gamma_f_estimate)) {
        g.certified = true;
        return g;
    }
    g.rescale = 0.9 * g.bound / g.gain_estimate;
    g.rescaled = rescale_output(theta1, g.rescale);
    return g;
}

/// Random finitely supported probes for gain estimation: an impulse plus
/// Gaussian bursts.
inline std::vector<Signal> gain_probes(Eigen::Index dim, Eigen::Index T, std::size_t n, std::uint64_t seed,
                                       Eigen::Index support = 20) {
    std::vector<Signal> out;
    Vec e = Vec::Zero(dim);
    e[0] = 1.0;
    out.push_back(Signal::impulse(e, T));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (std::size_t k = 1; k < n; ++k) {
        Signal s(dim, T);
        for (Eigen::Index t = 0; t <= std::min(T, support); ++t)
            for (Eigen::Index i = 0; i < dim; ++i) s.matrix()(i, t) = nd(rng);
        out.push_back(std::move(s));
    }
    return out;
}

/// Probe estimate (lower bound) of the gain of (u, w) -> x - x_eq for a
/// pre-stabilized plant, in deviation coordinates.
inline double estimate_plant_gain(const Plant& plant, std::size_t n_probes, Eigen::Index T, std::uint64_t seed,
                                  double amplitude = 0.05, Eigen::Index support = 20, double p = 2.0) {
    std::vector<double> ratio(n_probes, 0.0);
    parallel_for(n_probes, [&](std::size_t i) {
        std::mt19937_64 rng(rollout_rng(seed, i, InitMode::Train));
        std::normal_distribution<double> nd(0.0, amplitude);
        Mat u = Mat::Zero(plant.input_dim, T + 1);
        Mat w = Mat::Zero(plant.state_dim, T + 1);
        for (Eigen::Index t = 0; t <= std::min(T, support); ++t) {
            for (Eigen::Index j = 0; j < plant.input_dim; ++j) u(j, t) = nd(rng);
            for (Eigen::Index j = 0; j < plant.state_dim; ++j) w(j, t) = nd(rng);
        }
        Signal wx(w);
        wx.at(0) += plant.equilibrium;
        const Signal us(u);
        FeedbackPolicy open{[&, t = Eigen::Index{0}](const Vec&) mutable { return Vec(us.at(t++)); }};
        const Trajectory tr = rollout(plant, open, wx, T);
        Mat dx = tr.x.matrix();
        dx.colwise() -= plant.equilibrium;
        ratio[i] = lp_norm(Signal(dx), p) / lp_norm(stack(us, Signal(w)), p);
    });
    return ratio.empty() ? 0.0 : *std::max_element(ratio.begin(), ratio.end());
}

struct MismatchSpec {
    std::size_t n_rollouts = 20;
    double tol = 1e-10;
    std::uint64_t seed = 0;
    double gamma_delta = 0.0;  // for the informational inequality chain
    double gamma_f = 0.0;
};

/// Records rollouts on the true plant and checks, sample by sample, that
/// w_hat_t = Delta(x_{t-1}, u_{t-1}) + w_t with Delta = f - f_hat evaluated
/// on both models. Also logs both sides of
///   ||w_hat|| <= gamma_Delta (gamma_F ||w|| + gamma_F ||u|| + ||u||) + ||w||
/// (informational only; the gains are estimates).
template <StepPolicy P>
Report check_mismatch_residual(const EnvConfig& cfg, const Plant& true_plant, const NominalModel& nominal,
                               const P& policy, const MismatchSpec& spec) {
    const Eigen::Index T = cfg.horizon;
    std::vector<double> err(spec.n_rollouts, 0.0), lhs(spec.n_rollouts, 0.0), rhs(spec.n_rollouts, 0.0);
    parallel_for(spec.n_rollouts, [&](std::size_t i) {
        const Signal w = evaluation_disturbance(cfg, InitMode::Validation, spec.seed, i);
        P local = policy;
        const Trajectory tr = rollout(true_plant, local, w, T);
        Signal w_hat(true_plant.state_dim, T);
        w_hat.at(0) = tr.x.at(0);
        double e = 0.0;
        for (Eigen::Index t = 1; t <= T; ++t) {
            const Vec xp = tr.x.at(t - 1), up = tr.u.at(t - 1);
            w_hat.at(t) = reconstruct_disturbance(nominal, tr.x.at(t), xp, up);
            const Vec delta = true_plant.f(xp, up) - nominal.model.f(xp, up);
            e = std::max(e, (w_hat.at(t) - (delta + w.at(t))).cwiseAbs().maxCoeff());
        }
        err[i] = e;
        // The chain is stated for the disturbance after t = 0; x0 enters both sides alike.
        const double nw = lp_norm(w.slice(1, T), 2.0), nu = lp_norm(tr.u, 2.0);
        lhs[i] = lp_norm(w_hat.slice(1, T), 2.0);
        rhs[i] = spec.gamma_delta * (spec.gamma_f * nw + spec.gamma_f * nu + nu) + nw;
    });
    Report r;
    r.name = "mismatch_residual";
    r.seeds = {spec.seed};
    const double worst = err.empty() ? 0.0 : *std::max_element(err.begin(), err.end());
    std::size_t chain_holds = 0;
    for (std::size_t i = 0; i < spec.n_rollouts; ++i)
        if (lhs[i] <= rhs[i]) ++chain_holds;
    r.pass = worst <= spec.tol;
    r.metrics["max_identity_error"] = worst;
    r.metrics["chain_holds_fraction"] =
        spec.n_rollouts ? static_cast<double>(chain_holds) / static_cast<double>(spec.n_rollouts) : 1.0;
    r.metrics["mean_w_hat_norm"] = mean(lhs);
    r.metrics["mean_chain_bound"] = mean(rhs);
    r.thresholds["tol"] = spec.tol;
    r.notes.push_back("chain_holds_fraction is informational; it uses estimated gains");
    return r;
}

}  // namespace madrl
