#pragma once

// Magnitude-and-direction policies and the baselines they are compared with.
//
//   MAD : u_t = |M_t(w_hat_{t:0}) + a_t(x0)| * D(x_t)
//   MA  : u_t = |M_t| * M_t / |M_t|        (0 when M_t = 0)
//   DF  : u_t = M_t(w_hat_{t:0})
//   AD  : u_t = |a_t(x0)| * D(x_t)         (no model needed)
//   MLP : u_t = NN(x_t)                    (no stability structure)
//   BASE: u_t = 0                          (base controller only)
//
// M is an LRU driven by reconstructed disturbances, a is an LRU driven by
// the impulse (x0, 0, 0, ...), and D(x) = tanh(NN(x)) / sqrt(m) so |D| <= 1.

#include "madrl/autodiff.hpp"
#include "madrl/mlp.hpp"
#include "madrl/plant.hpp"
#include "madrl/stable_ops.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace madrl {

enum class PolicyMode { MAD, MA, AD, DF, MLP, BASE };

inline std::string_view to_string(PolicyMode m) {
    switch (m) {
        case PolicyMode::MAD: return "MAD";
        case PolicyMode::MA: return "MA";
        case PolicyMode::AD: return "AD";
        case PolicyMode::DF: return "DF";
        case PolicyMode::MLP: return "MLP";
        case PolicyMode::BASE: return "BASE";
    }
    return "?";
}

inline PolicyMode parse_mode(std::string_view s) {
    for (PolicyMode m : {PolicyMode::MAD, PolicyMode::MA, PolicyMode::AD, PolicyMode::DF, PolicyMode::MLP,
                         PolicyMode::BASE})
        if (to_string(m) == s) return m;
    throw std::invalid_argument("unknown policy mode '" + std::string(s) + "' (expected MAD|MA|AD|DF|MLP|BASE)");
}

/// Modes that reconstruct disturbances and therefore need a nominal model.
inline bool needs_model(PolicyMode m) { return m == PolicyMode::MAD || m == PolicyMode::MA || m == PolicyMode::DF; }
inline bool uses_magnitude(PolicyMode m) { return needs_model(m); }
inline bool uses_feedforward(PolicyMode m) { return m == PolicyMode::MAD || m == PolicyMode::AD; }
inline bool uses_direction(PolicyMode m) { return m == PolicyMode::MAD || m == PolicyMode::AD; }

struct PolicyShape {
    Eigen::Index state_dim = kCorridorStateDim;
    Eigen::Index input_dim = kCorridorInputDim;
    LruShape magnitude{8, kCorridorStateDim, kCorridorInputDim, 12, 16};
    LruShape feedforward{8, kCorridorStateDim, kCorridorInputDim, 12, 16};
    std::vector<Eigen::Index> direction_hidden{32};
    std::vector<Eigen::Index> mlp_hidden{32};
    double r_min = 0.4;
    double r_max = 0.9;
};

/// Default sizes per mode. MA and DF carry a single LRU, so it is widened
/// to keep the trainable-parameter budget comparable with MAD.
inline PolicyShape default_shape(PolicyMode m) {
    PolicyShape s;
    if (m == PolicyMode::MA || m == PolicyMode::DF) s.magnitude = LruShape{16, kCorridorStateDim, kCorridorInputDim, 24, 16};
    return s;
}

/// d = tanh(NN(x)) / sqrt(m); |d| <= 1 in the Euclidean norm.
inline Vec direction(const Mlp& psi, const Vec& x) {
    const Vec raw = psi(x);
    return raw.array().tanh().matrix() / std::sqrt(static_cast<double>(raw.size()));
}

class MadPolicy {
public:
    MadPolicy(PolicyMode mode, const PolicyShape& shape, std::optional<NominalModel> nominal, std::uint64_t seed)
        : mode_(mode), shape_(shape), nominal_(std::move(nominal)) {
        if (needs_model(mode_) && !nominal_)
            throw std::invalid_argument("MadPolicy: mode " + std::string(to_string(mode_)) +
                                        " reconstructs disturbances and cannot run without a nominal model");
        if (nominal_ && (nominal_->model.state_dim != shape_.state_dim || nominal_->model.input_dim != shape_.input_dim))
            throw std::invalid_argument("MadPolicy: nominal model dimensions do not match the policy");
        magnitude_ = lru_init(shape_.magnitude, shape_.r_min, shape_.r_max, seed);
        feedforward_ = lru_init(shape_.feedforward, shape_.r_min, shape_.r_max, seed + 1);
        check_lru_shape(shape_.magnitude);
        check_lru_shape(shape_.feedforward);
        direction_ = Mlp({shape_.state_dim, shape_.direction_hidden, shape_.input_dim});
        mlp_ = Mlp({shape_.state_dim, shape_.mlp_hidden, shape_.input_dim});
        std::mt19937_64 rng(seed + 2);
        direction_.init(rng);
        mlp_.init(rng);
        mlp_.params().block(2 * (mlp_.layers() - 1)) *= 0.1;
        reset(Vec::Zero(shape_.state_dim));
    }

    PolicyMode mode() const { return mode_; }
    const PolicyShape& shape() const { return shape_; }
    const std::optional<NominalModel>& nominal() const { return nominal_; }

    LruParams& magnitude() { return magnitude_; }
    const LruParams& magnitude() const { return magnitude_; }
    LruParams& feedforward() { return feedforward_; }
    const LruParams& feedforward() const { return feedforward_; }
    Mlp& direction_net() { return direction_; }
    const Mlp& direction_net() const { return direction_; }
    Mlp& mlp() { return mlp_; }
    const Mlp& mlp() const { return mlp_; }

    /// Parameter blocks the current mode actually uses, in a fixed order.
    std::vector<ParamVector*> trainable() {
        std::vector<ParamVector*> out;
        if (uses_magnitude(mode_)) out.push_back(&magnitude_.params());
        if (uses_feedforward(mode_)) out.push_back(&feedforward_.params());
        if (uses_direction(mode_)) out.push_back(&direction_.params());
        if (mode_ == PolicyMode::MLP) out.push_back(&mlp_.params());
        return out;
    }
    std::vector<const ParamVector*> trainable() const {
        std::vector<const ParamVector*> out;
        for (ParamVector* p : const_cast<MadPolicy*>(this)->trainable()) out.push_back(p);
        return out;
    }

    Eigen::Index parameter_count() const {
        Eigen::Index n = 0;
        for (const ParamVector* p : trainable()) n += p->size();
        return n;
    }

    /// Clears the LRU states and primes the feed-forward impulse with x0.
    void reset(const Vec& x0) {
        if (x0.size() != shape_.state_dim) throw std::invalid_argument("MadPolicy::reset: x0 dimension mismatch");
        x0_ = x0;
        t_ = 0;
        mag_state_ = LruState::zeros(shape_.magnitude.n_xi);
        ff_state_ = LruState::zeros(shape_.feedforward.n_xi);
        x_prev_ = Vec::Zero(shape_.state_dim);
        u_prev_ = Vec::Zero(shape_.input_dim);
        w_hat_ = Vec::Zero(shape_.state_dim);
        magnitude_term_ = Vec::Zero(shape_.input_dim);
    }

    /// One control step; t must equal the number of steps since reset.
    Vec act(const Vec& x, Eigen::Index t) {
        switch (mode_) {
            case PolicyMode::MAD: return mad_step(x, t);
            case PolicyMode::MA: return ma_step(x, t);
            case PolicyMode::DF: return df_step(x, t);
            case PolicyMode::AD: return ad_step(x, t);
            case PolicyMode::MLP: return mlp_step(x, t);
            case PolicyMode::BASE: return finish(x, Vec::Zero(shape_.input_dim));
        }
        throw std::logic_error("MadPolicy::act: bad mode");
    }

    /// Replace the stored previous input when the plant received something
    /// other than act()'s output (exploration noise).
    void set_applied_action(const Vec& u) {
        if (u.size() != shape_.input_dim) throw std::invalid_argument("set_applied_action: dimension mismatch");
        u_prev_ = u;
    }

    Vec mad_step(const Vec& x, Eigen::Index t) {
        begin(x, t);
        const Vec m = advance_magnitude(x);
        const Vec a = advance_feedforward();
        magnitude_term_ = m + a;
        const double mag = magnitude_term_.norm();
        return finish(x, mag * direction(direction_, x));
    }

    /// Direction taken from M itself with a = 0, which reproduces u = M(w_hat).
    Vec ma_step(const Vec& x, Eigen::Index t) {
        begin(x, t);
        const Vec m = advance_magnitude(x);
        magnitude_term_ = m;
        const double mag = m.norm();
        Vec d = Vec::Zero(m.size());
        if (mag != 0.0) d = m / mag;
        return finish(x, mag * d);
    }

    Vec df_step(const Vec& x, Eigen::Index t) {
        begin(x, t);
        magnitude_term_ = advance_magnitude(x);
        return finish(x, magnitude_term_);
    }

    Vec ad_step(const Vec& x, Eigen::Index t) {
        begin(x, t);
        magnitude_term_ = advance_feedforward();
        return finish(x, magnitude_term_.norm() * direction(direction_, x));
    }

    Vec mlp_step(const Vec& x, Eigen::Index t) {
        begin(x, t);
        return finish(x, mlp_(x));
    }

    // Introspection for training and property checks.
    Eigen::Index time() const { return t_; }
    const Vec& x0() const { return x0_; }
    /// w_hat used at the most recent step.
    const Vec& last_w_hat() const { return w_hat_; }
    /// M_t + a_t (or the mode's magnitude vector) at the most recent step.
    const Vec& last_magnitude_term() const { return magnitude_term_; }
    const LruState& magnitude_state() const { return mag_state_; }
    const LruState& feedforward_state() const { return ff_state_; }

    /// The internal state the next act() will use, appended to x_t:
    /// (x_t, Re/Im xi of each active LRU, w_hat_t when a model is used).
    /// Must be called before act(x_t, t) for that step.
    Vec augmented_state(const Vec& x) const {
        std::vector<const Vec*> parts{&x};
        if (uses_magnitude(mode_)) {
            parts.push_back(&mag_state_.re);
            parts.push_back(&mag_state_.im);
        }
        if (uses_feedforward(mode_)) {
            parts.push_back(&ff_state_.re);
            parts.push_back(&ff_state_.im);
        }
        Vec w_hat;
        if (needs_model(mode_)) {
            w_hat = peek_w_hat(x);
            parts.push_back(&w_hat);
        }
        Eigen::Index n = 0;
        for (const Vec* p : parts) n += p->size();
        Vec s(n);
        Eigen::Index off = 0;
        for (const Vec* p : parts) {
            s.segment(off, p->size()) = *p;
            off += p->size();
        }
        return s;
    }

    Eigen::Index augmented_dim() const {
        Eigen::Index n = shape_.state_dim;
        if (uses_magnitude(mode_)) n += 2 * shape_.magnitude.n_xi;
        if (uses_feedforward(mode_)) n += 2 * shape_.feedforward.n_xi;
        if (needs_model(mode_)) n += shape_.state_dim;
        return n;
    }

    /// w_hat the next step would reconstruct from x (x0 at t = 0).
    Vec peek_w_hat(const Vec& x) const {
        if (!nominal_) throw std::logic_error("peek_w_hat: no nominal model");
        if (t_ == 0) return x;
        return reconstruct_disturbance(*nominal_, x, x_prev_, u_prev_);
    }

private:
    static void check_lru_shape(const LruShape& s) {
        if (s.n_in <= 0 || s.n_out <= 0) throw std::invalid_argument("MadPolicy: bad LRU shape");
    }

    void begin(const Vec& x, Eigen::Index t) {
        if (x.size() != shape_.state_dim) throw std::invalid_argument("MadPolicy: state dimension mismatch");
        if (t != t_)
            throw std::invalid_argument("MadPolicy: step index " + std::to_string(t) + " does not follow " +
                                        std::to_string(t_) + " steps since reset");
    }

    Vec advance_magnitude(const Vec& x) {
        w_hat_ = peek_w_hat(x);
        auto [next, m] = lru_step(magnitude_, mag_state_, w_hat_);
        mag_state_ = std::move(next);
        return m;
    }

    Vec advance_feedforward() {
        const Vec v = (t_ == 0) ? x0_ : Vec::Zero(shape_.state_dim);
        auto [next, a] = lru_step(feedforward_, ff_state_, v);
        ff_state_ = std::move(next);
        return a;
    }

    Vec finish(const Vec& x, Vec u) {
        x_prev_ = x;
        u_prev_ = u;
        ++t_;
        return u;
    }

    PolicyMode mode_;
    PolicyShape shape_;
    std::optional<NominalModel> nominal_;
    LruParams magnitude_;
    LruParams feedforward_;
    Mlp direction_;
    Mlp mlp_;

    Vec x0_;
    Eigen::Index t_ = 0;
    LruState mag_state_;
    LruState ff_state_;
    Vec x_prev_;
    Vec u_prev_;
    Vec w_hat_;
    Vec magnitude_term_;
};

// ---------------------------------------------------------------------------
// Batched tape evaluation used by the trainer.

/// Per-sample inputs for a batch of B decision points. The windows end at
/// the decision step; entries before the start of an episode are zero, which
/// reproduces a zero initial LRU state exactly.
struct PolicyBatch {
    Mat x;                                          // state_dim x B
    std::shared_ptr<const std::vector<Mat>> w_hat;  // magnitude LRU inputs
    std::shared_ptr<const std::vector<Mat>> impulse;  // feed-forward LRU inputs
};

struct PolicyVars {
    std::vector<ad::Var> magnitude;
    std::vector<ad::Var> feedforward;
    std::vector<ad::Var> direction;
    std::vector<ad::Var> mlp;
};

inline PolicyVars bind_policy(ad::Tape& tape, const MadPolicy& p, bool differentiable) {
    auto b = [&](const ParamVector& pv) { return differentiable ? ad::bind(tape, pv) : ad::bind_constant(tape, pv); };
    PolicyVars v;
    const PolicyMode m = p.mode();
    if (uses_magnitude(m)) v.magnitude = b(p.magnitude().params());
    if (uses_feedforward(m)) v.feedforward = b(p.feedforward().params());
    if (uses_direction(m)) v.direction = b(p.direction_net().params());
    if (m == PolicyMode::MLP) v.mlp = b(p.mlp().params());
    return v;
}

/// Gradient of a tape built with bind_policy(..., true), flattened in the
/// same order as MadPolicy::trainable().
inline std::vector<Vec> gather_policy_grad(const ad::Tape& tape, const PolicyVars& vars, const MadPolicy& p) {
    std::vector<Vec> out;
    const PolicyMode m = p.mode();
    if (uses_magnitude(m)) out.push_back(ad::gather_grad(tape, vars.magnitude, p.magnitude().params()));
    if (uses_feedforward(m)) out.push_back(ad::gather_grad(tape, vars.feedforward, p.feedforward().params()));
    if (uses_direction(m)) out.push_back(ad::gather_grad(tape, vars.direction, p.direction_net().params()));
    if (m == PolicyMode::MLP) out.push_back(ad::gather_grad(tape, vars.mlp, p.mlp().params()));
    return out;
}

inline ad::Var direction_batch(const Mlp& psi, std::span<const ad::Var> vars, ad::Var x) {
    const ad::Var raw = psi.forward(x, vars);
    const double m = static_cast<double>(psi.shape().out);
    return ad::scale(ad::tanh(raw), 1.0 / std::sqrt(m));
}

/// Batched actions u (input_dim x B) on the tape.
inline ad::Var policy_forward_batch(ad::Tape& tape, const MadPolicy& p, const PolicyVars& vars,
                                    const PolicyBatch& batch) {
    const ad::Var x = tape.constant(batch.x);
    switch (p.mode()) {
        case PolicyMode::MAD: {
            const ad::Var m = ad_ops::lru_window_output(p.magnitude(), vars.magnitude, batch.w_hat);
            const ad::Var a = ad_ops::lru_window_output(p.feedforward(), vars.feedforward, batch.impulse);
            return ad::mul_row(direction_batch(p.direction_net(), vars.direction, x), ad::col_norm(m + a));
        }
        case PolicyMode::MA:
        case PolicyMode::DF:
            // |M| * M / |M| = M wherever M != 0.
            return ad_ops::lru_window_output(p.magnitude(), vars.magnitude, batch.w_hat);
        case PolicyMode::AD: {
            const ad::Var a = ad_ops::lru_window_output(p.feedforward(), vars.feedforward, batch.impulse);
            return ad::mul_row(direction_batch(p.direction_net(), vars.direction, x), ad::col_norm(a));
        }
        case PolicyMode::MLP: return p.mlp().forward(x, vars.mlp);
        case PolicyMode::BASE: return tape.constant(Mat::Zero(p.shape().input_dim, batch.x.cols()));
    }
    throw std::logic_error("policy_forward_batch: bad mode");
}

}  // namespace madrl
