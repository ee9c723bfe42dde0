#pragma once

// Discrete-time plants x_t = f(x_{t-1}, u_{t-1}) + w_t, the two-vehicle
// corridor dynamics with drag and a proportional base controller, and
// disturbance reconstruction against a nominal model.

#include "madrl/signals.hpp"

#include <Eigen/Dense>

#include <array>
#include <concepts>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

namespace madrl {

/// Raised when a plant step produces NaN or Inf. Instability is reported,
/// never clamped.
class NonFiniteState : public std::runtime_error {
public:
    NonFiniteState(const std::string& what, Eigen::Index t) : std::runtime_error(what), time_(t) {}
    Eigen::Index time() const { return time_; }

private:
    Eigen::Index time_;
};

/// Type-erased plant map f. Pure: calling f never mutates the plant.
struct Plant {
    std::string name;
    Eigen::Index state_dim = 0;
    Eigen::Index input_dim = 0;
    std::function<Vec(const Vec& x, const Vec& u)> f;
    /// State the unforced, undisturbed plant rests at.
    Vec equilibrium;
};

struct VehicleParams {
    double mass = 1.0;
    double b1 = 1.0;
    double b2 = 0.5;
    Eigen::Vector2d gains{1.0, 1.0};
    Eigen::Vector2d target{0.0, 0.0};
};

struct CorridorParams {
    std::array<VehicleParams, 2> vehicles;
    double Ts = 0.05;

    void validate() const {
        if (!(Ts > 0.0)) throw std::invalid_argument("CorridorParams: Ts must be positive");
        for (const auto& v : vehicles) {
            if (!(v.mass > 0.0)) throw std::invalid_argument("CorridorParams: mass must be positive");
            if (!(v.b2 > 0.0 && v.b2 < v.b1)) throw std::invalid_argument("CorridorParams: need 0 < b2 < b1");
            if (!(v.gains.minCoeff() > 0.0)) throw std::invalid_argument("CorridorParams: gains must be positive");
        }
    }

    /// x = (p1, q1, p2, q2) at the targets with zero velocity.
    Vec equilibrium() const {
        Vec x = Vec::Zero(8);
        x.segment<2>(0) = vehicles[0].target;
        x.segment<2>(4) = vehicles[1].target;
        return x;
    }
};

inline constexpr Eigen::Index kCorridorStateDim = 8;
inline constexpr Eigen::Index kCorridorInputDim = 4;

/// C(s) = b1 s - b2 tanh(s), componentwise.
inline Eigen::Vector2d drag(const VehicleParams& v, const Eigen::Vector2d& speed) {
    return v.b1 * speed - v.b2 * speed.array().tanh().matrix();
}

/// Undisturbed corridor map f(x, u) with total force F = K'(p_bar - p) + u.
inline Vec corridor_dynamics(const CorridorParams& params, const Vec& x, const Vec& u) {
    if (x.size() != kCorridorStateDim || u.size() != kCorridorInputDim)
        throw std::invalid_argument("corridor_dynamics: expected x in R^8 and u in R^4");
    Vec next(kCorridorStateDim);
    for (int i = 0; i < 2; ++i) {
        const VehicleParams& v = params.vehicles[i];
        const Eigen::Vector2d p = x.segment<2>(4 * i);
        const Eigen::Vector2d q = x.segment<2>(4 * i + 2);
        const Eigen::Vector2d force = v.gains.cwiseProduct(v.target - p) + u.segment<2>(2 * i);
        next.segment<2>(4 * i) = p + params.Ts * q;
        next.segment<2>(4 * i + 2) = q + params.Ts * (force - drag(v, q)) / v.mass;
    }
    return next;
}

inline Plant corridor_plant(const CorridorParams& params) {
    params.validate();
    return Plant{"corridor", kCorridorStateDim, kCorridorInputDim,
                 [params](const Vec& x, const Vec& u) { return corridor_dynamics(params, x, u); },
                 params.equilibrium()};
}

/// x_t = a x_{t-1} + b u_{t-1} + w_t, scalar state and input.
inline Plant scalar_linear_plant(double a, double b) {
    return Plant{"scalar_linear", 1, 1,
                 [a, b](const Vec& x, const Vec& u) {
                     Vec next(1);
                     next[0] = a * x[0] + b * u[0];
                     return next;
                 },
                 Vec::Zero(1)};
}

/// The model used for disturbance reconstruction. gamma_delta is the declared
/// gain bound of the mismatch F - F_hat (0 for an exact model, infinity when
/// no model is available).
struct NominalModel {
    Plant model;
    double gamma_delta = 0.0;
};

inline NominalModel exact_model(const Plant& plant) { return NominalModel{plant, 0.0}; }

/// x_t = f(x_{t-1}, u_{t-1}) + w_t.
inline Vec step(const Plant& plant, const Vec& x_prev, const Vec& u_prev, const Vec& w) {
    if (x_prev.size() != plant.state_dim || u_prev.size() != plant.input_dim || w.size() != plant.state_dim)
        throw std::invalid_argument("step: dimension mismatch for plant " + plant.name);
    Vec next = plant.f(x_prev, u_prev) + w;
    if (!next.allFinite()) throw NonFiniteState("step: non-finite state in plant " + plant.name, -1);
    return next;
}

/// w_hat_t = x_t - f_hat(x_{t-1}, u_{t-1}).
inline Vec reconstruct_disturbance(const NominalModel& nominal, const Vec& x_t, const Vec& x_prev,
                                   const Vec& u_prev) {
    if (x_t.size() != nominal.model.state_dim || x_prev.size() != nominal.model.state_dim ||
        u_prev.size() != nominal.model.input_dim)
        throw std::invalid_argument("reconstruct_disturbance: dimension mismatch");
    return x_t - nominal.model.f(x_prev, u_prev);
}

struct Trajectory {
    Signal x;
    Signal u;
};

/// A per-step action map: reset(x0) at the start of an episode, then
/// act(x_t, t) once per step in time order.
template <class P>
concept StepPolicy = requires(P p, const Vec& x, Eigen::Index t) {
    p.reset(x);
    { p.act(x, t) } -> std::convertible_to<Vec>;
};

/// Closed-loop simulation over t = 0..T. The disturbance signal carries the
/// initial condition in its first sample, w = (x0, w_1, w_2, ...).
template <StepPolicy P>
Trajectory rollout(const Plant& plant, P& policy, const Signal& w, Eigen::Index T) {
    if (w.dim() != plant.state_dim) throw std::invalid_argument("rollout: disturbance dimension mismatch");
    if (w.horizon() < T) throw std::invalid_argument("rollout: disturbance shorter than horizon");
    Trajectory tr{Signal(plant.state_dim, T), Signal(plant.input_dim, T)};
    Vec x = w.at(0);
    policy.reset(x);
    for (Eigen::Index t = 0; t <= T; ++t) {
        Vec u = policy.act(x, t);
        if (u.size() != plant.input_dim) throw std::invalid_argument("rollout: policy returned wrong input size");
        if (!u.allFinite()) throw NonFiniteState("rollout: non-finite input", t);
        tr.x.at(t) = x;
        tr.u.at(t) = u;
        if (t == T) break;
        Vec next = plant.f(x, u) + w.at(t + 1);
        if (!next.allFinite())
            throw NonFiniteState("rollout: non-finite state at t=" + std::to_string(t + 1) + " in plant " +
                                     plant.name,
                                 t + 1);
        x = std::move(next);
    }
    return tr;
}

template <StepPolicy P>
Trajectory rollout(const Plant& plant, P& policy, const Vec& x0, const Signal& w, Eigen::Index T) {
    Signal full = w;
    full.at(0) = x0;
    return rollout(plant, policy, full, T);
}

/// u = 0: the plant runs on its embedded base controller alone.
struct ZeroPolicy {
    Eigen::Index input_dim = 0;
    void reset(const Vec&) {}
    Vec act(const Vec&, Eigen::Index) const { return Vec::Zero(input_dim); }
};

/// Memoryless state feedback u_t = k(x_t).
struct FeedbackPolicy {
    std::function<Vec(const Vec&)> law;
    void reset(const Vec&) {}
    Vec act(const Vec& x, Eigen::Index) const { return law(x); }
};

}  // namespace madrl
