#pragma once

// Linear recurrent units: a diagonal complex recursion whose eigenvalues are
// parameterized to lie strictly inside the unit disc, followed by a nonlinear
// output head.
//
//   xi_{t+1} = Lambda xi_t + Gamma(Lambda) B v_t
//   y_t      = head(Re(C xi_t) + D v_t) + F v_t
//
// with lambda_i = exp(-exp(nu_i) + i theta_i), Gamma = diag(sqrt(1 - |lambda_i|^2))
// and head(z) = W2 (tanh(W1 z + b1) - tanh(b1)). The head vanishes at zero,
// so zero input maps to zero output and the whole operator is lp-stable.
// Complex quantities are stored as separate real and imaginary parts.

#include "madrl/autodiff.hpp"
#include "madrl/param_vector.hpp"
#include "madrl/signals.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace madrl {

struct LruShape {
    Eigen::Index n_xi = 8;
    Eigen::Index n_in = 1;
    Eigen::Index n_out = 1;
    Eigen::Index head_in = 1;     // rows of C and D
    Eigen::Index head_width = 16; // 0 selects the identity head (head_in == n_out)

    bool operator==(const LruShape&) const = default;
};

class LruParams {
public:
    enum Block : std::size_t { kNu, kTheta, kBRe, kBIm, kCRe, kCIm, kD, kF, kW1, kB1, kW2 };

    LruParams() = default;

    explicit LruParams(const LruShape& shape) : shape_(shape) {
        if (shape.n_xi <= 0 || shape.n_in <= 0 || shape.n_out <= 0 || shape.head_in <= 0 || shape.head_width < 0)
            throw std::invalid_argument("LruParams: sizes must be positive");
        if (shape.head_width == 0 && shape.head_in != shape.n_out)
            throw std::invalid_argument("LruParams: identity head needs head_in == n_out");
        params_.add("nu", shape.n_xi, 1);
        params_.add("theta", shape.n_xi, 1);
        params_.add("B_re", shape.n_xi, shape.n_in);
        params_.add("B_im", shape.n_xi, shape.n_in);
        params_.add("C_re", shape.head_in, shape.n_xi);
        params_.add("C_im", shape.head_in, shape.n_xi);
        params_.add("D", shape.head_in, shape.n_in);
        params_.add("F", shape.n_out, shape.n_in);
        if (shape.head_width > 0) {
            params_.add("head_W1", shape.head_width, shape.head_in);
            params_.add("head_b1", shape.head_width, 1);
            params_.add("head_W2", shape.n_out, shape.head_width);
        }
    }

    const LruShape& shape() const { return shape_; }
    bool identity_head() const { return shape_.head_width == 0; }

    ParamVector& params() { return params_; }
    const ParamVector& params() const { return params_; }

    ParamVector::MatMap block(Block b) { return params_.block(static_cast<std::size_t>(b)); }
    ParamVector::ConstMatMap block(Block b) const { return params_.block(static_cast<std::size_t>(b)); }

    /// |lambda_i| = exp(-exp(nu_i)).
    Vec magnitudes() const { return (-block(kNu).col(0).array().exp()).exp().matrix(); }

    /// sqrt(1 - |lambda_i|^2), computed as sqrt(-expm1(-2 exp(nu))) for accuracy near |lambda| = 1.
    Vec normalizer() const {
        const auto nu = block(kNu).col(0);
        Vec g(nu.size());
        for (Eigen::Index i = 0; i < nu.size(); ++i) g[i] = std::sqrt(-std::expm1(-2.0 * std::exp(nu[i])));
        return g;
    }

    Vec lambda_re() const { return magnitudes().cwiseProduct(block(kTheta).col(0).array().cos().matrix()); }
    Vec lambda_im() const { return magnitudes().cwiseProduct(block(kTheta).col(0).array().sin().matrix()); }

    bool operator==(const LruParams& o) const { return shape_ == o.shape_ && params_ == o.params_; }

private:
    LruShape shape_;
    ParamVector params_;
};

struct LruState {
    Vec re;
    Vec im;

    static LruState zeros(Eigen::Index n) { return {Vec::Zero(n), Vec::Zero(n)}; }
};

/// Eigenvalue magnitudes uniform in [r_min, r_max], phases uniform in [0, 2 pi).
/// B and C follow the usual 1/sqrt(fan-in) complex scaling; D, F and the head's
/// output layer start small (init_scale).
inline LruParams lru_init(const LruShape& shape, double r_min, double r_max, std::uint64_t seed,
                          double init_scale = 0.1) {
    if (!(r_min >= 0.0 && r_min < r_max && r_max < 1.0))
        throw std::invalid_argument("lru_init: need 0 <= r_min < r_max < 1");
    LruParams p(shape);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> radius(r_min, r_max);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::normal_distribution<double> normal(0.0, 1.0);

    auto nu = p.block(LruParams::kNu);
    auto theta = p.block(LruParams::kTheta);
    for (Eigen::Index i = 0; i < shape.n_xi; ++i) {
        const double r = std::max(radius(rng), 1e-12);
        nu(i, 0) = std::log(-std::log(r));
        theta(i, 0) = phase(rng);
    }
    auto fill = [&](ParamVector::MatMap m, double sd) {
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = sd * normal(rng);
    };
    const double b_sd = 1.0 / std::sqrt(2.0 * static_cast<double>(shape.n_in));
    const double c_sd = 1.0 / std::sqrt(2.0 * static_cast<double>(shape.n_xi));
    fill(p.block(LruParams::kBRe), b_sd);
    fill(p.block(LruParams::kBIm), b_sd);
    fill(p.block(LruParams::kCRe), c_sd);
    fill(p.block(LruParams::kCIm), c_sd);
    fill(p.block(LruParams::kD), init_scale / std::sqrt(static_cast<double>(shape.n_in)));
    fill(p.block(LruParams::kF), init_scale / std::sqrt(static_cast<double>(shape.n_in)));
    if (!p.identity_head()) {
        fill(p.block(LruParams::kW1), 1.0 / std::sqrt(static_cast<double>(shape.head_in)));
        fill(p.block(LruParams::kB1), 0.1);
        fill(p.block(LruParams::kW2), init_scale / std::sqrt(static_cast<double>(shape.head_width)));
    }
    return p;
}

/// max_i |lambda_i|; strictly below one for every finite nu.
inline double stability_margin(const LruParams& p) { return p.magnitudes().maxCoeff(); }

namespace detail {

inline Mat lru_head(const LruParams& p, const Mat& z) {
    if (p.identity_head()) return z;
    Mat h = p.block(LruParams::kW1) * z;
    const Vec b1 = p.block(LruParams::kB1).col(0);
    h.colwise() += b1;
    h = h.array().tanh().matrix();
    h.colwise() -= Vec(b1.array().tanh().matrix());
    return p.block(LruParams::kW2) * h;
}

}  // namespace detail

/// One step: returns (xi_{t+1}, y_t) from (xi_t, v_t).
inline std::pair<LruState, Vec> lru_step(const LruParams& p, const LruState& s, const Vec& v) {
    const auto& sh = p.shape();
    if (v.size() != sh.n_in || s.re.size() != sh.n_xi || s.im.size() != sh.n_xi)
        throw std::invalid_argument("lru_step: dimension mismatch");
    const Vec z = p.block(LruParams::kCRe) * s.re - p.block(LruParams::kCIm) * s.im + p.block(LruParams::kD) * v;
    Vec y = detail::lru_head(p, z).col(0) + p.block(LruParams::kF) * v;

    const Vec lr = p.lambda_re();
    const Vec li = p.lambda_im();
    const Vec g = p.normalizer();
    LruState next;
    next.re = lr.cwiseProduct(s.re) - li.cwiseProduct(s.im) + g.cwiseProduct(p.block(LruParams::kBRe) * v);
    next.im = lr.cwiseProduct(s.im) + li.cwiseProduct(s.re) + g.cwiseProduct(p.block(LruParams::kBIm) * v);
    return {std::move(next), std::move(y)};
}

/// Folds lru_step over v from xi_0 = 0. Output has the same length as v.
inline Signal run_lru(const LruParams& p, const Signal& v) {
    Signal y(p.shape().n_out, v.horizon());
    LruState s = LruState::zeros(p.shape().n_xi);
    for (Eigen::Index t = 0; t < v.length(); ++t) {
        auto [next, out] = lru_step(p, s, Vec(v.at(t)));
        y.at(t) = out;
        s = std::move(next);
    }
    return y;
}

/// The state trajectory xi_0..xi_T of the linear core (pre-head), stacked
/// as [re; im]. Used to check superposition.
inline Signal run_lru_states(const LruParams& p, const Signal& v) {
    const Eigen::Index n = p.shape().n_xi;
    Signal xs(2 * n, v.horizon());
    LruState s = LruState::zeros(n);
    for (Eigen::Index t = 0; t < v.length(); ++t) {
        xs.at(t).head(n) = s.re;
        xs.at(t).tail(n) = s.im;
        s = lru_step(p, s, Vec(v.at(t))).first;
    }
    return xs;
}

/// max over probes of ||op(w)||_p / ||w||_p. Only a lower bound on the true
/// lp gain of op.
template <class Op>
double estimate_gain(Op&& op, std::span<const Signal> probes, double p) {
    if (probes.empty()) throw std::invalid_argument("estimate_gain: no probes");
    double best = 0.0;
    for (const Signal& w : probes) {
        const double in = lp_norm(w, p);
        if (in == 0.0) throw std::invalid_argument("estimate_gain: zero-norm probe");
        best = std::max(best, lp_norm(op(w), p) / in);
    }
    return best;
}

/// Scales F and the head's output layer by c, scaling every output by c.
inline LruParams rescale_output(const LruParams& p, double c) {
    if (!(c >= 0.0)) throw std::invalid_argument("rescale_output: factor must be nonnegative");
    LruParams out = p;
    out.block(LruParams::kF) *= c;
    if (out.identity_head()) {
        // The identity head cannot be scaled on its own; fold c into C and D.
        out.block(LruParams::kCRe) *= c;
        out.block(LruParams::kCIm) *= c;
        out.block(LruParams::kD) *= c;
    } else {
        out.block(LruParams::kW2) *= c;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tape versions for batched training.

namespace ad_ops {

/// Runs the linear core over a window of batched inputs window[0..W-1]
/// (each n_in x B) from a zero state and returns the state paired with the
/// last input, stacked [re; im] (2 n_xi x B). Backward is hand-written
/// backpropagation through the recursion.
inline ad::Var lru_scan(ad::Var nu, ad::Var theta, ad::Var b_re, ad::Var b_im,
                        std::shared_ptr<const std::vector<Mat>> window) {
    ad::Tape& tape = *nu.tape;
    const Vec nu_v = tape.value(nu).col(0);
    const Vec th_v = tape.value(theta).col(0);
    const Eigen::Index n = nu_v.size();
    const auto& V = *window;
    if (V.empty()) throw std::invalid_argument("lru_scan: empty window");
    const Eigen::Index B = V.front().cols();

    const Vec e = nu_v.array().exp().matrix();
    const Vec r = (-e.array()).exp().matrix();
    const Vec c = r.cwiseProduct(th_v.array().cos().matrix());
    const Vec d = r.cwiseProduct(th_v.array().sin().matrix());
    Vec g(n);
    for (Eigen::Index i = 0; i < n; ++i) g[i] = std::sqrt(-std::expm1(-2.0 * e[i]));

    const Mat& Bre = tape.value(b_re);
    const Mat& Bim = tape.value(b_im);
    const Eigen::Index W = static_cast<Eigen::Index>(V.size());

    std::vector<char> active(W, 0);
    for (Eigen::Index j = 0; j + 1 < W; ++j) active[j] = V[j].isZero(0.0) ? 0 : 1;

    // states[j] is xi_j for j = 0..W-1.
    auto states_re = std::make_shared<std::vector<Mat>>(W, Mat::Zero(n, B));
    auto states_im = std::make_shared<std::vector<Mat>>(W, Mat::Zero(n, B));
    for (Eigen::Index j = 0; j + 1 < W; ++j) {
        const Mat& sr = (*states_re)[j];
        const Mat& si = (*states_im)[j];
        Mat nr = c.asDiagonal() * sr - d.asDiagonal() * si;
        Mat ni = c.asDiagonal() * si + d.asDiagonal() * sr;
        if (active[j]) {
            nr += g.asDiagonal() * (Bre * V[j]);
            ni += g.asDiagonal() * (Bim * V[j]);
        }
        (*states_re)[j + 1] = std::move(nr);
        (*states_im)[j + 1] = std::move(ni);
    }
    Mat out(2 * n, B);
    out.topRows(n) = (*states_re)[W - 1];
    out.bottomRows(n) = (*states_im)[W - 1];

    const bool needs = tape.needs_grad(nu) || tape.needs_grad(theta) || tape.needs_grad(b_re) || tape.needs_grad(b_im);
    return tape.push(
        std::move(out),
        [nu, theta, b_re, b_im, window, states_re, states_im, active, e, r, c, d, g, n, W](ad::Tape& tp,
                                                                                          const Mat& grad_out) {
            const auto& V = *window;
            Mat Gr = grad_out.topRows(n);
            Mat Gi = grad_out.bottomRows(n);
            Vec gc = Vec::Zero(n), gd = Vec::Zero(n), gg = Vec::Zero(n);
            const Mat& Br = tp.value(b_re);
            const Mat& Bi = tp.value(b_im);
            Mat gBre = Mat::Zero(Br.rows(), Br.cols());
            Mat gBim = Mat::Zero(Bi.rows(), Bi.cols());
            for (Eigen::Index j = W - 2; j >= 0; --j) {
                const Mat& sr = (*states_re)[j];
                const Mat& si = (*states_im)[j];
                if (active[j]) {
                    const Mat ur = Br * V[j];
                    const Mat ui = Bi * V[j];
                    gg += (Gr.cwiseProduct(ur) + Gi.cwiseProduct(ui)).rowwise().sum();
                    gBre += (g.asDiagonal() * Gr) * V[j].transpose();
                    gBim += (g.asDiagonal() * Gi) * V[j].transpose();
                }
                gc += (Gr.cwiseProduct(sr) + Gi.cwiseProduct(si)).rowwise().sum();
                gd += (Gi.cwiseProduct(sr) - Gr.cwiseProduct(si)).rowwise().sum();
                Mat nGr = c.asDiagonal() * Gr + d.asDiagonal() * Gi;
                Mat nGi = c.asDiagonal() * Gi - d.asDiagonal() * Gr;
                Gr = std::move(nGr);
                Gi = std::move(nGi);
            }
            // c = r cos(theta), d = r sin(theta), r = exp(-exp(nu)), g = sqrt(1 - r^2).
            Vec gnu = Vec::Zero(n), gth = Vec::Zero(n);
            for (Eigen::Index i = 0; i < n; ++i) {
                gnu[i] = -e[i] * (gc[i] * c[i] + gd[i] * d[i]);
                if (g[i] > 0.0) gnu[i] += gg[i] * r[i] * r[i] * e[i] / g[i];
                gth[i] = -gc[i] * d[i] + gd[i] * c[i];
            }
            tp.accumulate(nu, gnu);
            tp.accumulate(theta, gth);
            tp.accumulate(b_re, gBre);
            tp.accumulate(b_im, gBim);
        },
        needs);
}

/// Batched LRU output at the last step of the window. vars come from
/// ad::bind(tape, p.params()) (or bind_constant for inference).
inline ad::Var lru_window_output(const LruParams& p, std::span<const ad::Var> vars,
                                 std::shared_ptr<const std::vector<Mat>> window) {
    ad::Tape& tape = *vars[0].tape;
    const Eigen::Index n = p.shape().n_xi;
    const ad::Var xi = lru_scan(vars[LruParams::kNu], vars[LruParams::kTheta], vars[LruParams::kBRe],
                                vars[LruParams::kBIm], window);
    const ad::Var v_last = tape.constant(window->back());
    ad::Var z = ad::matmul(vars[LruParams::kCRe], ad::rows(xi, 0, n)) -
                ad::matmul(vars[LruParams::kCIm], ad::rows(xi, n, n)) +
                ad::matmul(vars[LruParams::kD], v_last);
    ad::Var head = z;
    if (!p.identity_head()) {
        const ad::Var b1 = vars[LruParams::kB1];
        const ad::Var h = ad::sub_col(ad::tanh(ad::add_col(ad::matmul(vars[LruParams::kW1], z), b1)), ad::tanh(b1));
        head = ad::matmul(vars[LruParams::kW2], h);
    }
    return head + ad::matmul(vars[LruParams::kF], v_last);
}

}  // namespace ad_ops

}  // namespace madrl
