#pragma once

// DDPG for MAD-family policies: replay buffer of memory-augmented
// transitions, a Q critic with a target copy, deterministic policy-gradient
// actor updates and soft target tracking.
//
// LRU-carrying actors are differentiated by replaying the recorded
// disturbance window of each sampled transition from the start of its
// episode, so the actor gradient flows through the whole recursion.

#include "madrl/autodiff.hpp"
#include "madrl/corridor_env.hpp"
#include "madrl/mlp.hpp"
#include "madrl/param_vector.hpp"
#include "madrl/plant.hpp"
#include "madrl/policies.hpp"
#include "madrl/stable_ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace madrl {

struct Transition {
    Vec s;
    Vec u;
    double r = 0.0;
    Vec s_next;
    bool done = false;
    /// Where the transition came from, for window replay.
    std::size_t episode = 0;
    Eigen::Index t = 0;
};

/// Fixed-capacity FIFO ring with uniform sampling over the filled part.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
        if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
        data_.reserve(std::min<std::size_t>(capacity, 4096));
    }

    void push(Transition tr) {
        if (data_.size() < capacity_) {
            data_.push_back(std::move(tr));
        } else {
            data_[head_] = std::move(tr);
            head_ = (head_ + 1) % capacity_;
        }
        ++pushed_;
    }

    std::size_t size() const { return data_.size(); }
    std::size_t capacity() const { return capacity_; }
    bool empty() const { return data_.empty(); }
    std::uint64_t total_pushed() const { return pushed_; }

    /// i = 0 is the oldest stored transition.
    const Transition& at(std::size_t i) const {
        if (i >= data_.size()) throw std::out_of_range("ReplayBuffer::at");
        return data_[(head_ + i) % data_.size()];
    }

    template <class Rng>
    std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const {
        if (data_.empty()) throw std::logic_error("ReplayBuffer: sampling from an empty buffer");
        std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
        std::vector<std::size_t> out(n);
        for (auto& i : out) i = pick(rng);
        return out;
    }

private:
    std::size_t capacity_;
    std::vector<Transition> data_;
    std::size_t head_ = 0;
    std::uint64_t pushed_ = 0;
};

/// Per-episode inputs of the policy's LRUs: x0 and the reconstructed
/// disturbances w_hat_0..w_hat_T.
struct EpisodeRecord {
    Vec x0;
    Mat w_hat;
};

class EpisodeStore {
public:
    void put(std::size_t episode, EpisodeRecord rec) { data_[episode] = std::move(rec); }
    const EpisodeRecord& get(std::size_t episode) const {
        auto it = data_.find(episode);
        if (it == data_.end()) throw std::out_of_range("EpisodeStore: episode " + std::to_string(episode) + " evicted");
        return it->second;
    }
    /// Drops episodes older than `oldest`.
    void prune(std::size_t oldest) { data_.erase(data_.begin(), data_.lower_bound(oldest)); }
    std::size_t size() const { return data_.size(); }

private:
    std::map<std::size_t, EpisodeRecord> data_;
};

/// Adam (default) or plain gradient descent on one ParamVector.
class Optimizer {
public:
    enum class Kind { Adam, Sgd };

    Optimizer() = default;
    Optimizer(Kind kind, double lr, Eigen::Index n) : kind_(kind), lr_(lr), m_(Vec::Zero(n)), v_(Vec::Zero(n)) {}

    static Kind parse(const std::string& s) {
        if (s == "adam") return Kind::Adam;
        if (s == "sgd") return Kind::Sgd;
        throw std::invalid_argument("unknown optimizer '" + s + "' (expected adam|sgd)");
    }

    /// Descent step p -= lr * direction(g).
    void step(ParamVector& p, const Vec& g) {
        if (g.size() != p.size() || g.size() != m_.size()) throw std::invalid_argument("Optimizer: size mismatch");
        if (kind_ == Kind::Sgd) {
            p.flat() -= lr_ * g;
            return;
        }
        ++t_;
        m_ = beta1_ * m_ + (1.0 - beta1_) * g;
        v_ = beta2_ * v_ + (1.0 - beta2_) * g.cwiseAbs2();
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        p.flat().array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
    }

    double lr() const { return lr_; }

private:
    Kind kind_ = Kind::Adam;
    double lr_ = 1e-3;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    Vec m_, v_;
    std::uint64_t t_ = 0;
};

/// target <- (1 - tau) target + tau source.
inline void soft_update(ParamVector& target, const ParamVector& source, double tau) {
    if (!target.same_layout(source)) throw std::invalid_argument("soft_update: layout mismatch");
    if (tau == 1.0) {
        target.flat() = source.flat();
        return;
    }
    if (tau == 0.0) return;
    target.flat() = (1.0 - tau) * target.flat() + tau * source.flat();
}

inline void soft_update(MadPolicy& target, const MadPolicy& source, double tau) {
    soft_update(target.magnitude().params(), source.magnitude().params(), tau);
    soft_update(target.feedforward().params(), source.feedforward().params(), tau);
    soft_update(target.direction_net().params(), source.direction_net().params(), tau);
    soft_update(target.mlp().params(), source.mlp().params(), tau);
}

/// u + N(0, sigma^2 I).
template <class Rng>
Vec explore(const Vec& u, double sigma, Rng& rng) {
    if (sigma < 0.0) throw std::invalid_argument("explore: sigma must be nonnegative");
    if (sigma == 0.0) return u;
    std::normal_distribution<double> n(0.0, sigma);
    Vec out = u;
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] += n(rng);
    return out;
}

/// Q(s, u) as an MLP on the stacked (s, u), with a target copy.
struct Critic {
    Mlp net;
    Mlp target;

    Critic() = default;
    template <class Rng>
    Critic(Eigen::Index state_dim, Eigen::Index input_dim, const std::vector<Eigen::Index>& hidden, Rng& rng)
        : net(MlpShape{state_dim + input_dim, hidden, 1}) {
        net.init(rng);
        target = net;
    }

    Eigen::Index state_dim() const { return net.shape().in; }

    double q(const Vec& s, const Vec& u) const {
        Vec su(s.size() + u.size());
        su << s, u;
        return net(su)[0];
    }
};

/// Everything a sampled minibatch needs: critic inputs plus the LRU input
/// windows for the current and next decision points.
struct TrainingBatch {
    Mat s, u, s_next;
    Mat r;     // 1 x B
    Mat live;  // 1 x B, 1 - done
    PolicyBatch now;
    PolicyBatch next;

    Eigen::Index size() const { return s.cols(); }
};

namespace detail {

inline PolicyBatch window_batch(const EpisodeStore& store, const std::vector<std::size_t>& episodes,
                                const std::vector<Eigen::Index>& times, const Mat& x, Eigen::Index max_window,
                                Eigen::Index state_dim, bool model_inputs, bool impulse_inputs) {
    PolicyBatch pb;
    pb.x = x;
    const Eigen::Index B = x.cols();
    if (!model_inputs && !impulse_inputs) return pb;
    Eigen::Index longest = 1;
    for (Eigen::Index t : times) longest = std::max(longest, t + 1);
    const Eigen::Index L = max_window > 0 ? std::min(max_window, longest) : longest;
    auto wh = std::make_shared<std::vector<Mat>>(model_inputs ? L : 0, Mat::Zero(state_dim, B));
    auto imp = std::make_shared<std::vector<Mat>>(impulse_inputs ? L : 0, Mat::Zero(state_dim, B));
    for (Eigen::Index k = 0; k < B; ++k) {
        const EpisodeRecord& rec = store.get(episodes[k]);
        const Eigen::Index t_end = times[k];
        for (Eigen::Index j = 0; j < L; ++j) {
            const Eigen::Index tau = t_end - (L - 1) + j;
            if (tau < 0) continue;
            if (model_inputs) (*wh)[j].col(k) = rec.w_hat.col(tau);
            if (impulse_inputs && tau == 0) (*imp)[j].col(k) = rec.x0;
        }
    }
    pb.w_hat = std::move(wh);
    pb.impulse = std::move(imp);
    return pb;
}

}  // namespace detail

/// Gathers transitions and their replay windows. max_window = 0 replays
/// from the start of every episode.
inline TrainingBatch make_batch(const ReplayBuffer& buffer, const EpisodeStore& store,
                                const std::vector<std::size_t>& indices, const MadPolicy& policy,
                                Eigen::Index max_window = 0) {
    if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
    const Eigen::Index B = static_cast<Eigen::Index>(indices.size());
    const Transition& first = buffer.at(indices[0]);
    const Eigen::Index ns = first.s.size(), nu = first.u.size();
    const Eigen::Index nx = policy.shape().state_dim;
    TrainingBatch b;
    b.s.resize(ns, B);
    b.u.resize(nu, B);
    b.s_next.resize(ns, B);
    b.r.resize(1, B);
    b.live.resize(1, B);
    std::vector<std::size_t> eps(B);
    std::vector<Eigen::Index> t_now(B), t_next(B);
    for (Eigen::Index k = 0; k < B; ++k) {
        const Transition& tr = buffer.at(indices[k]);
        b.s.col(k) = tr.s;
        b.u.col(k) = tr.u;
        b.s_next.col(k) = tr.s_next;
        b.r(0, k) = tr.r;
        b.live(0, k) = tr.done ? 0.0 : 1.0;
        eps[k] = tr.episode;
        t_now[k] = tr.t;
        t_next[k] = tr.done ? tr.t : tr.t + 1;
    }
    const PolicyMode m = policy.mode();
    b.now = detail::window_batch(store, eps, t_now, b.s.topRows(nx), max_window, nx, uses_magnitude(m),
                                 uses_feedforward(m));
    b.next = detail::window_batch(store, eps, t_next, b.s_next.topRows(nx), max_window, nx, uses_magnitude(m),
                                  uses_feedforward(m));
    return b;
}

/// Actions of `policy` on a batch, no gradient.
inline Mat policy_actions(const MadPolicy& policy, const PolicyBatch& batch) {
    ad::Tape tape;
    const PolicyVars vars = bind_policy(tape, policy, false);
    return tape.value(policy_forward_batch(tape, policy, vars, batch));
}

/// y = r + alpha (1 - done) min_k Q'_k(s', mu'(s') + noise). With one
/// critic and no noise this is the plain DDPG target.
inline Mat critic_targets(std::span<const Critic* const> critics, const MadPolicy& actor_target,
                          const TrainingBatch& b, double alpha, const Mat* next_noise = nullptr) {
    if (critics.empty()) throw std::invalid_argument("critic_targets: no critic");
    Mat u_next = policy_actions(actor_target, b.next);
    if (next_noise) u_next += *next_noise;
    Mat su(b.s_next.rows() + u_next.rows(), b.size());
    su << b.s_next, u_next;
    Mat q_next = critics[0]->target.forward(su);
    for (std::size_t k = 1; k < critics.size(); ++k) q_next = q_next.cwiseMin(critics[k]->target.forward(su));
    return b.r + alpha * b.live.cwiseProduct(q_next);
}

inline Mat critic_targets(const Critic& critic, const MadPolicy& actor_target, const TrainingBatch& b, double alpha) {
    const Critic* one[] = {&critic};
    return critic_targets(one, actor_target, b, alpha);
}

struct LossGrad {
    double loss = 0.0;
    Vec grad;
};

/// Mean squared Bellman residual against fixed targets y and its gradient
/// in the live critic's parameters.
inline LossGrad critic_loss_grad(const Mlp& net, const Mat& s, const Mat& u, const Mat& y) {
    ad::Tape tape;
    const auto vars = ad::bind(tape, net.params());
    Mat su(s.rows() + u.rows(), s.cols());
    su << s, u;
    const ad::Var q = net.forward(tape.constant(su), vars);
    const ad::Var loss = ad::mean(ad::square(q - tape.constant(y)));
    tape.backward(loss);
    return {tape.value(loss)(0, 0), ad::gather_grad(tape, vars, net.params())};
}

/// One step on the critic toward fixed targets; returns the loss before the step.
inline double critic_update(Critic& critic, Optimizer& opt, const TrainingBatch& b, const Mat& y) {
    const LossGrad lg = critic_loss_grad(critic.net, b.s, b.u, y);
    if (!std::isfinite(lg.loss) || !lg.grad.allFinite())
        throw std::runtime_error("critic_update: non-finite loss or gradient");
    opt.step(critic.net.params(), lg.grad);
    return lg.loss;
}

inline double critic_update(Critic& critic, Optimizer& opt, const TrainingBatch& b, const MadPolicy& actor_target,
                            double alpha) {
    return critic_update(critic, opt, b, critic_targets(critic, actor_target, b, alpha));
}

struct ActorGrad {
    double objective = 0.0;  // mean Q(s, mu(s))
    std::vector<Vec> grad;   // d objective / d theta, in trainable() order
    bool singular = false;
};

/// Deterministic policy gradient: d/dtheta mean_k Q(s_k, mu_theta(s_k)),
/// with the critic held fixed.
inline ActorGrad actor_objective_grad(const MadPolicy& actor, const Mlp& critic_net, const TrainingBatch& b) {
    ad::Tape tape;
    const PolicyVars vars = bind_policy(tape, actor, true);
    const auto cvars = ad::bind_constant(tape, critic_net.params());
    const ad::Var u = policy_forward_batch(tape, actor, vars, b.now);
    const ad::Var q = critic_net.forward(ad::concat_rows({tape.constant(b.s), u}), cvars);
    const ad::Var obj = ad::mean(q);
    tape.backward(obj);
    return {tape.value(obj)(0, 0), gather_policy_grad(tape, vars, actor), tape.singular()};
}

/// Largest eigenvalue magnitude over the LRUs the mode uses (0 if none).
inline double policy_stability_margin(const MadPolicy& p) {
    double m = 0.0;
    if (uses_magnitude(p.mode())) m = std::max(m, stability_margin(p.magnitude()));
    if (uses_feedforward(p.mode())) m = std::max(m, stability_margin(p.feedforward()));
    return m;
}

/// Thrown when an update leaves some |lambda_i| >= 1.
class StabilityViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Ascends mean Q(s, mu(s)); returns the objective before the step. Only
/// actor parameters move. Throws StabilityViolation if an LRU loses its
/// contraction afterwards.
inline double actor_update(MadPolicy& actor, std::vector<Optimizer>& opts, const Mlp& critic_net,
                           const TrainingBatch& b) {
    const ActorGrad ag = actor_objective_grad(actor, critic_net, b);
    auto params = actor.trainable();
    if (opts.size() != params.size()) throw std::invalid_argument("actor_update: one optimizer per parameter block");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!ag.grad[i].allFinite()) throw std::runtime_error("actor_update: non-finite gradient");
        opts[i].step(*params[i], -ag.grad[i]);
    }
    const double margin = policy_stability_margin(actor);
    if (!(margin < 1.0))
        throw StabilityViolation("actor_update: LRU stability margin " + std::to_string(margin) + " >= 1");
    return ag.objective;
}

struct TrainConfig {
    std::size_t episodes = 500;
    double alpha = 0.99;
    std::size_t buffer_capacity = 100000;
    std::size_t batch_size = 64;
    double actor_lr = 3e-5;
    double critic_lr = 1e-3;
    double tau = 5e-3;
    double sigma = 1.0;
    std::size_t warmup = 1000;
    std::vector<Eigen::Index> critic_hidden{64, 64};
    std::string optimizer = "adam";
    /// Reward = -reward_scale * stage loss.
    double reward_scale = 0.01;
    /// Replay window length for the actor; 0 replays whole episodes.
    Eigen::Index bptt_window = 0;
    /// Learn the T-step objective: the critic sees t / T and the last step
    /// is terminal, carrying the stage loss at t = T in its reward.
    bool finite_horizon = true;
    /// Clipped double-Q: two critics, targets use the smaller estimate.
    bool twin_critic = false;
    /// Actor and target networks update once every policy_delay critic steps.
    std::size_t policy_delay = 1;
    /// Clipped Gaussian noise on the target action (0 disables).
    double target_noise = 0.0;
    double target_noise_clip = 0.5;
    std::size_t validate_every = 10;
    std::size_t n_validation = 16;
    std::uint64_t validation_seed = 1000;
    bool record_wall_time = false;

    void validate() const {
        if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("train.alpha must lie in (0, 1)");
        if (buffer_capacity == 0 || batch_size == 0) throw std::invalid_argument("train: buffer and batch must be positive");
        if (!(actor_lr > 0.0 && critic_lr > 0.0)) throw std::invalid_argument("train: learning rates must be positive");
        if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("train.tau must lie in [0, 1]");
        if (sigma < 0.0) throw std::invalid_argument("train.sigma must be nonnegative");
        if (!(reward_scale > 0.0)) throw std::invalid_argument("train.reward_scale must be positive");
        if (bptt_window < 0) throw std::invalid_argument("train.bptt_window must be >= 0");
        if (policy_delay == 0) throw std::invalid_argument("train.policy_delay must be >= 1");
        if (target_noise < 0.0 || target_noise_clip < 0.0)
            throw std::invalid_argument("train.target_noise and target_noise_clip must be nonnegative");
        if (validate_every == 0 || n_validation == 0)
            throw std::invalid_argument("train: validate_every and n_validation must be positive");
        for (auto h : critic_hidden)
            if (h <= 0) throw std::invalid_argument("train.critic_hidden widths must be positive");
        Optimizer::parse(optimizer);
    }
};

struct MetricsRow {
    std::size_t episode = 0;
    double episode_return = 0.0;   // -(discounted loss) of the exploration episode
    double best_so_far = 0.0;      // running max of improvement_pct
    double improvement_pct = 0.0;  // latest validation improvement over the base controller
    double wall_ms = 0.0;
};

inline void write_metrics_header(std::ostream& os) { os << "episode,return,best_so_far,improvement_pct,wall_ms\n"; }

inline void write_metrics_row(std::ostream& os, const MetricsRow& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", r.episode, r.episode_return, r.best_so_far,
                  r.improvement_pct, r.wall_ms);
    os << buf;
}

struct TrainStats {
    std::uint64_t actor_updates = 0;
    std::uint64_t critic_updates = 0;
    std::uint64_t stability_checks = 0;
    std::uint64_t stability_violations = 0;
    double max_stability_margin = 0.0;
    std::size_t aborted_episodes = 0;
    std::size_t best_episode = 0;
};

struct TrainResult {
    MadPolicy best;
    MadPolicy last;
    std::vector<MetricsRow> metrics;
    TrainStats stats;
};

struct TrainHooks {
    /// Called after every episode with the live policy.
    std::function<void(std::size_t episode, const MadPolicy&)> on_episode;
    /// Called after every actor update with the live policy.
    std::function<void(const MadPolicy&)> on_actor_update;
    /// Called before every actor update with the policy, first critic and batch.
    std::function<void(const MadPolicy&, const Mlp&, const TrainingBatch&)> before_actor_update;
};

/// DDPG on the corridor. Deterministic given (cfg, tc, initial policy, seed)
/// on any number of threads: only validation rollouts run in parallel and
/// they write to per-index slots.
inline TrainResult train(const EnvConfig& cfg, const TrainConfig& tc, MadPolicy initial, std::uint64_t seed,
                         const TrainHooks& hooks = {}) {
    cfg.validate();
    tc.validate();
    const Plant plant = cfg.plant();
    const PolicyMode mode = initial.mode();
    const Eigen::Index T = cfg.horizon;

    MadPolicy actor = std::move(initial);
    MadPolicy actor_target = actor;
    TrainResult res{actor, actor, {}, {}};
    if (mode == PolicyMode::BASE) {
        for (std::size_t e = 1; e <= tc.episodes; ++e) res.metrics.push_back({e, 0.0, 0.0, 0.0, 0.0});
        return res;
    }

    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x64647067u};
    std::mt19937_64 rng(seq);
    const Eigen::Index extra = tc.finite_horizon ? 1 : 0;
    auto critic_state = [&](const Vec& x, Eigen::Index t) {
        Vec s = actor.augmented_state(x);
        if (extra == 0) return s;
        s.conservativeResize(s.size() + 1);
        s[s.size() - 1] = static_cast<double>(t) / static_cast<double>(T);
        return s;
    };
    const Optimizer::Kind kind = Optimizer::parse(tc.optimizer);
    std::vector<Critic> critics;
    std::vector<Optimizer> critic_opts;
    for (int k = 0; k < (tc.twin_critic ? 2 : 1); ++k) {
        critics.emplace_back(actor.augmented_dim() + extra, actor.shape().input_dim, tc.critic_hidden, rng);
        critic_opts.emplace_back(kind, tc.critic_lr, critics.back().net.params().size());
    }
    std::vector<const Critic*> critic_ptrs;
    for (const Critic& c : critics) critic_ptrs.push_back(&c);
    std::vector<Optimizer> actor_opts;
    for (const ParamVector* p : actor.trainable()) actor_opts.emplace_back(kind, tc.actor_lr, p->size());

    ReplayBuffer buffer(tc.buffer_capacity);
    EpisodeStore store;

    const double base_loss =
        mean(evaluate_policy(cfg, ZeroPolicy{kCorridorInputDim}, InitMode::Validation, tc.n_validation, tc.validation_seed));
    auto validate = [&](const MadPolicy& p) {
        return improvement_pct(base_loss,
                               mean(evaluate_policy(cfg, p, InitMode::Validation, tc.n_validation, tc.validation_seed)));
    };
    double current = validate(actor);
    double best = current;

    const auto t_start = std::chrono::steady_clock::now();
    std::uint64_t steps = 0;
    for (std::size_t ep = 1; ep <= tc.episodes; ++ep) {
        const Vec x0 = sample_init(cfg, InitMode::Train, rng);
        const Signal w = sample_disturbance(cfg, T, rng);
        EpisodeRecord rec{x0, Mat::Zero(actor.shape().state_dim, T + 1)};
        const bool model = needs_model(mode);

        actor.reset(x0);
        Vec x = x0;
        Vec s = critic_state(x, 0);
        double ep_return = 0.0, disc = 1.0;
        for (Eigen::Index t = 0; t < T; ++t) {
            if (model) rec.w_hat.col(t) = actor.peek_w_hat(x);
            const Vec u = explore(actor.act(x, t), tc.sigma, rng);
            actor.set_applied_action(u);
            double l = stage_loss(cfg, x, u);
            ep_return -= disc * l;
            disc *= tc.alpha;

            Vec x_next = plant.f(x, u) + w.at(t + 1);
            Transition tr{s, u, 0.0, Vec(), false, ep, t};
            bool aborted = !x_next.allFinite();
            if (aborted) {
                tr.s_next = s;
                tr.done = true;
            } else {
                tr.s_next = critic_state(x_next, t + 1);
                if (model) rec.w_hat.col(t + 1) = actor.peek_w_hat(x_next);
                if (t + 1 == T) {
                    const double l_end = stage_loss(cfg, x_next, actor.act(x_next, T));
                    ep_return -= disc * l_end;
                    if (tc.finite_horizon) {
                        tr.done = true;
                        l += tc.alpha * l_end;
                    }
                }
            }
            tr.r = -tc.reward_scale * l;
            // The record must be visible before any update samples this step.
            store.put(ep, rec);
            buffer.push(tr);
            ++steps;

            if (steps >= tc.warmup && buffer.size() >= tc.batch_size) {
                const auto idx = buffer.sample_indices(tc.batch_size, rng);
                const TrainingBatch b = make_batch(buffer, store, idx, actor, tc.bptt_window);
                Mat noise;
                if (tc.target_noise > 0.0) {
                    std::normal_distribution<double> n(0.0, tc.target_noise);
                    noise.resize(b.u.rows(), b.size());
                    for (Eigen::Index k = 0; k < noise.size(); ++k)
                        noise.data()[k] = std::clamp(n(rng), -tc.target_noise_clip, tc.target_noise_clip);
                }
                const Mat y = critic_targets(critic_ptrs, actor_target, b, tc.alpha, noise.size() ? &noise : nullptr);
                for (std::size_t k = 0; k < critics.size(); ++k) {
                    const double closs = critic_update(critics[k], critic_opts[k], b, y);
                    if (!std::isfinite(closs))
                        throw std::runtime_error("train: non-finite critic loss at episode " + std::to_string(ep));
                }
                ++res.stats.critic_updates;
                if (res.stats.critic_updates % tc.policy_delay == 0) {
                    if (hooks.before_actor_update) hooks.before_actor_update(actor, critics[0].net, b);
                    try {
                        actor_update(actor, actor_opts, critics[0].net, b);
                    } catch (const StabilityViolation&) {
                        ++res.stats.stability_checks;
                        ++res.stats.stability_violations;
                        throw;
                    }
                    ++res.stats.actor_updates;
                    ++res.stats.stability_checks;
                    res.stats.max_stability_margin = std::max(res.stats.max_stability_margin, policy_stability_margin(actor));
                    if (hooks.on_actor_update) hooks.on_actor_update(actor);
                    for (Critic& c : critics) soft_update(c.target.params(), c.net.params(), tc.tau);
                    soft_update(actor_target, actor, tc.tau);
                }
            }
            if (aborted) {
                ++res.stats.aborted_episodes;
                break;
            }
            s = std::move(tr.s_next);
            x = std::move(x_next);
        }
        if (buffer.size() > 0) store.prune(buffer.at(0).episode);

        if (ep % tc.validate_every == 0 || ep == tc.episodes) {
            current = validate(actor);
            if (!std::isfinite(current)) throw std::runtime_error("train: non-finite validation loss");
            if (current > best) {
                best = current;
                res.best = actor;
                res.stats.best_episode = ep;
            }
        }
        MetricsRow row{ep, ep_return, best, current, 0.0};
        if (tc.record_wall_time)
            row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start).count();
        res.metrics.push_back(row);
        if (hooks.on_episode) hooks.on_episode(ep, actor);
    }
    res.last = actor;
    res.best.reset(Vec::Zero(res.best.shape().state_dim));
    res.last.reset(Vec::Zero(res.last.shape().state_dim));
    return res;
}

}  // namespace madrl
