#pragma once

// Run configuration as a JSON document. Defaults come from the C++ structs,
// a user file is merged over them (unknown keys are rejected), then
// `--set a.b.c=value` overrides are applied and the result is validated.

#include "madrl/corridor_env.hpp"
#include "madrl/ddpg.hpp"
#include "madrl/plant.hpp"
#include "madrl/policies.hpp"
#include "madrl/verify.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace madrl {

using nlohmann::json;

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ModelConfig {
    /// exact | perturbed | none
    std::string kind = "exact";
    /// Drag coefficients of the nominal model are b * drag_scale (perturbed only).
    double drag_scale = 1.1;
};

struct PolicyConfig {
    /// Unset sizes fall back to default_shape(mode).
    std::optional<LruShape> magnitude;
    std::optional<LruShape> feedforward;
    std::vector<Eigen::Index> direction_hidden{32};
    std::vector<Eigen::Index> mlp_hidden{32};
    double r_min = 0.4;
    double r_max = 0.9;
};

struct EvalConfig {
    std::size_t n = 20;
    std::uint64_t seed = 2024;
    std::size_t n_export = 4;
};

struct VerifyConfig {
    std::vector<std::string> checks{"stability_base", "stability_policy", "inclusion", "robustness_table",
                                    "certify", "mismatch", "detects_instability"};
    StabilitySpec stability;
    std::size_t inclusion_thetas = 10;
    InclusionSpec inclusion{5, 50, 1e-9, 0};
    MismatchSpec mismatch;
    double mismatch_drag_scale = 1.1;
    std::size_t gain_probes = 20;
    Eigen::Index gain_horizon = 200;
};

struct RunConfig {
    std::uint64_t seed = 0;
    PolicyMode mode = PolicyMode::MAD;
    ModelConfig model;
    EnvConfig env;
    PolicyConfig policy;
    TrainConfig train;
    EvalConfig eval;
    VerifyConfig verify;
    /// Write a checkpoint every K episodes (0 disables).
    std::size_t checkpoint_every = 0;

    PolicyShape policy_shape() const {
        PolicyShape s = default_shape(mode);
        if (policy.magnitude) s.magnitude = *policy.magnitude;
        if (policy.feedforward) s.feedforward = *policy.feedforward;
        s.direction_hidden = policy.direction_hidden;
        s.mlp_hidden = policy.mlp_hidden;
        s.r_min = policy.r_min;
        s.r_max = policy.r_max;
        return s;
    }

    void validate() const {
        try {
            env.validate();
            train.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        if (model.kind != "exact" && model.kind != "perturbed" && model.kind != "none")
            throw ConfigError("model.kind must be exact|perturbed|none");
        if (!(model.drag_scale > 0.0)) throw ConfigError("model.drag_scale must be positive");
        if (model.kind == "none" && needs_model(mode))
            throw ConfigError("mode " + std::string(to_string(mode)) +
                              " needs a nominal model to reconstruct disturbances; with model.kind = none only "
                              "AD, MLP and BASE are available");
        if (!(policy.r_min >= 0.0 && policy.r_min < policy.r_max && policy.r_max < 1.0))
            throw ConfigError("policy: need 0 <= r_min < r_max < 1");
        for (const auto& s : {policy_shape().magnitude, policy_shape().feedforward}) {
            if (s.n_xi <= 0 || s.head_in <= 0 || s.head_width < 0) throw ConfigError("policy: bad LRU sizes");
            if (s.n_in != env.plant().state_dim || s.n_out != env.plant().input_dim)
                throw ConfigError("policy: LRU input/output sizes must match the plant");
        }
        if (eval.n == 0) throw ConfigError("eval.n must be positive");
        static const std::vector<std::string> known{"stability_base", "stability_policy", "inclusion",
                                                    "robustness_table", "certify", "mismatch",
                                                    "detects_instability", "unstable_policy"};
        for (const auto& c : verify.checks)
            if (std::find(known.begin(), known.end(), c) == known.end()) throw ConfigError("verify: unknown check '" + c + "'");
        if (verify.stability.T_list.empty() || verify.stability.T_list.front() < 4 ||
            !std::is_sorted(verify.stability.T_list.begin(), verify.stability.T_list.end()))
            throw ConfigError("verify.stability.T_list must be ascending with T >= 4");
        if (!(verify.mismatch_drag_scale > 0.0)) throw ConfigError("verify.mismatch_drag_scale must be positive");
    }
};

// ---------------------------------------------------------------------------
// struct <-> json

namespace detail {

inline json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json mat_json(const Mat& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        std::vector<double> r(m.cols());
        for (Eigen::Index j = 0; j < m.cols(); ++j) r[j] = m(i, j);
        rows.push_back(r);
    }
    return rows;
}

inline Vec json_vec(const json& j, Eigen::Index n, const std::string& what) {
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != n)
        throw ConfigError(what + ": expected an array of " + std::to_string(n) + " numbers");
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = j[i].get<double>();
    return v;
}

inline Mat json_mat(const json& j, Eigen::Index r, Eigen::Index c, const std::string& what) {
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != r)
        throw ConfigError(what + ": expected " + std::to_string(r) + " rows");
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) m.row(i) = json_vec(j[i], c, what).transpose();
    return m;
}

inline json lru_json(const LruShape& s) {
    return {{"n_xi", s.n_xi}, {"n_in", s.n_in}, {"n_out", s.n_out}, {"head_in", s.head_in}, {"head_width", s.head_width}};
}

inline LruShape json_lru(const json& j) {
    LruShape s;
    s.n_xi = j.at("n_xi").get<Eigen::Index>();
    s.n_in = j.value("n_in", kCorridorStateDim);
    s.n_out = j.value("n_out", kCorridorInputDim);
    s.head_in = j.at("head_in").get<Eigen::Index>();
    s.head_width = j.at("head_width").get<Eigen::Index>();
    return s;
}

/// Recursively merges `patch` into `base`. Keys absent from base are errors,
/// except below keys whose default is null (free-form).
inline void strict_merge(json& base, const json& patch, const std::string& path) {
    if (!patch.is_object()) throw ConfigError("config: '" + path + "' must be a table");
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string key = path.empty() ? it.key() : path + "." + it.key();
        if (!base.contains(it.key())) throw ConfigError("config: unknown key '" + key + "'");
        json& slot = base[it.key()];
        if (slot.is_object() && it.value().is_object())
            strict_merge(slot, it.value(), key);
        else
            slot = it.value();
    }
}

}  // namespace detail

inline json to_json(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["mode"] = std::string(to_string(c.mode));
    j["model"] = {{"kind", c.model.kind}, {"drag_scale", c.model.drag_scale}};

    const EnvConfig& e = c.env;
    json vehicles = json::array();
    for (const auto& v : e.corridor.vehicles)
        vehicles.push_back({{"mass", v.mass},
                            {"b1", v.b1},
                            {"b2", v.b2},
                            {"gains", detail::vec_json(v.gains)},
                            {"target", detail::vec_json(v.target)}});
    json obstacles = json::array();
    for (const auto& o : e.obstacles) obstacles.push_back({{"mu", detail::vec_json(o.mu)}, {"sigma", detail::mat_json(o.sigma)}});
    json init = json::array();
    for (const auto& b : e.init)
        init.push_back({{"center", detail::vec_json(b.center)}, {"half_width", detail::vec_json(b.half_width)}});
    j["env"] = {{"Ts", e.corridor.Ts}, {"vehicles", vehicles}, {"S", detail::mat_json(e.S)}, {"S_ca", e.S_ca},
                {"d_min", e.d_min},    {"eps", e.eps},           {"S_obs", e.S_obs},               {"obstacles", obstacles},
                {"alpha", e.alpha},    {"sigma_w", e.sigma_w},   {"w_truncation", e.w_truncation}, {"init", init},
                {"horizon", e.horizon}};

    const PolicyConfig& p = c.policy;
    j["policy"] = {{"magnitude", p.magnitude ? detail::lru_json(*p.magnitude) : json(nullptr)},
                   {"feedforward", p.feedforward ? detail::lru_json(*p.feedforward) : json(nullptr)},
                   {"direction_hidden", p.direction_hidden},
                   {"mlp_hidden", p.mlp_hidden},
                   {"r_min", p.r_min},
                   {"r_max", p.r_max}};

    const TrainConfig& t = c.train;
    j["train"] = {{"episodes", t.episodes},
                  {"alpha", t.alpha},
                  {"buffer_capacity", t.buffer_capacity},
                  {"batch_size", t.batch_size},
                  {"actor_lr", t.actor_lr},
                  {"critic_lr", t.critic_lr},
                  {"tau", t.tau},
                  {"sigma", t.sigma},
                  {"warmup", t.warmup},
                  {"critic_hidden", t.critic_hidden},
                  {"optimizer", t.optimizer},
                  {"reward_scale", t.reward_scale},
                  {"bptt_window", t.bptt_window},
                  {"validate_every", t.validate_every},
                  {"n_validation", t.n_validation},
                  {"validation_seed", t.validation_seed},
                  {"record_wall_time", t.record_wall_time}};
    j["eval"] = {{"n", c.eval.n}, {"seed", c.eval.seed}, {"n_export", c.eval.n_export}};

    const VerifyConfig& v = c.verify;
    j["verify"] = {{"checks", v.checks},
                   {"stability",
                    {{"n_probes", v.stability.n_probes},
                     {"T_list", v.stability.T_list},
                     {"p", v.stability.p},
                     {"threshold", v.stability.threshold},
                     {"seed", v.stability.seed},
                     {"probe_support", v.stability.probe.support},
                     {"probe_amplitude", v.stability.probe.amplitude},
                     {"probe_x0_spread", v.stability.probe.x0_spread}}},
                   {"inclusion_thetas", v.inclusion_thetas},
                   {"inclusion",
                    {{"n_rollouts", v.inclusion.n_rollouts},
                     {"horizon", v.inclusion.horizon},
                     {"tol", v.inclusion.tol},
                     {"seed", v.inclusion.seed}}},
                   {"mismatch", {{"n_rollouts", v.mismatch.n_rollouts}, {"tol", v.mismatch.tol}, {"seed", v.mismatch.seed}}},
                   {"mismatch_drag_scale", v.mismatch_drag_scale},
                   {"gain_probes", v.gain_probes},
                   {"gain_horizon", v.gain_horizon}};
    j["checkpoint_every"] = c.checkpoint_every;
    return j;
}

/// Reads a complete config document (every key present, as produced by
/// merging over to_json(RunConfig{})).
inline RunConfig from_json(const json& j) {
    RunConfig c;
    try {
        c.seed = j.at("seed").get<std::uint64_t>();
        c.mode = parse_mode(j.at("mode").get<std::string>());
        c.model.kind = j.at("model").at("kind").get<std::string>();
        c.model.drag_scale = j.at("model").at("drag_scale").get<double>();

        const json& e = j.at("env");
        c.env.corridor.Ts = e.at("Ts").get<double>();
        const json& vs = e.at("vehicles");
        if (!vs.is_array() || vs.size() != 2) throw ConfigError("env.vehicles: expected two vehicles");
        for (std::size_t i = 0; i < 2; ++i) {
            auto& v = c.env.corridor.vehicles[i];
            v.mass = vs[i].at("mass").get<double>();
            v.b1 = vs[i].at("b1").get<double>();
            v.b2 = vs[i].at("b2").get<double>();
            v.gains = detail::json_vec(vs[i].at("gains"), 2, "env.vehicles.gains");
            v.target = detail::json_vec(vs[i].at("target"), 2, "env.vehicles.target");
        }
        c.env.S = detail::json_mat(e.at("S"), 12, 12, "env.S");
        c.env.S_ca = e.at("S_ca").get<double>();
        c.env.d_min = e.at("d_min").get<double>();
        c.env.eps = e.at("eps").get<double>();
        c.env.S_obs = e.at("S_obs").get<double>();
        c.env.obstacles.clear();
        for (const json& o : e.at("obstacles"))
            c.env.obstacles.push_back({detail::json_vec(o.at("mu"), 2, "env.obstacles.mu"),
                                       detail::json_mat(o.at("sigma"), 2, 2, "env.obstacles.sigma")});
        c.env.alpha = e.at("alpha").get<double>();
        c.env.sigma_w = e.at("sigma_w").get<double>();
        c.env.w_truncation = e.at("w_truncation").get<double>();
        const json& ib = e.at("init");
        if (!ib.is_array() || ib.size() != 2) throw ConfigError("env.init: expected two boxes");
        for (std::size_t i = 0; i < 2; ++i)
            c.env.init[i] = {detail::json_vec(ib[i].at("center"), 2, "env.init.center"),
                             detail::json_vec(ib[i].at("half_width"), 2, "env.init.half_width")};
        c.env.horizon = e.at("horizon").get<Eigen::Index>();

        const json& p = j.at("policy");
        if (!p.at("magnitude").is_null()) c.policy.magnitude = detail::json_lru(p.at("magnitude"));
        if (!p.at("feedforward").is_null()) c.policy.feedforward = detail::json_lru(p.at("feedforward"));
        c.policy.direction_hidden = p.at("direction_hidden").get<std::vector<Eigen::Index>>();
        c.policy.mlp_hidden = p.at("mlp_hidden").get<std::vector<Eigen::Index>>();
        c.policy.r_min = p.at("r_min").get<double>();
        c.policy.r_max = p.at("r_max").get<double>();

        const json& t = j.at("train");
        c.train.episodes = t.at("episodes").get<std::size_t>();
        c.train.alpha = t.at("alpha").get<double>();
        c.train.buffer_capacity = t.at("buffer_capacity").get<std::size_t>();
        c.train.batch_size = t.at("batch_size").get<std::size_t>();
        c.train.actor_lr = t.at("actor_lr").get<double>();
        c.train.critic_lr = t.at("critic_lr").get<double>();
        c.train.tau = t.at("tau").get<double>();
        c.train.sigma = t.at("sigma").get<double>();
        c.train.warmup = t.at("warmup").get<std::size_t>();
        c.train.critic_hidden = t.at("critic_hidden").get<std::vector<Eigen::Index>>();
        c.train.optimizer = t.at("optimizer").get<std::string>();
        c.train.reward_scale = t.at("reward_scale").get<double>();
        c.train.bptt_window = t.at("bptt_window").get<Eigen::Index>();
        c.train.validate_every = t.at("validate_every").get<std::size_t>();
        c.train.n_validation = t.at("n_validation").get<std::size_t>();
        c.train.validation_seed = t.at("validation_seed").get<std::uint64_t>();
        c.train.record_wall_time = t.at("record_wall_time").get<bool>();

        c.eval.n = j.at("eval").at("n").get<std::size_t>();
        c.eval.seed = j.at("eval").at("seed").get<std::uint64_t>();
        c.eval.n_export = j.at("eval").at("n_export").get<std::size_t>();

        const json& v = j.at("verify");
        c.verify.checks = v.at("checks").get<std::vector<std::string>>();
        const json& st = v.at("stability");
        c.verify.stability.n_probes = st.at("n_probes").get<std::size_t>();
        c.verify.stability.T_list = st.at("T_list").get<std::vector<Eigen::Index>>();
        c.verify.stability.p = st.at("p").get<double>();
        c.verify.stability.threshold = st.at("threshold").get<double>();
        c.verify.stability.seed = st.at("seed").get<std::uint64_t>();
        c.verify.stability.probe.support = st.at("probe_support").get<Eigen::Index>();
        c.verify.stability.probe.amplitude = st.at("probe_amplitude").get<double>();
        c.verify.stability.probe.x0_spread = st.at("probe_x0_spread").get<double>();
        c.verify.inclusion_thetas = v.at("inclusion_thetas").get<std::size_t>();
        const json& in = v.at("inclusion");
        c.verify.inclusion.n_rollouts = in.at("n_rollouts").get<std::size_t>();
        c.verify.inclusion.horizon = in.at("horizon").get<Eigen::Index>();
        c.verify.inclusion.tol = in.at("tol").get<double>();
        c.verify.inclusion.seed = in.at("seed").get<std::uint64_t>();
        const json& mm = v.at("mismatch");
        c.verify.mismatch.n_rollouts = mm.at("n_rollouts").get<std::size_t>();
        c.verify.mismatch.tol = mm.at("tol").get<double>();
        c.verify.mismatch.seed = mm.at("seed").get<std::uint64_t>();
        c.verify.mismatch_drag_scale = v.at("mismatch_drag_scale").get<double>();
        c.verify.gain_probes = v.at("gain_probes").get<std::size_t>();
        c.verify.gain_horizon = v.at("gain_horizon").get<Eigen::Index>();

        c.checkpoint_every = j.at("checkpoint_every").get<std::size_t>();
    } catch (const json::exception& ex) {
        throw ConfigError(std::string("config: ") + ex.what());
    } catch (const std::invalid_argument& ex) {
        throw ConfigError(std::string("config: ") + ex.what());
    }
    return c;
}

/// Parses "a.b.c=value". The value is read as JSON when it parses as JSON
/// (numbers, booleans, arrays, tables) and as a plain string otherwise.
inline void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key.path=value, got '" + assignment + "'");
    const std::string path = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw ConfigError("--set: empty key in '" + path + "'");
        if (node->is_array()) {
            std::size_t idx = 0;
            try {
                idx = std::stoul(key);
            } catch (...) {
                throw ConfigError("--set: '" + key + "' is not an array index in '" + path + "'");
            }
            if (idx >= node->size()) throw ConfigError("--set: index out of range in '" + path + "'");
            node = &(*node)[idx];
        } else {
            if (!node->is_object() || !node->contains(key)) throw ConfigError("--set: unknown key '" + path + "'");
            node = &(*node)[key];
        }
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    *node = value;
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    json j = json::parse(in, nullptr, false, true);
    if (j.is_discarded()) throw ConfigError("'" + path + "' is not valid JSON");
    return j;
}

/// Defaults <- file (optional) <- overrides, then parsed and validated.
inline RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                             json* resolved = nullptr) {
    json doc = to_json(RunConfig{});
    if (!path.empty()) detail::strict_merge(doc, read_json_file(path), "");
    for (const auto& o : overrides) apply_override(doc, o);
    RunConfig c = from_json(doc);
    c.validate();
    if (resolved) *resolved = to_json(c);
    return c;
}

inline NominalModel perturbed_model(const EnvConfig& env, double drag_scale) {
    CorridorParams p = env.corridor;
    for (auto& v : p.vehicles) {
        v.b1 *= drag_scale;
        v.b2 *= drag_scale;
    }
    NominalModel m{corridor_plant(p), 0.0};
    m.model.name = "corridor_nominal";
    // Delta(x, u) = Ts (C_hat(q) - C(q)) / m is memoryless with slope at most
    // Ts (|db1| + |db2|) / m, which bounds its lp gain.
    for (std::size_t i = 0; i < 2; ++i) {
        const auto& a = env.corridor.vehicles[i];
        const auto& b = p.vehicles[i];
        m.gamma_delta = std::max(m.gamma_delta, env.corridor.Ts * (std::abs(a.b1 - b.b1) + std::abs(a.b2 - b.b2)) / a.mass);
    }
    return m;
}

inline std::optional<NominalModel> make_model(const RunConfig& c) {
    if (c.model.kind == "none") return std::nullopt;
    if (c.model.kind == "perturbed") return perturbed_model(c.env, c.model.drag_scale);
    return exact_model(c.env.plant());
}

inline MadPolicy make_policy(const RunConfig& c) {
    std::optional<NominalModel> m = make_model(c);
    if (!needs_model(c.mode)) m.reset();
    return MadPolicy(c.mode, c.policy_shape(), m, c.seed);
}

}  // namespace madrl
