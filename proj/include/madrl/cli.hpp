#pragma once

// The four CLI commands as plain functions returning an exit code.
// Every command resolves and validates its inputs before touching the
// output directory.

#include "madrl/checkpoint.hpp"
#include "madrl/config.hpp"
#include "madrl/corridor_env.hpp"
#include "madrl/ddpg.hpp"
#include "madrl/plant.hpp"
#include "madrl/policies.hpp"
#include "madrl/signals.hpp"
#include "madrl/verify.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace madrl {

struct CliOptions {
    std::string config;
    std::string checkpoint;
    std::optional<std::uint64_t> seed;
    /// Policy mode for train/verify, evaluation mode for eval/export.
    std::optional<std::string> mode;
    std::optional<std::size_t> episodes;
    std::optional<std::size_t> n;
    std::string out_dir = ".";
    std::string what;
    std::vector<std::string> set;
};

namespace detail {

inline std::vector<std::string> overrides_from(const CliOptions& o, bool policy_mode) {
    std::vector<std::string> ov = o.set;
    if (o.seed) ov.push_back("seed=" + std::to_string(*o.seed));
    if (policy_mode && o.mode) ov.push_back("mode=\"" + *o.mode + "\"");
    if (o.episodes) ov.push_back("train.episodes=" + std::to_string(*o.episodes));
    return ov;
}

inline std::filesystem::path prepare_dir(const std::string& dir) {
    std::filesystem::path p(dir.empty() ? "." : dir);
    std::filesystem::create_directories(p);
    return p;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
}

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// t, x_0..x_{n-1}, u_0..u_{m-1} plus mode/seed/rollout tags, one row per step.
inline std::string trajectory_csv(const Trajectory& tr, const std::string& mode, std::uint64_t seed, std::size_t idx) {
    std::string s = "mode,seed,rollout,t";
    for (Eigen::Index i = 0; i < tr.x.dim(); ++i) s += ",x_" + std::to_string(i);
    for (Eigen::Index i = 0; i < tr.u.dim(); ++i) s += ",u_" + std::to_string(i);
    s += '\n';
    for (Eigen::Index t = 0; t < tr.x.length(); ++t) {
        s += mode + "," + std::to_string(seed) + "," + std::to_string(idx) + "," + std::to_string(t);
        for (Eigen::Index i = 0; i < tr.x.dim(); ++i) s += "," + fmt(tr.x.matrix()(i, t));
        for (Eigen::Index i = 0; i < tr.u.dim(); ++i) s += "," + fmt(tr.u.matrix()(i, t));
        s += '\n';
    }
    return s;
}

inline void export_trajectories(const std::filesystem::path& dir, const EnvConfig& env, const MadPolicy& policy,
                                InitMode mode, std::size_t n, std::uint64_t seed) {
    const Plant plant = env.plant();
    for (std::size_t i = 0; i < n; ++i) {
        MadPolicy local = policy;
        const Trajectory tr = rollout(plant, local, evaluation_disturbance(env, mode, seed, i), env.horizon);
        const std::string name = "traj_" + std::string(to_string(mode)) + "_seed" + std::to_string(seed) + "_r" +
                                 std::to_string(i) + ".csv";
        write_text(dir / name, trajectory_csv(tr, std::string(to_string(mode)), seed, i));
    }
}

struct PolicySource {
    RunConfig config;
    MadPolicy policy;
};

/// The checkpoint if one is given, else a freshly initialized policy from the config.
inline PolicySource policy_source(const CliOptions& o, bool policy_mode_flag) {
    if (!o.checkpoint.empty()) {
        LoadedCheckpoint ck = load_checkpoint(o.checkpoint);
        if (!o.set.empty()) {
            json doc = to_json(ck.config);
            for (const auto& s : o.set) apply_override(doc, s);
            ck.config = from_json(doc);
            ck.config.mode = ck.policy.mode();
            ck.config.validate();
        }
        return {ck.config, ck.policy};
    }
    RunConfig cfg = load_config(o.config, overrides_from(o, policy_mode_flag));
    return {cfg, make_policy(cfg)};
}

}  // namespace detail

/// Trains the configured mode and writes config.json, metrics.csv,
/// checkpoint_best.json, checkpoint_last.json and periodic checkpoints.
inline int cmd_train(const CliOptions& o, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    try {
        json resolved;
        const RunConfig cfg = load_config(o.config, detail::overrides_from(o, true), &resolved);
        MadPolicy policy = make_policy(cfg);

        const auto dir = detail::prepare_dir(o.out_dir);
        detail::write_text(dir / "config.json", resolved.dump(2) + "\n");
        TrainHooks hooks;
        if (cfg.checkpoint_every > 0)
            hooks.on_episode = [&](std::size_t ep, const MadPolicy& p) {
                if (ep % cfg.checkpoint_every == 0)
                    save_checkpoint((dir / ("checkpoint_ep" + std::to_string(ep) + ".json")).string(), p, cfg);
            };
        const TrainResult res = train(cfg.env, cfg.train, policy, cfg.seed, hooks);

        std::ofstream metrics(dir / "metrics.csv", std::ios::binary);
        write_metrics_header(metrics);
        for (const auto& row : res.metrics) write_metrics_row(metrics, row);
        save_checkpoint((dir / "checkpoint_best.json").string(), res.best, cfg);
        save_checkpoint((dir / "checkpoint_last.json").string(), res.last, cfg);

        out << "mode " << to_string(cfg.mode) << "  episodes " << cfg.train.episodes << "  parameters "
            << policy.parameter_count() << '\n';
        if (!res.metrics.empty())
            out << "best validation improvement " << detail::fmt(res.metrics.back().best_so_far) << " % (episode "
                << res.stats.best_episode << ")\n";
        out << "max LRU eigenvalue magnitude " << detail::fmt(res.stats.max_stability_margin) << " over "
            << res.stats.stability_checks << " actor updates\n";
        return 0;
    } catch (const std::exception& e) {
        err << "train: " << e.what() << '\n';
        return 2;
    }
}

/// Per-rollout discounted losses against the base controller on the same
/// rollouts, plus trajectory CSVs for the first eval.n_export rollouts.
inline int cmd_eval(const CliOptions& o, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    try {
        if (o.checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
        const detail::PolicySource src = detail::policy_source(o, false);
        const InitMode mode = parse_init_mode(o.mode.value_or("validation"));
        const std::size_t n = o.n.value_or(src.config.eval.n);
        const std::uint64_t seed = o.seed.value_or(src.config.eval.seed);
        if (n == 0) throw ConfigError("--n must be positive");

        const auto pol = evaluate_policy(src.config.env, src.policy, mode, n, seed);
        const auto base = evaluate_policy(src.config.env, ZeroPolicy{kCorridorInputDim}, mode, n, seed);
        const double imp = improvement_pct(mean(base), mean(pol));

        const auto dir = detail::prepare_dir(o.out_dir);
        const std::string tag = std::string(to_string(mode)) + "_seed" + std::to_string(seed);
        std::string csv = "rollout,return,base_return\n";
        for (std::size_t i = 0; i < n; ++i)
            csv += std::to_string(i) + "," + detail::fmt(pol[i]) + "," + detail::fmt(base[i]) + "\n";
        detail::write_text(dir / ("eval_" + tag + ".csv"), csv);
        json summary = {{"mode", std::string(to_string(mode))},
                        {"policy_mode", std::string(to_string(src.policy.mode()))},
                        {"seed", seed},
                        {"n", n},
                        {"mean_loss", mean(pol)},
                        {"base_mean_loss", mean(base)},
                        {"improvement_pct", imp}};
        detail::write_text(dir / ("eval_" + tag + ".json"), summary.dump(2) + "\n");
        detail::export_trajectories(dir, src.config.env, src.policy, mode, std::min(n, src.config.eval.n_export), seed);

        for (std::size_t i = 0; i < n; ++i) out << "rollout " << i << " loss " << detail::fmt(pol[i]) << '\n';
        out << "mean loss " << detail::fmt(mean(pol)) << "  base " << detail::fmt(mean(base)) << '\n';
        out << "improvement over base " << detail::fmt(imp) << " %\n";
        return 0;
    } catch (const std::exception& e) {
        err << "eval: " << e.what() << '\n';
        return 2;
    }
}

/// Runs one named check. Policies come from `src`.
inline Report run_check(const std::string& name, const detail::PolicySource& src) {
    const RunConfig& cfg = src.config;
    const Plant plant = cfg.env.plant();
    const VerifyConfig& v = cfg.verify;

    if (name == "stability_base") {
        Report r = check_stability(plant, ZeroPolicy{plant.input_dim}, v.stability);
        r.name = name;
        return r;
    }
    if (name == "stability_policy") {
        Report r = check_stability(plant, src.policy, v.stability);
        r.name = name + "_" + std::string(to_string(src.policy.mode()));
        return r;
    }
    if (name == "detects_instability" || name == "unstable_policy") {
        // x+ = 0.5 x + u with u = 2x: closed-loop pole 2.5.
        const Plant toy = scalar_linear_plant(0.5, 1.0);
        StabilitySpec spec = v.stability;
        Report inner = check_stability(toy, FeedbackPolicy{[](const Vec& x) { return Vec(2.0 * x); }}, spec);
        if (name == "unstable_policy") {
            inner.name = name;
            return inner;
        }
        Report r;
        r.name = name;
        r.pass = !inner.pass;
        r.metrics = inner.metrics;
        r.thresholds = inner.thresholds;
        r.seeds = inner.seeds;
        r.notes.push_back("passes when the harness flags the unstable toy loop");
        return r;
    }
    if (name == "inclusion") {
        Report r;
        r.name = name;
        r.pass = true;
        double worst = 0.0;
        const LruShape shape = cfg.policy_shape().magnitude;
        for (std::size_t k = 0; k < v.inclusion_thetas; ++k) {
            const LruParams th = lru_init(shape, cfg.policy.r_min, cfg.policy.r_max, v.inclusion.seed + 7919 * k);
            InclusionSpec spec = v.inclusion;
            spec.seed = v.inclusion.seed + k;
            const Report one = check_inclusion(cfg.env, th, spec);
            r.pass = r.pass && one.pass;
            worst = std::max(worst, one.metrics.at("max_input_gap"));
            r.seeds.push_back(spec.seed);
        }
        r.metrics["max_input_gap"] = worst;
        r.metrics["n_thetas"] = static_cast<double>(v.inclusion_thetas);
        r.thresholds["tol"] = v.inclusion.tol;
        return r;
    }
    if (name == "robustness_table") {
        struct Row {
            double gm, gd, gf;
            bool expect;
        };
        const double inf = std::numeric_limits<double>::infinity();
        const std::vector<Row> table{{0.9, 0.5, 1.0, true}, {1.1, 0.5, 1.0, false}, {5.0, 0.0, 3.0, true},
                                     {0.0, inf, 1.0, true}, {0.1, inf, 1.0, false}, {0.24, 2.0, 1.0, true},
                                     {0.26, 2.0, 1.0, false}};
        Report r;
        r.name = name;
        std::size_t wrong = 0;
        for (const auto& row : table)
            if (check_robustness_condition(row.gm, row.gd, row.gf) != row.expect) ++wrong;
        r.pass = wrong == 0;
        r.metrics["rows"] = static_cast<double>(table.size());
        r.metrics["mismatched_rows"] = static_cast<double>(wrong);
        return r;
    }
    if (name == "certify") {
        const NominalModel nominal = perturbed_model(cfg.env, v.mismatch_drag_scale);
        const double gamma_f = estimate_plant_gain(plant, v.gain_probes, v.gain_horizon, v.stability.seed);
        const auto probes = gain_probes(plant.state_dim, v.gain_horizon, v.gain_probes, v.stability.seed);
        const GainCertificate g = certify_policy_gain(src.policy.magnitude(), nominal.gamma_delta, gamma_f, probes);
        const double after = estimate_gain([&](const Signal& s) { return run_lru(g.rescaled, s); }, probes, 2.0);
        Report r;
        r.name = name;
        r.pass = check_robustness_condition(after, nominal.gamma_delta, gamma_f);
        r.metrics["gamma_delta_bound"] = nominal.gamma_delta;
        r.metrics["gamma_F_estimate"] = gamma_f;
        r.metrics["gamma_M_estimate"] = g.gain_estimate;
        r.metrics["gamma_M_after_rescale"] = after;
        r.metrics["rescale"] = g.rescale;
        r.metrics["already_certified"] = g.certified ? 1.0 : 0.0;
        r.thresholds["gamma_M_bound"] = g.bound;
        r.seeds = {v.stability.seed};
        r.notes.push_back("gain estimates are probe lower bounds, not certified gains");
        return r;
    }
    if (name == "mismatch") {
        const NominalModel nominal = perturbed_model(cfg.env, v.mismatch_drag_scale);
        MismatchSpec spec = v.mismatch;
        spec.gamma_delta = nominal.gamma_delta;
        spec.gamma_f = estimate_plant_gain(plant, v.gain_probes, v.gain_horizon, v.stability.seed);
        MadPolicy pol = src.policy;
        if (needs_model(pol.mode())) pol = MadPolicy(pol.mode(), pol.shape(), nominal, cfg.seed);
        if (needs_model(pol.mode())) {
            pol.magnitude() = src.policy.magnitude();
            pol.feedforward() = src.policy.feedforward();
            pol.direction_net() = src.policy.direction_net();
        }
        Report r = check_mismatch_residual(cfg.env, plant, nominal, pol, spec);
        r.name = name;
        return r;
    }
    throw ConfigError("unknown check '" + name + "'");
}

/// Runs the configured checks, writes verify_<check>.json and
/// verify_report.json; exit 0 iff every check passes.
inline int cmd_verify(const CliOptions& o, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    try {
        const detail::PolicySource src = detail::policy_source(o, true);
        const auto dir = detail::prepare_dir(o.out_dir);
        json all = json::array();
        bool ok = true;
        for (const std::string& name : src.config.verify.checks) {
            const Report r = run_check(name, src);
            ok = ok && r.pass;
            all.push_back(to_json(r));
            detail::write_text(dir / ("verify_" + name + ".json"), to_json(r).dump(2) + "\n");
            out << (r.pass ? "PASS " : "FAIL ") << r.name << '\n';
        }
        detail::write_text(dir / "verify_report.json", all.dump(2) + "\n");
        return ok ? 0 : 1;
    } catch (const std::exception& e) {
        err << "verify: " << e.what() << '\n';
        return 2;
    }
}

/// what = params | trajectories | gains.
inline int cmd_export(const CliOptions& o, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    try {
        if (o.what != "params" && o.what != "trajectories" && o.what != "gains")
            throw ConfigError("--what must be params|trajectories|gains");
        if (o.what == "trajectories" && o.mode) parse_init_mode(*o.mode);
        CliOptions opts = o;
        if (o.what == "trajectories") opts.mode.reset();
        const detail::PolicySource src = detail::policy_source(opts, true);
        const auto dir = detail::prepare_dir(o.out_dir);
        const MadPolicy& p = src.policy;

        if (o.what == "params") {
            json j = {{"mode", std::string(to_string(p.mode()))},
                      {"parameter_count", p.parameter_count()},
                      {"params", params_json(p)}};
            detail::write_text(dir / "params.json", j.dump(1) + "\n");
            out << "parameter_count " << p.parameter_count() << '\n';
        } else if (o.what == "trajectories") {
            const InitMode mode = parse_init_mode(o.mode.value_or("validation"));
            const std::size_t n = o.n.value_or(src.config.eval.n_export);
            const std::uint64_t seed = o.seed.value_or(src.config.eval.seed);
            detail::export_trajectories(dir, src.config.env, p, mode, n, seed);
            out << "wrote " << n << " trajectories of " << src.config.env.horizon + 1 << " rows\n";
        } else {
            const RunConfig& cfg = src.config;
            const Plant plant = cfg.env.plant();
            const auto probes = gain_probes(plant.state_dim, cfg.verify.gain_horizon, cfg.verify.gain_probes,
                                            cfg.verify.stability.seed);
            auto lru_gain = [&](const LruParams& lp) {
                return estimate_gain([&](const Signal& s) { return run_lru(lp, s); }, probes, 2.0);
            };
            const double gamma_f =
                estimate_plant_gain(plant, cfg.verify.gain_probes, cfg.verify.gain_horizon, cfg.verify.stability.seed);
            const std::optional<NominalModel> model = make_model(cfg);
            const double gd = model ? model->gamma_delta : std::numeric_limits<double>::infinity();
            const double gm = uses_magnitude(p.mode()) ? lru_gain(p.magnitude()) : 0.0;
            json j = {{"mode", std::string(to_string(p.mode()))},
                      {"magnitude_stability_margin", stability_margin(p.magnitude())},
                      {"feedforward_stability_margin", stability_margin(p.feedforward())},
                      {"magnitude_gain_lower_bound", lru_gain(p.magnitude())},
                      {"feedforward_gain_lower_bound", lru_gain(p.feedforward())},
                      {"plant_gain_lower_bound", gamma_f},
                      {"gamma_delta", std::isfinite(gd) ? json(gd) : json("inf")},
                      {"robustness_condition", check_robustness_condition(gm, gd, gamma_f)}};
            detail::write_text(dir / "gains.json", j.dump(2) + "\n");
            out << j.dump(2) << '\n';
        }
        return 0;
    } catch (const std::exception& e) {
        err << "export: " << e.what() << '\n';
        return 2;
    }
}

}  // namespace madrl
