#pragma once

// JSON checkpoints: a versioned header, the resolved run config and every
// named parameter array of the policy.
//
//   {"format": "madrl-checkpoint", "version": 1, "mode": "MAD",
//    "parameter_count": 1892, "config": {...},
//    "params": {"magnitude.nu": [...], "direction.W0": [...], ...}}
//
// Arrays are flattened column-major. Doubles round-trip exactly.

#include "madrl/config.hpp"
#include "madrl/param_vector.hpp"
#include "madrl/policies.hpp"

#include <json.hpp>

#include <fstream>
#include <string>
#include <utility>
#include <vector>

namespace madrl {

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline std::vector<std::pair<std::string, const ParamVector*>> named_params(const MadPolicy& p) {
    return {{"magnitude", &p.magnitude().params()},
            {"feedforward", &p.feedforward().params()},
            {"direction", &p.direction_net().params()},
            {"mlp", &p.mlp().params()}};
}

}  // namespace detail

inline json params_json(const MadPolicy& p) {
    json out = json::object();
    for (const auto& [prefix, pv] : detail::named_params(p))
        for (std::size_t i = 0; i < pv->blocks().size(); ++i) {
            const auto b = pv->block(i);
            out[prefix + "." + pv->blocks()[i].name] = std::vector<double>(b.data(), b.data() + b.size());
        }
    return out;
}

inline json checkpoint_json(const MadPolicy& p, const RunConfig& cfg) {
    json j;
    j["format"] = "madrl-checkpoint";
    j["version"] = kCheckpointVersion;
    j["mode"] = std::string(to_string(p.mode()));
    j["parameter_count"] = p.parameter_count();
    RunConfig c = cfg;
    c.mode = p.mode();
    j["config"] = to_json(c);
    j["params"] = params_json(p);
    return j;
}

inline void save_checkpoint(const std::string& path, const MadPolicy& p, const RunConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
    out << checkpoint_json(p, cfg).dump(1) << '\n';
}

struct LoadedCheckpoint {
    RunConfig config;
    MadPolicy policy;
};

inline LoadedCheckpoint checkpoint_from_json(const json& j) {
    if (j.value("format", std::string()) != "madrl-checkpoint") throw ConfigError("not a madrl checkpoint");
    if (j.value("version", 0) != kCheckpointVersion)
        throw ConfigError("unsupported checkpoint version " + std::to_string(j.value("version", 0)));
    RunConfig cfg = from_json(j.at("config"));
    cfg.validate();
    MadPolicy p = make_policy(cfg);
    const json& params = j.at("params");
    auto restore = [&](const std::string& prefix, ParamVector& pv) {
        for (std::size_t i = 0; i < pv.blocks().size(); ++i) {
            const std::string key = prefix + "." + pv.blocks()[i].name;
            if (!params.contains(key)) throw ConfigError("checkpoint: missing parameter '" + key + "'");
            const auto values = params.at(key).get<std::vector<double>>();
            auto b = pv.block(i);
            if (static_cast<Eigen::Index>(values.size()) != b.size())
                throw ConfigError("checkpoint: parameter '" + key + "' has the wrong size");
            std::copy(values.begin(), values.end(), b.data());
        }
    };
    restore("magnitude", p.magnitude().params());
    restore("feedforward", p.feedforward().params());
    restore("direction", p.direction_net().params());
    restore("mlp", p.mlp().params());
    return {std::move(cfg), std::move(p)};
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) { return checkpoint_from_json(read_json_file(path)); }

}  // namespace madrl
