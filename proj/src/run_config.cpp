#include "lanekeep/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "lanekeep/errors.hpp"

namespace lanekeep {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& prefix) {
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) throw ConfigError("unknown config key '" + prefix + key + "'");
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    reject_unknown(j,
                   {"label", "seed", "n_envs", "total_steps", "lr0", "gamma", "gae_lambda", "minibatch", "rollout_len",
                    "epochs", "clip_eps", "ent_coef", "vf_coef", "max_grad_norm", "normalize_advantages",
                    "checkpoint_every", "curve_window", "reward_scale", "world", "catalog", "catalog_seed", "run_dir", "log_steps"},
                   "");
    if (!j.contains("label")) throw ConfigError("missing required config key 'label'");
    RunConfig cfg;
    std::string label;
    read(j, "label", label);
    cfg.label = parse_label(label);

    auto& t = cfg.train;
    if (j.contains("seed")) {
        if (!j.at("seed").is_number_integer() || j.at("seed").get<long long>() < 0)
            throw ConfigError("config key 'seed' must be a non-negative integer");
        t.seed = j.at("seed").get<std::uint64_t>();
    }
    read(j, "n_envs", t.n_envs);
    read(j, "total_steps", t.total_steps);
    read(j, "lr0", t.lr0);
    read(j, "gamma", t.gamma);
    read(j, "gae_lambda", t.gae_lambda);
    read(j, "minibatch", t.minibatch);
    read(j, "rollout_len", t.rollout_len);
    read(j, "epochs", t.epochs);
    read(j, "clip_eps", t.clip_eps);
    read(j, "ent_coef", t.ent_coef);
    read(j, "vf_coef", t.vf_coef);
    read(j, "max_grad_norm", t.max_grad_norm);
    read(j, "normalize_advantages", t.normalize_advantages);
    read(j, "checkpoint_every", t.checkpoint_every);
    read(j, "curve_window", t.curve_window);
    read(j, "reward_scale", t.reward_scale);
    if (j.contains("world")) {
        const json& w = j.at("world");
        if (!w.is_object()) throw ConfigError("config key 'world' must be an object");
        reject_unknown(w, {"dt", "wheelbase", "max_wheel_angle", "accel_gain", "drag_coeff"}, "world.");
        read(w, "dt", cfg.world.dt);
        read(w, "wheelbase", cfg.world.wheelbase);
        read(w, "max_wheel_angle", cfg.world.max_wheel_angle);
        read(w, "accel_gain", cfg.world.accel_gain);
        read(w, "drag_coeff", cfg.world.drag_coeff);
    }
    read(j, "catalog", cfg.catalog);
    read(j, "catalog_seed", cfg.catalog_seed);
    read(j, "run_dir", cfg.run_dir);
    read(j, "log_steps", cfg.log_steps);
    t.validate();
    cfg.world.validate();
    return cfg;
}

ordered_json run_config_to_json(const RunConfig& cfg) {
    const auto& t = cfg.train;
    ordered_json j;
    j["label"] = label_name(cfg.label);
    j["seed"] = t.seed;
    j["n_envs"] = t.n_envs;
    j["total_steps"] = t.total_steps;
    j["lr0"] = t.lr0;
    j["gamma"] = t.gamma;
    j["gae_lambda"] = t.gae_lambda;
    j["minibatch"] = t.minibatch;
    j["rollout_len"] = t.rollout_len;
    j["epochs"] = t.epochs;
    j["clip_eps"] = t.clip_eps;
    j["ent_coef"] = t.ent_coef;
    j["vf_coef"] = t.vf_coef;
    j["max_grad_norm"] = t.max_grad_norm;
    j["normalize_advantages"] = t.normalize_advantages;
    j["checkpoint_every"] = t.checkpoint_every;
    j["curve_window"] = t.curve_window;
    j["reward_scale"] = t.reward_scale;
    j["world"] = {{"dt", cfg.world.dt},
                  {"wheelbase", cfg.world.wheelbase},
                  {"max_wheel_angle", cfg.world.max_wheel_angle},
                  {"accel_gain", cfg.world.accel_gain},
                  {"drag_coeff", cfg.world.drag_coeff}};
    j["catalog"] = cfg.catalog;
    j["catalog_seed"] = cfg.catalog_seed;
    j["run_dir"] = cfg.run_dir;
    j["log_steps"] = cfg.log_steps;
    return j;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    json j;
    try {
        j = json::parse(ss.str());
    } catch (const json::parse_error& e) {
        throw ConfigError(path + " is not valid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

void save_run_config(const RunConfig& cfg, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << run_config_to_json(cfg).dump(2) << "\n";
    if (!out) throw IoError("write failed for " + path);
}

RouteCatalog resolve_catalog(const RunConfig& cfg) {
    return cfg.catalog.empty() ? build_route_catalog(cfg.catalog_seed) : load_catalog(cfg.catalog);
}

}  // namespace lanekeep
