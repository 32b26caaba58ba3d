#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "lanekeep/action_space.hpp"
#include "lanekeep/ppo.hpp"
#include "lanekeep/simworld.hpp"

namespace lanekeep {

/// Everything needed to reproduce one training run.
struct RunConfig {
    ActionLabel label = ActionLabel::Rel05;
    ppo::TrainConfig train;
    WorldConfig world;
    std::string catalog;             // track catalog path; empty: generated from catalog_seed
    std::uint64_t catalog_seed = 0;
    std::string run_dir;
    bool log_steps = false;
};

/// Strict parse: unknown keys and a missing label are ConfigErrors naming
/// the key. Missing optional keys keep their defaults.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::ordered_json run_config_to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& cfg, const std::string& path);

/// Catalog named by the config, or the procedural one for catalog_seed.
RouteCatalog resolve_catalog(const RunConfig& cfg);

}  // namespace lanekeep
