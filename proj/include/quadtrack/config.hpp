#pragma once

#include <filesystem>

#include <json.hpp>

#include "quadtrack/dynamics.hpp"
#include "quadtrack/env.hpp"
#include "quadtrack/ppo.hpp"

namespace quadtrack {

// Every reader starts from the defaults of the passed object, overrides only
// the keys present and rejects unknown keys with ConfigError.

nlohmann::json to_json(const Params& p);
Params params_from_json(const nlohmann::json& j, Params base = {});

nlohmann::json to_json(const EnvConfig& c);
EnvConfig env_config_from_json(const nlohmann::json& j, EnvConfig base = {});

nlohmann::json to_json(const NetworkConfig& c);
NetworkConfig network_config_from_json(const nlohmann::json& j, NetworkConfig base = {});

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

/// Everything `train` needs: {"train": ..., "env": ..., "vehicle": ...}.
struct RunConfig {
  TrainConfig train;
  EnvConfig env;
  Params vehicle;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Parses a JSON file; syntax errors and missing files become ConfigError.
nlohmann::json read_json_file(const std::filesystem::path& path);

/// Stable FNV-1a hash of the compact JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);

}  // namespace quadtrack
