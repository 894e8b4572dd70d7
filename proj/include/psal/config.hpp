#ifndef PSAL_CONFIG_HPP
#define PSAL_CONFIG_HPP

#include <filesystem>
#include <json.hpp>
#include <string>

#include "psal/model.hpp"
#include "psal/training.hpp"

namespace psal {

/// Combined network and training configuration as read from a config file.
/// Keys are the field names of NetConfig and TrainConfig in one flat object;
/// unknown keys are rejected. Missing network keys take the defaults scaled
/// to image_size.
struct RunConfig {
  NetConfig net = NetConfig::for_size(256);
  TrainConfig train;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

nlohmann::json to_json(const NetConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);
NetConfig net_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);

RunConfig parse_run_config(const nlohmann::json& j);
std::string render_run_config(const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace psal

#endif  // PSAL_CONFIG_HPP
