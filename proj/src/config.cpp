#include "psal/config.hpp"

#include <fstream>
#include <set>

#include "psal/error.hpp"

namespace psal {

using nlohmann::json;

json to_json(const NetConfig& c) {
  return {{"image_size", c.image_size},
          {"inject_size", c.inject_size},
          {"label_channels", c.label_channels},
          {"base_channels", c.base_channels},
          {"bottleneck_channels", c.bottleneck_channels},
          {"disc_base_channels", c.disc_base_channels},
          {"dropout_rate", c.dropout_rate},
          {"dropout_layers", c.dropout_layers}};
}

json to_json(const TrainConfig& c) {
  return {{"lambda_l1", c.lambda_l1},       {"learning_rate", c.learning_rate},
          {"rms_decay", c.rms_decay},       {"rms_epsilon", c.rms_epsilon},
          {"momentum", c.momentum},         {"batch_size", c.batch_size},
          {"epochs", c.epochs},             {"init_range", c.init_range},
          {"seed", c.seed},                 {"prob_clip", c.prob_clip},
          {"checkpoint_every", c.checkpoint_every}};
}

namespace {

template <class T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("config field '") + key + "': " + e.what());
  }
}

}  // namespace

NetConfig net_config_from_json(const json& j) {
  NetConfig c;
  read_field(j, "image_size", c.image_size);
  c = NetConfig::for_size(c.image_size);
  read_field(j, "inject_size", c.inject_size);
  c.label_channels = c.inject_size;
  read_field(j, "label_channels", c.label_channels);
  read_field(j, "base_channels", c.base_channels);
  read_field(j, "bottleneck_channels", c.bottleneck_channels);
  read_field(j, "disc_base_channels", c.disc_base_channels);
  read_field(j, "dropout_rate", c.dropout_rate);
  read_field(j, "dropout_layers", c.dropout_layers);
  return c;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  read_field(j, "lambda_l1", c.lambda_l1);
  read_field(j, "learning_rate", c.learning_rate);
  read_field(j, "rms_decay", c.rms_decay);
  read_field(j, "rms_epsilon", c.rms_epsilon);
  read_field(j, "momentum", c.momentum);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "epochs", c.epochs);
  read_field(j, "init_range", c.init_range);
  read_field(j, "seed", c.seed);
  read_field(j, "prob_clip", c.prob_clip);
  read_field(j, "checkpoint_every", c.checkpoint_every);
  return c;
}

RunConfig parse_run_config(const json& j) {
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  std::set<std::string> known;
  const json net_keys = to_json(NetConfig{}), train_keys = to_json(TrainConfig{});
  for (const auto& [k, v] : net_keys.items()) known.insert(k);
  for (const auto& [k, v] : train_keys.items()) known.insert(k);
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw UsageError("unknown config key '" + k + "'");
  RunConfig cfg{net_config_from_json(j), train_config_from_json(j)};
  cfg.net.validate();
  cfg.train.validate();
  return cfg;
}

std::string render_run_config(const RunConfig& cfg) {
  json j = to_json(cfg.net);
  j.update(to_json(cfg.train));
  return j.dump(2);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

}  // namespace psal
