#ifndef FACEDET_CONFIG_HPP
#define FACEDET_CONFIG_HPP

#include <stdexcept>
#include <string>

#include "facedet/trainer.hpp"

#include "json.hpp"

namespace facedet {

// Bad flags and bad config files; the CLI maps these to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Aggregated run configuration. JSON documents are parsed strictly: unknown
// keys are rejected so typos cannot silently fall back to defaults.
struct RunConfig {
  TrainConfig train;
  DetectConfig detect;
  SynthConfig synth;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);

}  // namespace facedet

#endif  // FACEDET_CONFIG_HPP
