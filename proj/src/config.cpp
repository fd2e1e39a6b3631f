#include "facedet/config.hpp"

#include <fstream>
#include <set>

using nlohmann::json;

namespace facedet {

namespace {

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key))
      throw ConfigError(where + ": unknown key '" + key + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

json train_config_to_json(const TrainConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["backbone"] = {{"widths", cfg.backbone.widths},
                   {"blocks_per_stage", cfg.backbone.blocks_per_stage},
                   {"in_channels", cfg.backbone.in_channels}};
  j["head"] = {{"trunk_width", cfg.head.trunk_width},
               {"anchors_per_location", cfg.head.anchors_per_location}};
  j["fusion"] = to_string(cfg.fusion);
  j["train"] = {{"steps", cfg.steps},
                {"batch_size", cfg.batch_size},
                {"base_lr", cfg.base_lr},
                {"lr_decay_fractions", cfg.lr_decay_fractions},
                {"lr_decay_factor", cfg.lr_decay_factor},
                {"momentum", cfg.momentum},
                {"weight_decay", cfg.weight_decay},
                {"augment", cfg.augment}};
  j["loss"] = {{"lambda1", cfg.weights.lambda1},
               {"lambda2", cfg.weights.lambda2},
               {"focal_alpha", cfg.focal.alpha},
               {"focal_gamma", cfg.focal.gamma}};
  j["crop"] = {{"probability", cfg.crop.probability},
               {"min_fraction", cfg.crop.min_fraction},
               {"max_fraction", cfg.crop.max_fraction}};
  return j;
}

json RunConfig::to_json() const {
  json j = train_config_to_json(train);
  j["detect"] = {{"scales", detect.scales},
                 {"score_threshold", detect.score_threshold},
                 {"nms_threshold", detect.nms_threshold}};
  j["synth"] = {{"image_size", synth.image_size},
                {"count", synth.count},
                {"min_faces", synth.min_faces},
                {"max_faces", synth.max_faces},
                {"min_face_size", synth.min_face_size},
                {"max_face_size", synth.max_face_size},
                {"noise_amplitude", synth.noise_amplitude},
                {"occlusion_prob", synth.occlusion_prob}};
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  check_keys(j, "config",
             {"seed", "backbone", "head", "fusion", "train", "loss", "crop", "detect", "synth"});
  RunConfig rc;
  read(j, "seed", rc.train.seed);
  if (j.contains("backbone")) {
    const json& b = j["backbone"];
    check_keys(b, "config.backbone", {"widths", "blocks_per_stage", "in_channels"});
    read(b, "widths", rc.train.backbone.widths);
    read(b, "blocks_per_stage", rc.train.backbone.blocks_per_stage);
    read(b, "in_channels", rc.train.backbone.in_channels);
    if (rc.train.backbone.widths.size() != 4)
      throw ConfigError("config.backbone.widths: exactly 4 stage widths required");
  }
  if (j.contains("head")) {
    const json& h = j["head"];
    check_keys(h, "config.head", {"trunk_width", "anchors_per_location"});
    read(h, "trunk_width", rc.train.head.trunk_width);
    read(h, "anchors_per_location", rc.train.head.anchors_per_location);
  }
  if (j.contains("fusion")) {
    try {
      rc.train.fusion = fusion_mode_from_string(j["fusion"].get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config.fusion: ") + e.what());
    }
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    check_keys(t, "config.train",
               {"steps", "batch_size", "base_lr", "lr_decay_fractions", "lr_decay_factor",
                "momentum", "weight_decay", "augment"});
    read(t, "steps", rc.train.steps);
    read(t, "batch_size", rc.train.batch_size);
    read(t, "base_lr", rc.train.base_lr);
    read(t, "lr_decay_fractions", rc.train.lr_decay_fractions);
    read(t, "lr_decay_factor", rc.train.lr_decay_factor);
    read(t, "momentum", rc.train.momentum);
    read(t, "weight_decay", rc.train.weight_decay);
    read(t, "augment", rc.train.augment);
  }
  if (j.contains("loss")) {
    const json& l = j["loss"];
    check_keys(l, "config.loss", {"lambda1", "lambda2", "focal_alpha", "focal_gamma"});
    read(l, "lambda1", rc.train.weights.lambda1);
    read(l, "lambda2", rc.train.weights.lambda2);
    read(l, "focal_alpha", rc.train.focal.alpha);
    read(l, "focal_gamma", rc.train.focal.gamma);
  }
  if (j.contains("crop")) {
    const json& c = j["crop"];
    check_keys(c, "config.crop", {"probability", "min_fraction", "max_fraction"});
    read(c, "probability", rc.train.crop.probability);
    read(c, "min_fraction", rc.train.crop.min_fraction);
    read(c, "max_fraction", rc.train.crop.max_fraction);
  }
  if (j.contains("detect")) {
    const json& d = j["detect"];
    check_keys(d, "config.detect", {"scales", "score_threshold", "nms_threshold"});
    read(d, "scales", rc.detect.scales);
    read(d, "score_threshold", rc.detect.score_threshold);
    read(d, "nms_threshold", rc.detect.nms_threshold);
  }
  if (j.contains("synth")) {
    const json& s = j["synth"];
    check_keys(s, "config.synth",
               {"image_size", "count", "min_faces", "max_faces", "min_face_size", "max_face_size",
                "noise_amplitude", "occlusion_prob"});
    read(s, "image_size", rc.synth.image_size);
    read(s, "count", rc.synth.count);
    read(s, "min_faces", rc.synth.min_faces);
    read(s, "max_faces", rc.synth.max_faces);
    read(s, "min_face_size", rc.synth.min_face_size);
    read(s, "max_face_size", rc.synth.max_face_size);
    read(s, "noise_amplitude", rc.synth.noise_amplitude);
    read(s, "occlusion_prob", rc.synth.occlusion_prob);
  }
  rc.synth.seed = rc.train.seed;
  return rc;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path + ": malformed JSON: " + e.what());
  }
  try {
    return from_json(j);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace facedet
