#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "facedet/config.hpp"
#include "facedet/gradcheck.hpp"
#include "facedet/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

facedet::RunConfig load_run_config(const std::string& path) {
  if (path.empty()) return {};
  return facedet::RunConfig::load(path);
}

int cmd_synth(const std::string& out_dir, int n, uint64_t seed, double occlusion,
              const std::string& config_path) {
  facedet::RunConfig rc = load_run_config(config_path);
  rc.synth.count = n;
  rc.synth.seed = seed;
  if (occlusion >= 0) rc.synth.occlusion_prob = occlusion;
  facedet::synth_generate(rc.synth, out_dir);
  std::cout << "wrote " << n << " images to " << out_dir << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& ckpt_path, const std::string& log_path, int steps_override,
              int64_t seed_override) {
  facedet::RunConfig rc = load_run_config(config_path);
  if (steps_override >= 0) rc.train.steps = steps_override;
  if (seed_override >= 0) rc.train.seed = static_cast<uint64_t>(seed_override);

  const auto dataset = facedet::load_dataset(data_dir);
  facedet::TrainResult result = facedet::train(rc.train, dataset);
  const json echo = rc.to_json();
  if (!log_path.empty()) facedet::write_metrics_csv(log_path, result.log, echo);
  facedet::Checkpoint ckpt = facedet::make_checkpoint(result.model, echo, rc.train.steps,
                                                      result.final_rng_state);
  ckpt.save(ckpt_path);
  if (!result.log.empty())
    std::cout << "trained " << rc.train.steps << " steps, initial loss "
              << result.log.front().total << ", final loss " << result.log.back().total << "\n";
  std::cout << "checkpoint written to " << ckpt_path << "\n";
  return kExitOk;
}

int cmd_detect(const std::string& ckpt_path, const std::string& image_path,
               std::vector<int> scales, double score, double nms_thresh,
               const std::string& out_path) {
  facedet::Checkpoint ckpt = facedet::Checkpoint::load(ckpt_path);
  facedet::DetectorModel model = facedet::model_from_checkpoint(ckpt);
  facedet::DetectConfig dcfg;
  if (ckpt.configs.contains("detect")) {
    const json& d = ckpt.configs["detect"];
    dcfg.scales = d.value("scales", dcfg.scales);
    dcfg.score_threshold = d.value("score_threshold", dcfg.score_threshold);
    dcfg.nms_threshold = d.value("nms_threshold", dcfg.nms_threshold);
  }
  if (!scales.empty()) dcfg.scales = std::move(scales);
  if (score >= 0) dcfg.score_threshold = score;
  if (nms_thresh >= 0) dcfg.nms_threshold = nms_thresh;

  const facedet::Tensor image = facedet::read_image(image_path);
  const auto detections = facedet::detect(model, image, dcfg);

  json line;
  line["image"] = image_path;
  json jdets = json::array();
  for (const auto& d : detections)
    jdets.push_back({{"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}}, {"score", d.score}});
  line["detections"] = jdets;

  if (out_path.empty()) {
    std::cout << line.dump() << "\n";
  } else {
    std::ofstream out(out_path);
    if (!out) throw facedet::DataError(out_path + ": cannot open for writing");
    out << line.dump() << "\n";
  }
  return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& report_path) {
  facedet::Checkpoint ckpt = facedet::Checkpoint::load(ckpt_path);
  facedet::DetectorModel model = facedet::model_from_checkpoint(ckpt);
  facedet::DetectConfig dcfg;
  if (ckpt.configs.contains("detect")) {
    const json& d = ckpt.configs["detect"];
    dcfg.scales = d.value("scales", dcfg.scales);
    dcfg.score_threshold = d.value("score_threshold", dcfg.score_threshold);
    dcfg.nms_threshold = d.value("nms_threshold", dcfg.nms_threshold);
  }
  const auto test_set = facedet::load_dataset(data_dir);
  facedet::EvalReport report = facedet::evaluate_model(model, test_set, dcfg);
  json j = report.to_json();
  j["config"] = ckpt.configs;
  std::ofstream out(report_path);
  if (!out) throw facedet::DataError(report_path + ": cannot open for writing");
  out << j.dump(2) << "\n";
  std::cout << "AP@0.5 " << report.ap << " (small " << report.ap_small << ", medium "
            << report.ap_medium << ", large " << report.ap_large << ") over " << report.num_gts
            << " gts\n";
  return kExitOk;
}

// Variant tokens: base | seg_off | fusion_additive | aug_off | lambda2=<v>
facedet::TrainConfig variant_config(const facedet::TrainConfig& base, const std::string& name) {
  facedet::TrainConfig cfg = base;
  if (name == "base") return cfg;
  if (name == "seg_off") {
    cfg.weights.lambda2 = 0.0;
    return cfg;
  }
  if (name == "fusion_additive") {
    cfg.fusion = facedet::FusionMode::kAdditive;
    return cfg;
  }
  if (name == "aug_off") {
    cfg.augment = false;
    return cfg;
  }
  if (name.rfind("lambda2=", 0) == 0) {
    cfg.weights.lambda2 = std::stod(name.substr(8));
    return cfg;
  }
  throw facedet::ConfigError("unknown ablation variant '" + name +
                             "' (expected base|seg_off|fusion_additive|aug_off|lambda2=<v>)");
}

int cmd_ablate(const std::string& config_path, const std::string& data_dir,
               std::vector<std::string> variant_names, std::vector<uint64_t> seeds,
               const std::string& out_csv, int workers) {
  facedet::RunConfig rc = load_run_config(config_path);
  std::vector<facedet::AblationVariant> variants;
  for (const auto& name : variant_names) variants.push_back({name, variant_config(rc.train, name)});

  const auto train_set = facedet::load_dataset((fs::path(data_dir) / "train").string());
  const auto test_set = facedet::load_dataset((fs::path(data_dir) / "test").string());
  const auto rows =
      facedet::ablation_run(variants, train_set, test_set, seeds, rc.detect, workers);
  facedet::write_ablation_csv(out_csv, rows, rc.to_json());
  for (const auto& r : rows)
    std::cout << r.variant << " seed " << r.seed << ": AP " << r.report.ap << " (small "
              << r.report.ap_small << ")\n";
  return kExitOk;
}

int cmd_gradcheck(uint64_t seed) {
  const auto results = facedet::run_gradcheck_suite(seed);
  for (const auto& r : results)
    std::printf("%-24s max rel error %.3e\n", r.op.c_str(), r.max_rel_error);
  if (!facedet::gradcheck_passed(results)) {
    std::cerr << "gradcheck FAILED (tolerance 1e-4)\n";
    return kExitNumeric;
  }
  std::cout << "gradcheck passed (tolerance 1e-4)\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"facedet: single-shot face detector with fusion pyramid and segmentation "
               "supervision"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_out, synth_config;
  int synth_n = 300;
  uint64_t synth_seed = 7;
  double synth_occlusion = -1;
  synth->add_option("--out", synth_out, "output dataset directory")->required();
  synth->add_option("--n", synth_n, "number of images")->capture_default_str();
  synth->add_option("--seed", synth_seed, "generator seed")->capture_default_str();
  synth->add_option("--occlusion", synth_occlusion, "occluder probability per face (default 0)");
  synth->add_option("--config", synth_config, "JSON config file");

  // train
  auto* train = app.add_subcommand("train", "train a detector");
  std::string train_config, train_data, train_out, train_log;
  int train_steps = -1;
  int64_t train_seed = -1;
  train->add_option("--config", train_config, "JSON config file");
  train->add_option("--data", train_data, "training dataset directory")->required();
  train->add_option("--out", train_out, "output checkpoint path")->required();
  train->add_option("--log", train_log, "metrics CSV path");
  train->add_option("--steps", train_steps, "override config step count")
      ->check(CLI::NonNegativeNumber);
  train->add_option("--seed", train_seed, "override config seed")->check(CLI::NonNegativeNumber);

  // detect
  auto* detect = app.add_subcommand("detect", "run inference on one image");
  std::string det_ckpt, det_image, det_out;
  std::vector<int> det_scales;
  double det_score = -1, det_nms = -1;
  detect->add_option("--ckpt", det_ckpt, "checkpoint path")->required();
  detect->add_option("--image", det_image, "PGM/PPM image path")->required();
  detect->add_option("--scales", det_scales, "shorter-side scales (default 96,128,160)")
      ->delimiter(',');
  detect->add_option("--score", det_score, "score threshold (default 0.05)");
  detect->add_option("--nms", det_nms, "NMS IoU threshold (default 0.3)");
  detect->add_option("--out", det_out, "output JSONL path (default stdout)");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string eval_ckpt, eval_data, eval_report;
  eval->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
  eval->add_option("--data", eval_data, "evaluation dataset directory")->required();
  eval->add_option("--report", eval_report, "output JSON report path")->required();

  // ablate
  auto* ablate = app.add_subcommand("ablate", "train and compare variants");
  std::string abl_config, abl_data, abl_out;
  std::vector<std::string> abl_variants;
  std::vector<uint64_t> abl_seeds;
  int abl_workers = 1;
  ablate->add_option("--config", abl_config, "JSON config file");
  ablate->add_option("--data", abl_data, "benchmark directory containing train/ and test/")
      ->required();
  ablate->add_option("--variants", abl_variants,
                     "variant list: base,seg_off,fusion_additive,aug_off,lambda2=<v>")
      ->delimiter(',')->required();
  ablate->add_option("--seeds", abl_seeds, "seed list")->delimiter(',')->required();
  ablate->add_option("--out", abl_out, "output CSV path")->required();
  ablate->add_option("--workers", abl_workers, "parallel training workers")->capture_default_str();

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  uint64_t gc_seed = 2;
  gradcheck->add_option("--seed", gc_seed, "random seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth->parsed())
      return cmd_synth(synth_out, synth_n, synth_seed, synth_occlusion, synth_config);
    if (train->parsed())
      return cmd_train(train_config, train_data, train_out, train_log, train_steps, train_seed);
    if (detect->parsed())
      return cmd_detect(det_ckpt, det_image, det_scales, det_score, det_nms, det_out);
    if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_report);
    if (ablate->parsed())
      return cmd_ablate(abl_config, abl_data, abl_variants, abl_seeds, abl_out, abl_workers);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_seed);
  } catch (const facedet::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const facedet::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const facedet::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
