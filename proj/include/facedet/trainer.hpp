#ifndef FACEDET_TRAINER_HPP
#define FACEDET_TRAINER_HPP

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "facedet/checkpoint.hpp"
#include "facedet/data.hpp"
#include "facedet/losses.hpp"
#include "facedet/model.hpp"

namespace facedet {

// Non-finite losses and failed numeric checks; the CLI maps these to exit 3.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int steps = 2000;
  int batch_size = 8;
  double base_lr = 0.01;
  std::vector<double> lr_decay_fractions{2.0 / 3.0, 5.0 / 6.0};
  double lr_decay_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  bool augment = true;
  uint64_t seed = 7;
  LossWeights weights;
  FocalParams focal;
  CropConfig crop;
  BackboneConfig backbone;
  HeadConfig head;
  FusionMode fusion = FusionMode::kMultiplicative;
};

struct StepLog {
  int step = 0;
  double cls = 0, reg = 0, seg = 0, total = 0, lr = 0;
};

struct TrainResult {
  DetectorModel model;
  std::vector<StepLog> log;
  std::array<uint64_t, 4> final_rng_state{};
};

// Per-anchor labels and per-level segmentation masks for one image, aligned
// with the head output shapes.
struct LevelTargets {
  std::vector<AnchorLabels> labels;
  std::vector<std::vector<uint8_t>> seg;
};

LevelTargets build_targets(const HeadOutputs& outputs, const std::vector<Box>& gts,
                           int anchors_per_location);

double lr_at_step(const TrainConfig& cfg, int step);

// Shuffled mini-batch SGD; deterministic for a fixed seed. Throws
// NumericError with the offending step's diagnostics if the loss goes
// non-finite.
TrainResult train(const TrainConfig& cfg, const std::vector<Sample>& dataset);

void write_metrics_csv(const std::string& path, const std::vector<StepLog>& log,
                       const nlohmann::json& config_echo);

Checkpoint make_checkpoint(const DetectorModel& model, const nlohmann::json& configs,
                           int64_t step, const std::array<uint64_t, 4>& rng_state);
DetectorModel model_from_checkpoint(const Checkpoint& ckpt);

struct DetectConfig {
  std::vector<int> scales{96, 128, 160};  // shorter-side targets
  double score_threshold = 0.05;
  double nms_threshold = 0.3;
};

// Multi-scale inference: per scale resize, pad, forward, decode, map boxes
// back to original coordinates; one NMS over the concatenation.
std::vector<Detection> detect(const DetectorModel& model, const Tensor& image,
                              const DetectConfig& cfg);

struct PRPoint {
  double score = 0, precision = 0, recall = 0;
};

// Size buckets by sqrt(area): small < 32, medium 32..96, large > 96.
struct EvalReport {
  double ap = 0, ap_small = 0, ap_medium = 0, ap_large = 0;
  int num_detections = 0, num_gts = 0;
  std::vector<PRPoint> curve;
  nlohmann::json to_json() const;
};

// Greedy matching per image by descending score, one match per gt,
// IoU >= iou_thresh; AP by all-points interpolation. Bucket APs restrict
// gts to the bucket and ignore detections matched outside it.
EvalReport evaluate(const std::vector<std::vector<Detection>>& dets_per_image,
                    const std::vector<std::vector<Box>>& gts_per_image, double iou_thresh = 0.5);

EvalReport evaluate_model(const DetectorModel& model, const std::vector<Sample>& test_set,
                          const DetectConfig& cfg, double iou_thresh = 0.5);

struct AblationVariant {
  std::string name;
  TrainConfig config;
};

struct AblationRow {
  std::string variant;
  uint64_t seed = 0;
  EvalReport report;
};

// Trains every (variant, seed) pair and evaluates on the test set. Runs are
// independent, so they may be spread across workers; results are identical
// to a serial run.
std::vector<AblationRow> ablation_run(const std::vector<AblationVariant>& variants,
                                      const std::vector<Sample>& train_set,
                                      const std::vector<Sample>& test_set,
                                      const std::vector<uint64_t>& seeds,
                                      const DetectConfig& dcfg, int workers = 1);

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows,
                        const nlohmann::json& config_echo);

}  // namespace facedet

#endif  // FACEDET_TRAINER_HPP
