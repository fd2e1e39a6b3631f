#include "facedet/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

using nlohmann::json;

namespace facedet {

// ---- targets ---------------------------------------------------------------

LevelTargets build_targets(const HeadOutputs& outputs, const std::vector<Box>& gts,
                           int anchors_per_location) {
  LevelTargets t;
  const auto faces_by_level = assign_faces_to_levels(gts);
  for (std::size_t lvl = 0; lvl < outputs.cls_logits.size(); ++lvl) {
    const int level = kMinLevel + static_cast<int>(lvl);
    const int h = outputs.cls_logits[lvl].dim(1);
    const int w = outputs.cls_logits[lvl].dim(2);
    const std::vector<Anchor> anchors = generate_anchors(level, h, w);
    if (anchors.size() != static_cast<std::size_t>(anchors_per_location) * h * w)
      throw std::logic_error("build_targets: anchor count mismatch");
    t.labels.push_back(assign_anchors(anchors, gts));
    t.seg.push_back(rasterize_seg_target(faces_by_level[lvl], level, h, w));
  }
  return t;
}

// ---- training ---------------------------------------------------------------

double lr_at_step(const TrainConfig& cfg, int step) {
  double lr = cfg.base_lr;
  for (double frac : cfg.lr_decay_fractions)
    if (step >= static_cast<int>(frac * cfg.steps)) lr *= cfg.lr_decay_factor;
  return lr;
}

TrainResult train(const TrainConfig& cfg, const std::vector<Sample>& dataset) {
  if (dataset.empty()) throw DataError("train: dataset is empty");
  if (cfg.steps < 0 || cfg.batch_size < 1)
    throw std::invalid_argument("train: steps must be >= 0 and batch size >= 1");

  TrainResult result;
  result.model = DetectorModel::init(cfg.backbone, cfg.head, cfg.fusion, cfg.seed);
  std::vector<Tensor> params = result.model.params();

  OptimizerState opt;
  opt.momentum = cfg.momentum;
  opt.weight_decay = cfg.weight_decay;

  Rng shuffle_rng(cfg.seed ^ 0x5A17F00DULL);
  Rng aug_base(cfg.seed ^ 0xA46BA62EULL);

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();  // forces a shuffle before the first batch
  auto next_index = [&]() {
    if (cursor >= order.size()) {
      for (std::size_t i = order.size() - 1; i > 0; --i)
        std::swap(order[i], order[static_cast<std::size_t>(shuffle_rng.uniform_int(static_cast<int>(i + 1)))]);
      cursor = 0;
    }
    return order[cursor++];
  };

  uint64_t sample_counter = 0;
  const int A = cfg.head.anchors_per_location;
  result.log.reserve(static_cast<std::size_t>(cfg.steps));

  for (int step = 0; step < cfg.steps; ++step) {
    for (auto& p : params) {
      Tensor t = p;
      t.zero_grad();
    }
    Tape tape;
    Tensor batch_loss;
    StepLog log_row;
    log_row.step = step;

    for (int j = 0; j < cfg.batch_size; ++j) {
      Sample sample = dataset[next_index()];
      if (cfg.augment) {
        Rng aug_rng = aug_base.split(sample_counter);
        sample = random_crop(sample, cfg.crop, aug_rng);
      }
      ++sample_counter;

      const Tensor image = pad_to_multiple(sample.image, 128);
      const HeadOutputs outputs = result.model.forward(tape, image, HeadMode::kTrain);
      const LevelTargets targets = build_targets(outputs, sample.boxes, A);
      TotalLoss tl =
          total_loss(tape, outputs, targets.labels, targets.seg, cfg.weights, cfg.focal, A);

      const double inv_b = 1.0 / cfg.batch_size;
      Tensor contrib = tape.scale(tl.value, inv_b);
      batch_loss = batch_loss.defined() ? tape.add(batch_loss, contrib) : contrib;
      log_row.cls += tl.breakdown.cls * inv_b;
      log_row.reg += tl.breakdown.reg * inv_b;
      log_row.seg += tl.breakdown.seg * inv_b;
    }

    log_row.total = batch_loss.item();
    log_row.lr = lr_at_step(cfg, step);
    if (!std::isfinite(log_row.total)) {
      std::ostringstream os;
      os << "train: non-finite loss at step " << step << " (L_c=" << log_row.cls
         << ", L_r=" << log_row.reg << ", L_s=" << log_row.seg << ", lr=" << log_row.lr << ")";
      throw NumericError(os.str());
    }

    tape.backward(batch_loss);
    opt.learning_rate = log_row.lr;
    opt.step(params);
    result.log.push_back(log_row);
  }

  result.final_rng_state = shuffle_rng.state();
  return result;
}

void write_metrics_csv(const std::string& path, const std::vector<StepLog>& log,
                       const json& config_echo) {
  std::ofstream out(path);
  if (!out) throw DataError(path + ": cannot write metrics log");
  out << "# config: " << config_echo.dump() << "\n";
  out << "step,L_c,L_r,L_s,total,lr\n";
  out.precision(17);
  for (const StepLog& row : log)
    out << row.step << "," << row.cls << "," << row.reg << "," << row.seg << "," << row.total
        << "," << row.lr << "\n";
}

// ---- checkpointing -------------------------------------------------------------

Checkpoint make_checkpoint(const DetectorModel& model, const json& configs, int64_t step,
                           const std::array<uint64_t, 4>& rng_state) {
  Checkpoint ckpt;
  ckpt.configs = configs;
  ckpt.step = step;
  ckpt.rng_state = rng_state;
  for (const auto& [name, t] : model.named_params()) ckpt.tensors.emplace_back(name, t.clone());
  return ckpt;
}

DetectorModel model_from_checkpoint(const Checkpoint& ckpt) {
  BackboneConfig bcfg;
  HeadConfig hcfg;
  FusionMode fusion = FusionMode::kMultiplicative;
  const json& c = ckpt.configs;
  if (c.contains("backbone")) {
    bcfg.widths = c["backbone"].value("widths", bcfg.widths);
    bcfg.blocks_per_stage = c["backbone"].value("blocks_per_stage", bcfg.blocks_per_stage);
    bcfg.in_channels = c["backbone"].value("in_channels", bcfg.in_channels);
  }
  if (c.contains("head")) {
    hcfg.trunk_width = c["head"].value("trunk_width", hcfg.trunk_width);
    hcfg.anchors_per_location = c["head"].value("anchors_per_location", hcfg.anchors_per_location);
  }
  if (c.contains("fusion")) fusion = fusion_mode_from_string(c["fusion"].get<std::string>());

  DetectorModel model = DetectorModel::init(bcfg, hcfg, fusion, 0);
  for (auto& [name, param] : model.named_params()) {
    const Tensor& stored = ckpt.tensor(name);
    if (stored.shape() != param.shape())
      throw DataError("checkpoint tensor " + name + " has shape " + shape_str(stored.shape()) +
                      ", model expects " + shape_str(param.shape()));
    Tensor dst = param;
    std::copy_n(stored.data(), stored.numel(), dst.data());
  }
  return model;
}

// ---- inference --------------------------------------------------------------------

std::vector<Detection> detect(const DetectorModel& model, const Tensor& image,
                              const DetectConfig& cfg) {
  if (cfg.scales.empty()) throw std::invalid_argument("detect: need at least one scale");
  const int A = model.head_cfg.anchors_per_location;
  std::vector<Detection> all;

  for (int target : cfg.scales) {
    ResizeResult rr = resize_shorter_side(image, {}, target);
    const Tensor padded = pad_to_multiple(rr.image, 128);
    Tape tape(/*recording=*/false);
    const HeadOutputs outputs = model.forward(tape, padded, HeadMode::kInfer);

    for (std::size_t lvl = 0; lvl < outputs.cls_logits.size(); ++lvl) {
      const Tensor& cls = outputs.cls_logits[lvl];
      const Tensor& reg = outputs.reg_deltas[lvl];
      const int h = cls.dim(1), w = cls.dim(2);
      const std::size_t hw = static_cast<std::size_t>(h) * w;
      const std::vector<Anchor> anchors = generate_anchors(kMinLevel + static_cast<int>(lvl), h, w);
      for (int a = 0; a < A; ++a) {
        for (std::size_t p = 0; p < hw; ++p) {
          const double score = stable_sigmoid(cls.data()[static_cast<std::size_t>(a) * hw + p]);
          if (score < cfg.score_threshold) continue;
          const std::array<double, 4> delta = {
              reg.data()[(static_cast<std::size_t>(a) * 4 + 0) * hw + p],
              reg.data()[(static_cast<std::size_t>(a) * 4 + 1) * hw + p],
              reg.data()[(static_cast<std::size_t>(a) * 4 + 2) * hw + p],
              reg.data()[(static_cast<std::size_t>(a) * 4 + 3) * hw + p]};
          const Anchor& anchor = anchors[p * static_cast<std::size_t>(A) + a];
          Box box = decode_box(anchor.box, delta);
          box.x1 /= rr.scale;
          box.y1 /= rr.scale;
          box.x2 /= rr.scale;
          box.y2 /= rr.scale;
          all.push_back({box, score});
        }
      }
    }
  }

  std::vector<Detection> out;
  for (int idx : nms(all, cfg.nms_threshold)) out.push_back(all[static_cast<std::size_t>(idx)]);
  return out;
}

// ---- evaluation --------------------------------------------------------------------

namespace {

int size_bucket(const Box& b) {
  const double s = b.size();
  if (s < 32.0) return 0;
  if (s <= 96.0) return 1;
  return 2;
}

struct FlatDet {
  int image = 0;
  int index = 0;
  double score = 0;
  int matched_gt = -1;  // index into the image's gt list
};

double ap_from_flags(const std::vector<FlatDet>& dets,
                     const std::vector<std::vector<Box>>& gts_per_image, int bucket,
                     int bucket_gts, std::vector<PRPoint>* curve) {
  if (bucket_gts == 0) return 0.0;
  std::vector<double> precision, recall, score;
  int tp = 0, fp = 0;
  for (const FlatDet& d : dets) {
    if (d.matched_gt >= 0) {
      const Box& gt = gts_per_image[static_cast<std::size_t>(d.image)][static_cast<std::size_t>(d.matched_gt)];
      if (bucket >= 0 && size_bucket(gt) != bucket) continue;  // ignored
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / bucket_gts);
    score.push_back(d.score);
  }
  if (curve) {
    curve->clear();
    for (std::size_t i = 0; i < precision.size(); ++i)
      curve->push_back({score[i], precision[i], recall[i]});
  }
  // all-points interpolation: integrate the precision envelope
  double ap = 0, env = 0;
  for (std::size_t i = precision.size(); i-- > 0;) {
    env = std::max(env, precision[i]);
    const double r_prev = i == 0 ? 0.0 : recall[i - 1];
    if (recall[i] > r_prev) ap += (recall[i] - r_prev) * env;
  }
  return ap;
}

}  // namespace

EvalReport evaluate(const std::vector<std::vector<Detection>>& dets_per_image,
                    const std::vector<std::vector<Box>>& gts_per_image, double iou_thresh) {
  if (dets_per_image.size() != gts_per_image.size())
    throw std::invalid_argument("evaluate: detections and ground truths must align per image");

  std::vector<FlatDet> flat;
  for (std::size_t img = 0; img < dets_per_image.size(); ++img)
    for (std::size_t d = 0; d < dets_per_image[img].size(); ++d)
      flat.push_back({static_cast<int>(img), static_cast<int>(d), dets_per_image[img][d].score, -1});
  std::sort(flat.begin(), flat.end(), [](const FlatDet& a, const FlatDet& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image != b.image) return a.image < b.image;
    return a.index < b.index;
  });

  // greedy matching, one detection per gt
  std::vector<std::vector<char>> taken(gts_per_image.size());
  for (std::size_t img = 0; img < gts_per_image.size(); ++img)
    taken[img].assign(gts_per_image[img].size(), 0);
  for (FlatDet& d : flat) {
    const auto& gts = gts_per_image[static_cast<std::size_t>(d.image)];
    const Box& box = dets_per_image[static_cast<std::size_t>(d.image)][static_cast<std::size_t>(d.index)].box;
    double best = -1.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[static_cast<std::size_t>(d.image)][g]) continue;
      const double v = iou(box, gts[g]);
      if (v >= iou_thresh && v > best) {  // ties keep the lowest gt index
        best = v;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0) {
      d.matched_gt = best_gt;
      taken[static_cast<std::size_t>(d.image)][static_cast<std::size_t>(best_gt)] = 1;
    }
  }

  EvalReport report;
  int total_gts = 0;
  int bucket_counts[3] = {0, 0, 0};
  for (const auto& gts : gts_per_image)
    for (const Box& gt : gts) {
      ++total_gts;
      ++bucket_counts[size_bucket(gt)];
    }
  report.num_gts = total_gts;
  report.num_detections = static_cast<int>(flat.size());
  report.ap = ap_from_flags(flat, gts_per_image, -1, total_gts, &report.curve);
  report.ap_small = ap_from_flags(flat, gts_per_image, 0, bucket_counts[0], nullptr);
  report.ap_medium = ap_from_flags(flat, gts_per_image, 1, bucket_counts[1], nullptr);
  report.ap_large = ap_from_flags(flat, gts_per_image, 2, bucket_counts[2], nullptr);
  return report;
}

json EvalReport::to_json() const {
  json j;
  j["ap"] = ap;
  j["ap_small"] = ap_small;
  j["ap_medium"] = ap_medium;
  j["ap_large"] = ap_large;
  j["num_detections"] = num_detections;
  j["num_gts"] = num_gts;
  json curve_json = json::array();
  for (const PRPoint& p : curve)
    curve_json.push_back({{"score", p.score}, {"precision", p.precision}, {"recall", p.recall}});
  j["pr_curve"] = curve_json;
  return j;
}

EvalReport evaluate_model(const DetectorModel& model, const std::vector<Sample>& test_set,
                          const DetectConfig& cfg, double iou_thresh) {
  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<Box>> gts;
  for (const Sample& s : test_set) {
    dets.push_back(detect(model, s.image, cfg));
    gts.push_back(s.boxes);
  }
  return evaluate(dets, gts, iou_thresh);
}

// ---- ablation ----------------------------------------------------------------------

std::vector<AblationRow> ablation_run(const std::vector<AblationVariant>& variants,
                                      const std::vector<Sample>& train_set,
                                      const std::vector<Sample>& test_set,
                                      const std::vector<uint64_t>& seeds,
                                      const DetectConfig& dcfg, int workers) {
  struct Job {
    std::size_t variant;
    uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t v = 0; v < variants.size(); ++v)
    for (uint64_t s : seeds) jobs.push_back({v, s});

  std::vector<AblationRow> rows(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;

  auto worker = [&]() {
    while (true) {
      const std::size_t j = next.fetch_add(1);
      if (j >= jobs.size()) return;
      try {
        TrainConfig cfg = variants[jobs[j].variant].config;
        cfg.seed = jobs[j].seed;
        TrainResult tr = train(cfg, train_set);
        rows[j] = {variants[jobs[j].variant].name, jobs[j].seed,
                   evaluate_model(tr.model, test_set, dcfg)};
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };

  const int n_workers = std::max(1, std::min<int>(workers, static_cast<int>(jobs.size())));
  std::vector<std::thread> pool;
  for (int t = 0; t < n_workers; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return rows;
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows,
                        const json& config_echo) {
  std::ofstream out(path);
  if (!out) throw DataError(path + ": cannot write ablation table");
  out << "# config: " << config_echo.dump() << "\n";
  out << "variant,seed,ap,ap_small,ap_medium,ap_large\n";
  out.precision(17);
  for (const AblationRow& r : rows)
    out << r.variant << "," << r.seed << "," << r.report.ap << "," << r.report.ap_small << ","
        << r.report.ap_medium << "," << r.report.ap_large << "\n";
}

}  // namespace facedet
