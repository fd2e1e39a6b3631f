#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "facedet/config.hpp"
#include "facedet/trainer.hpp"
#include "oracles.hpp"

using namespace facedet;
namespace fs = std::filesystem;

namespace {

// tiny model + tiny dataset so train() runs in milliseconds
TrainConfig tiny_config(int steps) {
  TrainConfig cfg;
  cfg.steps = steps;
  cfg.batch_size = 2;
  cfg.backbone.widths = {8, 12, 16, 24};
  cfg.head.trunk_width = 8;
  cfg.seed = 7;
  return cfg;
}

std::vector<Sample> tiny_dataset(int n = 3) {
  Rng rng(100);
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.image = Tensor::uniform({1, 128, 128}, 0.0, 0.5, rng);
    const double size = rng.uniform(14.0, 40.0);
    const double x = rng.uniform(0.0, 128.0 - size), y = rng.uniform(0.0, 128.0 - size);
    s.boxes.push_back({x, y, x + size, y + size});
    // draw the blob so it is learnable
    for (int yy = static_cast<int>(y); yy < static_cast<int>(y + size); ++yy)
      for (int xx = static_cast<int>(x); xx < static_cast<int>(x + size); ++xx)
        s.image.data()[static_cast<std::size_t>(yy) * 128 + xx] = 0.9;
    s.source = "mem" + std::to_string(i);
    out.push_back(std::move(s));
  }
  return out;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("learning rate schedule decays by 0.1 at the configured fractions") {
  TrainConfig cfg = tiny_config(300);
  cfg.base_lr = 0.01;
  CHECK(lr_at_step(cfg, 0) == doctest::Approx(0.01));
  CHECK(lr_at_step(cfg, 199) == doctest::Approx(0.01));
  CHECK(lr_at_step(cfg, 200) == doctest::Approx(0.001));
  CHECK(lr_at_step(cfg, 249) == doctest::Approx(0.001));
  CHECK(lr_at_step(cfg, 250) == doctest::Approx(0.0001));
}

TEST_CASE("train with lr 0 leaves parameters at their initial values") {
  TrainConfig cfg = tiny_config(3);
  cfg.base_lr = 0.0;
  const auto data = tiny_dataset();
  TrainResult result = train(cfg, data);
  DetectorModel fresh = DetectorModel::init(cfg.backbone, cfg.head, cfg.fusion, cfg.seed);
  const auto trained = result.model.named_params();
  const auto initial = fresh.named_params();
  REQUIRE(trained.size() == initial.size());
  for (std::size_t i = 0; i < trained.size(); ++i)
    for (std::size_t j = 0; j < trained[i].second.numel(); ++j)
      CHECK(trained[i].second.data()[j] == initial[i].second.data()[j]);
}

TEST_CASE("fixed-seed training is bit-reproducible") {
  TrainConfig cfg = tiny_config(4);
  const auto data = tiny_dataset();
  TrainResult a = train(cfg, data);
  TrainResult b = train(cfg, data);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].total == b.log[i].total);
    CHECK(a.log[i].cls == b.log[i].cls);
    CHECK(a.log[i].reg == b.log[i].reg);
    CHECK(a.log[i].seg == b.log[i].seg);
  }
  const auto pa = a.model.params(), pb = b.model.params();
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t j = 0; j < pa[i].numel(); ++j)
      CHECK(pa[i].data()[j] == pb[i].data()[j]);
}

TEST_CASE("training loss gradient reaches every fusion block") {
  TrainConfig cfg = tiny_config(1);
  DetectorModel model = DetectorModel::init(cfg.backbone, cfg.head, cfg.fusion, 11);
  const auto data = tiny_dataset(1);
  Tape tape;
  Tensor img = pad_to_multiple(data[0].image, 128);
  HeadOutputs out = model.forward(tape, img, HeadMode::kTrain);
  LevelTargets targets = build_targets(out, data[0].boxes, cfg.head.anchors_per_location);
  TotalLoss tl = total_loss(tape, out, targets.labels, targets.seg, cfg.weights, cfg.focal,
                            cfg.head.anchors_per_location);
  model.zero_grads();
  tape.backward(tl.value);
  CHECK(std::isfinite(tl.value.item()));
  for (const FusionBlock& blk : model.fusion) {
    double mass = 0;
    bool finite = true;
    for (std::size_t i = 0; i < blk.w.numel(); ++i) {
      mass += std::abs(blk.w.grad()[i]);
      finite = finite && std::isfinite(blk.w.grad()[i]);
    }
    CHECK(mass > 0.0);
    CHECK(finite);
  }
}

TEST_CASE("training rejects an empty dataset and non-finite losses") {
  TrainConfig cfg = tiny_config(2);
  CHECK_THROWS_AS(train(cfg, {}), DataError);
  cfg.base_lr = 1e14;  // diverges within a couple of steps
  cfg.steps = 8;
  CHECK_THROWS_WITH_AS(train(cfg, tiny_dataset()), doctest::Contains("non-finite"), NumericError);
}

TEST_CASE("checkpoint round trips") {
  TempDir dir("facedet_ckpt_test");
  TrainConfig cfg = tiny_config(2);
  const auto data = tiny_dataset();
  TrainResult result = train(cfg, data);

  RunConfig rc;
  rc.train = cfg;
  Checkpoint ckpt = make_checkpoint(result.model, rc.to_json(), cfg.steps, result.final_rng_state);
  const std::string p1 = (dir.path / "a.ckpt").string();
  const std::string p2 = (dir.path / "b.ckpt").string();
  ckpt.save(p1);

  SUBCASE("save -> load -> save is byte identical") {
    Checkpoint loaded = Checkpoint::load(p1);
    loaded.save(p2);
    CHECK(slurp(p1) == slurp(p2));
  }
  SUBCASE("load -> forward matches pre-save forward bitwise") {
    Checkpoint loaded = Checkpoint::load(p1);
    DetectorModel restored = model_from_checkpoint(loaded);
    Rng rng(55);
    Tensor image = Tensor::uniform({1, 128, 128}, 0.0, 1.0, rng);
    Tape t1(false), t2(false);
    HeadOutputs a = result.model.forward(t1, image, HeadMode::kInfer);
    HeadOutputs b = restored.forward(t2, image, HeadMode::kInfer);
    for (int lvl = 0; lvl < 6; ++lvl) {
      for (std::size_t i = 0; i < a.cls_logits[lvl].numel(); ++i)
        CHECK(a.cls_logits[lvl].data()[i] == b.cls_logits[lvl].data()[i]);
      for (std::size_t i = 0; i < a.reg_deltas[lvl].numel(); ++i)
        CHECK(a.reg_deltas[lvl].data()[i] == b.reg_deltas[lvl].data()[i]);
    }
  }
  SUBCASE("missing tensors and shape mismatches are rejected") {
    Checkpoint loaded = Checkpoint::load(p1);
    loaded.tensors.erase(loaded.tensors.begin());
    CHECK_THROWS_AS(model_from_checkpoint(loaded), DataError);
  }
}

TEST_CASE("detect maps boxes back through the resize scale exactly") {
  TrainConfig cfg = tiny_config(0);
  DetectorModel model = DetectorModel::init(cfg.backbone, cfg.head, cfg.fusion, 3);
  // raise the cls bias so the untrained detector fires everywhere
  for (std::size_t i = 0; i < model.heads.cls.b.numel(); ++i) model.heads.cls.b.data()[i] = 0.0;

  Rng rng(42);
  Tensor image = Tensor::uniform({1, 128, 128}, 0.0, 1.0, rng);
  Tensor upscaled = bilinear_resize(image, 256, 256);

  DetectConfig dcfg;
  dcfg.scales = {256};
  dcfg.score_threshold = 0.4;
  dcfg.nms_threshold = 0.3;
  const auto from_small = detect(model, image, dcfg);     // resized 2x internally, mapped by 1/2
  const auto from_large = detect(model, upscaled, dcfg);  // scale 1.0
  REQUIRE(!from_small.empty());
  REQUIRE(from_small.size() == from_large.size());
  for (std::size_t i = 0; i < from_small.size(); ++i) {
    CHECK(from_small[i].score == from_large[i].score);
    CHECK(from_small[i].box.x1 == doctest::Approx(from_large[i].box.x1 / 2).epsilon(1e-12));
    CHECK(from_small[i].box.y1 == doctest::Approx(from_large[i].box.y1 / 2).epsilon(1e-12));
    CHECK(from_small[i].box.x2 == doctest::Approx(from_large[i].box.x2 / 2).epsilon(1e-12));
    CHECK(from_small[i].box.y2 == doctest::Approx(from_large[i].box.y2 / 2).epsilon(1e-12));
  }
}

TEST_CASE("blank image with a background-biased model yields no detections at 0.5") {
  TrainConfig cfg = tiny_config(0);
  DetectorModel model = DetectorModel::init(cfg.backbone, cfg.head, cfg.fusion, 3);
  Tensor blank = Tensor::zeros({1, 128, 128});
  DetectConfig dcfg;
  dcfg.score_threshold = 0.5;
  CHECK(detect(model, blank, dcfg).empty());
}

TEST_CASE("evaluate hand cases") {
  SUBCASE("perfect detections give AP 1") {
    std::vector<std::vector<Box>> gts = {{{0, 0, 10, 10}, {30, 30, 50, 50}}};
    std::vector<std::vector<Detection>> dets = {
        {{{0, 0, 10, 10}, 0.9}, {{30, 30, 50, 50}, 0.8}}};
    EvalReport r = evaluate(dets, gts);
    CHECK(r.ap == doctest::Approx(1.0));
    CHECK(r.num_gts == 2);
  }
  SUBCASE("no detections give AP 0") {
    std::vector<std::vector<Box>> gts = {{{0, 0, 10, 10}}};
    std::vector<std::vector<Detection>> dets = {{}};
    CHECK(evaluate(dets, gts).ap == 0.0);
  }
  SUBCASE("TP then FP gives 1.0; FP then TP gives 0.5") {
    std::vector<std::vector<Box>> gts = {{{0, 0, 10, 10}}};
    std::vector<std::vector<Detection>> tp_first = {
        {{{0, 0, 10, 10}, 0.9}, {{60, 60, 70, 70}, 0.8}}};
    std::vector<std::vector<Detection>> fp_first = {
        {{{60, 60, 70, 70}, 0.9}, {{0, 0, 10, 10}, 0.8}}};
    CHECK(evaluate(tp_first, gts).ap == doctest::Approx(1.0));
    CHECK(evaluate(fp_first, gts).ap == doctest::Approx(0.5));
  }
  SUBCASE("bucket AP ignores detections matched to out-of-bucket gts") {
    // one small gt (16px), one large gt (128px)
    std::vector<std::vector<Box>> gts = {{{0, 0, 16, 16}, {200, 200, 328, 328}}};
    std::vector<std::vector<Detection>> dets = {
        {{{200, 200, 328, 328}, 0.95}, {{0, 0, 16, 16}, 0.9}}};
    EvalReport r = evaluate(dets, gts);
    CHECK(r.ap == doctest::Approx(1.0));
    CHECK(r.ap_small == doctest::Approx(1.0));  // the large match is ignored, not an FP
    CHECK(r.ap_large == doctest::Approx(1.0));
    CHECK(r.ap_medium == 0.0);  // no medium gts
  }
}

TEST_CASE("evaluate matches the exhaustive reference on small instances") {
  Rng rng(77);
  for (int trial = 0; trial < 400; ++trial) {
    const int n_gt = rng.uniform_int(4);       // 0..3
    const int n_det = rng.uniform_int(7);      // 0..6
    std::vector<Box> gts;
    for (int g = 0; g < n_gt; ++g) {
      const double x = rng.uniform(0, 80), y = rng.uniform(0, 80);
      const double w = rng.uniform(5, 40), h = rng.uniform(5, 40);
      gts.push_back({x, y, x + w, y + h});
    }
    std::vector<Detection> dets;
    for (int d = 0; d < n_det; ++d) {
      // half the detections perturb a gt, half are random
      if (!gts.empty() && rng.uniform() < 0.5) {
        const Box& base = gts[static_cast<std::size_t>(rng.uniform_int(n_gt))];
        const double dx = rng.uniform(-4, 4), dy = rng.uniform(-4, 4);
        dets.push_back({{base.x1 + dx, base.y1 + dy, base.x2 + dx, base.y2 + dy}, rng.uniform()});
      } else {
        const double x = rng.uniform(0, 80), y = rng.uniform(0, 80);
        dets.push_back({{x, y, x + rng.uniform(5, 40), y + rng.uniform(5, 40)}, rng.uniform()});
      }
    }

    const EvalReport fast = evaluate({dets}, {gts});
    const auto match = oracles::match_reference(dets, gts, 0.5);
    std::vector<oracles::ScoredFlag> flags;
    for (std::size_t d = 0; d < dets.size(); ++d)
      flags.push_back({dets[d].score, match[d] >= 0 ? 1 : 0});
    const double expected = oracles::ap_reference(flags, n_gt);
    CHECK(fast.ap == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("metrics csv carries the config echo and the pinned columns") {
  TempDir dir("facedet_csv_test");
  const std::string path = (dir.path / "log.csv").string();
  std::vector<StepLog> log = {{0, 0.1, 0.2, 0.3, 0.615, 0.01}, {1, 0.09, 0.19, 0.29, 0.585, 0.01}};
  write_metrics_csv(path, log, nlohmann::json{{"seed", 7}});
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line.rfind("# config:", 0) == 0);
  std::getline(in, line);
  CHECK(line == "step,L_c,L_r,L_s,total,lr");
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);
}

TEST_CASE("run config JSON round trip and strict key checking") {
  RunConfig rc;
  rc.train.steps = 123;
  rc.train.weights.lambda2 = 0.2;
  rc.detect.scales = {64, 128};
  nlohmann::json j = rc.to_json();
  RunConfig back = RunConfig::from_json(j);
  CHECK(back.train.steps == 123);
  CHECK(back.train.weights.lambda2 == doctest::Approx(0.2));
  CHECK(back.detect.scales == std::vector<int>{64, 128});

  nlohmann::json bad = j;
  bad["trian"] = 1;  // typo must be rejected, not ignored
  CHECK_THROWS_WITH_AS(RunConfig::from_json(bad), doctest::Contains("trian"), ConfigError);
  nlohmann::json bad2 = j;
  bad2["train"]["step"] = 5;
  CHECK_THROWS_AS(RunConfig::from_json(bad2), ConfigError);
}

TEST_CASE("ablation rows cover the variant x seed grid and parallel equals serial") {
  TrainConfig cfg = tiny_config(2);
  const auto data = tiny_dataset(4);
  std::vector<AblationVariant> variants;
  variants.push_back({"base", cfg});
  TrainConfig seg_off = cfg;
  seg_off.weights.lambda2 = 0.0;
  variants.push_back({"seg_off", seg_off});

  DetectConfig dcfg;
  dcfg.scales = {128};
  const std::vector<uint64_t> seeds = {1, 2};
  const auto serial = ablation_run(variants, data, data, seeds, dcfg, 1);
  const auto parallel = ablation_run(variants, data, data, seeds, dcfg, 2);
  REQUIRE(serial.size() == 4);
  REQUIRE(parallel.size() == 4);
  for (std::size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].variant == parallel[i].variant);
    CHECK(serial[i].seed == parallel[i].seed);
    CHECK(serial[i].report.ap == parallel[i].report.ap);
  }
}
