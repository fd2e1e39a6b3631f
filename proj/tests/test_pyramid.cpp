#include <cmath>

#include "doctest.h"
#include "facedet/pyramid.hpp"

using namespace facedet;

namespace {

std::vector<Tensor> toy_backbone_maps(Rng& rng, int base = 128) {
  // strides 4..32 for a base x base input
  return {
      Tensor::uniform({16, base / 4, base / 4}, 0.1, 1.0, rng),
      Tensor::uniform({32, base / 8, base / 8}, 0.1, 1.0, rng),
      Tensor::uniform({64, base / 16, base / 16}, 0.1, 1.0, rng),
      Tensor::uniform({128, base / 32, base / 32}, 0.1, 1.0, rng),
  };
}

std::vector<FusionBlock> zero_blocks() {
  std::vector<FusionBlock> blocks;
  auto zero_block = [](int hi, int lo) {
    FusionBlock b;
    b.w = Tensor::zeros({hi, lo, 4, 4}, true);
    b.b = Tensor::zeros({lo}, true);
    return b;
  };
  blocks.push_back(zero_block(128, 64));
  blocks.push_back(zero_block(64, 32));
  blocks.push_back(zero_block(32, 16));
  return blocks;
}

}  // namespace

TEST_CASE("backbone emits strides 4..32 with configured widths") {
  BackboneConfig cfg;
  Rng rng(3);
  BackboneParams params = init_backbone(cfg, rng);
  Tensor image = Tensor::uniform({1, 128, 128}, 0.0, 1.0, rng);
  Tape tape;
  const auto maps = backbone_forward(tape, image, cfg, params);
  REQUIRE(maps.size() == 4);
  CHECK(maps[0].shape() == Shape{16, 32, 32});
  CHECK(maps[1].shape() == Shape{32, 16, 16});
  CHECK(maps[2].shape() == Shape{64, 8, 8});
  CHECK(maps[3].shape() == Shape{128, 4, 4});
}

TEST_CASE("backbone rejects sizes not divisible by 32 with a padding hint") {
  BackboneConfig cfg;
  Rng rng(4);
  BackboneParams params = init_backbone(cfg, rng);
  Tensor image = Tensor::zeros({1, 100, 128});
  Tape tape;
  CHECK_THROWS_WITH_AS(backbone_forward(tape, image, cfg, params), doctest::Contains("pad"),
                       std::invalid_argument);
}

TEST_CASE("zero image through a zero-bias backbone gives all-zero maps") {
  BackboneConfig cfg;
  Rng rng(5);
  BackboneParams params = init_backbone(cfg, rng);  // biases init to zero
  Tensor image = Tensor::zeros({1, 64, 64});
  Tape tape;
  const auto maps = backbone_forward(tape, image, cfg, params);
  for (const Tensor& m : maps)
    for (std::size_t i = 0; i < m.numel(); ++i) CHECK(m.data()[i] == 0.0);
}

TEST_CASE("fuse implements phi*psi + phi") {
  Rng rng(6);
  SUBCASE("zero parameters reduce to the identity") {
    Tensor phi_lo = Tensor::uniform({16, 8, 8}, -1, 1, rng);
    Tensor phi_hi = Tensor::uniform({32, 4, 4}, -1, 1, rng);
    FusionBlock blk;
    blk.w = Tensor::zeros({32, 16, 4, 4}, true);
    blk.b = Tensor::zeros({16}, true);
    Tape tape;
    Tensor fused = fuse(tape, phi_lo, phi_hi, blk);
    for (std::size_t i = 0; i < fused.numel(); ++i) CHECK(fused.data()[i] == phi_lo.data()[i]);
  }
  SUBCASE("zero lower map stays zero regardless of the upper map") {
    Tensor phi_lo = Tensor::zeros({16, 8, 8});
    Tensor phi_hi = Tensor::uniform({32, 4, 4}, -1, 1, rng);
    FusionBlock blk = init_fusion_block(32, 16, rng);
    Tape tape;
    Tensor fused = fuse(tape, phi_lo, phi_hi, blk);
    for (std::size_t i = 0; i < fused.numel(); ++i) CHECK(fused.data()[i] == 0.0);
  }
  SUBCASE("an all-ones transform doubles the lower map") {
    Tensor phi_lo = Tensor::uniform({16, 8, 8}, -1, 1, rng);
    Tensor phi_hi = Tensor::zeros({32, 4, 4});
    FusionBlock blk;
    blk.w = Tensor::zeros({32, 16, 4, 4}, true);
    blk.b = Tensor::full({16}, 1.0, true);  // psi == 1 everywhere
    Tape tape;
    Tensor fused = fuse(tape, phi_lo, phi_hi, blk);
    for (std::size_t i = 0; i < fused.numel(); ++i)
      CHECK(fused.data()[i] == doctest::Approx(2.0 * phi_lo.data()[i]).epsilon(1e-12));
  }
  SUBCASE("shape mismatch after the transform is rejected") {
    Tensor phi_lo = Tensor::zeros({16, 9, 9});
    Tensor phi_hi = Tensor::zeros({32, 4, 4});
    FusionBlock blk = init_fusion_block(32, 16, rng);
    Tape tape;
    CHECK_THROWS_AS(fuse(tape, phi_lo, phi_hi, blk), std::invalid_argument);
  }
}

TEST_CASE("fuse_additive differs from fuse on generic inputs") {
  Rng rng(7);
  Tensor phi_lo = Tensor::full({8, 4, 4}, 2.0);
  Tensor phi_hi = Tensor::zeros({8, 2, 2});
  FusionBlock blk;
  blk.w = Tensor::zeros({8, 8, 4, 4}, true);
  blk.b = Tensor::full({8}, 1.0, true);  // psi == 1
  Tape tape;
  Tensor mult = fuse(tape, phi_lo, phi_hi, blk);
  Tensor add = fuse_additive(tape, phi_lo, phi_hi, blk);
  CHECK(mult.data()[0] == doctest::Approx(4.0));  // 2*1 + 2
  CHECK(add.data()[0] == doctest::Approx(3.0));   // 2 + 1
  SUBCASE("additive identity cases") {
    FusionBlock zero;
    zero.w = Tensor::zeros({8, 8, 4, 4}, true);
    zero.b = Tensor::zeros({8}, true);
    Tensor id = fuse_additive(tape, phi_lo, phi_hi, zero);
    for (std::size_t i = 0; i < id.numel(); ++i) CHECK(id.data()[i] == phi_lo.data()[i]);
    Tensor zero_lo = Tensor::zeros({8, 4, 4});
    Tensor v = fuse_additive(tape, zero_lo, phi_hi, blk);
    for (std::size_t i = 0; i < v.numel(); ++i) CHECK(v.data()[i] == 1.0);
  }
}

TEST_CASE("build_pyramid") {
  Rng rng(8);
  SUBCASE("zero fusion parameters reproduce the backbone maps bitwise") {
    const auto maps = toy_backbone_maps(rng);
    Tape tape;
    const auto ffp = build_pyramid(tape, maps, zero_blocks());
    REQUIRE(ffp.size() == 6);
    for (int lvl = 0; lvl < 4; ++lvl)
      for (std::size_t i = 0; i < maps[lvl].numel(); ++i)
        CHECK(ffp[lvl].data()[i] == maps[lvl].data()[i]);
  }
  SUBCASE("spatial sizes follow the stride ladder for a 128x128 input") {
    const auto maps = toy_backbone_maps(rng, 128);
    Tape tape;
    const auto ffp = build_pyramid(tape, maps, zero_blocks());
    CHECK(ffp[0].shape() == Shape{16, 32, 32});
    CHECK(ffp[1].shape() == Shape{32, 16, 16});
    CHECK(ffp[2].shape() == Shape{64, 8, 8});
    CHECK(ffp[3].shape() == Shape{128, 4, 4});
    CHECK(ffp[4].shape() == Shape{128, 2, 2});
    CHECK(ffp[5].shape() == Shape{128, 1, 1});
  }
  SUBCASE("FFP2 depends on the top backbone map through the recursion") {
    auto maps = toy_backbone_maps(rng);
    Rng init_rng(42);
    std::vector<FusionBlock> blocks;
    blocks.push_back(init_fusion_block(128, 64, init_rng));
    blocks.push_back(init_fusion_block(64, 32, init_rng));
    blocks.push_back(init_fusion_block(32, 16, init_rng));
    Tape tape;
    const auto base = build_pyramid(tape, maps, blocks);
    // perturb the top map and rebuild
    maps[3].data()[0] += 0.5;
    const auto bumped = build_pyramid(tape, maps, blocks);
    double delta = 0;
    for (std::size_t i = 0; i < base[0].numel(); ++i)
      delta += std::abs(bumped[0].data()[i] - base[0].data()[i]);
    CHECK(delta > 0.0);
  }
}

TEST_CASE("fusion gradients flow to theta and pass finite differences") {
  Rng rng(9);
  Tensor phi_lo = Tensor::uniform({3, 8, 8}, 0.1, 1.0, rng, true);
  Tensor phi_hi = Tensor::uniform({5, 4, 4}, 0.1, 1.0, rng, true);
  Rng init_rng(10);
  FusionBlock blk = init_fusion_block(5, 3, init_rng);
  const double err = finite_diff_max_rel_error(
      [&](Tape& tape) { return tape.sum(tape.sigmoid(fuse(tape, phi_lo, phi_hi, blk))); },
      {phi_lo, phi_hi, blk.w, blk.b}, 1e-5);
  CHECK(err < 1e-4);

  Tape tape;
  Tensor loss = tape.sum(fuse(tape, phi_lo, phi_hi, blk));
  blk.w.zero_grad();
  blk.b.zero_grad();
  tape.backward(loss);
  double wsum = 0;
  for (std::size_t i = 0; i < blk.w.numel(); ++i) wsum += std::abs(blk.w.grad()[i]);
  CHECK(wsum > 0.0);
}

TEST_CASE("sigmoid-gate fusion variant is available for ablations") {
  Rng rng(11);
  Tensor phi_lo = Tensor::full({4, 4, 4}, 1.0);
  Tensor phi_hi = Tensor::zeros({4, 2, 2});
  FusionBlock blk;
  blk.w = Tensor::zeros({4, 4, 4, 4}, true);
  blk.b = Tensor::zeros({4}, true);
  Tape tape;
  Tensor out = fuse(tape, phi_lo, phi_hi, blk, FusionMode::kSigmoidGate);
  // sigmoid(0) = 0.5 gate: 1*0.5 + 1
  for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == doctest::Approx(1.5));
}
