#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "tslc/flops.hpp"
#include "tslc/partition.hpp"
#include "tslc/registry.hpp"

using namespace tslc;
using namespace tslc::model;
using namespace tslc::flops;

namespace {

LayerSpec linear_spec(int c_in, int c_out) {
  LayerSpec l;
  l.kind = LayerKind::Linear;
  l.c_in = c_in;
  l.c_out = c_out;
  return l;
}

}  // namespace

TEST_CASE("per-layer formulas match hand arithmetic") {
  CHECK(layer_flops(linear_spec(768, 768), 1, 1) == 1179648);  // 2 * 768 * 768

  LayerSpec conv;
  conv.kind = LayerKind::Conv2D;
  conv.c_in = 1;
  conv.c_out = 1;
  conv.k = 1;
  CHECK(layer_flops(conv, 1, 1) == 2);

  LayerSpec bn;
  bn.kind = LayerKind::BatchNorm;
  bn.c_in = 3;
  CHECK(layer_flops(bn, 2, 2) == 24);  // 2 * 3 * 2 * 2

  LayerSpec relu;
  relu.kind = LayerKind::ReLU;
  relu.c_in = 5;
  CHECK(layer_flops(relu, 3, 3) == 45);

  LayerSpec conv2;
  conv2.kind = LayerKind::Conv2D;
  conv2.c_in = 4;
  conv2.c_out = 8;
  conv2.k = 3;
  CHECK(layer_flops(conv2, 8, 8) == 2LL * 4 * 9 * 8 * 8 * 8);

  CHECK_THROWS_AS(layer_flops(bn, 0, 0), InputError);
}

TEST_CASE("percent_tee endpoints: black-box 1.0, no-shield 0.0") {
  Rng rng(31);
  GraphSpec g = build_backbone("mlp-s", rng);

  std::vector<Placement> all_enclave(g.layers.size(), Placement::ENCLAVE);
  CHECK(percent_flops(g, all_enclave).percent_tee() == 1.0);

  std::vector<Placement> all_out(g.layers.size(), Placement::UNTRUSTED);
  CHECK(percent_flops(g, all_out).percent_tee() == 0.0);
}

TEST_CASE("mlp-s with one live slice matches the hand-summed ratio") {
  Rng rng(32);
  GraphSpec g = attach_slices(build_backbone("mlp-s", rng), SlicePolicy::DENSE_CNN, rng);
  g.slices.resize(1);  // keep a single rank-1 adapter

  // Independent spreadsheet-style arithmetic.
  const std::int64_t backbone = 4 * (2 * 64 * 64);
  const std::int64_t relus = 3 * 64;
  const std::int64_t head = 2 * 64 * 10;
  const std::int64_t slice = 2 * (64 * 1 + 1 * 64);
  const std::int64_t tee = relus + head + slice;
  const std::int64_t total = backbone + relus + head + slice;

  FlopsReport r = percent_flops(g);
  CHECK(r.total_flops == total);
  CHECK(r.tee_flops == tee);
  CHECK(r.percent_tee() == doctest::Approx(static_cast<double>(tee) / total).epsilon(1e-12));
}

TEST_CASE("additivity: totals equal the sum of parts exactly") {
  Rng rng(33);
  for (const char* arch : {"mlp-s", "cnn-s", "vit-t"}) {
    GraphSpec g = build_backbone(arch, rng);
    if (std::string(arch) != "vit-t")
      g = attach_slices(g, SlicePolicy::DENSE_CNN, rng);
    FlopsReport r = percent_flops(g);
    std::int64_t sum = 0;
    for (const auto& [id, f] : r.per_layer) sum += f;
    for (const auto& [n, f] : r.per_slice) sum += f;
    CHECK(sum == r.total_flops);
    CHECK(r.tee_flops <= r.total_flops);
  }
}

TEST_CASE("pruning a slice never increases percent_tee") {
  Rng rng(34);
  GraphSpec g = attach_slices(build_backbone("cnn-s", rng), SlicePolicy::DENSE_CNN, rng);
  double prev = percent_flops(g).percent_tee();
  while (!g.slices.empty()) {
    g.slices.pop_back();
    const double cur = percent_flops(g).percent_tee();
    CHECK(cur <= prev + 1e-15);
    prev = cur;
  }
}

TEST_CASE("partition plans drive the flops accounting") {
  Rng rng(35);
  GraphSpec victim = build_backbone("mlp-s", rng);

  using namespace tslc::attack;
  PartitionPlan black = make_partition(victim, {Strategy::BLACK_BOX, 0, 0.0});
  CHECK(black.flops(victim).percent_tee() == 1.0);
  PartitionPlan none = make_partition(victim, {Strategy::NO_SHIELD, 0, 0.0});
  CHECK(none.flops(victim).percent_tee() == 0.0);

  PartitionPlan deep = make_partition(victim, {Strategy::DEEP_K, 2, 0.0});
  const double d = deep.flops(victim).percent_tee();
  CHECK(d > 0.0);
  CHECK(d < 1.0);

  // Hidden-weight accounting: m = 1 shields every weighted layer's flops.
  PartitionPlan mag1 = make_partition(victim, {Strategy::MAGNITUDE_RATIO, 0, 1.0});
  const auto r1 = mag1.flops(victim);
  // ReLU layers are enclave-placed and weightless layers contribute whole.
  CHECK(r1.percent_tee() == doctest::Approx(1.0).epsilon(1e-9));

  PartitionPlan mag0 = make_partition(victim, {Strategy::MAGNITUDE_RATIO, 0, 0.0});
  const auto r0 = mag0.flops(victim);
  // Only the ReLU layers remain in the enclave.
  const double relu_share = 3.0 * 64 / static_cast<double>(r0.total_flops);
  CHECK(r0.percent_tee() == doctest::Approx(relu_share).epsilon(1e-9));
}
