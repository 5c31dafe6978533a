#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <fstream>

#include "tslc/checkpoint.hpp"
#include "tslc/registry.hpp"
#include "tslc/train.hpp"

using namespace tslc;
using namespace tslc::model;
using namespace tslc::train;
using namespace tslc::data;

namespace {

struct Toy {
  Dataset train, eval;
};

Toy mixture_toy(std::uint64_t seed, std::size_t n_train = 600, std::size_t n_eval = 250) {
  Rng rng(seed);
  Dataset pool = make_gaussian_mixture(n_train + n_eval, 10, 64, 1.5f, 0.6f, rng);
  return {pool.subset(0, n_train), pool.subset(n_train, n_eval)};
}

std::vector<std::uint8_t> backbone_bytes(const GraphSpec& g) {
  std::vector<std::uint8_t> out;
  for (const auto& l : g.layers) {
    if (l.kind == LayerKind::Classifier) continue;
    for (const auto& [_, t] : l.params) {
      const auto* p = reinterpret_cast<const std::uint8_t*>(t.f32().data());
      out.insert(out.end(), p, p + t.numel() * 4);
    }
  }
  return out;
}

std::vector<std::uint8_t> all_param_bytes(GraphSpec& g) {
  std::vector<std::uint8_t> out;
  for (auto t : g.all_params()) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.f32().data());
    out.insert(out.end(), p, p + t.numel() * 4);
  }
  return out;
}

}  // namespace

TEST_CASE("zero epochs leave every weight untouched") {
  Rng rng(40);
  GraphSpec dense = attach_slices(build_backbone("mlp-s", rng), SlicePolicy::DENSE_CNN, rng);
  Toy toy = mixture_toy(41);
  TrainConfig tc;
  tc.epochs = 0;
  tc.lambda_complexity = 0.0f;
  GraphSpec out = train_dense(dense, toy.train, tc);
  CHECK(all_param_bytes(out) == all_param_bytes(dense));
}

TEST_CASE("dense training reaches 95% on a separable two-class toy") {
  Rng rng(42);
  GraphSpec backbone = build_backbone("mlp-s", rng, 2);
  GraphSpec dense_in = attach_slices(backbone, SlicePolicy::DENSE_CNN, rng);
  Rng drng(43);
  Dataset toy = make_blobs2(400, 64, 2.0f, 0.5f, drng);

  TrainConfig tc;
  tc.epochs = 50;
  tc.lr = 0.05f;
  tc.seed = 44;
  GraphSpec dense = train_dense(dense_in, toy, tc);
  CHECK(accuracy(dense, toy.features_tensor(), toy.labels_tensor()) >= 0.95);
}

TEST_CASE("an extreme complexity penalty collapses every gate below the setup threshold") {
  Rng rng(45);
  GraphSpec dense_in = attach_slices(build_backbone("mlp-s", rng), SlicePolicy::DENSE_CNN, rng);
  Toy toy = mixture_toy(46, 300, 100);
  TrainConfig tc;
  tc.epochs = 2;
  tc.lambda_complexity = 1e6f;
  tc.seed = 47;
  GraphSpec dense = train_dense(dense_in, toy.train, tc);
  for (const auto& s : dense.slices) CHECK(std::abs(s.alpha.f32()[0]) < 0.05f);
}

TEST_CASE("empty dataset is an input error") {
  Rng rng(48);
  GraphSpec dense_in = attach_slices(build_backbone("mlp-s", rng), SlicePolicy::DENSE_CNN, rng);
  Dataset empty;
  empty.feature_dim = 64;
  empty.n_classes = 10;
  CHECK_THROWS_AS(train_dense(dense_in, empty, TrainConfig{}), InputError);
}

TEST_CASE("iterative pruning: seeded run keeps accuracy above the budget") {
  Rng rng(50);
  GraphSpec dense_in = attach_slices(build_backbone("mlp-s", rng), SlicePolicy::DENSE_CNN, rng);
  Toy toy = mixture_toy(51);
  TrainConfig tc;
  tc.epochs = 25;
  tc.seed = 52;
  GraphSpec dense = train_dense(dense_in, toy.train, tc);
  const double acc_vic =
      accuracy(dense, toy.eval.features_tensor(), toy.eval.labels_tensor());
  REQUIRE(acc_vic > 0.9);

  const auto before = backbone_bytes(dense);

  PruneConfig pc;
  pc.rounds = 12;
  pc.n = 1;
  pc.epochs_per_round = 2;
  pc.seed = 53;
  PruneResult res = iterative_prune(dense, toy.train, toy.eval, acc_vic, pc);

  CHECK(!res.warned_below_tol);
  CHECK(res.model.slices.size() < dense.slices.size());
  CHECK(res.acc_final >= res.acc_tol);
  CHECK(res.acc_tol == doctest::Approx(0.99 * acc_vic));
  // Live-slice count never increases across rounds.
  for (std::size_t i = 1; i < res.log.size(); ++i)
    CHECK(res.log[i].live_slices <= res.log[i - 1].live_slices);
  // Backbone bytes identical before and after.
  auto after_src = backbone_bytes(dense);
  CHECK(after_src == before);
  auto after_res = backbone_bytes(res.model);
  CHECK(after_res == before);
}

TEST_CASE("iterative pruning: unreachable budget prunes nothing and warns") {
  Rng rng(54);
  GraphSpec dense_in = attach_slices(build_backbone("mlp-s", rng), SlicePolicy::DENSE_CNN, rng);
  Toy toy = mixture_toy(55, 200, 80);
  TrainConfig tc;
  tc.epochs = 3;
  tc.seed = 56;
  GraphSpec dense = train_dense(dense_in, toy.train, tc);

  PruneConfig pc;
  pc.rounds = 4;
  pc.epochs_per_round = 1;
  pc.seed = 57;
  // acc_vic = 2.0 makes ACC_tol unreachable: the else-branch always runs.
  PruneResult res = iterative_prune(dense, toy.train, toy.eval, 2.0, pc);
  CHECK(res.warned_below_tol);
  // Setup may prune near-zero gates, but no round prunes anything.
  for (std::size_t i = 1; i < res.log.size(); ++i)
    CHECK(res.log[i].live_slices == res.log[0].live_slices);
}

TEST_CASE("iterative pruning: n >= live count empties the slice set in one pass") {
  Rng rng(58);
  GraphSpec dense_in = attach_slices(build_backbone("mlp-s", rng), SlicePolicy::DENSE_CNN, rng);
  Toy toy = mixture_toy(59, 300, 120);
  TrainConfig tc;
  tc.epochs = 20;
  tc.seed = 60;
  GraphSpec dense = train_dense(dense_in, toy.train, tc);
  const double acc_vic = accuracy(dense, toy.eval.features_tensor(), toy.eval.labels_tensor());

  PruneConfig pc;
  pc.rounds = 3;
  pc.n = 99;
  pc.epochs_per_round = 1;
  pc.seed = 61;
  PruneResult res = iterative_prune(dense, toy.train, toy.eval, acc_vic, pc);
  // After the first passing round everything is gone; later snapshots can
  // only be the classifier-head-only model.
  CHECK(res.log.back().live_slices == 0);
}

TEST_CASE("lora magnitude: sums |w| and homogeneity") {
  Rng rng(62);
  GraphSpec lora = attach_slices(build_backbone("vit-t", rng), SlicePolicy::LORA_ALL, rng);
  SliceAdapter& s = lora.slices[0];
  std::fill(s.down.f32().begin(), s.down.f32().end(), 0.0f);
  std::fill(s.up.f32().begin(), s.up.f32().end(), 0.0f);
  CHECK(lora_magnitude(s) == 0.0);

  s.down.f32()[0] = 1.0f;
  s.down.f32()[1] = -2.0f;
  s.up.f32()[0] = 3.0f;
  CHECK(lora_magnitude(s) == doctest::Approx(6.0));

  for (auto& v : s.down.f32()) v *= 2.0f;
  for (auto& v : s.up.f32()) v *= 2.0f;
  CHECK(lora_magnitude(s) == doctest::Approx(12.0));

  GraphSpec conv = attach_slices(build_backbone("cnn-s", rng), SlicePolicy::DENSE_CNN, rng);
  CHECK_THROWS_AS(lora_magnitude(conv.slices[0]), ContractError);
}

TEST_CASE("magnitude pruning: a hand-zeroed adapter goes first") {
  Rng rng(63);
  GraphSpec lora_in = attach_slices(build_backbone("vit-t", rng), SlicePolicy::LORA_ALL, rng);
  Toy toy = mixture_toy(64, 300, 120);
  TrainConfig tc;
  tc.epochs = 10;
  tc.lambda_complexity = 0.0f;
  tc.seed = 65;
  GraphSpec dense = train_dense(lora_in, toy.train, tc);
  // Zero one adapter by hand; it has the smallest magnitude.
  const std::string victim_name = dense.slices[2].name();
  std::fill(dense.slices[2].down.f32().begin(), dense.slices[2].down.f32().end(), 0.0f);
  std::fill(dense.slices[2].up.f32().begin(), dense.slices[2].up.f32().end(), 0.0f);

  // Two rounds: round 1 snapshots then prunes, round 2's snapshot shows it.
  PruneConfig pc;
  pc.rounds = 2;
  pc.n = 1;
  pc.epochs_per_round = 1;
  pc.seed = 66;
  PruneResult res = magnitude_prune_lora(dense, toy.train, toy.eval, 0.05, pc);
  REQUIRE(res.model.slices.size() == dense.slices.size() - 1);
  for (const auto& s : res.model.slices) CHECK(s.name() != victim_name);

  // Unreachable budget: zero pruned, no setup phase either.
  PruneResult none = magnitude_prune_lora(dense, toy.train, toy.eval, 2.0, pc);
  CHECK(none.warned_below_tol);
  CHECK(none.model.slices.size() == dense.slices.size());
}

TEST_CASE("dynamic attention: frozen-beta endpoints") {
  Rng rng(67);
  GraphSpec vit = build_backbone("vit-t", rng);
  Toy toy = mixture_toy(68, 200, 80);

  DynAttnConfig dc;
  dc.epochs = 2;
  dc.batch_size = 32;
  dc.beta_reg = 0.0f;
  dc.train_beta = false;
  dc.seed = 69;

  // beta frozen at 1: the linear path gets zero gradient, so its weights
  // stay at init and every block substitutes back to standard attention.
  auto [std_g, std_rep] = train_dynamic_attention(vit, toy.train, toy.eval, dc);
  CHECK(std_rep.sum_beta_final == doctest::Approx(std_rep.sum_beta_init));
  for (const auto& l : std_g.layers)
    if (l.kind == LayerKind::AttentionBlock) CHECK(l.attn_mode == AttnMode::Standard);
  CHECK(std_rep.acc_pre == doctest::Approx(std_rep.acc_post));

  // beta frozen at 0: pure linear-attention training.
  dc.beta_init = 0.0f;
  auto [lin_g, lin_rep] = train_dynamic_attention(vit, toy.train, toy.eval, dc);
  for (const auto& l : lin_g.layers)
    if (l.kind == LayerKind::AttentionBlock) CHECK(l.attn_mode == AttnMode::LinearAttn);
  CHECK(lin_rep.acc_pre == doctest::Approx(lin_rep.acc_post));
}

TEST_CASE("dynamic attention: seeded run shrinks beta and survives substitution") {
  Rng rng(70);
  GraphSpec vit = build_backbone("vit-t", rng);
  Toy toy = mixture_toy(71);

  DynAttnConfig dc;
  dc.epochs = 12;
  dc.batch_size = 32;
  dc.seed = 72;
  auto [g, rep] = train_dynamic_attention(vit, toy.train, toy.eval, dc);
  CHECK(rep.sum_beta_final < rep.sum_beta_init);
  CHECK(std::abs(rep.acc_post - rep.acc_pre) <= 0.02);
  for (const auto& l : g.layers)
    if (l.kind == LayerKind::AttentionBlock)
      CHECK((l.attn_mode == AttnMode::Standard || l.attn_mode == AttnMode::LinearAttn));
}

TEST_CASE("training twice with one seed is bit-identical") {
  Rng rng_a(73);
  GraphSpec in_a = attach_slices(build_backbone("mlp-s", rng_a), SlicePolicy::DENSE_CNN, rng_a);
  Rng rng_b(73);
  GraphSpec in_b = attach_slices(build_backbone("mlp-s", rng_b), SlicePolicy::DENSE_CNN, rng_b);
  Toy toy = mixture_toy(74, 300, 100);

  TrainConfig tc;
  tc.epochs = 6;
  tc.seed = 75;
  GraphSpec a = train_dense(in_a, toy.train, tc);
  GraphSpec b = train_dense(in_b, toy.train, tc);
  CHECK(all_param_bytes(a) == all_param_bytes(b));
  CHECK(serialize_graph(a) == serialize_graph(b));
}

TEST_CASE("training log CSV has the documented columns") {
  std::vector<RoundLog> log{{1, 5, 0.9, 1.2, 4.5}, {2, 4, 0.91, 1.1, 3.9}};
  const std::string path = "/tmp/tslc_train_log.csv";
  write_training_log_csv(log, path);
  std::ifstream f(path);
  std::string header;
  std::getline(f, header);
  CHECK(header == "round,live_slices,acc,loss,sum_alpha_or_mag");
  std::string row;
  int rows = 0;
  while (std::getline(f, row))
    if (!row.empty()) ++rows;
  CHECK(rows == 2);
}
