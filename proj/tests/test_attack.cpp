#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>

#include "tslc/attack.hpp"
#include "tslc/registry.hpp"
#include "tslc/train.hpp"

using namespace tslc;
using namespace tslc::model;
using namespace tslc::attack;
using namespace tslc::data;

namespace {

// Shared desk benchmark: public model pretrained on its own distribution,
// plain victim fine-tuned from it, hybrid victim sliced on the frozen
// public backbone.
struct Bench {
  Dataset victim_train, victim_eval, attacker_query, attacker_eval;
  GraphSpec public_model;
  GraphSpec victim;  // plain, fully fine-tuned
  GraphSpec hybrid;  // sparse slices on the public backbone

  explicit Bench(std::uint64_t seed) {
    Rng gen(seed);
    Rng vic_rng = gen.split(1);
    Dataset pool = make_gaussian_mixture(1500, 10, 64, 1.2f, 0.7f, vic_rng);
    victim_train = pool.subset(0, 700);
    victim_eval = pool.subset(700, 260);
    attacker_query = pool.subset(960, 280);
    attacker_eval = pool.subset(1240, 260);

    Rng pub_rng = gen.split(2);
    Dataset pub_pool = make_gaussian_mixture(700, 10, 64, 1.2f, 0.7f, pub_rng);

    Rng arch_rng = gen.split(3);
    GraphSpec blank = build_backbone("mlp-s", arch_rng);

    train::TrainConfig pub_tc;
    pub_tc.epochs = 20;
    pub_tc.seed = gen.split(4).seed();
    public_model = train::train_full(blank, pub_pool, pub_tc);
    public_model.role = Role::BACKBONE;

    train::TrainConfig vic_tc;
    vic_tc.epochs = 25;
    vic_tc.seed = gen.split(5).seed();
    victim = train::train_full(public_model, victim_train, vic_tc);
    victim.role = Role::VICTIM;

    Rng slice_rng = gen.split(6);
    GraphSpec dense_in = attach_slices(public_model, SlicePolicy::DENSE_CNN, slice_rng);
    train::TrainConfig dense_tc;
    dense_tc.epochs = 25;
    dense_tc.seed = gen.split(7).seed();
    GraphSpec dense = train::train_dense(dense_in, victim_train, dense_tc);

    const double acc_vic =
        accuracy(victim, victim_eval.features_tensor(), victim_eval.labels_tensor());
    train::PruneConfig pc;
    pc.rounds = 10;
    pc.epochs_per_round = 2;
    pc.seed = gen.split(8).seed();
    hybrid = train::iterative_prune(dense, victim_train, victim_eval, acc_vic, pc).model;
  }
};

Bench& bench() {
  static Bench b(7001);
  return b;
}

std::vector<std::uint8_t> param_bytes(const GraphSpec& g) {
  std::vector<std::uint8_t> out;
  for (const auto& l : g.layers)
    for (const auto& [_, t] : l.params) {
      const auto* p = reinterpret_cast<const std::uint8_t*>(t.f32().data());
      out.insert(out.end(), p, p + t.numel() * 4);
    }
  return out;
}

}  // namespace

TEST_CASE("make_partition endpoints and parameter validation") {
  const Bench& b = bench();
  CHECK(make_partition(b.victim, {Strategy::BLACK_BOX, 0, 0.0})
            .flops(b.victim)
            .percent_tee() == 1.0);
  CHECK(make_partition(b.victim, {Strategy::NO_SHIELD, 0, 0.0})
            .flops(b.victim)
            .percent_tee() == 0.0);
  CHECK_THROWS_AS(make_partition(b.victim, {Strategy::DEEP_K, 99, 0.0}), ConfigError);
  CHECK_THROWS_AS(make_partition(b.victim, {Strategy::SHALLOW_K, 0, 0.0}), ConfigError);
  CHECK_THROWS_AS(make_partition(b.victim, {Strategy::MAGNITUDE_RATIO, 0, 1.5}), ConfigError);
  // TEESLICE needs a sliced victim.
  CHECK_THROWS_AS(make_partition(b.victim, {Strategy::TEESLICE, 0, 0.0}), ConfigError);
}

TEST_CASE("magnitude plans hide exactly ceil(m * weight_count) entries") {
  const Bench& b = bench();
  PartitionPlan plan = make_partition(b.victim, {Strategy::MAGNITUDE_RATIO, 0, 0.01});
  std::int64_t weights = 0, hidden = 0;
  for (const auto& [id, counts] : plan.hidden_counts) {
    hidden += counts.first;
    weights += counts.second;
  }
  CHECK(hidden == static_cast<std::int64_t>(std::ceil(0.01 * static_cast<double>(weights))));

  // The masks mark the same number of entries.
  std::int64_t marked = 0;
  for (const auto& [id, mask] : plan.hidden_masks)
    for (auto v : mask) marked += v;
  CHECK(marked == hidden);
}

TEST_CASE("init_surrogate transplants exactly the exposed weights") {
  const Bench& b = bench();
  Rng rng(601);

  // No shield: weight-exact copy of the victim.
  PartitionPlan none = make_partition(b.victim, {Strategy::NO_SHIELD, 0, 0.0});
  GraphSpec m0 = init_surrogate(b.public_model, none, b.victim, rng);
  CHECK(param_bytes(m0) == param_bytes(b.victim));

  // Black box: the public model unchanged.
  PartitionPlan black = make_partition(b.victim, {Strategy::BLACK_BOX, 0, 0.0});
  GraphSpec m1 = init_surrogate(b.public_model, black, b.victim, rng);
  CHECK(param_bytes(m1) == param_bytes(b.public_model));

  // Magnitude(m): per masked layer, a 1-m fraction equals the victim.
  const double m = 0.25;
  PartitionPlan mag = make_partition(b.victim, {Strategy::MAGNITUDE_RATIO, 0, m});
  GraphSpec m2 = init_surrogate(b.public_model, mag, b.victim, rng);
  std::int64_t total = 0, equal_vic = 0;
  for (std::size_t i = 0; i < b.victim.layers.size(); ++i) {
    const auto& vl = b.victim.layers[i];
    if (!mag.hidden_masks.count(vl.id)) continue;
    for (const auto& [name, vt] : vl.params) {
      const Tensor& st = m2.layers[i].param(name);
      for (std::int64_t j = 0; j < vt.numel(); ++j) {
        ++total;
        if (st.f32()[j] == vt.f32()[j]) ++equal_vic;
      }
    }
  }
  const double frac = static_cast<double>(equal_vic) / static_cast<double>(total);
  CHECK(frac == doctest::Approx(1.0 - m).epsilon(0.02));

  // Architecture mismatch is rejected.
  Rng arng(602);
  GraphSpec other = build_backbone("cnn-s", arng);
  CHECK_THROWS_AS(init_surrogate(other, none, b.victim, rng), ConfigError);
}

TEST_CASE("teeslice exposes only the public backbone plus a fresh head") {
  const Bench& b = bench();
  Rng rng(603);
  PartitionPlan plan = make_partition(b.hybrid, {Strategy::TEESLICE, 0, 0.0});
  GraphSpec m_init = init_surrogate(b.public_model, plan, b.hybrid, rng);

  CHECK(m_init.slices.empty());
  for (std::size_t i = 0; i < m_init.layers.size(); ++i) {
    const auto& il = m_init.layers[i];
    const auto& pl = b.public_model.layers[i];
    if (il.kind == LayerKind::Classifier) {
      // Freshly initialized: matches neither the public nor the hybrid head.
      CHECK(std::memcmp(il.param("weight").f32().data(), pl.param("weight").f32().data(),
                        static_cast<std::size_t>(pl.param("weight").numel()) * 4) != 0);
      const auto& hl = b.hybrid.layers[i];
      CHECK(std::memcmp(il.param("weight").f32().data(), hl.param("weight").f32().data(),
                        static_cast<std::size_t>(hl.param("weight").numel()) * 4) != 0);
    } else {
      for (const auto& [name, t] : il.params)
        CHECK(std::memcmp(t.f32().data(), pl.param(name).f32().data(),
                          static_cast<std::size_t>(t.numel()) * 4) == 0);
    }
  }
}

TEST_CASE("steal with zero epochs returns the initialization") {
  const Bench& b = bench();
  Rng rng(604);
  PartitionPlan black = make_partition(b.victim, {Strategy::BLACK_BOX, 0, 0.0});
  GraphSpec m_init = init_surrogate(b.public_model, black, b.victim, rng);
  StealConfig sc;
  sc.epochs = 0;
  GraphSpec m_sur = steal(local_oracle(b.victim), m_init, b.attacker_query, sc);
  CHECK(param_bytes(m_sur) == param_bytes(m_init));
}

TEST_CASE("evaluate_attack: fidelity of the victim against itself is 1") {
  const Bench& b = bench();
  StealReport self = evaluate_attack(b.victim, b.victim, b.attacker_eval);
  CHECK(self.fidelity == 1.0);
  CHECK(self.accuracy > 0.5);

  // A constant-output surrogate sits at chance accuracy on a balanced split.
  GraphSpec constant = b.public_model.deep_clone();
  for (auto& l : constant.layers)
    if (l.kind == LayerKind::Classifier) {
      std::fill(l.param("weight").f32().begin(), l.param("weight").f32().end(), 0.0f);
      std::fill(l.param("bias").f32().begin(), l.param("bias").f32().end(), 0.0f);
      l.param("bias").f32()[3] = 100.0f;
    }
  StealReport flat = evaluate_attack(constant, b.victim, b.attacker_eval);
  CHECK(flat.accuracy <= 0.25);
}

TEST_CASE("seeded ordering: richer initializations steal at least as well") {
  const Bench& b = bench();
  Rng rng(605);
  StealConfig sc;
  sc.epochs = 12;
  sc.seed = 606;
  sc.query_budget = 220;

  PartitionPlan none = make_partition(b.victim, {Strategy::NO_SHIELD, 0, 0.0});
  PartitionPlan black = make_partition(b.victim, {Strategy::BLACK_BOX, 0, 0.0});
  GraphSpec sur_none =
      steal(local_oracle(b.victim), init_surrogate(b.public_model, none, b.victim, rng),
            b.attacker_query, sc);
  GraphSpec sur_black =
      steal(local_oracle(b.victim), init_surrogate(b.public_model, black, b.victim, rng),
            b.attacker_query, sc);
  const double acc_none = evaluate_attack(sur_none, b.victim, b.attacker_eval).accuracy;
  const double acc_black = evaluate_attack(sur_black, b.victim, b.attacker_eval).accuracy;
  CHECK(acc_none >= acc_black - 1e-9);
}

TEST_CASE("sweep emits the curve, endpoints and a sweet spot") {
  const Bench& b = bench();
  SweepInputs in{b.victim, b.hybrid, b.public_model, b.attacker_query, b.attacker_eval};
  StealConfig sc;
  sc.epochs = 10;
  sc.seed = 607;

  std::vector<PartitionConfig> configs = {
      {Strategy::BLACK_BOX, 0, 0.0},
      {Strategy::NO_SHIELD, 0, 0.0},
      {Strategy::DEEP_K, 2, 0.0},
      {Strategy::TEESLICE, 0, 0.0},
  };
  SweepCurve curve = sweep(in, configs, sc, 0.05);
  REQUIRE(curve.points.size() == 4);
  CHECK(curve.points[0].utility == 1.0);  // black-box
  CHECK(curve.points[1].utility == 0.0);  // no-shield
  CHECK(curve.security_black == curve.points[0].security);

  // The no-shield surrogate is the victim itself.
  CHECK(curve.points[1].report.fidelity == 1.0);
  CHECK(curve.points[1].report.query_count == 0);

  // Delta = infinity: the constraint is vacuous, min utility wins.
  SweepCurve vac = sweep(in, configs, sc, 1e30);
  REQUIRE(vac.sweet_spot.has_value());
  CHECK(vac.sweet_spot->strategy == Strategy::NO_SHIELD);

  // Black-box alone: its own point is the sweet spot at utility 1.
  std::vector<PartitionConfig> only_black = {{Strategy::BLACK_BOX, 0, 0.0}};
  SweepCurve bb = sweep(in, only_black, sc, 0.05);
  REQUIRE(bb.sweet_spot.has_value());
  CHECK(bb.sweet_spot->strategy == Strategy::BLACK_BOX);
  CHECK(bb.points[0].utility == 1.0);

  // Identical seeds give identical reports.
  SweepCurve again = sweep(in, configs, sc, 0.05);
  for (std::size_t i = 0; i < curve.points.size(); ++i) {
    CHECK(again.points[i].security == curve.points[i].security);
    CHECK(again.points[i].report.fidelity == curve.points[i].report.fidelity);
    CHECK(again.points[i].utility == curve.points[i].utility);
  }
}

TEST_CASE("partition config names round-trip through parse") {
  for (const char* name : {"no-shield", "black-box", "teeslice", "deep-3", "shallow-2"}) {
    PartitionConfig c = PartitionConfig::parse(name);
    CHECK(c.name() == name);
  }
  PartitionConfig mag = PartitionConfig::parse("magnitude-0.0100");
  CHECK(mag.strategy == Strategy::MAGNITUDE_RATIO);
  CHECK(mag.m == doctest::Approx(0.01));
  CHECK_THROWS_AS(PartitionConfig::parse("mystery"), ConfigError);
}
