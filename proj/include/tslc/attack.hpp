#pragma once

#include <functional>

#include "tslc/dataset.hpp"
#include "tslc/partition.hpp"

namespace tslc::attack {

/// Label-only victim access: features in, argmax labels out.
using LabelOracle = std::function<std::vector<int>(const Tensor& xs)>;

LabelOracle local_oracle(const model::GraphSpec& victim);

/// Builds M_init: a clone of the public model with every offloaded victim
/// weight transplanted in. Hidden (enclave or masked) entries keep their
/// public values. TEESLICE exposes only the public backbone, so the result
/// is the public backbone plus a freshly initialized head.
model::GraphSpec init_surrogate(const model::GraphSpec& public_model, const PartitionPlan& plan,
                                const model::GraphSpec& victim, Rng& rng);

struct StealConfig {
  int epochs = 30;
  int batch_size = 32;
  float lr = 0.05f;
  std::uint64_t seed = 7;
  std::size_t query_budget = 0;  // 0: use the whole query set
};

/// Query-based stealing: labels the query set through the oracle and trains
/// M_init on the (query, label) pairs. 0 epochs returns M_init unchanged.
model::GraphSpec steal(const LabelOracle& oracle, const model::GraphSpec& m_init,
                       const data::Dataset& query, const StealConfig& cfg);

struct StealReport {
  PartitionConfig config;
  double accuracy = 0.0;  // vs ground truth on the eval split
  double fidelity = 0.0;  // agreement with victim labels on the same split
  std::size_t query_count = 0;
  double percent_tee = 0.0;
};

StealReport evaluate_attack(const model::GraphSpec& m_sur, const model::GraphSpec& victim,
                            const data::Dataset& eval);

struct SweepPoint {
  PartitionConfig config;
  double security = 0.0;  // steal accuracy
  double utility = 0.0;   // percent FLOPs in the TEE
  StealReport report;
};

struct SweepCurve {
  std::vector<SweepPoint> points;
  double security_black = 0.0;
  double delta = 0.0;
  std::optional<PartitionConfig> sweet_spot;
  std::string status;
};

struct SweepInputs {
  const model::GraphSpec& victim_plain;   // fully fine-tuned victim
  const model::GraphSpec& victim_hybrid;  // sliced hybrid (TEESLICE points)
  const model::GraphSpec& public_model;
  const data::Dataset& query;
  const data::Dataset& eval;
};

/// Runs make_partition -> init_surrogate -> steal -> evaluate per config and
/// picks the minimum-utility config within delta of the black-box security.
/// Per-point RNG streams derive from (seed, config name).
SweepCurve sweep(const SweepInputs& in, const std::vector<PartitionConfig>& configs,
                 const StealConfig& cfg, double delta);

}  // namespace tslc::attack
