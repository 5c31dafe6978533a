#pragma once

#include <map>
#include <optional>
#include <string>

#include "tslc/flops.hpp"
#include "tslc/graph.hpp"

namespace tslc::attack {

enum class Strategy : std::uint8_t {
  NO_SHIELD = 0,
  BLACK_BOX = 1,
  DEEP_K = 2,
  SHALLOW_K = 3,
  MAGNITUDE_RATIO = 4,
  TEESLICE = 5,
};

struct PartitionConfig {
  Strategy strategy = Strategy::BLACK_BOX;
  int k = 0;       // DEEP_K / SHALLOW_K
  double m = 0.0;  // MAGNITUDE_RATIO: fraction of weights hidden

  std::string name() const;
  static PartitionConfig parse(const std::string& s);
};

/// Per-layer placement under one strategy, plus the per-weight hidden masks
/// for magnitude shielding (1 = withheld in the TEE).
struct PartitionPlan {
  PartitionConfig config;
  std::vector<model::Placement> placement;  // by layer position
  std::map<int, std::vector<std::uint8_t>> hidden_masks;
  std::map<int, std::pair<std::int64_t, std::int64_t>> hidden_counts;  // hidden/total

  flops::FlopsReport flops(const model::GraphSpec& g) const;
};

/// DEEP_K shields the last k layers, SHALLOW_K the first k. MAGNITUDE_RATIO
/// offloads every layer but withholds the globally largest-|w| fraction m of
/// weights (ReLU layers stay shielded). TEESLICE keeps the backbone
/// offloaded with slices, non-linear layers and the head in the enclave.
PartitionPlan make_partition(const model::GraphSpec& victim, const PartitionConfig& config);

}  // namespace tslc::attack
