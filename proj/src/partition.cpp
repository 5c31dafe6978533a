#include "tslc/partition.hpp"

#include <algorithm>
#include <cmath>

namespace tslc::attack {

using model::GraphSpec;
using model::LayerKind;
using model::Placement;

std::string PartitionConfig::name() const {
  switch (strategy) {
    case Strategy::NO_SHIELD: return "no-shield";
    case Strategy::BLACK_BOX: return "black-box";
    case Strategy::DEEP_K: return "deep-" + std::to_string(k);
    case Strategy::SHALLOW_K: return "shallow-" + std::to_string(k);
    case Strategy::MAGNITUDE_RATIO: {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "magnitude-%.4f", m);
      return buf;
    }
    case Strategy::TEESLICE: return "teeslice";
  }
  return "?";
}

PartitionConfig PartitionConfig::parse(const std::string& s) {
  PartitionConfig c;
  if (s == "no-shield") {
    c.strategy = Strategy::NO_SHIELD;
  } else if (s == "black-box") {
    c.strategy = Strategy::BLACK_BOX;
  } else if (s == "teeslice") {
    c.strategy = Strategy::TEESLICE;
  } else if (s.rfind("deep-", 0) == 0) {
    c.strategy = Strategy::DEEP_K;
    c.k = std::stoi(s.substr(5));
  } else if (s.rfind("shallow-", 0) == 0) {
    c.strategy = Strategy::SHALLOW_K;
    c.k = std::stoi(s.substr(8));
  } else if (s.rfind("magnitude-", 0) == 0) {
    c.strategy = Strategy::MAGNITUDE_RATIO;
    c.m = std::stod(s.substr(10));
  } else {
    throw ConfigError("unknown partition config '" + s + "'");
  }
  return c;
}

flops::FlopsReport PartitionPlan::flops(const GraphSpec& g) const {
  return flops::percent_flops(g, placement, hidden_counts.empty() ? nullptr : &hidden_counts);
}

PartitionPlan make_partition(const GraphSpec& victim, const PartitionConfig& config) {
  const int n = static_cast<int>(victim.layers.size());
  PartitionPlan plan;
  plan.config = config;
  plan.placement.assign(static_cast<std::size_t>(n), Placement::UNTRUSTED);

  switch (config.strategy) {
    case Strategy::NO_SHIELD:
      break;  // everything offloaded
    case Strategy::BLACK_BOX:
      std::fill(plan.placement.begin(), plan.placement.end(), Placement::ENCLAVE);
      break;
    case Strategy::DEEP_K:
    case Strategy::SHALLOW_K: {
      if (config.k < 1 || config.k > n)
        throw ConfigError("k = " + std::to_string(config.k) + " out of range for " +
                          std::to_string(n) + " layers");
      if (config.strategy == Strategy::DEEP_K) {
        for (int i = n - config.k; i < n; ++i)
          plan.placement[static_cast<std::size_t>(i)] = Placement::ENCLAVE;
      } else {
        for (int i = 0; i < config.k; ++i)
          plan.placement[static_cast<std::size_t>(i)] = Placement::ENCLAVE;
      }
      break;
    }
    case Strategy::MAGNITUDE_RATIO: {
      if (config.m < 0.0 || config.m > 1.0) throw ConfigError("m must be in [0, 1]");
      // ReLU layers stay in the enclave under this scheme.
      for (int i = 0; i < n; ++i)
        if (victim.layers[static_cast<std::size_t>(i)].kind == LayerKind::ReLU)
          plan.placement[static_cast<std::size_t>(i)] = Placement::ENCLAVE;

      // Global ranking of |w| across all weight-bearing layers.
      struct Ref {
        float mag;
        int layer_id;
        std::size_t index;
      };
      std::vector<Ref> refs;
      for (const auto& l : victim.layers) {
        if (l.kind == LayerKind::ReLU) continue;
        // Flat index runs across the layer's params in name order.
        std::size_t off = 0;
        for (const auto& [pname, t] : l.params) {
          (void)pname;
          auto vals = t.f32();
          for (std::size_t i = 0; i < vals.size(); ++i)
            refs.push_back({std::abs(vals[i]), l.id, off + i});
          off += vals.size();
        }
      }
      const std::size_t hidden =
          static_cast<std::size_t>(std::ceil(config.m * static_cast<double>(refs.size())));
      std::partial_sort(refs.begin(), refs.begin() + static_cast<std::ptrdiff_t>(hidden),
                        refs.end(), [](const Ref& a, const Ref& b) {
                          if (a.mag != b.mag) return a.mag > b.mag;
                          if (a.layer_id != b.layer_id) return a.layer_id < b.layer_id;
                          return a.index < b.index;
                        });
      for (const auto& l : victim.layers) {
        if (l.kind == LayerKind::ReLU) continue;
        std::int64_t total = 0;
        for (const auto& [pname, t] : l.params) {
          (void)pname;
          total += t.numel();
        }
        if (total > 0) {
          plan.hidden_masks[l.id] =
              std::vector<std::uint8_t>(static_cast<std::size_t>(total), 0);
          plan.hidden_counts[l.id] = {0, total};
        }
      }
      for (std::size_t i = 0; i < hidden; ++i) {
        plan.hidden_masks[refs[i].layer_id][refs[i].index] = 1;
        plan.hidden_counts[refs[i].layer_id].first += 1;
      }
      break;
    }
    case Strategy::TEESLICE: {
      if (victim.role != model::Role::DENSE && victim.role != model::Role::SPARSE)
        throw ConfigError("teeslice partition requires a sliced hybrid victim");
      for (int i = 0; i < n; ++i) {
        const auto& l = victim.layers[static_cast<std::size_t>(i)];
        plan.placement[static_cast<std::size_t>(i)] =
            (l.kind == LayerKind::ReLU || l.kind == LayerKind::Classifier)
                ? Placement::ENCLAVE
                : Placement::UNTRUSTED;
      }
      break;
    }
  }
  return plan;
}

}  // namespace tslc::attack
