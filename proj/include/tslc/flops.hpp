#pragma once

#include <map>
#include <string>
#include <vector>

#include "tslc/graph.hpp"

namespace tslc::flops {

/// Multiply-add counts per layer, 64-bit integers throughout (no rounding).
/// percent_tee is tee_flops / total_flops.
struct FlopsReport {
  std::vector<std::pair<int, std::int64_t>> per_layer;          // (layer id, flops)
  std::vector<std::pair<std::string, std::int64_t>> per_slice;  // (slice name, flops)
  std::int64_t tee_flops = 0;
  std::int64_t total_flops = 0;
  double percent_tee() const {
    return total_flops == 0 ? 0.0
                            : static_cast<double>(tee_flops) / static_cast<double>(total_flops);
  }
};

/// Per-layer counts with (h, w) the layer's OUTPUT spatial dims (tokens go in
/// h for token models; pass 1,1 for flat inputs):
///   Linear      2 * c_in * c_out            (per output position)
///   BatchNorm   2 * c_in * h * w
///   Conv2D      2 * c_in * k^2 * h * w * c_out
///   ReLU        c * h * w                   (one op per element)
///   FFN         4 * d_model * d_hidden * h  (two linears per token)
///   AttentionBlock, standard: 8*d^2*h + 4*h^2*d   (qkv+o projections, score
///     and value matmuls); linear mode: 14*d^2*h (qkv + both concat
///     projections); dynamic: both paths sharing the qkv projections.
std::int64_t layer_flops(const model::LayerSpec& l, std::int64_t h, std::int64_t w);

std::int64_t slice_flops(const model::SliceAdapter& s, const model::GraphSpec& g);

/// TEE share of the model under the graph's own placements. Slices and any
/// layer placed ENCLAVE count toward tee_flops; exactly what is placed in the
/// enclave is counted, nothing else.
FlopsReport percent_flops(const model::GraphSpec& g);

/// Same with placements overridden (one entry per layer, by position) and an
/// optional per-layer hidden-weight fraction (numerator/denominator of the
/// weight count) for per-weight shielding strategies.
FlopsReport percent_flops(const model::GraphSpec& g,
                          const std::vector<model::Placement>& placement,
                          const std::map<int, std::pair<std::int64_t, std::int64_t>>*
                              hidden_weights = nullptr);

}  // namespace tslc::flops
