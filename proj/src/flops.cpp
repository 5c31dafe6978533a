#include "tslc/flops.hpp"

namespace tslc::flops {

using model::GraphSpec;
using model::LayerKind;
using model::LayerSpec;
using model::Placement;
using model::SliceAdapter;
using model::SliceKind;

std::int64_t layer_flops(const LayerSpec& l, std::int64_t h, std::int64_t w) {
  const std::int64_t cin = l.c_in, cout = l.c_out;
  const std::int64_t d = l.d_model, dh = l.d_hidden, t = h;
  switch (l.kind) {
    case LayerKind::Linear:
    case LayerKind::Classifier:
      return 2 * cin * cout * h * w;
    case LayerKind::BatchNorm:
      if (h <= 0 || w <= 0) throw InputError("batchnorm flops need spatial dims");
      return 2 * cin * h * w;
    case LayerKind::Conv2D:
      if (h <= 0 || w <= 0) throw InputError("conv flops need spatial dims");
      return 2 * cin * static_cast<std::int64_t>(l.k) * l.k * h * w * cout;
    case LayerKind::ReLU:
      return cin * h * w;
    case LayerKind::FFN:
      return 4 * d * dh * t;
    case LayerKind::AttentionBlock:
      switch (l.attn_mode) {
        case model::AttnMode::Standard: return 8 * d * d * t + 4 * t * t * d;
        case model::AttnMode::LinearAttn: return 14 * d * d * t;
        case model::AttnMode::Dynamic: return 16 * d * d * t + 4 * t * t * d;
      }
      return 0;
  }
  return 0;
}

std::int64_t slice_flops(const SliceAdapter& s, const GraphSpec& g) {
  if (s.kind == SliceKind::OneByOneConv)
    return 2 * static_cast<std::int64_t>(s.c_in) * g.input.height * g.input.width * s.c_out;
  const std::int64_t t = g.input.tokens > 0 ? g.input.tokens : 1;
  return 2 * (static_cast<std::int64_t>(s.d_in) * s.rank +
              static_cast<std::int64_t>(s.rank) * s.d_out) *
         t;
}

namespace {

// Output spatial dims per layer, walking from the input spec.
struct Dims {
  std::int64_t h = 1, w = 1;
};

Dims layer_out_dims(const GraphSpec& g, const LayerSpec& l, Dims cur) {
  switch (l.kind) {
    case LayerKind::Conv2D:
      return {(cur.h + 2 * l.pad - l.k) / l.stride + 1, (cur.w + 2 * l.pad - l.k) / l.stride + 1};
    case LayerKind::Classifier:
      return {1, 1};
    case LayerKind::AttentionBlock:
    case LayerKind::FFN:
      return {g.input.tokens, 1};
    default:
      return cur;
  }
}

}  // namespace

FlopsReport percent_flops(const GraphSpec& g) {
  std::vector<Placement> placement;
  placement.reserve(g.layers.size());
  for (const auto& l : g.layers) placement.push_back(l.placement);
  return percent_flops(g, placement, nullptr);
}

FlopsReport percent_flops(const GraphSpec& g, const std::vector<Placement>& placement,
                          const std::map<int, std::pair<std::int64_t, std::int64_t>>*
                              hidden_weights) {
  if (placement.size() != g.layers.size())
    throw InputError("placement vector must cover every layer");
  FlopsReport r;
  Dims cur;
  if (g.input.channels > 0) cur = {g.input.height, g.input.width};
  if (g.input.tokens > 0) cur = {g.input.tokens, 1};

  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const auto& l = g.layers[i];
    const Dims out = layer_out_dims(g, l, cur);
    const std::int64_t f = layer_flops(l, out.h, out.w);
    r.per_layer.emplace_back(l.id, f);
    r.total_flops += f;
    if (placement[i] == Placement::ENCLAVE) {
      r.tee_flops += f;
    } else if (hidden_weights) {
      // Per-weight shielding: the hidden fraction of this layer's work stays
      // in the TEE (floor division keeps everything in integers).
      auto it = hidden_weights->find(l.id);
      if (it != hidden_weights->end() && it->second.second > 0)
        r.tee_flops += f * it->second.first / it->second.second;
    }
    cur = out;
  }

  for (const auto& s : g.slices) {
    const std::int64_t f = slice_flops(s, g);
    r.per_slice.emplace_back(s.name(), f);
    r.total_flops += f;
    r.tee_flops += f;  // slices always run in the enclave
  }
  return r;
}

}  // namespace tslc::flops
