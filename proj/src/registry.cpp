#include "tslc/registry.hpp"

#include <cmath>

namespace tslc::model {

namespace {

// Uniform bounds chosen to keep activation scale through frozen stacks:
// sqrt(6/fan) ahead of ReLU, sqrt(3/fan) for purely linear maps.
Tensor init_weight_relu(std::vector<std::int64_t> shape, std::int64_t fan_in, Rng& rng) {
  const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
  return Tensor::uniform(std::move(shape), bound, rng);
}

Tensor init_weight(std::vector<std::int64_t> shape, std::int64_t fan_in, Rng& rng) {
  const float bound = std::sqrt(3.0f / static_cast<float>(fan_in));
  return Tensor::uniform(std::move(shape), bound, rng);
}

Tensor init_bias(std::vector<std::int64_t> shape, std::int64_t fan_in, Rng& rng) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
  return Tensor::uniform(std::move(shape), bound, rng);
}

LayerSpec linear_layer(int id, int c_in, int c_out, Rng& rng) {
  LayerSpec l;
  l.id = id;
  l.kind = LayerKind::Linear;
  l.placement = Placement::UNTRUSTED;
  l.c_in = c_in;
  l.c_out = c_out;
  l.params["weight"] = init_weight_relu({c_in, c_out}, c_in, rng);
  l.params["bias"] = init_bias({c_out}, c_in, rng);
  return l;
}

LayerSpec conv_layer(int id, int c_in, int c_out, int k, int stride, int pad, Rng& rng) {
  LayerSpec l;
  l.id = id;
  l.kind = LayerKind::Conv2D;
  l.placement = Placement::UNTRUSTED;
  l.c_in = c_in;
  l.c_out = c_out;
  l.k = k;
  l.stride = stride;
  l.pad = pad;
  l.params["weight"] = init_weight_relu({c_out, c_in, k, k}, c_in * k * k, rng);
  l.params["bias"] = init_bias({c_out}, c_in * k * k, rng);
  return l;
}

LayerSpec relu_layer(int id, int channels) {
  LayerSpec l;
  l.id = id;
  l.kind = LayerKind::ReLU;
  l.placement = Placement::ENCLAVE;  // non-linear layers stay in the enclave
  l.c_in = l.c_out = channels;
  return l;
}

LayerSpec attention_layer(int id, int d_model, int n_heads, Rng& rng) {
  LayerSpec l;
  l.id = id;
  l.kind = LayerKind::AttentionBlock;
  l.placement = Placement::UNTRUSTED;
  l.d_model = d_model;
  l.n_heads = n_heads;
  l.c_in = l.c_out = d_model;
  for (const char* name : {"wq", "wk", "wv", "wo"})
    l.params[name] = init_weight({d_model, d_model}, d_model, rng);
  return l;
}

LayerSpec ffn_layer(int id, int d_model, int d_hidden, Rng& rng) {
  LayerSpec l;
  l.id = id;
  l.kind = LayerKind::FFN;
  l.placement = Placement::UNTRUSTED;
  l.d_model = d_model;
  l.d_hidden = d_hidden;
  l.c_in = l.c_out = d_model;
  l.params["w1"] = init_weight_relu({d_model, d_hidden}, d_model, rng);
  l.params["b1"] = init_bias({d_hidden}, d_model, rng);
  l.params["w2"] = init_weight({d_hidden, d_model}, d_hidden, rng);
  l.params["b2"] = init_bias({d_model}, d_hidden, rng);
  return l;
}

LayerSpec classifier_layer(int id, int c_in, int n_classes, Rng& rng) {
  LayerSpec l;
  l.id = id;
  l.kind = LayerKind::Classifier;
  l.placement = Placement::ENCLAVE;  // trained on private data, never offloaded
  l.c_in = c_in;
  l.c_out = n_classes;
  l.params["weight"] = init_weight({c_in, n_classes}, c_in, rng);
  l.params["bias"] = init_bias({n_classes}, c_in, rng);
  return l;
}

}  // namespace

bool is_registered_arch(const std::string& arch) {
  return arch == "mlp-s" || arch == "cnn-s" || arch == "vit-t";
}

GraphSpec build_backbone(const std::string& arch, Rng& rng, int n_classes) {
  GraphSpec g;
  g.arch = arch;
  g.role = Role::BACKBONE;
  g.n_classes = n_classes;
  int id = 0;

  if (arch == "mlp-s") {
    g.input.features = 64;
    const int w = 64;
    for (int i = 0; i < 4; ++i) {
      g.layers.push_back(linear_layer(id++, w, w, rng));
      if (i < 3) g.layers.push_back(relu_layer(id++, w));
    }
    g.layers.push_back(classifier_layer(id++, w, n_classes, rng));
  } else if (arch == "cnn-s") {
    g.input.channels = 1;
    g.input.height = g.input.width = 8;
    g.input.features = 64;
    const int chans[] = {1, 2, 4, 8, 16, 32, 64};
    for (int i = 0; i < 6; ++i) {
      g.layers.push_back(conv_layer(id++, chans[i], chans[i + 1], 3, 1, 1, rng));
      g.layers.push_back(relu_layer(id++, chans[i + 1]));
    }
    g.layers.push_back(classifier_layer(id++, 64 * 8 * 8, n_classes, rng));
  } else if (arch == "vit-t") {
    g.input.height = g.input.width = 8;
    g.input.features = 64;
    g.input.patch = 2;
    g.input.tokens = 16;
    g.input.token_dim = 4;
    const int d = 32, heads = 2, hidden = 64;
    g.layers.push_back(linear_layer(id++, g.input.token_dim, d, rng));  // patch embed
    for (int b = 0; b < 2; ++b) {
      g.layers.push_back(attention_layer(id++, d, heads, rng));
      g.layers.push_back(ffn_layer(id++, d, hidden, rng));
    }
    g.layers.push_back(classifier_layer(id++, d, n_classes, rng));
  } else {
    throw ConfigError("unknown architecture '" + arch + "'");
  }

  g.freeze_all();
  return g;
}

std::int64_t slice_param_budget(const GraphSpec& g, int target_ordinal) {
  const auto ids = g.backbone_layer_ids();
  const auto& target = g.layer_by_id(ids.at(static_cast<std::size_t>(target_ordinal - 1)));
  const std::int64_t pc = target.param_count();
  return (pc + 17) / 18;
}

namespace {

SliceAdapter make_dense_adapter(const GraphSpec& g, int p, int i, float alpha_init, Rng& rng) {
  const auto ids = g.backbone_layer_ids();
  const auto& src = g.layer_by_id(ids.at(static_cast<std::size_t>(p - 1)));
  const auto& before_target = g.layer_by_id(ids.at(static_cast<std::size_t>(i - 2)));

  SliceAdapter s;
  s.source = p;
  s.target = i;
  s.alpha = Tensor::scalar(alpha_init);

  const int c_src = src.c_out;
  const int c_dst = before_target.c_out;  // target layer's input width
  if (src.kind == LayerKind::Conv2D) {
    s.kind = SliceKind::OneByOneConv;
    s.c_in = c_src;
    s.c_out = c_dst;
    s.down = Tensor::zeros({c_dst, c_src, 1, 1});
  } else {
    s.kind = SliceKind::LowRankPair;
    s.d_in = c_src;
    s.d_out = c_dst;
    const std::int64_t din = c_src, dout = c_dst;
    std::int64_t r = (din * dout) / (18 * (din + dout));
    s.rank = static_cast<int>(std::max<std::int64_t>(1, r));
    s.down = init_weight({din, s.rank}, din, rng);
    s.up = Tensor::zeros({s.rank, dout});
  }

  const std::int64_t budget = slice_param_budget(g, i);
  if (s.param_count() > budget)
    throw ContractError("slice " + s.name() + " exceeds its parameter budget (" +
                        std::to_string(s.param_count()) + " > " + std::to_string(budget) + ")");
  return s;
}

SliceAdapter make_lora_adapter(const GraphSpec& g, int ordinal, const std::string& tap,
                               float alpha_init, Rng& rng) {
  const auto ids = g.backbone_layer_ids();
  const auto& block = g.layer_by_id(ids.at(static_cast<std::size_t>(ordinal - 1)));
  SliceAdapter s;
  s.source = ordinal;
  s.target = ordinal + 1;
  s.kind = SliceKind::LowRankPair;
  s.tap = tap;
  s.d_in = s.d_out = block.d_model;
  s.rank = 4;
  s.alpha = Tensor::scalar(alpha_init);
  s.down = init_weight({s.d_in, s.rank}, s.d_in, rng);
  s.up = Tensor::zeros({s.rank, s.d_out});
  return s;
}

}  // namespace

GraphSpec attach_slices(const GraphSpec& backbone, SlicePolicy policy, Rng& rng,
                        float alpha_init) {
  for (const auto& l : backbone.layers)
    for (const auto& [_, t] : l.params)
      if (t.requires_grad())
        throw ContractError("attach_slices requires a frozen backbone");

  GraphSpec g = backbone.deep_clone();
  g.role = Role::DENSE;
  g.slices.clear();
  const auto ids = g.backbone_layer_ids();
  const int n = static_cast<int>(ids.size());

  if (policy == SlicePolicy::DENSE_CNN) {
    for (int p = 1; p <= n; ++p)
      for (int i = p + 1; i <= std::min(n, p + 2); ++i)
        g.slices.push_back(make_dense_adapter(g, p, i, alpha_init, rng));
  } else {
    for (int ord = 1; ord <= n; ++ord) {
      const auto& l = g.layer_by_id(ids.at(static_cast<std::size_t>(ord - 1)));
      if (l.kind != LayerKind::AttentionBlock) continue;
      for (const char* tap : {"wq", "wv"})
        g.slices.push_back(make_lora_adapter(g, ord, tap, alpha_init, rng));
    }
  }

  for (auto& s : g.slices) {
    // LoRA gates stay fixed at 1; their ranking signal is weight magnitude.
    s.alpha.set_requires_grad(s.tap.empty());
    s.down.set_requires_grad(true);
    if (s.up.defined()) s.up.set_requires_grad(true);
  }
  return g;
}

}  // namespace tslc::model
