#include "tslc/graph.hpp"

#include <algorithm>
#include <cmath>

#include "tslc/ops.hpp"

namespace tslc::model {

Tensor& LayerSpec::param(const std::string& name) {
  auto it = params.find(name);
  if (it == params.end())
    throw ContractError("layer " + std::to_string(id) + " has no param '" + name + "'");
  return it->second;
}

const Tensor& LayerSpec::param(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end())
    throw ContractError("layer " + std::to_string(id) + " has no param '" + name + "'");
  return it->second;
}

std::int64_t LayerSpec::param_count() const {
  std::int64_t n = 0;
  for (const auto& [_, t] : params) n += t.numel();
  return n;
}

std::int64_t SliceAdapter::param_count() const {
  std::int64_t n = down.defined() ? down.numel() : 0;
  if (up.defined()) n += up.numel();
  return n;
}

double SliceAdapter::weight_magnitude() const {
  double m = 0.0;
  if (down.defined())
    for (float v : down.f32()) m += std::abs(static_cast<double>(v));
  if (up.defined())
    for (float v : up.f32()) m += std::abs(static_cast<double>(v));
  return m;
}

std::string SliceAdapter::name() const {
  std::string s = "slice" + std::to_string(source) + "_" + std::to_string(target);
  if (!tap.empty()) s += "." + tap;
  return s;
}

LayerSpec& GraphSpec::layer_by_id(int id) {
  for (auto& l : layers)
    if (l.id == id) return l;
  throw ContractError("no layer with id " + std::to_string(id));
}

const LayerSpec& GraphSpec::layer_by_id(int id) const {
  for (const auto& l : layers)
    if (l.id == id) return l;
  throw ContractError("no layer with id " + std::to_string(id));
}

std::vector<int> GraphSpec::backbone_layer_ids() const {
  std::vector<int> ids;
  for (const auto& l : layers)
    switch (l.kind) {
      case LayerKind::Linear:
      case LayerKind::Conv2D:
      case LayerKind::AttentionBlock:
      case LayerKind::FFN:
        ids.push_back(l.id);
        break;
      default:
        break;
    }
  return ids;
}

const LayerSpec& GraphSpec::classifier() const {
  for (const auto& l : layers)
    if (l.kind == LayerKind::Classifier) return l;
  throw ContractError("graph has no classifier layer");
}

std::vector<Tensor> GraphSpec::all_params() {
  std::vector<Tensor> out;
  for (auto& l : layers)
    for (auto& [_, t] : l.params) out.push_back(t);
  for (auto& s : slices) {
    out.push_back(s.alpha);
    if (s.down.defined()) out.push_back(s.down);
    if (s.up.defined()) out.push_back(s.up);
  }
  return out;
}

std::vector<Tensor> GraphSpec::slice_trainables() {
  std::vector<Tensor> out;
  for (auto& l : layers)
    if (l.kind == LayerKind::Classifier)
      for (auto& [_, t] : l.params) out.push_back(t);
  for (auto& s : slices) {
    // LoRA gates stay fixed at 1; magnitude is their ranking signal.
    if (s.tap.empty()) out.push_back(s.alpha);
    if (s.down.defined()) out.push_back(s.down);
    if (s.up.defined()) out.push_back(s.up);
  }
  return out;
}

std::vector<Tensor> GraphSpec::full_trainables() {
  std::vector<Tensor> out;
  for (auto& l : layers)
    for (auto& [name, t] : l.params) {
      if (l.kind == LayerKind::BatchNorm && (name == "mean" || name == "var")) continue;
      out.push_back(t);
    }
  for (auto& s : slices) {
    out.push_back(s.alpha);
    if (s.down.defined()) out.push_back(s.down);
    if (s.up.defined()) out.push_back(s.up);
  }
  return out;
}

void GraphSpec::freeze_all() {
  for (auto t : all_params()) t.set_requires_grad(false);
}

GraphSpec GraphSpec::deep_clone() const {
  GraphSpec g = *this;
  for (auto& l : g.layers)
    for (auto& [_, t] : l.params) t = t.deep_clone();
  for (auto& s : g.slices) {
    s.alpha = s.alpha.deep_clone();
    if (s.down.defined()) s.down = s.down.deep_clone();
    if (s.up.defined()) s.up = s.up.deep_clone();
  }
  return g;
}

std::string tensor_name(const LayerSpec& l, const std::string& param) {
  return "layer" + std::to_string(l.id) + "." + param;
}

std::string tensor_name(const SliceAdapter& s, const std::string& part) {
  return s.name() + "." + part;
}

namespace {

using ops::add;
using ops::bias_add;
using ops::conv2d;
using ops::matmul;
using ops::relu;
using ops::scale;

// alpha * A(tap_src), shaped like the target layer's input.
Tensor slice_contrib(Tape& tape, const SliceAdapter& s, const Tensor& tap_src) {
  Tensor out;
  if (s.kind == SliceKind::OneByOneConv) {
    out = conv2d(tape, tap_src, s.down, nullptr, 1, 0);
  } else {
    out = matmul(tape, matmul(tape, tap_src, s.down), s.up);
  }
  return scale(tape, out, s.alpha);
}

bool slice_is_live(const SliceAdapter& s, const ForwardOptions& opts) {
  return !(opts.skip_zero_alpha && s.alpha.f32()[0] == 0.0f);
}

// Adds every layer-input tap targeting `ordinal` onto `cur`.
Tensor apply_taps(Tape& tape, const GraphSpec& g, int ordinal,
                  const std::vector<Tensor>& block_out, const Tensor& cur,
                  const ForwardOptions& opts) {
  Tensor acc = cur;
  for (const auto& s : g.slices) {
    if (s.target != ordinal || !s.tap.empty()) continue;
    if (!slice_is_live(s, opts)) continue;
    const Tensor& src = block_out.at(static_cast<std::size_t>(s.source));
    Tensor contrib = slice_contrib(tape, s, src);
    if (contrib.shape() != acc.shape())
      throw DimensionError("slice " + s.name() + " output " + shape_str(contrib.shape()) +
                           " does not match target input " + shape_str(acc.shape()));
    acc = add(tape, acc, contrib);
  }
  return acc;
}

// LoRA tap on one projection of an attention block: x*W + alpha*(x*down)*up.
Tensor project_with_lora(Tape& tape, const GraphSpec& g, int ordinal, const Tensor& x,
                         const Tensor& w, const std::string& tap, const ForwardOptions& opts) {
  Tensor y = matmul(tape, x, w);
  for (const auto& s : g.slices) {
    if (s.source != ordinal || s.tap != tap) continue;
    if (!slice_is_live(s, opts)) continue;
    y = add(tape, y, scale(tape, matmul(tape, matmul(tape, x, s.down), s.up), s.alpha));
  }
  return y;
}

Tensor attention_block_forward(Tape& tape, const GraphSpec& g, const LayerSpec& l, int ordinal,
                               const Tensor& x, const ForwardOptions& opts) {
  const Tensor xq = project_with_lora(tape, g, ordinal, x, l.param("wq"), "wq", opts);
  Tensor xk = matmul(tape, x, l.param("wk"));
  const Tensor xv = project_with_lora(tape, g, ordinal, x, l.param("wv"), "wv", opts);

  Tensor out;
  switch (l.attn_mode) {
    case AttnMode::Standard:
      out = ops::multihead_attention(tape, xq, xk, xv, l.n_heads, l.param("wo"));
      break;
    case AttnMode::LinearAttn:
      out = ops::linear_attention(tape, xq, xk, xv, l.param("lin_w1"), l.param("lin_w2"));
      break;
    case AttnMode::Dynamic: {
      Tensor std_out = ops::multihead_attention(tape, xq, xk, xv, l.n_heads, l.param("wo"));
      Tensor lin_out =
          ops::linear_attention(tape, xq, xk, xv, l.param("lin_w1"), l.param("lin_w2"));
      const Tensor& beta = l.param("beta");
      out = add(tape, scale(tape, std_out, beta),
                scale(tape, lin_out, ops::one_minus(tape, beta)));
      break;
    }
  }
  return add(tape, x, out);  // residual
}

Tensor ffn_forward(Tape& tape, const LayerSpec& l, const Tensor& x) {
  Tensor h = relu(tape, bias_add(tape, matmul(tape, x, l.param("w1")), l.param("b1")));
  return add(tape, x, bias_add(tape, matmul(tape, h, l.param("w2")), l.param("b2")));
}

Tensor classifier_forward(Tape& tape, const LayerSpec& l, const Tensor& x) {
  Tensor flat = x;
  if (x.ndim() == 4) flat = x.reshaped({x.dim(0), x.numel() / x.dim(0)});
  if (flat.ndim() != 2) throw DimensionError("classifier input must flatten to rank 2");
  if (flat.dim(1) != l.c_in)
    throw DimensionError("classifier expects " + std::to_string(l.c_in) + " features, got " +
                         std::to_string(flat.dim(1)));
  return bias_add(tape, matmul(tape, flat, l.param("weight")), l.param("bias"));
}

// Token pipeline for a single sample; x_row is [1, features].
Tensor forward_tokens(Tape& tape, const GraphSpec& g, const Tensor& x_row,
                      const ForwardOptions& opts) {
  const auto& in = g.input;
  const int side = in.height;  // square images
  const int p = in.patch;
  const int tokens_per_side = side / p;
  auto idx = std::make_shared<std::vector<std::int64_t>>();
  idx->reserve(static_cast<std::size_t>(in.tokens * in.token_dim));
  for (int ty = 0; ty < tokens_per_side; ++ty)
    for (int tx = 0; tx < tokens_per_side; ++tx)
      for (int py = 0; py < p; ++py)
        for (int px = 0; px < p; ++px)
          idx->push_back((ty * p + py) * side + (tx * p + px));
  Tensor cur = ops::gather_flat(tape, x_row, idx, {in.tokens, in.token_dim});

  std::vector<Tensor> block_out(1);  // 1-based ordinals
  int ordinal = 0;
  for (const auto& l : g.layers) {
    switch (l.kind) {
      case LayerKind::Linear: {
        ++ordinal;
        cur = apply_taps(tape, g, ordinal, block_out, cur, opts);
        cur = bias_add(tape, matmul(tape, cur, l.param("weight")), l.param("bias"));
        break;
      }
      case LayerKind::AttentionBlock: {
        ++ordinal;
        cur = apply_taps(tape, g, ordinal, block_out, cur, opts);
        cur = attention_block_forward(tape, g, l, ordinal, cur, opts);
        break;
      }
      case LayerKind::FFN: {
        ++ordinal;
        cur = apply_taps(tape, g, ordinal, block_out, cur, opts);
        cur = ffn_forward(tape, l, cur);
        break;
      }
      case LayerKind::ReLU:
        cur = relu(tape, cur);
        break;
      case LayerKind::Classifier:
        return classifier_forward(tape, l, ops::mean_rows(tape, cur));
      default:
        throw ContractError("unsupported layer kind in token pipeline");
    }
    if (ordinal > 0) {
      block_out.resize(static_cast<std::size_t>(ordinal) + 1);
      block_out[static_cast<std::size_t>(ordinal)] = cur;
    }
  }
  throw ContractError("token pipeline has no classifier");
}

}  // namespace

Tensor forward_with_taps(Tape& tape, const GraphSpec& g, const Tensor& x,
                         const ForwardOptions& opts) {
  if (x.ndim() != 2) throw DimensionError("forward input must be [n, features]");

  const bool token_model = std::any_of(g.layers.begin(), g.layers.end(), [](const LayerSpec& l) {
    return l.kind == LayerKind::AttentionBlock;
  });
  if (token_model) {
    const std::int64_t n = x.dim(0);
    std::vector<Tensor> rows;
    rows.reserve(static_cast<std::size_t>(n));
    auto flat = x.reshaped({x.numel()});
    for (std::int64_t i = 0; i < n; ++i) {
      auto idx = std::make_shared<std::vector<std::int64_t>>();
      idx->reserve(static_cast<std::size_t>(x.dim(1)));
      for (std::int64_t j = 0; j < x.dim(1); ++j) idx->push_back(i * x.dim(1) + j);
      Tensor row = ops::gather_flat(tape, flat, idx, {1, x.dim(1)});
      rows.push_back(forward_tokens(tape, g, row, opts));
    }
    return rows.size() == 1 ? rows[0] : ops::concat(tape, rows, 0);
  }

  Tensor cur = x;
  const bool conv_model = std::any_of(g.layers.begin(), g.layers.end(), [](const LayerSpec& l) {
    return l.kind == LayerKind::Conv2D;
  });
  if (conv_model) {
    if (g.input.channels * g.input.height * g.input.width != x.dim(1))
      throw DimensionError("input features do not match the conv input spec");
    cur = x.reshaped({x.dim(0), g.input.channels, g.input.height, g.input.width});
  }

  std::vector<Tensor> block_out(1);
  int ordinal = 0;
  for (const auto& l : g.layers) {
    switch (l.kind) {
      case LayerKind::Linear: {
        ++ordinal;
        cur = apply_taps(tape, g, ordinal, block_out, cur, opts);
        cur = bias_add(tape, matmul(tape, cur, l.param("weight")), l.param("bias"));
        break;
      }
      case LayerKind::Conv2D: {
        ++ordinal;
        cur = apply_taps(tape, g, ordinal, block_out, cur, opts);
        const Tensor* bias = l.has_param("bias") ? &l.param("bias") : nullptr;
        cur = conv2d(tape, cur, l.param("weight"), bias, l.stride, l.pad);
        break;
      }
      case LayerKind::BatchNorm:
        cur = ops::batchnorm(tape, cur, l.param("gamma"), l.param("beta"), l.param("mean"),
                             l.param("var"));
        break;
      case LayerKind::ReLU:
        cur = relu(tape, cur);
        break;
      case LayerKind::Classifier:
        return classifier_forward(tape, l, cur);
      default:
        throw ContractError("unexpected layer kind in flat pipeline");
    }
    if (ordinal > 0) {
      block_out.resize(static_cast<std::size_t>(ordinal) + 1);
      block_out[static_cast<std::size_t>(ordinal)] = cur;
    }
  }
  throw ContractError("graph has no classifier layer");
}

std::vector<int> predict_labels(const GraphSpec& g, const Tensor& xs) {
  Tape off = Tape::disabled();
  ForwardOptions opts;
  opts.skip_zero_alpha = true;
  std::vector<int> out;
  const std::int64_t n = xs.dim(0), d = xs.dim(1);
  const std::int64_t chunk = 256;
  for (std::int64_t at = 0; at < n; at += chunk) {
    const std::int64_t m = std::min(chunk, n - at);
    Tensor batch = Tensor::from_data(
        {m, d}, std::vector<float>(xs.f32().begin() + at * d, xs.f32().begin() + (at + m) * d));
    Tensor logits = forward_with_taps(off, g, batch, opts);
    for (std::int64_t i = 0; i < m; ++i) {
      const float* row = logits.f32().data() + i * logits.dim(1);
      int best = 0;
      for (std::int64_t j = 1; j < logits.dim(1); ++j)
        if (row[j] > row[best]) best = static_cast<int>(j);
      out.push_back(best);
    }
  }
  return out;
}

double accuracy(const GraphSpec& g, const Tensor& xs, const Tensor& labels) {
  auto preds = predict_labels(g, xs);
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == labels.i64()[static_cast<std::int64_t>(i)]) ++hits;
  return preds.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(preds.size());
}

}  // namespace tslc::model
