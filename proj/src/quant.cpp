#include "tslc/quant.hpp"

#include <openssl/sha.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "tslc/ops.hpp"

namespace tslc::secure {

using model::GraphSpec;
using model::LayerKind;
using model::LayerSpec;
using model::Placement;

Tensor quantize(const Tensor& h, const QuantParams& qp) {
  if (qp.scale <= 0.0f) throw ContractError("quantize requires scale > 0");
  std::vector<std::int8_t> q(static_cast<std::size_t>(h.numel()));
  auto src = h.f32();
  for (std::size_t i = 0; i < q.size(); ++i) {
    const float v = std::round(src[i] / qp.scale) + static_cast<float>(qp.zero_point);
    q[i] = static_cast<std::int8_t>(std::clamp(v, -128.0f, 127.0f));
  }
  return Tensor::from_q8(h.shape(), std::move(q));
}

Tensor dequantize(const Tensor& q, const QuantParams& qp) {
  Tensor out = Tensor::zeros(q.shape());
  auto src = q.q8();
  auto dst = out.f32();
  for (std::size_t i = 0; i < src.size(); ++i)
    dst[i] = (static_cast<float>(src[i]) - static_cast<float>(qp.zero_point)) * qp.scale;
  return out;
}

QuantParams calibrate_symmetric(std::span<const float> values) {
  float mx = 0.0f;
  for (float v : values) mx = std::max(mx, std::abs(v));
  QuantParams qp;
  qp.scale = std::max(mx, 1e-6f) / 127.0f;
  return qp;
}

std::array<std::uint8_t, 32> sha256_bytes(const void* data, std::size_t len) {
  std::array<std::uint8_t, 32> out{};
  SHA256(static_cast<const unsigned char*>(data), len, out.data());
  return out;
}

const QuantLayer& QuantModel::layer(int id) const {
  auto it = layers.find(id);
  if (it == layers.end())
    throw ContractError("layer " + std::to_string(id) + " is not offloaded");
  return it->second;
}

namespace {

bool offloadable(const LayerSpec& l) {
  if (l.placement != Placement::UNTRUSTED) return false;
  return l.kind == LayerKind::Linear || l.kind == LayerKind::Conv2D ||
         l.kind == LayerKind::BatchNorm;
}

std::vector<std::int8_t> quantize_values(std::span<const float> w, const QuantParams& qp) {
  std::vector<std::int8_t> q(w.size());
  for (std::size_t i = 0; i < w.size(); ++i)
    q[i] = static_cast<std::int8_t>(
        std::clamp(std::round(w[i] / qp.scale), -128.0f, 127.0f));
  return q;
}

std::vector<std::uint32_t> residues_of(std::span<const std::int8_t> q, std::uint64_t p) {
  std::vector<std::uint32_t> r(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) r[i] = to_residue(q[i], p);
  return r;
}

// Shared walk over the flat/conv pipeline. The visitor sees every backbone
// main layer's (tap-augmented) input and returns that layer's output; other
// layers run here in F32. Token models are not deployable.
template <typename Visit>
Tensor walk_pipeline(const GraphSpec& g, const Tensor& x, Visit&& visit) {
  for (const auto& l : g.layers)
    if (l.kind == LayerKind::AttentionBlock || l.kind == LayerKind::FFN)
      throw ConfigError("secure deployment supports linear/conv backbones only");

  Tape off = Tape::disabled();
  model::ForwardOptions fwd;
  fwd.skip_zero_alpha = true;

  Tensor cur = x;
  const bool conv_model = std::any_of(g.layers.begin(), g.layers.end(), [](const LayerSpec& l) {
    return l.kind == LayerKind::Conv2D;
  });
  if (conv_model)
    cur = x.reshaped({x.dim(0), g.input.channels, g.input.height, g.input.width});

  std::vector<Tensor> block_out(1);
  int ordinal = 0;
  for (const auto& l : g.layers) {
    switch (l.kind) {
      case LayerKind::Linear:
      case LayerKind::Conv2D:
      case LayerKind::BatchNorm: {
        ++ordinal;
        // Slice taps are enclave work on dequantized activations.
        for (const auto& s : g.slices) {
          if (s.target != ordinal || !s.tap.empty()) continue;
          if (s.alpha.f32()[0] == 0.0f) continue;
          const Tensor& src = block_out.at(static_cast<std::size_t>(s.source));
          Tensor contrib = s.kind == model::SliceKind::OneByOneConv
                               ? ops::conv2d(off, src, s.down, nullptr, 1, 0)
                               : ops::matmul(off, ops::matmul(off, src, s.down), s.up);
          cur = ops::add(off, cur, ops::scale(off, contrib, s.alpha));
        }
        cur = visit(l, cur);
        break;
      }
      case LayerKind::ReLU:
        cur = ops::relu(off, cur);
        break;
      case LayerKind::Classifier: {
        Tensor flat = cur.ndim() == 4 ? cur.reshaped({cur.dim(0), cur.numel() / cur.dim(0)})
                                      : cur;
        return ops::bias_add(off, ops::matmul(off, flat, l.param("weight")), l.param("bias"));
      }
      default:
        throw ContractError("unexpected layer kind in deployment pipeline");
    }
    block_out.resize(static_cast<std::size_t>(ordinal) + 1);
    block_out[static_cast<std::size_t>(ordinal)] = cur;
  }
  throw ContractError("deployment graph has no classifier");
}

Tensor f32_layer(const LayerSpec& l, const Tensor& in) {
  Tape off = Tape::disabled();
  switch (l.kind) {
    case LayerKind::Linear:
      return ops::bias_add(off, ops::matmul(off, in, l.param("weight")), l.param("bias"));
    case LayerKind::Conv2D: {
      const Tensor* b = l.has_param("bias") ? &l.param("bias") : nullptr;
      return ops::conv2d(off, in, l.param("weight"), b, l.stride, l.pad);
    }
    case LayerKind::BatchNorm:
      return ops::batchnorm(off, in, l.param("gamma"), l.param("beta"), l.param("mean"),
                            l.param("var"));
    default:
      throw ContractError("not a main layer");
  }
}

FieldLayer make_field_layer(const GraphSpec& g, const LayerSpec& l,
                            const std::vector<std::int64_t>& in_shape) {
  FieldLayer f;
  f.layer_id = l.id;
  f.kind = l.kind;
  f.c_in = l.c_in;
  f.c_out = l.c_out;
  f.k = l.k;
  f.stride = l.stride;
  f.pad = l.pad;
  (void)g;
  if (l.kind != LayerKind::Linear) {
    f.in_h = static_cast<int>(in_shape.at(in_shape.size() - 2));
    f.in_w = static_cast<int>(in_shape.back());
    if (l.kind == LayerKind::Conv2D) {
      f.out_h = (f.in_h + 2 * l.pad - l.k) / l.stride + 1;
      f.out_w = (f.in_w + 2 * l.pad - l.k) / l.stride + 1;
    } else {
      f.out_h = f.in_h;
      f.out_w = f.in_w;
    }
  }
  return f;
}

}  // namespace

QuantModel quantize_offloaded(const GraphSpec& g, const Tensor& calib_x,
                              const FieldSpec& spec) {
  spec.validate();
  QuantModel qm;
  qm.spec = spec;

  const std::int64_t n_calib = std::min<std::int64_t>(calib_x.dim(0), 128);
  Tensor calib = Tensor::from_data(
      {n_calib, calib_x.dim(1)},
      std::vector<float>(calib_x.f32().begin(), calib_x.f32().begin() + n_calib * calib_x.dim(1)));

  // Calibration pass: record each offloaded layer's input range in F32.
  std::map<int, float> max_abs;
  walk_pipeline(g, calib, [&](const LayerSpec& l, const Tensor& in) {
    if (offloadable(l)) {
      float& mx = max_abs[l.id];
      for (float v : in.f32()) mx = std::max(mx, std::abs(v));
    }
    return f32_layer(l, in);
  });

  std::vector<std::int64_t> in_shape =
      g.input.channels > 0
          ? std::vector<std::int64_t>{g.input.channels, g.input.height, g.input.width}
          : std::vector<std::int64_t>{g.input.features};

  for (const auto& l : g.layers) {
    if (l.kind == LayerKind::Conv2D || l.kind == LayerKind::BatchNorm ||
        l.kind == LayerKind::Linear) {
      if (offloadable(l)) {
        QuantLayer q;
        q.field = make_field_layer(g, l, in_shape);

        std::vector<float> eff_w;
        if (l.kind == LayerKind::BatchNorm) {
          // Fold stats into a per-channel scale; the shift stays in the bias.
          const auto g_ = l.param("gamma").f32();
          const auto b_ = l.param("beta").f32();
          const auto m_ = l.param("mean").f32();
          const auto v_ = l.param("var").f32();
          eff_w.resize(g_.size());
          q.bias.resize(g_.size());
          for (std::size_t c = 0; c < g_.size(); ++c) {
            eff_w[c] = g_[c] / std::sqrt(v_[c] + 1e-5f);
            q.bias[c] = b_[c] - m_[c] * eff_w[c];
          }
        } else {
          auto w = l.param("weight").f32();
          eff_w.assign(w.begin(), w.end());
          if (l.has_param("bias")) {
            auto b = l.param("bias").f32();
            q.bias.assign(b.begin(), b.end());
          }
        }
        q.w_qp = calibrate_symmetric(eff_w);
        q.w_q = quantize_values(eff_w, q.w_qp);
        q.in_qp = calibrate_symmetric(std::span<const float>());
        auto it = max_abs.find(l.id);
        if (it != max_abs.end()) q.in_qp.scale = std::max(it->second, 1e-6f) / 127.0f;
        q.field.weights = residues_of(q.w_q, spec.p);
        // Digest over the residue bytes: both roles can derive it whether the
        // weights arrived as a checkpoint or as a pushed residue table.
        q.digest = sha256_bytes(q.field.weights.data(), q.field.weights.size() * 4);
        qm.layers.emplace(l.id, std::move(q));
      }
    }
    // Track input shape for the next conv/bn layer.
    if (l.kind == LayerKind::Conv2D)
      in_shape = {l.c_out, (in_shape[1] + 2 * l.pad - l.k) / l.stride + 1,
                  (in_shape[2] + 2 * l.pad - l.k) / l.stride + 1};
    else if (l.kind == LayerKind::Linear)
      in_shape = {l.c_out};
  }

  std::vector<std::uint8_t> all;
  for (const auto& [id, q] : qm.layers) {
    all.insert(all.end(), q.digest.begin(), q.digest.end());
    (void)id;
  }
  qm.model_digest = sha256_bytes(all.data(), all.size());
  return qm;
}

std::vector<std::int64_t> LocalExecutor::run(const QuantLayer& l,
                                             std::span<const std::int8_t> q_in) {
  const FieldLayer& f = l.field;
  switch (f.kind) {
    case LayerKind::Linear: {
      const std::size_t cin = static_cast<std::size_t>(f.c_in);
      const std::size_t cout = static_cast<std::size_t>(f.c_out);
      if (q_in.size() % cin != 0) throw DimensionError("quantized input row mismatch");
      const std::size_t rows = q_in.size() / cin;
      std::vector<std::int64_t> acc(rows * cout, 0);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < cin; ++i) {
          const std::int64_t x = q_in[r * cin + i];
          if (x == 0) continue;
          for (std::size_t j = 0; j < cout; ++j)
            acc[r * cout + j] += x * static_cast<std::int64_t>(l.w_q[i * cout + j]);
        }
      return acc;
    }
    case LayerKind::Conv2D: {
      std::vector<std::int64_t> acc(f.output_numel(), 0);
      for (int co = 0; co < f.c_out; ++co)
        for (int oy = 0; oy < f.out_h; ++oy)
          for (int ox = 0; ox < f.out_w; ++ox) {
            std::int64_t a = 0;
            for (int ci = 0; ci < f.c_in; ++ci)
              for (int ky = 0; ky < f.k; ++ky) {
                const int iy = oy * f.stride + ky - f.pad;
                if (iy < 0 || iy >= f.in_h) continue;
                for (int kx = 0; kx < f.k; ++kx) {
                  const int ix = ox * f.stride + kx - f.pad;
                  if (ix < 0 || ix >= f.in_w) continue;
                  a += static_cast<std::int64_t>(
                           q_in[(static_cast<std::size_t>(ci) * f.in_h + iy) * f.in_w + ix]) *
                       l.w_q[((static_cast<std::size_t>(co) * f.c_in + ci) * f.k + ky) * f.k +
                             kx];
                }
              }
            acc[(static_cast<std::size_t>(co) * f.out_h + oy) * f.out_w + ox] = a;
          }
      return acc;
    }
    case LayerKind::BatchNorm: {
      const std::size_t plane = static_cast<std::size_t>(f.in_h) * f.in_w;
      std::vector<std::int64_t> acc(q_in.size());
      for (int c = 0; c < f.c_in; ++c)
        for (std::size_t i = 0; i < plane; ++i) {
          const std::size_t at = static_cast<std::size_t>(c) * plane + i;
          acc[at] = static_cast<std::int64_t>(q_in[at]) * l.w_q[static_cast<std::size_t>(c)];
        }
      return acc;
    }
    default:
      throw ContractError("unsupported quant layer kind");
  }
}

Tensor hybrid_forward(const GraphSpec& g, const QuantModel& qm, const Tensor& x,
                      LinearExecutor& ex) {
  return walk_pipeline(g, x, [&](const LayerSpec& l, const Tensor& in) -> Tensor {
    if (!qm.offloaded(l.id)) return f32_layer(l, in);

    const QuantLayer& q = qm.layer(l.id);
    const float combined = q.in_qp.scale * q.w_qp.scale;
    const std::int64_t batch = in.ndim() == 4 ? in.dim(0) : in.dim(0);
    const std::size_t per_in = static_cast<std::size_t>(in.numel() / batch);
    const std::size_t per_out = l.kind == LayerKind::Linear
                                    ? static_cast<std::size_t>(l.c_out)
                                    : q.field.output_numel();

    std::vector<std::int64_t> out_shape;
    if (l.kind == LayerKind::Linear)
      out_shape = {batch, l.c_out};
    else if (l.kind == LayerKind::Conv2D)
      out_shape = {batch, l.c_out, q.field.out_h, q.field.out_w};
    else
      out_shape = {batch, l.c_in, q.field.in_h, q.field.in_w};

    Tensor out = Tensor::zeros(out_shape);
    for (std::int64_t s = 0; s < batch; ++s) {
      Tensor sample = Tensor::from_data(
          {static_cast<std::int64_t>(per_in)},
          std::vector<float>(in.f32().begin() + s * static_cast<std::int64_t>(per_in),
                             in.f32().begin() + (s + 1) * static_cast<std::int64_t>(per_in)));
      Tensor q_in = quantize(sample, q.in_qp);
      const auto acc = ex.run(q, q_in.q8());
      float* dst = out.f32().data() + s * static_cast<std::int64_t>(per_out);
      if (l.kind == LayerKind::Linear) {
        for (std::size_t j = 0; j < per_out; ++j)
          dst[j] = static_cast<float>(acc[j]) * combined +
                   (q.bias.empty() ? 0.0f : q.bias[j]);
      } else if (l.kind == LayerKind::Conv2D) {
        const std::size_t plane = static_cast<std::size_t>(q.field.out_h) * q.field.out_w;
        for (std::size_t c = 0; c < static_cast<std::size_t>(l.c_out); ++c)
          for (std::size_t i = 0; i < plane; ++i)
            dst[c * plane + i] = static_cast<float>(acc[c * plane + i]) * combined +
                                 (q.bias.empty() ? 0.0f : q.bias[c]);
      } else {
        const std::size_t plane = static_cast<std::size_t>(q.field.in_h) * q.field.in_w;
        for (std::size_t c = 0; c < static_cast<std::size_t>(l.c_in); ++c)
          for (std::size_t i = 0; i < plane; ++i)
            dst[c * plane + i] = static_cast<float>(acc[c * plane + i]) * combined +
                                 (q.bias.empty() ? 0.0f : q.bias[c]);
      }
    }
    return out;
  });
}

}  // namespace tslc::secure
