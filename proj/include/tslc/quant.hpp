#pragma once

#include <array>
#include <map>

#include "tslc/field.hpp"
#include "tslc/graph.hpp"

namespace tslc::secure {

struct QuantParams {
  float scale = 1.0f;
  int zero_point = 0;
  int bits = 8;
};

/// q = clamp(round(h / scale) + zero_point, -128, 127), elementwise.
Tensor quantize(const Tensor& h, const QuantParams& qp);

/// (q - zero_point) * scale back to F32.
Tensor dequantize(const Tensor& q, const QuantParams& qp);

/// Symmetric 8-bit calibration: zero_point 0, scale = max|v| / 127.
QuantParams calibrate_symmetric(std::span<const float> values);

/// One offloaded layer, fully quantized: signed 8-bit weights, their field
/// residues, the float scales for dequantization, and the enclave-side bias.
struct QuantLayer {
  FieldLayer field;
  QuantParams w_qp, in_qp;
  std::vector<std::int8_t> w_q;
  std::vector<float> bias;                 // empty when the layer has none
  std::array<std::uint8_t, 32> digest{};   // SHA-256 over w_q bytes
};

struct QuantModel {
  FieldSpec spec;
  std::map<int, QuantLayer> layers;  // only UNTRUSTED linear/conv/bn layers
  std::array<std::uint8_t, 32> model_digest{};

  const QuantLayer& layer(int id) const;
  bool offloaded(int id) const { return layers.count(id) != 0; }
};

/// Quantizes every offloaded layer of g. Weight scales are per-layer
/// symmetric; activation scales come from a float-precision calibration pass
/// over calib_x (first 128 rows are used).
QuantModel quantize_offloaded(const model::GraphSpec& g, const Tensor& calib_x,
                              const FieldSpec& spec);

std::array<std::uint8_t, 32> sha256_bytes(const void* data, std::size_t len);

/// Integer engine behind hybrid_forward: given a quantized input, produce
/// the exact signed accumulator of the layer's linear map.
struct LinearExecutor {
  virtual ~LinearExecutor() = default;
  virtual std::vector<std::int64_t> run(const QuantLayer& l,
                                        std::span<const std::int8_t> q_in) = 0;
};

/// Plain int64 arithmetic; the single-process reference the protocol path is
/// checked against bit-for-bit.
struct LocalExecutor final : LinearExecutor {
  std::vector<std::int64_t> run(const QuantLayer& l,
                                std::span<const std::int8_t> q_in) override;
};

/// Quantized hybrid inference. Offloaded layers run through the executor on
/// 8-bit values; slices, non-linear layers, bias adds and the classifier run
/// in F32. Identical executors give bit-identical logits.
Tensor hybrid_forward(const model::GraphSpec& g, const QuantModel& qm, const Tensor& x,
                      LinearExecutor& ex);

}  // namespace tslc::secure
