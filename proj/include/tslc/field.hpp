#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tslc/error.hpp"
#include "tslc/graph.hpp"
#include "tslc/rng.hpp"

namespace tslc::secure {

/// Prime field for masked offloading. The default 2^31 - 1 keeps every
/// 8-bit x 8-bit accumulator at desk fan-ins below p/2, so centered lifting
/// recovers exact signed integers; residues fit in u32 on the wire.
struct FieldSpec {
  std::uint64_t p = 2147483647ull;

  void validate() const;
};

inline std::uint32_t add_mod(std::uint32_t a, std::uint32_t b, std::uint64_t p) {
  const std::uint64_t s = static_cast<std::uint64_t>(a) + b;
  return static_cast<std::uint32_t>(s >= p ? s - p : s);
}

inline std::uint32_t sub_mod(std::uint32_t a, std::uint32_t b, std::uint64_t p) {
  return a >= b ? a - b : static_cast<std::uint32_t>(a + p - b);
}

inline std::uint32_t mul_mod(std::uint32_t a, std::uint32_t b, std::uint64_t p) {
  return static_cast<std::uint32_t>(static_cast<std::uint64_t>(a) * b % p);
}

/// Signed integer -> residue in [0, p).
inline std::uint32_t to_residue(std::int64_t v, std::uint64_t p) {
  const std::int64_t m = v % static_cast<std::int64_t>(p);
  return static_cast<std::uint32_t>(m < 0 ? m + static_cast<std::int64_t>(p) : m);
}

/// Residue -> signed integer in (-p/2, p/2].
inline std::int64_t centered_lift(std::uint32_t r, std::uint64_t p) {
  return r > p / 2 ? static_cast<std::int64_t>(r) - static_cast<std::int64_t>(p)
                   : static_cast<std::int64_t>(r);
}

std::uint32_t uniform_residue(Rng& rng, std::uint64_t p);

/// The linear map a worker evaluates over the field for one offloaded layer.
/// Weights are stored as residues of the symmetric-quantized integers.
struct FieldLayer {
  int layer_id = 0;
  model::LayerKind kind = model::LayerKind::Linear;
  int c_in = 0, c_out = 0, k = 0, stride = 1, pad = 0;
  int in_h = 0, in_w = 0, out_h = 0, out_w = 0;  // conv spatial dims
  std::vector<std::uint32_t> weights;

  std::size_t input_numel() const;
  std::size_t output_numel() const;
  std::vector<std::uint32_t> input_dims() const;
  std::vector<std::uint32_t> output_dims() const;
};

/// y = W x over the field. Linear inputs may carry multiple rows
/// (numel / c_in); conv and batchnorm inputs are single samples.
std::vector<std::uint32_t> field_apply(const FieldLayer& l, std::span<const std::uint32_t> x,
                                       std::uint64_t p);

/// s_tilde = W^T s, the Freivalds precompute for this layer.
std::vector<std::uint32_t> field_apply_transpose(const FieldLayer& l,
                                                 std::span<const std::uint32_t> s,
                                                 std::uint64_t p);

std::uint32_t dot_mod(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b,
                      std::uint64_t p);

}  // namespace tslc::secure
