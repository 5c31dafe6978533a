#pragma once

#include <array>
#include <map>

#include "tslc/quant.hpp"

namespace tslc::secure {

/// Single-use mask: a uniform field vector r sized like a layer input and
/// its precomputed image g(r) under that layer's exact quantized weights.
struct Pad {
  std::vector<std::uint32_t> r;
  std::vector<std::uint32_t> g_r;
  bool used = false;
};

/// Per-layer pad stock with a monotone cursor; a pad index is never handed
/// out twice, and pads minted for other weights are refused by digest.
class PadStore {
 public:
  struct LayerPads {
    std::array<std::uint8_t, 32> digest{};
    std::vector<Pad> pads;
    std::size_t cursor = 0;
  };

  std::uint64_t p = 0;
  std::map<int, LayerPads> layers;

  Pad& take(int layer_id, const std::array<std::uint8_t, 32>& current_digest);
  std::size_t remaining(int layer_id) const;
  std::size_t cursor(int layer_id) const;
};

/// Mints `count` fresh pads per offloaded layer with exact g(r) images.
PadStore precompute_pads(const QuantModel& qm, std::size_t count, Rng& rng);

/// Adds pads for one layer (replenishment).
void append_pads(PadStore& store, const QuantLayer& layer, std::uint64_t p, std::size_t count,
                 Rng& rng);

/// h_e = (h + r) mod p. Consumes the pad; reuse raises SecurityError.
std::vector<std::uint32_t> mask(std::span<const std::uint32_t> h_res, Pad& pad,
                                std::uint64_t p);

/// (y_e - g_r) mod p, lifted to signed integers. Exact whenever the true
/// accumulators stay below p/2 in magnitude.
std::vector<std::int64_t> unmask(std::span<const std::uint32_t> y_e, const Pad& pad,
                                 std::uint64_t p);

// Pad-store file, little-endian:
//   magic "TSPD" | u16 version=1 | u64 p
//   | records { layer_id u32, weight_digest 32B, pad_count u32,
//               pads: r residues then g_r residues as u32 }
// Record lengths come from the model the store belongs to.
inline constexpr std::uint16_t kPadStoreVersion = 1;

std::vector<std::uint8_t> serialize_pad_store(const PadStore& store);
PadStore deserialize_pad_store(const std::vector<std::uint8_t>& bytes, const QuantModel& qm);
void save_pad_store(const PadStore& store, const std::string& path);
PadStore load_pad_store(const std::string& path, const QuantModel& qm);

}  // namespace tslc::secure
