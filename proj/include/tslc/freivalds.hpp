#pragma once

#include "tslc/quant.hpp"

namespace tslc::secure {

enum class Verdict : std::uint8_t { ACCEPT, REJECT };

/// Verification key for one offloaded layer: a uniform field vector s shaped
/// like the layer output and s_tilde = W^T s under the layer's current
/// quantized weights. Refresh whenever the weights change (and per check for
/// fresh randomness).
struct FreivaldsKey {
  std::vector<std::uint32_t> s;
  std::vector<std::uint32_t> s_tilde;
};

FreivaldsKey make_freivalds_key(const FieldLayer& layer, std::uint64_t p, Rng& rng);

/// ACCEPT iff <y, s> == <h, s_tilde> (mod p), i.e. the claimed output is
/// consistent with h under the keyed weights. For a wrong y the accept
/// probability over uniform s is 1/p.
Verdict freivalds_check(std::span<const std::uint32_t> h, std::span<const std::uint32_t> y,
                        const FreivaldsKey& key, std::uint64_t p);

}  // namespace tslc::secure
