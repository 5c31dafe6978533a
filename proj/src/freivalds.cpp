#include "tslc/freivalds.hpp"

namespace tslc::secure {

FreivaldsKey make_freivalds_key(const FieldLayer& layer, std::uint64_t p, Rng& rng) {
  FreivaldsKey key;
  key.s.resize(layer.output_numel());
  for (auto& v : key.s) v = uniform_residue(rng, p);
  key.s_tilde = field_apply_transpose(layer, key.s, p);
  return key;
}

Verdict freivalds_check(std::span<const std::uint32_t> h, std::span<const std::uint32_t> y,
                        const FreivaldsKey& key, std::uint64_t p) {
  if (y.size() != key.s.size() || h.size() != key.s_tilde.size())
    throw DimensionError("freivalds_check operand sizes do not match the key");
  return dot_mod(y, key.s, p) == dot_mod(h, key.s_tilde, p) ? Verdict::ACCEPT
                                                            : Verdict::REJECT;
}

}  // namespace tslc::secure
