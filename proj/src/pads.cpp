#include "tslc/pads.hpp"

#include <cstring>

#include "tslc/checkpoint.hpp"

namespace tslc::secure {

Pad& PadStore::take(int layer_id, const std::array<std::uint8_t, 32>& current_digest) {
  auto it = layers.find(layer_id);
  if (it == layers.end())
    throw SecurityError("no pads precomputed for layer " + std::to_string(layer_id));
  LayerPads& lp = it->second;
  if (lp.digest != current_digest)
    throw SecurityError("stale pads: layer " + std::to_string(layer_id) +
                        " weights changed after precompute");
  if (lp.cursor >= lp.pads.size())
    throw SecurityError("pad store exhausted for layer " + std::to_string(layer_id));
  return lp.pads[lp.cursor++];
}

std::size_t PadStore::remaining(int layer_id) const {
  auto it = layers.find(layer_id);
  if (it == layers.end()) return 0;
  return it->second.pads.size() - it->second.cursor;
}

std::size_t PadStore::cursor(int layer_id) const {
  auto it = layers.find(layer_id);
  return it == layers.end() ? 0 : it->second.cursor;
}

void append_pads(PadStore& store, const QuantLayer& layer, std::uint64_t p, std::size_t count,
                 Rng& rng) {
  auto& lp = store.layers[layer.field.layer_id];
  lp.digest = layer.digest;
  const std::size_t in_n = layer.field.input_numel();
  for (std::size_t i = 0; i < count; ++i) {
    Pad pad;
    pad.r.resize(in_n);
    for (auto& v : pad.r) v = uniform_residue(rng, p);
    pad.g_r = field_apply(layer.field, pad.r, p);
    lp.pads.push_back(std::move(pad));
  }
}

PadStore precompute_pads(const QuantModel& qm, std::size_t count, Rng& rng) {
  PadStore store;
  store.p = qm.spec.p;
  for (const auto& [id, layer] : qm.layers) {
    (void)id;
    append_pads(store, layer, qm.spec.p, count, rng);
  }
  return store;
}

std::vector<std::uint32_t> mask(std::span<const std::uint32_t> h_res, Pad& pad,
                                std::uint64_t p) {
  if (pad.used) throw SecurityError("one-time pad reuse attempted");
  if (h_res.size() != pad.r.size())
    throw DimensionError("mask: input size " + std::to_string(h_res.size()) +
                         " does not match pad size " + std::to_string(pad.r.size()));
  pad.used = true;
  std::vector<std::uint32_t> h_e(h_res.size());
  for (std::size_t i = 0; i < h_res.size(); ++i) h_e[i] = add_mod(h_res[i], pad.r[i], p);
  return h_e;
}

std::vector<std::int64_t> unmask(std::span<const std::uint32_t> y_e, const Pad& pad,
                                 std::uint64_t p) {
  if (pad.g_r.empty()) throw SecurityError("pad is missing its precomputed image");
  if (y_e.size() != pad.g_r.size())
    throw DimensionError("unmask: response size does not match the pad image");
  std::vector<std::int64_t> out(y_e.size());
  for (std::size_t i = 0; i < y_e.size(); ++i)
    out[i] = centered_lift(sub_mod(y_e[i], pad.g_r[i], p), p);
  return out;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::vector<std::uint8_t>& b;
  std::size_t at = 0;
  void need(std::size_t n) const {
    if (at + n > b.size()) throw FormatError("pad store truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
    at += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[at + i]) << (8 * i);
    at += 8;
    return v;
  }
};

}  // namespace

std::vector<std::uint8_t> serialize_pad_store(const PadStore& store) {
  std::vector<std::uint8_t> out = {'T', 'S', 'P', 'D'};
  out.push_back(static_cast<std::uint8_t>(kPadStoreVersion & 0xff));
  out.push_back(static_cast<std::uint8_t>(kPadStoreVersion >> 8));
  put_u64(out, store.p);
  for (const auto& [id, lp] : store.layers) {
    put_u32(out, static_cast<std::uint32_t>(id));
    out.insert(out.end(), lp.digest.begin(), lp.digest.end());
    // Only unconsumed pads are persisted.
    put_u32(out, static_cast<std::uint32_t>(lp.pads.size() - lp.cursor));
    for (std::size_t i = lp.cursor; i < lp.pads.size(); ++i) {
      for (std::uint32_t v : lp.pads[i].r) put_u32(out, v);
      for (std::uint32_t v : lp.pads[i].g_r) put_u32(out, v);
    }
  }
  return out;
}

PadStore deserialize_pad_store(const std::vector<std::uint8_t>& bytes, const QuantModel& qm) {
  if (bytes.size() < 14) throw FormatError("pad store truncated before header");
  if (std::memcmp(bytes.data(), "TSPD", 4) != 0) throw FormatError("bad pad store magic");
  const std::uint16_t version =
      static_cast<std::uint16_t>(bytes[4] | (static_cast<std::uint16_t>(bytes[5]) << 8));
  Reader rd{bytes, 6};
  const std::uint64_t p = rd.u64();
  if (version != kPadStoreVersion)
    throw FormatError("unsupported pad store version " + std::to_string(version));
  if (p != qm.spec.p) throw FormatError("pad store field modulus does not match the model");

  PadStore store;
  store.p = p;
  while (rd.at < bytes.size()) {
    const int layer_id = static_cast<int>(rd.u32());
    if (!qm.offloaded(layer_id))
      throw FormatError("pad store names layer " + std::to_string(layer_id) +
                        " which is not offloaded");
    const QuantLayer& ql = qm.layer(layer_id);
    auto& lp = store.layers[layer_id];
    rd.need(32);
    std::memcpy(lp.digest.data(), bytes.data() + rd.at, 32);
    rd.at += 32;
    const std::uint32_t count = rd.u32();
    const std::size_t in_n = ql.field.input_numel();
    const std::size_t out_n = ql.field.output_numel();
    for (std::uint32_t i = 0; i < count; ++i) {
      Pad pad;
      pad.r.resize(in_n);
      pad.g_r.resize(out_n);
      for (auto& v : pad.r) v = rd.u32();
      for (auto& v : pad.g_r) v = rd.u32();
      for (std::uint32_t v : pad.r)
        if (v >= p) throw FormatError("pad residue out of field range");
      for (std::uint32_t v : pad.g_r)
        if (v >= p) throw FormatError("pad image residue out of field range");
      lp.pads.push_back(std::move(pad));
    }
  }
  return store;
}

void save_pad_store(const PadStore& store, const std::string& path) {
  model::write_file(path, serialize_pad_store(store));
}

PadStore load_pad_store(const std::string& path, const QuantModel& qm) {
  return deserialize_pad_store(model::read_file(path), qm);
}

}  // namespace tslc::secure
