#include "tslc/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace tslc::model {

using nlohmann::json;

namespace {

const char kMagic[4] = {'T', 'S', 'M', 'D'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

const char* role_str(Role r) {
  switch (r) {
    case Role::VICTIM: return "VICTIM";
    case Role::BACKBONE: return "BACKBONE";
    case Role::DENSE: return "DENSE";
    case Role::SPARSE: return "SPARSE";
    case Role::SURROGATE: return "SURROGATE";
  }
  return "BACKBONE";
}

Role role_from(const std::string& s) {
  if (s == "VICTIM") return Role::VICTIM;
  if (s == "BACKBONE") return Role::BACKBONE;
  if (s == "DENSE") return Role::DENSE;
  if (s == "SPARSE") return Role::SPARSE;
  if (s == "SURROGATE") return Role::SURROGATE;
  throw FormatError("unknown role '" + s + "'");
}

const char* kind_str(LayerKind k) {
  switch (k) {
    case LayerKind::Linear: return "Linear";
    case LayerKind::Conv2D: return "Conv2D";
    case LayerKind::BatchNorm: return "BatchNorm";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::AttentionBlock: return "AttentionBlock";
    case LayerKind::FFN: return "FFN";
    case LayerKind::Classifier: return "Classifier";
  }
  return "Linear";
}

LayerKind kind_from(const std::string& s) {
  if (s == "Linear") return LayerKind::Linear;
  if (s == "Conv2D") return LayerKind::Conv2D;
  if (s == "BatchNorm") return LayerKind::BatchNorm;
  if (s == "ReLU") return LayerKind::ReLU;
  if (s == "AttentionBlock") return LayerKind::AttentionBlock;
  if (s == "FFN") return LayerKind::FFN;
  if (s == "Classifier") return LayerKind::Classifier;
  throw FormatError("unknown layer kind '" + s + "'");
}

struct BlobRef {
  std::string name;
  const Tensor* tensor;
};

}  // namespace

std::vector<std::uint8_t> serialize_graph(const GraphSpec& g) {
  json m;
  m["arch"] = g.arch;
  m["role"] = role_str(g.role);
  m["n_classes"] = g.n_classes;
  m["input"] = {{"channels", g.input.channels}, {"height", g.input.height},
                {"width", g.input.width},       {"features", g.input.features},
                {"tokens", g.input.tokens},     {"token_dim", g.input.token_dim},
                {"patch", g.input.patch}};

  std::vector<BlobRef> blobs;
  json layers = json::array();
  for (const auto& l : g.layers) {
    json jl;
    jl["id"] = l.id;
    jl["kind"] = kind_str(l.kind);
    jl["placement"] = l.placement == Placement::ENCLAVE ? "ENCLAVE" : "UNTRUSTED";
    jl["c_in"] = l.c_in;
    jl["c_out"] = l.c_out;
    jl["k"] = l.k;
    jl["stride"] = l.stride;
    jl["pad"] = l.pad;
    jl["d_model"] = l.d_model;
    jl["n_heads"] = l.n_heads;
    jl["d_hidden"] = l.d_hidden;
    jl["attn_mode"] = static_cast<int>(l.attn_mode);
    json names = json::array();
    for (const auto& [name, t] : l.params) {
      names.push_back(name);
      blobs.push_back({tensor_name(l, name), &t});
    }
    jl["params"] = names;
    layers.push_back(jl);
  }
  m["layers"] = layers;

  json slices = json::array();
  for (const auto& s : g.slices) {
    json js;
    js["source"] = s.source;
    js["target"] = s.target;
    js["kind"] = s.kind == SliceKind::LowRankPair ? "LowRankPair" : "OneByOneConv";
    js["tap"] = s.tap;
    js["d_in"] = s.d_in;
    js["rank"] = s.rank;
    js["d_out"] = s.d_out;
    js["c_in"] = s.c_in;
    js["c_out"] = s.c_out;
    js["alpha"] = static_cast<double>(s.alpha.f32()[0]);
    js["trainable_alpha"] = s.alpha.requires_grad();
    slices.push_back(js);
    blobs.push_back({tensor_name(s, "down"), &s.down});
    if (s.up.defined()) blobs.push_back({tensor_name(s, "up"), &s.up});
  }
  m["slices"] = slices;

  json index = json::array();
  std::uint64_t offset = 0;
  for (const auto& b : blobs) {
    const Tensor& t = *b.tensor;
    const std::uint64_t len = static_cast<std::uint64_t>(t.numel()) * dtype_size(t.dtype());
    json e;
    e["name"] = b.name;
    e["dtype"] = t.dtype() == DType::F32 ? "F32" : (t.dtype() == DType::I64 ? "I64" : "Q8");
    e["shape"] = t.shape();
    e["offset"] = offset;
    e["len"] = len;
    index.push_back(e);
    offset += len;
  }
  m["tensor_index"] = index;

  const std::string manifest = m.dump();
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u16(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(manifest.size()));
  out.insert(out.end(), manifest.begin(), manifest.end());
  for (const auto& b : blobs) {
    const Tensor& t = *b.tensor;
    const std::size_t len = static_cast<std::size_t>(t.numel()) * dtype_size(t.dtype());
    const std::size_t at = out.size();
    out.resize(at + len);
    switch (t.dtype()) {
      case DType::F32: std::memcpy(out.data() + at, t.f32().data(), len); break;
      case DType::I64: std::memcpy(out.data() + at, t.i64().data(), len); break;
      case DType::Q8: std::memcpy(out.data() + at, t.q8().data(), len); break;
    }
  }
  return out;
}

GraphSpec deserialize_graph(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 10) throw FormatError("checkpoint truncated before header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad checkpoint magic");
  const std::uint16_t version =
      static_cast<std::uint16_t>(bytes[4] | (static_cast<std::uint16_t>(bytes[5]) << 8));
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  std::uint32_t mlen = 0;
  for (int i = 0; i < 4; ++i) mlen |= static_cast<std::uint32_t>(bytes[6 + i]) << (8 * i);
  if (bytes.size() < 10 + static_cast<std::size_t>(mlen))
    throw FormatError("checkpoint truncated inside manifest");

  json m;
  try {
    m = json::parse(bytes.begin() + 10, bytes.begin() + 10 + mlen);
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
  }

  const std::size_t blob_start = 10 + mlen;
  const std::size_t blob_len = bytes.size() - blob_start;

  try {
    GraphSpec g;
    g.arch = m.at("arch").get<std::string>();
    g.role = role_from(m.at("role").get<std::string>());
    g.n_classes = m.at("n_classes").get<int>();
    const auto& in = m.at("input");
    g.input.channels = in.at("channels").get<int>();
    g.input.height = in.at("height").get<int>();
    g.input.width = in.at("width").get<int>();
    g.input.features = in.at("features").get<int>();
    g.input.tokens = in.at("tokens").get<int>();
    g.input.token_dim = in.at("token_dim").get<int>();
    g.input.patch = in.at("patch").get<int>();

    struct Entry {
      DType dtype;
      std::vector<std::int64_t> shape;
      std::uint64_t offset, len;
    };
    std::map<std::string, Entry> index;
    std::uint64_t extent = 0;
    for (const auto& e : m.at("tensor_index")) {
      Entry en;
      const std::string dt = e.at("dtype").get<std::string>();
      en.dtype = dt == "F32" ? DType::F32 : (dt == "I64" ? DType::I64 : DType::Q8);
      en.shape = e.at("shape").get<std::vector<std::int64_t>>();
      en.offset = e.at("offset").get<std::uint64_t>();
      en.len = e.at("len").get<std::uint64_t>();
      const std::uint64_t want =
          static_cast<std::uint64_t>(shape_numel(en.shape)) * dtype_size(en.dtype);
      if (en.len != want) throw FormatError("tensor length does not match its shape");
      if (en.offset + en.len < en.offset || en.offset + en.len > blob_len)
        throw FormatError("tensor extents exceed the blob section");
      extent = std::max(extent, en.offset + en.len);
      index.emplace(e.at("name").get<std::string>(), std::move(en));
    }
    if (extent != blob_len) throw FormatError("blob section size does not match the index");

    auto load_tensor = [&](const std::string& name) {
      auto it = index.find(name);
      if (it == index.end()) throw FormatError("manifest references missing tensor " + name);
      const Entry& en = it->second;
      Tensor t = Tensor::zeros(en.shape, en.dtype);
      const std::uint8_t* src = bytes.data() + blob_start + en.offset;
      switch (en.dtype) {
        case DType::F32: std::memcpy(t.f32().data(), src, en.len); break;
        case DType::I64: std::memcpy(t.i64().data(), src, en.len); break;
        case DType::Q8: std::memcpy(t.q8().data(), src, en.len); break;
      }
      return t;
    };

    for (const auto& jl : m.at("layers")) {
      LayerSpec l;
      l.id = jl.at("id").get<int>();
      l.kind = kind_from(jl.at("kind").get<std::string>());
      l.placement = jl.at("placement").get<std::string>() == "ENCLAVE" ? Placement::ENCLAVE
                                                                       : Placement::UNTRUSTED;
      l.c_in = jl.at("c_in").get<int>();
      l.c_out = jl.at("c_out").get<int>();
      l.k = jl.at("k").get<int>();
      l.stride = jl.at("stride").get<int>();
      l.pad = jl.at("pad").get<int>();
      l.d_model = jl.at("d_model").get<int>();
      l.n_heads = jl.at("n_heads").get<int>();
      l.d_hidden = jl.at("d_hidden").get<int>();
      l.attn_mode = static_cast<AttnMode>(jl.at("attn_mode").get<int>());
      for (const auto& name : jl.at("params"))
        l.params[name.get<std::string>()] = load_tensor(tensor_name(l, name.get<std::string>()));
      g.layers.push_back(std::move(l));
    }

    for (const auto& js : m.at("slices")) {
      SliceAdapter s;
      s.source = js.at("source").get<int>();
      s.target = js.at("target").get<int>();
      s.kind = js.at("kind").get<std::string>() == "LowRankPair" ? SliceKind::LowRankPair
                                                                 : SliceKind::OneByOneConv;
      s.tap = js.at("tap").get<std::string>();
      s.d_in = js.at("d_in").get<int>();
      s.rank = js.at("rank").get<int>();
      s.d_out = js.at("d_out").get<int>();
      s.c_in = js.at("c_in").get<int>();
      s.c_out = js.at("c_out").get<int>();
      s.alpha = Tensor::scalar(static_cast<float>(js.at("alpha").get<double>()));
      if (js.at("trainable_alpha").get<bool>()) s.alpha.set_requires_grad(true);
      s.down = load_tensor(tensor_name(s, "down"));
      if (s.kind == SliceKind::LowRankPair) s.up = load_tensor(tensor_name(s, "up"));
      g.slices.push_back(std::move(s));
    }

    const int n_ord = static_cast<int>(g.backbone_layer_ids().size());
    for (const auto& s : g.slices)
      if (s.source < 1 || s.source > n_ord || s.target < s.source)
        throw FormatError("slice " + s.name() + " references missing layers");
    return g;
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest field error: ") + e.what());
  }
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw InputError("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw InputError("short write to " + path);
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw InputError("cannot open " + path);
  const auto size = f.tellg();
  f.seekg(0);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
  f.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!f) throw InputError("short read from " + path);
  return bytes;
}

void save_checkpoint(const GraphSpec& g, const std::string& path) {
  write_file(path, serialize_graph(g));
}

GraphSpec load_checkpoint(const std::string& path) {
  return deserialize_graph(read_file(path));
}

}  // namespace tslc::model
