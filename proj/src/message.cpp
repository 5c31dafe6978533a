#include "tslc/message.hpp"

#include <cstring>
#include <string>

namespace tslc::proto {

namespace {

const char kMagic[4] = {'T', 'S', 'L', 'C'};

struct Writer {
  std::vector<std::uint8_t> out;
  void u8(std::uint8_t v) { out.push_back(v); }
  void u16(std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }
};

struct Reader {
  std::span<const std::uint8_t> b;
  std::size_t at = 0;
  void need(std::size_t n, const char* what) const {
    if (at + n > b.size()) throw CodecError(std::string("truncated ") + what, at);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return b[at++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(b[at] | (static_cast<std::uint16_t>(b[at + 1]) << 8));
    at += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
    at += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[at + i]) << (8 * i);
    at += 8;
    return v;
  }
};

bool valid_type(std::uint8_t t) { return t >= 1 && t <= 6; }

std::uint64_t expected_payload(const Message& m, std::size_t err_offset) {
  if (m.dims.empty()) return 0;
  std::uint64_t prod = 1;
  for (std::uint32_t d : m.dims) {
    if (d == 0) throw CodecError("zero dimension", err_offset);
    if (prod > kMaxPayload / d) throw CodecError("dims overflow payload cap", err_offset);
    prod *= d;
  }
  return prod * wire_dtype_size(m.dtype);
}

}  // namespace

std::vector<std::uint32_t> Message::payload_u32() const {
  if (dtype != WireDType::U32) throw ContractError("payload is not u32 residues");
  std::vector<std::uint32_t> out(payload.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(payload[i * 4 + k]) << (8 * k);
    out[i] = v;
  }
  return out;
}

Message Message::residues(MsgType type, std::uint64_t session, std::uint32_t layer,
                          std::uint64_t seq, std::vector<std::uint32_t> dims,
                          std::span<const std::uint32_t> values) {
  Message m;
  m.type = type;
  m.session_id = session;
  m.layer_id = layer;
  m.seq = seq;
  m.dtype = WireDType::U32;
  m.dims = std::move(dims);
  m.payload.resize(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i)
    for (int k = 0; k < 4; ++k)
      m.payload[i * 4 + k] = static_cast<std::uint8_t>((values[i] >> (8 * k)) & 0xff);
  return m;
}

Message Message::blob(MsgType type, std::uint64_t session, std::uint64_t seq,
                      std::vector<std::uint8_t> bytes) {
  Message m;
  m.type = type;
  m.session_id = session;
  m.seq = seq;
  m.dtype = WireDType::BYTES;
  if (!bytes.empty()) m.dims = {static_cast<std::uint32_t>(bytes.size())};
  m.payload = std::move(bytes);
  return m;
}

Message Message::error(std::uint64_t session, std::uint64_t seq, std::uint32_t code,
                       const std::string& text) {
  std::vector<std::uint8_t> body(4 + text.size());
  for (int i = 0; i < 4; ++i) body[static_cast<std::size_t>(i)] =
      static_cast<std::uint8_t>((code >> (8 * i)) & 0xff);
  std::memcpy(body.data() + 4, text.data(), text.size());
  return blob(MsgType::ERR, session, seq, std::move(body));
}

std::vector<std::uint8_t> encode(const Message& m) {
  if (m.dims.size() > kMaxDims) throw ContractError("too many dims");
  Writer w;
  w.out.insert(w.out.end(), kMagic, kMagic + 4);
  w.u16(m.version);
  w.u8(static_cast<std::uint8_t>(m.type));
  w.u64(m.session_id);
  w.u32(m.layer_id);
  w.u64(m.seq);
  w.u8(static_cast<std::uint8_t>(m.dtype));
  w.u8(static_cast<std::uint8_t>(m.dims.size()));
  for (std::uint32_t d : m.dims) w.u32(d);
  w.u64(m.payload.size());
  w.out.insert(w.out.end(), m.payload.begin(), m.payload.end());
  const std::uint64_t want = expected_payload(m, 0);
  if (want != m.payload.size()) throw ContractError("payload length does not match dims");
  return std::move(w.out);
}

Message decode(std::span<const std::uint8_t> bytes) {
  Reader r{bytes, 0};
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CodecError("bad magic", 0);
  r.at = 4;

  Message m;
  m.version = r.u16("version");
  if (m.version != kProtocolVersion)
    throw CodecError("unsupported version " + std::to_string(m.version), 4);
  const std::uint8_t type = r.u8("msg_type");
  if (!valid_type(type)) throw CodecError("unknown msg_type " + std::to_string(type), 6);
  m.type = static_cast<MsgType>(type);
  m.session_id = r.u64("session_id");
  m.layer_id = r.u32("layer_id");
  m.seq = r.u64("seq");
  const std::uint8_t dt = r.u8("dtype");
  if (dt != 1 && dt != 2) throw CodecError("unknown dtype " + std::to_string(dt), 27);
  m.dtype = static_cast<WireDType>(dt);
  const std::uint8_t ndim = r.u8("ndim");
  if (ndim > kMaxDims) throw CodecError("ndim exceeds limit", 28);
  const std::size_t dims_at = r.at;
  for (std::uint8_t i = 0; i < ndim; ++i) m.dims.push_back(r.u32("dims"));

  const std::size_t len_at = r.at;
  const std::uint64_t payload_len = r.u64("payload_len");
  if (payload_len > kMaxPayload) throw CodecError("payload exceeds cap", len_at);
  const std::uint64_t want = expected_payload(m, dims_at);
  if (payload_len != want)
    throw CodecError("payload_len " + std::to_string(payload_len) + " does not match dims (" +
                         std::to_string(want) + ")",
                     len_at);
  r.need(static_cast<std::size_t>(payload_len), "payload");
  m.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(r.at),
                   bytes.begin() + static_cast<std::ptrdiff_t>(r.at + payload_len));
  r.at += payload_len;
  if (r.at != bytes.size()) throw CodecError("trailing bytes after message", r.at);
  return m;
}

}  // namespace tslc::proto
