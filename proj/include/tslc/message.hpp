#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tslc/error.hpp"

namespace tslc::proto {

inline constexpr std::uint16_t kProtocolVersion = 1;
inline constexpr std::size_t kMaxDims = 8;
inline constexpr std::uint64_t kMaxPayload = 1ull << 26;

enum class MsgType : std::uint8_t {
  HELLO = 1,
  MODEL_PUSH = 2,
  LINEAR_REQ = 3,
  LINEAR_RESP = 4,
  ERR = 5,
  BYE = 6,
};

/// Wire payload types. There is deliberately no F32 encoding: plaintext
/// activations and enclave weights have no representation on this channel.
enum class WireDType : std::uint8_t { U32 = 1, BYTES = 2 };

inline std::size_t wire_dtype_size(WireDType d) { return d == WireDType::U32 ? 4 : 1; }

// Layout, little-endian:
//   magic "TSLC" | u16 version | u8 msg_type | u64 session_id | u32 layer_id
//   | u64 seq | u8 dtype | u8 ndim | u32 dims[ndim] | u64 payload_len | payload
struct Message {
  std::uint16_t version = kProtocolVersion;
  MsgType type = MsgType::BYE;
  std::uint64_t session_id = 0;
  std::uint32_t layer_id = 0;
  std::uint64_t seq = 0;
  WireDType dtype = WireDType::BYTES;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;

  bool operator==(const Message&) const = default;

  std::vector<std::uint32_t> payload_u32() const;

  static Message residues(MsgType type, std::uint64_t session, std::uint32_t layer,
                          std::uint64_t seq, std::vector<std::uint32_t> dims,
                          std::span<const std::uint32_t> values);
  static Message blob(MsgType type, std::uint64_t session, std::uint64_t seq,
                      std::vector<std::uint8_t> bytes);
  static Message error(std::uint64_t session, std::uint64_t seq, std::uint32_t code,
                       const std::string& text);
};

std::vector<std::uint8_t> encode(const Message& m);

/// Total decode: any byte string either yields a Message or throws CodecError
/// pointing at the offending offset. Never aborts.
Message decode(std::span<const std::uint8_t> bytes);

/// Fixed-prefix length (magic through ndim); framing readers use it to learn
/// how many bytes remain.
inline constexpr std::size_t kHeaderPrefix = 29;

}  // namespace tslc::proto
