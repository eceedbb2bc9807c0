#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace keep::gkc {

// frame = "GKC1" | u8 type | u32 payload_len | payload, little-endian.
inline constexpr std::string_view kMagic = "GKC1";
inline constexpr std::size_t kHeaderSize = 9;
inline constexpr std::uint32_t kMaxPayload = 16u << 20;

enum class FrameType : std::uint8_t {
  kLookupRequest = 1,
  kLookupResponse = 2,
  kPublishNotice = 3,
  kError = 4,
};

struct FrameHeader {
  FrameType type = FrameType::kError;
  std::uint32_t payload_len = 0;
};

struct Frame {
  FrameType type = FrameType::kError;
  std::string payload;
  bool operator==(const Frame&) const = default;
};

// Throws ProtocolError on bad magic, unknown type or payload > 16 MiB.
FrameHeader decode_header(std::string_view header);
std::string encode_frame(const Frame& f);
// Exactly one frame; throws ProtocolError on any mismatch.
Frame decode_frame(std::string_view bytes);

struct Quadruple {
  std::uint64_t user = 0;
  std::uint64_t item = 0;
  std::uint32_t category = 0;
  std::uint32_t version = 0;
  bool operator==(const Quadruple&) const = default;
};

enum class EntryStatus : std::uint8_t { kOk = 0, kVersionGone = 1 };

inline constexpr std::uint8_t kFoundUser = 1;
inline constexpr std::uint8_t kFoundItem = 2;
inline constexpr std::uint8_t kFoundUc = 4;

struct LookupResponse {
  std::uint32_t dim_total = 0;
  std::vector<EntryStatus> status;
  std::vector<std::uint8_t> found_mask;
  std::vector<float> values;  // status.size() x dim_total

  std::size_t size() const { return status.size(); }
  std::span<const float> row(std::size_t k) const {
    return std::span<const float>(values).subspan(k * dim_total, dim_total);
  }
  bool operator==(const LookupResponse&) const = default;
};

// Payload sent with a publish notice: the version and the snapshot file
// (relative to the server's snapshot directory, or absolute). The server
// acknowledges with a publish notice carrying the accepted version and an
// empty path.
struct PublishNotice {
  std::uint32_t version = 0;
  std::string path;
  bool operator==(const PublishNotice&) const = default;
};

enum class ErrorCode : std::uint8_t {
  kProtocol = 1,
  kVersion = 2,
  kIo = 3,
  kInternal = 4,
};

struct ErrorPayload {
  ErrorCode code = ErrorCode::kInternal;
  std::string message;
  bool operator==(const ErrorPayload&) const = default;
};

std::string encode_lookup_request(std::span<const Quadruple> q);
std::vector<Quadruple> decode_lookup_request(std::string_view payload);
std::string encode_lookup_response(const LookupResponse& r);
LookupResponse decode_lookup_response(std::string_view payload);
std::string encode_publish(const PublishNotice& p);
PublishNotice decode_publish(std::string_view payload);
std::string encode_error(const ErrorPayload& e);
ErrorPayload decode_error(std::string_view payload);

}  // namespace keep::gkc
