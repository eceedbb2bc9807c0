#include "keep/gkc/protocol.hpp"

#include "keep/binary.hpp"
#include "keep/error.hpp"

namespace keep::gkc {

namespace {

using Reader = ByteReader<ProtocolError>;

void expect_end(const Reader& r, const char* what) {
  if (r.remaining() != 0) {
    throw ProtocolError(std::string(what) + ": " + std::to_string(r.remaining()) +
                        " trailing bytes");
  }
}

}  // namespace

FrameHeader decode_header(std::string_view header) {
  if (header.size() != kHeaderSize) throw ProtocolError("frame header must be 9 bytes");
  if (header.substr(0, 4) != kMagic) throw ProtocolError("bad frame magic");
  Reader r(header.substr(4));
  FrameHeader h;
  const auto type = r.u8();
  if (type < 1 || type > 4) {
    throw ProtocolError("unknown frame type " + std::to_string(type));
  }
  h.type = static_cast<FrameType>(type);
  h.payload_len = r.u32();
  if (h.payload_len > kMaxPayload) {
    throw ProtocolError("frame payload of " + std::to_string(h.payload_len) +
                        " bytes exceeds the 16 MiB limit");
  }
  return h;
}

std::string encode_frame(const Frame& f) {
  if (f.payload.size() > kMaxPayload) throw ProtocolError("frame payload exceeds 16 MiB");
  ByteWriter w;
  w.bytes(kMagic);
  w.u8(static_cast<std::uint8_t>(f.type));
  w.u32(static_cast<std::uint32_t>(f.payload.size()));
  w.bytes(f.payload);
  return w.take();
}

Frame decode_frame(std::string_view bytes) {
  if (bytes.size() < kHeaderSize) throw ProtocolError("truncated frame header");
  const auto h = decode_header(bytes.substr(0, kHeaderSize));
  if (bytes.size() - kHeaderSize != h.payload_len) {
    throw ProtocolError("frame length field says " + std::to_string(h.payload_len) +
                        " bytes, got " + std::to_string(bytes.size() - kHeaderSize));
  }
  return {h.type, std::string(bytes.substr(kHeaderSize))};
}

std::string encode_lookup_request(std::span<const Quadruple> q) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(q.size()));
  for (const auto& e : q) {
    w.u64(e.user);
    w.u64(e.item);
    w.u32(e.category);
    w.u32(e.version);
  }
  return w.take();
}

std::vector<Quadruple> decode_lookup_request(std::string_view payload) {
  Reader r(payload);
  const auto count = r.u32();
  if (count > r.remaining() / 24) throw ProtocolError("lookup request count exceeds payload");
  std::vector<Quadruple> out(count);
  for (auto& e : out) {
    e.user = r.u64();
    e.item = r.u64();
    e.category = r.u32();
    e.version = r.u32();
  }
  expect_end(r, "lookup request");
  return out;
}

std::string encode_lookup_response(const LookupResponse& resp) {
  const std::size_t n = resp.status.size();
  if (resp.found_mask.size() != n ||
      resp.values.size() != n * static_cast<std::size_t>(resp.dim_total)) {
    throw ShapeError("lookup response arrays disagree in length");
  }
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(n));
  w.u32(resp.dim_total);
  for (std::size_t k = 0; k < n; ++k) {
    w.u8(static_cast<std::uint8_t>(resp.status[k]));
    w.u8(resp.found_mask[k]);
    w.f32s(resp.row(k));
  }
  return w.take();
}

LookupResponse decode_lookup_response(std::string_view payload) {
  Reader r(payload);
  LookupResponse out;
  const auto count = r.u32();
  out.dim_total = r.u32();
  const std::size_t entry = 2 + 4 * static_cast<std::size_t>(out.dim_total);
  if (count > r.remaining() / entry) throw ProtocolError("lookup response count exceeds payload");
  out.status.resize(count);
  out.found_mask.resize(count);
  out.values.resize(static_cast<std::size_t>(count) * out.dim_total);
  for (std::size_t k = 0; k < count; ++k) {
    const auto s = r.u8();
    if (s > 1) throw ProtocolError("unknown entry status " + std::to_string(s));
    out.status[k] = static_cast<EntryStatus>(s);
    out.found_mask[k] = r.u8();
    if (out.found_mask[k] > 7) throw ProtocolError("found mask has unknown bits");
    r.f32s(std::span<float>(out.values).subspan(k * out.dim_total, out.dim_total));
  }
  expect_end(r, "lookup response");
  return out;
}

std::string encode_publish(const PublishNotice& p) {
  ByteWriter w;
  w.u32(p.version);
  w.str(p.path);
  return w.take();
}

PublishNotice decode_publish(std::string_view payload) {
  Reader r(payload);
  PublishNotice p;
  p.version = r.u32();
  p.path = r.str();
  expect_end(r, "publish notice");
  return p;
}

std::string encode_error(const ErrorPayload& e) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(e.code));
  w.bytes(e.message);
  return w.take();
}

ErrorPayload decode_error(std::string_view payload) {
  Reader r(payload);
  ErrorPayload e;
  const auto code = r.u8();
  if (code < 1 || code > 4) throw ProtocolError("unknown error code " + std::to_string(code));
  e.code = static_cast<ErrorCode>(code);
  e.message = std::string(r.bytes(r.remaining()));
  return e;
}

}  // namespace keep::gkc
