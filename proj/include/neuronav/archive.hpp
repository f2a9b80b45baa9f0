#pragma once

// Minimal zip support for DICOM uploads. Reading handles stored and deflated
// entries through the central directory; writing emits stored entries only.
// No zip64, no encryption.

#include <zlib.h>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "neuronav/error.hpp"

namespace neuronav {

struct ZipEntry {
  std::string name;
  std::vector<std::uint8_t> data;
};

namespace zip_detail {

inline std::uint32_t rd16(std::span<const std::uint8_t> b, std::size_t at) {
  if (at + 2 > b.size()) throw Error(ErrorCode::ParseError, "zip: truncated");
  return std::uint32_t(b[at]) | std::uint32_t(b[at + 1]) << 8;
}

inline std::uint32_t rd32(std::span<const std::uint8_t> b, std::size_t at) { return rd16(b, at) | rd16(b, at + 2) << 16; }

inline void wr16(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(std::uint8_t(v));
  out.push_back(std::uint8_t(v >> 8));
}

inline void wr32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  wr16(out, v & 0xffff);
  wr16(out, v >> 16);
}

inline std::uint32_t crc(std::span<const std::uint8_t> data) {
  uLong c = crc32(0L, Z_NULL, 0);
  std::size_t pos = 0;
  while (pos < data.size()) {
    const auto chunk = uInt(std::min<std::size_t>(data.size() - pos, 1u << 30));
    c = crc32(c, data.data() + pos, chunk);
    pos += chunk;
  }
  return std::uint32_t(c);
}

inline std::vector<std::uint8_t> inflate_raw(std::span<const std::uint8_t> in, std::size_t expected) {
  std::vector<std::uint8_t> out(expected);
  z_stream zs{};
  if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) throw Error(ErrorCode::IoError, "zip: inflateInit failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = uInt(in.size());
  zs.next_out = out.data();
  zs.avail_out = uInt(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  const auto produced = zs.total_out;
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || produced != expected) throw Error(ErrorCode::ParseError, "zip: corrupt deflate stream");
  return out;
}

}  // namespace zip_detail

inline std::vector<ZipEntry> read_zip(std::span<const std::uint8_t> bytes) {
  using namespace zip_detail;
  if (bytes.size() < 22) throw Error(ErrorCode::ParseError, "zip: too short");
  std::size_t eocd = bytes.size() - 22;
  while (rd32(bytes, eocd) != 0x06054b50) {
    if (eocd == 0 || bytes.size() - eocd > 22 + 0xffff) throw Error(ErrorCode::ParseError, "zip: no end of central directory");
    --eocd;
  }
  const std::size_t count = rd16(bytes, eocd + 10);
  std::size_t at = rd32(bytes, eocd + 16);
  std::vector<ZipEntry> out;
  for (std::size_t e = 0; e < count; ++e) {
    if (rd32(bytes, at) != 0x02014b50) throw Error(ErrorCode::ParseError, "zip: bad central directory entry");
    const auto flags = rd16(bytes, at + 8), method = rd16(bytes, at + 10);
    const auto crc_expected = rd32(bytes, at + 16);
    const std::size_t csize = rd32(bytes, at + 20), usize = rd32(bytes, at + 24);
    const std::size_t name_len = rd16(bytes, at + 28), extra_len = rd16(bytes, at + 30), comment_len = rd16(bytes, at + 32);
    const std::size_t local = rd32(bytes, at + 42);
    if (at + 46 + name_len > bytes.size()) throw Error(ErrorCode::ParseError, "zip: truncated");
    ZipEntry entry;
    entry.name.assign(reinterpret_cast<const char*>(bytes.data() + at + 46), name_len);
    at += 46 + name_len + extra_len + comment_len;
    if (flags & 1) throw Error(ErrorCode::ParseError, "zip: encrypted entries are not supported");
    if (rd32(bytes, local) != 0x04034b50) throw Error(ErrorCode::ParseError, "zip: bad local header");
    const std::size_t data_at = local + 30 + rd16(bytes, local + 26) + rd16(bytes, local + 28);
    if (data_at + csize > bytes.size()) throw Error(ErrorCode::ParseError, "zip: truncated entry data");
    const auto payload = bytes.subspan(data_at, csize);
    if (method == 0) {
      if (csize != usize) throw Error(ErrorCode::ParseError, "zip: stored size mismatch");
      entry.data.assign(payload.begin(), payload.end());
    } else if (method == 8) {
      entry.data = inflate_raw(payload, usize);
    } else {
      throw Error(ErrorCode::ParseError, "zip: unsupported compression method " + std::to_string(method));
    }
    if (crc(entry.data) != crc_expected) throw Error(ErrorCode::ParseError, "zip: CRC mismatch in " + entry.name);
    out.push_back(std::move(entry));
  }
  return out;
}

/// Stored (uncompressed) archive with a zeroed timestamp.
inline std::vector<std::uint8_t> write_zip(const std::vector<ZipEntry>& entries) {
  using namespace zip_detail;
  std::vector<std::uint8_t> out, central;
  for (const auto& e : entries) {
    const auto offset = std::uint32_t(out.size());
    const auto c = crc(e.data);
    const auto size = std::uint32_t(e.data.size());
    wr32(out, 0x04034b50);
    wr16(out, 20), wr16(out, 0), wr16(out, 0), wr16(out, 0), wr16(out, 0x21);
    wr32(out, c), wr32(out, size), wr32(out, size);
    wr16(out, std::uint32_t(e.name.size())), wr16(out, 0);
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.insert(out.end(), e.data.begin(), e.data.end());

    wr32(central, 0x02014b50);
    wr16(central, 20), wr16(central, 20), wr16(central, 0), wr16(central, 0), wr16(central, 0), wr16(central, 0x21);
    wr32(central, c), wr32(central, size), wr32(central, size);
    wr16(central, std::uint32_t(e.name.size())), wr16(central, 0), wr16(central, 0), wr16(central, 0), wr16(central, 0);
    wr32(central, 0), wr32(central, offset);
    central.insert(central.end(), e.name.begin(), e.name.end());
  }
  const auto cd_offset = std::uint32_t(out.size());
  out.insert(out.end(), central.begin(), central.end());
  wr32(out, 0x06054b50);
  wr16(out, 0), wr16(out, 0);
  wr16(out, std::uint32_t(entries.size())), wr16(out, std::uint32_t(entries.size()));
  wr32(out, std::uint32_t(central.size())), wr32(out, cd_offset);
  wr16(out, 0);
  return out;
}

}  // namespace neuronav
