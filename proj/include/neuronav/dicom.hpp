#pragma once

// Minimal DICOM reader/writer: Part 10 files, Explicit VR Little Endian,
// uncompressed 16-bit single-frame CT slices.
//
// Tags read:
//   (0002,0010) Transfer Syntax UID       must be 1.2.840.10008.1.2.1
//   (0020,0032) Image Position (Patient)  DS x3
//   (0020,0037) Image Orientation         DS x6
//   (0028,0010) Rows                      US
//   (0028,0011) Columns                   US
//   (0028,0030) Pixel Spacing             DS x2 (row, column)
//   (0028,0100) Bits Allocated            US, must be 16
//   (0028,0103) Pixel Representation      US, optional (default signed)
//   (0028,1052) Rescale Intercept         DS
//   (0028,1053) Rescale Slope             DS
//   (7FE0,0010) Pixel Data                OW/OB, 2*rows*cols bytes
// Everything else is skipped by its declared length. Parsing stops after
// Pixel Data.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "neuronav/error.hpp"
#include "neuronav/text_doc.hpp"
#include "neuronav/volume.hpp"

namespace neuronav {

inline constexpr std::string_view kExplicitVrLittleEndian = "1.2.840.10008.1.2.1";
inline constexpr std::string_view kCtImageStorage = "1.2.840.10008.5.1.4.1.1.2";

namespace dicom_detail {

constexpr std::uint32_t tag(std::uint16_t group, std::uint16_t element) {
  return (std::uint32_t(group) << 16) | element;
}

constexpr std::uint32_t kTransferSyntax = tag(0x0002, 0x0010);
constexpr std::uint32_t kImagePosition = tag(0x0020, 0x0032);
constexpr std::uint32_t kImageOrientation = tag(0x0020, 0x0037);
constexpr std::uint32_t kRows = tag(0x0028, 0x0010);
constexpr std::uint32_t kColumns = tag(0x0028, 0x0011);
constexpr std::uint32_t kPixelSpacing = tag(0x0028, 0x0030);
constexpr std::uint32_t kBitsAllocated = tag(0x0028, 0x0100);
constexpr std::uint32_t kPixelRepresentation = tag(0x0028, 0x0103);
constexpr std::uint32_t kRescaleIntercept = tag(0x0028, 0x1052);
constexpr std::uint32_t kRescaleSlope = tag(0x0028, 0x1053);
constexpr std::uint32_t kPixelData = tag(0x7FE0, 0x0010);
constexpr std::uint32_t kItem = tag(0xFFFE, 0xE000);
constexpr std::uint32_t kItemDelimiter = tag(0xFFFE, 0xE00D);
constexpr std::uint32_t kSequenceDelimiter = tag(0xFFFE, 0xE0DD);
constexpr std::uint32_t kUndefinedLength = 0xFFFFFFFFu;

inline std::string tag_name(std::uint32_t t) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "(%04X,%04X)", unsigned(t >> 16), unsigned(t & 0xffff));
  return buf;
}

inline bool has_long_length(char a, char b) {
  static constexpr const char* kLong[] = {"OB", "OD", "OF", "OL", "OV", "OW", "SQ",
                                          "SV", "UC", "UN", "UR", "UT", "UV"};
  for (const char* vr : kLong) {
    if (vr[0] == a && vr[1] == b) return true;
  }
  return false;
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t pos() const { return pos_; }
  bool at_end() const { return pos_ >= bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n) const {
    if (remaining() < n) throw Error(ErrorCode::MalformedDicom, "truncated at offset " + std::to_string(pos_));
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = std::uint16_t(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = std::uint32_t(bytes_[pos_]) | (std::uint32_t(bytes_[pos_ + 1]) << 8) |
                      (std::uint32_t(bytes_[pos_ + 2]) << 16) | (std::uint32_t(bytes_[pos_ + 3]) << 24);
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  void skip(std::size_t n) { take(n); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

struct ElementHeader {
  std::uint32_t tag = 0;
  char vr[2] = {0, 0};
  std::uint32_t length = 0;
};

inline ElementHeader read_header(Reader& r) {
  ElementHeader h;
  const std::uint16_t group = r.u16();
  const std::uint16_t element = r.u16();
  h.tag = tag(group, element);
  if (group == 0xFFFE) {
    h.length = r.u32();
    return h;
  }
  auto vr = r.take(2);
  h.vr[0] = char(vr[0]);
  h.vr[1] = char(vr[1]);
  if (has_long_length(h.vr[0], h.vr[1])) {
    r.skip(2);
    h.length = r.u32();
  } else {
    h.length = r.u16();
  }
  return h;
}

inline void skip_value(Reader& r, const ElementHeader& h);

// Skips the elements of an undefined-length item up to its delimiter.
inline void skip_item_elements(Reader& r) {
  while (true) {
    auto h = read_header(r);
    if (h.tag == kItemDelimiter) return;
    skip_value(r, h);
  }
}

inline void skip_value(Reader& r, const ElementHeader& h) {
  if (h.length != kUndefinedLength) {
    r.skip(h.length);
    return;
  }
  // Undefined length: a sequence of items terminated by a sequence delimiter.
  while (true) {
    auto item = read_header(r);
    if (item.tag == kSequenceDelimiter) return;
    if (item.tag != kItem) throw Error(ErrorCode::MalformedDicom, "expected item in sequence");
    if (item.length == kUndefinedLength) {
      skip_item_elements(r);
    } else {
      r.skip(item.length);
    }
  }
}

inline std::string value_string(std::span<const std::uint8_t> v) {
  std::string s(v.begin(), v.end());
  while (!s.empty() && (s.back() == '\0' || s.back() == ' ')) s.pop_back();
  return s;
}

inline std::vector<double> decimal_strings(std::span<const std::uint8_t> v, std::size_t expected,
                                           std::uint32_t t) {
  std::vector<double> out;
  const std::string s = value_string(v);
  std::size_t start = 0;
  while (start <= s.size()) {
    auto end = s.find('\\', start);
    if (end == std::string::npos) end = s.size();
    auto d = parse_double(std::string_view(s).substr(start, end - start));
    if (!d) throw Error(ErrorCode::MalformedDicom, "bad decimal string in " + tag_name(t));
    out.push_back(*d);
    start = end + 1;
  }
  if (out.size() != expected) {
    throw Error(ErrorCode::MalformedDicom, tag_name(t) + " expects " + std::to_string(expected) + " values");
  }
  return out;
}

inline std::uint16_t unsigned_short(std::span<const std::uint8_t> v, std::uint32_t t) {
  if (v.size() != 2) throw Error(ErrorCode::MalformedDicom, tag_name(t) + " must be a single US");
  return std::uint16_t(v[0] | (v[1] << 8));
}

}  // namespace dicom_detail

inline SliceRecord parse_dicom_slice(std::span<const std::uint8_t> bytes) {
  using namespace dicom_detail;
  if (bytes.size() < 132 || bytes[128] != 'D' || bytes[129] != 'I' || bytes[130] != 'C' || bytes[131] != 'M') {
    throw Error(ErrorCode::MissingMagic, "no DICM marker at offset 128");
  }
  Reader r(bytes.subspan(132));

  std::optional<std::string> transfer_syntax;
  std::optional<std::vector<double>> position, orientation, spacing;
  std::optional<double> slope, intercept;
  std::optional<std::uint16_t> rows, cols, bits;
  std::uint16_t pixel_representation = 1;
  std::optional<std::span<const std::uint8_t>> pixels;

  auto require_dataset_syntax = [&] {
    if (!transfer_syntax) throw Error(ErrorCode::MissingTag, tag_name(kTransferSyntax) + " Transfer Syntax UID");
    if (*transfer_syntax != kExplicitVrLittleEndian) {
      throw Error(ErrorCode::UnsupportedTransferSyntax, *transfer_syntax);
    }
  };
  bool dataset_started = false;

  while (!r.at_end()) {
    auto h = read_header(r);
    const std::uint16_t group = std::uint16_t(h.tag >> 16);
    if (group != 0x0002 && !dataset_started) {
      require_dataset_syntax();
      dataset_started = true;
    }
    if (h.tag == kPixelData) {
      if (h.length == kUndefinedLength) {
        throw Error(ErrorCode::UnsupportedTransferSyntax, "encapsulated pixel data");
      }
      if (!rows) throw Error(ErrorCode::MissingTag, tag_name(kRows) + " Rows");
      if (!cols) throw Error(ErrorCode::MissingTag, tag_name(kColumns) + " Columns");
      if (h.length != 2u * *rows * *cols) {
        throw Error(ErrorCode::PixelLengthMismatch, "pixel data has " + std::to_string(h.length) +
                                                        " bytes, expected " + std::to_string(2u * *rows * *cols));
      }
      pixels = r.take(h.length);
      break;
    }
    if (h.length == kUndefinedLength) {
      skip_value(r, h);
      continue;
    }
    auto value = r.take(h.length);
    switch (h.tag) {
      case kTransferSyntax: transfer_syntax = value_string(value); break;
      case kImagePosition: position = decimal_strings(value, 3, h.tag); break;
      case kImageOrientation: orientation = decimal_strings(value, 6, h.tag); break;
      case kPixelSpacing: spacing = decimal_strings(value, 2, h.tag); break;
      case kRescaleSlope: slope = decimal_strings(value, 1, h.tag)[0]; break;
      case kRescaleIntercept: intercept = decimal_strings(value, 1, h.tag)[0]; break;
      case kRows: rows = unsigned_short(value, h.tag); break;
      case kColumns: cols = unsigned_short(value, h.tag); break;
      case kBitsAllocated: bits = unsigned_short(value, h.tag); break;
      case kPixelRepresentation: pixel_representation = unsigned_short(value, h.tag); break;
      default: break;
    }
  }
  if (!dataset_started) require_dataset_syntax();

  auto missing = [](std::uint32_t t, const char* name) {
    return Error(ErrorCode::MissingTag, tag_name(t) + " " + name);
  };
  if (!rows) throw missing(kRows, "Rows");
  if (!cols) throw missing(kColumns, "Columns");
  if (!spacing) throw missing(kPixelSpacing, "Pixel Spacing");
  if (!position) throw missing(kImagePosition, "Image Position (Patient)");
  if (!orientation) throw missing(kImageOrientation, "Image Orientation (Patient)");
  if (!slope) throw missing(kRescaleSlope, "Rescale Slope");
  if (!intercept) throw missing(kRescaleIntercept, "Rescale Intercept");
  if (!bits) throw missing(kBitsAllocated, "Bits Allocated");
  if (!pixels) throw missing(kPixelData, "Pixel Data");
  if (*bits != 16) {
    throw Error(ErrorCode::UnsupportedTransferSyntax, "Bits Allocated " + std::to_string(*bits) + " (need 16)");
  }
  if (*rows == 0 || *cols == 0) throw Error(ErrorCode::MalformedDicom, "zero image size");
  if ((*spacing)[0] <= 0 || (*spacing)[1] <= 0) throw Error(ErrorCode::MalformedDicom, "non-positive pixel spacing");

  SliceRecord s;
  s.rows = *rows;
  s.cols = *cols;
  s.row_spacing_mm = (*spacing)[0];
  s.col_spacing_mm = (*spacing)[1];
  s.image_position = Vec3((*position)[0], (*position)[1], (*position)[2]);
  const auto& o = *orientation;
  Vec3 row_dir(o[0], o[1], o[2]);
  Vec3 col_dir(o[3], o[4], o[5]);
  if (row_dir.norm() < 1e-6 || col_dir.norm() < 1e-6) throw Error(ErrorCode::MalformedDicom, "zero orientation vector");
  row_dir.normalize();
  col_dir = (col_dir - row_dir * row_dir.dot(col_dir)).normalized();
  s.row_direction = row_dir;
  s.col_direction = col_dir;
  s.slice_normal = row_dir.cross(col_dir).normalized();
  s.rescale_slope = *slope;
  s.rescale_intercept = *intercept;
  s.raw_pixels.resize(s.rows * s.cols);
  const auto& px = *pixels;
  for (std::size_t i = 0; i < s.raw_pixels.size(); ++i) {
    const std::uint16_t u = std::uint16_t(px[2 * i] | (px[2 * i + 1] << 8));
    if (pixel_representation == 0) {
      s.raw_pixels[i] = static_cast<std::int16_t>(std::min<std::uint16_t>(u, 32767));
    } else {
      s.raw_pixels[i] = static_cast<std::int16_t>(u);
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Writer used for phantoms and fixtures.

namespace dicom_detail {

class Writer {
 public:
  void element(std::uint16_t group, std::uint16_t elem, const char* vr, std::vector<std::uint8_t> value,
               std::uint8_t pad) {
    if (value.size() % 2) value.push_back(pad);
    put16(group);
    put16(elem);
    out_.push_back(std::uint8_t(vr[0]));
    out_.push_back(std::uint8_t(vr[1]));
    if (has_long_length(vr[0], vr[1])) {
      put16(0);
      put32(std::uint32_t(value.size()));
    } else {
      put16(std::uint16_t(value.size()));
    }
    out_.insert(out_.end(), value.begin(), value.end());
  }
  void text(std::uint16_t group, std::uint16_t elem, const char* vr, std::string_view s) {
    const std::uint8_t pad = (vr[0] == 'U' && vr[1] == 'I') ? 0 : ' ';
    element(group, elem, vr, std::vector<std::uint8_t>(s.begin(), s.end()), pad);
  }
  void us(std::uint16_t group, std::uint16_t elem, std::uint16_t v) {
    element(group, elem, "US", {std::uint8_t(v & 0xff), std::uint8_t(v >> 8)}, 0);
  }
  void ul(std::uint16_t group, std::uint16_t elem, std::uint32_t v) {
    element(group, elem, "UL",
            {std::uint8_t(v & 0xff), std::uint8_t((v >> 8) & 0xff), std::uint8_t((v >> 16) & 0xff),
             std::uint8_t(v >> 24)},
            0);
  }
  std::vector<std::uint8_t>& bytes() { return out_; }

 private:
  void put16(std::uint16_t v) {
    out_.push_back(std::uint8_t(v & 0xff));
    out_.push_back(std::uint8_t(v >> 8));
  }
  void put32(std::uint32_t v) {
    put16(std::uint16_t(v & 0xffff));
    put16(std::uint16_t(v >> 16));
  }
  std::vector<std::uint8_t> out_;
};

// DS values are limited to 16 characters.
inline std::string decimal_string(double v) {
  std::string s = format_double(v);
  if (s.size() <= 16) return s;
  char buf[32];
  for (int precision = 12; precision > 0; --precision) {
    std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
    if (std::strlen(buf) <= 16) return buf;
  }
  return "0";
}

inline std::string decimal_strings(std::initializer_list<double> values) {
  std::string s;
  for (double v : values) {
    if (!s.empty()) s += '\\';
    s += decimal_string(v);
  }
  return s;
}

}  // namespace dicom_detail

inline std::vector<std::uint8_t> write_dicom_slice(const SliceRecord& s, int instance_number = 1) {
  using dicom_detail::Writer;
  using dicom_detail::decimal_strings;
  const std::string instance_uid = "2.25.1000." + std::to_string(instance_number);

  Writer meta;
  meta.element(0x0002, 0x0001, "OB", {0x00, 0x01}, 0);
  meta.text(0x0002, 0x0002, "UI", kCtImageStorage);
  meta.text(0x0002, 0x0003, "UI", instance_uid);
  meta.text(0x0002, 0x0010, "UI", kExplicitVrLittleEndian);
  meta.text(0x0002, 0x0012, "UI", "2.25.1000.1");

  Writer file;
  file.bytes().assign(128, 0);
  for (char c : std::string_view("DICM")) file.bytes().push_back(std::uint8_t(c));
  file.ul(0x0002, 0x0000, std::uint32_t(meta.bytes().size()));
  file.bytes().insert(file.bytes().end(), meta.bytes().begin(), meta.bytes().end());

  file.text(0x0008, 0x0016, "UI", kCtImageStorage);
  file.text(0x0008, 0x0018, "UI", instance_uid);
  file.text(0x0008, 0x0060, "CS", "CT");
  file.text(0x0020, 0x0013, "IS", std::to_string(instance_number));
  const auto& p = s.image_position;
  file.text(0x0020, 0x0032, "DS", decimal_strings({p.x(), p.y(), p.z()}));
  const auto& rd = s.row_direction;
  const auto& cd = s.col_direction;
  file.text(0x0020, 0x0037, "DS", decimal_strings({rd.x(), rd.y(), rd.z(), cd.x(), cd.y(), cd.z()}));
  file.us(0x0028, 0x0002, 1);
  file.text(0x0028, 0x0004, "CS", "MONOCHROME2");
  file.us(0x0028, 0x0010, std::uint16_t(s.rows));
  file.us(0x0028, 0x0011, std::uint16_t(s.cols));
  file.text(0x0028, 0x0030, "DS", decimal_strings({s.row_spacing_mm, s.col_spacing_mm}));
  file.us(0x0028, 0x0100, 16);
  file.us(0x0028, 0x0101, 16);
  file.us(0x0028, 0x0102, 15);
  file.us(0x0028, 0x0103, 1);
  file.text(0x0028, 0x1052, "DS", decimal_strings({s.rescale_intercept}));
  file.text(0x0028, 0x1053, "DS", decimal_strings({s.rescale_slope}));
  std::vector<std::uint8_t> px(s.raw_pixels.size() * 2);
  for (std::size_t i = 0; i < s.raw_pixels.size(); ++i) {
    const auto u = static_cast<std::uint16_t>(s.raw_pixels[i]);
    px[2 * i] = std::uint8_t(u & 0xff);
    px[2 * i + 1] = std::uint8_t(u >> 8);
  }
  file.element(0x7FE0, 0x0010, "OW", std::move(px), 0);
  return std::move(file.bytes());
}

/// Splits a volume back into slices (raw = HU, slope 1, intercept 0 unless given).
inline std::vector<SliceRecord> slice_volume(const VoxelVolume& vol, double slope = 1.0, double intercept = 0.0) {
  std::vector<SliceRecord> out;
  const std::size_t plane = vol.nx() * vol.ny();
  for (std::size_t k = 0; k < vol.nz(); ++k) {
    SliceRecord s;
    s.rows = vol.ny();
    s.cols = vol.nx();
    s.row_spacing_mm = vol.geometry.spacing.y();
    s.col_spacing_mm = vol.geometry.spacing.x();
    s.image_position = vol.geometry.to_patient(0, 0, double(k));
    s.row_direction = vol.geometry.orientation.col(0);
    s.col_direction = vol.geometry.orientation.col(1);
    s.slice_normal = vol.geometry.orientation.col(2);
    s.rescale_slope = slope;
    s.rescale_intercept = intercept;
    s.raw_pixels.resize(plane);
    for (std::size_t p = 0; p < plane; ++p) {
      const double raw = std::round((vol.samples[k * plane + p] - intercept) / slope);
      s.raw_pixels[p] = static_cast<std::int16_t>(std::clamp(raw, -32768.0, 32767.0));
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Parses every regular file in a directory as a slice and assembles them.
inline VoxelVolume load_dicom_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::IoError, dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<SliceRecord> slices;
  for (const auto& f : files) slices.push_back(parse_dicom_slice(read_file_bytes(f)));
  return assemble_volume(std::move(slices));
}

}  // namespace neuronav
