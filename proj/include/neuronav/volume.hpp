#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "neuronav/error.hpp"
#include "neuronav/rigid.hpp"
#include "neuronav/text_doc.hpp"

namespace neuronav {

inline constexpr int kHuMin = -1024;
inline constexpr int kHuMax = 4000;

/// One decoded CT slice; pixels are stored before rescale.
struct SliceRecord {
  std::size_t rows = 0;
  std::size_t cols = 0;
  double row_spacing_mm = 1.0;  // distance between adjacent rows
  double col_spacing_mm = 1.0;  // distance between adjacent columns
  Vec3 image_position = Vec3::Zero();
  Vec3 row_direction = Vec3::UnitX();  // direction of increasing column index
  Vec3 col_direction = Vec3::UnitY();  // direction of increasing row index
  Vec3 slice_normal = Vec3::UnitZ();
  double rescale_slope = 1.0;
  double rescale_intercept = 0.0;
  std::vector<std::int16_t> raw_pixels;
};

using Dims = std::array<std::size_t, 3>;

/// Geometry shared by volumes, masks and meshes extracted from them.
struct VolumeGeometry {
  Vec3 spacing = Vec3::Ones();
  Vec3 origin = Vec3::Zero();
  Mat3 orientation = Mat3::Identity();  // columns: i, j, k axis directions

  Vec3 to_patient(double i, double j, double k) const {
    return origin + orientation * Vec3(i * spacing.x(), j * spacing.y(), k * spacing.z());
  }
};

/// Hounsfield-unit scalar grid; samples[(k * ny + j) * nx + i].
struct VoxelVolume {
  Dims dims{0, 0, 0};
  VolumeGeometry geometry;
  std::vector<std::int16_t> samples;

  std::size_t nx() const { return dims[0]; }
  std::size_t ny() const { return dims[1]; }
  std::size_t nz() const { return dims[2]; }
  std::size_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
    return (k * dims[1] + j) * dims[0] + i;
  }
  std::int16_t at(std::size_t i, std::size_t j, std::size_t k) const { return samples[index(i, j, k)]; }
};

inline bool is_rotation(const Mat3& m, double tol = 1e-6) {
  return (m * m.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < tol &&
         std::abs(m.determinant() - 1.0) < tol;
}

inline void validate_volume(const VoxelVolume& v, ErrorCode code) {
  for (auto d : v.dims) {
    if (d == 0) throw Error(code, "volume dimension is zero");
  }
  if ((v.geometry.spacing.array() <= 0.0).any()) throw Error(code, "spacing must be positive");
  if (!is_rotation(v.geometry.orientation)) throw Error(code, "orientation is not a proper rotation");
  if (v.samples.size() != v.voxel_count()) throw Error(code, "sample count does not match dims");
  const auto [lo, hi] = std::minmax_element(v.samples.begin(), v.samples.end());
  if (*lo < kHuMin || *hi > kHuMax) throw Error(code, "sample outside the HU range [-1024, 4000]");
}

inline std::int16_t rescale_to_hu(std::int16_t raw, double slope, double intercept) {
  const double hu = std::round(static_cast<double>(raw) * slope + intercept);
  return static_cast<std::int16_t>(std::clamp(hu, double(kHuMin), double(kHuMax)));
}

/// Sorts slices along their normal, checks spacing, and rescales to HU.
inline VoxelVolume assemble_volume(std::vector<SliceRecord> slices) {
  if (slices.size() < 2) throw Error(ErrorCode::TooFewSlices, "need at least 2 slices");
  const auto& ref = slices.front();
  constexpr double tol = 1e-6;
  for (const auto& s : slices) {
    if (s.rows != ref.rows || s.cols != ref.cols ||
        std::abs(s.row_spacing_mm - ref.row_spacing_mm) > tol ||
        std::abs(s.col_spacing_mm - ref.col_spacing_mm) > tol ||
        (s.row_direction - ref.row_direction).cwiseAbs().maxCoeff() > tol ||
        (s.col_direction - ref.col_direction).cwiseAbs().maxCoeff() > tol) {
      throw Error(ErrorCode::InconsistentGeometry, "slices disagree on size, spacing or orientation");
    }
    if (s.raw_pixels.size() != s.rows * s.cols) {
      throw Error(ErrorCode::InconsistentGeometry, "slice pixel count does not match rows x cols");
    }
  }
  const Vec3 normal = ref.slice_normal;
  std::vector<std::pair<double, std::size_t>> order;
  order.reserve(slices.size());
  for (std::size_t i = 0; i < slices.size(); ++i) {
    order.emplace_back(slices[i].image_position.dot(normal), i);
  }
  std::sort(order.begin(), order.end());

  std::vector<double> gaps;
  for (std::size_t i = 1; i < order.size(); ++i) gaps.push_back(order[i].first - order[i - 1].first);
  std::vector<double> sorted_gaps = gaps;
  std::nth_element(sorted_gaps.begin(), sorted_gaps.begin() + sorted_gaps.size() / 2, sorted_gaps.end());
  double median = sorted_gaps[sorted_gaps.size() / 2];
  if (sorted_gaps.size() % 2 == 0) {
    std::sort(sorted_gaps.begin(), sorted_gaps.end());
    median = 0.5 * (sorted_gaps[sorted_gaps.size() / 2 - 1] + sorted_gaps[sorted_gaps.size() / 2]);
  }
  if (!(median > 0.0)) throw Error(ErrorCode::InconsistentGeometry, "slices share a position");
  for (double g : gaps) {
    if (std::abs(g - median) > 0.01 * median) {
      throw Error(ErrorCode::NonUniformSpacing,
                  "gap " + format_double(g) + " deviates from median " + format_double(median));
    }
  }

  VoxelVolume vol;
  vol.dims = {ref.cols, ref.rows, slices.size()};
  vol.geometry.spacing = Vec3(ref.col_spacing_mm, ref.row_spacing_mm, median);
  vol.geometry.origin = slices[order.front().second].image_position;
  vol.geometry.orientation.col(0) = ref.row_direction;
  vol.geometry.orientation.col(1) = ref.col_direction;
  vol.geometry.orientation.col(2) = normal;
  const std::size_t plane = ref.rows * ref.cols;
  vol.samples.resize(plane * slices.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& s = slices[order[k].second];
    auto* dst = vol.samples.data() + k * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      dst[p] = rescale_to_hu(s.raw_pixels[p], s.rescale_slope, s.rescale_intercept);
    }
  }
  return vol;
}

// ---------------------------------------------------------------------------
// Raw-volume format: a UTF-8 key/value header, one blank line, then int16
// little-endian samples in x-fastest order.

struct RawVolumeParts {
  std::string header;
  std::vector<std::uint8_t> data;
};

inline std::string raw_volume_header(const Dims& dims, const VolumeGeometry& g) {
  std::string h;
  h += "dims: " + std::to_string(dims[0]) + " " + std::to_string(dims[1]) + " " + std::to_string(dims[2]) + "\n";
  h += "spacing: " + format_double(g.spacing.x()) + " " + format_double(g.spacing.y()) + " " +
       format_double(g.spacing.z()) + "\n";
  h += "origin: " + format_double(g.origin.x()) + " " + format_double(g.origin.y()) + " " +
       format_double(g.origin.z()) + "\n";
  h += "orientation:";
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) h += " " + format_double(g.orientation(r, c));
  }
  h += "\n";
  h += "dtype: int16le\n";
  return h;
}

inline RawVolumeParts write_raw_volume(const VoxelVolume& vol) {
  RawVolumeParts parts;
  parts.header = raw_volume_header(vol.dims, vol.geometry);
  parts.data.resize(vol.samples.size() * 2);
  for (std::size_t i = 0; i < vol.samples.size(); ++i) {
    const auto u = static_cast<std::uint16_t>(vol.samples[i]);
    parts.data[2 * i] = static_cast<std::uint8_t>(u & 0xff);
    parts.data[2 * i + 1] = static_cast<std::uint8_t>(u >> 8);
  }
  return parts;
}

inline VoxelVolume read_raw_volume(std::string_view header, std::span<const std::uint8_t> data) {
  const auto doc = TextDoc::parse(header, ErrorCode::HeaderParseError);
  VoxelVolume vol;
  const auto dims = doc.numbers("dims", 3);
  for (int i = 0; i < 3; ++i) {
    if (dims[i] < 1 || dims[i] != std::floor(dims[i])) {
      throw Error(ErrorCode::HeaderParseError, "dims must be positive integers");
    }
    vol.dims[i] = static_cast<std::size_t>(dims[i]);
  }
  const auto sp = doc.numbers("spacing", 3);
  const auto org = doc.numbers("origin", 3);
  const auto ori = doc.numbers("orientation", 9);
  vol.geometry.spacing = Vec3(sp[0], sp[1], sp[2]);
  vol.geometry.origin = Vec3(org[0], org[1], org[2]);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) vol.geometry.orientation(r, c) = ori[3 * r + c];
  }
  if (doc.str("dtype") != "int16le") throw Error(ErrorCode::HeaderParseError, "dtype must be int16le");
  const std::size_t n = vol.voxel_count();
  if (data.size() != 2 * n) {
    throw Error(ErrorCode::LengthMismatch, "expected " + std::to_string(2 * n) + " bytes, got " +
                                               std::to_string(data.size()));
  }
  vol.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    vol.samples[i] = static_cast<std::int16_t>(static_cast<std::uint16_t>(data[2 * i]) |
                                               (static_cast<std::uint16_t>(data[2 * i + 1]) << 8));
  }
  validate_volume(vol, ErrorCode::HeaderParseError);
  return vol;
}

/// Single-file form: header, blank line, samples.
inline std::vector<std::uint8_t> encode_raw_volume_file(const VoxelVolume& vol) {
  auto parts = write_raw_volume(vol);
  std::vector<std::uint8_t> out(parts.header.begin(), parts.header.end());
  out.push_back('\n');
  out.insert(out.end(), parts.data.begin(), parts.data.end());
  return out;
}

inline VoxelVolume decode_raw_volume_file(std::span<const std::uint8_t> bytes) {
  const std::string_view text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  std::size_t sep = text.find("\n\n");
  std::size_t skip = 2;
  const auto crlf = text.find("\r\n\r\n");
  if (crlf != std::string_view::npos && (sep == std::string_view::npos || crlf < sep)) {
    sep = crlf;
    skip = 4;
  }
  if (sep == std::string_view::npos) throw Error(ErrorCode::HeaderParseError, "missing blank line after header");
  return read_raw_volume(text.substr(0, sep + 1), bytes.subspan(sep + skip));
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(in.tellg()));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw Error(ErrorCode::IoError, "read failed for " + path.string());
  return bytes;
}

inline std::string read_file_text(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

inline void write_file_text(const std::filesystem::path& path, std::string_view text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline VoxelVolume load_raw_volume(const std::filesystem::path& path) {
  return decode_raw_volume_file(read_file_bytes(path));
}

inline void save_raw_volume(const std::filesystem::path& path, const VoxelVolume& vol) {
  write_file_bytes(path, encode_raw_volume_file(vol));
}

}  // namespace neuronav
