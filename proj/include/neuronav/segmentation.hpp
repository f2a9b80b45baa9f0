#pragma once

// Skull and ventricle masks from a CT volume: HU thresholding, binary
// morphology, connected components and an enclosed-interior test.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "neuronav/error.hpp"
#include "neuronav/volume.hpp"

namespace neuronav {

/// Binary voxel mask aligned with a VoxelVolume (same indexing).
struct LabelMask {
  Dims dims{0, 0, 0};
  std::vector<std::uint8_t> bits;

  LabelMask() = default;
  explicit LabelMask(const Dims& d) : dims(d), bits(d[0] * d[1] * d[2], 0) {}

  std::size_t size() const { return bits.size(); }
  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const { return (k * dims[1] + j) * dims[0] + i; }
  bool at(std::size_t i, std::size_t j, std::size_t k) const { return bits[index(i, j, k)] != 0; }
  void set(std::size_t i, std::size_t j, std::size_t k, bool v = true) { bits[index(i, j, k)] = v ? 1 : 0; }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
  }
  bool empty() const {
    return std::none_of(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; });
  }
  friend bool operator==(const LabelMask&, const LabelMask&) = default;
};

enum class Connectivity { Six = 6, TwentySix = 26 };

inline Connectivity connectivity_from_int(int c) {
  if (c == 6) return Connectivity::Six;
  if (c == 26) return Connectivity::TwentySix;
  throw Error(ErrorCode::InvalidConfig, "connectivity must be 6 or 26");
}

struct SegmentationConfig {
  double bone_hu_min = 300;
  double csf_hu_min = 0;
  double csf_hu_max = 15;
  std::size_t min_component_voxels = 100;
  std::size_t closing_radius_vox = 1;
  int connectivity = 26;          // connected components
  int closing_connectivity = 6;   // structuring element for closing

  void validate() const {
    if (!(csf_hu_min < csf_hu_max && csf_hu_max < bone_hu_min)) {
      throw Error(ErrorCode::InvalidConfig, "need csf_hu_min < csf_hu_max < bone_hu_min");
    }
    if (min_component_voxels < 1) throw Error(ErrorCode::InvalidConfig, "min_component_voxels must be >= 1");
    connectivity_from_int(connectivity);
    connectivity_from_int(closing_connectivity);
  }
};

inline double dice_coefficient(const LabelMask& a, const LabelMask& b) {
  if (a.dims != b.dims) throw Error(ErrorCode::DimensionMismatch, "mask dims differ");
  std::size_t both = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    const bool x = a.bits[i] != 0, y = b.bits[i] != 0;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * double(both) / double(na + nb);
}

/// Exports a mask as a 0/1 volume in the given geometry.
inline VoxelVolume mask_to_volume(const LabelMask& m, const VolumeGeometry& g) {
  VoxelVolume v;
  v.dims = m.dims;
  v.geometry = g;
  v.samples.assign(m.bits.begin(), m.bits.end());
  return v;
}

inline LabelMask threshold_mask(const VoxelVolume& volume, double lo, double hi) {
  if (lo > hi) throw Error(ErrorCode::InvalidRange, "lo > hi");
  LabelMask m(volume.dims);
  const auto n = volume.samples.size();
  const auto* s = volume.samples.data();
  auto* out = m.bits.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = s[i];
    out[i] = (v >= lo && v <= hi) ? 1 : 0;
  }
  return m;
}

namespace seg_detail {

struct Offset {
  int dx, dy, dz;
};

inline std::vector<Offset> neighbor_offsets(Connectivity c) {
  std::vector<Offset> out;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int l1 = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (l1 == 0) continue;
        if (c == Connectivity::Six && l1 != 1) continue;
        out.push_back({dx, dy, dz});
      }
  return out;
}

// Calls visit(neighbor_index) for each in-grid neighbour of voxel idx.
template <typename Visit>
inline void for_each_neighbor(const Dims& d, std::size_t idx, const std::vector<Offset>& offsets, Visit&& visit) {
  const std::size_t nx = d[0], ny = d[1], nz = d[2];
  const std::size_t i = idx % nx;
  const std::size_t j = (idx / nx) % ny;
  const std::size_t k = idx / (nx * ny);
  for (const auto& o : offsets) {
    const std::ptrdiff_t ii = std::ptrdiff_t(i) + o.dx, jj = std::ptrdiff_t(j) + o.dy, kk = std::ptrdiff_t(k) + o.dz;
    if (ii < 0 || jj < 0 || kk < 0 || ii >= std::ptrdiff_t(nx) || jj >= std::ptrdiff_t(ny) || kk >= std::ptrdiff_t(nz))
      continue;
    visit((std::size_t(kk) * ny + std::size_t(jj)) * nx + std::size_t(ii));
  }
}

}  // namespace seg_detail

/// Component labelling. Labels are 1-based and ordered by each component's
/// lowest voxel index; 0 marks background.
struct ComponentLabels {
  std::vector<std::uint32_t> labels;
  std::vector<std::size_t> sizes;       // sizes[label - 1]
  std::vector<std::size_t> min_index;   // min_index[label - 1]

  /// Label ids sorted by size descending, ties by lowest min_index.
  std::vector<std::uint32_t> by_size() const {
    std::vector<std::uint32_t> ids(sizes.size());
    std::iota(ids.begin(), ids.end(), 1u);
    std::stable_sort(ids.begin(), ids.end(), [&](auto a, auto b) { return sizes[a - 1] > sizes[b - 1]; });
    return ids;
  }
};

inline ComponentLabels label_components(const LabelMask& mask, Connectivity conn) {
  ComponentLabels out;
  out.labels.assign(mask.size(), 0);
  const auto offsets = seg_detail::neighbor_offsets(conn);
  std::vector<std::size_t> stack;
  for (std::size_t seed = 0; seed < mask.size(); ++seed) {
    if (!mask.bits[seed] || out.labels[seed]) continue;
    const auto label = static_cast<std::uint32_t>(out.sizes.size() + 1);
    std::size_t size = 0;
    out.labels[seed] = label;
    stack.push_back(seed);
    while (!stack.empty()) {
      const auto idx = stack.back();
      stack.pop_back();
      ++size;
      seg_detail::for_each_neighbor(mask.dims, idx, offsets, [&](std::size_t n) {
        if (mask.bits[n] && !out.labels[n]) {
          out.labels[n] = label;
          stack.push_back(n);
        }
      });
    }
    out.sizes.push_back(size);
    out.min_index.push_back(seed);
  }
  return out;
}

inline LabelMask component_mask(const ComponentLabels& cl, const Dims& dims, std::uint32_t label) {
  LabelMask m(dims);
  for (std::size_t i = 0; i < cl.labels.size(); ++i) m.bits[i] = cl.labels[i] == label;
  return m;
}

/// Components sorted by size (descending), ties broken by lowest voxel index.
inline std::vector<LabelMask> connected_components(const LabelMask& mask, Connectivity conn) {
  const auto cl = label_components(mask, conn);
  std::vector<LabelMask> out;
  for (auto id : cl.by_size()) out.push_back(component_mask(cl, mask.dims, id));
  return out;
}

enum class MorphOp { Erode, Dilate, Open, Close };

namespace seg_detail {

// Radius-1 cross step restricted to the grid: dilate ORs, erode ANDs over
// in-grid neighbours.
inline LabelMask cross_step(const LabelMask& in, bool dilate) {
  LabelMask out(in.dims);
  const std::size_t nx = in.dims[0], ny = in.dims[1], nz = in.dims[2];
  const std::size_t sy = nx, sz = nx * ny;
  const auto* a = in.bits.data();
  auto* b = out.bits.data();
  for (std::size_t k = 0; k < nz; ++k) {
    for (std::size_t j = 0; j < ny; ++j) {
      const std::size_t row = k * sz + j * sy;
      for (std::size_t i = 0; i < nx; ++i) {
        const std::size_t p = row + i;
        std::uint8_t v = a[p];
        if (dilate) {
          if (v) { b[p] = 1; continue; }
          v = (i > 0 && a[p - 1]) || (i + 1 < nx && a[p + 1]) || (j > 0 && a[p - sy]) ||
              (j + 1 < ny && a[p + sy]) || (k > 0 && a[p - sz]) || (k + 1 < nz && a[p + sz]);
        } else {
          if (!v) { b[p] = 0; continue; }
          v = (i == 0 || a[p - 1]) && (i + 1 >= nx || a[p + 1]) && (j == 0 || a[p - sy]) &&
              (j + 1 >= ny || a[p + sy]) && (k == 0 || a[p - sz]) && (k + 1 >= nz || a[p + sz]);
        }
        b[p] = v ? 1 : 0;
      }
    }
  }
  return out;
}

// 1D max (dilate) or min (erode) over the in-grid window [x - r, x + r]
// along one axis.
inline LabelMask box_pass(const LabelMask& in, int axis, std::size_t r, bool dilate) {
  LabelMask out(in.dims);
  const std::size_t n = in.dims[axis];
  const std::size_t stride = axis == 0 ? 1 : (axis == 1 ? in.dims[0] : in.dims[0] * in.dims[1]);
  const std::size_t lines = in.size() / n;
  std::vector<std::size_t> prefix(n + 1);
  for (std::size_t line = 0; line < lines; ++line) {
    std::size_t base;
    if (axis == 0) {
      base = line * n;
    } else if (axis == 1) {
      base = (line / in.dims[0]) * in.dims[0] * in.dims[1] + line % in.dims[0];
    } else {
      base = line;
    }
    prefix[0] = 0;
    for (std::size_t x = 0; x < n; ++x) prefix[x + 1] = prefix[x] + in.bits[base + x * stride];
    for (std::size_t x = 0; x < n; ++x) {
      const std::size_t lo = x >= r ? x - r : 0;
      const std::size_t hi = std::min(n - 1, x + r);
      const std::size_t ones = prefix[hi + 1] - prefix[lo];
      out.bits[base + x * stride] = dilate ? (ones > 0) : (ones == hi - lo + 1);
    }
  }
  return out;
}

inline LabelMask basic(const LabelMask& m, bool dilate, std::size_t radius, Connectivity conn) {
  if (radius == 0) return m;
  if (conn == Connectivity::TwentySix) {
    auto out = box_pass(m, 0, radius, dilate);
    out = box_pass(out, 1, radius, dilate);
    return box_pass(out, 2, radius, dilate);
  }
  LabelMask out = m;
  for (std::size_t r = 0; r < radius; ++r) out = cross_step(out, dilate);
  return out;
}

}  // namespace seg_detail

/// Binary morphology with the connectivity ball of the given radius (L1 ball
/// for 6, cube for 26). Voxels outside the grid are ignored, so erosion does
/// not eat in from the volume border.
inline LabelMask morphology(const LabelMask& mask, MorphOp op, std::size_t radius_vox, Connectivity conn) {
  using seg_detail::basic;
  switch (op) {
    case MorphOp::Erode: return basic(mask, false, radius_vox, conn);
    case MorphOp::Dilate: return basic(mask, true, radius_vox, conn);
    case MorphOp::Open: return basic(basic(mask, false, radius_vox, conn), true, radius_vox, conn);
    case MorphOp::Close: return basic(basic(mask, true, radius_vox, conn), false, radius_vox, conn);
  }
  return mask;
}

inline LabelMask segment_skull(const VoxelVolume& volume, const SegmentationConfig& cfg) {
  cfg.validate();
  auto bone = threshold_mask(volume, cfg.bone_hu_min, std::numeric_limits<double>::infinity());
  bone = morphology(bone, MorphOp::Close, cfg.closing_radius_vox, connectivity_from_int(cfg.closing_connectivity));
  const auto cl = label_components(bone, connectivity_from_int(cfg.connectivity));
  if (cl.sizes.empty()) throw Error(ErrorCode::EmptySegment, "no voxel above bone threshold");
  return component_mask(cl, volume.dims, cl.by_size().front());
}

/// Voxels reachable from the volume boundary through non-skull voxels
/// (6-connected flood fill).
inline LabelMask exterior_region(const LabelMask& skull) {
  LabelMask ext(skull.dims);
  const auto offsets = seg_detail::neighbor_offsets(Connectivity::Six);
  const std::size_t nx = skull.dims[0], ny = skull.dims[1], nz = skull.dims[2];
  std::vector<std::size_t> stack;
  auto seed = [&](std::size_t i, std::size_t j, std::size_t k) {
    const auto p = skull.index(i, j, k);
    if (!skull.bits[p] && !ext.bits[p]) {
      ext.bits[p] = 1;
      stack.push_back(p);
    }
  };
  for (std::size_t k = 0; k < nz; ++k)
    for (std::size_t j = 0; j < ny; ++j)
      for (std::size_t i = 0; i < nx; ++i) {
        if (i == 0 || j == 0 || k == 0 || i + 1 == nx || j + 1 == ny || k + 1 == nz) seed(i, j, k);
      }
  while (!stack.empty()) {
    const auto p = stack.back();
    stack.pop_back();
    seg_detail::for_each_neighbor(skull.dims, p, offsets, [&](std::size_t n) {
      if (!skull.bits[n] && !ext.bits[n]) {
        ext.bits[n] = 1;
        stack.push_back(n);
      }
    });
  }
  return ext;
}

inline LabelMask segment_ventricles(const VoxelVolume& volume, const LabelMask& skull, const SegmentationConfig& cfg) {
  cfg.validate();
  if (skull.dims != volume.dims) throw Error(ErrorCode::DimensionMismatch, "skull mask dims differ from volume");
  const std::size_t skull_count = skull.count();
  if (skull_count == 0) throw Error(ErrorCode::InvalidArgument, "skull mask is empty");

  const auto exterior = exterior_region(skull);
  const std::size_t non_skull = skull.size() - skull_count;
  const std::size_t ext_count = exterior.count();
  if (double(ext_count) > 0.95 * double(non_skull)) {
    throw Error(ErrorCode::OpenSkull, "exterior flood fill reached " + std::to_string(ext_count) + " of " +
                                          std::to_string(non_skull) + " non-skull voxels");
  }

  LabelMask interior(volume.dims);
  LabelMask candidate(volume.dims);
  for (std::size_t p = 0; p < skull.size(); ++p) {
    const bool inside = !skull.bits[p] && !exterior.bits[p];
    interior.bits[p] = inside;
    const double hu = volume.samples[p];
    candidate.bits[p] = inside && hu >= cfg.csf_hu_min && hu <= cfg.csf_hu_max;
  }

  const auto cl = label_components(candidate, connectivity_from_int(cfg.connectivity));
  std::vector<std::uint8_t> keep(cl.sizes.size() + 1, 0);
  for (std::size_t c = 0; c < cl.sizes.size(); ++c) keep[c + 1] = cl.sizes[c] >= cfg.min_component_voxels;
  LabelMask kept(volume.dims);
  for (std::size_t p = 0; p < kept.size(); ++p) kept.bits[p] = keep[cl.labels[p]];

  auto closed = morphology(kept, MorphOp::Close, cfg.closing_radius_vox, connectivity_from_int(cfg.closing_connectivity));
  for (std::size_t p = 0; p < closed.size(); ++p) closed.bits[p] = closed.bits[p] && interior.bits[p];
  if (closed.empty()) throw Error(ErrorCode::EmptySegment, "no ventricle component survived");
  return closed;
}

}  // namespace neuronav
