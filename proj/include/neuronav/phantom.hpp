#pragma once

// Synthetic head phantoms with recorded ground truth: an air background, a
// spherical bone shell, brain tissue inside and CSF-filled ellipsoids.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "neuronav/segmentation.hpp"
#include "neuronav/volume.hpp"

namespace neuronav {

struct Ellipsoid {
  Vec3 center = Vec3::Zero();      // mm, patient space
  Vec3 semi_axes = Vec3::Ones();   // mm
  bool contains(const Vec3& p) const { return ((p - center).array() / semi_axes.array()).square().sum() <= 1.0; }
};

struct HeadPhantomSpec {
  Dims dims{64, 64, 64};
  Vec3 spacing = Vec3::Ones();
  Vec3 head_center = Vec3::Zero();  // grid is centred on the patient origin
  double skull_inner_mm = 20.0;
  double skull_outer_mm = 26.0;
  std::vector<Ellipsoid> ventricles{
      {Vec3(-6.0, 0.0, 0.0), Vec3(4.0, 9.0, 5.0)},
      {Vec3(6.0, 0.0, 0.0), Vec3(4.0, 9.0, 5.0)},
  };
  int air_hu = -1000;
  int bone_hu = 1000;
  int brain_hu = 40;
  int csf_hu = 5;
  bool hemisphere_only = false;       // keep the shell only where z >= head centre
  std::optional<std::array<std::size_t, 3>> stray_bone_voxel;
  double noise_hu = 0.0;              // uniform noise amplitude (+/-)
  std::uint32_t seed = 1;

  VolumeGeometry geometry() const {
    VolumeGeometry g;
    g.spacing = spacing;
    g.origin = -0.5 * Vec3((dims[0] - 1) * spacing.x(), (dims[1] - 1) * spacing.y(), (dims[2] - 1) * spacing.z());
    return g;
  }
};

struct HeadPhantom {
  VoxelVolume volume;
  LabelMask skull;
  LabelMask ventricles;
};

inline HeadPhantom make_head_phantom(const HeadPhantomSpec& spec) {
  HeadPhantom ph;
  ph.volume.dims = spec.dims;
  ph.volume.geometry = spec.geometry();
  ph.volume.samples.assign(ph.volume.voxel_count(), 0);
  ph.skull = LabelMask(spec.dims);
  ph.ventricles = LabelMask(spec.dims);

  std::mt19937 rng(spec.seed);
  std::uniform_real_distribution<double> noise(-spec.noise_hu, spec.noise_hu);
  const double r_in2 = spec.skull_inner_mm * spec.skull_inner_mm;
  const double r_out2 = spec.skull_outer_mm * spec.skull_outer_mm;
  const auto& g = ph.volume.geometry;

  for (std::size_t k = 0; k < spec.dims[2]; ++k) {
    for (std::size_t j = 0; j < spec.dims[1]; ++j) {
      for (std::size_t i = 0; i < spec.dims[0]; ++i) {
        const Vec3 p = g.to_patient(double(i), double(j), double(k));
        const Vec3 d = p - spec.head_center;
        const double r2 = d.squaredNorm();
        const std::size_t idx = ph.volume.index(i, j, k);
        int hu = spec.air_hu;
        if (r2 < r_in2) {
          hu = spec.brain_hu;
          for (const auto& e : spec.ventricles) {
            if (e.contains(p)) {
              hu = spec.csf_hu;
              ph.ventricles.bits[idx] = 1;
              break;
            }
          }
        } else if (r2 <= r_out2 && (!spec.hemisphere_only || d.z() >= 0.0)) {
          hu = spec.bone_hu;
          ph.skull.bits[idx] = 1;
        }
        double value = hu;
        if (spec.noise_hu > 0) value += noise(rng);
        ph.volume.samples[idx] = static_cast<std::int16_t>(std::clamp(std::round(value), double(kHuMin), double(kHuMax)));
      }
    }
  }
  if (spec.stray_bone_voxel) {
    const auto [i, j, k] = *spec.stray_bone_voxel;
    ph.volume.samples[ph.volume.index(i, j, k)] = static_cast<std::int16_t>(spec.bone_hu);
  }
  return ph;
}

/// Digitised solid sphere (voxel centres within radius, in voxel units).
inline LabelMask sphere_mask(const Dims& dims, const Vec3& center_vox, double radius_vox) {
  LabelMask m(dims);
  for (std::size_t k = 0; k < dims[2]; ++k)
    for (std::size_t j = 0; j < dims[1]; ++j)
      for (std::size_t i = 0; i < dims[0]; ++i) {
        if ((Vec3(double(i), double(j), double(k)) - center_vox).squaredNorm() <= radius_vox * radius_vox) m.set(i, j, k);
      }
  return m;
}

}  // namespace neuronav
