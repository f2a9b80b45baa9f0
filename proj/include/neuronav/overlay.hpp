#pragma once

// CPU overlay renderer: visible scene nodes projected through the camera with
// a depth buffer. Opaque nodes are drawn first; the nearest transparent
// fragment in front of them is blended on top with the node's alpha.
// Flat shading, no lighting model beyond |n . view|.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>

#include "neuronav/error.hpp"
#include "neuronav/image.hpp"
#include "neuronav/marker.hpp"
#include "neuronav/mesh.hpp"
#include "neuronav/scene.hpp"

namespace neuronav {

using MeshStore = std::map<std::string, TriangleMesh>;  // keyed by node name

enum class ViewPreset { Front, Top, Left, Right };

inline ViewPreset parse_view_preset(std::string_view s) {
  if (s == "front") return ViewPreset::Front;
  if (s == "top") return ViewPreset::Top;
  if (s == "left") return ViewPreset::Left;
  if (s == "right") return ViewPreset::Right;
  throw Error(ErrorCode::InvalidArgument, "unknown view '" + std::string(s) + "' (expected top|left|right|front)");
}

inline const char* to_string(ViewPreset v) {
  switch (v) {
    case ViewPreset::Front: return "front";
    case ViewPreset::Top: return "top";
    case ViewPreset::Left: return "left";
    case ViewPreset::Right: return "right";
  }
  return "front";
}

namespace overlay_detail {

inline constexpr double kNearMm = 1.0;

struct Fragment {
  double depth = std::numeric_limits<double>::infinity();
  double shade = 0;
  int node = -1;
};

/// Rasterizes one node into a fragment buffer (nearest fragment wins).
/// Triangles with a vertex closer than the near plane are skipped.
inline void rasterize(const TriangleMesh& mesh, const RigidTransform& to_camera, const CameraIntrinsics& cam, int node,
                      std::vector<Fragment>& buffer, const std::vector<Fragment>* occluders) {
  std::vector<Vec3> pc(mesh.vertices.size());
  std::vector<Vec2> px(mesh.vertices.size());
  const Mat3 r = to_camera.rotation_matrix();
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    pc[i] = r * mesh.vertices[i] + to_camera.translation;
    px[i] = pc[i].z() > kNearMm ? cam.project(pc[i]) : Vec2::Zero();
  }
  for (const auto& t : mesh.triangles) {
    const Vec3 &a3 = pc[t[0]], &b3 = pc[t[1]], &c3 = pc[t[2]];
    if (a3.z() <= kNearMm || b3.z() <= kNearMm || c3.z() <= kNearMm) continue;
    const Vec3 n = (b3 - a3).cross(c3 - a3);
    const double nn = n.norm();
    if (nn == 0) continue;
    const Vec3 centre = (a3 + b3 + c3) / 3.0;
    const double shade = 0.35 + 0.65 * std::abs(n.dot(centre)) / (nn * centre.norm());

    const Vec2 &a = px[t[0]], &b = px[t[1]], &c = px[t[2]];
    const double area = (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
    if (area == 0) continue;
    const int x0 = std::max(0, int(std::ceil(std::min({a.x(), b.x(), c.x()}))));
    const int x1 = std::min(cam.width - 1, int(std::floor(std::max({a.x(), b.x(), c.x()}))));
    const int y0 = std::max(0, int(std::ceil(std::min({a.y(), b.y(), c.y()}))));
    const int y1 = std::min(cam.height - 1, int(std::floor(std::max({a.y(), b.y(), c.y()}))));
    // perspective-correct depth: interpolate 1/z
    const double iza = 1 / a3.z(), izb = 1 / b3.z(), izc = 1 / c3.z();
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double w0 = ((b.x() - x) * (c.y() - y) - (b.y() - y) * (c.x() - x)) / area;
        const double w1 = ((c.x() - x) * (a.y() - y) - (c.y() - y) * (a.x() - x)) / area;
        const double w2 = 1 - w0 - w1;
        if (w0 < 0 || w1 < 0 || w2 < 0) continue;
        const double depth = 1 / (w0 * iza + w1 * izb + w2 * izc);
        const std::size_t idx = std::size_t(y) * std::size_t(cam.width) + std::size_t(x);
        if (occluders && depth >= (*occluders)[idx].depth) continue;
        auto& f = buffer[idx];
        if (depth < f.depth) f = {depth, shade, node};
      }
    }
  }
}

}  // namespace overlay_detail

/// Renders visible nodes over the background (black when absent).
inline RgbImage render_overlay(const SceneState& scene, const MeshStore& meshes, const CameraIntrinsics& cam,
                               const std::optional<RgbImage>& background = std::nullopt) {
  using namespace overlay_detail;
  cam.validate();
  if (!scene.marker_pose) throw Error(ErrorCode::MissingPose, "scene has no marker pose");
  if (background && (background->width != cam.width || background->height != cam.height)) {
    throw Error(ErrorCode::InvalidArgument, "background size does not match camera");
  }
  RgbImage out = background ? *background : RgbImage(cam.width, cam.height);
  const std::size_t n = std::size_t(cam.width) * std::size_t(cam.height);
  std::vector<Fragment> opaque(n), transparent(n);

  std::vector<const ModelNode*> visible;
  for (const auto& node : scene.nodes) {
    if (!node.visible) continue;
    if (!meshes.count(node.name)) throw Error(ErrorCode::MissingMesh, "no mesh for node '" + node.name + "'");
    visible.push_back(&node);
  }
  for (std::size_t i = 0; i < visible.size(); ++i) {
    if (visible[i]->rgba[3] >= 1.0) {
      rasterize(meshes.at(visible[i]->name), node_in_camera(scene, *visible[i]), cam, int(i), opaque, nullptr);
    }
  }
  for (std::size_t i = 0; i < visible.size(); ++i) {
    if (visible[i]->rgba[3] < 1.0) {
      rasterize(meshes.at(visible[i]->name), node_in_camera(scene, *visible[i]), cam, int(i), transparent, &opaque);
    }
  }

  auto to_byte = [](double v) { return std::uint8_t(std::clamp(std::lround(v * 255.0), 0L, 255L)); };
  for (std::size_t p = 0; p < n; ++p) {
    std::uint8_t* px = &out.pixels[3 * p];
    if (opaque[p].node >= 0) {
      const auto& rgba = visible[std::size_t(opaque[p].node)]->rgba;
      for (int c = 0; c < 3; ++c) px[c] = to_byte(rgba[std::size_t(c)] * opaque[p].shade);
    }
    if (transparent[p].node >= 0) {
      const auto& rgba = visible[std::size_t(transparent[p].node)]->rgba;
      const double a = rgba[3];
      for (int c = 0; c < 3; ++c) px[c] = to_byte(a * rgba[std::size_t(c)] * transparent[p].shade + (1 - a) * px[c] / 255.0);
    }
  }
  return out;
}

/// Per-node silhouettes (255 where any triangle of the node covers the pixel
/// centre), ignoring occlusion between nodes. Hidden nodes are omitted.
inline std::map<std::string, GrayImage> render_coverage(const SceneState& scene, const MeshStore& meshes,
                                                        const CameraIntrinsics& cam) {
  using namespace overlay_detail;
  if (!scene.marker_pose) throw Error(ErrorCode::MissingPose, "scene has no marker pose");
  std::map<std::string, GrayImage> out;
  for (const auto& node : scene.nodes) {
    if (!node.visible) continue;
    if (!meshes.count(node.name)) throw Error(ErrorCode::MissingMesh, "no mesh for node '" + node.name + "'");
    std::vector<Fragment> buf(std::size_t(cam.width) * std::size_t(cam.height));
    rasterize(meshes.at(node.name), node_in_camera(scene, node), cam, 0, buf, nullptr);
    GrayImage mask(cam.width, cam.height, 0);
    for (std::size_t p = 0; p < buf.size(); ++p) mask.pixels[p] = buf[p].node >= 0 ? 255 : 0;
    out[node.name] = std::move(mask);
  }
  return out;
}

/// Marker-frame bounding sphere of the visible nodes' geometry.
inline std::pair<Vec3, double> scene_bounds(const SceneState& scene, const MeshStore& meshes) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const auto& node : scene.nodes) {
    if (!node.visible) continue;
    auto it = meshes.find(node.name);
    if (it == meshes.end()) throw Error(ErrorCode::MissingMesh, "no mesh for node '" + node.name + "'");
    for (const auto& v : it->second.vertices) {
      const Vec3 p = node.transform.apply(v);
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
  }
  if (!(lo.array() <= hi.array()).all()) return {Vec3::Zero(), 1.0};
  return {(lo + hi) / 2, std::max(1.0, (hi - lo).norm() / 2)};
}

/// Marker pose of a virtual camera looking at the scene centre from a preset
/// direction (marker frame): front from the printed side (-Z), top from +Y,
/// left from -X, right from +X. The distance frames the bounding sphere.
inline RigidPose view_preset_pose(ViewPreset view, const SceneState& scene, const MeshStore& meshes,
                                  const CameraIntrinsics& cam) {
  const auto [centre, radius] = scene_bounds(scene, meshes);
  Vec3 forward = Vec3::UnitZ(), up = Vec3::UnitY();
  switch (view) {
    case ViewPreset::Front: forward = Vec3::UnitZ(), up = Vec3::UnitY(); break;
    case ViewPreset::Top: forward = -Vec3::UnitY(), up = Vec3::UnitZ(); break;
    case ViewPreset::Left: forward = Vec3::UnitX(), up = Vec3::UnitY(); break;
    case ViewPreset::Right: forward = -Vec3::UnitX(), up = Vec3::UnitY(); break;
  }
  const double half_fov = std::min(std::atan2(cam.width / 2.0, cam.fx), std::atan2(cam.height / 2.0, cam.fy));
  const double distance = 1.25 * radius / std::sin(half_fov);
  const Vec3 eye = centre - distance * forward;
  Mat3 r_cm;  // rows: camera axes in marker frame
  r_cm.row(2) = forward.transpose();
  r_cm.row(1) = (-up).transpose();
  r_cm.row(0) = r_cm.row(1).cross(r_cm.row(2));
  return RigidPose::from_rotation_translation(r_cm, -(r_cm * eye));
}

/// Meshes for every scene node, read from mesh_ref relative to base_dir.
inline MeshStore load_scene_meshes(const SceneState& scene, const std::filesystem::path& base_dir) {
  MeshStore out;
  for (const auto& node : scene.nodes) {
    const auto path = base_dir / node.mesh_ref;
    if (!std::filesystem::is_regular_file(path)) throw Error(ErrorCode::MissingMesh, "mesh file " + path.string() + " not found");
    out[node.name] = import_obj_file(path);
  }
  return out;
}

}  // namespace neuronav
