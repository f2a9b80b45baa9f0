#pragma once

// Scene state: model nodes placed at a fixed offset from the marker, the text
// command protocol and the JSON scene document.
//
// Scene document (keys in this order):
//   format      "neuronav-scene"
//   version     1
//   revision    accepted-command counter
//   offset_mm   [x, y, z], marker frame
//   marker_pose null or {"rotation": [w, x, y, z], "translation": [x, y, z]}
//   nodes       [{"name", "mesh_ref", "transform" (model in marker frame, same
//               shape as marker_pose), "visible", "material": {"rgba": [r, g, b, a]}}]

#include <array>
#include <cctype>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "neuronav/error.hpp"
#include "neuronav/rigid.hpp"
#include "neuronav/text_doc.hpp"

namespace neuronav {

using Rgba = std::array<double, 4>;

inline const Vec3 kOffsetRight150{150.0, 0.0, 0.0};
inline const Vec3 kOffsetRight100{100.0, 0.0, 0.0};
inline constexpr Rgba kSkullRgba{0.93, 0.91, 0.84, 0.4};
inline constexpr Rgba kVentricleRgba{0.0, 1.0, 0.0, 1.0};

struct ModelNode {
  std::string name;
  std::string mesh_ref;
  RigidTransform transform;  // model in marker frame
  bool visible = true;
  Rgba rgba{1, 1, 1, 1};

  bool operator==(const ModelNode& o) const {
    return name == o.name && mesh_ref == o.mesh_ref && transform.rotation.coeffs() == o.transform.rotation.coeffs() &&
           transform.translation == o.transform.translation && visible == o.visible && rgba == o.rgba;
  }
};

struct SceneState {
  std::vector<ModelNode> nodes;
  std::optional<RigidPose> marker_pose;
  Vec3 offset_mm = kOffsetRight150;
  std::uint64_t revision = 0;

  const ModelNode* find(std::string_view name) const {
    for (const auto& n : nodes)
      if (n.name == name) return &n;
    return nullptr;
  }
  ModelNode* find(std::string_view name) {
    for (auto& n : nodes)
      if (n.name == name) return &n;
    return nullptr;
  }

  bool operator==(const SceneState& o) const {
    if (marker_pose.has_value() != o.marker_pose.has_value()) return false;
    if (marker_pose && (marker_pose->rotation.coeffs() != o.marker_pose->rotation.coeffs() ||
                        marker_pose->translation != o.marker_pose->translation)) {
      return false;
    }
    return nodes == o.nodes && offset_mm == o.offset_mm && revision == o.revision;
  }
};

/// Skull (alpha 0.4) and ventricles (opaque green), both placed at the offset.
inline SceneState default_scene(const Vec3& offset_mm = kOffsetRight150) {
  SceneState s;
  s.offset_mm = offset_mm;
  const auto t = RigidTransform::from_translation(offset_mm);
  s.nodes.push_back({"skull", "skull.obj", t, true, kSkullRgba});
  s.nodes.push_back({"ventricles", "ventricles.obj", t, true, kVentricleRgba});
  return s;
}

/// Model-in-camera transforms for both models: marker pose composed with a
/// pure translation by the offset (marker frame).
inline std::map<std::string, RigidTransform> place_models(const RigidPose& marker_pose, const Vec3& offset_mm) {
  const auto placed = rigid_compose(marker_pose, RigidTransform::from_translation(offset_mm));
  return {{"skull", placed}, {"ventricles", placed}};
}

/// Model-in-camera transform of one scene node.
inline RigidTransform node_in_camera(const SceneState& s, const ModelNode& node) {
  if (!s.marker_pose) throw Error(ErrorCode::MissingPose, "scene has no marker pose");
  return rigid_compose(*s.marker_pose, node.transform);
}

// ---------------------------------------------------------------------------
// Commands

/// "toggle skull", "toggle ventricles", "set offset x y z"; case-insensitive,
/// whitespace-separated. Accepted commands return a new state with revision + 1.
inline SceneState apply_command(const SceneState& state, std::string_view cmd) {
  std::string lower(cmd);
  for (auto& c : lower) c = char(std::tolower(static_cast<unsigned char>(c)));
  const auto tok = split_ws(lower);
  auto unknown = [&] { return Error(ErrorCode::UnknownCommand, "unknown command '" + std::string(trim(cmd)) + "'"); };

  SceneState next = state;
  if (tok.size() == 2 && tok[0] == "toggle") {
    auto* node = next.find(tok[1]);
    if (!node || (tok[1] != "skull" && tok[1] != "ventricles")) throw unknown();
    node->visible = !node->visible;
  } else if (tok.size() == 5 && tok[0] == "set" && tok[1] == "offset") {
    Vec3 off;
    for (int a = 0; a < 3; ++a) {
      auto v = parse_double(tok[std::size_t(a) + 2]);
      if (!v || !std::isfinite(*v)) throw unknown();
      off[a] = *v;
    }
    next.offset_mm = off;
    for (auto& n : next.nodes) n.transform = RigidTransform::from_translation(off);
  } else {
    throw unknown();
  }
  ++next.revision;
  return next;
}

// ---------------------------------------------------------------------------
// Document

namespace scene_detail {

using ojson = nlohmann::ordered_json;

inline ojson transform_json(const RigidTransform& t) {
  const auto& q = t.rotation;
  return ojson{{"rotation", {q.w(), q.x(), q.y(), q.z()}},
               {"translation", {t.translation.x(), t.translation.y(), t.translation.z()}}};
}

inline std::vector<double> numbers(const ojson& j, std::size_t n, const char* what) {
  if (!j.is_array() || j.size() != n) throw Error(ErrorCode::ParseError, std::string(what) + ": expected " + std::to_string(n) + " numbers");
  std::vector<double> out;
  for (const auto& v : j) {
    if (!v.is_number()) throw Error(ErrorCode::ParseError, std::string(what) + ": expected numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

inline RigidTransform parse_transform(const ojson& j, const char* what) {
  if (!j.is_object()) throw Error(ErrorCode::ParseError, std::string(what) + ": expected an object");
  const auto q = numbers(j.at("rotation"), 4, what);
  const auto t = numbers(j.at("translation"), 3, what);
  RigidTransform out;
  out.rotation = Eigen::Quaterniond(q[0], q[1], q[2], q[3]);
  if (std::abs(out.rotation.norm() - 1.0) > 1e-9) throw Error(ErrorCode::ParseError, std::string(what) + ": quaternion is not unit length");
  out.translation = Vec3(t[0], t[1], t[2]);
  return out;
}

}  // namespace scene_detail

inline nlohmann::ordered_json scene_to_json(const SceneState& s) {
  using scene_detail::ojson;
  ojson nodes = ojson::array();
  for (const auto& n : s.nodes) {
    nodes.push_back(ojson{{"name", n.name},
                          {"mesh_ref", n.mesh_ref},
                          {"transform", scene_detail::transform_json(n.transform)},
                          {"visible", n.visible},
                          {"material", {{"rgba", {n.rgba[0], n.rgba[1], n.rgba[2], n.rgba[3]}}}}});
  }
  return ojson{{"format", "neuronav-scene"},
               {"version", 1},
               {"revision", s.revision},
               {"offset_mm", {s.offset_mm.x(), s.offset_mm.y(), s.offset_mm.z()}},
               {"marker_pose", s.marker_pose ? scene_detail::transform_json(*s.marker_pose) : ojson(nullptr)},
               {"nodes", nodes}};
}

inline std::string serialize_scene(const SceneState& s) { return scene_to_json(s).dump(2) + "\n"; }

inline SceneState parse_scene(std::string_view text) {
  using scene_detail::ojson;
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("scene document: ") + e.what());
  }
  try {
    if (j.at("format") != "neuronav-scene") throw Error(ErrorCode::ParseError, "not a neuronav scene document");
    if (j.at("version") != 1) throw Error(ErrorCode::ParseError, "unsupported scene version");
    SceneState s;
    s.revision = j.at("revision").get<std::uint64_t>();
    const auto off = scene_detail::numbers(j.at("offset_mm"), 3, "offset_mm");
    s.offset_mm = Vec3(off[0], off[1], off[2]);
    if (!j.at("marker_pose").is_null()) s.marker_pose = scene_detail::parse_transform(j.at("marker_pose"), "marker_pose");
    for (const auto& n : j.at("nodes")) {
      ModelNode node;
      node.name = n.at("name").get<std::string>();
      node.mesh_ref = n.at("mesh_ref").get<std::string>();
      node.transform = scene_detail::parse_transform(n.at("transform"), "transform");
      node.visible = n.at("visible").get<bool>();
      const auto rgba = scene_detail::numbers(n.at("material").at("rgba"), 4, "rgba");
      for (int c = 0; c < 4; ++c) {
        if (rgba[std::size_t(c)] < 0 || rgba[std::size_t(c)] > 1) throw Error(ErrorCode::ParseError, "rgba components must lie in [0, 1]");
        node.rgba[std::size_t(c)] = rgba[std::size_t(c)];
      }
      if (s.find(node.name)) throw Error(ErrorCode::ParseError, "duplicate node name '" + node.name + "'");
      s.nodes.push_back(std::move(node));
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("scene document: ") + e.what());
  }
}

}  // namespace neuronav
