#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "neuronav/overlay.hpp"
#include "neuronav/phantom.hpp"
#include "neuronav/scene.hpp"
#include "neuronav/segmentation.hpp"

namespace neuronav {
namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::InvalidArgument;
}

RigidTransform random_transform(std::mt19937& rng, double scale = 1000.0) {
  std::normal_distribution<double> n(0, 1);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return {q, Vec3(n(rng), n(rng), n(rng)) * scale};
}

Vec3 apply_matrix(const Mat4& m, const Vec3& p) { return (m * p.homogeneous()).head<3>(); }

// --- rigid algebra -------------------------------------------------------------------

TEST(Rigid, IdentityAndInverse) {
  std::mt19937 rng(1);
  for (int i = 0; i < 50; ++i) {
    const auto t = random_transform(rng);
    const auto a = rigid_compose(RigidTransform::identity(), t);
    EXPECT_LT((a.matrix() - t.matrix()).norm(), 1e-12);
    const auto id = rigid_compose(t, rigid_inverse(t));
    EXPECT_LT(rotation_distance(id.rotation, Eigen::Quaterniond::Identity()), 1e-9);
    EXPECT_LT(id.translation.norm(), 1e-9);
    const auto back = rigid_inverse(rigid_inverse(t));
    EXPECT_LT((back.matrix() - t.matrix()).norm(), 1e-9);
  }
  const auto inv = rigid_inverse(RigidTransform::identity());
  EXPECT_EQ(inv.matrix(), Mat4::Identity());
}

TEST(Rigid, ComposeAndInverseMatchMatrixOracle) {
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> u(-1000, 1000);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_transform(rng), b = random_transform(rng);
    const Mat4 ab = a.matrix() * b.matrix();
    const Mat4 ainv = a.matrix().inverse();
    const auto c = rigid_compose(a, b);
    const auto ai = rigid_inverse(a);
    for (int i = 0; i < 100; ++i) {
      const Vec3 p(u(rng), u(rng), u(rng));
      EXPECT_LT((c.apply(p) - apply_matrix(ab, p)).norm(), 1e-9);
      EXPECT_LT((a.apply(b.apply(p)) - c.apply(p)).norm(), 1e-9);
      EXPECT_LT((ai.apply(p) - apply_matrix(ainv, p)).norm(), 1e-9);
      EXPECT_LT((ai.apply(a.apply(p)) - p).norm(), 1e-9);
    }
    EXPECT_NEAR(c.rotation.norm(), 1.0, 1e-9);
  }
}

TEST(Rigid, Associativity) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(-1000, 1000);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = random_transform(rng), b = random_transform(rng), c = random_transform(rng);
    const auto l = rigid_compose(rigid_compose(a, b), c), r = rigid_compose(a, rigid_compose(b, c));
    const Vec3 p(u(rng), u(rng), u(rng));
    EXPECT_LT((l.apply(p) - r.apply(p)).norm(), 1e-9);
  }
}

TEST(Rigid, QuaternionMatrixRoundTrip) {
  std::mt19937 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const auto t = random_transform(rng);
    const auto back = RigidTransform::from_matrix(t.matrix());
    EXPECT_LT((back.matrix() - t.matrix()).norm(), 1e-12);
  }
}

// --- placement -------------------------------------------------------------------------

TEST(PlaceModels, OffsetToTheRight) {
  const RigidPose marker{Eigen::Quaterniond::Identity(), Vec3(0, 0, 500)};
  const auto placed = place_models(marker, kOffsetRight150);
  ASSERT_EQ(placed.size(), 2u);
  EXPECT_LT((placed.at("skull").translation - Vec3(150, 0, 500)).norm(), 1e-12);
  EXPECT_LT((placed.at("ventricles").translation - Vec3(150, 0, 500)).norm(), 1e-12);
}

TEST(PlaceModels, ZeroOffsetCoincidesWithMarker) {
  std::mt19937 rng(5);
  const auto marker = random_transform(rng, 300);
  const auto placed = place_models(marker, Vec3::Zero());
  EXPECT_LT((placed.at("skull").matrix() - marker.matrix()).norm(), 1e-12);
}

TEST(PlaceModels, RotatedMarkerMovesOffset) {
  const RigidPose marker{Eigen::Quaterniond(Eigen::AngleAxisd(std::numbers::pi / 2, Vec3::UnitZ())), Vec3(20, -30, 600)};
  const auto placed = place_models(marker, kOffsetRight100);
  EXPECT_LT((placed.at("skull").translation - marker.translation - Vec3(0, 100, 0)).norm(), 1e-9);
  Mat4 offset = Mat4::Identity();
  offset.topRightCorner<3, 1>() = kOffsetRight100;
  EXPECT_LT((placed.at("skull").matrix() - marker.matrix() * offset).norm(), 1e-9);
}

TEST(PlaceModels, EquivariantUnderMarkerRotation) {
  std::mt19937 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const auto marker = random_transform(rng, 500);
    const auto r = random_transform(rng, 0).rotation;
    const RigidTransform rot{r, Vec3::Zero()};
    const Vec3 offset(150 * std::cos(trial), 30, -20);
    const auto before = place_models(marker, offset).at("skull").translation;
    const auto after = place_models(rigid_compose(rot, marker), offset).at("skull").translation;
    EXPECT_LT((after - r * before).norm(), 1e-9);
  }
}

// --- commands ----------------------------------------------------------------------------

TEST(Commands, ToggleSkull) {
  const auto s0 = default_scene();
  const auto s1 = apply_command(s0, "Toggle Skull");
  EXPECT_FALSE(s1.find("skull")->visible);
  EXPECT_TRUE(s1.find("ventricles")->visible);
  EXPECT_EQ(s1.revision, 1u);
  const auto s2 = apply_command(s1, "  toggle   SKULL \n");
  EXPECT_TRUE(s2.find("skull")->visible);
  EXPECT_EQ(s2.revision, 2u);
}

TEST(Commands, UnknownLeavesStateUnchanged) {
  const auto s0 = default_scene();
  for (const char* bad : {"toggle brain", "", "toggle", "toggle skull now", "set offset 1 2", "set offset a b c",
                          "set offset nan 0 0", "set offset inf 0 0", "offset 1 2 3", "hide skull"}) {
    EXPECT_EQ(code_of([&] { apply_command(s0, bad); }), ErrorCode::UnknownCommand) << bad;
  }
  EXPECT_EQ(code_of([] { apply_command(SceneState{}, "toggle skull"); }), ErrorCode::UnknownCommand);
}

TEST(Commands, SetOffsetReplacesPlacement) {
  auto s = apply_command(default_scene(), "SET OFFSET 100 0 -2.5");
  EXPECT_EQ(s.offset_mm, Vec3(100, 0, -2.5));
  for (const auto& n : s.nodes) EXPECT_EQ(n.transform.translation, Vec3(100, 0, -2.5));
  EXPECT_EQ(s.revision, 1u);
}

TEST(Commands, PureFunction) {
  const auto s0 = default_scene();
  EXPECT_EQ(apply_command(s0, "toggle ventricles"), apply_command(s0, "toggle ventricles"));
  EXPECT_EQ(s0, default_scene());
}

TEST(Commands, RandomSequencesFoldToEventLog) {
  std::mt19937 rng(7);
  std::uniform_int_distribution<int> pick(0, 5);
  std::uniform_real_distribution<double> off(-300, 300);
  for (int seq = 0; seq < 200; ++seq) {
    const auto initial = default_scene();
    SceneState state = initial;
    std::vector<std::string> log;
    bool skull = true, vent = true;
    Vec3 offset = initial.offset_mm;
    const int len = std::uniform_int_distribution<int>(0, 40)(rng);
    for (int i = 0; i < len; ++i) {
      std::string cmd;
      switch (pick(rng)) {
        case 0: cmd = "Toggle Skull"; break;
        case 1: cmd = "toggle ventricles"; break;
        case 2: {
          const Vec3 o(std::round(off(rng)), std::round(off(rng)), std::round(off(rng)));
          cmd = "set offset " + format_double(o.x()) + " " + format_double(o.y()) + " " + format_double(o.z());
          break;
        }
        case 3: cmd = "toggle brain"; break;
        case 4: cmd = "set offset 1 2"; break;
        default: cmd = "reboot"; break;
      }
      const auto before = state.revision;
      try {
        state = apply_command(state, cmd);
        log.push_back(cmd);
        EXPECT_EQ(state.revision, before + 1);
        if (cmd == "Toggle Skull") skull = !skull;
        if (cmd == "toggle ventricles") vent = !vent;
        if (cmd.rfind("set offset", 0) == 0) offset = state.offset_mm;
      } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::UnknownCommand);
        EXPECT_EQ(state.revision, before);
      }
    }
    SceneState folded = initial;
    for (const auto& c : log) folded = apply_command(folded, c);
    EXPECT_EQ(folded, state);
    EXPECT_EQ(state.revision, log.size());
    EXPECT_EQ(state.find("skull")->visible, skull);
    EXPECT_EQ(state.find("ventricles")->visible, vent);
    EXPECT_EQ(state.offset_mm, offset);
    // toggles are involutions from any reachable state
    for (const char* t : {"toggle skull", "toggle ventricles"}) {
      auto twice = apply_command(apply_command(state, t), t);
      EXPECT_EQ(twice.revision, state.revision + 2);
      twice.revision = state.revision;
      EXPECT_EQ(twice, state);
    }
  }
}

// --- document ------------------------------------------------------------------------

TEST(SceneDocument, EmptyScene) {
  SceneState s;
  s.nodes.clear();
  const auto doc = nlohmann::json::parse(serialize_scene(s));
  EXPECT_TRUE(doc["nodes"].empty());
  EXPECT_EQ(doc["revision"], 0);
  EXPECT_TRUE(doc["marker_pose"].is_null());
  EXPECT_EQ(parse_scene(serialize_scene(s)), s);
}

TEST(SceneDocument, FieldOrderAndDefaults) {
  auto s = default_scene();
  s.marker_pose = RigidPose{Eigen::Quaterniond::Identity(), Vec3(0, 0, 500)};
  const auto text = serialize_scene(s);
  const auto pos = [&](const char* key) { return text.find(std::string("\"") + key + "\""); };
  EXPECT_LT(pos("format"), pos("version"));
  EXPECT_LT(pos("version"), pos("revision"));
  EXPECT_LT(pos("revision"), pos("offset_mm"));
  EXPECT_LT(pos("offset_mm"), pos("marker_pose"));
  EXPECT_LT(pos("marker_pose"), pos("nodes"));
  const auto doc = nlohmann::json::parse(text);
  EXPECT_EQ(doc["nodes"][0]["name"], "skull");
  EXPECT_DOUBLE_EQ(doc["nodes"][0]["material"]["rgba"][3].get<double>(), 0.4);
  EXPECT_EQ(doc["nodes"][1]["material"]["rgba"], nlohmann::json::parse("[0.0, 1.0, 0.0, 1.0]"));
  EXPECT_EQ(doc["offset_mm"], nlohmann::json::parse("[150.0, 0.0, 0.0]"));
  EXPECT_EQ(serialize_scene(s), serialize_scene(parse_scene(text)));
}

TEST(SceneDocument, RandomRoundTrip) {
  std::mt19937 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    SceneState s = default_scene(Vec3(u(rng) * 300 - 150, u(rng), -u(rng) * 1e-7));
    s.revision = std::uint64_t(u(rng) * 1e6);
    if (trial % 3) s.marker_pose = random_transform(rng, 700);
    for (auto& n : s.nodes) {
      n.visible = u(rng) < 0.5;
      n.transform = random_transform(rng, 100);
      for (auto& c : n.rgba) c = u(rng);
    }
    EXPECT_EQ(parse_scene(serialize_scene(s)), s);
  }
}

TEST(SceneDocument, ParseErrors) {
  EXPECT_EQ(code_of([] { parse_scene("{"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { parse_scene("{}"); }), ErrorCode::ParseError);
  auto doc = scene_to_json(default_scene());
  doc["nodes"][0]["material"]["rgba"][3] = 1.5;
  EXPECT_EQ(code_of([&] { parse_scene(doc.dump()); }), ErrorCode::ParseError);
  doc = scene_to_json(default_scene());
  doc["nodes"][1]["name"] = "skull";
  EXPECT_EQ(code_of([&] { parse_scene(doc.dump()); }), ErrorCode::ParseError);
  doc = scene_to_json(default_scene());
  doc["nodes"][0]["transform"]["rotation"] = {2, 0, 0, 0};
  EXPECT_EQ(code_of([&] { parse_scene(doc.dump()); }), ErrorCode::ParseError);
}

// --- overlay ---------------------------------------------------------------------------

struct PhantomScene {
  SceneState scene;
  MeshStore meshes;
};

const PhantomScene& phantom_scene() {
  static const PhantomScene ps = [] {
    PhantomScene out;
    const auto ph = make_head_phantom({});
    const auto geom = ph.volume.geometry;
    out.meshes["skull"] = marching_cubes(ph.skull, geom);
    out.meshes["ventricles"] = marching_cubes(ph.ventricles, geom);
    out.scene = default_scene();
    // head centre on the optical axis, 400 mm away
    out.scene.marker_pose = RigidPose{Eigen::Quaterniond::Identity(), Vec3(-150, 0, 400)};
    return out;
  }();
  return ps;
}

TEST(Overlay, HiddenNodesLeaveBackgroundUntouched) {
  const CameraIntrinsics cam;
  auto scene = phantom_scene().scene;
  for (auto& n : scene.nodes) n.visible = false;
  RgbImage bg(cam.width, cam.height);
  std::mt19937 rng(9);
  for (auto& p : bg.pixels) p = std::uint8_t(rng());
  EXPECT_EQ(render_overlay(scene, phantom_scene().meshes, cam, bg), bg);
  EXPECT_EQ(render_overlay(scene, {}, cam), RgbImage(cam.width, cam.height));
}

TEST(Overlay, Errors) {
  const CameraIntrinsics cam;
  auto scene = phantom_scene().scene;
  scene.marker_pose.reset();
  EXPECT_EQ(code_of([&] { render_overlay(scene, phantom_scene().meshes, cam); }), ErrorCode::MissingPose);
  MeshStore partial{{"skull", phantom_scene().meshes.at("skull")}};
  EXPECT_EQ(code_of([&] { render_overlay(phantom_scene().scene, partial, cam); }), ErrorCode::MissingMesh);
}

TEST(Overlay, Deterministic) {
  const CameraIntrinsics cam;
  const auto& ps = phantom_scene();
  EXPECT_EQ(encode_png(render_overlay(ps.scene, ps.meshes, cam)), encode_png(render_overlay(ps.scene, ps.meshes, cam)));
}

TEST(Overlay, SkullIsTranslucentAndVentriclesGreen) {
  const CameraIntrinsics cam;
  const auto& ps = phantom_scene();
  const auto img = render_overlay(ps.scene, ps.meshes, cam);
  const auto cov = render_coverage(ps.scene, ps.meshes, cam);
  int skull_only = 0, both = 0;
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const bool s = cov.at("skull").at(x, y), v = cov.at("ventricles").at(x, y);
      const auto* px = img.at(x, y);
      if (s && !v) {
        ++skull_only;
        // 0.4 * material * shade over black
        EXPECT_LE(px[0], std::lround(0.4 * 0.93 * 255));
        EXPECT_GT(px[0], 0);
        EXPECT_NEAR(double(px[0]) / px[2], 0.93 / 0.84, 0.1);
      } else if (v) {
        ++both;
        EXPECT_GT(px[1], px[0] + 40);
      } else {
        EXPECT_EQ(px[0] + px[1] + px[2], 0);
      }
    }
  EXPECT_GT(skull_only, 1000);
  EXPECT_GT(both, 100);
}

TEST(Overlay, SilhouetteCentroidMatchesProjectedCentroid) {
  const CameraIntrinsics cam;
  const auto& ps = phantom_scene();
  const auto mask = render_coverage(ps.scene, ps.meshes, cam).at("skull");
  double sx = 0, sy = 0, n = 0;
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x)
      if (mask.at(x, y)) sx += x, sy += y, n += 1;
  Vec3 centroid = Vec3::Zero();
  for (const auto& v : ps.meshes.at("skull").vertices) centroid += v;
  centroid /= double(ps.meshes.at("skull").vertices.size());
  const Vec2 projected = cam.project(node_in_camera(ps.scene, *ps.scene.find("skull")).apply(centroid));
  EXPECT_LT((Vec2(sx / n, sy / n) - projected).norm(), 1.0);
}

TEST(Overlay, VentriclesInsideSkullFromPresetViews) {
  const CameraIntrinsics cam;
  const auto& ps = phantom_scene();
  for (auto view : {ViewPreset::Top, ViewPreset::Left, ViewPreset::Right, ViewPreset::Front}) {
    auto scene = ps.scene;
    scene.marker_pose = view_preset_pose(view, scene, ps.meshes, cam);
    const auto cov = render_coverage(scene, ps.meshes, cam);
    int vent = 0, outside = 0;
    for (std::size_t p = 0; p < cov.at("ventricles").pixels.size(); ++p) {
      if (!cov.at("ventricles").pixels[p]) continue;
      ++vent;
      if (!cov.at("skull").pixels[p]) ++outside;
    }
    EXPECT_GT(vent, 50) << to_string(view);
    EXPECT_EQ(outside, 0) << to_string(view);
  }
}

TEST(Overlay, PresetCamerasLookFromTheNamedSide) {
  const CameraIntrinsics cam;
  const auto& ps = phantom_scene();
  const auto [centre, radius] = scene_bounds(ps.scene, ps.meshes);
  EXPECT_LT((centre - kOffsetRight150).norm(), 1.0);
  const std::map<ViewPreset, Vec3> side{{ViewPreset::Front, -Vec3::UnitZ()},
                                        {ViewPreset::Top, Vec3::UnitY()},
                                        {ViewPreset::Left, -Vec3::UnitX()},
                                        {ViewPreset::Right, Vec3::UnitX()}};
  for (const auto& [view, dir] : side) {
    const auto pose = view_preset_pose(view, ps.scene, ps.meshes, cam);
    const Vec3 eye = rigid_inverse(pose).translation;  // camera centre in marker frame
    EXPECT_GT((eye - centre).normalized().dot(dir), 0.999) << to_string(view);
    EXPECT_LT((cam.project(pose.apply(centre)) - Vec2(cam.cx, cam.cy)).norm(), 1e-6);
    EXPECT_GT((eye - centre).norm(), radius);
  }
  EXPECT_EQ(parse_view_preset("left"), ViewPreset::Left);
  EXPECT_EQ(code_of([] { parse_view_preset("back"); }), ErrorCode::InvalidArgument);
}

}  // namespace
}  // namespace neuronav
