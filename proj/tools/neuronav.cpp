// neuronav command line.
//
//   neuronav pipeline run <config>
//   neuronav detect <image.png> <marker> <camera>
//   neuronav overlay <scene.json> <camera> [--view top|left|right|front] [--background png] [--out dir]
//   neuronav serve <manifest.json> [--port N] [--host addr]
//   neuronav make-phantom <out.nrv> [--dims nx ny nz] [--spacing sx sy sz] [--radii inner outer] [--noise hu]
//   neuronav render-marker <marker> <camera> <out.png> [--pose "qw qx qy qz tx ty tz"]
//
// Exit status: 0 success, 1 failure (message names the stage), 2 usage error.

#include <csignal>
#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "neuronav/neuronav.hpp"

using namespace neuronav;

namespace {

int fail(const Error& e) {
  std::cerr << "error: " << e.what() << "\n";
  return 1;
}

template <typename Fn>
auto in_stage(Stage stage, Fn&& fn) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(stage, e);
  }
}

std::string pose_json(const RigidPose& p) {
  nlohmann::ordered_json j{{"rotation", {p.rotation.w(), p.rotation.x(), p.rotation.y(), p.rotation.z()}},
                           {"translation", {p.translation.x(), p.translation.y(), p.translation.z()}}};
  return j.dump();
}

int cmd_pipeline(const std::string& config) {
  const auto cfg = in_stage(Stage::Config, [&] { return load_pipeline_config(config); });
  const auto r = run_pipeline(cfg);
  for (const auto& a : r.artifacts) std::cout << a.sha256 << "  " << a.path << "  " << a.bytes << "\n";
  std::cout << r.manifest_sha256 << "  " << r.manifest_path.filename().string() << "\n";
  for (const auto& [stage, s] : r.stage_seconds) std::fprintf(stderr, "%s %.3f s\n", stage.c_str(), s);
  return 0;
}

int cmd_detect(const std::string& image, const std::string& marker, const std::string& camera) {
  const auto det = in_stage(Stage::Registration, [&] {
    const auto spec = load_marker_spec(marker);
    const auto cam = load_camera(camera);
    return detect_marker(read_png_gray(image), spec, cam);
  });
  nlohmann::ordered_json corners = nlohmann::ordered_json::array();
  for (const auto& c : det.corners_px) corners.push_back({c.x(), c.y()});
  nlohmann::ordered_json out{{"id", det.id},
                             {"corners_px", corners},
                             {"pose", nlohmann::ordered_json::parse(pose_json(det.pose))},
                             {"reprojection_rms_px", det.reprojection_rms_px},
                             {"bit_errors", det.bit_errors}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_overlay(const std::string& scene_path, const std::string& camera, const std::string& view,
                const std::string& background, const std::string& out_dir) {
  in_stage(Stage::Scene, [&] {
    auto scene = parse_scene(read_file_text(scene_path));
    const auto cam = load_camera(camera);
    const auto meshes = load_scene_meshes(scene, std::filesystem::absolute(scene_path).parent_path());
    std::optional<RgbImage> bg;
    if (!background.empty()) bg = read_png_rgb(background);
    std::string name = "camera";
    if (!view.empty()) {
      const auto preset = parse_view_preset(view);
      scene.marker_pose = view_preset_pose(preset, scene, meshes, cam);
      name = to_string(preset);
    }
    const auto img = render_overlay(scene, meshes, cam, bg);
    std::filesystem::create_directories(out_dir);
    const auto path = std::filesystem::path(out_dir) / ("overlay_" + name + ".png");
    write_png(img, path);
    std::cout << path.string() << "\n";
    return 0;
  });
  return 0;
}

volatile std::sig_atomic_t g_stop = 0;

void on_signal(int) { g_stop = 1; }

int cmd_serve(const std::string& manifest, std::optional<int> port_flag, const std::string& host) {
  const int port = in_stage(Stage::Config, [&] { return resolve_port(port_flag, std::getenv(kPortEnv)); });
  auto session = in_stage(Stage::Ingest, [&] { return SessionState::from_manifest(manifest); });
  Service service(session);
  const int bound = in_stage(Stage::Service, [&] { return service.start(host, port); });
  std::cout << "serving " << manifest << " on http://" << host << ":" << bound << "\n" << std::flush;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(200));
  service.stop();
  return 0;
}

int cmd_make_phantom(const std::string& out, const std::vector<std::size_t>& dims, const std::vector<double>& spacing,
                     const std::vector<double>& radii, double noise) {
  HeadPhantomSpec spec;
  spec.dims = {dims[0], dims[1], dims[2]};
  spec.spacing = Vec3(spacing[0], spacing[1], spacing[2]);
  spec.skull_inner_mm = radii[0];
  spec.skull_outer_mm = radii[1];
  // ventricles scale with the skull
  const double s = radii[0] / 20.0;
  for (auto& v : spec.ventricles) {
    v.center *= s;
    v.semi_axes *= s;
  }
  spec.noise_hu = noise;
  in_stage(Stage::Export, [&] {
    save_raw_volume(out, make_head_phantom(spec).volume);
    return 0;
  });
  std::cout << out << "\n";
  return 0;
}

int cmd_render_marker(const std::string& marker, const std::string& camera, const std::string& out,
                      const std::vector<double>& pose) {
  in_stage(Stage::Registration, [&] {
    const auto spec = load_marker_spec(marker);
    const auto cam = load_camera(camera);
    RigidPose p;
    p.rotation = Eigen::Quaterniond(pose[0], pose[1], pose[2], pose[3]).normalized();
    p.translation = Vec3(pose[4], pose[5], pose[6]);
    write_png(render_marker_image(spec, p, cam), out);
    return 0;
  });
  std::cout << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"neuronav: CT to skull/ventricle models, marker registration and scene service"};
  app.require_subcommand(1);

  auto* pipeline = app.add_subcommand("pipeline", "Automated model pipeline");
  pipeline->require_subcommand(1);
  std::string config;
  auto* run = pipeline->add_subcommand("run", "Run the pipeline from a config file");
  run->add_option("config", config, "Pipeline config")->required();

  std::string image, marker, camera;
  auto* detect = app.add_subcommand("detect", "Detect the marker in an image and print its pose");
  detect->add_option("image", image, "Grayscale or RGB PNG")->required();
  detect->add_option("marker", marker, "Marker spec file")->required();
  detect->add_option("camera", camera, "Camera intrinsics file")->required();

  std::string scene_path, view, background, out_dir = ".";
  auto* overlay = app.add_subcommand("overlay", "Render the scene overlay to overlay_<view>.png");
  overlay->add_option("scene", scene_path, "Scene document")->required();
  overlay->add_option("camera", camera, "Camera intrinsics file")->required();
  overlay->add_option("--view", view, "Virtual camera preset")->check(CLI::IsMember({"top", "left", "right", "front"}));
  overlay->add_option("--background", background, "Background PNG (camera size)");
  overlay->add_option("--out", out_dir, "Output directory");

  std::string manifest, host = "127.0.0.1";
  std::optional<int> port;
  auto* serve = app.add_subcommand("serve", "Serve a pipeline manifest over HTTP");
  serve->add_option("manifest", manifest, "manifest.json written by pipeline run")->required();
  serve->add_option("--port", port, std::string("Port (else ") + kPortEnv + ", else 8080)");
  serve->add_option("--host", host, "Bind address");

  std::string phantom_out;
  std::vector<std::size_t> dims{64, 64, 64};
  std::vector<double> spacing{1, 1, 1}, radii{20, 26};
  double noise = 0;
  auto* phantom = app.add_subcommand("make-phantom", "Write a synthetic head phantom volume");
  phantom->add_option("out", phantom_out, "Output raw volume file")->required();
  phantom->add_option("--dims", dims)->expected(3);
  phantom->add_option("--spacing", spacing)->expected(3);
  phantom->add_option("--radii", radii, "Skull inner and outer radius, mm")->expected(2);
  phantom->add_option("--noise", noise, "Uniform noise amplitude, HU");

  std::string marker_out;
  std::vector<double> pose{1, 0, 0, 0, 0, 0, 500};
  auto* render = app.add_subcommand("render-marker", "Render a synthetic marker image");
  render->add_option("marker", marker, "Marker spec file")->required();
  render->add_option("camera", camera, "Camera intrinsics file")->required();
  render->add_option("out", marker_out, "Output PNG")->required();
  render->add_option("--pose", pose, "qw qx qy qz tx ty tz")->expected(7)->delimiter(' ');

  if (argc <= 1) {
    std::cerr << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*run) return cmd_pipeline(config);
    if (*detect) return cmd_detect(image, marker, camera);
    if (*overlay) return cmd_overlay(scene_path, camera, view, background, out_dir);
    if (*serve) return cmd_serve(manifest, port, host);
    if (*phantom) return cmd_make_phantom(phantom_out, dims, spacing, radii, noise);
    if (*render) return cmd_render_marker(marker, camera, marker_out, pose);
  } catch (const Error& e) {
    return fail(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << app.help();
  return 2;
}
