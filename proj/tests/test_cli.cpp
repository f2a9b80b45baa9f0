#include <gtest/gtest.h>
#include <signal.h>
#include <spawn.h>
#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>
#include <thread>

#include "neuronav/phantom.hpp"
#include "neuronav/pipeline.hpp"
#include "support/temp_dir.hpp"

#include "httplib.h"

extern char** environ;

namespace neuronav {
namespace {

using testing::TempDir;

struct Run {
  int status = -1;
  std::string out;
  std::string err;
};

/// Runs the CLI through the shell with stdout and stderr captured.
Run cli(const std::string& args, const TempDir& dir, const std::string& env = "") {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = "cd '" + dir.path().string() + "' && " + env + " '" NEURONAV_CLI "' " + args + " > '" +
                          out.string() + "' 2> '" + err.string() + "'";
  const int raw = std::system(cmd.c_str());
  Run r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = read_file_text(out);
  r.err = read_file_text(err);
  return r;
}

void write_fixture(const TempDir& dir, const VoxelVolume& vol) {
  save_raw_volume(dir / "vol.nrv", vol);
  write_file_text(dir / "p.cfg", "input: vol.nrv\noutput_dir: out\n");
  write_file_text(dir / "cam.txt", camera_to_text(CameraIntrinsics{}));
  write_file_text(dir / "marker.txt", marker_spec_to_text(make_marker_spec(5)));
}

TEST(Cli, UsageErrorsExitTwo) {
  TempDir d;
  auto r = cli("", d);
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find("pipeline"), std::string::npos);
  EXPECT_EQ(cli("frobnicate", d).status, 2);
  EXPECT_EQ(cli("pipeline", d).status, 2);
  EXPECT_EQ(cli("pipeline run", d).status, 2);
  EXPECT_EQ(cli("detect a.png", d).status, 2);
  EXPECT_EQ(cli("overlay s.json cam.txt --view back", d).status, 2);
  EXPECT_EQ(cli("serve m.json --port abc", d).status, 2);
  EXPECT_EQ(cli("--help", d).status, 0);
}

TEST(Cli, PipelineRunIsDeterministic) {
  TempDir d;
  write_fixture(d, make_head_phantom({}).volume);
  const auto a = cli("pipeline run p.cfg", d);
  ASSERT_EQ(a.status, 0) << a.err;
  const auto first = sha256_hex(read_file_bytes(d / "out/manifest.json"));
  EXPECT_NE(a.out.find(first + "  manifest.json"), std::string::npos);
  const auto b = cli("pipeline run p.cfg", d);
  ASSERT_EQ(b.status, 0);
  EXPECT_EQ(sha256_hex(read_file_bytes(d / "out/manifest.json")), first);
  EXPECT_EQ(a.out, b.out);
}

TEST(Cli, StageAttributedFailuresExitOne) {
  TempDir d;
  auto air = make_head_phantom({}).volume;
  std::fill(air.samples.begin(), air.samples.end(), std::int16_t(-1000));
  write_fixture(d, air);
  auto r = cli("pipeline run p.cfg", d);
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.err.find("Stage=segmentation"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("EmptySegment"), std::string::npos);

  r = cli("pipeline run missing.cfg", d);
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.err.find("Stage=config"), std::string::npos) << r.err;

  write_file_text(d / "bad.cfg", "input: none.nrv\noutput_dir: out\n");
  r = cli("pipeline run bad.cfg", d);
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.err.find("Stage=ingest"), std::string::npos) << r.err;
}

TEST(Cli, Detect) {
  TempDir d;
  write_fixture(d, make_head_phantom({}).volume);
  const CameraIntrinsics cam;
  write_png(GrayImage(cam.width, cam.height, 255), d / "blank.png");
  auto r = cli("detect blank.png marker.txt cam.txt", d);
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.err.find("NoMarkerFound"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("Stage=registration"), std::string::npos);

  const RigidPose truth{Eigen::Quaterniond(Eigen::AngleAxisd(0.3, Vec3::UnitX())), Vec3(15, -10, 420)};
  write_png(render_marker_image(make_marker_spec(5), truth, cam), d / "m.png");
  r = cli("detect m.png marker.txt cam.txt", d);
  ASSERT_EQ(r.status, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["id"], 5);
  const auto t = j["pose"]["translation"];
  EXPECT_LT((Vec3(t[0], t[1], t[2]) - truth.translation).norm(), 3.0);

  const auto rendered = cli("render-marker marker.txt cam.txt r.png --pose \"0.9887710779 0.1494381325 0 0 15 -10 420\"", d);
  ASSERT_EQ(rendered.status, 0) << rendered.err;
  EXPECT_EQ(read_png_gray(d / "r.png"), read_png_gray(d / "m.png"));
  EXPECT_EQ(cli("detect nothing.png marker.txt cam.txt", d).status, 1);
}

TEST(Cli, OverlayWritesPresetViews) {
  TempDir d;
  write_fixture(d, make_head_phantom({}).volume);
  ASSERT_EQ(cli("pipeline run p.cfg", d).status, 0);
  for (const char* view : {"top", "left", "right", "front"}) {
    const auto r = cli(std::string("overlay out/scene.json cam.txt --view ") + view + " --out views", d);
    ASSERT_EQ(r.status, 0) << r.err;
    const auto img = read_png_rgb(d / ("views/overlay_" + std::string(view) + ".png"));
    EXPECT_EQ(img.width, 640);
    EXPECT_EQ(img.height, 480);
    EXPECT_NE(std::count(img.pixels.begin(), img.pixels.end(), 0), std::ptrdiff_t(img.pixels.size()));
  }
  auto r = cli("overlay out/scene.json cam.txt", d);
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.err.find("MissingPose"), std::string::npos);
  std::filesystem::remove(d / "out/ventricles.obj");
  r = cli("overlay out/scene.json cam.txt --view top", d);
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.err.find("MissingMesh"), std::string::npos);
}

int free_port() {
  const int fd = socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  socklen_t len = sizeof addr;
  int port = -1;
  if (bind(fd, reinterpret_cast<sockaddr*>(&addr), len) == 0 && getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) == 0) {
    port = ntohs(addr.sin_port);
  }
  close(fd);
  return port;
}

/// Starts `neuronav serve` in the background with extra environment entries.
pid_t spawn_serve(const TempDir& d, const std::vector<std::string>& args, const std::vector<std::string>& env) {
  std::vector<std::string> argv_s{NEURONAV_CLI, "serve", (d / "out/manifest.json").string()};
  argv_s.insert(argv_s.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_s) argv.push_back(a.data());
  argv.push_back(nullptr);
  std::vector<std::string> env_s;
  for (char** e = environ; *e; ++e)
    if (!std::string(*e).starts_with("NEURONAV_PORT=")) env_s.push_back(*e);
  env_s.insert(env_s.end(), env.begin(), env.end());
  std::vector<char*> envp;
  for (auto& e : env_s) envp.push_back(e.data());
  envp.push_back(nullptr);
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_addopen(&actions, 1, (d / "serve.out").c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  posix_spawn_file_actions_addopen(&actions, 2, (d / "serve.err").c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  pid_t pid = -1;
  EXPECT_EQ(posix_spawn(&pid, argv[0], &actions, nullptr, argv.data(), envp.data()), 0);
  posix_spawn_file_actions_destroy(&actions);
  return pid;
}

bool healthy(int port) {
  for (int i = 0; i < 100; ++i) {
    httplib::Client c("127.0.0.1", port);
    c.set_connection_timeout(1);
    c.set_read_timeout(1);
    if (auto res = c.Get("/health"); res && res->status == 200) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  return false;
}

int stop(pid_t pid) {
  kill(pid, SIGTERM);
  int status = 0;
  waitpid(pid, &status, 0);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, ServePortPrecedence) {
  TempDir d;
  write_fixture(d, make_head_phantom({}).volume);
  ASSERT_EQ(cli("pipeline run p.cfg", d).status, 0);

  const int env_port = free_port();
  pid_t pid = spawn_serve(d, {}, {"NEURONAV_PORT=" + std::to_string(env_port)});
  EXPECT_TRUE(healthy(env_port));
  httplib::Client c("127.0.0.1", env_port);
  EXPECT_EQ(parse_scene(c.Get("/scene")->body).revision, 0u);
  EXPECT_EQ(stop(pid), 0);

  const int flag_port = free_port();
  pid = spawn_serve(d, {"--port", std::to_string(flag_port)}, {"NEURONAV_PORT=" + std::to_string(env_port)});
  EXPECT_TRUE(healthy(flag_port));

  // the flag port is now taken
  const auto busy = cli("serve out/manifest.json --port " + std::to_string(flag_port), d, "timeout 20");
  EXPECT_EQ(busy.status, 1);
  EXPECT_NE(busy.err.find("PortInUse"), std::string::npos) << busy.err;
  EXPECT_EQ(stop(pid), 0);

  const auto bad_env = cli("serve out/manifest.json", d, "NEURONAV_PORT=nope timeout 20");
  EXPECT_EQ(bad_env.status, 1);
  EXPECT_NE(bad_env.err.find("NEURONAV_PORT"), std::string::npos);
}

}  // namespace
}  // namespace neuronav
