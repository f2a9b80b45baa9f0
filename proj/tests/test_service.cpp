#include <gtest/gtest.h>

#include <atomic>
#include <future>
#include <random>
#include <thread>

#include "neuronav/phantom.hpp"
#include "neuronav/service.hpp"
#include "support/temp_dir.hpp"

namespace neuronav {
namespace {

using testing::TempDir;

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::InvalidArgument;
}

TEST(Port, Precedence) {
  EXPECT_EQ(resolve_port(9001, "9002"), 9001);
  EXPECT_EQ(resolve_port(std::nullopt, "9002"), 9002);
  EXPECT_EQ(resolve_port(std::nullopt, nullptr), 8080);
  EXPECT_EQ(resolve_port(std::nullopt, ""), 8080);
  EXPECT_EQ(code_of([] { resolve_port(std::nullopt, "http"); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { resolve_port(std::nullopt, "70000"); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { resolve_port(-1, nullptr); }), ErrorCode::InvalidArgument);
}

const std::filesystem::path& manifest_path() {
  static TempDir dir("neuronav-service");
  static const std::filesystem::path path = [] {
    save_raw_volume(dir / "vol.nrv", make_head_phantom({}).volume);
    write_file_text(dir / "p.cfg", "input: vol.nrv\noutput_dir: out\n");
    return run_pipeline(load_pipeline_config(dir / "p.cfg")).manifest_path;
  }();
  return path;
}

struct Running {
  std::shared_ptr<SessionState> session = SessionState::from_manifest(manifest_path());
  Service service{session};
  int port = service.start("127.0.0.1", 0);

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(30);
    return c;
  }
};

struct SseEvent {
  std::uint64_t id = 0;
  std::string event;
  std::string data;
};

/// Reads `count` events from /events; on_first runs after the first one arrives.
std::vector<SseEvent> read_events(int port, std::size_t count, const httplib::Headers& headers = {},
                                  std::function<void()> on_first = {}) {
  httplib::Client c("127.0.0.1", port);
  c.set_read_timeout(30);
  std::string buffer;
  std::vector<SseEvent> events;
  c.Get("/events", headers, [&](const char* data, std::size_t len) {
    buffer.append(data, len);
    std::size_t end;
    while ((end = buffer.find("\n\n")) != std::string::npos) {
      const auto frame = buffer.substr(0, end);
      buffer.erase(0, end + 2);
      if (frame.starts_with(":")) continue;
      SseEvent e;
      std::size_t pos = 0;
      while (pos < frame.size()) {
        auto eol = frame.find('\n', pos);
        if (eol == std::string::npos) eol = frame.size();
        const auto line = frame.substr(pos, eol - pos);
        if (line.starts_with("id: ")) e.id = std::stoull(line.substr(4));
        if (line.starts_with("event: ")) e.event = line.substr(7);
        if (line.starts_with("data: ")) e.data = line.substr(6);
        pos = eol + 1;
      }
      events.push_back(e);
      if (events.size() == 1 && on_first) on_first();
    }
    return events.size() < count;
  });
  return events;
}

std::string command_body(const std::string& text) { return nlohmann::json{{"text", text}}.dump(); }

TEST(Service, HealthSceneAndMeshes) {
  Running r;
  auto c = r.client();
  auto health = c.Get("/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(nlohmann::json::parse(health->body)["revision"], 0);

  auto scene = c.Get("/scene");
  ASSERT_TRUE(scene);
  EXPECT_EQ(scene->status, 200);
  EXPECT_EQ(scene->get_header_value("Content-Type"), "application/json");
  EXPECT_EQ(parse_scene(scene->body).revision, 0u);
  EXPECT_EQ(scene->body, read_file_text(manifest_path().parent_path() / "scene.json"));

  const auto obj = read_file_text(manifest_path().parent_path() / "skull.obj");
  auto mesh = c.Get("/mesh/skull");
  ASSERT_TRUE(mesh);
  EXPECT_EQ(mesh->status, 200);
  EXPECT_EQ(mesh->body, obj);
  EXPECT_EQ(c.Get("/mesh/skull.obj")->body, obj);
  EXPECT_EQ(c.Get("/mesh/ventricles")->body, read_file_text(manifest_path().parent_path() / "ventricles.obj"));

  auto missing = c.Get("/mesh/brain");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  EXPECT_EQ(nlohmann::json::parse(missing->body)["error"], "MissingMesh");
  EXPECT_EQ(c.Get("/nowhere")->status, 404);
}

TEST(Service, CommandsBumpRevisionAndEmitOneEvent) {
  Running r;
  auto c = r.client();
  std::promise<void> connected;
  auto reader = std::async(std::launch::async, [&] {
    return read_events(r.port, 2, {}, [&] { connected.set_value(); });
  });
  connected.get_future().wait();

  auto ok = c.Post("/command", command_body("Toggle Skull"), "application/json");
  ASSERT_TRUE(ok);
  EXPECT_EQ(ok->status, 200);
  const auto scene = parse_scene(ok->body);
  EXPECT_EQ(scene.revision, 1u);
  EXPECT_FALSE(scene.find("skull")->visible);

  const auto events = reader.get();
  ASSERT_EQ(events.size(), 2u);
  EXPECT_EQ(events[0].id, 0u);
  EXPECT_EQ(events[1].id, 1u);
  EXPECT_EQ(events[1].event, "scene");
  EXPECT_EQ(parse_scene(events[1].data), scene);

  auto unknown = c.Post("/command", command_body("toggle brain"), "application/json");
  ASSERT_TRUE(unknown);
  EXPECT_EQ(unknown->status, 422);
  const auto err = nlohmann::json::parse(unknown->body);
  EXPECT_EQ(err["error"], "UnknownCommand");
  EXPECT_EQ(err["revision"], 1);
  EXPECT_EQ(r.session->revision(), 1u);

  for (const char* bad : {"not json", "{}", "{\"text\": 3}", "[]"}) {
    auto res = c.Post("/command", bad, "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 400) << bad;
    EXPECT_EQ(nlohmann::json::parse(res->body)["error"], "BadRequest");
  }
  EXPECT_EQ(parse_scene(c.Get("/scene")->body).revision, 1u);
}

TEST(Service, LastEventIdReplaysHistory) {
  Running r;
  auto c = r.client();
  const std::vector<std::string> cmds{"toggle skull", "set offset 100 0 0", "toggle ventricles", "toggle skull"};
  for (const auto& cmd : cmds) ASSERT_EQ(c.Post("/command", command_body(cmd), "application/json")->status, 200);

  const auto events = read_events(r.port, cmds.size(), {{"Last-Event-ID", "0"}});
  ASSERT_EQ(events.size(), cmds.size());
  SceneState fold = parse_scene(read_file_text(manifest_path().parent_path() / "scene.json"));
  for (std::size_t i = 0; i < cmds.size(); ++i) {
    fold = apply_command(fold, cmds[i]);
    EXPECT_EQ(events[i].id, i + 1);
    EXPECT_EQ(parse_scene(events[i].data), fold);
  }
  const auto tail = read_events(r.port, 1, {{"Last-Event-ID", "2"}});
  EXPECT_EQ(tail[0].id, 3u);
  const auto fresh = read_events(r.port, 1);
  EXPECT_EQ(fresh[0].id, cmds.size());
  const auto ahead = read_events(r.port, 1, {{"Last-Event-ID", "99"}});
  EXPECT_EQ(ahead[0].id, cmds.size());
  EXPECT_EQ(c.Get("/events", {{"Last-Event-ID", "x"}})->status, 400);
}

TEST(Service, ConcurrentCommandsAreLinearizable) {
  Running r;
  const SceneState initial = r.session->scene();
  const std::vector<std::string> pool{"Toggle Skull", "toggle ventricles", "set offset 10 20 30", "set offset 150 0 0",
                                      "toggle brain"};
  struct Accepted {
    std::uint64_t revision;
    std::string cmd;
    std::string body;
  };
  std::mutex mu;
  std::vector<Accepted> accepted;
  std::atomic<int> rejected_with_change{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      std::mt19937 rng(100 + t);
      auto c = r.client();
      for (int i = 0; i < 30; ++i) {
        const auto cmd = pool[rng() % pool.size()];
        auto res = c.Post("/command", command_body(cmd), "application/json");
        if (!res) continue;
        if (res->status == 200) {
          std::lock_guard lock(mu);
          accepted.push_back({parse_scene(res->body).revision, cmd, res->body});
        } else if (res->status != 422) {
          ++rejected_with_change;
        }
      }
    });
  }
  for (auto& th : threads) th.join();
  EXPECT_EQ(rejected_with_change.load(), 0);
  std::sort(accepted.begin(), accepted.end(), [](auto& a, auto& b) { return a.revision < b.revision; });
  ASSERT_FALSE(accepted.empty());
  for (std::size_t i = 0; i < accepted.size(); ++i) EXPECT_EQ(accepted[i].revision, i + 1);
  EXPECT_EQ(r.session->revision(), accepted.size());

  const auto events = read_events(r.port, accepted.size(), {{"Last-Event-ID", "0"}});
  ASSERT_EQ(events.size(), accepted.size());
  SceneState state = initial;
  for (std::size_t i = 0; i < accepted.size(); ++i) {
    state = apply_command(state, accepted[i].cmd);
    EXPECT_EQ(parse_scene(events[i].data), state) << "revision " << i + 1;
    EXPECT_EQ(parse_scene(accepted[i].body), state);
  }
  EXPECT_EQ(r.session->scene(), state);
}

TEST(Service, TwoStreamsConverge) {
  Running r;
  std::promise<void> a_ready, b_ready;
  auto a = std::async(std::launch::async, [&] { return read_events(r.port, 7, {}, [&] { a_ready.set_value(); }); });
  auto b = std::async(std::launch::async, [&] { return read_events(r.port, 7, {}, [&] { b_ready.set_value(); }); });
  a_ready.get_future().wait();
  b_ready.get_future().wait();
  auto c1 = r.client(), c2 = r.client();
  for (int i = 0; i < 3; ++i) {
    c1.Post("/command", command_body("toggle skull"), "application/json");
    c2.Post("/command", command_body("toggle ventricles"), "application/json");
  }
  const auto ea = a.get(), eb = b.get();
  ASSERT_EQ(ea.size(), 7u);
  ASSERT_EQ(eb.size(), 7u);
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_EQ(ea[i].id, i);
    EXPECT_EQ(ea[i].data, eb[i].data);
  }
  const auto last = parse_scene(ea.back().data);
  EXPECT_FALSE(last.find("skull")->visible);
  EXPECT_FALSE(last.find("ventricles")->visible);
}

TEST(Service, UploadReplacesModelsAndBumpsRevision) {
  Running r;
  auto c = r.client();
  ASSERT_EQ(c.Post("/command", command_body("toggle skull"), "application/json")->status, 200);
  ASSERT_EQ(c.Post("/command", command_body("set offset 100 0 0"), "application/json")->status, 200);
  const auto old_obj = c.Get("/mesh/skull")->body;

  HeadPhantomSpec spec;
  spec.skull_inner_mm = 16;
  spec.skull_outer_mm = 22;
  const auto vol = make_head_phantom(spec).volume;
  const auto expected = build_models(vol, {});
  const auto file = encode_raw_volume_file(vol);
  auto res = c.Post("/upload", std::string(file.begin(), file.end()), "application/octet-stream");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200) << res->body;
  auto scene = parse_scene(res->body);
  EXPECT_EQ(scene.revision, 3u);
  EXPECT_TRUE(scene.find("skull")->visible);
  EXPECT_EQ(scene.offset_mm, Vec3(100, 0, 0));
  const auto new_obj = c.Get("/mesh/skull")->body;
  EXPECT_NE(new_obj, old_obj);
  EXPECT_EQ(new_obj, export_obj(expected.skull));

  const auto parts = write_raw_volume(vol);
  httplib::MultipartFormDataItems items{{"header", parts.header, "vol.txt", "text/plain"},
                                        {"data", std::string(parts.data.begin(), parts.data.end()), "vol.raw",
                                         "application/octet-stream"}};
  res = c.Post("/upload", items);
  ASSERT_EQ(res->status, 200) << res->body;
  EXPECT_EQ(parse_scene(res->body).revision, 4u);

  std::vector<ZipEntry> entries;
  const auto slices = slice_volume(vol);
  for (std::size_t k = 0; k < slices.size(); ++k) entries.push_back({"s" + std::to_string(k) + ".dcm", write_dicom_slice(slices[k])});
  const auto zip = write_zip(entries);
  res = c.Post("/upload", std::string(zip.begin(), zip.end()), "application/zip");
  ASSERT_EQ(res->status, 200) << res->body;
  EXPECT_EQ(parse_scene(res->body).revision, 5u);
  EXPECT_EQ(c.Get("/mesh/skull")->body, export_obj(expected.skull));
  httplib::MultipartFormDataItems zipped{{"dicom_zip", std::string(zip.begin(), zip.end()), "ct.zip", "application/zip"}};
  EXPECT_EQ(c.Post("/upload", zipped)->status, 200);

  const auto events = read_events(r.port, 1, {{"Last-Event-ID", "2"}});
  EXPECT_EQ(events[0].id, 3u);
}

TEST(Service, UploadErrors) {
  Running r;
  auto c = r.client();
  auto garbage = c.Post("/upload", "hello", "application/octet-stream");
  ASSERT_TRUE(garbage);
  EXPECT_EQ(garbage->status, 400);
  EXPECT_NE(nlohmann::json::parse(garbage->body)["message"].get<std::string>().find("Stage=ingest"), std::string::npos);
  EXPECT_EQ(c.Post("/upload", "", "application/octet-stream")->status, 400);
  EXPECT_EQ(c.Post("/upload", "PK", "application/zip")->status, 400);
  httplib::MultipartFormDataItems wrong{{"file", "x", "x", "text/plain"}};
  EXPECT_EQ(c.Post("/upload", wrong)->status, 400);

  auto air = make_head_phantom({}).volume;
  std::fill(air.samples.begin(), air.samples.end(), std::int16_t(-1000));
  const auto file = encode_raw_volume_file(air);
  auto res = c.Post("/upload", std::string(file.begin(), file.end()), "application/octet-stream");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 422);
  const auto body = nlohmann::json::parse(res->body);
  EXPECT_EQ(body["error"], "EmptySegment");
  EXPECT_NE(body["message"].get<std::string>().find("Stage=segmentation"), std::string::npos);
  EXPECT_EQ(r.session->revision(), 0u);
}

TEST(Service, PortInUse) {
  Running r;
  Service second(SessionState::from_manifest(manifest_path()));
  EXPECT_EQ(code_of([&] { second.start("127.0.0.1", r.port); }), ErrorCode::PortInUse);
  EXPECT_EQ(r.client().Get("/health")->status, 200);
}

TEST(Service, StopEndsOpenStreams) {
  auto r = std::make_unique<Running>();
  std::promise<void> connected;
  auto reader = std::async(std::launch::async, [&] { return read_events(r->port, 5, {}, [&] { connected.set_value(); }); });
  connected.get_future().wait();
  const auto t0 = std::chrono::steady_clock::now();
  r->service.stop();
  EXPECT_EQ(reader.get().size(), 1u);
  EXPECT_LT(std::chrono::steady_clock::now() - t0, std::chrono::seconds(3));
}

}  // namespace
}  // namespace neuronav
