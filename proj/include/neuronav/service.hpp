#pragma once

// HTTP service over one session: the scene, the meshes, text commands, a
// server-sent event stream (one event per revision carrying the full scene
// document) and volume upload. All mutations go through SessionState, which
// serializes them under one mutex and records a snapshot per revision.
//
//   GET  /health        {"status": "ok", "revision": r}
//   GET  /scene         scene document
//   GET  /mesh/{name}   OBJ text; name is a node name or its mesh_ref
//   POST /command       {"text": "..."} -> scene document | 422 UnknownCommand
//   GET  /events        text/event-stream; honours Last-Event-ID
//   POST /upload        application/zip (DICOM slices), application/octet-stream
//                       (raw volume file) or multipart with "volume", "header" + "data",
//                       or "dicom_zip"; replaces the models and bumps the revision
//
// Errors: {"error": "<code>", "message": "...", "revision": r}.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "neuronav/pipeline.hpp"
#include "neuronav/scene.hpp"

// after Eigen: <resolv.h> (pulled in by httplib) defines a _res macro
#include "httplib.h"

namespace neuronav {

inline constexpr int kDefaultPort = 8080;
inline constexpr const char* kPortEnv = "NEURONAV_PORT";

/// --port wins, then NEURONAV_PORT, then 8080.
inline int resolve_port(std::optional<int> flag, const char* env_value) {
  auto check = [](long p, const std::string& from) {
    if (p < 0 || p > 65535) throw Error(ErrorCode::InvalidArgument, from + " is not a valid port");
    return int(p);
  };
  if (flag) return check(*flag, "--port");
  if (env_value && *env_value) {
    auto v = parse_int<long>(env_value);
    if (!v) throw Error(ErrorCode::InvalidArgument, std::string(kPortEnv) + "='" + env_value + "' is not a valid port");
    return check(*v, kPortEnv);
  }
  return kDefaultPort;
}

struct SceneEvent {
  std::uint64_t revision = 0;
  std::string data;  // compact scene document
};

class SessionState {
 public:
  SessionState(SceneState scene, std::map<std::string, std::string> obj_text, ModelSettings settings = {})
      : scene_(std::move(scene)), obj_text_(std::move(obj_text)), settings_(settings) {
    base_revision_ = scene_.revision;
    history_.push_back(scene_to_json(scene_).dump());
  }

  static std::shared_ptr<SessionState> from_manifest(const std::filesystem::path& manifest, ModelSettings settings = {}) {
    auto loaded = load_manifest_outputs(manifest);
    return std::make_shared<SessionState>(std::move(loaded.scene), std::move(loaded.obj_text), settings);
  }

  SceneState scene() const {
    std::lock_guard lock(mu_);
    return scene_;
  }

  std::uint64_t revision() const {
    std::lock_guard lock(mu_);
    return scene_.revision;
  }

  std::optional<std::string> mesh(const std::string& name) const {
    std::lock_guard lock(mu_);
    for (const auto& n : scene_.nodes) {
      if (n.name == name || n.mesh_ref == name) {
        auto it = obj_text_.find(n.name);
        if (it != obj_text_.end()) return it->second;
      }
    }
    return std::nullopt;
  }

  /// Applies one command atomically; UnknownCommand leaves everything unchanged.
  SceneState apply(std::string_view cmd) {
    std::lock_guard lock(mu_);
    commit(apply_command(scene_, cmd));
    return scene_;
  }

  /// Swaps in freshly built models: default nodes, current offset and marker pose, revision + 1.
  SceneState replace_models(const Models& models) {
    std::map<std::string, std::string> text{{"skull", export_obj(models.skull)}, {"ventricles", export_obj(models.ventricles)}};
    std::lock_guard lock(mu_);
    SceneState next = default_scene(scene_.offset_mm);
    next.marker_pose = scene_.marker_pose;
    next.revision = scene_.revision + 1;
    obj_text_ = std::move(text);
    commit(std::move(next));
    return scene_;
  }

  const ModelSettings& settings() const { return settings_; }

  /// Events with revision >= from, waiting up to `wait` for one to exist.
  /// A `from` beyond the next revision restarts at the current one.
  std::vector<SceneEvent> events_from(std::uint64_t from, std::chrono::milliseconds wait) const {
    std::unique_lock lock(mu_);
    if (from > scene_.revision + 1 || from < base_revision_) from = scene_.revision;
    cv_.wait_for(lock, wait, [&] { return closed_ || scene_.revision >= from; });
    std::vector<SceneEvent> out;
    for (auto r = from; r <= scene_.revision && !closed_; ++r) out.push_back({r, history_[r - base_revision_]});
    return out;
  }

  void close() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  bool closed() const {
    std::lock_guard lock(mu_);
    return closed_;
  }

 private:
  void commit(SceneState next) {
    scene_ = std::move(next);
    history_.push_back(scene_to_json(scene_).dump());
    cv_.notify_all();
  }

  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  SceneState scene_;
  std::map<std::string, std::string> obj_text_;
  ModelSettings settings_;
  std::uint64_t base_revision_ = 0;
  std::vector<std::string> history_;  // history_[r - base_revision_]
  bool closed_ = false;
};

namespace service_detail {

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownCommand:
    case ErrorCode::EmptySegment:
    case ErrorCode::OpenSkull:
    case ErrorCode::InvalidRange:
    case ErrorCode::InvalidConfig:
      return 422;
    case ErrorCode::MissingMesh: return 404;
    case ErrorCode::DimsTooSmall:
    case ErrorCode::IoError:
    case ErrorCode::DivergedPose:
      return 500;
    default: return 400;
  }
}

inline void send_error(httplib::Response& res, const Error& e, std::uint64_t revision) {
  res.status = http_status(e.code());
  nlohmann::ordered_json body{{"error", to_string(e.code())}, {"message", e.what()}, {"revision", revision}};
  res.set_content(body.dump(), "application/json");
}

inline std::span<const std::uint8_t> bytes_of(const std::string& s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

inline VoxelVolume upload_volume(const httplib::Request& req) {
  if (req.is_multipart_form_data()) {
    if (req.has_file("dicom_zip")) return volume_from_dicom_zip(bytes_of(req.get_file_value("dicom_zip").content));
    if (req.has_file("volume")) return decode_raw_volume_file(bytes_of(req.get_file_value("volume").content));
    if (req.has_file("header") && req.has_file("data")) {
      return read_raw_volume(req.get_file_value("header").content, bytes_of(req.get_file_value("data").content));
    }
    throw Error(ErrorCode::BadRequest, "multipart upload needs 'volume', 'header' + 'data', or 'dicom_zip'");
  }
  const auto type = req.get_header_value("Content-Type");
  if (req.body.empty()) throw Error(ErrorCode::BadRequest, "empty upload");
  if (type.rfind("application/zip", 0) == 0) return volume_from_dicom_zip(bytes_of(req.body));
  return decode_raw_volume_file(bytes_of(req.body));
}

inline std::string sse_frame(const SceneEvent& e) {
  return "id: " + std::to_string(e.revision) + "\nevent: scene\ndata: " + e.data + "\n\n";
}

}  // namespace service_detail

class Service {
 public:
  explicit Service(std::shared_ptr<SessionState> session) : session_(std::move(session)) { routes(); }
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;
  ~Service() { stop(); }

  /// Binds and starts serving on a background thread; returns the bound port
  /// (port 0 picks a free one).
  int start(const std::string& host, int port) {
    server_.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
    int bound = port;
    if (port == 0) {
      bound = server_.bind_to_any_port(host);
      if (bound < 0) throw Error(ErrorCode::PortInUse, "could not bind an ephemeral port on " + host);
    } else if (!server_.bind_to_port(host, port)) {
      throw Error(ErrorCode::PortInUse, "port " + std::to_string(port) + " is unavailable on " + host);
    }
    port_ = bound;
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return bound;
  }

  void stop() {
    session_->close();
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }

 private:
  void routes() {
    using namespace service_detail;
    server_.new_task_queue = [] { return new httplib::ThreadPool(32); };
    server_.set_payload_max_length(std::size_t(2) << 30);
    server_.set_default_headers({{"Access-Control-Allow-Origin", "*"}});

    server_.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
      nlohmann::ordered_json body{{"status", "ok"}, {"revision", session_->revision()}};
      res.set_content(body.dump(), "application/json");
    });

    server_.Get("/scene", [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(serialize_scene(session_->scene()), "application/json");
    });

    server_.Get(R"(/mesh/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string name = req.matches[1];
      if (auto obj = session_->mesh(name)) {
        res.set_content(*obj, "model/obj");
      } else {
        send_error(res, Error(ErrorCode::MissingMesh, "no mesh named '" + name + "'"), session_->revision());
      }
    });

    server_.Post("/command", [this](const httplib::Request& req, httplib::Response& res) {
      std::string text;
      try {
        const auto body = nlohmann::json::parse(req.body);
        text = body.at("text").get<std::string>();
      } catch (const nlohmann::json::exception&) {
        send_error(res, Error(ErrorCode::BadRequest, "expected a JSON body {\"text\": \"...\"}"), session_->revision());
        return;
      }
      try {
        res.set_content(serialize_scene(session_->apply(text)), "application/json");
      } catch (const Error& e) {
        send_error(res, e, session_->revision());
      }
    });

    server_.Post("/upload", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        VoxelVolume volume;
        try {
          volume = upload_volume(req);
        } catch (const Error& e) {
          throw StageError(Stage::Ingest, e);
        }
        const auto models = build_models(volume, session_->settings());
        res.set_content(serialize_scene(session_->replace_models(models)), "application/json");
      } catch (const Error& e) {
        send_error(res, e, session_->revision());
      }
    });

    server_.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type, Last-Event-ID");
      res.status = 204;
    });

    server_.Get("/events", [this](const httplib::Request& req, httplib::Response& res) {
      std::uint64_t next = session_->revision();
      const auto last = req.has_header("Last-Event-ID") ? req.get_header_value("Last-Event-ID")
                                                         : req.get_param_value("last_event_id");
      if (!last.empty()) {
        auto v = parse_int<std::uint64_t>(last);
        if (!v) {
          send_error(res, Error(ErrorCode::BadRequest, "Last-Event-ID must be a revision number"), session_->revision());
          return;
        }
        next = *v + 1;
      }
      res.set_header("Cache-Control", "no-cache");
      auto cursor = std::make_shared<std::uint64_t>(next);
      res.set_chunked_content_provider("text/event-stream", [this, cursor](std::size_t, httplib::DataSink& sink) {
        const auto events = session_->events_from(*cursor, std::chrono::seconds(5));
        if (session_->closed()) return false;
        if (events.empty()) {
          static constexpr std::string_view ping = ": ping\n\n";
          return sink.write(ping.data(), ping.size());
        }
        for (const auto& e : events) {
          const auto frame = sse_frame(e);
          if (!sink.write(frame.data(), frame.size())) return false;
          *cursor = e.revision + 1;
        }
        return true;
      });
    });
  }

  std::shared_ptr<SessionState> session_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace neuronav
