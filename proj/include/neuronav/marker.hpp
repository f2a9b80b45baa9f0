#pragma once

// Pinhole camera, square binary fiducial and the synthetic marker renderer.
//
// Marker frame: X right, Y up in the marker plane, origin at the marker
// centre. The printed face looks along -Z, so the identity pose at
// t = (0, 0, d) shows the marker face-on. Cell grid coordinates (gx, gy) run
// over [0, n+2]; gx follows +X and gy follows -Y (row 0 is the top row).

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "neuronav/error.hpp"
#include "neuronav/image.hpp"
#include "neuronav/rigid.hpp"
#include "neuronav/text_doc.hpp"

namespace neuronav {

struct CameraIntrinsics {
  double fx = 800.0;
  double fy = 800.0;
  double cx = 320.0;
  double cy = 240.0;
  int width = 640;
  int height = 480;

  void validate() const {
    if (!(fx > 0 && fy > 0)) throw Error(ErrorCode::InvalidArgument, "focal lengths must be positive");
    if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidArgument, "image size must be positive");
    if (!(cx > 0 && cx < width && cy > 0 && cy < height)) {
      throw Error(ErrorCode::InvalidArgument, "principal point must lie inside the image");
    }
  }

  Mat3 K() const {
    Mat3 k;
    k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return k;
  }

  Vec2 project(const Vec3& p) const { return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy}; }

  bool contains(const Vec2& px) const {
    return px.x() >= 0 && px.y() >= 0 && px.x() <= width - 1 && px.y() <= height - 1;
  }

  bool operator==(const CameraIntrinsics&) const = default;
};

inline CameraIntrinsics parse_camera(std::string_view text) {
  const auto doc = TextDoc::parse(text, ErrorCode::ParseError);
  CameraIntrinsics cam;
  cam.fx = doc.number("fx");
  cam.fy = doc.number("fy");
  cam.cx = doc.number("cx");
  cam.cy = doc.number("cy");
  cam.width = doc.integer<int>("width");
  cam.height = doc.integer<int>("height");
  cam.validate();
  return cam;
}

inline std::string camera_to_text(const CameraIntrinsics& cam) {
  return "fx: " + format_double(cam.fx) + "\nfy: " + format_double(cam.fy) + "\ncx: " + format_double(cam.cx) +
         "\ncy: " + format_double(cam.cy) + "\nwidth: " + std::to_string(cam.width) +
         "\nheight: " + std::to_string(cam.height) + "\n";
}

inline CameraIntrinsics load_camera(const std::filesystem::path& path) { return parse_camera(read_file_text(path)); }

// ---------------------------------------------------------------------------
// Marker

using Payload = std::vector<std::uint8_t>;  // n*n, row-major, 1 = white

/// Payload rotated by 90 degrees counter-clockwise in grid terms, k times.
inline Payload rotate_payload(const Payload& p, int n, int k) {
  Payload cur = p;
  for (int r = 0; r < ((k % 4) + 4) % 4; ++r) {
    Payload next(cur.size());
    for (int row = 0; row < n; ++row)
      for (int col = 0; col < n; ++col) next[std::size_t((n - 1 - col) * n + row)] = cur[std::size_t(row * n + col)];
    cur = std::move(next);
  }
  return cur;
}

inline int hamming(const Payload& a, const Payload& b) {
  int d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

/// Smallest Hamming distance between the payload and its 3 non-trivial rotations.
inline int rotation_distance_bits(const Payload& p, int n) {
  int best = n * n;
  for (int k = 1; k < 4; ++k) best = std::min(best, hamming(p, rotate_payload(p, n, k)));
  return best;
}

/// Deterministic payload for an id: Mersenne Twister draws until the
/// rotations are well separated.
inline Payload payload_for_id(int id, int n = 6) {
  std::mt19937 rng(0x6d61726bu ^ std::uint32_t(id) * 2654435761u);
  std::bernoulli_distribution bit(0.5);
  const int required = std::max(1, std::min(8, n * n / 4));
  for (;;) {
    Payload p(std::size_t(n * n));
    for (auto& b : p) b = bit(rng);
    if (rotation_distance_bits(p, n) >= required) return p;
  }
}

struct MarkerSpec {
  int n = 6;
  int id = 0;
  double side_mm = 50.0;
  Payload payload;

  int grid() const { return n + 2; }
  double cell_mm() const { return side_mm / grid(); }

  /// Bit errors tolerated when matching a decoded payload.
  int tolerance() const { return std::min(2, (rotation_distance_bits(payload, n) - 1) / 2); }

  void validate() const {
    if (n < 2 || n > 16) throw Error(ErrorCode::InvalidArgument, "payload size n must be in [2, 16]");
    if (!(side_mm > 0)) throw Error(ErrorCode::InvalidArgument, "side_mm must be positive");
    if (payload.size() != std::size_t(n * n)) throw Error(ErrorCode::InvalidArgument, "payload must have n*n bits");
    if (rotation_distance_bits(payload, n) == 0) {
      throw Error(ErrorCode::InvalidArgument, "payload is rotationally symmetric");
    }
  }

  /// 1 = white. Border cells are black.
  bool cell_white(int gx, int gy) const {
    if (gx <= 0 || gy <= 0 || gx > n || gy > n) return false;
    return payload[std::size_t((gy - 1) * n + (gx - 1))] != 0;
  }

  /// Marker-frame corners in detection order.
  std::array<Vec3, 4> corners() const {
    const double h = side_mm / 2;
    return {Vec3(-h, h, 0), Vec3(h, h, 0), Vec3(h, -h, 0), Vec3(-h, -h, 0)};
  }

  /// Marker-plane point of a grid coordinate.
  Vec2 grid_to_plane(double gx, double gy) const {
    return {-side_mm / 2 + gx * cell_mm(), side_mm / 2 - gy * cell_mm()};
  }

  bool operator==(const MarkerSpec&) const = default;
};

inline MarkerSpec make_marker_spec(int id, double side_mm = 50.0, int n = 6) {
  MarkerSpec s{n, id, side_mm, payload_for_id(id, n)};
  s.validate();
  return s;
}

/// "n", "id", "side_mm", and "payload" (n rows of n '0'/'1' characters,
/// separated by spaces). Without a payload line the id's default payload is used.
inline MarkerSpec parse_marker_spec(std::string_view text) {
  const auto doc = TextDoc::parse(text, ErrorCode::ParseError);
  MarkerSpec s;
  s.n = doc.has("n") ? doc.integer<int>("n") : 6;
  s.id = doc.integer<int>("id");
  s.side_mm = doc.number("side_mm");
  if (doc.has("payload")) {
    for (char c : doc.str("payload")) {
      if (c == '0' || c == '1') {
        s.payload.push_back(std::uint8_t(c - '0'));
      } else if (c != ' ' && c != '\t') {
        throw Error(ErrorCode::ParseError, "payload must contain only 0 and 1");
      }
    }
  } else {
    if (s.n < 2 || s.n > 16) throw Error(ErrorCode::InvalidArgument, "payload size n must be in [2, 16]");
    s.payload = payload_for_id(s.id, s.n);
  }
  s.validate();
  return s;
}

inline std::string marker_spec_to_text(const MarkerSpec& s) {
  std::string rows;
  for (int r = 0; r < s.n; ++r) {
    if (r) rows += ' ';
    for (int c = 0; c < s.n; ++c) rows += char('0' + s.payload[std::size_t(r * s.n + c)]);
  }
  return "n: " + std::to_string(s.n) + "\nid: " + std::to_string(s.id) + "\nside_mm: " + format_double(s.side_mm) +
         "\npayload: " + rows + "\n";
}

inline MarkerSpec load_marker_spec(const std::filesystem::path& path) { return parse_marker_spec(read_file_text(path)); }

// ---------------------------------------------------------------------------
// Rendering

inline constexpr std::uint8_t kMarkerBlack = 20;
inline constexpr std::uint8_t kMarkerWhite = 255;

/// Plane-to-image homography of a marker pose (maps (x, y, 1) in mm to pixels).
inline Mat3 pose_homography(const RigidPose& pose, const CameraIntrinsics& cam) {
  const Mat3 r = pose.rotation_matrix();
  Mat3 m;
  m.col(0) = r.col(0);
  m.col(1) = r.col(1);
  m.col(2) = pose.translation;
  return cam.K() * m;
}

/// True when the printed face is toward the camera and every corner projects
/// inside the image.
inline bool marker_visible(const MarkerSpec& spec, const RigidPose& pose, const CameraIntrinsics& cam) {
  const Vec3 face_normal = -(pose.rotation * Vec3::UnitZ());
  if (face_normal.dot(pose.translation) >= 0) return false;
  for (const auto& c : spec.corners()) {
    const Vec3 p = pose.apply(c);
    if (p.z() <= 0) return false;
    if (!cam.contains(cam.project(p))) return false;
  }
  return true;
}

/// Renders the marker over a white background with 4x4 supersampling per
/// pixel (inverse projective mapping of each sub-sample onto the marker plane).
inline GrayImage render_marker_image(const MarkerSpec& spec, const RigidPose& pose, const CameraIntrinsics& cam) {
  spec.validate();
  cam.validate();
  if (!marker_visible(spec, pose, cam)) throw Error(ErrorCode::MarkerNotVisible, "marker outside view or facing away");

  GrayImage img(cam.width, cam.height, kMarkerWhite);
  const Mat3 hinv = pose_homography(pose, cam).inverse();
  double umin = 1e300, umax = -1e300, vmin = 1e300, vmax = -1e300;
  for (const auto& c : spec.corners()) {
    const Vec2 px = cam.project(pose.apply(c));
    umin = std::min(umin, px.x());
    umax = std::max(umax, px.x());
    vmin = std::min(vmin, px.y());
    vmax = std::max(vmax, px.y());
  }
  const int x0 = std::max(0, int(std::floor(umin)) - 1), x1 = std::min(cam.width - 1, int(std::ceil(umax)) + 1);
  const int y0 = std::max(0, int(std::floor(vmin)) - 1), y1 = std::min(cam.height - 1, int(std::ceil(vmax)) + 1);
  constexpr double kOffsets[4] = {-0.375, -0.125, 0.125, 0.375};
  const double half = spec.side_mm / 2, cell = spec.cell_mm();

  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      int sum = 0;
      for (double oy : kOffsets) {
        for (double ox : kOffsets) {
          const Vec3 q = hinv * Vec3(x + ox, y + oy, 1.0);
          const double mx = q.x() / q.z(), my = q.y() / q.z();
          int value = kMarkerWhite;
          if (std::abs(mx) < half && std::abs(my) < half) {
            const int gx = std::min(spec.grid() - 1, int((mx + half) / cell));
            const int gy = std::min(spec.grid() - 1, int((half - my) / cell));
            value = spec.cell_white(gx, gy) ? kMarkerWhite : kMarkerBlack;
          }
          sum += value;
        }
      }
      img.at(x, y) = std::uint8_t((sum + 8) / 16);
    }
  }
  return img;
}

}  // namespace neuronav
