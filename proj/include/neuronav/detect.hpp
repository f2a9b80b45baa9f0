#pragma once

// Square fiducial detection: adaptive threshold, dark regions, hull-based
// quadrilateral fit, sub-pixel corners, grid decode, homography pose and
// refinement of both planar-ambiguity solutions.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "neuronav/error.hpp"
#include "neuronav/homography.hpp"
#include "neuronav/image.hpp"
#include "neuronav/marker.hpp"
#include "neuronav/pose_refine.hpp"

namespace neuronav {

struct DetectorConfig {
  int threshold_window = 31;  // k, odd
  int threshold_offset = 7;
  int refine_window = 5;      // corner refinement window side, odd
  int min_region_pixels = 20;
  double min_side_px = 6.0;
  double min_quad_fill = 0.8;  // quad area / hull area
  int max_border_errors = 3;
  bool refine_edges = true;    // least-squares edge lines after corner refinement
};

struct DetectionResult {
  std::array<Vec2, 4> corners_px;  // marker corner order
  int id = 0;
  RigidPose pose;
  double reprojection_rms_px = 0;
  int bit_errors = 0;
};

namespace detect_detail {

using Quad = std::array<Vec2, 4>;

inline std::vector<std::uint8_t> adaptive_threshold(const GrayImage& img, int k, int offset) {
  const int w = img.width, h = img.height;
  std::vector<std::uint64_t> integral(std::size_t(w + 1) * std::size_t(h + 1), 0);
  auto I = [&](int x, int y) -> std::uint64_t& { return integral[std::size_t(y) * std::size_t(w + 1) + std::size_t(x)]; };
  for (int y = 0; y < h; ++y) {
    std::uint64_t row = 0;
    for (int x = 0; x < w; ++x) {
      row += img.at(x, y);
      I(x + 1, y + 1) = I(x + 1, y) + row;
    }
  }
  const int r = k / 2;
  std::vector<std::uint8_t> dark(std::size_t(w) * std::size_t(h), 0);
  for (int y = 0; y < h; ++y) {
    const int ya = std::max(0, y - r), yb = std::min(h, y + r + 1);
    for (int x = 0; x < w; ++x) {
      const int xa = std::max(0, x - r), xb = std::min(w, x + r + 1);
      const std::int64_t sum = std::int64_t(I(xb, yb) - I(xa, yb) - I(xb, ya) + I(xa, ya));
      const std::int64_t count = std::int64_t(xb - xa) * (yb - ya);
      dark[std::size_t(y) * std::size_t(w) + std::size_t(x)] =
          std::int64_t(img.at(x, y) + offset) * count < sum ? 1 : 0;
    }
  }
  return dark;
}

struct Region {
  std::vector<std::array<int, 2>> boundary;
  std::size_t pixels = 0;
};

/// 8-connected dark regions that do not touch the image border.
inline std::vector<Region> dark_regions(const std::vector<std::uint8_t>& dark, int w, int h, std::size_t min_pixels) {
  std::vector<std::uint8_t> seen(dark.size(), 0);
  std::vector<Region> out;
  std::vector<int> stack;
  auto is_dark = [&](int x, int y) { return x >= 0 && y >= 0 && x < w && y < h && dark[std::size_t(y * w + x)]; };
  for (int start = 0; start < w * h; ++start) {
    if (!dark[std::size_t(start)] || seen[std::size_t(start)]) continue;
    Region reg;
    bool touches = false;
    stack.assign(1, start);
    seen[std::size_t(start)] = 1;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      const int x = p % w, y = p / w;
      ++reg.pixels;
      if (x == 0 || y == 0 || x == w - 1 || y == h - 1) touches = true;
      if (!is_dark(x - 1, y) || !is_dark(x + 1, y) || !is_dark(x, y - 1) || !is_dark(x, y + 1)) {
        reg.boundary.push_back({x, y});
      }
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if (!is_dark(nx, ny)) continue;
          const int q = ny * w + nx;
          if (!seen[std::size_t(q)]) {
            seen[std::size_t(q)] = 1;
            stack.push_back(q);
          }
        }
    }
    if (!touches && reg.pixels >= min_pixels) out.push_back(std::move(reg));
  }
  return out;
}

inline double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

/// Andrew's monotone chain; positive-cross orientation, no collinear points.
inline std::vector<Vec2> convex_hull(std::vector<std::array<int, 2>> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return {};
  std::vector<Vec2> p;
  for (const auto& q : pts) p.emplace_back(q[0], q[1]);
  std::vector<Vec2> hull(2 * p.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p[i]) <= 0) --k;
    hull[k++] = p[i];
  }
  for (std::size_t i = p.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], p[i]) <= 0) --k;
    hull[k++] = p[i];
  }
  hull.resize(k - 1);
  return hull;
}

inline double polygon_area(const std::vector<Vec2>& poly) {
  double a = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % poly.size()];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return a / 2;
}

/// Largest-area quadrilateral with vertices on the hull.
inline std::optional<Quad> max_area_quad(const std::vector<Vec2>& hull) {
  const std::size_t n = hull.size();
  if (n < 4) return std::nullopt;
  double best = 0;
  std::array<std::size_t, 4> idx{};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 2; j < n; ++j) {
      double a1 = 0, a2 = 0;
      std::size_t k1 = i, k2 = j;
      for (std::size_t k = i + 1; k < j; ++k) {
        const double a = cross(hull[i], hull[j], hull[k]);
        if (-a > a1) a1 = -a, k1 = k;
      }
      for (std::size_t k = j + 1; k < n + i; ++k) {
        const double a = cross(hull[i], hull[j], hull[k % n]);
        if (a > a2) a2 = a, k2 = k % n;
      }
      if (k1 == i || k2 == j) continue;
      if (a1 + a2 > best) {
        best = a1 + a2;
        idx = {i, k1, j, k2};
      }
    }
  }
  if (best <= 0) return std::nullopt;
  return Quad{hull[idx[0]], hull[idx[1]], hull[idx[2]], hull[idx[3]]};
}

inline double quad_area(const Quad& q) { return polygon_area(std::vector<Vec2>(q.begin(), q.end())); }

/// Gradient-based sub-pixel corner (least squares over a window).
/// Falls back to the start point when the estimate leaves the window.
inline Vec2 refine_corner(const GrayImage& img, const Vec2 start, int window, int iterations = 40, double eps = 1e-3) {
  const int half = window / 2;
  Vec2 c = start;
  const double sigma = std::max(1.0, half / 1.0);
  for (int it = 0; it < iterations; ++it) {
    Eigen::Matrix2d a = Eigen::Matrix2d::Zero();
    Vec2 b = Vec2::Zero();
    for (int dy = -half; dy <= half; ++dy) {
      for (int dx = -half; dx <= half; ++dx) {
        const Vec2 p = c + Vec2(dx, dy);
        const Vec2 g((img.sample(p.x() + 1, p.y()) - img.sample(p.x() - 1, p.y())) / 2,
                     (img.sample(p.x(), p.y() + 1) - img.sample(p.x(), p.y() - 1)) / 2);
        const double w = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
        const Eigen::Matrix2d gg = w * g * g.transpose();
        a += gg;
        b += gg * p;
      }
    }
    if (std::abs(a.determinant()) < 1e-9 * (a.trace() * a.trace() + 1e-300)) break;
    const Vec2 next = a.ldlt().solve(b);
    if (!next.allFinite() || (next - start).norm() > half) return start;
    const double move = (next - c).norm();
    c = next;
    if (move < eps) break;
  }
  return c;
}

/// Least-squares line through sub-pixel edge points sampled along each side;
/// corners become the intersections of adjacent lines.
inline Quad refine_by_edges(const GrayImage& img, const Quad& q, int grid) {
  const Vec2 centre = (q[0] + q[1] + q[2] + q[3]) / 4;
  std::array<Vec3, 4> lines;  // a x + b y + c = 0 with (a, b) unit
  for (int e = 0; e < 4; ++e) {
    const Vec2 p0 = q[std::size_t(e)], p1 = q[std::size_t((e + 1) % 4)];
    const double len = (p1 - p0).norm();
    const Vec2 dir = (p1 - p0) / len;
    Vec2 inward(-dir.y(), dir.x());
    if (inward.dot(centre - p0) < 0) inward = -inward;
    // Stay clear of payload edges one cell inside the border.
    const int inner = std::clamp(int(0.6 * len / grid), 1, 3);
    constexpr int kOuter = 3;
    const int samples = std::max(4, int(len));
    std::vector<Vec2> pts;
    std::vector<double> weights;
    for (int s = 0; s < samples; ++s) {
      const double t = (s + 0.5) / samples;
      if (t * len < 2.0 || (1 - t) * len < 2.0) continue;
      const Vec2 base = p0 + t * (p1 - p0);
      // Gradient centroid of the white-to-black drop along the inward normal.
      double sw = 0, sk = 0;
      double prev = img.sample(base.x() - kOuter * inward.x(), base.y() - kOuter * inward.y());
      for (int k = -kOuter + 1; k <= inner; ++k) {
        const double cur = img.sample(base.x() + k * inward.x(), base.y() + k * inward.y());
        const double drop = prev - cur;
        if (drop > 0) {
          sw += drop;
          sk += drop * (k - 0.5);
        }
        prev = cur;
      }
      if (sw < 20) continue;
      pts.push_back(base + (sk / sw) * inward);
      weights.push_back(sw);
    }
    if (pts.size() < 3) return q;
    Vec2 mean = Vec2::Zero();
    double wsum = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      mean += weights[i] * pts[i];
      wsum += weights[i];
    }
    mean /= wsum;
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    for (std::size_t i = 0; i < pts.size(); ++i) cov += weights[i] * (pts[i] - mean) * (pts[i] - mean).transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
    const Vec2 n = es.eigenvectors().col(0);
    lines[std::size_t(e)] = Vec3(n.x(), n.y(), -n.dot(mean));
  }
  Quad out;
  for (int c = 0; c < 4; ++c) {
    const Vec3 x = lines[std::size_t((c + 3) % 4)].cross(lines[std::size_t(c)]);
    if (std::abs(x.z()) < 1e-12) return q;
    out[std::size_t(c)] = Vec2(x.x() / x.z(), x.y() / x.z());
    if ((out[std::size_t(c)] - q[std::size_t(c)]).norm() > 3.0) return q;
  }
  return out;
}

/// Otsu threshold over 8-bit samples.
inline double otsu(const std::vector<double>& values) {
  std::array<double, 256> hist{};
  for (double v : values) hist[std::size_t(std::clamp(int(std::lround(v)), 0, 255))] += 1;
  const double total = double(values.size());
  double sum_all = 0;
  for (int i = 0; i < 256; ++i) sum_all += i * hist[std::size_t(i)];
  double w0 = 0, sum0 = 0, best = -1, thr = 127.5;
  for (int t = 0; t < 255; ++t) {
    w0 += hist[std::size_t(t)];
    sum0 += t * hist[std::size_t(t)];
    const double w1 = total - w0;
    if (w0 == 0 || w1 == 0) continue;
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      thr = t + 0.5;
    }
  }
  return thr;
}

/// Cell colours (1 = white) of the (n+2)^2 grid when image corner
/// quad[(i + shift) % 4] is marker corner i.
inline std::vector<std::uint8_t> read_grid(const GrayImage& img, const Quad& quad, int shift, int grid) {
  std::array<PlaneCorrespondence, 4> corr;
  const double g = grid;
  const std::array<Vec2, 4> grid_corners = {Vec2(0, 0), Vec2(g, 0), Vec2(g, g), Vec2(0, g)};
  for (int i = 0; i < 4; ++i) corr[std::size_t(i)] = {grid_corners[std::size_t(i)], quad[std::size_t((i + shift) % 4)]};
  const Mat3 h = homography_dlt(corr);
  constexpr double kSub[3] = {0.35, 0.5, 0.65};
  std::vector<double> samples;
  samples.reserve(std::size_t(grid * grid * 9));
  for (int gy = 0; gy < grid; ++gy)
    for (int gx = 0; gx < grid; ++gx)
      for (double sy : kSub)
        for (double sx : kSub) {
          const Vec2 p = apply_homography(h, Vec2(gx + sx, gy + sy));
          samples.push_back(img.sample(p.x(), p.y()));
        }
  const double thr = otsu(samples);
  std::vector<std::uint8_t> cells(std::size_t(grid * grid));
  for (std::size_t c = 0; c < cells.size(); ++c) {
    int white = 0;
    for (std::size_t s = 0; s < 9; ++s) white += samples[c * 9 + s] > thr;
    cells[c] = white >= 5;
  }
  return cells;
}

inline RigidPose flipped_pose(const RigidPose& p) {
  const Vec3 n = p.rotation * Vec3::UnitZ();
  const Vec3 v = p.translation.normalized();
  const Vec3 axis = n.cross(v);
  const double s = axis.norm();
  if (s < 1e-12) return p;
  const double theta = std::atan2(s, n.dot(v));
  const Eigen::Quaterniond q(Eigen::AngleAxisd(2 * theta, axis / s));
  return {(q * p.rotation).normalized(), p.translation};
}

inline bool faces_camera(const RigidPose& p) { return (p.rotation * Vec3::UnitZ()).dot(p.translation) > 0; }

}  // namespace detect_detail

/// Pose from 4 ordered corners: DLT, homography decomposition, refinement of
/// both ambiguity branches; the lower-RMS front-facing solution wins.
inline RefineResult pose_from_corners(const MarkerSpec& spec, const std::array<Vec2, 4>& corners_px,
                                      const CameraIntrinsics& cam) {
  using namespace detect_detail;
  const auto model = spec.corners();
  std::array<PlaneCorrespondence, 4> plane;
  std::array<PointCorrespondence, 4> points;
  for (std::size_t i = 0; i < 4; ++i) {
    plane[i] = {model[i].head<2>(), corners_px[i]};
    points[i] = {model[i], corners_px[i]};
  }
  const RigidPose initial = pose_from_homography(homography_dlt(plane), cam);
  std::optional<RefineResult> best;
  for (const auto& start : {initial, flipped_pose(initial)}) {
    RefineResult r;
    try {
      r = refine_pose(start, points, cam);
    } catch (const Error&) {
      continue;
    }
    if (!faces_camera(r.pose)) continue;
    if (!best || r.rms_px < best->rms_px) best = r;
  }
  if (!best) throw Error(ErrorCode::DivergedPose, "no pose solution converged");
  return *best;
}

inline DetectionResult detect_marker(const GrayImage& img, const MarkerSpec& spec, const CameraIntrinsics& cam,
                                     const DetectorConfig& cfg = {}) {
  using namespace detect_detail;
  spec.validate();
  cam.validate();
  if (img.width != cam.width || img.height != cam.height) {
    throw Error(ErrorCode::InvalidArgument, "image size does not match camera intrinsics");
  }
  const auto dark = adaptive_threshold(img, cfg.threshold_window, cfg.threshold_offset);
  const auto regions = dark_regions(dark, img.width, img.height, std::size_t(cfg.min_region_pixels));

  struct Candidate {
    Quad quad;
    int shift;
    int errors;
    double area;
  };
  std::optional<Candidate> best;
  bool marker_like = false;
  const int grid = spec.grid();
  const int tolerance = spec.tolerance();

  for (const auto& reg : regions) {
    const auto hull = convex_hull(reg.boundary);
    if (hull.size() < 4) continue;
    auto quad = max_area_quad(hull);
    if (!quad) continue;
    const double hull_area = std::abs(polygon_area(hull));
    double area = std::abs(quad_area(*quad));
    if (hull_area <= 0 || area / hull_area < cfg.min_quad_fill) continue;
    bool small = false;
    for (int i = 0; i < 4; ++i) small |= ((*quad)[std::size_t(i)] - (*quad)[std::size_t((i + 1) % 4)]).norm() < cfg.min_side_px;
    if (small) continue;
    // Marker corner order has negative shoelace area in image coordinates.
    if (quad_area(*quad) > 0) std::swap((*quad)[1], (*quad)[3]);

    Quad refined;
    for (std::size_t i = 0; i < 4; ++i) refined[i] = refine_corner(img, (*quad)[i], cfg.refine_window);
    if (cfg.refine_edges) refined = refine_by_edges(img, refined, grid);
    if (quad_area(refined) >= 0) continue;
    area = std::abs(quad_area(refined));

    const auto cells = read_grid(img, refined, 0, grid);
    int border_errors = 0;
    for (int gy = 0; gy < grid; ++gy)
      for (int gx = 0; gx < grid; ++gx)
        if ((gx == 0 || gy == 0 || gx == grid - 1 || gy == grid - 1) && cells[std::size_t(gy * grid + gx)]) ++border_errors;
    if (border_errors > cfg.max_border_errors) continue;
    marker_like = true;

    int best_shift = -1, best_err = spec.n * spec.n + 1;
    for (int shift = 0; shift < 4; ++shift) {
      const auto c = shift == 0 ? cells : read_grid(img, refined, shift, grid);
      int err = 0;
      for (int gy = 1; gy <= spec.n; ++gy)
        for (int gx = 1; gx <= spec.n; ++gx) err += c[std::size_t(gy * grid + gx)] != (spec.cell_white(gx, gy) ? 1 : 0);
      if (err < best_err) {
        best_err = err;
        best_shift = shift;
      }
    }
    if (best_err > tolerance) continue;
    if (!best || best_err < best->errors || (best_err == best->errors && area > best->area)) {
      best = Candidate{refined, best_shift, best_err, area};
    }
  }

  if (!best) {
    if (marker_like) throw Error(ErrorCode::DecodeFailed, "quad found but payload matches no rotation of marker " + std::to_string(spec.id));
    throw Error(ErrorCode::NoMarkerFound, "no marker-like quadrilateral in image");
  }

  DetectionResult out;
  for (std::size_t i = 0; i < 4; ++i) out.corners_px[i] = best->quad[(i + std::size_t(best->shift)) % 4];
  const auto fit = pose_from_corners(spec, out.corners_px, cam);
  out.id = spec.id;
  out.pose = fit.pose;
  out.reprojection_rms_px = fit.rms_px;
  out.bit_errors = best->errors;
  return out;
}

}  // namespace neuronav
