#pragma once

// Plane-to-image homography (normalized DLT) and pose recovery from it.

#include <cmath>
#include <span>
#include <vector>

#include "neuronav/error.hpp"
#include "neuronav/marker.hpp"
#include "neuronav/rigid.hpp"

namespace neuronav {

struct PlaneCorrespondence {
  Vec2 plane;  // marker plane, mm
  Vec2 image;  // pixels
};

namespace homography_detail {

/// Similarity that moves the points to zero mean and unit RMS distance.
inline Mat3 conditioning(std::span<const Vec2> pts) {
  Vec2 mean = Vec2::Zero();
  for (const auto& p : pts) mean += p;
  mean /= double(pts.size());
  double ms = 0;
  for (const auto& p : pts) ms += (p - mean).squaredNorm();
  const double rms = std::sqrt(ms / double(pts.size()));
  const double s = rms > 0 ? 1.0 / rms : 1.0;
  Mat3 t;
  t << s, 0, -s * mean.x(), 0, s, -s * mean.y(), 0, 0, 1;
  return t;
}

inline double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

}  // namespace homography_detail

inline Vec2 apply_homography(const Mat3& h, const Vec2& p) {
  const Vec3 q = h * Vec3(p.x(), p.y(), 1.0);
  return {q.x() / q.z(), q.y() / q.z()};
}

inline Mat3 homography_dlt(std::span<const PlaneCorrespondence> corr) {
  using namespace homography_detail;
  if (corr.size() < 4) throw Error(ErrorCode::DegenerateConfiguration, "need at least 4 correspondences");

  std::vector<Vec2> plane, image;
  for (const auto& c : corr) {
    plane.push_back(c.plane);
    image.push_back(c.image);
  }
  const Mat3 tp = conditioning(plane), ti = conditioning(image);
  std::vector<Vec2> pn, in;
  for (std::size_t i = 0; i < corr.size(); ++i) {
    pn.push_back(apply_homography(tp, plane[i]));
    in.push_back(apply_homography(ti, image[i]));
  }

  // Every triple of (conditioned) plane points must span a triangle.
  const std::size_t n = pn.size();
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b)
      for (std::size_t c = b + 1; c < n; ++c)
        if (std::abs(cross2(pn[b] - pn[a], pn[c] - pn[a])) < 1e-9) {
          throw Error(ErrorCode::DegenerateConfiguration, "three plane points are collinear");
        }

  Eigen::MatrixXd a(2 * n, 9);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = pn[i].x(), y = pn[i].y(), u = in[i].x(), v = in[i].y();
    a.row(Eigen::Index(2 * i)) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    a.row(Eigen::Index(2 * i + 1)) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Mat3 hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  Mat3 out = ti.inverse() * hn * tp;
  if (std::abs(out(2, 2)) > 1e-12) {
    out /= out(2, 2);
  } else {
    out /= out.norm();
  }
  return out;
}

/// Marker pose from a homography mapping marker-plane mm to pixels.
inline RigidPose pose_from_homography(const Mat3& h, const CameraIntrinsics& cam) {
  const double scale_h = h.norm();
  if (!(scale_h > 0) || !std::isfinite(scale_h) || std::abs(h.determinant()) < 1e-12 * scale_h * scale_h * scale_h) {
    throw Error(ErrorCode::SingularHomography, "homography is not invertible");
  }
  const Mat3 m = cam.K().inverse() * h;
  const double n1 = m.col(0).norm(), n2 = m.col(1).norm();
  double lambda = 2.0 / (n1 + n2);
  if (m(2, 2) * lambda < 0) lambda = -lambda;
  const Vec3 r1 = lambda * m.col(0), r2 = lambda * m.col(1), t = lambda * m.col(2);
  Mat3 r;
  r.col(0) = r1;
  r.col(1) = r2;
  r.col(2) = r1.cross(r2);
  return RigidPose::from_rotation_translation(nearest_rotation(r), t);
}

}  // namespace neuronav
