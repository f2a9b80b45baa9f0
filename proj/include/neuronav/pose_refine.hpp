#pragma once

// Levenberg-Marquardt refinement of a marker pose on corner reprojection error.
// Rotation updates are left-multiplied axis-angle increments:
// R <- exp(w) R, t <- t + dt, parameter order (w, dt).

#include <cmath>
#include <span>

#include "neuronav/error.hpp"
#include "neuronav/marker.hpp"
#include "neuronav/rigid.hpp"

namespace neuronav {

struct PointCorrespondence {
  Vec3 model;  // marker frame, mm
  Vec2 image;  // pixels
};

struct RefineOptions {
  int max_iterations = 100;
  double min_step = 1e-10;
  double min_rms_change = 1e-12;  // px
  int max_rejections = 10;
};

struct RefineResult {
  RigidPose pose;
  double rms_px = 0;
  double initial_rms_px = 0;
  int iterations = 0;
};

/// Residuals (projected - observed), two per correspondence.
inline Eigen::VectorXd reprojection_residuals(const RigidPose& pose, std::span<const PointCorrespondence> corr,
                                              const CameraIntrinsics& cam) {
  Eigen::VectorXd r(2 * Eigen::Index(corr.size()));
  for (std::size_t i = 0; i < corr.size(); ++i) {
    const Vec2 px = cam.project(pose.apply(corr[i].model));
    r.segment<2>(2 * Eigen::Index(i)) = px - corr[i].image;
  }
  return r;
}

/// d(residual)/d(w, dt) at zero increment.
inline Eigen::MatrixXd reprojection_jacobian(const RigidPose& pose, std::span<const PointCorrespondence> corr,
                                             const CameraIntrinsics& cam) {
  Eigen::MatrixXd j(2 * Eigen::Index(corr.size()), 6);
  const Mat3 r = pose.rotation_matrix();
  for (std::size_t i = 0; i < corr.size(); ++i) {
    const Vec3 rx = r * corr[i].model;
    const Vec3 p = rx + pose.translation;
    const double iz = 1.0 / p.z();
    Eigen::Matrix<double, 2, 3> dproj;
    dproj << cam.fx * iz, 0, -cam.fx * p.x() * iz * iz, 0, cam.fy * iz, -cam.fy * p.y() * iz * iz;
    const auto row = 2 * Eigen::Index(i);
    j.block<2, 3>(row, 0) = dproj * (-skew(rx));
    j.block<2, 3>(row, 3) = dproj;
  }
  return j;
}

inline RigidPose apply_increment(const RigidPose& pose, const Eigen::Matrix<double, 6, 1>& delta) {
  RigidPose out;
  out.rotation = (quat_exp(delta.head<3>()) * pose.rotation).normalized();
  out.translation = pose.translation + delta.tail<3>();
  return out;
}

inline double rms_of(const Eigen::VectorXd& r) { return r.size() ? std::sqrt(r.squaredNorm() / double(r.size() / 2)) : 0.0; }

inline RefineResult refine_pose(const RigidPose& initial, std::span<const PointCorrespondence> corr,
                                const CameraIntrinsics& cam, const RefineOptions& opt = {}) {
  if (!(initial.translation.z() > 0)) throw Error(ErrorCode::InvalidArgument, "initial pose must have tz > 0");
  if (corr.size() < 3) throw Error(ErrorCode::InvalidArgument, "need at least 3 correspondences");

  RefineResult out;
  out.pose = initial;
  Eigen::VectorXd res = reprojection_residuals(out.pose, corr, cam);
  double cost = res.squaredNorm();
  out.initial_rms_px = rms_of(res);
  double lambda = 1e-3;
  int rejections = 0;

  for (out.iterations = 0; out.iterations < opt.max_iterations; ++out.iterations) {
    const Eigen::MatrixXd j = reprojection_jacobian(out.pose, corr, cam);
    const Eigen::Matrix<double, 6, 6> jtj = j.transpose() * j;
    const Eigen::Matrix<double, 6, 1> g = j.transpose() * res;
    if (g.norm() == 0) break;

    bool accepted = false;
    while (!accepted) {
      Eigen::Matrix<double, 6, 6> a = jtj;
      for (int d = 0; d < 6; ++d) a(d, d) += lambda * std::max(jtj(d, d), 1e-12);
      const Eigen::Matrix<double, 6, 1> step = a.ldlt().solve(-g);
      if (!step.allFinite()) throw Error(ErrorCode::DivergedPose, "non-finite refinement step");
      const RigidPose candidate = apply_increment(out.pose, step);
      const Eigen::VectorXd cres = reprojection_residuals(candidate, corr, cam);
      const double ccost = cres.squaredNorm();
      const double change = rms_of(res) - rms_of(cres);
      if (candidate.translation.z() > 0 && ccost < cost) {
        out.pose = candidate;
        res = cres;
        cost = ccost;
        lambda = std::max(lambda / 10, 1e-12);
        rejections = 0;
        accepted = true;
        if (step.norm() < opt.min_step || change < opt.min_rms_change) {
          out.rms_px = rms_of(res);
          ++out.iterations;
          return out;
        }
      } else {
        if (step.norm() < opt.min_step || std::abs(change) < opt.min_rms_change) {
          out.rms_px = rms_of(res);
          return out;
        }
        lambda *= 10;
        if (++rejections >= opt.max_rejections) {
          throw Error(ErrorCode::DivergedPose, "residual grew for " + std::to_string(rejections) + " damping increases");
        }
      }
    }
  }
  out.rms_px = rms_of(res);
  return out;
}

}  // namespace neuronav
