#pragma once

// Shared domain types, hyperparameters and the small amount of camera /
// rotation geometry every other module builds on.
//
// Conventions:
//  * Poses are body-to-odometry: a point X_b in the camera (= body) frame
//    maps to R * X_b + t in the odometry frame. Projection applies the
//    inverse.
//  * Pinhole camera, no distortion. Images must be undistorted upstream.
//  * Euler angles are Z-Y-X (yaw about +z, then pitch about y, then roll
//    about x). Degrees at the API boundary, radians internally.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace objloc {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Raised when an input file or config is malformed. The message names the
/// offending field.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / std::numbers::pi; }

inline bool is_rotation(const Mat3& r, double tol = 1e-9) {
  return (r.transpose() * r - Mat3::Identity()).norm() < tol &&
         std::abs(r.determinant() - 1.0) < tol;
}

/// Element of SE(3). Maps x -> rotation * x + translation.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  /// (*this) * other: apply `other` first.
  RigidTransform compose(const RigidTransform& other) const {
    return {rotation * other.rotation, rotation * other.translation + translation};
  }

  RigidTransform inverse() const {
    const Mat3 rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }
};

struct Pose {
  Mat3 rotation = Mat3::Identity();  // body-to-odometry
  Vec3 translation = Vec3::Zero();
  int frame_index = 0;

  RigidTransform body_to_odom() const { return {rotation, translation}; }
};

using PoseLookup = std::map<int, Pose>;

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  bool valid() const {
    return fx > 0 && fy > 0 && width > 0 && height > 0 && cx >= 0 && cx < width && cy >= 0 &&
           cy < height;
  }
  bool contains(const Vec2& px) const {
    return px.x() >= 0 && px.x() < width && px.y() >= 0 && px.y() < height;
  }
};

struct Detection {
  int frame_index = 0;
  Vec2 centroid = Vec2::Zero();
};

struct Track {
  int track_id = 0;
  std::vector<Detection> detections;  // strictly increasing frame_index
};

struct Landmark {
  int landmark_id = 0;
  Vec3 position = Vec3::Zero();
  Mat3 covariance = Mat3::Zero();
};

struct ObjectMap {
  std::string agent_id;
  std::vector<Landmark> landmarks;
  std::string frame_label = "odom";
};

/// Pipeline hyperparameters. Lengths in metres, angles in degrees.
struct Hyperparameters {
  int n_min = 3;                   // tracks need strictly more detections
  double omega_percentile = 95.0;  // Mahalanobis inlier percentile
  double window = 2.0;             // m
  double overlap = 1.0;            // m, grid step between submap centers
  int n_max = 50;
  double sigma = 0.05;    // m
  double epsilon = 0.1;   // m
  double gamma = 0.1;     // m
  int s_max = 4;
  double theta_overlap = 0.667;
  double theta_rp = 10.0;   // deg
  double theta_yaw = 30.0;  // deg
  double t_max = 1.5;       // m

  // Extensions beyond the core set.
  double iou_voxel = 0.0;              // m; voxel edge for submap IoU, 0 = window / 4
  bool prune_yaw = false;              // also apply theta_yaw during online pruning
  double max_reprojection_rms = 5.0;   // px; converged tracks above this are dynamic
  int candidate_cap = 10000;           // max candidate associations per submap pair

  /// Throws InputError naming the first violated constraint.
  void validate() const {
    auto require = [](bool ok, const char* what) {
      if (!ok) throw InputError(std::string("invalid hyperparameter: ") + what);
    };
    require(n_min > 0, "n_min must be > 0");
    require(omega_percentile > 0 && omega_percentile <= 100, "omega_percentile must be in (0, 100]");
    require(window > 0, "window must be > 0");
    require(overlap > 0, "overlap must be > 0");
    require(overlap <= window, "overlap must be <= window");
    require(n_max > 0, "n_max must be > 0");
    require(sigma > 0, "sigma must be > 0");
    require(epsilon > 0, "epsilon must be > 0");
    require(epsilon >= sigma, "epsilon must be >= sigma");
    require(gamma > 0, "gamma must be > 0");
    require(s_max > 0, "s_max must be > 0");
    require(theta_overlap > 0 && theta_overlap <= 1, "theta_overlap must be in (0, 1]");
    require(theta_rp > 0, "theta_rp must be > 0");
    require(theta_yaw > 0, "theta_yaw must be > 0");
    require(t_max > 0, "t_max must be > 0");
    require(iou_voxel >= 0, "iou_voxel must be >= 0");
    require(max_reprojection_rms > 0, "max_reprojection_rms must be > 0");
    require(candidate_cap > 0, "candidate_cap must be > 0");
  }

  double voxel() const { return iou_voxel > 0 ? iou_voxel : window / 4.0; }
};

inline constexpr double kMinDepth = 1e-6;

/// Odometry-frame point into the camera frame of `pose`.
inline Vec3 to_camera(const Pose& pose, const Vec3& point) {
  return pose.rotation.transpose() * (point - pose.translation);
}

/// Pinhole projection. Empty when the point is at or behind the image plane.
inline std::optional<Vec2> project(const Pose& pose, const CameraIntrinsics& k, const Vec3& point) {
  const Vec3 pc = to_camera(pose, point);
  if (pc.z() <= kMinDepth) return std::nullopt;
  return Vec2(k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy);
}

/// Pixel at camera-frame depth `depth`, expressed in the odometry frame.
inline Vec3 unproject(const Pose& pose, const CameraIntrinsics& k, const Vec2& pixel, double depth) {
  const Vec3 pc((pixel.x() - k.cx) / k.fx * depth, (pixel.y() - k.cy) / k.fy * depth, depth);
  return pose.rotation * pc + pose.translation;
}

/// Unit bearing of a pixel in the odometry frame.
inline Vec3 pixel_ray(const Pose& pose, const CameraIntrinsics& k, const Vec2& pixel) {
  const Vec3 dc((pixel.x() - k.cx) / k.fx, (pixel.y() - k.cy) / k.fy, 1.0);
  return (pose.rotation * dc).normalized();
}

struct EulerAngles {
  double roll = 0;   // deg, about x
  double pitch = 0;  // deg, about y
  double yaw = 0;    // deg, about z
};

inline Mat3 rot_x(double rad) { return Eigen::AngleAxisd(rad, Vec3::UnitX()).toRotationMatrix(); }
inline Mat3 rot_y(double rad) { return Eigen::AngleAxisd(rad, Vec3::UnitY()).toRotationMatrix(); }
inline Mat3 rot_z(double rad) { return Eigen::AngleAxisd(rad, Vec3::UnitZ()).toRotationMatrix(); }

/// R = Rz(yaw) * Ry(pitch) * Rx(roll), angles in degrees.
inline Mat3 rotation_from_euler(const EulerAngles& e) {
  return rot_z(deg2rad(e.yaw)) * rot_y(deg2rad(e.pitch)) * rot_x(deg2rad(e.roll));
}

/// Z-Y-X decomposition of a rotation. At gimbal lock (|pitch| = 90 deg) roll
/// is reported as 0 and the whole remaining rotation is attributed to yaw.
inline EulerAngles transform_angles(const Mat3& r) {
  const double sp = std::clamp(-r(2, 0), -1.0, 1.0);
  const double pitch = std::asin(sp);
  double roll = 0;
  double yaw = 0;
  if (std::abs(sp) < 1.0 - 1e-12) {
    roll = std::atan2(r(2, 1), r(2, 2));
    yaw = std::atan2(r(1, 0), r(0, 0));
  } else {
    yaw = std::atan2(-r(0, 1), r(1, 1));
  }
  return {rad2deg(roll), rad2deg(pitch), rad2deg(yaw)};
}

inline EulerAngles transform_angles(const RigidTransform& t) { return transform_angles(t.rotation); }

}  // namespace objloc
