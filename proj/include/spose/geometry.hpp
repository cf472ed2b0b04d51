#pragma once

// Pose, quaternion and pinhole camera types plus the projection and lifting
// kernels shared by the rest of the library.
//
// Frame convention: Pose::rotation maps target-frame vectors into the camera
// frame, so a model point P lands at X_cam = rotation * P + translation.

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "spose/error.hpp"

namespace spose {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr std::size_t kNumKeypoints = 11;

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) fail(ErrorCode::InvalidArgument, "focal lengths must be positive");
    if (width <= 0 || height <= 0) fail(ErrorCode::InvalidArgument, "image size must be positive");
    if (!(cx > 0.0 && cx < width) || !(cy > 0.0 && cy < height))
      fail(ErrorCode::InvalidArgument, "principal point must lie inside the image");
  }

  /// Intrinsics for a resampled grid of `new_width` x `new_height`. Pixel
  /// coordinates scale linearly: u_new = u * new_width / width.
  CameraIntrinsics resampled(int new_width, int new_height) const {
    const double sx = static_cast<double>(new_width) / width;
    const double sy = static_cast<double>(new_height) / height;
    return {fx * sx, fy * sy, cx * sx, cy * sy, new_width, new_height};
  }

  bool operator==(const CameraIntrinsics&) const = default;
};

/// Scalar-first Hamilton quaternion.
struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
  Quaternion normalized() const {
    const double n = norm();
    return {w / n, x / n, y / n, z / n};
  }
  Quaternion operator-() const { return {-w, -x, -y, -z}; }
  double dot(const Quaternion& o) const { return w * o.w + x * o.x + y * o.y + z * o.z; }
  bool operator==(const Quaternion&) const = default;
};

inline constexpr double kUnitTolerance = 1e-6;

inline void require_unit(const Quaternion& q) {
  if (std::abs(q.norm() - 1.0) > kUnitTolerance)
    fail(ErrorCode::NonUnitQuaternion, "quaternion norm deviates from 1 by more than 1e-6");
}

inline bool is_rotation(const Mat3& m, double tol) {
  if (!m.allFinite()) return false;
  if ((m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(m.determinant() - 1.0) <= tol;
}

inline Mat3 quat_to_matrix(const Quaternion& q) {
  require_unit(q);
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

/// Shepperd's method; returns the representative with w >= 0.
inline Quaternion matrix_to_quat(const Mat3& m) {
  if (!is_rotation(m, 1e-6)) fail(ErrorCode::NotARotation, "matrix is not orthonormal with det +1");
  const double tr = m.trace();
  Quaternion q;
  if (tr >= m(0, 0) && tr >= m(1, 1) && tr >= m(2, 2)) {
    const double s = std::sqrt(1.0 + tr) * 2.0;
    q = {0.25 * s, (m(2, 1) - m(1, 2)) / s, (m(0, 2) - m(2, 0)) / s, (m(1, 0) - m(0, 1)) / s};
  } else if (m(0, 0) >= m(1, 1) && m(0, 0) >= m(2, 2)) {
    const double s = std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2)) * 2.0;
    q = {(m(2, 1) - m(1, 2)) / s, 0.25 * s, (m(0, 1) + m(1, 0)) / s, (m(0, 2) + m(2, 0)) / s};
  } else if (m(1, 1) >= m(2, 2)) {
    const double s = std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2)) * 2.0;
    q = {(m(0, 2) - m(2, 0)) / s, (m(0, 1) + m(1, 0)) / s, 0.25 * s, (m(1, 2) + m(2, 1)) / s};
  } else {
    const double s = std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1)) * 2.0;
    q = {(m(1, 0) - m(0, 1)) / s, (m(0, 2) + m(2, 0)) / s, (m(1, 2) + m(2, 1)) / s, 0.25 * s};
  }
  if (q.w < 0.0) q = -q;
  return q.normalized();
}

inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return s;
}

/// Rodrigues' formula.
inline Mat3 so3_exp(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 k = skew(omega);
  if (theta < 1e-8) return Mat3::Identity() + k + 0.5 * k * k;
  return Mat3::Identity() + (std::sin(theta) / theta) * k +
         ((1.0 - std::cos(theta)) / (theta * theta)) * k * k;
}

/// Geodesic angle of a rotation matrix, accurate near zero.
inline double rotation_angle(const Mat3& r) {
  const Vec3 v(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  return std::atan2(0.5 * v.norm(), 0.5 * (r.trace() - 1.0));
}

inline double geodesic_distance(const Mat3& a, const Mat3& b) { return rotation_angle(a.transpose() * b); }

struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }

  static Pose from_quaternion(const Quaternion& q, const Vec3& t) { return {quat_to_matrix(q), t}; }

  Quaternion quaternion() const { return matrix_to_quat(rotation); }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  void validate() const {
    if (!is_rotation(rotation, 1e-9)) fail(ErrorCode::NotARotation, "pose rotation violates R^T R = I, det = +1");
    if (!translation.allFinite()) fail(ErrorCode::InvalidArgument, "pose translation is not finite");
  }
};

inline Pose pose_inverse(const Pose& p) {
  const Mat3 rt = p.rotation.transpose();
  return {rt, -rt * p.translation};
}

/// (a * b)(P) = a(b(P)).
inline Pose compose(const Pose& a, const Pose& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

/// Ordered keypoints of the target body, metres, target frame.
class KeypointModel {
 public:
  explicit KeypointModel(std::vector<Vec3> points) : points_(std::move(points)) { validate(); }

  std::span<const Vec3> points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  const Vec3& operator[](std::size_t i) const { return points_[i]; }

 private:
  void validate() const {
    if (points_.size() != kNumKeypoints)
      fail(ErrorCode::SchemaViolation, "keypoint model must have exactly 11 points");
    for (std::size_t i = 0; i < points_.size(); ++i) {
      if (!points_[i].allFinite()) fail(ErrorCode::SchemaViolation, "keypoint is not finite", i);
      for (std::size_t j = 0; j < i; ++j)
        if ((points_[i] - points_[j]).norm() < 1e-9)
          fail(ErrorCode::SchemaViolation, "keypoints must be pairwise distinct", i);
    }
    Vec3 mean = Vec3::Zero();
    for (const auto& p : points_) mean += p;
    mean /= static_cast<double>(points_.size());
    Mat3 scatter = Mat3::Zero();
    for (const auto& p : points_) scatter += (p - mean) * (p - mean).transpose();
    const Eigen::SelfAdjointEigenSolver<Mat3> eig(scatter);
    const Vec3 sv = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    if (sv(0) < 1e-6 * sv(2)) fail(ErrorCode::SchemaViolation, "keypoint model is coplanar");
  }

  std::vector<Vec3> points_;
};

/// Eleven-point layout of a box-bodied spacecraft with three antenna tips
/// (roughly the dimensions of the SPEED+ Tango target).
inline KeypointModel default_keypoint_model() {
  return KeypointModel({
      {-0.3700, -0.3850, 0.3215}, {-0.3700, 0.3850, 0.3215}, {0.3700, 0.3850, 0.3215},
      {0.3700, -0.3850, 0.3215},  {-0.3700, -0.2640, 0.0000}, {-0.3700, 0.3040, 0.0000},
      {0.3700, 0.3040, 0.0000},   {0.3700, -0.2640, 0.0000},  {-0.5427, 0.4877, 0.2535},
      {0.5427, 0.4877, 0.2591},   {0.3050, -0.5790, 0.2515},
  });
}

inline constexpr double kMinDepth = 1e-9;

inline Vec2 project_camera_point(const Vec3& xc, const CameraIntrinsics& cam) {
  return {cam.fx * xc.x() / xc.z() + cam.cx, cam.fy * xc.y() / xc.z() + cam.cy};
}

inline std::vector<Vec3> to_camera_frame(std::span<const Vec3> points, const Pose& pose) {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(pose.apply(p));
  return out;
}

inline std::vector<Vec2> project(std::span<const Vec3> points, const Pose& pose, const CameraIntrinsics& cam) {
  std::vector<Vec2> out;
  out.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3 xc = pose.apply(points[i]);
    if (!(xc.z() > kMinDepth)) fail(ErrorCode::NonPositiveDepth, "point at or behind the camera plane", i);
    out.push_back(project_camera_point(xc, cam));
  }
  return out;
}

inline Vec3 lift_pixel(const Vec2& px, double depth, const CameraIntrinsics& cam) {
  return depth * Vec3((px.x() - cam.cx) / cam.fx, (px.y() - cam.cy) / cam.fy, 1.0);
}

inline std::vector<Vec3> lift(std::span<const Vec2> pixels, std::span<const double> depths,
                              const CameraIntrinsics& cam) {
  if (pixels.size() != depths.size()) fail(ErrorCode::SizeMismatch, "pixels and depths differ in length");
  std::vector<Vec3> out;
  out.reserve(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    if (!(depths[i] > 0.0)) fail(ErrorCode::NonPositiveDepth, "lift depth must be positive", i);
    out.push_back(lift_pixel(pixels[i], depths[i], cam));
  }
  return out;
}

}  // namespace spose
