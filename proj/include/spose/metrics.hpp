#pragma once

// Challenge pose scores. Orientation scores are in radians throughout; the
// orientation floor is the 0.169 degree arm precision converted to radians.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "spose/error.hpp"
#include "spose/geometry.hpp"

namespace spose {

inline constexpr double kPositionFloor = 0.002173;
inline constexpr double kOrientationFloorDeg = 0.169;
inline constexpr double kOrientationFloor = kOrientationFloorDeg * std::numbers::pi / 180.0;

/// Relative translation error, zeroed below the platform precision.
inline double s_pos(const Vec3& t_est, const Vec3& t_gt) {
  const double ref = t_gt.norm();
  if (!(ref > 0.0)) fail(ErrorCode::ZeroGroundTruthPosition, "ground-truth position has zero norm");
  const double s = (t_est - t_gt).norm() / ref;
  return s < kPositionFloor ? 0.0 : s;
}

inline double s_ori(const Quaternion& q_est, const Quaternion& q_gt) {
  require_unit(q_est);
  require_unit(q_gt);
  const double c = std::clamp(std::abs(q_est.dot(q_gt)), 0.0, 1.0);
  const double s = 2.0 * std::acos(c);
  return s < kOrientationFloor ? 0.0 : s;
}

struct LabelledPose {
  std::string id;
  Pose pose;
};

struct ImageScore {
  std::string id;
  double s_pos = 0.0;
  double s_ori = 0.0;
  double s_total = 0.0;
};

struct ScoreReport {
  std::vector<ImageScore> per_image;
  double mean_pos = 0.0;
  double mean_ori = 0.0;
  double mean_total = 0.0;
  std::size_t count = 0;
};

/// Scores estimates against ground truth matched by id; per-image floors
/// are applied before averaging. Output follows ground-truth order.
inline ScoreReport score_dataset(std::span<const LabelledPose> estimates, std::span<const LabelledPose> ground_truth) {
  if (estimates.size() != ground_truth.size())
    fail(ErrorCode::IdMismatch, "estimate and ground-truth counts differ");
  std::unordered_map<std::string, const Pose*> by_id;
  for (const auto& e : estimates)
    if (!by_id.emplace(e.id, &e.pose).second) fail(ErrorCode::IdMismatch, "duplicate estimate id " + e.id);
  std::set<std::string> seen;
  ScoreReport report;
  for (const auto& gt : ground_truth) {
    if (!seen.insert(gt.id).second) fail(ErrorCode::IdMismatch, "duplicate ground-truth id " + gt.id);
    const auto it = by_id.find(gt.id);
    if (it == by_id.end()) fail(ErrorCode::IdMismatch, "no estimate for id " + gt.id);
    ImageScore s;
    s.id = gt.id;
    s.s_pos = spose::s_pos(it->second->translation, gt.pose.translation);
    s.s_ori = spose::s_ori(it->second->quaternion(), gt.pose.quaternion());
    s.s_total = s.s_pos + s.s_ori;
    report.mean_pos += s.s_pos;
    report.mean_ori += s.s_ori;
    report.mean_total += s.s_total;
    report.per_image.push_back(std::move(s));
  }
  report.count = report.per_image.size();
  if (report.count > 0) {
    const double n = static_cast<double>(report.count);
    report.mean_pos /= n;
    report.mean_ori /= n;
    report.mean_total /= n;
  }
  return report;
}

}  // namespace spose
