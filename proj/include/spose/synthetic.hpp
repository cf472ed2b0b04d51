#pragma once

// Desk-scale scene generation: the small reference camera, uniform random
// orientations, pose sampling inside a translation box and rendering of
// ideal head outputs.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "spose/error.hpp"
#include "spose/geometry.hpp"
#include "spose/heatmap.hpp"

namespace spose {

/// 64x64 pinhole camera used by the simulations and the gradient checks.
inline CameraIntrinsics desk_camera() { return {96.0, 96.0, 32.0, 32.0, 64, 64}; }

/// Uniformly distributed unit quaternion (Shoemake's subgroup algorithm).
inline Quaternion uniform_quaternion(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double u1 = u01(rng), u2 = u01(rng), u3 = u01(rng);
  const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
  const double t1 = 2.0 * std::numbers::pi * u2, t2 = 2.0 * std::numbers::pi * u3;
  Quaternion q{b * std::cos(t2), a * std::sin(t1), a * std::cos(t1), b * std::sin(t2)};
  if (q.w < 0.0) q = -q;
  return q;
}

struct PoseRanges {
  Vec3 t_min{-0.4, -0.4, 5.0};
  Vec3 t_max{0.4, 0.4, 8.0};
  /// Every projected keypoint must stay this many pixels inside the image.
  double border_margin = 4.0;
  int max_attempts = 1000;

  void validate() const {
    for (int i = 0; i < 3; ++i)
      if (!(t_min(i) <= t_max(i)) || !std::isfinite(t_min(i)) || !std::isfinite(t_max(i)))
        fail(ErrorCode::InvalidRange, "translation box has min > max");
    if (!(t_min.z() > 0.0)) fail(ErrorCode::InvalidRange, "translation box must lie in front of the camera");
    if (!(border_margin >= 0.0)) fail(ErrorCode::InvalidRange, "border margin must be non-negative");
    if (max_attempts < 1) fail(ErrorCode::InvalidRange, "max_attempts must be >= 1");
  }
};

inline bool pixels_inside(std::span<const Vec2> pixels, const CameraIntrinsics& cam, double margin) {
  for (const auto& p : pixels)
    if (!(p.x() >= margin && p.x() <= cam.width - 1 - margin && p.y() >= margin && p.y() <= cam.height - 1 - margin))
      return false;
  return true;
}

/// Rejection-samples a pose in the box whose projected model stays inside the
/// image; fails with InvalidRange when the ranges make that impossible.
inline Pose sample_pose(std::mt19937_64& rng, const KeypointModel& model, const CameraIntrinsics& cam,
                        const PoseRanges& ranges) {
  ranges.validate();
  for (int attempt = 0; attempt < ranges.max_attempts; ++attempt) {
    const Quaternion q = uniform_quaternion(rng);
    Vec3 t;
    for (int i = 0; i < 3; ++i) t(i) = std::uniform_real_distribution<double>(ranges.t_min(i), ranges.t_max(i))(rng);
    const Pose pose = Pose::from_quaternion(q, t);
    bool in_front = true;
    for (const auto& p : model.points()) in_front = in_front && pose.apply(p).z() > kMinDepth;
    if (!in_front) continue;
    if (pixels_inside(project(model.points(), pose, cam), cam, ranges.border_margin)) return pose;
  }
  fail(ErrorCode::InvalidRange, "pose ranges do not keep the model inside the image");
}

/// Camera-frame depth of every model point.
inline std::vector<double> keypoint_depths(const KeypointModel& model, const Pose& pose) {
  std::vector<double> z;
  z.reserve(model.size());
  for (const auto& p : model.points()) z.push_back(pose.apply(p).z());
  return z;
}

/// Ideal head output: decodable Gaussians at `pixels` and constant depth maps.
inline HeadOutput render_head(std::span<const Vec2> pixels, std::span<const double> depths, const HeatmapConfig& cfg,
                              int width, int height) {
  if (pixels.size() != depths.size()) fail(ErrorCode::SizeMismatch, "need one depth per keypoint");
  HeadOutput h;
  for (std::size_t k = 0; k < pixels.size(); ++k) {
    h.keypoint_maps.push_back(render_decodable(pixels[k], cfg, height, width));
    h.depth_maps.emplace_back(width, height, depths[k]);
  }
  return h;
}

/// SplitMix64 finaliser; combines seeds into independent streams.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL + (b << 6) + (b >> 2) + b * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// 64-bit FNV-1a of a string, for seeding per-image streams.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace spose
