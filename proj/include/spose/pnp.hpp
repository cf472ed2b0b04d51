#pragma once

// EPnP with Gauss-Newton polish, reprojection errors and an adaptive RANSAC
// loop around the two.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "spose/alignment.hpp"
#include "spose/error.hpp"
#include "spose/geometry.hpp"

namespace spose {

namespace detail {

using Vec12 = Eigen::Matrix<double, 12, 1>;
using Mat6x10 = Eigen::Matrix<double, 6, 10>;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

inline constexpr std::array<std::array<int, 2>, 6> kControlPairs = {
    {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}};

inline Eigen::Matrix<double, 10, 1> beta_products(const Eigen::Vector4d& b) {
  Eigen::Matrix<double, 10, 1> bb;
  bb << b(0) * b(0), b(0) * b(1), b(1) * b(1), b(0) * b(2), b(1) * b(2), b(2) * b(2), b(0) * b(3),
      b(1) * b(3), b(2) * b(3), b(3) * b(3);
  return bb;
}

inline void refine_betas(const Mat6x10& l, const Vec6& rho, Eigen::Vector4d& b) {
  for (int iter = 0; iter < 5; ++iter) {
    Eigen::Matrix<double, 6, 4> a;
    Vec6 r;
    for (int i = 0; i < 6; ++i) {
      const auto row = l.row(i);
      a(i, 0) = 2 * row(0) * b(0) + row(1) * b(1) + row(3) * b(2) + row(6) * b(3);
      a(i, 1) = row(1) * b(0) + 2 * row(2) * b(1) + row(4) * b(2) + row(7) * b(3);
      a(i, 2) = row(3) * b(0) + row(4) * b(1) + 2 * row(5) * b(2) + row(8) * b(3);
      a(i, 3) = row(6) * b(0) + row(7) * b(1) + row(8) * b(2) + 2 * row(9) * b(3);
      r(i) = rho(i) - row.dot(beta_products(b));
    }
    const Eigen::Vector4d step = a.colPivHouseholderQr().solve(r);
    if (!step.allFinite()) return;
    b += step;
  }
}

inline double mean_reprojection(const Pose& pose, std::span<const Vec3> world, std::span<const Vec2> pixels,
                                const CameraIntrinsics& cam) {
  double sum = 0.0;
  for (std::size_t i = 0; i < world.size(); ++i) {
    const Vec3 xc = pose.apply(world[i]);
    if (!(xc.z() > kMinDepth)) return std::numeric_limits<double>::infinity();
    sum += (project_camera_point(xc, cam) - pixels[i]).norm();
  }
  return sum / static_cast<double>(world.size());
}

inline double reprojection_cost(const Pose& pose, std::span<const Vec3> world, std::span<const Vec2> pixels,
                                const CameraIntrinsics& cam) {
  double sum = 0.0;
  for (std::size_t i = 0; i < world.size(); ++i) {
    const Vec3 xc = pose.apply(world[i]);
    if (!(xc.z() > kMinDepth)) return std::numeric_limits<double>::infinity();
    sum += (project_camera_point(xc, cam) - pixels[i]).squaredNorm();
  }
  return sum;
}

/// 2x3 Jacobian of the pinhole projection at a camera-frame point.
inline Eigen::Matrix<double, 2, 3> projection_jacobian(const Vec3& xc, const CameraIntrinsics& cam) {
  const double iz = 1.0 / xc.z();
  Eigen::Matrix<double, 2, 3> j;
  j << cam.fx * iz, 0.0, -cam.fx * xc.x() * iz * iz, 0.0, cam.fy * iz, -cam.fy * xc.y() * iz * iz;
  return j;
}

/// Algebraic EPnP solution (general, non-planar case), before polishing.
inline Pose epnp_algebraic(std::span<const Vec3> world, std::span<const Vec2> pixels, const CameraIntrinsics& cam) {
  const std::size_t n = world.size();

  Vec3 c0 = Vec3::Zero();
  for (const auto& p : world) c0 += p;
  c0 /= static_cast<double>(n);
  Mat3 scatter = Mat3::Zero();
  for (const auto& p : world) scatter += (p - c0) * (p - c0).transpose();
  const Eigen::SelfAdjointEigenSolver<Mat3> pca(scatter);
  const Vec3 ev = pca.eigenvalues().cwiseMax(0.0);
  if (!(ev(2) > 0.0) || std::sqrt(ev(0) / ev(2)) < 1e-6)
    fail(ErrorCode::DegenerateConfiguration, "world points are coplanar, collinear or coincident");

  std::array<Vec3, 4> ctrl;
  ctrl[0] = c0;
  for (int j = 1; j <= 3; ++j) ctrl[j] = c0 + std::sqrt(ev(3 - j) / n) * pca.eigenvectors().col(3 - j);

  Mat3 basis;
  for (int j = 0; j < 3; ++j) basis.col(j) = ctrl[j + 1] - c0;
  const Mat3 basis_inv = basis.inverse();
  std::vector<Eigen::Vector4d> alphas(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 a = basis_inv * (world[i] - c0);
    alphas[i] << 1.0 - a.sum(), a(0), a(1), a(2);
  }

  Eigen::Matrix<double, 12, 12> mtm = Eigen::Matrix<double, 12, 12>::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::Matrix<double, 2, 12> rows = Eigen::Matrix<double, 2, 12>::Zero();
    for (int j = 0; j < 4; ++j) {
      const double a = alphas[i](j);
      rows(0, 3 * j) = a * cam.fx;
      rows(0, 3 * j + 2) = a * (cam.cx - pixels[i].x());
      rows(1, 3 * j + 1) = a * cam.fy;
      rows(1, 3 * j + 2) = a * (cam.cy - pixels[i].y());
    }
    mtm.noalias() += rows.transpose() * rows;
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 12, 12>> null_space(mtm);
  std::array<Vec12, 4> v;
  for (int k = 0; k < 4; ++k) v[k] = null_space.eigenvectors().col(k);

  Mat6x10 l;
  Vec6 rho;
  for (int p = 0; p < 6; ++p) {
    const auto [a, b] = kControlPairs[p];
    std::array<Vec3, 4> dv;
    for (int k = 0; k < 4; ++k) dv[k] = v[k].segment<3>(3 * a) - v[k].segment<3>(3 * b);
    l.row(p) << dv[0].dot(dv[0]), 2 * dv[0].dot(dv[1]), dv[1].dot(dv[1]), 2 * dv[0].dot(dv[2]),
        2 * dv[1].dot(dv[2]), dv[2].dot(dv[2]), 2 * dv[0].dot(dv[3]), 2 * dv[1].dot(dv[3]),
        2 * dv[2].dot(dv[3]), dv[3].dot(dv[3]);
    rho(p) = (ctrl[a] - ctrl[b]).squaredNorm();
  }

  auto solve_cols = [&](std::initializer_list<int> cols) {
    Eigen::MatrixXd sub(6, static_cast<Eigen::Index>(cols.size()));
    int c = 0;
    for (int col : cols) sub.col(c++) = l.col(col);
    return Eigen::VectorXd(sub.colPivHouseholderQr().solve(rho));
  };

  std::array<Eigen::Vector4d, 3> guesses;
  {
    const Eigen::VectorXd b4 = solve_cols({0, 1, 3, 6});
    Eigen::Vector4d& b = guesses[0];
    if (b4(0) < 0) {
      b(0) = std::sqrt(-b4(0));
      b(1) = -b4(1) / b(0);
      b(2) = -b4(2) / b(0);
      b(3) = -b4(3) / b(0);
    } else {
      b(0) = std::sqrt(b4(0));
      b(1) = b4(1) / b(0);
      b(2) = b4(2) / b(0);
      b(3) = b4(3) / b(0);
    }
  }
  {
    const Eigen::VectorXd b3 = solve_cols({0, 1, 2});
    Eigen::Vector4d& b = guesses[1];
    if (b3(0) < 0) {
      b(0) = std::sqrt(-b3(0));
      b(1) = b3(2) < 0 ? std::sqrt(-b3(2)) : 0.0;
    } else {
      b(0) = std::sqrt(b3(0));
      b(1) = b3(2) > 0 ? std::sqrt(b3(2)) : 0.0;
    }
    if (b3(1) < 0) b(0) = -b(0);
    b(2) = 0.0;
    b(3) = 0.0;
  }
  {
    const Eigen::VectorXd b5 = solve_cols({0, 1, 2, 3, 4});
    Eigen::Vector4d& b = guesses[2];
    if (b5(0) < 0) {
      b(0) = std::sqrt(-b5(0));
      b(1) = b5(2) < 0 ? std::sqrt(-b5(2)) : 0.0;
    } else {
      b(0) = std::sqrt(b5(0));
      b(1) = b5(2) > 0 ? std::sqrt(b5(2)) : 0.0;
    }
    if (b5(1) < 0) b(0) = -b(0);
    b(2) = b(0) != 0.0 ? b5(3) / b(0) : 0.0;
    b(3) = 0.0;
  }

  Pose best;
  double best_err = std::numeric_limits<double>::infinity();
  for (auto& b : guesses) {
    if (!b.allFinite()) continue;
    refine_betas(l, rho, b);
    if (!b.allFinite()) continue;
    Vec12 cc = Vec12::Zero();
    for (int k = 0; k < 4; ++k) cc += b(k) * v[k];
    std::vector<Vec3> pc(n);
    for (std::size_t i = 0; i < n; ++i) {
      pc[i] = Vec3::Zero();
      for (int j = 0; j < 4; ++j) pc[i] += alphas[i](j) * cc.segment<3>(3 * j);
    }
    if (pc[0].z() < 0)
      for (auto& p : pc) p = -p;
    Pose pose;
    try {
      pose = umeyama_align(world, pc).as_pose();
    } catch (const Error&) {
      continue;
    }
    const double err = mean_reprojection(pose, world, pixels, cam);
    if (err < best_err) {
      best_err = err;
      best = pose;
    }
  }
  if (!std::isfinite(best_err)) fail(ErrorCode::DegenerateConfiguration, "no EPnP candidate produced a valid pose");
  return best;
}

}  // namespace detail

/// Gauss-Newton on the summed squared reprojection error, perturbing the
/// rotation on the left: R <- exp(w) R, t <- t + dt. Steps that increase the
/// cost are rejected and end the iteration.
inline Pose refine_pose(const Pose& initial, std::span<const Vec3> world, std::span<const Vec2> pixels,
                        const CameraIntrinsics& cam, int max_iterations = 10, double step_tolerance = 1e-10) {
  Pose pose = initial;
  double cost = detail::reprojection_cost(pose, world, pixels, cam);
  if (!std::isfinite(cost)) return pose;
  for (int iter = 0; iter < max_iterations; ++iter) {
    detail::Mat6 h = detail::Mat6::Zero();
    detail::Vec6 g = detail::Vec6::Zero();
    for (std::size_t i = 0; i < world.size(); ++i) {
      const Vec3 rp = pose.rotation * world[i];
      const Vec3 xc = rp + pose.translation;
      const Vec2 e = project_camera_point(xc, cam) - pixels[i];
      Eigen::Matrix<double, 3, 6> dx;
      dx << -skew(rp), Mat3::Identity();
      const Eigen::Matrix<double, 2, 6> j = detail::projection_jacobian(xc, cam) * dx;
      h.noalias() += j.transpose() * j;
      g.noalias() += j.transpose() * e;
    }
    const detail::Vec6 step = -h.ldlt().solve(g);
    if (!step.allFinite()) break;
    Pose next{so3_exp(step.head<3>()) * pose.rotation, pose.translation + step.tail<3>()};
    const double next_cost = detail::reprojection_cost(next, world, pixels, cam);
    if (!(next_cost <= cost)) break;
    pose = next;
    cost = next_cost;
    if (step.norm() < step_tolerance) break;
  }
  return pose;
}

/// EPnP followed by at most 10 Gauss-Newton iterations.
inline Pose epnp(std::span<const Vec3> world, std::span<const Vec2> pixels, const CameraIntrinsics& cam) {
  if (world.size() != pixels.size()) fail(ErrorCode::SizeMismatch, "world and pixel counts differ");
  if (world.size() < 4) fail(ErrorCode::TooFewPoints, "EPnP needs at least 4 correspondences");
  const Pose raw = detail::epnp_algebraic(world, pixels, cam);
  return refine_pose(raw, world, pixels, cam, 10, 1e-10);
}

inline std::vector<double> reprojection_error(const Pose& pose, std::span<const Vec3> world,
                                              std::span<const Vec2> pixels, const CameraIntrinsics& cam) {
  if (world.size() != pixels.size()) fail(ErrorCode::SizeMismatch, "world and pixel counts differ");
  const std::vector<Vec2> proj = project(world, pose, cam);
  std::vector<double> out(world.size());
  for (std::size_t i = 0; i < world.size(); ++i) out[i] = (proj[i] - pixels[i]).norm();
  return out;
}

/// Number of errors within `threshold`.
inline std::size_t count_inliers(std::span<const double> errors, double threshold) {
  return static_cast<std::size_t>(std::count_if(errors.begin(), errors.end(), [&](double e) { return e <= threshold; }));
}

struct RansacConfig {
  double confidence = 0.999;
  double reproj_threshold = 2.0;
  int max_iterations = 1000;
  int min_inliers = 5;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (!(confidence > 0.0 && confidence < 1.0)) fail(ErrorCode::InvalidArgument, "confidence must lie in (0, 1)");
    if (!(reproj_threshold > 0.0)) fail(ErrorCode::InvalidArgument, "reprojection threshold must be positive");
    if (max_iterations < 1) fail(ErrorCode::InvalidArgument, "max_iterations must be >= 1");
    if (min_inliers < 4) fail(ErrorCode::InvalidArgument, "min_inliers must be >= 4");
  }
};

struct PnPResult {
  Pose pose;
  std::vector<bool> inlier_mask;
  double mean_reproj_error = std::numeric_limits<double>::infinity();
  bool converged = false;
  int hypotheses = 0;

  std::size_t inlier_count() const {
    return static_cast<std::size_t>(std::count(inlier_mask.begin(), inlier_mask.end(), true));
  }
};

/// Adaptive RANSAC bound ceil(log(1 - c) / log(1 - w^4)).
inline int ransac_iteration_bound(double confidence, double inlier_ratio, int cap) {
  const double w4 = std::pow(inlier_ratio, 4);
  if (w4 >= 1.0) return 0;
  if (w4 <= 0.0) return cap;
  const double n = std::ceil(std::log(1.0 - confidence) / std::log(1.0 - w4));
  return static_cast<int>(std::min<double>(cap, std::max(0.0, n)));
}

namespace detail {

/// Up to this many correspondences (495 minimal sets) RANSAC samples without
/// replacement.
inline constexpr std::size_t kEnumerateUpTo = 12;
inline constexpr int kLocalRounds = 4;
inline constexpr double kLocalWidening = 2.0;

inline std::vector<double> safe_errors(const Pose& pose, std::span<const Vec3> world, std::span<const Vec2> pixels,
                                       const CameraIntrinsics& cam) {
  std::vector<double> out(world.size());
  for (std::size_t i = 0; i < world.size(); ++i) {
    const Vec3 xc = pose.apply(world[i]);
    out[i] = xc.z() > kMinDepth ? (project_camera_point(xc, cam) - pixels[i]).norm()
                                : std::numeric_limits<double>::infinity();
  }
  return out;
}

}  // namespace detail

inline PnPResult ransac_epnp(std::span<const Vec3> world, std::span<const Vec2> pixels, const CameraIntrinsics& cam,
                             const RansacConfig& cfg) {
  cfg.validate();
  if (world.size() != pixels.size()) fail(ErrorCode::SizeMismatch, "world and pixel counts differ");
  const std::size_t n = world.size();
  if (n < 4) fail(ErrorCode::TooFewPoints, "RANSAC-EPnP needs at least 4 correspondences");

  std::mt19937_64 rng(cfg.rng_seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::array<Vec3, 4> sw;
  std::array<Vec2, 4> sp;

  // Small problems draw minimal sets without replacement, so a full budget
  // visits every set once.
  std::vector<std::array<std::size_t, 4>> subsets;
  if (n <= detail::kEnumerateUpTo) {
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b)
        for (std::size_t c = b + 1; c < n; ++c)
          for (std::size_t d = c + 1; d < n; ++d) subsets.push_back({a, b, c, d});
    std::shuffle(subsets.begin(), subsets.end(), rng);
  }

  PnPResult result;
  result.inlier_mask.assign(n, false);
  std::size_t best_count = 0;
  std::vector<double> best_errors;
  int bound = cfg.max_iterations;
  if (!subsets.empty()) bound = std::min(bound, static_cast<int>(subsets.size()));
  int iter = 0;
  for (; iter < bound; ++iter) {
    for (std::size_t i = 0; i < 4; ++i) {
      if (subsets.empty()) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(order[i], order[pick(rng)]);
      } else {
        order[i] = subsets[static_cast<std::size_t>(iter)][i];
      }
      sw[i] = world[order[i]];
      sp[i] = pixels[order[i]];
    }
    Pose hypothesis;
    try {
      hypothesis = epnp(sw, sp, cam);
    } catch (const Error&) {
      continue;
    }
    std::vector<double> errors = detail::safe_errors(hypothesis, world, pixels, cam);
    std::size_t count = count_inliers(errors, cfg.reproj_threshold);
    // Local optimisation: refit on a looser consensus set and keep the refit
    // while it gains inliers at the real threshold.
    for (int round = 0; round < detail::kLocalRounds; ++round) {
      std::vector<Vec3> lw;
      std::vector<Vec2> lp;
      for (std::size_t i = 0; i < n; ++i)
        if (errors[i] <= detail::kLocalWidening * cfg.reproj_threshold) {
          lw.push_back(world[i]);
          lp.push_back(pixels[i]);
        }
      if (lw.size() <= 4) break;
      Pose refit;
      try {
        refit = refine_pose(hypothesis, lw, lp, cam);
      } catch (const Error&) {
        break;
      }
      std::vector<double> refit_errors = detail::safe_errors(refit, world, pixels, cam);
      const std::size_t refit_count = count_inliers(refit_errors, cfg.reproj_threshold);
      if (refit_count <= count) break;
      hypothesis = refit;
      errors = std::move(refit_errors);
      count = refit_count;
    }
    if (count > best_count) {
      best_count = count;
      result.pose = hypothesis;
      best_errors = std::move(errors);
      bound = std::min(bound, ransac_iteration_bound(cfg.confidence, static_cast<double>(count) / n, cfg.max_iterations));
    }
  }
  result.hypotheses = iter;
  if (best_count == 0) return result;

  // Refit on the consensus set; keep the hypothesis if the refit loses inliers.
  if (best_count >= 4) {
    std::vector<Vec3> iw;
    std::vector<Vec2> ip;
    for (std::size_t i = 0; i < n; ++i)
      if (best_errors[i] <= cfg.reproj_threshold) {
        iw.push_back(world[i]);
        ip.push_back(pixels[i]);
      }
    try {
      const Pose refit = epnp(iw, ip, cam);
      std::vector<double> errors = detail::safe_errors(refit, world, pixels, cam);
      if (count_inliers(errors, cfg.reproj_threshold) >= best_count) {
        result.pose = refit;
        best_errors = std::move(errors);
      }
    } catch (const Error&) {
    }
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    result.inlier_mask[i] = best_errors[i] <= cfg.reproj_threshold;
    if (result.inlier_mask[i]) {
      sum += best_errors[i];
      ++count;
    }
  }
  result.mean_reproj_error = count ? sum / count : std::numeric_limits<double>::infinity();
  result.converged = count >= static_cast<std::size_t>(cfg.min_inliers) && result.mean_reproj_error <= cfg.reproj_threshold;
  return result;
}

}  // namespace spose
