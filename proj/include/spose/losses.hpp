#pragma once

// Training losses on N head outputs: the beta-scaled heatmap loss, the PnP
// reprojection loss with implicit-function gradients through the pose
// solver, and the 3D structure loss through the closed-form alignment.
//
// Every squared-difference reduction is a mean over its elements (pixels,
// pixel coordinates, matrix entries) and then a mean over heads.

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <vector>

#include "spose/alignment.hpp"
#include "spose/error.hpp"
#include "spose/geometry.hpp"
#include "spose/heatmap.hpp"
#include "spose/pnp.hpp"

namespace spose {

struct LossWeights {
  double gamma1 = 0.1;
  double gamma2 = 0.1;
  double beta = 1e3;

  void validate() const {
    if (!(gamma1 >= 0.0) || !(gamma2 >= 0.0)) fail(ErrorCode::InvalidArgument, "loss weights must be non-negative");
    if (!(beta > 0.0)) fail(ErrorCode::InvalidArgument, "beta must be positive");
  }
};

/// One loss term: its value, the per-head values (mean = value) and the
/// gradient w.r.t. every cell of the estimated head outputs.
struct LossTerm {
  double value = 0.0;
  std::vector<double> per_head;
  std::vector<HeadOutput> gradient;
};

struct HeadLossBreakdown {
  double heatmap = 0.0;
  double pnp = 0.0;
  double structure = 0.0;
};

struct LossReport {
  double heatmap_loss = 0.0;
  double pnp_loss = 0.0;
  double structure_loss = 0.0;
  double total = 0.0;
  LossWeights weights;
  std::vector<HeadLossBreakdown> per_head;
  std::vector<HeadOutput> gradient;
};

/// Ground truth needed by the three losses.
struct LossTargets {
  std::vector<Heatmap> heatmaps;
  std::vector<Vec2> pixels;
  Pose pose;
};

/// Value-only evaluation skips Jacobians and gradient buffers (used by the
/// finite-difference checks).
enum class Gradient { Skip, Compute };

inline constexpr double kMaxHessianCondition = 1e12;
inline constexpr double kDampingCondition = 1e8;
inline constexpr double kHessianDamping = 1e-9;

namespace detail {

inline std::vector<HeadOutput> zero_gradients(std::span<const HeadOutput> est) {
  std::vector<HeadOutput> g;
  g.reserve(est.size());
  for (const auto& h : est) g.push_back(h.zeros_like());
  return g;
}

inline void check_heads(std::span<const HeadOutput> est, std::size_t k, bool require_depth) {
  if (est.empty()) fail(ErrorCode::InvalidArgument, "need at least one head");
  for (const auto& h : est) {
    h.validate(require_depth);
    if (h.keypoints() != k) fail(ErrorCode::SizeMismatch, "head keypoint count does not match targets");
    if (h.width() != est.front().width() || h.height() != est.front().height())
      fail(ErrorCode::SizeMismatch, "heads differ in resolution");
  }
}

inline SoftArgmaxResult decode(const Heatmap& h, const HeatmapConfig& cfg, Gradient mode) {
  if (mode == Gradient::Compute) return soft_argmax_with_jacobian(h, cfg);
  return {soft_argmax(h, cfg), {}, {}};
}

inline void accumulate_soft_argmax(Grid& grad, const SoftArgmaxResult& sa, const Vec2& d_point) {
  for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += d_point.x() * sa.du[j] + d_point.y() * sa.dv[j];
}

using Mat6 = Eigen::Matrix<double, 6, 6>;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat2x6 = Eigen::Matrix<double, 2, 6>;

/// Projection Jacobians of all points w.r.t. the left pose perturbation.
inline std::vector<Mat2x6> pose_jacobians(const Pose& pose, std::span<const Vec3> world, const CameraIntrinsics& cam) {
  std::vector<Mat2x6> out(world.size());
  for (std::size_t k = 0; k < world.size(); ++k) {
    const Vec3 q = pose.rotation * world[k];
    Eigen::Matrix<double, 3, 6> dx;
    dx << -skew(q), Mat3::Identity();
    out[k] = projection_jacobian(q + pose.translation, cam) * dx;
  }
  return out;
}

}  // namespace detail

/// Exact Hessian of f(theta) = sum_k |pi_k(theta) - p_k|^2 at the pose,
/// theta being the left perturbation (rotation vector, translation).
inline Eigen::Matrix<double, 6, 6> reprojection_hessian(const Pose& pose, std::span<const Vec3> world,
                                                        std::span<const Vec2> pixels, const CameraIntrinsics& cam) {
  detail::Mat6 h = detail::Mat6::Zero();
  for (std::size_t k = 0; k < world.size(); ++k) {
    const Vec3 q = pose.rotation * world[k];
    const Vec3 x = q + pose.translation;
    Eigen::Matrix<double, 3, 6> dx;
    dx << -skew(q), Mat3::Identity();
    const Eigen::Matrix<double, 2, 3> jp = detail::projection_jacobian(x, cam);
    const detail::Mat2x6 j = jp * dx;
    const Vec2 r = project_camera_point(x, cam) - pixels[k];
    h += 2.0 * j.transpose() * j;

    const double iz = 1.0 / x.z();
    // Second derivatives of u and v w.r.t. the camera-frame point.
    Mat3 hu = Mat3::Zero(), hv = Mat3::Zero();
    hu(0, 2) = hu(2, 0) = -cam.fx * iz * iz;
    hu(2, 2) = 2.0 * cam.fx * x.x() * iz * iz * iz;
    hv(1, 2) = hv(2, 1) = -cam.fy * iz * iz;
    hv(2, 2) = 2.0 * cam.fy * x.y() * iz * iz * iz;
    detail::Mat6 second = dx.transpose() * (r.x() * hu + r.y() * hv) * dx;
    // Curvature of the rotation chart: d2X/dw_a dw_b = (e_b q_a + e_a q_b)/2 - q delta_ab.
    const Eigen::RowVector3d gx = r.x() * jp.row(0) + r.y() * jp.row(1);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) {
        Vec3 d2 = Vec3::Zero();
        d2(b) += 0.5 * q(a);
        d2(a) += 0.5 * q(b);
        if (a == b) d2 -= q;
        second(a, b) += gx.dot(d2);
      }
    h += 2.0 * second;
  }
  return h;
}

/// Solves the PnP problem used inside the loss: EPnP on all correspondences,
/// Gauss-Newton, then a few full Newton steps so the stationarity condition
/// holds to rounding (the implicit gradient assumes it does).
inline Pose solve_pnp_for_loss(std::span<const Vec3> world, std::span<const Vec2> pixels, const CameraIntrinsics& cam) {
  Pose pose;
  try {
    pose = refine_pose(epnp(world, pixels, cam), world, pixels, cam, 100, 1e-13);
  } catch (const Error& e) {
    fail(ErrorCode::PnPFailure, e.what());
  }
  for (int iter = 0; iter < 3; ++iter) {
    detail::Vec6 g = detail::Vec6::Zero();
    const auto jac = detail::pose_jacobians(pose, world, cam);
    for (std::size_t k = 0; k < world.size(); ++k)
      g += 2.0 * jac[k].transpose() * (project_camera_point(pose.apply(world[k]), cam) - pixels[k]);
    const detail::Vec6 step = -reprojection_hessian(pose, world, pixels, cam).ldlt().solve(g);
    if (!step.allFinite() || step.norm() > 1e-3) break;
    pose = {so3_exp(step.head<3>()) * pose.rotation, pose.translation + step.tail<3>()};
  }
  for (const auto& p : world)
    if (!(pose.apply(p).z() > kMinDepth)) fail(ErrorCode::PnPFailure, "PnP solution places a keypoint behind the camera");
  return pose;
}

/// d(pose)/d(pixels) by implicit differentiation of the PnP stationarity
/// condition: d theta / d p_k = H^-1 * 2 J_k^T. Returns H^-1 (6x6), from
/// which callers form vector-Jacobian products.
inline Eigen::Matrix<double, 6, 6> implicit_pose_inverse_hessian(const Pose& pose, std::span<const Vec3> world,
                                                                 std::span<const Vec2> pixels,
                                                                 const CameraIntrinsics& cam) {
  detail::Mat6 h = reprojection_hessian(pose, world, pixels, cam);
  const Eigen::SelfAdjointEigenSolver<detail::Mat6> eig(h);
  const auto abs_ev = eig.eigenvalues().cwiseAbs();
  const double cond = abs_ev.maxCoeff() / abs_ev.minCoeff();
  if (!(cond <= kMaxHessianCondition)) fail(ErrorCode::IllConditionedHessian, "PnP Hessian condition number above 1e12");
  if (cond > kDampingCondition) h += kHessianDamping * detail::Mat6::Identity();
  return h.inverse();
}

inline LossTerm heatmap_loss(std::span<const HeadOutput> est, std::span<const Heatmap> gt, const LossWeights& w,
                             Gradient mode = Gradient::Compute) {
  w.validate();
  detail::check_heads(est, gt.size(), false);
  for (const auto& g : gt)
    if (!g.same_shape(est.front().keypoint_maps.front())) fail(ErrorCode::SizeMismatch, "gt heatmap resolution differs");
  const double beta = w.beta;
  const std::size_t cells = gt.front().size();
  const double per_head_norm = 1.0 / (beta * beta * static_cast<double>(gt.size() * cells));
  const double n = static_cast<double>(est.size());

  std::vector<Heatmap> gt_scaled;
  gt_scaled.reserve(gt.size());
  for (const auto& g : gt) gt_scaled.push_back(normalize_beta(g, beta));

  LossTerm term;
  if (mode == Gradient::Compute) term.gradient = detail::zero_gradients(est);
  std::vector<double> diff(cells);
  for (std::size_t i = 0; i < est.size(); ++i) {
    double head_sum = 0.0;
    for (std::size_t k = 0; k < gt.size(); ++k) {
      const Heatmap& e = est[i].keypoint_maps[k];
      const std::size_t mi = argmax_index(e);
      const double m = e[mi];
      if (!(m > 0.0)) fail(ErrorCode::DegenerateHeatmap, "estimated heatmap maximum must be positive", k);
      const double s = beta / m;
      double back = 0.0;  // sum_l d_l * e_l, for the max-normalisation term
      for (std::size_t j = 0; j < cells; ++j) {
        diff[j] = s * e[j] - gt_scaled[k][j];
        head_sum += diff[j] * diff[j];
        back += diff[j] * e[j];
      }
      if (mode == Gradient::Skip) continue;
      Grid& g = term.gradient[i].keypoint_maps[k];
      const double c = 2.0 * per_head_norm / n;
      for (std::size_t j = 0; j < cells; ++j) g[j] = c * diff[j] * s;
      g[mi] -= c * back * s / m;
    }
    term.per_head.push_back(head_sum * per_head_norm);
  }
  for (double v : term.per_head) term.value += v / n;
  return term;
}

inline LossTerm pnp_loss(std::span<const HeadOutput> est, std::span<const Vec2> gt_pixels, const KeypointModel& model,
                         const CameraIntrinsics& cam, const HeatmapConfig& cfg, Gradient mode = Gradient::Compute) {
  const std::size_t k_count = model.size();
  if (gt_pixels.size() != k_count) fail(ErrorCode::SizeMismatch, "need one ground-truth pixel per keypoint");
  detail::check_heads(est, k_count, false);
  const double n = static_cast<double>(est.size());
  const double norm = 1.0 / (2.0 * static_cast<double>(k_count));  // mean over 2K coordinates

  LossTerm term;
  if (mode == Gradient::Compute) term.gradient = detail::zero_gradients(est);
  for (std::size_t i = 0; i < est.size(); ++i) {
    std::vector<SoftArgmaxResult> decoded;
    std::vector<Vec2> p_est(k_count);
    decoded.reserve(k_count);
    for (std::size_t k = 0; k < k_count; ++k) {
      decoded.push_back(detail::decode(est[i].keypoint_maps[k], cfg, mode));
      p_est[k] = decoded.back().point;
    }
    const Pose pose = solve_pnp_for_loss(model.points(), p_est, cam);
    const std::vector<Vec2> p_pnp = project(model.points(), pose, cam);

    double value = 0.0;
    std::vector<Vec2> d_pnp(k_count), d_est(k_count);
    for (std::size_t k = 0; k < k_count; ++k) {
      value += norm * ((gt_pixels[k] - p_pnp[k]).squaredNorm() + (p_est[k] - p_pnp[k]).squaredNorm());
      d_pnp[k] = 2.0 * norm * ((p_pnp[k] - gt_pixels[k]) + (p_pnp[k] - p_est[k]));
      d_est[k] = 2.0 * norm * (p_est[k] - p_pnp[k]);
    }
    term.per_head.push_back(value);
    if (mode == Gradient::Skip) continue;

    const auto jac = detail::pose_jacobians(pose, model.points(), cam);
    detail::Vec6 g_theta = detail::Vec6::Zero();
    for (std::size_t k = 0; k < k_count; ++k) g_theta += jac[k].transpose() * d_pnp[k];
    const detail::Mat6 h_inv = implicit_pose_inverse_hessian(pose, model.points(), p_est, cam);
    const detail::Vec6 v = h_inv * g_theta;
    for (std::size_t k = 0; k < k_count; ++k) {
      const Vec2 total = (d_est[k] + 2.0 * jac[k] * v) / n;
      detail::accumulate_soft_argmax(term.gradient[i].keypoint_maps[k], decoded[k], total);
    }
  }
  for (double v : term.per_head) term.value += v / n;
  return term;
}

inline LossTerm structure_loss(std::span<const HeadOutput> est, const Pose& gt_pose, std::span<const Vec2> gt_pixels,
                               const KeypointModel& model, const CameraIntrinsics& cam, const HeatmapConfig& cfg,
                               Gradient mode = Gradient::Compute) {
  const std::size_t k_count = model.size();
  if (gt_pixels.size() != k_count) fail(ErrorCode::SizeMismatch, "need one ground-truth pixel per keypoint");
  detail::check_heads(est, k_count, true);
  const double n = static_cast<double>(est.size());
  // The alignment maps camera-frame points onto the model, i.e. the inverse pose.
  const Pose target = pose_inverse(gt_pose);

  LossTerm term;
  if (mode == Gradient::Compute) term.gradient = detail::zero_gradients(est);
  for (std::size_t i = 0; i < est.size(); ++i) {
    std::vector<SoftArgmaxResult> decoded;
    std::vector<BilinearSample> depth(k_count);
    std::vector<Vec3> lifted(k_count);
    decoded.reserve(k_count);
    for (std::size_t k = 0; k < k_count; ++k) {
      decoded.push_back(detail::decode(est[i].keypoint_maps[k], cfg, mode));
      depth[k] = sample_depth_bilinear(est[i].depth_maps[k], gt_pixels[k]);
      if (!(depth[k].value > 0.0)) fail(ErrorCode::NonPositiveDepth, "sampled depth must be positive", k);
      lifted[k] = lift_pixel(decoded[k].point, depth[k].value, cam);
    }
    const UmeyamaSolution sol = umeyama_solve(lifted, model.points());
    const Mat3 dr = sol.transform.rotation - target.rotation;
    const Vec3 dt = sol.transform.translation - target.translation;
    term.per_head.push_back(dr.squaredNorm() / 9.0 + dt.squaredNorm() / 3.0);
    if (mode == Gradient::Skip) continue;

    const std::vector<Vec3> g_points =
        umeyama_source_gradient(sol, lifted, model.points(), (2.0 / 9.0) * dr, (2.0 / 3.0) * dt);
    for (std::size_t k = 0; k < k_count; ++k) {
      const Vec3 g = g_points[k] / n;
      const Vec2& p = decoded[k].point;
      const double d = depth[k].value;
      const Vec3 ray((p.x() - cam.cx) / cam.fx, (p.y() - cam.cy) / cam.fy, 1.0);
      detail::accumulate_soft_argmax(term.gradient[i].keypoint_maps[k], decoded[k],
                                     Vec2(g.x() * d / cam.fx, g.y() * d / cam.fy));
      const double g_depth = g.dot(ray);
      Grid& gd = term.gradient[i].depth_maps[k];
      for (int c = 0; c < 4; ++c) gd[depth[k].index[c]] += g_depth * depth[k].weight[c];
    }
  }
  for (double v : term.per_head) term.value += v / n;
  return term;
}

/// total = heatmap + gamma1 * pnp + gamma2 * structure, with gradients
/// combined the same way.
inline LossReport combined_loss(std::span<const HeadOutput> est, const LossTargets& targets,
                                const KeypointModel& model, const CameraIntrinsics& cam, const HeatmapConfig& cfg,
                                const LossWeights& w) {
  w.validate();
  const LossTerm h = heatmap_loss(est, targets.heatmaps, w);
  const LossTerm p = pnp_loss(est, targets.pixels, model, cam, cfg);
  const LossTerm s = structure_loss(est, targets.pose, targets.pixels, model, cam, cfg);

  LossReport r;
  r.weights = w;
  r.heatmap_loss = h.value;
  r.pnp_loss = p.value;
  r.structure_loss = s.value;
  r.total = h.value + w.gamma1 * p.value + w.gamma2 * s.value;
  for (std::size_t i = 0; i < est.size(); ++i) r.per_head.push_back({h.per_head[i], p.per_head[i], s.per_head[i]});
  r.gradient = h.gradient;
  for (std::size_t i = 0; i < est.size(); ++i) {
    auto& out = r.gradient[i];
    for (std::size_t k = 0; k < out.keypoint_maps.size(); ++k)
      for (std::size_t j = 0; j < out.keypoint_maps[k].size(); ++j)
        out.keypoint_maps[k][j] += w.gamma1 * p.gradient[i].keypoint_maps[k][j] +
                                   w.gamma2 * s.gradient[i].keypoint_maps[k][j];
    for (std::size_t k = 0; k < out.depth_maps.size(); ++k)
      for (std::size_t j = 0; j < out.depth_maps[k].size(); ++j)
        out.depth_maps[k][j] += w.gamma2 * s.gradient[i].depth_maps[k][j];
  }
  return r;
}

}  // namespace spose
