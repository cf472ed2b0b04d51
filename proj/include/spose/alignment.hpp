#pragma once

// Closed-form rigid alignment of two point sets (Umeyama / Kabsch, no scale)
// and its reverse-mode derivative with respect to the source points.

#include <Eigen/SVD>

#include <span>
#include <vector>

#include "spose/error.hpp"
#include "spose/geometry.hpp"

namespace spose {

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Pose as_pose() const { return {rotation, translation}; }
};

/// Intermediate quantities of one alignment, kept for differentiation.
struct UmeyamaSolution {
  RigidTransform transform;
  Vec3 source_mean = Vec3::Zero();
  Vec3 target_mean = Vec3::Zero();
  Mat3 u = Mat3::Identity();
  Mat3 v = Mat3::Identity();
  Vec3 singular_values = Vec3::Zero();
  double reflection = 1.0;  // last entry of the sign correction diag(1, 1, d)
};

inline UmeyamaSolution umeyama_solve(std::span<const Vec3> source, std::span<const Vec3> target) {
  if (source.size() != target.size()) fail(ErrorCode::SizeMismatch, "source and target differ in length");
  const std::size_t n = source.size();
  if (n < 3) fail(ErrorCode::TooFewPoints, "alignment needs at least 3 points");

  UmeyamaSolution sol;
  for (std::size_t k = 0; k < n; ++k) {
    sol.source_mean += source[k];
    sol.target_mean += target[k];
  }
  sol.source_mean /= static_cast<double>(n);
  sol.target_mean /= static_cast<double>(n);

  Mat3 scatter = Mat3::Zero();
  Mat3 cross = Mat3::Zero();  // sum_k (t_k - t_mean)(s_k - s_mean)^T
  for (std::size_t k = 0; k < n; ++k) {
    const Vec3 s = source[k] - sol.source_mean;
    scatter += s * s.transpose();
    cross += (target[k] - sol.target_mean) * s.transpose();
  }
  const Eigen::SelfAdjointEigenSolver<Mat3> spread(scatter);
  const Vec3 ev = spread.eigenvalues().cwiseMax(0.0);
  if (!(ev(2) > 0.0) || ev(1) <= 1e-20 * ev(2))
    fail(ErrorCode::DegenerateConfiguration, "source points are collinear");

  const Eigen::JacobiSVD<Mat3> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  sol.u = svd.matrixU();
  sol.v = svd.matrixV();
  sol.singular_values = svd.singularValues();
  // Flip the axis of the smallest singular value when the optimum would be a
  // reflection; the minimiser is not unique if the two smallest are equal.
  sol.reflection = (sol.u.determinant() * sol.v.determinant() < 0.0) ? -1.0 : 1.0;
  const Eigen::DiagonalMatrix<double, 3> d(1.0, 1.0, sol.reflection);
  sol.transform.rotation = sol.u * d * sol.v.transpose();
  sol.transform.translation = sol.target_mean - sol.transform.rotation * sol.source_mean;
  return sol;
}

/// Minimiser of sum_k |R * source_k + t - target_k|^2 over rotations R.
inline RigidTransform umeyama_align(std::span<const Vec3> source, std::span<const Vec3> target) {
  return umeyama_solve(source, target).transform;
}

inline double alignment_residual(const RigidTransform& tf, std::span<const Vec3> source,
                                 std::span<const Vec3> target) {
  if (source.size() != target.size()) fail(ErrorCode::SizeMismatch, "source and target differ in length");
  double sum = 0.0;
  for (std::size_t k = 0; k < source.size(); ++k) sum += (tf.apply(source[k]) - target[k]).squaredNorm();
  return sum;
}

/// Pulls dL/dR and dL/dt back onto the source points.
///
/// With A = U S V^T and R = U D V^T, a perturbation dR = R * Omega has
/// Omega antisymmetric solving  Sym * Omega + Omega * Sym = R^T dA - dA^T R,
/// Sym = V (D S) V^T. Solving that in the V basis gives the adjoint below.
inline std::vector<Vec3> umeyama_source_gradient(const UmeyamaSolution& sol, std::span<const Vec3> source,
                                                 std::span<const Vec3> target, const Mat3& grad_rotation,
                                                 const Vec3& grad_translation) {
  const Mat3& r = sol.transform.rotation;
  const Mat3 g = grad_rotation - grad_translation * sol.source_mean.transpose();
  const Mat3 m = sol.v.transpose() * (r.transpose() * g) * sol.v;
  const Vec3 lambda(sol.singular_values(0), sol.singular_values(1), sol.reflection * sol.singular_values(2));
  const double eps = 1e-14 * std::max(1.0, sol.singular_values(0));
  Mat3 w = Mat3::Zero();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      if (i == j) continue;
      const double den = lambda(i) + lambda(j);
      if (std::abs(den) > eps) w(i, j) = m(i, j) / den;
    }
  const Mat3 w_anti = 0.5 * (w - w.transpose());
  const Mat3 grad_cross = 2.0 * r * sol.v * w_anti * sol.v.transpose();

  const double inv_n = 1.0 / static_cast<double>(source.size());
  const Vec3 shift = -inv_n * (r.transpose() * grad_translation);
  std::vector<Vec3> out(source.size());
  for (std::size_t k = 0; k < source.size(); ++k)
    out[k] = grad_cross.transpose() * (target[k] - sol.target_mean) + shift;
  return out;
}

}  // namespace spose
