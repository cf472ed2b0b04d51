#pragma once

// Keypoint heatmaps: Gaussian rendering, beta normalisation, hard and
// integral (soft-argmax) decoding, response scores and depth sampling.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "spose/error.hpp"
#include "spose/geometry.hpp"

namespace spose {

/// Row-major H x W grid of doubles. Used for keypoint heatmaps, depth maps
/// and for gradients with the same layout.
class Grid {
 public:
  Grid() = default;
  Grid(int width, int height, double fill = 0.0)
      : width_(width), height_(height), values_(static_cast<std::size_t>(checked(width, height)), fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return values_.size(); }

  double& at(int u, int v) { return values_[index(u, v)]; }
  double at(int u, int v) const { return values_[index(u, v)]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::size_t index(int u, int v) const {
    return static_cast<std::size_t>(v) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(u);
  }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  double max() const { return values_.empty() ? 0.0 : *std::max_element(values_.begin(), values_.end()); }
  bool same_shape(const Grid& o) const { return width_ == o.width_ && height_ == o.height_; }
  bool operator==(const Grid&) const = default;

 private:
  static long checked(int w, int h) {
    if (w <= 0 || h <= 0) fail(ErrorCode::InvalidArgument, "grid dimensions must be positive");
    return static_cast<long>(w) * h;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> values_;
};

using Heatmap = Grid;
using DepthMap = Grid;

/// One network head: K keypoint heatmaps plus (optionally) K depth maps.
struct HeadOutput {
  std::vector<Heatmap> keypoint_maps;
  std::vector<DepthMap> depth_maps;

  std::size_t keypoints() const { return keypoint_maps.size(); }
  int width() const { return keypoint_maps.empty() ? 0 : keypoint_maps.front().width(); }
  int height() const { return keypoint_maps.empty() ? 0 : keypoint_maps.front().height(); }
  bool has_depth() const { return !depth_maps.empty(); }

  void validate(bool require_depth) const {
    if (keypoint_maps.empty()) fail(ErrorCode::InvalidArgument, "head output has no keypoint maps");
    const Grid& ref = keypoint_maps.front();
    for (const auto& m : keypoint_maps)
      if (!m.same_shape(ref)) fail(ErrorCode::SizeMismatch, "keypoint maps differ in resolution");
    if (require_depth && depth_maps.size() != keypoint_maps.size())
      fail(ErrorCode::SizeMismatch, "expected one depth map per keypoint");
    for (std::size_t k = 0; k < depth_maps.size(); ++k) {
      if (!depth_maps[k].same_shape(ref)) fail(ErrorCode::SizeMismatch, "depth map resolution differs", k);
      for (double d : depth_maps[k].values())
        if (!(d > 0.0) || !std::isfinite(d)) fail(ErrorCode::NonPositiveDepth, "depth map value must be positive", k);
    }
  }

  /// Zero-filled output of the same shape, used as a gradient buffer.
  HeadOutput zeros_like() const {
    HeadOutput z;
    for (const auto& m : keypoint_maps) z.keypoint_maps.emplace_back(m.width(), m.height());
    for (const auto& m : depth_maps) z.depth_maps.emplace_back(m.width(), m.height());
    return z;
  }
};

struct HeatmapConfig {
  double sigma = 2.0;
  double beta = 1e3;
  double temperature = 15.0;

  void validate() const {
    if (!(sigma > 0.0)) fail(ErrorCode::InvalidArgument, "heatmap sigma must be positive");
    if (!(beta > 0.0)) fail(ErrorCode::InvalidArgument, "heatmap beta must be positive");
    if (!(temperature > 0.0)) fail(ErrorCode::InvalidArgument, "soft-argmax temperature must be positive");
  }
};

/// Cells farther than this many sigmas from the centre are left at zero; the
/// exact value there is below exp(-40.5) ~ 2.6e-18.
inline constexpr double kGaussianSupport = 9.0;

inline Heatmap render_gaussian(const Vec2& center, const HeatmapConfig& cfg, int height, int width,
                               double amplitude = 1.0) {
  cfg.validate();
  if (height < 8 || width < 8) fail(ErrorCode::InvalidArgument, "heatmap must be at least 8x8");
  Heatmap h(width, height);
  const double radius = kGaussianSupport * cfg.sigma;
  if (!(center.x() > -radius - 1 && center.x() < width + radius && center.y() > -radius - 1 &&
        center.y() < height + radius))
    return h;
  const int u0 = std::max(0, static_cast<int>(std::floor(center.x() - radius)));
  const int u1 = std::min(width - 1, static_cast<int>(std::ceil(center.x() + radius)));
  const int v0 = std::max(0, static_cast<int>(std::floor(center.y() - radius)));
  const int v1 = std::min(height - 1, static_cast<int>(std::ceil(center.y() + radius)));
  const double inv = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
  for (int v = v0; v <= v1; ++v) {
    const double dv = v - center.y();
    for (int u = u0; u <= u1; ++u) {
      const double du = u - center.x();
      h.at(u, v) = amplitude * std::exp(-(du * du + dv * dv) * inv);
    }
  }
  return h;
}

inline Heatmap normalize_beta(const Heatmap& h, double beta) {
  const double m = h.max();
  if (!(m > 0.0)) fail(ErrorCode::DegenerateHeatmap, "heatmap maximum must be positive");
  Heatmap out = h;
  const double s = beta / m;
  for (double& x : out.values()) x *= s;
  return out;
}

/// Row-major index of the maximum; the first one wins on ties.
inline std::size_t argmax_index(const Heatmap& h) {
  const auto vals = h.values();
  return static_cast<std::size_t>(std::max_element(vals.begin(), vals.end()) - vals.begin());
}

inline Vec2 hard_argmax(const Heatmap& h) {
  if (h.size() == 0 || !(h.max() > 0.0)) fail(ErrorCode::DegenerateHeatmap, "heatmap maximum must be positive");
  const std::size_t i = argmax_index(h);
  const auto w = static_cast<std::size_t>(h.width());
  return {static_cast<double>(i % w), static_cast<double>(i / w)};
}

/// Hard argmax refined per axis by a parabola through the log values of the
/// peak and its two neighbours. Exact for an untruncated Gaussian peak.
inline Vec2 refined_argmax(const Heatmap& h) {
  const Vec2 peak = hard_argmax(h);
  const int u = static_cast<int>(peak.x()), v = static_cast<int>(peak.y());
  auto offset = [&](int du, int dv, int at, int limit) {
    if (at <= 0 || at >= limit - 1) return 0.0;
    const double a = h.at(u - du, v - dv), c = h.at(u, v), b = h.at(u + du, v + dv);
    if (!(a > 0.0 && b > 0.0)) return 0.0;
    const double la = std::log(a), lc = std::log(c), lb = std::log(b);
    const double curvature = la - 2.0 * lc + lb;
    if (!(curvature < 0.0)) return 0.0;
    return std::clamp(0.5 * (la - lb) / curvature, -0.5, 0.5);
  };
  return {u + offset(1, 0, u, h.width()), v + offset(0, 1, v, h.height())};
}

struct SoftArgmaxResult {
  Vec2 point;
  /// d(point.x)/d(h_j) and d(point.y)/d(h_j), row-major like the heatmap.
  std::vector<double> du;
  std::vector<double> dv;
};

namespace detail {

inline void softmax_weights(const Heatmap& h, double temperature, std::vector<double>& s, double& m,
                            std::size_t& m_index) {
  m_index = argmax_index(h);
  m = h[m_index];
  if (!(m > 0.0)) fail(ErrorCode::DegenerateHeatmap, "heatmap maximum must be positive");
  s.resize(h.size());
  const double scale = temperature / m;
  double total = 0.0;
  for (std::size_t j = 0; j < h.size(); ++j) {
    s[j] = std::exp(scale * h[j] - temperature);
    total += s[j];
  }
  for (double& x : s) x /= total;
}

}  // namespace detail

/// Integral regression: expectation of pixel coordinates under
/// softmax(temperature * h / max(h)).
inline Vec2 soft_argmax(const Heatmap& h, const HeatmapConfig& cfg) {
  std::vector<double> s;
  double m = 0.0;
  std::size_t mi = 0;
  detail::softmax_weights(h, cfg.temperature, s, m, mi);
  double pu = 0.0, pv = 0.0;
  const int w = h.width();
  for (int v = 0; v < h.height(); ++v)
    for (int u = 0; u < w; ++u) {
      const double sj = s[h.index(u, v)];
      pu += sj * u;
      pv += sj * v;
    }
  return {pu, pv};
}

/// Soft-argmax with its analytic Jacobian. The max-normalisation contributes
/// an extra term on the argmax cell.
inline SoftArgmaxResult soft_argmax_with_jacobian(const Heatmap& h, const HeatmapConfig& cfg) {
  std::vector<double> s;
  double m = 0.0;
  std::size_t mi = 0;
  detail::softmax_weights(h, cfg.temperature, s, m, mi);
  const int w = h.width();
  double pu = 0.0, pv = 0.0;
  for (int v = 0; v < h.height(); ++v)
    for (int u = 0; u < w; ++u) {
      const double sj = s[h.index(u, v)];
      pu += sj * u;
      pv += sj * v;
    }
  SoftArgmaxResult r{{pu, pv}, std::vector<double>(h.size()), std::vector<double>(h.size())};
  const double a = cfg.temperature / m;
  double cu = 0.0, cv = 0.0;  // sum_k s_k (x_k - p) h_k
  for (int v = 0; v < h.height(); ++v)
    for (int u = 0; u < w; ++u) {
      const std::size_t j = h.index(u, v);
      const double eu = s[j] * (u - pu);
      const double ev = s[j] * (v - pv);
      r.du[j] = a * eu;
      r.dv[j] = a * ev;
      cu += eu * h[j];
      cv += ev * h[j];
    }
  r.du[mi] -= a / m * cu;
  r.dv[mi] -= a / m * cv;
  return r;
}

/// Gaussian whose soft-argmax decode lands on `target`. The integral decode
/// of a plain Gaussian is biased by lattice sampling and by the softmax mass
/// of background cells, so the rendering centre is shifted by fixed-point
/// iteration until the decode matches. Used for ground-truth maps in the
/// training losses, where a perfect prediction must decode exactly.
inline Heatmap render_decodable(const Vec2& target, const HeatmapConfig& cfg, int height, int width,
                                int max_iterations = 50, double tolerance = 1e-13) {
  Vec2 center = target;
  Heatmap h = render_gaussian(center, cfg, height, width);
  for (int i = 0; i < max_iterations; ++i) {
    if (!(h.max() > 0.0)) break;
    const Vec2 miss = target - soft_argmax(h, cfg);
    if (miss.cwiseAbs().maxCoeff() < tolerance) break;
    center += miss;
    h = render_gaussian(center, cfg, height, width);
  }
  return h;
}

inline double response_score(const Heatmap& h) {
  double total = 0.0;
  for (double x : h.values()) total += x;
  return total;
}

struct BilinearSample {
  double value = 0.0;
  std::array<std::size_t, 4> index{};
  std::array<double, 4> weight{};
};

/// Bilinear interpolation of the four cells around `at`; the weights are
/// returned so callers can push gradients back into the grid.
inline BilinearSample sample_depth_bilinear(const DepthMap& d, const Vec2& at) {
  const double u = at.x(), v = at.y();
  if (!(u >= 0.0 && u <= d.width() - 1 && v >= 0.0 && v <= d.height() - 1))
    fail(ErrorCode::OutOfBounds, "depth sample position outside the grid");
  int u0 = static_cast<int>(std::floor(u));
  int v0 = static_cast<int>(std::floor(v));
  u0 = std::min(u0, std::max(0, d.width() - 2));
  v0 = std::min(v0, std::max(0, d.height() - 2));
  const int u1 = std::min(u0 + 1, d.width() - 1);
  const int v1 = std::min(v0 + 1, d.height() - 1);
  const double fu = u - u0, fv = v - v0;
  BilinearSample s;
  s.index = {d.index(u0, v0), d.index(u1, v0), d.index(u0, v1), d.index(u1, v1)};
  s.weight = {(1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv};
  for (int i = 0; i < 4; ++i) s.value += s.weight[i] * d[s.index[i]];
  return s;
}

inline double sample_depth(const DepthMap& d, const Vec2& at) { return sample_depth_bilinear(d, at).value; }

}  // namespace spose
