#pragma once

// Finite-difference verification of the analytic gradients of soft-argmax
// and of the three losses, on seeded random desk-scale configurations.
//
// Relative error per probed cell is |a - f| / max(|a|, |f|, floor) where the
// floor is 1e-3 times the largest analytic gradient magnitude of the buffer,
// so cells whose true derivative is numerically zero do not divide by zero.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "spose/geometry.hpp"
#include "spose/heatmap.hpp"
#include "spose/losses.hpp"
#include "spose/synthetic.hpp"

namespace spose {

struct GradcheckRow {
  std::string name;
  double step = 0.0;
  double tolerance = 0.0;
  double max_rel_error = 0.0;
  int configurations = 0;
  int probes = 0;
  bool passed() const { return max_rel_error < tolerance; }
};

struct GradcheckOptions {
  std::uint64_t seed = 0;
  int configurations = 100;
  int probes_per_configuration = 20;
  int heads = 2;
};

/// One random configuration: ground truth plus noisy estimated heads.
struct GradcheckScene {
  CameraIntrinsics cam;
  HeatmapConfig cfg;
  Pose pose;
  std::vector<Vec2> pixels;
  LossTargets targets;
  std::vector<HeadOutput> est;
};

inline constexpr double kGradFloorFraction = 1e-3;

namespace detail {

/// Raises the maximum cell so it exceeds every other cell by at least `gap`;
/// finite-difference steps then never change which cell is the maximum.
inline void plant_distinct_peak(Heatmap& h, double gap) {
  const std::size_t mi = argmax_index(h);
  double second = 0.0;
  for (std::size_t j = 0; j < h.size(); ++j)
    if (j != mi) second = std::max(second, h[j]);
  if (h[mi] - second < gap) h[mi] = second + gap;
}

inline double relative_error(double a, double f, double floor) {
  return std::abs(a - f) / std::max({std::abs(a), std::abs(f), floor});
}

/// Cell near the argmax of a map (within +-4 px), or the argmax itself.
inline std::size_t probe_cell(const Heatmap& h, std::mt19937_64& rng) {
  const std::size_t mi = argmax_index(h);
  std::uniform_int_distribution<int> pick(-4, 4);
  if (std::uniform_int_distribution<int>(0, 9)(rng) == 0) return mi;
  const int u = std::clamp(static_cast<int>(mi % h.width()) + pick(rng), 0, h.width() - 1);
  const int v = std::clamp(static_cast<int>(mi / h.width()) + pick(rng), 0, h.height() - 1);
  return h.index(u, v);
}

inline double buffer_scale(const std::vector<HeadOutput>& g) {
  double m = 0.0;
  for (const auto& h : g) {
    for (const auto& k : h.keypoint_maps)
      for (double x : k.values()) m = std::max(m, std::abs(x));
    for (const auto& k : h.depth_maps)
      for (double x : k.values()) m = std::max(m, std::abs(x));
  }
  return m;
}

}  // namespace detail

inline GradcheckScene make_gradcheck_scene(std::uint64_t seed, int heads) {
  std::mt19937_64 rng(seed);
  GradcheckScene s;
  s.cam = desk_camera();
  const KeypointModel model = default_keypoint_model();
  PoseRanges ranges;
  ranges.border_margin = 6.0;
  s.pose = sample_pose(rng, model, s.cam, ranges);
  s.pixels = project(model.points(), s.pose, s.cam);
  const std::vector<double> z = keypoint_depths(model, s.pose);
  for (const auto& p : s.pixels) s.targets.heatmaps.push_back(render_decodable(p, s.cfg, s.cam.height, s.cam.width));
  s.targets.pixels = s.pixels;
  s.targets.pose = s.pose;

  std::normal_distribution<double> px_noise(0.0, 0.4);
  std::uniform_real_distribution<double> amp(0.7, 1.0), bg(0.0, 0.02), dz(-0.02, 0.02);
  for (int i = 0; i < heads; ++i) {
    HeadOutput h;
    for (std::size_t k = 0; k < model.size(); ++k) {
      const Vec2 c = s.pixels[k] + Vec2(px_noise(rng), px_noise(rng));
      Heatmap m = render_gaussian(c, s.cfg, s.cam.height, s.cam.width, amp(rng));
      for (double& x : m.values()) x += bg(rng);
      detail::plant_distinct_peak(m, 1e-2);
      h.keypoint_maps.push_back(std::move(m));
      DepthMap d(s.cam.width, s.cam.height);
      for (double& x : d.values()) x = z[k] * (1.0 + dz(rng));
      h.depth_maps.push_back(std::move(d));
    }
    s.est.push_back(std::move(h));
  }
  return s;
}

/// Runs every check; one row per gradient kind, worst case over all
/// configurations.
inline std::vector<GradcheckRow> run_gradcheck(const GradcheckOptions& opt) {
  const KeypointModel model = default_keypoint_model();
  const LossWeights weights;
  GradcheckRow soft{"soft_argmax", 1e-4, 1e-5};
  GradcheckRow heat{"heatmap_loss", 1e-4, 1e-5};
  GradcheckRow pnp{"pnp_loss", 1e-4, 1e-3};
  GradcheckRow st_map{"structure_loss/heatmap", 1e-4, 1e-3};
  GradcheckRow st_depth{"structure_loss/depth", 1e-5, 1e-3};

  for (int c = 0; c < opt.configurations; ++c) {
    GradcheckScene s = make_gradcheck_scene(mix_seed(opt.seed, static_cast<std::uint64_t>(c)), opt.heads);
    std::mt19937_64 rng(mix_seed(opt.seed ^ 0xA5A5A5A5ULL, static_cast<std::uint64_t>(c)));
    std::uniform_int_distribution<std::size_t> pick_head(0, s.est.size() - 1), pick_k(0, model.size() - 1);

    // Probes a scalar function of the estimate against an analytic buffer.
    auto probe = [&](GradcheckRow& row, const std::vector<HeadOutput>& grad,
                     const std::function<double(const std::vector<HeadOutput>&)>& f, bool depth) {
      const double floor = kGradFloorFraction * detail::buffer_scale(grad);
      for (int p = 0; p < opt.probes_per_configuration; ++p) {
        const std::size_t i = pick_head(rng), k = pick_k(rng);
        std::size_t j;
        if (depth) {
          const BilinearSample b = sample_depth_bilinear(s.est[i].depth_maps[k], s.pixels[k]);
          j = b.index[std::uniform_int_distribution<int>(0, 3)(rng)];
        } else {
          j = detail::probe_cell(s.est[i].keypoint_maps[k], rng);
        }
        double& cell = depth ? s.est[i].depth_maps[k][j] : s.est[i].keypoint_maps[k][j];
        const double x0 = cell;
        cell = x0 + row.step;
        const double fp = f(s.est);
        cell = x0 - row.step;
        const double fm = f(s.est);
        cell = x0;
        const double fd = (fp - fm) / (2.0 * row.step);
        const double an = depth ? grad[i].depth_maps[k][j] : grad[i].keypoint_maps[k][j];
        row.max_rel_error = std::max(row.max_rel_error, detail::relative_error(an, fd, floor));
        ++row.probes;
      }
      ++row.configurations;
    };

    {
      // Soft-argmax: probe both coordinates of one map per probe.
      const double floor_scale = kGradFloorFraction;
      for (int p = 0; p < opt.probes_per_configuration; ++p) {
        const Heatmap& h = s.est[pick_head(rng)].keypoint_maps[pick_k(rng)];
        const SoftArgmaxResult r = soft_argmax_with_jacobian(h, s.cfg);
        double scale = 0.0;
        for (std::size_t j = 0; j < h.size(); ++j) scale = std::max({scale, std::abs(r.du[j]), std::abs(r.dv[j])});
        const std::size_t j = detail::probe_cell(h, rng);
        Heatmap e = h;
        e[j] = h[j] + soft.step;
        const Vec2 pp = soft_argmax(e, s.cfg);
        e[j] = h[j] - soft.step;
        const Vec2 pm = soft_argmax(e, s.cfg);
        const Vec2 fd = (pp - pm) / (2.0 * soft.step);
        soft.max_rel_error = std::max({soft.max_rel_error, detail::relative_error(r.du[j], fd.x(), floor_scale * scale),
                                       detail::relative_error(r.dv[j], fd.y(), floor_scale * scale)});
        ++soft.probes;
      }
      ++soft.configurations;
    }
    {
      const LossTerm t = heatmap_loss(s.est, s.targets.heatmaps, weights);
      probe(heat, t.gradient, [&](const auto& e) { return heatmap_loss(e, s.targets.heatmaps, weights, Gradient::Skip).value; }, false);
    }
    {
      const LossTerm t = pnp_loss(s.est, s.pixels, model, s.cam, s.cfg);
      probe(pnp, t.gradient, [&](const auto& e) { return pnp_loss(e, s.pixels, model, s.cam, s.cfg, Gradient::Skip).value; }, false);
    }
    {
      const LossTerm t = structure_loss(s.est, s.pose, s.pixels, model, s.cam, s.cfg);
      auto f = [&](const auto& e) { return structure_loss(e, s.pose, s.pixels, model, s.cam, s.cfg, Gradient::Skip).value; };
      probe(st_map, t.gradient, f, false);
      probe(st_depth, t.gradient, f, true);
    }
  }
  return {soft, heat, pnp, st_map, st_depth};
}

}  // namespace spose
