#pragma once

// Self-training by robust pseudo-labelling: keypoint filtering, per-head
// RANSAC-EPnP with consensus, the iterative relabel/retrain loop and a
// pluggable predictor. OraclePredictor simulates a network whose keypoint
// noise shrinks as it is retrained on more labels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "spose/error.hpp"
#include "spose/geometry.hpp"
#include "spose/heatmap.hpp"
#include "spose/metrics.hpp"
#include "spose/pnp.hpp"
#include "spose/synthetic.hpp"

namespace spose {

struct FilterConfig {
  double edge_margin = 5.0;
  int keep_count = 7;

  void validate() const {
    if (!(edge_margin >= 0.0)) fail(ErrorCode::InvalidArgument, "edge_margin must be >= 0");
    if (keep_count < 4) fail(ErrorCode::InvalidArgument, "keep_count must be >= 4");
  }
};

struct FilteredKeypoints {
  std::vector<std::size_t> indices;  // into the model ordering
  std::vector<Vec2> points;
  std::vector<double> responses;

  double total_response() const { return std::accumulate(responses.begin(), responses.end(), 0.0); }
};

/// Drops points closer than edge_margin to a border (or non-finite), then
/// keeps the keep_count strongest by response_score, ties to the lower index.
inline FilteredKeypoints filter_keypoints(std::span<const Vec2> points, std::span<const Heatmap> maps,
                                          const FilterConfig& cfg, int width, int height) {
  cfg.validate();
  if (points.size() != maps.size()) fail(ErrorCode::SizeMismatch, "need one heatmap per keypoint");
  const double m = cfg.edge_margin;
  std::vector<std::size_t> order;
  std::vector<double> score(points.size(), 0.0);
  for (std::size_t k = 0; k < points.size(); ++k) {
    const Vec2& p = points[k];
    if (!(p.x() >= m && p.x() <= width - 1 - m && p.y() >= m && p.y() <= height - 1 - m)) continue;
    score[k] = response_score(maps[k]);
    order.push_back(k);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  if (order.size() > static_cast<std::size_t>(cfg.keep_count)) order.resize(static_cast<std::size_t>(cfg.keep_count));
  FilteredKeypoints out;
  for (std::size_t k : order) {
    out.indices.push_back(k);
    out.points.push_back(points[k]);
    out.responses.push_back(score[k]);
  }
  return out;
}

struct HeadDiagnostics {
  bool converged = false;
  std::size_t kept = 0;
  std::size_t inliers = 0;
  double response = 0.0;
  double mean_reproj_error = std::numeric_limits<double>::infinity();
};

struct PseudoLabel {
  Pose pose;
  int iteration = 0;
  std::size_t head = 0;
  std::size_t inliers = 0;
  double response = 0.0;
  std::vector<HeadDiagnostics> heads;
};

struct LabelAttempt {
  std::optional<PseudoLabel> label;
  std::vector<HeadDiagnostics> heads;
};

/// Per head: refined-argmax decode, filter, RANSAC-EPnP (seed mixed with the
/// head index). A label is produced only if every head converged; it takes
/// the pose of the head with the largest kept response.
inline LabelAttempt generate_pseudo_label(std::span<const HeadOutput> heads, const KeypointModel& model,
                                          const CameraIntrinsics& cam, const FilterConfig& fcfg,
                                          const RansacConfig& rcfg) {
  if (heads.empty()) fail(ErrorCode::InvalidArgument, "need at least one head");
  fcfg.validate();
  rcfg.validate();
  LabelAttempt attempt;
  std::vector<Pose> poses(heads.size());
  for (std::size_t i = 0; i < heads.size(); ++i) {
    const HeadOutput& h = heads[i];
    if (h.keypoints() != model.size()) fail(ErrorCode::SizeMismatch, "head keypoint count does not match the model");
    const CameraIntrinsics hcam =
        (h.width() == cam.width && h.height() == cam.height) ? cam : cam.resampled(h.width(), h.height());
    std::vector<Vec2> decoded(model.size());
    for (std::size_t k = 0; k < model.size(); ++k) {
      const Heatmap& map = h.keypoint_maps[k];
      decoded[k] = map.max() > 0.0 ? refined_argmax(map) : Vec2::Constant(std::numeric_limits<double>::quiet_NaN());
    }
    const FilteredKeypoints kept = filter_keypoints(decoded, h.keypoint_maps, fcfg, h.width(), h.height());
    HeadDiagnostics diag;
    diag.kept = kept.indices.size();
    diag.response = kept.total_response();
    if (kept.indices.size() >= 4) {
      std::vector<Vec3> world;
      for (std::size_t k : kept.indices) world.push_back(model[k]);
      RansacConfig cfg = rcfg;
      cfg.rng_seed = mix_seed(rcfg.rng_seed, i);
      const PnPResult r = ransac_epnp(world, kept.points, hcam, cfg);
      diag.converged = r.converged;
      diag.inliers = r.inlier_count();
      diag.mean_reproj_error = r.mean_reproj_error;
      poses[i] = r.pose;
    }
    attempt.heads.push_back(diag);
  }
  const bool consensus =
      std::all_of(attempt.heads.begin(), attempt.heads.end(), [](const HeadDiagnostics& d) { return d.converged; });
  if (!consensus) return attempt;
  std::size_t best = 0;
  for (std::size_t i = 1; i < attempt.heads.size(); ++i)
    if (attempt.heads[i].response > attempt.heads[best].response) best = i;
  PseudoLabel label;
  label.pose = poses[best];
  label.head = best;
  label.inliers = attempt.heads[best].inliers;
  label.response = attempt.heads[best].response;
  label.heads = attempt.heads;
  attempt.label = std::move(label);
  return attempt;
}

/// At most one label per image, kept in dataset order.
class PseudoLabelStore {
 public:
  PseudoLabelStore() = default;
  explicit PseudoLabelStore(std::vector<std::string> ids) : ids_(std::move(ids)), labels_(ids_.size()) {
    for (std::size_t j = 0; j < ids_.size(); ++j)
      if (!index_.emplace(ids_[j], j).second) fail(ErrorCode::IdMismatch, "duplicate image id " + ids_[j]);
  }

  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::optional<PseudoLabel>& label(std::size_t j) const { return labels_.at(j); }

  const PseudoLabel* find(const std::string& id) const {
    const auto it = index_.find(id);
    return it == index_.end() || !labels_[it->second] ? nullptr : &*labels_[it->second];
  }

  void set(std::size_t j, std::optional<PseudoLabel> label) { labels_.at(j) = std::move(label); }

  std::size_t labelled_count() const {
    return static_cast<std::size_t>(std::count_if(labels_.begin(), labels_.end(), [](const auto& l) { return l.has_value(); }));
  }

  double fraction() const { return ids_.empty() ? 0.0 : static_cast<double>(labelled_count()) / ids_.size(); }

  std::vector<LabelledPose> labelled() const {
    std::vector<LabelledPose> out;
    for (std::size_t j = 0; j < ids_.size(); ++j)
      if (labels_[j]) out.push_back({ids_[j], labels_[j]->pose});
    return out;
  }

 private:
  std::vector<std::string> ids_;
  std::vector<std::optional<PseudoLabel>> labels_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Number of stored labels for which some head did not converge; zero for
/// any store produced by the loop.
inline std::size_t consensus_violations(const PseudoLabelStore& store) {
  std::size_t bad = 0;
  for (std::size_t j = 0; j < store.size(); ++j) {
    const auto& l = store.label(j);
    if (!l) continue;
    if (l->heads.empty() ||
        !std::all_of(l->heads.begin(), l->heads.end(), [](const HeadDiagnostics& d) { return d.converged; }))
      ++bad;
  }
  return bad;
}

/// Stand-in for the network: predict() returns N head outputs per image,
/// retrain() sees the current labels.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::size_t head_count() const = 0;
  virtual std::vector<HeadOutput> predict(const std::string& id) const = 0;
  virtual void retrain(const PseudoLabelStore& labels, int epochs) = 0;
};

struct OracleConfig {
  int heads = 2;
  double sigma_px = 3.0;
  double sigma_floor = 0.3;
  /// Noise reduction per retrain epoch at a fully labelled dataset.
  double anneal_rate = 0.25;
  /// Per-image noise multiplier, uniform in [difficulty_min, difficulty_max].
  double difficulty_min = 0.3;
  double difficulty_max = 1.5;
  double outlier_probability = 0.0;
  double depth_noise = 0.0;
  /// Share of images on which the predictor never finds the target.
  double unconvergeable_fraction = 0.0;
  /// Every keypoint is predicted far outside the image.
  bool off_grid = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (heads < 1) fail(ErrorCode::InvalidArgument, "oracle needs at least one head");
    if (!(sigma_px >= 0.0) || !(sigma_floor >= 0.0)) fail(ErrorCode::InvalidArgument, "oracle sigma must be >= 0");
    if (!(anneal_rate >= 0.0)) fail(ErrorCode::InvalidArgument, "anneal_rate must be >= 0");
    if (!(difficulty_min >= 0.0 && difficulty_min <= difficulty_max))
      fail(ErrorCode::InvalidArgument, "difficulty range must satisfy 0 <= min <= max");
    for (double p : {outlier_probability, unconvergeable_fraction})
      if (!(p >= 0.0 && p <= 1.0)) fail(ErrorCode::InvalidArgument, "oracle probabilities must lie in [0, 1]");
    if (!(depth_noise >= 0.0 && depth_noise < 1.0)) fail(ErrorCode::InvalidArgument, "depth_noise must lie in [0, 1)");
  }
};

/// Renders Gaussians at the true projections plus a fixed per-image noise
/// pattern scaled by the current sigma and the image's difficulty. Each
/// retrain lowers sigma in proportion to the labelled fraction, down to
/// sigma_floor.
class OraclePredictor : public Predictor {
 public:
  OraclePredictor(std::vector<LabelledPose> truth, KeypointModel model, CameraIntrinsics cam, HeatmapConfig hcfg,
                  OracleConfig cfg)
      : truth_(std::move(truth)), model_(std::move(model)), cam_(cam), hcfg_(hcfg), cfg_(cfg), sigma_(cfg.sigma_px) {
    cfg_.validate();
    cam_.validate();
    hcfg_.validate();
    for (std::size_t j = 0; j < truth_.size(); ++j)
      if (!index_.emplace(truth_[j].id, j).second) fail(ErrorCode::IdMismatch, "duplicate image id " + truth_[j].id);
  }

  std::size_t head_count() const override { return static_cast<std::size_t>(cfg_.heads); }
  double sigma() const { return sigma_; }

  std::vector<HeadOutput> predict(const std::string& id) const override {
    const auto it = index_.find(id);
    if (it == index_.end()) fail(ErrorCode::IdMismatch, "oracle has no ground truth for id " + id);
    const Pose& pose = truth_[it->second].pose;
    const std::uint64_t image_seed = mix_seed(cfg_.seed, fnv1a(id));
    std::mt19937_64 image_rng(image_seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double difficulty = cfg_.difficulty_min + (cfg_.difficulty_max - cfg_.difficulty_min) * u01(image_rng);
    const bool lost = cfg_.off_grid || u01(image_rng) < cfg_.unconvergeable_fraction;
    const double scale = sigma_ * difficulty;

    const std::vector<Vec2> pixels = project(model_.points(), pose, cam_);
    const std::vector<double> depths = keypoint_depths(model_, pose);
    std::vector<HeadOutput> out;
    for (int i = 0; i < cfg_.heads; ++i) {
      std::mt19937_64 rng(mix_seed(image_seed, static_cast<std::uint64_t>(i) + 1));
      std::normal_distribution<double> n01(0.0, 1.0);
      HeadOutput h;
      for (std::size_t k = 0; k < model_.size(); ++k) {
        // Draw every variate unconditionally so the pattern is fixed per image.
        const Vec2 noise(n01(rng), n01(rng));
        const bool outlier = u01(rng) < cfg_.outlier_probability;
        const Vec2 random_px(u01(rng) * (cam_.width - 1), u01(rng) * (cam_.height - 1));
        double amplitude = 0.6 + 0.4 * u01(rng);
        const double dz = n01(rng);
        Vec2 centre = pixels[k] + scale * noise;
        if (outlier) {
          centre = random_px;
          amplitude *= 0.5;
        }
        if (lost) centre = Vec2(-1000.0, -1000.0);
        h.keypoint_maps.push_back(render_gaussian(centre, hcfg_, cam_.height, cam_.width, amplitude));
        const double depth = depths[k] * std::max(0.05, 1.0 + cfg_.depth_noise * dz);
        h.depth_maps.emplace_back(cam_.width, cam_.height, depth);
      }
      out.push_back(std::move(h));
    }
    return out;
  }

  void retrain(const PseudoLabelStore& labels, int epochs) override {
    const double fraction = truth_.empty() ? 0.0 : static_cast<double>(labels.labelled_count()) / truth_.size();
    sigma_ = std::max(cfg_.sigma_floor, sigma_ - cfg_.anneal_rate * epochs * fraction);
  }

 private:
  std::vector<LabelledPose> truth_;
  KeypointModel model_;
  CameraIntrinsics cam_;
  HeatmapConfig hcfg_;
  OracleConfig cfg_;
  double sigma_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ScheduleEntry {
  int iteration = 1;
  double reproj_threshold = 2.0;
  bool operator==(const ScheduleEntry&) const = default;
};

struct LoopConfig {
  int iterations = 50;
  RansacConfig ransac;
  /// From `iteration` on (1-based), RANSAC uses `reproj_threshold`.
  std::vector<ScheduleEntry> reproj_schedule;
  int retrain_epochs = 1;
  FilterConfig filter;
  std::uint64_t seed = 0;

  void validate() const {
    if (iterations < 1) fail(ErrorCode::InvalidArgument, "iterations must be >= 1");
    if (retrain_epochs < 0) fail(ErrorCode::InvalidArgument, "retrain_epochs must be >= 0");
    ransac.validate();
    filter.validate();
    for (std::size_t s = 0; s < reproj_schedule.size(); ++s) {
      if (reproj_schedule[s].iteration < 1) fail(ErrorCode::InvalidArgument, "schedule iterations are 1-based");
      if (!(reproj_schedule[s].reproj_threshold > 0.0))
        fail(ErrorCode::InvalidArgument, "schedule thresholds must be positive");
      if (s > 0 && reproj_schedule[s].iteration <= reproj_schedule[s - 1].iteration)
        fail(ErrorCode::InvalidArgument, "schedule iterations must be strictly increasing");
    }
  }

  double threshold_at(int iteration) const {
    double r = ransac.reproj_threshold;
    for (const auto& e : reproj_schedule)
      if (e.iteration <= iteration) r = e.reproj_threshold;
    return r;
  }
};

struct AcceptanceRow {
  int iteration = 0;
  std::size_t labelled = 0;
  std::size_t total = 0;
  double fraction = 0.0;
  double reproj_threshold = 0.0;
  bool operator==(const AcceptanceRow&) const = default;
};

struct LoopResult {
  PseudoLabelStore store;
  std::vector<AcceptanceRow> curve;
};

using IterationObserver = std::function<void(int iteration, const PseudoLabelStore&)>;

/// RANSAC seed of one image at one iteration.
inline std::uint64_t image_seed(std::uint64_t global, const std::string& id, int iteration) {
  return mix_seed(mix_seed(global, fnv1a(id)), static_cast<std::uint64_t>(iteration));
}

/// One pass over the dataset: every image is relabelled from scratch, so the
/// store holds exactly the labels accepted at this iteration.
inline void relabel_pass(std::span<const std::string> ids, const Predictor& predictor, const KeypointModel& model,
                         const CameraIntrinsics& cam, const LoopConfig& cfg, int iteration, PseudoLabelStore& store) {
  RansacConfig rcfg = cfg.ransac;
  rcfg.reproj_threshold = cfg.threshold_at(iteration);
  for (std::size_t j = 0; j < ids.size(); ++j) {
    std::vector<HeadOutput> heads;
    try {
      heads = predictor.predict(ids[j]);
    } catch (const std::exception& e) {
      fail(ErrorCode::PredictorFailure,
           "predictor failed on " + ids[j] + " at iteration " + std::to_string(iteration) + ": " + e.what(),
           static_cast<std::size_t>(iteration));
    }
    rcfg.rng_seed = image_seed(cfg.seed, ids[j], iteration);
    LabelAttempt a = generate_pseudo_label(heads, model, cam, cfg.filter, rcfg);
    if (a.label) a.label->iteration = iteration;
    store.set(j, std::move(a.label));
  }
}

namespace detail {

inline LoopResult run_loop(std::span<const std::string> ids, Predictor& predictor, const KeypointModel& model,
                           const CameraIntrinsics& cam, const LoopConfig& cfg, double stop_fraction,
                           const IterationObserver& observer) {
  cfg.validate();
  if (ids.empty()) fail(ErrorCode::InvalidArgument, "dataset is empty");
  LoopResult result{PseudoLabelStore(std::vector<std::string>(ids.begin(), ids.end())), {}};
  for (int it = 1; it <= cfg.iterations; ++it) {
    relabel_pass(ids, predictor, model, cam, cfg, it, result.store);
    const std::size_t labelled = result.store.labelled_count();
    result.curve.push_back({it, labelled, ids.size(), static_cast<double>(labelled) / ids.size(), cfg.threshold_at(it)});
    if (observer) observer(it, result.store);
    if (stop_fraction > 0.0 && result.curve.back().fraction >= stop_fraction) break;
    try {
      predictor.retrain(result.store, cfg.retrain_epochs);
    } catch (const std::exception& e) {
      fail(ErrorCode::PredictorFailure, "retrain failed at iteration " + std::to_string(it) + ": " + e.what(),
           static_cast<std::size_t>(it));
    }
  }
  return result;
}

}  // namespace detail

inline LoopResult run_adaptation_loop(std::span<const std::string> ids, Predictor& predictor,
                                      const KeypointModel& model, const CameraIntrinsics& cam, const LoopConfig& cfg,
                                      const IterationObserver& observer = {}) {
  return detail::run_loop(ids, predictor, model, cam, cfg, 0.0, observer);
}

/// Runs the loop until at least `target_fraction` of the images carry a
/// label and returns those labels; BudgetExhausted otherwise.
inline std::vector<LabelledPose> build_pseudo_test_set(std::span<const std::string> ids, Predictor& predictor,
                                                       const KeypointModel& model, const CameraIntrinsics& cam,
                                                       const LoopConfig& cfg, double target_fraction = 0.30) {
  if (!(target_fraction > 0.0 && target_fraction <= 1.0))
    fail(ErrorCode::InvalidArgument, "target_fraction must lie in (0, 1]");
  const LoopResult r = detail::run_loop(ids, predictor, model, cam, cfg, target_fraction, {});
  const double achieved = r.curve.back().fraction;
  if (achieved < target_fraction)
    fail(ErrorCode::BudgetExhausted, "labelled fraction " + std::to_string(achieved) + " below target " +
                                         std::to_string(target_fraction) + " after " +
                                         std::to_string(r.curve.size()) + " iterations");
  return r.store.labelled();
}

}  // namespace spose
