#pragma once

// Command-line front end. run_cli() is separate from main() so tests can
// drive it with captured streams.
//
// Exit codes: 0 success, 1 a check or computation failed, 2 usage, input,
// file or schema errors.

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spose/spose.hpp"

namespace spose::cli {

inline int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::SizeMismatch:
    case ErrorCode::IdMismatch:
    case ErrorCode::InvalidRange:
    case ErrorCode::ParseError:
    case ErrorCode::SchemaViolation:
    case ErrorCode::IoError:
    case ErrorCode::NonUnitQuaternion:
    case ErrorCode::NotARotation:
      return 2;
    default:
      return 1;
  }
}

/// Parses "R@K" into a schedule entry.
inline ScheduleEntry parse_drop(const std::string& s) {
  const auto at = s.find('@');
  if (at == std::string::npos) fail(ErrorCode::InvalidArgument, "--reproj-drop expects R@K, got " + s);
  ScheduleEntry e;
  try {
    std::size_t used = 0;
    e.reproj_threshold = std::stod(s.substr(0, at), &used);
    if (used != at) throw std::invalid_argument(s);
    const std::string k = s.substr(at + 1);
    e.iteration = std::stoi(k, &used);
    if (used != k.size()) throw std::invalid_argument(s);
  } catch (const std::logic_error&) {
    fail(ErrorCode::InvalidArgument, "--reproj-drop expects R@K, got " + s);
  }
  return e;
}

struct PnpOptions {
  std::string manifest, entry, camera, model, config;
  bool ransac = false;
  int head = 0;
  std::optional<std::uint64_t> seed;
};

inline int cmd_pnp(const PnpOptions& o, std::ostream& out) {
  const DatasetManifest m = load_manifest(o.manifest);
  const ManifestEntry& e = m.entry(o.entry);
  if (!e.heatmap_file) fail(ErrorCode::SchemaViolation, "entry " + e.id + " has no heatmap_file");
  const CameraIntrinsics cam0 = o.camera.empty() ? m.camera() : load_camera(o.camera);
  const KeypointModel model = o.model.empty() ? m.model() : load_model(o.model);
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  const std::vector<HeadOutput> heads = read_hmap_file(m.resolve(*e.heatmap_file).string());
  if (o.head < 0 || static_cast<std::size_t>(o.head) >= heads.size())
    fail(ErrorCode::InvalidArgument, "--head out of range; file has " + std::to_string(heads.size()) + " heads");
  const HeadOutput& h = heads[static_cast<std::size_t>(o.head)];
  if (h.keypoints() != model.size()) fail(ErrorCode::SizeMismatch, "heatmap keypoint count does not match the model");
  const CameraIntrinsics cam =
      (h.width() == cam0.width && h.height() == cam0.height) ? cam0 : cam0.resampled(h.width(), h.height());

  Json pose;
  if (o.ransac) {
    std::vector<Vec2> decoded;
    for (const auto& map : h.keypoint_maps) decoded.push_back(refined_argmax(map));
    const FilteredKeypoints kept = filter_keypoints(decoded, h.keypoint_maps, cfg.filter, h.width(), h.height());
    std::vector<Vec3> world;
    for (std::size_t k : kept.indices) world.push_back(model[k]);
    RansacConfig rcfg = cfg.ransac;
    rcfg.rng_seed = image_seed(cfg.loop_seed(), e.id, 1);
    const PnPResult r = ransac_epnp(world, kept.points, cam, rcfg);
    pose = pose_entry_json(e.id, r.pose);
    pose["converged"] = r.converged;
    pose["inliers"] = r.inlier_count();
    if (std::isfinite(r.mean_reproj_error)) pose["mean_reproj_error"] = r.mean_reproj_error;
  } else {
    std::vector<Vec2> decoded;
    for (const auto& map : h.keypoint_maps) decoded.push_back(soft_argmax(map, cfg.heatmap));
    const Pose p = refine_pose(epnp(model.points(), decoded, cam), model.points(), decoded, cam, 100, 1e-13);
    const std::vector<double> err = reprojection_error(p, model.points(), decoded, cam);
    double mean = 0.0;
    for (double x : err) mean += x;
    pose = pose_entry_json(e.id, p);
    pose["converged"] = true;
    pose["inliers"] = model.size();
    pose["mean_reproj_error"] = mean / static_cast<double>(err.size());
  }
  out << to_json_text(Json{{"poses", Json::array({pose})}});
  return 0;
}

inline int cmd_losses(const std::string& manifest, const std::string& entry, const std::string& pred,
                      const std::string& config, std::ostream& out) {
  const DatasetManifest m = load_manifest(manifest);
  const ManifestEntry& e = m.entry(entry);
  const RunConfig cfg = config.empty() ? RunConfig{} : load_run_config(config);
  const CameraIntrinsics cam0 = m.camera();
  const KeypointModel model = m.model();
  const std::vector<HeadOutput> est = read_hmap_file(pred);
  if (est.empty()) fail(ErrorCode::SchemaViolation, "prediction file has no heads");
  const CameraIntrinsics cam = (est[0].width() == cam0.width && est[0].height() == cam0.height)
                                   ? cam0
                                   : cam0.resampled(est[0].width(), est[0].height());
  LossTargets t;
  t.pose = e.pose();
  t.pixels = project(model.points(), t.pose, cam);
  for (const auto& p : t.pixels) t.heatmaps.push_back(render_decodable(p, cfg.heatmap, cam.height, cam.width));
  const LossReport r = combined_loss(est, t, model, cam, cfg.heatmap, cfg.loss);
  out << to_json_text(loss_report_to_json(r));
  return 0;
}

struct PseudolabelOptions {
  std::string manifest, config, predictor = "oracle", out_dir;
  std::vector<std::string> drops;
  std::optional<std::uint64_t> seed;
  std::optional<int> iterations;
};

inline int cmd_pseudolabel(const PseudolabelOptions& o, std::ostream& out) {
  const DatasetManifest m = load_manifest(o.manifest);
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.iterations) cfg.loop.iterations = *o.iterations;
  for (const auto& d : o.drops) cfg.loop.reproj_schedule.push_back(parse_drop(d));
  std::stable_sort(cfg.loop.reproj_schedule.begin(), cfg.loop.reproj_schedule.end(),
                   [](const ScheduleEntry& a, const ScheduleEntry& b) { return a.iteration < b.iteration; });
  const LoopConfig loop = cfg.effective_loop();
  loop.validate();

  const CameraIntrinsics cam = m.camera();
  const KeypointModel model = m.model();
  const std::vector<std::string> ids = m.ids();
  std::unique_ptr<Predictor> predictor;
  if (o.predictor == "oracle") {
    std::vector<LabelledPose> truth = m.ground_truth();
    if (truth.size() != ids.size()) fail(ErrorCode::SchemaViolation, "the oracle predictor needs every entry labelled");
    predictor = std::make_unique<OraclePredictor>(std::move(truth), model, cam, cfg.heatmap, cfg.effective_oracle());
  } else if (o.predictor == "files") {
    predictor = std::make_unique<FilePredictor>(m);
  } else {
    fail(ErrorCode::InvalidArgument, "--predictor must be oracle or files");
  }
  const LoopResult r = run_adaptation_loop(ids, *predictor, model, cam, loop);
  const std::filesystem::path dir(o.out_dir);
  save_labels(r.store, dir / "labels.json");
  const std::string csv = curve_to_csv(r.curve);
  write_file_atomic(dir / "acceptance.csv", csv);
  out << csv;
  return 0;
}

inline int cmd_gradcheck(std::uint64_t seed, int configurations, std::ostream& out, std::ostream& err) {
  GradcheckOptions opt;
  opt.seed = seed;
  opt.configurations = configurations;
  const std::vector<GradcheckRow> rows = run_gradcheck(opt);
  Json arr = Json::array();
  bool ok = true;
  err << std::left << std::setw(24) << "check" << std::setw(10) << "step" << std::setw(11) << "tolerance"
      << std::setw(14) << "max_rel_err" << "result\n";
  for (const auto& r : rows) {
    ok = ok && r.passed();
    arr.push_back(Json{{"name", r.name},
                       {"step", r.step},
                       {"tolerance", r.tolerance},
                       {"max_rel_error", r.max_rel_error},
                       {"configurations", r.configurations},
                       {"probes", r.probes},
                       {"passed", r.passed()}});
    char line[128];
    std::snprintf(line, sizeof line, "%-24s%-10.0e%-11.0e%-14.3e%s\n", r.name.c_str(), r.step, r.tolerance,
                  r.max_rel_error, r.passed() ? "ok" : "FAIL");
    err << line;
  }
  out << to_json_text(Json{{"seed", seed}, {"passed", ok}, {"checks", arr}});
  return ok ? 0 : 1;
}

inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spacecraft pose estimation toolkit", "spose"};
  app.require_subcommand(1);

  std::string config, out_dir;
  std::size_t count = 0;
  std::optional<std::uint64_t> seed;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--config", config, "Run configuration JSON")->check(CLI::ExistingFile);
  synth->add_option("--count", count, "Number of images")->required();
  synth->add_option("--out", out_dir, "Output directory")->required();
  synth->add_option("--seed", seed, "Overrides the configuration seed");

  PnpOptions pnp;
  auto* pnp_cmd = app.add_subcommand("pnp", "Estimate the pose of one manifest entry from its heatmaps");
  pnp_cmd->add_option("--manifest", pnp.manifest)->required()->check(CLI::ExistingFile);
  pnp_cmd->add_option("--entry", pnp.entry)->required();
  pnp_cmd->add_option("--camera", pnp.camera, "Defaults to the manifest camera")->check(CLI::ExistingFile);
  pnp_cmd->add_option("--model", pnp.model, "Defaults to the manifest model")->check(CLI::ExistingFile);
  pnp_cmd->add_option("--config", pnp.config)->check(CLI::ExistingFile);
  pnp_cmd->add_option("--head", pnp.head, "Head index")->capture_default_str();
  pnp_cmd->add_option("--seed", pnp.seed);
  pnp_cmd->add_flag("--ransac", pnp.ransac, "Refined argmax, filter and RANSAC-EPnP instead of soft-argmax EPnP");

  std::string pred, gt;
  auto* score = app.add_subcommand("score", "Score estimated poses against ground truth");
  score->add_option("--pred", pred)->required()->check(CLI::ExistingFile);
  score->add_option("--gt", gt)->required()->check(CLI::ExistingFile);

  std::string l_manifest, l_entry, l_pred, l_config;
  auto* losses = app.add_subcommand("losses", "Evaluate the training losses of a prediction file");
  losses->add_option("--manifest", l_manifest)->required()->check(CLI::ExistingFile);
  losses->add_option("--entry", l_entry)->required();
  losses->add_option("--pred", l_pred, "HMAP1 prediction with depth maps")->required()->check(CLI::ExistingFile);
  losses->add_option("--config", l_config)->check(CLI::ExistingFile);

  PseudolabelOptions pl;
  auto* pseudo = app.add_subcommand("pseudolabel", "Run the self-training pseudo-labelling loop");
  pseudo->add_option("--manifest", pl.manifest)->required()->check(CLI::ExistingFile);
  pseudo->add_option("--config", pl.config)->check(CLI::ExistingFile);
  pseudo->add_option("--predictor", pl.predictor)->check(CLI::IsMember({"oracle", "files"}))->capture_default_str();
  pseudo->add_option("--out", pl.out_dir)->required();
  pseudo->add_option("--reproj-drop", pl.drops, "Threshold change R@K from iteration K on; repeatable");
  pseudo->add_option("--iterations", pl.iterations);
  pseudo->add_option("--seed", pl.seed);

  std::uint64_t gc_seed = 0;
  int gc_configs = 100;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the analytic gradients");
  gradcheck->add_option("--seed", gc_seed)->capture_default_str();
  gradcheck->add_option("--configurations", gc_configs)->check(CLI::PositiveNumber)->capture_default_str();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();  // program name
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) {
      RunConfig cfg = config.empty() ? RunConfig{} : load_run_config(config);
      if (seed) cfg.seed = *seed;
      const DatasetManifest m = synth_dataset(count, cfg, out_dir);
      out << to_json_text(manifest_to_json(m));
      return 0;
    }
    if (*pnp_cmd) return cmd_pnp(pnp, out);
    if (*score) {
      const std::vector<LabelledPose> p = load_poses(pred), g = load_poses(gt);
      out << to_json_text(score_report_to_json(score_dataset(p, g)));
      return 0;
    }
    if (*losses) return cmd_losses(l_manifest, l_entry, l_pred, l_config, out);
    if (*pseudo) return cmd_pseudolabel(pl, out);
    if (*gradcheck) return cmd_gradcheck(gc_seed, gc_configs, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

}  // namespace spose::cli
