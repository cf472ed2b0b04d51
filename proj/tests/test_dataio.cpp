#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "spose/dataio.hpp"
#include "test_util.hpp"

using namespace spose;

namespace {

DatasetManifest random_manifest(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  DatasetManifest m;
  m.camera_file = "camera.json";
  m.model_file = "model.json";
  for (std::size_t j = 0; j < count; ++j) {
    ManifestEntry e;
    e.id = synth_id(j);
    if (j % 3 != 2) {
      e.quaternion = uniform_quaternion(rng);
      e.translation = oracle::random_vec(rng, -1, 1) + Vec3(0, 0, 6);
    }
    if (j % 2 == 0) e.heatmap_file = "heatmaps/" + e.id + ".hmap";
    m.entries.push_back(e);
  }
  return m;
}

std::string schema_error(const std::string& text) {
  try {
    manifest_from_json(parse_json(text, "test"));
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SchemaViolation) << e.what();
    return e.what();
  }
  ADD_FAILURE() << "no error for " << text;
  return {};
}

}  // namespace

TEST(Manifest, SingleEntryRoundTrip) {
  TempDir dir("manifest1");
  const DatasetManifest m = random_manifest(1, 1);
  save_manifest(m, dir / "manifest.json");
  const DatasetManifest back = load_manifest(dir / "manifest.json");
  EXPECT_EQ(back, m);
  EXPECT_EQ(back.base_dir, dir.path());
  EXPECT_EQ(back.entry("img00000").quaternion, m.entries[0].quaternion);
}

TEST(ManifestProperty, LargeRoundTripIsExact) {
  TempDir dir("manifest1000");
  const DatasetManifest m = random_manifest(1000, 2);
  save_manifest(m, dir / "manifest.json");
  const std::string first = read_text_file(dir / "manifest.json");
  const DatasetManifest back = load_manifest(dir / "manifest.json");
  EXPECT_EQ(back, m);
  // Doubles survive bit-exactly, so a second write is byte-identical.
  save_manifest(back, dir / "again.json");
  EXPECT_EQ(read_text_file(dir / "again.json"), first);
}

TEST(Manifest, SchemaViolationsNameTheField) {
  const std::string msg = schema_error(
      R"({"camera": "c.json", "model": "m.json", "entries": [{"id": "a", "q_vbs2tango_true": [1, 0, 0, 0]}]})");
  EXPECT_NE(msg.find("entries[0].r_Vo2To_vbs_true"), std::string::npos) << msg;
  EXPECT_NE(schema_error(R"({"camera": "c", "model": "m", "entries": [{"id": "a", "extra": 1}]})").find("extra"),
            std::string::npos);
  EXPECT_NE(schema_error(R"({"camera": "c", "model": "m", "entries": [{"id": "a"}, {"id": "a"}]})").find("duplicate"),
            std::string::npos);
  schema_error(R"({"camera": "c", "model": "m", "entries": [{"id": 3}]})");
  schema_error(R"({"model": "m", "entries": []})");
  schema_error(R"({"camera": "c", "model": "m", "entries": [{"id": "a", "q_vbs2tango_true": [1, 0, 0],
                  "r_Vo2To_vbs_true": [0, 0, 5]}]})");
  EXPECT_NE(schema_error(R"({"camera": "c", "model": "m", "entries": [{"id": "a",
        "q_vbs2tango_true": [1, 1, 0, 0], "r_Vo2To_vbs_true": [0, 0, 5]}]})")
                .find("entries[0].q_vbs2tango_true"),
            std::string::npos);
}

TEST(Manifest, MalformedJsonIsParseError) {
  expect_code(ErrorCode::ParseError, [] { parse_json("{\"camera\": ", "broken.json"); });
  TempDir dir("parse");
  write_file_atomic(dir / "m.json", "[1, 2,");
  expect_code(ErrorCode::ParseError, [&] { load_manifest(dir / "m.json"); });
  expect_code(ErrorCode::IoError, [&] { load_manifest(dir / "missing.json"); });
}

TEST(Manifest, UnknownIdIsIdMismatch) {
  const DatasetManifest m = random_manifest(3, 3);
  expect_code(ErrorCode::IdMismatch, [&] { m.entry("nope"); });
}

TEST(JsonWriter, NumbersRoundTripAndNonFiniteIsRejected) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double x = u(rng) * std::pow(10.0, i % 30 - 15);
    const Json back = parse_json(to_json_text(Json::array({x})), "t");
    EXPECT_EQ(back[0].get<double>(), x);
  }
  expect_code(ErrorCode::InvalidArgument, [] { to_json_text(Json{{"x", std::nan("")}}); });
  EXPECT_EQ(to_json_text(Json{{"a", Json::array({1, 2.5})}}), "{\n  \"a\": [1, 2.5]\n}\n");
}

TEST(CameraAndModel, RoundTrip) {
  const CameraIntrinsics c = oracle::vga_camera();
  const CameraIntrinsics back = camera_from_json(parse_json(to_json_text(camera_to_json(c)), "t"));
  EXPECT_EQ(back.fx, c.fx);
  EXPECT_EQ(back.width, c.width);
  const KeypointModel m = default_keypoint_model();
  const KeypointModel mb = model_from_json(parse_json(to_json_text(model_to_json(m)), "t"));
  for (std::size_t k = 0; k < m.size(); ++k) EXPECT_EQ(mb[k], m[k]);
  expect_code(ErrorCode::SchemaViolation, [] {
    camera_from_json(parse_json(R"({"fx": 1, "fy": 1, "cx": 1, "cy": 1, "width": 4})", "t"));
  });
}

TEST(RunConfig, RoundTripAndDefaults) {
  RunConfig c;
  c.seed = 99;
  c.heatmap.sigma = 1.5;
  c.loop.iterations = 12;
  c.loop.reproj_schedule = {{10, 1.0}};
  c.oracle.sigma_floor = 0.5;
  c.synth.ranges.t_max = Vec3(0.3, 0.3, 7.0);
  const RunConfig back = run_config_from_json(parse_json(to_json_text(run_config_to_json(c)), "t"));
  EXPECT_EQ(to_json_text(run_config_to_json(back)), to_json_text(run_config_to_json(c)));
  EXPECT_EQ(back.loop.reproj_schedule, c.loop.reproj_schedule);

  const RunConfig d = run_config_from_json(parse_json("{}", "t"));
  EXPECT_EQ(d.heatmap.sigma, 2.0);
  EXPECT_EQ(d.ransac.reproj_threshold, 2.0);
  EXPECT_EQ(d.ransac.confidence, 0.999);
  EXPECT_EQ(d.loop.iterations, 50);
  EXPECT_NE(d.synth_seed(), d.loop_seed());
  EXPECT_EQ(d.effective_loop().seed, d.loop_seed());
}

TEST(RunConfig, Rejections) {
  auto bad = [](const std::string& text) {
    expect_code(ErrorCode::SchemaViolation, [&] { run_config_from_json(parse_json(text, "t")); });
  };
  bad(R"({"unknown": 1})");
  bad(R"({"ransac": {"confidence": 1.5}})");
  bad(R"({"heatmap": {"sigma": "two"}})");
  bad(R"({"loop": {"reproj_schedule": [{"iteration": 0, "reproj_threshold": 1.0}]}})");
  bad(R"({"seed": -1})");
  bad(R"({"oracle": {"heads": 0}})");
}

TEST(Labels, RoundTrip) {
  PseudoLabelStore store({"a", "b", "c"});
  PseudoLabel l;
  l.pose = Pose::from_quaternion(Quaternion{0.5, 0.5, 0.5, 0.5}, Vec3(0.1, -0.2, 6.5));
  l.iteration = 3;
  l.head = 1;
  l.inliers = 6;
  l.response = 12.25;
  l.heads = {{true, 7, 5, 11.0, 0.7}, {true, 7, 6, 12.25, 0.4}};
  store.set(2, l);
  const Json j = labels_to_json(store);
  EXPECT_EQ(j["total"], 3);
  EXPECT_EQ(j["labelled"], 1);
  const auto back = labels_from_json(parse_json(to_json_text(j), "t"));
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].id, "c");
  EXPECT_EQ(back[0].pose.translation, l.pose.translation);
  EXPECT_LT((back[0].pose.rotation - l.pose.rotation).norm(), 1e-15);
  EXPECT_EQ(back[0].heads.size(), 2u);
  EXPECT_EQ(back[0].heads[1].inliers, 6u);
  const auto poses = poses_from_json(j);
  ASSERT_EQ(poses.size(), 1u);
  EXPECT_EQ(poses[0].id, "c");
}

TEST(AcceptanceCsv, RoundTripAndFormat) {
  std::vector<AcceptanceRow> rows{{1, 67, 200, 0.335, 2.0}, {2, 80, 200, 0.4, 1.0}};
  const std::string csv = curve_to_csv(rows);
  EXPECT_EQ(csv, "iteration,labelled,total,fraction,reproj_threshold\n1,67,200,0.335,2\n2,80,200,0.4,1\n");
  EXPECT_EQ(curve_from_csv(csv), rows);
  expect_code(ErrorCode::ParseError, [] { curve_from_csv("iteration,labelled\n"); });
  expect_code(ErrorCode::ParseError, [] { curve_from_csv(std::string(kCurveHeader) + "\n1,2,x,0.5,2\n"); });
}

TEST(Synth, DeterministicInFrontAndDecodable) {
  TempDir a("synth_a"), b("synth_b");
  RunConfig cfg;
  cfg.seed = 5;
  const DatasetManifest m = synth_dataset(12, cfg, a.path());
  synth_dataset(12, cfg, b.path());
  for (const char* f : {"manifest.json", "camera.json", "model.json", "heatmaps/img00007.hmap"})
    EXPECT_EQ(read_text_file(a / f), read_text_file(b / f)) << f;

  const DatasetManifest loaded = load_manifest(a / "manifest.json");
  EXPECT_EQ(loaded, m);
  const CameraIntrinsics cam = loaded.camera();
  const KeypointModel model = loaded.model();
  for (const auto& e : loaded.entries) {
    const Pose pose = e.pose();
    for (double z : keypoint_depths(model, pose)) EXPECT_GT(z, 0.0);
    const auto px = project(model.points(), pose, cam);
    const auto heads = read_hmap_file(loaded.resolve(*e.heatmap_file).string());
    ASSERT_EQ(heads.size(), 1u);
    for (std::size_t k = 0; k < model.size(); ++k) {
      EXPECT_TRUE(px[k].x() >= 0 && px[k].x() <= cam.width - 1 && px[k].y() >= 0 && px[k].y() <= cam.height - 1);
      EXPECT_LT((soft_argmax(heads[0].keypoint_maps[k], cfg.heatmap) - px[k]).norm(), 0.05) << e.id << " " << k;
    }
  }
  cfg.seed = 6;
  TempDir c("synth_c");
  synth_dataset(12, cfg, c.path());
  EXPECT_NE(read_text_file(a / "manifest.json"), read_text_file(c / "manifest.json"));
}

TEST(FilePredictor, ReplaysStoredHeads) {
  TempDir dir("files");
  const DatasetManifest m = synth_dataset(4, RunConfig{}, dir.path());
  FilePredictor p(load_manifest(dir / "manifest.json"));
  EXPECT_EQ(p.head_count(), 1u);
  const auto heads = p.predict("img00002");
  const LabelAttempt a = generate_pseudo_label(heads, m.model(), m.camera(), FilterConfig{}, RansacConfig{});
  ASSERT_TRUE(a.label.has_value());
  EXPECT_LT(oracle::geodesic(a.label->pose.rotation, m.entry("img00002").pose().rotation), 1e-3);
  expect_code(ErrorCode::IdMismatch, [&] { p.predict("img99999"); });
}

TEST(AtomicWrite, ReplacesWholeFile) {
  TempDir dir("atomic");
  write_file_atomic(dir / "f.txt", "first version, long");
  write_file_atomic(dir / "f.txt", "second");
  EXPECT_EQ(read_text_file(dir / "f.txt"), "second");
  EXPECT_FALSE(std::filesystem::exists(dir / "f.txt.tmp"));
}
