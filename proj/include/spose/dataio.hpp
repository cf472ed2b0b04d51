#pragma once

// File formats: camera and keypoint-model JSON, dataset manifests, pose
// label files, score and loss reports, the acceptance-curve CSV, the run
// configuration, synthetic datasets and the file-backed predictor.
//
// JSON numbers are written with 17 significant digits so doubles survive a
// round trip; every writer goes through a temporary file and a rename.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "spose/adaptation.hpp"
#include "spose/error.hpp"
#include "spose/geometry.hpp"
#include "spose/heatmap.hpp"
#include "spose/hmap_io.hpp"
#include "spose/losses.hpp"
#include "spose/metrics.hpp"
#include "spose/pnp.hpp"
#include "spose/synthetic.hpp"

namespace spose {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Writing

namespace detail {

inline void format_number(std::string& out, double v) {
  if (!std::isfinite(v)) fail(ErrorCode::InvalidArgument, "cannot serialise a non-finite number");
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  out.append(buf, static_cast<std::size_t>(n));
}

inline void dump_json(std::string& out, const Json& j, int depth) {
  const auto pad = [&](int d) { out.append(static_cast<std::size_t>(2 * d), ' '); };
  switch (j.type()) {
    case Json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (const auto& [key, value] : j.items()) {
        if (!first) out += ",\n";
        first = false;
        pad(depth + 1);
        out += Json(key).dump();
        out += ": ";
        dump_json(out, value, depth + 1);
      }
      out += '\n';
      pad(depth);
      out += '}';
      return;
    }
    case Json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      // Arrays of plain numbers stay on one line.
      const bool flat = std::all_of(j.begin(), j.end(), [](const Json& e) { return e.is_number(); });
      out += flat ? "[" : "[\n";
      bool first = true;
      for (const auto& e : j) {
        if (!first) out += flat ? ", " : ",\n";
        first = false;
        if (!flat) pad(depth + 1);
        dump_json(out, e, depth + 1);
      }
      if (!flat) {
        out += '\n';
        pad(depth);
      }
      out += ']';
      return;
    }
    case Json::value_t::number_float:
      format_number(out, j.get<double>());
      return;
    default:
      out += j.dump();
  }
}

}  // namespace detail

inline std::string to_json_text(const Json& j) {
  std::string out;
  detail::dump_json(out, j, 0);
  out += '\n';
  return out;
}

/// Writes `path` via a temporary sibling and a rename.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorCode::IoError, "cannot open " + tmp.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) fail(ErrorCode::IoError, "failed writing " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::IoError, "cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline Json parse_json(const std::string& text, const std::string& origin) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::ParseError, origin + ": " + e.what());
  }
}

inline Json read_json_file(const std::filesystem::path& path) { return parse_json(read_text_file(path), path.string()); }

// ---------------------------------------------------------------------------
// Schema helpers. Every violation names the offending field path.

namespace schema {

inline std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }
inline std::string at(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

[[noreturn]] inline void violation(const std::string& path, const std::string& what) {
  fail(ErrorCode::SchemaViolation, (path.empty() ? std::string("<root>") : path) + ": " + what);
}

inline void expect_object(const Json& j, const std::string& path) {
  if (!j.is_object()) violation(path, "expected an object");
}

inline void reject_unknown(const Json& j, std::initializer_list<const char*> allowed, const std::string& path) {
  expect_object(j, path);
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) violation(join(path, key), "unknown key");
  }
}

inline const Json& require(const Json& j, const char* key, const std::string& path) {
  const auto it = j.find(key);
  if (it == j.end()) violation(join(path, key), "missing required field");
  return *it;
}

inline double number(const Json& j, const std::string& path) {
  if (!j.is_number()) violation(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) violation(path, "expected a finite number");
  return v;
}

inline std::int64_t integer(const Json& j, const std::string& path) {
  if (j.is_number_integer()) return j.get<std::int64_t>();
  if (j.is_number_float()) {
    const double v = j.get<double>();
    if (std::floor(v) == v && std::abs(v) < 9e15) return static_cast<std::int64_t>(v);
  }
  violation(path, "expected an integer");
}

inline std::uint64_t unsigned_integer(const Json& j, const std::string& path) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  const std::int64_t v = integer(j, path);
  if (v < 0) violation(path, "expected a non-negative integer");
  return static_cast<std::uint64_t>(v);
}

inline std::string string(const Json& j, const std::string& path) {
  if (!j.is_string()) violation(path, "expected a string");
  return j.get<std::string>();
}

inline bool boolean(const Json& j, const std::string& path) {
  if (!j.is_boolean()) violation(path, "expected true or false");
  return j.get<bool>();
}

template <int N>
Eigen::Matrix<double, N, 1> vector(const Json& j, const std::string& path) {
  if (!j.is_array() || j.size() != N) violation(path, "expected an array of " + std::to_string(N) + " numbers");
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) v(i) = number(j[static_cast<std::size_t>(i)], at(path, static_cast<std::size_t>(i)));
  return v;
}

inline Quaternion quaternion(const Json& j, const std::string& path) {
  const Eigen::Vector4d v = vector<4>(j, path);
  const Quaternion q{v(0), v(1), v(2), v(3)};
  if (std::abs(q.norm() - 1.0) > kUnitTolerance) violation(path, "quaternion is not unit norm");
  return q;
}

/// Runs a validate() and reports its failure as a schema violation at `path`.
template <class F>
void checked(const std::string& path, F&& validate) {
  try {
    validate();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::SchemaViolation) throw;
    violation(path, e.what());
  }
}

}  // namespace schema

inline Json vec_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }
inline Json quat_json(const Quaternion& q) { return Json::array({q.w, q.x, q.y, q.z}); }

// ---------------------------------------------------------------------------
// Camera and keypoint model

inline Json camera_to_json(const CameraIntrinsics& c) {
  return Json{{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}, {"width", c.width}, {"height", c.height}};
}

inline CameraIntrinsics camera_from_json(const Json& j, const std::string& path = "") {
  using namespace schema;
  reject_unknown(j, {"fx", "fy", "cx", "cy", "width", "height"}, path);
  CameraIntrinsics c;
  c.fx = number(require(j, "fx", path), join(path, "fx"));
  c.fy = number(require(j, "fy", path), join(path, "fy"));
  c.cx = number(require(j, "cx", path), join(path, "cx"));
  c.cy = number(require(j, "cy", path), join(path, "cy"));
  c.width = static_cast<int>(integer(require(j, "width", path), join(path, "width")));
  c.height = static_cast<int>(integer(require(j, "height", path), join(path, "height")));
  checked(path, [&] { c.validate(); });
  return c;
}

inline Json model_to_json(const KeypointModel& m) {
  Json pts = Json::array();
  for (const auto& p : m.points()) pts.push_back(vec_json(p));
  return Json{{"points", pts}};
}

inline KeypointModel model_from_json(const Json& j, const std::string& path = "") {
  using namespace schema;
  reject_unknown(j, {"points"}, path);
  const Json& pts = require(j, "points", path);
  const std::string ppath = join(path, "points");
  if (!pts.is_array()) violation(ppath, "expected an array of 3-vectors");
  std::vector<Vec3> points;
  for (std::size_t i = 0; i < pts.size(); ++i) points.push_back(vector<3>(pts[i], at(ppath, i)));
  try {
    return KeypointModel(std::move(points));
  } catch (const Error& e) {
    violation(ppath, e.what());
  }
}

inline CameraIntrinsics load_camera(const std::filesystem::path& p) { return camera_from_json(read_json_file(p)); }
inline KeypointModel load_model(const std::filesystem::path& p) { return model_from_json(read_json_file(p)); }

// ---------------------------------------------------------------------------
// Dataset manifest. Label field names follow the SPEED+ convention: the
// scalar-first quaternion and the camera-frame translation in metres.

inline constexpr const char* kQuatKey = "q_vbs2tango_true";
inline constexpr const char* kTransKey = "r_Vo2To_vbs_true";

struct ManifestEntry {
  std::string id;
  std::optional<Quaternion> quaternion;
  std::optional<Vec3> translation;
  std::optional<std::string> heatmap_file;

  bool labelled() const { return quaternion.has_value(); }
  Pose pose() const {
    if (!labelled()) fail(ErrorCode::SchemaViolation, "entry " + id + " has no pose label");
    return Pose::from_quaternion(*quaternion, *translation);
  }
  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::string camera_file;
  std::string model_file;
  std::vector<ManifestEntry> entries;
  /// Directory relative paths resolve against (not serialised).
  std::filesystem::path base_dir;

  const ManifestEntry& entry(const std::string& id) const {
    for (const auto& e : entries)
      if (e.id == id) return e;
    fail(ErrorCode::IdMismatch, "no manifest entry with id " + id);
  }
  std::filesystem::path resolve(const std::string& rel) const {
    const std::filesystem::path p(rel);
    return p.is_absolute() ? p : base_dir / p;
  }
  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& e : entries) out.push_back(e.id);
    return out;
  }
  std::vector<LabelledPose> ground_truth() const {
    std::vector<LabelledPose> out;
    for (const auto& e : entries)
      if (e.labelled()) out.push_back({e.id, e.pose()});
    return out;
  }
  CameraIntrinsics camera() const { return load_camera(resolve(camera_file)); }
  KeypointModel model() const { return load_model(resolve(model_file)); }

  bool operator==(const DatasetManifest& o) const {
    return camera_file == o.camera_file && model_file == o.model_file && entries == o.entries;
  }
};

inline Json manifest_to_json(const DatasetManifest& m) {
  Json entries = Json::array();
  for (const auto& e : m.entries) {
    Json j{{"id", e.id}};
    if (e.quaternion) j[kQuatKey] = quat_json(*e.quaternion);
    if (e.translation) j[kTransKey] = vec_json(*e.translation);
    if (e.heatmap_file) j["heatmap_file"] = *e.heatmap_file;
    entries.push_back(std::move(j));
  }
  return Json{{"camera", m.camera_file}, {"model", m.model_file}, {"entries", entries}};
}

inline DatasetManifest manifest_from_json(const Json& j) {
  using namespace schema;
  reject_unknown(j, {"camera", "model", "entries"}, "");
  DatasetManifest m;
  m.camera_file = string(require(j, "camera", ""), "camera");
  m.model_file = string(require(j, "model", ""), "model");
  const Json& entries = require(j, "entries", "");
  if (!entries.is_array()) violation("entries", "expected an array");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::string path = at("entries", i);
    const Json& e = entries[i];
    reject_unknown(e, {"id", kQuatKey, kTransKey, "heatmap_file"}, path);
    ManifestEntry me;
    me.id = string(require(e, "id", path), join(path, "id"));
    if (me.id.empty()) violation(join(path, "id"), "id must not be empty");
    if (!seen.insert(me.id).second) violation(join(path, "id"), "duplicate id " + me.id);
    const bool has_q = e.contains(kQuatKey), has_t = e.contains(kTransKey);
    if (has_q != has_t)
      violation(join(path, has_q ? kTransKey : kQuatKey), "quaternion and translation must both be present or absent");
    if (has_q) {
      me.quaternion = quaternion(e[kQuatKey], join(path, kQuatKey));
      me.translation = vector<3>(e[kTransKey], join(path, kTransKey));
    }
    if (e.contains("heatmap_file")) me.heatmap_file = string(e["heatmap_file"], join(path, "heatmap_file"));
    m.entries.push_back(std::move(me));
  }
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  DatasetManifest m = manifest_from_json(read_json_file(path));
  m.base_dir = path.parent_path();
  return m;
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  write_file_atomic(path, to_json_text(manifest_to_json(m)));
}

// ---------------------------------------------------------------------------
// Pose lists and pseudo-labels

inline Json pose_entry_json(const std::string& id, const Pose& pose) {
  return Json{{"id", id}, {kQuatKey, quat_json(pose.quaternion())}, {kTransKey, vec_json(pose.translation)}};
}

inline Json labels_to_json(const PseudoLabelStore& store) {
  Json labels = Json::array();
  for (std::size_t j = 0; j < store.size(); ++j) {
    const auto& l = store.label(j);
    if (!l) continue;
    Json e = pose_entry_json(store.ids()[j], l->pose);
    e["iteration"] = l->iteration;
    e["head"] = l->head;
    e["inliers"] = l->inliers;
    e["response"] = l->response;
    Json heads = Json::array();
    for (const auto& h : l->heads)
      heads.push_back(Json{{"converged", h.converged},
                           {"kept", h.kept},
                           {"inliers", h.inliers},
                           {"response", h.response},
                           {"mean_reproj_error", h.mean_reproj_error}});
    e["heads"] = std::move(heads);
    labels.push_back(std::move(e));
  }
  return Json{{"total", store.size()}, {"labelled", store.labelled_count()}, {"labels", labels}};
}

inline void save_labels(const PseudoLabelStore& store, const std::filesystem::path& path) {
  write_file_atomic(path, to_json_text(labels_to_json(store)));
}

/// A pseudo-label read back from a labels file.
struct StoredLabel {
  std::string id;
  Pose pose;
  int iteration = 0;
  std::size_t head = 0;
  std::size_t inliers = 0;
  double response = 0.0;
  std::vector<HeadDiagnostics> heads;
};

inline std::vector<StoredLabel> labels_from_json(const Json& j) {
  using namespace schema;
  reject_unknown(j, {"total", "labelled", "labels"}, "");
  const Json& labels = require(j, "labels", "");
  if (!labels.is_array()) violation("labels", "expected an array");
  std::vector<StoredLabel> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::string path = at("labels", i);
    const Json& e = labels[i];
    reject_unknown(e, {"id", kQuatKey, kTransKey, "iteration", "head", "inliers", "response", "heads"}, path);
    StoredLabel s;
    s.id = string(require(e, "id", path), join(path, "id"));
    s.pose = Pose::from_quaternion(quaternion(require(e, kQuatKey, path), join(path, kQuatKey)),
                                   vector<3>(require(e, kTransKey, path), join(path, kTransKey)));
    s.iteration = static_cast<int>(integer(require(e, "iteration", path), join(path, "iteration")));
    s.head = unsigned_integer(require(e, "head", path), join(path, "head"));
    s.inliers = unsigned_integer(require(e, "inliers", path), join(path, "inliers"));
    s.response = number(require(e, "response", path), join(path, "response"));
    const Json& heads = require(e, "heads", path);
    if (!heads.is_array()) violation(join(path, "heads"), "expected an array");
    for (std::size_t h = 0; h < heads.size(); ++h) {
      const std::string hp = at(join(path, "heads"), h);
      reject_unknown(heads[h], {"converged", "kept", "inliers", "response", "mean_reproj_error"}, hp);
      HeadDiagnostics d;
      d.converged = boolean(require(heads[h], "converged", hp), join(hp, "converged"));
      d.kept = unsigned_integer(require(heads[h], "kept", hp), join(hp, "kept"));
      d.inliers = unsigned_integer(require(heads[h], "inliers", hp), join(hp, "inliers"));
      d.response = number(require(heads[h], "response", hp), join(hp, "response"));
      d.mean_reproj_error = number(require(heads[h], "mean_reproj_error", hp), join(hp, "mean_reproj_error"));
      s.heads.push_back(d);
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Poses from a manifest ("entries", labelled entries only), a labels file
/// ("labels") or a plain list {"poses": [{id, q, r}]} as printed by `pnp`.
inline std::vector<LabelledPose> poses_from_json(const Json& j) {
  using namespace schema;
  expect_object(j, "");
  if (j.contains("entries")) return manifest_from_json(j).ground_truth();
  if (j.contains("labels")) {
    std::vector<LabelledPose> out;
    for (auto& s : labels_from_json(j)) out.push_back({s.id, s.pose});
    return out;
  }
  reject_unknown(j, {"poses"}, "");
  const Json& poses = require(j, "poses", "");
  if (!poses.is_array()) violation("poses", "expected an array");
  std::vector<LabelledPose> out;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const std::string path = at("poses", i);
    reject_unknown(poses[i], {"id", kQuatKey, kTransKey, "converged", "inliers", "mean_reproj_error"}, path);
    out.push_back({string(require(poses[i], "id", path), join(path, "id")),
                   Pose::from_quaternion(quaternion(require(poses[i], kQuatKey, path), join(path, kQuatKey)),
                                         vector<3>(require(poses[i], kTransKey, path), join(path, kTransKey)))});
  }
  return out;
}

inline std::vector<LabelledPose> load_poses(const std::filesystem::path& p) { return poses_from_json(read_json_file(p)); }

// ---------------------------------------------------------------------------
// Reports

inline Json score_report_to_json(const ScoreReport& r) {
  Json per = Json::array();
  for (const auto& s : r.per_image)
    per.push_back(Json{{"id", s.id}, {"s_pos", s.s_pos}, {"s_ori", s.s_ori}, {"s_total", s.s_total}});
  return Json{{"per_image", per},
              {"mean_pos", r.mean_pos},
              {"mean_ori", r.mean_ori},
              {"mean_total", r.mean_total},
              {"count", r.count}};
}

inline Json loss_report_to_json(const LossReport& r) {
  Json heads = Json::array();
  for (const auto& h : r.per_head)
    heads.push_back(Json{{"heatmap_loss", h.heatmap}, {"pnp_loss", h.pnp}, {"structure_loss", h.structure}});
  return Json{{"heatmap_loss", r.heatmap_loss},
              {"pnp_loss", r.pnp_loss},
              {"structure_loss", r.structure_loss},
              {"total", r.total},
              {"weights", Json{{"gamma1", r.weights.gamma1}, {"gamma2", r.weights.gamma2}, {"beta", r.weights.beta}}},
              {"per_head", heads}};
}

inline Json pose_to_json(const Pose& p) {
  return Json{{kQuatKey, quat_json(p.quaternion())}, {kTransKey, vec_json(p.translation)}};
}

// ---------------------------------------------------------------------------
// Acceptance curve CSV

inline constexpr const char* kCurveHeader = "iteration,labelled,total,fraction,reproj_threshold";

inline std::string shortest(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string curve_to_csv(const std::vector<AcceptanceRow>& rows) {
  std::string out = std::string(kCurveHeader) + "\n";
  for (const auto& r : rows)
    out += std::to_string(r.iteration) + "," + std::to_string(r.labelled) + "," + std::to_string(r.total) + "," +
           shortest(r.fraction) + "," + shortest(r.reproj_threshold) + "\n";
  return out;
}

inline std::vector<AcceptanceRow> curve_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCurveHeader) fail(ErrorCode::ParseError, "acceptance CSV: bad header");
  std::vector<AcceptanceRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 5) fail(ErrorCode::ParseError, "acceptance CSV line " + std::to_string(lineno) + ": expected 5 fields");
    AcceptanceRow r;
    try {
      r.iteration = std::stoi(f[0]);
      r.labelled = std::stoull(f[1]);
      r.total = std::stoull(f[2]);
      r.fraction = std::stod(f[3]);
      r.reproj_threshold = std::stod(f[4]);
    } catch (const std::exception&) {
      fail(ErrorCode::ParseError, "acceptance CSV line " + std::to_string(lineno) + ": malformed number");
    }
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Run configuration

struct SynthConfig {
  CameraIntrinsics camera = desk_camera();
  PoseRanges ranges;
};

struct RunConfig {
  std::uint64_t seed = 0;
  HeatmapConfig heatmap;
  FilterConfig filter;
  RansacConfig ransac;
  LoopConfig loop;
  LossWeights loss;
  SynthConfig synth;
  OracleConfig oracle;

  /// Seeds of the individual components, all derived from `seed`.
  std::uint64_t synth_seed() const { return mix_seed(seed, 1); }
  std::uint64_t loop_seed() const { return mix_seed(seed, 2); }
  std::uint64_t oracle_seed() const { return mix_seed(seed, 3); }

  /// Loop configuration with the shared RANSAC/filter sections and seed.
  LoopConfig effective_loop() const {
    LoopConfig l = loop;
    l.ransac = ransac;
    l.filter = filter;
    l.seed = loop_seed();
    return l;
  }
  OracleConfig effective_oracle() const {
    OracleConfig o = oracle;
    o.seed = oracle_seed();
    return o;
  }
};

inline Json run_config_to_json(const RunConfig& c) {
  Json schedule = Json::array();
  for (const auto& e : c.loop.reproj_schedule)
    schedule.push_back(Json{{"iteration", e.iteration}, {"reproj_threshold", e.reproj_threshold}});
  return Json{
      {"seed", c.seed},
      {"heatmap", Json{{"sigma", c.heatmap.sigma}, {"beta", c.heatmap.beta}, {"temperature", c.heatmap.temperature}}},
      {"filter", Json{{"edge_margin", c.filter.edge_margin}, {"keep_count", c.filter.keep_count}}},
      {"ransac", Json{{"confidence", c.ransac.confidence},
                      {"reproj_threshold", c.ransac.reproj_threshold},
                      {"max_iterations", c.ransac.max_iterations},
                      {"min_inliers", c.ransac.min_inliers}}},
      {"loop", Json{{"iterations", c.loop.iterations},
                    {"retrain_epochs", c.loop.retrain_epochs},
                    {"reproj_schedule", schedule}}},
      {"loss", Json{{"gamma1", c.loss.gamma1}, {"gamma2", c.loss.gamma2}, {"beta", c.loss.beta}}},
      {"synth", Json{{"camera", camera_to_json(c.synth.camera)},
                     {"translation_min", vec_json(c.synth.ranges.t_min)},
                     {"translation_max", vec_json(c.synth.ranges.t_max)},
                     {"border_margin", c.synth.ranges.border_margin}}},
      {"oracle", Json{{"heads", c.oracle.heads},
                      {"sigma_px", c.oracle.sigma_px},
                      {"sigma_floor", c.oracle.sigma_floor},
                      {"anneal_rate", c.oracle.anneal_rate},
                      {"difficulty_min", c.oracle.difficulty_min},
                      {"difficulty_max", c.oracle.difficulty_max},
                      {"outlier_probability", c.oracle.outlier_probability},
                      {"depth_noise", c.oracle.depth_noise},
                      {"unconvergeable_fraction", c.oracle.unconvergeable_fraction},
                      {"off_grid", c.oracle.off_grid}}},
  };
}

/// Every section and field is optional; absent values keep their defaults.
inline RunConfig run_config_from_json(const Json& j) {
  using namespace schema;
  RunConfig c;
  reject_unknown(j, {"seed", "heatmap", "filter", "ransac", "loop", "loss", "synth", "oracle"}, "");
  const auto opt = [](const Json& obj, const char* key) -> const Json* {
    const auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
  };
  if (auto* v = opt(j, "seed")) c.seed = unsigned_integer(*v, "seed");
  if (auto* s = opt(j, "heatmap")) {
    reject_unknown(*s, {"sigma", "beta", "temperature"}, "heatmap");
    if (auto* v = opt(*s, "sigma")) c.heatmap.sigma = number(*v, "heatmap.sigma");
    if (auto* v = opt(*s, "beta")) c.heatmap.beta = number(*v, "heatmap.beta");
    if (auto* v = opt(*s, "temperature")) c.heatmap.temperature = number(*v, "heatmap.temperature");
    checked("heatmap", [&] { c.heatmap.validate(); });
  }
  if (auto* s = opt(j, "filter")) {
    reject_unknown(*s, {"edge_margin", "keep_count"}, "filter");
    if (auto* v = opt(*s, "edge_margin")) c.filter.edge_margin = number(*v, "filter.edge_margin");
    if (auto* v = opt(*s, "keep_count")) c.filter.keep_count = static_cast<int>(integer(*v, "filter.keep_count"));
    checked("filter", [&] { c.filter.validate(); });
  }
  if (auto* s = opt(j, "ransac")) {
    reject_unknown(*s, {"confidence", "reproj_threshold", "max_iterations", "min_inliers"}, "ransac");
    if (auto* v = opt(*s, "confidence")) c.ransac.confidence = number(*v, "ransac.confidence");
    if (auto* v = opt(*s, "reproj_threshold")) c.ransac.reproj_threshold = number(*v, "ransac.reproj_threshold");
    if (auto* v = opt(*s, "max_iterations"))
      c.ransac.max_iterations = static_cast<int>(integer(*v, "ransac.max_iterations"));
    if (auto* v = opt(*s, "min_inliers")) c.ransac.min_inliers = static_cast<int>(integer(*v, "ransac.min_inliers"));
    checked("ransac", [&] { c.ransac.validate(); });
  }
  if (auto* s = opt(j, "loop")) {
    reject_unknown(*s, {"iterations", "retrain_epochs", "reproj_schedule"}, "loop");
    if (auto* v = opt(*s, "iterations")) c.loop.iterations = static_cast<int>(integer(*v, "loop.iterations"));
    if (auto* v = opt(*s, "retrain_epochs"))
      c.loop.retrain_epochs = static_cast<int>(integer(*v, "loop.retrain_epochs"));
    if (auto* v = opt(*s, "reproj_schedule")) {
      if (!v->is_array()) violation("loop.reproj_schedule", "expected an array");
      for (std::size_t i = 0; i < v->size(); ++i) {
        const std::string path = at("loop.reproj_schedule", i);
        reject_unknown((*v)[i], {"iteration", "reproj_threshold"}, path);
        c.loop.reproj_schedule.push_back(
            {static_cast<int>(integer(require((*v)[i], "iteration", path), join(path, "iteration"))),
             number(require((*v)[i], "reproj_threshold", path), join(path, "reproj_threshold"))});
      }
    }
    checked("loop", [&] { c.loop.validate(); });
  }
  if (auto* s = opt(j, "loss")) {
    reject_unknown(*s, {"gamma1", "gamma2", "beta"}, "loss");
    if (auto* v = opt(*s, "gamma1")) c.loss.gamma1 = number(*v, "loss.gamma1");
    if (auto* v = opt(*s, "gamma2")) c.loss.gamma2 = number(*v, "loss.gamma2");
    if (auto* v = opt(*s, "beta")) c.loss.beta = number(*v, "loss.beta");
    checked("loss", [&] { c.loss.validate(); });
  }
  if (auto* s = opt(j, "synth")) {
    reject_unknown(*s, {"camera", "translation_min", "translation_max", "border_margin"}, "synth");
    if (auto* v = opt(*s, "camera")) c.synth.camera = camera_from_json(*v, "synth.camera");
    if (auto* v = opt(*s, "translation_min")) c.synth.ranges.t_min = vector<3>(*v, "synth.translation_min");
    if (auto* v = opt(*s, "translation_max")) c.synth.ranges.t_max = vector<3>(*v, "synth.translation_max");
    if (auto* v = opt(*s, "border_margin")) c.synth.ranges.border_margin = number(*v, "synth.border_margin");
    checked("synth", [&] { c.synth.ranges.validate(); });
  }
  if (auto* s = opt(j, "oracle")) {
    reject_unknown(*s,
                   {"heads", "sigma_px", "sigma_floor", "anneal_rate", "difficulty_min", "difficulty_max",
                    "outlier_probability", "depth_noise", "unconvergeable_fraction", "off_grid"},
                   "oracle");
    if (auto* v = opt(*s, "heads")) c.oracle.heads = static_cast<int>(integer(*v, "oracle.heads"));
    if (auto* v = opt(*s, "sigma_px")) c.oracle.sigma_px = number(*v, "oracle.sigma_px");
    if (auto* v = opt(*s, "sigma_floor")) c.oracle.sigma_floor = number(*v, "oracle.sigma_floor");
    if (auto* v = opt(*s, "anneal_rate")) c.oracle.anneal_rate = number(*v, "oracle.anneal_rate");
    if (auto* v = opt(*s, "difficulty_min")) c.oracle.difficulty_min = number(*v, "oracle.difficulty_min");
    if (auto* v = opt(*s, "difficulty_max")) c.oracle.difficulty_max = number(*v, "oracle.difficulty_max");
    if (auto* v = opt(*s, "outlier_probability"))
      c.oracle.outlier_probability = number(*v, "oracle.outlier_probability");
    if (auto* v = opt(*s, "depth_noise")) c.oracle.depth_noise = number(*v, "oracle.depth_noise");
    if (auto* v = opt(*s, "unconvergeable_fraction"))
      c.oracle.unconvergeable_fraction = number(*v, "oracle.unconvergeable_fraction");
    if (auto* v = opt(*s, "off_grid")) c.oracle.off_grid = boolean(*v, "oracle.off_grid");
    checked("oracle", [&] { c.oracle.validate(); });
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& p) { return run_config_from_json(read_json_file(p)); }

// ---------------------------------------------------------------------------
// Synthetic datasets

inline std::string synth_id(std::size_t j) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img%05zu", j);
  return buf;
}

/// Writes camera.json, model.json, manifest.json and one HMAP1 file per
/// image (one head, heatmaps and depth maps) into `out_dir`.
inline DatasetManifest synth_dataset(std::size_t count, const RunConfig& cfg, const std::filesystem::path& out_dir) {
  if (count < 1) fail(ErrorCode::InvalidRange, "dataset count must be >= 1");
  cfg.synth.ranges.validate();
  cfg.synth.camera.validate();
  const CameraIntrinsics& cam = cfg.synth.camera;
  const KeypointModel model = default_keypoint_model();
  std::mt19937_64 rng(cfg.synth_seed());

  DatasetManifest m;
  m.camera_file = "camera.json";
  m.model_file = "model.json";
  m.base_dir = out_dir;
  write_file_atomic(out_dir / m.camera_file, to_json_text(camera_to_json(cam)));
  write_file_atomic(out_dir / m.model_file, to_json_text(model_to_json(model)));
  for (std::size_t j = 0; j < count; ++j) {
    const Pose pose = sample_pose(rng, model, cam, cfg.synth.ranges);
    ManifestEntry e;
    e.id = synth_id(j);
    e.quaternion = pose.quaternion();
    e.translation = pose.translation;
    e.heatmap_file = "heatmaps/" + e.id + ".hmap";
    // Render from the stored (quaternion) pose so files and labels agree exactly.
    const Pose stored = e.pose();
    const std::vector<Vec2> px = project(model.points(), stored, cam);
    const std::vector<double> z = keypoint_depths(model, stored);
    write_file_atomic(out_dir / *e.heatmap_file, encode_hmap({render_head(px, z, cfg.heatmap, cam.width, cam.height)}));
    m.entries.push_back(std::move(e));
  }
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

/// Replays network outputs stored as HMAP1 files listed in a manifest.
class FilePredictor : public Predictor {
 public:
  explicit FilePredictor(DatasetManifest manifest) : manifest_(std::move(manifest)) {
    for (const auto& e : manifest_.entries)
      if (!e.heatmap_file) fail(ErrorCode::SchemaViolation, "entry " + e.id + " has no heatmap_file");
    heads_ = manifest_.entries.empty() ? 0 : predict(manifest_.entries.front().id).size();
  }

  std::size_t head_count() const override { return heads_; }

  std::vector<HeadOutput> predict(const std::string& id) const override {
    return read_hmap_file(manifest_.resolve(*manifest_.entry(id).heatmap_file).string());
  }

  void retrain(const PseudoLabelStore&, int) override {}

 private:
  DatasetManifest manifest_;
  std::size_t heads_ = 0;
};

}  // namespace spose
