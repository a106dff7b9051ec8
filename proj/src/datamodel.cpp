// SPDX-License-Identifier: Apache-2.0
#include "gazenet/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace gazenet {

namespace {

using nlohmann::json;

Vec3 vec3_from_json(const json& j, const char* field) {
  if (!j.is_array() || j.size() != 3) {
    throw ParseError(std::string(field) + ": expected an array of 3 numbers");
  }
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) throw ParseError(std::string(field) + ": non-numeric entry");
    v[i] = j[i].get<double>();
  }
  if (!v.allFinite()) throw ParseError(std::string(field) + ": non-finite value");
  return v;
}

json vec3_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

const json& require(const json& j, const char* field) {
  auto it = j.find(field);
  if (it == j.end()) throw ParseError(std::string("missing field '") + field + "'");
  return *it;
}

bool flag_or_true(const json& flags, const char* name) {
  auto it = flags.find(name);
  if (it == flags.end()) return true;
  if (!it->is_boolean()) throw ParseError(std::string("flags.") + name + ": expected boolean");
  return it->get<bool>();
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string to_string(TargetKind kind) {
  return kind == TargetKind::ContinuousScreen ? "CS" : "FT";
}

std::string to_string(HeadKind kind) { return kind == HeadKind::Static ? "static" : "moving"; }

TargetKind parse_target_kind(const std::string& text) {
  if (text == "CS") return TargetKind::ContinuousScreen;
  if (text == "FT") return TargetKind::FloatingTarget;
  throw ParseError("unknown target kind '" + text + "' (expected CS or FT)");
}

HeadKind parse_head_kind(const std::string& text) {
  if (text == "static" || text == "S") return HeadKind::Static;
  if (text == "moving" || text == "M") return HeadKind::Moving;
  throw ParseError("unknown head kind '" + text + "' (expected static or moving)");
}

std::string FrameKey::to_string() const {
  std::ostringstream os;
  os << subject_id << '/' << gazenet::to_string(session.target_kind) << '-'
     << gazenet::to_string(session.head_kind) << '-' << session.lighting_id << '/'
     << frame_index;
  return os.str();
}

FrameKey key_of(const FrameRecord& record) {
  return {record.subject_id, record.session, record.frame_index};
}

IntrinsicsTable load_intrinsics_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open intrinsics table: " + path.string());
  IntrinsicsTable table;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("camera_id", 0) == 0) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    std::string id;
    CameraInfo info;
    if (!(fields >> id >> info.intrinsics.fx >> info.intrinsics.fy >> info.intrinsics.cx >>
          info.intrinsics.cy >> info.size.width >> info.size.height)) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": expected camera_id,fx,fy,cx,cy,width,height");
    }
    try {
      info.intrinsics.validate();
    } catch (const std::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!table.emplace(id, info).second) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": duplicate camera_id '" +
                       id + "'");
    }
  }
  return table;
}

void write_intrinsics_table(const std::filesystem::path& path, const IntrinsicsTable& table) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write intrinsics table: " + path.string());
  out.precision(17);
  out << "camera_id,fx,fy,cx,cy,width,height\n";
  for (const auto& [id, info] : table) {
    out << id << ',' << info.intrinsics.fx << ',' << info.intrinsics.fy << ','
        << info.intrinsics.cx << ',' << info.intrinsics.cy << ',' << info.size.width << ','
        << info.size.height << '\n';
  }
}

json record_to_json(const FrameRecord& r) {
  json j;
  j["subject_id"] = r.subject_id;
  j["session"] = {{"target_kind", to_string(r.session.target_kind)},
                  {"head_kind", to_string(r.session.head_kind)},
                  {"lighting_id", r.session.lighting_id}};
  j["frame_index"] = r.frame_index;
  j["image_ref"] = r.image_ref.generic_string();
  j["camera_id"] = r.camera_id;
  json rot = json::array();
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) rot.push_back(r.head.rotation(i, k));
  }
  j["head"] = {{"rotation", rot}, {"position", vec3_to_json(r.head.position)}};
  j["eye_left"] = vec3_to_json(r.eye_left);
  j["eye_right"] = vec3_to_json(r.eye_right);
  json lm = json::array();
  for (const auto& l : r.landmarks) lm.push_back(vec3_to_json(l));
  j["landmarks"] = std::move(lm);
  if (r.gaze_target) j["gaze_target"] = vec3_to_json(*r.gaze_target);
  if (r.gaze) j["gaze"] = vec3_to_json(*r.gaze);
  j["flags"] = {{"face_detected", r.flags.face_detected},
                {"landmarks_detected", r.flags.landmarks_detected},
                {"looking_at_target", r.flags.looking_at_target},
                {"geometry_recovered", r.flags.geometry_recovered}};
  return j;
}

FrameRecord record_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("expected a JSON object");
  FrameRecord r;
  r.subject_id = require(j, "subject_id").get<std::string>();
  if (r.subject_id.empty()) throw ParseError("subject_id must be nonempty");
  const json& s = require(j, "session");
  r.session.target_kind = parse_target_kind(require(s, "target_kind").get<std::string>());
  r.session.head_kind = parse_head_kind(require(s, "head_kind").get<std::string>());
  r.session.lighting_id = s.value("lighting_id", std::string("A"));
  r.frame_index = require(j, "frame_index").get<std::int64_t>();
  r.image_ref = require(j, "image_ref").get<std::string>();
  r.camera_id = require(j, "camera_id").get<std::string>();

  const json& head = require(j, "head");
  const json& rot = require(head, "rotation");
  if (!rot.is_array() || rot.size() != 9) {
    throw ParseError("head.rotation: expected 9 numbers (row-major 3x3)");
  }
  for (int i = 0; i < 9; ++i) r.head.rotation(i / 3, i % 3) = rot[i].get<double>();
  r.head.position = vec3_from_json(require(head, "position"), "head.position");

  r.eye_left = vec3_from_json(require(j, "eye_left"), "eye_left");
  r.eye_right = vec3_from_json(require(j, "eye_right"), "eye_right");

  const json& lm = require(j, "landmarks");
  if (!lm.is_array() || lm.size() != kNumLandmarks) {
    throw ParseError("landmark count " + std::to_string(lm.is_array() ? lm.size() : 0) +
                     ", expected " + std::to_string(kNumLandmarks));
  }
  for (int i = 0; i < kNumLandmarks; ++i) r.landmarks[i] = vec3_from_json(lm[i], "landmarks[i]");

  if (auto it = j.find("gaze_target"); it != j.end() && !it->is_null()) {
    r.gaze_target = vec3_from_json(*it, "gaze_target");
  }
  if (auto it = j.find("gaze"); it != j.end() && !it->is_null()) {
    r.gaze = vec3_from_json(*it, "gaze");
  }
  if (auto it = j.find("flags"); it != j.end()) {
    r.flags.face_detected = flag_or_true(*it, "face_detected");
    r.flags.landmarks_detected = flag_or_true(*it, "landmarks_detected");
    r.flags.looking_at_target = flag_or_true(*it, "looking_at_target");
    r.flags.geometry_recovered = flag_or_true(*it, "geometry_recovered");
  }

  try {
    r.head.validate();
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("head: ") + e.what());
  }
  if ((r.eye_left - r.eye_right).norm() < 1e-9) {
    throw ParseError("eye centers must be distinct");
  }
  return r;
}

std::vector<FrameRecord> load_manifest(const std::filesystem::path& path,
                                       const IntrinsicsTable& cameras) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  const auto base = path.parent_path();
  std::vector<FrameRecord> records;
  std::map<std::pair<std::string, SessionInfo>, std::int64_t> last_index;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    FrameRecord r;
    try {
      r = record_from_json(json::parse(line));
    } catch (const json::exception& e) {
      throw ParseError(where + e.what());
    } catch (const ParseError& e) {
      throw ParseError(where + e.what());
    }
    if (!cameras.contains(r.camera_id)) {
      throw ParseError(where + "unknown camera_id '" + r.camera_id + "'");
    }
    auto [it, inserted] = last_index.try_emplace({r.subject_id, r.session}, r.frame_index);
    if (!inserted) {
      if (r.frame_index <= it->second) {
        throw ParseError(where + "frame_index " + std::to_string(r.frame_index) +
                         " not increasing within session");
      }
      it->second = r.frame_index;
    }
    if (r.image_ref.is_relative()) r.image_ref = base / r.image_ref;
    records.push_back(std::move(r));
  }
  return records;
}

void write_manifest(const std::filesystem::path& path, std::span<const FrameRecord> records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest: " + path.string());
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

Vec3 compute_gt_gaze(const FrameRecord& record) {
  if (record.gaze_target) {
    const Vec3 origin = 0.5 * (record.eye_left + record.eye_right);
    const Vec3 d = *record.gaze_target - origin;
    const double n = d.norm();
    if (!(n > 1e-12)) throw Error("gaze target coincides with the eye midpoint");
    return d / n;
  }
  if (record.gaze) {
    const double n = record.gaze->norm();
    if (!(n > 1e-12)) throw Error("precomputed gaze has zero length");
    return *record.gaze / n;
  }
  throw Error("record has neither gaze_target nor gaze");
}

// --------------------------------------------------------------------------

std::string to_string(RejectReason reason) {
  switch (reason) {
    case RejectReason::FaceNotDetected: return "face";
    case RejectReason::LandmarksNotDetected: return "landmarks";
    case RejectReason::NotLookingAtTarget: return "not-looking";
    case RejectReason::GeometryNotRecovered: return "geometry";
    case RejectReason::MissingGeometry: return "missing-geometry";
    case RejectReason::EyeballConstraint: return "eyeball-constraint";
  }
  return "unknown";
}

std::optional<RejectReason> rejection_reason(const FrameRecord& r, const FilterConfig& config) {
  if (!r.flags.face_detected) return RejectReason::FaceNotDetected;
  if (!r.flags.landmarks_detected) return RejectReason::LandmarksNotDetected;
  if (!r.flags.looking_at_target) return RejectReason::NotLookingAtTarget;
  if (!r.flags.geometry_recovered) return RejectReason::GeometryNotRecovered;

  Vec3 gaze;
  Mat3 frame;
  try {
    gaze = compute_gt_gaze(r);
    if (config.frame == ConstraintFrame::Head) {
      frame = r.head.rotation.transpose();
    } else {
      frame = compute_normalizing_rotation(r.head);
    }
  } catch (const std::exception&) {
    return RejectReason::MissingGeometry;
  }
  Vec3 local = frame * gaze;
  if (config.frame == ConstraintFrame::Head && config.forward_sign > 0) {
    local = Vec3(-local.x(), local.y(), -local.z());
  }
  if (!(local.z() < 0.0)) return RejectReason::EyeballConstraint;
  const GazeAngles a = gaze_to_angles(local);
  if (std::abs(rad2deg(a.theta)) > config.max_theta_deg ||
      std::abs(rad2deg(a.phi)) > config.max_phi_deg) {
    return RejectReason::EyeballConstraint;
  }
  return std::nullopt;
}

FilterResult filter_frames(std::vector<FrameRecord> records, const FilterConfig& config) {
  FilterResult result;
  for (auto& r : records) {
    if (auto reason = rejection_reason(r, config)) {
      result.rejected.emplace_back(std::move(r), *reason);
    } else {
      result.kept.push_back(std::move(r));
    }
  }
  return result;
}

// --------------------------------------------------------------------------

FacePatch build_face_patch(const FrameRecord& record, const ImageU8& image,
                           const CameraIntrinsics& camera, const PatchConfig& config) {
  HeadPose pose = record.head;
  pose.position = record.head.position + config.face_offset * config.head_forward(record.head);
  FacePatch patch;
  patch.transform = build_normalization(pose, config.face_distance, camera, config.face_camera(),
                                        config.face_size);
  patch.image = to_u8(warp_image(image, patch.transform));
  return patch;
}

EyePatches build_eye_patches(const FrameRecord& record, const ImageU8& image,
                             const CameraIntrinsics& camera, const PatchConfig& config) {
  EyePatches out;
  const CameraIntrinsics eye_cam = config.eye_camera();
  HeadPose pose = record.head;
  pose.position = record.eye_right;
  out.right_transform =
      build_normalization(pose, config.eye_distance, camera, eye_cam, config.eye_size);
  pose.position = record.eye_left;
  out.left_transform =
      build_normalization(pose, config.eye_distance, camera, eye_cam, config.eye_size);
  out.right = to_u8(warp_image(image, out.right_transform));
  out.left = to_u8(warp_image(image, out.left_transform));
  return out;
}

ImageU8 build_eyes_patch(const FrameRecord& record, const ImageU8& image,
                         const CameraIntrinsics& camera, const PatchConfig& config) {
  const EyePatches eyes = build_eye_patches(record, image, camera, config);
  const int ox = (config.eye_size.width - kFinalEyeWidth) / 2;
  const int oy = (config.eye_size.height - kFinalEyeHeight) / 2;
  return hconcat(crop(eyes.right, ox, oy, kFinalEyeWidth, kFinalEyeHeight),
                 crop(eyes.left, ox, oy, kFinalEyeWidth, kFinalEyeHeight));
}

std::vector<float> landmark_feature(const Landmarks& landmarks, const Mat3& rotation, double w) {
  std::array<Vec3, kNumLandmarks> rotated;
  Vec3 mean = Vec3::Zero();
  for (int i = 0; i < kNumLandmarks; ++i) {
    rotated[i] = rotation * landmarks[i];
    mean += rotated[i];
  }
  mean /= kNumLandmarks;
  std::vector<float> feature(kLandmarkFeatureDim);
  for (int axis = 0; axis < 3; ++axis) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (auto& p : rotated) {
      p[axis] -= mean[axis];
      lo = std::min(lo, p[axis]);
      hi = std::max(hi, p[axis]);
    }
    const double range = hi - lo;
    for (int i = 0; i < kNumLandmarks; ++i) {
      double v = range > 1e-12 ? w * (rotated[i][axis] - lo) / range : 0.5 * w;
      feature[3 * i + axis] = static_cast<float>(std::clamp(v, 0.0, w));
    }
  }
  return feature;
}

NormalizedSample normalize_frame(const FrameRecord& record, const ImageU8& image,
                                 const CameraIntrinsics& camera, const PatchConfig& config) {
  NormalizedSample s;
  s.key = key_of(record);
  FacePatch face = build_face_patch(record, image, camera, config);
  s.face_patch = std::move(face.image);
  s.rotation = face.transform.rotation;
  s.eyes_patch = build_eye_patches(record, image, camera, config).joint();
  s.landmark_feature = landmark_feature(record.landmarks, s.rotation, config.landmark_scale);
  s.gaze = compute_gt_gaze(record);
  s.label = gaze_to_angles(normalize_gaze(s.gaze, s.rotation));
  s.head = record.head;
  return s;
}

ImageLoader disk_image_loader() {
  return [](const FrameRecord& r) { return read_png(r.image_ref); };
}

std::vector<NormalizedSample> normalize_frames(std::span<const FrameRecord> records,
                                               const IntrinsicsTable& cameras,
                                               const ImageLoader& loader,
                                               const PatchConfig& config) {
  std::vector<NormalizedSample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    auto it = cameras.find(r.camera_id);
    if (it == cameras.end()) throw Error("unknown camera_id '" + r.camera_id + "'");
    out.push_back(normalize_frame(r, loader(r), it->second.intrinsics, config));
  }
  return out;
}

// --------------------------------------------------------------------------

std::vector<std::size_t> window_starts(std::span<const std::int64_t> idx, int length, int stride) {
  if (length < 1 || stride < 1) throw std::invalid_argument("window length and stride must be >= 1");
  std::vector<std::size_t> starts;
  std::size_t run_begin = 0;
  for (std::size_t i = 1; i <= idx.size(); ++i) {
    if (i == idx.size() || idx[i] != idx[i - 1] + 1) {
      const std::size_t run_len = i - run_begin;
      for (std::size_t s = run_begin; run_len >= static_cast<std::size_t>(length) &&
                                      s + length <= i;
           s += stride) {
        starts.push_back(s);
      }
      run_begin = i;
    }
  }
  return starts;
}

std::vector<SequenceWindow> make_windows(std::span<const NormalizedSample> samples, int length,
                                         int stride) {
  std::vector<SequenceWindow> windows;
  std::size_t begin = 0;
  for (std::size_t i = 1; i <= samples.size(); ++i) {
    const bool boundary = i == samples.size() ||
                          samples[i].key.subject_id != samples[begin].key.subject_id ||
                          samples[i].key.session != samples[begin].key.session;
    if (!boundary) continue;
    std::vector<std::int64_t> idx;
    for (std::size_t k = begin; k < i; ++k) idx.push_back(samples[k].key.frame_index);
    for (std::size_t s : window_starts(idx, length, stride)) {
      SequenceWindow w;
      for (int k = 0; k < length; ++k) w.samples.push_back(begin + s + k);
      w.target = samples[w.samples.back()].label;
      windows.push_back(std::move(w));
    }
    begin = i;
  }
  return windows;
}

// --------------------------------------------------------------------------

std::vector<std::string> FoldPlan::subjects_in(int fold) const {
  std::vector<std::string> out;
  for (const auto& [s, f] : groups) {
    if (f == fold) out.push_back(s);
  }
  return out;
}

std::vector<std::string> FoldPlan::subjects_outside(int fold) const {
  std::vector<std::string> out;
  for (const auto& [s, f] : groups) {
    if (f != fold) out.push_back(s);
  }
  return out;
}

FoldPlan plan_folds(std::vector<std::string> subjects, FoldMode mode, int k) {
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
  if (subjects.empty()) throw std::invalid_argument("plan_folds: no subjects");
  FoldPlan plan;
  plan.mode = mode;
  switch (mode) {
    case FoldMode::LeaveOneSubjectOut:
      plan.k = static_cast<int>(subjects.size());
      break;
    case FoldMode::KFold:
      if (k < 1 || k > static_cast<int>(subjects.size())) {
        throw std::invalid_argument("plan_folds: k must be in [1, #subjects]");
      }
      plan.k = k;
      break;
    case FoldMode::Explicit:
      throw std::invalid_argument("plan_folds: use plan_folds_explicit for explicit groups");
  }
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    plan.groups[subjects[i]] = static_cast<int>(i % plan.k);
  }
  return plan;
}

FoldPlan plan_folds_explicit(std::span<const std::pair<std::string, int>> assignment) {
  if (assignment.empty()) throw std::invalid_argument("explicit fold plan is empty");
  FoldPlan plan;
  plan.mode = FoldMode::Explicit;
  int max_fold = -1;
  for (const auto& [subject, fold] : assignment) {
    if (fold < 0) throw std::invalid_argument("fold index must be non-negative");
    if (!plan.groups.emplace(subject, fold).second) {
      throw std::invalid_argument("duplicate subject in fold groups: " + subject);
    }
    max_fold = std::max(max_fold, fold);
  }
  plan.k = max_fold + 1;
  for (int f = 0; f < plan.k; ++f) {
    if (plan.subjects_in(f).empty()) {
      throw std::invalid_argument("fold " + std::to_string(f) + " has no subjects");
    }
  }
  return plan;
}

FoldPlan load_group_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open group file: " + path.string());
  std::vector<std::pair<std::string, int>> assignment;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    std::string subject;
    int fold = -1;
    if (!(fields >> subject >> fold)) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": expected 'subject_id fold_index'");
    }
    assignment.emplace_back(subject, fold);
  }
  return plan_folds_explicit(assignment);
}

std::vector<std::string> unique_subjects(std::span<const FrameRecord> records) {
  std::set<std::string> s;
  for (const auto& r : records) s.insert(r.subject_id);
  return {s.begin(), s.end()};
}

}  // namespace gazenet
