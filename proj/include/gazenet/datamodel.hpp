// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gazenet/errors.hpp"
#include "gazenet/geometry.hpp"
#include "gazenet/image.hpp"

namespace gazenet {

inline constexpr int kNumLandmarks = 68;
inline constexpr int kLandmarkFeatureDim = 3 * kNumLandmarks;

enum class TargetKind { ContinuousScreen, FloatingTarget };
enum class HeadKind { Static, Moving };

std::string to_string(TargetKind kind);  // "CS" / "FT"
std::string to_string(HeadKind kind);    // "static" / "moving"
TargetKind parse_target_kind(const std::string& text);
HeadKind parse_head_kind(const std::string& text);

struct SessionInfo {
  TargetKind target_kind = TargetKind::FloatingTarget;
  HeadKind head_kind = HeadKind::Static;
  std::string lighting_id = "A";

  auto operator<=>(const SessionInfo&) const = default;
  bool operator==(const SessionInfo&) const = default;
};

struct FrameFlags {
  bool face_detected = true;
  bool landmarks_detected = true;
  bool looking_at_target = true;
  bool geometry_recovered = true;
  bool operator==(const FrameFlags&) const = default;
};

using Landmarks = std::array<Vec3, kNumLandmarks>;

struct FrameRecord {
  std::string subject_id;
  SessionInfo session;
  std::int64_t frame_index = 0;
  std::filesystem::path image_ref;
  std::string camera_id;
  HeadPose head;
  Vec3 eye_left = Vec3::Zero();   ///< eyeball center, camera space, meters
  Vec3 eye_right = Vec3::Zero();
  Landmarks landmarks{};
  std::optional<Vec3> gaze_target;
  std::optional<Vec3> gaze;  ///< precomputed unit gaze in camera space
  FrameFlags flags;
};

/// Identifies a frame across the whole dataset.
struct FrameKey {
  std::string subject_id;
  SessionInfo session;
  std::int64_t frame_index = 0;

  auto operator<=>(const FrameKey&) const = default;
  bool operator==(const FrameKey&) const = default;
  std::string to_string() const;
};

FrameKey key_of(const FrameRecord& record);

struct CameraInfo {
  CameraIntrinsics intrinsics;
  ImageSize size;
};

using IntrinsicsTable = std::map<std::string, CameraInfo>;

/// CSV with header `camera_id,fx,fy,cx,cy,width,height`.
IntrinsicsTable load_intrinsics_table(const std::filesystem::path& path);
void write_intrinsics_table(const std::filesystem::path& path, const IntrinsicsTable& table);

nlohmann::json record_to_json(const FrameRecord& record);
/// Throws ParseError describing the first schema violation.
FrameRecord record_from_json(const nlohmann::json& j);

/// One JSON object per line. Relative image_ref paths are resolved against the
/// manifest's directory. Errors carry "<file>:<line>:" prefixes.
std::vector<FrameRecord> load_manifest(const std::filesystem::path& path,
                                       const IntrinsicsTable& cameras);
void write_manifest(const std::filesystem::path& path, std::span<const FrameRecord> records);

/// Unit vector from the eyeball-center midpoint toward the gaze target, or the
/// precomputed gaze when no target is present.
Vec3 compute_gt_gaze(const FrameRecord& record);

// --------------------------------------------------------------------------
// Filtering

enum class RejectReason {
  FaceNotDetected,
  LandmarksNotDetected,
  NotLookingAtTarget,
  GeometryNotRecovered,
  MissingGeometry,
  EyeballConstraint,
};

std::string to_string(RejectReason reason);

enum class ConstraintFrame { Head, Normalized };

struct FilterConfig {
  double max_theta_deg = 40.0;
  double max_phi_deg = 30.0;
  ConstraintFrame frame = ConstraintFrame::Head;
  int forward_sign = -1;  ///< see PatchConfig::forward_sign
};

struct FilterResult {
  std::vector<FrameRecord> kept;
  std::vector<std::pair<FrameRecord, RejectReason>> rejected;
};

/// First failing rule for a record, if any.
std::optional<RejectReason> rejection_reason(const FrameRecord& record,
                                             const FilterConfig& config = {});
FilterResult filter_frames(std::vector<FrameRecord> records, const FilterConfig& config = {});

// --------------------------------------------------------------------------
// Patch construction

struct PatchConfig {
  double face_distance = 0.6;
  double face_offset = 0.1;  ///< meters ahead of the head center
  /// Sign of the head z-axis that points out of the face. -1: the face looks
  /// along the head's -z axis. Shared with the head baseline.
  int forward_sign = -1;
  ImageSize face_size{250, 250};
  double face_focal = 700.0;
  double eye_distance = 0.6;
  ImageSize eye_size{70, 58};
  double eye_focal = 1000.0;
  double landmark_scale = 1.0;  ///< w: landmark features lie in [0, w]
  ConstraintFrame constraint_frame = ConstraintFrame::Head;

  CameraIntrinsics face_camera() const { return CameraIntrinsics::centered(face_focal, face_size); }
  CameraIntrinsics eye_camera() const { return CameraIntrinsics::centered(eye_focal, eye_size); }
  Vec3 head_forward(const HeadPose& pose) const {
    return pose.rotation * Vec3(0.0, 0.0, static_cast<double>(forward_sign));
  }
};

inline constexpr int kFinalFaceSize = 224;
inline constexpr int kFinalEyeWidth = 60;
inline constexpr int kFinalEyeHeight = 48;

struct FacePatch {
  ImageU8 image;
  NormalizationTransform transform;
};

FacePatch build_face_patch(const FrameRecord& record, const ImageU8& image,
                           const CameraIntrinsics& camera, const PatchConfig& config = {});

struct EyePatches {
  ImageU8 right;  ///< subject's right eye; left half of the joint image
  ImageU8 left;
  NormalizationTransform right_transform;
  NormalizationTransform left_transform;

  /// Both pre-crop halves side by side (right eye first).
  ImageU8 joint() const { return hconcat(right, left); }
};

EyePatches build_eye_patches(const FrameRecord& record, const ImageU8& image,
                             const CameraIntrinsics& camera, const PatchConfig& config = {});

/// Final 120x48 joint eyes image: each half center-cropped to 60x48.
ImageU8 build_eyes_patch(const FrameRecord& record, const ImageU8& image,
                         const CameraIntrinsics& camera, const PatchConfig& config = {});

/// Landmarks rotated into the virtual frame, mean-subtracted and min-max scaled
/// per axis to [0, w]; flattened as (x, y, z) per landmark. A degenerate axis
/// maps to w / 2.
std::vector<float> landmark_feature(const Landmarks& landmarks, const Mat3& rotation, double w);

struct NormalizedSample {
  FrameKey key;
  ImageU8 face_patch;  ///< pre-crop face image (250x250)
  ImageU8 eyes_patch;  ///< pre-crop joint eyes image (two 70x58 halves)
  std::vector<float> landmark_feature;
  GazeAngles label;
  Mat3 rotation = Mat3::Identity();  ///< R of the face normalization
  Vec3 gaze = Vec3(0.0, 0.0, -1.0);  ///< ground-truth gaze in camera space
  HeadPose head;
};

NormalizedSample normalize_frame(const FrameRecord& record, const ImageU8& image,
                                 const CameraIntrinsics& camera, const PatchConfig& config = {});

using ImageLoader = std::function<ImageU8(const FrameRecord&)>;
ImageLoader disk_image_loader();

/// Normalizes every record, in input order.
std::vector<NormalizedSample> normalize_frames(std::span<const FrameRecord> records,
                                               const IntrinsicsTable& cameras,
                                               const ImageLoader& loader,
                                               const PatchConfig& config = {});

// --------------------------------------------------------------------------
// Sequences

struct SequenceWindow {
  std::vector<std::size_t> samples;  ///< indices into the sample list, oldest first
  GazeAngles target;
};

/// Start positions of windows of length `length` over runs of consecutive
/// frame indices (gap of exactly 1). Positions index into `frame_indices`.
std::vector<std::size_t> window_starts(std::span<const std::int64_t> frame_indices, int length,
                                       int stride = 1);

/// Samples must be sorted by key; windows never span sessions or index gaps.
std::vector<SequenceWindow> make_windows(std::span<const NormalizedSample> samples, int length,
                                         int stride = 1);

// --------------------------------------------------------------------------
// Folds

enum class FoldMode { KFold, LeaveOneSubjectOut, Explicit };

struct FoldPlan {
  int k = 0;
  FoldMode mode = FoldMode::KFold;
  std::map<std::string, int> groups;  ///< subject -> fold

  std::vector<std::string> subjects_in(int fold) const;
  std::vector<std::string> subjects_outside(int fold) const;
};

/// Round-robin assignment over subjects sorted lexicographically.
FoldPlan plan_folds(std::vector<std::string> subjects, FoldMode mode, int k = 0);
FoldPlan plan_folds_explicit(std::span<const std::pair<std::string, int>> assignment);
/// Lines of `subject_id fold_index` (whitespace or comma separated).
FoldPlan load_group_file(const std::filesystem::path& path);

std::vector<std::string> unique_subjects(std::span<const FrameRecord> records);

}  // namespace gazenet
