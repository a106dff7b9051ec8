// SPDX-License-Identifier: Apache-2.0
//
// Procedural face-card renderer with exact ground truth. Faces are flat cards
// in the head frame (z = -card_depth) carrying two elliptical eyes whose iris
// disks shift linearly with the eyeball-in-head gaze angles.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gazenet/datamodel.hpp"

namespace gazenet {

using Rgb = std::array<double, 3>;

/// Seed-derived appearance of one subject.
struct SubjectStyle {
  Rgb skin{0.85, 0.67, 0.55};
  Rgb iris{0.25, 0.16, 0.08};
  Rgb brow{0.20, 0.14, 0.10};
  Rgb lips{0.70, 0.35, 0.35};
  Rgb background{0.35, 0.40, 0.45};
  double eye_spacing = 0.064;  ///< distance between eyeball centers, meters
  double face_scale = 1.0;

  static SubjectStyle from_seed(std::uint64_t seed);
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  double sample(std::mt19937_64& rng) const;
  double mid() const { return 0.5 * (lo + hi); }
};

void to_json(nlohmann::json& j, const Range& r);
void from_json(const nlohmann::json& j, Range& r);

struct SceneParams {
  ImageSize image_size{640, 480};
  CameraIntrinsics camera{600.0, 600.0, 319.5, 239.5};
  // Head pose ranges, degrees and meters.
  Range yaw{-20.0, 20.0};
  Range pitch{-15.0, 15.0};
  Range roll{-10.0, 10.0};
  Range distance{0.5, 0.7};
  Range lateral{-0.08, 0.08};  ///< x/y offset of the head center, meters
  // Eyeball-in-head gaze ranges, degrees.
  Range theta{-25.0, 25.0};
  Range phi{-15.0, 15.0};
  Range target_distance{0.4, 1.2};  ///< along the gaze ray, meters
  double lighting = 1.0;
  /// Iris center displacement on the card per degree of eyeball rotation
  /// (meters). Defaults keep every iris center inside the eye ellipse over
  /// |theta| <= 40, |phi| <= 30.
  double iris_shift_x = 0.0003;
  double iris_shift_y = 0.0002;
  int supersample = 2;

  void validate() const;
};

void to_json(nlohmann::json& j, const SceneParams& p);
void from_json(const nlohmann::json& j, SceneParams& p);

/// Head-frame geometry of the card (meters).
struct FaceLayout {
  static constexpr double kCardDepth = 0.1;     ///< card plane at z = -kCardDepth
  static constexpr double kEyeballRadius = 0.012;
  static constexpr double kEyeY = -0.02;
  static constexpr double kEyeHalfWidth = 0.018;
  static constexpr double kEyeHalfHeight = 0.010;
  static constexpr double kIrisRadius = 0.005;
  static constexpr double kPupilRadius = 0.002;
};

/// 68 landmarks in the head frame for a style.
Landmarks landmark_template(const SubjectStyle& style);
/// Eyeball centers in the head frame: {right (image left), left}.
std::array<Vec3, 2> eyeball_centers_head(const SubjectStyle& style);

struct RenderOptions {
  bool blink = false;
  /// Mirrors the background gradient; pair with a mirrored pose and negated
  /// theta to render the horizontal flip of a scene.
  bool mirror = false;
  /// Render only this landmark as a small white sphere on black.
  std::optional<int> debug_landmark;
  double debug_radius = 0.0015;
};

struct RenderedFrame {
  ImageU8 image;
  FrameRecord record;
};

/// `gaze` holds eyeball-in-head angles (radians). The record carries camera
/// space geometry; image_ref and identifiers are left for the caller.
RenderedFrame render_frame(const SceneParams& scene, const SubjectStyle& style,
                           const HeadPose& pose, const GazeAngles& gaze, std::mt19937_64& rng,
                           const RenderOptions& options = {});

/// Iris center in pixels for one eye (0 = right/image-left, 1 = left).
Eigen::Vector2d iris_center_pixel(const SceneParams& scene, const SubjectStyle& style,
                                  const HeadPose& pose, const GazeAngles& gaze, int eye);

enum class TrajectoryKind { Fixation, SmoothPursuit, Saccade, Blink };

std::string to_string(TrajectoryKind kind);
TrajectoryKind parse_trajectory_kind(const std::string& text);

struct TrajectoryParams {
  TrajectoryKind kind = TrajectoryKind::SmoothPursuit;
  int duration = 150;             ///< frames per session
  double period = 60.0;           ///< smooth-pursuit / head-motion period, frames
  int fixation_frames = 20;       ///< mean dwell between saccades
  double blink_probability = 0.0;  ///< per frame; Blink kind defaults to 0.1 when 0
  int blink_length = 1;            ///< frames per blink event

  void validate() const;
};

void to_json(nlohmann::json& j, const TrajectoryParams& t);
void from_json(const nlohmann::json& j, TrajectoryParams& t);

struct TrajectoryFrame {
  GazeAngles gaze;  ///< eyeball-in-head, radians
  bool blink = false;
};

/// Eyeball-in-head gaze sequence within the scene's theta/phi ranges.
std::vector<TrajectoryFrame> make_trajectory(const TrajectoryParams& params,
                                             const SceneParams& scene, std::mt19937_64& rng);

struct DatasetSpec {
  int n_subjects = 4;
  int frames_per_subject = 50;
  /// One session per entry; frames are split evenly between sessions.
  std::vector<HeadKind> sessions{HeadKind::Static, HeadKind::Moving};
  SceneParams scene;
  TrajectoryParams trajectory;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const DatasetSpec& s);
void from_json(const nlohmann::json& j, DatasetSpec& s);

struct GeneratedDataset {
  std::filesystem::path manifest;
  std::filesystem::path intrinsics;
  std::vector<FrameRecord> records;
};

inline constexpr const char* kSynthCameraId = "synth";

/// Writes images, `manifest.jsonl` and `cameras.csv` under `out_dir`. Refuses
/// an existing non-empty directory unless `overwrite`.
GeneratedDataset generate_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir,
                                  bool overwrite = false);

}  // namespace gazenet
