// SPDX-License-Identifier: Apache-2.0
//
// Camera-space conventions used throughout the library:
//   camera frame: x right, y down, z forward (into the scene), meters;
//   head frame:   x toward the camera's +x for a frontal face, y down, and the
//                 face looks along -z;
//   pixels:       integer coordinates address pixel centers.
#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "gazenet/image.hpp"

namespace gazenet {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = 3.14159265358979323846;
inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Pinhole intrinsics with zero skew.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  Mat3 matrix() const;
  Mat3 inverse() const;
  /// Throws std::invalid_argument unless fx, fy > 0 and all values finite.
  void validate() const;
  /// Pixel location of a camera-space point. Caller ensures z > 0.
  Eigen::Vector2d project(const Vec3& point) const;

  /// Camera with focal length `focal` and the principal point at the center of
  /// an image of `size` (pixel-center convention).
  static CameraIntrinsics centered(double focal, ImageSize size);
};

struct HeadPose {
  Mat3 rotation = Mat3::Identity();  ///< head -> camera
  Vec3 position = Vec3(0.0, 0.0, 0.6);  ///< reference location in camera space

  /// Head x-axis expressed in camera coordinates.
  Vec3 x_axis() const { return rotation.col(0); }
  void validate(double tolerance = 1e-6) const;
};

struct NormalizationTransform {
  Mat3 rotation;    ///< R: camera -> virtual camera
  Mat3 scaling;     ///< S = diag(1, 1, d_n / |p|)
  Mat3 conversion;  ///< M = S R
  Mat3 warp;        ///< original pixels -> normalized pixels, C_n M C_o^-1
  double distance = 0.0;
  CameraIntrinsics camera;  ///< virtual camera C_n
  ImageSize out_size;
};

struct GazeAngles {
  double theta = 0.0;  ///< horizontal, radians
  double phi = 0.0;    ///< vertical, radians
};

Mat3 rotation_x(double radians);
Mat3 rotation_y(double radians);
Mat3 rotation_z(double radians);
/// Head rotation from yaw (about y), pitch (about x) and roll (about z), in
/// radians; applied as Ry * Rx * Rz.
Mat3 head_rotation(double yaw, double pitch, double roll);

/// Rotation whose z-axis points at the reference location and whose x-axis is
/// parallel to the head x-axis projected onto the image plane (roll removed).
/// Throws DegeneratePoseError when the head x-axis is parallel to the viewing ray.
Mat3 compute_normalizing_rotation(const HeadPose& pose);

NormalizationTransform build_normalization(const HeadPose& pose, double distance,
                                           const CameraIntrinsics& original,
                                           const CameraIntrinsics& normalized,
                                           ImageSize out_size);

/// Inverse-maps every output pixel through `original_to_output` and samples
/// the source bilinearly; pixels mapping outside the source are black.
template <typename T>
Image warp_perspective(const BasicImage<T>& source, const Mat3& original_to_output,
                       ImageSize out_size);

template <typename T>
Image warp_image(const BasicImage<T>& source, const NormalizationTransform& transform) {
  return warp_perspective(source, transform.warp, transform.out_size);
}

Vec3 normalize_gaze(const Vec3& gaze, const Mat3& rotation);
Vec3 denormalize_gaze(const Vec3& gaze_normalized, const Mat3& rotation);

/// theta = atan(g_x / g_z), phi = asin(-g_y). Requires g_z < 0.
GazeAngles gaze_to_angles(const Vec3& gaze);
Vec3 angles_to_gaze(const GazeAngles& angles);

/// Degrees in [0, 180].
double angular_error(const Vec3& a, const Vec3& b);

/// Euclidean distance between angles_to_gaze(angles) and `target`, with its
/// gradient with respect to (theta, phi). The gradient is zero at distance 0.
template <typename T>
T gaze_distance(T theta, T phi, const Vec3& target, T* d_theta, T* d_phi);

/// Mean Euclidean distance between predicted gaze and normalized labels.
/// When `gradient` is non-null it receives d(loss)/d(pred_i) per item.
double gaze_loss(std::span<const GazeAngles> predicted, std::span<const Vec3> labels_normalized,
                 std::vector<GazeAngles>* gradient = nullptr);

}  // namespace gazenet
