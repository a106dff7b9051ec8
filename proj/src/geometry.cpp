// SPDX-License-Identifier: Apache-2.0
#include "gazenet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/LU>

#include "gazenet/errors.hpp"

namespace gazenet {

namespace {

void require_unit(const Vec3& v, const char* what) {
  if (!v.allFinite() || std::abs(v.norm() - 1.0) > 1e-6) {
    throw std::invalid_argument(std::string(what) + " must be a unit vector");
  }
}

}  // namespace

Mat3 CameraIntrinsics::matrix() const {
  Mat3 m;
  m << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return m;
}

Mat3 CameraIntrinsics::inverse() const {
  Mat3 m;
  m << 1.0 / fx, 0.0, -cx / fx, 0.0, 1.0 / fy, -cy / fy, 0.0, 0.0, 1.0;
  return m;
}

void CameraIntrinsics::validate() const {
  if (!(std::isfinite(fx) && std::isfinite(fy) && std::isfinite(cx) && std::isfinite(cy))) {
    throw std::invalid_argument("camera intrinsics must be finite");
  }
  if (!(fx > 0.0 && fy > 0.0)) {
    throw std::invalid_argument("camera focal lengths must be positive");
  }
}

Eigen::Vector2d CameraIntrinsics::project(const Vec3& point) const {
  return {fx * point.x() / point.z() + cx, fy * point.y() / point.z() + cy};
}

CameraIntrinsics CameraIntrinsics::centered(double focal, ImageSize size) {
  return {focal, focal, (size.width - 1) / 2.0, (size.height - 1) / 2.0};
}

void HeadPose::validate(double tolerance) const {
  if (!rotation.allFinite() || !position.allFinite()) {
    throw std::invalid_argument("head pose must be finite");
  }
  if ((rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() > tolerance) {
    throw std::invalid_argument("head rotation is not orthonormal");
  }
  if (std::abs(rotation.determinant() - 1.0) > tolerance) {
    throw std::invalid_argument("head rotation must have determinant +1");
  }
  if (!(position.norm() > 0.0)) {
    throw std::invalid_argument("head position must be nonzero");
  }
}

Mat3 rotation_x(double a) {
  return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix();
}
Mat3 rotation_y(double a) {
  return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix();
}
Mat3 rotation_z(double a) {
  return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix();
}

Mat3 head_rotation(double yaw, double pitch, double roll) {
  return rotation_y(yaw) * rotation_x(pitch) * rotation_z(roll);
}

Mat3 compute_normalizing_rotation(const HeadPose& pose) {
  pose.validate();
  const Vec3 forward = pose.position.normalized();
  const Vec3 down = forward.cross(pose.x_axis());
  const double n = down.norm();
  if (n < 1e-9) {
    throw DegeneratePoseError("head x-axis is parallel to the viewing ray");
  }
  const Vec3 y = down / n;
  const Vec3 x = y.cross(forward);
  Mat3 r;
  r.row(0) = x.transpose();
  r.row(1) = y.transpose();
  r.row(2) = forward.transpose();
  return r;
}

NormalizationTransform build_normalization(const HeadPose& pose, double distance,
                                           const CameraIntrinsics& original,
                                           const CameraIntrinsics& normalized,
                                           ImageSize out_size) {
  if (!(distance > 0.0) || !std::isfinite(distance)) {
    throw std::invalid_argument("normalization distance must be positive");
  }
  original.validate();
  normalized.validate();
  NormalizationTransform t;
  t.rotation = compute_normalizing_rotation(pose);
  t.scaling = Mat3::Identity();
  t.scaling(2, 2) = distance / pose.position.norm();
  t.conversion = t.scaling * t.rotation;
  t.warp = normalized.matrix() * t.conversion * original.inverse();
  t.distance = distance;
  t.camera = normalized;
  t.out_size = out_size;
  return t;
}

template <typename T>
Image warp_perspective(const BasicImage<T>& source, const Mat3& original_to_output,
                       ImageSize out_size) {
  if (source.empty()) throw std::invalid_argument("warp: empty source image");
  Eigen::FullPivLU<Mat3> lu(original_to_output);
  if (!lu.isInvertible()) throw Error("warp: homography is not invertible");
  const Mat3 inv = lu.inverse();

  const int channels = source.channels();
  Image out(out_size.width, out_size.height, channels);
  const double scale = std::is_same_v<T, std::uint8_t> ? 1.0 / 255.0 : 1.0;
  for (int v = 0; v < out_size.height; ++v) {
    for (int u = 0; u < out_size.width; ++u) {
      const Vec3 s = inv * Vec3(u, v, 1.0);
      if (!(s.z() > 0.0)) continue;
      const double x = s.x() / s.z();
      const double y = s.y() / s.z();
      for (int c = 0; c < channels; ++c) {
        out.at(u, v, c) = static_cast<float>(sample_bilinear(source, x, y, c) * scale);
      }
    }
  }
  return out;
}

template Image warp_perspective<float>(const Image&, const Mat3&, ImageSize);
template Image warp_perspective<std::uint8_t>(const ImageU8&, const Mat3&, ImageSize);

Vec3 normalize_gaze(const Vec3& gaze, const Mat3& rotation) {
  require_unit(gaze, "gaze");
  return rotation * gaze;
}

Vec3 denormalize_gaze(const Vec3& gaze_normalized, const Mat3& rotation) {
  require_unit(gaze_normalized, "normalized gaze");
  return rotation.transpose() * gaze_normalized;
}

GazeAngles gaze_to_angles(const Vec3& gaze) {
  if (!gaze.allFinite()) throw std::invalid_argument("gaze must be finite");
  if (!(gaze.z() < 0.0)) {
    throw HemisphereError("gaze points away from the camera (g_z >= 0)");
  }
  const Vec3 g = gaze.normalized();
  return {std::atan(g.x() / g.z()), std::asin(std::clamp(-g.y(), -1.0, 1.0))};
}

Vec3 angles_to_gaze(const GazeAngles& a) {
  const double cp = std::cos(a.phi);
  return {-cp * std::sin(a.theta), -std::sin(a.phi), -cp * std::cos(a.theta)};
}

double angular_error(const Vec3& a, const Vec3& b) {
  const double d = std::clamp(a.normalized().dot(b.normalized()), -1.0, 1.0);
  return rad2deg(std::acos(d));
}

template <typename T>
T gaze_distance(T theta, T phi, const Vec3& target, T* d_theta, T* d_phi) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const T st = sin(theta), ct = cos(theta), sp = sin(phi), cp = cos(phi);
  const T dx = -cp * st - T(target.x());
  const T dy = -sp - T(target.y());
  const T dz = -cp * ct - T(target.z());
  const T dist = sqrt(dx * dx + dy * dy + dz * dz);
  if (d_theta && d_phi) {
    if (dist > T(0)) {
      // dv/dtheta = (-cp ct, 0, cp st); dv/dphi = (sp st, -cp, sp ct)
      *d_theta = (dx * (-cp * ct) + dz * (cp * st)) / dist;
      *d_phi = (dx * (sp * st) + dy * (-cp) + dz * (sp * ct)) / dist;
    } else {
      *d_theta = T(0);
      *d_phi = T(0);
    }
  }
  return dist;
}

template float gaze_distance<float>(float, float, const Vec3&, float*, float*);
template double gaze_distance<double>(double, double, const Vec3&, double*, double*);

double gaze_loss(std::span<const GazeAngles> predicted, std::span<const Vec3> labels,
                 std::vector<GazeAngles>* gradient) {
  if (predicted.empty()) throw std::invalid_argument("gaze_loss: empty batch");
  if (predicted.size() != labels.size()) {
    throw std::invalid_argument("gaze_loss: batch size mismatch");
  }
  const double inv_n = 1.0 / static_cast<double>(predicted.size());
  if (gradient) gradient->assign(predicted.size(), {});
  double total = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    double gt = 0.0, gp = 0.0;
    total += gaze_distance(predicted[i].theta, predicted[i].phi, labels[i], &gt, &gp);
    if (gradient) (*gradient)[i] = {gt * inv_n, gp * inv_n};
  }
  return total * inv_n;
}

}  // namespace gazenet
