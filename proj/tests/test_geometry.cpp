// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gazenet/errors.hpp"
#include "gazenet/geometry.hpp"
#include "test_util.hpp"

using namespace gazenet;
using namespace gazenet::testing;

namespace {

// Independent construction by Gram-Schmidt: z at p-hat, x from the head x-axis
// with its z component removed, y completing a right-handed frame.
Mat3 oracle_rotation(const HeadPose& pose) {
  const Vec3 z = pose.position.normalized();
  const Vec3 hx = pose.rotation.col(0);
  const Vec3 x = (hx - hx.dot(z) * z).normalized();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.row(0) = x.transpose();
  r.row(1) = y.transpose();
  r.row(2) = z.transpose();
  return r;
}

Eigen::Vector2d apply_h(const Mat3& h, const Eigen::Vector2d& p) {
  const Vec3 q = h * Vec3(p.x(), p.y(), 1.0);
  return q.head<2>() / q.z();
}

}  // namespace

TEST(NormalizingRotation, IdentityPose) {
  HeadPose pose;
  pose.position = Vec3(0, 0, 0.6);
  EXPECT_TRUE(compute_normalizing_rotation(pose).isApprox(Mat3::Identity(), 1e-12));
}

TEST(NormalizingRotation, PureRollIsUndone) {
  const double a = deg2rad(30.0);
  HeadPose pose;
  pose.rotation << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  pose.position = Vec3(0, 0, 0.6);
  Mat3 expected;  // rotation by -30 degrees about z, written out by hand
  expected << std::cos(a), std::sin(a), 0, -std::sin(a), std::cos(a), 0, 0, 0, 1;
  const Mat3 r = compute_normalizing_rotation(pose);
  EXPECT_LT((r - expected).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((r * pose.x_axis() - Vec3::UnitX()).norm(), 1e-12);
}

TEST(NormalizingRotation, MatchesGramSchmidtOracle) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 2000; ++i) {
    const HeadPose pose = random_pose(rng);
    const Mat3 r = compute_normalizing_rotation(pose);
    ASSERT_LT((r - oracle_rotation(pose)).cwiseAbs().maxCoeff(), 1e-9) << "pose " << i;
  }
}

TEST(NormalizingRotation, InvariantsOverRandomPoses) {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 2000; ++i) {
    const HeadPose pose = random_pose(rng);
    const Mat3 r = compute_normalizing_rotation(pose);
    EXPECT_LT((r * pose.position.normalized() - Vec3::UnitZ()).norm(), 1e-9);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-9);
    EXPECT_LT((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_NEAR((r * pose.x_axis()).y(), 0.0, 1e-9);
  }
}

TEST(NormalizingRotation, DegeneratePoseThrows) {
  HeadPose pose;
  pose.position = Vec3(0.6, 0, 0);  // viewing ray along the head x-axis
  EXPECT_THROW(compute_normalizing_rotation(pose), DegeneratePoseError);
}

TEST(BuildNormalization, IdentityCase) {
  HeadPose pose;
  pose.position = Vec3(0, 0, 0.6);
  const CameraIntrinsics unit{1, 1, 0, 0};
  const auto t = build_normalization(pose, 0.6, unit, unit, {10, 10});
  EXPECT_LT((t.warp - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(BuildNormalization, ScalingFromDistance) {
  HeadPose pose;
  pose.position = Vec3(0, 0, 1.2);
  const auto t = build_normalization(pose, 0.6, {600, 600, 320, 240}, {700, 700, 124.5, 124.5},
                                     {250, 250});
  EXPECT_LT((t.scaling - Vec3(1, 1, 0.5).asDiagonal().toDenseMatrix()).cwiseAbs().maxCoeff(),
            1e-12);
  EXPECT_LT((t.conversion - t.scaling * t.rotation).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR((t.conversion * pose.position).norm(), 0.6, 1e-9);
}

TEST(BuildNormalization, HomographyMatchesProjectionOracle) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const HeadPose pose = random_pose(rng);
    const CameraIntrinsics co = random_intrinsics(rng);
    const CameraIntrinsics cn = random_intrinsics(rng);
    const double dn = uniform(rng, 0.3, 1.0);
    const auto t = build_normalization(pose, dn, co, cn, {250, 250});
    for (int k = 0; k < 20; ++k) {
      const Vec3 x = pose.position + Vec3(uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2),
                                          uniform(rng, -0.2, 0.2));
      const Vec3 xn = t.conversion * x;
      if (x.z() <= 0.05 || xn.z() <= 0.05) continue;
      // Brute force: project each point with plain pinhole arithmetic.
      const Eigen::Vector2d po(co.fx * x.x() / x.z() + co.cx, co.fy * x.y() / x.z() + co.cy);
      const Eigen::Vector2d pn(cn.fx * xn.x() / xn.z() + cn.cx, cn.fy * xn.y() / xn.z() + cn.cy);
      ASSERT_LT((apply_h(t.warp, po) - pn).norm(), 1e-6);
    }
  }
}

TEST(WarpImage, IdentityIsBitExact) {
  std::mt19937_64 rng(3);
  ImageU8 img(37, 23, 3);
  for (auto& v : img.values()) v = static_cast<std::uint8_t>(rng() & 0xff);
  const ImageU8 out = to_u8(warp_perspective(img, Mat3::Identity(), img.size()));
  EXPECT_TRUE(out == img);
}

TEST(WarpImage, TranslationShiftsAndFillsBlack) {
  ImageU8 img(20, 10, 1);
  for (int y = 0; y < 10; ++y) {
    for (int x = 0; x < 20; ++x) img.at(x, y, 0) = static_cast<std::uint8_t>(10 + x + 20 * y);
  }
  Mat3 h = Mat3::Identity();
  h(0, 2) = 3.0;
  h(1, 2) = 2.0;
  const ImageU8 out = to_u8(warp_perspective(img, h, img.size()));
  for (int y = 0; y < 10; ++y) {
    for (int x = 0; x < 20; ++x) {
      const int sx = x - 3, sy = y - 2;
      const int expected = (sx >= 0 && sy >= 0) ? img.at(sx, sy, 0) : 0;
      ASSERT_EQ(out.at(x, y, 0), expected) << x << "," << y;
    }
  }
}

TEST(WarpImage, SingularHomographyThrows) {
  ImageU8 img(4, 4, 1);
  EXPECT_THROW(warp_perspective(img, Mat3::Zero(), img.size()), Error);
}

TEST(WarpImage, ProjectedDotGridLandsAtOraclePositions) {
  const CameraIntrinsics co{600, 600, 319.5, 239.5};
  HeadPose pose;
  pose.rotation = head_rotation(deg2rad(15), deg2rad(-10), deg2rad(20));
  pose.position = Vec3(0.05, -0.03, 0.65);
  const auto t = build_normalization(pose, 0.6, co, CameraIntrinsics::centered(700, {250, 250}),
                                     {250, 250});
  // Gaussian blobs at the projections of a planar 3D dot grid.
  std::vector<Vec3> dots;
  for (int i = -2; i <= 2; ++i) {
    for (int j = -2; j <= 2; ++j) {
      dots.push_back(pose.position + pose.rotation * Vec3(0.025 * i, 0.025 * j, -0.1));
    }
  }
  Image img(640, 480, 1);
  const double sigma = 1.5;
  for (const auto& d : dots) {
    const auto p = co.project(d);
    for (int y = static_cast<int>(p.y()) - 8; y <= static_cast<int>(p.y()) + 8; ++y) {
      for (int x = static_cast<int>(p.x()) - 8; x <= static_cast<int>(p.x()) + 8; ++x) {
        const double r2 = (x - p.x()) * (x - p.x()) + (y - p.y()) * (y - p.y());
        img.at(x, y, 0) += static_cast<float>(std::exp(-r2 / (2 * sigma * sigma)));
      }
    }
  }
  const Image out = warp_image(img, t);
  for (const auto& d : dots) {
    const Vec3 dn = t.conversion * d;
    const Eigen::Vector2d expected(t.camera.fx * dn.x() / dn.z() + t.camera.cx,
                                   t.camera.fy * dn.y() / dn.z() + t.camera.cy);
    double sx = 0, sy = 0, sw = 0;
    for (int y = static_cast<int>(expected.y()) - 6; y <= static_cast<int>(expected.y()) + 6; ++y) {
      for (int x = static_cast<int>(expected.x()) - 6; x <= static_cast<int>(expected.x()) + 6;
           ++x) {
        const double w = out.at(x, y, 0);
        sx += w * x;
        sy += w * y;
        sw += w;
      }
    }
    ASSERT_GT(sw, 0.5);
    EXPECT_LT((Eigen::Vector2d(sx / sw, sy / sw) - expected).norm(), 0.5);
  }
}

TEST(GazeNormalization, IdentityRotation) {
  const Vec3 g = Vec3(0.1, -0.2, -0.9).normalized();
  EXPECT_LT((normalize_gaze(g, Mat3::Identity()) - g).norm(), 1e-15);
}

TEST(GazeNormalization, QuarterTurnAboutY) {
  Mat3 r;  // 90 degrees about y
  r << 0, 0, 1, 0, 1, 0, -1, 0, 0;
  const Vec3 g(0, 0, -1);
  const Vec3 expected(r(0, 2) * -1, r(1, 2) * -1, r(2, 2) * -1);
  EXPECT_LT((normalize_gaze(g, r) - expected).norm(), 1e-15);
  EXPECT_LT((normalize_gaze(g, r) - Vec3(-1, 0, 0)).norm(), 1e-15);
}

TEST(GazeNormalization, RoundTrip) {
  std::mt19937_64 rng(14);
  for (int i = 0; i < 1000; ++i) {
    const Mat3 r = random_rotation(rng);
    const Vec3 g = random_unit(rng);
    EXPECT_LT((denormalize_gaze(normalize_gaze(g, r), r) - g).norm(), 1e-9);
  }
}

TEST(GazeNormalization, RejectsNonUnit) {
  EXPECT_THROW(normalize_gaze(Vec3(0, 0, -2), Mat3::Identity()), std::invalid_argument);
  EXPECT_THROW(denormalize_gaze(Vec3(0, 0.1, -1), Mat3::Identity()), std::invalid_argument);
}

TEST(GazeAnglesTest, StraightAhead) {
  const auto a = gaze_to_angles(Vec3(0, 0, -1));
  EXPECT_EQ(a.theta, 0.0);
  EXPECT_EQ(a.phi, 0.0);
}

TEST(GazeAnglesTest, ThirtyDegreesUp) {
  const auto a = gaze_to_angles(Vec3(0, -0.5, -std::sqrt(0.75)));
  EXPECT_NEAR(a.theta, 0.0, 1e-12);
  EXPECT_NEAR(rad2deg(a.phi), 30.0, 1e-9);
  EXPECT_LT((angles_to_gaze(a) - Vec3(0, -0.5, -std::sqrt(0.75))).norm(), 1e-12);
}

TEST(GazeAnglesTest, RoundTripsAndUniqueness) {
  std::mt19937_64 rng(15);
  for (int i = 0; i < 5000; ++i) {
    const Vec3 g = random_toward_camera(rng, 1e-3);
    const auto a = gaze_to_angles(g);
    EXPECT_LT(std::abs(a.theta), kPi / 2);
    EXPECT_LT(std::abs(a.phi), kPi / 2);
    EXPECT_LT((angles_to_gaze(a) - g).norm(), 1e-9);
    const GazeAngles b{uniform(rng, -1.5, 1.5), uniform(rng, -1.5, 1.5)};
    const Vec3 v = angles_to_gaze(b);
    EXPECT_NEAR(v.norm(), 1.0, 1e-12);
    const auto back = gaze_to_angles(v);
    EXPECT_NEAR(back.theta, b.theta, 1e-9);
    EXPECT_NEAR(back.phi, b.phi, 1e-9);
  }
}

TEST(GazeAnglesTest, WrongHemisphereThrows) {
  EXPECT_THROW(gaze_to_angles(Vec3(0, 0, 1)), HemisphereError);
  EXPECT_THROW(gaze_to_angles(Vec3(1, 0, 0)), HemisphereError);
}

TEST(AngularError, Examples) {
  const Vec3 g = Vec3(0.3, -0.1, -0.9).normalized();
  EXPECT_EQ(angular_error(g, g), 0.0);
  EXPECT_NEAR(angular_error(g, -g), 180.0, 1e-9);
  const double s = std::sin(deg2rad(30)), c = std::cos(deg2rad(30));
  EXPECT_NEAR(angular_error(Vec3(0, 0, -1), Vec3(0, -s, -c)), 30.0, 1e-9);
}

TEST(AngularError, ChordIdentityAndRotationInvariance) {
  std::mt19937_64 rng(16);
  for (int i = 0; i < 5000; ++i) {
    const Vec3 u = random_unit(rng), v = random_unit(rng);
    const double e = angular_error(u, v);
    EXPECT_NEAR((u - v).norm(), 2.0 * std::sin(deg2rad(e) / 2.0), 1e-9);
    EXPECT_EQ(e, angular_error(v, u));
    const Mat3 r = random_rotation(rng);
    EXPECT_NEAR(angular_error(r * u, r * v), e, 1e-6);
  }
}

TEST(GazeLoss, Examples) {
  const GazeAngles a{0.2, -0.1};
  const Vec3 label = angles_to_gaze(a);
  EXPECT_NEAR(gaze_loss(std::vector{a}, std::vector{label}), 0.0, 1e-15);
  // Opposite direction: distance between diametric unit vectors.
  EXPECT_NEAR(gaze_loss(std::vector{GazeAngles{kPi, 0.0}}, std::vector{Vec3(0, 0, -1)}), 2.0,
              1e-12);
  const std::vector<GazeAngles> p{{0.1, 0.0}, {0.0, 0.3}};
  const std::vector<Vec3> l{Vec3(0, 0, -1), Vec3(0, 0, -1)};
  const double d1 = (angles_to_gaze(p[0]) - l[0]).norm();
  const double d2 = (angles_to_gaze(p[1]) - l[1]).norm();
  EXPECT_NEAR(gaze_loss(p, l), (d1 + d2) / 2.0, 1e-15);
  EXPECT_THROW(gaze_loss(std::vector<GazeAngles>{}, std::vector<Vec3>{}), std::invalid_argument);
}

TEST(GazeLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 200; ++i) {
    std::vector<GazeAngles> p(3);
    std::vector<Vec3> l(3);
    for (int k = 0; k < 3; ++k) {
      p[k] = {uniform(rng, -0.8, 0.8), uniform(rng, -0.6, 0.6)};
      l[k] = random_toward_camera(rng);
    }
    std::vector<GazeAngles> grad;
    gaze_loss(p, l, &grad);
    const double h = 1e-6;
    for (int k = 0; k < 3; ++k) {
      for (int c = 0; c < 2; ++c) {
        auto plus = p, minus = p;
        (c == 0 ? plus[k].theta : plus[k].phi) += h;
        (c == 0 ? minus[k].theta : minus[k].phi) -= h;
        const double fd = (gaze_loss(plus, l) - gaze_loss(minus, l)) / (2 * h);
        EXPECT_NEAR(c == 0 ? grad[k].theta : grad[k].phi, fd, 1e-6);
      }
    }
  }
}
