// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <set>
#include <sstream>

#include "gazenet/datamodel.hpp"
#include "gazenet/errors.hpp"
#include "gazenet/synthgen.hpp"
#include "synth_fixture.hpp"

using namespace gazenet;
using namespace gazenet::testing;
namespace fs = std::filesystem;

namespace {

using L = FaceLayout;

double luminance(const ImageU8& img, int u, int v) {
  return (img.at(u, v, 0) + img.at(u, v, 1) + img.at(u, v, 2)) / 3.0;
}

HeadPose frontal(double distance = 0.6) {
  HeadPose pose;
  pose.rotation = Mat3::Identity();
  pose.position = Vec3(0, 0, distance);
  return pose;
}

// Hand projection of a head-frame card point for a frontal head.
Eigen::Vector2d frontal_pixel(const SceneParams& sc, double x, double y, double distance) {
  const double z = distance - L::kCardDepth;
  return {sc.camera.cx + sc.camera.fx * x / z, sc.camera.cy + sc.camera.fy * y / z};
}

struct Blob {
  Eigen::Vector2d centroid{0, 0};
  double mass = 0;
  int bright = 0;  ///< pixels brighter than any skin tone
};

// Dark-weighted centroid over pixels inside a shrunken eye ellipse.
Blob measure_eye(const ImageU8& img, Eigen::Vector2d center, double half_w, double half_h,
                 double band = 0.0) {
  Blob b;
  for (int v = static_cast<int>(center.y() - half_h) - 1; v <= center.y() + half_h + 1; ++v) {
    for (int u = static_cast<int>(center.x() - half_w) - 1; u <= center.x() + half_w + 1; ++u) {
      const double dx = (u - center.x()) / half_w, dy = (v - center.y()) / half_h;
      if (dx * dx + dy * dy > 0.8) continue;
      if (std::abs(v - center.y()) <= band) continue;
      const double lum = luminance(img, u, v);
      if (lum > 200) ++b.bright;
      const double w = std::max(0.0, 170.0 - lum);
      b.centroid += w * Eigen::Vector2d(u, v);
      b.mass += w;
    }
  }
  if (b.mass > 0) b.centroid /= b.mass;
  return b;
}

RenderedFrame render(const SceneParams& sc, const SubjectStyle& style, const HeadPose& pose,
                     GazeAngles gaze, RenderOptions opt = {}) {
  std::mt19937_64 rng(5);
  return render_frame(sc, style, pose, gaze, rng, opt);
}

}  // namespace

TEST(Synthgen, FrontalZeroGazeIrisesCentered) {
  SceneParams sc;
  sc.supersample = 4;
  const auto style = SubjectStyle::from_seed(11);
  const double d = 0.6, z = d - L::kCardDepth;
  const auto f = render(sc, style, frontal(d), {0, 0});
  const double hw = sc.camera.fx * L::kEyeHalfWidth / z;
  const double hh = sc.camera.fy * L::kEyeHalfHeight / z;
  for (int eye = 0; eye < 2; ++eye) {
    const double ex = (eye == 0 ? -0.5 : 0.5) * style.eye_spacing;
    const auto center = frontal_pixel(sc, ex, L::kEyeY, d);
    const auto blob = measure_eye(f.image, center, hw, hh);
    ASSERT_GT(blob.mass, 0) << "eye " << eye;
    EXPECT_NEAR(blob.centroid.x(), center.x(), 0.25) << "eye " << eye;
    EXPECT_NEAR(blob.centroid.y(), center.y(), 0.25) << "eye " << eye;
    EXPECT_GT(blob.bright, 20) << "sclera visible around the iris";
    const auto ip = iris_center_pixel(sc, style, frontal(d), {0, 0}, eye);
    EXPECT_NEAR((ip - center).norm(), 0.0, 1e-9);
  }
  const Vec3 g = compute_gt_gaze(f.record);
  EXPECT_NEAR((g - Vec3(0, 0, -1)).norm(), 0.0, 1e-9);
}

TEST(Synthgen, HorizontalGazeShiftsIrisByConfiguredConstant) {
  SceneParams sc;
  sc.supersample = 4;
  const auto style = SubjectStyle::from_seed(12);
  const double d = 0.6, z = d - L::kCardDepth;
  const double hw = sc.camera.fx * L::kEyeHalfWidth / z;
  const double hh = sc.camera.fy * L::kEyeHalfHeight / z;
  const auto f0 = render(sc, style, frontal(d), {0, 0});
  const auto f20 = render(sc, style, frontal(d), {deg2rad(20.0), 0});
  const double expected_dx = -sc.camera.fx * sc.iris_shift_x * 20.0 / z;  // about -7.2 px
  for (int eye = 0; eye < 2; ++eye) {
    const double ex = (eye == 0 ? -0.5 : 0.5) * style.eye_spacing;
    const auto center = frontal_pixel(sc, ex, L::kEyeY, d);
    const auto b0 = measure_eye(f0.image, center, hw, hh);
    const auto b20 = measure_eye(f20.image, center, hw, hh);
    EXPECT_NEAR(b20.centroid.x() - b0.centroid.x(), expected_dx, 0.3) << "eye " << eye;
    EXPECT_NEAR(b20.centroid.y() - b0.centroid.y(), 0.0, 0.3) << "eye " << eye;
    const auto ip = iris_center_pixel(sc, style, frontal(d), {deg2rad(20.0), 0}, eye);
    EXPECT_NEAR(ip.x() - center.x(), expected_dx, 1e-9);
    EXPECT_NEAR(ip.y(), center.y(), 1e-9);
  }
  // Label follows the rotation: positive theta points toward camera -x.
  const Vec3 g = compute_gt_gaze(f20.record);
  EXPECT_NEAR(g.x(), -std::sin(deg2rad(20.0)), 1e-9);
}

TEST(Synthgen, IrisPixelTracksRenderedIrisUnderHeadPose) {
  SceneParams sc;
  sc.supersample = 4;
  const auto style = SubjectStyle::from_seed(13);
  HeadPose pose;
  pose.rotation = head_rotation(deg2rad(12.0), deg2rad(-8.0), deg2rad(6.0));
  pose.position = Vec3(0.03, -0.01, 0.55);
  const GazeAngles gaze{deg2rad(-15.0), deg2rad(10.0)};
  const auto f = render(sc, style, pose, gaze);
  // Eye ellipse size shrinks slightly with foreshortening; use a safe window.
  const double z = pose.position.z() - L::kCardDepth;
  const double hw = 0.85 * sc.camera.fx * L::kEyeHalfWidth / z;
  const double hh = 0.75 * sc.camera.fy * L::kEyeHalfHeight / z;
  for (int eye = 0; eye < 2; ++eye) {
    const auto ip = iris_center_pixel(sc, style, pose, gaze, eye);
    // Window centered on the eye ellipse, not on the iris.
    const auto ec = iris_center_pixel(sc, style, pose, {0, 0}, eye);
    const auto blob = measure_eye(f.image, ec, hw, hh);
    EXPECT_NEAR((blob.centroid - ip).norm(), 0.0, 0.5) << "eye " << eye;
  }
}

TEST(Synthgen, MirrorFlagRendersHorizontalFlip) {
  SceneParams sc;
  const auto style = SubjectStyle::from_seed(14);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 3; ++trial) {
    const double yaw = uniform(rng, -15, 15), pitch = uniform(rng, -10, 10),
                 roll = uniform(rng, -8, 8);
    const Vec3 pos(uniform(rng, -0.05, 0.05), uniform(rng, -0.03, 0.03), uniform(rng, 0.5, 0.7));
    const GazeAngles gaze{deg2rad(uniform(rng, -20, 20)), deg2rad(uniform(rng, -12, 12))};
    HeadPose a, b;
    a.rotation = head_rotation(deg2rad(yaw), deg2rad(pitch), deg2rad(roll));
    a.position = pos;
    b.rotation = head_rotation(deg2rad(-yaw), deg2rad(pitch), deg2rad(-roll));
    b.position = Vec3(-pos.x(), pos.y(), pos.z());
    RenderOptions mirror;
    mirror.mirror = true;
    const auto fa = render(sc, style, a, gaze);
    const auto fb = render(sc, style, b, {-gaze.theta, gaze.phi}, mirror);
    const auto flipped = flip_horizontal(fa.image);
    double sum = 0;
    int large = 0;
    for (int v = 0; v < flipped.height(); ++v) {
      for (int u = 0; u < flipped.width(); ++u) {
        for (int c = 0; c < 3; ++c) {
          const int diff = std::abs(flipped.at(u, v, c) - fb.image.at(u, v, c));
          sum += diff;
          large += diff > 40;
        }
      }
    }
    const double n = 3.0 * flipped.width() * flipped.height();
    EXPECT_LT(sum / n, 0.5) << "trial " << trial;
    EXPECT_LT(large / n, 0.002) << "trial " << trial;
  }
}

TEST(Synthgen, LandmarksProjectOntoRenderedMarkers) {
  SceneParams sc;
  const auto style = SubjectStyle::from_seed(15);
  HeadPose pose;
  pose.rotation = head_rotation(deg2rad(18.0), deg2rad(-10.0), deg2rad(7.0));
  pose.position = Vec3(0.04, -0.02, 0.55);
  double worst = 0;
  for (int i = 0; i < kNumLandmarks; ++i) {
    RenderOptions opt;
    opt.debug_landmark = i;
    const auto f = render(sc, style, pose, {0, 0}, opt);
    Eigen::Vector2d c(0, 0);
    double mass = 0;
    for (int v = 0; v < f.image.height(); ++v) {
      for (int u = 0; u < f.image.width(); ++u) {
        const double w = f.image.at(u, v, 0);
        c += w * Eigen::Vector2d(u, v);
        mass += w;
      }
    }
    ASSERT_GT(mass, 0) << "landmark " << i;
    c /= mass;
    worst = std::max(worst, (c - sc.camera.project(f.record.landmarks[i])).norm());
  }
  EXPECT_LT(worst, 0.5);
}

TEST(Synthgen, RecordGeometryMatchesPose) {
  SceneParams sc;
  const auto style = SubjectStyle::from_seed(16);
  HeadPose pose;
  pose.rotation = head_rotation(deg2rad(-10.0), deg2rad(5.0), deg2rad(3.0));
  pose.position = Vec3(-0.02, 0.01, 0.65);
  const GazeAngles gaze{deg2rad(8.0), deg2rad(-6.0)};
  const auto f = render(sc, style, pose, gaze);
  EXPECT_NEAR((f.record.eye_left - f.record.eye_right).norm(), style.eye_spacing, 1e-12);
  // Head-frame gaze recovered from the camera-space label.
  const Vec3 g = pose.rotation.transpose() * compute_gt_gaze(f.record);
  const auto back = gaze_to_angles(g);
  EXPECT_NEAR(back.theta, gaze.theta, 1e-9);
  EXPECT_NEAR(back.phi, gaze.phi, 1e-9);
  EXPECT_TRUE(f.record.flags.geometry_recovered);
}

TEST(Synthgen, HeadBehindCameraMarksGeometryMissing) {
  SceneParams sc;
  const auto style = SubjectStyle::from_seed(17);
  HeadPose pose = frontal(-0.5);
  const auto f = render(sc, style, pose, {0, 0});
  EXPECT_FALSE(f.record.flags.geometry_recovered);
}

TEST(Synthgen, BlinkClosesEyesWithoutTouchingLabel) {
  SceneParams sc;
  sc.supersample = 4;
  const auto style = SubjectStyle::from_seed(18);
  const double d = 0.6, z = d - L::kCardDepth;
  const double hw = sc.camera.fx * L::kEyeHalfWidth / z;
  const double hh = sc.camera.fy * L::kEyeHalfHeight / z;
  const GazeAngles gaze{deg2rad(5.0), deg2rad(3.0)};
  RenderOptions closed;
  closed.blink = true;
  const auto open_f = render(sc, style, frontal(d), gaze);
  const auto blink_f = render(sc, style, frontal(d), gaze, closed);
  for (int eye = 0; eye < 2; ++eye) {
    const double ex = (eye == 0 ? -0.5 : 0.5) * style.eye_spacing;
    const auto center = frontal_pixel(sc, ex, L::kEyeY, d);
    EXPECT_GT(measure_eye(open_f.image, center, hw, hh).bright, 20);
    const auto b = measure_eye(blink_f.image, center, hw, hh, 3.0);
    EXPECT_EQ(b.bright, 0) << "no sclera on a closed eye";
  }
  EXPECT_EQ(*open_f.record.gaze, *blink_f.record.gaze);
}

TEST(Synthgen, BlinkTrajectoryKeepsGazeSequence) {
  SceneParams sc;
  TrajectoryParams plain;
  plain.kind = TrajectoryKind::SmoothPursuit;
  plain.duration = 200;
  TrajectoryParams blinking = plain;
  blinking.kind = TrajectoryKind::Blink;
  blinking.blink_length = 3;
  std::mt19937_64 r1(21), r2(21);
  const auto a = make_trajectory(plain, sc, r1);
  const auto b = make_trajectory(blinking, sc, r2);
  ASSERT_EQ(a.size(), 200u);
  ASSERT_EQ(b.size(), 200u);
  int blinks = 0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    EXPECT_FALSE(a[t].blink);
    blinks += b[t].blink;
    EXPECT_EQ(a[t].gaze.theta, b[t].gaze.theta);
    EXPECT_EQ(a[t].gaze.phi, b[t].gaze.phi);
  }
  EXPECT_GT(blinks, 10);
  EXPECT_LT(blinks, 150);
}

TEST(Synthgen, TrajectoriesStayInRange) {
  SceneParams sc;
  for (auto kind : {TrajectoryKind::Fixation, TrajectoryKind::SmoothPursuit,
                    TrajectoryKind::Saccade, TrajectoryKind::Blink}) {
    TrajectoryParams p;
    p.kind = kind;
    p.duration = 300;
    std::mt19937_64 rng(4);
    const auto tr = make_trajectory(p, sc, rng);
    ASSERT_EQ(tr.size(), 300u);
    for (const auto& f : tr) {
      // Saccade/fixation jitter may poke slightly outside the box.
      EXPECT_LE(std::abs(rad2deg(f.gaze.theta)), 25.0 + 1.5) << to_string(kind);
      EXPECT_LE(std::abs(rad2deg(f.gaze.phi)), 15.0 + 1.5) << to_string(kind);
    }
    EXPECT_EQ(parse_trajectory_kind(to_string(kind)), kind);
  }
}

TEST(Synthgen, ParameterValidation) {
  TrajectoryParams t;
  t.period = 0.5;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  t = {};
  t.blink_probability = 1.5;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  t = {};
  t.fixation_frames = 0;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  SceneParams s;
  s.supersample = 0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  EXPECT_THROW(parse_trajectory_kind("zigzag"), ParseError);
}

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(SynthgenDataset, SameSeedGivesIdenticalOutputs) {
  auto spec = small_spec(2, 20, 5);
  const auto a = generate_dataset(spec, temp_dir("synth_same_a"));
  const auto b = generate_dataset(spec, temp_dir("synth_same_b"));
  EXPECT_EQ(slurp(a.manifest), slurp(b.manifest));
  EXPECT_EQ(slurp(a.intrinsics), slurp(b.intrinsics));
  for (const std::size_t i : std::vector<std::size_t>{0, a.records.size() / 2, a.records.size() - 1}) {
    EXPECT_EQ(slurp(a.records[i].image_ref), slurp(b.records[i].image_ref)) << i;
  }
  spec.seed += 1;
  const auto c = generate_dataset(spec, temp_dir("synth_same_c"));
  EXPECT_NE(slurp(a.manifest), slurp(c.manifest));
}

TEST(SynthgenDataset, DefaultSizeAndCleanRecords) {
  DatasetSpec spec;  // 4 subjects x 50 frames
  const auto out = generate_dataset(spec, temp_dir("synth_default"));
  std::ifstream in(out.manifest);
  int lines = 0;
  for (std::string line; std::getline(in, line);) lines += !line.empty();
  EXPECT_EQ(lines, 200);
  const auto cams = load_intrinsics_table(out.intrinsics);
  const auto records = load_manifest(out.manifest, cams);
  ASSERT_EQ(records.size(), 200u);
  const auto filtered = filter_frames(records);
  EXPECT_EQ(filtered.rejected.size(), 0u);
  std::set<FrameKey> keys;
  std::set<std::string> images;
  std::set<std::string> subjects;
  for (const auto& r : records) {
    keys.insert(key_of(r));
    images.insert(r.image_ref.string());
    subjects.insert(r.subject_id);
    EXPECT_TRUE(fs::exists(r.image_ref));
  }
  EXPECT_EQ(keys.size(), 200u);
  EXPECT_EQ(images.size(), 200u);
  EXPECT_EQ(subjects.size(), 4u);
}

TEST(SynthgenDataset, RefusesNonEmptyDirectoryWithoutOverwrite) {
  const fs::path dir = temp_dir("synth_refuse");
  { std::ofstream(dir / "keep.txt") << "x"; }
  DatasetSpec spec;
  spec.n_subjects = 1;
  spec.frames_per_subject = 2;
  EXPECT_THROW(generate_dataset(spec, dir), IoError);
  EXPECT_FALSE(fs::exists(dir / "manifest.jsonl"));
  EXPECT_NO_THROW(generate_dataset(spec, dir, true));
  EXPECT_TRUE(fs::exists(dir / "manifest.jsonl"));
}

TEST(SynthgenDataset, BlinkSessionsKeepLabelsContinuous) {
  auto spec = small_spec(2, 20, 5);
  spec.n_subjects = 1;
  spec.frames_per_subject = 120;
  spec.sessions = {HeadKind::Static};
  spec.trajectory.kind = TrajectoryKind::Blink;
  spec.trajectory.blink_probability = 0.2;
  const auto out = generate_dataset(spec, temp_dir("synth_blink"));
  ASSERT_EQ(out.records.size(), 120u);
  // Static head and smooth pursuit: consecutive labels differ by a few degrees at most.
  double worst = 0;
  for (std::size_t t = 1; t < out.records.size(); ++t) {
    worst = std::max(worst, angular_error(compute_gt_gaze(out.records[t - 1]),
                                          compute_gt_gaze(out.records[t])));
  }
  EXPECT_LT(worst, 4.0);
}

TEST(SynthgenDataset, SpecJsonRoundTrip) {
  DatasetSpec spec;
  spec.n_subjects = 3;
  spec.seed = 99;
  spec.sessions = {HeadKind::Moving};
  spec.trajectory.kind = TrajectoryKind::Saccade;
  spec.scene.theta = {-10, 12};
  const nlohmann::json j = spec;
  const auto back = j.get<DatasetSpec>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_EQ(back.n_subjects, 3);
  EXPECT_EQ(back.trajectory.kind, TrajectoryKind::Saccade);
}
