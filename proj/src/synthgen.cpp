// SPDX-License-Identifier: Apache-2.0
#include "gazenet/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "gazenet/augment.hpp"
#include "gazenet/errors.hpp"

namespace gazenet {

namespace fs = std::filesystem;
using L = FaceLayout;

// --------------------------------------------------------------------------
// Styles and parameters

SubjectStyle SubjectStyle::from_seed(std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 0x5354594C45ull));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SubjectStyle s;
  const double tone = u(rng);
  s.skin = {0.45 + 0.45 * tone, 0.32 + 0.38 * tone, 0.25 + 0.33 * tone};
  const double iris = u(rng);
  s.iris = {0.10 + 0.25 * iris, 0.08 + 0.22 * u(rng), 0.05 + 0.25 * u(rng)};
  const double brow = 0.08 + 0.2 * u(rng);
  s.brow = {brow, brow * 0.8, brow * 0.6};
  s.lips = {0.55 + 0.2 * u(rng), 0.25 + 0.1 * u(rng), 0.25 + 0.1 * u(rng)};
  s.background = {0.2 + 0.5 * u(rng), 0.2 + 0.5 * u(rng), 0.2 + 0.5 * u(rng)};
  s.eye_spacing = 0.058 + 0.010 * u(rng);
  s.face_scale = 0.92 + 0.16 * u(rng);
  return s;
}

double Range::sample(std::mt19937_64& rng) const {
  if (hi <= lo) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

void to_json(nlohmann::json& j, const Range& r) { j = nlohmann::json::array({r.lo, r.hi}); }
void from_json(const nlohmann::json& j, Range& r) {
  if (!j.is_array() || j.size() != 2) throw ParseError("range must be [lo, hi]");
  r.lo = j.at(0).get<double>();
  r.hi = j.at(1).get<double>();
  if (r.hi < r.lo) throw ParseError("range upper bound below lower bound");
}

void SceneParams::validate() const {
  if (image_size.width < 16 || image_size.height < 16) throw std::invalid_argument("image too small");
  camera.validate();
  if (distance.lo <= L::kCardDepth) throw std::invalid_argument("head distance too small");
  if (supersample < 1 || supersample > 16) throw std::invalid_argument("supersample in [1, 16]");
  if (!(lighting > 0.0)) throw std::invalid_argument("lighting must be positive");
  if (!(iris_shift_x > 0.0) || !(iris_shift_y > 0.0)) {
    throw std::invalid_argument("iris shift constants must be positive");
  }
  if (target_distance.lo <= 0.0) throw std::invalid_argument("target distance must be positive");
}

void to_json(nlohmann::json& j, const SceneParams& p) {
  j = {{"image_width", p.image_size.width},
       {"image_height", p.image_size.height},
       {"camera", {p.camera.fx, p.camera.fy, p.camera.cx, p.camera.cy}},
       {"yaw", p.yaw},
       {"pitch", p.pitch},
       {"roll", p.roll},
       {"distance", p.distance},
       {"lateral", p.lateral},
       {"theta", p.theta},
       {"phi", p.phi},
       {"target_distance", p.target_distance},
       {"lighting", p.lighting},
       {"iris_shift_x", p.iris_shift_x},
       {"iris_shift_y", p.iris_shift_y},
       {"supersample", p.supersample}};
}

void from_json(const nlohmann::json& j, SceneParams& p) {
  p.image_size.width = j.value("image_width", p.image_size.width);
  p.image_size.height = j.value("image_height", p.image_size.height);
  if (j.contains("camera")) {
    const auto c = j.at("camera").get<std::array<double, 4>>();
    p.camera = {c[0], c[1], c[2], c[3]};
  }
  for (auto [name, field] : {std::pair{"yaw", &p.yaw}, {"pitch", &p.pitch}, {"roll", &p.roll},
                             {"distance", &p.distance}, {"lateral", &p.lateral},
                             {"theta", &p.theta}, {"phi", &p.phi},
                             {"target_distance", &p.target_distance}}) {
    if (j.contains(name)) *field = j.at(name).get<Range>();
  }
  p.lighting = j.value("lighting", p.lighting);
  p.iris_shift_x = j.value("iris_shift_x", p.iris_shift_x);
  p.iris_shift_y = j.value("iris_shift_y", p.iris_shift_y);
  p.supersample = j.value("supersample", p.supersample);
  p.validate();
}

// --------------------------------------------------------------------------
// Geometry of the card

std::array<Vec3, 2> eyeball_centers_head(const SubjectStyle& style) {
  const double z = -L::kCardDepth + L::kEyeballRadius;
  return {Vec3(-style.eye_spacing / 2, L::kEyeY, z), Vec3(style.eye_spacing / 2, L::kEyeY, z)};
}

Landmarks landmark_template(const SubjectStyle& style) {
  const double s = style.face_scale;
  const double zc = -L::kCardDepth;
  const double e = style.eye_spacing / 2;
  Landmarks lm{};
  auto at = [&](double x, double y, double dz) { return Vec3(x, y, zc + dz); };
  // Jaw: receding toward the sides.
  for (int i = 0; i <= 16; ++i) {
    const double a = kPi * i / 16.0;
    const double x = -0.070 * s * std::cos(a);
    const double y = (-0.010 + 0.095 * std::sin(a)) * s;
    lm[i] = at(x, y, 0.025 * std::abs(x) / (0.070 * s));
  }
  // Brows, image-left brow first, mirrored to the right.
  for (int i = 0; i < 5; ++i) {
    const double x = -e - 0.018 + 0.009 * i;
    const double y = L::kEyeY - 0.020 * s - 0.003 * std::sin(kPi * i / 4.0);
    lm[17 + i] = at(x, y, 0.0);
    lm[26 - i] = at(-x, y, 0.0);
  }
  // Nose bridge and base, protruding.
  for (int i = 0; i < 4; ++i) {
    lm[27 + i] = at(0.0, (-0.035 + 0.015 * i) * s, -0.006 - 0.006 * i);
  }
  for (int i = 0; i < 5; ++i) {
    const double x = (-0.015 + 0.0075 * i) * s;
    lm[31 + i] = at(x, 0.022 * s, -0.012 + 0.004 * std::abs(i - 2));
  }
  // Eye contours at the rendered ellipses; angles counter-clockwise from +x.
  const double ea = L::kEyeHalfWidth, eb = L::kEyeHalfHeight;
  auto eye_point = [&](double cx, double deg) {
    const double a = deg2rad(deg);
    return at(cx + ea * std::cos(a), L::kEyeY - eb * std::sin(a), 0.0);
  };
  const double right_angles[6] = {180, 120, 60, 0, -60, -120};
  const double left_angles[6] = {180, 120, 60, 0, -60, -120};
  for (int i = 0; i < 6; ++i) {
    lm[36 + i] = eye_point(-e, right_angles[i]);
    lm[42 + i] = eye_point(e, left_angles[i]);
  }
  // Lips.
  const double my = 0.050 * s;
  const double outer[12] = {180, 150, 110, 90, 70, 30, 0, -30, -70, -90, -110, -150};
  for (int i = 0; i < 12; ++i) {
    const double a = deg2rad(outer[i]);
    lm[48 + i] = at(0.025 * s * std::cos(a), my - 0.012 * s * std::sin(a), -0.004);
  }
  for (int i = 0; i < 8; ++i) {
    const double a = deg2rad(180.0 - 45.0 * i);
    lm[60 + i] = at(0.015 * s * std::cos(a), my - 0.005 * s * std::sin(a), -0.003);
  }
  return lm;
}

namespace {

double sq(double v) { return v * v; }

Rgb scale_rgb(const Rgb& c, double f) { return {c[0] * f, c[1] * f, c[2] * f}; }

Vec3 iris_center_head(const SceneParams& scene, const SubjectStyle& style, const GazeAngles& g,
                      int eye) {
  const double ex = (eye == 0 ? -1.0 : 1.0) * style.eye_spacing / 2;
  return {ex - scene.iris_shift_x * rad2deg(g.theta), L::kEyeY - scene.iris_shift_y * rad2deg(g.phi),
          -L::kCardDepth};
}

/// Card albedo at head-frame (x, y); nullopt outside the face.
std::optional<Rgb> card_color(const SceneParams& scene, const SubjectStyle& st,
                              const GazeAngles& gaze, bool blink, double x, double y) {
  const double s = st.face_scale;
  for (int eye = 0; eye < 2; ++eye) {
    const double ex = (eye == 0 ? -1.0 : 1.0) * st.eye_spacing / 2;
    const double r2 = sq((x - ex) / L::kEyeHalfWidth) + sq((y - L::kEyeY) / L::kEyeHalfHeight);
    if (r2 <= 1.0) {
      if (blink) {
        if (std::abs(y - L::kEyeY) < 0.0012) return scale_rgb(st.brow, 0.6);
        return scale_rgb(st.skin, 0.82);
      }
      const Vec3 c = iris_center_head(scene, st, gaze, eye);
      const double d = std::hypot(x - c.x(), y - c.y());
      if (d <= L::kPupilRadius) return Rgb{0.04, 0.04, 0.04};
      if (d <= L::kIrisRadius) return st.iris;
      return Rgb{0.94, 0.94, 0.91};
    }
    // Eyelid rim.
    if (r2 <= 1.12) return scale_rgb(st.skin, 0.7);
    // Brow.
    const double by = L::kEyeY - 0.020 * s;
    if (std::abs(x - ex) < 0.019 && std::abs(y - by) < 0.0035) return st.brow;
  }
  const double my = 0.050 * s;
  const double m2 = sq(x / (0.025 * s)) + sq((y - my) / (0.012 * s));
  if (m2 <= 1.0) {
    if (std::abs(y - my) < 0.0015 * s && sq(x / (0.015 * s)) < 1.0) return Rgb{0.15, 0.05, 0.05};
    return st.lips;
  }
  // Nostrils, then the nose shadow wedge.
  for (double nx : {-0.008 * s, 0.008 * s}) {
    if (std::hypot(x - nx, y - 0.022 * s) < 0.003 * s) return scale_rgb(st.skin, 0.35);
  }
  const double ny0 = -0.010 * s, ny1 = 0.025 * s;
  if (y >= ny0 && y <= ny1 && std::abs(x) < 0.012 * s * (y - ny0) / (ny1 - ny0)) {
    return scale_rgb(st.skin, 0.85);
  }
  const double f2 = sq(x / (0.072 * s)) + sq((y - 0.010 * s) / (0.095 * s));
  if (f2 <= 1.0) return st.skin;
  return std::nullopt;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
}

}  // namespace

Eigen::Vector2d iris_center_pixel(const SceneParams& scene, const SubjectStyle& style,
                                  const HeadPose& pose, const GazeAngles& gaze, int eye) {
  const Vec3 c = pose.position + pose.rotation * iris_center_head(scene, style, gaze, eye);
  return scene.camera.project(c);
}

RenderedFrame render_frame(const SceneParams& scene, const SubjectStyle& style,
                           const HeadPose& pose, const GazeAngles& gaze, std::mt19937_64& rng,
                           const RenderOptions& options) {
  scene.validate();
  const int W = scene.image_size.width, Hh = scene.image_size.height;
  const CameraIntrinsics& cam = scene.camera;
  const Mat3& R = pose.rotation;
  const Vec3& p = pose.position;

  RenderedFrame out;
  FrameRecord& rec = out.record;
  rec.camera_id = kSynthCameraId;
  rec.head = pose;
  const auto eyes = eyeball_centers_head(style);
  rec.eye_right = p + R * eyes[0];
  rec.eye_left = p + R * eyes[1];
  const Landmarks lm_head = landmark_template(style);
  for (int i = 0; i < kNumLandmarks; ++i) rec.landmarks[i] = p + R * lm_head[i];
  const Vec3 g_cam = (R * angles_to_gaze(gaze)).normalized();
  const Vec3 origin = 0.5 * (rec.eye_left + rec.eye_right);
  rec.gaze_target = origin + scene.target_distance.sample(rng) * g_cam;
  rec.gaze = g_cam;

  // Background gradient.
  const double sx = options.mirror ? -1.0 : 1.0;
  const bool debug = options.debug_landmark.has_value();
  ImageU8 img(W, Hh, 3);
  for (int v = 0; v < Hh; ++v) {
    for (int u = 0; u < W; ++u) {
      const double f = debug ? 0.0
                             : scene.lighting * (1.0 + 0.15 * sx * (u - cam.cx) / W +
                                                 0.10 * (v - cam.cy) / Hh);
      for (int c = 0; c < 3; ++c) img.at(u, v, c) = to_byte(style.background[c] * f);
    }
  }

  // Screen-space bounds of the card (or of the debug sphere).
  std::vector<Vec3> corners;
  if (debug) {
    if (*options.debug_landmark < 0 || *options.debug_landmark >= kNumLandmarks) {
      throw std::out_of_range("debug landmark index");
    }
    const Vec3 c = rec.landmarks[*options.debug_landmark];
    const double r = options.debug_radius * 2.0;
    for (int dx : {-1, 1}) {
      for (int dy : {-1, 1}) {
        for (int dz : {-1, 1}) corners.push_back(c + Vec3(dx * r, dy * r, dz * r));
      }
    }
  } else {
    const double s = style.face_scale;
    for (double x : {-0.08 * s, 0.08 * s}) {
      for (double y : {-0.09 * s, 0.11 * s}) {
        corners.push_back(p + R * Vec3(x, y, -L::kCardDepth));
      }
    }
  }
  double umin = W, umax = -1, vmin = Hh, vmax = -1;
  bool visible = true;
  for (const auto& c : corners) {
    if (c.z() <= 1e-3) {
      visible = false;
      break;
    }
    const auto px = cam.project(c);
    umin = std::min(umin, px.x());
    umax = std::max(umax, px.x());
    vmin = std::min(vmin, px.y());
    vmax = std::max(vmax, px.y());
  }
  const int u0 = std::max(0, static_cast<int>(std::floor(umin)) - 1);
  const int u1 = std::min(W - 1, static_cast<int>(std::ceil(umax)) + 1);
  const int v0 = std::max(0, static_cast<int>(std::floor(vmin)) - 1);
  const int v1 = std::min(Hh - 1, static_cast<int>(std::ceil(vmax)) + 1);

  bool any_landmark_inside = false;
  for (const auto& l : rec.landmarks) {
    if (l.z() <= 0) continue;
    const auto px = cam.project(l);
    if (px.x() >= -0.5 && px.x() <= W - 0.5 && px.y() >= -0.5 && px.y() <= Hh - 0.5) {
      any_landmark_inside = true;
    }
  }
  rec.flags.geometry_recovered = visible && any_landmark_inside;
  if (!visible || u0 > u1 || v0 > v1) {
    out.image = std::move(img);
    return out;
  }

  const Vec3 normal = R.col(2);
  const Vec3 plane_point = p - L::kCardDepth * normal;
  const int ss = debug ? std::max(scene.supersample, 8) : scene.supersample;
  const Vec3 sphere = debug ? rec.landmarks[*options.debug_landmark] : Vec3::Zero();
  const double rr = sq(options.debug_radius);
  for (int v = v0; v <= v1; ++v) {
    for (int u = u0; u <= u1; ++u) {
      double acc[3] = {0, 0, 0};
      int hits = 0;
      for (int j = 0; j < ss; ++j) {
        for (int i = 0; i < ss; ++i) {
          const double su = u + (i + 0.5) / ss - 0.5;
          const double sv = v + (j + 0.5) / ss - 0.5;
          const Vec3 d((su - cam.cx) / cam.fx, (sv - cam.cy) / cam.fy, 1.0);
          if (debug) {
            const Vec3 dn = d.normalized();
            const double b = dn.dot(sphere);
            if (sq(b) - (sphere.squaredNorm() - rr) >= 0.0) {
              for (double& a : acc) a += 1.0;
              ++hits;
            }
            continue;
          }
          const double denom = normal.dot(d);
          if (std::abs(denom) < 1e-12) continue;
          const double t = normal.dot(plane_point) / denom;
          if (t <= 0) continue;
          const Vec3 local = R.transpose() * (t * d - p);
          const auto color = card_color(scene, style, gaze, options.blink, local.x(), local.y());
          if (!color) continue;
          const double shade = scene.lighting * (0.55 + 0.45 * std::abs(denom) / d.norm());
          for (int c = 0; c < 3; ++c) acc[c] += (*color)[c] * shade;
          ++hits;
        }
      }
      if (hits == 0) continue;
      const double n = static_cast<double>(ss * ss);
      for (int c = 0; c < 3; ++c) {
        const double bg = img.at(u, v, c) / 255.0;
        img.at(u, v, c) = to_byte(acc[c] / n + bg * (n - hits) / n);
      }
    }
  }
  out.image = std::move(img);
  return out;
}

// --------------------------------------------------------------------------
// Trajectories

std::string to_string(TrajectoryKind kind) {
  switch (kind) {
    case TrajectoryKind::Fixation: return "fixation";
    case TrajectoryKind::SmoothPursuit: return "smooth-pursuit";
    case TrajectoryKind::Saccade: return "saccade";
    case TrajectoryKind::Blink: return "blink";
  }
  return "?";
}

TrajectoryKind parse_trajectory_kind(const std::string& text) {
  for (auto k : {TrajectoryKind::Fixation, TrajectoryKind::SmoothPursuit, TrajectoryKind::Saccade,
                 TrajectoryKind::Blink}) {
    if (to_string(k) == text) return k;
  }
  throw ParseError("unknown trajectory kind '" + text + "'");
}

void TrajectoryParams::validate() const {
  if (duration < 1) throw std::invalid_argument("trajectory duration must be >= 1");
  if (!(period > 1.0)) throw std::invalid_argument("trajectory period must exceed 1 frame");
  if (fixation_frames < 1) throw std::invalid_argument("fixation_frames must be >= 1");
  if (blink_probability < 0.0 || blink_probability > 1.0) {
    throw std::invalid_argument("blink_probability must be in [0, 1]");
  }
  if (blink_length < 1) throw std::invalid_argument("blink_length must be >= 1");
}

void to_json(nlohmann::json& j, const TrajectoryParams& t) {
  j = {{"kind", to_string(t.kind)},         {"duration", t.duration},
       {"period", t.period},                {"fixation_frames", t.fixation_frames},
       {"blink_probability", t.blink_probability}, {"blink_length", t.blink_length}};
}

void from_json(const nlohmann::json& j, TrajectoryParams& t) {
  if (j.contains("kind")) t.kind = parse_trajectory_kind(j.at("kind").get<std::string>());
  t.duration = j.value("duration", t.duration);
  t.period = j.value("period", t.period);
  t.fixation_frames = j.value("fixation_frames", t.fixation_frames);
  t.blink_probability = j.value("blink_probability", t.blink_probability);
  t.blink_length = j.value("blink_length", t.blink_length);
  t.validate();
}

std::vector<TrajectoryFrame> make_trajectory(const TrajectoryParams& params,
                                             const SceneParams& scene, std::mt19937_64& rng) {
  params.validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n = params.duration;
  std::vector<TrajectoryFrame> out(n);
  auto random_point = [&] {
    return GazeAngles{deg2rad(scene.theta.sample(rng)), deg2rad(scene.phi.sample(rng))};
  };
  const auto kind = params.kind;
  if (kind == TrajectoryKind::SmoothPursuit || kind == TrajectoryKind::Blink) {
    const double at = (0.6 + 0.4 * unit(rng)) * 0.5 * (scene.theta.hi - scene.theta.lo);
    const double ap = (0.6 + 0.4 * unit(rng)) * 0.5 * (scene.phi.hi - scene.phi.lo);
    const double pt = params.period * (0.8 + 0.4 * unit(rng));
    const double pp = params.period * (0.6 + 0.8 * unit(rng));
    const double ot = 2 * kPi * unit(rng), op = 2 * kPi * unit(rng);
    for (int t = 0; t < n; ++t) {
      out[t].gaze.theta = deg2rad(scene.theta.mid() + at * std::sin(2 * kPi * t / pt + ot));
      out[t].gaze.phi = deg2rad(scene.phi.mid() + ap * std::sin(2 * kPi * t / pp + op));
    }
  } else {
    GazeAngles current = random_point();
    std::geometric_distribution<int> dwell(1.0 / params.fixation_frames);
    int next_jump = kind == TrajectoryKind::Saccade ? 1 + dwell(rng) : n + 1;
    std::normal_distribution<double> jitter(0.0, deg2rad(0.2));
    for (int t = 0; t < n; ++t) {
      if (t == next_jump) {
        current = random_point();
        next_jump = t + 1 + dwell(rng);
      }
      out[t].gaze = current;
      out[t].gaze.theta += jitter(rng);
      out[t].gaze.phi += jitter(rng);
    }
  }
  const double p_blink = params.blink_probability > 0.0 ? params.blink_probability
                         : kind == TrajectoryKind::Blink ? 0.1
                                                         : 0.0;
  for (int t = 0; t < n; ++t) {
    if (p_blink > 0.0 && unit(rng) < p_blink) {
      for (int k = 0; k < params.blink_length && t + k < n; ++k) out[t + k].blink = true;
    }
  }
  return out;
}

// --------------------------------------------------------------------------
// Datasets

void to_json(nlohmann::json& j, const DatasetSpec& s) {
  std::vector<std::string> sessions;
  for (auto k : s.sessions) sessions.push_back(to_string(k));
  j = {{"n_subjects", s.n_subjects}, {"frames_per_subject", s.frames_per_subject},
       {"sessions", sessions},       {"scene", s.scene},
       {"trajectory", s.trajectory}, {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, DatasetSpec& s) {
  s.n_subjects = j.value("n_subjects", s.n_subjects);
  s.frames_per_subject = j.value("frames_per_subject", s.frames_per_subject);
  if (j.contains("sessions")) {
    s.sessions.clear();
    for (const auto& k : j.at("sessions")) s.sessions.push_back(parse_head_kind(k.get<std::string>()));
  }
  if (j.contains("scene")) s.scene = j.at("scene").get<SceneParams>();
  if (j.contains("trajectory")) s.trajectory = j.at("trajectory").get<TrajectoryParams>();
  s.seed = j.value("seed", s.seed);
}

namespace {

std::string subject_name(int i, int n) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), n > 99 ? "s%03d" : "s%02d", i + 1);
  return buf;
}

HeadPose sample_static_pose(const SceneParams& sc, std::mt19937_64& rng) {
  HeadPose pose;
  const double yaw = sc.yaw.sample(rng), pitch = sc.pitch.sample(rng), roll = sc.roll.sample(rng);
  pose.rotation = head_rotation(deg2rad(yaw), deg2rad(pitch), deg2rad(roll));
  const double x = sc.lateral.sample(rng), y = sc.lateral.sample(rng) * 0.6;
  pose.position = Vec3(x, y, sc.distance.sample(rng));
  return pose;
}

/// Smooth head motion spanning the configured ranges.
std::vector<HeadPose> moving_poses(const SceneParams& sc, double period, int n,
                                   std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  struct Wave {
    double mid, amp, per, off;
  };
  auto wave = [&](const Range& r) {
    return Wave{r.mid(), 0.5 * (r.hi - r.lo) * (0.5 + 0.5 * unit(rng)),
                period * (1.2 + 1.2 * unit(rng)), 2 * kPi * unit(rng)};
  };
  const Wave yaw = wave(sc.yaw), pitch = wave(sc.pitch), roll = wave(sc.roll),
             dist = wave(sc.distance), lx = wave(sc.lateral), ly = wave(sc.lateral);
  auto eval = [](const Wave& w, int t) { return w.mid + w.amp * std::sin(2 * kPi * t / w.per + w.off); };
  std::vector<HeadPose> poses(n);
  for (int t = 0; t < n; ++t) {
    poses[t].rotation =
        head_rotation(deg2rad(eval(yaw, t)), deg2rad(eval(pitch, t)), deg2rad(eval(roll, t)));
    poses[t].position = Vec3(eval(lx, t), 0.6 * eval(ly, t), eval(dist, t));
  }
  return poses;
}

}  // namespace

GeneratedDataset generate_dataset(const DatasetSpec& spec, const fs::path& out_dir,
                                  bool overwrite) {
  spec.scene.validate();
  if (spec.n_subjects < 1 || spec.frames_per_subject < 1 || spec.sessions.empty()) {
    throw std::invalid_argument("dataset needs subjects, frames and at least one session");
  }
  if (fs::exists(out_dir) && !fs::is_empty(out_dir)) {
    if (!overwrite) {
      throw IoError("output directory " + out_dir.string() +
                    " is not empty; pass the overwrite flag to replace it");
    }
    fs::remove_all(out_dir / "images");
    fs::remove(out_dir / "manifest.jsonl");
    fs::remove(out_dir / "cameras.csv");
  }
  fs::create_directories(out_dir);

  GeneratedDataset result;
  const int n_sessions = static_cast<int>(spec.sessions.size());
  for (int s = 0; s < spec.n_subjects; ++s) {
    const std::string subject = subject_name(s, spec.n_subjects);
    const SubjectStyle style = SubjectStyle::from_seed(derive_seed(spec.seed, 0x53554Aull, s));
    int remaining = spec.frames_per_subject;
    for (int k = 0; k < n_sessions; ++k) {
      const int frames = k + 1 == n_sessions ? remaining : spec.frames_per_subject / n_sessions;
      remaining -= frames;
      if (frames <= 0) continue;
      std::mt19937_64 rng(derive_seed(spec.seed, 1000 + s, k));
      TrajectoryParams tp = spec.trajectory;
      tp.duration = frames;
      const auto trajectory = make_trajectory(tp, spec.scene, rng);
      const HeadKind head_kind = spec.sessions[k];
      std::vector<HeadPose> poses;
      if (head_kind == HeadKind::Static) {
        poses.assign(frames, sample_static_pose(spec.scene, rng));
      } else {
        poses = moving_poses(spec.scene, tp.period, frames, rng);
      }
      SessionInfo session{TargetKind::FloatingTarget, head_kind, "A"};
      // Duplicate head kinds get distinct lighting ids so sessions stay unique.
      int dup = 0;
      for (int q = 0; q < k; ++q) dup += spec.sessions[q] == head_kind;
      session.lighting_id = std::string(1, static_cast<char>('A' + dup));
      const std::string session_dir =
          "FT_" + to_string(head_kind) + "_" + session.lighting_id;
      fs::create_directories(out_dir / "images" / subject / session_dir);
      for (int t = 0; t < frames; ++t) {
        std::mt19937_64 frng(derive_seed(spec.seed, (static_cast<std::uint64_t>(s) << 16) | k, t));
        RenderOptions opt;
        opt.blink = trajectory[t].blink;
        RenderedFrame f = render_frame(spec.scene, style, poses[t], trajectory[t].gaze, frng, opt);
        char name[32];
        std::snprintf(name, sizeof(name), "%06d.png", t);
        const fs::path rel = fs::path("images") / subject / session_dir / name;
        write_png(out_dir / rel, f.image);
        f.record.subject_id = subject;
        f.record.session = session;
        f.record.frame_index = t;
        f.record.image_ref = rel;
        result.records.push_back(std::move(f.record));
      }
    }
  }
  IntrinsicsTable cams;
  cams[kSynthCameraId] = CameraInfo{spec.scene.camera, spec.scene.image_size};
  result.intrinsics = out_dir / "cameras.csv";
  result.manifest = out_dir / "manifest.jsonl";
  write_intrinsics_table(result.intrinsics, cams);
  write_manifest(result.manifest, result.records);
  return result;
}

}  // namespace gazenet
