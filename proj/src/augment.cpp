// SPDX-License-Identifier: Apache-2.0
#include "gazenet/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gazenet {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::array<int, kNumLandmarks> build_mirror_permutation() {
  std::array<int, kNumLandmarks> p{};
  for (int i = 0; i < kNumLandmarks; ++i) p[i] = i;
  auto pair = [&](int a, int b) {
    p[a] = b;
    p[b] = a;
  };
  for (int i = 0; i <= 7; ++i) pair(i, 16 - i);  // jaw
  for (int i = 0; i < 5; ++i) pair(17 + i, 26 - i);  // brows
  pair(31, 35);
  pair(32, 34);  // nostrils
  pair(36, 45);
  pair(37, 44);
  pair(38, 43);
  pair(39, 42);
  pair(40, 47);
  pair(41, 46);  // eyes
  pair(48, 54);
  pair(49, 53);
  pair(50, 52);
  pair(55, 59);
  pair(56, 58);  // outer lip
  pair(60, 64);
  pair(61, 63);
  pair(65, 67);  // inner lip
  return p;
}

struct EyeHalves {
  ImageU8 right;
  ImageU8 left;
};

EyeHalves split_eyes(const ImageU8& joint) {
  if (joint.width() % 2 != 0) throw ShapeError("joint eyes image must have even width");
  const int hw = joint.width() / 2;
  return {crop(joint, 0, 0, hw, joint.height()), crop(joint, hw, 0, hw, joint.height())};
}

Image crop_centered(const ImageU8& image, int width, int height) {
  return to_float(crop(image, (image.width() - width) / 2, (image.height() - height) / 2, width,
                       height));
}

/// Crop of nominal size (width, height) jittered by zoom/shift, resampled back
/// to the nominal size. Margins bound both jitters.
Image jittered_crop(const ImageU8& image, int width, int height, const AugmentConfig& config,
                    std::mt19937_64& rng) {
  std::uniform_real_distribution<double> zoom_dist(-config.max_zoom, config.max_zoom);
  std::uniform_int_distribution<int> shift_dist(-config.max_shift, config.max_shift);
  const double zoom = config.max_zoom > 0.0 ? zoom_dist(rng) : 0.0;
  const int dx = config.max_shift > 0 ? shift_dist(rng) : 0;
  const int dy = config.max_shift > 0 ? shift_dist(rng) : 0;

  const int cw = std::clamp(static_cast<int>(std::lround(width * (1.0 + zoom))), 1, image.width());
  const int ch =
      std::clamp(static_cast<int>(std::lround(height * (1.0 + zoom))), 1, image.height());
  const int x0 = std::clamp((image.width() - cw) / 2 + dx, 0, image.width() - cw);
  const int y0 = std::clamp((image.height() - ch) / 2 + dy, 0, image.height() - ch);
  Image out = to_float(crop(image, x0, y0, cw, ch));
  if (cw != width || ch != height) out = resize_bilinear(out, width, height);
  return out;
}

void check_min_size(const NormalizedSample& s) {
  if (s.face_patch.width() < kFinalFaceSize || s.face_patch.height() < kFinalFaceSize ||
      s.eyes_patch.width() < 2 * kFinalEyeWidth || s.eyes_patch.height() < kFinalEyeHeight) {
    throw ShapeError("sample patches are smaller than the network input");
  }
}

}  // namespace

void AugmentConfig::validate() const {
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw std::invalid_argument("flip_prob not in [0,1]");
  if (max_shift < 0) throw std::invalid_argument("max_shift must be >= 0");
  if (!(max_zoom >= 0.0 && max_zoom < 1.0)) throw std::invalid_argument("max_zoom not in [0,1)");
  if (!(brightness_min > 0.0 && brightness_min <= brightness_max)) {
    throw std::invalid_argument("brightness range must be positive and ordered");
  }
  if (!(noise_variance >= 0.0)) throw std::invalid_argument("noise_variance must be >= 0");
}

void to_json(nlohmann::json& j, const AugmentConfig& c) {
  j = {{"enabled", c.enabled},
       {"flip_prob", c.flip_prob},
       {"max_shift", c.max_shift},
       {"max_zoom", c.max_zoom},
       {"brightness_range", {c.brightness_min, c.brightness_max}},
       {"noise_variance", c.noise_variance},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, AugmentConfig& c) {
  AugmentConfig d;
  c.enabled = j.value("enabled", d.enabled);
  c.flip_prob = j.value("flip_prob", d.flip_prob);
  c.max_shift = j.value("max_shift", d.max_shift);
  c.max_zoom = j.value("max_zoom", d.max_zoom);
  if (auto it = j.find("brightness_range"); it != j.end()) {
    c.brightness_min = it->at(0).get<double>();
    c.brightness_max = it->at(1).get<double>();
  } else {
    c.brightness_min = d.brightness_min;
    c.brightness_max = d.brightness_max;
  }
  c.noise_variance = j.value("noise_variance", d.noise_variance);
  c.seed = j.value("seed", d.seed);
  c.validate();
}

const std::array<int, kNumLandmarks>& landmark_mirror_permutation() {
  static const std::array<int, kNumLandmarks> perm = build_mirror_permutation();
  return perm;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(splitmix64(seed) ^ a) ^ (b * 0xD1B54A32D192ED03ull));
}

ModelInput crop_final(const NormalizedSample& s) {
  check_min_size(s);
  if (s.face_patch.width() == kFinalFaceSize && s.eyes_patch.width() == 2 * kFinalEyeWidth) {
    throw ShapeError("sample is already cropped to the network input size");
  }
  ModelInput in;
  in.face = crop_centered(s.face_patch, kFinalFaceSize, kFinalFaceSize);
  const EyeHalves eyes = split_eyes(s.eyes_patch);
  in.eyes = hconcat(crop_centered(eyes.right, kFinalEyeWidth, kFinalEyeHeight),
                    crop_centered(eyes.left, kFinalEyeWidth, kFinalEyeHeight));
  in.landmarks = s.landmark_feature;
  in.label = s.label;
  return in;
}

NormalizedSample flip_sample(const NormalizedSample& s, double w) {
  NormalizedSample out = s;
  out.face_patch = flip_horizontal(s.face_patch);
  // Mirroring the joint image mirrors each half and swaps them.
  out.eyes_patch = flip_horizontal(s.eyes_patch);
  const auto& perm = landmark_mirror_permutation();
  if (s.landmark_feature.size() == static_cast<std::size_t>(kLandmarkFeatureDim)) {
    for (int i = 0; i < kNumLandmarks; ++i) {
      const int j = perm[i];
      out.landmark_feature[3 * i + 0] = static_cast<float>(w - s.landmark_feature[3 * j + 0]);
      out.landmark_feature[3 * i + 1] = s.landmark_feature[3 * j + 1];
      out.landmark_feature[3 * i + 2] = s.landmark_feature[3 * j + 2];
    }
  }
  out.label.theta = -s.label.theta;
  const Mat3 mirror = Vec3(-1.0, 1.0, 1.0).asDiagonal();
  out.rotation = mirror * s.rotation * mirror;
  out.gaze = mirror * s.gaze;
  out.head.rotation = mirror * s.head.rotation * mirror;
  out.head.position = mirror * s.head.position;
  return out;
}

ModelInput augment_sample(const NormalizedSample& sample, const AugmentConfig& config,
                          std::mt19937_64& rng, double landmark_scale) {
  check_min_size(sample);
  if (!config.enabled) {
    if (sample.face_patch.width() == kFinalFaceSize) {
      ModelInput in;
      in.face = to_float(sample.face_patch);
      in.eyes = to_float(sample.eyes_patch);
      in.landmarks = sample.landmark_feature;
      in.label = sample.label;
      return in;
    }
    return crop_final(sample);
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool flip = unit(rng) < config.flip_prob;
  const NormalizedSample s = flip ? flip_sample(sample, landmark_scale) : sample;

  ModelInput in;
  in.face = jittered_crop(s.face_patch, kFinalFaceSize, kFinalFaceSize, config, rng);
  const EyeHalves eyes = split_eyes(s.eyes_patch);
  Image right = jittered_crop(eyes.right, kFinalEyeWidth, kFinalEyeHeight, config, rng);
  Image left = jittered_crop(eyes.left, kFinalEyeWidth, kFinalEyeHeight, config, rng);
  in.eyes = hconcat(right, left);
  in.landmarks = s.landmark_feature;
  in.label = s.label;

  std::uniform_real_distribution<double> bright(config.brightness_min, config.brightness_max);
  const float factor = static_cast<float>(bright(rng));
  const double sigma = std::sqrt(config.noise_variance);
  std::normal_distribution<double> noise(0.0, sigma > 0.0 ? sigma : 1.0);
  for (Image* img : {&in.face, &in.eyes}) {
    for (float& v : img->values()) {
      double x = static_cast<double>(v) * factor;
      if (sigma > 0.0) x += noise(rng);
      v = static_cast<float>(std::clamp(x, 0.0, 1.0));
    }
  }
  return in;
}

}  // namespace gazenet
