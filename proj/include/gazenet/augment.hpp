// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "gazenet/datamodel.hpp"

namespace gazenet {

struct AugmentConfig {
  bool enabled = true;
  double flip_prob = 0.5;
  int max_shift = 5;        ///< pixels
  double max_zoom = 0.02;   ///< fraction of the crop size
  double brightness_min = 0.4;
  double brightness_max = 1.75;
  double noise_variance = 0.03;  ///< on [0, 1] intensities
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const AugmentConfig& c);
void from_json(const nlohmann::json& j, AugmentConfig& c);

/// Network-ready inputs at final sizes: face 224x224, eyes 120x48.
struct ModelInput {
  Image face;
  Image eyes;
  std::vector<float> landmarks;
  GazeAngles label;
};

/// Deterministic evaluation path: center crops. Throws ShapeError unless the
/// patches are at pre-crop size.
ModelInput crop_final(const NormalizedSample& sample);

/// Horizontal mirror: flips the face, mirrors and swaps the eye halves, mirrors
/// the landmark feature (x -> w - x with left/right landmark correspondence)
/// and negates theta.
NormalizedSample flip_sample(const NormalizedSample& sample, double landmark_scale = 1.0);

/// Flip, crop placement (shift/zoom), shared brightness, per-pixel noise.
/// Patches already at final size get no shift or zoom.
ModelInput augment_sample(const NormalizedSample& sample, const AugmentConfig& config,
                          std::mt19937_64& rng, double landmark_scale = 1.0);

/// Index of the horizontally mirrored counterpart in the 68-point layout.
const std::array<int, kNumLandmarks>& landmark_mirror_permutation();

/// Independent stream seed for (seed, a, b); used for per-sample and
/// per-worker random streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace gazenet
