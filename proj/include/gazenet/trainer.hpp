// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gazenet/augment.hpp"
#include "gazenet/datamodel.hpp"
#include "gazenet/network.hpp"
#include "gazenet/nn/adam.hpp"

namespace gazenet {

struct TrainConfig {
  double learning_rate = 1e-4;
  /// Stage-2 rate; defaults to `learning_rate`.
  std::optional<double> stage2_learning_rate;
  int batch_size = 64;
  int epochs_stage1 = 21;
  int epochs_stage2 = 10;
  std::uint64_t seed = 0;
  AugmentConfig augment;
  /// Per-epoch parameter files, optimizer state and history; empty disables.
  std::filesystem::path checkpoint_dir;
  /// Continue from the newest checkpoint in `checkpoint_dir` when present.
  bool resume = false;
  /// Subjects carved out of the training subjects for validation.
  int validation_subjects = 1;
  /// Optional external convolution weights for stage 1.
  std::filesystem::path pretrained;
  double landmark_scale = 1.0;
  /// Print one line per epoch to stderr.
  bool verbose = false;

  void validate() const;
  double stage2_rate() const { return stage2_learning_rate.value_or(learning_rate); }
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochStats {
  int epoch = 0;  ///< 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;           ///< NaN without validation data
  double val_angular_error = 0.0;  ///< degrees; NaN without validation data
  bool operator==(const EpochStats&) const = default;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;

  /// Tab-separated: epoch, train_loss, val_loss, val_angular_error.
  void write_tsv(const std::filesystem::path& path) const;
  static TrainHistory read_tsv(const std::filesystem::path& path);
};

struct TrainResult {
  ModelParameters params;
  TrainHistory history;
};

/// Splits samples by subject: the last `n` training subjects (sorted) become
/// validation. With fewer than two subjects nothing is held out.
std::pair<std::vector<NormalizedSample>, std::vector<NormalizedSample>> split_validation(
    std::vector<NormalizedSample> samples, int n);

/// Number of optimizer steps per epoch.
inline std::size_t steps_per_epoch(std::size_t n, int batch_size) {
  return (n + static_cast<std::size_t>(batch_size) - 1) / static_cast<std::size_t>(batch_size);
}

/// End-to-end static training with augmentation. `init`, when given, replaces
/// the random initialization (its layout must match `model`).
TrainResult train_stage1(std::span<const NormalizedSample> train,
                         std::span<const NormalizedSample> val, const ModelConfig& model,
                         const TrainConfig& config, const ModelParameters* init = nullptr);

/// Frozen individual-module outputs (face FC | eyes FC | landmarks) per frame.
struct FeatureCache {
  std::map<FrameKey, std::vector<float>> features;
  std::uint64_t params_hash = 0;

  std::size_t size() const { return features.size(); }
  /// Hash over all cached vectors (keys and values).
  std::uint64_t content_hash() const;
  const std::vector<float>& at(const FrameKey& key) const;

  /// Written to a temporary file and renamed, so a failed write never leaves a
  /// loadable partial cache.
  void save(const std::filesystem::path& path) const;
  static FeatureCache load(const std::filesystem::path& path);
};

/// Hash of the individual-module tensors a cache depends on.
std::uint64_t individual_hash(const nn::ParameterSet<float>& params);

FeatureCache build_feature_cache(const ModelParameters& params,
                                 std::span<const NormalizedSample> samples);
/// Throws StaleCacheError when the cache was produced by other parameters.
void check_feature_cache(const FeatureCache& cache, const ModelParameters& params);

/// Freezes the streams, fine-tunes the fusion layers (copied from
/// `static_params` where shapes match, fresh otherwise) and trains the
/// recurrent stack with a fresh regression head on last-frame labels.
/// `model` is the temporal architecture. A cache is built when none is given.
TrainResult train_stage2(const ModelParameters& static_params,
                         std::span<const NormalizedSample> samples,
                         std::span<const SequenceWindow> train_windows,
                         std::span<const SequenceWindow> val_windows, const ModelConfig& model,
                         const TrainConfig& config, const FeatureCache* cache = nullptr);

/// Evaluation-mode predictions (normalized angles), one per sample.
std::vector<GazeAngles> predict_static(const ModelParameters& params,
                                       std::span<const NormalizedSample> samples);
/// One prediction per window, for its last frame.
std::vector<GazeAngles> predict_temporal(const ModelParameters& params,
                                         std::span<const NormalizedSample> samples,
                                         std::span<const SequenceWindow> windows,
                                         const FeatureCache& cache);

}  // namespace gazenet
