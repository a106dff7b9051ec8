// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gazenet/datamodel.hpp"
#include "gazenet/trainer.hpp"

namespace gazenet {

struct FramePrediction {
  FrameKey key;
  Vec3 predicted;     ///< unit gaze, original camera space
  Vec3 ground_truth;  ///< unit gaze, original camera space
  double error = 0.0;  ///< degrees
  GazeAngles gaze_angles;  ///< ground-truth gaze direction, camera space
  GazeAngles head_angles;  ///< head forward direction, camera space
};

struct ErrorSummary {
  double mean = std::numeric_limits<double>::quiet_NaN();
  std::size_t count = 0;
};

struct EvalReport {
  std::string model;
  std::string mode;  ///< "static", "temporal", "head"
  std::vector<FramePrediction> frames;
  std::optional<FoldPlan> fold_plan;

  /// Frame-weighted mean over all frames.
  ErrorSummary overall() const;
  std::map<std::string, ErrorSummary> by_subject(std::optional<HeadKind> head = std::nullopt,
                                                 std::optional<TargetKind> target = std::nullopt) const;
  std::map<HeadKind, ErrorSummary> by_head_kind() const;
  std::map<TargetKind, ErrorSummary> by_target_kind() const;
  std::set<FrameKey> keys() const;

  nlohmann::json summary_json() const;
};

/// Errors of de-normalized predictions: angles -> vector in the virtual frame
/// -> rotated back by R^T -> compared with the camera-space label.
EvalReport make_report(std::string model, std::string mode,
                       std::span<const NormalizedSample> samples,
                       std::span<const GazeAngles> predictions);

/// Head forward axis H * (0, 0, forward_sign) taken as the gaze.
EvalReport head_baseline(std::span<const FrameRecord> records, int forward_sign = -1);
/// Same baseline from normalized samples (uses their stored head pose and gaze).
EvalReport head_baseline(std::span<const NormalizedSample> samples, int forward_sign = -1);

/// Frames whose key is in `keys`, in original order.
EvalReport restrict_to(const EvalReport& report, const std::set<FrameKey>& keys);
/// Both reports restricted to their common frames.
std::pair<EvalReport, EvalReport> comparable(const EvalReport& a, const EvalReport& b);

/// Tab-separated per-frame dump with full precision.
void write_frame_dump(const EvalReport& report, const std::filesystem::path& path);
EvalReport read_frame_dump(const std::filesystem::path& path);

/// Subject columns and an average column, split into static-head and
/// moving-head halves; optionally followed by externally published averages.
std::string render_table(std::span<const EvalReport> reports, bool include_reference = true);

/// Writes frames.tsv, summary.json and table.txt under `dir`.
void write_report_files(const EvalReport& report, const std::filesystem::path& dir);

// --------------------------------------------------------------------------
// Cross-validation

enum class EvalMode { Static, Temporal };

std::string to_string(EvalMode mode);
EvalMode parse_eval_mode(const std::string& text);

struct CrossValidationOptions {
  EvalMode mode = EvalMode::Static;
  ModelConfig model;  ///< stage-1 architecture; temporal mode forces temporal_dims
  TrainConfig train;
  PatchConfig patch;
  FilterConfig filter;
};

struct CrossValidationResult {
  /// Static predictions; in temporal mode restricted to the temporal frames.
  EvalReport static_report;
  std::optional<EvalReport> temporal_report;
  /// Head baseline on the same frames as `static_report`.
  EvalReport head_report;
};

/// Runs every fold on pre-normalized samples (sorted by key). Throws when a
/// fold has no training subjects.
CrossValidationResult run_cross_validation(std::vector<NormalizedSample> samples,
                                           const FoldPlan& plan,
                                           const CrossValidationOptions& options);

/// Loads, filters and normalizes a manifest, then runs `run_cross_validation`.
CrossValidationResult run_cross_validation(const std::filesystem::path& manifest,
                                           const std::filesystem::path& intrinsics,
                                           const FoldPlan& plan,
                                           const CrossValidationOptions& options);

// --------------------------------------------------------------------------
// Error grids

enum class GridSpace { Gaze, Head };

struct GridCell {
  double sum = 0.0;
  std::size_t count = 0;
  double mean() const { return count ? sum / static_cast<double>(count) : 0.0; }
};

struct ErrorGrid {
  GridSpace space = GridSpace::Gaze;
  double bin_width = 5.0;  ///< degrees
  /// (theta bin, phi bin) -> cell; bin i covers [i * w, (i + 1) * w).
  std::map<std::pair<int, int>, GridCell> cells;

  std::size_t total_count() const;
  /// Long-form rows: theta_lo, theta_hi, phi_lo, phi_hi, count, mean_error.
  std::string to_tsv() const;
};

ErrorGrid emit_error_grid(const EvalReport& report, GridSpace space, double bin_width = 5.0);
/// a - b on the bins present in both; counts taken from `a`.
ErrorGrid difference_grid(const ErrorGrid& a, const ErrorGrid& b);

}  // namespace gazenet
