// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one JSON document with model, train, augment (inside
// train), patch, filter, data, eval and synth blocks. Missing keys keep their
// defaults.
#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "gazenet/datamodel.hpp"
#include "gazenet/evalharness.hpp"
#include "gazenet/network.hpp"
#include "gazenet/synthgen.hpp"
#include "gazenet/trainer.hpp"

namespace gazenet {

/// Environment variable naming the default configuration file.
inline constexpr const char* kConfigEnv = "GAZENET_CONFIG";

struct DataConfig {
  std::filesystem::path manifest;
  std::filesystem::path intrinsics;
  /// Number of folds; 0 selects leave-one-subject-out.
  int folds = 4;
  /// Optional explicit `subject fold` assignment; overrides `folds`.
  std::filesystem::path group_file;
};

struct EvalConfig {
  EvalMode mode = EvalMode::Static;
  double bin_width = 5.0;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  PatchConfig patch;
  FilterConfig filter;
  DataConfig data;
  EvalConfig eval;
  DatasetSpec synth;

  nlohmann::json to_json() const;
  /// Relative data paths resolve against `base_dir`.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static RunConfig load(const std::filesystem::path& path);
};

/// Explicit path, else the environment variable, else nullopt.
std::optional<std::filesystem::path> resolve_config_path(const std::string& explicit_path);

FoldPlan make_fold_plan(const DataConfig& data, std::vector<std::string> subjects);

}  // namespace gazenet
