// SPDX-License-Identifier: Apache-2.0
#include "gazenet/config.hpp"

#include <cstdlib>
#include <fstream>

#include "gazenet/errors.hpp"

namespace gazenet {

namespace fs = std::filesystem;

namespace {

nlohmann::json patch_json(const PatchConfig& p) {
  return {{"face_distance", p.face_distance},
          {"face_offset", p.face_offset},
          {"forward_sign", p.forward_sign},
          {"face_size", {p.face_size.width, p.face_size.height}},
          {"face_focal", p.face_focal},
          {"eye_distance", p.eye_distance},
          {"eye_size", {p.eye_size.width, p.eye_size.height}},
          {"eye_focal", p.eye_focal},
          {"landmark_scale", p.landmark_scale},
          {"constraint_frame", p.constraint_frame == ConstraintFrame::Head ? "head" : "normalized"}};
}

ConstraintFrame parse_frame(const std::string& s) {
  if (s == "head") return ConstraintFrame::Head;
  if (s == "normalized") return ConstraintFrame::Normalized;
  throw ParseError("constraint_frame must be 'head' or 'normalized'");
}

PatchConfig patch_from_json(const nlohmann::json& j) {
  PatchConfig p;
  p.face_distance = j.value("face_distance", p.face_distance);
  p.face_offset = j.value("face_offset", p.face_offset);
  p.forward_sign = j.value("forward_sign", p.forward_sign);
  if (j.contains("face_size")) {
    const auto s = j.at("face_size").get<std::array<int, 2>>();
    p.face_size = {s[0], s[1]};
  }
  p.face_focal = j.value("face_focal", p.face_focal);
  p.eye_distance = j.value("eye_distance", p.eye_distance);
  if (j.contains("eye_size")) {
    const auto s = j.at("eye_size").get<std::array<int, 2>>();
    p.eye_size = {s[0], s[1]};
  }
  p.eye_focal = j.value("eye_focal", p.eye_focal);
  p.landmark_scale = j.value("landmark_scale", p.landmark_scale);
  if (j.contains("constraint_frame")) {
    p.constraint_frame = parse_frame(j.at("constraint_frame").get<std::string>());
  }
  if (p.forward_sign != 1 && p.forward_sign != -1) throw ParseError("forward_sign must be +1 or -1");
  return p;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  return path.is_relative() && !base.empty() ? base / path : path;
}

}  // namespace

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["model"] = model.to_json();
  j["train"] = train;
  j["patch"] = patch_json(patch);
  j["filter"] = {{"max_theta_deg", filter.max_theta_deg},
                 {"max_phi_deg", filter.max_phi_deg},
                 {"frame", filter.frame == ConstraintFrame::Head ? "head" : "normalized"}};
  j["data"] = {{"manifest", data.manifest.string()},
               {"intrinsics", data.intrinsics.string()},
               {"folds", data.folds},
               {"group_file", data.group_file.string()}};
  j["eval"] = {{"mode", to_string(eval.mode)}, {"bin_width", eval.bin_width}};
  j["synth"] = synth;
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j, const fs::path& base_dir) {
  RunConfig c;
  try {
    if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    if (j.contains("patch")) c.patch = patch_from_json(j.at("patch"));
    if (j.contains("filter")) {
      const auto& f = j.at("filter");
      c.filter.max_theta_deg = f.value("max_theta_deg", c.filter.max_theta_deg);
      c.filter.max_phi_deg = f.value("max_phi_deg", c.filter.max_phi_deg);
      if (f.contains("frame")) c.filter.frame = parse_frame(f.at("frame").get<std::string>());
    }
    c.filter.forward_sign = c.patch.forward_sign;
    if (j.contains("data")) {
      const auto& d = j.at("data");
      c.data.manifest = resolve(base_dir, d.value("manifest", std::string()));
      c.data.intrinsics = resolve(base_dir, d.value("intrinsics", std::string()));
      c.data.folds = d.value("folds", c.data.folds);
      c.data.group_file = resolve(base_dir, d.value("group_file", std::string()));
      if (c.data.folds < 0) throw ParseError("data.folds must be >= 0");
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      if (e.contains("mode")) c.eval.mode = parse_eval_mode(e.at("mode").get<std::string>());
      c.eval.bin_width = e.value("bin_width", c.eval.bin_width);
    }
    if (j.contains("synth")) c.synth = j.at("synth").get<DatasetSpec>();
    if (!c.train.checkpoint_dir.empty()) {
      c.train.checkpoint_dir = resolve(base_dir, c.train.checkpoint_dir.string());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("configuration: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("configuration: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open configuration " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

std::optional<fs::path> resolve_config_path(const std::string& explicit_path) {
  if (!explicit_path.empty()) return fs::path(explicit_path);
  if (const char* env = std::getenv(kConfigEnv); env && *env) return fs::path(env);
  return std::nullopt;
}

FoldPlan make_fold_plan(const DataConfig& data, std::vector<std::string> subjects) {
  if (!data.group_file.empty()) return load_group_file(data.group_file);
  if (data.folds == 0) return plan_folds(std::move(subjects), FoldMode::LeaveOneSubjectOut);
  return plan_folds(std::move(subjects), FoldMode::KFold, data.folds);
}

}  // namespace gazenet
