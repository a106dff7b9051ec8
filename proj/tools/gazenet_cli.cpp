// SPDX-License-Identifier: Apache-2.0
//
// gazenet command line: synth-gen, normalize, train, evaluate, heatmap.
#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>

#include "gazenet/config.hpp"
#include "gazenet/errors.hpp"

namespace fs = std::filesystem;
using namespace gazenet;

namespace {

/// Thrown for argument problems that should exit with status 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Range parse_range(const std::string& text) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) throw UsageError("range must be lo,hi: " + text);
  try {
    Range r{std::stod(text.substr(0, comma)), std::stod(text.substr(comma + 1))};
    if (r.hi < r.lo) throw UsageError("range upper bound below lower bound: " + text);
    return r;
  } catch (const std::logic_error&) {
    throw UsageError("bad range: " + text);
  }
}

RunConfig load_config(const std::string& flag, bool required) {
  const auto path = resolve_config_path(flag);
  if (!path) {
    if (required) {
      throw UsageError(std::string("no configuration file: pass --config or set ") + kConfigEnv);
    }
    return {};
  }
  if (!fs::exists(*path)) throw UsageError("configuration file not found: " + path->string());
  return RunConfig::load(*path);
}

struct Data {
  IntrinsicsTable cameras;
  std::vector<NormalizedSample> samples;
  std::size_t rejected = 0;
};

Data load_samples(const RunConfig& cfg) {
  if (cfg.data.manifest.empty() || cfg.data.intrinsics.empty()) {
    throw UsageError("configuration lacks data.manifest / data.intrinsics (or pass --manifest)");
  }
  Data d;
  d.cameras = load_intrinsics_table(cfg.data.intrinsics);
  auto records = load_manifest(cfg.data.manifest, d.cameras);
  auto filtered = filter_frames(std::move(records), cfg.filter);
  d.rejected = filtered.rejected.size();
  d.samples = normalize_frames(filtered.kept, d.cameras, disk_image_loader(), cfg.patch);
  std::sort(d.samples.begin(), d.samples.end(),
            [](const auto& a, const auto& b) { return a.key < b.key; });
  std::fprintf(stderr, "loaded %zu frames (%zu rejected by the filter)\n", d.samples.size(),
               d.rejected);
  return d;
}

void add_data_overrides(CLI::App* cmd, std::string& manifest, std::string& intrinsics) {
  cmd->add_option("--manifest", manifest, "Manifest (JSON lines); overrides data.manifest");
  cmd->add_option("--intrinsics", intrinsics, "Camera table (CSV); overrides data.intrinsics");
}

void apply_data_overrides(RunConfig& cfg, const std::string& manifest,
                          const std::string& intrinsics) {
  if (!manifest.empty()) {
    cfg.data.manifest = manifest;
    if (intrinsics.empty()) cfg.data.intrinsics = fs::path(manifest).parent_path() / "cameras.csv";
  }
  if (!intrinsics.empty()) cfg.data.intrinsics = intrinsics;
}

void write_table(const fs::path& path, const std::vector<EvalReport>& reports) {
  std::ofstream f(path, std::ios::trunc);
  f << render_table(reports);
}

void print_summary(const EvalReport& r) {
  const auto o = r.overall();
  std::printf("%-9s mean %.3f deg over %zu frames\n", r.model.c_str(), o.mean, o.count);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Appearance-based gaze estimation: data generation, training and evaluation"};
  app.require_subcommand(1);
  app.footer(std::string("Environment: ") + kConfigEnv + " names the default configuration file.");

  // synth-gen
  auto* synth = app.add_subcommand("synth-gen", "Render a synthetic dataset with exact ground truth");
  std::string synth_config, synth_out;
  std::optional<int> n_subjects, frames;
  std::optional<std::uint64_t> synth_seed;
  std::string trajectory, sessions, yaw, pitch, roll, distance, lateral, theta, phi, target_distance;
  std::optional<double> blink_prob, period, lighting, iris_x, iris_y, focal;
  std::optional<int> fixation_frames, blink_length, image_w, image_h, supersample;
  bool overwrite = false;
  synth->add_option("--config", synth_config, "Run configuration (synth block)");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--subjects", n_subjects, "Number of subjects");
  synth->add_option("--frames", frames, "Frames per subject");
  synth->add_option("--seed", synth_seed, "Random seed");
  synth->add_option("--sessions", sessions, "Comma-separated head kinds, e.g. static,moving");
  synth->add_option("--trajectory", trajectory, "fixation | smooth-pursuit | saccade | blink");
  synth->add_option("--blink-prob", blink_prob, "Blink probability per frame");
  synth->add_option("--blink-length", blink_length, "Frames per blink");
  synth->add_option("--period", period, "Smooth-pursuit / head-motion period (frames)");
  synth->add_option("--fixation-frames", fixation_frames, "Mean fixation dwell (frames)");
  synth->add_option("--image-width", image_w, "Image width");
  synth->add_option("--image-height", image_h, "Image height");
  synth->add_option("--focal", focal, "Focal length (pixels); principal point at the center");
  synth->add_option("--yaw", yaw, "Head yaw range lo,hi (degrees)");
  synth->add_option("--pitch", pitch, "Head pitch range lo,hi (degrees)");
  synth->add_option("--roll", roll, "Head roll range lo,hi (degrees)");
  synth->add_option("--distance", distance, "Head distance range lo,hi (meters)");
  synth->add_option("--lateral", lateral, "Head lateral offset range lo,hi (meters)");
  synth->add_option("--theta", theta, "Eyeball yaw range lo,hi (degrees)");
  synth->add_option("--phi", phi, "Eyeball pitch range lo,hi (degrees)");
  synth->add_option("--target-distance", target_distance, "Gaze target distance lo,hi (meters)");
  synth->add_option("--lighting", lighting, "Lighting scalar");
  synth->add_option("--iris-shift-x", iris_x, "Iris shift per degree, horizontal (meters)");
  synth->add_option("--iris-shift-y", iris_y, "Iris shift per degree, vertical (meters)");
  synth->add_option("--supersample", supersample, "Samples per pixel axis");
  synth->add_flag("--overwrite", overwrite, "Replace an existing dataset in --out");

  // normalize
  auto* norm = app.add_subcommand("normalize", "Write normalized face/eyes patches for inspection");
  std::string norm_config, norm_out, norm_manifest, norm_intrinsics;
  std::optional<int> norm_limit;
  norm->add_option("--config", norm_config, "Run configuration");
  norm->add_option("--out", norm_out, "Output directory")->required();
  norm->add_option("--limit", norm_limit, "Only the first N kept frames");
  add_data_overrides(norm, norm_manifest, norm_intrinsics);

  // train
  auto* train = app.add_subcommand("train", "Train the static (stage 1) or temporal (stage 2) model");
  std::string train_config, train_out, train_mode = "static", stage1_path, train_manifest,
                                       train_intrinsics;
  std::optional<std::uint64_t> train_seed;
  bool train_resume = false;
  train->add_option("--config", train_config, "Run configuration");
  train->add_option("--out", train_out, "Output directory")->required();
  train->add_option("--mode", train_mode, "static | temporal")
      ->check(CLI::IsMember({"static", "temporal"}));
  train->add_option("--stage1", stage1_path, "Stage-1 parameters (required for --mode temporal)");
  train->add_option("--seed", train_seed, "Random seed");
  train->add_flag("--resume", train_resume, "Continue from the newest checkpoint");
  add_data_overrides(train, train_manifest, train_intrinsics);

  // evaluate
  auto* eval = app.add_subcommand(
      "evaluate", "Evaluate a saved model, or run cross-validation when no model is given");
  std::string eval_config, eval_out, eval_model, eval_static, eval_mode, eval_manifest,
      eval_intrinsics;
  std::optional<std::uint64_t> eval_seed;
  eval->add_option("--config", eval_config, "Run configuration");
  eval->add_option("--out", eval_out, "Report directory")->required();
  eval->add_option("--model", eval_model, "Saved parameters to evaluate");
  eval->add_option("--static-model", eval_static,
                   "Stage-1 parameters (temporal mode: feature extractor and static comparison)");
  eval->add_option("--mode", eval_mode, "static | temporal (default from config)")
      ->check(CLI::IsMember({"static", "temporal"}));
  eval->add_option("--seed", eval_seed, "Random seed for cross-validation training");
  add_data_overrides(eval, eval_manifest, eval_intrinsics);

  // heatmap
  auto* heat = app.add_subcommand("heatmap", "Bin per-frame errors over gaze or head angles");
  std::string heat_report, heat_minus, heat_space = "gaze", heat_out, heat_config;
  std::optional<double> heat_bin;
  heat->add_option("--config", heat_config, "Run configuration (eval.bin_width)");
  heat->add_option("--report", heat_report, "Per-frame dump (frames.tsv)")->required();
  heat->add_option("--minus", heat_minus,
                   "Second dump; writes report minus this one on shared bins");
  heat->add_option("--space", heat_space, "gaze | head")->check(CLI::IsMember({"gaze", "head"}));
  heat->add_option("--bin-width", heat_bin, "Bin width in degrees (default 5)");
  heat->add_option("--out", heat_out, "Output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*synth) {
      RunConfig cfg = load_config(synth_config, false);
      DatasetSpec spec = cfg.synth;
      if (n_subjects) spec.n_subjects = *n_subjects;
      if (frames) spec.frames_per_subject = *frames;
      if (synth_seed) spec.seed = *synth_seed;
      if (!sessions.empty()) {
        spec.sessions.clear();
        std::stringstream ss(sessions);
        std::string item;
        while (std::getline(ss, item, ',')) spec.sessions.push_back(parse_head_kind(item));
      }
      auto& tp = spec.trajectory;
      if (!trajectory.empty()) tp.kind = parse_trajectory_kind(trajectory);
      if (blink_prob) tp.blink_probability = *blink_prob;
      if (blink_length) tp.blink_length = *blink_length;
      if (period) tp.period = *period;
      if (fixation_frames) tp.fixation_frames = *fixation_frames;
      auto& sc = spec.scene;
      if (image_w) sc.image_size.width = *image_w;
      if (image_h) sc.image_size.height = *image_h;
      if (focal || image_w || image_h) {
        sc.camera = CameraIntrinsics::centered(focal.value_or(sc.camera.fx), sc.image_size);
      }
      for (auto [text, field] : {std::pair{&yaw, &sc.yaw}, {&pitch, &sc.pitch}, {&roll, &sc.roll},
                                 {&distance, &sc.distance}, {&lateral, &sc.lateral},
                                 {&theta, &sc.theta}, {&phi, &sc.phi},
                                 {&target_distance, &sc.target_distance}}) {
        if (!text->empty()) *field = parse_range(*text);
      }
      if (lighting) sc.lighting = *lighting;
      if (iris_x) sc.iris_shift_x = *iris_x;
      if (iris_y) sc.iris_shift_y = *iris_y;
      if (supersample) sc.supersample = *supersample;
      const auto ds = generate_dataset(spec, synth_out, overwrite);
      std::printf("wrote %zu frames: %s\n", ds.records.size(), ds.manifest.string().c_str());
      return 0;
    }

    if (*norm) {
      RunConfig cfg = load_config(norm_config, true);
      apply_data_overrides(cfg, norm_manifest, norm_intrinsics);
      const auto cameras = load_intrinsics_table(cfg.data.intrinsics);
      auto records = load_manifest(cfg.data.manifest, cameras);
      auto kept = filter_frames(std::move(records), cfg.filter).kept;
      if (norm_limit && *norm_limit < static_cast<int>(kept.size())) kept.resize(*norm_limit);
      const fs::path out(norm_out);
      fs::create_directories(out);
      std::ofstream index(out / "samples.jsonl", std::ios::trunc);
      const auto loader = disk_image_loader();
      for (const auto& r : kept) {
        const auto s = normalize_frame(r, loader(r), cameras.at(r.camera_id).intrinsics, cfg.patch);
        std::string stem = s.key.to_string();
        for (char& c : stem) {
          if (c == '/' || c == ' ' || c == ':') c = '_';
        }
        write_png(out / (stem + "_face.png"), s.face_patch);
        write_png(out / (stem + "_eyes.png"), s.eyes_patch);
        nlohmann::json j = {{"key", s.key.to_string()},
                            {"face", stem + "_face.png"},
                            {"eyes", stem + "_eyes.png"},
                            {"theta", s.label.theta},
                            {"phi", s.label.phi},
                            {"landmarks", s.landmark_feature}};
        index << j.dump() << '\n';
      }
      std::printf("normalized %zu frames into %s\n", kept.size(), out.string().c_str());
      return 0;
    }

    if (*train) {
      RunConfig cfg = load_config(train_config, true);
      apply_data_overrides(cfg, train_manifest, train_intrinsics);
      if (train_seed) cfg.train.seed = *train_seed;
      const fs::path out(train_out);
      fs::create_directories(out);
      if (cfg.train.checkpoint_dir.empty()) cfg.train.checkpoint_dir = out / "checkpoints";
      cfg.train.resume = cfg.train.resume || train_resume;
      cfg.train.verbose = true;
      const bool temporal = train_mode == "temporal";
      if (temporal) {
        if (stage1_path.empty()) {
          throw UsageError(
              "temporal training needs stage-1 parameters: pass --stage1 <file>, e.g. the "
              "model.params written by `train --mode static` (with model.temporal_dims true)");
        }
        if (!fs::exists(stage1_path)) {
          throw Error("stage-1 parameters not found: " + stage1_path +
                      " (run `train --mode static` first)");
        }
      }
      Data data = load_samples(cfg);
      if (!temporal) {
        auto [fit, val] = split_validation(std::move(data.samples), cfg.train.validation_subjects);
        const TrainResult r = train_stage1(fit, val, cfg.model, cfg.train);
        save_parameters(r.params, out / "model.params");
        r.history.write_tsv(out / "history.tsv");
      } else {
        const ModelParameters stage1 = read_parameters(stage1_path);
        ModelConfig tm = cfg.model;
        tm.temporal_dims = true;
        if (!stage1.config.temporal_dims) {
          std::fprintf(stderr,
                       "note: stage-1 model uses static fusion widths; the second fusion layer "
                       "is re-initialized\n");
        }
        const auto windows = make_windows(data.samples, tm.sequence_length);
        std::set<std::string> subjects;
        for (const auto& s : data.samples) subjects.insert(s.key.subject_id);
        std::set<std::string> held;
        if (subjects.size() >= 2) {
          auto it = subjects.end();
          for (int i = 0; i < std::min<int>(cfg.train.validation_subjects,
                                            static_cast<int>(subjects.size()) - 1);
               ++i) {
            held.insert(*--it);
          }
        }
        std::vector<SequenceWindow> wt, wv;
        for (const auto& w : windows) {
          (held.contains(data.samples[w.samples.back()].key.subject_id) ? wv : wt).push_back(w);
        }
        const FeatureCache cache = build_feature_cache(stage1, data.samples);
        cache.save(out / "features.cache");
        const TrainResult r = train_stage2(stage1, data.samples, wt, wv, tm, cfg.train, &cache);
        save_parameters(r.params, out / "model.params");
        r.history.write_tsv(out / "history.tsv");
      }
      std::printf("saved %s\n", (out / "model.params").string().c_str());
      return 0;
    }

    if (*eval) {
      RunConfig cfg = load_config(eval_config, true);
      apply_data_overrides(cfg, eval_manifest, eval_intrinsics);
      if (eval_seed) cfg.train.seed = *eval_seed;
      const EvalMode mode = eval_mode.empty() ? cfg.eval.mode : parse_eval_mode(eval_mode);
      const fs::path out(eval_out);
      fs::create_directories(out);
      Data data = load_samples(cfg);
      std::vector<EvalReport> reports;
      if (eval_model.empty()) {
        std::vector<std::string> subjects;
        for (const auto& s : data.samples) subjects.push_back(s.key.subject_id);
        const FoldPlan plan = make_fold_plan(cfg.data, subjects);
        CrossValidationOptions opt{mode, cfg.model, cfg.train, cfg.patch, cfg.filter};
        opt.train.verbose = true;
        if (!opt.train.checkpoint_dir.empty()) opt.train.checkpoint_dir /= "cv";
        const auto res = run_cross_validation(std::move(data.samples), plan, opt);
        reports = {res.head_report, res.static_report};
        if (res.temporal_report) reports.push_back(*res.temporal_report);
      } else if (mode == EvalMode::Static) {
        const ModelParameters params = read_parameters(eval_model);
        auto r = make_report("Static", "static", data.samples, predict_static(params, data.samples));
        reports = {head_baseline(data.samples, cfg.patch.forward_sign), std::move(r)};
      } else {
        if (eval_static.empty()) {
          throw UsageError("temporal evaluation needs --static-model (stage-1 parameters)");
        }
        const ModelParameters stage1 = read_parameters(eval_static);
        const ModelParameters temporal = read_parameters(eval_model);
        const auto windows = make_windows(data.samples, temporal.config.sequence_length);
        const FeatureCache cache = build_feature_cache(stage1, data.samples);
        std::vector<NormalizedSample> last;
        for (const auto& w : windows) last.push_back(data.samples[w.samples.back()]);
        auto t = make_report("Temporal", "temporal", last,
                             predict_temporal(temporal, data.samples, windows, cache));
        auto s = make_report("Static", "static", last, predict_static(stage1, last));
        reports = {head_baseline(last, cfg.patch.forward_sign), std::move(s), std::move(t)};
      }
      for (const auto& r : reports) {
        write_report_files(r, out / r.mode);
        print_summary(r);
      }
      write_table(out / "table.txt", reports);
      std::printf("reports written to %s\n", out.string().c_str());
      return 0;
    }

    if (*heat) {
      RunConfig cfg = load_config(heat_config, false);
      const double width = heat_bin.value_or(cfg.eval.bin_width);
      const GridSpace space = heat_space == "head" ? GridSpace::Head : GridSpace::Gaze;
      ErrorGrid grid = emit_error_grid(read_frame_dump(heat_report), space, width);
      if (!heat_minus.empty()) {
        grid = difference_grid(grid, emit_error_grid(read_frame_dump(heat_minus), space, width));
      }
      if (heat_out.empty()) {
        std::cout << grid.to_tsv();
      } else {
        std::ofstream f(heat_out, std::ios::trunc);
        f << grid.to_tsv();
      }
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
