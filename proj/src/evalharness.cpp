// SPDX-License-Identifier: Apache-2.0
#include "gazenet/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "gazenet/errors.hpp"

namespace gazenet {

namespace fs = std::filesystem;

namespace {

GazeAngles direction_angles(const Vec3& g) {
  return {std::atan2(-g.x(), -g.z()), std::asin(std::clamp(-g.y(), -1.0, 1.0))};
}

FramePrediction make_frame(const FrameKey& key, const Vec3& predicted, const Vec3& gt,
                           const HeadPose& head, int forward_sign = -1) {
  FramePrediction f;
  f.key = key;
  f.predicted = predicted.normalized();
  f.ground_truth = gt.normalized();
  f.error = angular_error(f.predicted, f.ground_truth);
  f.gaze_angles = direction_angles(f.ground_truth);
  f.head_angles = direction_angles(head.rotation * Vec3(0.0, 0.0, forward_sign));
  return f;
}

ErrorSummary summarize(const std::vector<const FramePrediction*>& frames) {
  ErrorSummary s;
  if (frames.empty()) return s;
  double sum = 0.0;
  for (const auto* f : frames) sum += f->error;
  s.count = frames.size();
  s.mean = sum / static_cast<double>(s.count);
  return s;
}

std::string fmt(double v, int precision = 1) {
  if (!std::isfinite(v)) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

}  // namespace

// --------------------------------------------------------------------------
// Reports

ErrorSummary EvalReport::overall() const {
  std::vector<const FramePrediction*> all;
  for (const auto& f : frames) all.push_back(&f);
  return summarize(all);
}

std::map<std::string, ErrorSummary> EvalReport::by_subject(std::optional<HeadKind> head,
                                                           std::optional<TargetKind> target) const {
  std::map<std::string, std::vector<const FramePrediction*>> groups;
  for (const auto& f : frames) {
    if (head && f.key.session.head_kind != *head) continue;
    if (target && f.key.session.target_kind != *target) continue;
    groups[f.key.subject_id].push_back(&f);
  }
  std::map<std::string, ErrorSummary> out;
  for (const auto& [k, v] : groups) out[k] = summarize(v);
  return out;
}

std::map<HeadKind, ErrorSummary> EvalReport::by_head_kind() const {
  std::map<HeadKind, std::vector<const FramePrediction*>> groups;
  for (const auto& f : frames) groups[f.key.session.head_kind].push_back(&f);
  std::map<HeadKind, ErrorSummary> out;
  for (const auto& [k, v] : groups) out[k] = summarize(v);
  return out;
}

std::map<TargetKind, ErrorSummary> EvalReport::by_target_kind() const {
  std::map<TargetKind, std::vector<const FramePrediction*>> groups;
  for (const auto& f : frames) groups[f.key.session.target_kind].push_back(&f);
  std::map<TargetKind, ErrorSummary> out;
  for (const auto& [k, v] : groups) out[k] = summarize(v);
  return out;
}

std::set<FrameKey> EvalReport::keys() const {
  std::set<FrameKey> k;
  for (const auto& f : frames) k.insert(f.key);
  return k;
}

nlohmann::json EvalReport::summary_json() const {
  auto js = [](const ErrorSummary& s) {
    return nlohmann::json{{"mean_deg", std::isfinite(s.mean) ? nlohmann::json(s.mean) : nlohmann::json()},
                          {"count", s.count}};
  };
  nlohmann::json j;
  j["model"] = model;
  j["mode"] = mode;
  j["overall"] = js(overall());
  for (const auto& [k, s] : by_subject()) j["by_subject"][k] = js(s);
  for (const auto& [k, s] : by_head_kind()) j["by_head_kind"][to_string(k)] = js(s);
  for (const auto& [k, s] : by_target_kind()) j["by_target_kind"][to_string(k)] = js(s);
  for (auto hk : {HeadKind::Static, HeadKind::Moving}) {
    for (const auto& [k, s] : by_subject(hk)) j["by_subject_head_kind"][to_string(hk)][k] = js(s);
  }
  if (fold_plan) {
    nlohmann::json folds;
    for (const auto& [subject, fold] : fold_plan->groups) folds[subject] = fold;
    j["fold_plan"] = {{"k", fold_plan->k}, {"groups", folds}};
  }
  return j;
}

EvalReport make_report(std::string model, std::string mode,
                       std::span<const NormalizedSample> samples,
                       std::span<const GazeAngles> predictions) {
  if (samples.size() != predictions.size()) {
    throw std::invalid_argument("one prediction per sample required");
  }
  EvalReport r;
  r.model = std::move(model);
  r.mode = std::move(mode);
  r.frames.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Vec3 pred = denormalize_gaze(angles_to_gaze(predictions[i]), samples[i].rotation);
    r.frames.push_back(make_frame(samples[i].key, pred, samples[i].gaze, samples[i].head));
  }
  return r;
}

EvalReport head_baseline(std::span<const FrameRecord> records, int forward_sign) {
  EvalReport r;
  r.model = "Head";
  r.mode = "head";
  for (const auto& rec : records) {
    const Vec3 pred = rec.head.rotation * Vec3(0.0, 0.0, forward_sign);
    r.frames.push_back(make_frame(key_of(rec), pred, compute_gt_gaze(rec), rec.head, forward_sign));
  }
  return r;
}

EvalReport head_baseline(std::span<const NormalizedSample> samples, int forward_sign) {
  EvalReport r;
  r.model = "Head";
  r.mode = "head";
  for (const auto& s : samples) {
    const Vec3 pred = s.head.rotation * Vec3(0.0, 0.0, forward_sign);
    r.frames.push_back(make_frame(s.key, pred, s.gaze, s.head, forward_sign));
  }
  return r;
}

EvalReport restrict_to(const EvalReport& report, const std::set<FrameKey>& keys) {
  EvalReport r = report;
  r.frames.clear();
  for (const auto& f : report.frames) {
    if (keys.contains(f.key)) r.frames.push_back(f);
  }
  return r;
}

std::pair<EvalReport, EvalReport> comparable(const EvalReport& a, const EvalReport& b) {
  const auto ka = a.keys();
  std::set<FrameKey> shared;
  for (const auto& f : b.frames) {
    if (ka.contains(f.key)) shared.insert(f.key);
  }
  return {restrict_to(a, shared), restrict_to(b, shared)};
}

// --------------------------------------------------------------------------
// Files

void write_frame_dump(const EvalReport& report, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << "# model=" << report.model << " mode=" << report.mode << "\n";
  f << "subject\ttarget_kind\thead_kind\tlighting\tframe_index\tpred_x\tpred_y\tpred_z\tgt_x\tgt_y"
       "\tgt_z\terror_deg\tgaze_theta\tgaze_phi\thead_theta\thead_phi\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (const auto& fr : report.frames) {
    f << fr.key.subject_id << '\t' << to_string(fr.key.session.target_kind) << '\t'
      << to_string(fr.key.session.head_kind) << '\t' << fr.key.session.lighting_id << '\t'
      << fr.key.frame_index;
    for (double v : {fr.predicted.x(), fr.predicted.y(), fr.predicted.z(), fr.ground_truth.x(),
                     fr.ground_truth.y(), fr.ground_truth.z(), fr.error, fr.gaze_angles.theta,
                     fr.gaze_angles.phi, fr.head_angles.theta, fr.head_angles.phi}) {
      f << '\t' << num(v);
    }
    f << '\n';
  }
  if (!f) throw IoError("short write to " + path.string());
}

EvalReport read_frame_dump(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  EvalReport r;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ss(line.substr(1));
      std::string tok;
      while (ss >> tok) {
        if (tok.rfind("model=", 0) == 0) r.model = tok.substr(6);
        if (tok.rfind("mode=", 0) == 0) r.mode = tok.substr(5);
      }
      continue;
    }
    if (line.rfind("subject\t", 0) == 0) continue;
    std::vector<std::string> cols;
    std::istringstream ss(line);
    std::string c;
    while (std::getline(ss, c, '\t')) cols.push_back(c);
    const auto where = path.string() + ":" + std::to_string(lineno) + ": ";
    if (cols.size() != 16) throw ParseError(where + "expected 16 columns");
    try {
      FramePrediction p;
      p.key.subject_id = cols[0];
      p.key.session.target_kind = parse_target_kind(cols[1]);
      p.key.session.head_kind = parse_head_kind(cols[2]);
      p.key.session.lighting_id = cols[3];
      p.key.frame_index = std::stoll(cols[4]);
      double v[11];
      for (int i = 0; i < 11; ++i) v[i] = std::stod(cols[5 + i]);
      p.predicted = Vec3(v[0], v[1], v[2]);
      p.ground_truth = Vec3(v[3], v[4], v[5]);
      p.error = v[6];
      p.gaze_angles = {v[7], v[8]};
      p.head_angles = {v[9], v[10]};
      r.frames.push_back(p);
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(where + e.what());
    }
  }
  return r;
}

std::string render_table(std::span<const EvalReport> reports, bool include_reference) {
  std::set<std::string> subjects;
  for (const auto& r : reports) {
    for (const auto& f : r.frames) subjects.insert(f.key.subject_id);
  }
  std::size_t name_w = 8;
  for (const auto& r : reports) name_w = std::max(name_w, r.model.size());
  std::ostringstream os;
  auto cell = [&](const std::string& s, std::size_t w) {
    os << ' ' << std::setw(static_cast<int>(w)) << s << " |";
  };
  for (auto hk : {HeadKind::Static, HeadKind::Moving}) {
    os << "Angular error (degrees), " << to_string(hk) << " head\n";
    os << '|';
    cell("Method", name_w);
    for (const auto& s : subjects) cell(s, std::max<std::size_t>(5, s.size()));
    cell("Avg.", 5);
    os << '\n';
    for (const auto& r : reports) {
      os << '|';
      os << ' ' << std::left << std::setw(static_cast<int>(name_w)) << r.model << std::right << " |";
      const auto per = r.by_subject(hk);
      std::vector<const FramePrediction*> all;
      for (const auto& f : r.frames) {
        if (f.key.session.head_kind == hk) all.push_back(&f);
      }
      for (const auto& s : subjects) {
        auto it = per.find(s);
        cell(it == per.end() ? "-" : fmt(it->second.mean), std::max<std::size_t>(5, s.size()));
      }
      cell(fmt(summarize(all).mean), 5);
      os << '\n';
    }
    os << '\n';
  }
  if (include_reference) {
    os << "External reference: published averages on EYEDIAP FT, leave-one-subject-out.\n"
          "Not computed by this software; shown for context only.\n"
          "| Method   | static | moving |\n"
          "| Head     |   23.3 |   18.7 |\n"
          "| PR-ALR   |   13.9 |      - |\n"
          "| MPIIGaze |    6.8 |    7.3 |\n"
          "| Static   |    5.1 |    6.3 |\n"
          "| Temporal |    5.2 |    6.2 |\n";
  }
  return os.str();
}

void write_report_files(const EvalReport& report, const fs::path& dir) {
  fs::create_directories(dir);
  write_frame_dump(report, dir / "frames.tsv");
  {
    std::ofstream f(dir / "summary.json", std::ios::trunc);
    f << report.summary_json().dump(2) << '\n';
  }
  std::ofstream t(dir / "table.txt", std::ios::trunc);
  t << render_table(std::span<const EvalReport>(&report, 1));
}

// --------------------------------------------------------------------------
// Cross-validation

std::string to_string(EvalMode mode) { return mode == EvalMode::Static ? "static" : "temporal"; }

EvalMode parse_eval_mode(const std::string& text) {
  if (text == "static") return EvalMode::Static;
  if (text == "temporal") return EvalMode::Temporal;
  throw ParseError("unknown mode '" + text + "' (expected static or temporal)");
}

CrossValidationResult run_cross_validation(std::vector<NormalizedSample> samples,
                                           const FoldPlan& plan,
                                           const CrossValidationOptions& options) {
  std::sort(samples.begin(), samples.end(),
            [](const auto& a, const auto& b) { return a.key < b.key; });
  ModelConfig stage1_model = options.model;
  ModelConfig temporal_model = options.model;
  if (options.mode == EvalMode::Temporal) {
    stage1_model.temporal_dims = true;
    temporal_model.temporal_dims = true;
  }

  std::vector<SequenceWindow> all_windows;
  if (options.mode == EvalMode::Temporal) {
    all_windows = make_windows(samples, temporal_model.sequence_length);
  }

  CrossValidationResult result;
  result.static_report.model = "Static";
  result.static_report.mode = "static";
  result.static_report.fold_plan = plan;
  EvalReport temporal;
  temporal.model = "Temporal";
  temporal.mode = "temporal";
  temporal.fold_plan = plan;

  std::set<std::string> present;
  for (const auto& s : samples) present.insert(s.key.subject_id);

  for (int fold = 0; fold < plan.k; ++fold) {
    const auto test_list = plan.subjects_in(fold);
    const auto train_list = plan.subjects_outside(fold);
    const std::set<std::string> test_subjects(test_list.begin(), test_list.end());
    std::set<std::string> train_subjects;
    for (const auto& s : train_list) {
      if (present.contains(s)) train_subjects.insert(s);
    }
    if (train_subjects.empty()) {
      throw std::invalid_argument("fold " + std::to_string(fold) + " has no training subjects");
    }
    std::vector<NormalizedSample> train, test;
    std::vector<std::size_t> test_idx;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& id = samples[i].key.subject_id;
      if (test_subjects.contains(id)) {
        test.push_back(samples[i]);
        test_idx.push_back(i);
      } else if (train_subjects.contains(id)) {
        train.push_back(samples[i]);
      }
    }
    if (test.empty()) continue;
    auto [fit, val] = split_validation(std::move(train), options.train.validation_subjects);
    for (const auto* part : {&fit, &val}) {
      for (const auto& s : *part) {
        if (test_subjects.contains(s.key.subject_id)) {
          throw std::logic_error("test subject " + s.key.subject_id + " leaked into training");
        }
      }
    }

    TrainConfig tc = options.train;
    if (!tc.checkpoint_dir.empty()) tc.checkpoint_dir /= "fold_" + std::to_string(fold);
    const TrainResult stage1 = train_stage1(fit, val, stage1_model, tc);
    const auto preds = predict_static(stage1.params, test);
    const EvalReport fold_static = make_report("Static", "static", test, preds);
    result.static_report.frames.insert(result.static_report.frames.end(),
                                       fold_static.frames.begin(), fold_static.frames.end());

    if (options.mode == EvalMode::Temporal) {
      std::set<std::string> fit_subjects, val_subjects;
      for (const auto& s : fit) fit_subjects.insert(s.key.subject_id);
      for (const auto& s : val) val_subjects.insert(s.key.subject_id);
      std::vector<SequenceWindow> w_train, w_val, w_test;
      for (const auto& w : all_windows) {
        const auto& id = samples[w.samples.back()].key.subject_id;
        if (fit_subjects.contains(id)) w_train.push_back(w);
        else if (val_subjects.contains(id)) w_val.push_back(w);
        else if (test_subjects.contains(id)) w_test.push_back(w);
      }
      std::vector<NormalizedSample> needed;
      std::set<std::size_t> idx;
      for (const auto* ws : {&w_train, &w_val, &w_test}) {
        for (const auto& w : *ws) idx.insert(w.samples.begin(), w.samples.end());
      }
      for (auto i : idx) needed.push_back(samples[i]);
      const FeatureCache cache = build_feature_cache(stage1.params, needed);
      const TrainResult stage2 =
          train_stage2(stage1.params, samples, w_train, w_val, temporal_model, tc, &cache);
      const auto tpred = predict_temporal(stage2.params, samples, w_test, cache);
      std::vector<NormalizedSample> last;
      for (const auto& w : w_test) last.push_back(samples[w.samples.back()]);
      const EvalReport fold_temporal = make_report("Temporal", "temporal", last, tpred);
      temporal.frames.insert(temporal.frames.end(), fold_temporal.frames.begin(),
                             fold_temporal.frames.end());
    }
  }

  if (options.mode == EvalMode::Temporal) {
    auto [s, t] = comparable(result.static_report, temporal);
    result.static_report = std::move(s);
    result.temporal_report = std::move(t);
  }
  std::vector<NormalizedSample> evaluated;
  const auto keys = result.static_report.keys();
  for (const auto& s : samples) {
    if (keys.contains(s.key)) evaluated.push_back(s);
  }
  result.head_report = head_baseline(evaluated, options.patch.forward_sign);
  result.head_report.fold_plan = plan;
  return result;
}

CrossValidationResult run_cross_validation(const fs::path& manifest, const fs::path& intrinsics,
                                           const FoldPlan& plan,
                                           const CrossValidationOptions& options) {
  const IntrinsicsTable cameras = load_intrinsics_table(intrinsics);
  auto records = load_manifest(manifest, cameras);
  auto kept = filter_frames(std::move(records), options.filter).kept;
  auto samples = normalize_frames(kept, cameras, disk_image_loader(), options.patch);
  return run_cross_validation(std::move(samples), plan, options);
}

// --------------------------------------------------------------------------
// Error grids

std::size_t ErrorGrid::total_count() const {
  std::size_t n = 0;
  for (const auto& [k, c] : cells) n += c.count;
  return n;
}

std::string ErrorGrid::to_tsv() const {
  std::ostringstream os;
  os << "# space=" << (space == GridSpace::Gaze ? "gaze" : "head") << " bin_width=" << bin_width
     << "\n";
  os << "theta_lo\ttheta_hi\tphi_lo\tphi_hi\tcount\tmean_error\n";
  char buf[160];
  for (const auto& [k, c] : cells) {
    std::snprintf(buf, sizeof(buf), "%g\t%g\t%g\t%g\t%zu\t%.9g\n", k.first * bin_width,
                  (k.first + 1) * bin_width, k.second * bin_width, (k.second + 1) * bin_width,
                  c.count, c.mean());
    os << buf;
  }
  return os.str();
}

ErrorGrid emit_error_grid(const EvalReport& report, GridSpace space, double bin_width) {
  if (report.frames.empty()) throw std::invalid_argument("cannot grid an empty report");
  if (!(bin_width > 0.0)) throw std::invalid_argument("bin width must be positive");
  ErrorGrid g;
  g.space = space;
  g.bin_width = bin_width;
  for (const auto& f : report.frames) {
    const GazeAngles& a = space == GridSpace::Gaze ? f.gaze_angles : f.head_angles;
    const int bt = static_cast<int>(std::floor(rad2deg(a.theta) / bin_width));
    const int bp = static_cast<int>(std::floor(rad2deg(a.phi) / bin_width));
    auto& c = g.cells[{bt, bp}];
    c.sum += f.error;
    ++c.count;
  }
  return g;
}

ErrorGrid difference_grid(const ErrorGrid& a, const ErrorGrid& b) {
  if (a.space != b.space || a.bin_width != b.bin_width) {
    throw std::invalid_argument("grids differ in space or bin width");
  }
  ErrorGrid d;
  d.space = a.space;
  d.bin_width = a.bin_width;
  for (const auto& [k, c] : a.cells) {
    auto it = b.cells.find(k);
    if (it == b.cells.end()) continue;
    GridCell cell;
    cell.count = c.count;
    cell.sum = (c.mean() - it->second.mean()) * static_cast<double>(c.count);
    d.cells[k] = cell;
  }
  return d;
}

}  // namespace gazenet
