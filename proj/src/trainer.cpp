// SPDX-License-Identifier: Apache-2.0
#include "gazenet/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "gazenet/errors.hpp"

namespace gazenet {

namespace fs = std::filesystem;

// --------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (stage2_learning_rate && !(*stage2_learning_rate > 0.0)) {
    throw std::invalid_argument("stage2_learning_rate must be positive");
  }
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (epochs_stage1 < 1 || epochs_stage2 < 1) throw std::invalid_argument("epochs must be >= 1");
  if (validation_subjects < 0) throw std::invalid_argument("validation_subjects must be >= 0");
  if (!(landmark_scale > 0.0)) throw std::invalid_argument("landmark_scale must be positive");
  augment.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"optimizer", "adam"},
       {"learning_rate", c.learning_rate},
       {"batch_size", c.batch_size},
       {"epochs_stage1", c.epochs_stage1},
       {"epochs_stage2", c.epochs_stage2},
       {"seed", c.seed},
       {"augment", c.augment},
       {"checkpoint_dir", c.checkpoint_dir.string()},
       {"resume", c.resume},
       {"validation_subjects", c.validation_subjects},
       {"pretrained", c.pretrained.string()},
       {"landmark_scale", c.landmark_scale}};
  if (c.stage2_learning_rate) j["stage2_learning_rate"] = *c.stage2_learning_rate;
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (j.contains("optimizer") && j.at("optimizer").get<std::string>() != "adam") {
    throw ParseError("only the adam optimizer is supported");
  }
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  if (j.contains("stage2_learning_rate")) {
    c.stage2_learning_rate = j.at("stage2_learning_rate").get<double>();
  }
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs_stage1 = j.value("epochs_stage1", c.epochs_stage1);
  c.epochs_stage2 = j.value("epochs_stage2", c.epochs_stage2);
  c.seed = j.value("seed", c.seed);
  if (j.contains("augment")) c.augment = j.at("augment").get<AugmentConfig>();
  c.checkpoint_dir = j.value("checkpoint_dir", c.checkpoint_dir.string());
  c.resume = j.value("resume", c.resume);
  c.validation_subjects = j.value("validation_subjects", c.validation_subjects);
  c.pretrained = j.value("pretrained", c.pretrained.string());
  c.landmark_scale = j.value("landmark_scale", c.landmark_scale);
  c.validate();
}

// --------------------------------------------------------------------------
// History

void TrainHistory::write_tsv(const fs::path& path) const {
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f << "epoch\ttrain_loss\tval_loss\tval_angular_error\n";
    char buf[128];
    for (const auto& e : epochs) {
      std::snprintf(buf, sizeof(buf), "%d\t%.17g\t%.17g\t%.17g\n", e.epoch, e.train_loss,
                    e.val_loss, e.val_angular_error);
      f << buf;
    }
    if (!f) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

TrainHistory TrainHistory::read_tsv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  TrainHistory h;
  std::string line;
  std::getline(f, line);
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    EpochStats e;
    std::istringstream ss(line);
    std::string a, b, c, d;
    if (!std::getline(ss, a, '\t') || !std::getline(ss, b, '\t') || !std::getline(ss, c, '\t') ||
        !std::getline(ss, d, '\t')) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected 4 columns");
    }
    try {
      e.epoch = std::stoi(a);
      e.train_loss = std::stod(b);
      e.val_loss = std::stod(c);
      e.val_angular_error = std::stod(d);
    } catch (const std::exception&) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad number");
    }
    h.epochs.push_back(e);
  }
  return h;
}

// --------------------------------------------------------------------------

std::pair<std::vector<NormalizedSample>, std::vector<NormalizedSample>> split_validation(
    std::vector<NormalizedSample> samples, int n) {
  std::set<std::string> subjects;
  for (const auto& s : samples) subjects.insert(s.key.subject_id);
  std::set<std::string> held;
  if (subjects.size() >= 2 && n > 0) {
    const int take = std::min<int>(n, static_cast<int>(subjects.size()) - 1);
    auto it = subjects.end();
    for (int i = 0; i < take; ++i) held.insert(*--it);
  }
  std::vector<NormalizedSample> train, val;
  for (auto& s : samples) {
    (held.contains(s.key.subject_id) ? val : train).push_back(std::move(s));
  }
  return {std::move(train), std::move(val)};
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct LoopSpec {
  std::string stage;
  std::size_t items = 0;
  int epochs = 1;
  double learning_rate = 1e-4;
  /// Forward/backward of one item; gradients scaled by `scale`. Returns the loss.
  std::function<double(std::size_t item, std::mt19937_64& rng, double scale,
                       nn::ParameterSet<float>& grads)>
      step;
  /// Mean (loss, angular error) on held-out data, or NaNs.
  std::function<std::pair<double, double>()> validate;
  std::function<std::string(std::size_t item)> describe;
  std::function<bool(const std::string&)> trainable;
};

std::string epoch_file(int epoch, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "epoch_%03d.%s", epoch, ext);
  return buf;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f << text;
  }
  fs::rename(tmp, path);
}

TrainHistory run_loop(ModelParameters& params, const LoopSpec& spec, const TrainConfig& config) {
  if (spec.items == 0) throw TrainingError(spec.stage + ": empty training set");
  nn::Adam adam(params.values, {spec.learning_rate});
  adam.set_trainable(spec.trainable);

  TrainHistory history;
  int start_epoch = 1;
  fs::path dir;
  if (!config.checkpoint_dir.empty()) {
    dir = config.checkpoint_dir / spec.stage;
    fs::create_directories(dir);
    const fs::path latest = dir / "latest";
    if (config.resume && fs::exists(latest)) {
      std::ifstream f(latest);
      int done = 0;
      f >> done;
      if (done < 1) throw ParseError(latest.string() + ": bad epoch number");
      ModelParameters restored = load_parameters(dir / epoch_file(done, "params"), params.config);
      if (!restored.values.same_layout(params.values)) {
        throw ShapeError("checkpoint layout does not match the model");
      }
      params.values = std::move(restored.values);
      adam.load(dir / epoch_file(done, "adam"));
      history = TrainHistory::read_tsv(dir / "history.tsv");
      history.epochs.resize(std::min<std::size_t>(history.epochs.size(), done));
      start_epoch = done + 1;
    }
  }

  nn::ParameterSet<float> grads = params.values.zeros_like();
  std::vector<std::size_t> order(spec.items);
  for (int epoch = start_epoch; epoch <= spec.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(derive_seed(config.seed, 0x5348554646ull, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    const std::size_t batch = static_cast<std::size_t>(config.batch_size);
    double loss_sum = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += batch) {
      const std::size_t b1 = std::min(order.size(), b0 + batch);
      const double scale = 1.0 / static_cast<double>(b1 - b0);
      grads.set_zero();
      double batch_loss = 0.0;
      for (std::size_t k = b0; k < b1; ++k) {
        std::mt19937_64 rng(derive_seed(derive_seed(config.seed, config.augment.seed), epoch,
                                        order[k]));
        batch_loss += spec.step(order[k], rng, scale, grads);
      }
      if (!std::isfinite(batch_loss) || !grads.all_finite()) {
        std::ostringstream msg;
        msg << spec.stage << ": non-finite loss at epoch " << epoch << ", batch " << b0 / batch
            << "; samples:";
        for (std::size_t k = b0; k < b1; ++k) msg << ' ' << spec.describe(order[k]);
        throw TrainingError(msg.str());
      }
      adam.step(params.values, grads);
      loss_sum += batch_loss;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    std::tie(stats.val_loss, stats.val_angular_error) =
        spec.validate ? spec.validate() : std::pair{kNaN, kNaN};
    history.epochs.push_back(stats);
    if (config.verbose) {
      std::fprintf(stderr, "[%s] epoch %d/%d train_loss %.5f val_loss %.5f val_err %.3f deg\n",
                   spec.stage.c_str(), epoch, spec.epochs, stats.train_loss, stats.val_loss,
                   stats.val_angular_error);
    }
    if (!dir.empty()) {
      save_parameters(params, dir / epoch_file(epoch, "params"));
      adam.save(dir / epoch_file(epoch, "adam"));
      history.write_tsv(dir / "history.tsv");
      write_text_atomic(dir / "latest", std::to_string(epoch) + "\n");
      if (epoch > 1) fs::remove(dir / epoch_file(epoch - 1, "adam"));
    }
  }
  return history;
}

Vec3 label_vector(const GazeAngles& a) { return angles_to_gaze(a); }

}  // namespace

TrainResult train_stage1(std::span<const NormalizedSample> train,
                         std::span<const NormalizedSample> val, const ModelConfig& model,
                         const TrainConfig& config, const ModelParameters* init) {
  config.validate();
  if (train.empty()) throw TrainingError("stage1: empty training set");
  GazeNetwork<float> net(model);
  ModelParameters params{model, {}};
  if (init) {
    net.check_parameters(init->values);
    params.values = init->values;
  } else {
    params.values = net.initial_parameters(derive_seed(config.seed, 0x494E4954ull));
    if (!config.pretrained.empty()) load_pretrained_convolutions(params.values, config.pretrained);
  }

  StaticCache<float> cache;
  Workspace<float> ws;
  LoopSpec spec;
  spec.stage = "stage1";
  spec.items = train.size();
  spec.epochs = config.epochs_stage1;
  spec.learning_rate = config.learning_rate;
  spec.trainable = [](const std::string&) { return true; };
  spec.describe = [&](std::size_t i) { return train[i].key.to_string(); };
  spec.step = [&](std::size_t i, std::mt19937_64& rng, double scale,
                  nn::ParameterSet<float>& grads) {
    const ModelInput input = augment_sample(train[i], config.augment, rng, config.landmark_scale);
    const auto tensors = to_tensors<float>(input);
    const GazeAngles out = net.static_forward(params.values, tensors, true, &rng, cache, ws);
    double dt = 0.0, dp = 0.0;
    const double loss = gaze_distance<double>(out.theta, out.phi, label_vector(input.label), &dt,
                                              &dp);
    net.static_backward(params.values, cache, {dt * scale, dp * scale}, grads, ws);
    return loss;
  };
  if (!val.empty()) {
    spec.validate = [&]() {
      const auto pred = predict_static(params, val);
      double loss = 0.0, err = 0.0;
      for (std::size_t i = 0; i < val.size(); ++i) {
        const Vec3 label = label_vector(val[i].label);
        loss += gaze_distance<double>(pred[i].theta, pred[i].phi, label, nullptr, nullptr);
        err += angular_error(angles_to_gaze(pred[i]), label);
      }
      const double n = static_cast<double>(val.size());
      return std::pair{loss / n, err / n};
    };
  }
  TrainHistory history = run_loop(params, spec, config);
  return {std::move(params), std::move(history)};
}

// --------------------------------------------------------------------------
// Feature cache

std::uint64_t individual_hash(const nn::ParameterSet<float>& params) {
  return params.content_hash({"face.", "eyes."});
}

std::uint64_t FeatureCache::content_hash() const {
  nn::Fnv1a h;
  h.update(&params_hash, sizeof(params_hash));
  for (const auto& [key, v] : features) {
    h.update(key.to_string());
    h.update(v.data(), v.size() * sizeof(float));
  }
  return h.value();
}

const std::vector<float>& FeatureCache::at(const FrameKey& key) const {
  auto it = features.find(key);
  if (it == features.end()) throw StaleCacheError("feature cache has no entry for " + key.to_string());
  return it->second;
}

namespace {
constexpr char kCacheMagic[8] = {'G', 'A', 'Z', 'E', 'F', 'E', 'A', 'T'};

nlohmann::json key_json(const FrameKey& k) {
  return {k.subject_id, to_string(k.session.target_kind), to_string(k.session.head_kind),
          k.session.lighting_id, k.frame_index};
}

FrameKey key_from_json(const nlohmann::json& j) {
  FrameKey k;
  k.subject_id = j.at(0).get<std::string>();
  k.session.target_kind = parse_target_kind(j.at(1).get<std::string>());
  k.session.head_kind = parse_head_kind(j.at(2).get<std::string>());
  k.session.lighting_id = j.at(3).get<std::string>();
  k.frame_index = j.at(4).get<std::int64_t>();
  return k;
}
}  // namespace

void FeatureCache::save(const fs::path& path) const {
  nlohmann::json keys = nlohmann::json::array();
  std::size_t dim = features.empty() ? 0 : features.begin()->second.size();
  for (const auto& [k, v] : features) {
    if (v.size() != dim) throw ShapeError("feature cache entries differ in width");
    keys.push_back(key_json(k));
  }
  const std::string header =
      nlohmann::json{{"params_hash", params_hash}, {"dim", dim}, {"keys", keys},
                     {"content_hash", content_hash()}}
          .dump();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write feature cache " + tmp.string());
    f.write(kCacheMagic, sizeof(kCacheMagic));
    f << header << '\n';
    for (const auto& [k, v] : features) {
      for (float x : v) {
        const auto u = std::bit_cast<std::uint32_t>(x);
        const char b[4] = {static_cast<char>(u & 0xFF), static_cast<char>((u >> 8) & 0xFF),
                           static_cast<char>((u >> 16) & 0xFF), static_cast<char>(u >> 24)};
        f.write(b, 4);
      }
    }
    f.flush();
    if (!f) {
      f.close();
      fs::remove(tmp);
      throw IoError("failed writing feature cache " + tmp.string());
    }
  }
  fs::rename(tmp, path);
}

FeatureCache FeatureCache::load(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open feature cache " + path.string());
  char magic[8];
  if (!f.read(magic, 8) || std::string(magic, 8) != std::string(kCacheMagic, 8)) {
    throw ParseError(path.string() + ": not a feature cache");
  }
  std::string line;
  std::getline(f, line);
  FeatureCache cache;
  std::uint64_t expected_hash = 0;
  try {
    const auto header = nlohmann::json::parse(line);
    cache.params_hash = header.at("params_hash").get<std::uint64_t>();
    expected_hash = header.at("content_hash").get<std::uint64_t>();
    const auto dim = header.at("dim").get<std::size_t>();
    for (const auto& kj : header.at("keys")) {
      std::vector<float> v(dim);
      for (float& x : v) {
        unsigned char b[4];
        if (!f.read(reinterpret_cast<char*>(b), 4)) {
          throw ParseError(path.string() + ": truncated feature cache");
        }
        x = std::bit_cast<float>(static_cast<std::uint32_t>(b[0]) |
                                 static_cast<std::uint32_t>(b[1]) << 8 |
                                 static_cast<std::uint32_t>(b[2]) << 16 |
                                 static_cast<std::uint32_t>(b[3]) << 24);
      }
      cache.features.emplace(key_from_json(kj), std::move(v));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (cache.content_hash() != expected_hash) {
    throw ParseError(path.string() + ": feature cache content hash mismatch");
  }
  return cache;
}

FeatureCache build_feature_cache(const ModelParameters& params,
                                 std::span<const NormalizedSample> samples) {
  if (!params.values.all_finite()) throw TrainingError("cannot cache features: non-finite weights");
  GazeNetwork<float> net(params.config);
  net.check_parameters(params.values);
  FeatureCache cache;
  cache.params_hash = individual_hash(params.values);
  StaticCache<float> sc;
  Workspace<float> ws;
  for (const auto& s : samples) {
    const auto tensors = to_tensors<float>(crop_final(s));
    cache.features[s.key] = net.individual_forward(params.values, tensors, sc, ws);
  }
  return cache;
}

void check_feature_cache(const FeatureCache& cache, const ModelParameters& params) {
  const std::uint64_t h = individual_hash(params.values);
  if (cache.params_hash != h) {
    std::ostringstream msg;
    msg << "stale feature cache: built from individual parameters " << std::hex
        << cache.params_hash << ", current " << h;
    throw StaleCacheError(msg.str());
  }
}

// --------------------------------------------------------------------------
// Stage 2

TrainResult train_stage2(const ModelParameters& static_params,
                         std::span<const NormalizedSample> samples,
                         std::span<const SequenceWindow> train_windows,
                         std::span<const SequenceWindow> val_windows, const ModelConfig& model,
                         const TrainConfig& config, const FeatureCache* cache_in) {
  config.validate();
  if (train_windows.empty()) throw TrainingError("stage2: no training windows");
  for (auto windows : {train_windows, val_windows}) {
    for (const auto& w : windows) {
      if (w.samples.size() != static_cast<std::size_t>(model.sequence_length)) {
        throw ShapeError("window length " + std::to_string(w.samples.size()) +
                         " does not match sequence_length " +
                         std::to_string(model.sequence_length));
      }
      for (auto i : w.samples) {
        if (i >= samples.size()) throw std::out_of_range("window references a missing sample");
      }
    }
  }

  GazeNetwork<float> net(model);
  ModelParameters params{model, net.initial_parameters(derive_seed(config.seed, 0x5354473200ull))};
  for (auto& t : params.values) {
    if (!GazeNetwork<float>::is_individual(t.name) && !GazeNetwork<float>::is_fusion(t.name)) {
      continue;
    }
    const auto src = static_params.values.find(t.name);
    const bool match = src && static_params.values[*src].shape == t.shape;
    if (match) {
      t.values = static_params.values[*src].values;
    } else if (GazeNetwork<float>::is_individual(t.name)) {
      throw ShapeError("stage-1 parameters lack a compatible " + t.name);
    }
  }

  FeatureCache built;
  const FeatureCache* cache = cache_in;
  if (!cache) {
    std::set<std::size_t> idx;
    for (auto windows : {train_windows, val_windows}) {
      for (const auto& w : windows) idx.insert(w.samples.begin(), w.samples.end());
    }
    GazeNetwork<float> snet(static_params.config);
    built.params_hash = individual_hash(params.values);
    StaticCache<float> sc;
    Workspace<float> ws;
    for (auto i : idx) {
      const auto tensors = to_tensors<float>(crop_final(samples[i]));
      built.features[samples[i].key] = snet.individual_forward(static_params.values, tensors, sc, ws);
    }
    cache = &built;
  }
  check_feature_cache(*cache, params);

  auto sequence = [&](const SequenceWindow& w) {
    std::vector<std::vector<float>> seq;
    seq.reserve(w.samples.size());
    for (auto i : w.samples) seq.push_back(cache->at(samples[i].key));
    return seq;
  };

  TemporalCache<float> tc;
  LoopSpec spec;
  spec.stage = "stage2";
  spec.items = train_windows.size();
  spec.epochs = config.epochs_stage2;
  spec.learning_rate = config.stage2_rate();
  spec.trainable = [](const std::string& name) { return !GazeNetwork<float>::is_individual(name); };
  spec.describe = [&](std::size_t i) {
    return samples[train_windows[i].samples.back()].key.to_string();
  };
  spec.step = [&](std::size_t i, std::mt19937_64& rng, double scale,
                  nn::ParameterSet<float>& grads) {
    const auto seq = sequence(train_windows[i]);
    const GazeAngles out = net.temporal_forward(params.values, seq, true, &rng, tc);
    double dt = 0.0, dp = 0.0;
    const double loss = gaze_distance<double>(out.theta, out.phi,
                                              label_vector(train_windows[i].target), &dt, &dp);
    net.temporal_backward(params.values, tc, {dt * scale, dp * scale}, grads);
    return loss;
  };
  if (!val_windows.empty()) {
    spec.validate = [&]() {
      const auto pred = predict_temporal(params, samples, val_windows, *cache);
      double loss = 0.0, err = 0.0;
      for (std::size_t i = 0; i < val_windows.size(); ++i) {
        const Vec3 label = label_vector(val_windows[i].target);
        loss += gaze_distance<double>(pred[i].theta, pred[i].phi, label, nullptr, nullptr);
        err += angular_error(angles_to_gaze(pred[i]), label);
      }
      const double n = static_cast<double>(val_windows.size());
      return std::pair{loss / n, err / n};
    };
  }
  TrainHistory history = run_loop(params, spec, config);
  return {std::move(params), std::move(history)};
}

// --------------------------------------------------------------------------
// Inference

std::vector<GazeAngles> predict_static(const ModelParameters& params,
                                       std::span<const NormalizedSample> samples) {
  GazeNetwork<float> net(params.config);
  net.check_parameters(params.values);
  StaticCache<float> cache;
  Workspace<float> ws;
  std::vector<GazeAngles> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    const auto tensors = to_tensors<float>(crop_final(s));
    out.push_back(net.static_forward(params.values, tensors, false, nullptr, cache, ws));
  }
  return out;
}

std::vector<GazeAngles> predict_temporal(const ModelParameters& params,
                                         std::span<const NormalizedSample> samples,
                                         std::span<const SequenceWindow> windows,
                                         const FeatureCache& cache) {
  GazeNetwork<float> net(params.config);
  net.check_parameters(params.values);
  check_feature_cache(cache, params);
  TemporalCache<float> tc;
  std::vector<GazeAngles> out;
  out.reserve(windows.size());
  std::vector<std::vector<float>> seq;
  for (const auto& w : windows) {
    seq.clear();
    for (auto i : w.samples) seq.push_back(cache.at(samples[i].key));
    out.push_back(net.temporal_forward(params.values, seq, false, nullptr, tc));
  }
  return out;
}

}  // namespace gazenet
