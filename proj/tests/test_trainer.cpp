// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>

#include "gazenet/errors.hpp"
#include "gazenet/trainer.hpp"
#include "synth_fixture.hpp"

using namespace gazenet;
using namespace gazenet::testing;

namespace {

const SynthData& data() {
  static const SynthData d = make_synth("trainer_data", small_spec(3, 12, 5));
  return d;
}

ModelConfig small_model(double scale = 1.0 / 16) {
  ModelConfig m;
  m.scale = scale;
  m.recurrent_units = {16};
  return m;
}

TrainConfig quick_config(int epochs, int batch) {
  TrainConfig c;
  c.learning_rate = 3e-4;
  c.batch_size = batch;
  c.epochs_stage1 = epochs;
  c.epochs_stage2 = epochs;
  c.seed = 17;
  return c;
}

std::vector<NormalizedSample> first_n(std::size_t n) {
  const auto& s = data().samples;
  return {s.begin(), s.begin() + static_cast<std::ptrdiff_t>(std::min(n, s.size()))};
}

bool same_values(const nn::ParameterSet<float>& a, const nn::ParameterSet<float>& b,
                 const std::function<bool(const std::string&)>& pick) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!pick(a[i].name)) continue;
    if (a[i].values != b[b.index(a[i].name)].values) return false;
  }
  return true;
}

}  // namespace

TEST(TrainConfigTest, ValidationAndJson) {
  TrainConfig c;
  EXPECT_EQ(c.batch_size, 64);
  EXPECT_EQ(c.epochs_stage1, 21);
  EXPECT_EQ(c.epochs_stage2, 10);
  EXPECT_DOUBLE_EQ(c.learning_rate, 1e-4);
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.epochs_stage1 = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.seed = 99;
  c.stage2_learning_rate = 5e-5;
  c.augment.flip_prob = 0.25;
  nlohmann::json j = c;
  const TrainConfig back = j.get<TrainConfig>();
  EXPECT_EQ(back.seed, 99u);
  EXPECT_DOUBLE_EQ(back.stage2_rate(), 5e-5);
  EXPECT_DOUBLE_EQ(back.augment.flip_prob, 0.25);
  j["optimizer"] = "sgd";
  EXPECT_THROW(j.get<TrainConfig>(), std::exception);
}

TEST(TrainHistoryTest, TsvRoundTripIsExact) {
  const auto dir = temp_dir("history");
  TrainHistory h;
  h.epochs.push_back({1, 0.123456789012345678, 0.1, 3.25});
  h.epochs.push_back({2, 1.0 / 3.0, std::numeric_limits<double>::quiet_NaN(), 1e-17});
  h.write_tsv(dir / "h.tsv");
  const auto back = TrainHistory::read_tsv(dir / "h.tsv");
  ASSERT_EQ(back.epochs.size(), 2u);
  EXPECT_EQ(back.epochs[0], h.epochs[0]);
  EXPECT_EQ(back.epochs[1].train_loss, h.epochs[1].train_loss);
  EXPECT_TRUE(std::isnan(back.epochs[1].val_loss));
}

TEST(Stage1, StepsPerEpochIsCeiling) {
  EXPECT_EQ(steps_per_epoch(0, 64), 0u);
  EXPECT_EQ(steps_per_epoch(1, 64), 1u);
  EXPECT_EQ(steps_per_epoch(64, 64), 1u);
  EXPECT_EQ(steps_per_epoch(65, 64), 2u);
  EXPECT_EQ(steps_per_epoch(2100, 64), 33u);
  // The optimizer state written at the end agrees with the formula.
  const auto dir = temp_dir("steps");
  TrainConfig c = quick_config(2, 5);
  c.checkpoint_dir = dir;
  const auto train = first_n(12);
  train_stage1(train, {}, small_model(), c);
  const GazeNetwork<float> net(small_model());
  nn::Adam adam(net.make_parameters(), {});
  adam.load(dir / "stage1" / "epoch_002.adam");
  EXPECT_EQ(adam.steps(), static_cast<std::int64_t>(2 * steps_per_epoch(train.size(), 5)));
  EXPECT_FALSE(std::filesystem::exists(dir / "stage1" / "epoch_001.adam"));
  EXPECT_TRUE(std::filesystem::exists(dir / "stage1" / "epoch_001.params"));
  EXPECT_EQ(TrainHistory::read_tsv(dir / "stage1" / "history.tsv").epochs.size(), 2u);
}

TEST(Stage1, OverfitsTwentySamples) {
  TrainConfig c = quick_config(21, 4);
  c.augment.enabled = false;
  const auto train = first_n(20);
  ASSERT_EQ(train.size(), 20u);
  const TrainResult r = train_stage1(train, {}, small_model(0.125), c);
  ASSERT_EQ(r.history.epochs.size(), 21u);
  EXPECT_LT(r.history.epochs.back().train_loss, r.history.epochs.front().train_loss);
  EXPECT_LT(r.history.epochs.back().train_loss, 0.5 * r.history.epochs.front().train_loss);
  EXPECT_TRUE(std::isnan(r.history.epochs.back().val_loss));
}

TEST(Stage1, FixedSeedGivesIdenticalCurves) {
  TrainConfig c = quick_config(3, 4);
  const auto train = first_n(10);
  const auto val = std::vector<NormalizedSample>(data().samples.end() - 4, data().samples.end());
  const TrainResult a = train_stage1(train, val, small_model(), c);
  const TrainResult b = train_stage1(train, val, small_model(), c);
  ASSERT_EQ(a.history.epochs.size(), b.history.epochs.size());
  for (std::size_t i = 0; i < a.history.epochs.size(); ++i) {
    EXPECT_EQ(a.history.epochs[i], b.history.epochs[i]);
  }
  EXPECT_EQ(a.params.values.content_hash(), b.params.values.content_hash());
  c.seed = 18;
  const TrainResult d = train_stage1(train, val, small_model(), c);
  EXPECT_NE(d.history.epochs[0].train_loss, a.history.epochs[0].train_loss);
}

TEST(Stage1, ResumeReproducesUninterruptedRun) {
  const auto dir_full = temp_dir("resume_full");
  const auto dir_part = temp_dir("resume_part");
  const auto train = first_n(10);
  const auto val = std::vector<NormalizedSample>(data().samples.end() - 3, data().samples.end());
  TrainConfig full = quick_config(4, 3);
  full.checkpoint_dir = dir_full;
  const TrainResult a = train_stage1(train, val, small_model(), full);

  TrainConfig part = quick_config(2, 3);
  part.checkpoint_dir = dir_part;
  train_stage1(train, val, small_model(), part);
  part.epochs_stage1 = 4;
  part.resume = true;
  const TrainResult b = train_stage1(train, val, small_model(), part);
  ASSERT_EQ(b.history.epochs.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(a.history.epochs[i], b.history.epochs[i]);
  EXPECT_EQ(a.params.values.content_hash(), b.params.values.content_hash());
}

TEST(Stage1, DuplicatedBatchMatchesSingleSample) {
  // Mean over identical items equals the single-item value.
  const GazeAngles p{0.1, -0.2};
  const Vec3 l = angles_to_gaze({0.3, 0.05});
  const double one = gaze_loss(std::vector{p}, std::vector{l});
  EXPECT_DOUBLE_EQ(gaze_loss(std::vector(5, p), std::vector(5, l)), one);

  ModelConfig m = small_model();
  m.dropout = 0.0;
  TrainConfig c = quick_config(1, 4);
  c.augment.enabled = false;
  const auto single = first_n(1);
  const std::vector<NormalizedSample> dup(4, single[0]);
  c.batch_size = 1;
  const TrainResult a = train_stage1(single, {}, m, c);
  c.batch_size = 4;
  const TrainResult b = train_stage1(dup, {}, m, c);
  EXPECT_NEAR(a.history.epochs[0].train_loss, b.history.epochs[0].train_loss, 1e-12);
  for (std::size_t i = 0; i < a.params.values.size(); ++i) {
    const auto& x = a.params.values[i].values;
    const auto& y = b.params.values[i].values;
    for (std::size_t k = 0; k < x.size(); ++k) ASSERT_NEAR(x[k], y[k], 1e-6);
  }
}

TEST(Stage1, NonFiniteLossAbortsWithSampleKeys) {
  auto train = first_n(4);
  train[2].label = {std::numeric_limits<double>::quiet_NaN(), 0.0};
  TrainConfig c = quick_config(1, 4);
  try {
    train_stage1(train, {}, small_model(), c);
    FAIL() << "expected a training error";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find(train[2].key.to_string()), std::string::npos)
        << e.what();
  }
}

TEST(Stage1, EmptyTrainingSetRejected) {
  EXPECT_THROW(train_stage1({}, {}, small_model(), quick_config(1, 4)), TrainingError);
}

TEST(Stage1, ValidationSplitBySubject) {
  auto [train, val] = split_validation(data().samples, 1);
  std::set<std::string> ts, vs;
  for (const auto& s : train) ts.insert(s.key.subject_id);
  for (const auto& s : val) vs.insert(s.key.subject_id);
  EXPECT_EQ(vs, std::set<std::string>{"s03"});
  EXPECT_EQ(ts, (std::set<std::string>{"s01", "s02"}));
  auto one_subject = first_n(5);
  auto [t2, v2] = split_validation(one_subject, 1);
  EXPECT_TRUE(v2.empty());
  EXPECT_EQ(t2.size(), 5u);
}

TEST(FeatureCacheTest, HashesEntriesAndStaleness) {
  const GazeNetwork<float> net(small_model());
  ModelParameters p{small_model(), net.initial_parameters(1)};
  const auto samples = first_n(6);
  const FeatureCache a = build_feature_cache(p, samples);
  const FeatureCache b = build_feature_cache(p, samples);
  EXPECT_EQ(a.size(), samples.size());
  EXPECT_EQ(a.content_hash(), b.content_hash());
  EXPECT_EQ(a.params_hash, b.params_hash);
  EXPECT_EQ(a.at(samples[0].key).size(), static_cast<std::size_t>(p.config.fused_width()));
  EXPECT_NO_THROW(check_feature_cache(a, p));

  ModelParameters q = p;
  q.values[q.values.index("eyes.conv2_1.weight")].values[0] += 1e-3f;
  const FeatureCache c = build_feature_cache(q, samples);
  EXPECT_NE(c.params_hash, a.params_hash);
  EXPECT_NE(c.content_hash(), a.content_hash());
  EXPECT_THROW(check_feature_cache(a, q), StaleCacheError);

  // Fusion weights are not part of the cached computation.
  ModelParameters r = p;
  r.values[r.values.index("fusion.fc1.weight")].values[0] += 1.0f;
  EXPECT_NO_THROW(check_feature_cache(a, r));

  NormalizedSample unknown = samples[0];
  unknown.key.frame_index = 99999;
  EXPECT_THROW(a.at(unknown.key), StaleCacheError);
}

TEST(FeatureCacheTest, SaveLoadAndCorruption) {
  const auto dir = temp_dir("cache");
  const GazeNetwork<float> net(small_model());
  ModelParameters p{small_model(), net.initial_parameters(1)};
  const FeatureCache a = build_feature_cache(p, first_n(5));
  a.save(dir / "f.cache");
  const FeatureCache b = FeatureCache::load(dir / "f.cache");
  EXPECT_EQ(b.content_hash(), a.content_hash());
  EXPECT_EQ(b.params_hash, a.params_hash);
  EXPECT_FALSE(std::filesystem::exists(dir / "f.cache.tmp"));
  std::string bytes;
  {
    std::ifstream f(dir / "f.cache", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(f), {});
  }
  {
    std::ofstream f(dir / "partial.cache", std::ios::binary);
    f << bytes.substr(0, bytes.size() - 40);
  }
  EXPECT_THROW(FeatureCache::load(dir / "partial.cache"), Error);
  bytes[bytes.size() - 3] ^= 0x11;
  {
    std::ofstream f(dir / "flipped.cache", std::ios::binary);
    f << bytes;
  }
  EXPECT_THROW(FeatureCache::load(dir / "flipped.cache"), Error);
}

namespace {

struct Stage2Fixture {
  std::vector<NormalizedSample> samples;
  std::vector<SequenceWindow> train, val;
  ModelParameters stage1;
  ModelConfig temporal;
};

const Stage2Fixture& stage2_fixture() {
  static const Stage2Fixture f = [] {
    Stage2Fixture s;
    s.samples = data().samples;
    s.temporal = small_model();
    s.temporal.temporal_dims = true;
    TrainConfig c = quick_config(2, 4);
    auto [tr, va] = split_validation(s.samples, 1);
    s.stage1 = train_stage1(tr, va, s.temporal, c).params;
    for (const auto& w : make_windows(s.samples, s.temporal.sequence_length)) {
      (s.samples[w.samples.back()].key.subject_id == "s03" ? s.val : s.train).push_back(w);
    }
    return s;
  }();
  return f;
}

}  // namespace

TEST(Stage2, FreezesIndividualModulesAndTransfersFusion) {
  const auto& f = stage2_fixture();
  TrainConfig c = quick_config(3, 4);
  const TrainResult r = train_stage2(f.stage1, f.samples, f.train, f.val, f.temporal, c);
  EXPECT_TRUE(same_values(r.params.values, f.stage1.values, GazeNetwork<float>::is_individual));
  EXPECT_FALSE(same_values(r.params.values, f.stage1.values, GazeNetwork<float>::is_fusion));
  EXPECT_EQ(r.params.fingerprint(), f.temporal.fingerprint());
  ASSERT_EQ(r.history.epochs.size(), 3u);
  EXPECT_LT(r.history.epochs.back().val_loss, r.history.epochs.front().val_loss);
}

TEST(Stage2, StaticWidthStage1KeepsFirstFusionLayer) {
  // Stage 1 at static widths: fc1 transfers, fc2 changes shape and starts fresh.
  const auto& f = stage2_fixture();
  ModelConfig wide = f.temporal;
  wide.temporal_dims = false;
  const GazeNetwork<float> wide_net(wide);
  ModelParameters s1{wide, wide_net.initial_parameters(3)};
  TrainConfig c = quick_config(1, 4);
  c.stage2_learning_rate = 1e-12;  // effectively no update: inspect the initialization
  const TrainResult r = train_stage2(s1, f.samples, f.train, {}, f.temporal, c);
  const auto& a = r.params.values[r.params.values.index("fusion.fc1.weight")].values;
  const auto& b = s1.values[s1.values.index("fusion.fc1.weight")].values;
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); i += 97) EXPECT_NEAR(a[i], b[i], 1e-6);
  EXPECT_EQ(r.params.values[r.params.values.index("fusion.fc2.weight")].shape[0],
            f.temporal.fusion_dims()[1]);
}

TEST(Stage2, ResumeReproducesUninterruptedRun) {
  const auto& f = stage2_fixture();
  const auto d1 = temp_dir("s2_full");
  const auto d2 = temp_dir("s2_part");
  TrainConfig c = quick_config(3, 4);
  c.checkpoint_dir = d1;
  const TrainResult a = train_stage2(f.stage1, f.samples, f.train, f.val, f.temporal, c);
  c.checkpoint_dir = d2;
  c.epochs_stage2 = 1;
  train_stage2(f.stage1, f.samples, f.train, f.val, f.temporal, c);
  c.epochs_stage2 = 3;
  c.resume = true;
  const TrainResult b = train_stage2(f.stage1, f.samples, f.train, f.val, f.temporal, c);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.history.epochs[i], b.history.epochs[i]);
  EXPECT_EQ(a.params.values.content_hash(), b.params.values.content_hash());
}

TEST(Stage2, RejectsMismatchedWindowsAndStaleCache) {
  const auto& f = stage2_fixture();
  TrainConfig c = quick_config(1, 4);
  const auto short_windows = make_windows(f.samples, 3);
  EXPECT_THROW(train_stage2(f.stage1, f.samples, short_windows, {}, f.temporal, c), ShapeError);
  ModelParameters other = f.stage1;
  other.values[other.values.index("face.conv1_1.weight")].values[0] += 0.5f;
  const FeatureCache stale = build_feature_cache(other, f.samples);
  EXPECT_THROW(train_stage2(f.stage1, f.samples, f.train, {}, f.temporal, c, &stale),
               StaleCacheError);
}

TEST(Predict, TemporalUsesCacheAndCountsWindows) {
  const auto& f = stage2_fixture();
  TrainConfig c = quick_config(1, 4);
  const TrainResult r = train_stage2(f.stage1, f.samples, f.train, f.val, f.temporal, c);
  const FeatureCache cache = build_feature_cache(f.stage1, f.samples);
  const auto pred = predict_temporal(r.params, f.samples, f.val, cache);
  EXPECT_EQ(pred.size(), f.val.size());
  const auto again = predict_temporal(r.params, f.samples, f.val, cache);
  for (std::size_t i = 0; i < pred.size(); ++i) EXPECT_EQ(pred[i].theta, again[i].theta);
  const auto stat = predict_static(f.stage1, f.samples);
  EXPECT_EQ(stat.size(), f.samples.size());
}
