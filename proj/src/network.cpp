// SPDX-License-Identifier: Apache-2.0
#include "gazenet/network.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "gazenet/errors.hpp"

namespace gazenet {

namespace {

constexpr std::array<int, kNumConvLayers> kVggChannels{64,  64,  128, 128, 256, 256, 256,
                                                       512, 512, 512, 512, 512, 512};
constexpr int kFaceInput = 224;
constexpr int kEyesInputW = 120;
constexpr int kEyesInputH = 48;

int scaled(double base, double scale) {
  return std::max(1, static_cast<int>(std::lround(base * scale)));
}

std::string cell_name(CellType c) { return c == CellType::GRU ? "GRU" : "LSTM"; }

CellType parse_cell(const std::string& s) {
  if (s == "GRU" || s == "gru") return CellType::GRU;
  if (s == "LSTM" || s == "lstm") return CellType::LSTM;
  throw ParseError("unknown recurrent cell '" + s + "'");
}

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

// --------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
  if (!(scale > 0.0 && scale <= 1.0)) throw std::invalid_argument("scale must be in (0, 1]");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must be in [0, 1)");
  if (recurrent_units.empty() || recurrent_units.size() > 2) {
    throw std::invalid_argument("recurrent stack must have 1 or 2 layers");
  }
  for (int u : recurrent_units) {
    if (u < 1) throw std::invalid_argument("recurrent units must be positive");
  }
  if (sequence_length < 1) throw std::invalid_argument("sequence_length must be >= 1");
}

std::array<int, kNumConvLayers> ModelConfig::face_channels() const {
  std::array<int, kNumConvLayers> c{};
  for (int i = 0; i < kNumConvLayers; ++i) c[i] = scaled(kVggChannels[i], scale);
  return c;
}

std::array<int, kNumConvLayers> ModelConfig::eyes_channels() const {
  std::array<int, kNumConvLayers> c{};
  const double ratio = static_cast<double>(kEyesFcBase) / kFaceFcBase;
  for (int i = 0; i < kNumConvLayers; ++i) {
    const double v = kVggChannels[i] * scale * ratio;
    c[i] = std::max(8, 8 * static_cast<int>(std::lround(v / 8.0)));
  }
  return c;
}

int ModelConfig::face_fc() const { return scaled(kFaceFcBase, scale); }
int ModelConfig::eyes_fc() const { return scaled(kEyesFcBase, scale); }

std::array<int, 2> ModelConfig::fusion_dims() const {
  return {scaled(kFusionBase, scale),
          scaled(temporal_dims ? kTemporalFusionBase : kFusionBase, scale)};
}

nlohmann::json ModelConfig::to_json() const {
  return {{"scale", scale},
          {"temporal_dims", temporal_dims},
          {"dropout", dropout},
          {"recurrent", {{"cell", cell_name(cell)}, {"units", recurrent_units}}},
          {"sequence_length", sequence_length}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.scale = j.value("scale", c.scale);
  c.temporal_dims = j.value("temporal_dims", c.temporal_dims);
  c.dropout = j.value("dropout", c.dropout);
  if (auto it = j.find("recurrent"); it != j.end()) {
    c.cell = parse_cell(it->value("cell", std::string("GRU")));
    c.recurrent_units = it->value("units", c.recurrent_units);
  }
  c.sequence_length = j.value("sequence_length", c.sequence_length);
  c.validate();
  return c;
}

std::string ModelConfig::fingerprint() const {
  const nlohmann::json arch = {{"format", "gazenet-arch-1"},
                               {"face_channels", face_channels()},
                               {"eyes_channels", eyes_channels()},
                               {"face_fc", face_fc()},
                               {"eyes_fc", eyes_fc()},
                               {"fusion", fusion_dims()},
                               {"cell", cell_name(cell)},
                               {"units", recurrent_units},
                               {"scale", scale}};
  nn::Fnv1a h;
  h.update(arch.dump());
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h.value();
  return os.str();
}

// --------------------------------------------------------------------------

template <typename T>
InputTensors<T> to_tensors(const ModelInput& input) {
  if (input.face.width() != kFaceInput || input.face.height() != kFaceInput ||
      input.face.channels() != 3) {
    throw ShapeError("face input must be 224x224x3");
  }
  if (input.eyes.width() != kEyesInputW || input.eyes.height() != kEyesInputH ||
      input.eyes.channels() != 3) {
    throw ShapeError("eyes input must be 120x48x3");
  }
  if (input.landmarks.size() != static_cast<std::size_t>(kLandmarkFeatureDim)) {
    throw ShapeError("landmark feature must have 204 values");
  }
  InputTensors<T> t;
  auto convert = [](std::span<const float> src, std::vector<T>& dst, float offset) {
    dst.resize(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (!std::isfinite(src[i])) throw std::invalid_argument("non-finite network input");
      dst[i] = static_cast<T>(src[i] - offset);
    }
  };
  convert(input.face.values(), t.face, 0.5f);
  convert(input.eyes.values(), t.eyes, 0.5f);
  convert(input.landmarks, t.landmarks, 0.0f);
  return t;
}

template InputTensors<float> to_tensors<float>(const ModelInput&);
template InputTensors<double> to_tensors<double>(const ModelInput&);

// --------------------------------------------------------------------------
// GazeNetwork

template <typename T>
GazeNetwork<T>::GazeNetwork(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  build_stream(face_, "face", kFaceInput, kFaceInput, config_.face_channels(), config_.face_fc(),
               layout_);
  build_stream(eyes_, "eyes", kEyesInputH, kEyesInputW, config_.eyes_channels(),
               config_.eyes_fc(), layout_);
  const auto fusion = config_.fusion_dims();
  auto dense = [&](const std::string& name, int in, int out) {
    nn::Dense<T> d;
    d.in_features = in;
    d.out_features = out;
    d.weight = layout_.add(name + ".weight", {out, in});
    d.bias = layout_.add(name + ".bias", {out});
    return d;
  };
  fusion1_ = dense("fusion.fc1", config_.fused_width(), fusion[0]);
  fusion2_ = dense("fusion.fc2", fusion[0], fusion[1]);
  regression_ = dense("regression", fusion[1], 2);

  int in = fusion[1];
  for (std::size_t l = 0; l < config_.recurrent_units.size(); ++l) {
    const int h = config_.recurrent_units[l];
    const int gates = config_.cell == CellType::GRU ? 3 : 4;
    const std::string name = "temporal.rnn" + std::to_string(l);
    nn::RecurrentLayer<T> r;
    r.cell = config_.cell;
    r.input_size = in;
    r.hidden_size = h;
    r.wx = layout_.add(name + ".wx", {gates * h, in});
    r.wh = layout_.add(name + ".wh", {gates * h, h});
    r.bx = layout_.add(name + ".bx", {gates * h});
    if (config_.cell == CellType::GRU) r.bh = layout_.add(name + ".bh", {gates * h});
    recurrent_.push_back(r);
    in = h;
  }
  temporal_regression_ = dense("temporal.regression", in, 2);
}

template <typename T>
void GazeNetwork<T>::build_stream(Stream& s, const std::string& prefix, int height, int width,
                                  const std::array<int, kNumConvLayers>& channels, int fc_units,
                                  nn::ParameterSet<T>& layout) const {
  s.height = height;
  s.width = width;
  int in = 3;
  int layer = 0;
  int h = height, w = width;
  for (std::size_t b = 0; b < kVggBlockSizes.size(); ++b) {
    for (int i = 0; i < kVggBlockSizes[b]; ++i, ++layer) {
      const std::string name =
          prefix + ".conv" + std::to_string(b + 1) + "_" + std::to_string(i + 1);
      nn::ConvRelu<T> c;
      c.in_channels = in;
      c.out_channels = channels[layer];
      c.weight = layout.add(name + ".weight", {3, 3, in, channels[layer]});
      c.bias = layout.add(name + ".bias", {channels[layer]});
      s.convs.push_back(c);
      in = channels[layer];
    }
    h /= 2;
    w /= 2;
  }
  s.flat = h * w * in;
  s.fc.in_features = s.flat;
  s.fc.out_features = fc_units;
  s.fc.weight = layout.add(prefix + ".fc.weight", {fc_units, s.flat});
  s.fc.bias = layout.add(prefix + ".fc.bias", {fc_units});
}

template <typename T>
nn::ParameterSet<T> GazeNetwork<T>::make_parameters() const {
  return layout_.zeros_like();
}

template <typename T>
void GazeNetwork<T>::reinitialize(nn::ParameterSet<T>& params, const std::string& prefix,
                                  std::uint64_t seed) const {
  for (auto& t : params) {
    if (!starts_with(t.name, prefix.c_str())) continue;
    nn::Fnv1a h;
    h.update(t.name);
    std::mt19937_64 rng(derive_seed(seed, h.value()));
    const bool is_bias = t.shape.size() == 1;
    if (is_bias) {
      std::fill(t.values.begin(), t.values.end(), T(0));
      if (config_.cell == CellType::LSTM && starts_with(t.name, "temporal.rnn") &&
          t.name.ends_with(".bx")) {
        const std::size_t hsz = t.values.size() / 4;
        std::fill(t.values.begin() + hsz, t.values.begin() + 2 * hsz, T(1));
      }
      continue;
    }
    if (starts_with(t.name, "temporal.rnn")) {
      const int hidden = t.shape[0] / (config_.cell == CellType::GRU ? 3 : 4);
      const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : t.values) v = static_cast<T>(dist(rng));
      continue;
    }
    double fan_in = 1.0;
    if (t.shape.size() == 4) {
      fan_in = 9.0 * t.shape[2];
    } else {
      fan_in = t.shape[1];
    }
    double stddev = std::sqrt(2.0 / fan_in);
    if (t.name == "regression.weight" || t.name == "temporal.regression.weight") {
      stddev = 0.1 / std::sqrt(fan_in);
    }
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.values) v = static_cast<T>(dist(rng));
  }
}

template <typename T>
nn::ParameterSet<T> GazeNetwork<T>::initial_parameters(std::uint64_t seed) const {
  nn::ParameterSet<T> p = make_parameters();
  reinitialize(p, "", seed);
  return p;
}

template <typename T>
void GazeNetwork<T>::check_parameters(const nn::ParameterSet<T>& params) const {
  if (!layout_.same_layout(params)) {
    throw ShapeError("parameter layout does not match the network architecture");
  }
}

template <typename T>
bool GazeNetwork<T>::is_individual(const std::string& name) {
  return starts_with(name, "face.") || starts_with(name, "eyes.");
}
template <typename T>
bool GazeNetwork<T>::is_fusion(const std::string& name) {
  return starts_with(name, "fusion.");
}
template <typename T>
bool GazeNetwork<T>::is_temporal(const std::string& name) {
  return starts_with(name, "temporal.");
}

template <typename T>
void GazeNetwork<T>::stream_forward(const Stream& s, const nn::ParameterSet<T>& p,
                                    const std::vector<T>& input, StreamCache<T>& cache,
                                    Workspace<T>& ws) const {
  if (input.size() != static_cast<std::size_t>(s.height) * s.width * 3) {
    throw ShapeError("stream input has the wrong size");
  }
  const std::size_t n_acts = 1 + s.convs.size() + kVggBlockSizes.size();
  cache.acts.resize(n_acts);
  cache.argmax.resize(kVggBlockSizes.size());
  cache.acts[0] = input;
  int h = s.height, w = s.width;
  std::size_t a = 0;
  std::size_t layer = 0;
  for (std::size_t b = 0; b < kVggBlockSizes.size(); ++b) {
    for (int i = 0; i < kVggBlockSizes[b]; ++i, ++layer) {
      const auto& conv = s.convs[layer];
      cache.acts[a + 1].resize(static_cast<std::size_t>(h) * w * conv.out_channels);
      conv.forward(p, cache.acts[a].data(), h, w, cache.acts[a + 1].data(), ws.col);
      ++a;
    }
    const int c = s.convs[layer - 1].out_channels;
    cache.acts[a + 1].resize(static_cast<std::size_t>(h / 2) * (w / 2) * c);
    nn::maxpool2_forward(cache.acts[a].data(), h, w, c, cache.acts[a + 1].data(),
                         cache.argmax[b]);
    ++a;
    h /= 2;
    w /= 2;
  }
  cache.fc_out.resize(s.fc.out_features);
  s.fc.forward(p, cache.acts[a].data(), cache.fc_out.data());
  for (auto& v : cache.fc_out) v = std::max(v, T(0));
}

template <typename T>
void GazeNetwork<T>::stream_backward(const Stream& s, const nn::ParameterSet<T>& p,
                                     const StreamCache<T>& cache, const T* d_fc_out,
                                     nn::ParameterSet<T>& grads, Workspace<T>& ws,
                                     std::vector<T>* d_input) const {
  std::vector<T> d_fc(s.fc.out_features);
  for (int i = 0; i < s.fc.out_features; ++i) {
    d_fc[i] = cache.fc_out[i] > T(0) ? d_fc_out[i] : T(0);
  }
  std::size_t a = cache.acts.size() - 1;
  std::vector<T>& cur = ws.grad_a;
  std::vector<T>& next = ws.grad_b;
  cur.resize(cache.acts[a].size());
  s.fc.backward(p, cache.acts[a].data(), d_fc.data(), cur.data(), grads);

  // Spatial size at the input of each block.
  std::array<std::pair<int, int>, kVggBlockSizes.size()> dims{};
  {
    int h = s.height, w = s.width;
    for (std::size_t b = 0; b < kVggBlockSizes.size(); ++b) {
      dims[b] = {h, w};
      h /= 2;
      w /= 2;
    }
  }
  std::size_t layer = s.convs.size();
  for (std::size_t b = kVggBlockSizes.size(); b-- > 0;) {
    const auto [h, w] = dims[b];
    // pool: acts[a] = pool(acts[a-1])
    next.resize(cache.acts[a - 1].size());
    nn::maxpool2_backward(cur.data(), cache.argmax[b], next.size(), next.data());
    std::swap(cur, next);
    --a;
    for (int i = kVggBlockSizes[b]; i-- > 0;) {
      --layer;
      const auto& conv = s.convs[layer];
      const bool first = layer == 0;
      T* din = nullptr;
      if (!first || d_input) {
        next.resize(cache.acts[a - 1].size());
        din = next.data();
      }
      conv.backward(p, cache.acts[a - 1].data(), cache.acts[a].data(), h, w, cur.data(), din,
                    grads, ws.col, ws.scratch);
      --a;
      if (din) std::swap(cur, next);
    }
  }
  if (d_input) *d_input = cur;
}

template <typename T>
void GazeNetwork<T>::fusion_forward(const nn::ParameterSet<T>& p, const std::vector<T>& input,
                                    bool train, std::mt19937_64* rng,
                                    FusionCache<T>& cache) const {
  if (input.size() != static_cast<std::size_t>(fusion1_.in_features)) {
    throw ShapeError("fusion input has the wrong width");
  }
  if (train && config_.dropout > 0.0 && !rng) {
    throw std::invalid_argument("training-mode forward needs a dropout generator");
  }
  cache.input = input;
  const bool drop = train && config_.dropout > 0.0;
  const T keep_scale = T(1) / T(1.0 - config_.dropout);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto apply = [&](std::vector<T>& h, std::vector<T>& mask, std::vector<T>& out) {
    for (auto& v : h) v = std::max(v, T(0));
    out = h;
    if (!drop) {
      mask.clear();
      return;
    }
    mask.resize(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) {
      mask[i] = unit(*rng) >= config_.dropout ? keep_scale : T(0);
      out[i] = h[i] * mask[i];
    }
  };
  cache.h1.resize(fusion1_.out_features);
  fusion1_.forward(p, input.data(), cache.h1.data());
  std::vector<T> x2;
  apply(cache.h1, cache.mask1, x2);
  cache.h2.resize(fusion2_.out_features);
  fusion2_.forward(p, x2.data(), cache.h2.data());
  apply(cache.h2, cache.mask2, cache.out);
}

template <typename T>
void GazeNetwork<T>::fusion_backward(const nn::ParameterSet<T>& p, const FusionCache<T>& cache,
                                     const T* d_out, nn::ParameterSet<T>& grads,
                                     std::vector<T>* d_input) const {
  auto through = [](const std::vector<T>& h, const std::vector<T>& mask, const T* d,
                    std::vector<T>& dz) {
    dz.resize(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) {
      const T m = mask.empty() ? T(1) : mask[i];
      dz[i] = h[i] > T(0) ? d[i] * m : T(0);
    }
  };
  std::vector<T> dz2, dx2, dz1;
  through(cache.h2, cache.mask2, d_out, dz2);
  std::vector<T> x2 = cache.h1;
  if (!cache.mask1.empty()) {
    for (std::size_t i = 0; i < x2.size(); ++i) x2[i] *= cache.mask1[i];
  }
  dx2.resize(fusion2_.in_features);
  fusion2_.backward(p, x2.data(), dz2.data(), dx2.data(), grads);
  through(cache.h1, cache.mask1, dx2.data(), dz1);
  if (d_input) d_input->resize(fusion1_.in_features);
  fusion1_.backward(p, cache.input.data(), dz1.data(), d_input ? d_input->data() : nullptr, grads);
}

template <typename T>
std::vector<T> GazeNetwork<T>::individual_forward(const nn::ParameterSet<T>& params,
                                                  const InputTensors<T>& input,
                                                  StaticCache<T>& cache, Workspace<T>& ws) const {
  if (input.landmarks.size() != static_cast<std::size_t>(kLandmarkFeatureDim)) {
    throw ShapeError("landmark feature must have 204 values");
  }
  stream_forward(face_, params, input.face, cache.face, ws);
  stream_forward(eyes_, params, input.eyes, cache.eyes, ws);
  std::vector<T> fused;
  fused.reserve(config_.fused_width());
  fused.insert(fused.end(), cache.face.fc_out.begin(), cache.face.fc_out.end());
  fused.insert(fused.end(), cache.eyes.fc_out.begin(), cache.eyes.fc_out.end());
  fused.insert(fused.end(), input.landmarks.begin(), input.landmarks.end());
  return fused;
}

template <typename T>
GazeAngles GazeNetwork<T>::static_forward(const nn::ParameterSet<T>& params,
                                          const InputTensors<T>& input, bool train,
                                          std::mt19937_64* dropout_rng, StaticCache<T>& cache,
                                          Workspace<T>& ws) const {
  const std::vector<T> fused = individual_forward(params, input, cache, ws);
  fusion_forward(params, fused, train, dropout_rng, cache.fusion);
  T out[2];
  regression_.forward(params, cache.fusion.out.data(), out);
  cache.output = {static_cast<double>(out[0]), static_cast<double>(out[1])};
  return cache.output;
}

template <typename T>
void GazeNetwork<T>::static_backward(const nn::ParameterSet<T>& params,
                                     const StaticCache<T>& cache, GazeAngles d_output,
                                     nn::ParameterSet<T>& grads, Workspace<T>& ws,
                                     bool through_streams, InputGradients<T>* input_grads) const {
  const T d_out[2] = {static_cast<T>(d_output.theta), static_cast<T>(d_output.phi)};
  std::vector<T> d_fused_out(regression_.in_features);
  regression_.backward(params, cache.fusion.out.data(), d_out, d_fused_out.data(), grads);
  const bool need_input = through_streams || input_grads;
  std::vector<T> d_fused;
  fusion_backward(params, cache.fusion, d_fused_out.data(), grads,
                  need_input ? &d_fused : nullptr);
  if (!need_input) return;
  const T* d_face = d_fused.data();
  const T* d_eyes = d_face + face_.fc.out_features;
  const T* d_lm = d_eyes + eyes_.fc.out_features;
  if (input_grads) input_grads->landmarks.assign(d_lm, d_lm + kLandmarkFeatureDim);
  if (through_streams || input_grads) {
    // Frozen streams still propagate when input gradients are requested; the
    // caller discards their parameter gradients.
    stream_backward(face_, params, cache.face, d_face, grads, ws,
                    input_grads ? &input_grads->face : nullptr);
    stream_backward(eyes_, params, cache.eyes, d_eyes, grads, ws,
                    input_grads ? &input_grads->eyes : nullptr);
  }
}

template <typename T>
GazeAngles GazeNetwork<T>::temporal_forward(const nn::ParameterSet<T>& params,
                                            std::span<const std::vector<T>> fused_inputs,
                                            bool train, std::mt19937_64* dropout_rng,
                                            TemporalCache<T>& cache) const {
  if (fused_inputs.size() != static_cast<std::size_t>(config_.sequence_length)) {
    throw ShapeError("sequence length " + std::to_string(fused_inputs.size()) + ", expected " +
                     std::to_string(config_.sequence_length));
  }
  cache.frames.resize(fused_inputs.size());
  std::vector<std::vector<T>> xs(fused_inputs.size());
  for (std::size_t t = 0; t < fused_inputs.size(); ++t) {
    fusion_forward(params, fused_inputs[t], train, dropout_rng, cache.frames[t]);
    xs[t] = cache.frames[t].out;
  }
  cache.traces.resize(recurrent_.size());
  for (std::size_t l = 0; l < recurrent_.size(); ++l) {
    xs = recurrent_[l].forward(params, xs, cache.traces[l]);
  }
  T out[2];
  temporal_regression_.forward(params, xs.back().data(), out);
  cache.output = {static_cast<double>(out[0]), static_cast<double>(out[1])};
  return cache.output;
}

template <typename T>
void GazeNetwork<T>::temporal_backward(const nn::ParameterSet<T>& params,
                                       const TemporalCache<T>& cache, GazeAngles d_output,
                                       nn::ParameterSet<T>& grads) const {
  const T d_out[2] = {static_cast<T>(d_output.theta), static_cast<T>(d_output.phi)};
  const std::size_t steps = cache.frames.size();
  const auto& last_trace = cache.traces.back();
  std::vector<std::vector<T>> dhs(steps,
                                  std::vector<T>(recurrent_.back().hidden_size, T(0)));
  temporal_regression_.backward(params, last_trace.hidden.back().data(), d_out,
                                dhs.back().data(), grads);
  std::vector<std::vector<T>> dxs;
  for (std::size_t l = recurrent_.size(); l-- > 0;) {
    recurrent_[l].backward(params, cache.traces[l], dhs, dxs, grads);
    dhs = std::move(dxs);
  }
  for (std::size_t t = 0; t < steps; ++t) {
    fusion_backward(params, cache.frames[t], dhs[t].data(), grads, nullptr);
  }
}

template class GazeNetwork<float>;
template class GazeNetwork<double>;

}  // namespace gazenet
