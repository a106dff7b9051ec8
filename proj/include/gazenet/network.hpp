// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gazenet/augment.hpp"
#include "gazenet/geometry.hpp"
#include "gazenet/nn/layers.hpp"
#include "gazenet/nn/parameters.hpp"

namespace gazenet {

inline constexpr int kFaceFcBase = 4096;
inline constexpr int kEyesFcBase = 1536;
inline constexpr int kFusionBase = 5836;
inline constexpr int kTemporalFusionBase = 2918;
inline constexpr int kNumConvLayers = 13;

using nn::CellType;

/// Architecture description. Every width scales with `scale`; the landmark
/// feature (204) and the output (2) do not.
struct ModelConfig {
  double scale = 1.0;
  /// Second fusion layer at 2918*scale instead of 5836*scale.
  bool temporal_dims = false;
  double dropout = 0.3;
  CellType cell = CellType::GRU;
  std::vector<int> recurrent_units{128};
  int sequence_length = 4;

  void validate() const;

  std::array<int, kNumConvLayers> face_channels() const;
  /// Face channels scaled by 1536/4096, rounded to multiples of 8 (min 8).
  std::array<int, kNumConvLayers> eyes_channels() const;
  int face_fc() const;
  int eyes_fc() const;
  int fused_width() const { return face_fc() + eyes_fc() + kLandmarkFeatureDim; }
  std::array<int, 2> fusion_dims() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  /// Hex digest of the canonical JSON form.
  std::string fingerprint() const;
};

/// Conv blocks of the VGG-16 layout: layers per block.
inline constexpr std::array<int, 5> kVggBlockSizes{2, 2, 3, 3, 3};

template <typename T>
struct InputTensors {
  std::vector<T> face;       ///< 224x224x3, centered at 0
  std::vector<T> eyes;       ///< 48x120x3
  std::vector<T> landmarks;  ///< 204
};

template <typename T>
InputTensors<T> to_tensors(const ModelInput& input);

template <typename T>
struct StreamCache {
  std::vector<std::vector<T>> acts;  ///< acts[0] = input; one entry per conv/pool
  std::vector<std::vector<std::int32_t>> argmax;
  std::vector<T> fc_out;
};

template <typename T>
struct FusionCache {
  std::vector<T> input;
  std::vector<T> h1, mask1, h2, mask2;
  std::vector<T> out;  ///< second fusion output after dropout
};

template <typename T>
struct StaticCache {
  StreamCache<T> face;
  StreamCache<T> eyes;
  FusionCache<T> fusion;
  GazeAngles output;
};

template <typename T>
struct TemporalCache {
  std::vector<FusionCache<T>> frames;
  std::vector<typename nn::RecurrentLayer<T>::Trace> traces;
  GazeAngles output;
};

/// Scratch buffers reused across calls.
template <typename T>
struct Workspace {
  std::vector<T> col, scratch, grad_a, grad_b;
};

template <typename T>
struct InputGradients {
  std::vector<T> face, eyes, landmarks;
};

/// Multi-stream static network (face and eyes CNN streams, landmark
/// concatenation, two fusion layers, linear regression) plus a many-to-one
/// recurrent head over per-frame fusion outputs.
template <typename T>
class GazeNetwork {
 public:
  explicit GazeNetwork(ModelConfig config);

  const ModelConfig& config() const { return config_; }

  /// All tensors, zero-valued, in canonical order.
  nn::ParameterSet<T> make_parameters() const;
  /// He-normal for ReLU layers, small Gaussian for regression heads, uniform
  /// +-1/sqrt(H) for recurrent weights; biases zero (LSTM forget bias 1).
  nn::ParameterSet<T> initial_parameters(std::uint64_t seed) const;
  /// Re-initialize the tensors whose names start with `prefix`.
  void reinitialize(nn::ParameterSet<T>& params, const std::string& prefix,
                    std::uint64_t seed) const;
  /// Throws ShapeError when `params` does not match this architecture.
  void check_parameters(const nn::ParameterSet<T>& params) const;

  /// Face and eyes stream outputs concatenated with the landmark feature.
  std::vector<T> individual_forward(const nn::ParameterSet<T>& params,
                                    const InputTensors<T>& input, StaticCache<T>& cache,
                                    Workspace<T>& ws) const;

  GazeAngles static_forward(const nn::ParameterSet<T>& params, const InputTensors<T>& input,
                            bool train, std::mt19937_64* dropout_rng, StaticCache<T>& cache,
                            Workspace<T>& ws) const;

  /// Back-propagates d(loss)/d(theta, phi). Stream gradients are skipped when
  /// `through_streams` is false; input gradients are written when requested.
  void static_backward(const nn::ParameterSet<T>& params, const StaticCache<T>& cache,
                       GazeAngles d_output, nn::ParameterSet<T>& grads, Workspace<T>& ws,
                       bool through_streams = true, InputGradients<T>* input_grads = nullptr) const;

  /// `fused_inputs` holds one individual-module output per frame, oldest first.
  GazeAngles temporal_forward(const nn::ParameterSet<T>& params,
                              std::span<const std::vector<T>> fused_inputs, bool train,
                              std::mt19937_64* dropout_rng, TemporalCache<T>& cache) const;
  void temporal_backward(const nn::ParameterSet<T>& params, const TemporalCache<T>& cache,
                         GazeAngles d_output, nn::ParameterSet<T>& grads) const;

  /// Names of the individual-module tensors (stream convs and stream FCs).
  static bool is_individual(const std::string& name);
  static bool is_fusion(const std::string& name);
  static bool is_temporal(const std::string& name);

 private:
  struct Stream {
    int height = 0, width = 0;
    std::vector<nn::ConvRelu<T>> convs;
    nn::Dense<T> fc;
    int flat = 0;
  };

  void build_stream(Stream& s, const std::string& prefix, int height, int width,
                    const std::array<int, kNumConvLayers>& channels, int fc_units,
                    nn::ParameterSet<T>& layout) const;
  void stream_forward(const Stream& s, const nn::ParameterSet<T>& p, const std::vector<T>& input,
                      StreamCache<T>& cache, Workspace<T>& ws) const;
  void stream_backward(const Stream& s, const nn::ParameterSet<T>& p, const StreamCache<T>& cache,
                       const T* d_fc_out, nn::ParameterSet<T>& grads, Workspace<T>& ws,
                       std::vector<T>* d_input) const;
  void fusion_forward(const nn::ParameterSet<T>& p, const std::vector<T>& input, bool train,
                      std::mt19937_64* rng, FusionCache<T>& cache) const;
  void fusion_backward(const nn::ParameterSet<T>& p, const FusionCache<T>& cache, const T* d_out,
                       nn::ParameterSet<T>& grads, std::vector<T>* d_input) const;

  ModelConfig config_;
  nn::ParameterSet<T> layout_;
  Stream face_;
  Stream eyes_;
  nn::Dense<T> fusion1_, fusion2_, regression_;
  std::vector<nn::RecurrentLayer<T>> recurrent_;
  nn::Dense<T> temporal_regression_;
};

/// Trained weights together with the architecture they belong to.
struct ModelParameters {
  ModelConfig config;
  nn::ParameterSet<float> values;

  std::string fingerprint() const { return config.fingerprint(); }
};

/// Container: magic "GAZENETP", u32 version, u64 header length, JSON header
/// (fingerprint, config, tensor table, payload checksum), then little-endian
/// float32 payload.
void save_parameters(const ModelParameters& params, const std::filesystem::path& path);
/// Reads any parameter file; validates structure and checksum.
ModelParameters read_parameters(const std::filesystem::path& path);
/// Reads and requires the architecture fingerprint to match `expected`.
ModelParameters load_parameters(const std::filesystem::path& path, const ModelConfig& expected);

/// Copies convolution tensors with matching names and shapes from an external
/// parameter file (e.g. face-recognition pretraining). Returns the count copied.
int load_pretrained_convolutions(nn::ParameterSet<float>& params, const std::filesystem::path& path);

}  // namespace gazenet
