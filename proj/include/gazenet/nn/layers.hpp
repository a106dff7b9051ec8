// SPDX-License-Identifier: Apache-2.0
//
// Single-sample layer kernels. Activations are interleaved (HWC); gradients
// accumulate into a parameter set with the same layout as the weights.
#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "gazenet/nn/parameters.hpp"

namespace gazenet::nn {

/// 3x3 convolution, stride 1, zero padding 1, followed by ReLU.
/// Weight shape [3, 3, in, out]; bias [out].
template <typename T>
struct ConvRelu {
  int in_channels = 0;
  int out_channels = 0;
  std::size_t weight = 0;
  std::size_t bias = 0;

  void forward(const ParameterSet<T>& p, const T* in, int height, int width, T* out,
               std::vector<T>& col) const;
  /// `din` may be null when the input gradient is not needed.
  void backward(const ParameterSet<T>& p, const T* in, const T* out, int height, int width,
                const T* dout, T* din, ParameterSet<T>& grads, std::vector<T>& col,
                std::vector<T>& scratch) const;
};

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
template <typename T>
void maxpool2_forward(const T* in, int height, int width, int channels, T* out,
                      std::vector<std::int32_t>& argmax);
template <typename T>
void maxpool2_backward(const T* dout, const std::vector<std::int32_t>& argmax,
                       std::size_t in_size, T* din);

/// y = W x + b with W of shape [out, in].
template <typename T>
struct Dense {
  int in_features = 0;
  int out_features = 0;
  std::size_t weight = 0;
  std::size_t bias = 0;

  void forward(const ParameterSet<T>& p, const T* x, T* y) const;
  void backward(const ParameterSet<T>& p, const T* x, const T* dy, T* dx,
                ParameterSet<T>& grads) const;
};

enum class CellType { GRU, LSTM };

/// One recurrent layer unrolled over a sequence.
/// GRU:  wx [3H, D], wh [3H, H], bx [3H], bh [3H]; gate order r, z, n.
/// LSTM: wx [4H, D], wh [4H, H], bx [4H];        gate order i, f, g, o.
template <typename T>
struct RecurrentLayer {
  CellType cell = CellType::GRU;
  int input_size = 0;
  int hidden_size = 0;
  std::size_t wx = 0;
  std::size_t wh = 0;
  std::size_t bx = 0;
  std::size_t bh = 0;  ///< GRU only

  struct Trace {
    std::vector<std::vector<T>> inputs;
    std::vector<std::vector<T>> hidden;   ///< h_t, t = 0..s-1
    std::vector<std::vector<T>> gates;    ///< activated gates per step
    std::vector<std::vector<T>> extra;    ///< GRU: W_hn h + b_hn; LSTM: c_t
  };

  /// Zero initial state. Returns the hidden state of every step.
  const std::vector<std::vector<T>>& forward(const ParameterSet<T>& p,
                                             const std::vector<std::vector<T>>& xs,
                                             Trace& trace) const;
  /// `dhs[t]` is the gradient on h_t; fills `dxs`.
  void backward(const ParameterSet<T>& p, const Trace& trace,
                const std::vector<std::vector<T>>& dhs, std::vector<std::vector<T>>& dxs,
                ParameterSet<T>& grads) const;
};

}  // namespace gazenet::nn
