// SPDX-License-Identifier: Apache-2.0
#include "gazenet/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <Eigen/Core>

namespace gazenet::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <typename T>
void im2col(const T* in, int h, int w, int c, T* col) {
  const std::size_t row = 9 * static_cast<std::size_t>(c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      T* dst = col + (static_cast<std::size_t>(y) * w + x) * row;
      for (int ky = -1; ky <= 1; ++ky) {
        const int sy = y + ky;
        for (int kx = -1; kx <= 1; ++kx, dst += c) {
          const int sx = x + kx;
          if (sy < 0 || sy >= h || sx < 0 || sx >= w) {
            std::fill(dst, dst + c, T(0));
          } else {
            std::memcpy(dst, in + (static_cast<std::size_t>(sy) * w + sx) * c, sizeof(T) * c);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int h, int w, int c, T* out) {
  std::fill(out, out + static_cast<std::size_t>(h) * w * c, T(0));
  const std::size_t row = 9 * static_cast<std::size_t>(c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const T* src = col + (static_cast<std::size_t>(y) * w + x) * row;
      for (int ky = -1; ky <= 1; ++ky) {
        const int sy = y + ky;
        for (int kx = -1; kx <= 1; ++kx, src += c) {
          const int sx = x + kx;
          if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
          T* dst = out + (static_cast<std::size_t>(sy) * w + sx) * c;
          for (int k = 0; k < c; ++k) dst[k] += src[k];
        }
      }
    }
  }
}


template <typename T, int N>
using Fixed = Eigen::Matrix<T, N, 1>;
template <typename T, int N>
using FixedMap = Eigen::Map<Fixed<T, N>>;
template <typename T, int N>
using ConstFixedMap = Eigen::Map<const Fixed<T, N>>;

// Direct 3x3 convolution for narrow layers where an im2col GEMM is dominated
// by memory traffic. `wt` is [9][ci][CO]; out = conv(in) without bias.
template <typename T, int CO>
void direct_conv(const T* in, int h, int w, int ci, const T* wt, T* out) {
  for (int y = 0; y < h; ++y) {
    const int ky0 = y == 0 ? 0 : -1;
    const int ky1 = y == h - 1 ? 0 : 1;
    for (int x = 0; x < w; ++x) {
      const int kx0 = x == 0 ? 0 : -1;
      const int kx1 = x == w - 1 ? 0 : 1;
      Fixed<T, CO> acc = Fixed<T, CO>::Zero();
      for (int ky = ky0; ky <= ky1; ++ky) {
        for (int kx = kx0; kx <= kx1; ++kx) {
          const T* ip = in + (static_cast<std::size_t>(y + ky) * w + (x + kx)) * ci;
          const T* wp = wt + static_cast<std::size_t>((ky + 1) * 3 + (kx + 1)) * ci * CO;
          for (int c = 0; c < ci; ++c) {
            acc.noalias() += ip[c] * ConstFixedMap<T, CO>(wp + static_cast<std::size_t>(c) * CO);
          }
        }
      }
      FixedMap<T, CO>(out + (static_cast<std::size_t>(y) * w + x) * CO) = acc;
    }
  }
}

// gw[9][ci][CO] += sum over pixels of in(pixel + tap) * dz(pixel).
template <typename T, int CO>
void direct_weight_grad(const T* in, int h, int w, int ci, const T* dz, T* gw) {
  for (int y = 0; y < h; ++y) {
    const int ky0 = y == 0 ? 0 : -1;
    const int ky1 = y == h - 1 ? 0 : 1;
    for (int x = 0; x < w; ++x) {
      const int kx0 = x == 0 ? 0 : -1;
      const int kx1 = x == w - 1 ? 0 : 1;
      const Fixed<T, CO> d = ConstFixedMap<T, CO>(dz + (static_cast<std::size_t>(y) * w + x) * CO);
      if ((d.array() == T(0)).all()) continue;
      for (int ky = ky0; ky <= ky1; ++ky) {
        for (int kx = kx0; kx <= kx1; ++kx) {
          const T* ip = in + (static_cast<std::size_t>(y + ky) * w + (x + kx)) * ci;
          T* gp = gw + static_cast<std::size_t>((ky + 1) * 3 + (kx + 1)) * ci * CO;
          for (int c = 0; c < ci; ++c) {
            FixedMap<T, CO>(gp + static_cast<std::size_t>(c) * CO).noalias() += ip[c] * d;
          }
        }
      }
    }
  }
}

/// Calls f.template operator()<N>() for supported narrow widths.
template <typename F>
bool dispatch_width(int c, F&& f) {
  switch (c) {
    case 8: f.template operator()<8>(); return true;
    case 16: f.template operator()<16>(); return true;
    case 24: f.template operator()<24>(); return true;
    case 32: f.template operator()<32>(); return true;
    default: return false;
  }
}

/// Smallest map (pixels) that takes the direct path.
constexpr std::size_t kDirectMinPixels = 200 * 200;

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace

template <typename T>
void ConvRelu<T>::forward(const ParameterSet<T>& p, const T* in, int h, int w, T* out,
                          std::vector<T>& col) const {
  const std::size_t n = static_cast<std::size_t>(h) * w;
  const int k = 9 * in_channels;
  const bool direct = n >= kDirectMinPixels &&
                      dispatch_width(out_channels, [&]<int CO>() {
                        direct_conv<T, CO>(in, h, w, in_channels, p.data(weight), out);
                      });
  if (!direct) {
    col.resize(n * k);
    im2col(in, h, w, in_channels, col.data());
    ConstMatMap<T> cols(col.data(), n, k);
    ConstMatMap<T> wmat(p.data(weight), k, out_channels);
    MatMap<T> o(out, n, out_channels);
    o.noalias() = cols * wmat;
  }
  const T* b = p.data(bias);
  for (std::size_t i = 0; i < n; ++i) {
    T* r = out + i * out_channels;
    for (int c = 0; c < out_channels; ++c) r[c] = std::max(r[c] + b[c], T(0));
  }
}

template <typename T>
void ConvRelu<T>::backward(const ParameterSet<T>& p, const T* in, const T* out, int h, int w,
                           const T* dout, T* din, ParameterSet<T>& grads, std::vector<T>& col,
                           std::vector<T>& scratch) const {
  const std::size_t n = static_cast<std::size_t>(h) * w;
  const int k = 9 * in_channels;
  scratch.resize(n * out_channels);
  T* gb = grads.data(bias);
  for (std::size_t i = 0; i < n * out_channels; ++i) {
    scratch[i] = out[i] > T(0) ? dout[i] : T(0);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const T* r = scratch.data() + i * out_channels;
    for (int c = 0; c < out_channels; ++c) gb[c] += r[c];
  }
  const bool narrow = n >= kDirectMinPixels;
  const bool direct_w = narrow && dispatch_width(out_channels, [&]<int CO>() {
                          direct_weight_grad<T, CO>(in, h, w, in_channels, scratch.data(),
                                                    grads.data(weight));
                        });
  if (!direct_w) {
    col.resize(n * k);
    im2col(in, h, w, in_channels, col.data());
    ConstMatMap<T> dz(scratch.data(), n, out_channels);
    ConstMatMap<T> cols(col.data(), n, k);
    MatMap<T> gw(grads.data(weight), k, out_channels);
    gw.noalias() += cols.transpose() * dz;
  }
  if (!din) return;
  // Input gradient: correlation of dz with the flipped, transposed kernel.
  std::vector<T> flipped;
  const bool direct_d = narrow && dispatch_width(in_channels, [&]<int CI>() {
                          flipped.resize(static_cast<std::size_t>(9) * out_channels * CI);
                          const T* wt = p.data(weight);
                          for (int tap = 0; tap < 9; ++tap) {
                            for (int c = 0; c < CI; ++c) {
                              for (int o = 0; o < out_channels; ++o) {
                                flipped[(static_cast<std::size_t>(tap) * out_channels + o) * CI + c] =
                                    wt[(static_cast<std::size_t>(8 - tap) * CI + c) * out_channels + o];
                              }
                            }
                          }
                          direct_conv<T, CI>(scratch.data(), h, w, out_channels, flipped.data(), din);
                        });
  if (!direct_d) {
    ConstMatMap<T> dz(scratch.data(), n, out_channels);
    ConstMatMap<T> wmat(p.data(weight), k, out_channels);
    col.resize(n * k);
    MatMap<T> dcol(col.data(), n, k);
    dcol.noalias() = dz * wmat.transpose();
    col2im(col.data(), h, w, in_channels, din);
  }
}

template <typename T>
void maxpool2_forward(const T* in, int h, int w, int c, T* out,
                      std::vector<std::int32_t>& argmax) {
  const int oh = h / 2;
  const int ow = w / 2;
  argmax.resize(static_cast<std::size_t>(oh) * ow * c);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        std::int32_t best = ((2 * y) * w + 2 * x) * c + ch;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const std::int32_t idx = ((2 * y + dy) * w + 2 * x + dx) * c + ch;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = (static_cast<std::size_t>(y) * ow + x) * c + ch;
        out[o] = in[best];
        argmax[o] = best;
      }
    }
  }
}

template <typename T>
void maxpool2_backward(const T* dout, const std::vector<std::int32_t>& argmax,
                       std::size_t in_size, T* din) {
  std::fill(din, din + in_size, T(0));
  for (std::size_t i = 0; i < argmax.size(); ++i) din[argmax[i]] += dout[i];
}

template <typename T>
void Dense<T>::forward(const ParameterSet<T>& p, const T* x, T* y) const {
  ConstMatMap<T> wm(p.data(weight), out_features, in_features);
  ConstVecMap<T> xv(x, in_features);
  VecMap<T> yv(y, out_features);
  yv.noalias() = wm * xv;
  yv += ConstVecMap<T>(p.data(bias), out_features);
}

template <typename T>
void Dense<T>::backward(const ParameterSet<T>& p, const T* x, const T* dy, T* dx,
                        ParameterSet<T>& grads) const {
  ConstVecMap<T> xv(x, in_features);
  ConstVecMap<T> dyv(dy, out_features);
  MatMap<T> gw(grads.data(weight), out_features, in_features);
  gw.noalias() += dyv * xv.transpose();
  VecMap<T>(grads.data(bias), out_features) += dyv;
  if (dx) {
    ConstMatMap<T> wm(p.data(weight), out_features, in_features);
    VecMap<T>(dx, in_features).noalias() = wm.transpose() * dyv;
  }
}

template <typename T>
const std::vector<std::vector<T>>& RecurrentLayer<T>::forward(
    const ParameterSet<T>& p, const std::vector<std::vector<T>>& xs, Trace& tr) const {
  const int H = hidden_size;
  const int G = cell == CellType::GRU ? 3 : 4;
  const std::size_t steps = xs.size();
  tr.inputs = xs;
  tr.hidden.assign(steps, std::vector<T>(H));
  tr.gates.assign(steps, std::vector<T>(G * H));
  tr.extra.assign(steps, std::vector<T>(H));
  ConstMatMap<T> wxm(p.data(wx), G * H, input_size);
  ConstMatMap<T> whm(p.data(wh), G * H, H);
  std::vector<T> zeros(H, T(0));
  Eigen::Matrix<T, Eigen::Dynamic, 1> ax(G * H), ah(G * H);
  for (std::size_t t = 0; t < steps; ++t) {
    const std::vector<T>& h_prev = t == 0 ? zeros : tr.hidden[t - 1];
    ConstVecMap<T> xv(xs[t].data(), input_size);
    ConstVecMap<T> hv(h_prev.data(), H);
    ax.noalias() = wxm * xv;
    ax += ConstVecMap<T>(p.data(bx), G * H);
    ah.noalias() = whm * hv;
    std::vector<T>& g = tr.gates[t];
    std::vector<T>& h = tr.hidden[t];
    if (cell == CellType::GRU) {
      ah += ConstVecMap<T>(p.data(bh), G * H);
      for (int i = 0; i < H; ++i) {
        const T r = sigmoid(ax[i] + ah[i]);
        const T z = sigmoid(ax[H + i] + ah[H + i]);
        const T hn = ah[2 * H + i];
        const T nn = std::tanh(ax[2 * H + i] + r * hn);
        g[i] = r;
        g[H + i] = z;
        g[2 * H + i] = nn;
        tr.extra[t][i] = hn;
        h[i] = (T(1) - z) * nn + z * h_prev[i];
      }
    } else {
      const std::vector<T>& c_prev = t == 0 ? zeros : tr.extra[t - 1];
      for (int i = 0; i < H; ++i) {
        const T ig = sigmoid(ax[i] + ah[i]);
        const T fg = sigmoid(ax[H + i] + ah[H + i]);
        const T gg = std::tanh(ax[2 * H + i] + ah[2 * H + i]);
        const T og = sigmoid(ax[3 * H + i] + ah[3 * H + i]);
        g[i] = ig;
        g[H + i] = fg;
        g[2 * H + i] = gg;
        g[3 * H + i] = og;
        const T c = fg * c_prev[i] + ig * gg;
        tr.extra[t][i] = c;
        h[i] = og * std::tanh(c);
      }
    }
  }
  return tr.hidden;
}

template <typename T>
void RecurrentLayer<T>::backward(const ParameterSet<T>& p, const Trace& tr,
                                 const std::vector<std::vector<T>>& dhs,
                                 std::vector<std::vector<T>>& dxs, ParameterSet<T>& grads) const {
  const int H = hidden_size;
  const int G = cell == CellType::GRU ? 3 : 4;
  const std::size_t steps = tr.inputs.size();
  dxs.assign(steps, std::vector<T>(input_size, T(0)));
  ConstMatMap<T> wxm(p.data(wx), G * H, input_size);
  ConstMatMap<T> whm(p.data(wh), G * H, H);
  MatMap<T> gwx(grads.data(wx), G * H, input_size);
  MatMap<T> gwh(grads.data(wh), G * H, H);
  VecMap<T> gbx(grads.data(bx), G * H);

  std::vector<T> zeros(H, T(0));
  Eigen::Matrix<T, Eigen::Dynamic, 1> dh_next = Eigen::Matrix<T, Eigen::Dynamic, 1>::Zero(H);
  Eigen::Matrix<T, Eigen::Dynamic, 1> dc_next = Eigen::Matrix<T, Eigen::Dynamic, 1>::Zero(H);
  Eigen::Matrix<T, Eigen::Dynamic, 1> gx(G * H), gh(G * H), dh_prev(H);
  for (std::size_t ti = steps; ti-- > 0;) {
    const std::vector<T>& h_prev = ti == 0 ? zeros : tr.hidden[ti - 1];
    const std::vector<T>& g = tr.gates[ti];
    Eigen::Matrix<T, Eigen::Dynamic, 1> dh = dh_next;
    for (int i = 0; i < H; ++i) dh[i] += dhs[ti][i];
    if (cell == CellType::GRU) {
      for (int i = 0; i < H; ++i) {
        const T r = g[i], z = g[H + i], nn = g[2 * H + i], hn = tr.extra[ti][i];
        const T dn = dh[i] * (T(1) - z);
        const T dz = dh[i] * (h_prev[i] - nn);
        dh_prev[i] = dh[i] * z;
        const T dan = dn * (T(1) - nn * nn);
        const T dr = dan * hn;
        const T dar = dr * r * (T(1) - r);
        const T daz = dz * z * (T(1) - z);
        gx[i] = dar;
        gx[H + i] = daz;
        gx[2 * H + i] = dan;
        gh[i] = dar;
        gh[H + i] = daz;
        gh[2 * H + i] = dan * r;
      }
      VecMap<T>(grads.data(bh), G * H) += gh;
    } else {
      const std::vector<T>& c_prev = ti == 0 ? zeros : tr.extra[ti - 1];
      for (int i = 0; i < H; ++i) {
        const T ig = g[i], fg = g[H + i], gg = g[2 * H + i], og = g[3 * H + i];
        const T c = tr.extra[ti][i];
        const T tc = std::tanh(c);
        const T dc = dc_next[i] + dh[i] * og * (T(1) - tc * tc);
        gx[i] = dc * gg * ig * (T(1) - ig);
        gx[H + i] = dc * c_prev[i] * fg * (T(1) - fg);
        gx[2 * H + i] = dc * ig * (T(1) - gg * gg);
        gx[3 * H + i] = dh[i] * tc * og * (T(1) - og);
        dc_next[i] = dc * fg;
        dh_prev[i] = T(0);
      }
      gh = gx;
    }
    ConstVecMap<T> xv(tr.inputs[ti].data(), input_size);
    ConstVecMap<T> hv(h_prev.data(), H);
    gwx.noalias() += gx * xv.transpose();
    gwh.noalias() += gh * hv.transpose();
    gbx += gx;
    VecMap<T>(dxs[ti].data(), input_size).noalias() = wxm.transpose() * gx;
    dh_next = dh_prev;
    dh_next.noalias() += whm.transpose() * gh;
  }
}

template struct ConvRelu<float>;
template struct ConvRelu<double>;
template struct Dense<float>;
template struct Dense<double>;
template struct RecurrentLayer<float>;
template struct RecurrentLayer<double>;
template void maxpool2_forward<float>(const float*, int, int, int, float*,
                                      std::vector<std::int32_t>&);
template void maxpool2_forward<double>(const double*, int, int, int, double*,
                                       std::vector<std::int32_t>&);
template void maxpool2_backward<float>(const float*, const std::vector<std::int32_t>&,
                                       std::size_t, float*);
template void maxpool2_backward<double>(const double*, const std::vector<std::int32_t>&,
                                        std::size_t, double*);

}  // namespace gazenet::nn
