#include "s3ta/layers.hpp"

#include <algorithm>
#include <cmath>

#include "s3ta/kernels.hpp"

namespace s3ta::layers {

using kernels::Trans;

template <typename T>
void im2col(const ConvGeometry& g, const T* in, T* col) {
  const int oh = g.out_height(), ow = g.out_width();
  const int k = g.kernel;
  for (int c = 0; c < g.in_channels; ++c) {
    const T* plane = in + static_cast<std::size_t>(c) * g.in_size();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          T* dst = row + oy * ow;
          if (iy < 0 || iy >= g.in_height) {
            std::fill(dst, dst + ow, T(0));
            continue;
          }
          const T* src = plane + iy * g.in_width;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.in_width) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, T* in) {
  const int oh = g.out_height(), ow = g.out_width();
  const int k = g.kernel;
  for (int c = 0; c < g.in_channels; ++c) {
    T* plane = in + static_cast<std::size_t>(c) * g.in_size();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.in_height) continue;
          T* dst = plane + iy * g.in_width;
          const T* src = row + oy * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.in_width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* in, const T* weight, const T* bias, T* out,
                    std::vector<T>& col) {
  const int n = g.out_size();
  const int r = g.patch_size();
  const T* unfolded = in;
  if (!g.is_pointwise()) {
    col.resize(static_cast<std::size_t>(r) * n);
    im2col(g, in, col.data());
    unfolded = col.data();
  }
  kernels::gemm<T>(Trans::kNo, Trans::kNo, g.out_channels, n, r, T(1), weight, r, unfolded, n, T(0), out, n);
  if (bias) {
    for (int oc = 0; oc < g.out_channels; ++oc) {
      T* row = out + static_cast<std::size_t>(oc) * n;
      for (int p = 0; p < n; ++p) row[p] += bias[oc];
    }
  }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, const T* in, const T* weight, const T* dout, T* dweight,
                     T* dbias, T* din, std::vector<T>& col) {
  const int n = g.out_size();
  const int r = g.patch_size();
  if (dbias) {
    for (int oc = 0; oc < g.out_channels; ++oc) {
      const T* row = dout + static_cast<std::size_t>(oc) * n;
      T acc = 0;
      for (int p = 0; p < n; ++p) acc += row[p];
      dbias[oc] += acc;
    }
  }
  if (dweight) {
    const T* unfolded = in;
    if (!g.is_pointwise()) {
      col.resize(static_cast<std::size_t>(r) * n);
      im2col(g, in, col.data());
      unfolded = col.data();
    }
    kernels::gemm<T>(Trans::kNo, Trans::kYes, g.out_channels, r, n, T(1), dout, n, unfolded, n, T(1),
                     dweight, r);
  }
  if (din) {
    if (g.is_pointwise()) {
      kernels::gemm<T>(Trans::kYes, Trans::kNo, r, n, g.out_channels, T(1), weight, r, dout, n, T(1), din, n);
      return;
    }
    col.resize(static_cast<std::size_t>(r) * n);
    kernels::gemm<T>(Trans::kYes, Trans::kNo, r, n, g.out_channels, T(1), weight, r, dout, n, T(0),
                     col.data(), n);
    col2im_add(g, col.data(), din);
  }
}

template <typename T>
void dense_forward(int out, int in, const T* weight, const T* bias, const T* x, T* y) {
  kernels::gemv<T>(Trans::kNo, out, in, T(1), weight, in, x, T(0), y);
  if (bias)
    for (int i = 0; i < out; ++i) y[i] += bias[i];
}

template <typename T>
void dense_backward(int out, int in, const T* weight, const T* x, const T* dy, T* dweight, T* dbias,
                    T* dx) {
  if (dweight) kernels::ger<T>(out, in, T(1), dy, x, dweight, in);
  if (dbias)
    for (int i = 0; i < out; ++i) dbias[i] += dy[i];
  if (dx) kernels::gemv<T>(Trans::kYes, out, in, T(1), weight, in, dy, T(1), dx);
}

template <typename T>
void relu_inplace(std::span<T> x) {
  for (auto& v : x) v = v > T(0) ? v : T(0);
}

template <typename T>
void relu_mask(std::span<const T> activation, std::span<T> dx) {
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (!(activation[i] > T(0))) dx[i] = T(0);
}

template <typename T>
void softmax(std::span<const T> logits, std::span<T> probs) {
  const T mx = *std::max_element(logits.begin(), logits.end());
  T sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - mx);
    sum += probs[i];
  }
  for (auto& p : probs) p /= sum;
}

template <typename T>
void softmax_backward(std::span<const T> probs, std::span<const T> dprobs, std::span<T> dlogits) {
  T inner = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) inner += probs[i] * dprobs[i];
  for (std::size_t i = 0; i < probs.size(); ++i) dlogits[i] = probs[i] * (dprobs[i] - inner);
}

namespace {

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace

template <typename T>
void lstm_forward(int width, int in, const T* w_input, const T* w_recurrent, const T* bias, const T* x,
                  const T* h_prev, const T* c_prev, LstmStep<T>& step) {
  std::vector<T> gates(4 * static_cast<std::size_t>(width));
  kernels::gemv<T>(Trans::kNo, 4 * width, in, T(1), w_input, in, x, T(0), gates.data());
  kernels::gemv<T>(Trans::kNo, 4 * width, width, T(1), w_recurrent, width, h_prev, T(1), gates.data());
  const auto w = static_cast<std::size_t>(width);
  step.input_gate.resize(w);
  step.forget_gate.resize(w);
  step.candidate.resize(w);
  step.output_gate.resize(w);
  step.cell.resize(w);
  step.hidden.resize(w);
  step.cell_tanh.resize(w);
  for (std::size_t j = 0; j < w; ++j) {
    step.input_gate[j] = sigmoid(gates[j] + bias[j]);
    step.forget_gate[j] = sigmoid(gates[w + j] + bias[w + j]);
    step.candidate[j] = std::tanh(gates[2 * w + j] + bias[2 * w + j]);
    step.output_gate[j] = sigmoid(gates[3 * w + j] + bias[3 * w + j]);
    step.cell[j] = step.forget_gate[j] * c_prev[j] + step.input_gate[j] * step.candidate[j];
    step.cell_tanh[j] = std::tanh(step.cell[j]);
    step.hidden[j] = step.output_gate[j] * step.cell_tanh[j];
  }
}

template <typename T>
void lstm_backward(int width, int in, const T* w_input, const T* w_recurrent, const T* x, const T* h_prev,
                   const T* c_prev, const LstmStep<T>& step, const T* dh, const T* dc, T* dw_input,
                   T* dw_recurrent, T* dbias, T* dx, T* dh_prev, T* dc_prev) {
  const auto w = static_cast<std::size_t>(width);
  std::vector<T> dgates(4 * w);
  for (std::size_t j = 0; j < w; ++j) {
    const T i = step.input_gate[j], f = step.forget_gate[j], g = step.candidate[j], o = step.output_gate[j];
    const T tc = step.cell_tanh[j];
    const T dcell = dc[j] + dh[j] * o * (T(1) - tc * tc);
    dgates[j] = dcell * g * i * (T(1) - i);
    dgates[w + j] = dcell * c_prev[j] * f * (T(1) - f);
    dgates[2 * w + j] = dcell * i * (T(1) - g * g);
    dgates[3 * w + j] = dh[j] * tc * o * (T(1) - o);
    dc_prev[j] = dcell * f;
  }
  if (dw_input) kernels::ger<T>(4 * width, in, T(1), dgates.data(), x, dw_input, in);
  if (dw_recurrent) kernels::ger<T>(4 * width, width, T(1), dgates.data(), h_prev, dw_recurrent, width);
  if (dbias)
    for (std::size_t j = 0; j < 4 * w; ++j) dbias[j] += dgates[j];
  if (dx) kernels::gemv<T>(Trans::kYes, 4 * width, in, T(1), w_input, in, dgates.data(), T(1), dx);
  kernels::gemv<T>(Trans::kYes, 4 * width, width, T(1), w_recurrent, width, dgates.data(), T(0), dh_prev);
}

#define S3TA_INSTANTIATE_LAYERS(T)                                                                     \
  template void im2col<T>(const ConvGeometry&, const T*, T*);                                          \
  template void col2im_add<T>(const ConvGeometry&, const T*, T*);                                      \
  template void conv2d_forward<T>(const ConvGeometry&, const T*, const T*, const T*, T*,               \
                                  std::vector<T>&);                                                    \
  template void conv2d_backward<T>(const ConvGeometry&, const T*, const T*, const T*, T*, T*, T*,      \
                                   std::vector<T>&);                                                   \
  template void dense_forward<T>(int, int, const T*, const T*, const T*, T*);                          \
  template void dense_backward<T>(int, int, const T*, const T*, const T*, T*, T*, T*);                 \
  template void relu_inplace<T>(std::span<T>);                                                         \
  template void relu_mask<T>(std::span<const T>, std::span<T>);                                        \
  template void softmax<T>(std::span<const T>, std::span<T>);                                          \
  template void softmax_backward<T>(std::span<const T>, std::span<const T>, std::span<T>);             \
  template void lstm_forward<T>(int, int, const T*, const T*, const T*, const T*, const T*, const T*,  \
                                LstmStep<T>&);                                                         \
  template void lstm_backward<T>(int, int, const T*, const T*, const T*, const T*, const T*,           \
                                 const LstmStep<T>&, const T*, const T*, T*, T*, T*, T*, T*, T*);

S3TA_INSTANTIATE_LAYERS(float)
S3TA_INSTANTIATE_LAYERS(double)

}  // namespace s3ta::layers
