#pragma once

// Forward/backward primitives. Feature maps are channel-major (C, H, W);
// weight matrices are row-major (out, in). Backward routines accumulate
// into their gradient outputs.

#include <cstddef>
#include <span>
#include <vector>

namespace s3ta::layers {

struct ConvGeometry {
  int in_channels = 0;
  int in_height = 0;
  int in_width = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_height() const { return (in_height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (in_width + 2 * pad - kernel) / stride + 1; }
  int out_size() const { return out_height() * out_width(); }
  int in_size() const { return in_height * in_width; }
  /// Rows of the unfolded input (in_channels * kernel^2).
  int patch_size() const { return in_channels * kernel * kernel; }
  std::size_t weight_count() const { return static_cast<std::size_t>(out_channels) * patch_size(); }
  bool is_pointwise() const { return kernel == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void im2col(const ConvGeometry& g, const T* in, T* col);
template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, T* in);

/// out = W * unfold(in) + bias. `bias` may be null. `col` is scratch.
template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* in, const T* weight, const T* bias, T* out,
                    std::vector<T>& col);

/// Accumulates dweight/dbias/din. Any of them may be null.
template <typename T>
void conv2d_backward(const ConvGeometry& g, const T* in, const T* weight, const T* dout, T* dweight,
                     T* dbias, T* din, std::vector<T>& col);

/// y = W x + b, W is (out, in).
template <typename T>
void dense_forward(int out, int in, const T* weight, const T* bias, const T* x, T* y);

/// dW += dy x^T, db += dy, dx += W^T dy. Any gradient pointer may be null.
template <typename T>
void dense_backward(int out, int in, const T* weight, const T* x, const T* dy, T* dweight, T* dbias,
                    T* dx);

template <typename T>
void relu_inplace(std::span<T> x);
/// dx[i] = 0 where activation[i] <= 0.
template <typename T>
void relu_mask(std::span<const T> activation, std::span<T> dx);

/// Numerically stabilized softmax (max subtraction).
template <typename T>
void softmax(std::span<const T> logits, std::span<T> probs);
/// dlogits = p * (dp - <p, dp>).
template <typename T>
void softmax_backward(std::span<const T> probs, std::span<const T> dprobs, std::span<T> dlogits);

/// Gate activations of one recurrent cell step, each of length `width`,
/// ordered input, forget, candidate, output.
template <typename T>
struct LstmStep {
  std::vector<T> input_gate, forget_gate, candidate, output_gate;
  std::vector<T> cell, hidden;
  std::vector<T> cell_tanh;
};

/// Standard gated cell: gates = Wx x + Wh h + b.
template <typename T>
void lstm_forward(int width, int in, const T* w_input, const T* w_recurrent, const T* bias, const T* x,
                  const T* h_prev, const T* c_prev, LstmStep<T>& step);

/// Given dh, dc at this step, accumulates parameter gradients and writes
/// dx (+=), dh_prev (=), dc_prev (=).
template <typename T>
void lstm_backward(int width, int in, const T* w_input, const T* w_recurrent, const T* x, const T* h_prev,
                   const T* c_prev, const LstmStep<T>& step, const T* dh, const T* dc, T* dw_input,
                   T* dw_recurrent, T* dbias, T* dx, T* dh_prev, T* dc_prev);

}  // namespace s3ta::layers
