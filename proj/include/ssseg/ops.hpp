#pragma once

#include <vector>

#include "ssseg/tensor.hpp"

namespace ssseg {

// Differentiable primitives over Tensor. Every op records a tape node when
// any input requires grad; otherwise it is a plain forward computation.
// Shape mismatches throw ShapeError naming the op and the offending axes.

Tensor add(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, double b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, b); }
inline Tensor operator*(double a, const Tensor& b) { return mul(b, a); }

// (M,K) x (K,N) -> (M,N)
Tensor matmul(const Tensor& a, const Tensor& b);

// Adds/multiplies a length-C vector into every row of an (R,C) matrix.
Tensor add_rowvec(const Tensor& mat, const Tensor& vec);
Tensor mul_rowvec(const Tensor& mat, const Tensor& vec);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);

Tensor softmax(const Tensor& a, int axis);
Tensor log_softmax(const Tensor& a, int axis);
// Normalizes each line along `axis` to zero mean, unit variance.
Tensor layer_norm(const Tensor& a, int axis, double eps = 1e-5);

// x: (Cin,H,W), w: (Cout,Cin,kh,kw), bias: (Cout) or undefined. Zero padding;
// pad = k/2 keeps "same" spatial shape at stride 1.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);
// x: (Cin,H,W), w: (Cin,Cout,kh,kw), bias: (Cout) or undefined.
// Output (Cout, (H-1)*stride+kh, (W-1)*stride+kw).
Tensor transposed_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride);
// Ties route the gradient to the first maximal element in scan order.
Tensor max_pool2d(const Tensor& x, int kernel = 2, int stride = 2);
// x: (C,H,W) -> (C,target_h,target_w); corner-aligned sampling, exact
// identity when the target equals the source resolution.
Tensor bilinear_interpolate(const Tensor& x, int target_h, int target_w);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor transpose(const Tensor& a, const std::vector<int>& axes);
Tensor reshape(const Tensor& a, const std::vector<int64_t>& new_shape);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t stop);

Tensor sum(const Tensor& a);
// mask holds constant 0/1 weights (must not require grad); returns the sum of
// the selected entries as a scalar.
Tensor masked_sum(const Tensor& a, const Tensor& mask);

}  // namespace ssseg
