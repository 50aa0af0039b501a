#pragma once

#include "fgs/tensor.hpp"

namespace fgs::diff {

// Elementwise (same shape).
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr div(const TensorPtr& a, const TensorPtr& b);

// y = k*x + c elementwise with scalar constants; covers neg, scalar add/mul.
TensorPtr affine(const TensorPtr& x, double k, double c);
inline TensorPtr add_scalar(const TensorPtr& x, double c) { return affine(x, 1.0, c); }
inline TensorPtr mul_scalar(const TensorPtr& x, double k) { return affine(x, k, 0.0); }
inline TensorPtr neg(const TensorPtr& x) { return affine(x, -1.0, 0.0); }
inline TensorPtr one_minus(const TensorPtr& x) { return affine(x, -1.0, 1.0); }

// Multiply by a scalar-valued tensor (gradient flows to both factors).
TensorPtr mul_scalar_tensor(const TensorPtr& x, const TensorPtr& s);

// Linear algebra (rank-2).
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
TensorPtr transpose(const TensorPtr& a);

// Row/column broadcasts on [m,n] operands.
TensorPtr add_rowvec(const TensorPtr& x, const TensorPtr& b);   // b: [n] or [1,n]
TensorPtr mul_rowvec(const TensorPtr& x, const TensorPtr& v);   // v: [n] or [1,n]
TensorPtr scale_rows(const TensorPtr& x, const TensorPtr& s);   // s: [m] or [m,1]

// Structure.
TensorPtr concat(const std::vector<TensorPtr>& parts, int axis);
TensorPtr slice(const TensorPtr& x, int axis, std::int64_t start, std::int64_t len);
TensorPtr reshape(const TensorPtr& x, Shape shape);

// Reductions.
TensorPtr sum(const TensorPtr& x);
TensorPtr mean(const TensorPtr& x);
TensorPtr sum_axis(const TensorPtr& x, int axis);   // keeps the axis as 1
TensorPtr mean_axis(const TensorPtr& x, int axis);  // keeps the axis as 1

// Pointwise nonlinearities.
TensorPtr exp(const TensorPtr& x);
TensorPtr log(const TensorPtr& x);
TensorPtr sqrt(const TensorPtr& x);
TensorPtr abs(const TensorPtr& x);
TensorPtr sigmoid(const TensorPtr& x);
TensorPtr tanh(const TensorPtr& x);
TensorPtr relu(const TensorPtr& x);
TensorPtr clamp(const TensorPtr& x, double lo, double hi);

// Normalizations over a named axis.
TensorPtr softmax(const TensorPtr& x, int axis);
TensorPtr l2_normalize(const TensorPtr& x, int axis);

// Conv stack building blocks (NCHW).
TensorPtr conv2d(const TensorPtr& input, const TensorPtr& weight, int stride);
TensorPtr add_chan_bias(const TensorPtr& x, const TensorPtr& bias);  // bias: [C]
TensorPtr avg_pool2d(const TensorPtr& x, int k);
// Mean over non-overlapping row windows: [m,n] -> [m/window, n].
TensorPtr avgpool_rows(const TensorPtr& x, int window);

}  // namespace fgs::diff
