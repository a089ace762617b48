#pragma once

// Differentiable tensor primitives. Every function records its backward rule
// on the active tape when an input requires a gradient, and rejects shape
// contract violations with ShapeError naming the offending shapes.

#include <cstddef>
#include <span>
#include <vector>

#include "sdsc/tensor.hpp"

namespace sdsc {

// Throws Error if any value of `t` is NaN or infinite.
void ensure_finite(const Tensor& t, const char* op);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);
Tensor relu(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Σ|a|; the subgradient at 0 is 0.
Tensor abs_sum(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
// Contiguous run of `shape_numel(shape)` values starting at flat `offset`.
Tensor slice(const Tensor& a, std::size_t offset, Shape shape);
// Rows `rows` of a 2-D tensor, in order.
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);

Tensor matmul(const Tensor& a, const Tensor& b);
// x[n×m] + bias[m] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
// x[n×in] · w[in×out] + bias[out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

// Multiplies channel c of x[B,C,...] by the constant factors[c].
Tensor scale_channels(const Tensor& x, std::span<const float> factors);

}  // namespace sdsc
