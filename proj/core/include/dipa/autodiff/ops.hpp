#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dipa/autodiff/value.hpp"

namespace dipa::ad {

// Elementwise binary ops. Operands either have equal shapes, or one of them is
// a scalar, or the smaller shape equals the trailing dimensions of the larger
// (leading-dimension batch broadcast).
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value div(const Value& a, const Value& b);
Value add(const Value& a, float b);
Value mul(const Value& a, float b);
Value sub(float a, const Value& b);
Value neg(const Value& a);

Value matmul(const Value& a, const Value& b);  // (M,K) x (K,N)

struct Conv2dParams {
  int stride = 1;
  int padding = 0;
};
// x: (B,C,H,W), w: (O,C,kh,kw), bias: (O). Stride 1 or 2, zero padding.
Value conv2d(const Value& x, const Value& w, const Value& bias, Conv2dParams p);

Value relu(const Value& a);
Value sigmoid(const Value& a);
Value log(const Value& a);
Value exp(const Value& a);
Value square(const Value& a);
Value abs(const Value& a);

Value sum(const Value& a);
Value mean(const Value& a);

struct Reduced {
  Value value;
  std::vector<std::int64_t> arg;  // index along the reduced axis
};
// Reduction along one axis. Ties resolve to the lowest index, and only that
// element receives gradient.
Reduced max_along(const Value& a, std::size_t axis);
Reduced min_along(const Value& a, std::size_t axis);

// Mean softmax cross-entropy of (B,K) logits against integer labels.
Value softmax_cross_entropy(const Value& logits, std::span<const int> labels);

Value broadcast_to(const Value& a, const Shape& shape);
Value reshape(const Value& a, const Shape& shape);
Value select_rows(const Value& a, std::span<const std::int64_t> rows);

// Squared euclidean distances between rows: a (M,D), b (N,D) -> (M,N).
// Computed as sum_k (a_k - b_k)^2, so identical rows give exactly 0.
Value pairwise_sq_dist(const Value& a, const Value& b);

// (B,C,H,W) -> (B*H*W, C), one row per spatial cell in row-major cell order.
Value nchw_to_rows(const Value& x);

// Adaptive average pooling over windows [floor(i*H/oh), ceil((i+1)*H/oh)).
Value adaptive_avg_pool2d(const Value& x, int out_h, int out_w);

}  // namespace dipa::ad
