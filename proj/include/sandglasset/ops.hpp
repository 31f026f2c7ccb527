// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "sandglasset/autodiff.hpp"
#include "sandglasset/rng.hpp"
#include "sandglasset/tensor.hpp"

// Differentiable primitives. Feature tensors are channel-major: axis 0 is the
// feature/channel axis and the remaining axes enumerate positions, so a
// D x K x S segment tensor is D rows of K*S contiguous positions.
namespace sandglasset::ops {

// ---- elementwise ---------------------------------------------------------

template <typename Real>
Var<Real> add(Var<Real> a, Var<Real> b);

template <typename Real>
Var<Real> mul(Var<Real> a, Var<Real> b);

template <typename Real>
Var<Real> scale(Var<Real> a, Real factor);

template <typename Real>
Var<Real> relu(Var<Real> x);

// Parametric ReLU with a single learnable slope (shape [1]).
template <typename Real>
Var<Real> prelu(Var<Real> x, Var<Real> slope);

// Sum of scalars (each of shape [1]).
template <typename Real>
Var<Real> sum_scalars(const std::vector<Var<Real>>& terms);

// Sum of all elements, as a [1] tensor.
template <typename Real>
Var<Real> sum(Var<Real> x);

// Same data under new extents.
template <typename Real>
Var<Real> reshape(Var<Real> x, Shape shape);

// Rows [begin, begin + count) of axis 0.
template <typename Real>
Var<Real> slice_rows(Var<Real> x, std::size_t begin, std::size_t count);

// Adds a constant D x S table to every middle index of a D x A x S tensor.
template <typename Real>
Var<Real> add_broadcast_middle(Var<Real> x, const Tensor<Real>& table);

// ---- dense layers --------------------------------------------------------

// out[:, p] = w * x[:, p] + b for every position p. x is Din x ... and the
// trailing extents are preserved.
template <typename Real>
Var<Real> linear(Var<Real> x, Var<Real> w, std::optional<Var<Real>> b = {});

// Normalizes each position across axis 0, then applies gain/offset.
template <typename Real>
Var<Real> layer_norm(Var<Real> x, Var<Real> gain, Var<Real> offset,
                     Real eps = Real(1e-5));

struct Conv1dSpec {
  std::size_t kernel_size = 1;
  std::size_t stride = 1;
  bool depthwise = true;
  bool transposed = false;
};

// Convolution along axis 1 of a D x A (or D x A x B, with B independent
// columns) tensor, no bias. Kernel shapes: depthwise [D, k]; dense
// [D_out, D_in, k] for both directions. Non-transposed output length is
// (A - k) / stride + 1 and (A - k) must be a multiple of stride; transposed
// output length is (A - 1) * stride + k. With k == stride these reduce to
// A / stride and A * stride.
template <typename Real>
Var<Real> conv1d(Var<Real> x, Var<Real> kernel, const Conv1dSpec& spec);

// Bidirectional single-layer LSTM over axis 1 of a D x K x S tensor: each of
// the S columns is an independent length-K sequence. Output is 2H x K x S with
// the forward direction in rows [0, H) and the backward one in [H, 2H).
// Zero initial state in both directions.
template <typename Real>
Var<Real> bilstm(Var<Real> x, Var<Real> fwd_w_ih, Var<Real> fwd_w_hh,
                 Var<Real> fwd_bias, Var<Real> bwd_w_ih, Var<Real> bwd_w_hh,
                 Var<Real> bwd_bias);

// Scaled dot-product attention along the last axis of D x A x S tensors,
// independently for each of the A middle indices and each of `heads` row
// groups of size D / heads:
//   out_j = v_j * softmax(q_j^T k_j / sqrt(D / heads))^T.
template <typename Real>
Var<Real> attention(Var<Real> q, Var<Real> k, Var<Real> v, std::size_t heads);

// Inverted dropout: training zeroes each element with probability `rate` and
// scales survivors by 1 / (1 - rate); evaluation is the identity.
template <typename Real>
Var<Real> dropout(Var<Real> x, double rate, Rng& rng, bool training);

struct AttentionParams {
  std::size_t heads = 1;
  double dropout = 0.0;
};

template <typename Real>
struct AttentionWeights {
  Var<Real> w_q, b_q, w_k, b_k, w_v, b_v;  // [D, D] / [D], heads stacked
  Var<Real> w_out;                          // [D, D]
  Var<Real> ln_gain, ln_offset;             // output LayerNorm
};

// Multi-head self-attention over the last axis of a D x A x S tensor:
//   LN(x + dropout(W_out * concat_j attention_j(x))).
template <typename Real>
Var<Real> multi_head_attention(Var<Real> x, const AttentionWeights<Real>& w,
                               const AttentionParams& params, Rng& rng,
                               bool training);

// ---- constants -----------------------------------------------------------

// Sinusoidal table, D x S: P[2i, s] = sin(s / 10000^(2i/D)),
// P[2i+1, s] = cos(s / 10000^(2i/D)).
template <typename Real>
Tensor<Real> positional_encoding(std::size_t length, std::size_t dim);

// Row-wise softmax of an n x m matrix in place.
template <typename Real>
void softmax_rows(Real* data, std::size_t rows, std::size_t cols);

}  // namespace sandglasset::ops
