#pragma once

#include <memory>
#include <span>
#include <vector>

#include "tslc/tape.hpp"
#include "tslc/tensor.hpp"

namespace tslc::ops {

/// a[m,k] * b[k,n] -> [m,n]. F32 only.
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);

/// x [c,h,w] or [n,c,h,w], w [c_out,c_in,k,k]. Implemented as im2col + matmul.
/// Output spatial dims must divide exactly: (h + 2*pad - k) % stride == 0.
Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& w, const Tensor* bias,
              int stride, int pad);

Tensor relu(Tape& tape, const Tensor& x);

/// Inference-form batchnorm over the channel axis; stats and affine params
/// must be frozen (gradient flows to x only).
Tensor batchnorm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 const Tensor& mean, const Tensor& var, float eps = 1e-5f);

/// Mean over the batch of -log softmax(logits)[label], max-stabilized.
Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits, const Tensor& labels);

/// axis 0: stack along rows (shapes equal except dim 0);
/// axis 1: rank-2 tensors with equal row counts.
Tensor concat(Tape& tape, std::span<const Tensor> parts, int axis);

/// Columns [lo, hi) of a rank-2 tensor.
Tensor col_slice(Tape& tape, const Tensor& x, std::int64_t lo, std::int64_t hi);

Tensor transpose2d(Tape& tape, const Tensor& x);

/// Row-wise softmax (each row sums to 1).
Tensor softmax_rows(Tape& tape, const Tensor& x);

/// Column-wise softmax (each column sums to 1); the token-axis variant.
Tensor softmax_cols(Tape& tape, const Tensor& x);

/// y = alpha * x with a trainable scalar gate alpha of shape [1].
Tensor scale(Tape& tape, const Tensor& x, const Tensor& alpha);

/// y = 1 - a for a scalar tensor of shape [1].
Tensor one_minus(Tape& tape, const Tensor& a);

/// y = c * x for a compile-time constant c (no gradient to c).
Tensor const_mul(Tape& tape, const Tensor& x, float c);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);

/// x[m,n]+b[n], x[c,h,w]+b[c] or x[n,c,h,w]+b[c].
Tensor bias_add(Tape& tape, const Tensor& x, const Tensor& b);

/// [t,d] -> [1,d], mean over rows.
Tensor mean_rows(Tape& tape, const Tensor& x);

/// y.flat[i] = x.flat[idx[i]]; backward scatter-adds. Used for patch
/// extraction and other fixed permutations.
Tensor gather_flat(Tape& tape, const Tensor& x,
                   std::shared_ptr<const std::vector<std::int64_t>> idx,
                   std::vector<std::int64_t> out_shape);

/// softmax(q k^T / sqrt(d_head)) v for a single head; all inputs [t, d_head].
Tensor attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v);

/// Multi-head attention over pre-projected q/k/v [t, d_model] with an output
/// projection wo [d_model, d_model].
Tensor multihead_attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                           int n_heads, const Tensor& wo);

/// Attention built from weight-feature products only:
///   aw  = softmax_cols(concat(xq, xk) * w1)
///   out = concat(aw, xv) * w2
/// w1 [2d, d_attn], w2 [d_attn + d, d_out]. No feature-feature matmul, so each
/// projection stays offloadable under additive masking.
Tensor linear_attention(Tape& tape, const Tensor& xq, const Tensor& xk, const Tensor& xv,
                        const Tensor& w1, const Tensor& w2);

/// p <- p - lr * (g + weight_decay * p) for every tensor with a grad slot.
void sgd_step(std::span<Tensor> params, float lr, float weight_decay);

void zero_grads(std::span<Tensor> params);

}  // namespace tslc::ops
