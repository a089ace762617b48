#pragma once

// Layer primitives for the convolutional classifier and the decoder-only
// transformer. Images are (batch, channel, height, width); sequences are
// (batch, time, feature). All reductions run in a fixed order.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sdsc/tensor.hpp"

namespace sdsc {

constexpr float kNormEpsilon = 1e-5f;
constexpr float kBatchNormMomentum = 0.1f;

enum class Mode { kTrain, kEval };

struct Conv2dLayer {
  Tensor weights;  // out_ch × in_ch × kh × kw
  Tensor bias;     // out_ch
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// Cross-correlation of x[B,C,H,W] with w[O,C,kh,kw] plus bias[O].
// Output extents are (H + 2·padding − kh)/stride + 1, which must be integral.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t padding);
Tensor conv2d(const Tensor& x, const Conv2dLayer& layer);

struct RunningStats {
  Tensor mean;  // [C], starts at 0
  Tensor var;   // [C], starts at 1

  RunningStats() = default;
  explicit RunningStats(std::size_t channels) : mean(Shape{channels}, 0.0f), var(Shape{channels}, 1.0f) {}
};

// Per-channel normalization of x[B,C,...]. Training mode uses batch
// statistics and updates `stats`; evaluation mode reads `stats`.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, RunningStats& stats, Mode mode);

// 2×2 non-overlapping max over x[B,C,H,W]; H and W must be even. Gradient goes
// to the first maximal element of each window.
Tensor maxpool2x2(const Tensor& x);

// Normalizes over the last axis.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta);

// Mean cross-entropy of logits[N,K] against class indices.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

// Rows of table[V,D] selected by ids, shape (ids.size(), D).
Tensor embedding(const Tensor& table, std::span<const int> ids);

// Single-head scaled dot-product attention over q, k, v of shape [B,T,dh]
// with a causal mask: position t attends to positions ≤ t.
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v);

// Pre-norm transformer block. Head h owns a contiguous [4, d_model, d_head]
// chunk of `heads`: query, key and value projections (d_model × d_head each)
// followed by its slice of the output projection (d_head × d_model).
struct AttentionBlock {
  std::size_t d_model = 0;
  std::size_t d_head = 0;
  std::size_t n_heads = 0;
  Tensor heads;     // n_heads × 4 × d_model × d_head
  Tensor out_bias;  // d_model
  Tensor ln1_gamma, ln1_beta;
  Tensor ln2_gamma, ln2_beta;
  Tensor ff_w1, ff_b1;  // d_model × ff, ff
  Tensor ff_w2, ff_b2;  // ff × d_model, d_model
  std::vector<std::uint8_t> head_live;

  std::size_t head_params() const { return 4 * d_model * d_head; }
};

// Runs `block` on x[B,T,d_model]. `head_weights` replaces block.heads (the
// quantized view during compression); pruned heads contribute nothing.
Tensor attention_forward(const Tensor& x, const AttentionBlock& block, const Tensor& head_weights,
                         std::size_t context);
Tensor attention_forward(const Tensor& x, const AttentionBlock& block, std::size_t context);

}  // namespace sdsc
