#pragma once

// Differentiable weight quantizer with learnable bit depth and exponent, and
// the analytic size model used both as a training penalty and for reporting.
//
//   q(x, b, e) = 2^e · floor(min(max(2^-e·x, -2^(b-1)), 2^(b-1) - 1))
//
// b and e are continuous and learned per group (a conv output channel or an
// attention head). A group with b <= 0 quantizes to exactly zero.
//
// Backward treats floor as the identity and differentiates the clamp:
//   inside the range     ds/dx = 1, ds/db = 0, ds/de = 0
//   clamped high / low   ds/dx = 0, ds/de = ln2·s, ds/db = ±2^e·ln2·2^(b-1)

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "sdsc/tensor.hpp"

namespace sdsc {

constexpr float kMaxBits = 16.0f;
constexpr float kMaxExponent = 32.0f;

float quantize_value(float x, float bits, float exponent);

struct SurrogateGrad {
  float dx = 0.0f;
  float db = 0.0f;
  float de = 0.0f;
};

// Partial derivatives of the clamp surrogate at one element.
SurrogateGrad quantize_surrogate_grad(float x, float bits, float exponent);

// Quantizes w[G, ...] with bits[G] and exponent[G]; group g is the g-th slab
// along axis 0. Rejects non-finite inputs.
Tensor quantize(const Tensor& w, const Tensor& bits, const Tensor& exponent);

struct QuantizeGrads {
  std::vector<float> dx;  // same size as x
  std::vector<float> db;  // per group
  std::vector<float> de;  // per group
};

// Backward of quantize() for an upstream gradient of x's shape.
QuantizeGrads quantize_backward(std::span<const float> upstream, const Tensor& x, const Tensor& bits,
                                const Tensor& exponent);

struct QuantParams {
  Tensor bits;      // [G], learnable, kept in [0, kMaxBits]
  Tensor exponent;  // [G], learnable, kept in [-kMaxExponent, kMaxExponent]
  std::vector<std::int64_t> frozen_until;  // optimizer skips group g while step < frozen_until[g]
};

// A weight tensor whose slabs along axis 0 are quantization groups.
class QuantizedParam {
 public:
  QuantizedParam() = default;
  QuantizedParam(std::string name, Tensor weights, float initial_bits);

  const std::string& name() const { return name_; }
  Tensor& weights() { return weights_; }
  const Tensor& weights() const { return weights_; }
  QuantParams& params() { return qp_; }
  const QuantParams& params() const { return qp_; }
  Tensor& bits() { return qp_.bits; }
  const Tensor& bits() const { return qp_.bits; }
  Tensor& exponent() { return qp_.exponent; }
  const Tensor& exponent() const { return qp_.exponent; }

  std::size_t groups() const { return weights_.dim(0); }
  std::size_t group_size() const { return weights_.numel() / groups(); }
  std::span<const float> group_weights(std::size_t g) const;

  bool live(std::size_t g) const { return live_[g] != 0; }
  const std::vector<std::uint8_t>& live_mask() const { return live_; }
  std::size_t live_count() const;
  bool frozen(std::size_t g, std::int64_t step) const { return step < qp_.frozen_until[g]; }

  // Per-group e = ceil(log2(max|w| + 1e-12)) - (b - 1), so the clamp range
  // initially covers the group's weights.
  void reset_exponents(float bits_value);
  void set_bits(float bits_value);

  // Differentiable quantized view of the weights.
  Tensor quantized() const { return quantize(weights_, qp_.bits, qp_.exponent); }
  std::vector<float> quantized_values() const;
  // True when every quantized weight of group g is exactly zero or b <= 0.
  bool group_quantizes_to_zero(std::size_t g) const;

  // Marks g dead: weights zeroed, b set to 0, never revived.
  void kill_group(std::size_t g);
  // Clamps b and e into their ranges and re-zeroes dead groups.
  void enforce_invariants();
  void set_live_mask(std::vector<std::uint8_t> mask);

 private:
  std::string name_;
  Tensor weights_;
  QuantParams qp_;
  std::vector<std::uint8_t> live_;
};

// Size of one conv layer in bits: I·H·W·Σ max(b_i, 0), with H, W the output
// spatial extents and the sum over the O output channels.
struct ConvSizeDesc {
  std::size_t in_channels = 1;
  std::size_t out_height = 1;
  std::size_t out_width = 1;
  std::size_t out_channels = 1;
};

// Size of one attention block's heads in bits: Σ_h 4·d_model·d_head·max(b_h, 0).
struct AttentionSizeDesc {
  std::size_t d_model = 1;
  std::size_t d_head = 1;
  std::size_t n_heads = 1;
};

double layer_quantized_size(const ConvSizeDesc& desc, std::span<const float> bits);
double attention_quantized_size(const AttentionSizeDesc& desc, std::span<const float> bits);

using SizeEntry = std::variant<ConvSizeDesc, AttentionSizeDesc>;

struct SizeModel {
  std::vector<SizeEntry> layers;

  // Bits per unit of b for one group of layer l (the dz_l/db_{l,i} factor).
  double group_coefficient(std::size_t layer) const;
  std::size_t group_count(std::size_t layer) const;
};

double layer_size(const SizeEntry& entry, std::span<const float> bits);

// Q = (1/N)·Σ_l z_l over the N quantized layers.
double average_bit_depth(const SizeModel& model, const std::vector<std::span<const float>>& bits);
// Differentiable Q; one bits tensor per layer.
Tensor average_bit_depth(const SizeModel& model, const std::vector<Tensor>& bits);

struct QuantizedGroupBytes {
  std::size_t elements = 0;
  float bits = 0.0f;
};

// Everything stored by a model, as seen by the byte report.
struct ByteInventory {
  std::vector<QuantizedGroupBytes> quantized_groups;
  std::size_t unquantized_elements = 0;
};

// Reported storage: ceil(max(b, 0))/8 bytes per quantized element, 4 bytes per
// stored (b, e) pair, and 4 bytes per unquantized element.
double model_bytes(const ByteInventory& inventory);

}  // namespace sdsc
