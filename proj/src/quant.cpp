#include "sdsc/quant.hpp"

#include <algorithm>
#include <cmath>

#include "sdsc/error.hpp"
#include "sdsc/ops.hpp"

namespace sdsc {

namespace {

constexpr double kLn2 = 0.69314718055994530942;

// Rounded products 2^e·k come back from float storage up to one ulp below k;
// the relative nudge keeps floor() idempotent on grid points.
constexpr double kFloorNudge = 0x1.0p-22;

struct Clamp {
  double lo;
  double hi;
  double scaled;  // 2^-e·x
};

Clamp clamp_of(float x, float bits, float exponent) {
  const double half = std::exp2(static_cast<double>(bits) - 1.0);
  return Clamp{-half, half - 1.0, static_cast<double>(x) * std::exp2(-static_cast<double>(exponent))};
}

void check_groups(const Tensor& w, const Tensor& bits, const Tensor& exponent) {
  if (w.rank() < 1 || bits.numel() != w.dim(0) || exponent.numel() != w.dim(0)) {
    throw ShapeError("quantize: " + std::to_string(bits.numel()) + " bit depths and " +
                     std::to_string(exponent.numel()) + " exponents for weights " + shape_str(w.shape()));
  }
}

void check_finite_inputs(const Tensor& t, const char* what) {
  for (float v : t.data()) {
    if (!std::isfinite(v)) throw Error(std::string("quantize: non-finite ") + what);
  }
}

}  // namespace

float quantize_value(float x, float bits, float exponent) {
  if (!std::isfinite(x) || !std::isfinite(bits) || !std::isfinite(exponent)) {
    throw Error("quantize: non-finite input");
  }
  if (bits <= 0.0f) return 0.0f;
  const Clamp c = clamp_of(x, bits, exponent);
  const double clamped = std::min(std::max(c.scaled, c.lo), c.hi);
  const double level = std::floor(clamped + std::fabs(clamped) * kFloorNudge);
  return static_cast<float>(std::exp2(static_cast<double>(exponent)) * level);
}

SurrogateGrad quantize_surrogate_grad(float x, float bits, float exponent) {
  SurrogateGrad g;
  if (bits <= 0.0f) return g;
  const Clamp c = clamp_of(x, bits, exponent);
  const double scale = std::exp2(static_cast<double>(exponent));
  const double half = std::exp2(static_cast<double>(bits) - 1.0);
  if (c.scaled >= c.hi) {
    g.de = static_cast<float>(kLn2 * scale * c.hi);
    g.db = static_cast<float>(scale * kLn2 * half);
  } else if (c.scaled <= c.lo) {
    g.de = static_cast<float>(kLn2 * scale * c.lo);
    g.db = static_cast<float>(-scale * kLn2 * half);
  } else {
    g.dx = 1.0f;
  }
  return g;
}

Tensor quantize(const Tensor& w, const Tensor& bits, const Tensor& exponent) {
  check_groups(w, bits, exponent);
  check_finite_inputs(w, "weights");
  check_finite_inputs(bits, "bit depth");
  check_finite_inputs(exponent, "exponent");
  const std::size_t groups = w.dim(0);
  const std::size_t per = w.numel() / groups;
  Tensor out(w.shape());
  auto o = out.data();
  auto x = w.data();
  auto b = bits.data();
  auto e = exponent.data();
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t i = g * per; i < (g + 1) * per; ++i) o[i] = quantize_value(x[i], b[g], e[g]);
  }
  record_op(out, {w, bits, exponent}, [w, bits, exponent, out]() mutable {
    QuantizeGrads grads = quantize_backward(out.grad(), w, bits, exponent);
    if (w.requires_grad()) {
      auto gw = w.grad_buffer();
      for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += grads.dx[i];
    }
    if (bits.requires_grad()) {
      auto gb = bits.grad_buffer();
      for (std::size_t g = 0; g < gb.size(); ++g) gb[g] += grads.db[g];
    }
    if (exponent.requires_grad()) {
      auto ge = exponent.grad_buffer();
      for (std::size_t g = 0; g < ge.size(); ++g) ge[g] += grads.de[g];
    }
  });
  return out;
}

QuantizeGrads quantize_backward(std::span<const float> upstream, const Tensor& x, const Tensor& bits,
                                const Tensor& exponent) {
  check_groups(x, bits, exponent);
  if (upstream.size() != x.numel()) {
    throw ShapeError("quantize_backward: upstream gradient has " + std::to_string(upstream.size()) +
                     " values for weights " + shape_str(x.shape()));
  }
  const std::size_t groups = x.dim(0);
  const std::size_t per = x.numel() / groups;
  QuantizeGrads out{std::vector<float>(x.numel(), 0.0f), std::vector<float>(groups, 0.0f),
                    std::vector<float>(groups, 0.0f)};
  auto xs = x.data();
  auto b = bits.data();
  auto e = exponent.data();
  for (std::size_t g = 0; g < groups; ++g) {
    double db = 0.0;
    double de = 0.0;
    for (std::size_t i = g * per; i < (g + 1) * per; ++i) {
      const SurrogateGrad s = quantize_surrogate_grad(xs[i], b[g], e[g]);
      out.dx[i] = upstream[i] * s.dx;
      db += static_cast<double>(upstream[i]) * s.db;
      de += static_cast<double>(upstream[i]) * s.de;
    }
    out.db[g] = static_cast<float>(db);
    out.de[g] = static_cast<float>(de);
  }
  return out;
}

QuantizedParam::QuantizedParam(std::string name, Tensor weights, float initial_bits)
    : name_(std::move(name)), weights_(std::move(weights)) {
  if (weights_.rank() < 1) throw ShapeError("QuantizedParam: weights need a group axis");
  const std::size_t g = weights_.dim(0);
  qp_.bits = Tensor(Shape{g}, initial_bits);
  qp_.exponent = Tensor(Shape{g}, 0.0f);
  qp_.frozen_until.assign(g, 0);
  live_.assign(g, 1);
  weights_.set_requires_grad(true);
  qp_.bits.set_requires_grad(true);
  qp_.exponent.set_requires_grad(true);
  reset_exponents(initial_bits);
  enforce_invariants();
}

std::span<const float> QuantizedParam::group_weights(std::size_t g) const {
  return weights_.data().subspan(g * group_size(), group_size());
}

std::size_t QuantizedParam::live_count() const {
  return static_cast<std::size_t>(std::count(live_.begin(), live_.end(), std::uint8_t{1}));
}

void QuantizedParam::reset_exponents(float bits_value) {
  auto e = qp_.exponent.data();
  for (std::size_t g = 0; g < groups(); ++g) {
    float max_abs = 0.0f;
    for (float v : group_weights(g)) max_abs = std::max(max_abs, std::fabs(v));
    const double top = std::ceil(std::log2(static_cast<double>(max_abs) + 1e-12));
    e[g] = static_cast<float>(std::clamp(top - (bits_value - 1.0), -double(kMaxExponent), double(kMaxExponent)));
  }
}

void QuantizedParam::set_bits(float bits_value) {
  auto b = qp_.bits.data();
  for (std::size_t g = 0; g < groups(); ++g) b[g] = live(g) ? bits_value : 0.0f;
  enforce_invariants();
}

std::vector<float> QuantizedParam::quantized_values() const {
  std::vector<float> out(weights_.numel());
  auto x = weights_.data();
  auto b = qp_.bits.data();
  auto e = qp_.exponent.data();
  const std::size_t per = group_size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = quantize_value(x[i], b[i / per], e[i / per]);
  return out;
}

bool QuantizedParam::group_quantizes_to_zero(std::size_t g) const {
  const float b = qp_.bits.data()[g];
  if (b <= 0.0f) return true;
  const float e = qp_.exponent.data()[g];
  for (float v : group_weights(g)) {
    if (quantize_value(v, b, e) != 0.0f) return false;
  }
  return true;
}

void QuantizedParam::kill_group(std::size_t g) {
  live_.at(g) = 0;
  enforce_invariants();
}

void QuantizedParam::enforce_invariants() {
  auto b = qp_.bits.data();
  auto e = qp_.exponent.data();
  auto w = weights_.data();
  const std::size_t per = group_size();
  for (std::size_t g = 0; g < groups(); ++g) {
    b[g] = std::clamp(b[g], 0.0f, kMaxBits);
    e[g] = std::clamp(e[g], -kMaxExponent, kMaxExponent);
    if (!live_[g]) {
      b[g] = 0.0f;
      std::fill(w.begin() + g * per, w.begin() + (g + 1) * per, 0.0f);
    }
  }
}

void QuantizedParam::set_live_mask(std::vector<std::uint8_t> mask) {
  if (mask.size() != groups()) throw ShapeError("QuantizedParam: live mask length does not match group count");
  live_ = std::move(mask);
  enforce_invariants();
}

double layer_quantized_size(const ConvSizeDesc& desc, std::span<const float> bits) {
  if (bits.size() != desc.out_channels) {
    throw ShapeError("layer_quantized_size: " + std::to_string(bits.size()) + " bit depths for " +
                     std::to_string(desc.out_channels) + " output channels");
  }
  double total = 0.0;
  for (float b : bits) total += std::max(b, 0.0f);
  return static_cast<double>(desc.in_channels * desc.out_height * desc.out_width) * total;
}

double attention_quantized_size(const AttentionSizeDesc& desc, std::span<const float> bits) {
  if (bits.size() != desc.n_heads) {
    throw ShapeError("attention_quantized_size: " + std::to_string(bits.size()) + " bit depths for " +
                     std::to_string(desc.n_heads) + " heads");
  }
  double total = 0.0;
  for (float b : bits) total += std::max(b, 0.0f);
  return static_cast<double>(4 * desc.d_model * desc.d_head) * total;
}

double SizeModel::group_coefficient(std::size_t layer) const {
  const SizeEntry& entry = layers.at(layer);
  if (const auto* conv = std::get_if<ConvSizeDesc>(&entry)) {
    return static_cast<double>(conv->in_channels * conv->out_height * conv->out_width);
  }
  const auto& attn = std::get<AttentionSizeDesc>(entry);
  return static_cast<double>(4 * attn.d_model * attn.d_head);
}

std::size_t SizeModel::group_count(std::size_t layer) const {
  const SizeEntry& entry = layers.at(layer);
  if (const auto* conv = std::get_if<ConvSizeDesc>(&entry)) return conv->out_channels;
  return std::get<AttentionSizeDesc>(entry).n_heads;
}

double layer_size(const SizeEntry& entry, std::span<const float> bits) {
  if (const auto* conv = std::get_if<ConvSizeDesc>(&entry)) return layer_quantized_size(*conv, bits);
  return attention_quantized_size(std::get<AttentionSizeDesc>(entry), bits);
}

double average_bit_depth(const SizeModel& model, const std::vector<std::span<const float>>& bits) {
  if (model.layers.empty()) throw Error("average_bit_depth: no quantized layers");
  if (bits.size() != model.layers.size()) {
    throw ShapeError("average_bit_depth: " + std::to_string(bits.size()) + " bit vectors for " +
                     std::to_string(model.layers.size()) + " layers");
  }
  double total = 0.0;
  for (std::size_t l = 0; l < bits.size(); ++l) total += layer_size(model.layers[l], bits[l]);
  return total / static_cast<double>(model.layers.size());
}

Tensor average_bit_depth(const SizeModel& model, const std::vector<Tensor>& bits) {
  std::vector<std::span<const float>> views;
  views.reserve(bits.size());
  for (const Tensor& b : bits) views.push_back(b.data());
  Tensor out = Tensor::scalar(static_cast<float>(average_bit_depth(model, views)));
  const double n = static_cast<double>(model.layers.size());
  std::vector<double> coefficients;
  for (std::size_t l = 0; l < model.layers.size(); ++l) coefficients.push_back(model.group_coefficient(l) / n);
  record_op(out, bits, [bits, out, coefficients]() mutable {
    const double g = out.grad()[0];
    for (std::size_t l = 0; l < bits.size(); ++l) {
      if (!bits[l].requires_grad()) continue;
      auto values = bits[l].data();
      auto gb = bits[l].grad_buffer();
      for (std::size_t i = 0; i < gb.size(); ++i) {
        if (values[i] > 0.0f) gb[i] += static_cast<float>(g * coefficients[l]);
      }
    }
  });
  return out;
}

double model_bytes(const ByteInventory& inventory) {
  double bytes = 4.0 * static_cast<double>(inventory.unquantized_elements);
  for (const QuantizedGroupBytes& group : inventory.quantized_groups) {
    const double stored_bits = std::ceil(std::max(group.bits, 0.0f));
    bytes += static_cast<double>(group.elements) * stored_bits / 8.0 + 4.0;
  }
  return bytes;
}

}  // namespace sdsc
