#include "sdsc/models.hpp"

#include <algorithm>
#include <string>

#include "sdsc/error.hpp"
#include "sdsc/ops.hpp"

namespace sdsc {

namespace {

std::vector<float> mask_factors(const QuantizedParam& qp) {
  std::vector<float> f(qp.groups());
  for (std::size_t g = 0; g < f.size(); ++g) f[g] = qp.live(g) ? 1.0f : 0.0f;
  return f;
}

std::vector<std::size_t> live_groups(const QuantizedParam& qp) {
  std::vector<std::size_t> out;
  for (std::size_t g = 0; g < qp.groups(); ++g) {
    if (qp.live(g)) out.push_back(g);
  }
  return out;
}

Tensor trainable_zeros(Shape shape) { return Tensor(std::move(shape), 0.0f).set_requires_grad(true); }
Tensor trainable_ones(Shape shape) { return Tensor(std::move(shape), 1.0f).set_requires_grad(true); }

// Copies live groups' b, e and freeze state from `src` into consecutive
// groups of `dst`.
void copy_live_quant_params(const QuantizedParam& src, QuantizedParam& dst, const std::vector<std::size_t>& live) {
  auto sb = src.bits().data();
  auto se = src.exponent().data();
  auto db = dst.bits().data();
  auto de = dst.exponent().data();
  for (std::size_t i = 0; i < live.size(); ++i) {
    db[i] = sb[live[i]];
    de[i] = se[live[i]];
    dst.params().frozen_until[i] = src.params().frozen_until[live[i]];
  }
}

}  // namespace

std::size_t CnnSpec::final_extent() const { return input_size >> channels.size(); }

void CnnSpec::validate() const {
  if (channels.empty()) throw ConfigError("CnnSpec: need at least one conv layer");
  for (std::size_t c : channels) {
    if (c == 0) throw ConfigError("CnnSpec: channel counts must be positive");
  }
  if (kernel == 0 || kernel % 2 == 0) throw ConfigError("CnnSpec: kernel must be odd and positive");
  if (in_channels == 0 || classes < 2) throw ConfigError("CnnSpec: need input channels and at least 2 classes");
  std::size_t extent = input_size;
  for (std::size_t l = 0; l < channels.size(); ++l) {
    if (extent < 2 || extent % 2 != 0) {
      throw ConfigError("CnnSpec: spatial extent " + std::to_string(extent) + " cannot be pooled at layer " +
                        std::to_string(l));
    }
    extent /= 2;
  }
}

std::size_t DecoderSpec::heads_in_block(std::size_t block) const {
  return heads_per_block.empty() ? n_heads : heads_per_block.at(block);
}

void DecoderSpec::validate() const {
  if (n_heads == 0 || d_model == 0 || d_model % n_heads != 0) {
    throw ConfigError("DecoderSpec: d_model " + std::to_string(d_model) + " is not divisible by " +
                      std::to_string(n_heads) + " heads");
  }
  if (vocab < 2 || n_blocks == 0 || context == 0 || ff_width == 0) {
    throw ConfigError("DecoderSpec: vocab, blocks, context and feed-forward width must be positive");
  }
  if (!heads_per_block.empty()) {
    if (heads_per_block.size() != n_blocks) throw ConfigError("DecoderSpec: heads_per_block needs one entry per block");
    for (std::size_t h : heads_per_block) {
      if (h == 0 || h > n_heads) throw ConfigError("DecoderSpec: per-block head counts must be in 1..n_heads");
    }
  }
}

std::vector<const QuantizedParam*> Model::quantized() const {
  auto params = const_cast<Model*>(this)->quantized();
  return std::vector<const QuantizedParam*>(params.begin(), params.end());
}

std::unique_ptr<Model> Model::clone() const {
  Rng rng(0);
  auto copy = build_model(spec(), rng, 0.0f);
  copy_model_state(*copy, const_cast<Model&>(*this));
  return copy;
}

std::vector<NamedTensor> Model::trainable() {
  std::vector<NamedTensor> out;
  for (NamedTensor& t : state()) {
    if (t.kind == ParamKind::kWeight || t.kind == ParamKind::kBias || t.kind == ParamKind::kNorm ||
        t.kind == ParamKind::kEmbedding) {
      out.push_back(t);
    }
  }
  return out;
}

std::vector<Tensor> Model::l1_weights() {
  std::vector<Tensor> out;
  for (NamedTensor& t : state()) {
    if (t.kind == ParamKind::kWeight) out.push_back(t.tensor);
  }
  return out;
}

std::size_t Model::parameter_count() {
  std::size_t n = 0;
  for (const NamedTensor& t : trainable()) n += t.tensor.numel();
  return n;
}

std::unique_ptr<Model> build_model(const ModelSpec& spec, Rng& rng, float initial_bits) {
  if (const auto* cnn = std::get_if<CnnSpec>(&spec)) return build_cnn(*cnn, rng, initial_bits);
  return build_decoder(std::get<DecoderSpec>(spec), rng, initial_bits);
}

std::unique_ptr<Model> build_cnn(const CnnSpec& spec, Rng& rng, float initial_bits) {
  return std::make_unique<Cnn>(spec, rng, initial_bits);
}

std::unique_ptr<Model> build_decoder(const DecoderSpec& spec, Rng& rng, float initial_bits) {
  return std::make_unique<Decoder>(spec, rng, initial_bits);
}

void copy_model_state(Model& dst, Model& src) {
  auto to = dst.state();
  auto from = src.state();
  if (to.size() != from.size()) throw ShapeError("copy_model_state: models differ in structure");
  for (std::size_t i = 0; i < to.size(); ++i) {
    if (to[i].name != from[i].name || to[i].tensor.shape() != from[i].tensor.shape()) {
      throw ShapeError("copy_model_state: tensor " + from[i].name + " " + shape_str(from[i].tensor.shape()) +
                       " does not match " + to[i].name + " " + shape_str(to[i].tensor.shape()));
    }
    auto s = from[i].tensor.data();
    std::copy(s.begin(), s.end(), to[i].tensor.data().begin());
  }
  auto qd = dst.quantized();
  auto qs = src.quantized();
  for (std::size_t l = 0; l < qd.size(); ++l) {
    qd[l]->params().frozen_until = qs[l]->params().frozen_until;
    qd[l]->set_live_mask(qs[l]->live_mask());
  }
  dst.quantization_enabled = src.quantization_enabled;
  dst.trained = src.trained;
  dst.step = src.step;
  dst.seed = src.seed;
  dst.apply_masks();
}

// ---------------------------------------------------------------------------
// Cnn

Cnn::Cnn(const CnnSpec& spec, Rng& rng, float initial_bits) : spec_(spec) {
  spec_.validate();
  const std::size_t k = spec_.kernel;
  for (std::size_t l = 0; l < spec_.channels.size(); ++l) {
    const std::size_t in = l == 0 ? spec_.in_channels : spec_.channels[l - 1];
    const std::size_t out = spec_.channels[l];
    Tensor w = random_init(Shape{out, in, k, k}, in * k * k, rng);
    blocks_.push_back(Block{QuantizedParam("conv" + std::to_string(l) + ".weight", w, initial_bits),
                            trainable_zeros(Shape{out}), trainable_ones(Shape{out}), trainable_zeros(Shape{out}),
                            RunningStats(out)});
  }
  const std::size_t extent = spec_.final_extent();
  const std::size_t flat = spec_.channels.back() * extent * extent;
  fc_w_ = random_init(Shape{flat, spec_.classes}, flat, rng).set_requires_grad(true);
  fc_b_ = trainable_zeros(Shape{spec_.classes});
}

ForwardResult Cnn::forward(const Tensor& inputs, Mode mode) {
  if (inputs.rank() != 4 || inputs.dim(1) != spec_.in_channels || inputs.dim(2) != spec_.input_size ||
      inputs.dim(3) != spec_.input_size) {
    throw ShapeError("Cnn: expected input [B," + std::to_string(spec_.in_channels) + "," +
                     std::to_string(spec_.input_size) + "," + std::to_string(spec_.input_size) + "], got " +
                     shape_str(inputs.shape()));
  }
  Tensor x = inputs;
  Tensor target;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    Block& blk = blocks_[l];
    Tensor w = quantization_enabled ? blk.conv.quantized() : blk.conv.weights();
    Tensor y = conv2d(x, w, blk.bias, 1, spec_.kernel / 2);
    y = relu(batchnorm(y, blk.gamma, blk.beta, blk.stats, mode));
    if (blk.conv.live_count() < blk.conv.groups()) y = scale_channels(y, mask_factors(blk.conv));
    if (l + 1 == blocks_.size()) {
      target = y;
    } else {
      x = maxpool2x2(y);
    }
  }
  Tensor pooled = maxpool2x2(target);
  Tensor flat = reshape(pooled, Shape{pooled.dim(0), pooled.numel() / pooled.dim(0)});
  return ForwardResult{linear(flat, fc_w_, fc_b_), target, flat};
}

Tensor Cnn::head(const Tensor& target) {
  Tensor pooled = maxpool2x2(target);
  Tensor flat = reshape(pooled, Shape{pooled.dim(0), pooled.numel() / pooled.dim(0)});
  return linear(flat, fc_w_, fc_b_);
}

std::vector<NamedTensor> Cnn::state() {
  std::vector<NamedTensor> out;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    Block& blk = blocks_[l];
    const std::string conv = "conv" + std::to_string(l);
    const std::string bn = "bn" + std::to_string(l);
    out.push_back({conv + ".weight", blk.conv.weights(), ParamKind::kWeight});
    out.push_back({conv + ".bits", blk.conv.bits(), ParamKind::kBits});
    out.push_back({conv + ".exponent", blk.conv.exponent(), ParamKind::kExponent});
    out.push_back({conv + ".bias", blk.bias, ParamKind::kBias});
    out.push_back({bn + ".gamma", blk.gamma, ParamKind::kNorm});
    out.push_back({bn + ".beta", blk.beta, ParamKind::kNorm});
    out.push_back({bn + ".running_mean", blk.stats.mean, ParamKind::kBuffer});
    out.push_back({bn + ".running_var", blk.stats.var, ParamKind::kBuffer});
  }
  out.push_back({"fc.weight", fc_w_, ParamKind::kWeight});
  out.push_back({"fc.bias", fc_b_, ParamKind::kBias});
  return out;
}

std::vector<QuantizedParam*> Cnn::quantized() {
  std::vector<QuantizedParam*> out;
  for (Block& blk : blocks_) out.push_back(&blk.conv);
  return out;
}

std::size_t Cnn::live_inputs(std::size_t layer) const {
  return layer == 0 ? spec_.in_channels : blocks_[layer - 1].conv.live_count();
}

SizeModel Cnn::size_model() const {
  SizeModel model;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const std::size_t extent = spec_.input_size >> l;
    model.layers.push_back(ConvSizeDesc{live_inputs(l), extent, extent, spec_.channels[l]});
  }
  return model;
}

ByteInventory Cnn::byte_inventory(bool quantized_only) const {
  ByteInventory inv;
  const std::size_t area = spec_.kernel * spec_.kernel;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const QuantizedParam& conv = blocks_[l].conv;
    const std::size_t elements = live_inputs(l) * area;
    auto bits = conv.bits().data();
    for (std::size_t g = 0; g < conv.groups(); ++g) {
      if (!conv.live(g)) continue;
      if (quantization_enabled) {
        inv.quantized_groups.push_back({elements, bits[g]});
      } else {
        inv.unquantized_elements += elements;
      }
    }
    if (!quantized_only) inv.unquantized_elements += 3 * conv.live_count();
  }
  if (!quantized_only) {
    const std::size_t extent = spec_.final_extent();
    inv.unquantized_elements += blocks_.back().conv.live_count() * extent * extent * spec_.classes + spec_.classes;
  }
  return inv;
}

void Cnn::apply_masks() {
  const std::size_t area = spec_.kernel * spec_.kernel;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    Block& blk = blocks_[l];
    blk.conv.enforce_invariants();
    for (std::size_t g = 0; g < blk.conv.groups(); ++g) {
      if (blk.conv.live(g)) continue;
      blk.bias.data()[g] = 0.0f;
      blk.gamma.data()[g] = 0.0f;
      blk.beta.data()[g] = 0.0f;
      if (l + 1 < blocks_.size()) {
        Tensor& next = blocks_[l + 1].conv.weights();
        const std::size_t in = next.dim(1);
        for (std::size_t o = 0; o < next.dim(0); ++o) {
          auto slab = next.data().subspan((o * in + g) * area, area);
          std::fill(slab.begin(), slab.end(), 0.0f);
        }
      } else {
        const std::size_t extent = spec_.final_extent();
        const std::size_t rows = extent * extent;
        auto w = fc_w_.data();
        std::fill(w.begin() + g * rows * spec_.classes, w.begin() + (g + 1) * rows * spec_.classes, 0.0f);
      }
    }
  }
}

std::unique_ptr<Model> Cnn::compact() const {
  CnnSpec small = spec_;
  std::vector<std::vector<std::size_t>> live;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    live.push_back(live_groups(blocks_[l].conv));
    small.channels[l] = live.back().size();
  }
  Rng rng(0);
  auto out = std::make_unique<Cnn>(small, rng, 0.0f);
  const std::size_t area = spec_.kernel * spec_.kernel;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const Block& src = blocks_[l];
    Block& dst = out->blocks_[l];
    std::vector<std::size_t> inputs;
    if (l == 0) {
      for (std::size_t c = 0; c < spec_.in_channels; ++c) inputs.push_back(c);
    } else {
      inputs = live[l - 1];
    }
    const std::size_t src_in = src.conv.weights().dim(1);
    auto sw = src.conv.weights().data();
    auto dw = dst.conv.weights().data();
    for (std::size_t o = 0; o < live[l].size(); ++o) {
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        std::copy_n(sw.begin() + (live[l][o] * src_in + inputs[i]) * area, area,
                    dw.begin() + (o * inputs.size() + i) * area);
      }
      dst.bias.data()[o] = src.bias.data()[live[l][o]];
      dst.gamma.data()[o] = src.gamma.data()[live[l][o]];
      dst.beta.data()[o] = src.beta.data()[live[l][o]];
      dst.stats.mean.data()[o] = src.stats.mean.data()[live[l][o]];
      dst.stats.var.data()[o] = src.stats.var.data()[live[l][o]];
    }
    copy_live_quant_params(src.conv, dst.conv, live[l]);
  }
  const std::size_t extent = spec_.final_extent();
  const std::size_t rows = extent * extent * spec_.classes;
  auto sw = fc_w_.data();
  auto dw = out->fc_w_.data();
  for (std::size_t c = 0; c < live.back().size(); ++c) {
    std::copy_n(sw.begin() + live.back()[c] * rows, rows, dw.begin() + c * rows);
  }
  std::copy(fc_b_.data().begin(), fc_b_.data().end(), out->fc_b_.data().begin());
  out->quantization_enabled = quantization_enabled;
  out->trained = trained;
  out->step = step;
  out->seed = seed;
  return out;
}

// ---------------------------------------------------------------------------
// Decoder

Decoder::Decoder(const DecoderSpec& spec, Rng& rng, float initial_bits) : spec_(spec) {
  spec_.validate();
  const std::size_t d = spec_.d_model;
  const std::size_t dh = spec_.d_head();
  tok_emb_ = random_init(Shape{spec_.vocab, d}, d, rng).set_requires_grad(true);
  pos_emb_ = random_init(Shape{spec_.context, d}, d, rng).set_requires_grad(true);
  for (std::size_t i = 0; i < spec_.n_blocks; ++i) {
    const std::size_t heads = spec_.heads_in_block(i);
    Block blk;
    blk.heads = QuantizedParam("block" + std::to_string(i) + ".heads",
                               random_init(Shape{heads, 4, d, dh}, d, rng), initial_bits);
    AttentionBlock& a = blk.attn;
    a.d_model = d;
    a.d_head = dh;
    a.n_heads = heads;
    a.heads = blk.heads.weights();
    a.out_bias = trainable_zeros(Shape{d});
    a.ln1_gamma = trainable_ones(Shape{d});
    a.ln1_beta = trainable_zeros(Shape{d});
    a.ln2_gamma = trainable_ones(Shape{d});
    a.ln2_beta = trainable_zeros(Shape{d});
    a.ff_w1 = random_init(Shape{d, spec_.ff_width}, d, rng).set_requires_grad(true);
    a.ff_b1 = trainable_zeros(Shape{spec_.ff_width});
    a.ff_w2 = random_init(Shape{spec_.ff_width, d}, spec_.ff_width, rng).set_requires_grad(true);
    a.ff_b2 = trainable_zeros(Shape{d});
    a.head_live.assign(heads, 1);
    blocks_.push_back(std::move(blk));
  }
  lnf_gamma_ = trainable_ones(Shape{d});
  lnf_beta_ = trainable_zeros(Shape{d});
  out_w_ = random_init(Shape{d, spec_.vocab}, d, rng).set_requires_grad(true);
  out_b_ = trainable_zeros(Shape{spec_.vocab});
}

Tensor Decoder::hidden(const Tensor& inputs) {
  if (inputs.rank() != 2) throw ShapeError("Decoder: expected token input [B,T], got " + shape_str(inputs.shape()));
  const std::size_t batch = inputs.dim(0);
  const std::size_t steps = inputs.dim(1);
  if (steps > spec_.context) {
    throw ShapeError("Decoder: sequence length " + std::to_string(steps) + " exceeds context " +
                     std::to_string(spec_.context));
  }
  std::vector<int> ids(inputs.numel());
  std::vector<int> positions(inputs.numel());
  auto in = inputs.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    ids[i] = static_cast<int>(in[i]);
    positions[i] = static_cast<int>(i % steps);
  }
  Tensor x = add(embedding(tok_emb_, ids), embedding(pos_emb_, positions));
  x = reshape(x, Shape{batch, steps, spec_.d_model});
  for (Block& blk : blocks_) {
    Tensor w = quantization_enabled ? blk.heads.quantized() : blk.heads.weights();
    x = attention_forward(x, blk.attn, w, spec_.context);
  }
  return x;
}

ForwardResult Decoder::forward(const Tensor& inputs, Mode) {
  Tensor target = hidden(inputs);
  const std::size_t batch = target.dim(0);
  const std::size_t steps = target.dim(1);
  std::vector<std::size_t> last(batch);
  for (std::size_t b = 0; b < batch; ++b) last[b] = b * steps + steps - 1;
  Tensor rows = gather_rows(reshape(target, Shape{batch * steps, spec_.d_model}), last);
  Tensor features = layernorm(rows, lnf_gamma_, lnf_beta_);
  return ForwardResult{linear(features, out_w_, out_b_), target, features};
}

Tensor Decoder::head(const Tensor& target) {
  const std::size_t batch = target.dim(0);
  const std::size_t steps = target.dim(1);
  std::vector<std::size_t> last(batch);
  for (std::size_t b = 0; b < batch; ++b) last[b] = b * steps + steps - 1;
  Tensor rows = gather_rows(reshape(target, Shape{batch * steps, spec_.d_model}), last);
  return linear(layernorm(rows, lnf_gamma_, lnf_beta_), out_w_, out_b_);
}

Tensor Decoder::logits_all_positions(const Tensor& inputs) { return logits_from_hidden(hidden(inputs)); }

Tensor Decoder::logits_from_hidden(const Tensor& h) {
  Tensor flat = reshape(h, Shape{h.dim(0) * h.dim(1), spec_.d_model});
  return linear(layernorm(flat, lnf_gamma_, lnf_beta_), out_w_, out_b_);
}

std::vector<NamedTensor> Decoder::state() {
  std::vector<NamedTensor> out;
  out.push_back({"tok_emb", tok_emb_, ParamKind::kEmbedding});
  out.push_back({"pos_emb", pos_emb_, ParamKind::kEmbedding});
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    Block& blk = blocks_[i];
    AttentionBlock& a = blk.attn;
    const std::string p = "block" + std::to_string(i);
    out.push_back({p + ".heads", blk.heads.weights(), ParamKind::kWeight});
    out.push_back({p + ".bits", blk.heads.bits(), ParamKind::kBits});
    out.push_back({p + ".exponent", blk.heads.exponent(), ParamKind::kExponent});
    out.push_back({p + ".out_bias", a.out_bias, ParamKind::kBias});
    out.push_back({p + ".ln1.gamma", a.ln1_gamma, ParamKind::kNorm});
    out.push_back({p + ".ln1.beta", a.ln1_beta, ParamKind::kNorm});
    out.push_back({p + ".ln2.gamma", a.ln2_gamma, ParamKind::kNorm});
    out.push_back({p + ".ln2.beta", a.ln2_beta, ParamKind::kNorm});
    out.push_back({p + ".ff.w1", a.ff_w1, ParamKind::kWeight});
    out.push_back({p + ".ff.b1", a.ff_b1, ParamKind::kBias});
    out.push_back({p + ".ff.w2", a.ff_w2, ParamKind::kWeight});
    out.push_back({p + ".ff.b2", a.ff_b2, ParamKind::kBias});
  }
  out.push_back({"lnf.gamma", lnf_gamma_, ParamKind::kNorm});
  out.push_back({"lnf.beta", lnf_beta_, ParamKind::kNorm});
  out.push_back({"out.weight", out_w_, ParamKind::kWeight});
  out.push_back({"out.bias", out_b_, ParamKind::kBias});
  return out;
}

std::vector<QuantizedParam*> Decoder::quantized() {
  std::vector<QuantizedParam*> out;
  for (Block& blk : blocks_) out.push_back(&blk.heads);
  return out;
}

SizeModel Decoder::size_model() const {
  SizeModel model;
  for (const Block& blk : blocks_) {
    model.layers.push_back(AttentionSizeDesc{spec_.d_model, spec_.d_head(), blk.attn.n_heads});
  }
  return model;
}

ByteInventory Decoder::byte_inventory(bool quantized_only) const {
  ByteInventory inv;
  const std::size_t d = spec_.d_model;
  for (const Block& blk : blocks_) {
    auto bits = blk.heads.bits().data();
    for (std::size_t h = 0; h < blk.heads.groups(); ++h) {
      if (!blk.heads.live(h)) continue;
      if (quantization_enabled) {
        inv.quantized_groups.push_back({blk.attn.head_params(), bits[h]});
      } else {
        inv.unquantized_elements += blk.attn.head_params();
      }
    }
    if (!quantized_only) {
      inv.unquantized_elements += d + 4 * d + d * spec_.ff_width + spec_.ff_width + spec_.ff_width * d + d;
    }
  }
  if (!quantized_only) {
    inv.unquantized_elements += (spec_.vocab + spec_.context) * d + 2 * d + d * spec_.vocab + spec_.vocab;
  }
  return inv;
}

void Decoder::apply_masks() {
  for (Block& blk : blocks_) {
    blk.heads.enforce_invariants();
    blk.attn.head_live = blk.heads.live_mask();
  }
}

std::unique_ptr<Model> Decoder::compact() const {
  DecoderSpec small = spec_;
  small.heads_per_block.clear();
  std::vector<std::vector<std::size_t>> live;
  for (const Block& blk : blocks_) {
    live.push_back(live_groups(blk.heads));
    small.heads_per_block.push_back(live.back().size());
  }
  Rng rng(0);
  auto out = std::make_unique<Decoder>(small, rng, 0.0f);
  auto copy_tensor = [](const Tensor& from, Tensor& to) {
    std::copy(from.data().begin(), from.data().end(), to.data().begin());
  };
  copy_tensor(tok_emb_, out->tok_emb_);
  copy_tensor(pos_emb_, out->pos_emb_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const Block& src = blocks_[i];
    Block& dst = out->blocks_[i];
    const std::size_t chunk = src.attn.head_params();
    auto sw = src.heads.weights().data();
    auto dw = dst.heads.weights().data();
    for (std::size_t h = 0; h < live[i].size(); ++h) {
      std::copy_n(sw.begin() + live[i][h] * chunk, chunk, dw.begin() + h * chunk);
    }
    copy_live_quant_params(src.heads, dst.heads, live[i]);
    copy_tensor(src.attn.out_bias, dst.attn.out_bias);
    copy_tensor(src.attn.ln1_gamma, dst.attn.ln1_gamma);
    copy_tensor(src.attn.ln1_beta, dst.attn.ln1_beta);
    copy_tensor(src.attn.ln2_gamma, dst.attn.ln2_gamma);
    copy_tensor(src.attn.ln2_beta, dst.attn.ln2_beta);
    copy_tensor(src.attn.ff_w1, dst.attn.ff_w1);
    copy_tensor(src.attn.ff_b1, dst.attn.ff_b1);
    copy_tensor(src.attn.ff_w2, dst.attn.ff_w2);
    copy_tensor(src.attn.ff_b2, dst.attn.ff_b2);
  }
  copy_tensor(lnf_gamma_, out->lnf_gamma_);
  copy_tensor(lnf_beta_, out->lnf_beta_);
  copy_tensor(out_w_, out->out_w_);
  copy_tensor(out_b_, out->out_b_);
  out->quantization_enabled = quantization_enabled;
  out->trained = trained;
  out->step = step;
  out->seed = seed;
  return out;
}

}  // namespace sdsc
