#pragma once

// The two exemplar architectures: a quantized convolutional classifier and a
// decoder-only character model whose attention heads are quantized.
//
// Both present the same face to the compressor: inputs in, logits[B, K] out,
// one QuantizedParam per quantized layer, and a byte inventory that counts
// only live structure (pruned channels/heads and everything that consumed
// them are excluded).

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "sdsc/data.hpp"
#include "sdsc/nn.hpp"
#include "sdsc/quant.hpp"
#include "sdsc/tensor.hpp"

namespace sdsc {

struct CnnSpec {
  std::vector<std::size_t> channels{16, 32};  // one entry per conv layer
  std::size_t kernel = 3;
  std::size_t in_channels = 1;
  std::size_t input_size = 28;
  std::size_t classes = 10;

  std::size_t n_conv_layers() const { return channels.size(); }
  // Spatial extent after the last pool.
  std::size_t final_extent() const;
  void validate() const;
};

struct DecoderSpec {
  std::size_t vocab = kNamesVocab;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_blocks = 2;
  std::size_t context = 16;
  std::size_t ff_width = 256;
  // Per-block head counts after structural pruning; empty means n_heads.
  std::vector<std::size_t> heads_per_block;

  std::size_t d_head() const { return d_model / n_heads; }
  std::size_t heads_in_block(std::size_t block) const;
  void validate() const;
};

using ModelSpec = std::variant<CnnSpec, DecoderSpec>;

enum class ParamKind { kWeight, kBias, kNorm, kEmbedding, kBits, kExponent, kBuffer };

struct NamedTensor {
  std::string name;
  Tensor tensor;
  ParamKind kind;
};

struct ForwardResult {
  Tensor logits;       // [B, K]
  Tensor target;       // saliency target: last conv activation [B,C,H,W] or last block output [B,T,d]
  Tensor penultimate;  // [B, F] features feeding the output layer
};

class Model {
 public:
  virtual ~Model() = default;

  virtual TaskKind task() const = 0;
  virtual ModelSpec spec() const = 0;

  virtual ForwardResult forward(const Tensor& inputs, Mode mode) = 0;
  // Logits computed from the saliency target, as forward() would.
  virtual Tensor head(const Tensor& target) = 0;

  // Every tensor that defines the model, in a fixed order. Bits and exponent
  // tensors of quantized layers are included; running statistics appear as
  // kBuffer entries that alias the model's storage.
  virtual std::vector<NamedTensor> state() = 0;
  // One entry per quantized layer, in layer order.
  virtual std::vector<QuantizedParam*> quantized() = 0;
  std::vector<const QuantizedParam*> quantized() const;

  virtual SizeModel size_model() const = 0;
  // quantized_only restricts the count to the quantized layers.
  virtual ByteInventory byte_inventory(bool quantized_only = false) const = 0;

  // Zeroes dead groups and every downstream slice that consumed them.
  virtual void apply_masks() = 0;
  // A physically smaller model without dead groups; forward outputs match
  // the masked model.
  virtual std::unique_ptr<Model> compact() const = 0;
  std::unique_ptr<Model> clone() const;

  // Trainable tensors (weights, biases, norms, embeddings).
  std::vector<NamedTensor> trainable();
  // Weight matrices and kernels entering the L1 term.
  std::vector<Tensor> l1_weights();
  std::size_t parameter_count();

  bool quantization_enabled = true;
  bool trained = false;
  std::int64_t step = 0;
  std::uint64_t seed = 0;

 protected:
  Model() = default;
  Model(const Model&) = default;
};

std::unique_ptr<Model> build_model(const ModelSpec& spec, Rng& rng, float initial_bits);
std::unique_ptr<Model> build_cnn(const CnnSpec& spec, Rng& rng, float initial_bits);
std::unique_ptr<Model> build_decoder(const DecoderSpec& spec, Rng& rng, float initial_bits);

// Copies every state tensor, live mask and flag of `src` into `dst`; the two
// must share a structure.
void copy_model_state(Model& dst, Model& src);

class Cnn : public Model {
 public:
  Cnn(const CnnSpec& spec, Rng& rng, float initial_bits);

  TaskKind task() const override { return TaskKind::kClassification; }
  ModelSpec spec() const override { return spec_; }
  ForwardResult forward(const Tensor& inputs, Mode mode) override;
  Tensor head(const Tensor& target) override;
  std::vector<NamedTensor> state() override;
  std::vector<QuantizedParam*> quantized() override;
  SizeModel size_model() const override;
  ByteInventory byte_inventory(bool quantized_only) const override;
  void apply_masks() override;
  std::unique_ptr<Model> compact() const override;

 private:
  struct Block {
    QuantizedParam conv;
    Tensor bias;
    Tensor gamma;
    Tensor beta;
    RunningStats stats;
  };

  std::size_t live_inputs(std::size_t layer) const;

  CnnSpec spec_;
  std::vector<Block> blocks_;
  Tensor fc_w_;  // flat × classes
  Tensor fc_b_;
};

class Decoder : public Model {
 public:
  Decoder(const DecoderSpec& spec, Rng& rng, float initial_bits);

  TaskKind task() const override { return TaskKind::kLanguageModel; }
  ModelSpec spec() const override { return spec_; }
  ForwardResult forward(const Tensor& inputs, Mode mode) override;
  Tensor head(const Tensor& target) override;
  std::vector<NamedTensor> state() override;
  std::vector<QuantizedParam*> quantized() override;
  SizeModel size_model() const override;
  ByteInventory byte_inventory(bool quantized_only) const override;
  void apply_masks() override;
  std::unique_ptr<Model> compact() const override;

  // Final hidden states of every position after all blocks, [B,T,d].
  Tensor hidden(const Tensor& inputs);
  // Logits for every position, [B·T, vocab].
  Tensor logits_all_positions(const Tensor& inputs);
  // Same, starting from hidden states [B,T,d].
  Tensor logits_from_hidden(const Tensor& hidden);
  const AttentionBlock& block(std::size_t i) const { return blocks_.at(i).attn; }

 private:
  struct Block {
    AttentionBlock attn;
    QuantizedParam heads;
  };

  DecoderSpec spec_;
  Tensor tok_emb_;  // vocab × d
  Tensor pos_emb_;  // context × d
  std::vector<Block> blocks_;
  Tensor lnf_gamma_, lnf_beta_;
  Tensor out_w_;  // d × vocab
  Tensor out_b_;
};

}  // namespace sdsc
