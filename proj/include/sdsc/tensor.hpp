#pragma once

// Dense float32 tensors and a reverse-mode gradient tape.
//
// A Tensor is a shared handle: copies alias the same storage, the way model
// parameters are referenced from the layers and the optimizer at once. Use
// clone() for an independent copy.
//
// Operations record themselves on the thread's active Tape (see Tape::Scope)
// when at least one input requires a gradient. Tape::grad replays the
// recorded operations backwards, leaving gradients on every reached tensor.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace sdsc {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until a backward pass reaches the tensor
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::uint64_t tape_id = 0;  // 0 for leaves
  std::size_t node = 0;
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);
  static Tensor scalar(float value);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<float> data() { return impl_->data; }
  std::span<const float> data() const { return impl_->data; }
  float item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);

  // Gradient left by the last Tape::grad pass; empty when none reached here.
  std::span<const float> grad() const { return impl_->grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  // Zero-filled on first use. Backward rules accumulate into this.
  std::span<float> grad_buffer() const;
  void clear_grad() { impl_->grad.clear(); }

  std::uint64_t id() const { return impl_->id; }
  bool is_leaf() const { return impl_->tape_id == 0; }
  bool same(const Tensor& other) const { return impl_ == other.impl_; }

  // Deep copy, detached from any tape, requires_grad off.
  Tensor clone() const;

 private:
  friend class Tape;
  std::shared_ptr<detail::TensorImpl> impl_;
};

using GradMap = std::unordered_map<std::uint64_t, Tensor>;

class Tape {
 public:
  using Backward = std::function<void()>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Makes `tape` the active tape of the calling thread until destruction.
  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  static Tape* active() noexcept;

  // True when an operation over `inputs` must be recorded.
  static bool wants(std::initializer_list<const Tensor*> inputs);

  // Appends an operation. `output` is marked as requiring grad and bound to
  // this tape; `backward` reads output.grad() and accumulates into inputs.
  void record(std::vector<Tensor> inputs, Tensor& output, Backward backward);

  // dLoss/dθ for every leaf with requires_grad that the loss depends on.
  // Gradients are recomputed from scratch on each call.
  GradMap grad(const Tensor& loss);

  std::size_t size() const noexcept { return entries_.size(); }
  std::uint64_t id() const noexcept { return id_; }

 private:
  struct Entry {
    std::vector<Tensor> inputs;
    Tensor output;
    Backward backward;
  };

  std::vector<Entry> entries_;
  std::uint64_t id_;
};

// Records `backward` on the active tape when any input requires grad.
void record_op(Tensor& output, std::vector<Tensor> inputs, Tape::Backward backward);

// Deterministic generator: std::mt19937_64, whose output sequence is fixed by
// the C++ standard. All distributions are derived here from raw 64-bit draws
// so results do not depend on the standard library's distribution code.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n), unbiased.
  std::size_t below(std::size_t n);
  double normal();

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// Kaiming-style uniform values in [-sqrt(6/fan_in), +sqrt(6/fan_in)].
Tensor random_init(const Shape& shape, std::size_t fan_in, Rng& rng);

}  // namespace sdsc
