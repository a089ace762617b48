#include "sdsc/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

#include "sdsc/error.hpp"

namespace sdsc {

namespace {

std::atomic<std::uint64_t> next_tensor_id{1};
std::atomic<std::uint64_t> next_tape_id{1};
thread_local Tape* active_tape = nullptr;

void check_extents(const Shape& shape) {
  for (std::size_t extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ')';
  return out.str();
}

Tensor::Tensor(Shape shape, float fill) {
  check_extents(shape);
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
  impl_->id = next_tensor_id++;
}

Tensor::Tensor(Shape shape, std::vector<float> values) {
  check_extents(shape);
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                     " values");
  }
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->id = next_tensor_id++;
}

Tensor Tensor::scalar(float value) { return Tensor(Shape{}, std::vector<float>{value}); }

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

std::span<float> Tensor::grad_buffer() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
  return impl_->grad;
}

Tensor Tensor::clone() const {
  Tensor copy(impl_->shape, impl_->data);
  return copy;
}

Tape::Tape() : id_(next_tape_id++) {}

Tape::Scope::Scope(Tape& tape) : previous_(active_tape) { active_tape = &tape; }

Tape::Scope::~Scope() { active_tape = previous_; }

Tape* Tape::active() noexcept { return active_tape; }

bool Tape::wants(std::initializer_list<const Tensor*> inputs) {
  if (active_tape == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void Tape::record(std::vector<Tensor> inputs, Tensor& output, Backward backward) {
  output.impl_->requires_grad = true;
  output.impl_->tape_id = id_;
  output.impl_->node = entries_.size();
  entries_.push_back(Entry{std::move(inputs), output, std::move(backward)});
}

GradMap Tape::grad(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("gradient requires a scalar loss, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  GradMap grads;
  if (!loss.requires_grad()) return grads;
  if (loss.is_leaf()) {
    Tensor g(loss.shape(), 1.0f);
    grads.emplace(loss.id(), g);
    return grads;
  }
  const auto& impl = *loss.impl_;
  if (impl.tape_id != id_ || impl.node >= entries_.size() || !entries_[impl.node].output.same(loss)) {
    throw Error("loss was not recorded on this tape");
  }

  for (Entry& entry : entries_) {
    entry.output.clear_grad();
    for (Tensor& input : entry.inputs) {
      if (input.impl_->tape_id != id_) input.clear_grad();
    }
  }
  entries_[impl.node].output.grad_buffer()[0] = 1.0f;
  for (std::size_t i = impl.node + 1; i-- > 0;) {
    Entry& entry = entries_[i];
    if (entry.output.has_grad()) entry.backward();
  }

  for (std::size_t i = 0; i <= impl.node; ++i) {
    for (const Tensor& input : entries_[i].inputs) {
      if (input.impl_->tape_id == id_ || !input.requires_grad() || !input.has_grad()) continue;
      if (grads.count(input.id())) continue;
      Tensor g(input.shape(), std::vector<float>(input.grad().begin(), input.grad().end()));
      grads.emplace(input.id(), g);
    }
  }
  return grads;
}

void record_op(Tensor& output, std::vector<Tensor> inputs, Tape::Backward backward) {
  Tape* tape = Tape::active();
  if (tape == nullptr) return;
  bool needed = false;
  for (const Tensor& t : inputs) needed = needed || t.requires_grad();
  if (!needed) return;
  tape->record(std::move(inputs), output, std::move(backward));
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw Error("Rng::below(0)");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t draw;
  do {
    draw = engine_();
  } while (draw >= limit);
  return static_cast<std::size_t>(draw % bound);
}

double Rng::normal() {
  // Box-Muller; u1 is kept away from zero.
  const double u1 = (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

Tensor random_init(const Shape& shape, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) throw Error("random_init: fan_in must be at least 1");
  Tensor t(shape);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace sdsc
