#include "sdsc/ops.hpp"

#include <cmath>
#include <string>

#include "gemm.hpp"
#include "sdsc/error.hpp"

namespace sdsc {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  }
}

}  // namespace

void ensure_finite(const Tensor& t, const char* op) {
  for (float v : t.data()) {
    if (!std::isfinite(v)) throw Error(std::string(op) + ": produced a non-finite value");
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  ensure_finite(out, "add");
  record_op(out, {a, b}, [a, b, out]() mutable {
    auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  ensure_finite(out, "sub");
  record_op(out, {a, b}, [a, b, out]() mutable {
    auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  ensure_finite(out, "mul");
  record_op(out, {a, b}, [a, b, out]() mutable {
    auto g = out.grad();
    auto x = a.data();
    auto y = b.data();
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& a, float factor) {
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factor;
  ensure_finite(out, "scale");
  record_op(out, {a}, [a, out, factor]() mutable {
    auto g = out.grad();
    auto ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] > 0.0f ? x[i] : 0.0f;
  record_op(out, {a}, [a, out]() mutable {
    auto g = out.grad();
    auto x = a.data();
    auto ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0f) ga[i] += g[i];
    }
  });
  return out;
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (float v : a.data()) total += v;
  Tensor out = Tensor::scalar(static_cast<float>(total));
  ensure_finite(out, "sum");
  record_op(out, {a}, [a, out]() mutable {
    const float g = out.grad()[0];
    for (float& v : a.grad_buffer()) v += g;
  });
  return out;
}

Tensor mean(const Tensor& a) {
  double total = 0.0;
  for (float v : a.data()) total += v;
  const double n = static_cast<double>(a.numel());
  Tensor out = Tensor::scalar(static_cast<float>(total / n));
  ensure_finite(out, "mean");
  record_op(out, {a}, [a, out, n]() mutable {
    const float g = static_cast<float>(out.grad()[0] / n);
    for (float& v : a.grad_buffer()) v += g;
  });
  return out;
}

Tensor abs_sum(const Tensor& a) {
  double total = 0.0;
  for (float v : a.data()) total += std::fabs(v);
  Tensor out = Tensor::scalar(static_cast<float>(total));
  ensure_finite(out, "abs_sum");
  record_op(out, {a}, [a, out]() mutable {
    const float g = out.grad()[0];
    auto x = a.data();
    auto ga = a.grad_buffer();
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] > 0.0f) {
        ga[i] += g;
      } else if (x[i] < 0.0f) {
        ga[i] -= g;
      }
    }
  });
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Tensor out(std::move(shape), std::vector<float>(a.data().begin(), a.data().end()));
  record_op(out, {a}, [a, out]() mutable {
    auto g = out.grad();
    auto ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
  return out;
}

Tensor slice(const Tensor& a, std::size_t offset, Shape shape) {
  const std::size_t n = shape_numel(shape);
  if (offset + n > a.numel()) {
    throw ShapeError("slice: range [" + std::to_string(offset) + ", " + std::to_string(offset + n) +
                     ") exceeds tensor of shape " + shape_str(a.shape()));
  }
  auto src = a.data().subspan(offset, n);
  Tensor out(std::move(shape), std::vector<float>(src.begin(), src.end()));
  record_op(out, {a}, [a, out, offset]() mutable {
    auto g = out.grad();
    auto ga = a.grad_buffer().subspan(offset, g.size());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
  return out;
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  if (a.rank() != 2) throw ShapeError("gather_rows: expected 2-D tensor, got " + shape_str(a.shape()));
  const std::size_t n = a.dim(0);
  const std::size_t m = a.dim(1);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Tensor out(Shape{idx.size(), m});
  auto o = out.data();
  auto x = a.data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= n) throw ShapeError("gather_rows: row " + std::to_string(idx[r]) + " out of range");
    std::copy_n(x.begin() + idx[r] * m, m, o.begin() + r * m);
  }
  record_op(out, {a}, [a, out, idx, m]() mutable {
    auto g = out.grad();
    auto ga = a.grad_buffer();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t j = 0; j < m; ++j) ga[idx[r] * m + j] += g[r * m + j];
    }
  });
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t n = b.dim(1);
  Tensor out(Shape{m, n});
  detail::gemm_acc(m, n, k, a.data().data(), b.data().data(), out.data().data());
  ensure_finite(out, "matmul");
  record_op(out, {a, b}, [a, b, out, m, k, n]() mutable {
    const float* g = out.grad().data();
    if (a.requires_grad()) {
      // dA = dC · Bᵀ
      auto bt = detail::transposed(k, n, b.data().data());
      detail::gemm_acc(m, k, n, g, bt.data(), a.grad_buffer().data());
    }
    if (b.requires_grad()) {
      // dB = Aᵀ · dC
      auto at = detail::transposed(m, k, a.data().data());
      detail::gemm_acc(k, n, m, at.data(), g, b.grad_buffer().data());
    }
  });
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 2 || bias.numel() != x.dim(1)) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match rows of " +
                     shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0);
  const std::size_t m = x.dim(1);
  Tensor out(x.shape());
  auto o = out.data();
  auto xs = x.data();
  auto bs = bias.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) o[i * m + j] = xs[i * m + j] + bs[j];
  }
  ensure_finite(out, "add_bias");
  record_op(out, {x, bias}, [x, bias, out, n, m]() mutable {
    auto g = out.grad();
    if (x.requires_grad()) {
      auto gx = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (bias.requires_grad()) {
      auto gb = bias.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) gb[j] += g[i * m + j];
      }
    }
  });
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) { return add_bias(matmul(x, w), bias); }

Tensor scale_channels(const Tensor& x, std::span<const float> factors) {
  if (x.rank() < 2 || x.dim(1) != factors.size()) {
    throw ShapeError("scale_channels: " + std::to_string(factors.size()) + " factors for " + shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0);
  const std::size_t channels = x.dim(1);
  const std::size_t inner = x.numel() / (batch * channels);
  std::vector<float> f(factors.begin(), factors.end());
  Tensor out(x.shape());
  auto o = out.data();
  auto xs = x.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (b * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) o[base + i] = xs[base + i] * f[c];
    }
  }
  record_op(out, {x}, [x, out, f, batch, channels, inner]() mutable {
    auto g = out.grad();
    auto gx = x.grad_buffer();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t base = (b * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) gx[base + i] += g[base + i] * f[c];
      }
    }
  });
  return out;
}

}  // namespace sdsc
